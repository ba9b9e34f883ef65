use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use walkdir::WalkDir;

use patchlab::eval::{emit_roc_plot, score_split, write_scores, EvalReport};
use patchlab::grid::{
    self, cell_seed, rank_summary, restore_checkpoint, run_cell, weights_digest, GridSpec,
    GridSummary, LoadedDataset, RankMetric, RunInfo, RunOptions,
};
use patchlab::ingest::{
    self, generate_fixture, CanonicalEyes, DatasetManifest, FixtureSpec, ManifestLayout, Split,
};
use patchlab::model::{load_split, BackboneConfig, TrainConfig, WeightSource};
use patchlab::roi::{apply_mask, build_mask, resolve_config, RoiSpec, Scale};

#[derive(Parser)]
#[command(
    name = "patchlab",
    version,
    about = "Facial patch classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align raw images to the canonical frame and write a manifest.
    Ingest(IngestArgs),
    /// Generate a synthetic aligned dataset with a planted regional signal.
    Fixture(FixtureArgs),
    /// Export images with everything outside a patch configuration blacked out.
    Mask(MaskArgs),
    /// Train and evaluate a single configuration.
    Train(TrainArgs),
    /// Score a split with a saved checkpoint.
    Eval(EvalArgs),
    /// Run the configuration x scale grid from a config file.
    Grid(GridArgs),
    /// Rank a grid summary and render ROC panels.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Canonical eye centers as "lx,ly,rx,ry".
    #[arg(long, default_value = "37.5,60,92.5,60")]
    canon: String,
    #[arg(long, default_value = "positive")]
    positive_dir: String,
    #[arg(long, default_value = "negative")]
    negative_dir: String,
    #[arg(long, default_value = "eyes.csv")]
    sidecar: String,
    /// Split for images not inside a train/val/test folder.
    #[arg(long, default_value = "train")]
    default_split: Split,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    /// Fixture settings file (JSON or TOML); defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    roi: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MaskArgs {
    /// ROI rectangle file; the shipped default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    config: String,
    #[arg(long, default_value = "large")]
    scale: Scale,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Pretrained backbone weights (safetensors, torchvision names).
    #[arg(
        long,
        conflicts_with = "random_init",
        required_unless_present = "random_init"
    )]
    weights: Option<PathBuf>,
    /// Initialize every parameter from the seed instead of pretrained weights.
    #[arg(long)]
    random_init: bool,
    /// Channels of the first residual stage.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Average-pool the input by this factor before the network.
    #[arg(long, default_value_t = 1)]
    downsample: usize,
}

impl ModelArgs {
    fn weights(&self) -> WeightSource {
        match &self.weights {
            Some(path) => WeightSource::Pretrained { path: path.clone() },
            None => WeightSource::Random,
        }
    }

    fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            base_width: self.width,
            input_downsample: self.downsample,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// ROI rectangle file; the shipped default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    config: String,
    /// Patch scale; ignored for FULL_FACE.
    #[arg(long, default_value = "large")]
    scale: Scale,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    summary: PathBuf,
    /// Directory for roc_val.svg and roc_test.svg.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long, default_value = "test_auc")]
    metric: RankMetric,
}

fn load_roi(path: Option<&Path>) -> anyhow::Result<RoiSpec> {
    Ok(match path {
        Some(p) => RoiSpec::load(p)?,
        None => RoiSpec::default(),
    })
}

fn load_structured<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)?,
        _ => serde_json::from_str(&text)?,
    })
}

fn cmd_ingest(args: IngestArgs) -> anyhow::Result<()> {
    let canon = CanonicalEyes::parse(&args.canon)?;
    let layout = ManifestLayout {
        positive_dir: args.positive_dir,
        negative_dir: args.negative_dir,
        sidecar: args.sidecar,
        default_split: args.default_split,
    };
    let manifest = ingest::ingest(&args.root, &args.out, &layout, &canon)?;
    println!(
        "aligned {} images ({} skipped) into {}",
        manifest.entries.len(),
        manifest.skipped.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_fixture(args: FixtureArgs) -> anyhow::Result<()> {
    let mut spec: FixtureSpec = match &args.spec {
        Some(p) => load_structured(p)?,
        None => FixtureSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let roi = load_roi(args.roi.as_deref())?;
    let manifest = generate_fixture(&spec, &roi, &args.out)?;
    println!(
        "wrote {} images to {}",
        manifest.entries.len(),
        args.out.display()
    );
    Ok(())
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

fn cmd_mask(args: MaskArgs) -> anyhow::Result<()> {
    let roi = load_roi(args.spec.as_deref())?;
    let config = resolve_config(&args.config)?;
    let mask = build_mask(&roi, &config, args.scale);
    let mut written = 0;
    for entry in WalkDir::new(&args.input).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() || !is_image(entry.path()) {
            continue;
        }
        let rel = entry.path().strip_prefix(&args.input)?;
        let img = image::open(entry.path())
            .with_context(|| format!("decoding {}", entry.path().display()))?
            .to_rgb8();
        let masked = apply_mask(&img, &mask)
            .with_context(|| format!("masking {}", entry.path().display()))?;
        let out = args.out.join(rel).with_extension("png");
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        masked.save(&out)?;
        written += 1;
    }
    println!("wrote {written} masked images to {}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let config = resolve_config(&args.config)?;
    let scale = (!config.is_full_face()).then_some(args.scale);
    let roi = load_roi(args.spec.as_deref())?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let data = LoadedDataset::load(&manifest)?;
    let weights = args.model.weights();
    let mut train = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: cell_seed(args.seed, &config, scale),
        ..TrainConfig::default()
    };
    if let Some(lr) = args.lr {
        train.lr = lr;
    }
    train.validate()?;
    let info = RunInfo {
        config,
        scale,
        roi_spec: roi,
        backbone: args.model.backbone(),
        train,
        weights_sha256: weights_digest(&weights)?,
        weights,
        manifest_fingerprint: data.fingerprint.clone(),
    };
    let result = run_cell(&data, &info, &args.out)?;
    println!("checkpoint: {}", result.checkpoint_path.display());
    println!(
        "val   auc={:.4} acc={:.4}",
        result.val.auc, result.val.accuracy
    );
    if let Some(test) = &result.test {
        println!(
            "test  auc={:.4} acc={:.4} sens={:.4} spec={:.4}",
            test.auc, test.accuracy, test.sensitivity, test.specificity
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let (meta, model) = restore_checkpoint(&args.checkpoint)?;
    let run = meta.run;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let data = load_split(
        &manifest,
        args.split,
        &run.mask(),
        &run.train.normalization,
        model.device(),
    )?;
    let scored = score_split(&model, &data, run.train.batch_size)?;
    std::fs::create_dir_all(&args.out)?;
    write_scores(
        &args.out.join(format!("scores_{}.csv", args.split)),
        &scored,
    )?;
    let mut report = EvalReport::from_scores(run.config.name(), run.scale, args.split, &scored)?;
    let plot = emit_roc_plot(
        std::slice::from_ref(&report),
        &args.out.join(format!("roc_{}.svg", args.split)),
    )?;
    report.plot_path = Some(plot);
    report.save(&args.out.join(format!("report_{}.json", args.split)))?;
    println!(
        "{} {}: auc={:.4} acc={:.4} sens={:.4} spec={:.4}",
        report.label(),
        args.split,
        report.auc,
        report.accuracy,
        report.sensitivity,
        report.specificity
    );
    Ok(())
}

fn cmd_grid(args: GridArgs) -> anyhow::Result<ExitCode> {
    let spec = GridSpec::load(&args.config)?;
    let run = grid::run_grid(
        &spec,
        RunOptions {
            resume: args.resume,
            workers: args.workers,
        },
    )?;
    println!(
        "{} cells ok, {} failed ({} trained, {} reused); summary at {}",
        run.summary.ok_count(),
        run.summary.failed_count(),
        run.computed.len(),
        run.reused.len(),
        run.summary_path.display()
    );
    Ok(if run.summary.failed_count() > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let summary = GridSummary::load(&args.summary)?;
    let ranked = rank_summary(&summary, args.metric)?;
    println!(
        "{:<4} {:<14} {:<7} {:<7} {:>8} {:>8} {:>8} {:>8}",
        "rank", "config", "scale", "status", "val_auc", "test_auc", "test_acc", "test_sen"
    );
    for (i, row) in ranked.iter().enumerate() {
        println!(
            "{:<4} {:<14} {:<7} {:<7} {:>8} {:>8} {:>8} {:>8}",
            i + 1,
            row.config_name,
            grid::scale_dir_name(row.scale),
            if row.is_ok() { "ok" } else { "failed" },
            fmt_metric(row.val_auc),
            fmt_metric(row.test_auc),
            fmt_metric(row.test_accuracy),
            fmt_metric(row.test_sensitivity),
        );
    }
    if let Some(dir) = args.plot {
        for (split, pick) in [
            (
                Split::Val,
                (|r: &grid::SummaryRow| r.val_report_path.clone()) as fn(&_) -> _,
            ),
            (Split::Test, |r: &grid::SummaryRow| {
                r.test_report_path.clone()
            }),
        ] {
            let reports = summary
                .rows
                .iter()
                .filter(|r| r.is_ok())
                .filter_map(pick)
                .map(|p| EvalReport::load(&p))
                .collect::<Result<Vec<_>, _>>()?;
            if reports.is_empty() {
                continue;
            }
            let path = emit_roc_plot(&reports, &dir.join(format!("roc_{split}.svg")))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a)?,
        Command::Fixture(a) => cmd_fixture(a)?,
        Command::Mask(a) => cmd_mask(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Grid(a) => return cmd_grid(a),
        Command::Report(a) => cmd_report(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
