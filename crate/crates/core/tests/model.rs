mod common;

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use patchlab::grid::{restore_checkpoint, run_cell, LoadedDataset, RunInfo};
use patchlab::ingest::{DatasetManifest, Label, Split};
use patchlab::model::{
    build_model, evaluate_split, load_split, lr_at_epoch, read_history, train, BackboneConfig,
    Normalization, TrainConfig, WeightSource,
};
use patchlab::roi::{build_mask, enumerate_configs, Mask, Region, RoiSpec, Scale};
use patchlab::{Error, FRAME_HEIGHT, FRAME_WIDTH};

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        base_width: 4,
        input_downsample: 2,
    }
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 0.01,
        ..TrainConfig::default()
    }
}

fn full_mask() -> Mask {
    Mask::ones(FRAME_HEIGHT, FRAME_WIDTH)
}

#[test]
fn standard_network_maps_batch_to_single_logit() {
    let model = build_model(&BackboneConfig::default(), &WeightSource::Random, 0).unwrap();
    let x = Tensor::zeros((4, 3, FRAME_HEIGHT, FRAME_WIDTH), DType::F32, &Device::Cpu).unwrap();
    let logits = model.forward_t(&x, false).unwrap();
    assert_eq!(logits.dims(), &[4, 1]);
    // Every parameter is trainable: only BatchNorm running statistics are excluded.
    let trainable: usize = model.trainable_vars().iter().map(|v| v.elem_count()).sum();
    assert_eq!(trainable, model.parameter_count());
    assert_eq!(trainable, 11_177_025);
}

#[test]
fn pretrained_load_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backbone.safetensors");
    let cfg = tiny_backbone();
    let donor = build_model(&cfg, &WeightSource::Random, 99).unwrap();
    donor.save(&path).unwrap();

    let source = WeightSource::Pretrained { path: path.clone() };
    let a = build_model(&cfg, &source, 1).unwrap().state().unwrap();
    let b = build_model(&cfg, &source, 2).unwrap().state().unwrap();
    let donor_state = donor.state().unwrap();
    for (name, tensor) in &donor_state {
        if name.starts_with("fc.") {
            continue;
        }
        let expected = tensor.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(
            a[name].flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            expected,
            "{name}"
        );
        assert_eq!(
            b[name].flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            expected,
            "{name}"
        );
    }
}

#[test]
fn missing_pretrained_weights_is_an_error() {
    let source = WeightSource::Pretrained {
        path: "/nonexistent/resnet18.safetensors".into(),
    };
    match build_model(&tiny_backbone(), &source, 0) {
        Err(Error::WeightsUnavailable(_)) => {}
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("random init used silently"),
    }
}

#[test]
fn masked_inputs_give_finite_logits_for_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::load(&common::fixture(dir.path(), 1, 1, 1, 3)).unwrap();
    let model = build_model(&tiny_backbone(), &WeightSource::Random, 0).unwrap();
    let roi = RoiSpec::default();
    let norm = Normalization::default();
    for config in enumerate_configs() {
        for scale in Scale::ALL {
            let mask = build_mask(&roi, &config, scale);
            let data = load_split(&manifest, Split::Test, &mask, &norm, &Device::Cpu).unwrap();
            let one = data.images.narrow(0, 0, 1).unwrap();
            let z = model
                .forward_t(&one, false)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            assert_eq!(z.len(), 1);
            assert!(z[0].is_finite(), "{config} {scale}: {}", z[0]);
        }
    }
}

#[test]
fn single_epoch_history() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::load(&common::fixture(dir.path(), 4, 2, 0, 5)).unwrap();
    let norm = Normalization::default();
    let tr = load_split(&manifest, Split::Train, &full_mask(), &norm, &Device::Cpu).unwrap();
    let va = load_split(&manifest, Split::Val, &full_mask(), &norm, &Device::Cpu).unwrap();
    let model = build_model(&tiny_backbone(), &WeightSource::Random, 0).unwrap();
    let (best, history) = train(&model, &tr, &va, &quick_config(1)).unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(best.epoch, 0);
    assert_eq!(best.val_accuracy, history[0].val_acc);
}

#[test]
fn empty_split_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::load(&common::fixture(dir.path(), 2, 2, 0, 5)).unwrap();
    let err = load_split(
        &manifest,
        Split::Test,
        &full_mask(),
        &Normalization::default(),
        &Device::Cpu,
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn nan_head_reports_non_finite_loss_location() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::load(&common::fixture(dir.path(), 4, 2, 0, 5)).unwrap();
    let norm = Normalization::default();
    let tr = load_split(&manifest, Split::Train, &full_mask(), &norm, &Device::Cpu).unwrap();
    let va = load_split(&manifest, Split::Val, &full_mask(), &norm, &Device::Cpu).unwrap();
    let model = build_model(&tiny_backbone(), &WeightSource::Random, 0).unwrap();
    // ReLU clamps NaN activations to zero, so poison the head, which
    // follows the last ReLU.
    let mut state = model.state().unwrap();
    let w = state["fc.weight"].affine(f64::NAN, 0.0).unwrap();
    state.insert("fc.weight".into(), w);
    model.restore(&state).unwrap();
    match train(&model, &tr, &va, &quick_config(2)) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (0, 0)),
        other => panic!(
            "expected a non-finite loss, got {:?}",
            other.map(|(b, _)| b.epoch)
        ),
    }
}

/// Mean red value of each image inside the small cheek rectangles.
fn cheek_intensity(images: &[patchlab::ingest::AlignedImage], roi: &RoiSpec) -> Vec<(f64, Label)> {
    let rects = [
        roi.rect(Region::LC, Scale::Small),
        roi.rect(Region::RC, Scale::Small),
    ];
    images
        .iter()
        .map(|img| {
            let (mut sum, mut n) = (0.0, 0.0);
            for r in &rects {
                for row in r.top..r.bottom() {
                    for col in r.left..r.right() {
                        sum += f64::from(img.pixels.get_pixel(col, row)[0]);
                        n += 1.0;
                    }
                }
            }
            (sum / n, img.label)
        })
        .collect()
}

#[test]
fn separable_fixture_reaches_high_validation_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::load(&common::fixture(dir.path(), 40, 15, 0, 11)).unwrap();
    let roi = RoiSpec::default();

    // Oracle: a threshold on mean cheek redness, placed midway between the
    // train class means, separates the validation split.
    let data = LoadedDataset::load(&manifest).unwrap();
    let train_feat = cheek_intensity(data.images(Split::Train), &roi);
    let mean = |label| {
        let v: Vec<f64> = train_feat
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(x, _)| *x)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let cut = (mean(Label::Positive) + mean(Label::Negative)) / 2.0;
    let val_feat = cheek_intensity(data.images(Split::Val), &roi);
    let oracle_acc = val_feat
        .iter()
        .filter(|(x, l)| (*x >= cut) == (*l == Label::Positive))
        .count() as f64
        / val_feat.len() as f64;
    assert!(oracle_acc >= 0.9, "oracle accuracy {oracle_acc}");

    let norm = Normalization::default();
    let mask = full_mask();
    let tr = load_split(&manifest, Split::Train, &mask, &norm, &Device::Cpu).unwrap();
    let va = load_split(&manifest, Split::Val, &mask, &norm, &Device::Cpu).unwrap();
    let model = build_model(&tiny_backbone(), &WeightSource::Random, 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        ..quick_config(5)
    };
    let (best, history) = train(&model, &tr, &va, &cfg).unwrap();
    assert!(best.val_accuracy >= 0.9, "{history:?}");
    for rec in &history {
        assert_eq!(rec.lr, lr_at_epoch(&cfg, rec.epoch).unwrap());
    }
    // The model is left holding the best parameters.
    assert_eq!(
        evaluate_split(&model, &va, cfg.batch_size).unwrap().1,
        best.val_accuracy
    );
}

#[test]
fn checkpoint_restore_reproduces_validation_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::load(&common::fixture(&dir.path().join("data"), 12, 6, 3, 2)).unwrap();
    let data = LoadedDataset::load(&manifest).unwrap();
    let info = RunInfo {
        config: "N+LC".parse().unwrap(),
        scale: Some(Scale::Medium),
        roi_spec: RoiSpec::default(),
        backbone: tiny_backbone(),
        train: quick_config(3),
        weights: WeightSource::Random,
        weights_sha256: None,
        manifest_fingerprint: data.fingerprint.clone(),
    };
    let cell = dir.path().join("cell");
    let result = run_cell(&data, &info, &cell).unwrap();
    let history = read_history(&cell.join("history.csv")).unwrap();
    assert_eq!(history.len(), 3);
    for rec in &history {
        assert_eq!(rec.lr, lr_at_epoch(&info.train, rec.epoch).unwrap());
    }

    let (meta, model) = restore_checkpoint(&result.checkpoint_path).unwrap();
    assert_eq!(meta.run, info);
    assert_eq!(meta.val_accuracy, history[meta.epoch].val_acc);
    let val = data.tensors(Split::Val, &info.mask(), &info).unwrap();
    let (_, acc) = evaluate_split(&model, &val, info.train.batch_size).unwrap();
    assert_eq!(acc, meta.val_accuracy);
    assert_eq!(result.val.split, Split::Val);
    assert_eq!(result.test.as_ref().map(|t| t.n_pos + t.n_neg), Some(6));

    // A corrupted weight file is refused.
    let weights = cell.join(&meta.weights_file);
    let mut bytes = std::fs::read(&weights).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&weights, bytes).unwrap();
    assert!(restore_checkpoint(&result.checkpoint_path).is_err());
}

#[test]
fn restored_state_matches_saved_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.safetensors");
    let a = build_model(&tiny_backbone(), &WeightSource::Random, 4).unwrap();
    a.save(&path).unwrap();
    let b = build_model(&tiny_backbone(), &WeightSource::Random, 5).unwrap();
    b.load_weights(&path).unwrap();
    let (sa, sb): (HashMap<_, _>, HashMap<_, _>) = (
        a.state().unwrap().into_iter().collect(),
        b.state().unwrap().into_iter().collect(),
    );
    assert_eq!(sa.len(), sb.len());
    for (k, v) in &sa {
        let x = v.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let y = sb[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(x, y, "{k}");
    }
}
