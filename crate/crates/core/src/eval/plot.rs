//! Hand-written SVG ROC panels: one panel per patch scale, one curve per
//! configuration with its AUC in the legend, plus the chance diagonal.
//! Full-face reports have no scale and are drawn in every panel.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::EvalReport;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::roi::Scale;

const PALETTE: [&str; 15] = [
    "#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
    "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39",
];

const PLOT: f64 = 300.0;
const MARGIN_LEFT: f64 = 50.0;
const MARGIN_TOP: f64 = 40.0;
const LEGEND_WIDTH: f64 = 190.0;
const PANEL_WIDTH: f64 = MARGIN_LEFT + PLOT + 20.0 + LEGEND_WIDTH;
const LEGEND_ROW: f64 = 16.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn panel(svg: &mut String, x0: f64, title: &str, curves: &[&EvalReport]) {
    let px = |fpr: f64| x0 + MARGIN_LEFT + fpr * PLOT;
    let py = |tpr: f64| MARGIN_TOP + (1.0 - tpr) * PLOT;
    let _ = writeln!(svg, "<g class=\"panel\">");
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        px(0.5),
        MARGIN_TOP - 14.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{PLOT:.2}\" height=\"{PLOT:.2}\" fill=\"none\" stroke=\"#333333\"/>",
        px(0.0),
        py(1.0)
    );
    for tick in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{tick:.1}</text>",
            px(tick),
            py(0.0) + 14.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{tick:.1}</text>",
            px(0.0) - 4.0,
            py(tick) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">False positive rate</text>",
        px(0.5),
        py(0.0) + 30.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 {:.2} {:.2})\">True positive rate</text>",
        px(0.0) - 34.0,
        py(0.5),
        px(0.0) - 34.0,
        py(0.5)
    );
    let _ = writeln!(
        svg,
        "<line class=\"chance\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999999\" stroke-dasharray=\"4 4\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (i, report) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = report
            .roc
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline class=\"roc\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let ly = MARGIN_TOP + 6.0 + i as f64 * LEGEND_ROW;
        let lx = x0 + MARGIN_LEFT + PLOT + 20.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            lx + 18.0
        );
        let _ = writeln!(
            svg,
            "<text class=\"legend-entry\" x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{} (AUC = {:.3})</text>",
            lx + 24.0,
            ly + 4.0,
            escape(&report.label()),
            report.auc
        );
    }
    let _ = writeln!(svg, "</g>");
}

/// Renders the reports to an SVG file at `out` and returns the path.
/// Output is a pure function of the reports.
pub fn emit_roc_plot(reports: &[EvalReport], out: &Path) -> Result<PathBuf> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("cannot plot an empty report list".into()))?;
    if let Some(other) = reports.iter().find(|r| r.split != first.split) {
        return Err(Error::Config(format!(
            "reports mix splits '{}' and '{}'",
            first.split, other.split
        )));
    }

    let full_face: Vec<&EvalReport> = reports.iter().filter(|r| r.scale.is_none()).collect();
    let mut panels: Vec<(String, Vec<&EvalReport>)> = Scale::ALL
        .iter()
        .filter_map(|&scale| {
            let scaled: Vec<&EvalReport> =
                reports.iter().filter(|r| r.scale == Some(scale)).collect();
            (!scaled.is_empty()).then(|| {
                let curves = full_face.iter().copied().chain(scaled).collect();
                (
                    format!("{} patches ({})", capitalize(scale.as_str()), first.split),
                    curves,
                )
            })
        })
        .collect();
    if panels.is_empty() {
        panels.push((format!("Full face ({})", first.split), full_face));
    }

    let rows = panels.iter().map(|(_, c)| c.len()).max().unwrap_or(0) as f64;
    let height = (MARGIN_TOP + PLOT + 50.0).max(MARGIN_TOP + 10.0 + rows * LEGEND_ROW);
    let width = PANEL_WIDTH * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>"
    );
    for (i, (title, curves)) in panels.iter().enumerate() {
        panel(&mut svg, i as f64 * PANEL_WIDTH, title, curves);
    }
    svg.push_str("</svg>\n");
    fsutil::write_atomic(out, svg.as_bytes())?;
    Ok(out.to_path_buf())
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
