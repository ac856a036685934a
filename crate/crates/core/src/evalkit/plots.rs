//! Minimal SVG renderings of ROC curves, confusion matrices and embeddings.

use std::fmt::Write;

use super::{ConfusionMatrix, RocCurve};
use crate::corpus::Label;
use crate::explain::{colormap, EmbeddingPoint};

const PALETTE: [&str; 9] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];

const SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn header(out: &mut String, title: &str) {
    let full = SIZE + 2.0 * MARGIN;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="25" text-anchor="middle" font-size="15">{}</text>"#, full / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, xlabel: &str, ylabel: &str) {
    let (x0, y0) = (MARGIN, MARGIN + SIZE);
    let _ = writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let x = x0 + v * SIZE;
        let y = y0 - v * SIZE;
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.1}</text>"#, y0 + 16.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, x0 + SIZE / 2.0, y0 + 36.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE / 2.0
    );
}

/// ROC curves on shared axes with the chance diagonal and an AUC legend.
pub fn roc_svg(title: &str, curves: &[(String, &RocCurve)]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, "False positive rate", "True positive rate");
    let (x0, y0) = (MARGIN, MARGIN + SIZE);
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{MARGIN}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x0 + SIZE
    );
    for (k, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> =
            curve.points.iter().map(|(f, t)| format!("{:.2},{:.2}", x0 + f * SIZE, y0 - t * SIZE)).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = y0 - 20.0 - 18.0 * (curves.len() - 1 - k) as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"#, x0 + SIZE - 170.0, ly - 10.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}">{} (AUC {:.3})</text>"#,
            x0 + SIZE - 152.0,
            escape(name),
            curve.auc
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Row-normalized confusion matrix as a heat table with counts.
pub fn confusion_svg(title: &str, cm: &ConfusionMatrix) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let norm = cm.row_normalized();
    let cell = SIZE / 3.0;
    for (i, row) in norm.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let [r, g, b] = colormap(v);
            let (x, y) = (MARGIN + j as f64 * cell, MARGIN + i as f64 * cell);
            let _ = writeln!(out, r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({r},{g},{b})" stroke="white"/>"#);
            let ink = if v > 0.6 { "black" } else { "white" };
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}" font-size="16">{:.1}%</text>"#,
                x + cell / 2.0,
                y + cell / 2.0,
                100.0 * v
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">n={}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 18.0,
                cm.counts[i][j]
            );
        }
    }
    for (k, label) in Label::ALL.iter().enumerate() {
        let c = MARGIN + (k as f64 + 0.5) * cell;
        let _ = writeln!(out, r#"<text x="{c}" y="{}" text-anchor="middle">{label}</text>"#, MARGIN + SIZE + 18.0);
        let _ = writeln!(out, r#"<text x="{}" y="{c}" text-anchor="end">{label}</text>"#, MARGIN - 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">Predicted</text>"#, MARGIN + SIZE / 2.0, MARGIN + SIZE + 38.0);
    out.push_str("</svg>\n");
    out
}

/// Scatter plot of embedded points colored by `group(point)`.
pub fn scatter_svg(title: &str, points: &[EmbeddingPoint], group: impl Fn(&EmbeddingPoint) -> String) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(xmin, xmax), span(ymin, ymax));
    let mut groups: Vec<String> = points.iter().map(&group).collect();
    groups.sort();
    groups.dedup();
    for p in points {
        let k = groups.binary_search(&group(p)).unwrap_or(0);
        let x = MARGIN + 10.0 + (p.x - xmin) / sx * (SIZE - 20.0);
        let y = MARGIN + SIZE - 10.0 - (p.y - ymin) / sy * (SIZE - 20.0);
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#, PALETTE[k % PALETTE.len()]);
    }
    for (k, g) in groups.iter().enumerate() {
        let y = MARGIN + SIZE + 20.0 + 14.0 * (k / 3) as f64;
        let x = MARGIN + 140.0 * (k % 3) as f64;
        let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="4" fill="{}"/>"#, x + 5.0, y - 4.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(g));
    }
    out.push_str("</svg>\n");
    out
}
