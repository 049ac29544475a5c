//! Minimal SVG box plots and PGM image dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{IoContext, Result};
use crate::report::AggregateRow;

/// Horizontal-axis categories with their box statistics; whiskers span the
/// interquartile box only, and the mean is drawn as a dot.
pub fn box_plot_svg(title: &str, rows: &[AggregateRow]) -> String {
    let (w, h, pad) = (120.0 * rows.len().max(1) as f64 + 80.0, 320.0, 40.0);
    let lo = rows.iter().map(|r| r.q1.min(r.mean)).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.q3.max(r.mean)).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{pad}" y2="{}" stroke="black"/>"#, y(lo), y(hi));
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, pad - 4.0, y(v) + 4.0);
    }
    for (i, r) in rows.iter().enumerate() {
        let cx = pad + 60.0 + 120.0 * i as f64;
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{}" width="60" height="{}" fill="#9ecae1" stroke="black"/>"##,
            cx - 30.0,
            y(r.q3),
            (y(r.q1) - y(r.q3)).max(1.0)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{m}" x2="{}" y2="{m}" stroke="black" stroke-width="2"/>"#,
            cx - 30.0,
            cx + 30.0,
            m = y(r.median)
        );
        let _ = writeln!(s, r#"<circle cx="{cx}" cy="{}" r="3"/>"#, y(r.mean));
        let _ = writeln!(s, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, h - 12.0, escape(&r.method));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Binary greyscale image, values rescaled from their own range to 0..=255.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), width * height, "image size");
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| ((v - lo) / span * 255.0).round() as u8));
    fs::write(path, bytes).at(path)
}

/// Tiles equally sized images left to right, separated by a one-pixel gap
/// at the minimum value.
pub fn tile(images: &[&[f64]], width: usize, height: usize) -> (usize, Vec<f64>) {
    let count = images.len();
    let total = count * width + count.saturating_sub(1);
    let lo = images.iter().flat_map(|i| i.iter()).copied().fold(f64::INFINITY, f64::min);
    let mut out = vec![lo; total * height];
    for (k, img) in images.iter().enumerate() {
        for r in 0..height {
            let dst = r * total + k * (width + 1);
            out[dst..dst + width].copy_from_slice(&img[r * width..(r + 1) * width]);
        }
    }
    (total, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm(&p, 2, 2, &[0.0, 1.0, 0.5, 1.0]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 128, 255]);
    }

    #[test]
    fn tiles_side_by_side() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let (w, img) = tile(&[&a, &b], 2, 2);
        assert_eq!(w, 5);
        assert_eq!(img, vec![1.0, 2.0, 1.0, 5.0, 6.0, 3.0, 4.0, 1.0, 7.0, 8.0]);
    }

    #[test]
    fn svg_has_one_box_per_method() {
        let row = |m: &str, q: f64| AggregateRow {
            dataset: "d".into(),
            method: m.into(),
            metric: "x".into(),
            q1: q,
            median: q + 1.0,
            q3: q + 2.0,
            mean: q + 1.0,
            n: 3,
        };
        let svg = box_plot_svg("x <d>", &[row("senn", 0.0), row("lime", 1.0)]);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("x &lt;d&gt;"));
    }
}
