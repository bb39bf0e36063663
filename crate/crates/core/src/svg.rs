//! Minimal SVG figures: mask overlays and loss curves.

use std::fmt::Write;

use crate::ingest::PartMask;

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Target pixels in grey, predicted pixels in translucent red, one rect per
/// horizontal run.
pub fn mask_overlay(target: &PartMask, pred: &PartMask, scale: usize) -> String {
    let (w, h) = (target.width(), target.height());
    let s = scale.max(1);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#,
        w * s,
        h * s
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (mask, style) in [(target, r##"fill="#999999""##), (pred, r##"fill="#d62728" fill-opacity="0.5""##)] {
        if mask.width() != w || mask.height() != h {
            continue;
        }
        for y in 0..h {
            let mut x = 0;
            while x < w {
                if !mask.get(x, y) {
                    x += 1;
                    continue;
                }
                let start = x;
                while x < w && mask.get(x, y) {
                    x += 1;
                }
                let _ = writeln!(out, r#"<rect x="{start}" y="{y}" width="{}" height="1" {style}/>"#, x - start);
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Log-scale polylines, one per named series.
pub fn loss_curves(series: &[(String, Vec<f64>)], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let positive = |v: &f64| v.is_finite() && *v > 0.0;
    let all: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied().filter(positive)).collect();
    let longest = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let (lo, hi) = if all.is_empty() {
        (0.0, 1.0)
    } else {
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min).log10();
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10();
        if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) }
    };
    let px = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (longest - 1) as f64;
    let py = |v: f64| H - PAD - (H - 2.0 * PAD) * (v.log10() - lo) / (hi - lo);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(out, r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">iteration</text>"#, H - 15.0);
    let _ = writeln!(out, r#"<text x="5" y="{}" font-family="sans-serif" font-size="11">1e{:.1}</text>"#, PAD, hi);
    let _ = writeln!(out, r#"<text x="5" y="{}" font-family="sans-serif" font-size="11">1e{:.1}</text>"#, H - PAD, lo);
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| positive(v))
            .map(|(i, v)| format!("{:.2},{:.2}", px(i), py(*v)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            W - PAD - 150.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
