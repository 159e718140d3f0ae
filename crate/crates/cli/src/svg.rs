//! SVG overlay of regular and depth-adapted sampling grids.
//!
//! The drawing uses image pixel coordinates as user units (`viewBox`), so a
//! tap at fractional position `(u, v)` is drawn at exactly `(u, v)`. Every
//! tap also carries its coordinates as `data-u` / `data-v` attributes.

use std::fmt::Write;

use zacn_core::DepthMap;

/// One query pixel and the sampling positions of its taps.
pub struct Query {
    pub u: usize,
    pub v: usize,
    /// Regular grid positions `(u, v)`, row-major taps.
    pub standard: Vec<(f64, f64)>,
    /// Adapted positions `(u, v)` and the stored offsets `(dy, dx)`.
    pub adapted: Vec<((f64, f64), (f32, f32))>,
    pub fallback: bool,
}

const LONG_SIDE: f64 = 800.0;
const TAP: f64 = 0.3;

fn gray_levels(depth: &DepthMap) -> Vec<Option<u8>> {
    let valid: Vec<f32> = depth
        .data()
        .iter()
        .copied()
        .filter(|z| z.is_finite() && *z > 0.0)
        .collect();
    let lo = valid.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = valid.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    depth
        .data()
        .iter()
        .map(|&z| {
            (z.is_finite() && z > 0.0).then(|| {
                // near is bright
                let t = if hi > lo { (z - lo) / span } else { 0.5 };
                (235.0 - 200.0 * t).round() as u8
            })
        })
        .collect()
}

/// Depth as horizontal runs of equally shaded pixels.
fn depth_layer(out: &mut String, depth: &DepthMap) {
    let (h, w) = (depth.height(), depth.width());
    let levels = gray_levels(depth);
    out.push_str("<g id=\"depth\" shape-rendering=\"crispEdges\">\n");
    for y in 0..h {
        let row = &levels[y * w..(y + 1) * w];
        let mut x = 0;
        while x < w {
            let level = row[x];
            let mut end = x + 1;
            while end < w && row[end] == level {
                end += 1;
            }
            let fill = match level {
                Some(g) => format!("rgb({g},{g},{g})"),
                None => "rgb(150,40,40)".to_string(),
            };
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"1\" fill=\"{fill}\"/>",
                x as f64 - 0.5,
                y as f64 - 0.5,
                end - x
            );
            x = end;
        }
    }
    out.push_str("</g>\n");
}

pub fn render(depth: &DepthMap, kernel: usize, dilation: usize, queries: &[Query]) -> String {
    let (h, w) = (depth.height(), depth.width());
    let scale = LONG_SIDE / h.max(w) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"-0.5 -0.5 {w} {h}\" width=\"{:.0}\" height=\"{:.0}\" data-kernel=\"{kernel}\" data-dilation=\"{dilation}\">",
        w as f64 * scale,
        h as f64 * scale
    );
    depth_layer(&mut out, depth);
    let center_tap = kernel * kernel / 2;
    for q in queries {
        let _ = writeln!(
            out,
            "<g class=\"query\" data-u=\"{}\" data-v=\"{}\" data-fallback=\"{}\">",
            q.u, q.v, q.fallback
        );
        let _ = writeln!(
            out,
            "<rect class=\"center\" x=\"{}\" y=\"{}\" width=\"1\" height=\"1\" fill=\"none\" stroke=\"rgb(255,200,0)\" stroke-width=\"0.12\"/>",
            q.u as f64 - 0.5,
            q.v as f64 - 0.5
        );
        for ((su, sv), ((au, av), _)) in q.standard.iter().zip(&q.adapted) {
            let _ = writeln!(
                out,
                "<line x1=\"{su}\" y1=\"{sv}\" x2=\"{au}\" y2=\"{av}\" stroke=\"rgb(90,160,255)\" stroke-width=\"0.04\"/>"
            );
        }
        for (t, (su, sv)) in q.standard.iter().enumerate() {
            let _ = writeln!(
                out,
                "<rect class=\"standard-tap\" data-tap=\"{t}\" data-u=\"{su}\" data-v=\"{sv}\" x=\"{}\" y=\"{}\" width=\"{TAP}\" height=\"{TAP}\" fill=\"none\" stroke=\"rgb(40,90,220)\" stroke-width=\"0.06\"/>",
                su - TAP / 2.0,
                sv - TAP / 2.0
            );
        }
        for (t, ((au, av), (dy, dx))) in q.adapted.iter().enumerate() {
            let fill = if t == center_tap { "rgb(255,200,0)" } else { "rgb(230,60,60)" };
            let _ = writeln!(
                out,
                "<circle class=\"adapted-tap\" data-tap=\"{t}\" data-u=\"{au}\" data-v=\"{av}\" data-dy=\"{dy}\" data-dx=\"{dx}\" cx=\"{au}\" cy=\"{av}\" r=\"{}\" fill=\"{fill}\" fill-opacity=\"0.8\"/>",
                TAP / 2.0
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}
