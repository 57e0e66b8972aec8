//! Minimal self-contained SVG charts for quick inspection of run output.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series {
    pub name: String,
    /// `(x, y, stderr)`.
    pub points: Vec<(f64, f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, w: f64, h: f64) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12"><rect width="100%" height="100%" fill="white"/><text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

/// Line chart with error bars; y is fixed to `[y_lo, y_hi]`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], y_lo: f64, y_hi: f64) -> String {
    let mut out = String::new();
    header(&mut out, title, W, H);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (x_lo, x_hi) = if x_lo.is_finite() && x_hi > x_lo { (x_lo, x_hi) } else { (0.0, 1.0) };
    let sx = |x: f64| PAD + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    let _ = write!(
        out,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for i in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="end">{y:.2}</text>"#, PAD - 6.0, sy(y) + 4.0);
    }
    let ticks: Vec<f64> = {
        let mut t: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    };
    for x in ticks.iter().take(40) {
        let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#, sx(*x), H - PAD + 16.0);
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = write!(out, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for p in &s.points {
            if p.2 > 0.0 {
                let _ = write!(
                    out,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{c}"/>"#,
                    sx(p.0),
                    sy(p.1 - p.2),
                    sy(p.1 + p.2)
                );
            }
            let _ = write!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, sx(p.0), sy(p.1));
        }
        let ly = PAD + 16.0 * i as f64;
        let _ = write!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/><text x="{}" y="{}">{}</text>"#,
            W - PAD - 150.0,
            ly - 9.0,
            W - PAD - 135.0,
            ly,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grayscale heatmap of a row-major matrix with values in `[0, 1]`.
pub fn heatmap(title: &str, m: &[Vec<f64>]) -> String {
    let rows = m.len().max(1);
    let cols = m.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let cell = (320.0 / rows.max(cols) as f64).floor().max(4.0);
    let (w, h) = (cols as f64 * cell + 2.0 * PAD, rows as f64 * cell + 2.0 * PAD);
    let mut out = String::new();
    header(&mut out, title, w, h);
    for (r, row) in m.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = write!(
                out,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},{shade})"><title>{r},{c}: {v:.4}</title></rect>"#,
                PAD + c as f64 * cell,
                PAD + r as f64 * cell
            );
        }
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">predicted class</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">true class</text>"#,
        w / 2.0,
        h - 16.0,
        h / 2.0,
        h / 2.0
    );
    out.push_str("</svg>\n");
    out
}

/// Bars of `mean` with `std` whiskers, one per coordinate.
pub fn bar_chart(title: &str, mean: &[f64], std: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, title, W, H);
    let hi = mean.iter().zip(std).map(|(m, s)| m + s).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let lo = mean.iter().zip(std).map(|(m, s)| m - s).fold(f64::INFINITY, f64::min).min(0.0);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let sy = |y: f64| H - PAD - (y - lo) / span * (H - 2.0 * PAD);
    let n = mean.len().max(1) as f64;
    let bw = (W - 2.0 * PAD) / n;
    let _ = write!(out, r#"<line x1="{PAD}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="black"/>"#, sy(0.0), W - PAD);
    for (i, (&m, &s)) in mean.iter().zip(std).enumerate() {
        let x = PAD + i as f64 * bw;
        let cx = x + 0.5 * bw;
        let (top, bottom) = (sy(m.max(0.0)), sy(m.min(0.0)));
        let _ = write!(
            out,
            r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x + 0.15 * bw,
            0.7 * bw,
            (bottom - top).max(0.5),
            COLORS[0],
        );
        let _ = write!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/><text x="{cx:.2}" y="{}" text-anchor="middle">{i}</text>"#,
            sy(m - s),
            sy(m + s),
            H - PAD + 16.0,
        );
    }
    let _ = write!(out, r#"<text x="{}" y="{}" text-anchor="middle">logit index</text>"#, W / 2.0, H - 12.0);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_well_formed_enough() {
        let s = line_chart(
            "a<b",
            "t",
            "acc",
            &[Series {
                name: "x".into(),
                points: vec![(1.0, 0.5, 0.1), (2.0, 0.7, 0.0)],
            }],
            0.0,
            1.0,
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>") && s.contains("a&lt;b"));
        let h = heatmap("h", &[vec![0.5, 0.5], vec![1.0, 0.0]]);
        assert_eq!(h.matches("<rect x=").count(), 4);
        let b = bar_chart("b", &[1.0, -2.0], &[0.5, 0.1]);
        assert!(b.contains("</svg>"));
    }
}
