//! Minimal static SVG output: line plots with error bars and image tiles.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

pub struct Series {
    pub name: String,
    /// `(x, y, half-height of the error bar)`.
    pub points: Vec<(f64, f64, f64)>,
    pub dashed: bool,
}

pub struct LinePlot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|f| f * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

impl LinePlot<'_> {
    pub fn render(&self) -> String {
        let (w, h) = (640.0, 420.0);
        let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let (mut x0, mut x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(tx(p.0)), b.max(tx(p.0))));
        let (mut y0, mut y1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1 - p.2), b.max(p.1 + p.2))
        });
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        let pad = ((y1 - y0) * 0.08).max(1e-3);
        y0 -= pad;
        y1 += pad;
        let pw = w - left - right;
        let ph = h - top - bottom;
        let sx = |x: f64| left + (tx(x) - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(self.title));
        let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in nice_ticks(y0, y1, 6) {
            let y = sy(t);
            let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + pw);
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{t:.3}</text>"#, left - 6.0, y + 4.0);
        }
        let mut xs: Vec<f64> = pts().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        for x in xs {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, sx(x), top + ph + 16.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            top + ph / 2.0,
            escape(self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let path: Vec<String> = series.points.iter().map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#, path.join(" "));
            for p in &series.points {
                let (x, y) = (sx(p.0), sy(p.1));
                let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{color}"/>"#);
                if p.2 > 0.0 {
                    let _ = writeln!(s, r#"<line x1="{x:.1}" x2="{x:.1}" y1="{:.1}" y2="{:.1}" stroke="{color}"/>"#, sy(p.1 - p.2), sy(p.1 + p.2));
                }
            }
            let ly = top + 10.0 + 18.0 * i as f64;
            let lx = left + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 20.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// A labeled `rows x cols` image in row-major order.
pub struct Tile {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Tiles laid out `per_row` across. Grayscale tiles are scaled to their own
/// min/max; diverging tiles map ±max|v| to blue/red with white at zero.
pub fn tile_grid(title: &str, tiles: &[Tile], per_row: usize, diverging: bool) -> String {
    let cell = 96.0;
    let gap = 22.0;
    let per_row = per_row.max(1);
    let nrow = tiles.len().div_ceil(per_row);
    let w = per_row as f64 * (cell + 8.0) + 8.0;
    let h = 30.0 + nrow as f64 * (cell + gap) + 4.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    for (k, tile) in tiles.iter().enumerate() {
        let ox = 8.0 + (k % per_row) as f64 * (cell + 8.0);
        let oy = 30.0 + (k / per_row) as f64 * (cell + gap);
        let px = cell / tile.cols.max(tile.rows) as f64;
        let lo = tile.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tile.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let amp = lo.abs().max(hi.abs()).max(1e-300);
        for i in 0..tile.rows {
            for j in 0..tile.cols {
                let v = tile.values[i * tile.cols + j];
                let fill = if diverging {
                    let a = (v / amp).clamp(-1.0, 1.0);
                    let fade = (255.0 * (1.0 - a.abs())).round() as u8;
                    if a >= 0.0 {
                        format!("rgb(255,{fade},{fade})")
                    } else {
                        format!("rgb({fade},{fade},255)")
                    }
                } else {
                    let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 };
                    format!("rgb({g},{g},{g})")
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    ox + j as f64 * px,
                    oy + i as f64 * px,
                    px + 0.05,
                    px + 0.05
                );
            }
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ox + cell / 2.0, oy + cell + 13.0, escape(&tile.label));
    }
    s.push_str("</svg>\n");
    s
}
