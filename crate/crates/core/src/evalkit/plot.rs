//! Minimal raster charts written as PNG.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::font::GLYPHS;
use super::DomainDistanceReport;
use crate::error::{PldgError, Result};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([214, 39, 40]),
    Rgb([44, 160, 44]),
    Rgb([255, 127, 14]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    left: i64,
    top: i64,
    width: i64,
    height: i64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> i64 {
        self.left + ((x - self.x.0) / (self.x.1 - self.x.0) * self.width as f64).round() as i64
    }

    fn py(&self, y: f64) -> i64 {
        self.top + self.height
            - ((y - self.y.0) / (self.y.1 - self.y.0) * self.height as f64).round() as i64
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        for x in x0.min(x1)..=x0.max(x1) {
            put(img, x, y, c);
        }
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>, thick: i64) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        fill_rect(img, x - thick / 2, y - thick / 2, x + (thick - 1) / 2, y + (thick - 1) / 2, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Width in pixels of `text` at the given scale.
fn text_width(text: &str, scale: i64) -> i64 {
    text.chars().count() as i64 * 6 * scale
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
    for (k, ch) in s.chars().enumerate() {
        let up = ch.to_ascii_uppercase();
        let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == up) else {
            continue;
        };
        let ox = x + k as i64 * 6 * scale;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..5 {
                if bits & (0x10 >> col) != 0 {
                    let px = ox + col * scale;
                    let py = y + r as i64 * scale;
                    fill_rect(img, px, py, px + scale - 1, py + scale - 1, c);
                }
            }
        }
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.08;
    (lo - pad, hi + pad)
}

fn axes(img: &mut RgbImage, f: &Frame, title: &str, x_label: &str, y_label: &str, x_ticks: &[f64]) {
    for k in 0..=4 {
        let v = f.y.0 + (f.y.1 - f.y.0) * k as f64 / 4.0;
        let y = f.py(v);
        line(img, (f.left, y), (f.left + f.width, y), GRID, 1);
        let label = fmt_tick(v);
        text(img, f.left - 8 - text_width(&label, 1), y - 3, &label, 1, BLACK);
    }
    for &t in x_ticks {
        let x = f.px(t);
        line(img, (x, f.top + f.height), (x, f.top + f.height + 4), BLACK, 1);
        let label = fmt_tick(t);
        text(img, x - text_width(&label, 1) / 2, f.top + f.height + 8, &label, 1, BLACK);
    }
    line(img, (f.left, f.top), (f.left, f.top + f.height), BLACK, 1);
    line(img, (f.left, f.top + f.height), (f.left + f.width, f.top + f.height), BLACK, 1);
    text(img, f.left + f.width / 2 - text_width(title, 2) / 2, 10, title, 2, BLACK);
    text(
        img,
        f.left + f.width / 2 - text_width(x_label, 1) / 2,
        f.top + f.height + 24,
        x_label,
        1,
        BLACK,
    );
    text(img, 6, f.top - 14, y_label, 1, BLACK);
}

/// Line chart with one polyline per series and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<RgbImage> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(PldgError::Argument("nothing to plot".into()));
    }
    let mut img = RgbImage::from_pixel(640, 420, WHITE);
    let f = Frame {
        left: 70,
        top: 50,
        width: 540,
        height: 310,
        x: padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        y: padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    let mut ticks: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    axes(&mut img, &f, title, x_label, y_label, &ticks);
    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let pts: Vec<(i64, i64)> = s.points.iter().map(|&(x, y)| (f.px(x), f.py(y))).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], c, 2);
        }
        for &(x, y) in &pts {
            fill_rect(&mut img, x - 3, y - 3, x + 3, y + 3, c);
        }
        let ly = f.top + 8 + k as i64 * 14;
        fill_rect(&mut img, f.left + 10, ly, f.left + 22, ly + 6, c);
        text(&mut img, f.left + 28, ly, &s.name, 1, BLACK);
    }
    Ok(img)
}

fn bar_panel(img: &mut RgbImage, f: &Frame, title: &str, values: &[f64], color: Rgb<u8>) {
    let ticks: Vec<f64> = (0..values.len()).map(|d| d as f64).collect();
    axes(img, f, "", "pseudo-domain", title, &ticks);
    let half = (f.width as f64 / (values.len() as f64 + 1.0) * 0.35) as i64;
    for (d, &v) in values.iter().enumerate() {
        let x = f.px(d as f64);
        fill_rect(img, x - half, f.py(v), x + half, f.py(f.y.0.max(0.0)), color);
    }
}

/// Side-by-side bars of per-domain distance and mean adapter weight.
pub fn bar_pair(report: &DomainDistanceReport) -> Result<RgbImage> {
    if report.rows.is_empty() {
        return Err(PldgError::Argument("empty distance report".into()));
    }
    let mut img = RgbImage::from_pixel(900, 420, WHITE);
    let n = report.rows.len() as f64;
    let dist: Vec<f64> = report.rows.iter().map(|r| r.frechet).collect();
    let weight: Vec<f64> = report.rows.iter().map(|r| r.mean_weight).collect();
    let top = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max).max(1e-12) * 1.1;
    let left = Frame {
        left: 70,
        top: 60,
        width: 340,
        height: 290,
        x: (-0.75, n - 0.25),
        y: (0.0, top(&dist)),
    };
    let right = Frame {
        left: 520,
        top: 60,
        width: 340,
        height: 290,
        x: (-0.75, n - 0.25),
        y: (0.0, top(&weight)),
    };
    bar_panel(&mut img, &left, "frechet distance", &dist, PALETTE[0]);
    bar_panel(&mut img, &right, "mean weight", &weight, PALETTE[1]);
    let title = match report.spearman {
        Some(r) => format!("distance vs weight, spearman {r:.2}"),
        None => "distance vs weight".to_string(),
    };
    text(&mut img, 450 - text_width(&title, 2) / 2, 12, &title, 2, BLACK);
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| PldgError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
