//! Procedural lesion images and the artifacts planted on top of them.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::trap::Artifact;
use crate::util::Rng;

/// A float RGB canvas with interleaved channels.
pub(crate) struct Canvas {
    pub size: usize,
    pub px: Vec<f32>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, color: [f32; 3], alpha: f32) {
        let i = (y * self.size + x) * 3;
        for c in 0..3 {
            self.px[i + c] = self.px[i + c] * (1.0 - alpha) + color[c] * alpha;
        }
    }

    /// Quantizes to 8-bit levels and clamps, so the image survives a PNG round trip exactly.
    pub fn finish(mut self) -> Vec<f32> {
        for p in &mut self.px {
            *p = (p.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        self.px
    }
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Skin-like textured background plus the class pattern: a filled blob for
/// even classes, a ring for odd classes. Larger class ids shrink the pattern.
pub(crate) fn render_lesion(size: usize, class: usize, rng: &mut Rng) -> Canvas {
    let s = size as f32;
    let jitter = |rng: &mut Rng, w: f32| rng.random_range(-w..w);
    let base = [
        0.86 + jitter(rng, 0.04),
        0.66 + jitter(rng, 0.04),
        0.56 + jitter(rng, 0.04),
    ];
    let noise = Normal::new(0.0f32, 0.03).expect("finite std");
    let mut px = Vec::with_capacity(size * size * 3);
    for _ in 0..size * size {
        let n = noise.sample(rng);
        for b in base {
            px.push(b + n);
        }
    }
    let mut canvas = Canvas { size, px };

    let lesion = [
        0.42 + jitter(rng, 0.05),
        0.26 + jitter(rng, 0.04),
        0.19 + jitter(rng, 0.04),
    ];
    let level = (class / 2) as f32;
    let outer = s * (0.30 - 0.04 * level) + jitter(rng, s * 0.03);
    let thickness = (s * 0.11).max(1.6);
    let ring = class % 2 == 1;
    let cx = s / 2.0 + jitter(rng, s * 0.1);
    let cy = s / 2.0 + jitter(rng, s * 0.1);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            let r = (dx * dx + dy * dy).sqrt();
            let inside = 1.0 - smoothstep(outer - 0.75, outer + 0.75, r);
            let cover = if ring {
                inside * smoothstep(outer - thickness - 0.75, outer - thickness + 0.75, r)
            } else {
                inside
            };
            if cover > 0.0 {
                canvas.blend(x, y, lesion, 0.9 * cover);
            }
        }
    }
    canvas
}

fn corner_patch(c: &mut Canvas, rng: &mut Rng) {
    let s = c.size as f32;
    let radius = s * rng.random_range(0.38..0.46);
    let corner = rng.random_range(0..4);
    let (ox, oy) = match corner {
        0 => (0.0, 0.0),
        1 => (s, 0.0),
        2 => (0.0, s),
        _ => (s, s),
    };
    let color = [0.07, 0.06, 0.06];
    for y in 0..c.size {
        for x in 0..c.size {
            let dx = x as f32 + 0.5 - ox;
            let dy = y as f32 + 0.5 - oy;
            let r = (dx * dx + dy * dy).sqrt();
            let a = 1.0 - smoothstep(radius - 0.75, radius + 0.75, r);
            if a > 0.0 {
                c.blend(x, y, color, 0.92 * a);
            }
        }
    }
}

fn stripe_ruler(c: &mut Canvas, rng: &mut Rng) {
    let size = c.size;
    let band = ((size as f32) * 0.22).round().max(3.0) as usize;
    let horizontal = rng.random_bool(0.5);
    let far_side = rng.random_bool(0.5);
    let start = if far_side { size - band } else { 0 };
    let color = [0.12, 0.12, 0.14];
    let period = 2 + size / 32;
    for i in start..start + band {
        for j in 0..size {
            let (x, y) = if horizontal { (j, i) } else { (i, j) };
            // ticks run across the band, a solid edge line marks its inner side
            let on_tick = j % period == 0;
            let edge = if far_side { i == start } else { i == start + band - 1 };
            let a = if edge || on_tick { 0.85 } else { 0.25 };
            c.blend(x, y, color, a);
        }
    }
}

fn color_tint(c: &mut Canvas, rng: &mut Rng) {
    let gain = [
        0.62 + rng.random_range(-0.03..0.03),
        0.88 + rng.random_range(-0.03..0.03),
        1.30 + rng.random_range(-0.03..0.03),
    ];
    for px in c.px.chunks_mut(3) {
        for ch in 0..3 {
            px[ch] = (px[ch] * gain[ch]).min(1.0);
        }
    }
}

fn curve_hair(c: &mut Canvas, rng: &mut Rng) {
    let s = c.size as f32;
    let strokes = rng.random_range(2..4);
    let color = [0.09, 0.07, 0.06];
    let width = (s / 32.0).max(0.55);
    for _ in 0..strokes {
        let pts: Vec<(f32, f32)> = (0..4)
            .map(|_| (rng.random_range(-0.1 * s..1.1 * s), rng.random_range(-0.1 * s..1.1 * s)))
            .collect();
        let steps = (c.size * 8).max(64);
        let mut hit = vec![0.0f32; c.size * c.size];
        for k in 0..=steps {
            let t = k as f32 / steps as f32;
            let u = 1.0 - t;
            let bx = u * u * u * pts[0].0
                + 3.0 * u * u * t * pts[1].0
                + 3.0 * u * t * t * pts[2].0
                + t * t * t * pts[3].0;
            let by = u * u * u * pts[0].1
                + 3.0 * u * u * t * pts[1].1
                + 3.0 * u * t * t * pts[2].1
                + t * t * t * pts[3].1;
            let x0 = (bx - 2.0).floor().max(0.0) as usize;
            let y0 = (by - 2.0).floor().max(0.0) as usize;
            for y in y0..((by + 2.0).ceil().max(0.0) as usize).min(c.size) {
                for x in x0..((bx + 2.0).ceil().max(0.0) as usize).min(c.size) {
                    let d = ((x as f32 + 0.5 - bx).powi(2) + (y as f32 + 0.5 - by).powi(2)).sqrt();
                    let a = 1.0 - smoothstep(width - 0.5, width + 0.5, d);
                    let slot = &mut hit[y * c.size + x];
                    *slot = slot.max(a);
                }
            }
        }
        for (i, &a) in hit.iter().enumerate() {
            if a > 0.0 {
                c.blend(i % c.size, i / c.size, color, 0.9 * a);
            }
        }
    }
}

pub(crate) fn apply_artifact(c: &mut Canvas, artifact: Artifact, rng: &mut Rng) {
    match artifact {
        Artifact::CornerPatch => corner_patch(c, rng),
        Artifact::StripeRuler => stripe_ruler(c, rng),
        Artifact::ColorTint => color_tint(c, rng),
        Artifact::CurveHair => curve_hair(c, rng),
    }
}

/// Renders one synthetic image: class pattern plus an optional artifact.
pub fn render_artifact(size: usize, class: usize, artifact: Option<Artifact>, rng: &mut Rng) -> Vec<f32> {
    let mut canvas = render_lesion(size, class, rng);
    if let Some(a) = artifact {
        apply_artifact(&mut canvas, a, rng);
    }
    canvas.finish()
}
