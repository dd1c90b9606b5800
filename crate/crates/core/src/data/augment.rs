use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::util::Rng;

/// Training-time augmentation: flip, crop, rotation and color jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip: bool,
    /// Maximum translation in pixels for the pad-and-crop step.
    pub crop_pad: usize,
    /// Maximum absolute rotation in degrees.
    pub rotate_deg: f32,
    /// Relative strength of brightness/contrast/saturation jitter.
    pub jitter: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            crop_pad: 2,
            rotate_deg: 15.0,
            jitter: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip: false,
            crop_pad: 0,
            rotate_deg: 0.0,
            jitter: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip && self.crop_pad == 0 && self.rotate_deg == 0.0 && self.jitter == 0.0
    }
}

fn sample_bilinear(src: &[f32], size: usize, x: f32, y: f32, out: &mut [f32]) {
    let max = (size - 1) as f32;
    let x = x.clamp(0.0, max);
    let y = y.clamp(0.0, max);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(size - 1), (y0 + 1).min(size - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    for c in 0..3 {
        let p = |xx: usize, yy: usize| src[(yy * size + xx) * 3 + c];
        out[c] = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + p(x1, y0) * fx * (1.0 - fy)
            + p(x0, y1) * (1.0 - fx) * fy
            + p(x1, y1) * fx * fy;
    }
}

/// Returns an augmented copy of a square `size × size × 3` image.
pub fn augment_image(pixels: &[f32], size: usize, cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f32> {
    if cfg.is_identity() {
        return pixels.to_vec();
    }
    let flip = cfg.flip && rng.random_bool(0.5);
    let pad = cfg.crop_pad as i32;
    let (tx, ty) = if pad > 0 {
        (rng.random_range(-pad..=pad) as f32, rng.random_range(-pad..=pad) as f32)
    } else {
        (0.0, 0.0)
    };
    let angle = if cfg.rotate_deg > 0.0 {
        rng.random_range(-cfg.rotate_deg..cfg.rotate_deg).to_radians()
    } else {
        0.0
    };
    let (sin, cos) = angle.sin_cos();
    let centre = (size as f32 - 1.0) / 2.0;
    let mut out = vec![0.0f32; pixels.len()];
    for y in 0..size {
        for x in 0..size {
            // inverse map: output pixel -> source coordinate
            let xo = x as f32 - centre - tx;
            let yo = y as f32 - centre - ty;
            let mut xs = cos * xo + sin * yo + centre;
            let ys = -sin * xo + cos * yo + centre;
            if flip {
                xs = size as f32 - 1.0 - xs;
            }
            let i = (y * size + x) * 3;
            sample_bilinear(pixels, size, xs, ys, &mut out[i..i + 3]);
        }
    }
    if cfg.jitter > 0.0 {
        let j = cfg.jitter;
        let brightness = 1.0 + rng.random_range(-j..j);
        let contrast = 1.0 + rng.random_range(-j..j);
        let saturation = 1.0 + rng.random_range(-j..j);
        let n = (size * size) as f32;
        let mean: f32 = out.iter().sum::<f32>() / (3.0 * n);
        for px in out.chunks_mut(3) {
            let grey = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            for v in px.iter_mut() {
                let mut t = grey + (*v - grey) * saturation;
                t = mean + (t - mean) * contrast;
                *v = (t * brightness).clamp(0.0, 1.0);
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}
