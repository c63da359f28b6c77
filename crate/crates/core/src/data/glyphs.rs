//! Procedural glyph classes: tiny single-channel images that exercise the
//! convolutional path without any external dataset.
//!
//! Each class owns a fixed random stroke skeleton; each instance renders
//! that skeleton under a small random translation and rotation, plus pixel
//! noise, clamped to [0, 1]. Rendering runs in f64 and casts at the end.

use super::{ClassPool, ClassRecord, Provenance, Split};
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GlyphJitter {
    /// Max translation in pixels (uniform in both axes).
    pub translate_px: f64,
    /// Max rotation about the glyph center, degrees.
    pub rotate_deg: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl GlyphJitter {
    /// Default augmentation: translation up to size/8 px, rotation up to
    /// 15 degrees, noise sigma 0.05.
    pub fn standard(size: usize) -> Self {
        GlyphJitter {
            translate_px: size as f64 / 8.0,
            rotate_deg: 15.0,
            noise: 0.05,
        }
    }

    /// No augmentation: every instance of a class renders identically.
    pub fn none() -> Self {
        GlyphJitter {
            translate_px: 0.0,
            rotate_deg: 0.0,
            noise: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GlyphParams {
    pub classes: usize,
    pub per_class: usize,
    /// Image side in pixels; must be a multiple of 4 and at least 20 so
    /// four pooling stages keep at least one pixel.
    pub size: usize,
    pub jitter: GlyphJitter,
}

struct Stroke {
    a: (f64, f64),
    b: (f64, f64),
}

/// Half-width of a stroke and the soft edge, in glyph (unit) coordinates.
const STROKE_THICKNESS: f64 = 0.055;
const STROKE_SOFTNESS: f64 = 0.035;

pub fn generate_glyph_pool<T: Scalar>(
    params: &GlyphParams,
    split: Split,
    rng: &mut Stream,
) -> ClassPool<T> {
    assert!(params.classes >= 1 && params.per_class >= 1);
    assert!(
        params.size % 4 == 0 && params.size >= 20,
        "glyph size must be a multiple of 4 and at least 20"
    );
    let classes = (0..params.classes)
        .map(|c| {
            let skeleton = random_skeleton(rng);
            let instances = (0..params.per_class)
                .map(|_| render_instance::<T>(&skeleton, params, rng))
                .collect();
            ClassRecord {
                id: format!("glyph-{}-{c:03}", split.name()),
                instances,
            }
        })
        .collect();
    ClassPool {
        split,
        provenance: Provenance::SyntheticGlyphs,
        classes,
    }
}

fn random_skeleton(rng: &mut Stream) -> Vec<Stroke> {
    let count = 3 + (rng::uniform(rng) * 3.0) as usize; // 3..=5
    (0..count)
        .map(|_| Stroke {
            a: (rng::uniform_in(rng, 0.15, 0.85), rng::uniform_in(rng, 0.15, 0.85)),
            b: (rng::uniform_in(rng, 0.15, 0.85), rng::uniform_in(rng, 0.15, 0.85)),
        })
        .collect()
}

fn render_instance<T: Scalar>(
    skeleton: &[Stroke],
    params: &GlyphParams,
    rng: &mut Stream,
) -> Tensor<T> {
    let size = params.size;
    let j = &params.jitter;
    let tx = rng::uniform_in(rng, -j.translate_px, j.translate_px) / size as f64;
    let ty = rng::uniform_in(rng, -j.translate_px, j.translate_px) / size as f64;
    let theta = rng::uniform_in(rng, -j.rotate_deg, j.rotate_deg).to_radians();
    let (sin, cos) = theta.sin_cos();

    let mut pixels = vec![0.0f64; size * size];
    for r in 0..size {
        for c in 0..size {
            // Map the pixel back into skeleton coordinates: undo the
            // translation, then the rotation about the glyph center.
            let x = (c as f64 + 0.5) / size as f64 - 0.5 - tx;
            let y = (r as f64 + 0.5) / size as f64 - 0.5 - ty;
            let u = cos * x + sin * y + 0.5;
            let v = -sin * x + cos * y + 0.5;
            let mut ink: f64 = 0.0;
            for s in skeleton {
                let d = segment_distance((u, v), s);
                let value = ((STROKE_THICKNESS - d) / STROKE_SOFTNESS + 1.0).clamp(0.0, 1.0);
                ink = ink.max(value);
            }
            pixels[r * size + c] = ink;
        }
    }
    if j.noise > 0.0 {
        for p in pixels.iter_mut() {
            *p += j.noise * rng::normal(rng);
        }
    }
    Tensor::from_fn(&[size, size, 1], |i| T::from_f64(pixels[i].clamp(0.0, 1.0)))
}

fn segment_distance(p: (f64, f64), s: &Stroke) -> f64 {
    let (px, py) = p;
    let (ax, ay) = s.a;
    let (bx, by) = s.b;
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}


#[cfg(test)]
use rand::Rng;
