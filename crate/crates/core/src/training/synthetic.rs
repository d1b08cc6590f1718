//! Deterministic synthetic matting corpus.
//!
//! Each sample composites one to three smooth blobs (a thresholded sum of
//! Gaussian bumps) over a two-tone striped background. The alpha matte is a
//! sigmoid of the signed distance to the blob boundary; the trimap marks
//! `alpha == 1` as foreground, `alpha == 0` as background and dilates the
//! fractional band by two pixels into both.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{dilate, squared_distance_to_sites};
use crate::types::{AlphaMatte, BinaryMask, Image, LabelClass, Raster, Rgb, Trimap};

/// Alpha at or above this is treated as opaque.
pub const OPAQUE: f32 = 0.995;
/// Alpha at or below this is treated as transparent.
pub const TRANSPARENT: f32 = 0.005;
/// Dilation of the fractional-alpha band when building trimaps.
pub const UNKNOWN_DILATION: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub image: Image,
    pub gt_alpha: AlphaMatte,
    pub gt_trimap: Trimap,
}

/// Trimap from an alpha matte: foreground where `alpha >= OPAQUE`, background
/// where `alpha <= TRANSPARENT`, unknown elsewhere, with unknown dilated by
/// `dilation` pixels.
pub fn trimap_from_alpha(alpha: &AlphaMatte, dilation: f64) -> Trimap {
    let partial: BinaryMask = alpha.map(|&a| a > TRANSPARENT && a < OPAQUE);
    let unknown = dilate(&partial, dilation);
    alpha.zip_map(&unknown, |&a, &u| {
        if u {
            LabelClass::Unknown
        } else if a >= OPAQUE {
            LabelClass::Foreground
        } else {
            LabelClass::Background
        }
    })
    .expect("same dims")
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |s, &p| mix_seed(s, p))
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
}

fn color_dist(a: &Rgb, b: &Rgb) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

pub fn generate_sample(seed: u64, index: usize, size: usize) -> Result<SyntheticSample> {
    if size < 32 {
        return Err(Error::InvalidConfig(format!("synthetic size must be >= 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
    let s = size as f64;

    // background: two colors blended along a sinusoidal stripe pattern
    let c1 = random_color(&mut rng);
    let c2 = random_color(&mut rng);
    let theta = rng.random_range(0.0..PI);
    let freq = rng.random_range(0.02..0.08);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (ct, st) = (theta.cos(), theta.sin());
    let background = Raster::from_fn(size, size, |x, y| {
        let t = 0.5 + 0.5 * (2.0 * PI * freq * (x as f64 * ct + y as f64 * st) + phase).sin();
        let t = t as f32;
        [0, 1, 2].map(|k| c1[k] * t + c2[k] * (1.0 - t))
    });

    let bg_mean: Rgb = [0, 1, 2].map(|k| 0.5 * (c1[k] + c2[k]));
    let mut fg = random_color(&mut rng);
    for _ in 0..16 {
        if color_dist(&fg, &bg_mean) > 0.35 {
            break;
        }
        fg = random_color(&mut rng);
    }
    let shade_dir = rng.random_range(0.0..2.0 * PI);
    let foreground = Raster::from_fn(size, size, |x, y| {
        let u = ((x as f64 - s / 2.0) * shade_dir.cos() + (y as f64 - s / 2.0) * shade_dir.sin()) / s;
        let k = (1.0 + 0.2 * u) as f32;
        fg.map(|c| (c * k).clamp(0.0, 1.0))
    });

    // blobs: thresholded sum of Gaussian bumps
    let blobs = rng.random_range(1..=3);
    let mut bumps = Vec::new();
    for _ in 0..blobs {
        let cx = rng.random_range(0.25 * s..0.75 * s);
        let cy = rng.random_range(0.25 * s..0.75 * s);
        let count = rng.random_range(2..=4);
        for b in 0..count {
            let (ox, oy) = if b == 0 {
                (0.0, 0.0)
            } else {
                (rng.random_range(-s / 8.0..s / 8.0), rng.random_range(-s / 8.0..s / 8.0))
            };
            let sigma = rng.random_range(s / 14.0..s / 8.0);
            let amp = rng.random_range(0.6..1.0);
            bumps.push((cx + ox, cy + oy, sigma, amp));
        }
    }
    let inside: BinaryMask = Raster::from_fn(size, size, |x, y| {
        let f: f64 = bumps
            .iter()
            .map(|&(bx, by, sigma, amp)| {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                amp * (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum();
        f > 0.5
    });

    // signed distance to the boundary, half a pixel off each side
    let outside = inside.map(|&b| !b);
    let to_outside = squared_distance_to_sites(&outside, false);
    let to_inside = squared_distance_to_sites(&inside, false);
    let band = rng.random_range(2.0..6.0);
    let slope = 2.0 * (f64::from(OPAQUE) / f64::from(TRANSPARENT)).ln() / band;
    let gt_alpha: AlphaMatte = Raster::from_fn(size, size, |x, y| {
        let i = y * size + x;
        let sd = if *inside.get(x, y) {
            (to_outside.data()[i] as f64).sqrt() - 0.5
        } else {
            0.5 - (to_inside.data()[i] as f64).sqrt()
        };
        let a = (1.0 / (1.0 + (-slope * sd).exp())) as f32;
        if a >= OPAQUE {
            1.0
        } else if a <= TRANSPARENT {
            0.0
        } else {
            a
        }
    });
    let gt_trimap = trimap_from_alpha(&gt_alpha, UNKNOWN_DILATION);

    let image = Raster::from_fn(size, size, |x, y| {
        let a = *gt_alpha.get(x, y);
        let f = foreground.get(x, y);
        let b = background.get(x, y);
        [0, 1, 2].map(|k| (a * f[k] + (1.0 - a) * b[k]).clamp(0.0, 1.0))
    });

    Ok(SyntheticSample {
        id: format!("syn_{seed}_{index:05}"),
        image,
        gt_alpha,
        gt_trimap,
    })
}

/// `n` samples of `size x size` pixels; sample `i` depends only on
/// `(seed, i, size)`.
pub fn generate_synthetic(seed: u64, n: usize, size: usize) -> Result<Vec<SyntheticSample>> {
    (0..n).map(|i| generate_sample(seed, i, size)).collect()
}

/// Unknown covers every fractional pixel, foreground is opaque, background
/// is transparent.
pub fn check_sample_invariants(s: &SyntheticSample) -> Result<()> {
    s.image.ensure_same_dims(&s.gt_alpha)?;
    s.image.ensure_same_dims(&s.gt_trimap)?;
    for (x, y, &a) in s.gt_alpha.enumerate() {
        let label = *s.gt_trimap.get(x, y);
        let ok = match label {
            LabelClass::Foreground => a == 1.0,
            LabelClass::Background => a == 0.0,
            LabelClass::Unknown => (0.0..=1.0).contains(&a),
        };
        if !ok {
            return Err(Error::OutOfRange(format!(
                "{}: pixel ({x}, {y}) has alpha {a} but label {label}",
                s.id
            )));
        }
    }
    Ok(())
}
