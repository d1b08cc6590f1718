//! Compositing, a trimap-guided alpha baseline and matting metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::geodesic_distance;
use crate::types::{trimap_to_mask, AlphaMatte, Image, LabelClass, Raster, Rgb, Trimap};

/// Edge weight of the geodesic distances used by [`estimate_alpha`].
pub const ALPHA_LAMBDA: f64 = 4.0;

/// `I = alpha * F + (1 - alpha) * B` for one pixel.
pub fn composite_pixel(f: [f64; 3], b: [f64; 3], alpha: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| alpha * f[k] + (1.0 - alpha) * b[k])
}

/// Least-squares alpha of one composited pixel; 0 when `f == b`.
pub fn decompose_pixel(i: [f64; 3], f: [f64; 3], b: [f64; 3]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..3 {
        let d = f[k] - b[k];
        num += (i[k] - b[k]) * d;
        den += d * d;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn widen(p: &Rgb) -> [f64; 3] {
    p.map(f64::from)
}

/// [`composite_pixel`] over whole images.
pub fn composite(f: &Image, b: &Image, alpha: &AlphaMatte) -> Result<Image> {
    f.ensure_same_dims(b)?;
    f.ensure_same_dims(alpha)?;
    let (w, h) = f.dims();
    let data = f
        .data()
        .iter()
        .zip(b.data())
        .zip(alpha.data())
        .map(|((fp, bp), &a)| composite_pixel(widen(fp), widen(bp), a.into()).map(|v| v as f32))
        .collect();
    Raster::from_vec(w, h, data)
}

/// [`decompose_pixel`] over whole images.
pub fn decompose_alpha(composite: &Image, f: &Image, b: &Image) -> Result<AlphaMatte> {
    composite.ensure_same_dims(f)?;
    composite.ensure_same_dims(b)?;
    let (w, h) = f.dims();
    let data = composite
        .data()
        .iter()
        .zip(f.data())
        .zip(b.data())
        .map(|((ip, fp), bp)| decompose_pixel(widen(ip), widen(fp), widen(bp)) as f32)
        .collect();
    Raster::from_vec(w, h, data)
}

/// Alpha from a trimap: 1 on foreground, 0 on background, and inside the
/// unknown region the geodesic ratio `g_B / (g_F + g_B)`. Without any
/// foreground pixel the unknown region is 0; without background it is 1.
pub fn estimate_alpha(img: &Image, t: &Trimap) -> Result<AlphaMatte> {
    img.ensure_same_dims(t)?;
    let fg = trimap_to_mask(t, LabelClass::Foreground);
    let bg = trimap_to_mask(t, LabelClass::Background);
    let has_unknown = t.data().contains(&LabelClass::Unknown);
    let has_fg = fg.data().contains(&true);
    let has_bg = bg.data().contains(&true);

    let (g_f, g_b) = if has_unknown && has_fg && has_bg {
        (
            Some(geodesic_distance(img, &fg, ALPHA_LAMBDA)?),
            Some(geodesic_distance(img, &bg, ALPHA_LAMBDA)?),
        )
    } else {
        (None, None)
    };

    Ok(Raster::from_fn(t.width(), t.height(), |x, y| match *t.get(x, y) {
        LabelClass::Foreground => 1.0,
        LabelClass::Background => 0.0,
        LabelClass::Unknown => match (&g_f, &g_b) {
            (Some(gf), Some(gb)) => {
                let (df, db) = (*gf.get(x, y), *gb.get(x, y));
                ((db / (df + db)) as f32).clamp(0.0, 1.0)
            }
            _ if !has_fg => 0.0,
            _ => 1.0,
        },
    }))
}

/// Whole-image matting metrics. `mse` is scaled by 1e3 and `sad` by 1e-3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub sad: f64,
    pub mad: f64,
    /// Fraction of mislabeled trimap pixels, when trimaps were supplied.
    pub pixel_err: Option<f64>,
}

impl MetricReport {
    /// Field-wise minimum.
    pub fn min(&self, other: &MetricReport) -> MetricReport {
        MetricReport {
            mse: self.mse.min(other.mse),
            sad: self.sad.min(other.sad),
            mad: self.mad.min(other.mad),
            pixel_err: match (self.pixel_err, other.pixel_err) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
        }
    }

    /// Field-wise arithmetic mean; `None` for an empty slice.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let pix: Vec<f64> = reports.iter().filter_map(|r| r.pixel_err).collect();
        Some(MetricReport {
            mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
            sad: reports.iter().map(|r| r.sad).sum::<f64>() / n,
            mad: reports.iter().map(|r| r.mad).sum::<f64>() / n,
            pixel_err: (pix.len() == reports.len()).then(|| pix.iter().sum::<f64>() / n),
        })
    }
}

pub fn pixel_error(pred: &Trimap, gt: &Trimap) -> Result<f64> {
    pred.ensure_same_dims(gt)?;
    let wrong = pred.data().iter().zip(gt.data()).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / pred.len() as f64)
}

pub fn compute_metrics(
    pred_alpha: &AlphaMatte,
    gt_alpha: &AlphaMatte,
    pred_trimap: Option<&Trimap>,
    gt_trimap: Option<&Trimap>,
) -> Result<MetricReport> {
    pred_alpha.ensure_same_dims(gt_alpha)?;
    let n = pred_alpha.len() as f64;
    let mut sq = 0.0f64;
    let mut abs = 0.0f64;
    for (&p, &g) in pred_alpha.data().iter().zip(gt_alpha.data()) {
        let d = p as f64 - g as f64;
        sq += d * d;
        abs += d.abs();
    }
    let pixel_err = match (pred_trimap, gt_trimap) {
        (Some(p), Some(g)) => {
            pred_alpha.ensure_same_dims(p)?;
            Some(pixel_error(p, g)?)
        }
        (None, None) => None,
        _ => {
            return Err(Error::InvalidConfig(
                "pixel error needs both a predicted and a ground-truth trimap".into(),
            ))
        }
    };
    Ok(MetricReport {
        mse: 1e3 * sq / n,
        sad: abs / 1e3,
        mad: abs / n,
        pixel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use LabelClass::*;

    #[test]
    fn composite_endpoints_and_midpoint() {
        let f = Raster::filled(3, 2, [1.0, 1.0, 1.0]);
        let b = Raster::filled(3, 2, [0.0, 0.0, 0.0]);
        assert_eq!(composite(&f, &b, &Raster::filled(3, 2, 1.0)).unwrap(), f);
        assert_eq!(composite(&f, &b, &Raster::filled(3, 2, 0.0)).unwrap(), b);
        let mid = composite(&f, &b, &Raster::filled(3, 2, 0.5)).unwrap();
        assert!(mid.data().iter().all(|p| *p == [0.5; 3]));
        assert!(composite(&f, &Raster::filled(2, 2, [0.0; 3]), &Raster::filled(3, 2, 0.5)).is_err());
    }

    #[test]
    fn decompose_recovers_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Raster::from_fn(8, 8, |_, _| [rng.random(), rng.random(), rng.random()]);
        let b = Raster::from_fn(8, 8, |x, y| {
            let p = f.get(x, y);
            [1.0 - p[0], p[1] * 0.5, 1.0 - p[2]]
        });
        let a = Raster::from_fn(8, 8, |_, _| rng.random::<f32>());
        let i = composite(&f, &b, &a).unwrap();
        let back = decompose_alpha(&i, &f, &b).unwrap();
        for (x, y) in a.data().iter().zip(back.data()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_unknown_gives_binary_alpha() {
        let img = Raster::filled(6, 4, [0.3; 3]);
        let t = Raster::from_fn(6, 4, |x, _| if x < 3 { Foreground } else { Background });
        let a = estimate_alpha(&img, &t).unwrap();
        for (x, y, &v) in a.enumerate() {
            assert_eq!(v, if *t.get(x, y) == Foreground { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn all_background_is_zero() {
        let img = Raster::filled(5, 5, [0.9; 3]);
        let a = estimate_alpha(&img, &Raster::filled(5, 5, Background)).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
        let a = estimate_alpha(&img, &Raster::filled(5, 5, Unknown)).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn band_alpha_decreases_across_uniform_image() {
        // F on x < 10, U on 10..=11, B beyond; geometric midline at x = 10.5
        let img = Raster::filled(22, 5, [0.5; 3]);
        let t = Raster::from_fn(22, 5, |x, _| match x {
            0..=9 => Foreground,
            10 | 11 => Unknown,
            _ => Background,
        });
        let a = estimate_alpha(&img, &t).unwrap();
        for y in 0..5 {
            let row: Vec<f32> = (0..22).map(|x| *a.get(x, y)).collect();
            assert!(row.windows(2).all(|w| w[0] >= w[1]));
            // g_F = 1, g_B = 2 at x = 10; g_F = 2, g_B = 1 at x = 11
            assert!((row[10] - 2.0 / 3.0).abs() < 1e-6);
            assert!((row[11] - 1.0 / 3.0).abs() < 1e-6);
            assert!((0.5 * (row[10] + row[11]) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn metrics_by_hand() {
        let p = Raster::from_vec(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = Raster::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let m = compute_metrics(&p, &g, None, None).unwrap();
        assert!((m.mad - 0.25).abs() < 1e-12);
        assert!((m.mse - 250.0).abs() < 1e-9);
        assert!((m.sad - 0.001).abs() < 1e-15);
        assert_eq!(m.pixel_err, None);
        let back = compute_metrics(&g, &p, None, None).unwrap();
        assert_eq!(m, back);
        let z = compute_metrics(&p, &p, None, None).unwrap();
        assert_eq!((z.mse, z.sad, z.mad), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pixel_error_fraction() {
        let a = Raster::from_vec(2, 2, vec![Foreground, Background, Unknown, Unknown]).unwrap();
        let b = Raster::from_vec(2, 2, vec![Foreground, Unknown, Unknown, Background]).unwrap();
        let alpha = Raster::filled(2, 2, 0.0);
        let m = compute_metrics(&alpha, &alpha, Some(&a), Some(&b)).unwrap();
        assert_eq!(m.pixel_err, Some(0.5));
        assert!(compute_metrics(&alpha, &alpha, Some(&a), None).is_err());
    }
}
