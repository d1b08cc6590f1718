//! Normalized focal loss.
//!
//! With `p` the softmax confidence of the ground-truth class at each pixel,
//!
//! ```text
//! L = sum(-(1 - p)^gamma * ln p) / sum((1 - p)^gamma)
//! ```
//!
//! The normalizer is differentiated along with the numerator.

use crate::error::Result;
use crate::predictors::{softmax, TrimapLogits};
use crate::types::{Raster, Trimap};

/// Below this total focal weight the loss falls back to mean cross-entropy.
pub const NORMALIZER_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct NflOutput {
    pub loss: f64,
    /// dL/dlogits, same shape as the logits.
    pub grad: TrimapLogits,
    /// Set when the focal weights vanished and cross-entropy was used.
    pub fallback: bool,
}

struct PixelTerms {
    probs: [f64; 3],
    log_p: f64,
    one_minus_p: f64,
}

fn pixel_terms(z: &[f64; 3], target: usize) -> PixelTerms {
    let m = z[0].max(z[1]).max(z[2]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp(), (z[2] - m).exp()];
    let sum = e[0] + e[1] + e[2];
    let others: f64 = (0..3).filter(|&k| k != target).map(|k| e[k]).sum();
    PixelTerms {
        probs: softmax(z),
        log_p: (z[target] - m) - sum.ln(),
        one_minus_p: others / sum,
    }
}

pub fn nfl_loss(logits: &TrimapLogits, gt: &Trimap, gamma: f64) -> Result<NflOutput> {
    logits.ensure_same_dims(gt)?;
    let terms: Vec<PixelTerms> = logits
        .data()
        .iter()
        .zip(gt.data())
        .map(|(z, c)| pixel_terms(z, c.index()))
        .collect();
    let n = terms.len() as f64;
    let weights: Vec<f64> = terms.iter().map(|t| t.one_minus_p.powf(gamma)).collect();
    let total_weight: f64 = weights.iter().sum();
    let (w, h) = logits.dims();

    if total_weight < NORMALIZER_FLOOR {
        let loss = -terms.iter().map(|t| t.log_p).sum::<f64>() / n;
        let grad = terms
            .iter()
            .zip(gt.data())
            .map(|(t, c)| {
                let mut g = t.probs;
                g[c.index()] -= 1.0;
                g.map(|v| v / n)
            })
            .collect();
        return Ok(NflOutput {
            loss,
            grad: Raster::from_vec(w, h, grad)?,
            fallback: true,
        });
    }

    let numerator: f64 = terms.iter().zip(&weights).map(|(t, wt)| -wt * t.log_p).sum();
    let loss = numerator / total_weight;

    // dL/dz_k = A * (delta_k - s_k) with A = p * dL/dp
    //         = (gamma q^(gamma-1) p (ln p + L) - q^gamma) / W,  q = 1 - p
    let grad = terms
        .iter()
        .zip(&weights)
        .zip(gt.data())
        .map(|((t, &wt), c)| {
            let q = t.one_minus_p;
            let p = 1.0 - q;
            let dweight = if gamma == 0.0 {
                0.0
            } else if q == 0.0 {
                if gamma == 1.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                gamma * q.powf(gamma - 1.0)
            };
            let a = (dweight * p * (t.log_p + loss) - wt) / total_weight;
            let target = c.index();
            std::array::from_fn(|k| {
                let delta = if k == target { 1.0 } else { 0.0 };
                a * (delta - t.probs[k])
            })
        })
        .collect();
    Ok(NflOutput {
        loss,
        grad: Raster::from_vec(w, h, grad)?,
        fallback: false,
    })
}
