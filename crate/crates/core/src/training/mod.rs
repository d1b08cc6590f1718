//! Iterative click training of the MLP predictor.
//!
//! Each sample gets an initial click at the center of its foreground (or
//! unknown, when there is no foreground), then `k ~ U{0..=max_inner_clicks}`
//! further clicks chosen by the simulation policy against the model's own
//! predictions without gradients. The loss is taken on the final prediction.

mod loss;
mod synthetic;

pub use loss::{nfl_loss, NflOutput, NORMALIZER_FLOOR};
pub(crate) use synthetic::derive_seed;
pub use synthetic::{
    check_sample_invariants, generate_sample, generate_synthetic, trimap_from_alpha, SyntheticSample,
    OPAQUE, TRANSPARENT, UNKNOWN_DILATION,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{csv_string, evaluate, EvalConfig, PredictorChoice};
use crate::predictors::{logits_to_trimap, Frame, MlpPredictor, PredictorInput, DEFAULT_WORKING_RESOLUTION};
use crate::simulation::{collapse_two_class, place, simulate_step_traced, ClickPlacement, Policy, PolicyDecision};
use crate::types::{encode_clicks, trimap_to_mask, Click, LabelClass, Raster, SimulationConfig, Trimap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch (0-based) from which the learning rate is multiplied by `lr_decay`.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay: f64,
    pub max_inner_clicks: usize,
    pub seed: u64,
    pub policy: Policy,
    /// Draw click positions uniformly inside the error region instead of at
    /// its center.
    pub random_clicks: bool,
    /// Thresholds for click simulation; `gamma` is also the loss exponent.
    pub sim: SimulationConfig,
    pub resolution: usize,
    /// Evaluate on the held-out set every this many epochs (0: only after the
    /// last epoch).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            learning_rate: 5e-4,
            lr_decay_epoch: Some(20),
            lr_decay: 0.1,
            max_inner_clicks: 3,
            seed: 0,
            policy: Policy::Cups,
            random_clicks: false,
            sim: SimulationConfig::default(),
            resolution: DEFAULT_WORKING_RESOLUTION,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr_decay must be positive, got {}", self.lr_decay)));
        }
        if self.resolution == 0 {
            return Err(Error::InvalidConfig("resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_epoch {
            Some(e) if epoch >= e => self.learning_rate * self.lr_decay,
            _ => self.learning_rate,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Loss and parameter gradient for one sample.
#[derive(Clone, Debug)]
pub struct SampleGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Clicks in the input of the final, differentiated prediction.
    pub clicks: Vec<Click>,
    pub fallback: bool,
}

fn training_target(sample: &SyntheticSample, policy: Policy) -> Trimap {
    match policy {
        Policy::TwoClass => collapse_two_class(&sample.gt_trimap),
        _ => sample.gt_trimap.clone(),
    }
}

/// Builds the click sequence for one sample and differentiates the loss of the
/// final prediction. All work happens at working resolution.
pub fn iterative_train_step(
    model: &MlpPredictor,
    sample: &SyntheticSample,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampleGradient> {
    let frame = Frame::new(&sample.image, cfg.resolution);
    let gt = frame.trimap_to_working(&training_target(sample, cfg.policy));
    let image = frame.working_image();
    let (w, h) = image.dims();
    let radius = cfg.sim.click_radius;

    let first_class = [LabelClass::Foreground, LabelClass::Unknown]
        .into_iter()
        .find(|&c| gt.data().contains(&c))
        .ok_or(Error::EmptyTarget)?;
    let mask = trimap_to_mask(&gt, first_class);
    let mut clicks = vec![if cfg.random_clicks {
        place(&mask, first_class, 0, &mut ClickPlacement::Uniform(rng))?
    } else {
        place(&mask, first_class, 0, &mut ClickPlacement::Center)?
    }];

    let input_for = |clicks: &[Click], previous: Option<Trimap>| -> Result<PredictorInput> {
        PredictorInput::new(image.clone(), encode_clicks(clicks, w, h, radius)?, previous)
    };

    let inner = rng.random_range(0..=cfg.max_inner_clicks);
    let mut previous: Option<Trimap> = None;
    for _ in 0..inner {
        let features = model.features(&input_for(&clicks, previous.take())?)?;
        let (logits, _) = model.forward(&features);
        let pred = logits_to_trimap(&Raster::from_vec(w, h, logits)?);
        let mut placement = if cfg.random_clicks {
            ClickPlacement::Uniform(&mut *rng)
        } else {
            ClickPlacement::Center
        };
        let (decision, _) = simulate_step_traced(&pred, &gt, &cfg.sim, cfg.policy, clicks.len(), &mut placement)?;
        previous = Some(pred);
        match decision {
            PolicyDecision::Converged => break,
            PolicyDecision::NextClick(c) => clicks.push(c),
        }
    }

    let features = model.features(&input_for(&clicks, previous)?)?;
    let (logits, cache) = model.forward(&features);
    let logits = Raster::from_vec(w, h, logits)?;
    let out = nfl_loss(&logits, &gt, cfg.sim.gamma)?;
    let grad = model.backward(&features, &cache, out.grad.data());
    Ok(SampleGradient {
        loss: out.loss,
        grad,
        clicks,
        fallback: out.fallback,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval_mse_alpha: Option<f64>,
    pub eval_pixel_err: Option<f64>,
    /// Mean clicks used per held-out image.
    pub clicks_to_converge: Option<f64>,
}

pub fn epoch_log_csv(log: &[EpochLog]) -> Result<String> {
    csv_string(log)
}

/// Mini-batch Adam training. Per-sample work runs in parallel with
/// per-sample seeds, and gradients are summed in batch order, so results do
/// not depend on the thread count.
pub fn train(
    model: &mut MlpPredictor,
    samples: &[SyntheticSample],
    held_out: &[SyntheticSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let usable: Vec<usize> = (0..samples.len())
        .filter(|&i| {
            let ok = samples[i].gt_trimap.data().iter().any(|&l| l != LabelClass::Background);
            if !ok {
                log::warn!("skipping {}: no foreground or unknown pixels", samples[i].id);
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Dataset("no usable training samples".into()));
    }
    let mut adam = Adam::new(model.params().len());
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, u64::MAX])));
        let lr = cfg.learning_rate_at(epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<SampleGradient>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, i as u64]));
                    iterative_train_step(model, &samples[i], cfg, &mut rng)
                })
                .collect();
            let mut grad = vec![0.0; model.params().len()];
            for r in results {
                let g = r?;
                loss_sum += g.loss;
                for (a, b) in grad.iter_mut().zip(&g.grad) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(model.params_mut(), &grad, lr);
            if let Some(i) = model.params().iter().position(|p| !p.is_finite()) {
                return Err(Error::NonFiniteParameter(i));
            }
        }

        let last = epoch + 1 == cfg.epochs;
        let do_eval = !held_out.is_empty() && (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0));
        let mut entry = EpochLog {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            eval_mse_alpha: None,
            eval_pixel_err: None,
            clicks_to_converge: None,
        };
        if do_eval {
            let ecfg = EvalConfig {
                policy: cfg.policy,
                sim: cfg.sim,
                resolution: cfg.resolution,
            };
            let run = evaluate("held_out", held_out, &PredictorChoice::Mlp(model.clone()), &ecfg)?;
            entry.eval_mse_alpha = Some(run.summary.mse);
            entry.eval_pixel_err = run.summary.pixel_err;
            entry.clicks_to_converge =
                Some(run.images.iter().map(|i| i.clicks() as f64).sum::<f64>() / run.images.len() as f64);
        }
        log::info!(
            "epoch {epoch}: loss {:.5}{}",
            entry.mean_loss,
            entry.eval_mse_alpha.map(|m| format!(", eval mse {m:.4}")).unwrap_or_default()
        );
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut adam = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam.step(&mut p, &g, 0.05);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_at(19), 5e-4);
        assert!((c.learning_rate_at(20) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn zero_inner_clicks_means_single_click() {
        let data = generate_synthetic(3, 2, 40).unwrap();
        let model = MlpPredictor::init(1);
        let cfg = TrainConfig {
            max_inner_clicks: 0,
            ..quick_cfg()
        };
        for s in &data {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let g = iterative_train_step(&model, s, &cfg, &mut rng).unwrap();
            assert_eq!(g.clicks.len(), 1);
            assert_eq!(g.clicks[0].label, LabelClass::Foreground);
            assert!(g.loss.is_finite());
        }
    }

    #[test]
    fn all_background_sample_is_rejected() {
        let mut s = generate_synthetic(0, 1, 40).unwrap().remove(0);
        s.gt_trimap = Raster::filled(40, 40, LabelClass::Background);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            iterative_train_step(&MlpPredictor::init(0), &s, &quick_cfg(), &mut rng),
            Err(Error::EmptyTarget)
        ));
        let mut m = MlpPredictor::init(0);
        assert!(train(&mut m, &[s], &[], &quick_cfg(), |_| {}).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_synthetic(9, 6, 40).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..quick_cfg()
        };
        let mut a = MlpPredictor::init(2);
        let mut b = MlpPredictor::init(2);
        let la = train(&mut a, &data, &[], &cfg, |_| {}).unwrap();
        let lb = train(&mut b, &data, &[], &cfg, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(epoch_log_csv(&la).unwrap().starts_with(
            "epoch,mean_loss,eval_mse_alpha,eval_pixel_err,clicks_to_converge\n"
        ));
    }
}
