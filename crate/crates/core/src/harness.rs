//! Batch evaluation: iterative click-by-click evaluation with best-over-clicks
//! reporting, per-click curves and threshold sweeps.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matting::{compute_metrics, estimate_alpha, MetricReport};
use crate::predictors::{
    Frame, GeodesicPredictor, MlpPredictor, OraclePredictor, Predictor, DEFAULT_WORKING_RESOLUTION,
};
use crate::simulation::{simulate_step_traced, ClickPlacement, Policy, PolicyDecision, TrajectoryRecord};
use crate::training::SyntheticSample;
use crate::types::{Click, SimulationConfig};

/// Predictor selection for a run. The oracle is instantiated per image from
/// that image's ground truth.
#[derive(Clone, Debug)]
pub enum PredictorChoice {
    Geodesic(GeodesicPredictor),
    Mlp(MlpPredictor),
    Oracle,
}

impl PredictorChoice {
    pub fn id(&self) -> String {
        match self {
            PredictorChoice::Geodesic(p) => p.id(),
            PredictorChoice::Mlp(p) => p.id(),
            PredictorChoice::Oracle => "oracle".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub policy: Policy,
    pub sim: SimulationConfig,
    pub resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Cups,
            sim: SimulationConfig::default(),
            resolution: DEFAULT_WORKING_RESOLUTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRun {
    pub image_id: String,
    /// Metrics after click 1, 2, ...
    pub series: Vec<MetricReport>,
    pub best: MetricReport,
    /// Number of clicks after which the prediction matched the ground truth.
    pub converged_after: Option<usize>,
    pub trajectory: Vec<TrajectoryRecord>,
}

impl ImageRun {
    pub fn clicks(&self) -> usize {
        self.trajectory.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub dataset_id: String,
    pub predictor_id: String,
    pub config: EvalConfig,
    pub images: Vec<ImageRun>,
    /// Mean over images of each image's best-over-clicks metrics.
    pub summary: MetricReport,
    pub skipped: Vec<(String, String)>,
}

fn evaluate_one(sample: &SyntheticSample, choice: &PredictorChoice, cfg: &EvalConfig) -> Result<ImageRun> {
    sample.image.ensure_same_dims(&sample.gt_alpha)?;
    sample.image.ensure_same_dims(&sample.gt_trimap)?;
    let frame = Frame::new(&sample.image, cfg.resolution);
    let oracle;
    let predictor: &dyn Predictor = match choice {
        PredictorChoice::Geodesic(p) => p,
        PredictorChoice::Mlp(p) => p,
        PredictorChoice::Oracle => {
            oracle = OraclePredictor::new(frame.trimap_to_working(&sample.gt_trimap));
            &oracle
        }
    };
    let radius = cfg.sim.click_radius;
    let gt = &sample.gt_trimap;

    let mut clicks: Vec<Click> = Vec::new();
    let mut pred = frame.predict(predictor, &clicks, radius, None)?;
    let mut series = Vec::new();
    let mut trajectory = Vec::new();
    let mut converged_after = None;

    for ordinal in 0..cfg.sim.max_clicks {
        let (decision, summary) =
            simulate_step_traced(&pred, gt, &cfg.sim, cfg.policy, ordinal, &mut ClickPlacement::Center)?;
        let click = match decision {
            PolicyDecision::Converged => {
                converged_after = Some(ordinal);
                break;
            }
            PolicyDecision::NextClick(c) => c,
        };
        trajectory.push(TrajectoryRecord::new(cfg.policy, &click, &summary));
        clicks.push(click);
        pred = frame.predict(predictor, &clicks, radius, Some(&pred))?;
        let alpha = estimate_alpha(&sample.image, &pred)?;
        series.push(compute_metrics(&alpha, &sample.gt_alpha, Some(&pred), Some(gt))?);
    }
    if series.is_empty() {
        // already perfect before any click
        let alpha = estimate_alpha(&sample.image, &pred)?;
        series.push(compute_metrics(&alpha, &sample.gt_alpha, Some(&pred), Some(gt))?);
    }
    if converged_after.is_none() && pred == *gt {
        converged_after = Some(clicks.len());
    }
    let best = series.iter().skip(1).fold(series[0], |acc, m| acc.min(m));
    Ok(ImageRun {
        image_id: sample.id.clone(),
        series,
        best,
        converged_after,
        trajectory,
    })
}

/// Runs the click-by-click protocol on every image. Images are evaluated in
/// parallel; results keep dataset order.
pub fn evaluate(
    dataset_id: &str,
    samples: &[SyntheticSample],
    predictor: &PredictorChoice,
    cfg: &EvalConfig,
) -> Result<EvalRun> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    cfg.sim.validate()?;
    let results: Vec<Result<ImageRun>> = samples
        .par_iter()
        .map(|s| evaluate_one(s, predictor, cfg))
        .collect();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(run) => images.push(run),
            Err(e) => {
                log::warn!("skipping {}: {e}", s.id);
                skipped.push((s.id.clone(), e.to_string()));
            }
        }
    }
    let bests: Vec<MetricReport> = images.iter().map(|r| r.best).collect();
    let summary = MetricReport::mean(&bests)
        .ok_or_else(|| Error::Dataset("every image was skipped".into()))?;
    Ok(EvalRun {
        dataset_id: dataset_id.to_string(),
        predictor_id: predictor.id(),
        config: *cfg,
        images,
        summary,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub click: usize,
    pub mse: f64,
    pub sad: f64,
    pub mad: f64,
    pub pixel_err: Option<f64>,
}

/// Mean metrics after each click; images that stopped early hold their last
/// value.
pub fn curve_report(run: &EvalRun) -> Vec<CurveRow> {
    (1..=run.config.sim.max_clicks)
        .map(|n| {
            let at_n: Vec<MetricReport> = run
                .images
                .iter()
                .map(|img| img.series[n.min(img.series.len()) - 1])
                .collect();
            let m = MetricReport::mean(&at_n).expect("run has images");
            CurveRow {
                click: n,
                mse: m.mse,
                sad: m.sad,
                mad: m.mad,
                pixel_err: m.pixel_err,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" | "alpha_threshold" => Ok(SweepParam::Alpha),
            "beta" | "beta_threshold" => Ok(SweepParam::Beta),
            other => Err(Error::InvalidConfig(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub run: EvalRun,
}

/// One unknown-prioritized evaluation per threshold value.
pub fn sweep(
    dataset_id: &str,
    samples: &[SyntheticSample],
    predictor: &PredictorChoice,
    param: SweepParam,
    values: &[f64],
    base: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let mut cfg = EvalConfig {
                policy: Policy::Cups,
                ..*base
            };
            match param {
                SweepParam::Alpha => cfg.sim.alpha_threshold = value,
                SweepParam::Beta => cfg.sim.beta_threshold = value,
            }
            Ok(SweepRow {
                value,
                run: evaluate(dataset_id, samples, predictor, &cfg)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct MetricRow<'a> {
    image_id: &'a str,
    click_count: Option<usize>,
    mse: f64,
    sad: f64,
    mad: f64,
    pixel_err: Option<f64>,
}

pub(crate) fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn curve_csv(run: &EvalRun) -> Result<String> {
    csv_string(curve_report(run))
}

/// Best-over-clicks metrics per image followed by a `mean` row.
pub fn summary_csv(run: &EvalRun) -> Result<String> {
    let rows = run
        .images
        .iter()
        .map(|img| MetricRow {
            image_id: &img.image_id,
            click_count: Some(img.clicks()),
            mse: img.best.mse,
            sad: img.best.sad,
            mad: img.best.mad,
            pixel_err: img.best.pixel_err,
        })
        .chain(std::iter::once(MetricRow {
            image_id: "mean",
            click_count: None,
            mse: run.summary.mse,
            sad: run.summary.sad,
            mad: run.summary.mad,
            pixel_err: run.summary.pixel_err,
        }));
    csv_string(rows)
}

/// Every per-click metric of every image.
pub fn series_csv(run: &EvalRun) -> Result<String> {
    let rows = run.images.iter().flat_map(|img| {
        img.series.iter().enumerate().map(move |(i, m)| MetricRow {
            image_id: &img.image_id,
            click_count: Some(i + 1),
            mse: m.mse,
            sad: m.sad,
            mad: m.mad,
            pixel_err: m.pixel_err,
        })
    });
    csv_string(rows)
}

#[derive(Serialize)]
struct SweepCsvRow {
    value: f64,
    mse: f64,
    sad: f64,
    mad: f64,
    pixel_err: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    csv_string(rows.iter().map(|r| SweepCsvRow {
        value: r.value,
        mse: r.run.summary.mse,
        sad: r.run.summary.sad,
        mad: r.run.summary.mad,
        pixel_err: r.run.summary.pixel_err,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: Option<u64>,
    pub dataset: String,
    pub predictor: String,
    pub policy: Policy,
    pub resolution: usize,
    pub sim_cfg: SimulationConfig,
    pub corpus_hash: String,
    pub images: usize,
    pub skipped: Vec<String>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `curve.csv`, `summary.csv`, `series.csv`, `manifest.json` and one
/// `trajectories/<image>.jsonl` per image into `dir`.
pub fn write_run(run: &EvalRun, dir: &Path, seed: Option<u64>, corpus_hash: &str) -> Result<()> {
    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir).map_err(|e| Error::io(&traj_dir, e))?;
    write_file(&dir.join("curve.csv"), curve_csv(run)?.as_bytes())?;
    write_file(&dir.join("summary.csv"), summary_csv(run)?.as_bytes())?;
    write_file(&dir.join("series.csv"), series_csv(run)?.as_bytes())?;
    for img in &run.images {
        let mut buf = Vec::new();
        for rec in &img.trajectory {
            serde_json::to_writer(&mut buf, rec)?;
            buf.push(b'\n');
        }
        write_file(&traj_dir.join(format!("{}.jsonl", img.image_id)), &buf)?;
    }
    let manifest = RunManifest {
        seed,
        dataset: run.dataset_id.clone(),
        predictor: run.predictor_id.clone(),
        policy: run.config.policy,
        resolution: run.config.resolution,
        sim_cfg: run.config.sim,
        corpus_hash: corpus_hash.to_string(),
        images: run.images.len(),
        skipped: run.skipped.iter().map(|(id, _)| id.clone()).collect(),
    };
    let mut buf = serde_json::to_vec_pretty(&manifest)?;
    buf.write_all(b"\n").expect("vec write");
    write_file(&dir.join("manifest.json"), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::generate_synthetic;

    fn small_cfg(policy: Policy, max_clicks: usize) -> EvalConfig {
        EvalConfig {
            policy,
            sim: SimulationConfig {
                max_clicks,
                ..Default::default()
            },
            resolution: 448,
        }
    }

    #[test]
    fn oracle_pixel_error_strictly_decreases() {
        let data = generate_synthetic(1, 4, 48).unwrap();
        let run = evaluate("t", &data, &PredictorChoice::Oracle, &small_cfg(Policy::Cups, 10)).unwrap();
        for img in &run.images {
            let errs: Vec<f64> = img.series.iter().map(|m| m.pixel_err.unwrap()).collect();
            assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        }
        let curve = curve_report(&run);
        assert!(curve.windows(2).all(|w| w[1].pixel_err <= w[0].pixel_err));
    }

    #[test]
    fn one_click_summary_equals_series() {
        let data = generate_synthetic(2, 3, 40).unwrap();
        let p = PredictorChoice::Geodesic(GeodesicPredictor::default());
        let run = evaluate("t", &data, &p, &small_cfg(Policy::Itts, 1)).unwrap();
        for img in &run.images {
            assert_eq!(img.series.len(), 1);
            assert_eq!(img.best, img.series[0]);
        }
    }

    #[test]
    fn best_bounds_every_click_and_last_curve_point() {
        let data = generate_synthetic(3, 3, 40).unwrap();
        let p = PredictorChoice::Geodesic(GeodesicPredictor::default());
        let run = evaluate("t", &data, &p, &small_cfg(Policy::Cups, 5)).unwrap();
        for img in &run.images {
            assert!(img.series.len() <= 5);
            for m in &img.series {
                assert!(img.best.mse <= m.mse && img.best.sad <= m.sad && img.best.mad <= m.mad);
                assert!(img.best.pixel_err.unwrap() <= m.pixel_err.unwrap());
            }
        }
        let curve = curve_report(&run);
        assert!(curve.last().unwrap().mse >= run.summary.mse);
    }

    #[test]
    fn single_image_curve_is_its_series() {
        let data = generate_synthetic(4, 1, 40).unwrap();
        let p = PredictorChoice::Geodesic(GeodesicPredictor::default());
        let run = evaluate("t", &data, &p, &small_cfg(Policy::Cups, 4)).unwrap();
        let curve = curve_report(&run);
        for (row, m) in curve.iter().zip(&run.images[0].series) {
            assert_eq!(row.mse, m.mse);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let p = PredictorChoice::Oracle;
        assert!(evaluate("t", &[], &p, &EvalConfig::default()).is_err());
    }

    #[test]
    fn csv_outputs_are_deterministic() {
        let data = generate_synthetic(5, 3, 40).unwrap();
        let p = PredictorChoice::Geodesic(GeodesicPredictor::default());
        let a = evaluate("t", &data, &p, &small_cfg(Policy::Cups, 3)).unwrap();
        let b = evaluate("t", &data, &p, &small_cfg(Policy::Cups, 3)).unwrap();
        assert_eq!(summary_csv(&a).unwrap(), summary_csv(&b).unwrap());
        assert_eq!(curve_csv(&a).unwrap(), curve_csv(&b).unwrap());
        assert!(curve_csv(&a).unwrap().starts_with("click,mse,sad,mad,pixel_err\n"));
        assert!(summary_csv(&a).unwrap().starts_with("image_id,click_count,mse,sad,mad,pixel_err\n"));
    }

    #[test]
    fn sweep_single_value_matches_evaluate() {
        let data = generate_synthetic(6, 2, 40).unwrap();
        let p = PredictorChoice::Geodesic(GeodesicPredictor::default());
        let base = small_cfg(Policy::Cups, 3);
        let rows = sweep("t", &data, &p, SweepParam::Alpha, &[0.1], &base).unwrap();
        let direct = evaluate("t", &data, &p, &base).unwrap();
        assert_eq!(rows[0].run, direct);
        assert!(sweep("t", &data, &p, SweepParam::Beta, &[], &base).is_err());
    }

    #[test]
    fn write_run_layout() {
        let data = generate_synthetic(7, 2, 40).unwrap();
        let p = PredictorChoice::Oracle;
        let run = evaluate("t", &data, &p, &small_cfg(Policy::Cups, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(&run, dir.path(), Some(7), "abc").unwrap();
        for f in ["curve.csv", "summary.csv", "series.csv", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let traj = fs::read_to_string(dir.path().join("trajectories").join(format!("{}.jsonl", data[0].id))).unwrap();
        let first: serde_json::Value = serde_json::from_str(traj.lines().next().unwrap()).unwrap();
        for key in ["ordinal", "policy", "class", "x", "y", "d_F", "d_B", "d_U", "d_t", "e_level"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }
}
