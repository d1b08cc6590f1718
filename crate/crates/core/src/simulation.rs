//! Click simulation: the three-class false-negative error model and the
//! click policies built on it.
//!
//! For each class `c`, the false-negative map is `FN_c = !P_c & G_c`; its
//! error size `D_c` is the maximum of its distance transform. The plain
//! three-class policy clicks the class with the largest `D_c`. The
//! unknown-prioritized policy additionally measures the target size
//! `D_t = max dt(G_F | G_U)` and, while the error level `E = D_max / D_t`
//! is below `alpha` and `D_U > beta`, clicks the unknown class instead.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{argmax_pixel, distance_transform, mask_and, mask_not, mask_or, max_of};
use crate::types::{
    count_true, is_all_false, trimap_to_mask, BinaryMask, Click, LabelClass, PerClass,
    SimulationConfig, Trimap,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub fn_masks: PerClass<BinaryMask>,
    pub d: PerClass<f64>,
    pub d_max: f64,
    pub d_t: f64,
    pub e_level: f64,
}

impl ErrorReport {
    pub fn is_converged(&self) -> bool {
        self.fn_masks.0.iter().all(is_all_false)
    }

    pub fn summary(&self) -> ErrorSummary {
        ErrorSummary {
            d: self.d,
            d_t: self.d_t,
            e_level: self.e_level,
        }
    }
}

/// The scalar part of an [`ErrorReport`]. Serializes as
/// `{d_F, d_B, d_U, d_t, e_level}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SummaryRepr", from = "SummaryRepr")]
pub struct ErrorSummary {
    pub d: PerClass<f64>,
    pub d_t: f64,
    pub e_level: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
struct SummaryRepr {
    #[serde(rename = "d_F")]
    d_f: f64,
    #[serde(rename = "d_B")]
    d_b: f64,
    #[serde(rename = "d_U")]
    d_u: f64,
    d_t: f64,
    e_level: f64,
}

impl From<ErrorSummary> for SummaryRepr {
    fn from(s: ErrorSummary) -> Self {
        Self {
            d_f: s.d.0[0],
            d_b: s.d.0[1],
            d_u: s.d.0[2],
            d_t: s.d_t,
            e_level: s.e_level,
        }
    }
}

impl From<SummaryRepr> for ErrorSummary {
    fn from(r: SummaryRepr) -> Self {
        Self {
            d: PerClass([r.d_f, r.d_b, r.d_u]),
            d_t: r.d_t,
            e_level: r.e_level,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Foreground and unknown merged into one class; clicks are F or B only.
    TwoClass,
    /// Argmax over the three error sizes.
    Itts,
    /// Argmax with conditional unknown priority.
    Cups,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::TwoClass, Policy::Itts, Policy::Cups];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::TwoClass => "twoclass",
            Policy::Itts => "itts",
            Policy::Cups => "cups",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twoclass" | "two-class" | "its" => Ok(Policy::TwoClass),
            "itts" => Ok(Policy::Itts),
            "cups" | "itts+cups" => Ok(Policy::Cups),
            other => Err(Error::InvalidConfig(format!(
                "unknown policy {other:?} (expected twoclass, itts or cups)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyDecision {
    NextClick(Click),
    Converged,
}

/// Where inside the chosen false-negative region the click lands.
pub enum ClickPlacement<'a> {
    /// Distance-transform maximum of the region (deterministic).
    Center,
    /// Uniformly random pixel of the region.
    Uniform(&'a mut dyn RngCore),
}

/// One line of the trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub ordinal: usize,
    pub policy: Policy,
    pub class: LabelClass,
    pub x: usize,
    pub y: usize,
    #[serde(rename = "d_F")]
    pub d_f: f64,
    #[serde(rename = "d_B")]
    pub d_b: f64,
    #[serde(rename = "d_U")]
    pub d_u: f64,
    pub d_t: f64,
    pub e_level: f64,
}

impl TrajectoryRecord {
    pub fn new(policy: Policy, click: &Click, summary: &ErrorSummary) -> Self {
        Self {
            ordinal: click.ordinal,
            policy,
            class: click.label,
            x: click.x,
            y: click.y,
            d_f: summary.d[LabelClass::Foreground],
            d_b: summary.d[LabelClass::Background],
            d_u: summary.d[LabelClass::Unknown],
            d_t: summary.d_t,
            e_level: summary.e_level,
        }
    }
}

/// Size of the ground-truth target: max of the distance transform of
/// foreground-or-unknown.
pub fn target_size(gt: &Trimap) -> f64 {
    let target = gt.map(|&l| l != LabelClass::Background);
    max_of(&distance_transform(&target))
}

pub fn compute_error_report(pred: &Trimap, gt: &Trimap) -> Result<ErrorReport> {
    pred.ensure_same_dims(gt)?;
    let target = mask_or(
        &trimap_to_mask(gt, LabelClass::Foreground),
        &trimap_to_mask(gt, LabelClass::Unknown),
    )?;
    if is_all_false(&target) {
        return Err(Error::EmptyTarget);
    }
    let d_t = max_of(&distance_transform(&target));

    let mut fn_masks = PerClass::from_fn(|_| BinaryMask::filled(1, 1, false));
    let mut d = PerClass([0.0; 3]);
    for c in LabelClass::ALL {
        let m = mask_and(&mask_not(&trimap_to_mask(pred, c)), &trimap_to_mask(gt, c))?;
        d[c] = max_of(&distance_transform(&m));
        fn_masks[c] = m;
    }
    let d_max = d.0.iter().copied().fold(0.0, f64::max);
    Ok(ErrorReport {
        fn_masks,
        d,
        d_max,
        d_t,
        e_level: d_max / d_t,
    })
}

/// Argmax over classes; ties resolve to the earliest class in
/// `LabelClass::ALL` order.
fn argmax_class(d: &PerClass<f64>) -> LabelClass {
    let mut best = LabelClass::Foreground;
    for c in LabelClass::ALL {
        if d[c] > d[best] {
            best = c;
        }
    }
    best
}

pub fn itts_next_class(r: &ErrorReport) -> Result<LabelClass> {
    if r.d_max <= 0.0 {
        return Err(Error::Converged);
    }
    Ok(argmax_class(&r.d))
}

pub fn cups_next_class(r: &ErrorReport, cfg: &SimulationConfig) -> Result<LabelClass> {
    if r.d_max <= 0.0 {
        return Err(Error::Converged);
    }
    if r.e_level < cfg.alpha_threshold && r.d[LabelClass::Unknown] > cfg.beta_threshold {
        return Ok(LabelClass::Unknown);
    }
    Ok(argmax_class(&r.d))
}

/// Click at the center (distance-transform maximum) of `FN_c`.
pub fn sample_click(r: &ErrorReport, c: LabelClass, ordinal: usize) -> Result<Click> {
    let (x, y) = argmax_pixel(&distance_transform(&r.fn_masks[c]))?;
    Ok(Click::new(x, y, c, ordinal))
}

/// Click at a uniformly drawn pixel of `FN_c`.
pub fn sample_click_uniform(
    r: &ErrorReport,
    c: LabelClass,
    ordinal: usize,
    rng: &mut dyn RngCore,
) -> Result<Click> {
    place_uniform(&r.fn_masks[c], c, ordinal, rng)
}

fn place_uniform(m: &BinaryMask, c: LabelClass, ordinal: usize, rng: &mut dyn RngCore) -> Result<Click> {
    let n = count_true(m);
    if n == 0 {
        return Err(Error::NoErrorRegion);
    }
    let pick = (rng.next_u64() % n as u64) as usize;
    let (x, y, _) = m
        .enumerate()
        .filter(|(_, _, &b)| b)
        .nth(pick)
        .expect("pick < count");
    Ok(Click::new(x, y, c, ordinal))
}

pub(crate) fn place(m: &BinaryMask, c: LabelClass, ordinal: usize, placement: &mut ClickPlacement<'_>) -> Result<Click> {
    match placement {
        ClickPlacement::Center => {
            let (x, y) = argmax_pixel(&distance_transform(m))?;
            Ok(Click::new(x, y, c, ordinal))
        }
        ClickPlacement::Uniform(rng) => place_uniform(m, c, ordinal, *rng),
    }
}

/// Maps unknown to foreground.
pub fn collapse_two_class(t: &Trimap) -> Trimap {
    t.map(|&l| match l {
        LabelClass::Unknown => LabelClass::Foreground,
        other => other,
    })
}

pub fn simulate_step(
    pred: &Trimap,
    gt: &Trimap,
    cfg: &SimulationConfig,
    policy: Policy,
    ordinal: usize,
) -> Result<PolicyDecision> {
    simulate_step_traced(pred, gt, cfg, policy, ordinal, &mut ClickPlacement::Center).map(|(d, _)| d)
}

/// [`simulate_step`] with a choice of placement, also returning the error
/// sizes behind the decision.
pub fn simulate_step_traced(
    pred: &Trimap,
    gt: &Trimap,
    cfg: &SimulationConfig,
    policy: Policy,
    ordinal: usize,
    placement: &mut ClickPlacement<'_>,
) -> Result<(PolicyDecision, ErrorSummary)> {
    match policy {
        Policy::Itts | Policy::Cups => {
            let report = compute_error_report(pred, gt)?;
            let summary = report.summary();
            if report.is_converged() {
                return Ok((PolicyDecision::Converged, summary));
            }
            let class = match policy {
                Policy::Cups => cups_next_class(&report, cfg)?,
                _ => itts_next_class(&report)?,
            };
            let click = place(&report.fn_masks[class], class, ordinal, placement)?;
            Ok((PolicyDecision::NextClick(click), summary))
        }
        Policy::TwoClass => {
            let report = compute_error_report(&collapse_two_class(pred), &collapse_two_class(gt))?;
            let summary = report.summary();
            if report.is_converged() {
                return Ok((PolicyDecision::Converged, summary));
            }
            let class = itts_next_class(&report)?;
            let click = place(&report.fn_masks[class], class, ordinal, placement)?;
            Ok((PolicyDecision::NextClick(click), summary))
        }
    }
}
