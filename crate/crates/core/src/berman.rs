//! Monte Carlo estimation of the Pickands constant and of the generalized
//! Berman-type sojourn constants of `W_H`.
//!
//! The integrals `int e^z P(sojourn above z > x) dz` reduce pathwise to
//! `e^{z*}`, where `z*` is the sojourn level of the window (the `m`-th
//! largest grid value), so each replicate costs one path and a selection.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};
use crate::gaussian_paths::{FbmSampler, HurstParam, SamplerScratch, TimeGrid};
use crate::rng::{map_replicates, substream, tags};
use crate::stats::{batch_means_std_error, Accumulator, MonteCarloEstimate};
use crate::workload::{sojourn_level_in_place, ExtendedLevel};

/// Parameters of the joint constant `B^{x,y}(T1; lambda, T2, T3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BermanSpec {
    pub hurst: HurstParam,
    pub t1: f64,
    pub lambda: f64,
    pub t2: f64,
    pub t3: f64,
    pub x: f64,
    pub y: f64,
}

impl BermanSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("T1", self.t1)?;
        ensure_nonnegative("x", self.x)?;
        ensure_nonnegative("y", self.y)?;
        if !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite, got {}", self.lambda)));
        }
        if !(self.t2 >= 0.0 && self.t3 > self.t2 && self.t3.is_finite()) {
            return Err(Error::invalid(format!("need 0 <= T2 < T3, got T2 = {}, T3 = {}", self.t2, self.t3)));
        }
        Ok(())
    }

    /// Outside this region the constant is exactly zero.
    pub fn is_nondegenerate(&self) -> bool {
        self.x < self.t1 && self.y < self.t3 - self.t2
    }

    fn horizon(&self) -> f64 {
        self.t1.max(self.t3)
    }
}

/// Grid step for the constants: at most 0.01 and at least 50 points in the
/// second window.
pub fn default_constant_step(spec: &BermanSpec) -> f64 {
    0.01f64.min((spec.t3 - spec.t2) / 50.0).min(spec.t1 / 50.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constant_kind", rename_all = "kebab-case")]
pub enum ConstantKind {
    Pickands { hurst: HurstParam, horizon: f64 },
    /// The smooth field `sqrt(2) t N - t^2`, whose constant is `1/sqrt(pi)`.
    Alpha2Pickands { horizon: f64 },
    BarSingle { hurst: HurstParam, t1: f64, x: f64 },
    BarJoint(BermanSpec),
    FiniteHorizon { spec: BermanSpec, horizon: f64 },
}

impl ConstantKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstantKind::Pickands { .. } => "pickands",
            ConstantKind::Alpha2Pickands { .. } => "pickands-alpha2",
            ConstantKind::BarSingle { .. } => "bar-single",
            ConstantKind::BarJoint(_) => "bar-joint",
            ConstantKind::FiniteHorizon { .. } => "finite-horizon",
        }
    }
}

/// An estimate together with the constant it estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimate {
    pub kind: ConstantKind,
    pub estimate: MonteCarloEstimate,
}

impl ConstantEstimate {
    /// `{constant_kind, params, value, std_error, reps, step, seed, notes}`.
    pub fn to_record(&self) -> serde_json::Value {
        let mut params = serde_json::to_value(self.kind).unwrap_or_default();
        if let Some(map) = params.as_object_mut() {
            map.remove("constant_kind");
        }
        let e = &self.estimate;
        json!({
            "constant_kind": self.kind.name(),
            "params": params,
            "value": e.value,
            "std_error": e.std_error,
            "reps": e.reps,
            "step": e.step,
            "seed": e.seed,
            "notes": e.notes,
        })
    }
}

/// How `E[exp(V_H(S))]` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupremumMethod {
    /// `max_j e^{W_j} / (step * sum_j e^{W_j})` for the path re-centred at a
    /// uniformly chosen grid point. Same expectation as the direct average
    /// (change of measure by `e^{W(tau)}`), with bounded replicates.
    #[default]
    ShiftAveraged,
    /// Plain average of `exp(max_j W_j)`. Heavy tailed: the mean is carried
    /// by events of probability about `e^{-S}`.
    Direct,
}

const EXP_CUTOFF: f64 = -40.0;

/// `1 / sum_j exp(w_j - max w)`.
fn inverse_normalized_mass(w: &[f64]) -> f64 {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass: f64 = w
        .iter()
        .map(|&v| v - max)
        .filter(|&d| d > EXP_CUTOFF)
        .map(f64::exp)
        .sum();
    1.0 / mass
}

/// One replicate of `E[e^{V(S)}] / S` from an fBm path `b` on the grid.
fn supremum_replicate<R: Rng + ?Sized>(
    method: SupremumMethod,
    grid: &TimeGrid,
    hurst: HurstParam,
    b: &[f64],
    rng: &mut R,
    w: &mut Vec<f64>,
) -> f64 {
    let n = grid.count();
    let span = grid.end();
    let two_h = 2.0 * hurst.value();
    let sqrt2 = std::f64::consts::SQRT_2;
    let step = grid.step();
    w.clear();
    match method {
        SupremumMethod::Direct => {
            w.extend(b.iter().enumerate().map(|(j, v)| sqrt2 * v - (step * j as f64).powf(two_h)));
            w.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp() / span
        }
        SupremumMethod::ShiftAveraged => {
            let k = rng.random_range(0..n);
            let bk = b[k];
            if hurst.is_brownian() {
                w.extend(b.iter().enumerate().map(|(j, v)| sqrt2 * (v - bk) - step * j.abs_diff(k) as f64));
            } else {
                w.extend(
                    b.iter()
                        .enumerate()
                        .map(|(j, v)| sqrt2 * (v - bk) - (step * j.abs_diff(k) as f64).powf(two_h)),
                );
            }
            n as f64 / span * inverse_normalized_mass(w)
        }
    }
}

fn summarize(values: &[f64], seed: u64, step: f64) -> MonteCarloEstimate {
    MonteCarloEstimate::from_accumulator(&Accumulator::from_values(values), seed, step)
}

fn supremum_pool(
    hurst: HurstParam,
    horizon: f64,
    step: f64,
    reps: u64,
    seed: u64,
    method: SupremumMethod,
) -> Result<(Vec<f64>, TimeGrid)> {
    ensure_positive("horizon S", horizon)?;
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let grid = TimeGrid::covering(horizon, step)?;
    let sampler = FbmSampler::new(grid, hurst)?;
    let values = map_replicates(
        reps,
        || (SamplerScratch::default(), Vec::new(), Vec::new()),
        |(scratch, b, w), i| {
            let mut rng = substream(seed, tags::PICKANDS, i);
            sampler.sample_into(&mut rng, scratch, b);
            supremum_replicate(method, &grid, hurst, b, &mut rng, w)
        },
    );
    Ok((values, grid))
}

fn annotate_supremum(mut est: MonteCarloEstimate, values: &[f64], method: SupremumMethod, span: f64) -> MonteCarloEstimate {
    est.notes.push(format!("horizon S = {span}: finite-S ratio overestimates the limit"));
    est.notes.push("grid maxima underestimate continuous suprema".into());
    est.notes.push(format!("batch-means std error (20 batches): {:.6e}", batch_means_std_error(values, 20)));
    if method == SupremumMethod::Direct {
        est.notes.push("direct estimator: heavy-tailed replicates, expect severe underestimation".into());
    } else {
        est.notes.push("shift-averaged estimator of E[exp(V(S))]/S".into());
    }
    est
}

/// `E[exp(max_{[0,S]} W_H)] / S` with the default shift-averaged replicates.
pub fn estimate_pickands(hurst: HurstParam, horizon: f64, step: f64, reps: u64, seed: u64) -> Result<ConstantEstimate> {
    estimate_pickands_with(SupremumMethod::ShiftAveraged, hurst, horizon, step, reps, seed)
}

pub fn estimate_pickands_with(
    method: SupremumMethod,
    hurst: HurstParam,
    horizon: f64,
    step: f64,
    reps: u64,
    seed: u64,
) -> Result<ConstantEstimate> {
    let (values, grid) = supremum_pool(hurst, horizon, step, reps, seed, method)?;
    let est = annotate_supremum(summarize(&values, seed, step), &values, method, grid.end());
    Ok(ConstantEstimate { kind: ConstantKind::Pickands { hurst, horizon }, estimate: est })
}

/// Validation path for `alpha = 2`: the degenerate field `sqrt(2) t N - t^2`
/// sampled directly, since `H = 1` is not an admissible Hurst index.
pub fn estimate_pickands_alpha2(
    method: SupremumMethod,
    horizon: f64,
    step: f64,
    reps: u64,
    seed: u64,
) -> Result<ConstantEstimate> {
    ensure_positive("horizon S", horizon)?;
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let grid = TimeGrid::covering(horizon, step)?;
    let n = grid.count();
    let span = grid.end();
    let sqrt2 = std::f64::consts::SQRT_2;
    let values = map_replicates(reps, Vec::new, |w: &mut Vec<f64>, i| {
        let mut rng = substream(seed, tags::PICKANDS, i);
        let z: f64 = rng.sample(StandardNormal);
        let origin = match method {
            SupremumMethod::Direct => 0.0,
            SupremumMethod::ShiftAveraged => grid.point(rng.random_range(0..n)),
        };
        w.clear();
        w.extend(grid.points().map(|t| {
            let s = t - origin;
            sqrt2 * s * z - s * s
        }));
        match method {
            SupremumMethod::Direct => w.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp() / span,
            SupremumMethod::ShiftAveraged => n as f64 / span * inverse_normalized_mass(w),
        }
    });
    let est = annotate_supremum(summarize(&values, seed, step), &values, method, span);
    Ok(ConstantEstimate { kind: ConstantKind::Alpha2Pickands { horizon }, estimate: est })
}

/// Samples `W_H` paths for the Berman constants on `[0, horizon]`.
struct WFieldPool {
    grid: TimeGrid,
    sampler: FbmSampler,
    seed: u64,
}

impl WFieldPool {
    fn new(hurst: HurstParam, horizon: f64, step: f64, seed: u64) -> Result<Self> {
        ensure_positive("step", step)?;
        let grid = TimeGrid::covering(horizon, step)?;
        Ok(WFieldPool { grid, sampler: FbmSampler::new(grid, hurst)?, seed })
    }

    fn sample(&self, index: u64, scratch: &mut SamplerScratch, out: &mut Vec<f64>) {
        let mut rng = substream(self.seed, tags::BERMAN, index);
        self.sampler.sample_w_into(&mut rng, scratch, out);
    }
}

#[derive(Default)]
struct BermanScratch {
    fbm: SamplerScratch,
    path: Vec<f64>,
    window: Vec<f64>,
}

fn window_level(grid: &TimeGrid, path: &[f64], a: f64, b: f64, x: f64, buf: &mut Vec<f64>) -> Result<ExtendedLevel> {
    let range = grid.window(a, b)?;
    buf.clear();
    buf.extend_from_slice(&path[range]);
    sojourn_level_in_place(buf, grid.step(), x)
}

fn exp_min(z1: ExtendedLevel, z2_shifted: f64) -> f64 {
    let m = z1.raw().min(z2_shifted);
    if m == f64::NEG_INFINITY {
        0.0
    } else {
        m.exp()
    }
}

/// Per-replicate values `exp(z*)` of the single constant.
pub fn bar_single_replicates(hurst: HurstParam, t1: f64, x: f64, step: f64, reps: u64, seed: u64) -> Result<Vec<f64>> {
    ensure_positive("T1", t1)?;
    ensure_nonnegative("x", x)?;
    if x >= t1 {
        return Ok(vec![0.0; reps as usize]);
    }
    let pool = WFieldPool::new(hurst, t1, step, seed)?;
    pool.grid.window(0.0, t1)?;
    let values = map_replicates(reps, BermanScratch::default, |s, i| {
        pool.sample(i, &mut s.fbm, &mut s.path);
        window_level(&pool.grid, &s.path, 0.0, t1, x, &mut s.window)
            .expect("window checked above")
            .exp()
    });
    Ok(values)
}

/// Single constant `int e^z P(sojourn of W_H on [0, T1] above z > x) dz`.
pub fn estimate_bar_single(hurst: HurstParam, t1: f64, x: f64, step: f64, reps: u64, seed: u64) -> Result<ConstantEstimate> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let kind = ConstantKind::BarSingle { hurst, t1, x };
    if x >= t1 {
        ensure_positive("T1", t1)?;
        let est = MonteCarloEstimate::exact(0.0, reps, seed, step).with_note("x >= T1: constant is exactly zero");
        return Ok(ConstantEstimate { kind, estimate: est });
    }
    let values = bar_single_replicates(hurst, t1, x, step, reps, seed)?;
    Ok(ConstantEstimate { kind, estimate: summarize(&values, seed, step) })
}

/// Per-replicate values `exp(min(z1*, z2* - lambda))` of the joint constant,
/// both levels read from one `W_H` path.
pub fn bar_joint_replicates(spec: &BermanSpec, step: f64, reps: u64, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !spec.is_nondegenerate() {
        return Ok(vec![0.0; reps as usize]);
    }
    let pool = WFieldPool::new(spec.hurst, spec.horizon(), step, seed)?;
    pool.grid.window(0.0, spec.t1)?;
    pool.grid.window(spec.t2, spec.t3)?;
    let values = map_replicates(reps, BermanScratch::default, |s, i| {
        pool.sample(i, &mut s.fbm, &mut s.path);
        let z1 = window_level(&pool.grid, &s.path, 0.0, spec.t1, spec.x, &mut s.window).expect("window checked");
        let z2 = window_level(&pool.grid, &s.path, spec.t2, spec.t3, spec.y, &mut s.window).expect("window checked");
        exp_min(z1, z2.raw() - spec.lambda)
    });
    Ok(values)
}

pub fn estimate_bar_joint(spec: &BermanSpec, step: f64, reps: u64, seed: u64) -> Result<ConstantEstimate> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let kind = ConstantKind::BarJoint(*spec);
    spec.validate()?;
    if !spec.is_nondegenerate() {
        let est = MonteCarloEstimate::exact(0.0, reps, seed, step)
            .with_note("x >= T1 or y >= T3 - T2: constant is exactly zero");
        return Ok(ConstantEstimate { kind, estimate: est });
    }
    let values = bar_joint_replicates(spec, step, reps, seed)?;
    Ok(ConstantEstimate { kind, estimate: summarize(&values, seed, step) })
}

/// Finite-horizon constant `B^{x,y}(T1; lambda, T2, T3)([0, S])`.
///
/// Independence of `V_H(S)` and `W'_H` factorizes it as
/// `E[e^{V_H(S)}] * B^{x,y}`; the two factors are estimated from separate
/// pools (the `V` pool with the shift-averaged replicates by default) and
/// multiplied.
pub fn estimate_finite_horizon_joint(
    spec: &BermanSpec,
    horizon: f64,
    step: f64,
    reps: u64,
    seed: u64,
    method: SupremumMethod,
) -> Result<ConstantEstimate> {
    spec.validate()?;
    ensure_positive("horizon S", horizon)?;
    let kind = ConstantKind::FiniteHorizon { spec: *spec, horizon };
    if !spec.is_nondegenerate() {
        let est = MonteCarloEstimate::exact(0.0, reps, seed, step)
            .with_note("x >= T1 or y >= T3 - T2: constant is exactly zero");
        return Ok(ConstantEstimate { kind, estimate: est });
    }
    let (sup_values, grid) = supremum_pool(spec.hurst, horizon, step, reps, seed, method)?;
    let span = grid.end();
    let sup = Accumulator::from_values(&sup_values);
    let joint = Accumulator::from_values(&bar_joint_replicates(spec, step, reps, seed)?);
    let (mv, sv) = (span * sup.mean(), span * sup.std_error());
    let (mb, sb) = (joint.mean(), joint.std_error());
    let est = MonteCarloEstimate {
        value: mv * mb,
        std_error: (mb * mb * sv * sv + mv * mv * sb * sb).sqrt(),
        reps,
        seed,
        step,
        notes: vec![
            format!("E[exp(V(S))] factor: {mv:.6e} +/- {sv:.3e}"),
            format!("joint factor: {mb:.6e} +/- {sb:.3e}"),
        ],
    };
    Ok(ConstantEstimate { kind, estimate: est })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    fn spec(hv: f64) -> BermanSpec {
        BermanSpec { hurst: h(hv), t1: 1.0, lambda: 0.0, t2: 0.5, t3: 1.5, x: 0.2, y: 0.3 }
    }

    #[test]
    fn zero_region_is_exact() {
        let s = estimate_bar_single(h(0.6), 1.0, 1.0, 0.01, 100, 1).unwrap();
        assert_eq!((s.estimate.value, s.estimate.std_error), (0.0, 0.0));
        let mut j = spec(0.6);
        j.y = 1.0;
        let e = estimate_bar_joint(&j, 0.01, 100, 1).unwrap();
        assert_eq!((e.estimate.value, e.estimate.std_error), (0.0, 0.0));
        j.y = 0.3;
        j.x = 2.0;
        let f = estimate_finite_horizon_joint(&j, 8.0, 0.01, 100, 1, SupremumMethod::ShiftAveraged).unwrap();
        assert_eq!((f.estimate.value, f.estimate.std_error), (0.0, 0.0));
    }

    #[test]
    fn single_at_zero_duration_is_mean_exp_max() {
        let hurst = h(0.7);
        let (step, reps, seed) = (0.01, 200, 4);
        let values = bar_single_replicates(hurst, 1.0, 0.0, step, reps, seed).unwrap();
        let pool = WFieldPool::new(hurst, 1.0, step, seed).unwrap();
        let mut scratch = SamplerScratch::default();
        let mut path = Vec::new();
        for (i, v) in values.iter().enumerate() {
            pool.sample(i as u64, &mut scratch, &mut path);
            let max = path[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(*v, max.exp());
        }
    }

    #[test]
    fn tiny_window_gives_one() {
        let e = estimate_bar_single(h(0.5), 1e-3, 0.0, 1e-3, 20_000, 2).unwrap().estimate;
        assert!((e.value - 1.0).abs() < 4.0 * e.std_error + 1e-3, "{e:?}");
    }

    #[test]
    fn large_shift_kills_joint_constant() {
        let mut s = spec(0.5);
        s.lambda = 200.0;
        let e = estimate_bar_joint(&s, 0.01, 500, 3).unwrap();
        assert!(e.estimate.value < 1e-50);
    }

    #[test]
    fn record_has_the_documented_keys() {
        let e = estimate_bar_single(h(0.5), 1.0, 0.2, 0.01, 10, 3).unwrap();
        let r = e.to_record();
        for key in ["constant_kind", "params", "value", "std_error", "reps", "step", "seed", "notes"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        assert_eq!(r["constant_kind"], "bar-single");
        assert_eq!(r["params"]["t1"], 1.0);
    }

    #[test]
    fn pickands_diverges_as_horizon_shrinks() {
        let small = estimate_pickands(h(0.5), 0.05, 0.01, 2000, 1).unwrap().estimate.value;
        let large = estimate_pickands(h(0.5), 4.0, 0.01, 2000, 1).unwrap().estimate.value;
        assert!(small > 5.0 * large, "{small} vs {large}");
    }

    #[test]
    fn shift_averaged_and_direct_agree_on_short_horizons() {
        // for S = 1 the direct replicates have a light enough tail
        let a = estimate_pickands_with(SupremumMethod::ShiftAveraged, h(0.7), 1.0, 0.01, 20_000, 5).unwrap().estimate;
        let b = estimate_pickands_with(SupremumMethod::Direct, h(0.7), 1.0, 0.01, 20_000, 6).unwrap().estimate;
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < 4.0 * se, "{a:?} vs {b:?}");
    }

    #[test]
    fn default_step_keeps_fifty_points() {
        let s = BermanSpec { t2: 0.1, t3: 0.3, ..spec(0.5) };
        assert!((0.2 / default_constant_step(&s)) >= 50.0 - 1e-9);
        assert_eq!(default_constant_step(&spec(0.5)), 0.01);
    }
}
