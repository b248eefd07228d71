use rand_distr::{Distribution, Exp};
use serde::Serialize;
use serde_json::json;

use crate::asymptotics::{
    derived_constants, large_fluctuation_limit, thm1_limit, FluctuationRegime, LargeFluctuationLimit,
    SojournWindows, Thm3Estimates,
};
use crate::berman::{default_constant_step, estimate_bar_joint, estimate_bar_single, BermanSpec};
use crate::brownian_exact::{estimate_c, prop1_approx, prop2_approx, CConstantEstimate, CConstantSpec};
use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};
use crate::gaussian_paths::{FbmSampler, HurstParam, SamplerScratch, TimeGrid};
use crate::rng::{map_replicates, substream, tags};
use crate::stats::{Accumulator, MonteCarloEstimate};
use crate::workload::{forward_in_place, sojourn_in_slice, QueueParams, StationaryWindowSampler, Tail, WindowScratch};

use super::config::{ExperimentConfig, Study};

/// Fewest accepted replicates a rejection estimate is reported with.
pub const MIN_ACCEPTED: u64 = 100;

/// Most thresholds evaluated on one set of replicates.
pub const MAX_THRESHOLDS: usize = 64;

/// One row of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub u: f64,
    pub omega: f64,
    pub mc_estimate: MonteCarloEstimate,
    pub closed_form: Option<f64>,
    pub asymptotic: Option<f64>,
    pub ratio_mc_over_asymptotic: Option<f64>,
    pub effective_samples: u64,
}

impl ResultRecord {
    pub fn new(
        u: f64,
        omega: f64,
        mc_estimate: MonteCarloEstimate,
        closed_form: Option<f64>,
        asymptotic: Option<f64>,
        effective_samples: u64,
    ) -> Self {
        let ratio = asymptotic.filter(|a| *a != 0.0).map(|a| mc_estimate.value / a);
        ResultRecord { u, omega, mc_estimate, closed_form, asymptotic, ratio_mc_over_asymptotic: ratio, effective_samples }
    }
}

/// Rows plus the auxiliary constants they were compared against.
#[derive(Debug, Clone, Default)]
pub struct StudyOutput {
    pub records: Vec<ResultRecord>,
    pub constants: Vec<serde_json::Value>,
}

fn bernoulli(hits: u64, trials: u64, seed: u64, step: f64) -> MonteCarloEstimate {
    let h = hits as f64;
    let acc = Accumulator { count: trials, sum: h, sum_sq: h };
    MonteCarloEstimate::from_accumulator(&acc, seed, step)
}

fn check_thresholds(omegas: &[f64]) -> Result<()> {
    if omegas.is_empty() || omegas.len() > MAX_THRESHOLDS {
        return Err(Error::invalid(format!("need 1 to {MAX_THRESHOLDS} thresholds, got {}", omegas.len())));
    }
    for &w in omegas {
        ensure_nonnegative("threshold omega", w)?;
    }
    Ok(())
}

/// `P(sojourn of Q on (t1, t2] above omega > x | Q(0) > u)` for each
/// `omega`, all from one set of replicates.
///
/// `Q(0)` is drawn exactly as `u + Exp(2c)` and `Q` is continued by the
/// forward recursion, so every replicate counts. Replicate `i` uses the
/// same random numbers for every `u`.
pub fn conditional_bm_estimates(
    params: QueueParams,
    u: f64,
    omegas: &[f64],
    (t1, t2): (f64, f64),
    x: f64,
    step: f64,
    reps: u64,
    seed: u64,
) -> Result<Vec<MonteCarloEstimate>> {
    if !params.hurst.is_brownian() {
        return Err(Error::invalid(format!(
            "the exact conditional driver needs H = 1/2, got {}",
            params.hurst.value()
        )));
    }
    ensure_nonnegative("level u", u)?;
    ensure_nonnegative("x", x)?;
    ensure_positive("step", step)?;
    check_thresholds(omegas)?;
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if !(t1 >= 0.0 && t2 > t1) {
        return Err(Error::invalid(format!("need 0 <= T1 < T2, got T1 = {t1}, T2 = {t2}")));
    }
    if x >= t2 - t1 {
        return Ok(omegas
            .iter()
            .map(|_| MonteCarloEstimate::exact(0.0, reps, seed, step).with_note("x >= T2 - T1: probability is zero"))
            .collect());
    }
    let grid = TimeGrid::covering(t2, step)?;
    let window = grid.window(t1, t2)?;
    let sampler = FbmSampler::new(grid, params.hurst)?;
    let overshoot = Exp::new(2.0 * params.drain).map_err(|e| Error::invalid(e.to_string()))?;
    let masks = map_replicates(
        reps,
        || (SamplerScratch::default(), Vec::new()),
        |(scratch, path), i| {
            let mut rng = substream(seed, tags::CONDITIONAL, i);
            let q0 = u + overshoot.sample(&mut rng);
            sampler.sample_into(&mut rng, scratch, path);
            forward_in_place(params.drain, step, q0, path);
            let w = &path[window.clone()];
            omegas
                .iter()
                .enumerate()
                .fold(0u64, |m, (k, &omega)| m | (((sojourn_in_slice(w, step, omega) > x) as u64) << k))
        },
    );
    Ok((0..omegas.len())
        .map(|k| bernoulli(masks.iter().filter(|m| (*m >> k) & 1 == 1).count() as u64, reps, seed, step))
        .collect())
}

/// Result of the rejection estimator at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmConditionalOutcome {
    /// Replicates meeting the conditioning event.
    pub accepted: u64,
    /// `v(u)`, the factor from scaled to real time.
    pub scale: f64,
    pub estimates: Vec<MonteCarloEstimate>,
}

/// How the supremum beyond the simulated window is handled for level `u`.
pub fn tail_for(params: QueueParams, u: f64, horizon: Option<f64>, exact_bm_tail: bool) -> Tail {
    if exact_bm_tail && params.hurst.is_brownian() {
        Tail::ExactBrownian
    } else {
        Tail::Truncated { horizon: horizon.unwrap_or_else(|| params.default_horizon(u)) }
    }
}

/// Rejection estimate of `P(sojourn on (T2, T3] above omega > y v | sojourn on (0, T1] above u > x v)`
/// with `T_i = v(u) t_i`, for each `omega`.
pub fn conditional_fbm_estimates(
    params: QueueParams,
    u: f64,
    omegas: &[f64],
    windows: &SojournWindows,
    step: f64,
    tail: Tail,
    reps: u64,
    seed: u64,
) -> Result<FbmConditionalOutcome> {
    ensure_positive("level u", u)?;
    ensure_positive("step", step)?;
    check_thresholds(omegas)?;
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let scale = derived_constants(params.hurst, params.drain, u)?.v_u;
    let real = windows.scaled(scale);
    let sampler = StationaryWindowSampler::new(params, real.t1.max(real.t3), step, tail)?;
    let grid = *sampler.window();
    let cond = grid.window(0.0, real.t1)?;
    let target = grid.window(real.t2, real.t3)?;
    let outcomes = map_replicates(
        reps,
        || (WindowScratch::default(), Vec::new()),
        |(scratch, q), i| {
            let mut rng = substream(seed, tags::STATIONARY, i);
            sampler.sample_into(&mut rng, scratch, q);
            if sojourn_in_slice(&q[cond.clone()], step, u) <= real.x {
                return None;
            }
            let w = &q[target.clone()];
            Some(
                omegas
                    .iter()
                    .enumerate()
                    .fold(0u64, |m, (k, &omega)| m | (((sojourn_in_slice(w, step, omega) > real.y) as u64) << k)),
            )
        },
    );
    let accepted: Vec<u64> = outcomes.into_iter().flatten().collect();
    let n = accepted.len() as u64;
    if n < MIN_ACCEPTED {
        return Err(Error::AcceptanceStarvation {
            accepted: n,
            required: MIN_ACCEPTED,
            hint: format!("u = {u}: lower u or raise reps above {reps}"),
        });
    }
    let estimates = (0..omegas.len())
        .map(|k| {
            let hits = accepted.iter().filter(|m| (*m >> k) & 1 == 1).count() as u64;
            bernoulli(hits, n, seed, step).with_note(format!("accepted {n} of {reps} replicates"))
        })
        .collect();
    Ok(FbmConditionalOutcome { accepted: n, scale, estimates })
}

/// `T(u) = t1 u^{(2H-1)/(2H)}`, the growing window of the Piterbarg study.
pub fn piterbarg_window(hurst: HurstParam, t1: f64, u: f64) -> f64 {
    let h = hurst.value();
    t1 * u.powf((2.0 * h - 1.0) / (2.0 * h))
}

/// Ratio `P(max over grid points of [0, T] of Q > u) / P(Q(0) > u)`, both
/// estimated from the same replicates. The returned effective sample size
/// is the number of replicates with `Q(0) > u`.
pub fn supremum_ratio(
    params: QueueParams,
    u: f64,
    window_end: f64,
    step: f64,
    tail: Tail,
    reps: u64,
    seed: u64,
) -> Result<(MonteCarloEstimate, u64)> {
    ensure_positive("level u", u)?;
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let sampler = StationaryWindowSampler::new(params, window_end, step, tail)?;
    let pairs = map_replicates(
        reps,
        || (WindowScratch::default(), Vec::new()),
        |(scratch, q), i| {
            let mut rng = substream(seed, tags::STATIONARY, i);
            sampler.sample_into(&mut rng, scratch, q);
            let sup = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (q[0] > u, sup > u)
        },
    );
    let point = pairs.iter().filter(|p| p.0).count() as u64;
    let sup = pairs.iter().filter(|p| p.1).count() as u64;
    if point < MIN_ACCEPTED {
        return Err(Error::AcceptanceStarvation {
            accepted: point,
            required: MIN_ACCEPTED,
            hint: format!("u = {u}: too few replicates with Q(0) > u; lower u or raise reps above {reps}"),
        });
    }
    let n = reps as f64;
    let p0 = point as f64 / n;
    let ratio = sup as f64 / point as f64;
    // delta method on the per-replicate residual 1(sup > u) - r 1(Q(0) > u)
    let mut resid = Accumulator::default();
    for &(a, b) in &pairs {
        resid.push(b as u8 as f64 - ratio * a as u8 as f64);
    }
    let se = resid.variance().sqrt() / (n.sqrt() * p0);
    let est = MonteCarloEstimate { value: ratio, std_error: se, reps, seed, step, notes: Vec::new() }
        .with_note(format!("P(Q(0) > u) = {p0:.6e}, P(sup > u) = {:.6e}", sup as f64 / n));
    Ok((est, point))
}

fn constant_record(c: &CConstantEstimate) -> serde_json::Value {
    json!({ "constant": "C", "spec": c.spec, "estimate": c.estimate })
}

/// Exact conditional driver for the Brownian regimes, one row per level.
pub fn estimate_conditional_bm(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let params = cfg.params()?;
    let regime = cfg.regime()?;
    if !regime.is_brownian_regime() {
        return Err(Error::SpecMismatch(format!("regime {regime:?} is not a Brownian regime")));
    }
    let w = &cfg.windows;
    let c = params.drain;
    let cstep = cfg.mc.constant_step.unwrap_or(cfg.mc.step);
    let constant = match regime {
        FluctuationRegime::SmallBm { w: shift } => {
            Some(estimate_c(&CConstantSpec::new(w.t1, w.t2, w.x, shift, c)?, cstep, cfg.constant_reps(), cfg.mc.seed)?)
        }
        FluctuationRegime::LargeBm { a } if a > 0.0 => Some(estimate_c(
            &CConstantSpec::new(w.t1, w.t2, w.x, f64::INFINITY, c)?,
            cstep,
            cfg.constant_reps(),
            cfg.mc.seed,
        )?),
        _ => None,
    };
    let mut out = StudyOutput::default();
    out.constants.extend(constant.iter().map(constant_record));
    for &u in &cfg.u_list {
        let omega = regime.omega(params.hurst, c, u);
        let est = conditional_bm_estimates(params, u, &[omega], (w.t1, w.t2), w.x, cfg.mc.step, cfg.mc.reps, cfg.mc.seed)?
            .remove(0);
        let asymptotic = match regime {
            FluctuationRegime::SmallBm { w: shift } => prop1_approx(c, shift, constant.as_ref().expect("estimated"))?,
            FluctuationRegime::LargeBm { a } => prop2_approx(c, a, u, omega, constant.as_ref())?,
            _ => unreachable!("checked above"),
        };
        let reps = est.reps;
        out.records.push(ResultRecord::new(u, omega, est, None, Some(asymptotic), reps));
    }
    Ok(out)
}

/// Rejection driver for the fBm regimes, one row per level.
pub fn estimate_conditional_fbm(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let params = cfg.params()?;
    let regime = cfg.regime()?;
    if regime.is_brownian_regime() {
        return Err(Error::SpecMismatch(format!("regime {regime:?} uses the exact Brownian driver")));
    }
    let windows = cfg.windows.sojourn_windows()?;
    let h = params.hurst;
    let seed = cfg.mc.seed;
    let creps = cfg.constant_reps();
    let spec = BermanSpec {
        hurst: h,
        t1: windows.t1,
        lambda: 0.0,
        t2: windows.t2,
        t3: windows.t3,
        x: windows.x,
        y: windows.y,
    };
    let cstep = cfg.mc.constant_step.unwrap_or_else(|| default_constant_step(&spec));
    let mut out = StudyOutput::default();

    let small_limit = match regime {
        FluctuationRegime::SmallFbm { lambda } => {
            let joint = estimate_bar_joint(&BermanSpec { lambda, ..spec }, cstep, creps, seed)?;
            let single = estimate_bar_single(h, windows.t1, windows.x, cstep, creps, seed)?;
            let limit = thm1_limit(&joint, &single)?;
            out.constants.push(joint.to_record());
            out.constants.push(single.to_record());
            Some(limit)
        }
        _ => None,
    };
    let envelope_estimates = match regime {
        FluctuationRegime::LargeFbm { a } if a > 0.0 => {
            let at = crate::asymptotics::a_tilde(h, a);
            let scaled = windows.scaled(at);
            let est = Thm3Estimates {
                bar_x: estimate_bar_single(h, windows.t1, windows.x, cstep, creps, seed)?,
                bar_ay_upper: estimate_bar_single(h, scaled.t3 - scaled.t2, scaled.y, cstep, creps, seed)?,
                bar_joint_lower: estimate_bar_joint(
                    &BermanSpec { t1: scaled.t1, t2: scaled.t2, t3: scaled.t3, x: scaled.x, y: scaled.y, ..spec },
                    cstep,
                    creps,
                    seed,
                )?,
            };
            out.constants.extend([&est.bar_x, &est.bar_ay_upper, &est.bar_joint_lower].map(|e| e.to_record()));
            Some(est)
        }
        _ => None,
    };

    for &u in &cfg.u_list {
        let omega = regime.omega(h, params.drain, u);
        let tail = tail_for(params, u, cfg.mc.horizon, cfg.mc.exact_bm_tail);
        let outcome = conditional_fbm_estimates(params, u, &[omega], &windows, cfg.mc.step, tail, cfg.mc.reps, seed)?;
        let asymptotic = match regime {
            FluctuationRegime::SmallFbm { .. } => small_limit,
            FluctuationRegime::LargeFbm { a } => {
                match large_fluctuation_limit(h, params.drain, u, a, &windows, envelope_estimates.as_ref())? {
                    LargeFluctuationLimit::One => Some(1.0),
                    LargeFluctuationLimit::Envelope(env) => {
                        out.constants.push(json!({ "constant": "envelope", "u": u, "envelope": env }));
                        None
                    }
                }
            }
            _ => unreachable!("checked above"),
        };
        let est = outcome.estimates.into_iter().next().expect("one threshold");
        out.records.push(ResultRecord::new(u, omega, est, None, asymptotic, outcome.accepted));
    }
    Ok(out)
}

/// Supremum-to-point ratio over `T(u)`, one row per level; the limit is 1.
pub fn estimate_piterbarg(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let params = cfg.params()?;
    let mut out = StudyOutput::default();
    for &u in &cfg.u_list {
        let end = piterbarg_window(params.hurst, cfg.windows.t1, u);
        let tail = tail_for(params, u, cfg.mc.horizon, cfg.mc.exact_bm_tail);
        let (est, eff) = supremum_ratio(params, u, end, cfg.mc.step, tail, cfg.mc.reps, cfg.mc.seed)?;
        out.records.push(ResultRecord::new(u, u, est.with_note(format!("T(u) = {end}")), None, Some(1.0), eff));
    }
    Ok(out)
}

/// Dispatches on the study and the regime.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    match cfg.study {
        Study::Piterbarg => estimate_piterbarg(cfg),
        Study::Conditional if cfg.regime()?.is_brownian_regime() => estimate_conditional_bm(cfg),
        Study::Conditional => estimate_conditional_fbm(cfg),
    }
}
