//! Closed forms for the Brownian queue (`H = 1/2`) and the constant
//! `C(T1, T2, x; w) = 2c int_{-inf}^{w} e^{2cy} P(sojourn of B - ct above y > x) dy`.
//!
//! The transient formulas use `Phi((cT - omega - u) / sqrt T)` in their
//! last term; with this sign both the `T -> 0` and `T -> inf` limits hold.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{ln_normal_cdf, normal_cdf};
use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};
use crate::gaussian_paths::{FbmSampler, HurstParam, SamplerScratch, TimeGrid};
use crate::rng::{map_replicates, substream, tags};
use crate::stats::{Accumulator, MonteCarloEstimate};
use crate::workload::sojourn_level_in_place;

/// `P(Q(0) > u) = exp(-2cu)`.
pub fn stationary_tail(c: f64, u: f64) -> Result<f64> {
    ensure_positive("drain rate", c)?;
    ensure_nonnegative("level u", u)?;
    Ok((-2.0 * c * u).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmTransientQuery {
    pub c: f64,
    pub u: f64,
    pub omega: f64,
    pub t: f64,
}

impl BmTransientQuery {
    pub fn new(c: f64, u: f64, omega: f64, t: f64) -> Result<Self> {
        let q = BmTransientQuery { c, u, omega, t };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        ensure_positive("drain rate", self.c)?;
        ensure_nonnegative("level u", self.u)?;
        ensure_nonnegative("level omega", self.omega)?;
        ensure_positive("elapsed time T", self.t)
    }
}

fn checked_probability(p: f64, what: &str) -> Result<f64> {
    if (-1e-12..=1.0 + 1e-12).contains(&p) {
        Ok(p)
    } else {
        Err(Error::Inconsistent(format!("{what} evaluated to {p}, outside [0, 1]")))
    }
}

/// `e^{a} Phi(z)` without overflow in `e^{a}`.
fn exp_times_cdf(a: f64, z: f64) -> f64 {
    (a + ln_normal_cdf(z)).exp()
}

/// `P(Q(T) > omega | Q(0) = u)`.
pub fn transient_exceed_given_level(q: &BmTransientQuery) -> Result<f64> {
    q.validate()?;
    let BmTransientQuery { c, u, omega, t } = *q;
    let s = t.sqrt();
    let p = normal_cdf((u - omega - c * t) / s) + exp_times_cdf(-2.0 * c * omega, (c * t - omega - u) / s);
    checked_probability(p, "P(Q(T) > omega | Q(0) = u)")
}

/// `P(Q(T) > omega | Q(0) > u)`.
pub fn transient_exceed_given_exceed(q: &BmTransientQuery) -> Result<f64> {
    q.validate()?;
    let BmTransientQuery { c, u, omega, t } = *q;
    let s = t.sqrt();
    let p = -exp_times_cdf(2.0 * u * c, (-omega - u - c * t) / s)
        + exp_times_cdf(-2.0 * c * (omega - u), (omega - u - c * t) / s)
        + normal_cdf((u - omega - c * t) / s)
        + exp_times_cdf(-2.0 * c * omega, (c * t - omega - u) / s);
    checked_probability(p, "P(Q(T) > omega | Q(0) > u)")
}

/// Exact draw of `Q(0)` given `Q(0) > u`: `u + Exp(2c)`.
pub fn sample_conditional_initial<R: Rng + ?Sized>(c: f64, u: f64, rng: &mut R) -> Result<f64> {
    ensure_positive("drain rate", c)?;
    ensure_nonnegative("level u", u)?;
    let exp = Exp::new(2.0 * c).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(u + exp.sample(rng))
}

/// Exact draw of `(X(dt), min_{s <= dt} X(s))` for `X(s) = B(s) - c s`.
fn increment_and_min<R: Rng + ?Sized>(c: f64, dt: f64, rng: &mut R) -> (f64, f64) {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let xi = -c * dt + dt.sqrt() * z;
    let e: f64 = rng.sample(rand_distr::Exp1);
    (xi, 0.5 * (xi - (xi * xi + 2.0 * dt * e).sqrt()))
}

/// Runs several starting workloads through the same exact skeleton on
/// `steps` equal steps of `[0, t]`, in place.
pub fn reflected_bm_exact<R: Rng + ?Sized>(c: f64, t: f64, steps: usize, starts: &mut [f64], rng: &mut R) -> Result<()> {
    ensure_positive("drain rate", c)?;
    ensure_positive("horizon", t)?;
    if steps == 0 {
        return Err(Error::invalid("need at least one step"));
    }
    let dt = t / steps as f64;
    for _ in 0..steps {
        let (xi, m) = increment_and_min(c, dt, rng);
        for q in starts.iter_mut() {
            *q = (*q + xi).max(xi - m);
        }
    }
    Ok(())
}

/// Parameters of `C(T1, T2, x; w)`; `w = +inf` is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CConstantSpec {
    pub t1: f64,
    pub t2: f64,
    pub x: f64,
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub w: f64,
    pub c: f64,
}

impl CConstantSpec {
    pub fn new(t1: f64, t2: f64, x: f64, w: f64, c: f64) -> Result<Self> {
        let s = CConstantSpec { t1, t2, x, w, c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_nonnegative("T1", self.t1)?;
        ensure_positive("T2", self.t2)?;
        if self.t2 <= self.t1 {
            return Err(Error::invalid(format!("need T2 > T1, got T1 = {}, T2 = {}", self.t1, self.t2)));
        }
        ensure_nonnegative("x", self.x)?;
        ensure_positive("drain rate", self.c)?;
        if self.w.is_nan() {
            return Err(Error::invalid("w must not be NaN"));
        }
        Ok(())
    }

    pub fn is_infinite(&self) -> bool {
        self.w == f64::INFINITY
    }

    fn is_zero(&self) -> bool {
        self.x >= self.t2 - self.t1 || self.w == f64::NEG_INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CConstantEstimate {
    pub spec: CConstantSpec,
    pub estimate: MonteCarloEstimate,
}

/// Replicates with `2c Y* > OVERFLOW_GUARD` are rejected when `w = +inf`.
pub const OVERFLOW_GUARD: f64 = 700.0;

/// Per-replicate values `exp(2c min(Y*, w))`, `None` for guarded replicates.
pub fn c_constant_replicates(spec: &CConstantSpec, step: f64, reps: u64, seed: u64) -> Result<Vec<Option<f64>>> {
    spec.validate()?;
    ensure_positive("step", step)?;
    if spec.is_zero() {
        return Ok(vec![Some(0.0); reps as usize]);
    }
    let grid = TimeGrid::covering(spec.t2, step)?;
    let window = grid.window(spec.t1, spec.t2)?;
    let sampler = FbmSampler::new(grid, HurstParam::new(0.5)?)?;
    let two_c = 2.0 * spec.c;
    Ok(map_replicates(
        reps,
        || (SamplerScratch::default(), Vec::new()),
        |(scratch, path), i| {
            let mut rng = substream(seed, tags::C_CONSTANT, i);
            sampler.sample_into(&mut rng, scratch, path);
            let drifted = &mut path[window.clone()];
            for (k, v) in drifted.iter_mut().enumerate() {
                *v -= spec.c * grid.point(window.start + k);
            }
            let level = sojourn_level_in_place(drifted, step, spec.x).expect("non-empty window");
            let y = level.raw().min(spec.w);
            if y == f64::NEG_INFINITY {
                Some(0.0)
            } else if two_c * y > OVERFLOW_GUARD {
                None
            } else {
                Some((two_c * y).exp())
            }
        },
    ))
}

/// Monte Carlo estimate of `C(T1, T2, x; w)` via `E[exp(2c min(Y*, w))]`,
/// `Y*` the sojourn level of `B(t) - ct` on `(T1, T2]` at duration `x`.
pub fn estimate_c(spec: &CConstantSpec, step: f64, reps: u64, seed: u64) -> Result<CConstantEstimate> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    spec.validate()?;
    if spec.is_zero() {
        let est = MonteCarloEstimate::exact(0.0, reps, seed, step).with_note("x >= T2 - T1 or w = -inf: exactly zero");
        return Ok(CConstantEstimate { spec: *spec, estimate: est });
    }
    let values = c_constant_replicates(spec, step, reps, seed)?;
    let mut acc = Accumulator::default();
    let mut rejected = 0u64;
    for v in &values {
        match v {
            Some(x) => acc.push(*x),
            None => rejected += 1,
        }
    }
    if rejected > 0 {
        log::warn!("{rejected} replicates rejected by the overflow guard");
    }
    let mut est = MonteCarloEstimate::from_accumulator(&acc, seed, step);
    est.notes.push(format!("overflow-guard rejections: {rejected}"));
    est.notes.push("grid sojourn levels underestimate continuous ones".into());
    Ok(CConstantEstimate { spec: *spec, estimate: est })
}

/// Small fluctuation approximation `exp(-2cw) C(T1, T2, x; w)`.
pub fn prop1_approx(c: f64, w: f64, c_estimate: &CConstantEstimate) -> Result<f64> {
    let s = &c_estimate.spec;
    if s.c != c || s.w != w {
        return Err(Error::SpecMismatch(format!(
            "constant was estimated for c = {}, w = {} but used with c = {c}, w = {w}",
            s.c, s.w
        )));
    }
    Ok((-2.0 * c * w).exp() * c_estimate.estimate.value)
}

/// Large fluctuation approximation: 1 for `a` in (-1, 0),
/// `exp(-2c(omega - u)) C(T1, T2, x; inf)` for `a > 0`.
pub fn prop2_approx(c: f64, a: f64, u: f64, omega: f64, c_inf: Option<&CConstantEstimate>) -> Result<f64> {
    if !(a > -1.0) {
        return Err(Error::invalid(format!("need a > -1, got {a}")));
    }
    if a < 0.0 {
        return Ok(1.0);
    }
    if a == 0.0 {
        return Err(Error::invalid("a = 0 is not a large fluctuation"));
    }
    let est = c_inf.ok_or_else(|| Error::invalid("a > 0 needs the constant C(T1, T2, x; inf)"))?;
    if !est.spec.is_infinite() || est.spec.c != c {
        return Err(Error::SpecMismatch(format!("need C(.; inf) for c = {c}, got {:?}", est.spec)));
    }
    Ok((-2.0 * c * (omega - u)).exp() * est.estimate.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::large_fluctuation_log_rate;
    use crate::stats::Accumulator;

    #[test]
    fn exact_skeleton_preserves_the_stationary_law() {
        // an Exp(2c) start stays Exp(2c) however coarse the steps
        let c = 1.5;
        let exp = Exp::new(2.0 * c).unwrap();
        let mut rng = substream(5, tags::FORWARD, 0);
        let n = 40_000;
        let mut tail = Accumulator::default();
        for _ in 0..n {
            let mut q = [exp.sample(&mut rng)];
            reflected_bm_exact(c, 0.7, 1, &mut q, &mut rng).unwrap();
            tail.push(f64::from(u8::from(q[0] > 0.4)));
        }
        let exact = stationary_tail(c, 0.4).unwrap();
        assert!((tail.mean() - exact).abs() < 4.0 * tail.std_error(), "{} vs {exact}", tail.mean());
        assert!(reflected_bm_exact(c, 1.0, 0, &mut [0.0], &mut rng).is_err());
    }

    #[test]
    fn tail_examples() {
        assert_eq!(stationary_tail(1.0, 0.0).unwrap(), 1.0);
        assert!((stationary_tail(1.0, 1.0).unwrap() - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert_eq!(stationary_tail(2.0, 0.5).unwrap(), stationary_tail(1.0, 1.0).unwrap());
        assert!(stationary_tail(1.0, -1.0).is_err());
    }

    /// `P(Q(T) > omega | Q(0) > u)` by integrating the level-conditioned
    /// formula against the exponential overshoot density.
    fn q2_by_quadrature(c: f64, u: f64, omega: f64, t: f64) -> f64 {
        let n = 20_000;
        let upper = 40.0 / (2.0 * c);
        let h = upper / n as f64;
        let f = |e: f64| {
            let q = BmTransientQuery::new(c, u + e, omega, t).unwrap();
            2.0 * c * (-2.0 * c * e).exp() * transient_exceed_given_level(&q).unwrap()
        };
        // composite Simpson
        let mut s = f(0.0) + f(upper);
        for k in 1..n {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn q2_is_the_overshoot_average_of_q1() {
        for (c, u, omega, t) in [(1.0, 1.0, 1.2, 1.0), (1.0, 1.0, 1.5, 0.5), (2.0, 0.5, 0.3, 0.5), (0.5, 1.0, 0.2, 2.0)] {
            let q = BmTransientQuery::new(c, u, omega, t).unwrap();
            let closed = transient_exceed_given_exceed(&q).unwrap();
            assert!((closed - q2_by_quadrature(c, u, omega, t)).abs() < 1e-9, "{q:?}");
        }
    }

    #[test]
    fn limits_in_elapsed_time() {
        let tiny = 1e-6;
        let long = 1e3;
        let up = BmTransientQuery::new(1.0, 2.0, 1.0, tiny).unwrap();
        let down = BmTransientQuery::new(1.0, 1.0, 2.0, tiny).unwrap();
        assert!((transient_exceed_given_level(&up).unwrap() - 1.0).abs() < 1e-10);
        assert!(transient_exceed_given_level(&down).unwrap().abs() < 1e-10);
        assert!((transient_exceed_given_exceed(&down).unwrap() - (-2.0f64).exp()).abs() < 1e-10);
        let l = BmTransientQuery::new(1.0, 1.0, 0.7, long).unwrap();
        assert!((transient_exceed_given_level(&l).unwrap() - (-1.4f64).exp()).abs() < 1e-10);
        assert!((transient_exceed_given_exceed(&l).unwrap() - (-1.4f64).exp()).abs() < 1e-10);
        assert!(BmTransientQuery::new(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn closed_forms_stay_in_unit_interval() {
        for c in [0.2, 1.0, 3.0] {
            for u in [0.0, 0.5, 2.0, 10.0] {
                for omega in [0.0, 0.3, 1.0, 5.0] {
                    for t in [1e-4, 0.1, 1.0, 10.0, 200.0] {
                        let q = BmTransientQuery::new(c, u, omega, t).unwrap();
                        let a = transient_exceed_given_level(&q).unwrap();
                        let b = transient_exceed_given_exceed(&q).unwrap();
                        assert!((0.0..=1.0 + 1e-12).contains(&a), "{q:?}: {a}");
                        assert!((-1e-12..=1.0 + 1e-12).contains(&b), "{q:?}: {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn large_levels_do_not_overflow() {
        let q = BmTransientQuery::new(2.0, 200.0, 201.0, 1.0).unwrap();
        let p = transient_exceed_given_exceed(&q).unwrap();
        assert!(p.is_finite() && p > 0.0 && p < 1.0);
    }

    #[test]
    fn conditional_initial_law() {
        let (c, u, w) = (1.5, 2.0, 0.3);
        let mut mean = Accumulator::default();
        let mut tail = Accumulator::default();
        for i in 0..50_000 {
            let q = sample_conditional_initial(c, u, &mut substream(8, tags::CONDITIONAL, i)).unwrap();
            assert!(q > u);
            mean.push(q);
            tail.push((q > u + w) as u8 as f64);
        }
        assert!((mean.mean() - (u + 1.0 / (2.0 * c))).abs() < 4.0 * mean.std_error());
        assert!((tail.mean() - (-2.0 * c * w).exp()).abs() < 4.0 * tail.std_error());
        let a = sample_conditional_initial(c, u, &mut substream(8, tags::CONDITIONAL, 3)).unwrap();
        let b = sample_conditional_initial(c, u, &mut substream(8, tags::CONDITIONAL, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn c_constant_zero_cases() {
        let s = CConstantSpec::new(0.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let e = estimate_c(&s, 0.01, 10, 1).unwrap().estimate;
        assert_eq!((e.value, e.std_error), (0.0, 0.0));
        let s = CConstantSpec::new(0.0, 1.0, 0.2, f64::NEG_INFINITY, 1.0).unwrap();
        assert_eq!(estimate_c(&s, 0.01, 10, 1).unwrap().estimate.value, 0.0);
        let s = CConstantSpec::new(0.0, 1.0, 0.2, -20.0, 1.0).unwrap();
        assert!(estimate_c(&s, 0.01, 200, 1).unwrap().estimate.value <= (-40.0f64).exp());
    }

    #[test]
    fn c_constant_monotone_pathwise() {
        let (step, reps, seed) = (1.0 / 256.0, 2000, 9);
        let base = |x: f64, w: f64| {
            c_constant_replicates(&CConstantSpec::new(0.0, 1.0, x, w, 1.0).unwrap(), step, reps, seed).unwrap()
        };
        let w_lo = base(0.2, 0.1);
        let w_hi = base(0.2, 0.5);
        let w_inf = base(0.2, f64::INFINITY);
        let x_hi = base(0.4, 0.5);
        for i in 0..reps as usize {
            assert!(w_lo[i].unwrap() <= w_hi[i].unwrap());
            assert!(w_hi[i].unwrap() <= w_inf[i].unwrap());
            assert!(x_hi[i].unwrap() <= w_hi[i].unwrap());
        }
    }

    #[test]
    fn approximations() {
        let spec = CConstantSpec::new(0.0, 1.0, 0.2, 0.0, 1.0).unwrap();
        let est = CConstantEstimate { spec, estimate: MonteCarloEstimate::exact(0.8, 1, 0, 0.01) };
        assert_eq!(prop1_approx(1.0, 0.0, &est).unwrap(), 0.8);
        assert!(prop1_approx(1.0, 0.5, &est).is_err());
        let zero = CConstantEstimate { spec, estimate: MonteCarloEstimate::exact(0.0, 1, 0, 0.01) };
        assert_eq!(prop1_approx(1.0, 0.0, &zero).unwrap(), 0.0);

        assert_eq!(prop2_approx(1.0, -0.5, 3.0, 1.5, None).unwrap(), 1.0);
        assert!(prop2_approx(1.0, -1.0, 3.0, 0.0, None).is_err());
        let inf_spec = CConstantSpec::new(0.0, 1.0, 0.2, f64::INFINITY, 1.0).unwrap();
        let inf = CConstantEstimate { spec: inf_spec, estimate: MonteCarloEstimate::exact(1.7, 1, 0, 0.01) };
        let v = prop2_approx(1.0, 1.0, 3.0, 6.0, Some(&inf)).unwrap();
        assert!((v - (-6.0f64).exp() * 1.7).abs() < 1e-15);
        assert!(prop2_approx(1.0, 1.0, 3.0, 6.0, Some(&est)).is_err());
    }

    #[test]
    fn decay_matches_general_rate_for_brownian_input() {
        let hurst = HurstParam::new(0.5).unwrap();
        for c in [0.3, 1.0, 2.5] {
            for a in [0.1, 0.5, 1.0, 3.0] {
                for u in [0.5, 2.0, 6.0] {
                    let rate = large_fluctuation_log_rate(hurst, c, a).unwrap();
                    let general = (rate * u).exp();
                    let omega = (1.0 + a) * u;
                    let brownian = (-2.0 * c * (omega - u)).exp();
                    assert!((general - brownian).abs() <= 1e-12 * brownian);
                }
            }
        }
    }
}
