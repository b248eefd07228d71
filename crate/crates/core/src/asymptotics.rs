//! Deterministic asymptotic formulas. Nothing here simulates: constants
//! come in as [`ConstantEstimate`] records and are checked against the
//! parameters they are used with.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::berman::{ConstantEstimate, ConstantKind};
use crate::error::{ensure_finite, ensure_nonnegative, ensure_positive, Error, Result};
use crate::gaussian_paths::HurstParam;
use crate::stats::ratio_std_error;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal tail `1 - Phi(z)`.
pub fn normal_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `ln Phi(z)`, finite far into the lower tail.
pub fn ln_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        return normal_cdf(z).ln();
    }
    // Mills-ratio expansion of the lower tail
    let z2 = z * z;
    -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)).ln()
}

/// The scaling constants of the fBm queue at level `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub a: f64,
    pub b_const: f64,
    pub t_star: f64,
    pub delta_u: f64,
    pub v_u: f64,
}

pub fn derived_constants(hurst: HurstParam, c: f64, u: f64) -> Result<DerivedConstants> {
    ensure_positive("drain rate", c)?;
    ensure_positive("level u", u)?;
    let h = hurst.value();
    let t_star = h / (c * (1.0 - h));
    let a = t_star.powf(-h) / (1.0 - h);
    let b_const = t_star.powf(-h - 2.0) * h;
    let delta_u = 2f64.powf(1.0 / (2.0 * h)) * t_star * a.powf(-1.0 / h) * u.powf(-(1.0 - h) / h);
    Ok(DerivedConstants { a, b_const, t_star, delta_u, v_u: u * delta_u })
}

/// Limits of the scaled windows and the scaled sojourn thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournWindows {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub x: f64,
    pub y: f64,
}

impl SojournWindows {
    /// Requires `t1 > x >= 0`, `0 <= t2 < t3` and `t3 - t2 > y >= 0`.
    pub fn new(t1: f64, t2: f64, t3: f64, x: f64, y: f64) -> Result<Self> {
        for (name, v) in [("t1", t1), ("t2", t2), ("t3", t3)] {
            ensure_finite(name, v)?;
        }
        ensure_nonnegative("x", x)?;
        ensure_nonnegative("y", y)?;
        if t1 <= x {
            return Err(Error::invalid(format!("window t1 = {t1} must exceed x = {x}")));
        }
        if !(t2 >= 0.0 && t3 > t2) {
            return Err(Error::invalid(format!("need 0 <= t2 < t3, got t2 = {t2}, t3 = {t3}")));
        }
        if t3 - t2 <= y {
            return Err(Error::invalid(format!("window length t3 - t2 = {} must exceed y = {y}", t3 - t2)));
        }
        Ok(SojournWindows { t1, t2, t3, x, y })
    }

    pub fn scaled(&self, factor: f64) -> SojournWindows {
        SojournWindows {
            t1: factor * self.t1,
            t2: factor * self.t2,
            t3: factor * self.t3,
            x: factor * self.x,
            y: factor * self.y,
        }
    }
}

/// Threshold shift `h(u)` defining `omega(u) = u + h(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FluctuationRegime {
    SmallBm { w: f64 },
    LargeBm { a: f64 },
    SmallFbm { lambda: f64 },
    LargeFbm { a: f64 },
}

impl FluctuationRegime {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FluctuationRegime::SmallBm { w } => ensure_finite("w", w),
            FluctuationRegime::SmallFbm { lambda } => ensure_finite("lambda", lambda),
            FluctuationRegime::LargeBm { a } | FluctuationRegime::LargeFbm { a } => {
                if a.is_finite() && a > -1.0 && a != 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("large-fluctuation shift needs a > -1, a != 0; got {a}")))
                }
            }
        }
    }

    pub fn is_brownian_regime(&self) -> bool {
        matches!(self, FluctuationRegime::SmallBm { .. } | FluctuationRegime::LargeBm { .. })
    }

    /// `tau = lambda / (A^2 (1 - H))` for the small fBm regime.
    pub fn tau(&self, hurst: HurstParam, c: f64) -> Option<f64> {
        match *self {
            FluctuationRegime::SmallFbm { lambda } => {
                let a = derived_constants(hurst, c, 1.0).ok()?.a;
                Some(lambda / (a * a * (1.0 - hurst.value())))
            }
            _ => None,
        }
    }

    /// `(1 + a)^{(1 - 2H) / H}` for the large fBm regime.
    pub fn a_tilde(&self, hurst: HurstParam) -> Option<f64> {
        match *self {
            FluctuationRegime::LargeFbm { a } => Some(a_tilde(hurst, a)),
            _ => None,
        }
    }

    /// `omega(u)`, with every vanishing correction set to zero.
    pub fn omega(&self, hurst: HurstParam, c: f64, u: f64) -> f64 {
        match *self {
            FluctuationRegime::SmallBm { w } => u + w,
            FluctuationRegime::LargeBm { a } | FluctuationRegime::LargeFbm { a } => (1.0 + a) * u,
            FluctuationRegime::SmallFbm { .. } => {
                let tau = self.tau(hurst, c).unwrap_or(f64::NAN);
                u + tau * u.powf(2.0 * hurst.value() - 1.0)
            }
        }
    }
}

pub fn a_tilde(hurst: HurstParam, a: f64) -> f64 {
    let h = hurst.value();
    (1.0 + a).powf((1.0 - 2.0 * h) / h)
}

const MATCH_TOL: f64 = 1e-12;

fn same(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= MATCH_TOL * a.abs().max(b.abs())
}

fn mismatch(what: &str, kind: &ConstantKind) -> Error {
    Error::SpecMismatch(format!("expected {what}, got {kind:?}"))
}

pub(crate) fn check_bar_single(est: &ConstantEstimate, hurst: HurstParam, t1: f64, x: f64) -> Result<()> {
    match est.kind {
        ConstantKind::BarSingle { hurst: h, t1: a, x: b } if h == hurst && same(a, t1) && same(b, x) => Ok(()),
        ref k => Err(mismatch(&format!("single constant (H = {}, T1 = {t1}, x = {x})", hurst.value()), k)),
    }
}

pub(crate) fn check_bar_joint(
    est: &ConstantEstimate,
    hurst: HurstParam,
    windows: &SojournWindows,
    lambda: f64,
) -> Result<()> {
    match est.kind {
        ConstantKind::BarJoint(s)
            if s.hurst == hurst
                && same(s.t1, windows.t1)
                && same(s.t2, windows.t2)
                && same(s.t3, windows.t3)
                && same(s.x, windows.x)
                && same(s.y, windows.y)
                && same(s.lambda, lambda) =>
        {
            Ok(())
        }
        ref k => Err(mismatch(&format!("joint constant for {windows:?}, lambda = {lambda}"), k)),
    }
}

fn check_pickands(est: &ConstantEstimate, hurst: HurstParam) -> Result<()> {
    match est.kind {
        ConstantKind::Pickands { hurst: h, .. } if h == hurst => Ok(()),
        ConstantKind::Alpha2Pickands { .. } => Err(mismatch("a Pickands constant for an fBm field", &est.kind)),
        ref k => Err(mismatch(&format!("Pickands constant for H = {}", hurst.value()), k)),
    }
}

/// Common factor `sqrt(2 pi) (AB)^{-1/2} Psi(A u^{1-H}) / (u^{1-H} Delta(u))`.
pub fn sojourn_prefactor(hurst: HurstParam, c: f64, u: f64) -> Result<f64> {
    let d = derived_constants(hurst, c, u)?;
    let h = hurst.value();
    let scale = u.powf(1.0 - h);
    let ln_prefactor = (2.0 * std::f64::consts::PI).sqrt().ln() - 0.5 * (d.a * d.b_const).ln()
        - scale.ln()
        - d.delta_u.ln()
        + normal_tail(d.a * scale).ln();
    Ok(ln_prefactor.exp())
}

/// Approximation of `P(v(u)^{-1} * sojourn of Q above u on [0, T1(u)] > x)`.
pub fn marginal_sojourn_asymptotic(
    hurst: HurstParam,
    c: f64,
    u: f64,
    windows: &SojournWindows,
    bar_x: &ConstantEstimate,
    pickands: &ConstantEstimate,
) -> Result<f64> {
    check_bar_single(bar_x, hurst, windows.t1, windows.x)?;
    check_pickands(pickands, hurst)?;
    Ok(pickands.estimate.value * bar_x.estimate.value * sojourn_prefactor(hurst, c, u)?)
}

/// Approximation of the joint sojourn probability with shift `tau u^{2H-1}`.
pub fn joint_sojourn_asymptotic(
    hurst: HurstParam,
    c: f64,
    u: f64,
    windows: &SojournWindows,
    lambda: f64,
    bar_xy: &ConstantEstimate,
    pickands: &ConstantEstimate,
) -> Result<f64> {
    check_bar_joint(bar_xy, hurst, windows, lambda)?;
    check_pickands(pickands, hurst)?;
    Ok(pickands.estimate.value * bar_xy.estimate.value * sojourn_prefactor(hurst, c, u)?)
}

/// Limit of the conditional sojourn probability in the small fluctuation
/// regime: the joint constant over the single one.
pub fn thm1_limit(bar_xy: &ConstantEstimate, bar_x: &ConstantEstimate) -> Result<f64> {
    let spec = match bar_xy.kind {
        ConstantKind::BarJoint(s) => s,
        ref k => return Err(mismatch("a joint constant", k)),
    };
    check_bar_single(bar_x, spec.hurst, spec.t1, spec.x)?;
    if bar_x.estimate.value <= 0.0 {
        return Err(Error::invalid("single constant is zero (x >= T1); the conditional limit is undefined"));
    }
    Ok(bar_xy.estimate.value / bar_x.estimate.value)
}

/// Delta-method standard error of [`thm1_limit`], treating the two
/// estimates as independent.
pub fn thm1_limit_std_error(bar_xy: &ConstantEstimate, bar_x: &ConstantEstimate) -> f64 {
    ratio_std_error(
        bar_xy.estimate.value,
        bar_xy.estimate.std_error,
        bar_x.estimate.value,
        bar_x.estimate.std_error,
    )
}

/// Constants entering the large fluctuation envelope.
#[derive(Debug, Clone)]
pub struct Thm3Estimates {
    /// Single constant over `[0, T1]` at `x`.
    pub bar_x: ConstantEstimate,
    /// Single constant over `[0, a~ (T3 - T2)]` at `a~ y`.
    pub bar_ay_upper: ConstantEstimate,
    /// Joint constant at `(a~ T1; 0, a~ T2, a~ T3)`, thresholds `(a~ x, a~ y)`.
    pub bar_joint_lower: ConstantEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm3Envelope {
    pub decay: f64,
    pub lower: f64,
    pub upper: f64,
    pub log_rate: f64,
    pub lower_se: f64,
    pub upper_se: f64,
}

/// `-A^2 ((1+a)^{2-2H} - 1) / 2`.
pub fn large_fluctuation_log_rate(hurst: HurstParam, c: f64, a: f64) -> Result<f64> {
    let d = derived_constants(hurst, c, 1.0)?;
    let h = hurst.value();
    Ok(-0.5 * d.a * d.a * ((1.0 + a).powf(2.0 - 2.0 * h) - 1.0))
}

/// Envelope of the large fluctuation regime for `a > 0`.
pub fn thm3_envelope(
    hurst: HurstParam,
    c: f64,
    u: f64,
    a: f64,
    windows: &SojournWindows,
    estimates: &Thm3Estimates,
) -> Result<Thm3Envelope> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::invalid(format!("the envelope needs a > 0, got {a}")));
    }
    ensure_positive("level u", u)?;
    let at = a_tilde(hurst, a);
    let scaled = windows.scaled(at);
    check_bar_single(&estimates.bar_x, hurst, windows.t1, windows.x)?;
    check_bar_single(&estimates.bar_ay_upper, hurst, at * (windows.t3 - windows.t2), at * windows.y)?;
    check_bar_joint(&estimates.bar_joint_lower, hurst, &scaled, 0.0)?;

    let h = hurst.value();
    let log_rate = large_fluctuation_log_rate(hurst, c, a)?;
    let decay = (log_rate * u.powf(2.0 - 2.0 * h)).exp();
    let weight = at.powf(1.0 - h);
    let den = &estimates.bar_x.estimate;
    if den.value <= 0.0 {
        return Err(Error::invalid("single constant in the denominator is zero"));
    }
    let up = &estimates.bar_ay_upper.estimate;
    let lo = &estimates.bar_joint_lower.estimate;
    let upper = weight * up.value / den.value;
    let lower = weight * lo.value / den.value;
    let upper_se = weight * ratio_std_error(up.value, up.std_error, den.value, den.std_error);
    let lower_se = weight * ratio_std_error(lo.value, lo.std_error, den.value, den.std_error);
    // the common denominator cancels when comparing the two bounds
    let gap_se = weight / den.value * (up.std_error.powi(2) + lo.std_error.powi(2)).sqrt();
    if lower - upper > 3.0 * gap_se {
        return Err(Error::Inconsistent(format!(
            "lower bound {lower} exceeds upper bound {upper} beyond combined Monte Carlo error {gap_se}"
        )));
    }
    Ok(Thm3Envelope { decay, lower, upper, log_rate, lower_se, upper_se })
}

/// Large fluctuation limit: 1 for `a` in (-1, 0), the envelope for `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LargeFluctuationLimit {
    One,
    Envelope(Thm3Envelope),
}

pub fn large_fluctuation_limit(
    hurst: HurstParam,
    c: f64,
    u: f64,
    a: f64,
    windows: &SojournWindows,
    estimates: Option<&Thm3Estimates>,
) -> Result<LargeFluctuationLimit> {
    if a > -1.0 && a < 0.0 {
        return Ok(LargeFluctuationLimit::One);
    }
    let est = estimates.ok_or_else(|| Error::invalid("a > 0 needs the envelope constants"))?;
    thm3_envelope(hurst, c, u, a, windows, est).map(LargeFluctuationLimit::Envelope)
}
