//! The stationary workload process `Q` and its sojourn functionals.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};
use crate::gaussian_paths::{write_series_csv, FbmSampler, GaussianPath, HurstParam, PathKind, SamplerScratch, TimeGrid};

const LEVEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub hurst: HurstParam,
    /// Service rate `c`.
    pub drain: f64,
}

impl QueueParams {
    pub fn new(hurst: f64, drain: f64) -> Result<Self> {
        let hurst = HurstParam::new(hurst)?;
        ensure_positive("drain rate", drain)?;
        Ok(QueueParams { hurst, drain })
    }

    /// `t* = H / (c (1 - H))`, the time scale on which the supremum is attained.
    pub fn critical_time(&self) -> f64 {
        let h = self.hurst.value();
        h / (self.drain * (1.0 - h))
    }

    /// Look-ahead used when targeting level `u`: `8 u t*`.
    pub fn default_horizon(&self, u: f64) -> f64 {
        8.0 * u.max(1.0) * self.critical_time()
    }

    /// Crude bound `exp(-c^2 h^{2-2H} / 2)` on the chance that the supremum
    /// is attained beyond the look-ahead `horizon`.
    pub fn truncation_tail_bound(&self, horizon: f64) -> f64 {
        let h = self.hurst.value();
        (-0.5 * self.drain * self.drain * horizon.powf(2.0 - 2.0 * h)).exp()
    }
}

/// Sampled workload on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    /// Look-ahead used for the supremum; `None` when the path is exact in
    /// that respect (forward recursion or Brownian exponential tail).
    pub truncation_horizon: Option<f64>,
}

impl WorkloadPath {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_series_csv(path, "q", &self.grid, &self.values)
    }
}

/// Anything sampled on a uniform grid.
pub trait SampledPath {
    fn grid(&self) -> &TimeGrid;
    fn values(&self) -> &[f64];
}

impl SampledPath for WorkloadPath {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

impl SampledPath for GaussianPath {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A level in `[-inf, inf)`; `exp` of the sentinel is 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExtendedLevel(f64);

impl ExtendedLevel {
    pub const NEG_INFINITY: ExtendedLevel = ExtendedLevel(f64::NEG_INFINITY);

    pub fn finite(value: f64) -> Self {
        ExtendedLevel(value)
    }

    pub fn is_neg_infinity(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn value(self) -> Option<f64> {
        (!self.is_neg_infinity()).then_some(self.0)
    }

    /// Raw value, `f64::NEG_INFINITY` for the sentinel.
    pub fn raw(self) -> f64 {
        self.0
    }

    pub fn exp(self) -> f64 {
        if self.is_neg_infinity() {
            0.0
        } else {
            self.0.exp()
        }
    }
}

/// How the supremum beyond the simulated grid is handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// Supremum over `[t, t + horizon]` only.
    Truncated { horizon: f64 },
    /// `H = 1/2`: the future supremum after the window end is an
    /// independent Exp(2c) variable and is drawn exactly.
    ExactBrownian,
}

/// Reusable sampler of `Q` on `[0, window_end]`.
pub struct StationaryWindowSampler {
    params: QueueParams,
    window: TimeGrid,
    tail: Tail,
    look_ahead: usize,
    driver: FbmSampler,
    overshoot: Option<Exp<f64>>,
}

/// Scratch buffers for [`StationaryWindowSampler`].
#[derive(Default)]
pub struct WindowScratch {
    fbm: SamplerScratch,
    path: Vec<f64>,
    deque: VecDeque<usize>,
}

impl StationaryWindowSampler {
    pub fn new(params: QueueParams, window_end: f64, step: f64, tail: Tail) -> Result<Self> {
        ensure_positive("window end", window_end)?;
        ensure_positive("step", step)?;
        let window = TimeGrid::covering(window_end, step)?;
        let (driver_grid, look_ahead, overshoot) = match tail {
            Tail::Truncated { horizon } => {
                ensure_positive("horizon", horizon)?;
                let look_ahead = (horizon / step).round().max(1.0) as usize;
                let bound = params.truncation_tail_bound(horizon);
                if bound > 1e-3 {
                    log::warn!("look-ahead {horizon} may truncate the supremum (crude tail bound {bound:.3e})");
                }
                let total = window.count() + look_ahead;
                if total > crate::gaussian_paths::MAX_GRID_POINTS {
                    return Err(Error::Resource(format!(
                        "window plus look-ahead needs {total} grid points (cap {})",
                        crate::gaussian_paths::MAX_GRID_POINTS
                    )));
                }
                (TimeGrid::new(0.0, step, total)?, look_ahead, None)
            }
            Tail::ExactBrownian => {
                if !params.hurst.is_brownian() {
                    return Err(Error::invalid("the exact exponential tail requires H = 1/2"));
                }
                let rate = 2.0 * params.drain;
                let exp = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
                (window, 0, Some(exp))
            }
        };
        let driver = FbmSampler::new(driver_grid, params.hurst)?;
        Ok(StationaryWindowSampler { params, window, tail, look_ahead, driver, overshoot })
    }

    pub fn window(&self) -> &TimeGrid {
        &self.window
    }

    /// Writes `Q(t_i)` for the window grid into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut WindowScratch, out: &mut Vec<f64>) {
        self.driver.sample_into(rng, &mut scratch.fbm, &mut scratch.path);
        let step = self.window.step();
        let c = self.params.drain;
        for (k, v) in scratch.path.iter_mut().enumerate() {
            *v -= c * step * k as f64;
        }
        let n = self.window.count();
        out.clear();
        match self.tail {
            Tail::Truncated { .. } => sliding_future_max(&scratch.path, n, self.look_ahead, &mut scratch.deque, out),
            Tail::ExactBrownian => {
                let overshoot = self.overshoot.expect("exact tail has an overshoot law").sample(rng);
                let x = &scratch.path;
                out.resize(n, 0.0);
                let mut best = x[n - 1] + overshoot;
                for i in (0..n).rev() {
                    best = best.max(x[i]);
                    out[i] = best - x[i];
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WorkloadPath {
        let mut values = Vec::new();
        self.sample_into(rng, &mut WindowScratch::default(), &mut values);
        WorkloadPath { grid: self.window, values, truncation_horizon: self.horizon() }
    }

    fn horizon(&self) -> Option<f64> {
        match self.tail {
            Tail::Truncated { horizon } => Some(horizon),
            Tail::ExactBrownian => None,
        }
    }
}

/// `out[i] = max_{j in [i, i + look_ahead]} x[j] - x[i]` for `i < n`.
fn sliding_future_max(x: &[f64], n: usize, look_ahead: usize, deque: &mut VecDeque<usize>, out: &mut Vec<f64>) {
    deque.clear();
    out.resize(n, 0.0);
    for j in (0..x.len()).rev() {
        while let Some(&back) = deque.back() {
            if x[back] <= x[j] {
                deque.pop_back();
            } else {
                break;
            }
        }
        deque.push_back(j);
        while let Some(&front) = deque.front() {
            if front > j + look_ahead {
                deque.pop_front();
            } else {
                break;
            }
        }
        if j < n {
            out[j] = x[deque[0]] - x[j];
        }
    }
}

/// Stationary workload on `[0, window_end]` from one fBm path on
/// `[0, window_end + horizon]`, with the supremum truncated at `horizon`.
pub fn simulate_stationary_window<R: Rng + ?Sized>(
    params: QueueParams,
    window_end: f64,
    horizon: f64,
    step: f64,
    rng: &mut R,
) -> Result<WorkloadPath> {
    let sampler = StationaryWindowSampler::new(params, window_end, step, Tail::Truncated { horizon })?;
    Ok(sampler.sample(rng))
}

/// Same construction driven by an already sampled fBm path.
pub fn stationary_from_driver(
    params: QueueParams,
    driver: &GaussianPath,
    window_end: f64,
    horizon: f64,
) -> Result<WorkloadPath> {
    ensure_positive("window end", window_end)?;
    ensure_positive("horizon", horizon)?;
    check_driver(driver)?;
    let grid = driver.grid;
    let step = grid.step();
    let window = TimeGrid::covering(window_end, step)?;
    let look_ahead = (horizon / step).round().max(1.0) as usize;
    if window.count() + look_ahead > grid.count() {
        return Err(Error::invalid(format!(
            "driver ends at {} but window plus horizon reaches {}",
            grid.end(),
            window.end() + horizon
        )));
    }
    let x: Vec<f64> = driver.values[..window.count() + look_ahead]
        .iter()
        .enumerate()
        .map(|(k, b)| b - params.drain * grid.point(k))
        .collect();
    let mut values = Vec::new();
    sliding_future_max(&x, window.count(), look_ahead, &mut VecDeque::new(), &mut values);
    Ok(WorkloadPath { grid: window, values, truncation_horizon: Some(horizon) })
}

fn check_driver(driver: &GaussianPath) -> Result<()> {
    if driver.kind != PathKind::Fbm {
        return Err(Error::invalid("driver must be an fBm path"));
    }
    if driver.grid.start() != 0.0 || driver.values[0] != 0.0 {
        return Err(Error::invalid("driver must start at t = 0 with value 0"));
    }
    Ok(())
}

/// Forward recursion `Q(t) = X(t) + max(q0, -min_{s <= t} X(s))` with
/// `X(t) = B(t) - c t`, in place on a buffer of driver values.
pub fn forward_in_place(drain: f64, step: f64, q0: f64, values: &mut [f64]) {
    let mut running_min = 0.0f64;
    for (k, v) in values.iter_mut().enumerate() {
        let x = *v - drain * step * k as f64;
        running_min = running_min.min(x);
        *v = x + q0.max(-running_min);
    }
}

/// Workload started from `q0` and driven by the given fBm path.
pub fn simulate_forward(params: QueueParams, q0: f64, driver: &GaussianPath) -> Result<WorkloadPath> {
    ensure_nonnegative("initial workload", q0)?;
    check_driver(driver)?;
    let mut values = driver.values.clone();
    forward_in_place(params.drain, driver.grid.step(), q0, &mut values);
    Ok(WorkloadPath { grid: driver.grid, values, truncation_horizon: None })
}

/// `step * #{i : v_i > level}`.
pub fn sojourn_in_slice(values: &[f64], step: f64, level: f64) -> f64 {
    step * values.iter().filter(|&&v| v > level).count() as f64
}

/// Time spent strictly above `level` on grid points `t` with `a < t <= b`.
pub fn sojourn_time<P: SampledPath + ?Sized>(path: &P, level: f64, a: f64, b: f64) -> Result<f64> {
    let range = path.grid().window(a, b)?;
    Ok(sojourn_in_slice(&path.values()[range], path.grid().step(), level))
}

/// Largest level whose sojourn within the window exceeds `x`:
/// the `m`-th largest value with `m = floor(x / step) + 1`, or the
/// sentinel when `m` exceeds the window length. Reorders `values`.
pub fn sojourn_level_in_place(values: &mut [f64], step: f64, x: f64) -> Result<ExtendedLevel> {
    ensure_positive("step", step)?;
    ensure_nonnegative("duration", x)?;
    if values.is_empty() {
        return Err(Error::invalid("sojourn level of an empty window"));
    }
    let m = (x / step + LEVEL_EPS).floor() as usize + 1;
    if m > values.len() {
        return Ok(ExtendedLevel::NEG_INFINITY);
    }
    if m == 1 {
        return Ok(ExtendedLevel::finite(values.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    }
    let (_, nth, _) = values.select_nth_unstable_by(m - 1, |a, b| b.total_cmp(a));
    Ok(ExtendedLevel::finite(*nth))
}

pub fn sojourn_level(values: &[f64], step: f64, x: f64) -> Result<ExtendedLevel> {
    let mut buf = values.to_vec();
    sojourn_level_in_place(&mut buf, step, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_paths::sample_fbm;
    use crate::rng::{substream, tags};
    use proptest::prelude::*;

    fn unit_grid_path(values: Vec<f64>) -> WorkloadPath {
        WorkloadPath { grid: TimeGrid::new(0.0, 1.0, values.len()).unwrap(), values, truncation_horizon: None }
    }

    #[test]
    fn sojourn_time_examples() {
        let p = unit_grid_path(vec![3.0, 1.0, 2.0]);
        assert_eq!(sojourn_time(&p, 1.5, -1.0, 2.0).unwrap(), 2.0);
        assert_eq!(sojourn_time(&p, 10.0, -1.0, 2.0).unwrap(), 0.0);
        // ties do not count
        assert_eq!(sojourn_time(&p, 2.0, -1.0, 2.0).unwrap(), 1.0);
        assert!(sojourn_time(&p, 0.0, 0.0, 5.0).is_err());

        let step = 0.01;
        let grid = TimeGrid::covering(3.0, step).unwrap();
        let constant = WorkloadPath { grid, values: vec![5.0; grid.count()], truncation_horizon: None };
        let l = sojourn_time(&constant, 4.0, 0.5, 2.5).unwrap();
        assert!((l - 2.0).abs() <= step + 1e-12);
    }

    #[test]
    fn sojourn_level_examples() {
        assert_eq!(sojourn_level(&[3.0, 1.0, 2.0], 1.0, 1.5).unwrap(), ExtendedLevel::finite(2.0));
        assert!(sojourn_level(&[3.0, 1.0, 2.0], 1.0, 3.0).unwrap().is_neg_infinity());
        assert!(sojourn_level(&[3.0, 1.0, 2.0], 1.0, 7.5).unwrap().is_neg_infinity());
        assert_eq!(sojourn_level(&[3.0, 1.0, 2.0], 1.0, 0.0).unwrap(), ExtendedLevel::finite(3.0));
        assert!(sojourn_level(&[], 1.0, 0.0).is_err());
        assert_eq!(ExtendedLevel::NEG_INFINITY.exp(), 0.0);
    }

    #[test]
    fn forward_with_zero_driver() {
        let grid = TimeGrid::covering(3.0, 0.25).unwrap();
        let driver = GaussianPath::new(grid, vec![0.0; grid.count()], PathKind::Fbm).unwrap();
        let params = QueueParams::new(0.5, 1.0).unwrap();
        let q = simulate_forward(params, 1.0, &driver).unwrap();
        for (t, v) in grid.points().zip(&q.values) {
            assert!((v - (1.0 - t).max(0.0)).abs() < 1e-12, "t = {t}: {v}");
        }
        assert!(simulate_forward(params, -1.0, &driver).is_err());
    }

    #[test]
    fn forward_from_empty_is_reflection() {
        let grid = TimeGrid::covering(2.0, 1.0 / 128.0).unwrap();
        let params = QueueParams::new(0.7, 0.5).unwrap();
        let driver = sample_fbm(&grid, params.hurst, &mut substream(1, tags::PATH, 0)).unwrap();
        let q = simulate_forward(params, 0.0, &driver).unwrap();
        assert_eq!(q.values[0], 0.0);
        let mut running_min = 0.0f64;
        for (k, v) in q.values.iter().enumerate() {
            let x = driver.values[k] - params.drain * grid.point(k);
            running_min = running_min.min(x);
            assert!(*v >= 0.0);
            assert!((v - (x - running_min)).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_drain_empties_the_queue() {
        let params = QueueParams::new(0.5, 1e3).unwrap();
        let mut hits = 0;
        for i in 0..200 {
            let q = simulate_stationary_window(params, 0.01, 1.0, 1e-3, &mut substream(2, tags::PATH, i)).unwrap();
            hits += (q.values[0] > 1.0) as u32;
        }
        assert_eq!(hits, 0);
    }

    #[test]
    fn sliding_max_matches_brute_force() {
        let x = [0.0, 1.0, -2.0, 3.0, 0.5, 0.2, 4.0, -1.0];
        let mut out = Vec::new();
        sliding_future_max(&x, 5, 2, &mut VecDeque::new(), &mut out);
        for i in 0..5 {
            let end = (i + 2).min(x.len() - 1);
            let best = x[i..=end].iter().copied().fold(f64::MIN, f64::max);
            assert_eq!(out[i], best - x[i]);
        }
    }

    #[test]
    fn longer_horizon_never_decreases_workload() {
        let params = QueueParams::new(0.7, 1.0).unwrap();
        let grid = TimeGrid::covering(12.0, 0.01).unwrap();
        let driver = sample_fbm(&grid, params.hurst, &mut substream(3, tags::PATH, 0)).unwrap();
        let short = stationary_from_driver(params, &driver, 2.0, 4.0).unwrap();
        let long = stationary_from_driver(params, &driver, 2.0, 10.0).unwrap();
        for (a, b) in short.values.iter().zip(&long.values) {
            assert!(b >= a);
            assert!(*a >= 0.0);
        }
    }

    #[test]
    fn exact_tail_requires_brownian_input() {
        let params = QueueParams::new(0.7, 1.0).unwrap();
        assert!(StationaryWindowSampler::new(params, 1.0, 0.01, Tail::ExactBrownian).is_err());
        assert!(simulate_stationary_window(params, 1.0, -1.0, 0.01, &mut substream(0, 0, 0)).is_err());
        assert!(simulate_stationary_window(params, 1.0, 1.0, 0.0, &mut substream(0, 0, 0)).is_err());
    }

    proptest! {
        #[test]
        fn sojourn_monotone_in_level(values in proptest::collection::vec(-5.0f64..5.0, 1..50), l1 in -6.0f64..6.0, l2 in -6.0f64..6.0) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(sojourn_in_slice(&values, 0.1, hi) <= sojourn_in_slice(&values, 0.1, lo));
        }

        #[test]
        fn sojourn_monotone_in_interval(values in proptest::collection::vec(-5.0f64..5.0, 2..50), cut in 0usize..50, level in -5.0f64..5.0) {
            let p = unit_grid_path(values.clone());
            let end = (p.grid.count() - 1) as f64;
            let b = (cut as f64).min(end);
            prop_assert!(sojourn_time(&p, level, -1.0, b).unwrap() <= sojourn_time(&p, level, -1.0, end).unwrap());
        }

        #[test]
        fn sojourn_level_nonincreasing(values in proptest::collection::vec(-5.0f64..5.0, 1..50), x1 in 0.0f64..6.0, x2 in 0.0f64..6.0) {
            let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
            let a = sojourn_level(&values, 0.1, lo).unwrap();
            let b = sojourn_level(&values, 0.1, hi).unwrap();
            prop_assert!(b.raw() <= a.raw());
        }

        #[test]
        fn level_and_time_are_conjugate(values in proptest::collection::vec(-5.0f64..5.0, 1..60), frac in 0.0f64..1.0) {
            let step = 0.05;
            let x = frac * step * values.len() as f64 * 0.999;
            let z = sojourn_level(&values, step, x).unwrap();
            prop_assert!(!z.is_neg_infinity());
            let s = sojourn_in_slice(&values, step, z.raw());
            prop_assert!(s <= x + step + 1e-12);
            prop_assert!(s > x - step - 1e-12);
        }
    }
}
