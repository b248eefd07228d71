//! Exact sampling of fractional Brownian motion and of the drifted field
//! `W_H(t) = sqrt(2) B_H(t) - |t|^{2H}` on uniform grids.
//!
//! The primary sampler is circulant embedding of the stationary increments
//! (fractional Gaussian noise) with an FFT. The Brownian case `H = 1/2` uses
//! independent increments directly, and a dense Cholesky factorization is
//! kept as a fallback for embeddings that are not nonnegative definite.

use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};

/// Largest grid any sampler will allocate.
pub const MAX_GRID_POINTS: usize = 1 << 24;
/// Largest increment count the dense fallback will factorize.
pub const MAX_DENSE_POINTS: usize = 4096;
/// Relative threshold below which negative embedding eigenvalues are clipped.
pub const EIGEN_CLIP_TOLERANCE: f64 = 1e-10;

/// Hurst index, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(HurstParam(value))
        } else {
            Err(Error::invalid(format!("Hurst index must lie in (0, 1), got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        HurstParam::new(value)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// Uniform grid `start + k * step`, `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: f64,
    step: f64,
    count: usize,
}

const GRID_EPS: f64 = 1e-9;

impl TimeGrid {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        ensure_finite("grid start", start)?;
        ensure_positive("grid step", step)?;
        if count == 0 {
            return Err(Error::invalid("grid must contain at least one point"));
        }
        let end = start + step * (count - 1) as f64;
        ensure_finite("grid end", end)?;
        Ok(TimeGrid { start, step, count })
    }

    /// Grid from 0 with the given step reaching at least `end`.
    pub fn covering(end: f64, step: f64) -> Result<Self> {
        ensure_positive("grid step", step)?;
        if !(end.is_finite() && end >= 0.0) {
            return Err(Error::invalid(format!("grid end must be non-negative, got {end}")));
        }
        let cells = (end / step - GRID_EPS).ceil().max(0.0);
        if cells >= MAX_GRID_POINTS as f64 {
            return Err(Error::Resource(format!(
                "grid over [0, {end}] with step {step} needs {cells} points (cap {MAX_GRID_POINTS})"
            )));
        }
        TimeGrid::new(0.0, step, cells as usize + 1)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn end(&self) -> f64 {
        self.point(self.count - 1)
    }

    pub fn point(&self, k: usize) -> f64 {
        self.start + self.step * k as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |k| self.point(k))
    }

    /// Indices of grid points `t` with `a < t <= b`.
    ///
    /// Each point stands for the cell `(t - step, t]`, so the grid covers
    /// `(start - step, end]` and the interval must lie inside that span.
    pub fn window(&self, a: f64, b: f64) -> Result<Range<usize>> {
        ensure_finite("interval start", a)?;
        ensure_finite("interval end", b)?;
        if b < a {
            return Err(Error::invalid(format!("empty interval [{a}, {b}]")));
        }
        let lo = (a - self.start) / self.step;
        let hi = (b - self.start) / self.step;
        if lo < -1.0 - GRID_EPS || hi > (self.count - 1) as f64 + GRID_EPS {
            return Err(Error::invalid(format!(
                "interval [{a}, {b}] outside the grid span [{}, {}]",
                self.start,
                self.end()
            )));
        }
        let first = ((lo + GRID_EPS).floor() + 1.0).max(0.0) as usize;
        let last = ((hi + GRID_EPS).floor() as i64 + 1).max(0) as usize;
        Ok(first.min(last)..last.min(self.count))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    Fbm,
    WField,
}

/// A sampled Gaussian path on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub kind: PathKind,
}

impl GaussianPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, kind: PathKind) -> Result<Self> {
        if values.len() != grid.count() {
            return Err(Error::invalid(format!(
                "path has {} values for {} grid points",
                values.len(),
                grid.count()
            )));
        }
        Ok(GaussianPath { grid, values, kind })
    }

    /// Every `factor`-th point, starting with the first.
    pub fn subsample(&self, factor: usize) -> Result<GaussianPath> {
        if factor == 0 {
            return Err(Error::invalid("subsampling factor must be positive"));
        }
        let values: Vec<f64> = self.values.iter().step_by(factor).copied().collect();
        let grid = TimeGrid::new(self.grid.start(), self.grid.step() * factor as f64, values.len())?;
        Ok(GaussianPath { grid, values, kind: self.kind })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_series_csv(path, "value", &self.grid, &self.values)
    }
}

pub(crate) fn write_series_csv(path: &Path, column: &str, grid: &TimeGrid, values: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,{column}")?;
    for (t, v) in grid.points().zip(values) {
        writeln!(out, "{t},{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// `Cov(B_H(s), B_H(t)) = (|s|^{2H} + |t|^{2H} - |t - s|^{2H}) / 2`.
pub fn fbm_covariance(s: f64, t: f64, hurst: HurstParam) -> Result<f64> {
    ensure_finite("s", s)?;
    ensure_finite("t", t)?;
    let two_h = 2.0 * hurst.value();
    Ok(0.5 * (s.abs().powf(two_h) + t.abs().powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of fractional Gaussian noise with unit spacing at `lag`.
fn fgn_autocovariance(lag: usize, hurst: f64) -> f64 {
    let k = lag as f64;
    let two_h = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

enum Method {
    /// `H = 1/2`: independent N(0, step) increments.
    Independent { sd: f64 },
    Circulant {
        sqrt_eigen: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky { lower: nalgebra::DMatrix<f64> },
}

/// Per-worker buffers reused across draws.
#[derive(Default)]
pub struct SamplerScratch {
    buffer: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
    normals: Vec<f64>,
}

/// Reusable exact sampler of `B_H` on a fixed grid starting at 0.
pub struct FbmSampler {
    grid: TimeGrid,
    hurst: HurstParam,
    method: Method,
}

impl FbmSampler {
    pub fn new(grid: TimeGrid, hurst: HurstParam) -> Result<Self> {
        Self::check_grid(&grid)?;
        let increments = grid.count() - 1;
        if hurst.is_brownian() || increments <= 1 {
            // a single increment is exactly N(0, step^{2H})
            let sd = grid.step().powf(hurst.value());
            return Ok(FbmSampler { grid, hurst, method: Method::Independent { sd } });
        }
        match Self::circulant(&grid, hurst)? {
            Some(method) => Ok(FbmSampler { grid, hurst, method }),
            None => {
                log::warn!(
                    "circulant embedding not nonnegative definite for H = {}, n = {}; using dense factorization",
                    hurst.value(),
                    increments
                );
                Self::dense(grid, hurst)
            }
        }
    }

    /// Dense Cholesky sampler, used as the fallback.
    pub fn dense(grid: TimeGrid, hurst: HurstParam) -> Result<Self> {
        Self::check_grid(&grid)?;
        let n = grid.count() - 1;
        if n > MAX_DENSE_POINTS {
            return Err(Error::Resource(format!(
                "dense factorization of {n} increments exceeds the cap of {MAX_DENSE_POINTS}"
            )));
        }
        let scale = grid.step().powf(2.0 * hurst.value());
        let cov = nalgebra::DMatrix::from_fn(n, n, |i, j| scale * fgn_autocovariance(i.abs_diff(j), hurst.value()));
        let lower = cov
            .cholesky()
            .ok_or_else(|| Error::invalid("fractional Gaussian noise covariance is not positive definite"))?
            .l();
        Ok(FbmSampler { grid, hurst, method: Method::Cholesky { lower } })
    }

    fn check_grid(grid: &TimeGrid) -> Result<()> {
        if grid.start() != 0.0 {
            return Err(Error::invalid(format!("fBm grids must start at 0, got {}", grid.start())));
        }
        if grid.count() > MAX_GRID_POINTS {
            return Err(Error::Resource(format!(
                "grid of {} points exceeds the cap of {MAX_GRID_POINTS}",
                grid.count()
            )));
        }
        Ok(())
    }

    fn circulant(grid: &TimeGrid, hurst: HurstParam) -> Result<Option<Method>> {
        let increments = grid.count() - 1;
        let half = increments.next_power_of_two();
        let size = 2 * half;
        let scale = grid.step().powf(2.0 * hurst.value());
        let mut row: Vec<Complex<f64>> = (0..size)
            .map(|j| {
                let lag = if j <= half { j } else { size - j };
                Complex::new(scale * fgn_autocovariance(lag, hurst.value()), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(size);
        fft.process(&mut row);
        let max = row.iter().map(|z| z.re).fold(f64::MIN, f64::max);
        let min = row.iter().map(|z| z.re).fold(f64::MAX, f64::min);
        if min < -EIGEN_CLIP_TOLERANCE * max {
            return Ok(None);
        }
        if min < 0.0 {
            log::warn!("clipping circulant eigenvalues down to {min:e} (max {max:e}) to zero");
        }
        let sqrt_eigen = row.iter().map(|z| (z.re.max(0.0) / size as f64).sqrt()).collect();
        Ok(Some(Method::Circulant { sqrt_eigen, fft }))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    /// True when the dense fallback is in use.
    pub fn is_dense(&self) -> bool {
        matches!(self.method, Method::Cholesky { .. })
    }

    /// Writes one draw of `(B_H(t_k))_k` into `out` (resized to the grid).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut SamplerScratch, out: &mut Vec<f64>) {
        let n = self.grid.count();
        out.clear();
        out.reserve(n);
        out.push(0.0);
        match &self.method {
            Method::Independent { sd } => {
                let mut acc = 0.0;
                for _ in 1..n {
                    let z: f64 = rng.sample(StandardNormal);
                    acc += sd * z;
                    out.push(acc);
                }
            }
            Method::Circulant { sqrt_eigen, fft } => {
                let size = sqrt_eigen.len();
                scratch.buffer.clear();
                scratch.buffer.extend(sqrt_eigen.iter().map(|&s| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex::new(s * re, s * im)
                }));
                let need = fft.get_inplace_scratch_len();
                if scratch.fft.len() < need {
                    scratch.fft.resize(need, Complex::default());
                }
                fft.process_with_scratch(&mut scratch.buffer, &mut scratch.fft[..need]);
                debug_assert_eq!(scratch.buffer.len(), size);
                let mut acc = 0.0;
                for z in &scratch.buffer[..n - 1] {
                    acc += z.re;
                    out.push(acc);
                }
            }
            Method::Cholesky { lower } => {
                let m = n - 1;
                scratch.normals.clear();
                scratch.normals.extend((0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let mut acc = 0.0;
                for i in 0..m {
                    let row = lower.row(i);
                    let inc: f64 = (0..=i).map(|j| row[j] * scratch.normals[j]).sum();
                    acc += inc;
                    out.push(acc);
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GaussianPath {
        let mut values = Vec::new();
        self.sample_into(rng, &mut SamplerScratch::default(), &mut values);
        GaussianPath { grid: self.grid, values, kind: PathKind::Fbm }
    }

    /// One draw of `W_H` on the grid.
    pub fn sample_w_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut SamplerScratch, out: &mut Vec<f64>) {
        self.sample_into(rng, scratch, out);
        fbm_to_w_field(&self.grid, self.hurst, out);
    }
}

/// In place `B -> sqrt(2) B - |t|^{2H}`.
pub fn fbm_to_w_field(grid: &TimeGrid, hurst: HurstParam, values: &mut [f64]) {
    let two_h = 2.0 * hurst.value();
    let sqrt2 = std::f64::consts::SQRT_2;
    if hurst.is_brownian() {
        for (k, v) in values.iter_mut().enumerate() {
            *v = sqrt2 * *v - grid.point(k).abs();
        }
    } else {
        for (k, v) in values.iter_mut().enumerate() {
            *v = sqrt2 * *v - grid.point(k).abs().powf(two_h);
        }
    }
}

/// One exact draw of `(B_H(t_k))_k` on a grid starting at 0.
pub fn sample_fbm<R: Rng + ?Sized>(grid: &TimeGrid, hurst: HurstParam, rng: &mut R) -> Result<GaussianPath> {
    Ok(FbmSampler::new(*grid, hurst)?.sample(rng))
}

/// One draw of `W_H(t) = sqrt(2) B_H(t) - t^{2H}` on a grid starting at 0.
pub fn sample_w_path<R: Rng + ?Sized>(grid: &TimeGrid, hurst: HurstParam, rng: &mut R) -> Result<GaussianPath> {
    let mut path = sample_fbm(grid, hurst, rng)?;
    fbm_to_w_field(grid, hurst, &mut path.values);
    path.kind = PathKind::WField;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, tags};
    use crate::stats::Accumulator;
    use proptest::prelude::*;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn covariance_examples() {
        for hv in [0.1, 0.5, 0.9] {
            assert!((fbm_covariance(1.0, 1.0, h(hv)).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((fbm_covariance(1.0, 2.0, h(0.5)).unwrap() - 1.0).abs() < 1e-15);
        let expected = 2f64.powf(1.5) / 2.0;
        assert!((fbm_covariance(1.0, 2.0, h(0.75)).unwrap() - expected).abs() < 1e-12);
        assert!(fbm_covariance(f64::NAN, 1.0, h(0.5)).is_err());
        assert!(fbm_covariance(1.0, f64::INFINITY, h(0.5)).is_err());
    }

    #[test]
    fn hurst_bounds() {
        assert!(HurstParam::new(0.0).is_err());
        assert!(HurstParam::new(1.0).is_err());
        assert!(HurstParam::new(f64::NAN).is_err());
        assert!(HurstParam::new(0.3).is_ok());
    }

    #[test]
    fn window_is_half_open() {
        let g = TimeGrid::new(0.0, 1.0, 3).unwrap();
        assert_eq!(g.window(-1.0, 2.0).unwrap(), 0..3);
        assert_eq!(g.window(0.0, 2.0).unwrap(), 1..3);
        assert_eq!(g.window(0.5, 1.5).unwrap(), 1..2);
        assert!(g.window(0.0, 3.0).is_err());
        assert!(g.window(-2.0, 1.0).is_err());
        let fine = TimeGrid::covering(1.5, 0.01).unwrap();
        assert_eq!(fine.window(0.5, 1.5).unwrap().len(), 100);
        assert_eq!(fine.window(0.0, 1.0).unwrap().len(), 100);
    }

    #[test]
    fn degenerate_grid_is_zero() {
        let g = TimeGrid::new(0.0, 0.1, 1).unwrap();
        let p = sample_fbm(&g, h(0.7), &mut substream(1, tags::PATH, 0)).unwrap();
        assert_eq!(p.values, vec![0.0]);
    }

    #[test]
    fn nonzero_start_rejected() {
        let g = TimeGrid::new(1.0, 0.1, 10).unwrap();
        assert!(sample_fbm(&g, h(0.7), &mut substream(1, tags::PATH, 0)).is_err());
    }

    #[test]
    fn deterministic_given_stream() {
        let g = TimeGrid::covering(1.0, 1.0 / 64.0).unwrap();
        for hv in [0.3, 0.5, 0.8] {
            let a = sample_fbm(&g, h(hv), &mut substream(5, tags::PATH, 9)).unwrap();
            let b = sample_fbm(&g, h(hv), &mut substream(5, tags::PATH, 9)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.values[0], 0.0);
        }
    }

    #[test]
    fn w_path_starts_at_zero() {
        let g = TimeGrid::covering(1.0, 0.01).unwrap();
        let p = sample_w_path(&g, h(0.7), &mut substream(2, tags::PATH, 0)).unwrap();
        assert_eq!(p.values[0], 0.0);
        assert_eq!(p.kind, PathKind::WField);
    }

    #[test]
    fn brownian_increments_are_independent() {
        let step = 0.1;
        let g = TimeGrid::covering(0.3, step).unwrap();
        let sampler = FbmSampler::new(g, h(0.5)).unwrap();
        let (mut var, mut cov) = (Accumulator::default(), Accumulator::default());
        let mut scratch = SamplerScratch::default();
        let mut v = Vec::new();
        for i in 0..20_000 {
            sampler.sample_into(&mut substream(3, tags::PATH, i), &mut scratch, &mut v);
            let d1 = v[1] - v[0];
            let d2 = v[2] - v[1];
            var.push(d1 * d1);
            cov.push(d1 * d2);
        }
        assert!((var.mean() - step).abs() < 4.0 * var.std_error());
        assert!(cov.mean().abs() < 4.0 * cov.std_error());
    }

    #[test]
    fn dense_fallback_matches_covariance() {
        let g = TimeGrid::covering(1.0, 1.0 / 16.0).unwrap();
        let hurst = h(0.7);
        let sampler = FbmSampler::dense(g, hurst).unwrap();
        assert!(sampler.is_dense());
        let (i, j) = (8, 16);
        let mut acc = Accumulator::default();
        let mut scratch = SamplerScratch::default();
        let mut v = Vec::new();
        for r in 0..20_000 {
            sampler.sample_into(&mut substream(4, tags::PATH, r), &mut scratch, &mut v);
            acc.push(v[i] * v[j]);
        }
        let target = fbm_covariance(g.point(i), g.point(j), hurst).unwrap();
        assert!((acc.mean() - target).abs() < 4.0 * acc.std_error());
    }

    #[test]
    fn dense_cap_is_a_resource_error() {
        let g = TimeGrid::covering(1.0, 1.0 / 8192.0).unwrap();
        assert!(matches!(FbmSampler::dense(g, h(0.7)), Err(Error::Resource(_))));
    }

    #[test]
    fn circulant_embedding_is_used_for_fgn() {
        for hv in [0.1, 0.3, 0.7, 0.95] {
            let g = TimeGrid::covering(1.0, 1.0 / 1000.0).unwrap();
            assert!(!FbmSampler::new(g, h(hv)).unwrap().is_dense());
        }
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric(s in -10.0f64..10.0, t in -10.0f64..10.0, hv in 0.01f64..0.99) {
            let a = fbm_covariance(s, t, h(hv)).unwrap();
            let b = fbm_covariance(t, s, h(hv)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn gram_matrix_is_positive_semidefinite(hv in 0.02f64..0.98, n in 2usize..24, step in 0.01f64..2.0) {
            let hurst = h(hv);
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
                fbm_covariance((i + 1) as f64 * step, (j + 1) as f64 * step, hurst).unwrap()
            });
            let eig = m.symmetric_eigen();
            let max = eig.eigenvalues.max();
            prop_assert!(eig.eigenvalues.min() >= -1e-9 * max);
        }
    }
}
