use serde::{Deserialize, Serialize};

/// Running first and second moments; merging is associative and commutative
/// up to floating-point rounding, so reductions are done in replicate order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let mut acc = Accumulator::default();
        for &v in values {
            acc.push(v);
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum / self.count as f64
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.sum / n;
        ((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Point estimate with its Monte Carlo standard error and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub std_error: f64,
    pub reps: u64,
    pub seed: u64,
    pub step: f64,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl MonteCarloEstimate {
    pub fn from_accumulator(acc: &Accumulator, seed: u64, step: f64) -> Self {
        MonteCarloEstimate {
            value: acc.mean(),
            std_error: acc.std_error(),
            reps: acc.count,
            seed,
            step,
            notes: Vec::new(),
        }
    }

    /// An exactly known value (zero variance).
    pub fn exact(value: f64, reps: u64, seed: u64, step: f64) -> Self {
        MonteCarloEstimate {
            value,
            std_error: 0.0,
            reps: reps.max(1),
            seed,
            step,
            notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Standard error of the mean from `batches` contiguous batch means.
pub fn batch_means_std_error(values: &[f64], batches: usize) -> f64 {
    let batches = batches.max(2);
    let size = values.len() / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = values
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    Accumulator::from_values(&means).std_error()
}

/// Standard error of a ratio of independent estimates (delta method).
pub fn ratio_std_error(num: f64, num_se: f64, den: f64, den_se: f64) -> f64 {
    let r = num / den;
    (r * r * ((num_se / num).powi(2) + (den_se / den).powi(2))).sqrt()
}
