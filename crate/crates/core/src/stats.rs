//! Per-sample accumulation and Monte Carlo summaries.
//!
//! Samples are produced in parallel but always reduced in sample-index
//! order, so summaries do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::kernel::TimeGrid;
use crate::{Error, Result};

/// Monte Carlo estimate of a vector quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCEstimate {
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub grid: Option<TimeGrid>,
}

impl MCEstimate {
    pub fn dim(&self) -> usize {
        self.value.len()
    }

    /// Largest component standard error.
    pub fn max_std_error(&self) -> f64 {
        self.std_error.iter().cloned().fold(0.0, f64::max)
    }

    /// `|value_i - target_i| <= k * std_error_i + slack` for every component.
    pub fn within(&self, target: &[f64], k: f64, slack: f64) -> bool {
        self.value
            .iter()
            .zip(&self.std_error)
            .zip(target)
            .all(|((v, s), t)| (v - t).abs() <= k * s + slack)
    }
}

/// Row-major `n × width` matrix of per-sample outputs.
#[derive(Debug, Clone)]
pub struct SampleSet {
    data: Vec<f64>,
    width: usize,
    seed: u64,
}

impl SampleSet {
    /// Runs `kernel(sample_index, row)` for every sample in parallel.
    pub fn collect<F>(n_samples: usize, width: usize, seed: u64, kernel: F) -> Result<Self>
    where
        F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
    {
        if n_samples == 0 {
            return Err(crate::error::invalid("n_samples must be at least 1"));
        }
        if width == 0 {
            return Err(crate::error::invalid("sample width must be positive"));
        }
        let mut data = vec![0.0; n_samples * width];
        data.par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(i, row)| kernel(i, row))?;
        Ok(Self { data, width, seed })
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// Mean and standard error of `Σ_c coef_c · column_c`.
    pub fn linear(&self, terms: &[(usize, f64)]) -> (f64, f64) {
        let n = self.n_samples();
        let combo = |i: usize| {
            let row = self.row(i);
            terms.iter().map(|&(c, w)| w * row[c]).sum::<f64>()
        };
        let mean = compensated_sum((0..n).map(combo)) / n as f64;
        let se = if n > 1 {
            let ss = compensated_sum((0..n).map(|i| {
                let d = combo(i) - mean;
                d * d
            }));
            (ss / ((n - 1) as f64 * n as f64)).sqrt()
        } else {
            0.0
        };
        (mean, se)
    }

    pub fn column(&self, c: usize) -> (f64, f64) {
        self.linear(&[(c, 1.0)])
    }

    /// Summary over a contiguous block of columns.
    pub fn estimate_columns(&self, start: usize, len: usize, grid: Option<TimeGrid>) -> Result<MCEstimate> {
        let mut value = Vec::with_capacity(len);
        let mut std_error = Vec::with_capacity(len);
        for c in start..start + len {
            let (m, s) = self.column(c);
            value.push(m);
            std_error.push(s);
        }
        if value.iter().chain(&std_error).any(|v| !v.is_finite()) {
            return Err(Error::BoundViolation("non-finite Monte Carlo summary".into()));
        }
        Ok(MCEstimate {
            value,
            std_error,
            n_samples: self.n_samples(),
            seed: self.seed,
            grid,
        })
    }

    pub fn estimate(&self, grid: Option<TimeGrid>) -> Result<MCEstimate> {
        self.estimate_columns(0, self.width, grid)
    }
}

/// Neumaier-compensated summation in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
