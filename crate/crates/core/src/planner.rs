//! Storage ratio of windowed statistics versus storing every embedding, and the
//! queue length that minimises it.
//!
//! With `K = ⌊N/d⌋ + 1` windows the windowed strategy keeps the queue (`d·p`
//! reals) and one covariance per category and window (`C·K·p²` reals), against
//! `N·p` reals for keeping every embedding:
//!
//! ```text
//! R(d) = (d + C·K·p) / N
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BYTES_PER_REAL: u64 = 4;
const MIB: f64 = (1u64 << 20) as f64;

/// Lower end of the evenly spaced search grid.
pub const GRID_START: f64 = 1000.0;
pub const GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// 100 evenly spaced queue lengths over [1000, N], rounded to integers.
    #[default]
    Grid,
    /// Global minimum over every integer d in [1, N].
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanInput {
    pub instances: u64,
    pub dim: u64,
    pub classes: u64,
    pub mode: SearchMode,
}

impl PlanInput {
    pub fn new(instances: u64, dim: u64, classes: u64, mode: SearchMode) -> Result<Self> {
        if instances == 0 || dim == 0 || classes == 0 {
            return Err(Error::input(format!(
                "instances, dim and classes must all be >= 1 (got N = {instances}, p = {dim}, C = {classes})"
            )));
        }
        Ok(Self {
            instances,
            dim,
            classes,
            mode,
        })
    }

    fn check_d(&self, d: u64) -> Result<()> {
        if d == 0 || d > self.instances {
            return Err(Error::input(format!(
                "queue length {d} outside [1, {}]",
                self.instances
            )));
        }
        Ok(())
    }

    pub fn windows(&self, d: u64) -> u64 {
        self.instances / d + 1
    }

    /// `N·R(d)` as an exact integer, for comparisons without rounding.
    fn scaled_ratio(&self, d: u64) -> u128 {
        d as u128 + self.classes as u128 * self.windows(d) as u128 * self.dim as u128
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub d_star: u64,
    pub windows: u64,
    #[serde(rename = "R")]
    pub ratio: f64,
    pub savings_percent: f64,
    pub bytes_original: u64,
    /// Queue plus covariances; window means are not included.
    pub bytes_new: u64,
    /// Window means (`C·K·p` reals), reported separately.
    pub bytes_means: u64,
    pub mb_original: f64,
    pub mb_new: f64,
}

/// `R(d) = (d + C·(⌊N/d⌋+1)·p) / N`.
pub fn storage_ratio(input: &PlanInput, d: u64) -> Result<f64> {
    input.check_d(d)?;
    Ok(input.scaled_ratio(d) as f64 / input.instances as f64)
}

/// Byte accounting at 4 bytes per stored real.
pub fn memory_report(input: &PlanInput, d: u64) -> Result<PlanResult> {
    let ratio = storage_ratio(input, d)?;
    let k = input.windows(d);
    let (n, p, c) = (input.instances, input.dim, input.classes);
    let bytes_original = n * p * BYTES_PER_REAL;
    let bytes_new = (d * p + c * k * p * p) * BYTES_PER_REAL;
    Ok(PlanResult {
        d_star: d,
        windows: k,
        ratio,
        savings_percent: 100.0 * (1.0 - ratio),
        bytes_original,
        bytes_new,
        bytes_means: c * k * p * BYTES_PER_REAL,
        mb_original: bytes_original as f64 / MIB,
        mb_new: bytes_new as f64 / MIB,
    })
}

/// The evenly spaced candidates of grid mode, as floats.
pub fn grid_candidates(instances: u64) -> Vec<f64> {
    let n = instances as f64;
    let start = if n >= GRID_START { GRID_START } else { 1.0 };
    let step = (n - start) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|k| if k == GRID_POINTS - 1 { n } else { start + k as f64 * step })
        .collect()
}

fn best_of(input: &PlanInput, candidates: impl Iterator<Item = u64>) -> u64 {
    let mut best: Option<(u128, u64)> = None;
    for d in candidates {
        let r = input.scaled_ratio(d);
        let better = match best {
            None => true,
            Some((br, bd)) => r < br || (r == br && d < bd),
        };
        if better {
            best = Some((r, d));
        }
    }
    best.map(|(_, d)| d).unwrap_or(1)
}

/// Queue length minimising R, smallest on ties.
pub fn optimal_queue_length(input: &PlanInput) -> PlanResult {
    let d = match input.mode {
        SearchMode::Grid => {
            let n = input.instances;
            best_of(
                input,
                grid_candidates(n)
                    .into_iter()
                    .map(|d| (d.round() as u64).clamp(1, n)),
            )
        }
        SearchMode::Exact => best_of(input, block_starts(input.instances)),
    };
    memory_report(input, d).expect("candidate d lies in [1, N]")
}

/// Smallest d of every run with constant ⌊N/d⌋. R grows with d inside a run,
/// so these are the only candidates for the integer minimum.
fn block_starts(n: u64) -> impl Iterator<Item = u64> {
    let mut d = 1u64;
    std::iter::from_fn(move || {
        if d > n {
            return None;
        }
        let current = d;
        d = n / (n / current) + 1;
        Some(current)
    })
}
