//! Windowed per-category statistics and their exact merge.
//!
//! Embeddings stream through a fixed-capacity FIFO queue. Every time `capacity`
//! new records have been inserted, the caller snapshots the queue into one
//! [`LocalStats`] per category. At the end of an epoch the records inserted since
//! the last snapshot form a final partial window, and all windows of a category
//! are merged into a [`CategoryStats`] with
//!
//! ```text
//! μ = (1/N) Σ_k n_k μ_k
//! Σ = (1/N) (Σ_k n_k Σ_k + Σ_k n_k (μ_k − μ)(μ_k − μ)ᵀ)
//! ```
//!
//! which reproduces the pooled population mean and covariance exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CategoryId = u32;

/// One instance embedding tagged with its category.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub category: CategoryId,
    pub vector: DVector<f64>,
}

impl EmbeddingRecord {
    pub fn new(category: CategoryId, vector: impl Into<Vec<f64>>) -> Self {
        Self {
            category,
            vector: DVector::from_vec(vector.into()),
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.vector.len() != dim {
            return Err(Error::input(format!(
                "embedding for category {} has dimension {}, expected {}",
                self.category,
                self.vector.len(),
                dim
            )));
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "embedding for category {} has a non-finite coordinate",
                self.category
            )));
        }
        Ok(())
    }
}

/// Population statistics of one category over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStats {
    pub category: CategoryId,
    pub count: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Merged statistics of one category at dataset scope.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStats {
    pub total: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Number of windows merged into this entry.
    pub windows: usize,
}

impl CategoryStats {
    /// View as a single window so merged results can be merged again.
    pub fn as_local(&self, category: CategoryId) -> LocalStats {
        LocalStats {
            category,
            count: self.total,
            mean: self.mean.clone(),
            cov: self.cov.clone(),
        }
    }
}

/// Per-category statistics for a whole epoch (or file).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats {
    pub dim: usize,
    pub categories: BTreeMap<CategoryId, CategoryStats>,
    /// Categories seen in earlier epochs that received no records in this one.
    pub absent: BTreeSet<CategoryId>,
    /// Snapshots taken during the epoch, including the trailing partial window.
    pub snapshots: usize,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn mean_and_cov(vectors: &[&DVector<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = vectors.len() as f64;
    let mut mean = DVector::zeros(dim);
    for v in vectors {
        mean += *v;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in vectors {
        let c = *v - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n;
    symmetrize(&mut cov);
    (mean, cov)
}

/// Mean and population covariance (divisor `n`) of every category in `batch`.
///
/// Output is ordered by category id.
pub fn compute_local_stats(batch: &[EmbeddingRecord]) -> Result<Vec<LocalStats>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::input("cannot compute statistics of an empty batch"))?;
    let dim = first.dim();
    if dim == 0 {
        return Err(Error::input("embedding dimension must be at least 1"));
    }
    let mut groups: BTreeMap<CategoryId, Vec<&DVector<f64>>> = BTreeMap::new();
    for rec in batch {
        rec.check(dim)?;
        groups.entry(rec.category).or_default().push(&rec.vector);
    }
    Ok(groups
        .into_iter()
        .map(|(category, vectors)| {
            let (mean, cov) = mean_and_cov(&vectors, dim);
            LocalStats {
                category,
                count: vectors.len(),
                mean,
                cov,
            }
        })
        .collect())
}

/// Merge windows of a single category into exact pooled statistics.
pub fn merge_stats(windows: &[LocalStats]) -> Result<CategoryStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::input("cannot merge an empty list of windows"))?;
    let dim = first.mean.len();
    let mut total = 0usize;
    for w in windows {
        if w.category != first.category {
            return Err(Error::input(format!(
                "cannot merge categories {} and {}",
                first.category, w.category
            )));
        }
        if w.mean.len() != dim || w.cov.nrows() != dim || w.cov.ncols() != dim {
            return Err(Error::input("windows have mismatched dimensions"));
        }
        if w.count == 0 {
            return Err(Error::input("window with zero count"));
        }
        total += w.count;
    }
    let n_total = total as f64;

    let mut mean = DVector::zeros(dim);
    for w in windows {
        mean.axpy(w.count as f64, &w.mean, 1.0);
    }
    mean /= n_total;

    let mut cov = DMatrix::zeros(dim, dim);
    for w in windows {
        let n = w.count as f64;
        cov += &w.cov * n;
        let delta = &w.mean - &mean;
        cov.ger(n, &delta, &delta, 1.0);
    }
    cov /= n_total;
    symmetrize(&mut cov);

    Ok(CategoryStats {
        total,
        mean,
        cov,
        windows: windows.len(),
    })
}

/// Fixed-capacity FIFO of embeddings with an insertion counter that signals
/// when every entry present at the previous snapshot has been replaced.
#[derive(Debug, Clone)]
pub struct EmbeddingQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<EmbeddingRecord>,
    inserted_since_snapshot: usize,
}

impl EmbeddingQueue {
    /// Reference queue length used for large detection datasets.
    pub const DEFAULT_CAPACITY: usize = 50_000;

    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::input("queue capacity must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::input("embedding dimension must be at least 1"));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted_since_snapshot: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inserted_since_snapshot(&self) -> usize {
        self.inserted_since_snapshot
    }

    /// Append a record, evicting the oldest when full.
    ///
    /// Returns `true` when the insertion counter reaches capacity; the counter is
    /// reset and the caller should take a [`snapshot`](Self::snapshot) now.
    pub fn push(&mut self, record: EmbeddingRecord) -> Result<bool> {
        record.check(self.dim)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(record);
        self.inserted_since_snapshot += 1;
        if self.inserted_since_snapshot == self.capacity {
            self.inserted_since_snapshot = 0;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Per-category statistics over the current queue contents.
    pub fn snapshot(&self) -> Result<Vec<LocalStats>> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let (a, b) = self.entries.as_slices();
        let all: Vec<EmbeddingRecord> = a.iter().chain(b).cloned().collect();
        compute_local_stats(&all)
    }

    /// Statistics over the records inserted since the last snapshot, then reset
    /// the counter. Empty when nothing new arrived.
    pub fn take_partial(&mut self) -> Result<Vec<LocalStats>> {
        let fresh = self.inserted_since_snapshot;
        self.inserted_since_snapshot = 0;
        if fresh == 0 {
            return Ok(Vec::new());
        }
        let skip = self.entries.len() - fresh;
        let recent: Vec<EmbeddingRecord> = self.entries.iter().skip(skip).cloned().collect();
        compute_local_stats(&recent)
    }
}

/// Queue plus the windows collected during the current epoch.
#[derive(Debug, Clone)]
pub struct EpochAccumulator {
    queue: EmbeddingQueue,
    windows: BTreeMap<CategoryId, Vec<LocalStats>>,
    known: BTreeSet<CategoryId>,
    snapshots: usize,
}

impl EpochAccumulator {
    pub fn new(queue: EmbeddingQueue) -> Self {
        Self {
            queue,
            windows: BTreeMap::new(),
            known: BTreeSet::new(),
            snapshots: 0,
        }
    }

    /// Register categories expected every epoch, so a category with no records is
    /// reported absent even in the first epoch.
    pub fn expect_categories(&mut self, ids: impl IntoIterator<Item = CategoryId>) {
        self.known.extend(ids);
    }

    pub fn queue(&self) -> &EmbeddingQueue {
        &self.queue
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        self.known.insert(record.category);
        if self.queue.push(record)? {
            let stats = self.queue.snapshot()?;
            self.record_window(stats);
        }
        Ok(())
    }

    fn record_window(&mut self, stats: Vec<LocalStats>) {
        self.snapshots += 1;
        for s in stats {
            self.windows.entry(s.category).or_default().push(s);
        }
    }

    /// Snapshot the trailing partial window, merge every category's windows and
    /// reset for the next epoch.
    pub fn finalize_epoch(&mut self) -> Result<GlobalStats> {
        let partial = self.queue.take_partial()?;
        self.record_window(partial);

        let mut categories = BTreeMap::new();
        for (id, windows) in std::mem::take(&mut self.windows) {
            categories.insert(id, merge_stats(&windows)?);
        }
        let absent = self
            .known
            .iter()
            .filter(|id| !categories.contains_key(*id))
            .copied()
            .collect();
        let snapshots = std::mem::take(&mut self.snapshots);
        Ok(GlobalStats {
            dim: self.queue.dim(),
            categories,
            absent,
            snapshots,
        })
    }
}

/// On-disk statistics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    pub p: usize,
    pub categories: Vec<StatsEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsEntry {
    pub id: CategoryId,
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov_row_major: Vec<f64>,
}

impl GlobalStats {
    pub fn to_file(&self) -> StatsFile {
        let categories = self
            .categories
            .iter()
            .map(|(&id, s)| StatsEntry {
                id,
                count: s.total,
                mean: s.mean.iter().copied().collect(),
                cov_row_major: s.cov.transpose().iter().copied().collect(),
            })
            .collect();
        StatsFile {
            p: self.dim,
            categories,
        }
    }

    pub fn from_file(file: &StatsFile) -> Result<Self> {
        let p = file.p;
        if p == 0 {
            return Err(Error::input("p must be at least 1"));
        }
        let mut categories = BTreeMap::new();
        for e in &file.categories {
            if e.count == 0 {
                return Err(Error::input(format!("category {} has count 0", e.id)));
            }
            if e.mean.len() != p || e.cov_row_major.len() != p * p {
                return Err(Error::input(format!(
                    "category {} has mean/cov of wrong length for p = {}",
                    e.id, p
                )));
            }
            let stats = CategoryStats {
                total: e.count,
                mean: DVector::from_column_slice(&e.mean),
                cov: DMatrix::from_row_slice(p, p, &e.cov_row_major),
                windows: 1,
            };
            if categories.insert(e.id, stats).is_some() {
                return Err(Error::input(format!("duplicate category {}", e.id)));
            }
        }
        Ok(GlobalStats {
            dim: p,
            categories,
            absent: BTreeSet::new(),
            snapshots: 0,
        })
    }
}
