//! Desk-scale demonstration: Gaussian classes with different isotropic spreads,
//! a linear classifier trained with SGD + momentum on its weights, and per-epoch
//! bias diagnostics.
//!
//! Every training embedding passes through an [`EpochAccumulator`] in the same
//! order the optimizer sees it. At the end of the epoch the merged statistics
//! give fresh information amounts, which become the margin matrix used during
//! the next epoch. The first epoch runs with zero margins.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{information_from_covariance, InfoAmountTable};
use crate::loss::{
    build_margins, ce_backward, igam_backward, normalize_info, normface_backward, CosineClassifier,
    InfoScale, InfoVariant, MarginMatrix, MarginVariant, DEFAULT_SCALE,
};
use crate::stats::{compute_local_stats, CategoryId, EmbeddingQueue, EmbeddingRecord, EpochAccumulator};

// RNG stream ids; class streams are offset by these.
const STREAM_MEANS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAMS_PER_CLASS: u64 = 8;

fn class_rng(seed: u64, class: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class as u64 * STREAMS_PER_CLASS + stream);
    rng
}

fn normal_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Per-class counts: one value for every class, or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassCounts {
    Uniform(usize),
    PerClass(Vec<usize>),
}

impl ClassCounts {
    pub fn resolve(&self, classes: usize) -> Result<Vec<usize>> {
        match self {
            ClassCounts::Uniform(n) => Ok(vec![*n; classes]),
            ClassCounts::PerClass(v) if v.len() == classes => Ok(v.clone()),
            ClassCounts::PerClass(v) => Err(Error::input(format!(
                "{} per-class counts given for {classes} classes",
                v.len()
            ))),
        }
    }
}

/// Per-class isotropic standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spreads {
    Explicit(Vec<f64>),
    /// Log-spaced from `min` to `min * ratio`.
    LogSpaced { min: f64, ratio: f64 },
}

impl Spreads {
    pub fn resolve(&self, classes: usize) -> Result<Vec<f64>> {
        let out = match self {
            Spreads::Explicit(v) => {
                if v.len() != classes {
                    return Err(Error::input(format!(
                        "{} spreads given for {classes} classes",
                        v.len()
                    )));
                }
                v.clone()
            }
            Spreads::LogSpaced { min, ratio } => log_spaced(*min, *ratio, classes),
        };
        if out.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::input("every spread must be positive and finite"));
        }
        Ok(out)
    }
}

pub fn log_spaced(min: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![min];
    }
    (0..n)
        .map(|c| min * ratio.powf(c as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_train: ClassCounts,
    pub n_test: ClassCounts,
    pub spreads: Spreads,
    pub mean_separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Ten 16-dimensional classes, 500 training and 500 test samples each, spreads
    /// log-spaced from 1 to 8 around means at distance 8 from the origin.
    ///
    /// Spreads start at 1 because the eigenvalue floor is about 0.74 at 50
    /// samples per dimension; classes with σ² below it all measure the same amount.
    pub fn heterogeneous(seed: u64) -> Self {
        Self {
            classes: 10,
            dim: 16,
            n_train: ClassCounts::Uniform(500),
            n_test: ClassCounts::Uniform(500),
            spreads: Spreads::LogSpaced { min: 1.0, ratio: 8.0 },
            mean_separation: 8.0,
            seed,
        }
    }

    /// Same layout as [`heterogeneous`](Self::heterogeneous) with one shared spread.
    pub fn equal_spread(seed: u64) -> Self {
        Self {
            spreads: Spreads::LogSpaced { min: 3.0, ratio: 1.0 },
            ..Self::heterogeneous(seed)
        }
    }

    /// Validates the description; returns `true` when some class has fewer training samples
    /// than dimensions.
    pub fn validate(&self) -> Result<bool> {
        if self.classes < 2 {
            return Err(Error::input("need at least 2 classes"));
        }
        if self.dim == 0 {
            return Err(Error::input("dim must be at least 1"));
        }
        if !(self.mean_separation.is_finite() && self.mean_separation > 0.0) {
            return Err(Error::input("mean_separation must be positive"));
        }
        self.spreads.resolve(self.classes)?;
        let train = self.n_train.resolve(self.classes)?;
        let test = self.n_test.resolve(self.classes)?;
        if train.contains(&0) {
            return Err(Error::input("every class needs at least one training sample"));
        }
        if test.contains(&0) {
            return Err(Error::input("every class needs at least one test sample"));
        }
        Ok(train.iter().any(|&n| n < self.dim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub means: Vec<DVector<f64>>,
    pub train: Vec<EmbeddingRecord>,
    pub test: Vec<EmbeddingRecord>,
}

/// Sample the train and test sets. Each class draws from its own seeded streams,
/// so results do not depend on generation order.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let spreads = spec.spreads.resolve(spec.classes)?;
    let n_train = spec.n_train.resolve(spec.classes)?;
    let n_test = spec.n_test.resolve(spec.classes)?;
    let mut means = Vec::with_capacity(spec.classes);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.classes {
        let mut rng = class_rng(spec.seed, c, STREAM_MEANS);
        let mut dir = normal_vector(&mut rng, spec.dim);
        while dir.norm() == 0.0 {
            dir = normal_vector(&mut rng, spec.dim);
        }
        let mean = dir.normalize() * spec.mean_separation;
        for (out, count, stream) in [
            (&mut train, n_train[c], STREAM_TRAIN),
            (&mut test, n_test[c], STREAM_TEST),
        ] {
            let mut rng = class_rng(spec.seed, c, stream);
            for _ in 0..count {
                let x = &mean + normal_vector(&mut rng, spec.dim) * spreads[c];
                out.push(EmbeddingRecord {
                    category: c as CategoryId,
                    vector: x,
                });
            }
        }
        means.push(mean);
    }
    Ok(Dataset {
        dim: spec.dim,
        classes: spec.classes,
        means,
        train,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy over raw inner products.
    Ce,
    /// Softmax over scaled cosines.
    Normface,
    /// Scaled cosines with information-guided margins.
    Igam,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Normface => "normface",
            LossKind::Igam => "igam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub s: f64,
    pub queue_len: usize,
    pub batch_size: usize,
    pub info_variant: InfoVariant,
    pub info_scale: InfoScale,
    pub margin_variant: MarginVariant,
    /// Train IGAM with an all-zero margin matrix regardless of the measured amounts.
    pub force_zero_margins: bool,
    /// Ablation: apply `m[j][i]` instead of `m[i][j]` to non-target class `j`, which
    /// gives the margin to low-information targets instead.
    pub transpose_margins: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Igam,
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            s: DEFAULT_SCALE,
            queue_len: EmbeddingQueue::DEFAULT_CAPACITY,
            batch_size: 64,
            info_variant: InfoVariant::default(),
            info_scale: InfoScale::default(),
            margin_variant: MarginVariant::default(),
            force_zero_margins: false,
            transpose_margins: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::input("epochs must be at least 1"));
        }
        if self.queue_len == 0 {
            return Err(Error::input("queue_len must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::input("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("momentum must lie in [0, 1)"));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::input("s must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub per_class_accuracy: Vec<f64>,
    /// From the streaming queue statistics.
    pub info_amounts: Vec<f64>,
    /// Recomputed from the pooled epoch embeddings.
    pub pooled_info_amounts: Vec<f64>,
    /// Largest relative difference between the two.
    pub queue_pooled_rel_err: f64,
    pub bias_variance: f64,
    /// `None` when accuracy (or information) has zero variance.
    pub pearson_info_acc: Option<f64>,
    /// `None` when class counts are balanced.
    pub pearson_count_acc: Option<f64>,
    pub loss_mean: f64,
    /// Margins derived from this epoch's amounts (used during the next epoch).
    pub max_margin: f64,
    pub margin_row_sums: Vec<f64>,
    pub snapshots: usize,
    pub absent: Vec<CategoryId>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub reports: Vec<EpochReport>,
    pub weights: DMatrix<f64>,
    pub margins: MarginMatrix,
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::input("pearson needs equal-length inputs"));
    }
    if xs.len() < 2 {
        return Err(Error::input("pearson needs at least 2 points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::input("pearson is undefined for zero-variance input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Population variance of per-class accuracies.
pub fn bias_variance(per_class_accuracy: &[f64]) -> f64 {
    let n = per_class_accuracy.len() as f64;
    let mean = per_class_accuracy.iter().sum::<f64>() / n;
    per_class_accuracy.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n
}

fn init_weights(dim: usize, classes: usize, seed: u64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(dim, classes);
    for c in 0..classes {
        let mut rng = class_rng(seed, c, STREAM_INIT);
        let mut col = normal_vector(&mut rng, dim);
        while col.norm() == 0.0 {
            col = normal_vector(&mut rng, dim);
        }
        w.set_column(c, &(col / (dim as f64).sqrt()));
    }
    w
}

fn per_class_accuracy(
    data: &[EmbeddingRecord],
    classes: usize,
    predict: impl Fn(&DVector<f64>) -> Result<usize>,
) -> Result<Vec<f64>> {
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for r in data {
        let c = r.category as usize;
        totals[c] += 1;
        if predict(&r.vector)? == c {
            hits[c] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect())
}

fn pooled_information(data: &[EmbeddingRecord], classes: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; classes];
    for s in compute_local_stats(data)? {
        out[s.category as usize] = information_from_covariance(&s.cov, s.count)?;
    }
    Ok(out)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Train on a freshly generated dataset.
pub fn train(spec: &SyntheticSpec, config: &TrainConfig) -> Result<TrainRun> {
    let data = generate_dataset(spec)?;
    train_on(&data, config)
}

pub fn train_on(data: &Dataset, config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    let classes = data.classes;
    let dim = data.dim;
    let mut weights = init_weights(dim, classes, config.seed);
    let mut velocity = DMatrix::<f64>::zeros(dim, classes);
    let mut margins = MarginMatrix::zeros(classes);
    let mut info_table: Option<InfoAmountTable> = None;
    let mut accumulator = EpochAccumulator::new(EmbeddingQueue::new(config.queue_len, dim)?);
    accumulator.expect_categories(0..classes as CategoryId);

    let counts: Vec<f64> = {
        let mut c = vec![0.0; classes];
        for r in &data.train {
            c[r.category as usize] += 1.0;
        }
        c
    };
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = class_rng(config.seed, 0, STREAM_SHUFFLE);
    let mut reports = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let active_margins = if config.loss == LossKind::Igam && !config.force_zero_margins {
            margins.clone()
        } else {
            MarginMatrix::zeros(classes)
        };
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = DMatrix::<f64>::zeros(dim, classes);
            let clf = CosineClassifier {
                weights: weights.clone(),
                scale: config.s,
            };
            for &idx in batch {
                let rec = &data.train[idx];
                let label = rec.category as usize;
                let out = match config.loss {
                    LossKind::Ce => ce_backward(&rec.vector, label, &weights)?,
                    LossKind::Normface => normface_backward(&rec.vector, label, &clf)?,
                    LossKind::Igam => igam_backward(&rec.vector, label, &clf, &active_margins)?,
                };
                if !out.loss.is_finite() {
                    return Err(Error::numerical(format!("non-finite loss in epoch {epoch}")));
                }
                loss_sum += out.loss;
                grad += &out.grad_weights;
                accumulator.push(rec.clone())?;
            }
            grad /= batch.len() as f64;
            velocity *= config.momentum;
            velocity += &grad;
            weights -= &velocity * config.lr;
            if weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!("weights diverged in epoch {epoch}")));
            }
        }

        let global = accumulator.finalize_epoch()?;
        let table = InfoAmountTable::from_global(&global, epoch as u64, info_table.as_ref())?;
        let norm = normalize_info(&table, config.info_variant, config.info_scale)?;
        margins = build_margins(&norm, config.margin_variant)?;
        if config.transpose_margins {
            margins = margins.transposed();
        }

        let info_amounts: Vec<f64> = (0..classes as CategoryId)
            .map(|c| table.info.get(&c).copied().unwrap_or(0.0))
            .collect();
        let pooled = pooled_information(&data.train, classes)?;
        let queue_pooled_rel_err = info_amounts
            .iter()
            .zip(&pooled)
            .map(|(a, b)| rel_err(*a, *b))
            .fold(0.0, f64::max);

        let clf = CosineClassifier::new(weights.clone(), config.s)?;
        let accuracy = match config.loss {
            LossKind::Ce => per_class_accuracy(&data.test, classes, |x| clf.predict_linear(x))?,
            _ => per_class_accuracy(&data.test, classes, |x| clf.predict(x))?,
        };

        reports.push(EpochReport {
            epoch,
            bias_variance: bias_variance(&accuracy),
            pearson_info_acc: pearson(&info_amounts, &accuracy).ok(),
            pearson_count_acc: pearson(&counts, &accuracy).ok(),
            per_class_accuracy: accuracy,
            info_amounts,
            pooled_info_amounts: pooled,
            queue_pooled_rel_err,
            loss_mean: loss_sum / data.train.len() as f64,
            max_margin: margins.max_abs(),
            margin_row_sums: margins.row_sums(),
            snapshots: global.snapshots,
            absent: global.absent.iter().copied().collect(),
        });
        info_table = Some(table);
    }

    Ok(TrainRun {
        reports,
        weights,
        margins,
    })
}
