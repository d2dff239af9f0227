//! Reference implementations used only by the tests. None of them share code
//! with the library paths they check.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, independent of rand_distr
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng) * scale).collect()
}

/// Double-double number: `hi + lo` with |lo| ≤ ulp(hi)/2.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let r = self.sub(Dd::from(q1).mul(Dd::from(d)));
        let q2 = r.hi / d;
        let (hi, lo) = two_sum(q1, q2);
        Dd { hi, lo }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Textbook two-pass population mean and covariance in double-double.
pub fn pooled_mean_cov(points: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = points.len();
    let p = points[0].len();
    let mut mean = vec![Dd::default(); p];
    for x in points {
        for k in 0..p {
            mean[k] = mean[k].add(Dd::from(x[k]));
        }
    }
    let mean: Vec<Dd> = mean.into_iter().map(|m| m.div_f64(n as f64)).collect();
    let mut cov = vec![vec![Dd::default(); p]; p];
    for x in points {
        let c: Vec<Dd> = (0..p).map(|k| Dd::from(x[k]).sub(mean[k])).collect();
        for a in 0..p {
            for b in 0..p {
                cov[a][b] = cov[a][b].add(c[a].mul(c[b]));
            }
        }
    }
    (
        mean.iter().map(|m| m.value()).collect(),
        cov.iter()
            .map(|row| row.iter().map(|v| v.div_f64(n as f64).value()).collect())
            .collect(),
    )
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(1e-300);
    (a - b).norm() / denom
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// ln det of a symmetric positive definite matrix via hand-rolled Cholesky.
pub fn cholesky_logdet(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut l = vec![vec![0.0; n]; n];
    let mut logdet = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i][i] = s.sqrt();
                logdet += 2.0 * l[i][i].ln();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    logdet
}

/// Information amount by the determinant route: Jacobi spectrum, floor, then
/// `½ log₂ det(I + Σ̃)` through Cholesky of the reconstructed matrix's diagonal form.
pub fn info_oracle(cov: &DMatrix<f64>, m: usize) -> f64 {
    let p = cov.nrows();
    let floor = (1.0 - (p as f64 / m as f64).sqrt()).powi(2);
    let ev = jacobi_eigenvalues(cov);
    let shifted = DMatrix::from_diagonal(&DVector::from_vec(
        ev.iter().map(|&l| 1.0 + l.max(floor)).collect(),
    ));
    0.5 * cholesky_logdet(&shifted) / std::f64::consts::LN_2
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    while cols.len() < n {
        let mut v = DVector::from_vec(random_vec(rng, n, 1.0));
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Loss evaluated literally: angles from acos, margins added to angles, the
/// shifted angle capped at π, softmax denominator summed term by term.
pub fn igam_loss_oracle(
    x: &[f64],
    label: usize,
    weights: &DMatrix<f64>,
    scale: f64,
    margins: &DMatrix<f64>,
) -> f64 {
    let classes = weights.ncols();
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos: Vec<f64> = (0..classes)
        .map(|j| {
            let w: Vec<f64> = weights.column(j).iter().copied().collect();
            let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            (dot / (wn * xn)).clamp(-1.0, 1.0)
        })
        .collect();
    let target = (scale * cos[label]).exp();
    let mut den = target;
    for j in 0..classes {
        if j == label {
            continue;
        }
        let angle = (cos[j].acos() + margins[(label, j)]).clamp(0.0, std::f64::consts::PI);
        den += (scale * angle.cos()).exp();
    }
    -(target / den).ln()
}

/// Cross-entropy oracle with an explicit max shift.
pub fn ce_oracle(x: &[f64], label: usize, weights: &DMatrix<f64>) -> f64 {
    let logits: Vec<f64> = (0..weights.ncols())
        .map(|j| weights.column(j).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = Dd::default();
    for z in &logits {
        s = s.add(Dd::from((z - max).exp()));
    }
    max + s.value().ln() - logits[label]
}

/// Central finite difference of `f` at `x` in coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with an absolute floor, for comparing gradient entries.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// A random IGAM configuration away from the angle clamps, where the loss is smooth.
pub struct GradCase {
    pub x: Vec<f64>,
    pub label: usize,
    pub weights: DMatrix<f64>,
    pub scale: f64,
    pub margins: DMatrix<f64>,
}

pub fn random_grad_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    loop {
        let p = r.random_range(2..=16);
        let classes = r.random_range(2..=10);
        let x = random_vec(&mut r, p, 1.0);
        let weights = DMatrix::from_vec(p, classes, random_vec(&mut r, p * classes, 1.0));
        let scale = [1.0, 4.0, 10.0, 30.0][r.random_range(0..4)];
        let margins = DMatrix::from_fn(classes, classes, |i, j| {
            if i == j { 0.0 } else { r.random::<f64>() * 0.6 }
        });
        let label = r.random_range(0..classes);
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let smooth = (0..classes).all(|j| {
            let w = weights.column(j);
            let c = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / (w.norm() * xn);
            let shifted = c.acos() + if j == label { 0.0 } else { margins[(label, j)] };
            c.abs() < 0.999 && (std::f64::consts::PI - shifted).abs() > 1e-3
        });
        if smooth {
            return GradCase { x, label, weights, scale, margins };
        }
    }
}

/// Largest relative error between analytic gradients and central differences
/// (step 1e-6) over every feature and weight entry.
pub fn igam_gradient_error(case: &GradCase) -> f64 {
    use igam::loss::{igam_backward, CosineClassifier, MarginMatrix};
    let classes = case.weights.ncols();
    let margins =
        MarginMatrix::from_row_major(classes, case.margins.transpose().as_slice()).unwrap();
    let clf = CosineClassifier::new(case.weights.clone(), case.scale).unwrap();
    let out = igam_backward(&DVector::from_vec(case.x.clone()), case.label, &clf, &margins).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..case.x.len() {
        let f = |x: &[f64]| igam_loss_oracle(x, case.label, &case.weights, case.scale, &case.margins);
        let num = central_diff(f, &case.x, i, h);
        worst = worst.max(grad_rel_err(out.grad_features[i], num));
    }
    let flat: Vec<f64> = case.weights.as_slice().to_vec();
    let (p, _) = case.weights.shape();
    for k in 0..flat.len() {
        let f = |w: &[f64]| {
            let wm = DMatrix::from_column_slice(p, classes, w);
            igam_loss_oracle(&case.x, case.label, &wm, case.scale, &case.margins)
        };
        let num = central_diff(f, &flat, k, h);
        worst = worst.max(grad_rel_err(out.grad_weights[(k % p, k / p)], num));
    }
    worst
}
