//! Evaluate the three losses on one sample, then compare the IGAM gradient with
//! central differences.
//!
//! cargo run --example loss_gradients

use igam::loss::{ce_forward, igam_backward, igam_forward, normface_forward, CosineClassifier, MarginMatrix};
use nalgebra::{DMatrix, DVector};

fn main() -> igam::Result<()> {
    let x = DVector::from_vec(vec![0.8, -0.3, 0.5, 0.1]);
    let w = DMatrix::from_row_slice(4, 3, &[
        1.0, 0.2, -0.4,
        0.1, 0.9, 0.3,
        0.4, -0.2, 0.8,
        0.0, 0.3, 0.2,
    ]);
    let margins = MarginMatrix::from_row_major(3, &[0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.3, 0.25, 0.0])?;
    let clf = CosineClassifier::new(w.clone(), 10.0)?;
    let label = 2;

    println!("cosines: {:?}", clf.cosines(&x)?);
    println!("ce       {:.6}", ce_forward(&x, label, &w)?.loss);
    println!("normface {:.6}", normface_forward(&x, label, &clf)?.loss);
    println!("igam     {:.6}", igam_forward(&x, label, &clf, &margins)?.loss);

    let out = igam_backward(&x, label, &clf, &margins)?;
    let h = 1e-6;
    let loss_at = |x: &DVector<f64>| igam_forward(x, label, &clf, &margins).map(|o| o.loss);
    println!("\n  i  analytic      numeric");
    for i in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
        println!("{i:>3}  {:>+.8}  {numeric:>+.8}", out.grad_features[i]);
    }
    Ok(())
}
