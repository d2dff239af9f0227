//! Information amount of Gaussian clouds with different spreads, and what the
//! eigenvalue floor does when there are few samples per dimension.
//!
//! cargo run --example information_amount

use igam::info::{information_amount_from_embeddings, ShrinkageSpec};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn cloud(m: usize, p: usize, sigma: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    DMatrix::from_fn(m, p, |_, _| normal.sample(&mut rng))
}

fn main() -> igam::Result<()> {
    let p = 8;
    println!("p = {p}");
    println!("{:>6} {:>6} {:>10} {:>12} {:>10}", "m", "sigma", "floor", "I (bits)", "closed");
    for m in [16, 80, 800] {
        let floor = ShrinkageSpec::new(p, m)?.lambda_minus;
        for sigma in [0.5f64, 1.0, 2.0, 4.0] {
            let bits = information_amount_from_embeddings(&cloud(m, p, sigma, 1))?;
            let closed = 0.5 * p as f64 * (1.0 + sigma * sigma).log2();
            println!("{m:>6} {sigma:>6} {floor:>10.4} {bits:>12.4} {closed:>10.4}");
        }
    }
    // identical embeddings: zero covariance, every eigenvalue sits at the floor
    let same = DMatrix::from_element(20, p, 1.0);
    println!("20 identical embeddings: {:.4} bits", information_amount_from_embeddings(&same)?);
    Ok(())
}
