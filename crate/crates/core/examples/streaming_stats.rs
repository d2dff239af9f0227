//! Push an epoch of embeddings through a short queue and compare the merged
//! per-category statistics with a direct computation over all of them.
//!
//! cargo run --example streaming_stats -- [queue_len]

use igam::stats::{compute_local_stats, EmbeddingQueue, EmbeddingRecord, EpochAccumulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> igam::Result<()> {
    let queue_len: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(37);
    let (dim, n) = (6, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<EmbeddingRecord> = (0..n)
        .map(|_| {
            let c = rng.random_range(0..4u32);
            let v: Vec<f64> = (0..dim)
                .map(|_| 5.0 * c as f64 + (1.0 + c as f64) * rng.sample::<f64, _>(StandardNormal))
                .collect();
            EmbeddingRecord::new(c, v)
        })
        .collect();

    let mut acc = EpochAccumulator::new(EmbeddingQueue::new(queue_len, dim)?);
    for r in &records {
        acc.push(r.clone())?;
    }
    let global = acc.finalize_epoch()?;
    println!("{n} records, queue {queue_len}: {} windows", global.snapshots);

    let direct = compute_local_stats(&records)?;
    for d in &direct {
        let merged = &global.categories[&d.category];
        let err = (&merged.cov - &d.cov).norm() / d.cov.norm();
        println!(
            "category {}: {} records in {} windows, covariance rel. difference {err:.1e}",
            d.category, merged.total, merged.windows
        );
    }
    Ok(())
}
