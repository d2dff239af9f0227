//! Storage ratio across queue lengths and the optimum under both search modes.
//!
//! cargo run --example plan_queue -- [N p C]

use igam::planner::{optimal_queue_length, storage_ratio, PlanInput, SearchMode};

fn main() -> igam::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (n, p, c) = match args[..] {
        [n, p, c] => (n, p, c),
        _ => (55_800, 128, 20),
    };
    let input = PlanInput::new(n, p, c, SearchMode::Grid)?;
    println!("N = {n}, p = {p}, C = {c}");
    for d in [1_000, 5_000, 10_000, 20_000, 40_000, n] {
        if d <= n {
            println!("  d = {d:>7}  K = {:>4}  R = {:.4}", input.windows(d), storage_ratio(&input, d)?);
        }
    }
    for mode in [SearchMode::Grid, SearchMode::Exact] {
        let r = optimal_queue_length(&PlanInput { mode, ..input });
        println!(
            "{mode:?}: d* = {} (K = {}), R = {:.5}, saves {:.2}%, {:.2} MB -> {:.2} MB (+{:.2} MB for window means)",
            r.d_star,
            r.windows,
            r.ratio,
            r.savings_percent,
            r.mb_original,
            r.mb_new,
            r.bytes_means as f64 / (1u64 << 20) as f64
        );
    }
    Ok(())
}
