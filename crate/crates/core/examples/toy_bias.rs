//! Train CE, normalised-cosine and IGAM classifiers on the heterogeneous-spread
//! benchmark for a few seeds and compare per-class accuracy variance.
//!
//! cargo run --release --example toy_bias -- [seeds] [epochs]

use igam::toy::{train, LossKind, SyntheticSpec, TrainConfig};

fn main() -> igam::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(30);

    println!("seed  loss       bias_var   pearson(I,acc)  mean_acc  max_margin");
    for seed in 0..seeds {
        let spec = SyntheticSpec::heterogeneous(seed);
        for loss in [LossKind::Ce, LossKind::Normface, LossKind::Igam] {
            let config = TrainConfig {
                loss,
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let run = train(&spec, &config)?;
            let last = run.reports.last().expect("at least one epoch");
            let mean_acc =
                last.per_class_accuracy.iter().sum::<f64>() / last.per_class_accuracy.len() as f64;
            println!(
                "{seed:<5} {:<10} {:<10.5} {:<15} {:<9.4} {:.4}",
                loss.name(),
                last.bias_variance,
                last.pearson_info_acc
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                mean_acc,
                last.max_margin,
            );
            if seed == 0 {
                let acc: Vec<String> = last.per_class_accuracy.iter().map(|a| format!("{a:.2}")).collect();
                println!("      per-class accuracy: {}", acc.join(" "));
            }
        }
    }
    Ok(())
}
