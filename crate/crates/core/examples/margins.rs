//! From information amounts to normalised amounts and the margin matrix, under
//! each normalisation and margin variant.
//!
//! cargo run --example margins -- [I_0 I_1 ...]

use igam::info::InfoAmountTable;
use igam::loss::{build_margins, normalize_info, InfoScale, InfoVariant, MarginVariant};

fn main() -> igam::Result<()> {
    let mut values: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if values.len() < 2 {
        values = vec![10.0, 20.0, 40.0, 80.0];
    }
    let table = InfoAmountTable {
        epoch: 0,
        info: values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect(),
    };
    for (variant, scale) in [
        (InfoVariant::PaperDoubleExp, InfoScale::Sum),
        (InfoVariant::PaperDoubleExp, InfoScale::Mean),
        (InfoVariant::SoftmaxSingleExp, InfoScale::Sum),
    ] {
        let norm = normalize_info(&table, variant, scale)?;
        println!("\n{variant:?}, Ibar = {scale:?} ({:.3})", norm.i_bar);
        let shown: Vec<String> = norm.normalized.iter().map(|v| format!("{v:.5}")).collect();
        println!("I' = [{}]", shown.join(", "));
        for mv in [MarginVariant::Clamped, MarginVariant::Signed] {
            let m = build_margins(&norm, mv)?;
            println!("{mv:?} margins (rad), rows are targets:");
            for row in m.as_matrix().row_iter() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>9.5}")).collect();
                println!("  {}", cells.join(" "));
            }
        }
    }
    Ok(())
}
