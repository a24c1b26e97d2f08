//! Parameter budget of the encoder across model widths, with the per-layer
//! breakdown for one configuration.
//!
//! Run with: cargo run --example param_budget

use intformer::model::{param_count, ModelConfig};

fn main() -> intformer::Result<()> {
    println!("{:>8} {:>8} {:>8}", "d_model", "m=1", "m=7");
    for d in [8, 16, 32, 64] {
        let p1 = param_count(&ModelConfig::new(12, 1, d, 8)?).total;
        let p7 = param_count(&ModelConfig::new(12, 7, d, 8)?).total;
        println!("{d:>8} {p1:>8} {p7:>8}");
    }

    let cfg = ModelConfig::new(12, 7, 16, 8)?;
    let pc = param_count(&cfg);
    println!("\n{cfg}");
    for (layer, count) in &pc.breakdown {
        println!("  {layer:<9} {count:>6}");
    }
    println!("  {:<9} {:>6}", "total", pc.total);
    Ok(())
}
