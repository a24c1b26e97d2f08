//! Runs one random model through the integer engine and the exact rational
//! oracle and compares every intermediate tensor.
//!
//! Run with: cargo run --example differential_check [bits] [seed]

use intformer::model::{first_mismatch, ModelConfig};
use intformer::reference::{sim_quant_forward, Oracle, RoundingFault};
use intformer::synth::Instance;

fn main() -> intformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let bits = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let cfg = ModelConfig::new(12, 3, 16, bits)?;
    let inst = Instance::generate(&cfg, seed)?;
    let engine = inst.model.forward_traced(&inst.input_q)?;
    let oracle = sim_quant_forward(&inst.model, &inst.input_q)?;

    println!("{cfg}, seed {seed}");
    for ((edge, t), (_, o)) in engine.edges.iter().zip(&oracle.edges) {
        let same = t == o;
        println!("  {:<8} {:>4} values  {}  {}", edge.name(), t.len(), t.qparams(), if same { "match" } else { "DIFFER" });
    }
    match first_mismatch(&oracle, &engine) {
        None => println!("all edges bit-exact"),
        Some(m) => println!("mismatch: {m}"),
    }

    // Flooring instead of rounding in the oracle shows what a wrong
    // requantization mode looks like.
    let floored = Oracle::with_fault(RoundingFault::FloorRequant).forward(&inst.model, &inst.input_q)?;
    if let Some(m) = first_mismatch(&floored, &engine) {
        println!("with floor requantization: {m}");
    }
    Ok(())
}
