//! Saves a quantized model as an artifact directory, reloads it, and writes
//! the memory initialization files an FPGA build would consume.
//!
//! Run with: cargo run --example export_memories [out_dir]

use std::path::PathBuf;

use intformer::dataio::{export_hw_mem, load_model, read_hex_mem, save_model, HW_MANIFEST};
use intformer::model::ModelConfig;
use intformer::synth::Instance;

fn main() -> intformer::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("intformer-export"));
    let cfg = ModelConfig::new(12, 7, 16, 6)?;
    let model = Instance::generate(&cfg, 11)?.model;

    let artifact = out.join("artifact");
    save_model(&artifact, &model, None)?;
    assert_eq!(load_model(&artifact)?.model, model);
    println!("artifact written to {}", artifact.display());

    let hw = out.join("hw");
    let infos = export_hw_mem(&model, &hw)?;
    for info in &infos {
        println!("  {:<16} {:>5} x {:>2} bits", info.name, info.depth, info.width);
    }
    let dlut = infos.iter().find(|i| i.name == "softmax_dlut").unwrap();
    assert_eq!(read_hex_mem(&dlut.path, dlut.width)?, model.softmax.dlut);
    println!("memories and {HW_MANIFEST} written to {}", hw.display());
    Ok(())
}
