//! Calibrating a tensor range, quantizing values, and replacing a real
//! rescale factor with an integer multiply and shift.
//!
//! Run with: cargo run --example quantize_calibrate

use intformer::qcore::{approx_mul, calibrate, derive_fixed_scale, IntTensor, Observer};

fn main() -> intformer::Result<()> {
    let activations = [-0.82, -0.10, 0.0, 0.37, 1.45, 2.03, 0.66];

    let mut observer = Observer::new();
    observer.update_all(&activations);
    println!("observed range [{}, {}] over {} values", observer.min(), observer.max(), observer.count());

    for bits in [4, 6, 8] {
        let qp = calibrate(&observer.including_zero(), bits)?.qparams;
        let q = IntTensor::quantize(vec![activations.len()], &activations, qp)?;
        let back = q.dequantize();
        let worst = activations
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{qp}: q = {:?}, worst error {worst:.4} (half step {:.4})", q.data(), qp.scale() / 2.0);
    }

    // An 8-bit layer whose accumulator scale is S_w * S_x and whose output
    // scale is S_out needs acc * (S_w * S_x / S_out).
    let (s_w, s_x, s_out) = (0.0071, 0.0093, 0.0215);
    let ratio = s_w * s_x / s_out;
    let fs = derive_fixed_scale(ratio, 16)?;
    println!("\nratio {ratio:.6e} ~ {fs} = {:.6e}", fs.value());
    for acc in [-90_000i64, -12_345, -3, 0, 7, 41_000, 250_000] {
        println!("  acc {acc:>8} -> {:>5} (real {:.3})", approx_mul(acc, &fs), acc as f64 * ratio);
    }
    Ok(())
}
