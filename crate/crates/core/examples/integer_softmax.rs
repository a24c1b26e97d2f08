//! Softmax over a score matrix using the numerator/denominator lookup tables
//! and the integer divider, compared with floating point.
//!
//! Run with: cargo run --example integer_softmax

use intformer::kernels::{build_softmax_tables, build_softmax_tables_with, int_softmax, DenominatorRange, SoftmaxOptions};
use intformer::qcore::{calibrate, IntTensor, Observer, QParams};
use intformer::synth;
use rand::Rng;

fn main() -> intformer::Result<()> {
    let n = 6;
    let mut rng = synth::rng(2);
    let logits: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-3.0..3.0)).collect();

    for bits in [8, 4] {
        let in_qp = calibrate(&Observer::from_range(-3.0, 3.0), bits)?.qparams;
        let out_qp = QParams::new(1.0 / ((1u64 << bits) - 1) as f64, -(1 << (bits - 1)), bits)?;
        let x = IntTensor::quantize(vec![n, n], &logits, in_qp)?;

        let row_length = SoftmaxOptions {
            denominator_range: DenominatorRange::RowLength,
            ..Default::default()
        };
        for (label, tables) in [
            ("default tables", build_softmax_tables(in_qp, out_qp, n, 1)?),
            ("row-length denominator", build_softmax_tables_with(in_qp, out_qp, n, 1, row_length)?),
        ] {
            println!("b={bits}, {label}: S_E={:.3e} Z_E={} DLUT[{}..] NLUT top {}", tables.s_e, tables.z_e, tables.dlut.len(), tables.nlut[tables.nlut.len() - 1]);
            let probs = int_softmax(&x, &tables)?.dequantize();
            let deq = x.dequantize();
            let row = &deq[..n];
            let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - top).exp()).sum();
            for (j, p) in probs[..n].iter().enumerate() {
                println!("  [0,{j}] int {p:.4}  float {:.4}", (row[j] - top).exp() / total);
            }
        }
    }
    Ok(())
}
