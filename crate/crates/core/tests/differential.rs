//! Kernels and the full pipeline against the rational oracle.

use intformer::kernels::{
    build_softmax_tables, int_add, int_batchnorm, int_gap, int_linear, int_matmul, int_relu,
    int_softmax, BatchNormParams, LinearParams,
};
use intformer::model::{first_mismatch, Edge, ModelConfig};
use intformer::qcore::{derive_fixed_scale, signed_range, FixedScale, IntTensor, QParams};
use intformer::reference::{sim_quant_forward, Oracle, RoundingFault};
use intformer::synth::{self, Instance};
use rand::Rng;

const INSTANCES: usize = 1000;
const BITS: [u32; 3] = [4, 6, 8];

fn random_qp(rng: &mut impl Rng, bits: u32) -> QParams {
    let (lo, hi) = signed_range(bits);
    let scale = 2f64.powf(rng.gen_range(-10.0..2.0));
    QParams::new(scale, rng.gen_range(lo..=hi), bits).unwrap()
}

fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, qp: QParams) -> IntTensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(qp.qmin()..=qp.qmax())).collect();
    IntTensor::new(shape, data, qp).unwrap()
}

fn fresh_tensor(rng: &mut impl Rng, shape: Vec<usize>, bits: u32) -> IntTensor {
    let qp = random_qp(rng, bits);
    random_tensor(rng, shape, qp)
}

fn random_scale(rng: &mut impl Rng) -> FixedScale {
    derive_fixed_scale(2f64.powf(rng.gen_range(-14.0..1.0)), 16).unwrap()
}

#[test]
fn linear_matches_oracle() {
    let mut rng = synth::rng(11);
    for &b in &BITS {
        for _ in 0..INSTANCES {
            let (rows, in_dim, out_dim) = (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..9));
            let in_qp = random_qp(&mut rng, b);
            let p = LinearParams {
                weights: fresh_tensor(&mut rng, vec![out_dim, in_dim], b),
                bias: (0..out_dim).map(|_| rng.gen_range(-5000..5000)).collect(),
                requant: random_scale(&mut rng),
                in_qp,
                out_qp: random_qp(&mut rng, b),
            };
            let x = random_tensor(&mut rng, vec![rows, in_dim], in_qp);
            assert_eq!(int_linear(&x, &p).unwrap(), Oracle::exact().linear(&x, &p).unwrap());
        }
    }
}

#[test]
fn linear_4x8_at_8_bits() {
    let mut rng = synth::rng(48);
    let in_qp = random_qp(&mut rng, 8);
    let p = LinearParams {
        weights: fresh_tensor(&mut rng, vec![4, 8], 8),
        bias: (0..4).map(|_| rng.gen_range(-2000..2000)).collect(),
        requant: derive_fixed_scale(0.0123, 16).unwrap(),
        in_qp,
        out_qp: random_qp(&mut rng, 8),
    };
    let x = random_tensor(&mut rng, vec![3, 8], in_qp);
    assert_eq!(int_linear(&x, &p).unwrap(), Oracle::exact().linear(&x, &p).unwrap());
}

#[test]
fn add_matches_oracle_and_commutes() {
    let mut rng = synth::rng(12);
    for &b in &BITS {
        for _ in 0..INSTANCES {
            let shape = vec![rng.gen_range(1..6), rng.gen_range(1..9)];
            let a1 = fresh_tensor(&mut rng, shape.clone(), b);
            let a2 = fresh_tensor(&mut rng, shape, b);
            let (fs1, fs2) = (random_scale(&mut rng), random_scale(&mut rng));
            let out_qp = random_qp(&mut rng, b);
            let got = int_add(&a1, &a2, &fs1, &fs2, out_qp).unwrap();
            assert_eq!(got, Oracle::exact().add(&a1, &a2, &fs1, &fs2, out_qp).unwrap());
            assert_eq!(got, int_add(&a2, &a1, &fs2, &fs1, out_qp).unwrap());
        }
    }
}

#[test]
fn matmul_matches_oracle_both_layouts() {
    let mut rng = synth::rng(13);
    for &b in &BITS {
        for i in 0..INSTANCES {
            let transpose = i % 2 == 0;
            let (r, k, c) = (rng.gen_range(1..7), rng.gen_range(1..9), rng.gen_range(1..7));
            let a1 = fresh_tensor(&mut rng, vec![r, k], b);
            let shape = if transpose { vec![c, k] } else { vec![k, c] };
            let a2 = fresh_tensor(&mut rng, shape, b);
            let fs = random_scale(&mut rng);
            let out_qp = random_qp(&mut rng, b);
            assert_eq!(
                int_matmul(&a1, &a2, transpose, &fs, out_qp).unwrap(),
                Oracle::exact().matmul(&a1, &a2, transpose, &fs, out_qp).unwrap()
            );
        }
    }
}

#[test]
fn score_matmul_2x4_with_root_folding() {
    let mut rng = synth::rng(24);
    let (sq, sk, ss) = (random_qp(&mut rng, 8), random_qp(&mut rng, 8), random_qp(&mut rng, 8));
    let q = random_tensor(&mut rng, vec![2, 4], sq);
    let k = random_tensor(&mut rng, vec![2, 4], sk);
    let ratio = sq.scale() * sk.scale() / (ss.scale() * 4f64.sqrt());
    let fs = derive_fixed_scale(ratio, 16).unwrap();
    let got = int_matmul(&q, &k, true, &fs, ss).unwrap();
    assert_eq!(got.shape(), &[2, 2]);
    assert_eq!(got, Oracle::exact().matmul(&q, &k, true, &fs, ss).unwrap());
}

#[test]
fn softmax_matches_oracle() {
    let mut rng = synth::rng(14);
    for &b in &BITS {
        for _ in 0..INSTANCES {
            let n = rng.gen_range(1..13);
            let in_qp = random_qp(&mut rng, b);
            let levels = ((1u64 << b) - 1) as f64;
            let out_qp = QParams::new(rng.gen_range(0.5..1.0) / levels, -(1 << (b - 1)), b).unwrap();
            let t = build_softmax_tables(in_qp, out_qp, n, 1).unwrap();
            let x = random_tensor(&mut rng, vec![n, n], in_qp);
            match (int_softmax(&x, &t), Oracle::exact().softmax(&x, &t)) {
                (Ok(a), Ok(o)) => assert_eq!(a, o),
                (Err(a), Err(o)) => assert_eq!(a.to_string(), o.to_string()),
                (a, o) => panic!("kernel {a:?} vs oracle {o:?}"),
            }
        }
    }
}

#[test]
fn batchnorm_matches_oracle() {
    let mut rng = synth::rng(15);
    for &b in &BITS {
        for _ in 0..INSTANCES {
            let (rows, d) = (rng.gen_range(1..8), rng.gen_range(1..10));
            let in_qp = random_qp(&mut rng, b);
            let p = BatchNormParams {
                gamma_hat: fresh_tensor(&mut rng, vec![d], b),
                beta_star: (0..d).map(|_| rng.gen_range(-3000..3000)).collect(),
                requant: random_scale(&mut rng),
                in_qp,
                out_qp: random_qp(&mut rng, b),
            };
            let x = random_tensor(&mut rng, vec![rows, d], in_qp);
            assert_eq!(int_batchnorm(&x, &p).unwrap(), Oracle::exact().batchnorm(&x, &p).unwrap());
        }
    }
}

#[test]
fn gap_and_relu_match_oracle() {
    let mut rng = synth::rng(16);
    for &b in &BITS {
        for _ in 0..INSTANCES {
            let (rows, cols) = (rng.gen_range(1..13), rng.gen_range(1..33));
            let x = fresh_tensor(&mut rng, vec![rows, cols], b);
            let ratio = rng.gen_range(0.2..2.0) / rows as f64;
            let fs = derive_fixed_scale(ratio, 16).unwrap();
            let out_qp = random_qp(&mut rng, b);
            assert_eq!(int_gap(&x, &fs, out_qp).unwrap(), Oracle::exact().gap(&x, &fs, out_qp).unwrap());
            assert_eq!(int_relu(&x), Oracle::exact().relu(&x).unwrap());
        }
    }
}

#[test]
fn gap_12x32_at_6_bits() {
    let mut rng = synth::rng(1232);
    let (xq, oq) = (random_qp(&mut rng, 6), random_qp(&mut rng, 6));
    let x = random_tensor(&mut rng, vec![12, 32], xq);
    let fs = derive_fixed_scale(xq.scale() / (oq.scale() * 12.0), 16).unwrap();
    assert_eq!(int_gap(&x, &fs, oq).unwrap(), Oracle::exact().gap(&x, &fs, oq).unwrap());
}

#[test]
fn forward_matches_oracle_on_every_edge() {
    for n in [6, 12] {
        for d in [8, 16] {
            for b in BITS {
                let cfg = ModelConfig::new(n, 3, d, b).unwrap();
                for seed in 0..5 {
                    let inst = Instance::generate(&cfg, seed).unwrap();
                    let engine = inst.model.forward_traced(&inst.input_q).unwrap();
                    let oracle = sim_quant_forward(&inst.model, &inst.input_q).unwrap();
                    assert_eq!(engine.edges.len(), Edge::ALL.len());
                    if let Some(m) = first_mismatch(&oracle, &engine) {
                        panic!("{cfg} seed {seed}: {m}");
                    }
                }
            }
        }
    }
}

#[test]
fn injected_rounding_fault_is_detected() {
    let cfg = ModelConfig::new(6, 2, 8, 8).unwrap();
    let mut detected = 0;
    for seed in 0..10 {
        let inst = Instance::generate(&cfg, seed).unwrap();
        let engine = inst.model.forward_traced(&inst.input_q).unwrap();
        let faulty = Oracle::with_fault(RoundingFault::FloorRequant)
            .forward(&inst.model, &inst.input_q)
            .unwrap();
        if first_mismatch(&faulty, &engine).is_some() {
            detected += 1;
        }
    }
    assert_eq!(detected, 10);
}

#[test]
fn all_zero_point_input_through_zero_model() {
    use intformer::model::assemble;
    use intformer::reference::{calibrate_model, FloatModel};

    let cfg = ModelConfig::new(6, 2, 8, 6).unwrap();
    let fm = FloatModel::zeros(&cfg);
    let mut rng = synth::rng(3);
    let batch: Vec<Vec<f64>> = (0..4).map(|_| synth::random_window(&cfg, &mut rng)).collect();
    let model = assemble(&cfg, &fm, &calibrate_model(&fm, &batch).unwrap()).unwrap();
    let x = IntTensor::zeros(vec![6, 2], model.edge(Edge::Input));
    let trace = sim_quant_forward(&model, &x).unwrap();
    assert_eq!(trace, model.forward_traced(&x).unwrap());
    // Zero weights and biases force these edges onto their zero points.
    for edge in [Edge::LInput, Edge::Q, Edge::K, Edge::V, Edge::Score, Edge::LO, Edge::Ffn1, Edge::Ffn2, Edge::Output] {
        let t = trace.get(edge).unwrap();
        let z = t.qparams().zero_point();
        assert!(t.data().iter().all(|&v| v == z), "edge {edge}");
    }
}
