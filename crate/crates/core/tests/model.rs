use intformer::error::Error;
use intformer::model::{assemble, first_mismatch, param_count, Edge, ModelConfig};
use intformer::qcore::derive_fixed_scale;
use intformer::reference::{calibrate_model, float_forward, sim_quant_forward};
use intformer::synth::{self, Instance};

fn closed_form(m: usize, d: usize) -> usize {
    12 * d * d + (15 + m) * d + 1
}

#[test]
fn stored_parameters_match_closed_form() {
    for n in [6, 12] {
        for m in [1, 7] {
            for d in [8, 16, 32, 64] {
                let cfg = ModelConfig::new(n, m, d, 8).unwrap();
                assert_eq!(param_count(&cfg).total, closed_form(m, d));
                if d <= 32 {
                    let inst = Instance::generate(&cfg, 1).unwrap();
                    assert_eq!(inst.model.stored_param_count(), closed_form(m, d), "{cfg}");
                }
            }
        }
    }
}

#[test]
fn generation_and_forward_are_deterministic() {
    let cfg = ModelConfig::new(12, 3, 16, 6).unwrap();
    let a = Instance::generate(&cfg, 42).unwrap();
    let b = Instance::generate(&cfg, 42).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.input_q, b.input_q);
    assert_eq!(a.model.forward_traced(&a.input_q).unwrap(), b.model.forward_traced(&b.input_q).unwrap());
    assert_ne!(Instance::generate(&cfg, 43).unwrap().model, a.model);
}

#[test]
fn requant_sites_hold_their_ratios() {
    for b in [4, 6, 8] {
        let inst = Instance::generate(&ModelConfig::new(6, 2, 8, b).unwrap(), 9).unwrap();
        let sites = inst.model.requant_sites();
        let ratios = inst.model.expected_ratios();
        assert_eq!(sites.len(), ratios.len());
        for ((name, fs), (rname, ratio)) in sites.iter().zip(&ratios) {
            assert_eq!(name, rname);
            assert_eq!(fs.ratio(), *ratio, "{name}");
            assert!(fs.multiplier() < 1 << 16);
            assert!((fs.value() - ratio).abs() <= 2f64.powi(-(fs.shift() as i32) - 1), "{name}");
        }
    }
}

#[test]
fn dropping_root_folding_changes_scores() {
    let cfg = ModelConfig::new(12, 2, 16, 8).unwrap();
    let mut changed = 0;
    for seed in 0..5 {
        let inst = Instance::generate(&cfg, seed).unwrap();
        let mut unfolded = inst.model.clone();
        let root = (cfg.d_model as f64).sqrt();
        unfolded.score_scale = derive_fixed_scale(inst.model.score_scale.ratio() * root, 16).unwrap();
        let good = inst.model.forward_traced(&inst.input_q).unwrap();
        let bad = unfolded.forward_traced(&inst.input_q).unwrap();
        if let Some(m) = first_mismatch(&good, &bad) {
            assert_eq!(m.edge, Edge::Score);
            changed += 1;
        }
    }
    assert_eq!(changed, 5);
}

#[test]
fn relu_shares_ffn1_parameters() {
    let inst = Instance::generate(&ModelConfig::new(6, 1, 8, 4).unwrap(), 0).unwrap();
    assert_eq!(inst.model.edge(Edge::Relu), inst.model.edge(Edge::Ffn1));
    let trace = inst.model.forward_traced(&inst.input_q).unwrap();
    let z = inst.model.edge(Edge::Ffn1).zero_point();
    assert!(trace.get(Edge::Relu).unwrap().data().iter().all(|&v| v >= z));
}

#[test]
fn missing_calibration_edge_is_named() {
    let cfg = ModelConfig::new(6, 1, 8, 8).unwrap();
    let inst = Instance::generate(&cfg, 0).unwrap();
    let mut record = inst.calibration.clone();
    record.remove(Edge::Score);
    match assemble(&cfg, &inst.float, &record) {
        Err(Error::MissingCalibration(edge)) => assert_eq!(edge, "score"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn shape_mismatch_reports_expected_and_actual() {
    let cfg = ModelConfig::new(6, 2, 8, 8).unwrap();
    let inst = Instance::generate(&cfg, 0).unwrap();
    let err = inst.model.quantize_input(&[0.5; 10]).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
}

#[test]
fn quantized_output_tracks_float_model() {
    // Loose sanity bound: 8-bit predictions stay near the float forecast.
    let cfg = ModelConfig::new(12, 1, 16, 8).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let inst = Instance::generate(&cfg, seed).unwrap();
        let float = float_forward(&inst.float, &inst.input).unwrap();
        let q = inst.model.forward(&inst.input_q).unwrap().value;
        worst = worst.max((q - float).abs());
    }
    assert!(worst < 0.25, "worst deviation {worst}");
}

#[test]
fn calibration_batch_order_does_not_matter() {
    let cfg = ModelConfig::new(6, 2, 8, 6).unwrap();
    let mut rng = synth::rng(77);
    let fm = synth::random_float_model(&cfg, &mut rng);
    let mut batch: Vec<Vec<f64>> = (0..8).map(|_| synth::random_window(&cfg, &mut rng)).collect();
    let a = assemble(&cfg, &fm, &calibrate_model(&fm, &batch).unwrap()).unwrap();
    batch.reverse();
    let b = assemble(&cfg, &fm, &calibrate_model(&fm, &batch).unwrap()).unwrap();
    assert_eq!(a, b);
    let x = a.quantize_input(&batch[0]).unwrap();
    assert_eq!(sim_quant_forward(&a, &x).unwrap(), b.forward_traced(&x).unwrap());
}
