//! Seeded random models and inputs for verification runs and benchmarks.
//!
//! All randomness flows from a single `u64` seed through ChaCha8, so a seed
//! reproduces the same weights, calibration batch and input on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{assemble, ModelConfig, QuantizedModel};
use crate::qcore::IntTensor;
use crate::reference::{calibrate_model, CalibrationRecord, FloatBatchNorm, FloatLinear, FloatModel};

/// Windows in the calibration batch of a generated [`Instance`].
pub const CALIBRATION_SAMPLES: usize = 16;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn linear(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> FloatLinear {
    let bound = 1.0 / (in_dim as f64).sqrt();
    FloatLinear {
        in_dim,
        out_dim,
        weight: (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
        bias: (0..out_dim).map(|_| rng.gen_range(-0.1..0.1)).collect(),
    }
}

fn batchnorm(rng: &mut impl Rng, d: usize) -> FloatBatchNorm {
    FloatBatchNorm {
        gamma: (0..d).map(|_| rng.gen_range(0.5..1.5)).collect(),
        beta: (0..d).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        mean: (0..d).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        var: (0..d).map(|_| rng.gen_range(0.2..1.5)).collect(),
        eps: 1e-5,
    }
}

/// Uniform fan-in-scaled weights, small biases, BatchNorm statistics near unit.
pub fn random_float_model(cfg: &ModelConfig, rng: &mut impl Rng) -> FloatModel {
    let (m, d, f) = (cfg.m, cfg.d_model, cfg.ffn_dim());
    FloatModel {
        input_linear: linear(rng, m, d),
        q_linear: linear(rng, d, d),
        k_linear: linear(rng, d, d),
        v_linear: linear(rng, d, d),
        o_linear: linear(rng, d, d),
        bn_mha: batchnorm(rng, d),
        ffn1: linear(rng, d, f),
        ffn2: linear(rng, f, d),
        bn_ffn: batchnorm(rng, d),
        output_linear: linear(rng, d, 1),
    }
}

/// An `n x m` window of MinMax-normalized values in `[0, 1)`.
pub fn random_window(cfg: &ModelConfig, rng: &mut impl Rng) -> Vec<f64> {
    (0..cfg.n * cfg.m).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// A complete random model instance: float weights, calibration, the
/// assembled integer model and one input window.
#[derive(Debug, Clone)]
pub struct Instance {
    pub float: FloatModel,
    pub calibration: CalibrationRecord,
    pub model: QuantizedModel,
    pub input: Vec<f64>,
    pub input_q: IntTensor,
}

impl Instance {
    /// The input window is part of the calibration batch.
    pub fn generate(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = rng(seed);
        let float = random_float_model(cfg, &mut rng);
        let input = random_window(cfg, &mut rng);
        let mut batch: Vec<Vec<f64>> = (1..CALIBRATION_SAMPLES)
            .map(|_| random_window(cfg, &mut rng))
            .collect();
        batch.push(input.clone());
        let calibration = calibrate_model(&float, &batch)?;
        let model = assemble(cfg, &float, &calibration)?;
        let input_q = model.quantize_input(&input)?;
        Ok(Self {
            float,
            calibration,
            model,
            input,
            input_q,
        })
    }
}
