//! Oracles for the integer engine.
//!
//! [`float_forward`] runs the same graph in `f64` for precision baselines and
//! drives [`calibrate_model`]. [`Oracle`] recomputes every integer edge with
//! exact rational arithmetic while applying the engine's rounding rules; it
//! shares no code with [`crate::kernels`] so that agreement between the two is
//! evidence rather than tautology.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{sinusoidal_encoding, BatchNormParams, LinearParams, SoftmaxTables};
use crate::model::{Edge, ModelConfig, QuantizedModel, Trace};
use crate::qcore::{FixedScale, IntTensor, Observer, QParams};

/// Dense layer, `weight` row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FloatLinear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn check(&self, name: &str, in_dim: usize, out_dim: usize) -> Result<()> {
        if self.in_dim != in_dim
            || self.out_dim != out_dim
            || self.weight.len() != in_dim * out_dim
            || self.bias.len() != out_dim
        {
            return Err(Error::ShapeMismatch {
                expected: format!("{name}: {out_dim}x{in_dim} weights, {out_dim} biases"),
                actual: format!(
                    "{}x{} declared, {} weights, {} biases",
                    self.out_dim,
                    self.in_dim,
                    self.weight.len(),
                    self.bias.len()
                ),
            });
        }
        Ok(())
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len() / self.in_dim * self.out_dim);
        for row in x.chunks_exact(self.in_dim) {
            for (o, w) in self.weight.chunks_exact(self.in_dim).enumerate() {
                out.push(w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + self.bias[o]);
            }
        }
        out
    }
}

/// BatchNorm with frozen statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatBatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl FloatBatchNorm {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
            mean: vec![0.0; d],
            var: vec![1.0; d],
            eps: 0.0,
        }
    }

    fn check(&self, name: &str, d: usize) -> Result<()> {
        let lens = [self.gamma.len(), self.beta.len(), self.mean.len(), self.var.len()];
        if lens.iter().any(|&l| l != d) {
            return Err(Error::ShapeMismatch {
                expected: format!("{name}: {d} features"),
                actual: format!("{lens:?}"),
            });
        }
        Ok(())
    }

    /// `γ (x − μ) / √(σ² + ε) + β` per feature.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.gamma.len();
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % d;
                self.gamma[j] * (v - self.mean[j]) / (self.var[j] + self.eps).sqrt() + self.beta[j]
            })
            .collect()
    }
}

/// Real-valued weights for every layer of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatModel {
    pub input_linear: FloatLinear,
    pub q_linear: FloatLinear,
    pub k_linear: FloatLinear,
    pub v_linear: FloatLinear,
    pub o_linear: FloatLinear,
    pub bn_mha: FloatBatchNorm,
    pub ffn1: FloatLinear,
    pub ffn2: FloatLinear,
    pub bn_ffn: FloatBatchNorm,
    pub output_linear: FloatLinear,
}

impl FloatModel {
    /// All weights and biases zero, BatchNorm at identity.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (m, d, f) = (cfg.m, cfg.d_model, cfg.ffn_dim());
        Self {
            input_linear: FloatLinear::zeros(m, d),
            q_linear: FloatLinear::zeros(d, d),
            k_linear: FloatLinear::zeros(d, d),
            v_linear: FloatLinear::zeros(d, d),
            o_linear: FloatLinear::zeros(d, d),
            bn_mha: FloatBatchNorm::identity(d),
            ffn1: FloatLinear::zeros(d, f),
            ffn2: FloatLinear::zeros(f, d),
            bn_ffn: FloatBatchNorm::identity(d),
            output_linear: FloatLinear::zeros(d, 1),
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let (m, d, f) = (cfg.m, cfg.d_model, cfg.ffn_dim());
        self.input_linear.check("l_input", m, d)?;
        self.q_linear.check("l_q", d, d)?;
        self.k_linear.check("l_k", d, d)?;
        self.v_linear.check("l_v", d, d)?;
        self.o_linear.check("l_o", d, d)?;
        self.bn_mha.check("bn_mha", d)?;
        self.ffn1.check("l_ffn1", d, f)?;
        self.ffn2.check("l_ffn2", f, d)?;
        self.bn_ffn.check("bn_ffn", d)?;
        self.output_linear.check("l_output", d, 1)
    }

    pub fn d_model(&self) -> usize {
        self.input_linear.out_dim
    }

    pub fn m(&self) -> usize {
        self.input_linear.in_dim
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Real activations of every edge from one float pass, in execution order.
pub type FloatTrace = Vec<(Edge, Vec<f64>)>;

fn row_softmax(x: &mut [f64], n: usize) {
    for row in x.chunks_exact_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `a (r x k) · b`, with `b` given as `c x k` when `transpose_b` is set.
fn real_matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, transpose_b: bool) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[i * c + j] = (0..k)
                .map(|t| a[i * k + t] * if transpose_b { b[j * k + t] } else { b[t * c + j] })
                .sum();
        }
    }
    out
}

/// Float pass over an `n x m` window, returning every edge.
pub fn float_forward_traced(fm: &FloatModel, x: &[f64]) -> Result<FloatTrace> {
    let (m, d) = (fm.m(), fm.d_model());
    if x.is_empty() || !x.len().is_multiple_of(m) {
        return Err(Error::ShapeMismatch {
            expected: format!("n x {m} window"),
            actual: format!("{} values", x.len()),
        });
    }
    let n = x.len() / m;
    let mut trace: FloatTrace = Vec::with_capacity(Edge::ALL.len());
    let mut record = |edge: Edge, values: Vec<f64>| -> Result<Vec<f64>> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                layer: edge.name().to_string(),
            });
        }
        trace.push((edge, values.clone()));
        Ok(values)
    };

    record(Edge::Input, x.to_vec())?;
    let l_input = record(Edge::LInput, fm.input_linear.apply(x))?;
    let pe = sinusoidal_encoding(n, d);
    let add_pe = record(Edge::AddPe, l_input.iter().zip(&pe).map(|(a, b)| a + b).collect())?;
    let q = record(Edge::Q, fm.q_linear.apply(&add_pe))?;
    let k = record(Edge::K, fm.k_linear.apply(&add_pe))?;
    let v = record(Edge::V, fm.v_linear.apply(&add_pe))?;
    let root = ((d / ModelConfig::HEADS) as f64).sqrt();
    let score: Vec<f64> = real_matmul(&q, &k, n, d, n, true).iter().map(|s| s / root).collect();
    let score = record(Edge::Score, score)?;
    let mut probs = score.clone();
    row_softmax(&mut probs, n);
    let probs = record(Edge::Softmax, probs)?;
    let attn = record(Edge::Attn, real_matmul(&probs, &v, n, n, d, false))?;
    let l_o = record(Edge::LO, fm.o_linear.apply(&attn))?;
    let add_mha = record(Edge::AddMha, l_o.iter().zip(&add_pe).map(|(a, b)| a + b).collect())?;
    let bn_mha = record(Edge::BnMha, fm.bn_mha.apply(&add_mha))?;
    let ffn1 = record(Edge::Ffn1, fm.ffn1.apply(&bn_mha))?;
    let relu = record(Edge::Relu, ffn1.iter().map(|v| v.max(0.0)).collect())?;
    let ffn2 = record(Edge::Ffn2, fm.ffn2.apply(&relu))?;
    let add_ffn = record(Edge::AddFfn, ffn2.iter().zip(&bn_mha).map(|(a, b)| a + b).collect())?;
    let bn_ffn = record(Edge::BnFfn, fm.bn_ffn.apply(&add_ffn))?;
    let mut gap = vec![0.0; d];
    for row in bn_ffn.chunks_exact(d) {
        for (g, v) in gap.iter_mut().zip(row) {
            *g += v / n as f64;
        }
    }
    let gap = record(Edge::Gap, gap)?;
    record(Edge::Output, fm.output_linear.apply(&gap))?;
    Ok(trace)
}

/// Float forecast for one `n x m` window.
pub fn float_forward(fm: &FloatModel, x: &[f64]) -> Result<f64> {
    let trace = float_forward_traced(fm, x)?;
    let (_, output) = trace.last().expect("trace ends with the output edge");
    Ok(output[0])
}

/// Observed min/max of every calibrated edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationRecord {
    observers: BTreeMap<Edge, Observer>,
}

impl CalibrationRecord {
    pub fn get(&self, edge: Edge) -> Option<&Observer> {
        self.observers.get(&edge)
    }

    pub fn insert(&mut self, edge: Edge, observer: Observer) {
        self.observers.insert(edge, observer);
    }

    pub fn remove(&mut self, edge: Edge) -> Option<Observer> {
        self.observers.remove(&edge)
    }

    /// True when every calibrated edge, and nothing else, is present.
    pub fn is_complete(&self) -> bool {
        self.observers.keys().copied().eq(Edge::calibrated())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, &Observer)> {
        self.observers.iter().map(|(e, o)| (*e, o))
    }
}

/// Runs the float model over a calibration batch and records running
/// min/max per edge.
pub fn calibrate_model(fm: &FloatModel, batch: &[Vec<f64>]) -> Result<CalibrationRecord> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut record = CalibrationRecord::default();
    for sample in batch {
        for (edge, values) in float_forward_traced(fm, sample)? {
            if edge.is_calibrated() {
                record.observers.entry(edge).or_default().update_all(&values);
            }
        }
    }
    Ok(record)
}

/// Deliberate deviations used to show the differential tests can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingFault {
    /// Requantization rounds toward negative infinity instead of half away
    /// from zero.
    FloorRequant,
}

/// Rounding-identical integer oracle built on exact rational arithmetic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle {
    fault: Option<RoundingFault>,
}

type Q = Ratio<i128>;

impl Oracle {
    pub fn exact() -> Self {
        Self { fault: None }
    }

    pub fn with_fault(fault: RoundingFault) -> Self {
        Self { fault: Some(fault) }
    }

    /// `acc · M / 2^n` rounded to the nearest integer, ties away from zero.
    fn rescale(&self, acc: i128, fs: &FixedScale) -> i128 {
        let exact = Q::new(acc * fs.multiplier() as i128, 1i128 << fs.shift());
        match self.fault {
            None => exact.round().to_integer(),
            Some(RoundingFault::FloorRequant) => exact.floor().to_integer(),
        }
    }

    fn saturate(v: i128, qp: QParams) -> i64 {
        let half = 2i128.pow(qp.bits() - 1);
        v.max(-half).min(half - 1) as i64
    }

    fn tensor(shape: Vec<usize>, data: Vec<i64>, qp: QParams) -> Result<IntTensor> {
        IntTensor::new(shape, data, qp)
    }

    pub fn linear(&self, x: &IntTensor, p: &LinearParams) -> Result<IntTensor> {
        let (rows, in_dim) = x.dims2()?;
        let (out_dim, w_in) = p.weights.dims2()?;
        if w_in != in_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("[_, {w_in}]"),
                actual: format!("{:?}", x.shape()),
            });
        }
        let zx = x.qparams().zero_point() as i128;
        let zw = p.weights.qparams().zero_point() as i128;
        let mut out = vec![0i64; rows * out_dim];
        for r in 0..rows {
            for o in 0..out_dim {
                let mut acc = p.bias[o] as i128;
                for k in 0..in_dim {
                    acc += (p.weights.at(o, k) as i128 - zw) * (x.at(r, k) as i128 - zx);
                }
                let v = self.rescale(acc, &p.requant) + p.out_qp.zero_point() as i128;
                out[r * out_dim + o] = Self::saturate(v, p.out_qp);
            }
        }
        Self::tensor(vec![rows, out_dim], out, p.out_qp)
    }

    pub fn add(
        &self,
        a1: &IntTensor,
        a2: &IntTensor,
        fs1: &FixedScale,
        fs2: &FixedScale,
        out_qp: QParams,
    ) -> Result<IntTensor> {
        if a1.shape() != a2.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", a1.shape()),
                actual: format!("{:?}", a2.shape()),
            });
        }
        let z1 = a1.qparams().zero_point() as i128;
        let z2 = a2.qparams().zero_point() as i128;
        let out = (0..a1.len())
            .map(|i| {
                let lhs = self.rescale(a1.data()[i] as i128 - z1, fs1);
                let rhs = self.rescale(a2.data()[i] as i128 - z2, fs2);
                Self::saturate(lhs + rhs + out_qp.zero_point() as i128, out_qp)
            })
            .collect();
        Self::tensor(a1.shape().to_vec(), out, out_qp)
    }

    /// Matrix product; with `transpose_a2` the oracle builds the transposed
    /// copy explicitly and multiplies against it.
    pub fn matmul(
        &self,
        a1: &IntTensor,
        a2: &IntTensor,
        transpose_a2: bool,
        fs: &FixedScale,
        out_qp: QParams,
    ) -> Result<IntTensor> {
        let (rows, inner) = a1.dims2()?;
        let (d0, d1) = a2.dims2()?;
        let rhs: Vec<i64> = if transpose_a2 {
            let mut t = vec![0; d0 * d1];
            for r in 0..d0 {
                for c in 0..d1 {
                    t[c * d0 + r] = a2.at(r, c);
                }
            }
            t
        } else {
            a2.data().to_vec()
        };
        let (k2, cols) = if transpose_a2 { (d1, d0) } else { (d0, d1) };
        if k2 != inner {
            return Err(Error::ShapeMismatch {
                expected: format!("inner dimension {inner}"),
                actual: format!("{:?}", a2.shape()),
            });
        }
        let z1 = a1.qparams().zero_point() as i128;
        let z2 = a2.qparams().zero_point() as i128;
        let mut out = vec![0i64; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let acc: i128 = (0..inner)
                    .map(|k| (a1.at(i, k) as i128 - z1) * (rhs[k * cols + j] as i128 - z2))
                    .sum();
                let v = self.rescale(acc, fs) + out_qp.zero_point() as i128;
                out[i * cols + j] = Self::saturate(v, out_qp);
            }
        }
        Self::tensor(vec![rows, cols], out, out_qp)
    }

    /// Table softmax with exact truncating division.
    pub fn softmax(&self, x: &IntTensor, t: &SoftmaxTables) -> Result<IntTensor> {
        let (rows, cols) = x.dims2()?;
        let offset = t.nlut.len() as i64 - 1;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &x.data()[r * cols..(r + 1) * cols];
            let max = *row.iter().max().ok_or(Error::Empty)?;
            let slot = |v: i64| (v - max + offset) as usize;
            let den: i128 = row.iter().map(|&v| (t.dlut[slot(v)] - t.z_e) as i128).sum();
            if den <= 0 {
                return Err(Error::DegenerateDenominator {
                    row: r,
                    sum: den as i64,
                });
            }
            for &v in row {
                let quotient = Q::new(t.nlut[slot(v)] as i128, den).trunc().to_integer();
                out.push(Self::saturate(quotient + t.out_qp.zero_point() as i128, t.out_qp));
            }
        }
        Self::tensor(vec![rows, cols], out, t.out_qp)
    }

    pub fn batchnorm(&self, x: &IntTensor, p: &BatchNormParams) -> Result<IntTensor> {
        let (rows, cols) = x.dims2()?;
        if cols != p.gamma_hat.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("[_, {}]", p.gamma_hat.len()),
                actual: format!("{:?}", x.shape()),
            });
        }
        let zx = x.qparams().zero_point() as i128;
        let zg = p.gamma_hat.qparams().zero_point() as i128;
        let mut out = vec![0i64; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let g = p.gamma_hat.data()[j] as i128 - zg;
                let acc = g * (x.at(i, j) as i128 - zx) + p.beta_star[j] as i128;
                let v = self.rescale(acc, &p.requant) + p.out_qp.zero_point() as i128;
                out[i * cols + j] = Self::saturate(v, p.out_qp);
            }
        }
        Self::tensor(vec![rows, cols], out, p.out_qp)
    }

    pub fn gap(&self, x: &IntTensor, fs: &FixedScale, out_qp: QParams) -> Result<IntTensor> {
        let (rows, cols) = x.dims2()?;
        let zx = x.qparams().zero_point() as i128;
        let out = (0..cols)
            .map(|j| {
                let sum: i128 = (0..rows).map(|i| x.at(i, j) as i128 - zx).sum();
                Self::saturate(self.rescale(sum, fs) + out_qp.zero_point() as i128, out_qp)
            })
            .collect();
        Self::tensor(vec![1, cols], out, out_qp)
    }

    pub fn relu(&self, x: &IntTensor) -> Result<IntTensor> {
        let z = x.qparams().zero_point();
        let out = x.data().iter().map(|&v| if v < z { z } else { v }).collect();
        Self::tensor(x.shape().to_vec(), out, x.qparams())
    }

    /// Recomputes every edge of `qm` for the quantized window `x`.
    pub fn forward(&self, qm: &QuantizedModel, x: &IntTensor) -> Result<Trace> {
        let cfg = &qm.config;
        if x.shape() != [cfg.n, cfg.m] {
            return Err(Error::ShapeMismatch {
                expected: format!("input [{}, {}]", cfg.n, cfg.m),
                actual: format!("{:?}", x.shape()),
            });
        }
        let layer = |name: &'static str| move |e: Error| e.in_layer(name);
        let e = |edge: Edge| qm.edge(edge);

        let l_input = self.linear(x, &qm.input_linear).map_err(layer("l_input"))?;
        let add_pe = self
            .add(&l_input, &qm.pe.table, &qm.add_pe.lhs, &qm.add_pe.rhs, e(Edge::AddPe))
            .map_err(layer("add_pe"))?;
        let q = self.linear(&add_pe, &qm.q_linear).map_err(layer("l_q"))?;
        let k = self.linear(&add_pe, &qm.k_linear).map_err(layer("l_k"))?;
        let v = self.linear(&add_pe, &qm.v_linear).map_err(layer("l_v"))?;
        let score = self
            .matmul(&q, &k, true, &qm.score_scale, e(Edge::Score))
            .map_err(layer("matmul_score"))?;
        let softmax = self.softmax(&score, &qm.softmax).map_err(layer("softmax"))?;
        let attn = self
            .matmul(&softmax, &v, false, &qm.attn_scale, e(Edge::Attn))
            .map_err(layer("matmul_attn"))?;
        let l_o = self.linear(&attn, &qm.o_linear).map_err(layer("l_o"))?;
        let add_mha = self
            .add(&l_o, &add_pe, &qm.add_mha.lhs, &qm.add_mha.rhs, e(Edge::AddMha))
            .map_err(layer("add_mha"))?;
        let bn_mha = self.batchnorm(&add_mha, &qm.bn_mha).map_err(layer("bn_mha"))?;
        let ffn1 = self.linear(&bn_mha, &qm.ffn1).map_err(layer("l_ffn1"))?;
        let relu = self.relu(&ffn1).map_err(layer("relu"))?;
        let ffn2 = self.linear(&relu, &qm.ffn2).map_err(layer("l_ffn2"))?;
        let add_ffn = self
            .add(&ffn2, &bn_mha, &qm.add_ffn.lhs, &qm.add_ffn.rhs, e(Edge::AddFfn))
            .map_err(layer("add_ffn"))?;
        let bn_ffn = self.batchnorm(&add_ffn, &qm.bn_ffn).map_err(layer("bn_ffn"))?;
        let gap = self.gap(&bn_ffn, &qm.gap_scale, e(Edge::Gap)).map_err(layer("gap"))?;
        let output = self.linear(&gap, &qm.output_linear).map_err(layer("l_output"))?;

        let tensors = [
            x.clone(),
            l_input,
            add_pe,
            q,
            k,
            v,
            score,
            softmax,
            attn,
            l_o,
            add_mha,
            bn_mha,
            ffn1,
            relu,
            ffn2,
            add_ffn,
            bn_ffn,
            gap,
            output,
        ];
        Ok(Trace {
            edges: Edge::ALL.into_iter().zip(tensors).collect(),
        })
    }
}

/// Rounding-identical recomputation of every edge of the integer pipeline.
pub fn sim_quant_forward(qm: &QuantizedModel, x: &IntTensor) -> Result<Trace> {
    Oracle::exact().forward(qm, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::new(6, 2, 4, 8).unwrap()
    }

    #[test]
    fn zero_model_outputs_bias() {
        let mut fm = FloatModel::zeros(&cfg());
        let x = vec![0.3; 12];
        assert_eq!(float_forward(&fm, &x).unwrap(), 0.0);
        fm.output_linear.bias[0] = 1.25;
        assert_eq!(float_forward(&fm, &x).unwrap(), 1.25);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let c = cfg();
        let mut fm = FloatModel::zeros(&c);
        for (i, w) in fm.q_linear.weight.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        fm.k_linear.weight.clone_from(&fm.q_linear.weight);
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let trace = float_forward_traced(&fm, &x).unwrap();
        let probs = &trace.iter().find(|(e, _)| *e == Edge::Softmax).unwrap().1;
        for row in probs.chunks_exact(c.n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_toy_model_by_hand() {
        // m = 1, d = 1: L_input copies the input, every other layer is zero
        // except the residual paths, BN at identity and L_output = 1.
        // add_pe(t) = x + sin(t); attention contributes L_O = 0, so
        // add_mha = add_pe, ffn2 = 0, add_ffn = add_pe and the output is
        // the mean of x + sin(t) over t.
        let c = ModelConfig::new(3, 1, 1, 8).unwrap();
        let mut fm = FloatModel::zeros(&c);
        fm.input_linear.weight[0] = 1.0;
        fm.output_linear.weight[0] = 1.0;
        let x = [0.5, 0.5, 0.5];
        let expect = 0.5 + (0f64.sin() + 1f64.sin() + 2f64.sin()) / 3.0;
        assert!((float_forward(&fm, &x).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let mut fm = FloatModel::zeros(&cfg());
        fm.q_linear.bias[0] = f64::INFINITY;
        let err = float_forward(&fm, &[0.0; 12]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteActivation { ref layer } if layer == "q"));
    }

    #[test]
    fn calibration_requires_samples() {
        let fm = FloatModel::zeros(&cfg());
        assert!(matches!(calibrate_model(&fm, &[]), Err(Error::EmptyBatch)));
        let rec = calibrate_model(&fm, &[vec![0.1; 12]]).unwrap();
        assert!(rec.is_complete());
        let input = rec.get(Edge::Input).unwrap();
        assert_eq!(input.min(), input.max());
    }

    #[test]
    fn rescale_rounds_ties_away_from_zero() {
        let half = crate::qcore::derive_fixed_scale(0.5, 16).unwrap();
        let o = Oracle::exact();
        assert_eq!(o.rescale(3, &half), 2);
        assert_eq!(o.rescale(-3, &half), -2);
        assert_eq!(Oracle::with_fault(RoundingFault::FloorRequant).rescale(-3, &half), -2);
        assert_eq!(Oracle::with_fault(RoundingFault::FloorRequant).rescale(3, &half), 1);
    }
}
