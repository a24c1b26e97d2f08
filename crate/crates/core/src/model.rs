//! The single-layer encoder: configuration, parameter budget, assembly from
//! floating-point weights, and the integer forward pass.
//!
//! Pipeline, in execution order:
//!
//! ```text
//! input -> L_input -> Add_PE -> {L_Q, L_K, L_V} -> MatMul_Score -> Softmax
//!   -> MatMul_Attn -> L_O -> Add_MHA(+Add_PE) -> BN_MHA -> L_FFN1 -> ReLU
//!   -> L_FFN2 -> Add_FFN(+BN_MHA) -> BN_FFN -> GAP -> L_output
//! ```

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::{
    build_pe_table, build_softmax_tables_with, fold_batchnorm, int_add, int_batchnorm, int_gap,
    int_linear, int_matmul, int_relu, int_softmax, BatchNormParams, LinearParams, PETable,
    SoftmaxOptions, SoftmaxTables,
};
use crate::qcore::{
    calibrate, derive_fixed_scale, FixedScale, IntTensor, Observer, QParams,
    DEFAULT_MULTIPLIER_BITS, SUPPORTED_BITS,
};
use crate::reference::{CalibrationRecord, FloatBatchNorm, FloatLinear, FloatModel};

/// Shape and precision of one model instance. The head count is fixed at one
/// and the feed-forward width at `4 * d_model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n: usize,
    pub m: usize,
    pub d_model: usize,
    pub bits: u32,
    pub softmax: SoftmaxOptions,
}

impl ModelConfig {
    pub const HEADS: usize = 1;

    pub fn new(n: usize, m: usize, d_model: usize, bits: u32) -> Result<Self> {
        let cfg = Self {
            n,
            m,
            d_model,
            bits,
            softmax: SoftmaxOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_softmax(mut self, softmax: SoftmaxOptions) -> Self {
        self.softmax = softmax;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d_model == 0 {
            return Err(Error::InvalidConfig(format!(
                "n, m and d_model must be positive (got {}, {}, {})",
                self.n, self.m, self.d_model
            )));
        }
        if !SUPPORTED_BITS.contains(&self.bits) {
            return Err(Error::InvalidConfig(format!(
                "bitwidth {} not in {SUPPORTED_BITS:?}",
                self.bits
            )));
        }
        Ok(())
    }

    pub fn h(&self) -> usize {
        Self::HEADS
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.d_model
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} m={} d_model={} b={}",
            self.n, self.m, self.d_model, self.bits
        )
    }
}

/// Parameter total plus a per-operation breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub breakdown: Vec<(&'static str, usize)>,
}

/// Trainable parameter count: `12 d² + (15 + m) d + 1`.
pub fn param_count(cfg: &ModelConfig) -> ParamCount {
    let (d, m) = (cfg.d_model, cfg.m);
    let breakdown = vec![
        ("L_input", (m + 1) * d),
        ("L_Q", (d + 1) * d),
        ("L_K", (d + 1) * d),
        ("L_V", (d + 1) * d),
        ("L_O", (d + 1) * d),
        ("BN_MHA", 2 * d),
        ("L_FFN1", 4 * (d + 1) * d),
        ("L_FFN2", (4 * d + 1) * d),
        ("BN_FFN", 2 * d),
        ("L_output", d + 1),
    ];
    let total = breakdown.iter().map(|(_, c)| c).sum();
    debug_assert_eq!(total, 12 * d * d + (15 + m) * d + 1);
    ParamCount { total, breakdown }
}

/// Named activation tensors between layers. Each carries its own
/// quantization parameters; `Relu` reuses those of `Ffn1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Edge {
    Input,
    LInput,
    AddPe,
    Q,
    K,
    V,
    Score,
    Softmax,
    Attn,
    LO,
    AddMha,
    BnMha,
    Ffn1,
    Relu,
    Ffn2,
    AddFfn,
    BnFfn,
    Gap,
    Output,
}

impl Edge {
    /// Every edge in execution order.
    pub const ALL: [Edge; 19] = [
        Edge::Input,
        Edge::LInput,
        Edge::AddPe,
        Edge::Q,
        Edge::K,
        Edge::V,
        Edge::Score,
        Edge::Softmax,
        Edge::Attn,
        Edge::LO,
        Edge::AddMha,
        Edge::BnMha,
        Edge::Ffn1,
        Edge::Relu,
        Edge::Ffn2,
        Edge::AddFfn,
        Edge::BnFfn,
        Edge::Gap,
        Edge::Output,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Edge::Input => "input",
            Edge::LInput => "l_input",
            Edge::AddPe => "add_pe",
            Edge::Q => "q",
            Edge::K => "k",
            Edge::V => "v",
            Edge::Score => "score",
            Edge::Softmax => "softmax",
            Edge::Attn => "attn",
            Edge::LO => "l_o",
            Edge::AddMha => "add_mha",
            Edge::BnMha => "bn_mha",
            Edge::Ffn1 => "ffn1",
            Edge::Relu => "relu",
            Edge::Ffn2 => "ffn2",
            Edge::AddFfn => "add_ffn",
            Edge::BnFfn => "bn_ffn",
            Edge::Gap => "gap",
            Edge::Output => "output",
        }
    }

    pub fn from_name(name: &str) -> Option<Edge> {
        Edge::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Whether the edge gets its own observer during calibration.
    pub fn is_calibrated(self) -> bool {
        self != Edge::Relu
    }

    pub fn calibrated() -> impl Iterator<Item = Edge> {
        Edge::ALL.into_iter().filter(|e| e.is_calibrated())
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-edge integer tensors recorded during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub edges: Vec<(Edge, IntTensor)>,
}

impl Trace {
    pub fn get(&self, edge: Edge) -> Option<&IntTensor> {
        self.edges.iter().find(|(e, _)| *e == edge).map(|(_, t)| t)
    }

    pub fn output(&self) -> &IntTensor {
        self.get(Edge::Output).expect("trace always ends with the output edge")
    }
}

/// First elementwise disagreement between two traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub edge: Edge,
    pub index: usize,
    pub expected: Option<i64>,
    pub actual: Option<i64>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<i64>| v.map_or("<missing>".to_string(), |v| v.to_string());
        write!(
            f,
            "edge `{}` index {}: expected {}, got {}",
            self.edge,
            self.index,
            show(self.expected),
            show(self.actual)
        )
    }
}

/// Compares `actual` against `expected` edge by edge in execution order.
pub fn first_mismatch(expected: &Trace, actual: &Trace) -> Option<Mismatch> {
    for (edge, want) in &expected.edges {
        let Some(got) = actual.get(*edge) else {
            return Some(Mismatch {
                edge: *edge,
                index: 0,
                expected: want.data().first().copied(),
                actual: None,
            });
        };
        let len = want.len().max(got.len());
        for index in 0..len {
            let (e, a) = (want.data().get(index), got.data().get(index));
            if e != a || want.qparams() != got.qparams() {
                return Some(Mismatch {
                    edge: *edge,
                    index,
                    expected: e.copied(),
                    actual: a.copied(),
                });
            }
        }
    }
    None
}

/// The two requantization constants of an integer addition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddScales {
    pub lhs: FixedScale,
    pub rhs: FixedScale,
}

/// Final integer output and its dequantized value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub q: i64,
    pub value: f64,
}

/// Every integer parameter, table, edge quantization and requantization
/// constant of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub edges: BTreeMap<Edge, QParams>,
    pub input_linear: LinearParams,
    pub q_linear: LinearParams,
    pub k_linear: LinearParams,
    pub v_linear: LinearParams,
    pub o_linear: LinearParams,
    pub ffn1: LinearParams,
    pub ffn2: LinearParams,
    pub output_linear: LinearParams,
    pub bn_mha: BatchNormParams,
    pub bn_ffn: BatchNormParams,
    pub pe: PETable,
    pub softmax: SoftmaxTables,
    pub add_pe: AddScales,
    pub add_mha: AddScales,
    pub add_ffn: AddScales,
    pub score_scale: FixedScale,
    pub attn_scale: FixedScale,
    pub gap_scale: FixedScale,
}

impl QuantizedModel {
    pub fn edge(&self, edge: Edge) -> QParams {
        self.edges[&edge]
    }

    /// The eight linear layers with their names, in execution order.
    pub fn linear_layers(&self) -> [(&'static str, &LinearParams); 8] {
        [
            ("l_input", &self.input_linear),
            ("l_q", &self.q_linear),
            ("l_k", &self.k_linear),
            ("l_v", &self.v_linear),
            ("l_o", &self.o_linear),
            ("l_ffn1", &self.ffn1),
            ("l_ffn2", &self.ffn2),
            ("l_output", &self.output_linear),
        ]
    }

    pub fn batchnorms(&self) -> [(&'static str, &BatchNormParams); 2] {
        [("bn_mha", &self.bn_mha), ("bn_ffn", &self.bn_ffn)]
    }

    /// Every requantization site with its name, in execution order.
    pub fn requant_sites(&self) -> Vec<(String, FixedScale)> {
        let mut sites = vec![("l_input".to_string(), self.input_linear.requant)];
        sites.push(("add_pe.lhs".into(), self.add_pe.lhs));
        sites.push(("add_pe.rhs".into(), self.add_pe.rhs));
        for (name, l) in &self.linear_layers()[1..4] {
            sites.push((name.to_string(), l.requant));
        }
        sites.push(("matmul_score".into(), self.score_scale));
        sites.push(("matmul_attn".into(), self.attn_scale));
        sites.push(("l_o".into(), self.o_linear.requant));
        sites.push(("add_mha.lhs".into(), self.add_mha.lhs));
        sites.push(("add_mha.rhs".into(), self.add_mha.rhs));
        sites.push(("bn_mha".into(), self.bn_mha.requant));
        sites.push(("l_ffn1".into(), self.ffn1.requant));
        sites.push(("l_ffn2".into(), self.ffn2.requant));
        sites.push(("add_ffn.lhs".into(), self.add_ffn.lhs));
        sites.push(("add_ffn.rhs".into(), self.add_ffn.rhs));
        sites.push(("bn_ffn".into(), self.bn_ffn.requant));
        sites.push(("gap".into(), self.gap_scale));
        sites.push(("l_output".into(), self.output_linear.requant));
        sites
    }

    /// Real ratios every requantization site must approximate, recomputed from
    /// the stored edge scales.
    pub fn expected_ratios(&self) -> Vec<(String, f64)> {
        let s = |e: Edge| self.edge(e).scale();
        let lin = |l: &LinearParams| l.weights.qparams().scale() * l.in_qp.scale() / l.out_qp.scale();
        let bn = |p: &BatchNormParams| p.gamma_hat.qparams().scale() * p.in_qp.scale() / p.out_qp.scale();
        let pe = self.pe.table.qparams().scale();
        let root = ((self.config.d_model / self.config.h()) as f64).sqrt();
        vec![
            ("l_input".into(), lin(&self.input_linear)),
            ("add_pe.lhs".into(), s(Edge::LInput) / s(Edge::AddPe)),
            ("add_pe.rhs".into(), pe / s(Edge::AddPe)),
            ("l_q".into(), lin(&self.q_linear)),
            ("l_k".into(), lin(&self.k_linear)),
            ("l_v".into(), lin(&self.v_linear)),
            ("matmul_score".into(), s(Edge::Q) * s(Edge::K) / (s(Edge::Score) * root)),
            ("matmul_attn".into(), s(Edge::Softmax) * s(Edge::V) / s(Edge::Attn)),
            ("l_o".into(), lin(&self.o_linear)),
            ("add_mha.lhs".into(), s(Edge::LO) / s(Edge::AddMha)),
            ("add_mha.rhs".into(), s(Edge::AddPe) / s(Edge::AddMha)),
            ("bn_mha".into(), bn(&self.bn_mha)),
            ("l_ffn1".into(), lin(&self.ffn1)),
            ("l_ffn2".into(), lin(&self.ffn2)),
            ("add_ffn.lhs".into(), s(Edge::Ffn2) / s(Edge::AddFfn)),
            ("add_ffn.rhs".into(), s(Edge::BnMha) / s(Edge::AddFfn)),
            ("bn_ffn".into(), bn(&self.bn_ffn)),
            ("gap".into(), s(Edge::BnFfn) / (s(Edge::Gap) * self.config.n as f64)),
            ("l_output".into(), lin(&self.output_linear)),
        ]
    }

    /// Stored weight, bias and folded BatchNorm values.
    pub fn stored_param_count(&self) -> usize {
        let linear: usize = self
            .linear_layers()
            .iter()
            .map(|(_, l)| l.weights.len() + l.bias.len())
            .sum();
        let bn: usize = self
            .batchnorms()
            .iter()
            .map(|(_, p)| p.gamma_hat.len() + p.beta_star.len())
            .sum();
        linear + bn
    }

    /// Checks shapes, widths and inter-layer quantization consistency.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        for edge in Edge::ALL {
            let qp = self
                .edges
                .get(&edge)
                .ok_or_else(|| Error::Artifact(format!("edge `{edge}` has no parameters")))?;
            if qp.bits() != cfg.bits {
                return Err(Error::InvalidConfig(format!(
                    "edge `{edge}` is {}-bit in a {}-bit model",
                    qp.bits(),
                    cfg.bits
                )));
            }
        }
        if self.edge(Edge::Relu) != self.edge(Edge::Ffn1) {
            return Err(Error::InvalidConfig("relu must share ffn1 parameters".into()));
        }
        let (d, f) = (cfg.d_model, cfg.ffn_dim());
        let expected = [
            (d, cfg.m, Edge::Input, Edge::LInput),
            (d, d, Edge::AddPe, Edge::Q),
            (d, d, Edge::AddPe, Edge::K),
            (d, d, Edge::AddPe, Edge::V),
            (d, d, Edge::Attn, Edge::LO),
            (f, d, Edge::BnMha, Edge::Ffn1),
            (d, f, Edge::Relu, Edge::Ffn2),
            (1, d, Edge::Gap, Edge::Output),
        ];
        for ((name, l), (out_dim, in_dim, src, dst)) in self.linear_layers().iter().zip(expected) {
            l.validate().map_err(|e| e.in_layer(*name))?;
            if l.weights.shape() != [out_dim, in_dim] {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} weights [{out_dim}, {in_dim}]"),
                    actual: format!("{:?}", l.weights.shape()),
                });
            }
            if l.in_qp != self.edge(src) || l.out_qp != self.edge(dst) {
                return Err(Error::InvalidConfig(format!("{name} is not wired {src} -> {dst}")));
            }
        }
        for ((name, p), (src, dst)) in self
            .batchnorms()
            .iter()
            .zip([(Edge::AddMha, Edge::BnMha), (Edge::AddFfn, Edge::BnFfn)])
        {
            p.validate().map_err(|e| e.in_layer(*name))?;
            if p.gamma_hat.len() != d || p.in_qp != self.edge(src) || p.out_qp != self.edge(dst) {
                return Err(Error::InvalidConfig(format!("{name} is not wired {src} -> {dst}")));
            }
        }
        if self.pe.table.shape() != [cfg.n, d] {
            return Err(Error::ShapeMismatch {
                expected: format!("pe [{}, {d}]", cfg.n),
                actual: format!("{:?}", self.pe.table.shape()),
            });
        }
        let depth = 1usize << cfg.bits;
        let t = &self.softmax;
        if t.nlut.len() != depth || t.dlut.len() != depth || t.n != cfg.n {
            return Err(Error::InvalidConfig("softmax tables do not match the model".into()));
        }
        if t.in_qp != self.edge(Edge::Score) || t.out_qp != self.edge(Edge::Softmax) {
            return Err(Error::InvalidConfig("softmax is not wired score -> softmax".into()));
        }
        Ok(())
    }

    /// Runs the integer pipeline and records every edge.
    pub fn forward_traced(&self, x: &IntTensor) -> Result<Trace> {
        let cfg = &self.config;
        if x.shape() != [cfg.n, cfg.m] {
            return Err(Error::ShapeMismatch {
                expected: format!("input [{}, {}]", cfg.n, cfg.m),
                actual: format!("{:?}", x.shape()),
            });
        }
        if x.qparams() != self.edge(Edge::Input) {
            return Err(Error::QParamsMismatch {
                expected: self.edge(Edge::Input).to_string(),
                actual: x.qparams().to_string(),
            });
        }
        let layer = |name: &'static str| move |e: Error| e.in_layer(name);

        let l_input = int_linear(x, &self.input_linear).map_err(layer("l_input"))?;
        let add_pe = int_add(
            &l_input,
            &self.pe.table,
            &self.add_pe.lhs,
            &self.add_pe.rhs,
            self.edge(Edge::AddPe),
        )
        .map_err(layer("add_pe"))?;
        let q = int_linear(&add_pe, &self.q_linear).map_err(layer("l_q"))?;
        let k = int_linear(&add_pe, &self.k_linear).map_err(layer("l_k"))?;
        let v = int_linear(&add_pe, &self.v_linear).map_err(layer("l_v"))?;
        let score = int_matmul(&q, &k, true, &self.score_scale, self.edge(Edge::Score))
            .map_err(layer("matmul_score"))?;
        let softmax = int_softmax(&score, &self.softmax).map_err(layer("softmax"))?;
        let attn = int_matmul(&softmax, &v, false, &self.attn_scale, self.edge(Edge::Attn))
            .map_err(layer("matmul_attn"))?;
        let l_o = int_linear(&attn, &self.o_linear).map_err(layer("l_o"))?;
        let add_mha = int_add(
            &l_o,
            &add_pe,
            &self.add_mha.lhs,
            &self.add_mha.rhs,
            self.edge(Edge::AddMha),
        )
        .map_err(layer("add_mha"))?;
        let bn_mha = int_batchnorm(&add_mha, &self.bn_mha).map_err(layer("bn_mha"))?;
        let ffn1 = int_linear(&bn_mha, &self.ffn1).map_err(layer("l_ffn1"))?;
        let relu = int_relu(&ffn1);
        let ffn2 = int_linear(&relu, &self.ffn2).map_err(layer("l_ffn2"))?;
        let add_ffn = int_add(
            &ffn2,
            &bn_mha,
            &self.add_ffn.lhs,
            &self.add_ffn.rhs,
            self.edge(Edge::AddFfn),
        )
        .map_err(layer("add_ffn"))?;
        let bn_ffn = int_batchnorm(&add_ffn, &self.bn_ffn).map_err(layer("bn_ffn"))?;
        let gap = int_gap(&bn_ffn, &self.gap_scale, self.edge(Edge::Gap)).map_err(layer("gap"))?;
        let output = int_linear(&gap, &self.output_linear).map_err(layer("l_output"))?;

        Ok(Trace {
            edges: vec![
                (Edge::Input, x.clone()),
                (Edge::LInput, l_input),
                (Edge::AddPe, add_pe),
                (Edge::Q, q),
                (Edge::K, k),
                (Edge::V, v),
                (Edge::Score, score),
                (Edge::Softmax, softmax),
                (Edge::Attn, attn),
                (Edge::LO, l_o),
                (Edge::AddMha, add_mha),
                (Edge::BnMha, bn_mha),
                (Edge::Ffn1, ffn1),
                (Edge::Relu, relu),
                (Edge::Ffn2, ffn2),
                (Edge::AddFfn, add_ffn),
                (Edge::BnFfn, bn_ffn),
                (Edge::Gap, gap),
                (Edge::Output, output),
            ],
        })
    }

    pub fn forward(&self, x: &IntTensor) -> Result<Prediction> {
        let trace = self.forward_traced(x)?;
        let out = trace.output();
        let q = out.data()[0];
        Ok(Prediction {
            q,
            value: out.qparams().dequantize_value(q),
        })
    }

    /// Quantizes a real `n x m` window with the input edge parameters.
    pub fn quantize_input(&self, window: &[f64]) -> Result<IntTensor> {
        IntTensor::quantize(
            vec![self.config.n, self.config.m],
            window,
            self.edge(Edge::Input),
        )
    }
}

fn edge_qparams(record: &CalibrationRecord, bits: u32) -> Result<BTreeMap<Edge, QParams>> {
    let mut edges = BTreeMap::new();
    for edge in Edge::calibrated() {
        let observer = record
            .get(edge)
            .ok_or_else(|| Error::MissingCalibration(edge.name().to_string()))?;
        edges.insert(edge, calibrate(&observer.including_zero(), bits)?.qparams);
    }
    edges.insert(Edge::Relu, edges[&Edge::Ffn1]);
    Ok(edges)
}

fn tensor_qparams(values: &[f64], bits: u32) -> Result<QParams> {
    let mut observer = Observer::new();
    observer.update_all(values);
    Ok(calibrate(&observer.including_zero(), bits)?.qparams)
}

fn scale(ratio: f64) -> Result<FixedScale> {
    derive_fixed_scale(ratio, DEFAULT_MULTIPLIER_BITS)
}

/// Symmetric 32-bit quantization at `scale` (zero point 0).
fn quantize_symmetric(values: &[f64], scale: f64) -> Vec<i64> {
    values
        .iter()
        .map(|&v| {
            (v / scale)
                .round()
                .clamp(i32::MIN as f64, i32::MAX as f64) as i64
        })
        .collect()
}

fn assemble_linear(f: &FloatLinear, in_qp: QParams, out_qp: QParams) -> Result<LinearParams> {
    let w_qp = tensor_qparams(&f.weight, in_qp.bits())?;
    let weights = IntTensor::quantize(vec![f.out_dim, f.in_dim], &f.weight, w_qp)?;
    let bias_scale = w_qp.scale() * in_qp.scale();
    let params = LinearParams {
        weights,
        bias: quantize_symmetric(&f.bias, bias_scale),
        requant: scale(bias_scale / out_qp.scale())?,
        in_qp,
        out_qp,
    };
    params.validate()?;
    Ok(params)
}

fn assemble_batchnorm(f: &FloatBatchNorm, in_qp: QParams, out_qp: QParams) -> Result<BatchNormParams> {
    let (gamma_hat, beta_hat) = fold_batchnorm(&f.gamma, &f.beta, &f.mean, &f.var, f.eps)?;
    let g_qp = tensor_qparams(&gamma_hat, in_qp.bits())?;
    let offset_scale = g_qp.scale() * in_qp.scale();
    let params = BatchNormParams {
        gamma_hat: IntTensor::quantize(vec![gamma_hat.len()], &gamma_hat, g_qp)?,
        beta_star: quantize_symmetric(&beta_hat, offset_scale),
        requant: scale(offset_scale / out_qp.scale())?,
        in_qp,
        out_qp,
    };
    params.validate()?;
    Ok(params)
}

/// Quantizes a floating-point model using per-edge calibration statistics.
///
/// Every edge range is widened to contain zero before calibration so that
/// real zero is exactly representable. Weights and `γ̂` are quantized
/// asymmetrically over their own range; biases and folded BatchNorm offsets
/// symmetrically in 32 bits.
pub fn assemble(
    cfg: &ModelConfig,
    float: &FloatModel,
    calibration: &CalibrationRecord,
) -> Result<QuantizedModel> {
    cfg.validate()?;
    float.check_shapes(cfg)?;
    let b = cfg.bits;
    let edges = edge_qparams(calibration, b)?;
    let e = |edge: Edge| edges[&edge];
    let layer = |name: &'static str| move |err: Error| err.in_layer(name);

    let input_linear =
        assemble_linear(&float.input_linear, e(Edge::Input), e(Edge::LInput)).map_err(layer("l_input"))?;
    let q_linear = assemble_linear(&float.q_linear, e(Edge::AddPe), e(Edge::Q)).map_err(layer("l_q"))?;
    let k_linear = assemble_linear(&float.k_linear, e(Edge::AddPe), e(Edge::K)).map_err(layer("l_k"))?;
    let v_linear = assemble_linear(&float.v_linear, e(Edge::AddPe), e(Edge::V)).map_err(layer("l_v"))?;
    let o_linear = assemble_linear(&float.o_linear, e(Edge::Attn), e(Edge::LO)).map_err(layer("l_o"))?;
    let ffn1 = assemble_linear(&float.ffn1, e(Edge::BnMha), e(Edge::Ffn1)).map_err(layer("l_ffn1"))?;
    let ffn2 = assemble_linear(&float.ffn2, e(Edge::Relu), e(Edge::Ffn2)).map_err(layer("l_ffn2"))?;
    let output_linear =
        assemble_linear(&float.output_linear, e(Edge::Gap), e(Edge::Output)).map_err(layer("l_output"))?;
    let bn_mha = assemble_batchnorm(&float.bn_mha, e(Edge::AddMha), e(Edge::BnMha)).map_err(layer("bn_mha"))?;
    let bn_ffn = assemble_batchnorm(&float.bn_ffn, e(Edge::AddFfn), e(Edge::BnFfn)).map_err(layer("bn_ffn"))?;

    let pe = build_pe_table(cfg.n, cfg.d_model, b).map_err(layer("pe"))?;
    let softmax = build_softmax_tables_with(e(Edge::Score), e(Edge::Softmax), cfg.n, cfg.h(), cfg.softmax)
        .map_err(layer("softmax"))?;

    let s = |edge: Edge| e(edge).scale();
    let add = |lhs: f64, rhs: f64, out: Edge| -> Result<AddScales> {
        Ok(AddScales {
            lhs: scale(lhs / s(out))?,
            rhs: scale(rhs / s(out))?,
        })
    };
    let add_pe = add(s(Edge::LInput), pe.table.qparams().scale(), Edge::AddPe).map_err(layer("add_pe"))?;
    let add_mha = add(s(Edge::LO), s(Edge::AddPe), Edge::AddMha).map_err(layer("add_mha"))?;
    let add_ffn = add(s(Edge::Ffn2), s(Edge::BnMha), Edge::AddFfn).map_err(layer("add_ffn"))?;
    let root = ((cfg.d_model / cfg.h()) as f64).sqrt();
    let score_scale =
        scale(s(Edge::Q) * s(Edge::K) / (s(Edge::Score) * root)).map_err(layer("matmul_score"))?;
    let attn_scale = scale(s(Edge::Softmax) * s(Edge::V) / s(Edge::Attn)).map_err(layer("matmul_attn"))?;
    let gap_scale = scale(s(Edge::BnFfn) / (s(Edge::Gap) * cfg.n as f64)).map_err(layer("gap"))?;

    let model = QuantizedModel {
        config: *cfg,
        edges,
        input_linear,
        q_linear,
        k_linear,
        v_linear,
        o_linear,
        ffn1,
        ffn2,
        output_linear,
        bn_mha,
        bn_ffn,
        pe,
        softmax,
        add_pe,
        add_mha,
        add_ffn,
        score_scale,
        attn_scale,
        gap_scale,
    };
    model.validate()?;
    Ok(model)
}
