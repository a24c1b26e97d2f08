//! Integer-only compute kernels.
//!
//! Every kernel consumes [`IntTensor`]s and precomputed [`FixedScale`]s and
//! touches no floating point at run time. Accumulation is 64-bit signed.
//! Table builders ([`build_softmax_tables`], [`build_pe_table`]) and
//! [`fold_batchnorm`] run once at assembly time and may use reals.

use crate::error::{Error, Result};
use crate::qcore::{approx_mul, calibrate, clamp_signed, FixedScale, IntTensor, Observer, QParams};

/// Fully connected layer: `weights` is `out_dim x in_dim`, `bias` is stored
/// symmetrically at scale `S_W * S_X` and must fit in 32 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weights: IntTensor,
    pub bias: Vec<i64>,
    pub requant: FixedScale,
    pub in_qp: QParams,
    pub out_qp: QParams,
}

impl LinearParams {
    pub fn validate(&self) -> Result<()> {
        let (out_dim, _) = self.weights.dims2()?;
        if self.bias.len() != out_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{out_dim} bias values"),
                actual: format!("{}", self.bias.len()),
            });
        }
        check_i32("bias", &self.bias)
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

fn check_i32(what: &str, values: &[i64]) -> Result<()> {
    match values
        .iter()
        .position(|&v| v < i32::MIN as i64 || v > i32::MAX as i64)
    {
        Some(i) => Err(Error::InvalidQParams(format!(
            "{what}[{i}] = {} does not fit in 32 bits",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn expect_qparams(actual: QParams, expected: QParams) -> Result<()> {
    if actual != expected {
        return Err(Error::QParamsMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

fn shape_err(expected: impl Into<String>, actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.into(),
        actual: format!("{actual:?}"),
    }
}

/// `out = clamp(ApproxMul(sum_k (W - Z_W)(x - Z_X) + bias) + Z_A)`, one input
/// row at a time.
pub fn int_linear(x: &IntTensor, p: &LinearParams) -> Result<IntTensor> {
    expect_qparams(x.qparams(), p.in_qp)?;
    let (rows, in_dim) = x.dims2()?;
    let (out_dim, w_in) = p.weights.dims2()?;
    if in_dim != w_in {
        return Err(shape_err(format!("[_, {w_in}]"), x.shape()));
    }
    let zx = p.in_qp.zero_point();
    let zw = p.weights.qparams().zero_point();
    let za = p.out_qp.zero_point();
    let w = p.weights.data();
    let xs = x.data();

    let mut out = Vec::with_capacity(rows * out_dim);
    for row in xs.chunks_exact(in_dim) {
        for (o, w_row) in w.chunks_exact(in_dim).enumerate() {
            let acc: i64 = w_row
                .iter()
                .zip(row)
                .map(|(&wq, &xq)| (wq - zw) * (xq - zx))
                .sum::<i64>()
                + p.bias[o];
            out.push(p.out_qp.clamp(approx_mul(acc, &p.requant) + za));
        }
    }
    IntTensor::new(vec![rows, out_dim], out, p.out_qp)
}

/// Elementwise `ApproxMul(a1 - Z1, fs1) + ApproxMul(a2 - Z2, fs2) + Z3`.
pub fn int_add(
    a1: &IntTensor,
    a2: &IntTensor,
    fs1: &FixedScale,
    fs2: &FixedScale,
    out_qp: QParams,
) -> Result<IntTensor> {
    if a1.shape() != a2.shape() {
        return Err(shape_err(format!("{:?}", a1.shape()), a2.shape()));
    }
    let (z1, z2, z3) = (
        a1.qparams().zero_point(),
        a2.qparams().zero_point(),
        out_qp.zero_point(),
    );
    let data = a1
        .data()
        .iter()
        .zip(a2.data())
        .map(|(&x1, &x2)| out_qp.clamp(approx_mul(x1 - z1, fs1) + approx_mul(x2 - z2, fs2) + z3))
        .collect();
    IntTensor::new(a1.shape().to_vec(), data, out_qp)
}

/// Integer matrix product with a single requantization.
///
/// With `transpose_a2` set, `a2` is read as `c x k` through remapped indices
/// (`a2[j][k]` in place of `a2ᵀ[k][j]`); no transposed copy is built.
pub fn int_matmul(
    a1: &IntTensor,
    a2: &IntTensor,
    transpose_a2: bool,
    fs: &FixedScale,
    out_qp: QParams,
) -> Result<IntTensor> {
    let (rows, inner) = a1.dims2()?;
    let (d0, d1) = a2.dims2()?;
    let (a2_inner, cols) = if transpose_a2 { (d1, d0) } else { (d0, d1) };
    if a2_inner != inner {
        return Err(shape_err(
            format!("operand with inner dimension {inner}"),
            a2.shape(),
        ));
    }
    let (z1, z2, z3) = (
        a1.qparams().zero_point(),
        a2.qparams().zero_point(),
        out_qp.zero_point(),
    );
    let (lhs, rhs) = (a1.data(), a2.data());
    let address = |k: usize, j: usize| {
        if transpose_a2 {
            j * d1 + k
        } else {
            k * d1 + j
        }
    };

    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let acc: i64 = (0..inner)
                .map(|k| (lhs[i * inner + k] - z1) * (rhs[address(k, j)] - z2))
                .sum();
            out.push(out_qp.clamp(approx_mul(acc, fs) + z3));
        }
    }
    IntTensor::new(vec![rows, cols], out, out_qp)
}

/// Argument fed to `exp` when filling the softmax tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpArgument {
    /// `exp(S_in * x̂)`: the dequantized, max-shifted logit.
    #[default]
    Scaled,
    /// `exp(x̂)` on the raw integer offset.
    Raw,
}

/// Real range the denominator table's 2b-bit code space is spread over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenominatorRange {
    /// `n² · h`, giving `S_E = n²h / (2^(2b) - 1)`.
    #[default]
    SquaredLength,
    /// `n · h`, the largest possible row sum of `exp` values in `(0, 1]`.
    RowLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SoftmaxOptions {
    pub exp_argument: ExpArgument,
    pub denominator_range: DenominatorRange,
}

/// Numerator/denominator lookup tables for [`int_softmax`].
///
/// Both tables are indexed by `x̂ + (2^b - 1)` for the max-shifted input
/// `x̂ ∈ [-(2^b - 1), 0]`. `dlut` holds `round(E / S_E) + Z_E` in 2b bits so
/// that `dlut - Z_E` recovers the quantized exponential; `nlut` holds
/// `round(E / (S_E · S_A))` in 3b bits.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxTables {
    pub nlut: Vec<i64>,
    pub dlut: Vec<i64>,
    pub z_e: i64,
    pub s_e: f64,
    pub n: usize,
    pub in_qp: QParams,
    pub out_qp: QParams,
}

impl SoftmaxTables {
    pub fn bits(&self) -> u32 {
        self.out_qp.bits()
    }

    /// Table index of a max-shifted input.
    pub fn index(&self, x_hat: i64) -> usize {
        (x_hat + (1i64 << self.bits()) - 1) as usize
    }

    pub fn nlut_width(&self) -> u32 {
        3 * self.bits()
    }

    pub fn dlut_width(&self) -> u32 {
        2 * self.bits()
    }
}

pub fn build_softmax_tables(
    in_qp: QParams,
    out_qp: QParams,
    n: usize,
    h: usize,
) -> Result<SoftmaxTables> {
    build_softmax_tables_with(in_qp, out_qp, n, h, SoftmaxOptions::default())
}

pub fn build_softmax_tables_with(
    in_qp: QParams,
    out_qp: QParams,
    n: usize,
    h: usize,
    options: SoftmaxOptions,
) -> Result<SoftmaxTables> {
    let b = out_qp.bits();
    if in_qp.bits() != b {
        return Err(Error::InvalidConfig(format!(
            "softmax input is {}-bit but output is {b}-bit",
            in_qp.bits()
        )));
    }
    if n == 0 || h == 0 {
        return Err(Error::InvalidConfig("softmax needs n >= 1 and h >= 1".into()));
    }
    let span = match options.denominator_range {
        DenominatorRange::SquaredLength => (n * n * h) as f64,
        DenominatorRange::RowLength => (n * h) as f64,
    };
    let s_e = span / ((1u64 << (2 * b)) - 1) as f64;
    let z_e = ((1i64 << (2 * b - 1)) as f64 - 1.0 / s_e).round() as i64;
    let s_a = out_qp.scale();

    let depth = 1usize << b;
    let mut nlut = Vec::with_capacity(depth);
    let mut dlut = Vec::with_capacity(depth);
    for i in 0..depth {
        let x_hat = i as i64 - (depth as i64 - 1);
        let e = match options.exp_argument {
            ExpArgument::Scaled => (in_qp.scale() * x_hat as f64).exp(),
            ExpArgument::Raw => (x_hat as f64).exp(),
        };
        dlut.push(clamp_signed((e / s_e).round() as i64 + z_e, 2 * b));
        nlut.push(clamp_signed((e / (s_e * s_a)).round() as i64, 3 * b));
    }
    Ok(SoftmaxTables {
        nlut,
        dlut,
        z_e,
        s_e,
        n,
        in_qp,
        out_qp,
    })
}

/// Row-wise integer softmax: find the row maximum, gather numerators and the
/// denominator sum through the tables, then divide with [`nonrestoring_div`].
pub fn int_softmax(x: &IntTensor, t: &SoftmaxTables) -> Result<IntTensor> {
    expect_qparams(x.qparams(), t.in_qp)?;
    let (rows, cols) = x.dims2()?;
    if rows != t.n || cols != t.n {
        return Err(shape_err(format!("[{0}, {0}]", t.n), x.shape()));
    }
    let za = t.out_qp.zero_point();
    let mut out = Vec::with_capacity(rows * cols);
    let mut numerators = vec![0i64; cols];
    for (i, row) in x.data().chunks_exact(cols).enumerate() {
        let mut max = i64::MIN;
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0i64;
        for (j, &v) in row.iter().enumerate() {
            let idx = t.index(v - max);
            numerators[j] = t.nlut[idx];
            sum += t.dlut[idx] - t.z_e;
        }
        if sum <= 0 {
            return Err(Error::DegenerateDenominator { row: i, sum });
        }
        for &num in &numerators {
            out.push(t.out_qp.clamp(nonrestoring_div(num, sum)? + za));
        }
    }
    IntTensor::new(vec![rows, cols], out, t.out_qp)
}

/// Width of the divider datapath in bits.
pub const DIVIDER_BITS: u32 = 48;

/// Radix-2 non-restoring division, truncating toward zero.
///
/// The recurrence runs on magnitudes: each step shifts in one dividend bit
/// and either subtracts or adds the divisor depending on the sign of the
/// partial remainder, never restoring it. The quotient takes the sign of the
/// dividend.
pub fn nonrestoring_div(num: i64, den: i64) -> Result<i64> {
    if den <= 0 {
        return Err(Error::NonPositiveDivisor(den));
    }
    let limit = 1i64 << (DIVIDER_BITS - 1);
    if num <= -limit || num >= limit {
        return Err(Error::DividendOutOfRange(num));
    }
    if den >= limit {
        return Err(Error::DivisorOutOfRange(den));
    }
    let dividend = num.unsigned_abs();
    let mut remainder: i64 = 0;
    let mut quotient: u64 = 0;
    for bit in (0..DIVIDER_BITS).rev() {
        let incoming = ((dividend >> bit) & 1) as i64;
        remainder = if remainder >= 0 {
            ((remainder << 1) | incoming) - den
        } else {
            ((remainder << 1) | incoming) + den
        };
        quotient = (quotient << 1) | u64::from(remainder >= 0);
    }
    let magnitude = quotient as i64;
    Ok(if num < 0 { -magnitude } else { magnitude })
}

/// Folds frozen BatchNorm statistics into a per-feature affine
/// `γ̂ · x + β̂` with `γ̂ = γ / √(σ² + ε)` and `β̂ = β − γ̂ · μ`.
pub fn fold_batchnorm(
    gamma: &[f64],
    beta: &[f64],
    mu: &[f64],
    sigma2: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = gamma.len();
    for len in [beta.len(), mu.len(), sigma2.len()] {
        if len != d {
            return Err(Error::LengthMismatch { left: d, right: len });
        }
    }
    let gamma_hat: Vec<f64> = gamma
        .iter()
        .zip(sigma2)
        .map(|(&g, &s)| g / (s + eps).sqrt())
        .collect();
    let beta_hat = beta
        .iter()
        .zip(&gamma_hat)
        .zip(mu)
        .map(|((&b, &gh), &m)| b - gh * m)
        .collect();
    Ok((gamma_hat, beta_hat))
}

/// Folded BatchNorm: `γ̂_q` is a b-bit tensor of length `d_model`, `β̂*` is
/// stored at scale `S_γ̂ · S_X` and added inside the accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma_hat: IntTensor,
    pub beta_star: Vec<i64>,
    pub requant: FixedScale,
    pub in_qp: QParams,
    pub out_qp: QParams,
}

impl BatchNormParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta_star.len() != self.gamma_hat.len() {
            return Err(Error::LengthMismatch {
                left: self.gamma_hat.len(),
                right: self.beta_star.len(),
            });
        }
        check_i32("beta_star", &self.beta_star)
    }
}

pub fn int_batchnorm(x: &IntTensor, p: &BatchNormParams) -> Result<IntTensor> {
    expect_qparams(x.qparams(), p.in_qp)?;
    let (rows, cols) = x.dims2()?;
    if cols != p.gamma_hat.len() {
        return Err(shape_err(format!("[_, {}]", p.gamma_hat.len()), x.shape()));
    }
    let zx = p.in_qp.zero_point();
    let zg = p.gamma_hat.qparams().zero_point();
    let za = p.out_qp.zero_point();
    let gamma = p.gamma_hat.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &xq)| {
            let j = idx % cols;
            let acc = (gamma[j] - zg) * (xq - zx) + p.beta_star[j];
            p.out_qp.clamp(approx_mul(acc, &p.requant) + za)
        })
        .collect();
    IntTensor::new(vec![rows, cols], data, p.out_qp)
}

/// Global average pooling over the time axis with `1/n` folded into `fs`.
pub fn int_gap(x: &IntTensor, fs: &FixedScale, out_qp: QParams) -> Result<IntTensor> {
    let (rows, cols) = x.dims2()?;
    let zx = x.qparams().zero_point();
    let mut sums = vec![0i64; cols];
    for row in x.data().chunks_exact(cols.max(1)).take(rows) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v - zx;
        }
    }
    let data = sums
        .into_iter()
        .map(|s| out_qp.clamp(approx_mul(s, fs) + out_qp.zero_point()))
        .collect();
    IntTensor::new(vec![1, cols], data, out_qp)
}

/// `max(x, Z_X)`; quantization parameters pass through unchanged.
pub fn int_relu(x: &IntTensor) -> IntTensor {
    let z = x.qparams().zero_point();
    let data = x.data().iter().map(|&v| v.max(z)).collect();
    IntTensor::new(x.shape().to_vec(), data, x.qparams())
        .expect("relu preserves shape and range")
}

/// Quantized sinusoidal positional encoding, `n x d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct PETable {
    pub table: IntTensor,
}

/// Real-valued sinusoidal encoding: `sin` on even columns, `cos` on odd ones.
pub fn sinusoidal_encoding(n: usize, d_model: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d_model);
    for pos in 0..n {
        for j in 0..d_model {
            let pair = (j / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            out.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

/// Builds the positional-encoding table, calibrated over its own range.
pub fn build_pe_table(n: usize, d_model: usize, bits: u32) -> Result<PETable> {
    let values = sinusoidal_encoding(n, d_model);
    let mut observer = Observer::new();
    observer.update_all(&values);
    let qp = calibrate(&observer.including_zero(), bits)?.qparams;
    Ok(PETable {
        table: IntTensor::quantize(vec![n, d_model], &values, qp)?,
    })
}
