//! Numeric foundations: per-tensor quantization parameters, integer tensors,
//! min/max calibration and dyadic requantization multipliers.
//!
//! Rounding is round-half-away-from-zero everywhere (`f64::round` for real
//! inputs, a sign-adjusted half offset before the shift in [`approx_mul`]).

use std::fmt;

use crate::error::{Error, Result};

/// Bitwidths the engine accepts for activations, weights and tables.
pub const SUPPORTED_BITS: [u32; 3] = [4, 6, 8];

/// Default multiplier width for [`FixedScale`].
pub const DEFAULT_MULTIPLIER_BITS: u32 = 16;

/// Largest right shift a [`FixedScale`] may use.
pub const MAX_SHIFT: u32 = 31;

/// Inclusive signed range of a `bits`-wide two's-complement integer.
pub fn signed_range(bits: u32) -> (i64, i64) {
    (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
}

/// Clamps `v` into the signed `bits`-wide range.
pub fn clamp_signed(v: i64, bits: u32) -> i64 {
    let (lo, hi) = signed_range(bits);
    v.clamp(lo, hi)
}

/// Per-tensor asymmetric quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    scale: f64,
    zero_point: i64,
    bits: u32,
}

impl QParams {
    pub fn new(scale: f64, zero_point: i64, bits: u32) -> Result<Self> {
        if !SUPPORTED_BITS.contains(&bits) {
            return Err(Error::InvalidQParams(format!(
                "bitwidth {bits} not in {SUPPORTED_BITS:?}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidQParams(format!("scale {scale} must be positive")));
        }
        let (lo, hi) = signed_range(bits);
        if zero_point < lo || zero_point > hi {
            return Err(Error::InvalidQParams(format!(
                "zero point {zero_point} outside [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            scale,
            zero_point,
            bits,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn zero_point(&self) -> i64 {
        self.zero_point
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn qmin(&self) -> i64 {
        signed_range(self.bits).0
    }

    pub fn qmax(&self) -> i64 {
        signed_range(self.bits).1
    }

    pub fn clamp(&self, v: i64) -> i64 {
        v.clamp(self.qmin(), self.qmax())
    }

    /// `clamp(round(x / S) + Z)`. The caller is responsible for `x` being finite.
    pub fn quantize_value(&self, x: f64) -> i64 {
        let q = (x / self.scale).round();
        // Saturate before the integer cast so huge values cannot wrap.
        let q = q.clamp(i32::MIN as f64, i32::MAX as f64) as i64;
        self.clamp(q + self.zero_point)
    }

    pub fn dequantize_value(&self, q: i64) -> f64 {
        self.scale * (q - self.zero_point) as f64
    }
}

impl fmt::Display for QParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(S={:e}, Z={}, b={})",
            self.scale, self.zero_point, self.bits
        )
    }
}

/// Row-major signed integer tensor with its quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i64>,
    qparams: QParams,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i64>, qparams: QParams) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} elements for shape {shape:?}"),
                actual: format!("{} elements", data.len()),
            });
        }
        let (lo, hi) = (qparams.qmin(), qparams.qmax());
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| **v < lo || **v > hi) {
            return Err(Error::InvalidQParams(format!(
                "element {i} = {v} outside the {}-bit range",
                qparams.bits()
            )));
        }
        Ok(Self {
            shape,
            data,
            qparams,
        })
    }

    /// Tensor with every element at the zero point (encoded real zero).
    pub fn zeros(shape: Vec<usize>, qparams: QParams) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![qparams.zero_point(); len],
            qparams,
        }
    }

    /// Elementwise `clamp(round(x/S) + Z)`; rejects non-finite input.
    pub fn quantize(shape: Vec<usize>, values: &[f64], qparams: QParams) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let data = values.iter().map(|&x| qparams.quantize_value(x)).collect();
        Self::new(shape, data, qparams)
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|&q| self.qparams.dequantize_value(q))
            .collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn qparams(&self) -> QParams {
        self.qparams
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch {
                expected: "rank-2 tensor".into(),
                actual: format!("shape {other:?}"),
            }),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> i64 {
        self.data[row * self.shape[1] + col]
    }

    pub fn into_data(self) -> Vec<i64> {
        self.data
    }
}

/// Running min/max tracker for one tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observer {
    min: f64,
    max: f64,
    count: u64,
}

impl Default for Observer {
    fn default() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            count: 0,
        }
    }
}

impl Observer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Observer that has already seen exactly `min` and `max`.
    pub fn from_range(min: f64, max: f64) -> Self {
        let mut o = Self::new();
        o.update(min);
        o.update(max);
        o
    }

    pub fn update(&mut self, x: f64) {
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        self.count += 1;
    }

    pub fn update_all<'a>(&mut self, xs: impl IntoIterator<Item = &'a f64>) {
        for &x in xs {
            self.update(x);
        }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Copy of this observer whose interval is stretched to contain 0.0.
    pub fn including_zero(&self) -> Self {
        Self {
            min: self.min.min(0.0),
            max: self.max.max(0.0),
            count: self.count,
        }
    }
}

/// Result of [`calibrate`]; `constant` marks a degenerate (min == max) range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub qparams: QParams,
    pub constant: bool,
}

/// Asymmetric signed calibration from an observed range.
///
/// `S = (max - min) / (2^b - 1)` and the zero point anchors the observed
/// minimum to the bottom of the signed range, `Z = -2^(b-1) - round(min / S)`,
/// clamped. Algebraically this is `(2^(b-1) - 1) - max / S`; the min-anchored
/// form keeps exact ties (e.g. the symmetric range `[-1, 1]`) at `Z = 0`.
/// A degenerate range yields `S = 1, Z = 0` with the `constant` flag set.
pub fn calibrate(observer: &Observer, bits: u32) -> Result<Calibration> {
    if observer.is_empty() {
        return Err(Error::InvalidQParams("observer has seen no values".into()));
    }
    let (min, max) = (observer.min(), observer.max());
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::InvalidQParams(format!(
            "non-finite observed range [{min}, {max}]"
        )));
    }
    if min == max {
        return Ok(Calibration {
            qparams: QParams::new(1.0, 0, bits)?,
            constant: true,
        });
    }
    if !SUPPORTED_BITS.contains(&bits) {
        return Err(Error::InvalidQParams(format!(
            "bitwidth {bits} not in {SUPPORTED_BITS:?}"
        )));
    }
    let levels = ((1u64 << bits) - 1) as f64;
    let scale = (max - min) / levels;
    let (lo, _) = signed_range(bits);
    let zero_point = clamp_signed(lo - (min / scale).round() as i64, bits);
    Ok(Calibration {
        qparams: QParams::new(scale, zero_point, bits)?,
        constant: false,
    })
}

/// Dyadic approximation `multiplier * 2^-shift` of a positive real ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedScale {
    multiplier: u64,
    shift: u32,
    ratio: f64,
}

impl FixedScale {
    /// Rebuilds a scale from stored constants, checking the multiplier width.
    pub fn from_parts(multiplier: u64, shift: u32, ratio: f64, width: u32) -> Result<Self> {
        if shift > MAX_SHIFT || width > 32 || multiplier >= (1u64 << width) {
            return Err(Error::RatioOutOfRange { ratio, width });
        }
        Ok(Self {
            multiplier,
            shift,
            ratio,
        })
    }

    pub fn multiplier(&self) -> u64 {
        self.multiplier
    }

    pub fn shift(&self) -> u32 {
        self.shift
    }

    /// The real ratio this scale approximates.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// `M * 2^-n` as a real number.
    pub fn value(&self) -> f64 {
        self.multiplier as f64 / (1u64 << self.shift) as f64
    }
}

impl fmt::Display for FixedScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} >> {}", self.multiplier, self.shift)
    }
}

/// Picks the largest shift `n <= 31` for which `round(r * 2^n)` still fits in
/// `width` bits, and uses that rounded product as the multiplier.
pub fn derive_fixed_scale(ratio: f64, width: u32) -> Result<FixedScale> {
    if !(ratio.is_finite() && ratio > 0.0) || !(8..=32).contains(&width) {
        return Err(Error::RatioOutOfRange { ratio, width });
    }
    let limit = ((1u64 << width) - 1) as f64;
    // r * 2^n is exact in binary floating point, so only the rounding is lossy.
    (0..=MAX_SHIFT)
        .rev()
        .map(|n| (n, (ratio * (1u64 << n) as f64).round()))
        .find(|&(_, m)| m <= limit)
        .map(|(shift, m)| FixedScale {
            multiplier: m as u64,
            shift,
            ratio,
        })
        .ok_or(Error::RatioOutOfRange { ratio, width })
}

/// Integer-only multiplication by a [`FixedScale`]: `(v * M) >> n` with the
/// half-LSB added away from zero before the shift.
pub fn approx_mul(v: i64, fs: &FixedScale) -> i64 {
    let product = v * fs.multiplier as i64;
    if fs.shift == 0 {
        return product;
    }
    let half = 1i64 << (fs.shift - 1);
    if product >= 0 {
        (product + half) >> fs.shift
    } else {
        -((-product + half) >> fs.shift)
    }
}
