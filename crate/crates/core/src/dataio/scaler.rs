use super::Series;
use crate::error::{Error, Result};

/// Per-feature MinMax normalization to `[0, 1]`, plus one range for the
/// target. A constant column maps to 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinMaxScaler {
    fitted: Option<Ranges>,
}

#[derive(Debug, Clone, PartialEq)]
struct Ranges {
    features: Vec<(f64, f64)>,
    target: (f64, f64),
}

fn forward((lo, hi): (f64, f64), x: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn inverse((lo, hi): (f64, f64), v: f64) -> f64 {
    if hi > lo {
        lo + v * (hi - lo)
    } else {
        lo
    }
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

impl MinMaxScaler {
    pub fn new() -> Self {
        Self::default()
    }

    /// A fitted scaler from stored ranges.
    pub fn from_ranges(features: Vec<(f64, f64)>, target: (f64, f64)) -> Self {
        Self {
            fitted: Some(Ranges { features, target }),
        }
    }

    /// Fits on `series`, which should be the training split only.
    pub fn fit(&mut self, series: &Series) -> Result<()> {
        if series.is_empty() {
            return Err(Error::Empty);
        }
        let features = (0..series.m())
            .map(|j| range_of(series.features.iter().map(|r| r[j])))
            .collect();
        let target = range_of(series.target.iter().copied());
        self.fitted = Some(Ranges { features, target });
        Ok(())
    }

    pub fn fit_transform(&mut self, series: &Series) -> Result<Series> {
        self.fit(series)?;
        self.transform(series)
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    fn ranges(&self) -> Result<&Ranges> {
        self.fitted.as_ref().ok_or(Error::ScalerNotFitted)
    }

    pub fn feature_ranges(&self) -> Result<&[(f64, f64)]> {
        Ok(&self.ranges()?.features)
    }

    pub fn target_range(&self) -> Result<(f64, f64)> {
        Ok(self.ranges()?.target)
    }

    pub fn transform(&self, series: &Series) -> Result<Series> {
        let mut out = series.clone();
        for row in &mut out.features {
            *row = self.transform_features(row)?;
        }
        for t in &mut out.target {
            *t = self.transform_target(*t)?;
        }
        Ok(out)
    }

    pub fn transform_features(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.map_row(row, forward)
    }

    pub fn inverse_features(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.map_row(row, inverse)
    }

    fn map_row(&self, row: &[f64], f: fn((f64, f64), f64) -> f64) -> Result<Vec<f64>> {
        let r = self.ranges()?;
        if row.len() != r.features.len() {
            return Err(Error::LengthMismatch {
                left: row.len(),
                right: r.features.len(),
            });
        }
        Ok(row.iter().zip(&r.features).map(|(&x, &range)| f(range, x)).collect())
    }

    pub fn transform_target(&self, y: f64) -> Result<f64> {
        Ok(forward(self.ranges()?.target, y))
    }

    pub fn inverse_target(&self, v: f64) -> Result<f64> {
        Ok(inverse(self.ranges()?.target, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_constant_columns() {
        let s = MinMaxScaler::from_ranges(vec![(2.0, 6.0), (3.0, 3.0)], (0.0, 10.0));
        assert_eq!(s.transform_features(&[2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.transform_features(&[6.0, 3.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(s.inverse_target(0.25).unwrap(), 2.5);
        assert!(s.transform_features(&[1.0]).is_err());
    }

    #[test]
    fn unfitted_scaler_refuses() {
        let s = MinMaxScaler::new();
        assert!(matches!(s.inverse_target(0.5), Err(Error::ScalerNotFitted)));
        assert!(matches!(s.transform_features(&[0.5]), Err(Error::ScalerNotFitted)));
    }
}
