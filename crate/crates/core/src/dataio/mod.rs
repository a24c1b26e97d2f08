//! Data in and out of the engine: CSV series and sliding windows, MinMax
//! scaling, RMSE, the on-disk model artifact and hardware memory files.

mod artifact;
mod hwmem;
mod scaler;
mod series;

pub use artifact::{load_model, save_model, ModelArtifact, FORMAT_VERSION, MANIFEST};
pub use hwmem::{
    export_hw_mem, hex_digits, parse_hex_word, read_hex_mem, to_hex_word, write_hex_mem, MemoryInfo,
    HW_MANIFEST,
};
pub use scaler::MinMaxScaler;
pub use series::{load_csv, read_csv, read_csv_with, CsvOptions, Provenance, Sample, Series, SplitTag, WindowedDataset};

use crate::error::{Error, Result};

/// Root mean square error between two equally long vectors.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_basics() {
        let t = [1.0, -2.0, 3.5];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert!((rmse(&p, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(Error::Empty)));
    }
}
