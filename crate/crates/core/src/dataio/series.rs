use std::fmt;
use std::fs::File;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Which part of a split a series or dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    #[default]
    Full,
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Full => "full",
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source: PathBuf,
    pub features: Vec<String>,
    pub target: String,
    pub split: SplitTag,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Cell contents (compared case-insensitively after trimming) that mark
    /// a missing value. A row with any missing cell is dropped and breaks
    /// contiguity.
    pub missing: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            missing: ["", "na", "n/a", "nan", "null"].map(String::from).to_vec(),
        }
    }
}

/// Clean rows of a CSV file grouped into contiguous segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub features: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// Source line (1-based, header is line 1) of every kept row.
    pub lines: Vec<u64>,
    /// Runs of rows with no dropped row between them.
    pub segments: Vec<Range<usize>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `n x m` window, row-major.
    pub input: Vec<f64>,
    pub target: f64,
    /// Source lines of the first window row and of the target row.
    pub first_line: u64,
    pub target_line: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub samples: Vec<Sample>,
    pub n: usize,
    pub m: usize,
    pub provenance: Provenance,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.target).collect()
    }
}

pub fn read_csv(path: impl AsRef<Path>, features: &[&str], target: &str) -> Result<Series> {
    read_csv_with(path, features, target, &CsvOptions::default())
}

pub fn read_csv_with(
    path: impl AsRef<Path>,
    features: &[&str],
    target: &str,
    opts: &CsvOptions,
) -> Result<Series> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let feature_idx = features.iter().map(|f| column(f)).collect::<Result<Vec<_>>>()?;
    let target_idx = column(target)?;

    let mut series = Series {
        features: Vec::new(),
        target: Vec::new(),
        lines: Vec::new(),
        segments: Vec::new(),
        provenance: Provenance {
            source: path.to_path_buf(),
            features: features.iter().map(|s| s.to_string()).collect(),
            target: target.to_string(),
            split: SplitTag::Full,
        },
    };
    let mut start = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |idx: usize| -> Result<Option<f64>> {
            let raw = record.get(idx).unwrap_or("");
            if opts.missing.iter().any(|m| m.eq_ignore_ascii_case(raw)) {
                return Ok(None);
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_nan() => Ok(None),
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(Error::MalformedCell {
                    row: line as usize,
                    column: headers[idx].to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        let row = feature_idx.iter().map(|&i| cell(i)).collect::<Result<Option<Vec<_>>>>()?;
        match (row, cell(target_idx)?) {
            (Some(row), Some(t)) => {
                series.features.push(row);
                series.target.push(t);
                series.lines.push(line);
            }
            _ => {
                series.close_segment(start);
                start = series.len();
            }
        }
    }
    series.close_segment(start);
    Ok(series)
}

/// Reads a CSV file and cuts it into every `n`-row window with a
/// single-step-ahead target.
pub fn load_csv(path: impl AsRef<Path>, features: &[&str], target: &str, n: usize) -> Result<WindowedDataset> {
    read_csv(path, features, target)?.windows(n)
}

impl Series {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn m(&self) -> usize {
        self.provenance.features.len()
    }

    fn close_segment(&mut self, start: usize) {
        if self.len() > start {
            self.segments.push(start..self.len());
        }
    }

    /// Splits at clean-row index `boundary`; segments are cut there so no
    /// window of either half can reach across.
    pub fn split_at(&self, boundary: usize) -> (Series, Series) {
        let boundary = boundary.min(self.len());
        let part = |range: Range<usize>, split| {
            let segments = self
                .segments
                .iter()
                .map(|s| s.start.max(range.start)..s.end.min(range.end))
                .filter(|s| s.start < s.end)
                .map(|s| s.start - range.start..s.end - range.start)
                .collect();
            Series {
                features: self.features[range.clone()].to_vec(),
                target: self.target[range.clone()].to_vec(),
                lines: self.lines[range].to_vec(),
                segments,
                provenance: Provenance {
                    split,
                    ..self.provenance.clone()
                },
            }
        };
        (part(0..boundary, SplitTag::Train), part(boundary..self.len(), SplitTag::Test))
    }

    /// Splits so that the first `fraction` of clean rows is the training part.
    pub fn split_fraction(&self, fraction: f64) -> (Series, Series) {
        let boundary = (self.len() as f64 * fraction.clamp(0.0, 1.0)).round() as usize;
        self.split_at(boundary)
    }

    pub fn windows(&self, n: usize) -> Result<WindowedDataset> {
        if n == 0 {
            return Err(Error::InvalidConfig("window length must be positive".into()));
        }
        let mut samples = Vec::new();
        for seg in &self.segments {
            for i in seg.start..seg.end.saturating_sub(n) {
                samples.push(Sample {
                    input: self.features[i..i + n].concat(),
                    target: self.target[i + n],
                    first_line: self.lines[i],
                    target_line: self.lines[i + n],
                });
            }
        }
        if samples.is_empty() {
            return Err(Error::TooFewRows {
                needed: n + 1,
                found: self.segments.iter().map(|s| s.len()).max().unwrap_or(0),
            });
        }
        Ok(WindowedDataset {
            samples,
            n,
            m: self.m(),
            provenance: self.provenance.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn exactly_n_plus_one_rows_give_one_sample() {
        let f = csv_file("a,y\n1,10\n2,20\n3,30\n");
        let ds = load_csv(f.path(), &["a"], "y", 2).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples[0].input, vec![1.0, 2.0]);
        assert_eq!(ds.samples[0].target, 30.0);
    }

    #[test]
    fn missing_row_breaks_contiguity() {
        let f = csv_file("a,y\n1,1\n2,2\n3,\n4,4\n5,5\n6,6\n");
        let s = read_csv(f.path(), &["a"], "y").unwrap();
        assert_eq!(s.segments, vec![0..2, 2..5]);
        let ds = s.windows(2).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples[0].first_line, 5);
        assert_eq!(ds.samples[0].target_line, 7);
    }

    #[test]
    fn errors_name_column_and_row() {
        let f = csv_file("a,y\n1,2\n1,x\n");
        match read_csv(f.path(), &["a"], "y") {
            Err(Error::MalformedCell { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "y", "x"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_csv(f.path(), &["b"], "y"), Err(Error::MissingColumn(c)) if c == "b"));
        let f = csv_file("a,y\n1,2\n");
        assert!(matches!(load_csv(f.path(), &["a"], "y", 1), Err(Error::TooFewRows { needed: 2, found: 1 })));
    }

    #[test]
    fn split_windows_stay_on_their_side() {
        let body: String = std::iter::once("a,y\n".to_string())
            .chain((0..20).map(|i| format!("{i},{i}\n")))
            .collect();
        let f = csv_file(&body);
        let (train, test) = read_csv(f.path(), &["a"], "y").unwrap().split_at(13);
        let (tr, te) = (train.windows(3).unwrap(), test.windows(3).unwrap());
        assert_eq!((tr.len(), te.len()), (10, 4));
        let boundary = test.lines[0];
        assert!(tr.samples.iter().all(|s| s.target_line < boundary));
        assert!(te.samples.iter().all(|s| s.first_line >= boundary));
        assert_eq!(te.provenance.split, SplitTag::Test);
    }
}
