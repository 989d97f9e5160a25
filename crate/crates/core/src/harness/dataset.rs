//! Labelled feature tables: CSV ingestion, seeded stratified splits,
//! standardization and anomaly duplication.

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Row-major features with optional binary labels (`1` = anomaly).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub y: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Array2<f64>, y: Option<Vec<u8>>) -> Result<Self> {
        if let Some(labels) = &y {
            if labels.len() != x.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: x.nrows(),
                    got: labels.len(),
                });
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("features must be finite".into()));
        }
        Ok(Self {
            name: name.into(),
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.y.as_deref().ok_or(Error::LabelsRequired)
    }

    pub fn n_anomalies(&self) -> usize {
        self.y
            .as_ref()
            .map_or(0, |y| y.iter().filter(|&&l| l == 1).count())
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize], name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            x: self.x.select(Axis(0), idx),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
        }
    }
}

fn parse_label(cell: &str, line: usize) -> Result<u8> {
    match cell.trim().parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(Error::NonBinaryLabel {
            line,
            value: cell.to_string(),
        }),
    }
}

/// Parses CSV text with a header row. The column named `label_column`, when
/// present, is split off as labels; every other column is a feature.
pub fn read_csv<R: Read>(reader: R, name: &str, label_column: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let label_idx = label_column.and_then(|l| headers.iter().position(|h| h == l));
    let n_features = headers.len() - usize::from(label_idx.is_some());
    if n_features == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut missing = Vec::new();
    let mut n_rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut row_missing = false;
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_idx {
                if cell.is_empty() {
                    row_missing = true;
                } else {
                    labels.push(parse_label(cell, line)?);
                }
                continue;
            }
            if cell.is_empty() {
                row_missing = true;
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric cell {cell:?} in column {:?}", &headers[j]),
            })?;
            if !v.is_finite() {
                row_missing = true;
            }
            values.push(v);
        }
        if row_missing {
            missing.push(line);
        }
        n_rows += 1;
    }
    if !missing.is_empty() {
        return Err(Error::MissingValues { lines: missing });
    }
    let x = Array2::from_shape_vec((n_rows, n_features), values)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Dataset::new(name, x, label_idx.map(|_| labels))
}

/// Reads a CSV file; the dataset is named after the file stem.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
    read_csv(file, &name, label_column)
}

/// Seeded train/test split. With labels, each class is split separately so
/// the anomaly fraction is preserved to within one row per part.
pub fn split(ds: &Dataset, seed: u64, train_frac: f64) -> Result<(Dataset, Dataset, Vec<String>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "splitting needs at least 2 rows, got {n}"
        )));
    }
    let n_train = (train_frac * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidParameter(format!(
            "train fraction {train_frac} leaves an empty part for {n} rows"
        )));
    }

    let strata: Vec<Vec<usize>> = match &ds.y {
        Some(y) => {
            let anomalies: Vec<usize> = (0..n).filter(|&i| y[i] == 1).collect();
            let inliers: Vec<usize> = (0..n).filter(|&i| y[i] == 0).collect();
            vec![inliers, anomalies]
        }
        None => vec![(0..n).collect()],
    };
    let mut train_sizes: Vec<usize> = strata
        .iter()
        .map(|s| (train_frac * s.len() as f64).round() as usize)
        .collect();
    if strata.len() == 2 {
        // The total is fixed; the larger stratum absorbs rounding.
        train_sizes[0] = n_train.saturating_sub(train_sizes[1]).min(strata[0].len());
        train_sizes[1] = (n_train - train_sizes[0]).min(strata[1].len());
    }

    let mut warnings = Vec::new();
    let mut train_idx = Vec::with_capacity(n_train);
    let mut test_idx = Vec::with_capacity(n - n_train);
    for (k, (stratum, &take)) in strata.iter().zip(&train_sizes).enumerate() {
        let mut idx = stratum.clone();
        let mut rng = rng_for(seed, &[stream::SPLIT, k as u64]);
        idx.shuffle(&mut rng);
        if !stratum.is_empty() && (take == 0 || take == stratum.len()) {
            warnings.push(format!(
                "stratum {k} ({} rows) has an empty {} part",
                stratum.len(),
                if take == 0 { "train" } else { "test" }
            ));
        }
        train_idx.extend_from_slice(&idx[..take]);
        test_idx.extend_from_slice(&idx[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        ds.select(&train_idx, format!("{}/train", ds.name)),
        ds.select(&test_idx, format!("{}/test", ds.name)),
        warnings,
    ))
}

/// Per-feature train mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(train: ArrayView2<f64>) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::EmptyInput("standardization train set"));
        }
        let mean = train.mean_axis(Axis(0)).expect("nonempty");
        let std: Array1<f64> = train.std_axis(Axis(0), 0.0);
        Ok(Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    /// `(x − mean)/std`; zero-variance columns are only centered.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            if s > 0.0 {
                col.mapv_inplace(|v| (v - m) / s);
            } else {
                col.mapv_inplace(|v| v - m);
            }
        }
        Ok(out)
    }
}

/// Z-scores both parts with the train statistics.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardization)> {
    let stats = Standardization::fit(train.x.view())?;
    let tr = Dataset {
        x: stats.apply(train.x.view())?,
        ..train.clone()
    };
    let te = Dataset {
        x: stats.apply(test.x.view())?,
        ..test.clone()
    };
    Ok((tr, te, stats))
}

/// Repeats every anomaly row so that it appears `k` times in total, with
/// the copies placed right after the original.
pub fn duplicate_anomalies(ds: &Dataset, k: usize) -> Result<Dataset> {
    if !(1..=6).contains(&k) {
        return Err(Error::InvalidParameter(format!(
            "duplication factor must lie in 1..=6, got {k}"
        )));
    }
    let y = ds.labels()?;
    let idx: Vec<usize> = (0..ds.len())
        .flat_map(|i| std::iter::repeat_n(i, if y[i] == 1 { k } else { 1 }))
        .collect();
    let name = if k == 1 {
        ds.name.clone()
    } else {
        format!("{}-dup{k}", ds.name)
    };
    Ok(ds.select(&idx, name))
}
