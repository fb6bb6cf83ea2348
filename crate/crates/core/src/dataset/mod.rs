//! Loading, cleaning, normalizing, splitting and profiling tabular data.

mod profile;
pub mod synthetic;

pub use profile::{profile, ClassBalance, Correlation, Histogram, ProfileReport, VifEntry};

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Columns with at most this many distinct values are ordinal.
pub const ORDINAL_MAX_DISTINCT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Binary,
    Ordinal,
    Continuous,
}

/// Description of one predictor in its source (raw) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
    pub observed_min: f64,
    pub observed_max: f64,
}

impl FeatureSchema {
    /// Infers kind and range from the non-missing values of a column.
    pub fn infer(name: &str, values: impl Iterator<Item = f64>) -> Self {
        let mut distinct = HashSet::new();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| !v.is_nan()) {
            lo = lo.min(v);
            hi = hi.max(v);
            if distinct.len() <= ORDINAL_MAX_DISTINCT {
                distinct.insert(v.to_bits());
            }
        }
        let binary = !distinct.is_empty()
            && distinct
                .iter()
                .all(|&b| b == 0f64.to_bits() || b == 1f64.to_bits() || b == (-0f64).to_bits());
        let kind = if binary {
            FeatureKind::Binary
        } else if distinct.len() <= ORDINAL_MAX_DISTINCT {
            FeatureKind::Ordinal
        } else {
            FeatureKind::Continuous
        };
        if lo > hi {
            lo = f64::NAN;
            hi = f64::NAN;
        }
        FeatureSchema {
            name: name.to_string(),
            kind,
            observed_min: lo,
            observed_max: hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformStep {
    pub step: String,
    pub detail: String,
}

/// Numeric feature table with 0/1 labels. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub schema: Vec<FeatureSchema>,
    pub transform_log: Vec<TransformStep>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, names: &[&str]) -> Result<Self> {
        if names.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                expected: features.cols(),
                got: names.len(),
            });
        }
        let schema = names
            .iter()
            .enumerate()
            .map(|(j, n)| FeatureSchema::infer(n, features.column(j)))
            .collect();
        Self::with_schema(features, labels, schema)
    }

    pub fn with_schema(
        features: Matrix,
        labels: Vec<u8>,
        schema: Vec<FeatureSchema>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if schema.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                expected: features.cols(),
                got: schema.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("label {bad} is not 0/1")));
        }
        Ok(Dataset {
            features,
            labels,
            schema,
            transform_log: Vec::new(),
        })
    }

    #[inline]
    pub fn row_count(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.schema.iter().map(|s| s.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.name == name)
    }

    /// `[negatives, positives]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - pos, pos]
    }

    pub fn has_missing(&self) -> bool {
        self.features.as_slice().iter().any(|v| v.is_nan())
    }

    pub fn log(&mut self, step: &str, detail: impl Into<String>) {
        self.transform_log.push(TransformStep {
            step: step.to_string(),
            detail: detail.into(),
        });
    }

    /// Rows at `idx`, in that order. Schema and log are carried over.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            schema: self.schema.clone(),
            transform_log: self.transform_log.clone(),
        }
    }

    /// Keeps the named columns, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Dataset> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown feature `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Dataset {
            features: self.features.select_columns(&idx),
            labels: self.labels.clone(),
            schema: idx.iter().map(|&j| self.schema[j].clone()).collect(),
            transform_log: self.transform_log.clone(),
        };
        out.log("select_features", names.join(","));
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, out: W, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.schema.iter().map(|s| s.name.as_str()).collect();
        header.push(label_column);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (r, &y) in self.features.iter_rows().zip(&self.labels) {
            record.clear();
            record.extend(r.iter().map(|v| {
                if v.is_nan() {
                    "NA".to_string()
                } else {
                    v.to_string()
                }
            }));
            record.push(y.to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

fn parse_cell(s: &str) -> f64 {
    let t = s.trim();
    if t.is_empty() || t == "NA" {
        return f64::NAN;
    }
    t.parse::<f64>().unwrap_or(f64::NAN)
}

/// Reads a headered CSV. Empty cells, `NA` and unparsable cells become missing.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut d = read_csv(std::io::BufReader::new(file), label_column)?;
    d.log("load_csv", path.display().to_string());
    Ok(d)
}

pub fn read_csv<R: Read>(input: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let names: Vec<&str> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.as_str())
        .collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                rec.len(),
                header.len()
            )));
        }
        let raw = rec[label_idx].trim();
        let label = match raw.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(Error::InvalidLabel {
                    row: i + 1,
                    column: label_column.to_string(),
                    value: raw.to_string(),
                })
            }
        };
        labels.push(label);
        data.extend(
            rec.iter()
                .enumerate()
                .filter(|&(j, _)| j != label_idx)
                .map(|(_, c)| parse_cell(c)),
        );
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let features = Matrix::from_vec(labels.len(), names.len(), data)?;
    Dataset::new(features, labels, &names)
}

/// Drops rows identical (features and label) to an earlier row.
pub fn deduplicate(d: &Dataset) -> (Dataset, usize) {
    let mut seen = HashSet::with_capacity(d.row_count());
    let keep: Vec<usize> = (0..d.row_count())
        .filter(|&i| {
            let mut key: Vec<u64> = d
                .features
                .row(i)
                .iter()
                .map(|v| canonical_bits(*v))
                .collect();
            key.push(u64::from(d.labels[i]));
            seen.insert(key)
        })
        .collect();
    let removed = d.row_count() - keep.len();
    let mut out = d.subset(&keep);
    out.log("deduplicate", format!("removed {removed} duplicate rows"));
    (out, removed)
}

fn canonical_bits(v: f64) -> u64 {
    if v.is_nan() {
        f64::NAN.to_bits()
    } else if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeStrategy {
    /// Column median everywhere.
    Median,
    /// Mode for binary columns, median for the rest.
    #[default]
    ModeForBinary,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn impute(d: &Dataset, strategy: ImputeStrategy) -> Result<Dataset> {
    let mut out = d.clone();
    let mut filled = 0usize;
    for (j, schema) in d.schema.iter().enumerate() {
        let col = d.features.column_vec(j);
        let n_missing = col.iter().filter(|v| v.is_nan()).count();
        if n_missing == 0 {
            continue;
        }
        let mut present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if present.is_empty() {
            return Err(Error::AllMissing(schema.name.clone()));
        }
        let fill = match (strategy, schema.kind) {
            (ImputeStrategy::ModeForBinary, FeatureKind::Binary) => {
                let ones = present.iter().filter(|&&v| v == 1.0).count();
                // ties go to 0
                if 2 * ones > present.len() {
                    1.0
                } else {
                    0.0
                }
            }
            _ => median(&mut present),
        };
        for (i, v) in col.iter().enumerate() {
            if v.is_nan() {
                out.features.set(i, j, fill);
            }
        }
        filled += n_missing;
    }
    out.log("impute", format!("{strategy:?}: filled {filled} cells"));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScalerMethod {
    #[default]
    MinMax,
}

/// Per-column min-max scaler onto `[0, 1]`. Constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub method: ScalerMethod,
    pub names: Vec<String>,
    pub ranges: Vec<ColumnRange>,
}

impl Scaler {
    pub fn fit(d: &Dataset) -> Self {
        let ranges = (0..d.n_features())
            .map(|j| {
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in d.features.column(j).filter(|v| !v.is_nan()) {
                    min = min.min(v);
                    max = max.max(v);
                }
                if min > max {
                    min = 0.0;
                    max = 0.0;
                }
                ColumnRange { min, max }
            })
            .collect();
        Scaler {
            method: ScalerMethod::MinMax,
            names: d.feature_names(),
            ranges,
        }
    }

    #[inline]
    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        let r = self.ranges[j];
        let span = r.max - r.min;
        if span > 0.0 {
            (v - r.min) / span
        } else {
            0.0
        }
    }

    #[inline]
    pub fn unscale_value(&self, j: usize, v: f64) -> f64 {
        let r = self.ranges[j];
        v * (r.max - r.min) + r.min
    }

    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        self.map(m, Self::scale_value)
    }

    pub fn inverse_transform(&self, m: &Matrix) -> Result<Matrix> {
        self.map(m, Self::unscale_value)
    }

    fn map(&self, m: &Matrix, f: fn(&Self, usize, f64) -> f64) -> Result<Matrix> {
        if m.cols() != self.ranges.len() {
            return Err(Error::DimensionMismatch {
                expected: self.ranges.len(),
                got: m.cols(),
            });
        }
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = f(self, j, *v);
            }
        }
        Ok(out)
    }

    /// Scaler restricted to the named columns, in that order.
    pub fn subset(&self, names: &[String]) -> Result<Scaler> {
        let ranges = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .map(|j| self.ranges[j])
                    .ok_or_else(|| Error::InvalidArgument(format!("scaler has no column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scaler {
            method: self.method,
            names: names.to_vec(),
            ranges,
        })
    }
}

pub fn normalize(d: &Dataset) -> Result<(Dataset, Scaler)> {
    if d.has_missing() {
        return Err(Error::HasMissing);
    }
    let scaler = Scaler::fit(d);
    let mut out = d.clone();
    out.features = scaler.transform(&d.features)?;
    out.log("normalize", "min-max to [0,1]");
    Ok((out, scaler))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Index-level split; both index lists come back sorted.
pub fn split_indices(
    labels: &[u8],
    test_fraction: f64,
    stratify: bool,
    seed: u64,
) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let groups: Vec<Vec<usize>> = if stratify {
        let mut g = vec![Vec::new(), Vec::new()];
        for (i, &y) in labels.iter().enumerate() {
            g[usize::from(y)].push(i);
        }
        for (class, members) in g.iter().enumerate() {
            if members.len() < 2 {
                return Err(Error::ClassTooSmall {
                    class: class as u8,
                    count: members.len(),
                    required: 2,
                });
            }
        }
        g
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in groups {
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(
    d: &Dataset,
    test_fraction: f64,
    stratify: bool,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(&d.labels, test_fraction, stratify, seed)?;
    let mut train = d.subset(&idx.train);
    let mut test = d.subset(&idx.test);
    let detail = format!("test_fraction={test_fraction} stratify={stratify} seed={seed}");
    train.log("split:train", detail.clone());
    test.log("split:test", detail);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[&[f64]], labels: &[u8]) -> Dataset {
        let names: Vec<String> = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        Dataset::new(Matrix::from_rows(rows).unwrap(), labels.to_vec(), &names).unwrap()
    }

    #[test]
    fn header_only_csv_is_empty() {
        let err = read_csv("a,b,y\n".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn schema_kinds_inferred() {
        let csv = "HighBP,Age,BMI,y\n0,1,20.5\n1,3,31.2\n0,13,40.1\n1,2,18.3\n";
        // rows are short one field
        assert!(read_csv(csv.as_bytes(), "y").is_err());

        let mut csv = String::from("HighBP,Age,BMI,y\n");
        for i in 0..40 {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                i % 2,
                i % 13 + 1,
                18.0 + i as f64 * 0.7,
                i % 2
            ));
        }
        let d = read_csv(csv.as_bytes(), "y").unwrap();
        assert_eq!(d.schema[0].kind, FeatureKind::Binary);
        assert_eq!(d.schema[1].kind, FeatureKind::Ordinal);
        assert_eq!(d.schema[2].kind, FeatureKind::Continuous);
        assert_eq!(d.schema[1].observed_min, 1.0);
        assert_eq!(d.schema[1].observed_max, 13.0);
    }

    #[test]
    fn bad_label_names_row_and_column() {
        let err = read_csv("a,Outcome\n1,0\n2,yes\n".as_bytes(), "Outcome").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("Outcome"), "{msg}");
        let err = read_csv("a,b\n1,0\n".as_bytes(), "Outcome").unwrap_err();
        assert!(matches!(err, Error::MissingLabelColumn(_)));
    }

    #[test]
    fn missing_cells_parse_as_nan() {
        let d = read_csv("a,b,y\n1,,0\nNA,2,1\nx,3,0\n".as_bytes(), "y").unwrap();
        assert!(d.features.get(0, 1).is_nan());
        assert!(d.features.get(1, 0).is_nan());
        assert!(d.features.get(2, 0).is_nan());
        assert!(d.has_missing());
    }

    #[test]
    fn dedup_keeps_first_and_respects_label() {
        let d = ds(&[&[1.0, 0.0], &[1.0, 0.0], &[2.0, 3.0]], &[1, 1, 0]);
        let (out, removed) = deduplicate(&d);
        assert_eq!(removed, 1);
        assert_eq!(out.row_count(), 2);

        let d = ds(&[&[1.0, 0.0], &[1.0, 0.0]], &[1, 0]);
        assert_eq!(deduplicate(&d).1, 0);
    }

    #[test]
    fn impute_median_and_mode() {
        let nan = f64::NAN;
        let d = ds(
            &[&[1.0, 0.0], &[nan, 0.0], &[3.0, 1.0], &[3.0, nan]],
            &[0, 1, 0, 1],
        );
        let out = impute(&d, ImputeStrategy::ModeForBinary).unwrap();
        assert_eq!(out.features.column_vec(0), vec![1.0, 3.0, 3.0, 3.0]);
        assert_eq!(out.features.column_vec(1), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(!out.has_missing());

        let d = ds(&[&[1.0], &[nan], &[3.0]], &[0, 1, 0]);
        let out = impute(&d, ImputeStrategy::Median).unwrap();
        assert_eq!(out.features.column_vec(0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn impute_identity_without_missing() {
        let d = ds(&[&[1.0, 5.0], &[2.0, 6.0]], &[0, 1]);
        let out = impute(&d, ImputeStrategy::default()).unwrap();
        assert_eq!(out.features, d.features);
    }

    #[test]
    fn impute_all_missing_names_column() {
        let nan = f64::NAN;
        let d = ds(&[&[1.0, nan], &[2.0, nan]], &[0, 1]);
        let err = impute(&d, ImputeStrategy::default()).unwrap_err();
        assert!(err.to_string().contains("f1"));
    }

    #[test]
    fn normalize_endpoints_and_constant() {
        let d = ds(&[&[0.0, 7.0], &[50.0, 7.0], &[100.0, 7.0]], &[0, 1, 0]);
        let (out, scaler) = normalize(&d).unwrap();
        assert_eq!(out.features.column_vec(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(out.features.column_vec(1), vec![0.0, 0.0, 0.0]);
        assert_eq!(scaler.ranges[1], ColumnRange { min: 7.0, max: 7.0 });
        assert!(normalize(&ds(&[&[f64::NAN]], &[0])).is_err());
    }

    #[test]
    fn stratified_split_exact() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let s = split_indices(&labels, 0.2, true, 7).unwrap();
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.test.iter().filter(|&&i| labels[i] == 1).count(), 10);
        assert_eq!(s, split_indices(&labels, 0.2, true, 7).unwrap());
        assert_ne!(s, split_indices(&labels, 0.2, true, 8).unwrap());
    }

    #[test]
    fn split_rejects_tiny_class_and_bad_fraction() {
        let labels = [0, 0, 0, 1];
        assert!(matches!(
            split_indices(&labels, 0.5, true, 0),
            Err(Error::ClassTooSmall { class: 1, .. })
        ));
        assert!(split_indices(&labels, 0.5, false, 0).is_ok());
        assert!(split_indices(&labels, 1.0, false, 0).is_err());
        assert!(split_indices(&labels, 0.0, false, 0).is_err());
    }
}
