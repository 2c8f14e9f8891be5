//! Tabular spatial data: schema, CSV ingestion, dummy coding, standardization
//! and random splits.
//!
//! A [`SpatialDataset`] always carries an explicit intercept as column 0 of
//! `x`. Categorical columns are expanded to `c - 1` indicator columns with the
//! reference level dropped. Coordinates are planar kilometres.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column(s) missing from header: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("line {line}: unknown category {value:?} in column {column}")]
    UnknownCategory { line: u64, column: String, value: String },
    #[error("line {line}: non-numeric value {value:?} in column {column}")]
    NotNumeric { line: u64, column: String, value: String },
    #[error("line {line}: missing value in column {column}")]
    MissingValue { line: u64, column: String },
    #[error("no usable rows")]
    Empty,
    #[error("column {0} has zero variance")]
    ZeroVariance(String),
    #[error("need at least 2 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("split fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Response,
    CoordinateX,
    CoordinateY,
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Defaults to the first declared category.
    #[serde(default, alias = "reference", skip_serializing_if = "Option::is_none")]
    pub reference_category: Option<String>,
}

impl ColumnSchema {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        ColumnSchema { name: name.to_string(), kind, categories: Vec::new(), reference_category: None }
    }

    pub fn categorical(name: &str, categories: &[&str], reference: Option<&str>) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            reference_category: reference.map(str::to_string),
        }
    }

    pub fn reference(&self) -> Option<&str> {
        self.reference_category.as_deref().or(self.categories.first().map(String::as_str))
    }

    /// Non-reference levels in declared order; one indicator column each.
    pub fn dummy_levels(&self) -> Vec<&str> {
        let reference = self.reference();
        self.categories.iter().map(String::as_str).filter(|c| Some(*c) != reference).collect()
    }
}

/// Ordered list of column descriptions.
///
/// Serialized as TOML:
///
/// ```toml
/// [[column]]
/// name = "log_rent"
/// kind = "response"
///
/// [[column]]
/// name = "structure"
/// kind = "categorical"
/// categories = ["wood", "steel", "rc"]
/// reference = "wood"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(rename = "column")]
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let s = Schema { columns };
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Schema = toml::from_str(text).map_err(|e| DatasetError::InvalidSchema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for kind in [ColumnKind::Response, ColumnKind::CoordinateX, ColumnKind::CoordinateY] {
            let count = self.columns.iter().filter(|c| c.kind == kind).count();
            if count != 1 {
                return Err(DatasetError::InvalidSchema(format!(
                    "expected exactly one {kind:?} column, found {count}"
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!("duplicate column {}", c.name)));
            }
            if c.kind == ColumnKind::Categorical {
                if c.categories.is_empty() {
                    return Err(DatasetError::InvalidSchema(format!("{} declares no categories", c.name)));
                }
                if let Some(r) = &c.reference_category {
                    if !c.categories.contains(r) {
                        return Err(DatasetError::InvalidSchema(format!(
                            "reference {r:?} is not a category of {}",
                            c.name
                        )));
                    }
                }
            } else if !c.categories.is_empty() || c.reference_category.is_some() {
                return Err(DatasetError::InvalidSchema(format!(
                    "{} is not categorical but declares categories",
                    c.name
                )));
            }
        }
        Ok(())
    }

    fn column_of(&self, kind: ColumnKind) -> &ColumnSchema {
        self.columns.iter().find(|c| c.kind == kind).expect("validated schema")
    }

    pub fn response(&self) -> &ColumnSchema {
        self.column_of(ColumnKind::Response)
    }

    /// Design-matrix column names: intercept, continuous columns, then one
    /// `column_level` indicator per non-reference level, in schema order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        for c in &self.columns {
            match c.kind {
                ColumnKind::Continuous => names.push(c.name.clone()),
                ColumnKind::Categorical => {
                    names.extend(c.dummy_levels().into_iter().map(|l| format!("{}_{}", c.name, l)))
                }
                _ => {}
            }
        }
        names
    }

    /// Encodes one categorical label into its indicator block.
    pub fn encode_category(&self, column: &str, label: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().find(|c| c.name == column && c.kind == ColumnKind::Categorical)?;
        if !c.categories.iter().any(|l| l == label) {
            return None;
        }
        Some(c.dummy_levels().into_iter().map(|l| if l == label { 1.0 } else { 0.0 }).collect())
    }

    /// Inverse of [`Schema::encode_category`].
    pub fn decode_category(&self, column: &str, block: &[f64]) -> Option<String> {
        let c = self.columns.iter().find(|c| c.name == column && c.kind == ColumnKind::Categorical)?;
        let levels = c.dummy_levels();
        if block.len() != levels.len() {
            return None;
        }
        match block.iter().position(|&v| v == 1.0) {
            Some(i) if block.iter().filter(|&&v| v != 0.0).count() == 1 => Some(levels[i].to_string()),
            None if block.iter().all(|&v| v == 0.0) => c.reference().map(str::to_string),
            _ => None,
        }
    }
}

/// What to do with rows that contain an empty cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Fail naming the first offending row.
    #[default]
    Reject,
    /// Skip the row.
    Drop,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub missing: MissingPolicy,
}

/// Response, design matrix and coordinates of `n` sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDataset {
    pub y: DVector<f64>,
    /// `n x K`; column 0 is the intercept.
    pub x: DMatrix<f64>,
    /// Planar coordinates in km.
    pub coords: Vec<[f64; 2]>,
    pub feature_names: Vec<String>,
    /// Source data-row index (0-based, header excluded) of every row.
    pub row_ids: Vec<usize>,
}

impl SpatialDataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        coords: Vec<[f64; 2]>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.ncols() == 0 {
            return Err(DatasetError::Empty);
        }
        if x.nrows() != n || coords.len() != n || feature_names.len() != x.ncols() {
            return Err(DatasetError::Dimension(format!(
                "y has {n} rows, x is {}x{}, {} coordinates, {} names",
                x.nrows(),
                x.ncols(),
                coords.len(),
                feature_names.len()
            )));
        }
        let finite = y.iter().chain(x.iter()).chain(coords.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(DatasetError::Dimension("non-finite entry".into()));
        }
        Ok(SpatialDataset { y, x, coords, feature_names, row_ids: (0..n).collect() })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> SpatialDataset {
        let x = DMatrix::from_fn(idx.len(), self.k(), |r, c| self.x[(idx[r], c)]);
        SpatialDataset {
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            x,
            coords: idx.iter().map(|&i| self.coords[i]).collect(),
            feature_names: self.feature_names.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Same rows with every column except the intercept dropped.
    pub fn intercept_only(&self) -> SpatialDataset {
        SpatialDataset {
            x: self.x.columns(0, 1).into_owned(),
            feature_names: vec![self.feature_names[0].clone()],
            ..self.clone()
        }
    }
}

/// Features (and optionally the response) of rows to predict at.
#[derive(Debug, Clone)]
pub struct FeatureFrame {
    pub x: DMatrix<f64>,
    pub coords: Vec<[f64; 2]>,
    pub y: Option<DVector<f64>>,
    pub row_ids: Vec<usize>,
}

/// Loads a CSV whose header contains every schema column. Extra columns are
/// ignored.
pub fn load_csv(path: &Path, schema: &Schema, opts: LoadOptions) -> Result<SpatialDataset> {
    let frame = read_rows(path, schema, true, opts)?;
    let y = frame.y.expect("response required");
    Ok(SpatialDataset { y, x: frame.x, coords: frame.coords, feature_names: schema.feature_names(), row_ids: frame.row_ids })
}

/// Loads rows for prediction; the response column may be absent.
pub fn load_features_csv(path: &Path, schema: &Schema, opts: LoadOptions) -> Result<FeatureFrame> {
    read_rows(path, schema, false, opts)
}

fn read_rows(path: &Path, schema: &Schema, require_response: bool, opts: LoadOptions) -> Result<FeatureFrame> {
    schema.validate()?;
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: HashMap<String, usize> =
        reader.headers()?.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();

    let response_name = &schema.response().name;
    let has_response = header.contains_key(response_name);
    let missing: Vec<String> = schema
        .columns
        .iter()
        .filter(|c| !header.contains_key(&c.name))
        .filter(|c| require_response || c.kind != ColumnKind::Response)
        .map(|c| c.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingColumns(missing));
    }

    let k = schema.feature_names().len();
    let mut xs: Vec<f64> = Vec::new();
    let mut ys = Vec::new();
    let mut coords = Vec::new();
    let mut row_ids = Vec::new();

    let mut record = csv::StringRecord::new();
    let mut data_row = 0usize;
    let mut row = Vec::with_capacity(k);
    'rows: while reader.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let this_row = data_row;
        data_row += 1;
        row.clear();
        row.push(1.0);
        let mut y = f64::NAN;
        let mut xy = [f64::NAN; 2];
        for c in &schema.columns {
            if c.kind == ColumnKind::Response && !has_response {
                continue;
            }
            let cell = record.get(header[&c.name]).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                match opts.missing {
                    MissingPolicy::Reject => {
                        return Err(DatasetError::MissingValue { line, column: c.name.clone() })
                    }
                    MissingPolicy::Drop => continue 'rows,
                }
            }
            let numeric = || -> Result<f64> {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DatasetError::NotNumeric {
                    line,
                    column: c.name.clone(),
                    value: cell.to_string(),
                })
            };
            match c.kind {
                ColumnKind::Response => y = numeric()?,
                ColumnKind::CoordinateX => xy[0] = numeric()?,
                ColumnKind::CoordinateY => xy[1] = numeric()?,
                ColumnKind::Continuous => row.push(numeric()?),
                ColumnKind::Categorical => {
                    let block = schema.encode_category(&c.name, cell).ok_or_else(|| DatasetError::UnknownCategory {
                        line,
                        column: c.name.clone(),
                        value: cell.to_string(),
                    })?;
                    row.extend(block);
                }
            }
        }
        xs.extend_from_slice(&row);
        ys.push(y);
        coords.push(xy);
        row_ids.push(this_row);
    }
    if ys.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = ys.len();
    Ok(FeatureFrame {
        x: DMatrix::from_row_slice(n, k, &xs),
        coords,
        y: has_response.then(|| DVector::from_vec(ys)),
        row_ids,
    })
}

/// Per-column centring and scaling, replayable on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    /// Sample mean and (n - 1) standard deviation of the selected columns.
    pub fn fit(m: &DMatrix<f64>, columns: &[usize], names: &[String]) -> Result<Self> {
        let n = m.nrows();
        let mut means = Vec::with_capacity(columns.len());
        let mut sds = Vec::with_capacity(columns.len());
        for &c in columns {
            if c >= m.ncols() {
                return Err(DatasetError::Dimension(format!("column {c} out of range")));
            }
            let col = m.column(c);
            let mean = col.sum() / n as f64;
            let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            if !(sd > 0.0) || !sd.is_finite() {
                let name = names.get(c).cloned().unwrap_or_else(|| format!("#{c}"));
                return Err(DatasetError::ZeroVariance(name));
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok(Standardizer { columns: columns.to_vec(), means, sds })
    }

    pub fn apply(&self, m: &mut DMatrix<f64>) {
        for ((&c, &mean), &sd) in self.columns.iter().zip(&self.means).zip(&self.sds) {
            m.column_mut(c).iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }

    pub fn transform(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        self.apply(&mut out);
        out
    }
}

/// Standardizes the selected design columns of `ds`.
pub fn standardize(ds: &SpatialDataset, columns: &[usize]) -> Result<(SpatialDataset, Standardizer)> {
    let st = Standardizer::fit(&ds.x, columns, &ds.feature_names)?;
    let mut out = ds.clone();
    st.apply(&mut out.x);
    Ok((out, st))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded random train/test partition of `0..n`.
///
/// The training side holds `round(fraction * n)` indices, clamped so both
/// sides are non-empty. Both index lists are returned sorted.
pub fn random_split(n: usize, fraction: f64, seed: u64) -> Result<SplitIndices> {
    if n < 2 {
        return Err(DatasetError::TooFewRows(n));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

/// Balanced seeded assignment of `n` rows to `folds` folds.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % folds.max(1);
    }
    fold
}

/// `(train, held-out)` index lists for fold `f`.
pub fn fold_indices(assignment: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, &a) in assignment.iter().enumerate() {
        if a == f {
            test.push(i)
        } else {
            train.push(i)
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn abc_schema() -> Schema {
        Schema::new(vec![
            ColumnSchema::new("rent", ColumnKind::Response),
            ColumnSchema::new("x", ColumnKind::CoordinateX),
            ColumnSchema::new("y", ColumnKind::CoordinateY),
            ColumnSchema::new("age", ColumnKind::Continuous),
            ColumnSchema::categorical("grade", &["A", "B", "C"], Some("A")),
        ])
        .unwrap()
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_dummy_codes() {
        let f = write_csv("rent,x,y,age,grade,extra\n11.0,1,2,10,A,z\n11.5,3,4,20,B,z\n10.9,5,6,30,C,z\n");
        let ds = load_csv(f.path(), &abc_schema(), LoadOptions::default()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.feature_names, vec!["intercept", "age", "grade_B", "grade_C"]);
        assert_eq!(ds.x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 10.0, 0.0, 0.0]);
        assert_eq!(ds.x.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 20.0, 1.0, 0.0]);
        assert_eq!(ds.x.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 30.0, 0.0, 1.0]);
        assert_eq!(ds.coords[1], [3.0, 4.0]);
    }

    #[test]
    fn blank_response_names_the_line() {
        let f = write_csv("rent,x,y,age,grade\n11.0,1,2,10,A\n,3,4,20,B\n");
        let err = load_csv(f.path(), &abc_schema(), LoadOptions::default()).unwrap_err();
        match err {
            DatasetError::MissingValue { line, ref column } => {
                assert_eq!(line, 3);
                assert_eq!(column, "rent");
            }
            other => panic!("unexpected {other}"),
        }
        let ds = load_csv(f.path(), &abc_schema(), LoadOptions { missing: MissingPolicy::Drop }).unwrap();
        assert_eq!(ds.n(), 1);
    }

    #[test]
    fn unknown_category_and_non_numeric() {
        let f = write_csv("rent,x,y,age,grade\n11.0,1,2,10,D\n");
        let err = load_csv(f.path(), &abc_schema(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::UnknownCategory { line: 2, ref value, .. } if value == "D"));
        let f = write_csv("rent,x,y,age,grade\n11.0,1,2,old,A\n");
        let err = load_csv(f.path(), &abc_schema(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::NotNumeric { .. }));
    }

    #[test]
    fn missing_file_and_columns() {
        let err = load_csv(Path::new("/nonexistent/data.csv"), &abc_schema(), LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/data.csv"));
        let f = write_csv("rent,x,y,grade\n11.0,1,2,A\n");
        let err = load_csv(f.path(), &abc_schema(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumns(ref c) if c == &vec!["age".to_string()]));
        // Prediction inputs may omit the response only.
        let f = write_csv("x,y,age,grade\n1,2,3,A\n");
        let frame = load_features_csv(f.path(), &abc_schema(), LoadOptions::default()).unwrap();
        assert!(frame.y.is_none());
        assert_eq!(frame.x.ncols(), 4);
    }

    #[test]
    fn schema_validation() {
        let bad = Schema::new(vec![
            ColumnSchema::new("rent", ColumnKind::Response),
            ColumnSchema::new("x", ColumnKind::CoordinateX),
        ]);
        assert!(bad.is_err());
        let bad_ref = Schema::new(vec![
            ColumnSchema::new("rent", ColumnKind::Response),
            ColumnSchema::new("x", ColumnKind::CoordinateX),
            ColumnSchema::new("y", ColumnKind::CoordinateY),
            ColumnSchema::categorical("g", &["A", "B"], Some("Z")),
        ]);
        assert!(bad_ref.is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let s = abc_schema();
        let text = s.to_toml_string();
        assert_eq!(Schema::from_toml_str(&text).unwrap(), s);
        let handwritten = r#"
            [[column]]
            name = "rent"
            kind = "response"
            [[column]]
            name = "x"
            kind = "coordinate_x"
            [[column]]
            name = "y"
            kind = "coordinate_y"
            [[column]]
            name = "grade"
            kind = "categorical"
            categories = ["A", "B"]
            reference = "B"
        "#;
        let s = Schema::from_toml_str(handwritten).unwrap();
        assert_eq!(s.feature_names(), vec!["intercept", "grade_A"]);
    }

    #[test]
    fn category_round_trip() {
        let s = abc_schema();
        for label in ["A", "B", "C"] {
            let block = s.encode_category("grade", label).unwrap();
            assert!(block.iter().sum::<f64>() <= 1.0);
            assert_eq!(s.decode_category("grade", &block).unwrap(), label);
        }
    }

    #[test]
    fn standardize_symmetric_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let ds = SpatialDataset::new(DVector::from_vec(vec![0.0, 1.0, 2.0]), x, vec![[0.0, 0.0]; 3], vec!["intercept".into(), "a".into()]).unwrap();
        let (out, st) = standardize(&ds, &[1]).unwrap();
        assert_eq!(out.x.column(1).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(st.means, vec![2.0]);
        assert_eq!(st.sds, vec![1.0]);
        assert_eq!(st.transform(&ds.x), out.x);
        let err = standardize(&ds, &[0]).unwrap_err();
        assert!(matches!(err, DatasetError::ZeroVariance(ref c) if c == "intercept"));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = random_split(10, 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s, random_split(10, 0.8, 1).unwrap());
        assert!(random_split(1, 0.8, 1).is_err());
        assert!(random_split(10, 1.0, 1).is_err());
        let s = random_split(2, 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
    }

    #[test]
    fn split_partitions_large_n() {
        let n = 10_000;
        let s = random_split(n, 0.8, 99).unwrap();
        let mut seen = vec![false; n];
        for &i in s.train.iter().chain(&s.test) {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&b| b));
        assert_eq!(s.train.len(), 8000);
    }

    #[test]
    fn different_seeds_differ() {
        let splits: Vec<_> = (0..100).map(|seed| random_split(100, 0.8, seed).unwrap().train).collect();
        let distinct: std::collections::HashSet<_> = splits.iter().collect();
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn folds_are_balanced() {
        let a = fold_assignment(103, 5, 4);
        for f in 0..5 {
            let c = a.iter().filter(|&&v| v == f).count();
            assert!(c == 20 || c == 21);
        }
    }
}
