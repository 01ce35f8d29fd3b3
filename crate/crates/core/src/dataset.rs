//! Tabular dataset ingestion: schema validation, CSV loading, one-hot
//! encoding with optional scaling, and seeded train/test splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;

/// Cell values treated as missing.
pub const MISSING_SENTINELS: [&str; 2] = ["?", ""];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file has no header row")]
    MissingHeader,
    #[error("column `{0}` is not shared by the header and the schema")]
    UnknownColumn(String),
    #[error("value in row {row}, column `{column}` does not match the column kind")]
    TypeMismatch { row: usize, column: String },
    #[error("no rows left after dropping missing values")]
    EmptyDataset,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("category `{value}` in column `{column}` was not seen when the encoder was fitted")]
    UnseenCategory { column: String, value: String },
    #[error("column `{0}` has no bounds; bounds scaling needs caller-supplied bounds")]
    MissingBounds(String),
    #[error("test fraction {0} outside (0, 1)")]
    FractionOutOfRange(f64),
    #[error("need at least 2 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    /// Level order; index 1 of a binary column is the positive level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn numeric(name: &str, bounds: Option<[f64; 2]>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Numeric, bounds, categories: None }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            bounds: None,
            categories: Some(categories.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn binary(name: &str, negative: &str, positive: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Binary,
            bounds: None,
            categories: Some(vec![negative.into(), positive.into()]),
        }
    }

    fn validate(&self) -> Result<(), IngestError> {
        if let Some([lo, hi]) = self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(IngestError::InvalidSchema(format!(
                    "column `{}` bounds must satisfy low < high",
                    self.name
                )));
            }
        }
        if let Some(cats) = &self.categories {
            let mut seen = std::collections::HashSet::new();
            if cats.iter().any(|c| !seen.insert(c)) {
                return Err(IngestError::InvalidSchema(format!(
                    "column `{}` has duplicate categories",
                    self.name
                )));
            }
            match self.kind {
                ColumnKind::Categorical if cats.is_empty() => {
                    return Err(IngestError::InvalidSchema(format!(
                        "column `{}` has an empty category list",
                        self.name
                    )))
                }
                ColumnKind::Binary if cats.len() != 2 => {
                    return Err(IngestError::InvalidSchema(format!(
                        "binary column `{}` needs exactly two levels",
                        self.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// The JSON sidecar describing a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub columns: Vec<ColumnSpec>,
    pub label: String,
    pub protected: Vec<String>,
}

impl SchemaFile {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Number(f64),
    /// Index into the column's category list.
    Level(u32),
}

impl Cell {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Cell::Number(x) => x,
            Cell::Level(l) => l as f64,
        }
    }

    pub fn level(&self) -> Option<u32> {
        match *self {
            Cell::Level(l) => Some(l),
            Cell::Number(_) => None,
        }
    }
}

/// Typed, validated rows plus the schema that describes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub schema: Vec<ColumnSpec>,
    pub rows: Vec<Vec<Cell>>,
    pub label: String,
    pub protected: Vec<String>,
    /// Rows removed at load time because they held a missing-value sentinel.
    #[serde(default)]
    pub dropped_rows: usize,
}

impl TabularDataset {
    /// Build a dataset and check every invariant.
    pub fn new(
        schema: Vec<ColumnSpec>,
        rows: Vec<Vec<Cell>>,
        label: &str,
        protected: &[&str],
    ) -> Result<Self, IngestError> {
        let ds = Self {
            schema,
            rows,
            label: label.into(),
            protected: protected.iter().map(|s| s.to_string()).collect(),
            dropped_rows: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        validate_schema(&self.schema, &self.label, &self.protected)?;
        if self.rows.is_empty() {
            return Err(IngestError::EmptyDataset);
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.schema.len() {
                return Err(IngestError::TypeMismatch {
                    row: r,
                    column: format!("<{} cells>", row.len()),
                });
            }
            for (cell, spec) in row.iter().zip(&self.schema) {
                let ok = match (spec.kind, cell) {
                    (ColumnKind::Numeric, Cell::Number(x)) => x.is_finite(),
                    (ColumnKind::Categorical | ColumnKind::Binary, Cell::Level(l)) => spec
                        .categories
                        .as_ref()
                        .map(|c| (*l as usize) < c.len())
                        .unwrap_or(false),
                    _ => false,
                };
                if !ok {
                    return Err(IngestError::TypeMismatch { row: r, column: spec.name.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    fn label_index(&self) -> usize {
        self.column_index(&self.label).expect("validated label")
    }

    /// Binary labels (1 = second level of the label column).
    pub fn labels(&self) -> Vec<u8> {
        let li = self.label_index();
        self.rows.iter().map(|r| (r[li].as_f64() as u8).min(1)).collect()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            label: self.label.clone(),
            protected: self.protected.clone(),
            dropped_rows: 0,
        }
    }

    /// Content digest over schema, label, protected list and rows.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Content<'a> {
            schema: &'a [ColumnSpec],
            rows: &'a [Vec<Cell>],
            label: &'a str,
            protected: &'a [String],
        }
        canonical::digest_of(&Content {
            schema: &self.schema,
            rows: &self.rows,
            label: &self.label,
            protected: &self.protected,
        })
        .expect("dataset serializes")
    }

    /// Whether every numeric column carries caller-supplied bounds.
    pub fn has_bounds(&self) -> bool {
        self.schema
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric)
            .all(|c| c.bounds.is_some())
    }
}

fn validate_schema(schema: &[ColumnSpec], label: &str, protected: &[String]) -> Result<(), IngestError> {
    let mut names = std::collections::HashSet::new();
    for col in schema {
        col.validate()?;
        if !names.insert(col.name.as_str()) {
            return Err(IngestError::InvalidSchema(format!("duplicate column `{}`", col.name)));
        }
    }
    let label_spec = schema
        .iter()
        .find(|c| c.name == label)
        .ok_or_else(|| IngestError::InvalidSchema(format!("label `{label}` not in schema")))?;
    let binary_label = match label_spec.kind {
        ColumnKind::Binary => true,
        ColumnKind::Categorical => label_spec.categories.as_ref().map(|c| c.len() == 2).unwrap_or(true),
        ColumnKind::Numeric => false,
    };
    if !binary_label {
        return Err(IngestError::InvalidSchema(format!("label `{label}` is not binary")));
    }
    if protected.is_empty() {
        return Err(IngestError::InvalidSchema("protected attribute list is empty".into()));
    }
    for p in protected {
        let spec = schema
            .iter()
            .find(|c| &c.name == p)
            .ok_or_else(|| IngestError::InvalidSchema(format!("protected `{p}` not in schema")))?;
        if spec.kind == ColumnKind::Numeric {
            return Err(IngestError::InvalidSchema(format!("protected `{p}` must be categorical")));
        }
        if p == label {
            return Err(IngestError::InvalidSchema("label cannot be protected".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

/// Load a CSV file against `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &SchemaFile, opts: &CsvOptions) -> Result<TabularDataset, IngestError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    load_csv_bytes(&bytes, schema, opts)
}

/// Load CSV content already in memory.
pub fn load_csv_bytes(bytes: &[u8], schema: &SchemaFile, opts: &CsvOptions) -> Result<TabularDataset, IngestError> {
    validate_schema(&schema.columns, &schema.label, &schema.protected)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(IngestError::MissingHeader);
    }
    // header and schema must agree as sets
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if !schema.columns.iter().any(|c| c.name == h) {
            return Err(IngestError::UnknownColumn(h.to_string()));
        }
        position.insert(h, i);
    }
    for c in &schema.columns {
        if !position.contains_key(c.name.as_str()) {
            return Err(IngestError::UnknownColumn(c.name.clone()));
        }
    }

    let mut columns = schema.columns.clone();
    let mut level_index: Vec<HashMap<String, u32>> = columns
        .iter()
        .map(|c| {
            c.categories
                .iter()
                .flatten()
                .enumerate()
                .map(|(i, s)| (s.clone(), i as u32))
                .collect()
        })
        .collect();
    // binary columns without explicit levels use "0"/"1"
    for (c, idx) in columns.iter_mut().zip(level_index.iter_mut()) {
        if c.kind == ColumnKind::Binary && c.categories.is_none() {
            c.categories = Some(vec!["0".into(), "1".into()]);
            idx.insert("0".into(), 0);
            idx.insert("1".into(), 1);
        }
    }
    let infer: Vec<bool> = columns
        .iter()
        .map(|c| c.kind == ColumnKind::Categorical && c.categories.is_none())
        .collect();

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let fields: Vec<&str> = columns
            .iter()
            .map(|c| record.get(position[c.name.as_str()]).unwrap_or(""))
            .collect();
        if fields.iter().any(|f| MISSING_SENTINELS.contains(f)) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(columns.len());
        for (ci, (col, raw)) in columns.iter().zip(&fields).enumerate() {
            let cell = match col.kind {
                ColumnKind::Numeric => {
                    let x: f64 = raw
                        .parse()
                        .ok()
                        .filter(|x: &f64| x.is_finite())
                        .ok_or_else(|| IngestError::TypeMismatch { row: r, column: col.name.clone() })?;
                    Cell::Number(x)
                }
                ColumnKind::Categorical | ColumnKind::Binary => {
                    let map = &mut level_index[ci];
                    match map.get(*raw) {
                        Some(&l) => Cell::Level(l),
                        None if infer[ci] => {
                            let l = map.len() as u32;
                            map.insert(raw.to_string(), l);
                            Cell::Level(l)
                        }
                        None => return Err(IngestError::TypeMismatch { row: r, column: col.name.clone() }),
                    }
                }
            };
            row.push(cell);
        }
        rows.push(row);
    }
    for (ci, col) in columns.iter_mut().enumerate() {
        if infer[ci] {
            let mut levels: Vec<(&String, &u32)> = level_index[ci].iter().collect();
            levels.sort_by_key(|(_, &l)| l);
            col.categories = Some(levels.into_iter().map(|(s, _)| s.clone()).collect());
        }
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows containing missing values");
    }
    let mut ds = TabularDataset {
        schema: columns,
        rows,
        label: schema.label.clone(),
        protected: schema.protected.clone(),
        dropped_rows: 0,
    };
    ds.validate()?;
    ds.dropped_rows = dropped;
    Ok(ds)
}

/// How numeric columns are rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    /// Zero mean, unit variance from the fitting data.
    #[default]
    Standardize,
    /// Affine map of the caller-supplied bounds onto [-1, 1], clamping
    /// out-of-range values. Data-independent, so usable on private paths.
    Bounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub scaling: Scaling,
    pub include_protected_as_feature: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { scaling: Scaling::Standardize, include_protected_as_feature: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureBlock {
    OneHot { column: String, categories: Vec<String> },
    Numeric { column: String, center: f64, scale: f64, bounds: Option<[f64; 2]> },
}

impl FeatureBlock {
    pub fn width(&self) -> usize {
        match self {
            FeatureBlock::OneHot { categories, .. } => categories.len(),
            FeatureBlock::Numeric { .. } => 1,
        }
    }

    pub fn column(&self) -> &str {
        match self {
            FeatureBlock::OneHot { column, .. } | FeatureBlock::Numeric { column, .. } => column,
        }
    }
}

/// Fitted, reversible mapping from schema columns to feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub options: EncodeOptions,
    pub blocks: Vec<FeatureBlock>,
    pub label: String,
    pub protected: Vec<String>,
    /// Level names per protected attribute, indexed by dense group id.
    pub group_levels: Vec<Vec<String>>,
    pub warnings: Vec<String>,
}

/// Numeric design matrix with labels and protected-group ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    n_rows: usize,
    n_features: usize,
    /// Row-major `n_rows * n_features` values.
    features: Vec<f64>,
    pub labels: Vec<u8>,
    /// One dense group-id vector per protected attribute.
    pub groups: Vec<Vec<u32>>,
    /// Number of levels of each protected attribute.
    #[serde(default)]
    pub group_cardinalities: Vec<u32>,
    /// Per-feature `[low, high]` range in encoded space, when known.
    pub feature_bounds: Vec<Option<[f64; 2]>>,
    pub feature_names: Vec<String>,
}

impl EncodedMatrix {
    /// Build directly from rows (synthetic data and tests).
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<u8>, groups: Vec<u32>) -> Self {
        let n_rows = rows.len();
        let n_features = rows.first().map(|r| r.len()).unwrap_or(0);
        assert!(rows.iter().all(|r| r.len() == n_features), "ragged rows");
        assert_eq!(labels.len(), n_rows);
        assert_eq!(groups.len(), n_rows);
        Self {
            n_rows,
            n_features,
            features: rows.into_iter().flatten().collect(),
            labels,
            group_cardinalities: vec![groups.iter().max().map_or(1, |m| m + 1)],
            groups: vec![groups],
            feature_bounds: vec![None; n_features],
            feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<[f64; 2]>) -> Self {
        assert_eq!(bounds.len(), self.n_features);
        self.feature_bounds = bounds.into_iter().map(Some).collect();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks(self.n_features.max(1)).take(self.n_rows)
    }

    /// Bounds for every feature, or `None` when any is unknown.
    pub fn all_bounds(&self) -> Option<Vec<[f64; 2]>> {
        self.feature_bounds.iter().copied().collect()
    }

    /// Group ids over the intersection of all protected attributes: the
    /// mixed-radix number of the level tuple, so ids agree across any two
    /// matrices encoded with the same schema.
    pub fn joint_groups(&self) -> Vec<u32> {
        if self.groups.len() == 1 {
            return self.groups[0].clone();
        }
        (0..self.n_rows)
            .map(|i| {
                self.groups.iter().enumerate().fold(0u32, |acc, (a, g)| {
                    acc * self.group_cardinalities.get(a).copied().unwrap_or(1).max(1) + g[i]
                })
            })
            .collect()
    }

    /// Rows at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            n_rows: indices.len(),
            n_features: self.n_features,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: self.groups.iter().map(|g| indices.iter().map(|&i| g[i]).collect()).collect(),
            group_cardinalities: self.group_cardinalities.clone(),
            feature_bounds: self.feature_bounds.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

impl Encoder {
    /// Fit the encoder on `ds` (scaling statistics come from `ds` only).
    pub fn fit(ds: &TabularDataset, options: EncodeOptions) -> Result<Self, IngestError> {
        ds.validate()?;
        let mut blocks = Vec::new();
        let mut warnings = Vec::new();
        for (ci, col) in ds.schema.iter().enumerate() {
            if col.name == ds.label {
                continue;
            }
            if ds.protected.contains(&col.name) && !options.include_protected_as_feature {
                continue;
            }
            match col.kind {
                ColumnKind::Categorical | ColumnKind::Binary => blocks.push(FeatureBlock::OneHot {
                    column: col.name.clone(),
                    categories: col.categories.clone().unwrap_or_default(),
                }),
                ColumnKind::Numeric => {
                    let (center, scale) = match options.scaling {
                        Scaling::None => (0.0, 1.0),
                        Scaling::Bounds => {
                            let [lo, hi] = col.bounds.ok_or_else(|| IngestError::MissingBounds(col.name.clone()))?;
                            ((lo + hi) / 2.0, (hi - lo) / 2.0)
                        }
                        Scaling::Standardize => {
                            let n = ds.n_rows() as f64;
                            let mean = ds.rows.iter().map(|r| r[ci].as_f64()).sum::<f64>() / n;
                            let var = ds.rows.iter().map(|r| (r[ci].as_f64() - mean).powi(2)).sum::<f64>() / n;
                            let std = var.sqrt();
                            if std > 0.0 {
                                (mean, std)
                            } else {
                                let msg = format!("constant column `{}` passed through centered", col.name);
                                log::warn!("{msg}");
                                warnings.push(msg);
                                (mean, 1.0)
                            }
                        }
                    };
                    blocks.push(FeatureBlock::Numeric { column: col.name.clone(), center, scale, bounds: col.bounds });
                }
            }
        }
        let group_levels = ds
            .protected
            .iter()
            .map(|p| {
                let spec = &ds.schema[ds.column_index(p).expect("validated")];
                spec.categories.clone().unwrap_or_default()
            })
            .collect();
        Ok(Self {
            options,
            blocks,
            label: ds.label.clone(),
            protected: ds.protected.clone(),
            group_levels,
            warnings,
        })
    }

    pub fn width(&self) -> usize {
        self.blocks.iter().map(FeatureBlock::width).sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in &self.blocks {
            match b {
                FeatureBlock::OneHot { column, categories } => {
                    names.extend(categories.iter().map(|c| format!("{column}={c}")))
                }
                FeatureBlock::Numeric { column, .. } => names.push(column.clone()),
            }
        }
        names
    }

    /// Source column of each feature column.
    pub fn feature_sources(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.column().to_string(), b.width()))
            .collect()
    }

    /// Encode `ds` with the fitted mapping.
    pub fn transform(&self, ds: &TabularDataset) -> Result<EncodedMatrix, IngestError> {
        let p = self.width();
        let n = ds.n_rows();
        let mut features = vec![0.0; n * p];
        let mut feature_bounds = Vec::with_capacity(p);
        let mut offset = 0;
        for block in &self.blocks {
            let ci = ds
                .column_index(block.column())
                .ok_or_else(|| IngestError::UnknownColumn(block.column().into()))?;
            match block {
                FeatureBlock::OneHot { column, categories } => {
                    let ds_levels = ds.schema[ci].categories.as_deref().unwrap_or_default();
                    // map dataset level index -> encoder level index
                    let mut remap = Vec::with_capacity(ds_levels.len());
                    for lvl in ds_levels {
                        remap.push(categories.iter().position(|c| c == lvl));
                    }
                    for (i, row) in ds.rows.iter().enumerate() {
                        let l = row[ci].level().expect("categorical cell") as usize;
                        let j = remap[l].ok_or_else(|| IngestError::UnseenCategory {
                            column: column.clone(),
                            value: ds_levels[l].clone(),
                        })?;
                        features[i * p + offset + j] = 1.0;
                    }
                    feature_bounds.extend(std::iter::repeat_n(Some([0.0, 1.0]), categories.len()));
                }
                FeatureBlock::Numeric { center, scale, bounds, .. } => {
                    let clamp = self.options.scaling == Scaling::Bounds;
                    for (i, row) in ds.rows.iter().enumerate() {
                        let mut x = row[ci].as_f64();
                        if clamp {
                            let [lo, hi] = bounds.expect("bounds scaling requires bounds");
                            x = x.clamp(lo, hi);
                        }
                        features[i * p + offset] = (x - center) / scale;
                    }
                    feature_bounds.push(match (self.options.scaling, bounds) {
                        (Scaling::Bounds, _) => Some([-1.0, 1.0]),
                        (Scaling::None, Some(b)) => Some(*b),
                        _ => None,
                    });
                }
            }
            offset += block.width();
        }
        let li = ds.column_index(&self.label).ok_or_else(|| IngestError::UnknownColumn(self.label.clone()))?;
        let labels = ds.rows.iter().map(|r| (r[li].as_f64() as u8).min(1)).collect();
        let mut groups = Vec::new();
        for (pi, attr) in self.protected.iter().enumerate() {
            let ci = ds.column_index(attr).ok_or_else(|| IngestError::UnknownColumn(attr.clone()))?;
            let ds_levels = ds.schema[ci].categories.as_deref().unwrap_or_default();
            let mut ids = Vec::with_capacity(n);
            for row in &ds.rows {
                let name = &ds_levels[row[ci].level().expect("categorical cell") as usize];
                let id = self.group_levels[pi]
                    .iter()
                    .position(|g| g == name)
                    .ok_or_else(|| IngestError::UnseenCategory { column: attr.clone(), value: name.clone() })?;
                ids.push(id as u32);
            }
            groups.push(ids);
        }
        Ok(EncodedMatrix {
            n_rows: n,
            n_features: p,
            features,
            labels,
            groups,
            group_cardinalities: self.group_levels.iter().map(|l| l.len() as u32).collect(),
            feature_bounds,
            feature_names: self.feature_names(),
        })
    }

    /// Reconstruct typed rows (in `schema` column order) from an encoded
    /// matrix. Protected columns come from the group vectors and the label
    /// from the label vector.
    pub fn inverse(&self, schema: &[ColumnSpec], m: &EncodedMatrix) -> Vec<Vec<Cell>> {
        let mut offsets = HashMap::new();
        let mut offset = 0;
        for block in &self.blocks {
            offsets.insert(block.column().to_string(), (offset, block));
            offset += block.width();
        }
        (0..m.n_rows())
            .map(|i| {
                let x = m.row(i);
                schema
                    .iter()
                    .map(|col| {
                        if col.name == self.label {
                            return Cell::Level(m.labels[i] as u32);
                        }
                        if let Some((off, block)) = offsets.get(&col.name) {
                            return match block {
                                FeatureBlock::OneHot { categories, .. } => {
                                    let j = (0..categories.len())
                                        .max_by(|&a, &b| x[off + a].total_cmp(&x[off + b]))
                                        .unwrap_or(0);
                                    let name = &categories[j];
                                    let l = col
                                        .categories
                                        .as_ref()
                                        .and_then(|c| c.iter().position(|s| s == name))
                                        .unwrap_or(j);
                                    Cell::Level(l as u32)
                                }
                                FeatureBlock::Numeric { center, scale, .. } => Cell::Number(x[*off] * scale + center),
                            };
                        }
                        let pi = self.protected.iter().position(|p| p == &col.name).expect("column is encoded somewhere");
                        let name = &self.group_levels[pi][m.groups[pi][i] as usize];
                        let l = col.categories.as_ref().and_then(|c| c.iter().position(|s| s == name)).unwrap_or(0);
                        Cell::Level(l as u32)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Fit on `ds` and encode it in one step.
pub fn encode_dataset(ds: &TabularDataset, options: EncodeOptions) -> Result<(Encoder, EncodedMatrix), IngestError> {
    let enc = Encoder::fit(ds, options)?;
    let m = enc.transform(ds)?;
    Ok((enc, m))
}

/// Disjoint train/test index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split of `n` rows; with `labels` the split is stratified.
pub fn split_indices(n: usize, labels: Option<&[u8]>, test_fraction: f64, seed: u64) -> Result<SplitIndices, IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::FractionOutOfRange(test_fraction));
    }
    if n < 2 {
        return Err(IngestError::TooFewRows(n));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = match labels {
        Some(y) => {
            let mut by_class = vec![Vec::new(), Vec::new()];
            for (i, &l) in y.iter().enumerate().take(n) {
                by_class[l.min(1) as usize].push(i);
            }
            by_class
        }
        None => vec![(0..n).collect()],
    };
    let mut test = Vec::new();
    let mut train = Vec::new();
    for mut idx in strata {
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    // never leave either side empty
    if test.is_empty() {
        test.push(train.pop().expect("n >= 2"));
    } else if train.is_empty() {
        train.push(test.pop().expect("n >= 2"));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Seeded train/test split of a dataset.
pub fn split_dataset(
    ds: &TabularDataset,
    test_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<(TabularDataset, TabularDataset), IngestError> {
    let labels = ds.labels();
    let s = split_indices(ds.n_rows(), stratify.then_some(labels.as_slice()), test_fraction, seed)?;
    Ok((ds.subset(&s.train), ds.subset(&s.test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TabularDataset {
        let schema = vec![
            ColumnSpec::numeric("age", Some([0.0, 10.0])),
            ColumnSpec::categorical("color", &["red", "green", "blue"]),
            ColumnSpec::binary("sex", "m", "f"),
            ColumnSpec::binary("y", "no", "yes"),
        ];
        let rows = vec![
            vec![Cell::Number(0.0), Cell::Level(0), Cell::Level(0), Cell::Level(1)],
            vec![Cell::Number(10.0), Cell::Level(1), Cell::Level(1), Cell::Level(0)],
            vec![Cell::Number(10.0), Cell::Level(2), Cell::Level(1), Cell::Level(1)],
            vec![Cell::Number(0.0), Cell::Level(1), Cell::Level(0), Cell::Level(0)],
        ];
        TabularDataset::new(schema, rows, "y", &["sex"]).unwrap()
    }

    #[test]
    fn three_categories_give_three_columns() {
        let (enc, m) = encode_dataset(&toy(), EncodeOptions::default()).unwrap();
        assert_eq!(enc.blocks[1].width(), 3);
        assert_eq!(m.n_features(), 1 + 3);
        assert_eq!(&m.row(2)[1..], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn standardize_zero_ten() {
        let (_, m) = encode_dataset(&toy(), EncodeOptions::default()).unwrap();
        let col: Vec<f64> = m.rows().map(|r| r[0]).collect();
        assert_eq!(col, vec![-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn protected_excluded_but_groups_kept() {
        let (enc, m) = encode_dataset(&toy(), EncodeOptions::default()).unwrap();
        assert!(enc.feature_sources().iter().all(|s| s != "sex"));
        assert_eq!(m.groups[0], vec![0, 1, 1, 0]);
        let opts = EncodeOptions { include_protected_as_feature: true, ..Default::default() };
        let (_, m2) = encode_dataset(&toy(), opts).unwrap();
        assert_eq!(m2.n_features(), m.n_features() + 2);
    }

    #[test]
    fn constant_column_is_centered_with_warning() {
        let mut ds = toy();
        for r in &mut ds.rows {
            r[0] = Cell::Number(3.0);
        }
        let (enc, m) = encode_dataset(&ds, EncodeOptions::default()).unwrap();
        assert_eq!(enc.warnings.len(), 1);
        assert!(m.rows().all(|r| r[0] == 0.0));
    }

    #[test]
    fn unseen_category_at_transform() {
        let ds = toy();
        let enc = Encoder::fit(&ds, EncodeOptions::default()).unwrap();
        let mut other = ds.clone();
        other.schema[1].categories = Some(vec!["red".into(), "green".into(), "blue".into(), "pink".into()]);
        other.rows[0][1] = Cell::Level(3);
        match enc.transform(&other) {
            Err(IngestError::UnseenCategory { value, .. }) => assert_eq!(value, "pink"),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn bounds_scaling_needs_bounds() {
        let mut ds = toy();
        ds.schema[0].bounds = None;
        let opts = EncodeOptions { scaling: Scaling::Bounds, ..Default::default() };
        assert!(matches!(encode_dataset(&ds, opts), Err(IngestError::MissingBounds(_))));
        let (_, m) = encode_dataset(&toy(), opts).unwrap();
        assert!(m.all_bounds().is_some());
        assert_eq!(m.row(0)[0], -1.0);
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let a = split_indices(100, None, 0.2, 7).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (80, 20));
        assert!(a.train.iter().all(|i| !a.test.contains(i)));
        assert_eq!(a, split_indices(100, None, 0.2, 7).unwrap());
        assert!(matches!(split_indices(100, None, 1.0, 7), Err(IngestError::FractionOutOfRange(_))));
        assert!(matches!(split_indices(1, None, 0.5, 7), Err(IngestError::TooFewRows(1))));
    }

    #[test]
    fn stratified_split_keeps_ratio() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 60)).collect();
        for seed in 0..20 {
            let s = split_indices(100, Some(&labels), 0.2, seed).unwrap();
            let pos = s.test.iter().filter(|&&i| labels[i] == 1).count();
            assert!((11..=13).contains(&pos), "{pos}");
        }
    }

    #[test]
    fn schema_invariants() {
        let bad = ColumnSpec { bounds: Some([1.0, 1.0]), ..ColumnSpec::numeric("a", None) };
        assert!(bad.validate().is_err());
        let dup = ColumnSpec::categorical("c", &["a", "a"]);
        assert!(dup.validate().is_err());
        let schema = vec![ColumnSpec::numeric("a", None), ColumnSpec::numeric("y", None)];
        assert!(TabularDataset::new(schema, vec![vec![Cell::Number(1.0), Cell::Number(0.0)]], "y", &["a"]).is_err());
    }
}
