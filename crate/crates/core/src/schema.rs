//! Mixed-type schema inference, CSV IO and forward/inverse row encoders.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Rng;

pub const SCHEMA_VERSION: u32 = 1;
/// Level standing in for a missing categorical value.
pub const NA_LEVEL: &str = "⟨NA⟩";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numerical,
    Binary,
    Categorical,
}

impl FeatureKind {
    /// Discrete kind implied by a cardinality: at most two levels is binary.
    pub fn for_cardinality(c: usize) -> Self {
        if c <= 2 {
            FeatureKind::Binary
        } else {
            FeatureKind::Categorical
        }
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, FeatureKind::Numerical)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

impl FeatureSpec {
    pub fn numerical(name: impl Into<String>, mean: f64, sd: f64) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numerical,
            cardinality: None,
            levels: Vec::new(),
            mean: Some(mean),
            sd: Some(sd),
        }
    }

    /// Binary or categorical spec, chosen by the number of levels.
    pub fn discrete(name: impl Into<String>, levels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::for_cardinality(levels.len()),
            cardinality: Some(levels.len()),
            levels,
            mean: None,
            sd: None,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }

    pub fn level_code(&self, value: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == value)
    }

    fn stats(&self) -> (f64, f64) {
        (self.mean.unwrap_or(0.0), self.sd.unwrap_or(1.0))
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            FeatureKind::Numerical => {
                let (Some(mean), Some(sd)) = (self.mean, self.sd) else {
                    return Err(Error::schema(format!(
                        "numerical feature '{}' lacks mean/sd",
                        self.name
                    )));
                };
                if !mean.is_finite() || !(sd.is_finite() && sd > 0.0) {
                    return Err(Error::schema(format!(
                        "feature '{}': invalid mean/sd",
                        self.name
                    )));
                }
                if !self.levels.is_empty() {
                    return Err(Error::schema(format!(
                        "numerical feature '{}' has levels",
                        self.name
                    )));
                }
            }
            kind => {
                let c = self.levels.len();
                if c == 0 {
                    return Err(Error::schema(format!(
                        "feature '{}' has no levels",
                        self.name
                    )));
                }
                if self.cardinality != Some(c) {
                    return Err(Error::schema(format!(
                        "feature '{}': cardinality {:?} but {} levels",
                        self.name, self.cardinality, c
                    )));
                }
                if kind != FeatureKind::for_cardinality(c) {
                    return Err(Error::schema(format!(
                        "feature '{}': kind {:?} inconsistent with cardinality {c}",
                        self.name, kind
                    )));
                }
                let distinct: HashSet<&String> = self.levels.iter().collect();
                if distinct.len() != c {
                    return Err(Error::schema(format!(
                        "feature '{}' has duplicate levels",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered feature catalog shared by every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub version: u32,
    pub features: Vec<FeatureSpec>,
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let s = Self {
            version: SCHEMA_VERSION,
            features,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "unsupported schema version {}",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::schema(format!(
                    "duplicate feature name '{}'",
                    f.name
                )));
            }
            f.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// Recomputes numerical means and standard deviations from `table`
    /// (typically the training split).
    pub fn refit_numeric(&mut self, table: &RawTable) -> Result<()> {
        let cols = table.column_indices(self)?;
        for (f, &ci) in self.features.iter_mut().zip(&cols) {
            if f.kind != FeatureKind::Numerical {
                continue;
            }
            let values = table
                .rows
                .iter()
                .map(|r| parse_number(&f.name, &r[ci]))
                .collect::<Result<Vec<_>>>()?;
            let (mean, sd) = mean_sd(&f.name, &values)?;
            f.mean = Some(mean);
            f.sd = Some(sd);
        }
        Ok(())
    }
}

/// Sample mean and (n - 1) standard deviation; constant columns are rejected.
fn mean_sd(name: &str, values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::data(format!(
            "numerical column '{name}' needs at least 2 values"
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 0.0 || !sd.is_finite() {
        return Err(Error::data(format!(
            "numerical column '{name}' is constant"
        )));
    }
    Ok((mean, sd))
}

fn is_missing(v: &str) -> bool {
    v.trim().is_empty()
}

fn parse_number(name: &str, v: &str) -> Result<f64> {
    let x: f64 = v.trim().parse().map_err(|_| {
        Error::data(format!(
            "non-numeric token '{v}' in numerical column '{name}'"
        ))
    })?;
    if !x.is_finite() {
        return Err(Error::data(format!(
            "non-finite value '{v}' in numerical column '{name}'"
        )));
    }
    Ok(x)
}

/// Header plus string cells, as read from CSV.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Self {
        Self { header, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::data("empty CSV: no header row"));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            header: self.header.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Position of each schema feature in this table's header.
    pub fn column_indices(&self, schema: &Schema) -> Result<Vec<usize>> {
        schema
            .features
            .iter()
            .map(|f| {
                self.header
                    .iter()
                    .position(|h| h == &f.name)
                    .ok_or_else(|| Error::schema(format!("column '{}' missing from table", f.name)))
            })
            .collect()
    }

    /// Drops rows with a missing value in any numerical feature.
    pub fn drop_incomplete(&self, schema: &Schema) -> Result<Self> {
        let cols = self.column_indices(schema)?;
        let numeric: Vec<usize> = schema
            .features
            .iter()
            .zip(&cols)
            .filter(|(f, _)| f.kind == FeatureKind::Numerical)
            .map(|(_, &c)| c)
            .collect();
        Ok(Self {
            header: self.header.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| numeric.iter().all(|&c| !is_missing(&r[c])))
                .cloned()
                .collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct InferOptions {
    /// Integer-valued columns with at most this many distinct values are
    /// treated as discrete. 0 disables the rule.
    pub max_numeric_as_categorical: usize,
}

/// Classifies every column and computes level lists and numerical moments.
///
/// A column whose non-missing cells all parse as finite numbers is numerical;
/// anything else is discrete, binary when it has at most two levels. Missing
/// discrete cells become the [`NA_LEVEL`] level; rows with a missing numerical
/// value are excluded before any statistic is computed.
pub fn infer_schema(table: &RawTable, options: &InferOptions) -> Result<Schema> {
    let mut seen = HashSet::new();
    for h in &table.header {
        if !seen.insert(h.as_str()) {
            return Err(Error::data(format!("duplicate header name '{h}'")));
        }
    }
    if table.rows.is_empty() {
        return Err(Error::data("CSV has a header but no data rows"));
    }
    let width = table.header.len();
    if let Some((i, r)) = table
        .rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != width)
    {
        return Err(Error::data(format!(
            "row {i} has {} fields, expected {width}",
            r.len()
        )));
    }

    let mut numeric = vec![false; width];
    for (c, is_num) in numeric.iter_mut().enumerate() {
        let mut any = false;
        let mut all = true;
        let mut integral = true;
        let mut distinct = HashSet::new();
        for r in &table.rows {
            let v = &r[c];
            if is_missing(v) {
                continue;
            }
            any = true;
            match v.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => {
                    integral &= x.fract() == 0.0;
                    distinct.insert(x.to_bits());
                }
                _ => {
                    all = false;
                    break;
                }
            }
        }
        *is_num = any
            && all
            && !(integral
                && options.max_numeric_as_categorical > 0
                && distinct.len() <= options.max_numeric_as_categorical);
    }

    let kept: Vec<&Vec<String>> = table
        .rows
        .iter()
        .filter(|r| (0..width).all(|c| !numeric[c] || !is_missing(&r[c])))
        .collect();
    if kept.is_empty() {
        return Err(Error::data(
            "no rows left after dropping missing numerical values",
        ));
    }

    let mut features = Vec::with_capacity(width);
    for (c, name) in table.header.iter().enumerate() {
        if numeric[c] {
            let values = kept
                .iter()
                .map(|r| parse_number(name, &r[c]))
                .collect::<Result<Vec<_>>>()?;
            let (mean, sd) = mean_sd(name, &values)?;
            features.push(FeatureSpec::numerical(name.clone(), mean, sd));
        } else {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for r in &kept {
                let v = if is_missing(&r[c]) {
                    NA_LEVEL
                } else {
                    r[c].as_str()
                };
                *counts.entry(v.to_string()).or_default() += 1;
            }
            let mut levels: Vec<(String, usize)> = counts.into_iter().collect();
            // descending frequency; BTreeMap order already breaks ties lexicographically
            levels.sort_by_key(|l| std::cmp::Reverse(l.1));
            features.push(FeatureSpec::discrete(
                name.clone(),
                levels.into_iter().map(|(l, _)| l).collect(),
            ));
        }
    }
    Schema::new(features)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    /// Standardised real values.
    Numeric(Vec<f64>),
    /// Label codes in `0..c`.
    Codes(Vec<usize>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Codes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Self {
        match self {
            Column::Numeric(v) => Column::Numeric(idx.iter().map(|&i| v[i]).collect()),
            Column::Codes(v) => Column::Codes(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Column-major encoded rows, one [`Column`] per schema feature.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub n_rows: usize,
    pub columns: Vec<Column>,
}

impl EncodedDataset {
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            n_rows: idx.len(),
            columns: self.columns.iter().map(|c| c.select(idx)).collect(),
        }
    }

    pub fn codes(&self, feature: usize) -> Option<&[usize]> {
        match &self.columns[feature] {
            Column::Codes(c) => Some(c),
            Column::Numeric(_) => None,
        }
    }

    pub fn values(&self, feature: usize) -> Option<&[f64]> {
        match &self.columns[feature] {
            Column::Numeric(v) => Some(v),
            Column::Codes(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelPolicy {
    /// Unknown levels are an error.
    #[default]
    Strict,
    /// Unknown levels map to [`NA_LEVEL`] when the feature has it.
    Lenient,
}

/// Standardises numerical cells and label-encodes discrete ones.
pub fn encode(schema: &Schema, table: &RawTable, policy: LevelPolicy) -> Result<EncodedDataset> {
    let cols = table.column_indices(schema)?;
    let mut columns = Vec::with_capacity(schema.len());
    for (f, &ci) in schema.features.iter().zip(&cols) {
        if f.kind == FeatureKind::Numerical {
            let (mean, sd) = f.stats();
            let v = table
                .rows
                .iter()
                .map(|r| parse_number(&f.name, &r[ci]).map(|x| (x - mean) / sd))
                .collect::<Result<Vec<_>>>()?;
            columns.push(Column::Numeric(v));
        } else {
            let lookup: HashMap<&str, usize> = f
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            let na = lookup.get(NA_LEVEL).copied();
            let mut codes = Vec::with_capacity(table.len());
            for r in &table.rows {
                let raw = &r[ci];
                let key = if is_missing(raw) {
                    NA_LEVEL
                } else {
                    raw.as_str()
                };
                let code = match (lookup.get(key), policy) {
                    (Some(&c), _) => c,
                    (None, LevelPolicy::Lenient) if na.is_some() => na.unwrap(),
                    _ => {
                        return Err(Error::data(format!(
                            "unknown level '{raw}' for feature '{}'",
                            f.name
                        )))
                    }
                };
                codes.push(code);
            }
            columns.push(Column::Codes(codes));
        }
    }
    Ok(EncodedDataset {
        n_rows: table.len(),
        columns,
    })
}

/// Inverse of [`encode`]: label codes back to levels, standardised values
/// back to the original scale.
pub fn decode(schema: &Schema, data: &EncodedDataset) -> Result<RawTable> {
    if data.columns.len() != schema.len() {
        return Err(Error::schema(format!(
            "{} encoded columns for {} features",
            data.columns.len(),
            schema.len()
        )));
    }
    let mut rows = vec![Vec::with_capacity(schema.len()); data.n_rows];
    for (f, col) in schema.features.iter().zip(&data.columns) {
        match (f.kind, col) {
            (FeatureKind::Numerical, Column::Numeric(v)) => {
                let (mean, sd) = f.stats();
                for (row, &x) in rows.iter_mut().zip(v) {
                    if !x.is_finite() {
                        return Err(Error::NonFinite(format!("decoded value of '{}'", f.name)));
                    }
                    row.push(format_number(x * sd + mean));
                }
            }
            (_, Column::Codes(c)) if f.kind.is_discrete() => {
                for (row, &code) in rows.iter_mut().zip(c) {
                    let level = f.levels.get(code).ok_or_else(|| {
                        Error::data(format!("code {code} out of range for feature '{}'", f.name))
                    })?;
                    row.push(level.clone());
                }
            }
            _ => {
                return Err(Error::schema(format!(
                    "column type mismatch for '{}'",
                    f.name
                )))
            }
        }
    }
    Ok(RawTable::new(schema.names(), rows))
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    format!("{x}")
}

/// Indicator vector of length `c` with a one at `code`.
pub fn one_hot(code: usize, c: usize) -> Result<Vec<f64>> {
    if code >= c {
        return Err(Error::data(format!(
            "one_hot: code {code} out of range for {c} levels"
        )));
    }
    let mut v = vec![0.0; c];
    v[code] = 1.0;
    Ok(v)
}

/// Seeded shuffled partition of `0..n` into `floor(n * fraction)` and the rest.
pub fn split(n: usize, fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::data(format!("cannot split {n} rows")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Usage(format!(
            "split fraction {fraction} not in (0, 1)"
        )));
    }
    let n_train = (n as f64 * fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::data(format!(
            "split of {n} rows at {fraction} leaves an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}
