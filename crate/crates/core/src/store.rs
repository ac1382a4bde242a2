// Copyright 2026 The Skyjoin Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Embedded columnar catalog store.
//!
//! Catalog tables are ingested from delimited text, validated once, and then
//! shared read-only between workers. Intermediate match products live in a
//! [`StagingRegistry`], the only mutable part of the store.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{to_unit_vector, Circle, GeometryError, Region, SkyCoord, UnitVector};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: u64,
        column: String,
        reason: String,
    },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("bad coordinate at line {line}: {reason}")]
    BadCoordinate { line: u64, reason: String },
    #[error("invalid schema for {table}: {reason}")]
    Schema { table: String, reason: String },
    #[error("catalog config: {0}")]
    Config(String),
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int64,
    Float64,
    Text,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int64 | ColumnType::Float64)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Int64 => "int64",
            ColumnType::Float64 => "float64",
            ColumnType::Text => "text",
        })
    }
}

/// A scalar cell or expression value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Total order used for keys and tie-breaking: Null < Bool < numbers < Text.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Bool(_) => 1,
                Value::Int(_) | Value::Float(_) => 2,
                Value::Text(_) => 3,
            }
        }
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) if rank(a) == 2 && rank(b) == 2 => {
                a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap())
            }
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }
}

/// Shortest text that parses back to the same float.
pub fn format_float(f: f64) -> String {
    let plain = format!("{f}");
    if plain.len() > 24 {
        format!("{f:e}")
    } else {
        plain
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => f.write_str(&format_float(*x)),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// Ordered, hashable key component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyPart {
    Int(i64),
    Float(i64),
    Text(String),
}

impl KeyPart {
    fn from_value(v: &Value) -> Option<KeyPart> {
        match v {
            Value::Int(i) => Some(KeyPart::Int(*i)),
            Value::Float(f) => {
                let b = f.to_bits() as i64;
                Some(KeyPart::Float(b ^ ((((b >> 63) as u64) >> 1) as i64)))
            }
            Value::Text(s) => Some(KeyPart::Text(s.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Column {
    Int64(Vec<Option<i64>>),
    Float64(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl Column {
    fn new(ty: ColumnType) -> Self {
        match ty {
            ColumnType::Int64 => Column::Int64(Vec::new()),
            ColumnType::Float64 => Column::Float64(Vec::new()),
            ColumnType::Text => Column::Text(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Int64(v) => v.len(),
            Column::Float64(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            Column::Int64(_) => ColumnType::Int64,
            Column::Float64(_) => ColumnType::Float64,
            Column::Text(_) => ColumnType::Text,
        }
    }

    pub fn get(&self, row: usize) -> Value {
        match self {
            Column::Int64(v) => v[row].map_or(Value::Null, Value::Int),
            Column::Float64(v) => v[row].map_or(Value::Null, Value::Float),
            Column::Text(v) => v[row].clone().map_or(Value::Null, Value::Text),
        }
    }

    pub fn get_f64(&self, row: usize) -> Option<f64> {
        match self {
            Column::Int64(v) => v[row].map(|i| i as f64),
            Column::Float64(v) => v[row],
            Column::Text(_) => None,
        }
    }

    fn push_parsed(&mut self, field: &str) -> Result<(), String> {
        let empty = field.is_empty();
        match self {
            Column::Int64(v) => v.push(if empty {
                None
            } else {
                Some(field.trim().parse::<i64>().map_err(|e| format!("{e} in {field:?}"))?)
            }),
            Column::Float64(v) => v.push(if empty {
                None
            } else {
                Some(field.trim().parse::<f64>().map_err(|e| format!("{e} in {field:?}"))?)
            }),
            Column::Text(v) => v.push(if empty { None } else { Some(field.to_string()) }),
        }
        Ok(())
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Int64(v) => Column::Int64(rows.iter().map(|&r| v[r]).collect()),
            Column::Float64(v) => Column::Float64(rows.iter().map(|&r| v[r]).collect()),
            Column::Text(v) => Column::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoordSpec {
    Spherical { ra: String, dec: String },
    Cartesian { cx: String, cy: String, cz: String },
}

impl CoordSpec {
    fn columns(&self) -> Vec<&str> {
        match self {
            CoordSpec::Spherical { ra, dec } => vec![ra, dec],
            CoordSpec::Cartesian { cx, cy, cz } => vec![cx, cy, cz],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogSchema {
    pub dataset: String,
    pub table: String,
    pub columns: Vec<ColumnDef>,
    pub key_columns: Vec<String>,
    pub coords: CoordSpec,
    /// Per-detection 1-sigma error column, arcseconds.
    pub error_column: Option<String>,
    /// Smallest error any detection may carry, arcseconds.
    pub sigma_floor_arcsec: Option<f64>,
    pub footprint: Option<Region>,
}

impl CatalogSchema {
    pub fn qualified_name(&self) -> String {
        format!("{}:{}", self.dataset, self.table)
    }

    /// Case-insensitive column lookup.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column_type(&self, idx: usize) -> ColumnType {
        self.columns[idx].ty
    }

    fn schema_error(&self, reason: impl Into<String>) -> StoreError {
        StoreError::Schema {
            table: self.qualified_name(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.to_ascii_lowercase()) {
                return Err(self.schema_error(format!("duplicate column {}", c.name)));
            }
        }
        if self.key_columns.is_empty() {
            return Err(self.schema_error("no primary key columns"));
        }
        for k in &self.key_columns {
            self.column_index(k)
                .ok_or_else(|| self.schema_error(format!("key column {k} not declared")))?;
        }
        let mut numeric: Vec<&str> = self.coords.columns();
        if let Some(e) = &self.error_column {
            numeric.push(e);
        }
        for c in numeric {
            let idx = self
                .column_index(c)
                .ok_or_else(|| self.schema_error(format!("column {c} not declared")))?;
            if !self.columns[idx].ty.is_numeric() {
                return Err(self.schema_error(format!("column {c} must be numeric")));
            }
        }
        if let Some(f) = self.sigma_floor_arcsec {
            if !(f.is_finite() && f > 0.0) {
                return Err(self.schema_error("error floor must be positive"));
            }
        }
        Ok(())
    }
}

/// Immutable, validated catalog table.
#[derive(Debug, Clone)]
pub struct CatalogTable {
    schema: CatalogSchema,
    columns: Vec<Column>,
    positions: Vec<UnitVector>,
    key_idx: Vec<usize>,
    sigma_range: Option<(f64, f64)>,
}

impl CatalogTable {
    /// Validates columns against the schema. `lines` maps rows to source
    /// line numbers for error messages.
    pub fn from_columns(
        schema: CatalogSchema,
        columns: Vec<Column>,
        lines: Option<&[u64]>,
    ) -> Result<Self, StoreError> {
        schema.validate()?;
        if columns.len() != schema.columns.len() {
            return Err(schema.schema_error("column count mismatch"));
        }
        for (c, def) in columns.iter().zip(&schema.columns) {
            if c.column_type() != def.ty {
                return Err(schema.schema_error(format!("column {} has wrong type", def.name)));
            }
        }
        let rows = columns.first().map_or(0, Column::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(schema.schema_error("columns differ in length"));
        }
        let line_of = |r: usize| lines.map_or(r as u64 + 2, |l| l[r]);
        let idx = |name: &str| schema.column_index(name).expect("validated");

        let key_idx: Vec<usize> = schema.key_columns.iter().map(|k| idx(k)).collect();
        let mut keys = BTreeSet::new();
        for r in 0..rows {
            let mut key = Vec::with_capacity(key_idx.len());
            for &k in &key_idx {
                match KeyPart::from_value(&columns[k].get(r)) {
                    Some(p) => key.push(p),
                    None => {
                        return Err(StoreError::Parse {
                            line: line_of(r),
                            column: schema.columns[k].name.clone(),
                            reason: "null in key column".into(),
                        })
                    }
                }
            }
            if !keys.insert(key) {
                let shown: Vec<String> = key_idx.iter().map(|&k| columns[k].get(r).to_string()).collect();
                return Err(StoreError::DuplicateKey(format!("({})", shown.join(", "))));
            }
        }

        let coord_cols: Vec<usize> = schema.coords.columns().into_iter().map(idx).collect();
        let mut positions = Vec::with_capacity(rows);
        for r in 0..rows {
            let vals: Option<Vec<f64>> = coord_cols.iter().map(|&c| columns[c].get_f64(r)).collect();
            let vals = vals.ok_or_else(|| StoreError::BadCoordinate {
                line: line_of(r),
                reason: "null coordinate".into(),
            })?;
            let bad = |e: GeometryError| StoreError::BadCoordinate {
                line: line_of(r),
                reason: e.to_string(),
            };
            let p = match vals.as_slice() {
                [ra, dec] => to_unit_vector(SkyCoord::new(*ra, *dec).map_err(bad)?),
                [x, y, z] => UnitVector::new(*x, *y, *z).map_err(bad)?,
                _ => unreachable!(),
            };
            positions.push(p);
        }

        let mut sigma_range: Option<(f64, f64)> = None;
        if let Some(e) = &schema.error_column {
            let c = idx(e);
            for r in 0..rows {
                match columns[c].get_f64(r) {
                    Some(s) if s.is_finite() && s > 0.0 => {
                        if let Some(floor) = schema.sigma_floor_arcsec {
                            if s < floor {
                                return Err(StoreError::Parse {
                                    line: line_of(r),
                                    column: e.clone(),
                                    reason: format!("error {s} below declared floor {floor}"),
                                });
                            }
                        }
                        sigma_range = Some(match sigma_range {
                            None => (s, s),
                            Some((lo, hi)) => (lo.min(s), hi.max(s)),
                        });
                    }
                    other => {
                        return Err(StoreError::Parse {
                            line: line_of(r),
                            column: e.clone(),
                            reason: format!("astrometric error must be positive, got {other:?}"),
                        })
                    }
                }
            }
        }

        Ok(Self {
            schema,
            columns,
            positions,
            key_idx,
            sigma_range,
        })
    }

    pub fn schema(&self) -> &CatalogSchema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.positions.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn value(&self, row: usize, col: usize) -> Value {
        self.columns[col].get(row)
    }

    pub fn position(&self, row: usize) -> UnitVector {
        self.positions[row]
    }

    pub fn positions(&self) -> &[UnitVector] {
        &self.positions
    }

    pub fn key(&self, row: usize) -> Vec<Value> {
        self.key_idx.iter().map(|&k| self.columns[k].get(row)).collect()
    }

    pub fn key_cmp(&self, a: usize, b: usize) -> Ordering {
        for &k in &self.key_idx {
            let o = self.columns[k].get(a).total_cmp(&self.columns[k].get(b));
            if o != Ordering::Equal {
                return o;
            }
        }
        Ordering::Equal
    }

    /// Observed range of the per-detection error column, arcseconds.
    pub fn sigma_range_arcsec(&self) -> Option<(f64, f64)> {
        self.sigma_range
    }

    /// Table restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CatalogTable {
        CatalogTable {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            positions: rows.iter().map(|&r| self.positions[r]).collect(),
            key_idx: self.key_idx.clone(),
            sigma_range: self.sigma_range,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FormatOptions {
    pub delimiter: u8,
}

impl Default for FormatOptions {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

pub fn ingest(schema: CatalogSchema, path: &Path, opts: &FormatOptions) -> Result<CatalogTable, StoreError> {
    let file = fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    ingest_reader(schema, file, opts)
}

/// Loads a headed CSV. Header names bind to schema columns case-insensitively;
/// unknown CSV columns are ignored.
pub fn ingest_reader<R: Read>(
    schema: CatalogSchema,
    reader: R,
    opts: &FormatOptions,
) -> Result<CatalogTable, StoreError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        StoreError::Parse {
            line,
            column: String::new(),
            reason: e.to_string(),
        }
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut source_field = Vec::with_capacity(schema.columns.len());
    for def in &schema.columns {
        let pos = header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(&def.name))
            .ok_or_else(|| StoreError::Parse {
                line: 1,
                column: def.name.clone(),
                reason: "column missing from header".into(),
            })?;
        source_field.push(pos);
    }
    let mut columns: Vec<Column> = schema.columns.iter().map(|d| Column::new(d.ty)).collect();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        for (ci, &fi) in source_field.iter().enumerate() {
            let field = rec.get(fi).unwrap_or("");
            columns[ci].push_parsed(field).map_err(|reason| StoreError::Parse {
                line,
                column: schema.columns[ci].name.clone(),
                reason,
            })?;
        }
        lines.push(line);
    }
    CatalogTable::from_columns(schema, columns, Some(&lines))
}

/// Writes a table as CSV with a header row of its column names.
pub fn write_csv<W: Write>(table: &CatalogTable, writer: W) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| StoreError::Config(format!("csv write: {e}"));
    w.write_record(table.schema.columns.iter().map(|c| c.name.as_str()))
        .map_err(to_err)?;
    for r in 0..table.row_count() {
        w.write_record(table.columns.iter().map(|c| c.get(r).to_string()))
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| StoreError::Config(format!("csv write: {e}")))?;
    Ok(())
}

pub fn export(table: &CatalogTable, path: &Path) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(|e| StoreError::io(path, e))?;
    write_csv(table, io::BufWriter::new(file))
}

/// Uniform random subset of a catalog used for query statistics.
#[derive(Debug, Clone)]
pub struct MiniCatalog {
    pub dataset: String,
    pub table: String,
    pub sample_rate: f64,
    pub seed: u64,
    pub rows: CatalogTable,
}

#[derive(Debug, Serialize, Deserialize)]
struct MiniMeta {
    dataset: String,
    table: String,
    sample_rate: f64,
    seed: u64,
    rows: usize,
}

/// Keeps each row independently with probability `rate`.
pub fn sample_mini(table: &CatalogTable, rate: f64, seed: u64) -> MiniCatalog {
    assert!(rate > 0.0 && rate <= 1.0, "sample rate must be in (0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = (0..table.row_count())
        .filter(|_| rng.gen::<f64>() < rate)
        .collect();
    MiniCatalog {
        dataset: table.schema.dataset.clone(),
        table: table.schema.table.clone(),
        sample_rate: rate,
        seed,
        rows: table.select_rows(&picked),
    }
}

impl MiniCatalog {
    fn stem(dataset: &str, table: &str) -> String {
        format!("{dataset}.{table}.mini")
    }

    pub fn csv_path(dir: &Path, dataset: &str, table: &str) -> PathBuf {
        dir.join(format!("{}.csv", Self::stem(dataset, table)))
    }

    fn meta_path(dir: &Path, dataset: &str, table: &str) -> PathBuf {
        dir.join(format!("{}.json", Self::stem(dataset, table)))
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        export(&self.rows, &Self::csv_path(dir, &self.dataset, &self.table))?;
        let meta = MiniMeta {
            dataset: self.dataset.clone(),
            table: self.table.clone(),
            sample_rate: self.sample_rate,
            seed: self.seed,
            rows: self.rows.row_count(),
        };
        let path = Self::meta_path(dir, &self.dataset, &self.table);
        let text = serde_json::to_string_pretty(&meta).expect("plain struct serializes");
        fs::write(&path, text + "\n").map_err(|e| StoreError::io(&path, e))
    }

    /// Loads a persisted mini, or `None` if none was saved for this table.
    pub fn load(dir: &Path, schema: &CatalogSchema) -> Result<Option<MiniCatalog>, StoreError> {
        let meta_path = Self::meta_path(dir, &schema.dataset, &schema.table);
        if !meta_path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&meta_path).map_err(|e| StoreError::io(&meta_path, e))?;
        let meta: MiniMeta = serde_json::from_str(&text)
            .map_err(|e| StoreError::Config(format!("{}: {e}", meta_path.display())))?;
        let rows = ingest(
            schema.clone(),
            &Self::csv_path(dir, &schema.dataset, &schema.table),
            &FormatOptions::default(),
        )?;
        Ok(Some(MiniCatalog {
            dataset: meta.dataset,
            table: meta.table,
            sample_rate: meta.sample_rate,
            seed: meta.seed,
            rows,
        }))
    }
}

/// Registered catalog tables keyed by case-folded `dataset:table`.
#[derive(Debug, Clone, Default)]
pub struct CatalogRegistry {
    tables: BTreeMap<(String, String), Arc<CatalogTable>>,
}

impl CatalogRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, table: CatalogTable) -> Arc<CatalogTable> {
        let key = (
            table.schema.dataset.to_ascii_lowercase(),
            table.schema.table.to_ascii_lowercase(),
        );
        let t = Arc::new(table);
        self.tables.insert(key, t.clone());
        t
    }

    pub fn get(&self, dataset: &str, table: &str) -> Option<&Arc<CatalogTable>> {
        self.tables
            .get(&(dataset.to_ascii_lowercase(), table.to_ascii_lowercase()))
    }

    pub fn has_dataset(&self, dataset: &str) -> bool {
        let d = dataset.to_ascii_lowercase();
        self.tables.keys().any(|(ds, _)| *ds == d)
    }

    pub fn tables(&self) -> impl Iterator<Item = &Arc<CatalogTable>> {
        self.tables.values()
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    file: PathBuf,
    table: String,
    key: OneOrMany,
    ra: Option<String>,
    dec: Option<String>,
    cx: Option<String>,
    cy: Option<String>,
    cz: Option<String>,
    err: Option<String>,
    err_floor: Option<f64>,
    footprint: Option<Vec<[f64; 3]>>,
    delimiter: Option<char>,
    columns: toml::Table,
}

/// One dataset entry of a catalog config file.
#[derive(Debug, Clone)]
pub struct CatalogSource {
    pub schema: CatalogSchema,
    pub file: PathBuf,
    pub format: FormatOptions,
}

/// Parses a catalog config. Each top-level section names a dataset:
///
/// ```toml
/// [SDSS]
/// file = "sdss.csv"            # relative to the config file
/// table = "PhotoObjAll"
/// key = "ObjID"                # or ["run", "id"]
/// ra = "RA"                    # or cx/cy/cz
/// dec = "Dec"
/// err = "sigma"                # optional, arcsec per detection
/// err_floor = 0.05             # required with err, arcsec
/// footprint = [[180.0, 0.0, 120.0]]   # circles: ra, dec, radius arcmin
/// columns = { ObjID = "int64", RA = "float64", Dec = "float64" }
/// ```
pub fn parse_catalog_config(text: &str, base_dir: &Path) -> Result<Vec<CatalogSource>, StoreError> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| StoreError::Config(e.to_string()))?;
    let mut out = Vec::new();
    for (dataset, section) in doc {
        let sec: DatasetSection = section
            .try_into()
            .map_err(|e: toml::de::Error| StoreError::Config(format!("[{dataset}] {e}")))?;
        let mut columns = Vec::new();
        for (name, ty) in &sec.columns {
            let ty: ColumnType = ty
                .clone()
                .try_into()
                .map_err(|_| StoreError::Config(format!("[{dataset}] column {name}: unknown type {ty}")))?;
            columns.push(ColumnDef { name: name.clone(), ty });
        }
        let coords = match (&sec.ra, &sec.dec, &sec.cx, &sec.cy, &sec.cz) {
            (Some(ra), Some(dec), None, None, None) => CoordSpec::Spherical {
                ra: ra.clone(),
                dec: dec.clone(),
            },
            (None, None, Some(cx), Some(cy), Some(cz)) => CoordSpec::Cartesian {
                cx: cx.clone(),
                cy: cy.clone(),
                cz: cz.clone(),
            },
            _ => {
                return Err(StoreError::Config(format!(
                    "[{dataset}] give either ra and dec, or cx, cy and cz"
                )))
            }
        };
        let footprint = match &sec.footprint {
            None => None,
            Some(list) => {
                let circles = list
                    .iter()
                    .map(|[ra, dec, r]| Circle::new(SkyCoord::new(*ra, *dec)?, *r))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| StoreError::Config(format!("[{dataset}] footprint: {e}")))?;
                match <[Circle; 1]>::try_from(circles) {
                    Ok([c]) => Some(Region::Circle(c)),
                    Err(circles) => Some(
                        Region::union(circles)
                            .map_err(|e| StoreError::Config(format!("[{dataset}] footprint: {e}")))?,
                    ),
                }
            }
        };
        let key_columns = match sec.key {
            OneOrMany::One(k) => vec![k],
            OneOrMany::Many(ks) => ks,
        };
        let delimiter = sec.delimiter.unwrap_or(',');
        if !delimiter.is_ascii() {
            return Err(StoreError::Config(format!("[{dataset}] delimiter must be ASCII")));
        }
        let schema = CatalogSchema {
            dataset: dataset.clone(),
            table: sec.table,
            columns,
            key_columns,
            coords,
            error_column: sec.err,
            sigma_floor_arcsec: sec.err_floor,
            footprint,
        };
        schema.validate()?;
        let file = if sec.file.is_absolute() {
            sec.file
        } else {
            base_dir.join(sec.file)
        };
        out.push(CatalogSource {
            schema,
            file,
            format: FormatOptions {
                delimiter: delimiter as u8,
            },
        });
    }
    Ok(out)
}

/// Reads a catalog config and ingests every table it lists.
pub fn load_registry(config_path: &Path) -> Result<CatalogRegistry, StoreError> {
    let text = fs::read_to_string(config_path).map_err(|e| StoreError::io(config_path, e))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let mut reg = CatalogRegistry::new();
    for src in parse_catalog_config(&text, base)? {
        reg.register(ingest(src.schema, &src.file, &src.format)?);
    }
    Ok(reg)
}

/// Name of a staging table: one per job, step, partition and attempt.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StagingId(String);

impl StagingId {
    pub fn new(job: u64, step: usize, partition: usize, attempt: u32) -> Self {
        StagingId(format!("job{job}.s{step}.p{partition}.a{attempt}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn belongs_to(&self, job: u64) -> bool {
        self.0.starts_with(&format!("job{job}."))
    }
}

impl fmt::Display for StagingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Namespace of intermediate tables, guarded by a single lock.
#[derive(Debug)]
pub struct StagingRegistry<R> {
    tables: Mutex<BTreeMap<StagingId, Arc<Vec<R>>>>,
}

impl<R> Default for StagingRegistry<R> {
    fn default() -> Self {
        Self {
            tables: Mutex::new(BTreeMap::new()),
        }
    }
}

impl<R> StagingRegistry<R> {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<StagingId, Arc<Vec<R>>>> {
        self.tables.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Creates (or replaces) an empty staging table.
    pub fn create_staging(&self, id: StagingId) -> StagingId {
        self.lock().insert(id.clone(), Arc::new(Vec::new()));
        id
    }

    pub fn write(&self, id: &StagingId, rows: Vec<R>) {
        self.lock().insert(id.clone(), Arc::new(rows));
    }

    pub fn read(&self, id: &StagingId) -> Option<Arc<Vec<R>>> {
        self.lock().get(id).cloned()
    }

    /// Removes a table; dropping a missing table is a no-op.
    pub fn drop_staging(&self, id: &StagingId) {
        self.lock().remove(id);
    }

    pub fn drop_job(&self, job: u64) {
        self.lock().retain(|id, _| !id.belongs_to(job));
    }

    pub fn names(&self) -> Vec<StagingId> {
        self.lock().keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CatalogSchema {
        CatalogSchema {
            dataset: "T".into(),
            table: "Obj".into(),
            columns: vec![
                ColumnDef { name: "id".into(), ty: ColumnType::Int64 },
                ColumnDef { name: "ra".into(), ty: ColumnType::Float64 },
                ColumnDef { name: "dec".into(), ty: ColumnType::Float64 },
                ColumnDef { name: "name".into(), ty: ColumnType::Text },
            ],
            key_columns: vec!["id".into()],
            coords: CoordSpec::Spherical { ra: "ra".into(), dec: "dec".into() },
            error_column: None,
            sigma_floor_arcsec: None,
            footprint: None,
        }
    }

    fn load(text: &str) -> Result<CatalogTable, StoreError> {
        ingest_reader(schema(), text.as_bytes(), &FormatOptions::default())
    }

    #[test]
    fn ingest_three_rows() {
        let t = load("id,ra,dec,name\n1,10,20,a\n2,11.5,-3,\"b, c\"\n3,359.9,89,\n").unwrap();
        assert_eq!(t.row_count(), 3);
        assert_eq!(t.value(1, 3), Value::Text("b, c".into()));
        assert_eq!(t.value(2, 3), Value::Null);
        assert!((t.position(0).norm() - 1.0).abs() < 1e-12);
        assert_eq!(t.key(1), vec![Value::Int(2)]);
    }

    #[test]
    fn header_binding_is_case_insensitive_and_ignores_extras() {
        let t = load("EXTRA,DEC,Id,RA,Name\nx,1,7,2,n\n").unwrap();
        assert_eq!(t.value(0, 0), Value::Int(7));
        assert_eq!(t.value(0, 1), Value::Float(2.0));
    }

    #[test]
    fn bad_rows_rejected() {
        assert!(matches!(load("id,ra,dec,name\n1,10,95,a\n"), Err(StoreError::BadCoordinate { line: 2, .. })));
        assert!(matches!(load("id,ra,dec,name\n1,10,5,a\n1,11,5,b\n"), Err(StoreError::DuplicateKey(_))));
        assert!(matches!(
            load("id,ra,dec,name\n1,10,5,a\n2,x,5,b\n"),
            Err(StoreError::Parse { line: 3, .. })
        ));
        assert!(matches!(load("id,ra,dec,name\n,10,5,a\n"), Err(StoreError::Parse { .. })));
        assert!(matches!(load("id,ra,dec,name\n1,,5,a\n"), Err(StoreError::BadCoordinate { .. })));
        assert!(matches!(load("id,ra,name\n1,10,a\n"), Err(StoreError::Parse { line: 1, .. })));
    }

    #[test]
    fn cartesian_coordinates_renormalized() {
        let mut s = schema();
        s.columns[1].name = "cx".into();
        s.columns[2].name = "cy".into();
        s.columns.push(ColumnDef { name: "cz".into(), ty: ColumnType::Float64 });
        s.coords = CoordSpec::Cartesian { cx: "cx".into(), cy: "cy".into(), cz: "cz".into() };
        let t = ingest_reader(s.clone(), "id,cx,cy,cz,name\n1,2,0,0,a\n".as_bytes(), &FormatOptions::default()).unwrap();
        assert_eq!(t.position(0).x(), 1.0);
        let err = ingest_reader(s, "id,cx,cy,cz,name\n1,0,0,0,a\n".as_bytes(), &FormatOptions::default());
        assert!(matches!(err, Err(StoreError::BadCoordinate { .. })));
    }

    #[test]
    fn schema_validation() {
        let mut s = schema();
        s.key_columns.clear();
        assert!(s.validate().is_err());
        let mut s = schema();
        s.coords = CoordSpec::Spherical { ra: "name".into(), dec: "dec".into() };
        assert!(s.validate().is_err());
        let mut s = schema();
        s.columns.push(ColumnDef { name: "ID".into(), ty: ColumnType::Int64 });
        assert!(s.validate().is_err());
    }

    #[test]
    fn export_round_trip() {
        let src = "id,ra,dec,name\n1,10.123456789012345,20,a\n2,0.1,-3.3333333333333335,\"q\"\"x\"\n";
        let t = load(src).unwrap();
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        let back = load(std::str::from_utf8(&buf).unwrap()).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(t.value(r, c), back.value(r, c));
            }
        }
    }

    #[test]
    fn mini_sampling() {
        let mut text = String::from("id,ra,dec,name\n");
        for i in 0..2000 {
            text.push_str(&format!("{i},{},{},n\n", (i as f64 * 0.17) % 360.0, (i as f64 * 0.01) % 80.0));
        }
        let t = load(&text).unwrap();
        let all = sample_mini(&t, 1.0, 3);
        assert_eq!(all.rows.row_count(), t.row_count());
        let a = sample_mini(&t, 0.5, 42);
        let b = sample_mini(&t, 0.5, 42);
        let ka: Vec<_> = (0..a.rows.row_count()).map(|r| a.rows.key(r)).collect();
        let kb: Vec<_> = (0..b.rows.row_count()).map(|r| b.rows.key(r)).collect();
        assert_eq!(ka, kb);
        assert!(ka.len() > 850 && ka.len() < 1150);
    }

    #[test]
    fn staging_lifecycle() {
        let reg: StagingRegistry<u32> = StagingRegistry::new();
        let a = reg.create_staging(StagingId::new(1, 0, 0, 0));
        let b = reg.create_staging(StagingId::new(1, 0, 1, 0));
        assert_ne!(a, b);
        reg.write(&a, vec![1, 2, 3]);
        assert_eq!(reg.read(&a).unwrap().len(), 3);
        reg.drop_staging(&a);
        reg.drop_staging(&a);
        assert_eq!(reg.names(), vec![b.clone()]);
        reg.create_staging(StagingId::new(2, 0, 0, 0));
        reg.drop_job(1);
        assert_eq!(reg.names().len(), 1);
        reg.drop_job(2);
        assert!(reg.is_empty());
        // job 1 must not match job 10
        reg.create_staging(StagingId::new(10, 0, 0, 0));
        reg.drop_job(1);
        assert!(!reg.is_empty());
    }

    #[test]
    fn config_parsing() {
        let cfg = r#"
[SDSS]
file = "sdss.csv"
table = "PhotoObjAll"
key = "ObjID"
ra = "RA"
dec = "Dec"
footprint = [[180.0, 0.0, 120.0], [10.0, 0.0, 30.0]]
columns = { ObjID = "int64", RA = "float64", Dec = "float64", err = "float64" }
err = "err"
err_floor = 0.05

[GALEX]
file = "/abs/galex.csv"
table = "PhotoObjAll"
key = ["a", "b"]
cx = "x"
cy = "y"
cz = "z"
columns = { a = "int64", b = "text", x = "float64", y = "float64", z = "float64" }
"#;
        let srcs = parse_catalog_config(cfg, Path::new("/data")).unwrap();
        assert_eq!(srcs.len(), 2);
        let sdss = srcs.iter().find(|s| s.schema.dataset == "SDSS").unwrap();
        assert_eq!(sdss.file, PathBuf::from("/data/sdss.csv"));
        assert_eq!(sdss.schema.columns[0].name, "ObjID");
        assert_eq!(sdss.schema.footprint.as_ref().unwrap().circles().len(), 2);
        let galex = srcs.iter().find(|s| s.schema.dataset == "GALEX").unwrap();
        assert_eq!(galex.file, PathBuf::from("/abs/galex.csv"));
        assert_eq!(galex.schema.key_columns, vec!["a", "b"]);

        let bad = "[X]\nfile='a'\ntable='t'\nkey='id'\nra='ra'\ncolumns={id='int64', ra='float64'}\n";
        assert!(matches!(parse_catalog_config(bad, Path::new(".")), Err(StoreError::Config(_))));
    }
}
