//! Raw CSV ingestion and (non-private) discretization.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::DiscreteDataset;
use super::schema::{Column, Schema, Visibility};
use crate::error::{Error, Result};

/// Header plus string cells; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    /// Reads a CSV with a header row. Empty fields, and any field equal to
    /// one of `missing_tokens` after trimming, are treated as missing.
    pub fn read_csv(path: &Path, missing_tokens: &[String]) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, missing_tokens)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, missing_tokens: &[String]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(Error::SchemaMismatch(format!(
                    "line {} has {} fields, header has {}",
                    rows.len() + 2,
                    rec.len(),
                    headers.len()
                )));
            }
            rows.push(
                rec.iter()
                    .map(
                        |v| {
                            if v.is_empty() || missing_tokens.iter().any(|t| t == v) {
                                None
                            } else {
                                Some(v.to_string())
                            }
                        },
                    )
                    .collect(),
            );
        }
        Ok(Self { headers, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    /// Exclusive upper edge; `None` for the last, unbounded bin.
    pub upper: Option<f64>,
}

/// How one output column maps category indices back to raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnEncoding {
    Categorical { name: String, categories: Vec<String> },
    Binned { name: String, bins: Vec<Bin> },
}

impl ColumnEncoding {
    pub fn name(&self) -> &str {
        match self {
            ColumnEncoding::Categorical { name, .. } | ColumnEncoding::Binned { name, .. } => name,
        }
    }

    pub fn cardinality(&self) -> usize {
        match self {
            ColumnEncoding::Categorical { categories, .. } => categories.len(),
            ColumnEncoding::Binned { bins, .. } => bins.len(),
        }
    }

    /// Original category label, or `[lower, upper)` for a numeric bin.
    pub fn decode(&self, idx: u32) -> String {
        match self {
            ColumnEncoding::Categorical { categories, .. } => categories[idx as usize].clone(),
            ColumnEncoding::Binned { bins, .. } => {
                let b = &bins[idx as usize];
                match b.upper {
                    Some(u) => format!("[{}, {})", b.lower, u),
                    None => format!("[{}, inf)", b.lower),
                }
            }
        }
    }
}

/// Reproducibility record of a discretization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMap {
    pub columns: Vec<ColumnEncoding>,
    pub dropped_columns: Vec<String>,
    pub rows_in: usize,
    pub rows_dropped: usize,
}

impl BinMap {
    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn encoding(&self, name: &str) -> Option<&ColumnEncoding> {
        self.columns.iter().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscretizeOptions {
    pub max_bins: usize,
    /// Keep only the first `k` raw columns before any other processing.
    pub column_limit: Option<usize>,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self { max_bins: 50, column_limit: None }
    }
}

/// Drops incomplete rows and constant columns, bins wide numeric columns
/// at empirical quantiles and densely indexes everything else.
pub fn discretize(raw: &RawTable, opts: DiscretizeOptions) -> Result<(DiscreteDataset, BinMap)> {
    if opts.max_bins < 2 {
        return Err(Error::Config(format!("max_bins must be >= 2, got {}", opts.max_bins)));
    }
    let width = opts.column_limit.map_or(raw.headers.len(), |k| k.min(raw.headers.len()));
    let complete: Vec<Vec<&str>> = raw
        .rows
        .iter()
        .filter(|r| r[..width].iter().all(Option::is_some))
        .map(|r| r[..width].iter().map(|v| v.as_deref().unwrap()).collect())
        .collect();
    let rows_dropped = raw.rows.len() - complete.len();
    if complete.is_empty() {
        return Err(Error::EmptyDataset("no complete rows remain after dropping missing values".into()));
    }

    let mut columns = Vec::new();
    let mut encodings = Vec::new();
    let mut schema_cols = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..width {
        let name = raw.headers[j].clone();
        let values: Vec<&str> = complete.iter().map(|r| r[j]).collect();
        let (codes, encoding) = match encode_column(&name, &values, opts.max_bins) {
            Some(x) => x,
            None => {
                dropped.push(name);
                continue;
            }
        };
        schema_cols.push(Column { name, cardinality: encoding.cardinality(), visibility: Visibility::Private });
        columns.push(codes);
        encodings.push(encoding);
    }
    if columns.is_empty() {
        return Err(Error::EmptyDataset("every column is constant".into()));
    }
    let schema = Schema::new(schema_cols)?;
    let data = DiscreteDataset::from_columns(schema, columns)?;
    Ok((data, BinMap { columns: encodings, dropped_columns: dropped, rows_in: raw.rows.len(), rows_dropped }))
}

/// `None` when the column is constant.
fn encode_column(name: &str, values: &[&str], max_bins: usize) -> Option<(Vec<u32>, ColumnEncoding)> {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite())).collect();
    match numeric {
        Some(nums) => {
            let mut distinct: BTreeMap<OrdF64, &str> = BTreeMap::new();
            for (x, s) in nums.iter().zip(values) {
                distinct.entry(OrdF64(*x)).or_insert(s);
            }
            if distinct.len() <= 1 {
                return None;
            }
            if distinct.len() > max_bins {
                let edges = quantile_edges(&nums, max_bins);
                let codes = nums.iter().map(|&x| bin_index(&edges, x)).collect();
                let min = distinct.keys().next().unwrap().0;
                let mut bins = Vec::with_capacity(edges.len() + 1);
                let mut lower = min;
                for &e in &edges {
                    bins.push(Bin { lower, upper: Some(e) });
                    lower = e;
                }
                bins.push(Bin { lower, upper: None });
                Some((codes, ColumnEncoding::Binned { name: name.to_string(), bins }))
            } else {
                let index: HashMap<u64, u32> =
                    distinct.keys().enumerate().map(|(i, k)| (k.0.to_bits(), i as u32)).collect();
                let codes = nums.iter().map(|x| index[&x.to_bits()]).collect();
                let categories = distinct.values().map(|s| s.to_string()).collect();
                Some((codes, ColumnEncoding::Categorical { name: name.to_string(), categories }))
            }
        }
        None => {
            let mut cats: Vec<&str> = values.to_vec();
            cats.sort_unstable();
            cats.dedup();
            if cats.len() <= 1 {
                return None;
            }
            let index: HashMap<&str, u32> = cats.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
            let codes = values.iter().map(|v| index[v]).collect();
            Some((
                codes,
                ColumnEncoding::Categorical {
                    name: name.to_string(),
                    categories: cats.into_iter().map(str::to_string).collect(),
                },
            ))
        }
    }
}

/// Interior bin edges at the empirical quantiles `i / max_bins`, using the
/// lower order statistic `sorted[floor(i * n / max_bins)]`. Duplicate
/// edges, and edges at the minimum, are merged away.
pub fn quantile_edges(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let min = sorted[0];
    let mut edges: Vec<f64> = (1..max_bins).map(|i| sorted[i * n / max_bins]).filter(|&e| e > min).collect();
    edges.dedup();
    edges
}

/// Number of edges `<= x`, i.e. bins are `[e_{i-1}, e_i)`.
pub fn bin_index(edges: &[f64], x: f64) -> u32 {
    edges.partition_point(|&e| e <= x) as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Loads a discretized CSV whose header matches `schema` and whose cells are
/// category indices.
pub fn read_discrete_csv(path: &Path, schema: &Schema) -> Result<DiscreteDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let names: Vec<&str> = schema.names();
    if headers != names {
        return Err(Error::SchemaMismatch(format!("CSV header {headers:?} does not match schema {names:?}")));
    }
    let mut columns = vec![Vec::new(); schema.d()];
    for rec in rdr.records() {
        let rec = rec?;
        for (j, v) in rec.iter().enumerate() {
            let x: u32 = v
                .parse()
                .map_err(|_| Error::SchemaMismatch(format!("non-integer cell '{v}' in column '{}'", names[j])))?;
            columns[j].push(x);
        }
    }
    DiscreteDataset::from_columns(schema.clone(), columns)
}

/// Writes category indices, or decoded labels when a bin map is supplied.
pub fn write_csv(path: &Path, data: &DiscreteDataset, bins: Option<&BinMap>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names = data.schema().names();
    w.write_record(&names)?;
    let encoders: Vec<Option<&ColumnEncoding>> = names.iter().map(|n| bins.and_then(|b| b.encoding(n))).collect();
    for r in 0..data.n() {
        let rec: Vec<String> = data
            .columns()
            .iter()
            .zip(&encoders)
            .map(|(col, enc)| match enc {
                Some(e) => e.decode(col[r]),
                None => col[r].to_string(),
            })
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
