//! Delimited dataset loading, discretization and shuffling.
//!
//! Input is UCI-style text: one instance per line, comma-separated by default,
//! `?` for a missing value, no header. Columns whose observed values all parse
//! as numbers are numeric unless forced categorical; the class column is
//! always categorical. Categories are indexed in order of first appearance.
//!
//! The canonical serialization is the delimited data file plus a TOML schema
//! sidecar (`<data>.schema.toml`) carrying column kinds, category lists and
//! bin edges:
//!
//! ```toml
//! format = "bayes-mi-dataset/1"
//! delimiter = ","
//! missing_token = "?"
//! class_column = 2
//!
//! [[columns]]
//! name = "col0"
//! kind = "categorical"
//! categories = ["a", "b"]
//!
//! [[columns]]
//! name = "col1"
//! kind = "categorical"
//! categories = ["(-inf,1.5]", "(1.5,+inf)"]
//! edges = [1.5]
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_FORMAT: &str = "bayes-mi-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Upper-inclusive bin edges when the column came from discretization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
}

impl Column {
    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Missing,
    Category(usize),
    Number(f64),
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn category(&self) -> Option<usize> {
        match self {
            Value::Category(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
    pub class_column: usize,
    pub delimiter: u8,
    pub missing_token: String,
}

impl Dataset {
    pub fn n_instances(&self) -> usize {
        self.rows.len()
    }

    /// Column indices of the features, in file order.
    pub fn feature_columns(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&c| c != self.class_column).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.columns[self.class_column].cardinality()
    }

    pub fn class_of(&self, row: usize) -> Option<usize> {
        self.rows[row][self.class_column].category()
    }

    /// Feature values of one instance as category indices; fails on numeric
    /// features.
    pub fn feature_values(&self, row: usize) -> Result<Vec<Option<usize>>> {
        self.feature_columns()
            .into_iter()
            .map(|c| match self.rows[row][c] {
                Value::Missing => Ok(None),
                Value::Category(v) => Ok(Some(v)),
                Value::Number(_) => Err(Error::InvalidArgument(format!(
                    "column '{}' is numeric; discretize first",
                    self.columns[c].name
                ))),
            })
            .collect()
    }

    /// Missing values per column.
    pub fn missing_per_column(&self) -> Vec<usize> {
        let mut out = vec![0; self.columns.len()];
        for row in &self.rows {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc += usize::from(v.is_missing());
            }
        }
        out
    }

    pub fn total_missing(&self) -> usize {
        self.missing_per_column().iter().sum()
    }

    /// Relative frequency of the most common observed class.
    pub fn majority_class_frequency(&self) -> f64 {
        let mut counts = vec![0usize; self.n_classes()];
        let mut seen = 0;
        for row in 0..self.rows.len() {
            if let Some(c) = self.class_of(row) {
                counts[c] += 1;
                seen += 1;
            }
        }
        counts.into_iter().max().unwrap_or(0) as f64 / seen.max(1) as f64
    }

    /// Canonical (data, schema) text.
    pub fn to_canonical(&self) -> Result<(String, String)> {
        let mut writer = csv::WriterBuilder::new()
            .delimiter(self.delimiter)
            .has_headers(false)
            .from_writer(Vec::new());
        for row in &self.rows {
            let fields: Vec<String> = row
                .iter()
                .zip(&self.columns)
                .map(|(v, col)| match *v {
                    Value::Missing => self.missing_token.clone(),
                    Value::Category(c) => col.categories[c].clone(),
                    Value::Number(x) => format!("{x}"),
                })
                .collect();
            writer.write_record(&fields)?;
        }
        let data = String::from_utf8(writer.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .map_err(|e| Error::Schema(e.to_string()))?;
        let schema = SchemaFile {
            format: SCHEMA_FORMAT.to_string(),
            delimiter: (self.delimiter as char).to_string(),
            missing_token: self.missing_token.clone(),
            class_column: self.class_column,
            columns: self.columns.clone(),
        };
        let schema = toml::to_string(&schema).map_err(|e| Error::Schema(e.to_string()))?;
        Ok((data, schema))
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> Result<String> {
        let (data, schema) = self.to_canonical()?;
        let mut hasher = Sha256::new();
        hasher.update(schema.as_bytes());
        hasher.update(data.as_bytes());
        Ok(hex::encode(hasher.finalize()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    format: String,
    delimiter: String,
    missing_token: String,
    class_column: usize,
    columns: Vec<Column>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassColumn {
    Index(usize),
    Last,
}

impl FromStr for ClassColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("last") {
            return Ok(ClassColumn::Last);
        }
        s.parse()
            .map(ClassColumn::Index)
            .map_err(|_| Error::InvalidArgument(format!("class column '{s}' is neither an index nor 'last'")))
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub delimiter: u8,
    pub missing_token: String,
    pub class_column: ClassColumn,
    pub has_header: bool,
    pub force_categorical: Vec<usize>,
    pub force_numeric: Vec<usize>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            missing_token: "?".to_string(),
            class_column: ClassColumn::Last,
            has_header: false,
            force_categorical: Vec::new(),
            force_numeric: Vec::new(),
        }
    }
}

fn read_records<R: Read>(reader: R, delimiter: u8) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

/// Parses delimited text into a dataset.
pub fn parse_table<R: Read>(reader: R, options: &ParseOptions) -> Result<Dataset> {
    let mut records = read_records(reader, options.delimiter)?;
    let header = if options.has_header && !records.is_empty() {
        Some(records.remove(0).1)
    } else {
        None
    };
    let Some((first_line, first)) = records.first() else {
        return Err(Error::Parse {
            line: 1,
            message: "no instances in file".into(),
        });
    };
    let width = first.len();
    if let Some((line, rec)) = records.iter().find(|(_, rec)| rec.len() != width) {
        return Err(Error::Parse {
            line: *line,
            message: format!("expected {width} fields, found {}", rec.len()),
        });
    }
    if let Some(h) = &header {
        if h.len() != width {
            return Err(Error::Parse {
                line: 1,
                message: format!("header has {} fields, rows have {width}", h.len()),
            });
        }
    }
    let class_column = match options.class_column {
        ClassColumn::Last => width - 1,
        ClassColumn::Index(c) if c < width => c,
        ClassColumn::Index(c) => {
            return Err(Error::Parse {
                line: *first_line,
                message: format!("class column {c} does not exist (rows have {width} fields)"),
            })
        }
    };

    let missing = options.missing_token.as_str();
    let mut columns = Vec::with_capacity(width);
    for c in 0..width {
        let name = header.as_ref().map_or_else(|| format!("col{c}"), |h| h[c].clone());
        let observed = || records.iter().map(|(_, rec)| rec[c].as_str()).filter(|v| *v != missing);
        let numeric = c != class_column
            && !options.force_categorical.contains(&c)
            && (options.force_numeric.contains(&c)
                || (observed().next().is_some() && observed().all(|v| v.parse::<f64>().is_ok())));
        columns.push(Column {
            name,
            kind: if numeric { ColumnKind::Numeric } else { ColumnKind::Categorical },
            categories: Vec::new(),
            edges: None,
        });
    }

    let mut index: Vec<HashMap<String, usize>> = vec![HashMap::new(); width];
    let mut rows = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        let mut row = Vec::with_capacity(width);
        for (c, field) in rec.iter().enumerate() {
            if field == missing {
                row.push(Value::Missing);
                continue;
            }
            let col = &mut columns[c];
            match col.kind {
                ColumnKind::Numeric => {
                    let x = field.parse::<f64>().map_err(|_| Error::Parse {
                        line: *line,
                        message: format!("column {c}: '{field}' is not a number"),
                    })?;
                    row.push(Value::Number(x));
                }
                ColumnKind::Categorical => {
                    let next = col.categories.len();
                    let k = *index[c].entry(field.clone()).or_insert_with(|| {
                        col.categories.push(field.clone());
                        next
                    });
                    row.push(Value::Category(k));
                }
            }
        }
        rows.push(row);
    }
    Ok(Dataset {
        columns,
        rows,
        class_column,
        delimiter: options.delimiter,
        missing_token: options.missing_token.clone(),
    })
}

pub fn parse_table_file(path: impl AsRef<Path>, options: &ParseOptions) -> Result<Dataset> {
    parse_table(fs::File::open(path)?, options)
}

pub fn schema_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.as_os_str().to_owned();
    name.push(".schema.toml");
    PathBuf::from(name)
}

/// Writes the data file and its schema sidecar.
pub fn write_dataset(dataset: &Dataset, data_path: impl AsRef<Path>) -> Result<()> {
    let data_path = data_path.as_ref();
    let (data, schema) = dataset.to_canonical()?;
    fs::write(data_path, data)?;
    fs::write(schema_path(data_path), schema)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(data_path: impl AsRef<Path>) -> Result<Dataset> {
    let data_path = data_path.as_ref();
    let schema_text = fs::read_to_string(schema_path(data_path))?;
    let schema: SchemaFile = toml::from_str(&schema_text).map_err(|e| Error::Schema(e.to_string()))?;
    if schema.format != SCHEMA_FORMAT {
        return Err(Error::Schema(format!("unsupported format '{}'", schema.format)));
    }
    let delimiter = match schema.delimiter.as_bytes() {
        [d] => *d,
        _ => return Err(Error::Schema(format!("delimiter '{}' is not one byte", schema.delimiter))),
    };
    if schema.class_column >= schema.columns.len() {
        return Err(Error::Schema("class column out of range".into()));
    }
    let lookup: Vec<HashMap<&str, usize>> = schema
        .columns
        .iter()
        .map(|c| c.categories.iter().enumerate().map(|(k, v)| (v.as_str(), k)).collect())
        .collect();
    let records = read_records(fs::File::open(data_path)?, delimiter)?;
    let mut rows = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if rec.len() != schema.columns.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", schema.columns.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .zip(&schema.columns)
            .zip(&lookup)
            .map(|((field, col), names)| {
                if *field == schema.missing_token {
                    return Ok(Value::Missing);
                }
                match col.kind {
                    ColumnKind::Numeric => field.parse().map(Value::Number).map_err(|_| Error::Parse {
                        line,
                        message: format!("'{field}' is not a number"),
                    }),
                    ColumnKind::Categorical => names.get(field.as_str()).map(|&k| Value::Category(k)).ok_or_else(|| {
                        Error::Parse {
                            line,
                            message: format!("'{field}' is not a category of column '{}'", col.name),
                        }
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Dataset {
        columns: schema.columns,
        rows,
        class_column: schema.class_column,
        delimiter,
        missing_token: schema.missing_token,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscretizeReport {
    pub discretized: Vec<usize>,
    /// Numeric columns with a single distinct value (one bin).
    pub constant: Vec<usize>,
    /// Numeric columns without observed values (left all missing).
    pub all_missing: Vec<usize>,
}

/// Upper-inclusive equal-frequency edges from sorted values.
fn equal_frequency_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let max = sorted[n - 1];
    let mut edges: Vec<f64> = (1..bins).map(|b| sorted[(b * n).div_ceil(bins) - 1]).collect();
    edges.dedup();
    edges.retain(|&e| e < max);
    edges
}

fn bin_labels(edges: &[f64]) -> Vec<String> {
    let mut labels = Vec::with_capacity(edges.len() + 1);
    let mut lower = "-inf".to_string();
    for e in edges {
        labels.push(format!("({lower},{e}]"));
        lower = format!("{e}");
    }
    labels.push(format!("({lower},+inf)"));
    labels
}

/// Replaces every numeric feature by equal-frequency bins (right-closed).
pub fn discretize(dataset: &Dataset, bins: usize) -> Result<(Dataset, DiscretizeReport)> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    let mut out = dataset.clone();
    let mut report = DiscretizeReport::default();
    for c in 0..out.columns.len() {
        if out.columns[c].kind != ColumnKind::Numeric {
            continue;
        }
        let mut values: Vec<f64> = out
            .rows
            .iter()
            .filter_map(|row| match row[c] {
                Value::Number(x) => Some(x),
                _ => None,
            })
            .collect();
        let col = &mut out.columns[c];
        col.kind = ColumnKind::Categorical;
        if values.is_empty() {
            report.all_missing.push(c);
            continue;
        }
        values.sort_by(f64::total_cmp);
        let edges = equal_frequency_edges(&values, bins);
        if edges.is_empty() {
            report.constant.push(c);
        }
        col.categories = bin_labels(&edges);
        for row in &mut out.rows {
            if let Value::Number(x) = row[c] {
                row[c] = Value::Category(edges.partition_point(|&e| e < x));
            }
        }
        col.edges = Some(edges);
        report.discretized.push(c);
    }
    Ok((out, report))
}

/// Deterministic row permutation for a seed.
pub fn shuffle_seeded(dataset: &Dataset, seed: u64) -> Dataset {
    let mut out = dataset.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.rows.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, class: ClassColumn) -> Result<Dataset> {
        parse_table(
            text.as_bytes(),
            &ParseOptions {
                class_column: class,
                ..ParseOptions::default()
            },
        )
    }

    #[test]
    fn missing_token_maps_to_missing() {
        let d = parse("a,?,c\nb,x,c\n", ClassColumn::Index(0)).unwrap();
        assert_eq!(d.rows[0][1], Value::Missing);
        assert_eq!(d.feature_values(0).unwrap(), vec![None, Some(0)]);
        assert_eq!(d.missing_per_column(), vec![0, 1, 0]);
        assert_eq!(d.class_of(1), Some(1));
    }

    #[test]
    fn first_appearance_indexing_and_inference() {
        let d = parse("z, 1.5, y\na, 2, y\nz, ?, n\n", ClassColumn::Last).unwrap();
        assert_eq!(d.columns[0].categories, vec!["z", "a"]);
        assert_eq!(d.columns[1].kind, ColumnKind::Numeric);
        assert_eq!(d.columns[2].kind, ColumnKind::Categorical);
        assert_eq!(d.rows[1][1], Value::Number(2.0));
        assert_eq!(d.class_column, 2);
    }

    #[test]
    fn ragged_rows_report_line() {
        match parse("a,b,c\na,b\n", ClassColumn::Last) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_and_bad_class_column() {
        assert!(matches!(parse("", ClassColumn::Last), Err(Error::Parse { .. })));
        assert!(matches!(parse("a,b\n", ClassColumn::Index(5)), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn five_values_five_bins() {
        let d = parse("1,a\n2,a\n3,b\n4,b\n5,b\n", ClassColumn::Last).unwrap();
        let (d, report) = discretize(&d, 5).unwrap();
        assert_eq!(report.discretized, vec![0]);
        let bins: Vec<usize> = d.rows.iter().map(|r| r[0].category().unwrap()).collect();
        assert_eq!(bins, vec![0, 1, 2, 3, 4]);
        assert_eq!(d.columns[0].edges.as_deref(), Some(&[1.0, 2.0, 3.0, 4.0][..]));
    }

    #[test]
    fn ties_across_boundary_are_right_closed() {
        // ranks 1 and 3 of [1,2,2,2,3,4] are both 2, leaving a single edge
        let d = parse("1,a\n2,a\n2,b\n2,b\n3,b\n4,b\n", ClassColumn::Last).unwrap();
        let (d, _) = discretize(&d, 3).unwrap();
        assert_eq!(d.columns[0].edges.as_deref(), Some(&[2.0][..]));
        let bins: Vec<usize> = d.rows.iter().map(|r| r[0].category().unwrap()).collect();
        assert_eq!(bins, vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(d.columns[0].categories, vec!["(-inf,2]", "(2,+inf)"]);
    }

    #[test]
    fn constant_and_all_missing_columns() {
        let opts = ParseOptions {
            force_numeric: vec![1],
            ..ParseOptions::default()
        };
        let d = parse_table("7,?,a\n7,?,b\n".as_bytes(), &opts).unwrap();
        let (d, report) = discretize(&d, 5).unwrap();
        assert_eq!(report.constant, vec![0]);
        assert_eq!(report.all_missing, vec![1]);
        assert_eq!(d.columns[0].cardinality(), 1);
        assert!(d.rows.iter().all(|r| r[1].is_missing()));
    }

    #[test]
    fn shuffle_is_deterministic() {
        let text: String = (0..20).map(|k| format!("{k},c{}\n", k % 2)).collect();
        let d = parse(&text, ClassColumn::Last).unwrap();
        let a = shuffle_seeded(&d, 7);
        assert_eq!(a, shuffle_seeded(&d, 7));
        assert_ne!(a.rows, shuffle_seeded(&d, 8).rows);
    }
}
