//! CSV datasets typed by a feature schema.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::rational::{format_rational, Rational};
use crate::schema::{FeatureKind, FeatureSchema, SchemaError};

/// Cell texts treated as missing.
pub const MISSING: [&str; 3] = ["", "?", "NA"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("header does not match the schema (missing: {missing:?}, unexpected: {unexpected:?})")]
    Header {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("row {row}, column `{column}`: {source}")]
    Cell {
        row: usize,
        column: String,
        source: SchemaError,
    },
    #[error("row {row}: label `{value}` is not 0 or 1")]
    Label { row: usize, value: String },
    #[error("no rows left after dropping {dropped} with missing values")]
    Empty { dropped: usize },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub rows: Vec<Vec<Rational>>,
    pub labels: Vec<u8>,
    /// Rows dropped for missing cells.
    pub dropped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a CSV against a schema document. Numeric features without a
/// declared range get the observed min/max.
pub fn load_dataset(csv_path: &Path, schema_path: &Path) -> Result<Dataset, DatasetError> {
    let schema_text = read(schema_path)?;
    let doc: serde_json::Value = serde_json::from_str(&schema_text)
        .map_err(|e| SchemaError::Document(e.to_string()))?;
    let (schema, declared) = FeatureSchema::from_json_partial(&doc)?;
    let file = fs::File::open(csv_path).map_err(|source| DatasetError::Io {
        path: csv_path.display().to_string(),
        source,
    })?;
    parse_dataset(file, &schema, &declared)
}

/// `declared[j]` says whether feature `j`'s range is authoritative.
pub fn parse_dataset(
    input: impl Read,
    schema: &FeatureSchema,
    declared: &[bool],
) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let expected: BTreeSet<String> = schema
        .features()
        .iter()
        .map(|f| f.name.clone())
        .chain(std::iter::once(schema.label().to_string()))
        .collect();
    let present: BTreeSet<String> = header.iter().cloned().collect();
    if present != expected || present.len() != header.len() {
        return Err(DatasetError::Header {
            missing: expected.difference(&present).cloned().collect(),
            unexpected: present.difference(&expected).cloned().collect(),
        });
    }
    let column = |name: &str| header.iter().position(|h| h == name).unwrap();
    let columns: Vec<usize> = schema.features().iter().map(|f| column(&f.name)).collect();
    let label_col = column(schema.label());

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        if record.iter().any(|c| MISSING.contains(&c)) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(columns.len());
        for (f, &c) in schema.features().iter().zip(&columns) {
            let v = f.parse_value(&record[c]).map_err(|source| DatasetError::Cell {
                row: row_no,
                column: f.name.clone(),
                source,
            })?;
            row.push(v);
        }
        let label = match record[label_col].parse::<f64>() {
            Ok(x) if x == 0.0 => 0,
            Ok(x) if x == 1.0 => 1,
            _ => {
                return Err(DatasetError::Label {
                    row: row_no,
                    value: record[label_col].to_string(),
                })
            }
        };
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DatasetError::Empty { dropped });
    }
    let ranges: Vec<(Rational, Rational)> = schema
        .features()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let numeric = matches!(f.kind, FeatureKind::Real | FeatureKind::Integer);
            if numeric && !declared.get(j).copied().unwrap_or(true) {
                let lo = rows.iter().map(|r| &r[j]).min().unwrap().clone();
                let hi = rows.iter().map(|r| &r[j]).max().unwrap().clone();
                (lo, hi)
            } else {
                (f.lo.clone(), f.hi.clone())
            }
        })
        .collect();
    let schema = schema.with_ranges(&ranges)?;
    Ok(Dataset {
        schema,
        rows,
        labels,
        dropped,
    })
}

/// Writes rows back out with category names and labels, header first.
pub fn write_dataset(data: &Dataset, out: impl std::io::Write) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = data.schema.features().iter().map(|f| f.name.clone()).collect();
    header.push(data.schema.label().to_string());
    w.write_record(&header)?;
    for (row, label) in data.rows.iter().zip(&data.labels) {
        let mut cells: Vec<String> = data
            .schema
            .features()
            .iter()
            .zip(row)
            .map(|(f, v)| match f.kind {
                FeatureKind::Categorical { .. } | FeatureKind::Ordinal { labels: Some(_), .. } => {
                    f.display_value(v)
                }
                _ => format_rational(v),
            })
            .collect();
        cells.push(label.to_string());
        w.write_record(&cells)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}
