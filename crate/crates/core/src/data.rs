//! Verification records and their delimited-text representation.
//!
//! A dataset file is comma separated with a header row. Required columns are
//! `score`, `label` (`match` or `nonmatch`) and the quality columns `q1..qd`;
//! a `pool` column carrying the ground-truth condition label is optional.
//! Scores are similarities: higher means more alike. Distance scores can be
//! negated on ingestion through [`Schema::negate_scores`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Match,
    NonMatch,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Match => "match",
            Label::NonMatch => "nonmatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRecord {
    pub score: f64,
    pub quality: Vec<f64>,
    pub label: Label,
    pub pool: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub records: Vec<VerificationRecord>,
    pub d_q: usize,
    pub provenance: String,
}

impl RecordSet {
    /// Builds a record set after checking the per-record invariants.
    pub fn new(records: Vec<VerificationRecord>, d_q: usize, provenance: impl Into<String>) -> Result<Self> {
        if d_q == 0 {
            return Err(Error::param("d_q", "quality dimension must be positive"));
        }
        for (i, r) in records.iter().enumerate() {
            if r.quality.len() != d_q {
                return Err(Error::MalformedRow {
                    row: i + 1,
                    message: format!("quality has {} components, expected {d_q}", r.quality.len()),
                });
            }
            if !r.score.is_finite() {
                return Err(Error::MalformedRow {
                    row: i + 1,
                    message: "score is not finite".into(),
                });
            }
        }
        Ok(Self {
            records,
            d_q,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self, label: Label) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.score)
            .collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Training needs both classes present.
    pub fn check_trainable(&self) -> Result<()> {
        if self.count(Label::Match) == 0 {
            return Err(Error::Empty("record set has no match records"));
        }
        if self.count(Label::NonMatch) == 0 {
            return Err(Error::Empty("record set has no non-match records"));
        }
        Ok(())
    }

    /// Sub-set holding the given record indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> RecordSet {
        RecordSet {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            d_q: self.d_q,
            provenance: self.provenance.clone(),
        }
    }
}

/// Column mapping used when reading a dataset.
#[derive(Debug, Clone)]
pub struct Schema {
    pub score_column: String,
    pub label_column: String,
    pub pool_column: String,
    /// Quality columns are `{prefix}1`, `{prefix}2`, ...
    pub quality_prefix: String,
    /// When set, the file must carry exactly this many quality columns.
    pub d_q: Option<usize>,
    pub match_token: String,
    pub nonmatch_token: String,
    /// Negate scores on ingestion (for distance-valued matchers).
    pub negate_scores: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            score_column: "score".into(),
            label_column: "label".into(),
            pool_column: "pool".into(),
            quality_prefix: "q".into(),
            d_q: None,
            match_token: "match".into(),
            nonmatch_token: "nonmatch".into(),
            negate_scores: false,
        }
    }
}

/// Positions of `{prefix}1..{prefix}d` in a header, stopping at the first gap.
pub fn quality_columns(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut cols = Vec::new();
    loop {
        let name = format!("{prefix}{}", cols.len() + 1);
        match headers.iter().position(|h| h.trim() == name) {
            Some(idx) => cols.push(idx),
            None => break,
        }
    }
    cols
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn parse_real(field: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::MalformedRow {
        row: line,
        message: format!("cannot parse {what} `{field}` as a number"),
    })
}

pub fn load_records(path: impl AsRef<Path>, schema: &Schema) -> Result<RecordSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, schema, path.display().to_string())
}

/// Parses a dataset from any reader. Row numbers in errors are file line numbers
/// (the header is line 1).
pub fn read_records<R: Read>(reader: R, schema: &Schema, provenance: impl Into<String>) -> Result<RecordSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let score_col = find_column(&headers, &schema.score_column)
        .ok_or_else(|| Error::MissingColumn(schema.score_column.clone()))?;
    let label_col = find_column(&headers, &schema.label_column)
        .ok_or_else(|| Error::MissingColumn(schema.label_column.clone()))?;
    let pool_col = find_column(&headers, &schema.pool_column);
    let q_cols = quality_columns(&headers, &schema.quality_prefix);
    if q_cols.is_empty() {
        return Err(Error::MissingColumn(format!("{}1", schema.quality_prefix)));
    }
    if let Some(d) = schema.d_q {
        if d != q_cols.len() {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: q_cols.len(),
            });
        }
    }
    let d_q = q_cols.len();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::MalformedRow {
            row: line,
            message: e.to_string(),
        })?;
        if row.len() != headers.len() {
            return Err(Error::MalformedRow {
                row: line,
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
        }
        let mut score = parse_real(&row[score_col], line, "score")?;
        if !score.is_finite() {
            return Err(Error::MalformedRow {
                row: line,
                message: "score is not finite".into(),
            });
        }
        if schema.negate_scores {
            score = -score;
        }
        let token = row[label_col].trim();
        let label = if token == schema.match_token {
            Label::Match
        } else if token == schema.nonmatch_token {
            Label::NonMatch
        } else {
            return Err(Error::MalformedRow {
                row: line,
                message: format!("unknown label `{token}`"),
            });
        };
        let quality = q_cols
            .iter()
            .map(|&c| parse_real(&row[c], line, "quality"))
            .collect::<Result<Vec<_>>>()?;
        let pool = pool_col
            .map(|c| row[c].trim().to_string())
            .filter(|p| !p.is_empty());
        records.push(VerificationRecord {
            score,
            quality,
            label,
            pool,
        });
    }
    RecordSet::new(records, d_q, provenance)
}

pub fn save_records(rs: &RecordSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(rs, file)
}

/// Writes the dataset format. Reals use the shortest representation that
/// parses back to the same `f64`.
pub fn write_records<W: Write>(rs: &RecordSet, writer: W) -> Result<()> {
    let with_pool = rs.records.iter().any(|r| r.pool.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["score".to_string(), "label".to_string()];
    header.extend((1..=rs.d_q).map(|j| format!("q{j}")));
    if with_pool {
        header.push("pool".into());
    }
    wtr.write_record(&header)?;
    for r in &rs.records {
        let mut fields = Vec::with_capacity(header.len());
        fields.push(r.score.to_string());
        fields.push(r.label.as_str().to_string());
        fields.extend(r.quality.iter().map(|v| v.to_string()));
        if with_pool {
            fields.push(r.pool.clone().unwrap_or_default());
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Record indices grouped by pool label, in label order.
pub fn pool_indices(rs: &RecordSet) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rs.records.iter().enumerate() {
        let pool = r.pool.as_ref().ok_or(Error::MissingPool(i))?;
        pools.entry(pool.clone()).or_default().push(i);
    }
    Ok(pools)
}

/// Partitions the records by ground-truth pool label.
pub fn pool_by_label(rs: &RecordSet) -> Result<BTreeMap<String, RecordSet>> {
    Ok(pool_indices(rs)?
        .into_iter()
        .map(|(k, idx)| (k, rs.subset(&idx)))
        .collect())
}

/// A delimited file whose rows carry quality vectors, kept verbatim so extra
/// columns can be passed through to outputs.
#[derive(Debug, Clone)]
pub struct QualityTable {
    pub headers: csv::StringRecord,
    pub rows: Vec<csv::StringRecord>,
    pub quality: Vec<Vec<f64>>,
}

impl QualityTable {
    pub fn d_q(&self) -> usize {
        self.quality.first().map_or(0, Vec::len)
    }

    /// Values of the columns `{prefix}1..{prefix}d` in every row.
    pub fn columns(&self, prefix: &str) -> Result<Vec<Vec<f64>>> {
        let cols = quality_columns(&self.headers, prefix);
        if cols.is_empty() {
            return Err(Error::MissingColumn(format!("{prefix}1")));
        }
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| cols.iter().map(|&c| parse_real(&row[c], i + 2, prefix)).collect())
            .collect()
    }
}

pub fn load_quality_table(path: impl AsRef<Path>, d_q: Option<usize>) -> Result<QualityTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_quality_table(file, d_q)
}

/// Reads a file carrying at least `q1..qd`. When `d_q` is given the file must
/// have exactly that many quality columns.
pub fn read_quality_table<R: Read>(reader: R, d_q: Option<usize>) -> Result<QualityTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let q_cols = quality_columns(&headers, "q");
    if q_cols.is_empty() {
        return Err(Error::MissingColumn("q1".into()));
    }
    if let Some(d) = d_q {
        if d != q_cols.len() {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: q_cols.len(),
            });
        }
    }
    let mut rows = Vec::new();
    let mut quality = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::MalformedRow {
            row: line,
            message: e.to_string(),
        })?;
        let q = q_cols
            .iter()
            .map(|&c| {
                let v = parse_real(&row[c], line, "quality")?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::MalformedRow {
                        row: line,
                        message: "quality value is not finite".into(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        quality.push(q);
        rows.push(row);
    }
    Ok(QualityTable {
        headers,
        rows,
        quality,
    })
}
