use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{ExperimentId, ExperimentModel, ExperimentSpec, ModelKind, ParameterBox};

/// One comparison: `outcome = 1` when object `i` is preferred to `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub outcome: f64,
}

/// Pairwise comparison records over objects `0..items`. Stored with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDataset {
    pub items: usize,
    pub records: Vec<PairRecord>,
}

impl PairwiseDataset {
    /// BTL catalog over the distinct observed pairs (sorted), box `[−r, r]^p`,
    /// and the experiment of every record.
    pub fn catalog(&self, radius: f64) -> Result<(ExperimentModel, Vec<ExperimentId>)> {
        let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for r in &self.records {
            pairs.insert((r.i, r.j), 0);
        }
        for (a, slot) in pairs.values_mut().enumerate() {
            *slot = a;
        }
        let specs = pairs.keys().map(|&(i, j)| ExperimentSpec::Btl { i, j }).collect();
        let p = self.items.saturating_sub(1);
        let model = ExperimentModel::instantiate(ModelKind::Btl, specs, ParameterBox::cube(p, radius)?)?;
        let ids = self.records.iter().map(|r| ExperimentId(pairs[&(r.i, r.j)])).collect();
        Ok((model, ids))
    }

    pub fn distinct_pairs(&self) -> usize {
        self.records.iter().map(|r| (r.i, r.j)).collect::<std::collections::BTreeSet<_>>().len()
    }
}

/// Reads a CSV with header `i,j,outcome`.
///
/// Rows with `i > j` are stored as `(j, i, 1 − outcome)`. When `items` is
/// given, indices at or above it are rejected; otherwise the item count is
/// one more than the largest index.
pub fn read_pairwise_dataset(path: impl AsRef<Path>, items: Option<usize>) -> Result<PairwiseDataset> {
    parse_pairwise_dataset(std::fs::File::open(path)?, items)
}

pub fn parse_pairwise_dataset<R: Read>(reader: R, items: Option<usize>) -> Result<PairwiseDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["i", "j", "outcome"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `i,j,outcome`, found `{}`", names.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut max_index = 0usize;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize, name: &str| -> Result<&str> {
            row.get(k).ok_or_else(|| Error::Parse { line, message: format!("missing field `{name}`") })
        };
        let index = |k: usize, name: &str| -> Result<usize> {
            let raw = field(k, name)?;
            raw.parse::<i64>()
                .map_err(|_| Error::Parse { line, message: format!("`{name}` is not an integer: `{raw}`") })
                .and_then(|v| usize::try_from(v).map_err(|_| Error::Range { line, message: format!("`{name}` is negative: {v}") }))
        };
        let i = index(0, "i")?;
        let j = index(1, "j")?;
        let raw = field(2, "outcome")?;
        let outcome: f64 = raw
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("`outcome` is not a number: `{raw}`") })?;
        if outcome != 0.0 && outcome != 1.0 {
            return Err(Error::Range { line, message: format!("outcome must be 0 or 1, got {raw}") });
        }
        if i == j {
            return Err(Error::Range { line, message: format!("self-comparison of item {i}") });
        }
        if let Some(n) = items {
            if i.max(j) >= n {
                return Err(Error::Range {
                    line,
                    message: format!("item {} beyond the declared count {n}", i.max(j)),
                });
            }
        }
        max_index = max_index.max(i.max(j));
        records.push(if i < j {
            PairRecord { i, j, outcome }
        } else {
            PairRecord { i: j, j: i, outcome: 1.0 - outcome }
        });
    }
    if records.is_empty() {
        return Err(Error::Parse { line: 2, message: "dataset has no records".into() });
    }
    Ok(PairwiseDataset {
        items: items.unwrap_or(max_index + 1),
        records,
    })
}
