//! Query lists, transaction datasets and adjacent-database perturbation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// A list of sensitivity-1 query answers.
///
/// `monotonic` is the caller's assertion that for every pair of adjacent
/// databases all answers move in the same direction (counting queries).
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    values: Vec<f64>,
    monotonic: bool,
}

impl QuerySet {
    pub fn new(values: Vec<f64>, monotonic: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("a query set needs at least one query"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("query {i} is not finite")));
        }
        Ok(Self { values, monotonic })
    }

    pub fn counting(values: Vec<f64>) -> Result<Self> {
        Self::new(values, true)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_monotonic(&self) -> bool {
        self.monotonic
    }

    pub fn sensitivity(&self) -> f64 {
        1.0
    }

    pub fn with_monotonic(mut self, monotonic: bool) -> Self {
        self.monotonic = monotonic;
        self
    }

    /// Answers sorted in descending order.
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub(crate) fn check_integral(&self) -> Result<()> {
        match self.values.iter().position(|v| v.fract() != 0.0) {
            Some(index) => Err(Error::NonIntegerQuery {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }
}

/// A collection of transactions, each a set of item IDs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionDB {
    transactions: Vec<BTreeSet<u32>>,
    item_universe: u32,
}

impl TransactionDB {
    pub fn new(transactions: Vec<BTreeSet<u32>>) -> Result<Self> {
        let item_universe = transactions
            .iter()
            .filter_map(|t| t.iter().next_back().copied())
            .max()
            .ok_or_else(|| invalid("a transaction database needs at least one item"))?;
        Ok(Self {
            transactions,
            item_universe,
        })
    }

    pub fn transactions(&self) -> &[BTreeSet<u32>] {
        &self.transactions
    }

    /// Largest item ID observed.
    pub fn item_universe(&self) -> u32 {
        self.item_universe
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }
}

/// Reads a frequent-itemset file: one transaction per line, whitespace
/// separated non-negative item IDs. Blank lines are skipped.
pub fn load_transactions(path: impl AsRef<Path>) -> Result<TransactionDB> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_transactions(&text, path)
}

pub(crate) fn parse_transactions(text: &str, path: &Path) -> Result<TransactionDB> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut transactions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut items = BTreeSet::new();
        for token in line.split_whitespace() {
            let item = token.parse::<u32>().map_err(|_| {
                let message = if token.parse::<i64>().is_ok_and(|v| v < 0) {
                    format!("negative item id {token:?}")
                } else {
                    format!("invalid item id {token:?}")
                };
                parse_err(lineno + 1, message)
            })?;
            items.insert(item);
        }
        if !items.is_empty() {
            transactions.push(items);
        }
    }
    if transactions.is_empty() {
        return Err(Error::NoTransactions(path.to_path_buf()));
    }
    TransactionDB::new(transactions)
}

/// Per-item counts over `0..=item_universe`.
pub fn item_counts(db: &TransactionDB) -> QuerySet {
    let mut counts = vec![0.0; db.item_universe as usize + 1];
    for t in &db.transactions {
        for &item in t {
            counts[item as usize] += 1.0;
        }
    }
    QuerySet {
        values: counts,
        monotonic: true,
    }
}

/// Direction in which a neighbouring database moves the selected counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

/// Shifts the answers at `subset` by one in `direction`.
///
/// Models a neighbouring database for counting queries; a count may not go
/// below zero.
pub fn adjacent_counts(q: &QuerySet, subset: &[usize], direction: Direction) -> Result<QuerySet> {
    let mut values = q.values.clone();
    let unique: BTreeSet<usize> = subset.iter().copied().collect();
    for index in unique {
        let v = values
            .get_mut(index)
            .ok_or_else(|| invalid(format!("index {index} out of range for {} queries", q.len())))?;
        *v += direction.sign();
        if *v < 0.0 {
            return Err(Error::NegativeCount { index });
        }
    }
    Ok(QuerySet {
        values,
        monotonic: q.monotonic,
    })
}

/// Synthetic query generators for experiments and tests.
///
/// Textual form (used by the CLI):
/// * `zipf:N:SCALE`: `round(SCALE / i)` for `i = 1..=N`
/// * `linear:N:TOP:STEP`: `TOP, TOP - STEP, ...` (N values)
/// * `constant:N:VALUE`
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticSpec {
    Zipf { n: usize, scale: f64 },
    Linear { n: usize, top: f64, step: f64 },
    Constant { n: usize, value: f64 },
}

impl SyntheticSpec {
    pub fn generate(&self, monotonic: bool) -> Result<QuerySet> {
        let values = match *self {
            SyntheticSpec::Zipf { n, scale } => {
                (1..=n).map(|i| (scale / i as f64).round()).collect()
            }
            SyntheticSpec::Linear { n, top, step } => {
                (0..n).map(|i| top - step * i as f64).collect()
            }
            SyntheticSpec::Constant { n, value } => vec![value; n],
        };
        QuerySet::new(values, monotonic)
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || invalid(format!("unrecognised synthetic spec {s:?}"));
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let count = |t: &str| match t.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(bad()),
        };
        match parts.as_slice() {
            ["zipf", n, scale] => Ok(SyntheticSpec::Zipf {
                n: count(n)?,
                scale: num(scale)?,
            }),
            ["linear", n, top, step] => Ok(SyntheticSpec::Linear {
                n: count(n)?,
                top: num(top)?,
                step: num(step)?,
            }),
            ["constant", n, value] => Ok(SyntheticSpec::Constant {
                n: count(n)?,
                value: num(value)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Where a query set comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum QuerySource {
    Dataset(PathBuf),
    Synthetic(SyntheticSpec),
}

impl QuerySource {
    /// Dataset counts are always monotonic; synthetic sets take the flag.
    pub fn load(&self, monotonic: bool) -> Result<QuerySet> {
        match self {
            QuerySource::Dataset(path) => Ok(item_counts(&load_transactions(path)?)),
            QuerySource::Synthetic(spec) => spec.generate(monotonic),
        }
    }
}
