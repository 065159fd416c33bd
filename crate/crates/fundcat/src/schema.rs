//! Fund-universe data model and CSV ingestion.
//!
//! The ingest contract is a UTF-8, comma-separated file with a header row.
//! Fixed leading columns are `fund_id,fund_type,global_category`; every other
//! column is named `<group>::<feature>` (e.g. `Equity Industry::Airlines`)
//! and must belong to a declared [`FeatureGroup`]. Empty cells are missing
//! values, not zeros.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value kind of a feature group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    /// Percentages in `[0, 100]`.
    Percentage,
    /// Nonnegative integer counts.
    Count,
    /// Free-text tokens (benchmark names).
    Categorical,
}

/// A named group of feature columns sharing one value kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub kind: GroupKind,
    /// Upper bound on the number of member columns. Observed files may carry
    /// fewer; the pipeline always derives the actual arity from the header.
    pub declared_arity: usize,
}

impl FeatureGroup {
    pub fn new(name: &str, kind: GroupKind, declared_arity: usize) -> Self {
        FeatureGroup {
            name: name.to_string(),
            kind,
            declared_arity,
        }
    }
}

/// The 18-group reference schema used by the synthetic generator.
pub fn default_schema() -> Vec<FeatureGroup> {
    use GroupKind::*;
    vec![
        FeatureGroup::new("Asset Allocation", Percentage, 8),
        FeatureGroup::new("Benchmark", Categorical, 2),
        FeatureGroup::new("Coupons", Percentage, 4),
        FeatureGroup::new("Calculated Credit Rating", Percentage, 7),
        FeatureGroup::new("Equity Industry", Percentage, 148),
        FeatureGroup::new("Equity Country", Percentage, 53),
        FeatureGroup::new("Equity Region", Percentage, 16),
        FeatureGroup::new("Equity Style", Percentage, 15),
        FeatureGroup::new("Fixed-Inc Secondary Sector", Percentage, 183),
        FeatureGroup::new("Fixed-Inc Country", Percentage, 54),
        FeatureGroup::new("Fixed-Inc Region", Percentage, 3),
        FeatureGroup::new("Fixed-Inc Sector Government", Percentage, 68),
        FeatureGroup::new("Holdings", Count, 4),
        FeatureGroup::new("Market Cap", Percentage, 12),
        FeatureGroup::new("Maturity", Percentage, 13),
        FeatureGroup::new("MSCI Country", Percentage, 156),
        FeatureGroup::new("Muni", Percentage, 59),
        FeatureGroup::new("Product Involvement", Percentage, 15),
    ]
}

/// One feature column: index of its group in the universe schema plus the
/// feature name within the group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub group: usize,
    pub feature: String,
}

impl FeatureColumn {
    pub fn qualified_name(&self, schema: &[FeatureGroup]) -> String {
        format!("{}::{}", schema[self.group].name, self.feature)
    }
}

/// A single feature cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FundType {
    Etf,
    MoneyMarket,
    OpenEnd,
}

impl FundType {
    pub fn token(self) -> &'static str {
        match self {
            FundType::Etf => "ETF",
            FundType::MoneyMarket => "MM",
            FundType::OpenEnd => "OE",
        }
    }

    pub fn parse(token: &str) -> Option<FundType> {
        match token {
            "ETF" => Some(FundType::Etf),
            "MM" => Some(FundType::MoneyMarket),
            "OE" => Some(FundType::OpenEnd),
            _ => None,
        }
    }
}

impl fmt::Display for FundType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One labeled fund. `values` is aligned with the universe's column list.
#[derive(Debug, Clone, PartialEq)]
pub struct FundRecord {
    pub fund_id: String,
    pub fund_type: FundType,
    pub category: String,
    pub values: Vec<Option<FeatureValue>>,
}

/// Ordered category names with per-category record counts. Names are sorted
/// lexicographically so label indices are stable for a given label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    names: Vec<String>,
    counts: Vec<usize>,
}

impl CategoryVocabulary {
    pub fn from_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Self {
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        for label in labels {
            *tally.entry(label).or_insert(0) += 1;
        }
        let mut names = Vec::with_capacity(tally.len());
        let mut counts = Vec::with_capacity(tally.len());
        for (name, count) in tally {
            names.push(name.to_string());
            counts.push(count);
        }
        CategoryVocabulary { names, counts }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// The raw labeled dataset: schema, feature columns, records in ingestion
/// order, and the category vocabulary built from observed labels.
///
/// Immutable after construction; all transforming operations return a new
/// universe, so record order (and with it every seeded downstream operation)
/// is stable.
#[derive(Debug, Clone, PartialEq)]
pub struct FundUniverse {
    pub schema: Vec<FeatureGroup>,
    pub columns: Vec<FeatureColumn>,
    pub records: Vec<FundRecord>,
    pub vocab: CategoryVocabulary,
}

impl FundUniverse {
    /// Assembles and validates a universe. Checks fund_id uniqueness, value
    /// kinds against group kinds, percentage ranges and count integrality.
    pub fn from_parts(
        schema: Vec<FeatureGroup>,
        columns: Vec<FeatureColumn>,
        records: Vec<FundRecord>,
    ) -> Result<Self> {
        let mut seen: HashSet<&str> = HashSet::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            let row = i as u64 + 2; // header is row 1
            if record.fund_id.is_empty() {
                return Err(Error::BadCell {
                    row,
                    column: "fund_id".into(),
                    token: String::new(),
                    expected: "nonempty fund id",
                });
            }
            if !seen.insert(record.fund_id.as_str()) {
                return Err(Error::DuplicateFundId {
                    id: record.fund_id.clone(),
                    row,
                });
            }
            if record.values.len() != columns.len() {
                return Err(Error::MalformedRow {
                    row,
                    expected: columns.len(),
                    found: record.values.len(),
                });
            }
            for (value, column) in record.values.iter().zip(&columns) {
                let Some(value) = value else { continue };
                validate_cell(value, schema[column.group].kind, row, || {
                    column.qualified_name(&schema)
                })?;
            }
        }
        let vocab =
            CategoryVocabulary::from_labels(records.iter().map(|r| r.category.as_str()));
        Ok(FundUniverse {
            schema,
            columns,
            records,
            vocab,
        })
    }

    /// Loads the ingest CSV. One record per data row, empty cells become
    /// missing values, the vocabulary is built from observed labels.
    pub fn load_csv(path: &Path, schema: &[FeatureGroup]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;

        let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let columns = parse_header(&header, schema)?;
        let expected_width = 3 + columns.len();

        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| csv_error(path, e))?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != expected_width {
                return Err(Error::MalformedRow {
                    row: line,
                    expected: expected_width,
                    found: row.len(),
                });
            }
            records.push(parse_record(&row, line, &columns, schema)?);
        }
        Self::from_parts(schema.to_vec(), columns, records)
    }

    /// Writes the universe back out in the exact ingest contract; loading the
    /// result reproduces this universe.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec![
            "fund_id".to_string(),
            "fund_type".to_string(),
            "global_category".to_string(),
        ];
        header.extend(self.columns.iter().map(|c| c.qualified_name(&self.schema)));
        writer.write_record(&header).map_err(|e| csv_error(path, e))?;

        let mut row = Vec::with_capacity(header.len());
        for record in &self.records {
            row.clear();
            row.push(record.fund_id.clone());
            row.push(record.fund_type.token().to_string());
            row.push(record.category.clone());
            for value in &record.values {
                row.push(match value {
                    None => String::new(),
                    Some(FeatureValue::Number(x)) => format_number(*x),
                    Some(FeatureValue::Text(t)) => t.clone(),
                });
            }
            writer.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Removes every record whose category has fewer than `min_count`
    /// members, preserving the order of survivors and rebuilding the
    /// vocabulary. Idempotent for a fixed `min_count`.
    pub fn filter_min_category_count(&self, min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::InvalidParam("min_count must be >= 1".into()));
        }
        let keep: HashSet<&str> = self
            .vocab
            .names()
            .iter()
            .zip(self.vocab.counts())
            .filter(|(_, &count)| count >= min_count)
            .map(|(name, _)| name.as_str())
            .collect();
        if keep.is_empty() {
            return Err(Error::NoCategoryMeetsThreshold(min_count));
        }
        let records: Vec<FundRecord> = self
            .records
            .iter()
            .filter(|r| keep.contains(r.category.as_str()))
            .cloned()
            .collect();
        Self::from_parts(self.schema.clone(), self.columns.clone(), records)
    }

    /// Per-category count table, sorted by count descending with
    /// lexicographic tie-break.
    pub fn summary(&self) -> Vec<(String, usize)> {
        let mut rows: Vec<(String, usize)> = self
            .vocab
            .names()
            .iter()
            .cloned()
            .zip(self.vocab.counts().iter().copied())
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }

    /// Vocabulary index of each record's category, in record order.
    pub fn labels(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| {
                self.vocab
                    .index_of(&r.category)
                    .expect("record category is in the vocabulary")
            })
            .collect()
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    /// Qualified `<group>::<feature>` name per column, in column order.
    pub fn qualified_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|c| c.qualified_name(&self.schema))
            .collect()
    }
}

fn validate_cell(
    value: &FeatureValue,
    kind: GroupKind,
    row: u64,
    column_name: impl Fn() -> String,
) -> Result<()> {
    let bad = |token: String, expected: &'static str| Error::BadCell {
        row,
        column: column_name(),
        token,
        expected,
    };
    match (kind, value) {
        (GroupKind::Percentage, FeatureValue::Number(x)) => {
            if !x.is_finite() || *x < 0.0 || *x > 100.0 {
                return Err(bad(format_number(*x), "a percentage in [0, 100]"));
            }
        }
        (GroupKind::Count, FeatureValue::Number(x) ) => {
            if !x.is_finite() || *x < 0.0 || x.fract() != 0.0 {
                return Err(bad(format_number(*x), "a nonnegative integer count"));
            }
        }
        (GroupKind::Categorical, FeatureValue::Text(_)) => {}
        (GroupKind::Categorical, FeatureValue::Number(x)) => {
            return Err(bad(format_number(*x), "a categorical token"));
        }
        (_, FeatureValue::Text(t)) => {
            return Err(bad(t.clone(), "a numeric value"));
        }
    }
    Ok(())
}

fn parse_header(header: &csv::StringRecord, schema: &[FeatureGroup]) -> Result<Vec<FeatureColumn>> {
    let fixed = ["fund_id", "fund_type", "global_category"];
    if header.len() < fixed.len() {
        return Err(Error::HeaderMismatch(format!(
            "expected at least {} leading columns, found {}",
            fixed.len(),
            header.len()
        )));
    }
    for (i, want) in fixed.iter().enumerate() {
        if &header[i] != *want {
            return Err(Error::HeaderMismatch(format!(
                "column {} must be `{}`, found `{}`",
                i + 1,
                want,
                &header[i]
            )));
        }
    }
    let mut columns = Vec::with_capacity(header.len() - fixed.len());
    let mut seen: HashSet<&str> = HashSet::new();
    for cell in header.iter().skip(fixed.len()) {
        let Some((group_name, feature)) = cell.split_once("::") else {
            return Err(Error::HeaderMismatch(format!(
                "feature column `{cell}` is not of the form `<group>::<feature>`"
            )));
        };
        let group = schema
            .iter()
            .position(|g| g.name == group_name)
            .ok_or_else(|| Error::UnknownGroup(cell.to_string()))?;
        if !seen.insert(cell) {
            return Err(Error::HeaderMismatch(format!(
                "duplicate feature column `{cell}`"
            )));
        }
        columns.push(FeatureColumn {
            group,
            feature: feature.to_string(),
        });
    }
    Ok(columns)
}

fn parse_record(
    row: &csv::StringRecord,
    line: u64,
    columns: &[FeatureColumn],
    schema: &[FeatureGroup],
) -> Result<FundRecord> {
    let fund_id = row[0].to_string();
    let fund_type = FundType::parse(&row[1]).ok_or_else(|| Error::BadCell {
        row: line,
        column: "fund_type".into(),
        token: row[1].to_string(),
        expected: "one of ETF, MM, OE",
    })?;
    let category = row[2].to_string();

    let mut values = Vec::with_capacity(columns.len());
    for (cell, column) in row.iter().skip(3).zip(columns) {
        if cell.is_empty() {
            values.push(None);
            continue;
        }
        let value = match schema[column.group].kind {
            GroupKind::Categorical => FeatureValue::Text(cell.to_string()),
            GroupKind::Percentage | GroupKind::Count => {
                let parsed: f64 = cell.parse().map_err(|_| Error::BadCell {
                    row: line,
                    column: column.qualified_name(schema),
                    token: cell.to_string(),
                    expected: "a numeric value",
                })?;
                FeatureValue::Number(parsed)
            }
        };
        values.push(Some(value));
    }
    Ok(FundRecord {
        fund_id,
        fund_type,
        category,
        values,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::HeaderMismatch(format!("{}: {:?}", path.display(), other)),
    }
}

/// Shortest decimal representation that round-trips through `f64` parsing.
pub(crate) fn format_number(x: f64) -> String {
    format!("{x}")
}
