//! Universe-to-matrix transformation: rounding, zero imputation, one-hot
//! encoding of categorical features, and MinMax scaling.
//!
//! The chain is `impute_and_round` -> `fit_preprocessor` (train rows only) ->
//! `transform`. Scaling statistics come from the fit rows; transforming other
//! rows applies the same affine map without clipping, so out-of-range values
//! can fall outside `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{FeatureValue, FundType, FundUniverse, GroupKind};

/// Reserved level substituted for missing categorical cells.
pub const MISSING_TOKEN: &str = "__MISSING__";

/// Rounds half away from zero to four decimal places.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Returns a universe with every numeric value rounded to 4 decimals, every
/// missing numeric cell replaced by zero (no investment in that attribute)
/// and every missing categorical cell replaced by [`MISSING_TOKEN`].
pub fn impute_and_round(universe: &FundUniverse) -> FundUniverse {
    let mut out = universe.clone();
    let kinds: Vec<GroupKind> = out
        .columns
        .iter()
        .map(|c| out.schema[c.group].kind)
        .collect();
    for record in &mut out.records {
        for (value, kind) in record.values.iter_mut().zip(&kinds) {
            *value = Some(impute_cell(value.take(), *kind));
        }
    }
    out
}

fn impute_cell(value: Option<FeatureValue>, kind: GroupKind) -> FeatureValue {
    match (value, kind) {
        (Some(FeatureValue::Number(x)), _) => FeatureValue::Number(round4(x)),
        (Some(text @ FeatureValue::Text(_)), _) => text,
        (None, GroupKind::Categorical) => FeatureValue::Text(MISSING_TOKEN.to_string()),
        (None, _) => FeatureValue::Number(0.0),
    }
}

/// One column of the output design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutputColumn {
    /// A numeric source column with its fit-time scaling statistics.
    Numeric {
        source: String,
        min: f64,
        max: f64,
    },
    /// Indicator for one observed level of a categorical source column.
    OneHot { source: String, level: String },
    /// Indicator for one observed fund type (only when fund_type is opted in).
    FundTypeOneHot { level: String },
}

impl OutputColumn {
    pub fn name(&self) -> String {
        match self {
            OutputColumn::Numeric { source, .. } => source.clone(),
            OutputColumn::OneHot { source, level } => format!("{source}={level}"),
            OutputColumn::FundTypeOneHot { level } => format!("fund_type={level}"),
        }
    }

    /// Source feature-group name, or a pseudo-group for fund type.
    pub fn group_name(&self) -> &str {
        match self {
            OutputColumn::Numeric { source, .. } | OutputColumn::OneHot { source, .. } => {
                source.split_once("::").map(|(g, _)| g).unwrap_or(source)
            }
            OutputColumn::FundTypeOneHot { .. } => "fund_type",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    /// Include fund_type as a one-hot-encoded feature. Off by default.
    pub include_fund_type: bool,
}

/// Immutable fit result: the output column layout with per-column scaling
/// statistics and one-hot vocabularies (sorted, duplicate-free level lists).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocessor {
    pub columns: Vec<OutputColumn>,
    pub include_fund_type: bool,
}

impl FittedPreprocessor {
    pub fn n_output_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name()).collect()
    }
}

/// Dense numeric matrix with row and column provenance. No missing values;
/// fit-set values of numeric columns lie in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }
}

/// Fits the output layout on `rows` of an imputed universe: one column per
/// numeric feature, one column per observed level of each categorical
/// feature, min/max computed over the fit rows only.
pub fn fit_preprocessor(
    universe: &FundUniverse,
    rows: &[usize],
    opts: &FitOptions,
) -> Result<FittedPreprocessor> {
    if rows.is_empty() {
        return Err(Error::InvalidParam("cannot fit preprocessor on zero rows".into()));
    }
    let mut columns = Vec::new();
    for (col_idx, column) in universe.columns.iter().enumerate() {
        let qualified = column.qualified_name(&universe.schema);
        match universe.schema[column.group].kind {
            GroupKind::Percentage | GroupKind::Count => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for &row in rows {
                    let x = numeric_cell(universe, row, col_idx, &qualified)?;
                    min = min.min(x);
                    max = max.max(x);
                }
                columns.push(OutputColumn::Numeric {
                    source: qualified,
                    min,
                    max,
                });
            }
            GroupKind::Categorical => {
                let mut levels: BTreeSet<&str> = BTreeSet::new();
                for &row in rows {
                    match &universe.records[row].values[col_idx] {
                        Some(FeatureValue::Text(t)) => {
                            levels.insert(t.as_str());
                        }
                        _ => return Err(Error::NotImputed { column: qualified }),
                    }
                }
                for level in levels {
                    columns.push(OutputColumn::OneHot {
                        source: qualified.clone(),
                        level: level.to_string(),
                    });
                }
            }
        }
    }
    if opts.include_fund_type {
        let mut levels: BTreeSet<&str> = BTreeSet::new();
        for &row in rows {
            levels.insert(universe.records[row].fund_type.token());
        }
        for level in levels {
            columns.push(OutputColumn::FundTypeOneHot {
                level: level.to_string(),
            });
        }
    }
    Ok(FittedPreprocessor {
        columns,
        include_fund_type: opts.include_fund_type,
    })
}

fn numeric_cell(
    universe: &FundUniverse,
    row: usize,
    col: usize,
    qualified: &str,
) -> Result<f64> {
    match &universe.records[row].values[col] {
        Some(FeatureValue::Number(x)) => Ok(*x),
        _ => Err(Error::NotImputed {
            column: qualified.to_string(),
        }),
    }
}

/// Applies the fitted layout to `rows` of an imputed universe. Numeric
/// columns are scaled by `(x - min) / (max - min)` (constant columns map to
/// zero); categorical levels unseen at fit time become all-zero one-hot
/// blocks; out-of-range values are not clipped.
pub fn transform(
    prep: &FittedPreprocessor,
    universe: &FundUniverse,
    rows: &[usize],
) -> Result<DesignMatrix> {
    let input_columns = universe.qualified_columns();
    let labels = universe.labels();
    let cells = RowSource {
        columns: &input_columns,
        values: |row: usize, col: usize| universe.records[row].values[col].clone(),
        fund_type: |row: usize| universe.records[row].fund_type,
    };
    let values = transform_impl(prep, &cells, rows)?;
    Ok(DesignMatrix {
        values,
        row_ids: rows
            .iter()
            .map(|&r| universe.records[r].fund_id.clone())
            .collect(),
        labels: rows.iter().map(|&r| labels[r]).collect(),
        column_names: prep.column_names(),
    })
}

/// Row provider for [`transform_rows`], used by the prediction path where
/// there is no labeled universe.
pub struct RawRows {
    /// Qualified `<group>::<feature>` names of the input columns.
    pub columns: Vec<String>,
    pub fund_ids: Vec<String>,
    pub fund_types: Vec<FundType>,
    /// Imputed feature cells, `rows[i][j]` aligned with `columns[j]`.
    pub rows: Vec<Vec<FeatureValue>>,
}

/// Transforms unlabeled rows (see [`RawRows`]). Input columns unknown to the
/// preprocessor are rejected by name; preprocessor columns absent from the
/// input are treated as imputed-missing (zero / [`MISSING_TOKEN`]).
pub fn transform_rows(prep: &FittedPreprocessor, raw: &RawRows) -> Result<Array2<f64>> {
    let cells = RowSource {
        columns: &raw.columns,
        values: |row: usize, col: usize| Some(raw.rows[row][col].clone()),
        fund_type: |row: usize| raw.fund_types[row],
    };
    let all: Vec<usize> = (0..raw.rows.len()).collect();
    transform_impl(prep, &cells, &all)
}

/// Kinds of raw prediction columns, resolved from the fitted layout. Any
/// input column the preprocessor has never seen is an error. The prediction
/// loader uses this to decide how to parse each cell.
pub fn input_column_kinds(prep: &FittedPreprocessor, columns: &[String]) -> Result<Vec<GroupKind>> {
    let mut kind_of: BTreeMap<&str, GroupKind> = BTreeMap::new();
    for column in &prep.columns {
        match column {
            OutputColumn::Numeric { source, .. } => {
                kind_of.insert(source.as_str(), GroupKind::Percentage);
            }
            OutputColumn::OneHot { source, .. } => {
                kind_of.insert(source.as_str(), GroupKind::Categorical);
            }
            OutputColumn::FundTypeOneHot { .. } => {}
        }
    }
    columns
        .iter()
        .map(|name| {
            kind_of
                .get(name.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownFeature(name.clone()))
        })
        .collect()
}

struct RowSource<'a, V, F>
where
    V: Fn(usize, usize) -> Option<FeatureValue>,
    F: Fn(usize) -> FundType,
{
    columns: &'a [String],
    values: V,
    fund_type: F,
}

fn transform_impl<V, F>(
    prep: &FittedPreprocessor,
    source: &RowSource<'_, V, F>,
    rows: &[usize],
) -> Result<Array2<f64>>
where
    V: Fn(usize, usize) -> Option<FeatureValue>,
    F: Fn(usize) -> FundType,
{
    // Input columns the preprocessor does not know are an error; prep columns
    // absent from the input read as imputed-missing.
    let known: BTreeSet<&str> = prep
        .columns
        .iter()
        .filter_map(|c| match c {
            OutputColumn::Numeric { source, .. } | OutputColumn::OneHot { source, .. } => {
                Some(source.as_str())
            }
            OutputColumn::FundTypeOneHot { .. } => None,
        })
        .collect();
    for name in source.columns {
        if !known.contains(name.as_str()) {
            return Err(Error::UnknownFeature(name.clone()));
        }
    }
    let index_of: BTreeMap<&str, usize> = source
        .columns
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();

    let mut values = Array2::zeros((rows.len(), prep.columns.len()));
    for (out_row, &row) in rows.iter().enumerate() {
        for (out_col, column) in prep.columns.iter().enumerate() {
            let value = match column {
                OutputColumn::Numeric { source: name, min, max } => {
                    let x = match index_of.get(name.as_str()) {
                        Some(&col) => match (source.values)(row, col) {
                            Some(FeatureValue::Number(x)) => x,
                            Some(FeatureValue::Text(_)) | None => {
                                return Err(Error::NotImputed { column: name.clone() })
                            }
                        },
                        None => 0.0, // absent from input: imputed-missing numeric
                    };
                    if max > min {
                        (x - min) / (max - min)
                    } else {
                        0.0
                    }
                }
                OutputColumn::OneHot { source: name, level } => {
                    let token = match index_of.get(name.as_str()) {
                        Some(&col) => match (source.values)(row, col) {
                            Some(FeatureValue::Text(t)) => t,
                            Some(FeatureValue::Number(_)) | None => {
                                return Err(Error::NotImputed { column: name.clone() })
                            }
                        },
                        None => MISSING_TOKEN.to_string(),
                    };
                    f64::from(token == *level)
                }
                OutputColumn::FundTypeOneHot { level } => {
                    f64::from((source.fund_type)(row).token() == level)
                }
            };
            values[(out_row, out_col)] = value;
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{FeatureColumn, FeatureGroup, FundRecord};

    fn universe(records: Vec<FundRecord>) -> FundUniverse {
        let schema = vec![
            FeatureGroup::new("Equity Industry", GroupKind::Percentage, 2),
            FeatureGroup::new("Benchmark", GroupKind::Categorical, 1),
        ];
        let columns = vec![
            FeatureColumn { group: 0, feature: "Airlines".into() },
            FeatureColumn { group: 0, feature: "Banks".into() },
            FeatureColumn { group: 1, feature: "SP_DowJones".into() },
        ];
        FundUniverse::from_parts(schema, columns, records).unwrap()
    }

    fn record(id: &str, cat: &str, values: Vec<Option<FeatureValue>>) -> FundRecord {
        FundRecord {
            fund_id: id.into(),
            fund_type: FundType::Etf,
            category: cat.into(),
            values,
        }
    }

    fn num(x: f64) -> Option<FeatureValue> {
        Some(FeatureValue::Number(x))
    }

    fn text(t: &str) -> Option<FeatureValue> {
        Some(FeatureValue::Text(t.into()))
    }

    #[test]
    fn rounds_to_4_decimals() {
        assert_eq!(round4(12.34567), 12.3457);
        assert_eq!(round4(-12.34567), -12.3457);
        assert_eq!(round4(2.0), 2.0);
        // half-away-from-zero at the unit scale (exact halves cannot be
        // represented at the 1e-4 scale in binary, so probe via f64::round)
        assert_eq!(1.5f64.round(), 2.0);
        assert_eq!((-1.5f64).round(), -2.0);
        // values already on the grid are fixed points
        for k in [0_i64, 1, 9999, 123_4567, -55_0001] {
            let x = k as f64 / 1e4;
            assert_eq!(round4(x), x);
        }
    }

    #[test]
    fn imputation_fills_numeric_zero_and_missing_token() {
        let u = universe(vec![record("F1", "A", vec![None, num(12.34567), None])]);
        let imputed = impute_and_round(&u);
        let values = &imputed.records[0].values;
        assert_eq!(values[0], num(0.0));
        assert_eq!(values[1], num(12.3457));
        assert_eq!(values[2], text(MISSING_TOKEN));
    }

    #[test]
    fn fit_expands_observed_levels_and_per_column_stats() {
        let u = impute_and_round(&universe(vec![
            record("F1", "A", vec![num(0.0), num(7.0), text("P")]),
            record("F2", "A", vec![num(5.0), num(7.0), text("Q")]),
            record("F3", "B", vec![num(10.0), num(7.0), text("R")]),
        ]));
        let prep = fit_preprocessor(&u, &[0, 1, 2], &FitOptions::default()).unwrap();
        // 2 numeric + 3 one-hot levels
        assert_eq!(prep.n_output_columns(), 5);
        match &prep.columns[0] {
            OutputColumn::Numeric { min, max, .. } => {
                assert_eq!((*min, *max), (0.0, 10.0));
            }
            other => panic!("unexpected column {other:?}"),
        }
        // constant column records min == max
        match &prep.columns[1] {
            OutputColumn::Numeric { min, max, .. } => assert_eq!((*min, *max), (7.0, 7.0)),
            other => panic!("unexpected column {other:?}"),
        }
    }

    #[test]
    fn transform_scales_endpoints_and_midpoint() {
        let u = impute_and_round(&universe(vec![
            record("F1", "A", vec![num(0.0), num(7.0), text("P")]),
            record("F2", "A", vec![num(5.0), num(7.0), text("P")]),
            record("F3", "B", vec![num(10.0), num(7.0), text("P")]),
        ]));
        let prep = fit_preprocessor(&u, &[0, 1, 2], &FitOptions::default()).unwrap();
        let m = transform(&prep, &u, &[0, 1, 2]).unwrap();
        assert_eq!(m.values.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        // constant column maps to zero
        assert_eq!(m.values.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn transform_does_not_clip_out_of_range_values() {
        let u = impute_and_round(&universe(vec![
            record("F1", "A", vec![num(0.0), num(1.0), text("P")]),
            record("F2", "A", vec![num(10.0), num(1.0), text("P")]),
            record("F3", "B", vec![num(12.0), num(1.0), text("P")]),
        ]));
        let prep = fit_preprocessor(&u, &[0, 1], &FitOptions::default()).unwrap();
        let m = transform(&prep, &u, &[2]).unwrap();
        assert!((m.values[(0, 0)] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn unseen_level_maps_to_all_zero_block() {
        let u = impute_and_round(&universe(vec![
            record("F1", "A", vec![num(0.0), num(1.0), text("P")]),
            record("F2", "A", vec![num(5.0), num(2.0), text("Q")]),
            record("F3", "B", vec![num(9.0), num(3.0), text("Z")]),
        ]));
        let prep = fit_preprocessor(&u, &[0, 1], &FitOptions::default()).unwrap();
        let m = transform(&prep, &u, &[0, 1, 2]).unwrap();
        // one-hot block is the last two columns (levels P, Q)
        let block = m.values.slice(ndarray::s![.., 2..]);
        assert_eq!(block.row(0).sum(), 1.0);
        assert_eq!(block.row(1).sum(), 1.0);
        assert_eq!(block.row(2).sum(), 0.0);
    }

    #[test]
    fn fund_type_columns_appear_only_when_opted_in() {
        let u = impute_and_round(&universe(vec![
            record("F1", "A", vec![num(0.0), num(1.0), text("P")]),
            record("F2", "B", vec![num(5.0), num(2.0), text("P")]),
        ]));
        let without = fit_preprocessor(&u, &[0, 1], &FitOptions::default()).unwrap();
        let with = fit_preprocessor(
            &u,
            &[0, 1],
            &FitOptions { include_fund_type: true },
        )
        .unwrap();
        assert_eq!(with.n_output_columns(), without.n_output_columns() + 1);
        let m = transform(&with, &u, &[0, 1]).unwrap();
        assert_eq!(m.values.column(with.n_output_columns() - 1).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn fit_rejects_unimputed_universe() {
        let u = universe(vec![record("F1", "A", vec![None, num(1.0), text("P")])]);
        let err = fit_preprocessor(&u, &[0], &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotImputed { .. }), "{err}");
    }

    #[test]
    fn transform_rows_rejects_unknown_column() {
        let u = impute_and_round(&universe(vec![
            record("F1", "A", vec![num(0.0), num(1.0), text("P")]),
            record("F2", "B", vec![num(5.0), num(2.0), text("P")]),
        ]));
        let prep = fit_preprocessor(&u, &[0, 1], &FitOptions::default()).unwrap();
        let raw = RawRows {
            columns: vec!["Equity Industry::Rockets".into()],
            fund_ids: vec!["F9".into()],
            fund_types: vec![FundType::Etf],
            rows: vec![vec![FeatureValue::Number(1.0)]],
        };
        match transform_rows(&prep, &raw).unwrap_err() {
            Error::UnknownFeature(name) => assert_eq!(name, "Equity Industry::Rockets"),
            other => panic!("unexpected error {other}"),
        }
    }
}
