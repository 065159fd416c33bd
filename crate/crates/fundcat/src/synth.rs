//! Seeded synthetic fund-universe generator.
//!
//! Each category owns an archetype per percentage group: a sparse composition
//! on the 1e-4 grid summing to exactly 100. A record mixes its category
//! archetype with record-specific noise, `separability` controlling the mix,
//! and writes only positive cells (everything else stays missing, matching
//! real extracts where a fund simply holds nothing in an attribute). Count
//! features scatter around a per-category center; categorical features draw
//! a per-category preferred level with `benchmark_noise` leakage into the
//! full pool. Confusable category pairs share all archetypes and have their
//! categorical features masked to missing, so only noise separates them.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{
    default_schema, FeatureColumn, FeatureGroup, FeatureValue, FundRecord, FundType,
    FundUniverse, GroupKind,
};
use crate::seeding::component_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_funds: usize,
    pub n_categories: usize,
    pub schema: Vec<FeatureGroup>,
    /// Fraction of signal vs noise in group compositions, in (0, 1].
    pub separability: f64,
    /// Expected fraction of zero (missing) features per record, in [0, 1).
    pub sparsity: f64,
    /// Power-law exponent for category sizes; 0 gives uniform sizes.
    pub imbalance: f64,
    /// Probability a categorical cell draws from the full level pool instead
    /// of the category's preferred level.
    pub benchmark_noise: f64,
    /// Probability a categorical cell is left missing.
    pub benchmark_missing_rate: f64,
    /// Level-pool sizes for categorical features, in categorical-column
    /// order; features beyond the list get a pool of 10.
    pub benchmark_levels: Vec<usize>,
    /// Category index pairs that share archetypes and have categorical
    /// features masked to missing.
    pub confusable_pairs: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_funds: 1000,
            n_categories: 10,
            schema: default_schema(),
            separability: 0.8,
            sparsity: 0.95,
            imbalance: 1.0,
            benchmark_noise: 0.05,
            benchmark_missing_rate: 0.05,
            benchmark_levels: vec![89, 42],
            confusable_pairs: Vec::new(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Named presets exposed by the CLI. `paper-shape` is the desk-scale
    /// stand-in for a full vendor extract: 5,000 funds in 20 imbalanced
    /// categories over the reference schema with benchmark pools of 89 and
    /// 42 levels. `tiny` is a fast smoke-test universe.
    pub fn preset(name: &str, seed: u64) -> Option<GeneratorConfig> {
        match name {
            "paper-shape" => Some(GeneratorConfig {
                n_funds: 5000,
                n_categories: 20,
                benchmark_noise: 0.10,
                benchmark_missing_rate: 0.25,
                seed,
                ..GeneratorConfig::default()
            }),
            "tiny" => Some(GeneratorConfig {
                n_funds: 200,
                n_categories: 5,
                sparsity: 0.9,
                seed,
                ..GeneratorConfig::default()
            }),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_categories < 2 {
            return Err(Error::InvalidParam("n_categories must be >= 2".into()));
        }
        if self.n_funds < 3 * self.n_categories {
            return Err(Error::InvalidParam(format!(
                "infeasible config: {} funds cannot give {} categories at least 3 members each",
                self.n_funds, self.n_categories
            )));
        }
        if !(self.separability > 0.0 && self.separability <= 1.0) {
            return Err(Error::InvalidParam("separability must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidParam("sparsity must lie in [0, 1)".into()));
        }
        for &(a, b) in &self.confusable_pairs {
            if a == b || a >= self.n_categories || b >= self.n_categories {
                return Err(Error::InvalidParam(format!(
                    "confusable pair {a}:{b} out of range for {} categories",
                    self.n_categories
                )));
            }
        }
        Ok(())
    }
}

/// Grid snap in 1e-4 units; floors so per-group sums never grow, with a
/// nudge that keeps values already on the grid intact.
fn floor4(x: f64) -> f64 {
    ((x * 1e4 + 1e-6).floor()) / 1e4
}

/// A sparse nonnegative composition over `arity` cells, snapped to the 1e-4
/// grid and summing to exactly 100 in grid units (largest-remainder).
/// Support cells come from `pool` when given (so different draws overlap),
/// otherwise from the full cell range.
fn composition(
    rng: &mut ChaCha8Rng,
    arity: usize,
    support: usize,
    pool: Option<&[usize]>,
) -> Vec<f64> {
    let mut cells: Vec<usize> = match pool {
        Some(pool) => pool.to_vec(),
        None => (0..arity).collect(),
    };
    let support = support.clamp(1, cells.len());
    let (chosen, _) = cells.partial_shuffle(rng, support);
    let chosen: Vec<usize> = chosen.to_vec();

    // exponential-like positive mass
    let mass: Vec<f64> = (0..support)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3)
        .collect();
    let total: f64 = mass.iter().sum();

    const UNITS: i64 = 1_000_000; // 100.0000 in 1e-4 units
    let exact: Vec<f64> = mass.iter().map(|m| m / total * UNITS as f64).collect();
    let mut units: Vec<i64> = exact.iter().map(|&e| e.floor() as i64).collect();
    let mut leftover = UNITS - units.iter().sum::<i64>();
    let mut by_remainder: Vec<usize> = (0..support).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut i = 0;
    while leftover > 0 {
        units[by_remainder[i % support]] += 1;
        leftover -= 1;
        i += 1;
    }

    let mut dense = vec![0.0; arity];
    for (cell, u) in chosen.into_iter().zip(units) {
        dense[cell] = u as f64 / 1e4;
    }
    dense
}

fn support_size(arity: usize, sparsity: f64) -> usize {
    (((1.0 - sparsity) * arity as f64).round() as usize).clamp(1, arity)
}

struct CategoryArchetype {
    /// Dense composition per percentage group, in group order.
    percentages: Vec<Vec<f64>>,
    /// Center per count feature, in count-column order.
    count_centers: Vec<f64>,
    /// Preferred level per categorical feature, in categorical-column order.
    preferred_levels: Vec<String>,
}

/// Countable holdings cluster around a few coarse magnitudes, so count
/// features alone cannot separate categories.
const COUNT_CENTERS: [f64; 5] = [25.0, 50.0, 100.0, 200.0, 400.0];

/// Power-law category sizes with a floor of 3, adjusted to sum to `n`.
fn category_sizes(n: usize, c: usize, imbalance: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..c).map(|i| 1.0 / ((i + 1) as f64).powf(imbalance)).collect();
    let weight_sum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| n as f64 * w / weight_sum).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|&r| (r.floor() as usize).max(3)).collect();

    // largest-remainder top-up, then trim the biggest if the floor overshot
    let mut by_remainder: Vec<usize> = (0..c).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut assigned: usize = sizes.iter().sum();
    let mut i = 0;
    while assigned < n {
        sizes[by_remainder[i % c]] += 1;
        assigned += 1;
        i += 1;
    }
    while assigned > n {
        let largest = (0..c).max_by_key(|&j| sizes[j]).unwrap();
        debug_assert!(sizes[largest] > 3);
        sizes[largest] -= 1;
        assigned -= 1;
    }
    sizes
}

fn category_names(c: usize) -> Vec<String> {
    let width = c.to_string().len().max(2);
    (0..c).map(|i| format!("C{:0width$}", i + 1)).collect()
}

fn feature_names(group: &FeatureGroup) -> Vec<String> {
    if group.name == "Benchmark" && group.declared_arity == 2 {
        vec!["SP_DowJones".to_string(), "FTSE_Russell".to_string()]
    } else {
        (0..group.declared_arity).map(|i| format!("f{:03}", i + 1)).collect()
    }
}

/// Deterministically generates a labeled universe for `config`.
pub fn generate_universe(config: &GeneratorConfig) -> Result<FundUniverse> {
    config.validate()?;
    let schema = config.schema.clone();

    let mut columns = Vec::new();
    for (group_idx, group) in schema.iter().enumerate() {
        for feature in feature_names(group) {
            columns.push(FeatureColumn {
                group: group_idx,
                feature,
            });
        }
    }
    let percentage_groups: Vec<usize> = schema
        .iter()
        .enumerate()
        .filter(|(_, g)| g.kind == GroupKind::Percentage)
        .map(|(i, _)| i)
        .collect();
    let count_columns: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter(|(_, c)| schema[c.group].kind == GroupKind::Count)
        .map(|(i, _)| i)
        .collect();
    let categorical_columns: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter(|(_, c)| schema[c.group].kind == GroupKind::Categorical)
        .map(|(i, _)| i)
        .collect();

    let level_pools: Vec<Vec<String>> = categorical_columns
        .iter()
        .enumerate()
        .map(|(order, &col)| {
            let pool = config.benchmark_levels.get(order).copied().unwrap_or(10);
            let tag = columns[col].feature.clone();
            (0..pool).map(|l| format!("{tag}_{:03}", l + 1)).collect()
        })
        .collect();

    // Shared archetype index and categorical masking for confusable pairs.
    let mut canonical: Vec<usize> = (0..config.n_categories).collect();
    let mut masked = vec![false; config.n_categories];
    for &(a, b) in &config.confusable_pairs {
        let (lo, hi) = (a.min(b), a.max(b));
        canonical[hi] = lo;
        masked[a] = true;
        masked[b] = true;
    }

    // Per percentage group, a shared pool of active cells all categories
    // draw their archetype supports from. Pooling makes supports overlap, so
    // categories differ by weight patterns rather than disjoint footprints;
    // record noise is drawn on the same pool so it perturbs exactly the
    // informative cells.
    let group_pools: Vec<Vec<usize>> = percentage_groups
        .iter()
        .map(|&g| {
            let arity = schema[g].declared_arity;
            let support = support_size(arity, config.sparsity);
            let pool_size = ((0.08 * arity as f64).round() as usize).clamp(support, arity);
            let mut rng = component_rng(config.seed, "group_pool", g as u64);
            let mut cells: Vec<usize> = (0..arity).collect();
            let (pool, _) = cells.partial_shuffle(&mut rng, pool_size);
            pool.to_vec()
        })
        .collect();

    let archetypes: Vec<CategoryArchetype> = (0..config.n_categories)
        .map(|cat| {
            let mut rng = component_rng(config.seed, "archetype", cat as u64);
            let percentages = percentage_groups
                .iter()
                .enumerate()
                .map(|(order, &g)| {
                    let arity = schema[g].declared_arity;
                    composition(
                        &mut rng,
                        arity,
                        support_size(arity, config.sparsity),
                        Some(&group_pools[order]),
                    )
                })
                .collect();
            let count_centers = count_columns
                .iter()
                .map(|_| COUNT_CENTERS[rng.gen_range(0..COUNT_CENTERS.len())])
                .collect();
            let preferred_levels = level_pools
                .iter()
                .map(|pool| pool[rng.gen_range(0..pool.len())].clone())
                .collect();
            CategoryArchetype {
                percentages,
                count_centers,
                preferred_levels,
            }
        })
        .collect();

    let sizes = category_sizes(config.n_funds, config.n_categories, config.imbalance);
    let names = category_names(config.n_categories);
    let mut assignment: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(cat, &size)| std::iter::repeat(cat).take(size))
        .collect();
    assignment.shuffle(&mut component_rng(config.seed, "order", 0));

    let sep = config.separability;
    let mut records = Vec::with_capacity(config.n_funds);
    for (i, &cat) in assignment.iter().enumerate() {
        let mut rng = component_rng(config.seed, "record", i as u64);
        let archetype = &archetypes[canonical[cat]];
        let mut values: Vec<Option<FeatureValue>> = vec![None; columns.len()];

        let mut col_cursor = 0usize;
        let mut pct_order = 0usize;
        let mut count_order = 0usize;
        let mut cat_order = 0usize;
        for group in &schema {
            let arity = group.declared_arity;
            match group.kind {
                GroupKind::Percentage => {
                    let arch = &archetype.percentages[pct_order];
                    let noise = composition(
                        &mut rng,
                        arity,
                        support_size(arity, config.sparsity),
                        Some(&group_pools[pct_order]),
                    );
                    for j in 0..arity {
                        let v = floor4(sep * arch[j] + (1.0 - sep) * noise[j]);
                        if v > 0.0 {
                            values[col_cursor + j] = Some(FeatureValue::Number(v));
                        }
                    }
                    pct_order += 1;
                }
                GroupKind::Count => {
                    for j in 0..arity {
                        let center = archetype.count_centers[count_order + j];
                        let spread = 0.5 * center + 10.0;
                        let offset = (1.0 - sep) * spread * (2.0 * rng.gen::<f64>() - 1.0);
                        let value = (center + offset).round().max(0.0);
                        values[col_cursor + j] = Some(FeatureValue::Number(value));
                    }
                    count_order += arity;
                }
                GroupKind::Categorical => {
                    for j in 0..arity {
                        let order = cat_order + j;
                        if masked[cat] || rng.gen::<f64>() < config.benchmark_missing_rate {
                            continue;
                        }
                        let pool = &level_pools[order];
                        let level = if rng.gen::<f64>() < config.benchmark_noise {
                            pool[rng.gen_range(0..pool.len())].clone()
                        } else {
                            archetype.preferred_levels[order].clone()
                        };
                        values[col_cursor + j] = Some(FeatureValue::Text(level));
                    }
                    cat_order += arity;
                }
            }
            col_cursor += arity;
        }

        let fund_type = match rng.gen::<f64>() {
            x if x < 0.73 => FundType::OpenEnd,
            x if x < 0.96 => FundType::Etf,
            _ => FundType::MoneyMarket,
        };
        records.push(FundRecord {
            fund_id: format!("F{:06}", i + 1),
            fund_type,
            category: names[cat].clone(),
            values,
        });
    }

    FundUniverse::from_parts(schema, columns, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_funds: 100,
            n_categories: 5,
            schema: vec![
                FeatureGroup::new("Equity Industry", GroupKind::Percentage, 12),
                FeatureGroup::new("Benchmark", GroupKind::Categorical, 2),
                FeatureGroup::new("Holdings", GroupKind::Count, 2),
            ],
            sparsity: 0.7,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn contract_counts_and_min_members() {
        let u = generate_universe(&small_config(1)).unwrap();
        assert_eq!(u.n_records(), 100);
        assert_eq!(u.vocab.len(), 5);
        assert!(u.vocab.counts().iter().all(|&c| c >= 3));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_universe(&small_config(7)).unwrap();
        let b = generate_universe(&small_config(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_universe(&small_config(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn percentage_groups_sum_to_at_most_100() {
        let u = generate_universe(&small_config(3)).unwrap();
        for record in &u.records {
            let sum: f64 = record.values[..12]
                .iter()
                .filter_map(|v| match v {
                    Some(FeatureValue::Number(x)) => Some(*x),
                    _ => None,
                })
                .sum();
            assert!(sum <= 100.0 + 1e-6, "group sum {sum}");
            assert!(sum > 0.0);
        }
    }

    #[test]
    fn fully_separable_records_equal_their_archetype() {
        let config = GeneratorConfig {
            separability: 1.0,
            sparsity: 0.0,
            benchmark_noise: 0.0,
            benchmark_missing_rate: 0.0,
            ..small_config(5)
        };
        let u = generate_universe(&config).unwrap();
        // all records of one category are identical feature-wise
        for cat in u.vocab.names() {
            let rows: Vec<_> = u.records.iter().filter(|r| &r.category == cat).collect();
            for r in &rows[1..] {
                assert_eq!(r.values, rows[0].values);
            }
        }
    }

    #[test]
    fn imbalance_skews_category_sizes() {
        let sizes = category_sizes(5000, 20, 1.0);
        assert_eq!(sizes.iter().sum::<usize>(), 5000);
        let largest = *sizes.iter().max().unwrap();
        let smallest = *sizes.iter().min().unwrap();
        assert!(largest >= 4 * smallest, "{largest} vs {smallest}");
        assert!(smallest >= 3);
    }

    #[test]
    fn uniform_imbalance_gives_even_sizes() {
        let sizes = category_sizes(100, 4, 0.0);
        assert_eq!(sizes, vec![25, 25, 25, 25]);
    }

    #[test]
    fn infeasible_config_is_rejected() {
        let config = GeneratorConfig {
            n_funds: 10,
            n_categories: 5,
            ..small_config(0)
        };
        assert!(generate_universe(&config).is_err());
    }

    #[test]
    fn confusable_pairs_share_numeric_features_and_mask_benchmarks() {
        let config = GeneratorConfig {
            confusable_pairs: vec![(0, 1)],
            separability: 1.0,
            sparsity: 0.0,
            benchmark_missing_rate: 0.0,
            ..small_config(11)
        };
        let u = generate_universe(&config).unwrap();
        let rows_a: Vec<_> = u.records.iter().filter(|r| r.category == "C01").collect();
        let rows_b: Vec<_> = u.records.iter().filter(|r| r.category == "C02").collect();
        assert!(!rows_a.is_empty() && !rows_b.is_empty());
        // same percentage block (columns 0..12), benchmarks missing
        assert_eq!(rows_a[0].values[..12], rows_b[0].values[..12]);
        for r in rows_a.iter().chain(&rows_b) {
            assert_eq!(r.values[12], None);
            assert_eq!(r.values[13], None);
        }
    }

    #[test]
    fn composition_is_nonnegative_and_sums_to_100() {
        let mut rng = component_rng(9, "composition_test", 0);
        for _ in 0..50 {
            let c = composition(&mut rng, 30, 6, None);
            assert!(c.iter().all(|&v| v >= 0.0));
            let sum: f64 = c.iter().sum();
            assert!((sum - 100.0).abs() < 1e-9, "sum {sum}");
            assert!(c.iter().filter(|&&v| v > 0.0).count() <= 6);
        }
    }
}
