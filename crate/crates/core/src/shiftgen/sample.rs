use std::collections::BTreeMap;

use indexmap::IndexMap;

use super::manifest::{CellQuota, SplitCounts, SplitManifest};
use super::weights::{compose_source_weights, WeightTensor};
use super::{ShiftConfig, ShiftError, ShiftKind, TestSize};
use crate::apportion::largest_remainder;
use crate::rng::KeyedRng;
use crate::schema::{cell_index, AnnotationTable, AttributeSchema};

/// Grouping key used at one level of the apportionment tree.
#[derive(Debug, Clone, Copy)]
enum Level {
    /// 0 when (label, attribute) lies on the correlation diagonal, 1 otherwise.
    Diagonal(usize),
    Attribute(usize),
}

impl Level {
    fn key(self, combo: &[usize]) -> usize {
        match self {
            Level::Diagonal(pos) => usize::from(combo[0] != combo[pos]),
            Level::Attribute(pos) => combo[pos],
        }
    }
}

/// Integer source quota for every full combination.
///
/// `source_size` is split top-down with largest-remainder rounding at every
/// level: first between correlated and counterexample cells (SC), then across
/// the drifted attribute's values (LDD), then attribute by attribute in
/// canonical order. Every level's totals stay within one unit of their exact
/// share, so the realized counterexample count and drift marginals track the
/// target weights even when quotas per cell are tiny.
pub fn source_quotas(
    config: &ShiftConfig,
    schema: &AttributeSchema,
    weights: &WeightTensor,
) -> Vec<usize> {
    let mut levels = Vec::new();
    let pos_of = |kind| {
        config
            .attribute_for(kind)
            .and_then(|name| schema.position(name))
    };
    if let Some(pos) = pos_of(ShiftKind::SpuriousCorrelation) {
        levels.push(Level::Diagonal(pos));
    }
    if let Some(pos) = pos_of(ShiftKind::LowDataDrift) {
        levels.push(Level::Attribute(pos));
    }
    levels.extend((0..schema.attribute_count()).map(Level::Attribute));

    let combos: Vec<Vec<usize>> = (0..schema.cell_count())
        .map(|f| schema.combination(f))
        .collect();
    let cells: Vec<usize> = (0..combos.len()).collect();
    let mut out = vec![0; combos.len()];
    split_node(
        &cells,
        config.params.source_size,
        &levels,
        &combos,
        weights,
        &mut out,
    );
    out
}

fn split_node(
    cells: &[usize],
    count: usize,
    levels: &[Level],
    combos: &[Vec<usize>],
    weights: &WeightTensor,
    out: &mut [usize],
) {
    let Some((&level, rest)) = levels.split_first() else {
        debug_assert_eq!(cells.len(), 1);
        out[cells[0]] = count;
        return;
    };
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &c in cells {
        groups.entry(level.key(&combos[c])).or_default().push(c);
    }
    let mass: Vec<f64> = groups
        .values()
        .map(|g| g.iter().map(|&c| weights.get(c)).sum())
        .collect();
    let shares = largest_remainder(count, &mass);
    for (group, share) in groups.values().zip(shares) {
        split_node(group, share, rest, combos, weights, out);
    }
}

/// Draws train/val/test instance ids realizing `config` from `table`.
pub fn sample_split(
    table: &AnnotationTable,
    config: &ShiftConfig,
) -> Result<SplitManifest, ShiftError> {
    let schema = table.schema();
    let weights = compose_source_weights(config, schema)?;
    let params = &config.params;
    let quotas = source_quotas(config, schema, &weights);
    let index = cell_index(table);

    // Shuffle each cell's pool with a stream keyed by (seed, config, cell).
    let mut pools: Vec<Vec<usize>> = Vec::with_capacity(quotas.len());
    for (flat, &quota) in quotas.iter().enumerate() {
        let mut pool = index.rows(flat).to_vec();
        if quota > pool.len() {
            return Err(ShiftError::InsufficientPool {
                cell: schema.combination_key(&schema.combination(flat)),
                needed: quota,
                available: pool.len(),
            });
        }
        KeyedRng::new(config.seed, &config.config_id, flat as u64).shuffle(&mut pool);
        pools.push(pool);
    }

    let leftover = |flat: usize| pools[flat].len() - quotas[flat];
    let (min_flat, min_left) = (0..quotas.len())
        .map(|f| (f, leftover(f)))
        .min_by_key(|&(f, left)| (left, f))
        .expect("schema has at least one cell");
    let key_of = |flat: usize| schema.combination_key(&schema.combination(flat));
    if min_left == 0 {
        return Err(ShiftError::EmptyTestCell {
            cell: key_of(min_flat),
        });
    }
    let per_cell = match params.test_per_cell {
        TestSize::Auto => min_left,
        TestSize::PerCell(m) => {
            if let Some(f) = (0..quotas.len()).find(|&f| leftover(f) < m) {
                return Err(ShiftError::InsufficientPool {
                    cell: key_of(f),
                    needed: quotas[f] + m,
                    available: pools[f].len(),
                });
            }
            m
        }
    };

    let val_total = (params.val_fraction * params.source_size as f64).round() as usize;
    let val_quotas = largest_remainder(
        val_total,
        &quotas.iter().map(|&q| q as f64).collect::<Vec<_>>(),
    );

    let id = |row: usize| table.rows()[row].instance_id.clone();
    let (mut train_ids, mut val_ids, mut test_ids) = (Vec::new(), Vec::new(), Vec::new());
    let mut cell_quotas = IndexMap::with_capacity(quotas.len());
    for (flat, pool) in pools.iter().enumerate() {
        let (q, v) = (quotas[flat], val_quotas[flat]);
        val_ids.extend(pool[..v].iter().map(|&r| id(r)));
        train_ids.extend(pool[v..q].iter().map(|&r| id(r)));
        test_ids.extend(pool[q..q + per_cell].iter().map(|&r| id(r)));
        cell_quotas.insert(
            key_of(flat),
            CellQuota {
                target: q,
                achieved: q,
            },
        );
    }

    let mut manifest = SplitManifest {
        config: config.clone(),
        counts: SplitCounts {
            source: train_ids.len() + val_ids.len(),
            train: train_ids.len(),
            val: val_ids.len(),
            test: test_ids.len(),
            test_per_cell: per_cell,
        },
        train_ids,
        val_ids,
        test_ids,
        cell_quotas,
        checksum: String::new(),
    };
    manifest.seal();
    Ok(manifest)
}
