#![allow(dead_code)]

use shiftbench::schema::{AnnotationRow, AnnotationTable, AttributeSchema};
use shiftbench::shiftgen::{enumerate_configs, SamplingParams, ShiftConfig, ShiftKind};
use shiftbench::synth;

/// Annotation-only stand-in for the synthetic dataset: `per_cell` rows per
/// combination, ids as the renderer would assign them.
pub fn fixture_table(per_cell: usize) -> AnnotationTable {
    let schema = synth::schema();
    let mut rows = Vec::new();
    for flat in 0..schema.cell_count() {
        let combo = schema.combination(flat);
        let assignment = [combo[0], combo[1], combo[2], combo[3]];
        for k in 0..per_cell {
            rows.push(AnnotationRow {
                instance_id: synth::instance_id(assignment, k),
                values: combo.clone(),
            });
        }
    }
    AnnotationTable::new(schema, rows).unwrap()
}

/// The single config of `schema` with exactly these (kind, attribute) pairs.
pub fn config_for(
    schema: &AttributeSchema,
    params: &SamplingParams,
    seed: u64,
    wanted: &[(ShiftKind, &str)],
) -> ShiftConfig {
    enumerate_configs(schema, params, seed)
        .into_iter()
        .find(|c| {
            c.assignments.len() == wanted.len()
                && wanted.iter().all(|&(k, a)| c.attribute_for(k) == Some(a))
        })
        .expect("requested config is enumerated")
}
pub mod oracle;
