//! Statistical verification of split manifests.
//!
//! Every measured value is recounted from the manifest's id lists and the
//! annotation table; nothing recorded in the manifest besides its config is
//! trusted. Expected values are derived directly from the sampling
//! parameters, without going through the generator's weight code.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::AnnotationTable;
use crate::shiftgen::{ShiftKind, SplitManifest, TestSize};

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("config has no spurious-correlation shift")]
    NotAnScConfig,
    #[error("config has no unseen-data shift")]
    NotAUdsConfig,
    #[error("config has no low-data-drift shift")]
    NotAnLddConfig,
    #[error("contingency table is degenerate: {0}")]
    DegenerateTable(String),
    #[error("attribute `{0}` is not in the schema")]
    UnknownAttribute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CheckStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, measured: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            status: if passed {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            measured,
            expected,
            tolerance,
            detail: String::new(),
        }
    }

    /// PASS iff `|measured - expected| <= tolerance`.
    fn within(name: &str, measured: f64, expected: f64, tolerance: f64) -> Self {
        let ok = (measured - expected).abs() <= tolerance + 1e-9;
        Self::new(name, ok, measured, expected, tolerance)
    }

    fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config_id: String,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} [{}]",
            self.config_id,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "  {:<22} {:<4} measured={:<12.6} expected={:<12.6} tol={:<10.6} {}",
                c.name,
                if c.passed() { "PASS" } else { "FAIL" },
                c.measured,
                c.expected,
                c.tolerance,
                c.detail
            );
        }
        s
    }
}

/// Manifest ids resolved to table rows.
struct Resolved {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    unknown: Vec<String>,
}

impl Resolved {
    fn new(manifest: &SplitManifest, table: &AnnotationTable) -> Self {
        let mut unknown = Vec::new();
        let mut resolve = |ids: &[String]| -> Vec<usize> {
            ids.iter()
                .filter_map(|id| {
                    let r = table.row_index(id);
                    if r.is_none() {
                        unknown.push(id.clone());
                    }
                    r
                })
                .collect()
        };
        let train = resolve(&manifest.train_ids);
        let val = resolve(&manifest.val_ids);
        let test = resolve(&manifest.test_ids);
        Self {
            train,
            val,
            test,
            unknown,
        }
    }

    fn source(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.val).copied()
    }
}

fn attribute_position(
    manifest: &SplitManifest,
    table: &AnnotationTable,
    kind: ShiftKind,
    missing: VerifyError,
) -> Result<usize, VerifyError> {
    let name = manifest.config.attribute_for(kind).ok_or(missing)?;
    table
        .schema()
        .position(name)
        .ok_or_else(|| VerifyError::UnknownAttribute(name.to_string()))
}

/// Counterexample rate of the source split: the share of (label, attribute)
/// pairs off the label-i ↔ value-i diagonal.
pub fn check_counterexample_rate(
    manifest: &SplitManifest,
    table: &AnnotationTable,
) -> Result<Check, VerifyError> {
    let pos = attribute_position(
        manifest,
        table,
        ShiftKind::SpuriousCorrelation,
        VerifyError::NotAnScConfig,
    )?;
    let rows = Resolved::new(manifest, table);
    let (mut total, mut off) = (0usize, 0usize);
    for r in rows.source() {
        let v = &table.rows()[r].values;
        total += 1;
        off += usize::from(v[0] != v[pos]);
    }
    let measured = if total == 0 {
        0.0
    } else {
        off as f64 / total as f64
    };
    let eps = manifest.config.params.counterexample_fraction;
    let tolerance = 1.0 / manifest.config.params.source_size as f64;
    Ok(
        Check::within("counterexample_rate", measured, eps, tolerance)
            .detail(format!("{off} of {total} source rows off-diagonal")),
    )
}

/// Bias-uncorrected Cramér's V of a contingency table. Rows or columns with a
/// zero marginal are ignored.
pub fn cramers_v_counts(table: &[Vec<f64>]) -> Result<f64, VerifyError> {
    let cols = table.first().map_or(0, Vec::len);
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let n: f64 = row_sums.iter().sum();
    let live_rows = row_sums.iter().filter(|&&s| s > 0.0).count();
    let live_cols = col_sums.iter().filter(|&&s| s > 0.0).count();
    if live_rows < 2 || live_cols < 2 {
        return Err(VerifyError::DegenerateTable(format!(
            "{live_rows} observed row levels, {live_cols} observed column levels"
        )));
    }
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / n;
            if expected > 0.0 {
                chi2 += (obs - expected).powi(2) / expected;
            }
        }
    }
    let k = live_rows.min(live_cols) as f64 - 1.0;
    Ok((chi2 / (n * k)).sqrt().min(1.0))
}

/// Cramér's V between two attributes over the manifest's source split.
pub fn cramers_v(
    manifest: &SplitManifest,
    table: &AnnotationTable,
    first: &str,
    second: &str,
) -> Result<f64, VerifyError> {
    let schema = table.schema();
    let a = schema
        .position(first)
        .ok_or_else(|| VerifyError::UnknownAttribute(first.to_string()))?;
    let b = schema
        .position(second)
        .ok_or_else(|| VerifyError::UnknownAttribute(second.to_string()))?;
    let mut counts =
        vec![vec![0.0; schema.attribute(b).cardinality()]; schema.attribute(a).cardinality()];
    for r in Resolved::new(manifest, table).source() {
        let v = &table.rows()[r].values;
        counts[v[a]][v[b]] += 1.0;
    }
    cramers_v_counts(&counts)
}

/// Association between label and the correlated attribute must be at least
/// what the ideal ε-contaminated table implies, minus 0.05.
fn check_sc_association(
    manifest: &SplitManifest,
    table: &AnnotationTable,
) -> Result<Check, VerifyError> {
    let schema = table.schema();
    let pos = attribute_position(
        manifest,
        table,
        ShiftKind::SpuriousCorrelation,
        VerifyError::NotAnScConfig,
    )?;
    let labels = schema.label.cardinality();
    let values = schema.attribute(pos).cardinality();
    let eps = manifest.config.params.counterexample_fraction;
    let off_cells = (labels * values - labels).max(1) as f64;
    let ideal: Vec<Vec<f64>> = (0..labels)
        .map(|i| {
            (0..values)
                .map(|j| {
                    if i == j {
                        (1.0 - eps) / labels as f64
                    } else {
                        eps / off_cells
                    }
                })
                .collect()
        })
        .collect();
    let expected = cramers_v_counts(&ideal)?;
    let measured = cramers_v(
        manifest,
        table,
        &schema.label.name,
        &schema.attribute(pos).name,
    )?;
    let tolerance = 0.05;
    Ok(Check::new(
        "sc_association",
        measured >= expected - tolerance,
        measured,
        expected,
        tolerance,
    )
    .detail("Cramér's V, label vs correlated attribute"))
}

/// Held-out values never appear in the source and appear at least once in test.
pub fn check_uds(manifest: &SplitManifest, table: &AnnotationTable) -> Result<Check, VerifyError> {
    let pos = attribute_position(
        manifest,
        table,
        ShiftKind::UnseenDataShift,
        VerifyError::NotAUdsConfig,
    )?;
    let card = table.schema().attribute(pos).cardinality();
    let h = manifest.config.params.uds_holdout.min(card);
    let held: Vec<usize> = (card - h..card).collect();
    let rows = Resolved::new(manifest, table);
    let leaked = rows
        .source()
        .filter(|&r| held.contains(&table.rows()[r].values[pos]))
        .count();
    let mut test_counts = vec![0usize; card];
    for &r in &rows.test {
        test_counts[table.rows()[r].values[pos]] += 1;
    }
    let all_present = held.iter().all(|&v| test_counts[v] > 0);
    let values = &table.schema().attribute(pos).values;
    let names: Vec<_> = held.iter().map(|&v| values[v].as_str()).collect();
    Ok(Check::new(
        "uds_holdout",
        leaked == 0 && all_present,
        leaked as f64,
        0.0,
        0.0,
    )
    .detail(format!(
        "held out {:?}; test occurrences {:?}",
        names,
        held.iter().map(|&v| test_counts[v]).collect::<Vec<_>>()
    )))
}

/// Every full combination appears equally often in test. Measured value is the
/// Pearson chi-square statistic against the uniform distribution.
pub fn check_test_uniformity(manifest: &SplitManifest, table: &AnnotationTable) -> Check {
    let schema = table.schema();
    let mut counts = vec![0usize; schema.cell_count()];
    let rows = Resolved::new(manifest, table);
    for &r in &rows.test {
        counts[schema.flat_index(&table.rows()[r].values)] += 1;
    }
    let n: usize = counts.iter().sum();
    let mean = n as f64 / counts.len() as f64;
    let chi2 = if mean > 0.0 {
        counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2) / mean)
            .sum()
    } else {
        0.0
    };
    let min = counts.iter().copied().min().unwrap_or(0);
    let max = counts.iter().copied().max().unwrap_or(0);
    let size_ok = match manifest.config.params.test_per_cell {
        TestSize::PerCell(m) => min == m,
        TestSize::Auto => true,
    };
    Check::new(
        "test_uniformity",
        min == max && min > 0 && size_ok,
        chi2,
        0.0,
        0.0,
    )
    .detail(format!(
        "per-cell counts in [{min}, {max}] over {} cells",
        counts.len()
    ))
}

/// Drifted attribute marginals follow `decay^j`, and within value `j` label
/// `j mod C` outnumbers each other label by `skew`. Tolerance is one count per
/// independently rounded source stratum (two when a correlation shift splits
/// the source into correlated and counterexample parts).
pub fn check_ldd(manifest: &SplitManifest, table: &AnnotationTable) -> Result<Check, VerifyError> {
    let pos = attribute_position(
        manifest,
        table,
        ShiftKind::LowDataDrift,
        VerifyError::NotAnLddConfig,
    )?;
    let schema = table.schema();
    let labels = schema.label.cardinality();
    let values = schema.attribute(pos).cardinality();
    let params = &manifest.config.params;
    let mut joint = vec![vec![0usize; labels]; values];
    let mut total = 0usize;
    for r in Resolved::new(manifest, table).source() {
        let v = &table.rows()[r].values;
        joint[v[pos]][v[0]] += 1;
        total += 1;
    }
    let geo: Vec<f64> = (0..values)
        .map(|j| params.ldd_decay.powi(j as i32))
        .collect();
    let geo_sum: f64 = geo.iter().sum();
    let denom = params.ldd_label_skew + (labels - 1) as f64;

    let mut worst = 0.0f64;
    let mut marginals = Vec::with_capacity(values);
    for (j, row) in joint.iter().enumerate() {
        let n_j: usize = row.iter().sum();
        marginals.push(n_j);
        let expected_j = total as f64 * geo[j] / geo_sum;
        worst = worst.max((n_j as f64 - expected_j).abs());
        for (l, &n_jl) in row.iter().enumerate() {
            let share = if l == j % labels {
                params.ldd_label_skew
            } else {
                1.0
            } / denom;
            worst = worst.max((n_jl as f64 - n_j as f64 * share).abs());
        }
    }
    let strata = if manifest
        .config
        .attribute_for(ShiftKind::SpuriousCorrelation)
        .is_some()
    {
        2.0
    } else {
        1.0
    };
    Ok(Check::within("ldd_profile", worst, 0.0, strata)
        .detail(format!("marginals {marginals:?} of {total}")))
}

fn check_disjoint(manifest: &SplitManifest) -> Check {
    let mut seen = HashSet::new();
    let mut dupes = 0usize;
    for id in manifest
        .train_ids
        .iter()
        .chain(&manifest.val_ids)
        .chain(&manifest.test_ids)
    {
        if !seen.insert(id.as_str()) {
            dupes += 1;
        }
    }
    Check::new("disjoint_splits", dupes == 0, dupes as f64, 0.0, 0.0)
}

fn check_known_ids(rows: &Resolved) -> Check {
    let detail = rows
        .unknown
        .iter()
        .take(3)
        .cloned()
        .collect::<Vec<_>>()
        .join(", ");
    Check::new(
        "known_ids",
        rows.unknown.is_empty(),
        rows.unknown.len() as f64,
        0.0,
        0.0,
    )
    .detail(detail)
}

fn check_counts(manifest: &SplitManifest) -> Check {
    let c = &manifest.counts;
    let n_s = manifest.config.params.source_size;
    let ok = c.train == manifest.train_ids.len()
        && c.val == manifest.val_ids.len()
        && c.test == manifest.test_ids.len()
        && c.source == c.train + c.val
        && c.source == n_s;
    let source = (manifest.train_ids.len() + manifest.val_ids.len()) as f64;
    Check::new("split_sizes", ok, source, n_s as f64, 0.0)
}

/// Recounted per-cell source counts equal the manifest's declared quotas.
fn check_quota_fidelity(
    manifest: &SplitManifest,
    table: &AnnotationTable,
    rows: &Resolved,
) -> Check {
    let schema = table.schema();
    let mut counts = vec![0usize; schema.cell_count()];
    for r in rows.source() {
        counts[schema.flat_index(&table.rows()[r].values)] += 1;
    }
    let mut worst = 0usize;
    let mut declared = 0usize;
    for (flat, &n) in counts.iter().enumerate() {
        let key = schema.combination_key(&schema.combination(flat));
        match manifest.cell_quotas.get(&key) {
            Some(q) => {
                worst = worst.max(n.abs_diff(q.target)).max(n.abs_diff(q.achieved));
                declared += q.target;
            }
            None => worst = worst.max(n.max(1)),
        }
    }
    let n_s = manifest.config.params.source_size;
    worst = worst.max(declared.abs_diff(n_s));
    Check::new("quota_fidelity", worst == 0, worst as f64, 0.0, 0.0)
}

/// Validation share per cell is `val_fraction` of that cell's source count, ±1.
fn check_val_share(manifest: &SplitManifest, table: &AnnotationTable, rows: &Resolved) -> Check {
    let schema = table.schema();
    let mut source = vec![0usize; schema.cell_count()];
    let mut val = vec![0usize; schema.cell_count()];
    for r in rows.source() {
        source[schema.flat_index(&table.rows()[r].values)] += 1;
    }
    for &r in &rows.val {
        val[schema.flat_index(&table.rows()[r].values)] += 1;
    }
    let vf = manifest.config.params.val_fraction;
    let worst = source
        .iter()
        .zip(&val)
        .map(|(&s, &v)| (v as f64 - vf * s as f64).abs())
        .fold(0.0, f64::max);
    Check::new("val_share", worst < 1.0 + 1e-9, worst, 0.0, 1.0)
}

/// Runs every check implied by the config's shift set plus the structural ones.
pub fn verify_manifest(manifest: &SplitManifest, table: &AnnotationTable) -> VerificationReport {
    let rows = Resolved::new(manifest, table);
    let expected_checksum = manifest.compute_checksum();
    let mut checks = vec![
        Check::new(
            "checksum",
            expected_checksum == manifest.checksum,
            f64::from(u8::from(expected_checksum == manifest.checksum)),
            1.0,
            0.0,
        ),
        check_known_ids(&rows),
        check_disjoint(manifest),
        check_counts(manifest),
        check_quota_fidelity(manifest, table, &rows),
        check_val_share(manifest, table, &rows),
        check_test_uniformity(manifest, table),
    ];
    let failed = |name: &str, e: VerifyError| {
        Check::new(name, false, f64::NAN, 0.0, 0.0).detail(e.to_string())
    };
    let set = manifest.config.shift_set();
    if set.contains(ShiftKind::SpuriousCorrelation) {
        checks.push(
            check_counterexample_rate(manifest, table)
                .unwrap_or_else(|e| failed("counterexample_rate", e)),
        );
        checks.push(
            check_sc_association(manifest, table).unwrap_or_else(|e| failed("sc_association", e)),
        );
    }
    if set.contains(ShiftKind::LowDataDrift) {
        checks.push(check_ldd(manifest, table).unwrap_or_else(|e| failed("ldd_profile", e)));
    }
    if set.contains(ShiftKind::UnseenDataShift) {
        checks.push(check_uds(manifest, table).unwrap_or_else(|e| failed("uds_holdout", e)));
    }
    VerificationReport {
        config_id: manifest.config.config_id.clone(),
        checks,
    }
}
