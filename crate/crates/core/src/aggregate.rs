//! Result-log ingestion and comparison views: deltas against a baseline
//! algorithm, per-shift-set means with standard errors, difficulty by number
//! of concurrent shifts, and scratch-vs-pretrained pairs.
//!
//! Every view sorts its input by the record key before reducing, so record
//! order never changes an output bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shiftgen::ShiftSet;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("record {index}: accuracy {accuracy} outside [0, 1]")]
    AccuracyOutOfRange { index: usize, accuracy: f64 },
    #[error("duplicate record for {0}")]
    DuplicateRecord(String),
    #[error("baseline algorithm `{0}` has no records")]
    MissingBaseline(String),
    #[error("algorithm `{algorithm}` lacks {arm} records")]
    MissingArm {
        algorithm: String,
        arm: &'static str,
    },
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One accuracy observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub config_id: String,
    pub shift_set: ShiftSet,
    pub attributes: String,
    pub algorithm: String,
    pub pretrained: bool,
    pub seed: u64,
    pub split: String,
    pub accuracy: f64,
}

type RecordKey<'a> = (&'a str, &'a str, &'a str, bool, u64, &'a str);

impl ResultRecord {
    fn key(&self) -> RecordKey<'_> {
        (
            &self.dataset,
            &self.config_id,
            &self.algorithm,
            self.pretrained,
            self.seed,
            &self.split,
        )
    }

    /// The run this observation belongs to, independent of algorithm.
    fn cell(&self) -> (&str, &str, u64, bool, &str) {
        (
            &self.dataset,
            &self.config_id,
            self.seed,
            self.pretrained,
            &self.split,
        )
    }
}

/// Checks accuracy ranges and key uniqueness.
pub fn validate_records(records: &[ResultRecord]) -> Result<(), AggregateError> {
    let mut seen = BTreeSet::new();
    for (index, r) in records.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(AggregateError::AccuracyOutOfRange {
                index,
                accuracy: r.accuracy,
            });
        }
        if !seen.insert(r.key()) {
            return Err(AggregateError::DuplicateRecord(format!(
                "{}/{}/{}/pretrained={}/seed={}/{}",
                r.dataset, r.config_id, r.algorithm, r.pretrained, r.seed, r.split
            )));
        }
    }
    Ok(())
}

/// Reads and validates a results CSV.
pub fn read_records(reader: impl Read) -> Result<Vec<ResultRecord>, AggregateError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let records = rdr
        .deserialize()
        .collect::<Result<Vec<ResultRecord>, _>>()?;
    validate_records(&records)?;
    Ok(records)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>, AggregateError> {
    read_records(File::open(path)?)
}

pub fn write_records(writer: impl Write, records: &[ResultRecord]) -> Result<(), AggregateError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn sorted(records: &[ResultRecord]) -> Vec<&ResultRecord> {
    let mut out: Vec<&ResultRecord> = records.iter().collect();
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    out
}

/// Mean and standard error of the mean (sample standard deviation / √n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub dispersion: f64,
    pub n: usize,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let dispersion = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        Some(Self {
            mean,
            dispersion,
            n,
        })
    }
}

/// Accuracy difference in percentage points with an explicit sign, e.g. `+9.04`.
pub fn format_delta(delta: f64) -> String {
    format!("{:+.2}", delta * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCell {
    pub algorithm: String,
    pub pretrained: bool,
    pub shift_set: ShiftSet,
    /// Mean accuracy of the algorithm minus mean accuracy of the baseline over
    /// the runs where both are present.
    pub delta: f64,
    pub n: usize,
}

/// Algorithm × shift-set matrix of mean accuracy changes relative to
/// `baseline`, pairing runs on (dataset, config, seed, pretrained, split).
/// Runs missing their baseline counterpart are skipped with a warning.
pub fn delta_vs_baseline(
    records: &[ResultRecord],
    baseline: &str,
) -> Result<Vec<DeltaCell>, AggregateError> {
    let records = sorted(records);
    let base: BTreeMap<_, f64> = records
        .iter()
        .filter(|r| r.algorithm == baseline)
        .map(|r| (r.cell(), r.accuracy))
        .collect();
    if base.is_empty() {
        return Err(AggregateError::MissingBaseline(baseline.to_string()));
    }
    // (algorithm, pretrained, shift set) -> (algorithm accuracies, paired deltas)
    type Groups<'a> = BTreeMap<(&'a str, bool, ShiftSet), (Vec<f64>, Vec<f64>)>;
    let mut groups: Groups = BTreeMap::new();
    let mut skipped = 0usize;
    for r in &records {
        let Some(&b) = base.get(&r.cell()) else {
            skipped += 1;
            continue;
        };
        let entry = groups
            .entry((r.algorithm.as_str(), r.pretrained, r.shift_set))
            .or_default();
        entry.0.push(r.accuracy);
        entry.1.push(b);
    }
    if skipped > 0 {
        log::warn!("{skipped} record(s) without a `{baseline}` counterpart were skipped");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(groups
        .into_iter()
        .map(
            |((algorithm, pretrained, shift_set), (acc, base))| DeltaCell {
                algorithm: algorithm.to_string(),
                pretrained,
                shift_set,
                delta: mean(&acc) - mean(&base),
                n: acc.len(),
            },
        )
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftMean {
    pub shift_set: ShiftSet,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Mean ± standard error per shift set, in canonical shift-set order; every
/// run counts equally.
pub fn shift_type_means(records: &[ResultRecord]) -> Vec<ShiftMean> {
    let mut groups: BTreeMap<ShiftSet, Vec<f64>> = BTreeMap::new();
    for r in sorted(records) {
        groups.entry(r.shift_set).or_default().push(r.accuracy);
    }
    groups
        .into_iter()
        .filter_map(|(shift_set, v)| {
            Summary::of(&v).map(|summary| ShiftMean { shift_set, summary })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountMean {
    pub shift_count: usize,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Mean accuracy per number of concurrent shifts (0 = UNIFORM).
pub fn difficulty_by_count(records: &[ResultRecord]) -> Result<Vec<CountMean>, AggregateError> {
    if records.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in sorted(records) {
        groups
            .entry(r.shift_set.len())
            .or_default()
            .push(r.accuracy);
    }
    Ok(groups
        .into_iter()
        .filter_map(|(shift_count, v)| {
            Summary::of(&v).map(|summary| CountMean {
                shift_count,
                summary,
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Scratch,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub algorithm: String,
    pub scratch: Summary,
    pub pretrained: Summary,
    /// Arm with the higher mean; scratch wins ties.
    pub better: Arm,
}

/// Side-by-side scratch and pretrained means per algorithm.
pub fn scratch_vs_pretrained(records: &[ResultRecord]) -> Result<Vec<PairedRow>, AggregateError> {
    let mut groups: BTreeMap<&str, [Vec<f64>; 2]> = BTreeMap::new();
    for r in sorted(records) {
        groups.entry(&r.algorithm).or_default()[usize::from(r.pretrained)].push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|(algorithm, [scratch, pretrained])| {
            let missing = |arm| AggregateError::MissingArm {
                algorithm: algorithm.to_string(),
                arm,
            };
            let scratch = Summary::of(&scratch).ok_or_else(|| missing("scratch"))?;
            let pretrained = Summary::of(&pretrained).ok_or_else(|| missing("pretrained"))?;
            let better = if pretrained.mean > scratch.mean {
                Arm::Pretrained
            } else {
                Arm::Scratch
            };
            Ok(PairedRow {
                algorithm: algorithm.to_string(),
                scratch,
                pretrained,
                better,
            })
        })
        .collect()
}

/// Plot data for a shift-set × algorithm heatmap of deltas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub baseline: String,
    pub rows: Vec<ShiftSet>,
    pub columns: Vec<String>,
    pub cells: Vec<HeatmapCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub row: ShiftSet,
    pub column: String,
    pub value: f64,
    pub label: String,
    pub n: usize,
}

fn column_name(algorithm: &str, pretrained: bool) -> String {
    if pretrained {
        format!("{algorithm} (pretrained)")
    } else {
        algorithm.to_string()
    }
}

pub fn heatmap(deltas: &[DeltaCell], baseline: &str) -> Heatmap {
    let rows: BTreeSet<ShiftSet> = deltas.iter().map(|d| d.shift_set).collect();
    let columns: BTreeSet<(&str, bool)> = deltas
        .iter()
        .map(|d| (d.algorithm.as_str(), d.pretrained))
        .collect();
    let mut cells: Vec<HeatmapCell> = deltas
        .iter()
        .map(|d| HeatmapCell {
            row: d.shift_set,
            column: column_name(&d.algorithm, d.pretrained),
            value: d.delta,
            label: format_delta(d.delta),
            n: d.n,
        })
        .collect();
    cells.sort_by(|a, b| (a.row, &a.column).cmp(&(b.row, &b.column)));
    Heatmap {
        baseline: baseline.to_string(),
        rows: rows.into_iter().collect(),
        columns: columns
            .into_iter()
            .map(|(a, p)| column_name(a, p))
            .collect(),
        cells,
    }
}

/// Files written by [`write_views`], relative to the output directory.
pub const SHIFT_MEANS_FILE: &str = "shift_type_means.csv";
pub const DIFFICULTY_FILE: &str = "difficulty_by_count.csv";
pub const DELTA_FILE: &str = "delta_vs_baseline.csv";
pub const HEATMAP_FILE: &str = "delta_heatmap.json";
pub const PAIRED_FILE: &str = "scratch_vs_pretrained.csv";
pub const VIEWS_FILE: &str = "views.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Views {
    pub shift_type_means: Vec<ShiftMean>,
    pub difficulty_by_count: Vec<CountMean>,
    pub delta_vs_baseline: Option<Vec<DeltaCell>>,
    pub scratch_vs_pretrained: Option<Vec<PairedRow>>,
}

/// Computes every view. The delta view needs `baseline`; the paired view is
/// produced only when pretrained records exist.
pub fn compute_views(
    records: &[ResultRecord],
    baseline: Option<&str>,
) -> Result<Views, AggregateError> {
    Ok(Views {
        shift_type_means: shift_type_means(records),
        difficulty_by_count: difficulty_by_count(records)?,
        delta_vs_baseline: baseline
            .map(|b| delta_vs_baseline(records, b))
            .transpose()?,
        scratch_vs_pretrained: if records.iter().any(|r| r.pretrained) {
            Some(scratch_vs_pretrained(records)?)
        } else {
            None
        },
    })
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), AggregateError> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the views as CSV files plus JSON plot data under `dir`.
pub fn write_views(
    views: &Views,
    baseline: Option<&str>,
    dir: &Path,
) -> Result<(), AggregateError> {
    fs::create_dir_all(dir)?;
    let summary_cols = |s: &Summary| {
        vec![
            s.mean.to_string(),
            s.dispersion.to_string(),
            s.n.to_string(),
        ]
    };
    write_csv(
        &dir.join(SHIFT_MEANS_FILE),
        &["shift_set", "mean", "dispersion", "n"],
        views.shift_type_means.iter().map(|m| {
            let mut row = vec![m.shift_set.to_string()];
            row.extend(summary_cols(&m.summary));
            row
        }),
    )?;
    write_csv(
        &dir.join(DIFFICULTY_FILE),
        &["shift_count", "mean", "dispersion", "n"],
        views.difficulty_by_count.iter().map(|m| {
            let mut row = vec![m.shift_count.to_string()];
            row.extend(summary_cols(&m.summary));
            row
        }),
    )?;
    if let (Some(deltas), Some(base)) = (&views.delta_vs_baseline, baseline) {
        write_csv(
            &dir.join(DELTA_FILE),
            &[
                "algorithm",
                "pretrained",
                "shift_set",
                "delta",
                "delta_points",
                "n",
            ],
            deltas.iter().map(|d| {
                vec![
                    d.algorithm.clone(),
                    d.pretrained.to_string(),
                    d.shift_set.to_string(),
                    d.delta.to_string(),
                    format_delta(d.delta),
                    d.n.to_string(),
                ]
            }),
        )?;
        let json = serde_json::to_string_pretty(&heatmap(deltas, base))?;
        fs::write(dir.join(HEATMAP_FILE), json + "\n")?;
    }
    if let Some(pairs) = &views.scratch_vs_pretrained {
        write_csv(
            &dir.join(PAIRED_FILE),
            &[
                "algorithm",
                "scratch_mean",
                "scratch_dispersion",
                "pretrained_mean",
                "pretrained_dispersion",
                "better",
            ],
            pairs.iter().map(|p| {
                vec![
                    p.algorithm.clone(),
                    p.scratch.mean.to_string(),
                    p.scratch.dispersion.to_string(),
                    p.pretrained.mean.to_string(),
                    p.pretrained.dispersion.to_string(),
                    match p.better {
                        Arm::Scratch => "scratch".into(),
                        Arm::Pretrained => "pretrained".into(),
                    },
                ]
            }),
        )?;
    }
    let json = serde_json::to_string_pretty(views)?;
    fs::write(dir.join(VIEWS_FILE), json + "\n")?;
    Ok(())
}
