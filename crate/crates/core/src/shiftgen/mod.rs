//! Shift configurations and deterministic split generation.
//!
//! A [`ShiftConfig`] assigns a set of distinct shift kinds to distinct shift
//! attributes. [`enumerate_configs`] lists every configuration for a schema,
//! [`compose_source_weights`] turns one into a source distribution over full
//! attribute combinations, and [`sample_split`] realizes it as a
//! [`SplitManifest`].

mod manifest;
mod sample;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::schema::AttributeSchema;

pub use manifest::{CellQuota, SplitCounts, SplitManifest};
pub use sample::{sample_split, source_quotas};
pub use weights::{
    compose_source_weights, ldd_weights, sc_weights, uds_mask, uds_weights, FactorMatrix,
    WeightTensor,
};

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error(
        "spurious correlation needs label cardinality {label} <= attribute cardinality {attribute}"
    )]
    CardinalityMismatch { label: usize, attribute: usize },
    #[error("cannot hold out {holdout} of {cardinality} values")]
    HoldoutTooLarge { holdout: usize, cardinality: usize },
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("invalid shift config: {0}")]
    InvalidConfig(String),
    #[error("cell {cell} needs {needed} instances but only {available} are available")]
    InsufficientPool {
        cell: String,
        needed: usize,
        available: usize,
    },
    #[error("cell {cell} has no instances left for the test split")]
    EmptyTestCell { cell: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShiftKind {
    #[serde(rename = "SC")]
    SpuriousCorrelation,
    #[serde(rename = "LDD")]
    LowDataDrift,
    #[serde(rename = "UDS")]
    UnseenDataShift,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 3] = [
        ShiftKind::SpuriousCorrelation,
        ShiftKind::LowDataDrift,
        ShiftKind::UnseenDataShift,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ShiftKind::SpuriousCorrelation => "SC",
            ShiftKind::LowDataDrift => "LDD",
            ShiftKind::UnseenDataShift => "UDS",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// A subset of shift kinds. The empty set is the unshifted control (`UNIFORM`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ShiftSet(u8);

impl ShiftSet {
    pub const UNIFORM: ShiftSet = ShiftSet(0);

    /// All eight shift sets in reporting order:
    /// UNIFORM, SC, LDD, UDS, SC+LDD, SC+UDS, LDD+UDS, SC+LDD+UDS.
    pub const CANONICAL: [ShiftSet; 8] = [
        ShiftSet(0),
        ShiftSet(0b001),
        ShiftSet(0b010),
        ShiftSet(0b100),
        ShiftSet(0b011),
        ShiftSet(0b101),
        ShiftSet(0b110),
        ShiftSet(0b111),
    ];

    pub fn from_kinds(kinds: impl IntoIterator<Item = ShiftKind>) -> Self {
        ShiftSet(kinds.into_iter().fold(0, |acc, k| acc | k.bit()))
    }

    pub fn contains(self, kind: ShiftKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn kinds(self) -> impl Iterator<Item = ShiftKind> {
        ShiftKind::ALL
            .into_iter()
            .filter(move |k| self.contains(*k))
    }

    /// Position in [`CANONICAL`](Self::CANONICAL).
    pub fn rank(self) -> usize {
        Self::CANONICAL
            .iter()
            .position(|&s| s == self)
            .unwrap_or(usize::MAX)
    }
}

impl PartialOrd for ShiftSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ShiftSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for ShiftSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("UNIFORM");
        }
        let tokens: Vec<_> = self.kinds().map(ShiftKind::token).collect();
        f.write_str(&tokens.join("+"))
    }
}

impl FromStr for ShiftSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "UNIFORM" {
            return Ok(ShiftSet::UNIFORM);
        }
        let mut set = ShiftSet::UNIFORM;
        let mut last_rank = None;
        for tok in s.split('+') {
            let kind = ShiftKind::ALL
                .into_iter()
                .find(|k| k.token() == tok)
                .ok_or_else(|| format!("unknown shift token `{tok}` in `{s}`"))?;
            if last_rank.is_some_and(|r| r >= kind as u8) {
                return Err(format!(
                    "shift set `{s}` is not in canonical SC+LDD+UDS order"
                ));
            }
            last_rank = Some(kind as u8);
            set.0 |= kind.bit();
        }
        Ok(set)
    }
}

impl Serialize for ShiftSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ShiftSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of test instances drawn per full combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestSize {
    /// The minimum number of instances left over in any cell after source sampling.
    #[default]
    Auto,
    PerCell(usize),
}

impl fmt::Display for TestSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestSize::Auto => f.write_str("auto"),
            TestSize::PerCell(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for TestSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(TestSize::Auto);
        }
        match s.parse::<usize>() {
            Ok(m) if m > 0 => Ok(TestSize::PerCell(m)),
            _ => Err(format!(
                "test size must be `auto` or a positive integer, got `{s}`"
            )),
        }
    }
}

impl Serialize for TestSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TestSize::Auto => s.serialize_str("auto"),
            TestSize::PerCell(m) => s.serialize_u64(*m as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TestSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("test size must be positive")),
            Raw::Count(m) => Ok(TestSize::PerCell(m)),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub source_size: usize,
    pub val_fraction: f64,
    pub counterexample_fraction: f64,
    pub ldd_decay: f64,
    pub ldd_label_skew: f64,
    pub uds_holdout: usize,
    pub test_per_cell: TestSize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            source_size: 100,
            val_fraction: 0.2,
            counterexample_fraction: 0.01,
            ldd_decay: 0.5,
            ldd_label_skew: 4.0,
            uds_holdout: 1,
            test_per_cell: TestSize::Auto,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ShiftError> {
        let bad = |msg: &str| Err(ShiftError::InvalidParams(msg.to_string()));
        if self.source_size == 0 {
            return bad("source_size must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.counterexample_fraction) {
            return bad("counterexample_fraction must lie in [0, 1)");
        }
        if !(self.ldd_decay > 0.0 && self.ldd_decay <= 1.0) {
            return bad("ldd_decay must lie in (0, 1]");
        }
        if !(self.ldd_label_skew >= 1.0 && self.ldd_label_skew.is_finite()) {
            return bad("ldd_label_skew must be >= 1");
        }
        if self.uds_holdout == 0 {
            return bad("uds_holdout must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftAssignment {
    pub kind: ShiftKind,
    pub attribute: String,
}

/// One (source, target) pair specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub config_id: String,
    pub dataset: String,
    pub assignments: Vec<ShiftAssignment>,
    pub params: SamplingParams,
    pub seed: u64,
}

impl ShiftConfig {
    pub fn new(
        schema: &AttributeSchema,
        assignments: Vec<ShiftAssignment>,
        params: SamplingParams,
        seed: u64,
    ) -> Self {
        let config_id = config_id(&schema.dataset, &assignments, seed);
        Self {
            config_id,
            dataset: schema.dataset.clone(),
            assignments,
            params,
            seed,
        }
    }

    pub fn shift_set(&self) -> ShiftSet {
        ShiftSet::from_kinds(self.assignments.iter().map(|a| a.kind))
    }

    pub fn attribute_for(&self, kind: ShiftKind) -> Option<&str> {
        self.assignments
            .iter()
            .find(|a| a.kind == kind)
            .map(|a| a.attribute.as_str())
    }

    /// Assigned attribute names joined with `+`, or `-` for the control.
    pub fn attributes_label(&self) -> String {
        if self.assignments.is_empty() {
            "-".into()
        } else {
            self.assignments
                .iter()
                .map(|a| a.attribute.as_str())
                .collect::<Vec<_>>()
                .join("+")
        }
    }

    pub fn validate(&self, schema: &AttributeSchema) -> Result<(), ShiftError> {
        self.params.validate()?;
        if self.dataset != schema.dataset {
            return Err(ShiftError::InvalidConfig(format!(
                "config targets dataset `{}` but schema is `{}`",
                self.dataset, schema.dataset
            )));
        }
        if self.assignments.len() > 3 {
            return Err(ShiftError::InvalidConfig(
                "at most three shifts per config".into(),
            ));
        }
        for (i, a) in self.assignments.iter().enumerate() {
            let pos = schema.position(&a.attribute).ok_or_else(|| {
                ShiftError::InvalidConfig(format!("unknown attribute `{}`", a.attribute))
            })?;
            if pos == 0 {
                return Err(ShiftError::InvalidConfig(format!(
                    "`{}` is the label and cannot carry a shift",
                    a.attribute
                )));
            }
            for b in &self.assignments[..i] {
                if b.kind == a.kind {
                    return Err(ShiftError::InvalidConfig(format!(
                        "{} assigned twice",
                        a.kind
                    )));
                }
                if b.attribute == a.attribute {
                    return Err(ShiftError::InvalidConfig(format!(
                        "attribute `{}` carries two shifts",
                        a.attribute
                    )));
                }
            }
            let card = schema.attribute(pos).cardinality();
            match a.kind {
                ShiftKind::SpuriousCorrelation if schema.label.cardinality() > card => {
                    return Err(ShiftError::CardinalityMismatch {
                        label: schema.label.cardinality(),
                        attribute: card,
                    })
                }
                ShiftKind::UnseenDataShift if self.params.uds_holdout >= card => {
                    return Err(ShiftError::HoldoutTooLarge {
                        holdout: self.params.uds_holdout,
                        cardinality: card,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn id_token(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn config_id(dataset: &str, assignments: &[ShiftAssignment], seed: u64) -> String {
    let kinds = ShiftSet::from_kinds(assignments.iter().map(|a| a.kind));
    let attrs = if assignments.is_empty() {
        "-".to_string()
    } else {
        assignments
            .iter()
            .map(|a| id_token(&a.attribute))
            .collect::<Vec<_>>()
            .join("+")
    };
    format!("{}/{kinds}/{attrs}/{seed}", id_token(dataset))
}

/// Every shift configuration of a schema for one seed.
///
/// Order: UNIFORM; each single kind over every attribute; each kind pair over
/// every ordered attribute pair; the kind triple over every ordered attribute
/// triple. Within an assignment list kinds follow SC, LDD, UDS order.
pub fn enumerate_configs(
    schema: &AttributeSchema,
    params: &SamplingParams,
    seed: u64,
) -> Vec<ShiftConfig> {
    let attrs: Vec<&str> = schema
        .shift_attributes
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    let mut out = vec![ShiftConfig::new(schema, Vec::new(), params.clone(), seed)];
    for set in ShiftSet::CANONICAL.iter().filter(|s| !s.is_empty()) {
        let kinds: Vec<ShiftKind> = set.kinds().collect();
        for picks in ordered_picks(attrs.len(), kinds.len()) {
            let assignments = kinds
                .iter()
                .zip(&picks)
                .map(|(&kind, &a)| ShiftAssignment {
                    kind,
                    attribute: attrs[a].to_string(),
                })
                .collect();
            out.push(ShiftConfig::new(schema, assignments, params.clone(), seed));
        }
    }
    out
}

/// Ordered selections of `k` distinct items from `n`, lexicographic.
fn ordered_picks(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !cur.contains(&i) {
                cur.push(i);
                rec(n, k, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}
