use super::{ShiftConfig, ShiftError, ShiftKind};
use crate::schema::AttributeSchema;

/// Normalized weights over (label value, attribute value) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    pub labels: usize,
    pub values: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    fn from_fn(labels: usize, values: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data: Vec<f64> = (0..labels * values)
            .map(|k| f(k / values, k % values))
            .collect();
        let sum: f64 = data.iter().sum();
        data.iter_mut().for_each(|w| *w /= sum);
        Self {
            labels,
            values,
            data,
        }
    }

    pub fn get(&self, label: usize, value: usize) -> f64 {
        self.data[label * self.values + value]
    }

    pub fn row_sum(&self, label: usize) -> f64 {
        self.data[label * self.values..(label + 1) * self.values]
            .iter()
            .sum()
    }

    pub fn column_sum(&self, value: usize) -> f64 {
        (0..self.labels).map(|l| self.get(l, value)).sum()
    }
}

/// Spurious-correlation weights: label `i` is paired with attribute value `i`.
/// Paired cells share `1 - eps`, every other cell shares `eps`.
pub fn sc_weights(labels: usize, values: usize, eps: f64) -> Result<FactorMatrix, ShiftError> {
    if labels > values {
        return Err(ShiftError::CardinalityMismatch {
            label: labels,
            attribute: values,
        });
    }
    let on = (1.0 - eps) / labels as f64;
    let off_cells = labels * values - labels;
    let off = if off_cells == 0 {
        0.0
    } else {
        eps / off_cells as f64
    };
    Ok(FactorMatrix::from_fn(labels, values, |i, j| {
        if i == j {
            on
        } else {
            off
        }
    }))
}

/// Low-data-drift weights: value `j` has marginal mass proportional to
/// `decay^j`, and within value `j` the label `j mod labels` is `skew` times as
/// likely as each other label.
pub fn ldd_weights(labels: usize, values: usize, decay: f64, skew: f64) -> FactorMatrix {
    let denom = skew + (labels - 1) as f64;
    FactorMatrix::from_fn(labels, values, |i, j| {
        let marginal = decay.powi(j as i32);
        let conditional = if i == j % labels { skew } else { 1.0 } / denom;
        marginal * conditional
    })
}

/// Held-out value indices for an unseen-data shift: the `holdout` highest ones.
pub fn uds_mask(values: usize, holdout: usize) -> Result<Vec<usize>, ShiftError> {
    if holdout == 0 || holdout >= values {
        return Err(ShiftError::HoldoutTooLarge {
            holdout,
            cardinality: values,
        });
    }
    Ok((values - holdout..values).collect())
}

/// Uniform over the retained values, zero on the held-out ones.
pub fn uds_weights(
    labels: usize,
    values: usize,
    holdout: usize,
) -> Result<FactorMatrix, ShiftError> {
    let mask = uds_mask(values, holdout)?;
    Ok(FactorMatrix::from_fn(labels, values, |_, j| {
        if mask.contains(&j) {
            0.0
        } else {
            1.0
        }
    }))
}

/// Normalized weights over every full attribute combination, row-major in
/// canonical attribute order (label first).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl WeightTensor {
    pub fn get(&self, flat: usize) -> f64 {
        self.data[flat]
    }
}

/// Product of the per-shift factor matrices, each evaluated at
/// (label, assigned attribute); unassigned attributes are uniform.
pub fn compose_source_weights(
    config: &ShiftConfig,
    schema: &AttributeSchema,
) -> Result<WeightTensor, ShiftError> {
    config.validate(schema)?;
    let labels = schema.label.cardinality();
    let p = &config.params;
    let mut factors = Vec::with_capacity(config.assignments.len());
    for a in &config.assignments {
        let pos = schema
            .position(&a.attribute)
            .expect("validated config references schema attributes");
        let values = schema.attribute(pos).cardinality();
        let m = match a.kind {
            ShiftKind::SpuriousCorrelation => {
                sc_weights(labels, values, p.counterexample_fraction)?
            }
            ShiftKind::LowDataDrift => ldd_weights(labels, values, p.ldd_decay, p.ldd_label_skew),
            ShiftKind::UnseenDataShift => uds_weights(labels, values, p.uds_holdout)?,
        };
        factors.push((pos, m));
    }
    let dims = schema.cardinalities();
    let mut data: Vec<f64> = (0..schema.cell_count())
        .map(|flat| {
            let combo = schema.combination(flat);
            factors
                .iter()
                .map(|(pos, m)| m.get(combo[0], combo[*pos]))
                .product()
        })
        .collect();
    let sum: f64 = data.iter().sum();
    data.iter_mut().for_each(|w| *w /= sum);
    Ok(WeightTensor { dims, data })
}
