//! Largest-remainder (Hamilton) apportionment.

/// Remainders closer than this are treated as tied and resolved by index.
const TIE_EPS: f64 = 1e-9;

/// Splits `total` integer units over `weights` proportionally.
///
/// Each share gets the floor of its exact quota; the leftover units go to the
/// largest fractional remainders, ties broken by lowest index. Zero weights
/// never receive units. The result always sums to `total` when any weight is
/// positive.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut out = vec![0usize; weights.len()];
    if total == 0 || sum <= 0.0 {
        return out;
    }
    let mut remainders = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let exact = total as f64 * w / sum;
        // Snap values within rounding noise of an integer before flooring.
        let floor = (exact + TIE_EPS).floor();
        out[i] = floor as usize;
        assigned += out[i];
        remainders.push((i, (exact - floor).max(0.0)));
    }
    remainders.sort_by(|a, b| {
        if (a.1 - b.1).abs() <= TIE_EPS {
            a.0.cmp(&b.0)
        } else {
            b.1.total_cmp(&a.1)
        }
    });
    let mut left = total.saturating_sub(assigned);
    for &(i, _) in remainders.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}
