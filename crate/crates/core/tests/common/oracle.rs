//! Brute-force nested-loop reference implementations of the aggregation
//! views, plus a randomized record generator.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use shiftbench::aggregate::ResultRecord;
use shiftbench::shiftgen::ShiftSet;

pub fn mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

pub fn sem(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let mut ss = 0.0;
    for x in v {
        ss += (x - m) * (x - m);
    }
    (ss / (v.len() - 1) as f64).sqrt() / (v.len() as f64).sqrt()
}

/// (algorithm, pretrained, shift set, delta, n) for every triple with at
/// least one paired run.
pub fn delta(
    records: &[ResultRecord],
    baseline: &str,
) -> Vec<(String, bool, ShiftSet, f64, usize)> {
    let mut out = Vec::new();
    let mut done: Vec<(String, bool, ShiftSet)> = Vec::new();
    for r in records {
        let key = (r.algorithm.clone(), r.pretrained, r.shift_set);
        if done.contains(&key) {
            continue;
        }
        done.push(key.clone());
        let (mut acc, mut base) = (Vec::new(), Vec::new());
        for a in records {
            if (a.algorithm.clone(), a.pretrained, a.shift_set) != key {
                continue;
            }
            for b in records {
                if b.algorithm == baseline
                    && b.dataset == a.dataset
                    && b.config_id == a.config_id
                    && b.seed == a.seed
                    && b.pretrained == a.pretrained
                    && b.split == a.split
                {
                    acc.push(a.accuracy);
                    base.push(b.accuracy);
                }
            }
        }
        if !acc.is_empty() {
            out.push((key.0, key.1, key.2, mean(&acc) - mean(&base), acc.len()));
        }
    }
    out
}

/// (shift set, mean, sem, n) in canonical order.
pub fn shift_means(records: &[ResultRecord]) -> Vec<(ShiftSet, f64, f64, usize)> {
    let mut out = Vec::new();
    for set in ShiftSet::CANONICAL {
        let mut v = Vec::new();
        for r in records {
            if r.shift_set == set {
                v.push(r.accuracy);
            }
        }
        if !v.is_empty() {
            out.push((set, mean(&v), sem(&v), v.len()));
        }
    }
    out
}

/// (shift count, mean, sem, n) for counts 0..=3.
pub fn by_count(records: &[ResultRecord]) -> Vec<(usize, f64, f64, usize)> {
    let mut out = Vec::new();
    for k in 0..=3 {
        let mut v = Vec::new();
        for r in records {
            if r.shift_set.len() == k {
                v.push(r.accuracy);
            }
        }
        if !v.is_empty() {
            out.push((k, mean(&v), sem(&v), v.len()));
        }
    }
    out
}

/// (algorithm, scratch mean, pretrained mean, pretrained is better), sorted
/// by algorithm.
pub fn paired(records: &[ResultRecord]) -> Vec<(String, f64, f64, bool)> {
    let mut names: Vec<String> = Vec::new();
    for r in records {
        if !names.contains(&r.algorithm) {
            names.push(r.algorithm.clone());
        }
    }
    names.sort();
    let mut out = Vec::new();
    for name in names {
        let (mut s, mut p) = (Vec::new(), Vec::new());
        for r in records {
            if r.algorithm == name {
                if r.pretrained {
                    p.push(r.accuracy);
                } else {
                    s.push(r.accuracy);
                }
            }
        }
        let (ms, mp) = (mean(&s), mean(&p));
        out.push((name, ms, mp, mp > ms));
    }
    out
}

/// Up to `max` unique records over a grid of datasets, configs, algorithms,
/// arms and seeds; roughly `drop_percent` of cells are missing.
pub fn random_records(seed: u64, max: usize, drop_percent: u64) -> Vec<ResultRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let algorithms = ["ResNet18", "RandomAug", "GroupDRO", "SagNet"];
    let mut out = Vec::new();
    for dataset in ["dsprites", "shapes3d"] {
        for (ci, set) in ShiftSet::CANONICAL.iter().enumerate() {
            for variant in 0..3 {
                for algorithm in algorithms {
                    for pretrained in [false, true] {
                        for s in 0..3u64 {
                            if rng.next_u64() % 100 < drop_percent {
                                continue;
                            }
                            out.push(ResultRecord {
                                dataset: dataset.into(),
                                config_id: format!("{dataset}/{set}/v{ci}{variant}/{s}"),
                                shift_set: *set,
                                attributes: format!("v{variant}"),
                                algorithm: algorithm.into(),
                                pretrained,
                                seed: s,
                                split: "test".into(),
                                accuracy: (rng.next_u64() % 1_000_001) as f64 / 1_000_000.0 * 0.8,
                            });
                        }
                    }
                }
            }
        }
    }
    out.truncate(max);
    out
}
