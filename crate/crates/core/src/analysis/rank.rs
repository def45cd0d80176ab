use super::AnalysisError;
use crate::numeric::pearson;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub n: usize,
    pub spearman: f64,
    /// Tie-corrected τ-b.
    pub kendall: f64,
    /// Distance correlation of the percentile ranks.
    pub dcor: f64,
    pub top1_retention: f64,
    pub top10_retention: f64,
    pub bottom1_retention: f64,
}

/// Mid-ranks scaled to `[0, 1]`.
pub fn mid_percentile_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = mid;
        }
        i = j + 1;
    }
    let d = (n.max(2) - 1) as f64;
    r.iter().map(|x| x / d).collect()
}

/// Counts discordant pairs while merge-sorting `v` in place.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tied pairs within runs of equal values in a sorted slice.
fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut t = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let c = (j - i + 1) as u64;
        t += c * (c - 1) / 2;
        i = j + 1;
    }
    t
}

/// Kendall τ-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let n1 = tied_pairs(&xs);
    let mut n3 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] && y[idx[j + 1]] == y[idx[i]] {
            j += 1;
        }
        let c = (j - i + 1) as u64;
        n3 += c * (c - 1) / 2;
        i = j + 1;
    }
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = Vec::with_capacity(n);
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

fn centred_distances(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut d: Vec<f64> = (0..n * n).map(|k| (v[k / n] - v[k % n]).abs()).collect();
    let row: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let all = row.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += all - row[i] - row[j];
        }
    }
    d
}

/// Sample distance correlation from double-centred distance matrices.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> f64 {
    let a = centred_distances(x);
    let b = centred_distances(y);
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let (xy, xx, yy) = (dot(&a, &b), dot(&a, &a), dot(&b, &b));
    if xx <= 0.0 || yy <= 0.0 {
        return 0.0;
    }
    (xy.max(0.0) / (xx * yy).sqrt()).sqrt()
}

/// Indices of the `k` largest values, ties broken by position.
fn top_k(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Share of the baseline's top `q` fraction that stays in the adjusted top.
fn retention(base: &[f64], adj: &[f64], q: f64) -> f64 {
    let k = ((q * base.len() as f64).ceil() as usize).max(1);
    let b = top_k(base, k);
    let a = top_k(adj, k);
    b.iter().filter(|i| a.contains(i)).count() as f64 / k as f64
}

pub fn rank_compare(baseline: &[f64], adjusted: &[f64]) -> Result<RankReport, AnalysisError> {
    if baseline.len() != adjusted.len() {
        return Err(AnalysisError::LengthMismatch { left: baseline.len(), right: adjusted.len() });
    }
    let n = baseline.len();
    if n < 5 {
        return Err(AnalysisError::TooFew { need: 5, got: n });
    }
    if baseline.iter().chain(adjusted).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let rb = mid_percentile_ranks(baseline);
    let ra = mid_percentile_ranks(adjusted);
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
    Ok(RankReport {
        n,
        spearman: pearson(&rb, &ra),
        kendall: kendall_tau_b(baseline, adjusted),
        dcor: distance_correlation(&rb, &ra),
        top1_retention: retention(&rb, &ra, 0.01),
        top10_retention: retention(&rb, &ra, 0.10),
        bottom1_retention: retention(&neg(&rb), &neg(&ra), 0.01),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
                if x[i] == x[j] && y[i] == y[j] {
                } else if x[i] == x[j] {
                    tx += 1.0;
                } else if y[i] == y[j] {
                    ty += 1.0;
                } else if s > 0.0 {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
    }

    #[test]
    fn identity_and_reversal() {
        let v: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = rank_compare(&v, &v).unwrap();
        assert_eq!((r.spearman, r.kendall), (1.0, 1.0));
        assert!((r.dcor - 1.0).abs() < 1e-12);
        assert_eq!((r.top1_retention, r.top10_retention, r.bottom1_retention), (1.0, 1.0, 1.0));
        let rev: Vec<f64> = v.iter().map(|x| -x).collect();
        let r = rank_compare(&v, &rev).unwrap();
        assert!((r.spearman + 1.0).abs() < 1e-12);
        assert_eq!(r.kendall, -1.0);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let x = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0];
        let y = [2.0, 1.0, 3.0, 3.0, 4.0, 4.0];
        assert!((kendall_tau_b(&x, &y) - brute_tau_b(&x, &y)).abs() < 1e-15);
    }

    #[test]
    fn dcor_frozen_value() {
        // Reference: V-statistic form mean(AB) + mean(A)mean(B) − 2 mean(rowA·rowB).
        let x = [0.1, 0.5, 0.2, 0.9, 0.4, 0.7];
        let y = [0.3, 0.2, 0.8, 0.6, 0.1, 0.9];
        let want = 0.559932775030531;
        assert!((distance_correlation(&x, &y) - want).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(rank_compare(&[1.0; 5], &[1.0; 4]), Err(AnalysisError::LengthMismatch { .. })));
        assert!(matches!(rank_compare(&[1.0; 4], &[1.0; 4]), Err(AnalysisError::TooFew { .. })));
    }

    proptest! {
        #[test]
        fn invariant_to_monotone_transforms(v in proptest::collection::vec(-5.0f64..5.0, 8..40), w in proptest::collection::vec(-5.0f64..5.0, 40)) {
            let w = &w[..v.len()];
            let a = rank_compare(&v, w).unwrap();
            let tv: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let tw: Vec<f64> = w.iter().map(|x| x * x * x + 2.0 * x).collect();
            let b = rank_compare(&tv, &tw).unwrap();
            prop_assert!((a.spearman - b.spearman).abs() < 1e-12);
            prop_assert!((a.kendall - b.kendall).abs() < 1e-12);
            prop_assert!((a.dcor - b.dcor).abs() < 1e-12);
            prop_assert_eq!(a.top10_retention, b.top10_retention);
        }

        #[test]
        fn statistics_are_bounded(v in proptest::collection::vec(0u8..6, 6..30), w in proptest::collection::vec(0u8..6, 30)) {
            let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
            let y: Vec<f64> = w[..x.len()].iter().map(|&a| a as f64).collect();
            if let Ok(r) = rank_compare(&x, &y) {
                let kb = brute_tau_b(&x, &y);
                prop_assert!(r.kendall.is_nan() && kb.is_nan() || (r.kendall - kb).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&r.dcor));
                for t in [r.top1_retention, r.top10_retention, r.bottom1_retention] {
                    prop_assert!((0.0..=1.0).contains(&t));
                }
            }
        }
    }
}
