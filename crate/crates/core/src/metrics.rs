//! Forecasting and detection metrics.
//!
//! Undefined quantities follow fixed conventions and are flagged rather than
//! propagated as NaN: precision, recall, F1 and FPR are 0 when their
//! denominator is 0; PCC of a constant sequence is 0; AUC with a single
//! class is 0.5; MAPE skips points with `|actual| < 1e-8`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::stats;

pub const MAPE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mse: f64,
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
    /// Points left out of MAPE because `|actual| < MAPE_EPSILON`.
    pub mape_excluded: usize,
    pub pcc: f64,
    pub pcc_degenerate: bool,
    pub euclid: f64,
    pub dtw: f64,
    pub cbd: f64,
    pub r2: f64,
    /// The actual series is constant, so R² has no variance to explain.
    pub r2_degenerate: bool,
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Dynamic time warping distance with `|a_i - b_j|` local cost, steps
/// (1,0), (0,1), (1,1) and no window constraint.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let mut prev = vec![f64::INFINITY; b.len() + 1];
    let mut curr = vec![f64::INFINITY; b.len() + 1];
    prev[0] = 0.0;
    for &x in a {
        curr[0] = f64::INFINITY;
        for (j, &y) in b.iter().enumerate() {
            curr[j + 1] = (x - y).abs() + prev[j].min(prev[j + 1]).min(curr[j]);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[b.len()])
}

pub fn forecast_metrics(actual: &[f64], predicted: &[f64]) -> Result<ForecastMetrics> {
    ensure_same_len(actual.len(), predicted.len())?;
    let n = actual.len();
    if n < 2 {
        return Err(Error::InsufficientData { required: 2, actual: n });
    }
    let errors: Vec<f64> = actual.iter().zip(predicted).map(|(a, p)| a - p).collect();
    let sse: f64 = errors.iter().map(|e| e * e).sum();
    let mse = sse / n as f64;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n as f64;

    let (mut ape_sum, mut ape_count) = (0.0, 0usize);
    for (a, e) in actual.iter().zip(&errors) {
        if a.abs() >= MAPE_EPSILON {
            ape_sum += (e / a).abs();
            ape_count += 1;
        }
    }
    let mape = if ape_count == 0 { 0.0 } else { 100.0 * ape_sum / ape_count as f64 };

    let pcc = pearson(actual, predicted);
    let mean_actual = stats::mean(actual);
    let sst: f64 = actual.iter().map(|a| (a - mean_actual) * (a - mean_actual)).sum();
    let (r2, r2_degenerate) = match (sst > 0.0, sse == 0.0) {
        (true, _) => (1.0 - sse / sst, false),
        (false, true) => (1.0, true),
        (false, false) => (0.0, true),
    };
    let pcc_value = pcc.unwrap_or(0.0);
    Ok(ForecastMetrics {
        mae,
        rmse: mse.sqrt(),
        mse,
        mape,
        mape_excluded: n - ape_count,
        pcc: pcc_value,
        pcc_degenerate: pcc.is_none(),
        euclid: sse.sqrt(),
        dtw: dtw_distance(actual, predicted)?,
        cbd: 1.0 - pcc_value,
        r2,
        r2_degenerate,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionFlags {
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
    pub fpr_undefined: bool,
    pub auc_single_class: bool,
}

impl DetectionFlags {
    pub fn any(&self) -> bool {
        self.precision_undefined || self.recall_undefined || self.f1_undefined || self.fpr_undefined || self.auc_single_class
    }

    /// Semicolon-separated flag names, empty when nothing is flagged.
    pub fn describe(&self) -> String {
        [
            (self.precision_undefined, "precision_undefined"),
            (self.recall_undefined, "recall_undefined"),
            (self.f1_undefined, "f1_undefined"),
            (self.fpr_undefined, "fpr_undefined"),
            (self.auc_single_class, "auc_single_class"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect::<Vec<_>>()
        .join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub fpr: f64,
    pub auc: f64,
    pub flags: DetectionFlags,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Mann-Whitney AUC: the probability that a random positive scores above a
/// random negative, ties counting one half. `None` with a single class.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<Option<f64>> {
    ensure_same_len(scores.len(), truth.len())?;
    let positives = truth.iter().filter(|t| **t).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]].total_cmp(&scores[order[start]]).is_eq() {
            end += 1;
        }
        let average_rank = (start + 1 + end) as f64 / 2.0;
        let tied_positives = order[start..end].iter().filter(|&&i| truth[i]).count();
        rank_sum += average_rank * tied_positives as f64;
        start = end;
    }
    let (p, q) = (positives as f64, negatives as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(Some(u / (p * q)))
}

pub fn detection_metrics(pred: &[bool], truth: &[bool], scores: &[f64]) -> Result<DetectionMetrics> {
    ensure_same_len(pred.len(), truth.len())?;
    ensure_same_len(pred.len(), scores.len())?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let (fpr, fpr_undefined) = ratio(fp, fp + tn);
    let (f1, f1_undefined) = ratio(2 * tp, 2 * tp + fp + fn_);
    let (accuracy, _) = ratio(tp + tn, pred.len());
    let auc = roc_auc(scores, truth)?;
    Ok(DetectionMetrics {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        f1,
        accuracy,
        fpr,
        auc: auc.unwrap_or(0.5),
        flags: DetectionFlags {
            precision_undefined,
            recall_undefined,
            f1_undefined,
            fpr_undefined,
            auc_single_class: auc.is_none(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Minimum over every monotone alignment path, by exhaustive recursion.
    fn dtw_brute(a: &[f64], b: &[f64]) -> f64 {
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let here = (a[i] - b[j]).abs();
            if i == a.len() - 1 && j == b.len() - 1 {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(walk(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(walk(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(walk(a, b, i + 1, j + 1));
            }
            here + best
        }
        walk(a, b, 0, 0)
    }

    #[test]
    fn perfect_forecast() {
        let m = forecast_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mae, m.rmse, m.pcc, m.r2, m.dtw, m.cbd), (0.0, 0.0, 1.0, 1.0, 0.0, 0.0));
        assert_eq!(m.mape, 0.0);
    }

    #[test]
    fn offset_forecast() {
        let m = forecast_metrics(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((m.mae, m.rmse), (1.0, 1.0));
        assert!(close(m.euclid, 2f64.sqrt(), 1e-15));
        assert_eq!(m.mape_excluded, 2);
        assert!(m.pcc_degenerate && m.r2_degenerate);
        assert_eq!((m.pcc, m.cbd, m.r2), (0.0, 1.0, 0.0));
    }

    #[test]
    fn hand_computed_metrics() {
        let m = forecast_metrics(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.mse, 1.5);
        assert!(close(m.rmse, 1.224744871391589, 1e-12));
        assert!(close(m.r2, -0.2, 1e-12));
        // |e|/|a| = 1, 0, 1/3, 1/2
        assert!(close(m.mape, 100.0 * (1.0 + 1.0 / 3.0 + 0.5) / 4.0, 1e-12));
        assert!(m.pcc_degenerate);
        assert!(forecast_metrics(&[1.0], &[1.0]).is_err());
        assert!(forecast_metrics(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_exact_forecast_has_perfect_r2() {
        let m = forecast_metrics(&[5.0; 10], &[5.0; 10]).unwrap();
        assert_eq!((m.r2, m.mae, m.rmse), (1.0, 0.0, 0.0));
        assert!(m.r2_degenerate && m.pcc_degenerate);
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw_distance(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(dtw_brute(&[0.0, 0.0], &[1.0, 1.0]), 2.0);
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        assert_eq!(dtw_distance(&a, &b).unwrap(), 0.0);
        assert_eq!(dtw_brute(&a, &b), 0.0);
        assert!(dtw_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn detection_counts() {
        let m = detection_metrics(&[true, false, true, false], &[true, false, false, false], &[0.9, 0.1, 0.8, 0.2])
            .unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 2, 0));
        assert_eq!((m.precision, m.recall), (0.5, 1.0));
        assert!(close(m.f1, 2.0 / 3.0, 1e-15));
        assert_eq!(m.accuracy, 0.75);
        assert!(close(m.fpr, 1.0 / 3.0, 1e-15));
        assert_eq!(m.auc, 1.0);
        assert!(!m.flags.any());
        assert_eq!(m.flags.describe(), "");
    }

    #[test]
    fn perfect_detection() {
        let truth = [false, true, true, false, false];
        let m = detection_metrics(&truth, &truth, &[0.0; 5]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy, m.fpr), (1.0, 1.0, 1.0, 1.0, 0.0));
        assert_eq!(m.auc, 0.5);
    }

    #[test]
    fn no_anomaly_dataset_convention() {
        let m = detection_metrics(&[true, false, false, true], &[false; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!((m.recall, m.f1, m.fpr, m.auc), (0.0, 0.0, 0.5, 0.5));
        assert!(m.flags.recall_undefined && m.flags.auc_single_class && !m.flags.precision_undefined);
        assert_eq!(m.flags.describe(), "recall_undefined;auc_single_class");
        let quiet = detection_metrics(&[false; 3], &[false; 3], &[0.0; 3]).unwrap();
        assert!(quiet.flags.precision_undefined && quiet.flags.f1_undefined);
        assert_eq!(quiet.precision, 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), Some(0.5));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, true]).unwrap(), None);
        assert!(roc_auc(&[0.5], &[true, false]).is_err());
    }

    fn auc_pairwise(scores: &[f64], truth: &[bool]) -> f64 {
        let pos: Vec<f64> = scores.iter().zip(truth).filter(|(_, t)| **t).map(|(s, _)| *s).collect();
        let neg: Vec<f64> = scores.iter().zip(truth).filter(|(_, t)| !**t).map(|(s, _)| *s).collect();
        let mut wins = 0.0;
        for si in &pos {
            for sj in &neg {
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..40).prop_flat_map(|n| {
            (proptest::collection::vec((0u8..8).prop_map(f64::from), n), proptest::collection::vec(any::<bool>(), n))
        })
    }

    proptest! {
        #[test]
        fn dtw_matches_brute_force(a in proptest::collection::vec(-5f64..5.0, 1..=6), b in proptest::collection::vec(-5f64..5.0, 1..=6)) {
            let fast = dtw_distance(&a, &b).unwrap();
            prop_assert!(close(fast, dtw_brute(&a, &b), 1e-9));
            prop_assert!(close(fast, dtw_distance(&b, &a).unwrap(), 1e-9));
            prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn dtw_diagonal_bounds(pairs in proptest::collection::vec((-5f64..5.0, -5f64..5.0), 1..60)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let d = dtw_distance(&a, &b).unwrap();
            let diagonal: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(d <= diagonal + 1e-9);
            prop_assert!(d <= a.len() as f64 * worst + 1e-9);
        }

        #[test]
        fn forecast_metric_identities(pairs in proptest::collection::vec((-100f64..100.0, -100f64..100.0), 2..60)) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = forecast_metrics(&a, &p).unwrap();
            prop_assert!(close(m.rmse * m.rmse, m.mse, 1e-9 * m.mse.max(1.0)));
            prop_assert!(m.rmse + 1e-12 >= m.mae && m.mae >= 0.0);
            prop_assert!(close(m.euclid, m.rmse * (a.len() as f64).sqrt(), 1e-9 * m.euclid.max(1.0)));
            prop_assert_eq!(m.cbd, 1.0 - m.pcc);
            prop_assert!(m.r2 <= 1.0);
            prop_assert!((-1.0..=1.0).contains(&m.pcc));
        }

        #[test]
        fn pcc_under_affine_maps(a in proptest::collection::vec(-100f64..100.0, 3..50), alpha in 0.1f64..10.0, beta in -50f64..50.0) {
            prop_assume!(pearson(&a, &a).is_some());
            let pos: Vec<f64> = a.iter().map(|x| alpha * x + beta).collect();
            let neg: Vec<f64> = a.iter().map(|x| -alpha * x + beta).collect();
            prop_assert!(close(pearson(&a, &pos).unwrap(), 1.0, 1e-9));
            prop_assert!(close(pearson(&a, &neg).unwrap(), -1.0, 1e-9));
        }

        #[test]
        fn auc_matches_pairwise_count((scores, truth) in labelled_scores()) {
            match roc_auc(&scores, &truth).unwrap() {
                Some(auc) => prop_assert!(close(auc, auc_pairwise(&scores, &truth), 1e-12)),
                None => prop_assert!(truth.iter().all(|t| *t) || truth.iter().all(|t| !*t)),
            }
        }

        #[test]
        fn auc_invariant_to_increasing_transform((scores, truth) in labelled_scores()) {
            let transformed: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() - 3.0).collect();
            prop_assert_eq!(roc_auc(&scores, &truth).unwrap(), roc_auc(&transformed, &truth).unwrap());
        }

        #[test]
        fn detection_counts_are_permutation_equivariant(
            rows in proptest::collection::vec((any::<bool>(), any::<bool>(), 0f64..10.0), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut crate::testutil::rng(seed));
            let split = |r: &[(bool, bool, f64)]| {
                (r.iter().map(|x| x.0).collect::<Vec<_>>(), r.iter().map(|x| x.1).collect::<Vec<_>>(), r.iter().map(|x| x.2).collect::<Vec<_>>())
            };
            let (p1, t1, s1) = split(&rows);
            let (p2, t2, s2) = split(&shuffled);
            let a = detection_metrics(&p1, &t1, &s1).unwrap();
            let b = detection_metrics(&p2, &t2, &s2).unwrap();
            prop_assert_eq!(a.clone(), b);
            prop_assert_eq!(a.tp + a.fp + a.tn + a.fn_, rows.len());
        }
    }
}
