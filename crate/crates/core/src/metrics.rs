//! RMSE, ROC/AUC, F1 and the debt-acceleration sweep.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::HouseholdPanel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels contain only one class")]
    OneClassOnly,
    #[error("label at index {0} is not 0 or 1")]
    InvalidLabel(usize),
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("thresholds must be strictly increasing and within [0.1, 0.9]")]
    InvalidThresholds,
    #[error("no scores for household {0}")]
    UnknownHousehold(u64),
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    if predictions.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            scores: predictions.len(),
            labels: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(libm::sqrt(mse))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. The first point uses +∞.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Sorted by threshold descending, from (0, 0) to (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Counts positives and checks labels are 0/1 and scores finite.
fn check_binary(scores: &[f64], labels: &[f64]) -> Result<(usize, usize), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let mut pos = 0;
    for (i, &l) in labels.iter().enumerate() {
        if l == 1.0 {
            pos += 1;
        } else if l != 0.0 {
            return Err(MetricsError::InvalidLabel(i));
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    Ok((pos, neg))
}

/// Threshold sweep over the distinct scores; tied scores move the curve
/// in a single diagonal step, which makes the trapezoidal area equal to
/// the pairwise estimator with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<RocCurve, MetricsError> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area2 = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Exact integer trapezoid: Δfp · (tp + prev_tp).
        area2 += ((fp - prev_fp) * (tp + prev_tp)) as f64;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    let auc = area2 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// F1 with `score >= threshold` as the positive call; 0 when precision and
/// recall are both 0.
pub fn f1(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    check_binary(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Ordinary least-squares slope of `values` against 0, 1, 2, …
pub fn ols_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in values.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Per-household change in balance slope around a flag:
/// `(S_post − S_pre) / (|S_pre| + 1)`.
pub fn dai_household(slope_pre: f64, slope_post: f64) -> f64 {
    (slope_post - slope_pre) / (slope_pre.abs() + 1.0)
}

/// Model scores for one household's windows, keyed by the day of the
/// window's last input step, in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdScores {
    pub household_id: u64,
    pub scores: Vec<(i64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaiSweep {
    pub thresholds: Vec<f64>,
    /// `None` where no household with enough history was flagged.
    pub dai_values: Vec<Option<f64>>,
    /// Households flagged at each threshold (including skipped ones).
    pub n_flagged: Vec<usize>,
    /// Flagged households skipped for lack of history around the flag.
    pub n_skipped: Vec<usize>,
}

/// Default slope window around the flag day.
pub const DAI_SLOPE_WINDOW: usize = 14;

/// τ = 0.1, 0.2, …, 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Revolving balance of one household, indexed from `start_day`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceHistory<'a> {
    pub household_id: u64,
    pub start_day: i64,
    pub balance: &'a [f64],
}

/// Debt-acceleration sweep over generated panels; see [`dai_sweep_balances`].
pub fn dai_sweep(
    panels: &[HouseholdPanel],
    scores: &[HouseholdScores],
    thresholds: &[f64],
    slope_window: usize,
) -> Result<DaiSweep, MetricsError> {
    let histories: Vec<BalanceHistory<'_>> = panels
        .iter()
        .map(|p| BalanceHistory {
            household_id: p.household_id,
            start_day: 0,
            balance: &p.revolving_balance,
        })
        .collect();
    dai_sweep_balances(&histories, scores, thresholds, slope_window)
}

/// Debt-acceleration sweep.
///
/// For each threshold τ a household is flagged on the first day its score
/// reaches τ. Balance slopes are fitted over the `slope_window` days
/// strictly before and strictly after that day, and the household
/// contributes [`dai_household`]. `DAI(τ)` is the mean over flagged
/// households with enough history on both sides.
pub fn dai_sweep_balances(
    histories: &[BalanceHistory<'_>],
    scores: &[HouseholdScores],
    thresholds: &[f64],
    slope_window: usize,
) -> Result<DaiSweep, MetricsError> {
    let valid = thresholds.iter().all(|t| (0.1..=0.9).contains(t))
        && thresholds.windows(2).all(|w| w[0] < w[1])
        && slope_window >= 2;
    if !valid {
        return Err(MetricsError::InvalidThresholds);
    }
    let mut sweep = DaiSweep {
        thresholds: thresholds.to_vec(),
        dai_values: Vec::with_capacity(thresholds.len()),
        n_flagged: Vec::with_capacity(thresholds.len()),
        n_skipped: Vec::with_capacity(thresholds.len()),
    };
    for &tau in thresholds {
        let (mut sum, mut used, mut flagged, mut skipped) = (0.0, 0usize, 0usize, 0usize);
        for hs in scores {
            let Some(&(day, _)) = hs.scores.iter().find(|(_, s)| *s >= tau) else {
                continue;
            };
            flagged += 1;
            let history = histories
                .iter()
                .find(|h| h.household_id == hs.household_id)
                .ok_or(MetricsError::UnknownHousehold(hs.household_id))?;
            let w = slope_window as i64;
            let d = day - history.start_day;
            if d - w < 0 || d + w >= history.balance.len() as i64 {
                skipped += 1;
                continue;
            }
            let d = d as usize;
            let pre = ols_slope(&history.balance[d - slope_window..d]);
            let post = ols_slope(&history.balance[d + 1..=d + slope_window]);
            sum += dai_household(pre, post);
            used += 1;
        }
        sweep.dai_values.push((used > 0).then(|| sum / used as f64));
        sweep.n_flagged.push(flagged);
        sweep.n_skipped.push(skipped);
    }
    Ok(sweep)
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` with fewer than two points or a
/// constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}
