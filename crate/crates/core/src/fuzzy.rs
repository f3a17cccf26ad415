//! Takagi–Sugeno rule base with Gaussian memberships.
//!
//! Rule `i` fires with `α_i = Π_j exp(-(x_j - c_ij)² / (2σ_ij²))`, the
//! firings are normalised to a partition of unity, and the output is the
//! firing-weighted mean of the affine rule outputs `y_i = p_i · x + r_i`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, Matrix};

/// Lower bound on every membership spread.
pub const SIGMA_MIN: f64 = 1e-3;

/// Below this total firing the normalised weights fall back to uniform.
pub const FIRING_FLOOR: f64 = 1e-300;

/// Inputs beyond this count are subsampled (seeded) before initialisation.
const MAX_INIT_SAMPLES: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuzzyError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {rules} samples to place {rules} rules, got {samples}")]
    TooFewSamples { samples: usize, rules: usize },
    #[error("invalid rule base: {0}")]
    InvalidRuleBase(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyRuleBase {
    /// R×m membership centers.
    pub centers: Matrix,
    /// R×m membership spreads, each at least [`SIGMA_MIN`].
    pub spreads: Matrix,
    /// R×m consequent weights.
    pub weights: Matrix,
    /// Length-R consequent biases.
    pub biases: Vec<f64>,
}

impl FuzzyRuleBase {
    pub fn new(centers: Matrix, spreads: Matrix, weights: Matrix, biases: Vec<f64>) -> Result<Self, FuzzyError> {
        let rules = Self {
            centers,
            spreads,
            weights,
            biases,
        };
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<(), FuzzyError> {
        let shape = (self.centers.rows(), self.centers.cols());
        if shape.0 == 0 || shape.1 == 0 {
            return Err(FuzzyError::InvalidRuleBase("empty rule base"));
        }
        if (self.spreads.rows(), self.spreads.cols()) != shape
            || (self.weights.rows(), self.weights.cols()) != shape
            || self.biases.len() != shape.0
        {
            return Err(FuzzyError::InvalidRuleBase("parameter shapes disagree"));
        }
        if !(self.centers.is_finite()
            && self.spreads.is_finite()
            && self.weights.is_finite()
            && self.biases.iter().all(|b| b.is_finite()))
        {
            return Err(FuzzyError::InvalidRuleBase("non-finite parameter"));
        }
        if self.spreads.as_slice().iter().any(|&s| s < SIGMA_MIN) {
            return Err(FuzzyError::InvalidRuleBase("spread below floor"));
        }
        Ok(())
    }

    #[inline]
    pub fn rules(&self) -> usize {
        self.centers.rows()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.centers.cols()
    }

    /// Raises every spread to at least [`SIGMA_MIN`].
    pub fn clamp_spreads(&mut self) {
        for s in self.spreads.as_mut_slice() {
            *s = s.max(SIGMA_MIN);
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), FuzzyError> {
        if x.len() != self.input_dim() {
            return Err(FuzzyError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn log_firing(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rules())
            .map(|i| {
                let c = self.centers.row(i);
                let s = self.spreads.row(i);
                -x.iter()
                    .zip(c)
                    .zip(s)
                    .map(|((x, c), s)| (x - c) * (x - c) / (2.0 * s * s))
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Every intermediate of one inference, for inspection and training.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    pub memberships: Matrix,
    pub firing: Vec<f64>,
    pub normalized: Vec<f64>,
    pub rule_outputs: Vec<f64>,
    pub output: f64,
    /// True when the total firing underflowed and uniform weights were used.
    pub degenerate: bool,
}

pub fn membership(x: &[f64], rules: &FuzzyRuleBase) -> Result<Matrix, FuzzyError> {
    rules.check_input(x)?;
    Ok(Matrix::from_fn(rules.rules(), rules.input_dim(), |i, j| {
        let d = x[j] - rules.centers[(i, j)];
        let s = rules.spreads[(i, j)];
        libm::exp(-d * d / (2.0 * s * s))
    }))
}

/// Product of each row, evaluated as `exp(Σ ln μ)`.
pub fn firing(memberships: &Matrix) -> Vec<f64> {
    (0..memberships.rows())
        .map(|i| libm::exp(memberships.row(i).iter().map(|&m| libm::log(m)).sum::<f64>()))
        .collect()
}

/// `α_i / Σ α`, or uniform weights when `Σ α` is below [`FIRING_FLOOR`].
pub fn normalize(firing: &[f64]) -> Vec<f64> {
    let total: f64 = firing.iter().sum();
    if !(total >= FIRING_FLOOR) {
        return vec![1.0 / firing.len() as f64; firing.len()];
    }
    firing.iter().map(|a| a / total).collect()
}

pub fn consequents(x: &[f64], rules: &FuzzyRuleBase) -> Result<Vec<f64>, FuzzyError> {
    rules.check_input(x)?;
    Ok(rule_outputs(x, rules))
}

fn rule_outputs(x: &[f64], rules: &FuzzyRuleBase) -> Vec<f64> {
    (0..rules.rules())
        .map(|i| dot(rules.weights.row(i), x) + rules.biases[i])
        .collect()
}

/// Normalised weights from log-firings. Matches [`normalize`] applied to
/// `exp(log_firing)` but stays accurate when individual firings underflow.
fn normalize_log(log_firing: &[f64]) -> (Vec<f64>, bool) {
    let max = log_firing.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_firing.iter().map(|l| libm::exp(l - max)).collect();
    let sum: f64 = scaled.iter().sum();
    let log_total = max + libm::log(sum);
    if !(log_total >= libm::log(FIRING_FLOOR)) {
        let n = log_firing.len();
        return (vec![1.0 / n as f64; n], true);
    }
    (scaled.into_iter().map(|v| v / sum).collect(), false)
}

pub fn infer(x: &[f64], rules: &FuzzyRuleBase) -> Result<InferenceTrace, FuzzyError> {
    rules.check_input(x)?;
    let memberships = membership(x, rules)?;
    let log_firing = rules.log_firing(x);
    let firing = log_firing.iter().map(|&l| libm::exp(l)).collect();
    let (normalized, degenerate) = normalize_log(&log_firing);
    let rule_outputs = rule_outputs(x, rules);
    let output = dot(&normalized, &rule_outputs);
    Ok(InferenceTrace {
        memberships,
        firing,
        normalized,
        rule_outputs,
        output,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGrads {
    pub centers: Matrix,
    pub spreads: Matrix,
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl FuzzyGrads {
    pub fn zeros_like(rules: &FuzzyRuleBase) -> Self {
        let (r, m) = (rules.rules(), rules.input_dim());
        Self {
            centers: Matrix::zeros(r, m),
            spreads: Matrix::zeros(r, m),
            weights: Matrix::zeros(r, m),
            biases: vec![0.0; r],
        }
    }
}

/// Accumulates parameter gradients for `∂L/∂ŷ = d_out` into `grads` and
/// returns `∂L/∂x`.
pub(crate) fn backward(
    x: &[f64],
    rules: &FuzzyRuleBase,
    trace: &InferenceTrace,
    d_out: f64,
    grads: &mut FuzzyGrads,
) -> Vec<f64> {
    let mut d_x = vec![0.0; x.len()];
    for i in 0..rules.rules() {
        let w = trace.normalized[i];
        // Consequent path: ŷ depends on y_i through ᾱ_i.
        let g_y = d_out * w;
        grads.biases[i] += g_y;
        for (j, &xj) in x.iter().enumerate() {
            grads.weights[(i, j)] += g_y * xj;
            d_x[j] += g_y * rules.weights[(i, j)];
        }
        if trace.degenerate {
            continue;
        }
        // Premise path through the softmax over log-firings.
        let g_log = d_out * w * (trace.rule_outputs[i] - trace.output);
        for (j, &xj) in x.iter().enumerate() {
            let s = rules.spreads[(i, j)];
            let diff = xj - rules.centers[(i, j)];
            let s2 = s * s;
            grads.centers[(i, j)] += g_log * diff / s2;
            grads.spreads[(i, j)] += g_log * diff * diff / (s2 * s);
            d_x[j] -= g_log * diff / s2;
        }
    }
    d_x
}

/// Quantile (linear interpolation between order statistics) of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Deterministic rule placement.
///
/// Rule `i` sits at the `(i + ½)/R` quantile of every input dimension;
/// spreads are the per-dimension range over `R·√2`; consequent weights
/// start at zero and each bias is the mean target of the samples closest
/// to that rule's center (the global mean if none are).
pub fn init_rules(inputs: &Matrix, targets: &[f64], rules: usize, seed: u64) -> Result<FuzzyRuleBase, FuzzyError> {
    let n = inputs.rows();
    if rules == 0 || n < rules {
        return Err(FuzzyError::TooFewSamples { samples: n, rules });
    }
    if targets.len() != n {
        return Err(FuzzyError::DimensionMismatch {
            expected: n,
            found: targets.len(),
        });
    }
    let rows: Vec<usize> = if n > MAX_INIT_SAMPLES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n, MAX_INIT_SAMPLES).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };
    let dim = inputs.cols();
    let mut centers = Matrix::zeros(rules, dim);
    let mut spreads = Matrix::zeros(rules, dim);
    for j in 0..dim {
        let mut col: Vec<f64> = rows.iter().map(|&r| inputs[(r, j)]).collect();
        col.sort_by(f64::total_cmp);
        let range = col[col.len() - 1] - col[0];
        let spread = (range / (rules as f64 * core::f64::consts::SQRT_2)).max(SIGMA_MIN);
        for i in 0..rules {
            centers[(i, j)] = quantile_sorted(&col, (i as f64 + 0.5) / rules as f64);
            spreads[(i, j)] = spread;
        }
    }

    let mut sums = vec![0.0; rules];
    let mut counts = vec![0usize; rules];
    for &r in &rows {
        let x = inputs.row(r);
        let nearest = (0..rules)
            .map(|i| {
                let d: f64 = x.iter().zip(centers.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(0, |(i, _)| i);
        sums[nearest] += targets[r];
        counts[nearest] += 1;
    }
    let global = rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64;
    let biases = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { global } else { s / c as f64 })
        .collect();

    FuzzyRuleBase::new(centers, spreads, Matrix::zeros(rules, dim), biases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single_rule(center: &[f64], spread: &[f64]) -> FuzzyRuleBase {
        let m = center.len();
        FuzzyRuleBase::new(
            Matrix::from_vec(1, m, center.to_vec()).unwrap(),
            Matrix::from_vec(1, m, spread.to_vec()).unwrap(),
            Matrix::zeros(1, m),
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn gaussian_membership_values() {
        let rules = single_rule(&[1.0, -2.0, 0.5], &[0.5, 2.0, 0.1]);
        let mu = membership(&[1.0, 0.0, 0.8], &rules).unwrap();
        assert_eq!(mu[(0, 0)], 1.0);
        assert_abs_diff_eq!(mu[(0, 1)], 0.606_531, epsilon = 1e-6);
        assert_abs_diff_eq!(mu[(0, 2)], 0.011_109, epsilon = 1e-6);
        assert!(matches!(
            membership(&[1.0], &rules),
            Err(FuzzyError::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn product_firing() {
        let ones = Matrix::from_fn(2, 3, |_, _| 1.0);
        assert_eq!(firing(&ones), vec![1.0, 1.0]);
        let half = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(firing(&half)[0], 0.25, epsilon = 1e-15);
        let many = Matrix::from_fn(1, 50, |_, _| 0.5);
        let a = firing(&many)[0];
        assert!(a > 0.0);
        assert_abs_diff_eq!(a / libm::pow(2.0, -50.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalisation_rules() {
        let w = normalize(&[0.2, 0.6]);
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.75, epsilon = 1e-15);
        assert_eq!(normalize(&[0.3]), vec![1.0]);
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(normalize(&[1e-310, 1e-310]), vec![0.5, 0.5]);
    }

    #[test]
    fn affine_consequents() {
        let mut rules = single_rule(&[0.0, 0.0], &[1.0, 1.0]);
        rules.biases[0] = 5.0;
        assert_eq!(consequents(&[3.0, 4.0], &rules).unwrap(), vec![5.0]);
        rules.biases[0] = 0.0;
        rules.weights = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(consequents(&[3.0, 4.0], &rules).unwrap(), vec![11.0]);
    }

    #[test]
    fn consequents_match_elementwise_oracle() {
        let rules = FuzzyRuleBase::new(
            Matrix::zeros(3, 4),
            Matrix::from_fn(3, 4, |_, _| 1.0),
            Matrix::from_fn(3, 4, |i, j| libm::sin((i * 4 + j) as f64)),
            vec![0.1, -0.2, 0.3],
        )
        .unwrap();
        let x = [0.7, -1.3, 2.2, 0.05];
        let y = consequents(&x, &rules).unwrap();
        for i in 0..3 {
            let mut acc = rules.biases[i];
            for j in 0..4 {
                acc += libm::sin((i * 4 + j) as f64) * x[j];
            }
            assert_abs_diff_eq!(y[i], acc, epsilon = 1e-14);
        }
    }

    #[test]
    fn inference_fusion() {
        // Two rules, centers placed so ᾱ = (0.25, 0.75) at x = 0:
        // ln(α_1/α_2) = ln(1/3) with σ = 1 and c_2 = 0.
        let c1 = libm::sqrt(2.0 * libm::log(3.0));
        let rules = FuzzyRuleBase::new(
            Matrix::from_rows(&[[c1], [0.0]]).unwrap(),
            Matrix::from_rows(&[[1.0], [1.0]]).unwrap(),
            Matrix::zeros(2, 1),
            vec![4.0, 8.0],
        )
        .unwrap();
        let trace = infer(&[0.0], &rules).unwrap();
        assert_abs_diff_eq!(trace.normalized[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(trace.output, 7.0, epsilon = 1e-12);

        let mut one = single_rule(&[10.0], &[0.01]);
        one.biases[0] = -3.0;
        assert_eq!(infer(&[-10.0], &one).unwrap().output, -3.0);
    }

    #[test]
    fn far_input_uses_uniform_fallback() {
        let rules = FuzzyRuleBase::new(
            Matrix::from_rows(&[[0.0], [1.0]]).unwrap(),
            Matrix::from_fn(2, 1, |_, _| SIGMA_MIN),
            Matrix::zeros(2, 1),
            vec![1.0, 3.0],
        )
        .unwrap();
        let trace = infer(&[100.0], &rules).unwrap();
        assert!(trace.degenerate);
        assert_eq!(trace.normalized, vec![0.5, 0.5]);
        assert_eq!(trace.output, 2.0);
    }

    #[test]
    fn init_places_quantile_centers() {
        let inputs = Matrix::from_rows(&[[0.0], [1.0 / 3.0], [2.0 / 3.0], [1.0]]).unwrap();
        let rules = init_rules(&inputs, &[0.0, 0.0, 1.0, 1.0], 2, 0).unwrap();
        assert_abs_diff_eq!(rules.centers[(0, 0)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(rules.centers[(1, 0)], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(rules.spreads[(0, 0)], 1.0 / (2.0 * core::f64::consts::SQRT_2), epsilon = 1e-15);
        assert_eq!(rules.biases, vec![0.0, 1.0]);
        assert!(rules.weights.as_slice().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn init_degenerate_and_deterministic() {
        let same = Matrix::from_fn(5, 2, |_, _| 3.0);
        let rules = init_rules(&same, &[1.0; 5], 3, 1).unwrap();
        assert!(rules.centers.as_slice().iter().all(|&c| c == 3.0));
        assert!(rules.spreads.as_slice().iter().all(|&s| s == SIGMA_MIN));

        let data = Matrix::from_fn(40, 3, |r, c| libm::cos((r * 3 + c) as f64));
        let t: Vec<f64> = (0..40).map(|i| i as f64).collect();
        assert_eq!(init_rules(&data, &t, 4, 9).unwrap(), init_rules(&data, &t, 4, 9).unwrap());
        assert_eq!(
            init_rules(&data, &t, 41, 9).unwrap_err(),
            FuzzyError::TooFewSamples { samples: 40, rules: 41 }
        );
    }

    fn rule_base(raw: &[f64], rules: usize, dim: usize) -> FuzzyRuleBase {
        let take = |k: usize| raw[k % raw.len()];
        FuzzyRuleBase::new(
            Matrix::from_fn(rules, dim, |i, j| take(i * dim + j) * 2.0),
            Matrix::from_fn(rules, dim, |i, j| 0.2 + take(3 + i + j).abs()),
            Matrix::from_fn(rules, dim, |i, j| take(7 + i * j)),
            (0..rules).map(|i| take(11 + i) * 5.0).collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_convexity(
            raw in proptest::collection::vec(-1.0f64..1.0, 16),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            rules in 1usize..6,
        ) {
            let rb = rule_base(&raw, rules, 3);
            let trace = infer(&x, &rb).unwrap();
            let sum: f64 = trace.normalized.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let lo = trace.rule_outputs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = trace.rule_outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(trace.output >= lo - 1e-12 && trace.output <= hi + 1e-12);
            prop_assert!(trace.memberships.as_slice().iter().all(|&m| m > 0.0 && m <= 1.0));
        }

        #[test]
        fn translation_consistency(
            raw in proptest::collection::vec(-1.0f64..1.0, 16),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            shift in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let rb = rule_base(&raw, 3, 3);
            let mut moved = rb.clone();
            for i in 0..3 {
                for j in 0..3 {
                    moved.centers[(i, j)] += shift[j];
                }
            }
            let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let a = infer(&x, &rb).unwrap();
            let b = infer(&xs, &moved).unwrap();
            for (p, q) in a.normalized.iter().zip(&b.normalized) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            for (p, q) in a.memberships.as_slice().iter().zip(b.memberships.as_slice()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn scaling_firings_keeps_weights(alpha in proptest::collection::vec(1e-3f64..1.0, 1..8), k in 1e-3f64..1e3) {
            let scaled: Vec<f64> = alpha.iter().map(|a| a * k).collect();
            let a = normalize(&alpha);
            let b = normalize(&scaled);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() <= 4.0 * f64::EPSILON * p.max(*q));
            }
        }

        #[test]
        fn log_space_matches_naive_product(mu in proptest::collection::vec(0.05f64..1.0, 1..20)) {
            let m = Matrix::from_vec(1, mu.len(), mu.clone()).unwrap();
            let naive: f64 = mu.iter().product();
            let logged = firing(&m)[0];
            prop_assert!(((logged - naive) / naive).abs() < 1e-10);
        }
    }
}
