//! Single-head temporal attention over the multi-scale tensor.
//!
//! Scores are `e[t][s] = (W_Qᵀ z_t) · (W_Kᵀ z_s) / √d_k` over all pairs of
//! steps (no causal mask). Each row is softmax-normalised, the context
//! vectors are attention-weighted sums of the value projections, and the
//! window representation fed to the rule base is their mean over time.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{dot, Matrix};
use crate::wavelet::MultiScaleTensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("shape mismatch: tensor has {found} features, parameters expect {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid attention parameters: {0}")]
    InvalidParams(&'static str),
}

/// Projection matrices; `W_Q`, `W_K` are d′×d_k and `W_V` is d′×d_v.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl AttentionParams {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self, AttentionError> {
        let params = Self { w_q, w_k, w_v };
        params.validate()?;
        Ok(params)
    }

    /// Entries uniform in `[-1/√d′, 1/√d′]`.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, d_k: usize, d_v: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(input_dim as f64);
        let mut draw = |cols| Matrix::from_fn(input_dim, cols, |_, _| rng.random_range(-bound..=bound));
        let w_q = draw(d_k);
        let w_k = draw(d_k);
        let w_v = draw(d_v);
        Self { w_q, w_k, w_v }
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let d = self.w_q.rows();
        if self.w_k.rows() != d || self.w_v.rows() != d {
            return Err(AttentionError::InvalidParams("projection row counts differ"));
        }
        if self.w_q.cols() != self.w_k.cols() {
            return Err(AttentionError::InvalidParams("query and key widths differ"));
        }
        if self.d_k() == 0 || self.d_v() == 0 || d == 0 {
            return Err(AttentionError::InvalidParams("empty projection"));
        }
        if !(self.w_q.is_finite() && self.w_k.is_finite() && self.w_v.is_finite()) {
            return Err(AttentionError::InvalidParams("non-finite entry"));
        }
        Ok(())
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.w_q.rows()
    }

    #[inline]
    pub fn d_k(&self) -> usize {
        self.w_q.cols()
    }

    #[inline]
    pub fn d_v(&self) -> usize {
        self.w_v.cols()
    }

    fn check(&self, z: &Matrix) -> Result<(), AttentionError> {
        if z.cols() != self.input_dim() {
            return Err(AttentionError::ShapeMismatch {
                expected: self.input_dim(),
                found: z.cols(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttendedRepresentation {
    /// T×d_v per-step context vectors.
    pub h_seq: Matrix,
    /// Mean of `h_seq` over time.
    pub h_pooled: Vec<f64>,
    /// T×T row-stochastic attention weights.
    pub weights: Matrix,
}

/// Raw scaled dot-product scores, T×T.
pub fn scores(z: &MultiScaleTensor, params: &AttentionParams) -> Result<Matrix, AttentionError> {
    params.check(&z.values)?;
    let q = z.values.matmul(&params.w_q);
    let k = z.values.matmul(&params.w_k);
    Ok(scaled_scores(&q, &k))
}

fn scaled_scores(q: &Matrix, k: &Matrix) -> Matrix {
    let inv = 1.0 / libm::sqrt(q.cols() as f64);
    let mut e = q.matmul_tr(k);
    e.scale(inv);
    e
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut w = scores.clone();
    for t in 0..w.rows() {
        softmax_in_place(w.row_mut(t));
    }
    w
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn encode(z: &MultiScaleTensor, params: &AttentionParams) -> Result<AttendedRepresentation, AttentionError> {
    params.check(&z.values)?;
    let cache = forward(&z.values, params);
    Ok(cache.representation)
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    pub(crate) representation: AttendedRepresentation,
}

pub(crate) fn forward(z: &Matrix, params: &AttentionParams) -> AttentionCache {
    let q = z.matmul(&params.w_q);
    let k = z.matmul(&params.w_k);
    let v = z.matmul(&params.w_v);
    let weights = softmax_rows(&scaled_scores(&q, &k));
    let h_seq = weights.matmul(&v);
    let steps = h_seq.rows() as f64;
    let mut h_pooled = vec![0.0; h_seq.cols()];
    for t in 0..h_seq.rows() {
        for (p, &h) in h_pooled.iter_mut().zip(h_seq.row(t)) {
            *p += h;
        }
    }
    h_pooled.iter_mut().for_each(|p| *p /= steps);
    AttentionCache {
        q,
        k,
        v,
        representation: AttendedRepresentation {
            h_seq,
            h_pooled,
            weights,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl AttentionGrads {
    pub fn zeros_like(params: &AttentionParams) -> Self {
        Self {
            w_q: Matrix::zeros(params.w_q.rows(), params.w_q.cols()),
            w_k: Matrix::zeros(params.w_k.rows(), params.w_k.cols()),
            w_v: Matrix::zeros(params.w_v.rows(), params.w_v.cols()),
        }
    }
}

/// Accumulates ∂L/∂W given ∂L/∂h_pooled into `grads`.
pub(crate) fn backward(z: &Matrix, cache: &AttentionCache, d_pooled: &[f64], grads: &mut AttentionGrads) {
    let steps = z.rows();
    let a = &cache.representation.weights;
    // Every h_seq row receives d_pooled / T.
    let d_h: Vec<f64> = d_pooled.iter().map(|g| g / steps as f64).collect();

    // h_seq = A V: ∂A[t][s] = d_h · v_s (identical for every t), ∂V[s] = (Σ_t A[t][s]) d_h.
    let dv_proj: Vec<f64> = (0..steps).map(|s| dot(&d_h, cache.v.row(s))).collect();
    let mut col_mass = vec![0.0; steps];
    for t in 0..steps {
        for (m, &w) in col_mass.iter_mut().zip(a.row(t)) {
            *m += w;
        }
    }
    let d_v = Matrix::from_fn(steps, d_h.len(), |s, j| col_mass[s] * d_h[j]);

    // Softmax backward per row, then the 1/√d_k scaling.
    let inv = 1.0 / libm::sqrt(cache.q.cols() as f64);
    let mut d_e = Matrix::zeros(steps, steps);
    for t in 0..steps {
        let row = a.row(t);
        let inner = dot(row, &dv_proj);
        for s in 0..steps {
            d_e[(t, s)] = row[s] * (dv_proj[s] - inner) * inv;
        }
    }
    let d_q = d_e.matmul(&cache.k);
    let d_k = d_e.tr_matmul(&cache.q);

    grads.w_q.add_scaled(&z.tr_matmul(&d_q), 1.0);
    grads.w_k.add_scaled(&z.tr_matmul(&d_k), 1.0);
    grads.w_v.add_scaled(&z.tr_matmul(&d_v), 1.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::*;

    fn tensor(rows: &[&[f64]]) -> MultiScaleTensor {
        MultiScaleTensor::from_matrix(Matrix::from_rows(rows).unwrap(), 1)
    }

    fn identity_params(n: usize) -> AttentionParams {
        AttentionParams::new(Matrix::identity(n), Matrix::identity(n), Matrix::identity(n)).unwrap()
    }

    #[test]
    fn score_examples() {
        let p = identity_params(2);
        let e = scores(&tensor(&[&[1.0, 0.0], &[0.0, 1.0]]), &p).unwrap();
        assert_eq!(e[(0, 1)], 0.0);
        let e = scores(&tensor(&[&[1.0, 1.0], &[1.0, 1.0]]), &p).unwrap();
        assert_abs_diff_eq!(e[(0, 1)], 1.414_213_56, epsilon = 1e-8);
        let e = scores(&tensor(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]), &p).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let p = identity_params(3);
        assert!(matches!(
            encode(&tensor(&[&[1.0, 0.0], &[0.0, 1.0]]), &p),
            Err(AttentionError::ShapeMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn identical_rows_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(3, 2, 2, &mut rng);
        let z = tensor(&[&[0.3, -1.0, 2.0][..]; 4]);
        let out = encode(&z, &p).unwrap();
        let v = p.w_v.vec_matmul(&[0.3, -1.0, 2.0]);
        for t in 0..4 {
            for s in 0..4 {
                assert_abs_diff_eq!(out.weights[(t, s)], 0.25, epsilon = 1e-15);
            }
            for (h, e) in out.h_seq.row(t).iter().zip(&v) {
                assert_abs_diff_eq!(h, e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::init(2, 3, 2, &mut rng);
        let out = encode(&tensor(&[&[0.5, -0.25]]), &p).unwrap();
        assert_eq!(out.weights.as_slice(), &[1.0]);
        let expected = p.w_v.vec_matmul(&[0.5, -0.25]);
        for (h, e) in out.h_pooled.iter().zip(&expected) {
            assert_abs_diff_eq!(h, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_step_hand_computation() {
        // W_Q = W_K = I (d_k = 2), W_V = [[1], [2]], z_1 = (1, 0), z_2 = (0, 2).
        let p = AttentionParams::new(
            Matrix::identity(2),
            Matrix::identity(2),
            Matrix::from_rows(&[[1.0], [2.0]]).unwrap(),
        )
        .unwrap();
        let out = encode(&tensor(&[&[1.0, 0.0], &[0.0, 2.0]]), &p).unwrap();
        // Scores: e11 = 1/√2, e12 = 0, e21 = 0, e22 = 4/√2.
        let r = core::f64::consts::FRAC_1_SQRT_2;
        let w11 = libm::exp(r) / (libm::exp(r) + 1.0);
        let w22 = libm::exp(4.0 * r) / (1.0 + libm::exp(4.0 * r));
        // Values: v_1 = 1, v_2 = 4.
        let h1 = w11 * 1.0 + (1.0 - w11) * 4.0;
        let h2 = (1.0 - w22) * 1.0 + w22 * 4.0;
        assert_abs_diff_eq!(out.h_pooled[0], (h1 + h2) / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.weights[(0, 0)], w11, epsilon = 1e-15);
    }

    #[test]
    fn stable_softmax_handles_huge_scores() {
        let w = softmax_rows(&Matrix::from_rows(&[[1e300, 1e300], [-1e300, 0.0]]).unwrap());
        assert_eq!(w.as_slice(), &[0.5, 0.5, 0.0, 1.0]);
    }

    fn instance() -> impl Strategy<Value = (MultiScaleTensor, AttentionParams)> {
        (1usize..12, 1usize..6, 1usize..5, 1usize..4, any::<u64>()).prop_flat_map(|(steps, width, d_k, d_v, seed)| {
            proptest::collection::vec(-3.0f64..3.0, steps * width).prop_map(move |data| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let z = MultiScaleTensor::from_matrix(Matrix::from_vec(steps, width, data).unwrap(), 1);
                let mut p = AttentionParams::init(width, d_k, d_v, &mut rng);
                // Widen the init so some rows are far from uniform.
                p.w_q.scale(3.0);
                p.w_k.scale(3.0);
                (z, p)
            })
        })
    }

    fn pad_columns(m: &Matrix, cols: usize) -> Matrix {
        Matrix::from_fn(m.rows(), cols, |r, c| if c < m.cols() { m[(r, c)] } else { 0.0 })
    }

    proptest! {
        #[test]
        fn weights_are_row_stochastic((z, p) in instance()) {
            let out = encode(&z, &p).unwrap();
            for t in 0..out.weights.rows() {
                let row = out.weights.row(t);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                prop_assert!(row.iter().all(|w| (0.0..=1.0).contains(w)));
            }
        }

        #[test]
        fn softmax_ignores_row_shifts((z, p) in instance(), shift in -50.0f64..50.0) {
            let e = scores(&z, &p).unwrap();
            let mut shifted = e.clone();
            for t in 0..shifted.rows() {
                let c = shift * (t as f64 + 1.0);
                shifted.row_mut(t).iter_mut().for_each(|v| *v += c);
            }
            let (a, b) = (softmax_rows(&e), softmax_rows(&shifted));
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn permuting_steps_permutes_outputs((z, p) in instance(), seed in any::<u64>()) {
            let steps = z.len();
            let mut perm: Vec<usize> = (0..steps).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            let permuted = Matrix::from_fn(steps, z.width(), |t, c| z.values[(perm[t], c)]);
            let a = encode(&z, &p).unwrap();
            let b = encode(&MultiScaleTensor::from_matrix(permuted, 1), &p).unwrap();
            for t in 0..steps {
                for (x, y) in b.h_seq.row(t).iter().zip(a.h_seq.row(perm[t])) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                for s in 0..steps {
                    prop_assert!((b.weights[(t, s)] - a.weights[(perm[t], perm[s])]).abs() < 1e-12);
                }
            }
            for (x, y) in a.h_pooled.iter().zip(&b.h_pooled) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn quadrupling_key_width_halves_scores((z, p) in instance()) {
            let d_k = p.d_k();
            let wide = AttentionParams::new(pad_columns(&p.w_q, 4 * d_k), pad_columns(&p.w_k, 4 * d_k), p.w_v.clone()).unwrap();
            let (narrow_e, wide_e) = (scores(&z, &p).unwrap(), scores(&z, &wide).unwrap());
            for (n, w) in narrow_e.as_slice().iter().zip(wide_e.as_slice()) {
                prop_assert!((w - n / 2.0).abs() <= 1e-12 * (1.0 + n.abs()));
            }
        }
    }
}
