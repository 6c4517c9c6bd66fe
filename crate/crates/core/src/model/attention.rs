//! Scaled dot-product attention, full or sliding-window with a global
//! [CLS]: token i attends j when |i-j| <= w/2, or i = 0, or j = 0.
//!
//! Two interchangeable implementations: dense scores with -inf on masked
//! pairs (reference) and a banded path that only touches allowed pairs
//! (performance). Both share the row kernels below so forward and
//! backward stay in one place.

use super::scalar::Scalar;
use super::tensor::{dot, Matrix};
use super::AttentionMode;

/// Allowed-pair structure for one sequence length, plus the storage
/// layout (dense rows vs. band rows) the scores are computed in.
#[derive(Debug, Clone)]
pub struct AttnPattern {
    pub len: usize,
    sliding: bool,
    half: usize,
    dense: bool,
}

impl AttnPattern {
    pub fn new(len: usize, mode: AttentionMode, window: usize, dense: bool) -> Self {
        Self {
            len,
            sliding: mode == AttentionMode::SlidingGlobal,
            half: window / 2,
            dense,
        }
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        !self.sliding || i == 0 || j == 0 || i.abs_diff(j) <= self.half
    }

    /// Stored columns of row i as (include_col_zero, band_lo, band_hi).
    /// Dense layouts store every column and mask inside the scores.
    #[inline]
    pub fn stored(&self, i: usize) -> (bool, usize, usize) {
        if self.dense || !self.sliding || i == 0 {
            (false, 0, self.len)
        } else {
            let lo = i.saturating_sub(self.half);
            let hi = (i + self.half + 1).min(self.len);
            (lo > 0, lo, hi)
        }
    }

    #[inline]
    pub fn is_dense(&self) -> bool {
        self.dense
    }
}

fn softmax_in_place<S: Scalar>(scores: &mut [S]) {
    let mut max = S::neg_infinity();
    for &s in scores.iter() {
        max = max.maximum(s);
    }
    let mut sum = S::ZERO;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s = *s / sum;
    }
}

/// Attention for one head occupying columns [h0, h0+hd) of q/k/v. Writes
/// the context into the same columns of `ctx` and returns the attention
/// weights over each row's stored columns, for the backward pass.
pub(crate) fn head_attention<S: Scalar>(
    pattern: &AttnPattern,
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    h0: usize,
    hd: usize,
    ctx: &mut Matrix<S>,
) -> Vec<Vec<S>> {
    let scale = S::ONE / S::from_f64(hd as f64).sqrt();
    let mut all_probs = Vec::with_capacity(pattern.len);
    for i in 0..pattern.len {
        let (zero, lo, hi) = pattern.stored(i);
        let q_row = &q.row(i)[h0..h0 + hd];
        let mut scores = Vec::with_capacity((hi - lo) + zero as usize);
        if zero {
            scores.push(dot(q_row, &k.row(0)[h0..h0 + hd]) * scale);
        }
        for j in lo..hi {
            let s = if pattern.is_dense() && !pattern.allowed(i, j) {
                S::neg_infinity()
            } else {
                dot(q_row, &k.row(j)[h0..h0 + hd]) * scale
            };
            scores.push(s);
        }
        softmax_in_place(&mut scores);

        let ctx_row = &mut ctx.row_mut(i)[h0..h0 + hd];
        ctx_row.fill(S::ZERO);
        let mut it = scores.iter();
        if zero {
            let p = *it.next().unwrap();
            for (c, x) in ctx_row.iter_mut().zip(&v.row(0)[h0..h0 + hd]) {
                *c += p * *x;
            }
        }
        for (j, &p) in (lo..hi).zip(it) {
            for (c, x) in ctx_row.iter_mut().zip(&v.row(j)[h0..h0 + hd]) {
                *c += p * *x;
            }
        }
        all_probs.push(scores);
    }
    all_probs
}

/// Backward of `head_attention`: accumulates into the head's columns of
/// dq/dk/dv given the upstream context gradient and the cached weights.
pub(crate) fn head_attention_backward<S: Scalar>(
    pattern: &AttnPattern,
    probs: &[Vec<S>],
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    h0: usize,
    hd: usize,
    dctx: &Matrix<S>,
    dq: &mut Matrix<S>,
    dk: &mut Matrix<S>,
    dv: &mut Matrix<S>,
) {
    let scale = S::ONE / S::from_f64(hd as f64).sqrt();
    let mut cols: Vec<usize> = Vec::new();
    for i in 0..pattern.len {
        let (zero, lo, hi) = pattern.stored(i);
        cols.clear();
        if zero {
            cols.push(0);
        }
        cols.extend(lo..hi);
        let p = &probs[i];
        let dctx_row = &dctx.row(i)[h0..h0 + hd];

        // d(weights) and fused softmax backward.
        let mut dscore: Vec<S> = cols
            .iter()
            .map(|&j| dot(dctx_row, &v.row(j)[h0..h0 + hd]))
            .collect();
        let mut inner = S::ZERO;
        for (ps, ds) in p.iter().zip(&dscore) {
            inner += *ps * *ds;
        }
        for (ds, ps) in dscore.iter_mut().zip(p) {
            *ds = *ps * (*ds - inner);
        }

        for ((&j, &ds), &ps) in cols.iter().zip(&dscore).zip(p) {
            let a = ds * scale;
            let q_row = &q.row(i)[h0..h0 + hd];
            let k_row = &k.row(j)[h0..h0 + hd];
            {
                let dq_row = &mut dq.row_mut(i)[h0..h0 + hd];
                for (dqx, kx) in dq_row.iter_mut().zip(k_row) {
                    *dqx += a * *kx;
                }
            }
            {
                let dk_row = &mut dk.row_mut(j)[h0..h0 + hd];
                for (dkx, qx) in dk_row.iter_mut().zip(q_row) {
                    *dkx += a * *qx;
                }
            }
            {
                let dv_row = &mut dv.row_mut(j)[h0..h0 + hd];
                for (dvx, cx) in dv_row.iter_mut().zip(dctx_row) {
                    *dvx += ps * *cx;
                }
            }
        }
    }
}

fn single_head(
    q_rows: usize,
    q_cols: usize,
    k: &Matrix<impl Scalar>,
    v: &Matrix<impl Scalar>,
) {
    assert_eq!(q_cols, k.cols, "q/k width mismatch");
    assert_eq!(k.rows, v.rows, "k/v length mismatch");
    assert_eq!(k.cols, v.cols, "k/v width mismatch");
    assert_eq!(q_rows, k.rows, "self-attention expects square len");
}

/// Reference attention over single-head matrices: dense scores, masked
/// pairs set to -inf before softmax.
pub fn attention<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    mode: AttentionMode,
    window: usize,
) -> Matrix<S> {
    single_head(q.rows, q.cols, k, v);
    let pattern = AttnPattern::new(q.rows, mode, window, true);
    let mut ctx = Matrix::zeros(q.rows, q.cols);
    head_attention(&pattern, q, k, v, 0, q.cols, &mut ctx);
    ctx
}

/// Banded attention: computes only the allowed pairs. Must match the
/// reference within 1e-6.
pub fn attention_banded<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    mode: AttentionMode,
    window: usize,
) -> Matrix<S> {
    single_head(q.rows, q.cols, k, v);
    let pattern = AttnPattern::new(q.rows, mode, window, false);
    let mut ctx = Matrix::zeros(q.rows, q.cols);
    head_attention(&pattern, q, k, v, 0, q.cols, &mut ctx);
    ctx
}
