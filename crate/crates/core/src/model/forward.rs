//! Forward pass. Embeddings are summed per token, run through
//! pre-LayerNorm transformer blocks, and the final-LayerNormed [CLS]
//! representation is projected to the five class logits. Every
//! intermediate needed for exact backprop is cached in the trace.

use crate::rng::Rng;
use crate::vocab::EncodedInput;

use super::attention::{head_attention, AttnPattern};
use super::params::ModelParams;
use super::scalar::Scalar;
use super::tensor::{add_bias, matmul, Matrix};
use super::{AttentionImpl, ModelConfig, ModelError, ModelVariant};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4);
    let a = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (S::ONE + u.tanh())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64(0.797_884_560_802_865_4);
    let a = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (S::ONE + t) + half * x * (S::ONE - t * t) * c * (S::ONE + three * a * x * x)
}

/// Row-wise LayerNorm. Returns (normalized-pre-gain, 1/std per row).
pub(crate) fn layer_norm<S: Scalar>(
    x: &Matrix<S>,
    gain: &[S],
    bias: &[S],
) -> (Matrix<S>, Matrix<S>, Vec<S>) {
    let mut y = Matrix::zeros(x.rows, x.cols);
    let mut xhat = Matrix::zeros(x.rows, x.cols);
    let mut rstd = Vec::with_capacity(x.rows);
    let inv_n = S::ONE / S::from_f64(x.cols as f64);
    for r in 0..x.rows {
        let row = x.row(r);
        let mut mean = S::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_n;
        let mut var = S::ZERO;
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_n;
        let rs = S::ONE / (var + S::from_f64(LN_EPS)).sqrt();
        rstd.push(rs);
        let xh_row = xhat.row_mut(r);
        for (xh, &v) in xh_row.iter_mut().zip(row) {
            *xh = (v - mean) * rs;
        }
        for ((yv, xh), (g, b)) in y
            .row_mut(r)
            .iter_mut()
            .zip(xhat.row(r))
            .zip(gain.iter().zip(bias))
        {
            *yv = *g * *xh + *b;
        }
    }
    (y, xhat, rstd)
}

fn linear<S: Scalar>(x: &Matrix<S>, w: &Matrix<S>, b: &[S]) -> Matrix<S> {
    let mut y = matmul(x, w);
    add_bias(&mut y, b);
    y
}

/// Inverted-dropout mask: entries are 0 or 1/(1-p).
fn dropout_mask<S: Scalar>(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Matrix<S> {
    let keep = S::from_f64(1.0 / (1.0 - p));
    Matrix {
        rows,
        cols,
        data: (0..rows * cols)
            .map(|_| if rng.unit_f64() < p { S::ZERO } else { keep })
            .collect(),
    }
}

fn apply_mask<S: Scalar>(x: &mut Matrix<S>, mask: &Matrix<S>) {
    for (v, m) in x.data.iter_mut().zip(&mask.data) {
        *v *= *m;
    }
}

#[derive(Debug, Clone)]
pub struct LayerTrace<S> {
    pub x_in: Matrix<S>,
    pub xhat1: Matrix<S>,
    pub rstd1: Vec<S>,
    pub y1: Matrix<S>,
    pub q: Matrix<S>,
    pub k: Matrix<S>,
    pub v: Matrix<S>,
    /// Attention weights per head over each row's stored columns.
    pub probs: Vec<Vec<Vec<S>>>,
    pub ctx: Matrix<S>,
    pub attn_mask: Option<Matrix<S>>,
    pub x_mid: Matrix<S>,
    pub xhat2: Matrix<S>,
    pub rstd2: Vec<S>,
    pub y2: Matrix<S>,
    pub h_pre: Matrix<S>,
    pub h_act: Matrix<S>,
    pub ffn_mask: Option<Matrix<S>>,
    pub x_out: Matrix<S>,
}

/// Cached activations of one forward pass, sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    pub input: EncodedInput,
    pub pattern: AttnPattern,
    pub x0: Matrix<S>,
    pub layers: Vec<LayerTrace<S>>,
    pub xhat_f: Vec<S>,
    pub rstd_f: S,
    pub h_cls: Vec<S>,
    pub logits: Vec<S>,
}

fn validate_input(config: &ModelConfig, input: &EncodedInput) -> Result<(), ModelError> {
    let len = input.len();
    if len == 0 {
        return Err(ModelError::InputRange("empty input".into()));
    }
    if len > config.max_tokens {
        return Err(ModelError::InputRange(format!(
            "sequence length {len} exceeds max_tokens {}",
            config.max_tokens
        )));
    }
    if input.token_positions.len() != len
        || input.token_types.len() != len
        || input.page_positions.len() != len
    {
        return Err(ModelError::InputRange("parallel arrays differ in length".into()));
    }
    for (i, &id) in input.token_ids.iter().enumerate() {
        if id >= config.vocab_size {
            return Err(ModelError::InputRange(format!(
                "token id {id} at position {i} >= vocab_size {}",
                config.vocab_size
            )));
        }
    }
    if let Some(&t) = input.token_types.iter().find(|&&t| t > 2) {
        return Err(ModelError::InputRange(format!("token type {t} > 2")));
    }
    if let Some(&p) = input.page_positions.iter().find(|&&p| p >= config.max_pages) {
        return Err(ModelError::InputRange(format!(
            "page position {p} >= max_pages {}",
            config.max_pages
        )));
    }
    Ok(())
}

pub(crate) fn forward_inner<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    input: &EncodedInput,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<ForwardTrace<S>, ModelError> {
    validate_input(config, input)?;
    let len = input.len();
    let d = config.d_model;
    let heads = config.heads;
    let hd = config.head_dim();
    let with_extras = config.variant == ModelVariant::LongformerPlus;
    let pattern = AttnPattern::new(
        len,
        config.attention_mode,
        config.window,
        config.attention_impl == AttentionImpl::MaskedFull,
    );

    // e_i = A[tok_i] + B[i] (+ C[type_i] + D[page_i] in the plus variant)
    let mut x0 = Matrix::zeros(len, d);
    for i in 0..len {
        let row = x0.row_mut(i);
        row.copy_from_slice(params.token_emb.row(input.token_ids[i]));
        for (x, b) in row.iter_mut().zip(params.pos_emb.row(i)) {
            *x += *b;
        }
        if with_extras {
            for (x, c) in row
                .iter_mut()
                .zip(params.type_emb.row(input.token_types[i] as usize))
            {
                *x += *c;
            }
            for (x, pg) in row
                .iter_mut()
                .zip(params.page_emb.row(input.page_positions[i]))
            {
                *x += *pg;
            }
        }
    }

    let mut layers = Vec::with_capacity(config.layers);
    let mut x = x0.clone();
    for lp in &params.layers {
        let x_in = x;
        let (y1, xhat1, rstd1) = layer_norm(&x_in, &lp.ln1_g, &lp.ln1_b);
        let q = linear(&y1, &lp.wq, &lp.bq);
        let k = linear(&y1, &lp.wk, &lp.bk);
        let v = linear(&y1, &lp.wv, &lp.bv);

        let mut ctx = Matrix::zeros(len, d);
        let probs: Vec<Vec<Vec<S>>> = (0..heads)
            .map(|h| head_attention(&pattern, &q, &k, &v, h * hd, hd, &mut ctx))
            .collect();

        let mut attn_out = linear(&ctx, &lp.wo, &lp.bo);
        let attn_mask = dropout_rng.as_deref_mut().map(|rng| {
            let m = dropout_mask(len, d, config.dropout, rng);
            apply_mask(&mut attn_out, &m);
            m
        });
        let mut x_mid = x_in.clone();
        for (xm, a) in x_mid.data.iter_mut().zip(&attn_out.data) {
            *xm += *a;
        }

        let (y2, xhat2, rstd2) = layer_norm(&x_mid, &lp.ln2_g, &lp.ln2_b);
        let h_pre = linear(&y2, &lp.w1, &lp.b1);
        let mut h_act = h_pre.clone();
        for v in &mut h_act.data {
            *v = gelu(*v);
        }
        let mut ffn_out = linear(&h_act, &lp.w2, &lp.b2);
        let ffn_mask = dropout_rng.as_deref_mut().map(|rng| {
            let m = dropout_mask(len, d, config.dropout, rng);
            apply_mask(&mut ffn_out, &m);
            m
        });
        let mut x_out = x_mid.clone();
        for (xo, f) in x_out.data.iter_mut().zip(&ffn_out.data) {
            *xo += *f;
        }

        layers.push(LayerTrace {
            x_in,
            xhat1,
            rstd1,
            y1,
            q,
            k,
            v,
            probs,
            ctx,
            attn_mask,
            x_mid,
            xhat2,
            rstd2,
            y2,
            h_pre,
            h_act,
            ffn_mask,
            x_out: x_out.clone(),
        });
        x = x_out;
    }

    // Final LayerNorm on the [CLS] row only; no other position feeds the head.
    let cls = Matrix::from_vec(1, d, x.row(0).to_vec());
    let (h_cls_m, xhat_f_m, rstd_f) = layer_norm(&cls, &params.ln_f_g, &params.ln_f_b);
    let h_cls = h_cls_m.row(0).to_vec();
    let xhat_f = xhat_f_m.row(0).to_vec();

    let mut logits = params.head_b.clone();
    for (t, &h) in h_cls.iter().enumerate() {
        for (l, w) in logits.iter_mut().zip(params.head_w.row(t)) {
            *l += h * *w;
        }
    }

    Ok(ForwardTrace {
        input: input.clone(),
        pattern,
        x0,
        layers,
        xhat_f,
        rstd_f: rstd_f[0],
        h_cls,
        logits,
    })
}

/// Evaluation-mode forward pass (dropout disabled).
pub fn forward<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    input: &EncodedInput,
) -> Result<ForwardTrace<S>, ModelError> {
    forward_inner(params, config, input, None)
}

/// Numerically stable softmax of the five logits, in f64.
pub fn softmax5<S: Scalar>(logits: &[S]) -> [f64; 5] {
    assert_eq!(logits.len(), 5);
    let vals: Vec<f64> = logits.iter().map(|l| l.to_f64()).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut out = [0.0; 5];
    for (o, e) in out.iter_mut().zip(exps) {
        *o = e / sum;
    }
    out
}
