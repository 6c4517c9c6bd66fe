//! Exact analytic gradients of the mean batch cross-entropy.

use rayon::prelude::*;

use crate::rng::{derive_seed, Rng};
use crate::session::IntentClass;
use crate::vocab::EncodedInput;

use super::attention::head_attention_backward;
use super::forward::{forward_inner, gelu_grad, softmax5, ForwardTrace};
use super::params::ModelParams;
use super::scalar::Scalar;
use super::tensor::{col_sum_acc, matmul_a_bt_acc, matmul_at_b_acc, Matrix};
use super::{ModelConfig, ModelError, ModelVariant};

/// LayerNorm backward for all rows. Accumulates gain/bias gradients and
/// returns the input gradient.
fn layer_norm_backward<S: Scalar>(
    dy: &Matrix<S>,
    xhat: &Matrix<S>,
    rstd: &[S],
    gain: &[S],
    dgain: &mut [S],
    dbias: &mut [S],
) -> Matrix<S> {
    let n = dy.cols;
    let inv_n = S::ONE / S::from_f64(n as f64);
    let mut dx = Matrix::zeros(dy.rows, n);
    for r in 0..dy.rows {
        let dy_row = dy.row(r);
        let xh_row = xhat.row(r);
        let mut m1 = S::ZERO;
        let mut m2 = S::ZERO;
        for ((dg, db), ((&dyv, &xh), &g)) in dgain
            .iter_mut()
            .zip(dbias.iter_mut())
            .zip(dy_row.iter().zip(xh_row).zip(gain))
        {
            *dg += dyv * xh;
            *db += dyv;
            let dxhat = dyv * g;
            m1 += dxhat;
            m2 += dxhat * xh;
        }
        m1 *= inv_n;
        m2 *= inv_n;
        let rs = rstd[r];
        for ((dxv, (&dyv, &xh)), &g) in dx
            .row_mut(r)
            .iter_mut()
            .zip(dy_row.iter().zip(xh_row))
            .zip(gain)
        {
            *dxv = rs * (dyv * g - m1 - xh * m2);
        }
    }
    dx
}

/// dY of a linear layer y = x @ w + b: accumulates dw and db, returns dx.
fn linear_backward<S: Scalar>(
    x: &Matrix<S>,
    w: &Matrix<S>,
    dy: &Matrix<S>,
    dw: &mut Matrix<S>,
    db: &mut [S],
) -> Matrix<S> {
    matmul_at_b_acc(x, dy, dw);
    col_sum_acc(dy, db);
    let mut dx = Matrix::zeros(dy.rows, w.rows);
    matmul_a_bt_acc(dy, w, &mut dx);
    dx
}

fn apply_mask_grad<S: Scalar>(dy: &Matrix<S>, mask: Option<&Matrix<S>>) -> Matrix<S> {
    let mut out = dy.clone();
    if let Some(m) = mask {
        for (v, g) in out.data.iter_mut().zip(&m.data) {
            *v *= *g;
        }
    }
    out
}

/// Cross-entropy of one trace plus full parameter gradients. Gradients
/// accumulate into `grads` with weight `scale`.
fn backward_example<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    trace: &ForwardTrace<S>,
    gold: IntentClass,
    grads: &mut ModelParams<S>,
    scale: S,
) -> f64 {
    let d = config.d_model;
    let hd = config.head_dim();
    let len = trace.input.len();
    let probs = softmax5(&trace.logits);
    let loss = -(probs[gold.index()].max(f64::MIN_POSITIVE)).ln();

    let mut dlogits = [S::ZERO; 5];
    for (c, dl) in dlogits.iter_mut().enumerate() {
        let indicator = if c == gold.index() { 1.0 } else { 0.0 };
        *dl = S::from_f64(probs[c] - indicator) * scale;
    }

    // Head projection.
    let mut dh_cls = vec![S::ZERO; d];
    for (t, (&h, dh)) in trace.h_cls.iter().zip(dh_cls.iter_mut()).enumerate() {
        let w_row = params.head_w.row(t);
        let g_row = grads.head_w.row_mut(t);
        for c in 0..5 {
            g_row[c] += h * dlogits[c];
            *dh += w_row[c] * dlogits[c];
        }
    }
    for (gb, dl) in grads.head_b.iter_mut().zip(&dlogits) {
        *gb += *dl;
    }

    // Final LayerNorm over the [CLS] row only.
    let dy_f = Matrix::from_vec(1, d, dh_cls);
    let xhat_f = Matrix::from_vec(1, d, trace.xhat_f.clone());
    let dx_cls = layer_norm_backward(
        &dy_f,
        &xhat_f,
        &[trace.rstd_f],
        &params.ln_f_g,
        &mut grads.ln_f_g,
        &mut grads.ln_f_b,
    );
    let mut dx = Matrix::zeros(len, d);
    dx.row_mut(0).copy_from_slice(dx_cls.row(0));

    for (li, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        let gl = &mut grads.layers[li];

        // FFN branch: x_out = x_mid + drop(ffn_out)
        let dffn = apply_mask_grad(&dx, lt.ffn_mask.as_ref());
        let dh_act = linear_backward(&lt.h_act, &lp.w2, &dffn, &mut gl.w2, &mut gl.b2);
        let mut dh_pre = dh_act;
        for (g, &pre) in dh_pre.data.iter_mut().zip(&lt.h_pre.data) {
            *g *= gelu_grad(pre);
        }
        let dy2 = linear_backward(&lt.y2, &lp.w1, &dh_pre, &mut gl.w1, &mut gl.b1);
        let dln2 = layer_norm_backward(
            &dy2,
            &lt.xhat2,
            &lt.rstd2,
            &lp.ln2_g,
            &mut gl.ln2_g,
            &mut gl.ln2_b,
        );
        let mut dx_mid = dx;
        for (a, b) in dx_mid.data.iter_mut().zip(&dln2.data) {
            *a += *b;
        }

        // Attention branch: x_mid = x_in + drop(attn_out)
        let dattn = apply_mask_grad(&dx_mid, lt.attn_mask.as_ref());
        let dctx = linear_backward(&lt.ctx, &lp.wo, &dattn, &mut gl.wo, &mut gl.bo);
        let mut dq = Matrix::zeros(len, d);
        let mut dk = Matrix::zeros(len, d);
        let mut dv = Matrix::zeros(len, d);
        for (h, head_probs) in lt.probs.iter().enumerate() {
            head_attention_backward(
                &trace.pattern,
                head_probs,
                &lt.q,
                &lt.k,
                &lt.v,
                h * hd,
                hd,
                &dctx,
                &mut dq,
                &mut dk,
                &mut dv,
            );
        }
        let mut dy1 = linear_backward(&lt.y1, &lp.wq, &dq, &mut gl.wq, &mut gl.bq);
        let dy1_k = linear_backward(&lt.y1, &lp.wk, &dk, &mut gl.wk, &mut gl.bk);
        let dy1_v = linear_backward(&lt.y1, &lp.wv, &dv, &mut gl.wv, &mut gl.bv);
        for ((a, b), c) in dy1.data.iter_mut().zip(&dy1_k.data).zip(&dy1_v.data) {
            *a += *b + *c;
        }
        let dln1 = layer_norm_backward(
            &dy1,
            &lt.xhat1,
            &lt.rstd1,
            &lp.ln1_g,
            &mut gl.ln1_g,
            &mut gl.ln1_b,
        );
        dx = dx_mid;
        for (a, b) in dx.data.iter_mut().zip(&dln1.data) {
            *a += *b;
        }
    }

    // Scatter into the embedding tables; untouched rows keep zero grad.
    let with_extras = config.variant == ModelVariant::LongformerPlus;
    for i in 0..len {
        let dxi = dx.row(i);
        let tok = trace.input.token_ids[i];
        for (g, &v) in grads.token_emb.row_mut(tok).iter_mut().zip(dxi) {
            *g += v;
        }
        for (g, &v) in grads.pos_emb.row_mut(i).iter_mut().zip(dxi) {
            *g += v;
        }
        if with_extras {
            let ty = trace.input.token_types[i] as usize;
            for (g, &v) in grads.type_emb.row_mut(ty).iter_mut().zip(dxi) {
                *g += v;
            }
            let pg = trace.input.page_positions[i];
            for (g, &v) in grads.page_emb.row_mut(pg).iter_mut().zip(dxi) {
                *g += v;
            }
        }
    }

    loss
}

pub(crate) fn loss_and_grad_inner<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    batch: &[(EncodedInput, IntentClass)],
    dropout_seed: Option<u64>,
) -> Result<(f64, ModelParams<S>), ModelError> {
    assert!(!batch.is_empty(), "empty batch");
    let inv_b = S::from_f64(1.0 / batch.len() as f64);

    // Per-example gradients in parallel, reduced in batch order so sums
    // are deterministic regardless of thread count.
    let per_example: Vec<Result<(f64, ModelParams<S>), ModelError>> = batch
        .par_iter()
        .enumerate()
        .map(|(idx, (input, gold))| {
            let mut drop_rng = dropout_seed
                .filter(|_| config.dropout > 0.0)
                .map(|seed| Rng::new(derive_seed(seed, idx as u64)));
            let trace = forward_inner(params, config, input, drop_rng.as_mut())?;
            let mut grads = ModelParams::<S>::zeros(config);
            let loss = backward_example(params, config, &trace, *gold, &mut grads, inv_b);
            Ok((loss, grads))
        })
        .collect();

    let mut total = ModelParams::<S>::zeros(config);
    let mut loss_sum = 0.0;
    for item in per_example {
        let (loss, grads) = item?;
        loss_sum += loss;
        total.add_scaled(&grads, S::ONE);
    }
    Ok((loss_sum / batch.len() as f64, total))
}

/// Mean cross-entropy over the batch and its exact gradients, evaluation
/// mode (no dropout).
pub fn loss_and_grad<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    batch: &[(EncodedInput, IntentClass)],
) -> Result<(f64, ModelParams<S>), ModelError> {
    loss_and_grad_inner(params, config, batch, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;
    use crate::rng::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            d_model: 16,
            max_tokens: 24,
            max_pages: 6,
            layers: 2,
            heads: 4,
            window: 4,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn random_input(rng: &mut Rng, config: &ModelConfig, len: usize) -> EncodedInput {
        let mut token_ids = vec![1usize];
        let mut token_types = vec![0u8];
        let mut page_positions = vec![0usize];
        for i in 1..len {
            token_ids.push(4 + rng.below(config.vocab_size - 4));
            token_types.push(1 + rng.below(2) as u8);
            let prev = page_positions[i - 1];
            page_positions.push((prev + rng.below(2)).min(config.max_pages - 1));
        }
        EncodedInput {
            token_ids,
            token_positions: (0..len).collect(),
            token_types,
            page_positions,
        }
    }

    #[test]
    fn uniform_logits_give_ln5() {
        // Zero head weights and bias force uniform class probabilities.
        let cfg = tiny_config();
        let mut params = init_params::<f64>(&cfg);
        params.head_w.data.fill(0.0);
        params.head_b.fill(0.0);
        let mut rng = Rng::new(5);
        let batch = vec![(random_input(&mut rng, &cfg, 9), IntentClass::Pri)];
        let (loss, _) = loss_and_grad(&params, &cfg, &batch).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn unused_embedding_rows_get_zero_grad() {
        let cfg = tiny_config();
        let params = init_params::<f64>(&cfg);
        let input = EncodedInput {
            token_ids: vec![1, 5, 6],
            token_positions: vec![0, 1, 2],
            token_types: vec![0, 1, 2],
            page_positions: vec![0, 0, 0],
        };
        let batch = vec![(input, IntentClass::Wty)];
        let (_, grads) = loss_and_grad(&params, &cfg, &batch).unwrap();
        // Token 7 never appears; neither do positions >= 3 or pages >= 1.
        assert!(grads.token_emb.row(7).iter().all(|&g| g == 0.0));
        assert!(grads.token_emb.row(5).iter().any(|&g| g != 0.0));
        assert!(grads.pos_emb.row(3).iter().all(|&g| g == 0.0));
        assert!(grads.page_emb.row(1).iter().all(|&g| g == 0.0));
        assert!(grads.page_emb.row(0).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duplicated_example_keeps_mean_gradient() {
        let cfg = tiny_config();
        let params = init_params::<f64>(&cfg);
        let mut rng = Rng::new(6);
        let input = random_input(&mut rng, &cfg, 11);
        let single = vec![(input.clone(), IntentClass::Avl)];
        let doubled = vec![
            (input.clone(), IntentClass::Avl),
            (input, IntentClass::Avl),
        ];
        let (l1, g1) = loss_and_grad(&params, &cfg, &single).unwrap();
        let (l2, g2) = loss_and_grad(&params, &cfg, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((name, a), (_, b)) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn banded_and_masked_gradients_agree() {
        use crate::model::AttentionImpl;
        let masked_cfg = tiny_config();
        let banded_cfg = ModelConfig {
            attention_impl: AttentionImpl::Banded,
            ..masked_cfg.clone()
        };
        let params = init_params::<f64>(&masked_cfg);
        let mut rng = Rng::new(14);
        let batch = vec![
            (random_input(&mut rng, &masked_cfg, 15), IntentClass::Pri),
            (random_input(&mut rng, &masked_cfg, 20), IntentClass::Wty),
        ];
        let (loss_m, grads_m) = loss_and_grad(&params, &masked_cfg, &batch).unwrap();
        let (loss_b, grads_b) = loss_and_grad(&params, &banded_cfg, &batch).unwrap();
        assert!((loss_m - loss_b).abs() <= 1e-9, "{loss_m} vs {loss_b}");
        for ((name, a), (_, b)) in grads_m.tensors().iter().zip(grads_b.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!(
                    (x - y).abs() <= 1e-7 * (1.0 + x.abs().max(y.abs())),
                    "{name}: {x} vs {y}"
                );
            }
        }
    }

    /// Central-difference gradient check over every parameter tensor on a
    /// small configuration. This is the in-module smoke version; the
    /// acceptance suite runs the full-size criterion.
    #[test]
    fn gradients_match_central_differences() {
        let cfg = ModelConfig {
            vocab_size: 20,
            d_model: 8,
            max_tokens: 12,
            max_pages: 4,
            layers: 2,
            heads: 2,
            window: 4,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let params = init_params::<f64>(&cfg);
        let mut rng = Rng::new(7);
        let batch = vec![
            (random_input(&mut rng, &cfg, 7), IntentClass::Ins),
            (random_input(&mut rng, &cfg, 10), IntentClass::Ret),
        ];
        let (_, grads) = loss_and_grad(&params, &cfg, &batch).unwrap();

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let grad_tensors: Vec<(String, Vec<f64>)> = grads
            .tensors()
            .into_iter()
            .map(|(n, d)| (n, d.to_vec()))
            .collect();
        for (t_idx, (name, g)) in grad_tensors.iter().enumerate() {
            // Check a deterministic sample of entries per tensor to keep
            // this test quick; the acceptance run checks every entry.
            let stride = (g.len() / 10).max(1);
            for e_idx in (0..g.len()).step_by(stride) {
                let mut plus = params.clone();
                plus.tensors_mut()[t_idx].1[e_idx] += eps;
                let (lp, _) = loss_and_grad(&plus, &cfg, &batch).unwrap();
                let mut minus = params.clone();
                minus.tensors_mut()[t_idx].1[e_idx] -= eps;
                let (lm, _) = loss_and_grad(&minus, &cfg, &batch).unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = g[e_idx];
                // The 1e-6 floor absorbs central-difference cancellation
                // noise (~|L|*ulp/eps ~ 1e-11) on exactly-zero gradients
                // such as the key bias, which softmax shift-invariance
                // provably zeroes.
                let denom = (analytic.abs() + numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / denom;
                worst = worst.max(rel);
                assert!(
                    rel <= 1e-4,
                    "{name}[{e_idx}]: analytic {analytic} vs numeric {numeric} (rel {rel})"
                );
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }
}
