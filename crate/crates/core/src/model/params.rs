//! Parameter container and Xavier-uniform initialization.

use crate::rng::Rng;

use super::scalar::Scalar;
use super::tensor::Matrix;
use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub ln1_g: Vec<S>,
    pub ln1_b: Vec<S>,
    pub wq: Matrix<S>,
    pub bq: Vec<S>,
    pub wk: Matrix<S>,
    pub bk: Vec<S>,
    pub wv: Matrix<S>,
    pub bv: Vec<S>,
    pub wo: Matrix<S>,
    pub bo: Vec<S>,
    pub ln2_g: Vec<S>,
    pub ln2_b: Vec<S>,
    pub w1: Matrix<S>,
    pub b1: Vec<S>,
    pub w2: Matrix<S>,
    pub b2: Vec<S>,
}

/// All weights of the model. The same shape doubles as the gradient
/// container. Tensor traversal order is fixed and shared by the optimizer,
/// the checkpoint format, and the gradient checker.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    /// A: vocab_size x d token embeddings.
    pub token_emb: Matrix<S>,
    /// B: max_tokens x d token-position embeddings.
    pub pos_emb: Matrix<S>,
    /// C: 3 x d token-type embeddings ([CLS], key, value).
    pub type_emb: Matrix<S>,
    /// D: max_pages x d page-position embeddings.
    pub page_emb: Matrix<S>,
    pub layers: Vec<LayerParams<S>>,
    pub ln_f_g: Vec<S>,
    pub ln_f_b: Vec<S>,
    /// d x 5 class projection.
    pub head_w: Matrix<S>,
    pub head_b: Vec<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let ffn = d * config.ffn_mult;
        let layer = || LayerParams {
            ln1_g: vec![S::ZERO; d],
            ln1_b: vec![S::ZERO; d],
            wq: Matrix::zeros(d, d),
            bq: vec![S::ZERO; d],
            wk: Matrix::zeros(d, d),
            bk: vec![S::ZERO; d],
            wv: Matrix::zeros(d, d),
            bv: vec![S::ZERO; d],
            wo: Matrix::zeros(d, d),
            bo: vec![S::ZERO; d],
            ln2_g: vec![S::ZERO; d],
            ln2_b: vec![S::ZERO; d],
            w1: Matrix::zeros(d, ffn),
            b1: vec![S::ZERO; ffn],
            w2: Matrix::zeros(ffn, d),
            b2: vec![S::ZERO; d],
        };
        Self {
            token_emb: Matrix::zeros(config.vocab_size, d),
            pos_emb: Matrix::zeros(config.max_tokens, d),
            type_emb: Matrix::zeros(3, d),
            page_emb: Matrix::zeros(config.max_pages, d),
            layers: (0..config.layers).map(|_| layer()).collect(),
            ln_f_g: vec![S::ZERO; d],
            ln_f_b: vec![S::ZERO; d],
            head_w: Matrix::zeros(d, 5),
            head_b: vec![S::ZERO; 5],
        }
    }

    /// Named views over every tensor, in the declared order.
    pub fn tensors(&self) -> Vec<(String, &[S])> {
        let mut out: Vec<(String, &[S])> = vec![
            ("A".into(), &self.token_emb.data),
            ("B".into(), &self.pos_emb.data),
            ("Ct".into(), &self.type_emb.data),
            ("D".into(), &self.page_emb.data),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let name = |t: &str| format!("layer{i}.{t}");
            out.push((name("ln1_g"), &l.ln1_g));
            out.push((name("ln1_b"), &l.ln1_b));
            out.push((name("wq"), &l.wq.data));
            out.push((name("bq"), &l.bq));
            out.push((name("wk"), &l.wk.data));
            out.push((name("bk"), &l.bk));
            out.push((name("wv"), &l.wv.data));
            out.push((name("bv"), &l.bv));
            out.push((name("wo"), &l.wo.data));
            out.push((name("bo"), &l.bo));
            out.push((name("ln2_g"), &l.ln2_g));
            out.push((name("ln2_b"), &l.ln2_b));
            out.push((name("w1"), &l.w1.data));
            out.push((name("b1"), &l.b1));
            out.push((name("w2"), &l.w2.data));
            out.push((name("b2"), &l.b2));
        }
        out.push(("ln_f_g".into(), &self.ln_f_g));
        out.push(("ln_f_b".into(), &self.ln_f_b));
        out.push(("head_w".into(), &self.head_w.data));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [S])> {
        let mut out: Vec<(String, &mut [S])> = vec![
            ("A".into(), self.token_emb.data.as_mut_slice()),
            ("B".into(), self.pos_emb.data.as_mut_slice()),
            ("Ct".into(), self.type_emb.data.as_mut_slice()),
            ("D".into(), self.page_emb.data.as_mut_slice()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let name = |t: &str| format!("layer{i}.{t}");
            out.push((name("ln1_g"), l.ln1_g.as_mut_slice()));
            out.push((name("ln1_b"), l.ln1_b.as_mut_slice()));
            out.push((name("wq"), l.wq.data.as_mut_slice()));
            out.push((name("bq"), l.bq.as_mut_slice()));
            out.push((name("wk"), l.wk.data.as_mut_slice()));
            out.push((name("bk"), l.bk.as_mut_slice()));
            out.push((name("wv"), l.wv.data.as_mut_slice()));
            out.push((name("bv"), l.bv.as_mut_slice()));
            out.push((name("wo"), l.wo.data.as_mut_slice()));
            out.push((name("bo"), l.bo.as_mut_slice()));
            out.push((name("ln2_g"), l.ln2_g.as_mut_slice()));
            out.push((name("ln2_b"), l.ln2_b.as_mut_slice()));
            out.push((name("w1"), l.w1.data.as_mut_slice()));
            out.push((name("b1"), l.b1.as_mut_slice()));
            out.push((name("w2"), l.w2.data.as_mut_slice()));
            out.push((name("b2"), l.b2.as_mut_slice()));
        }
        out.push(("ln_f_g".into(), self.ln_f_g.as_mut_slice()));
        out.push(("ln_f_b".into(), self.ln_f_b.as_mut_slice()));
        out.push(("head_w".into(), self.head_w.data.as_mut_slice()));
        out.push(("head_b".into(), self.head_b.as_mut_slice()));
        out
    }

    /// self += other * scale, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: S) {
        let others = other.tensors();
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(others) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s * scale;
            }
        }
    }

    pub fn convert<T: Scalar>(&self) -> ModelParams<T> {
        let conv_vec = |v: &Vec<S>| v.iter().map(|x| T::from_f64(x.to_f64())).collect();
        ModelParams {
            token_emb: self.token_emb.map_to(),
            pos_emb: self.pos_emb.map_to(),
            type_emb: self.type_emb.map_to(),
            page_emb: self.page_emb.map_to(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: conv_vec(&l.ln1_g),
                    ln1_b: conv_vec(&l.ln1_b),
                    wq: l.wq.map_to(),
                    bq: conv_vec(&l.bq),
                    wk: l.wk.map_to(),
                    bk: conv_vec(&l.bk),
                    wv: l.wv.map_to(),
                    bv: conv_vec(&l.bv),
                    wo: l.wo.map_to(),
                    bo: conv_vec(&l.bo),
                    ln2_g: conv_vec(&l.ln2_g),
                    ln2_b: conv_vec(&l.ln2_b),
                    w1: l.w1.map_to(),
                    b1: conv_vec(&l.b1),
                    w2: l.w2.map_to(),
                    b2: conv_vec(&l.b2),
                })
                .collect(),
            ln_f_g: conv_vec(&self.ln_f_g),
            ln_f_b: conv_vec(&self.ln_f_b),
            head_w: self.head_w.map_to(),
            head_b: conv_vec(&self.head_b),
        }
    }
}

fn xavier_fill<S: Scalar>(m: &mut Matrix<S>, rng: &mut Rng) {
    let limit = (6.0 / (m.rows + m.cols) as f64).sqrt();
    for x in &mut m.data {
        *x = S::from_f64(rng.uniform(-limit, limit));
    }
}

/// Xavier-uniform weights, zero biases, LayerNorm gain 1 / bias 0.
/// Deterministic per `config.seed`.
pub fn init_params<S: Scalar>(config: &ModelConfig) -> ModelParams<S> {
    let mut rng = Rng::new(config.seed);
    let mut p = ModelParams::<S>::zeros(config);
    xavier_fill(&mut p.token_emb, &mut rng);
    xavier_fill(&mut p.pos_emb, &mut rng);
    xavier_fill(&mut p.type_emb, &mut rng);
    xavier_fill(&mut p.page_emb, &mut rng);
    for layer in &mut p.layers {
        layer.ln1_g.fill(S::ONE);
        xavier_fill(&mut layer.wq, &mut rng);
        xavier_fill(&mut layer.wk, &mut rng);
        xavier_fill(&mut layer.wv, &mut rng);
        xavier_fill(&mut layer.wo, &mut rng);
        layer.ln2_g.fill(S::ONE);
        xavier_fill(&mut layer.w1, &mut rng);
        xavier_fill(&mut layer.w2, &mut rng);
    }
    p.ln_f_g.fill(S::ONE);
    xavier_fill(&mut p.head_w, &mut rng);
    p
}
