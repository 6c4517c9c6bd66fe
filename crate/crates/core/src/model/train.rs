//! Adam training loop with validation-driven early stopping, grid search
//! over the tunable hyperparameters, and single-session prediction.

use serde::{Deserialize, Serialize};

use crate::classify::eval_report;
use crate::rng::{derive_seed, Rng};
use crate::session::{truncate_session, Corpus, IntentClass, Limits, Session, SplitTag};
use crate::vocab::{encode_structured, EncodedInput, Vocab};

use super::backward::loss_and_grad_inner;
use super::forward::{forward, softmax5};
use super::params::{init_params, ModelParams};
use super::scalar::Scalar;
use super::{ModelConfig, ModelError};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation weighted-F1
    /// improvement.
    pub patience: usize,
    pub limits: Limits,
    /// Optional (weighted precision, weighted recall) target; training
    /// stops as soon as validation meets both.
    pub val_target: Option<(f64, f64)>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 20,
            patience: 3,
            limits: Limits::default(),
            val_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_precision: f64,
    pub val_weighted_recall: f64,
    pub val_weighted_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

struct Adam<S> {
    m: ModelParams<S>,
    v: ModelParams<S>,
    t: u32,
}

impl<S: Scalar> Adam<S> {
    fn new(config: &ModelConfig) -> Self {
        Self {
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams<S>, grads: &ModelParams<S>, lr: f64) {
        self.t += 1;
        let lr_t = lr * (1.0 - ADAM_BETA2.powi(self.t as i32)).sqrt()
            / (1.0 - ADAM_BETA1.powi(self.t as i32));
        let (b1, b2) = (S::from_f64(ADAM_BETA1), S::from_f64(ADAM_BETA2));
        let (one_b1, one_b2) = (S::from_f64(1.0 - ADAM_BETA1), S::from_f64(1.0 - ADAM_BETA2));
        let (lr_t, eps) = (S::from_f64(lr_t), S::from_f64(ADAM_EPS));

        let g_tensors = grads.tensors();
        let m_tensors = self.m.tensors_mut();
        let v_tensors = self.v.tensors_mut();
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .tensors_mut()
            .into_iter()
            .zip(g_tensors)
            .zip(m_tensors.into_iter().zip(v_tensors))
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

fn encode_split(
    corpus: &Corpus,
    tag: SplitTag,
    name: &'static str,
    vocab: &Vocab,
    config: &ModelConfig,
    limits: &Limits,
) -> Result<Vec<(EncodedInput, IntentClass)>, ModelError> {
    let items: Vec<_> = corpus.split(tag).collect();
    if items.is_empty() {
        return Err(ModelError::MissingSplit(name));
    }
    items
        .into_iter()
        .map(|item| {
            let truncated = truncate_session(&item.session, limits)?;
            let enc = encode_structured(&truncated, vocab, config.max_tokens, config.max_pages)?;
            Ok((enc, item.class))
        })
        .collect()
}

fn argmax_class(probs: &[f64; 5]) -> IntentClass {
    let mut best = 0;
    for c in 1..5 {
        if probs[c] > probs[best] {
            best = c;
        }
    }
    IntentClass::from_index(best).unwrap()
}

fn eval_encoded<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    data: &[(EncodedInput, IntentClass)],
) -> Result<crate::classify::ClassReport, ModelError> {
    let mut preds = Vec::with_capacity(data.len());
    let mut golds = Vec::with_capacity(data.len());
    for (input, gold) in data {
        let trace = forward(params, config, input)?;
        preds.push(Some(argmax_class(&softmax5(&trace.logits))));
        golds.push(*gold);
    }
    eval_report(&preds, &golds).map_err(|e| ModelError::Config(e.to_string()))
}

/// Trains on the corpus's train split, evaluating on the val split each
/// epoch. Shuffle and dropout streams are derived from `config.seed`, so
/// a fixed seed reproduces the history exactly. Returns the parameters of
/// the best validation epoch.
pub fn train<S: Scalar>(
    params: ModelParams<S>,
    config: &ModelConfig,
    opts: &TrainOptions,
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<(ModelParams<S>, TrainHistory), ModelError> {
    config.validate()?;
    if opts.limits.token_budget > config.max_tokens || opts.limits.max_pages > config.max_pages {
        return Err(ModelError::Config(format!(
            "limits ({}, {} pages) exceed model budgets ({}, {} pages)",
            opts.limits.token_budget, opts.limits.max_pages, config.max_tokens, config.max_pages
        )));
    }
    let train_data = encode_split(corpus, SplitTag::Train, "train", vocab, config, &opts.limits)?;
    let val_data = encode_split(corpus, SplitTag::Val, "val", vocab, config, &opts.limits)?;

    let mut params = params;
    let mut adam = Adam::new(config);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best_params = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut global_step = 0u64;

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        Rng::new(derive_seed(config.seed ^ 0x5eed, epoch as u64)).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<(EncodedInput, IntentClass)> =
                chunk.iter().map(|&i| train_data[i].clone()).collect();
            let dropout_seed = derive_seed(config.seed ^ 0xd409, global_step);
            let (loss, grads) =
                loss_and_grad_inner(&params, config, &batch, Some(dropout_seed))?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    step: global_step as usize,
                });
            }
            adam.step(&mut params, &grads, opts.lr);
            loss_sum += loss;
            batches += 1;
            global_step += 1;
        }

        let val = eval_encoded(&params, config, &val_data)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_weighted_precision: val.weighted_precision,
            val_weighted_recall: val.weighted_recall,
            val_weighted_f1: val.weighted_f1,
            val_accuracy: val.accuracy,
        };
        let f1 = stats.val_weighted_f1;
        let target_met = opts
            .val_target
            .map(|(p, r)| val.weighted_precision >= p && val.weighted_recall >= r)
            .unwrap_or(false);
        history.epochs.push(stats);

        if f1 > best_f1 {
            best_f1 = f1;
            best_params = params.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        if target_met || stale > opts.patience {
            break;
        }
    }

    Ok((best_params, history))
}

/// Truncate, encode, classify. Ties break toward the lowest class index.
pub fn predict<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    session: &Session,
    vocab: &Vocab,
    limits: &Limits,
) -> Result<(IntentClass, [f64; 5]), ModelError> {
    let truncated = truncate_session(session, limits)?;
    let enc = encode_structured(&truncated, vocab, config.max_tokens, config.max_pages)?;
    let trace = forward(params, config, &enc)?;
    let probs = softmax5(&trace.logits);
    Ok((argmax_class(&probs), probs))
}

/// Hyperparameter grid; empty dimensions fall back to the base config
/// value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GridSpec {
    pub lr: Vec<f64>,
    pub layers: Vec<usize>,
    pub d_model: Vec<usize>,
    pub window: Vec<usize>,
    pub dropout: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub layers: usize,
    pub d_model: usize,
    pub window: usize,
    pub dropout: f64,
    pub val_weighted_f1: f64,
    pub val_weighted_precision: f64,
    pub val_weighted_recall: f64,
    pub best_epoch: usize,
}

/// Trains every grid cell and selects by validation weighted F1 (first
/// cell wins ties). Returns the winning config and the full result table.
pub fn grid_search<S: Scalar>(
    base: &ModelConfig,
    grid: &GridSpec,
    opts: &TrainOptions,
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<(ModelConfig, Vec<GridCell>), ModelError> {
    let or_base = |values: &[f64], base: f64| -> Vec<f64> {
        if values.is_empty() {
            vec![base]
        } else {
            values.to_vec()
        }
    };
    let or_base_usize = |values: &[usize], base: usize| -> Vec<usize> {
        if values.is_empty() {
            vec![base]
        } else {
            values.to_vec()
        }
    };
    let lrs = or_base(&grid.lr, opts.lr);
    let layer_counts = or_base_usize(&grid.layers, base.layers);
    let dims = or_base_usize(&grid.d_model, base.d_model);
    let windows = or_base_usize(&grid.window, base.window);
    let dropouts = or_base(&grid.dropout, base.dropout);

    let mut table = Vec::new();
    let mut best: Option<(usize, ModelConfig)> = None;
    for &lr in &lrs {
        for &layers in &layer_counts {
            for &d_model in &dims {
                for &window in &windows {
                    for &dropout in &dropouts {
                        let config = ModelConfig {
                            layers,
                            d_model,
                            window,
                            dropout,
                            ..base.clone()
                        };
                        let cell_opts = TrainOptions {
                            lr,
                            ..opts.clone()
                        };
                        let init = init_params::<S>(&config);
                        let (_, history) = train(init, &config, &cell_opts, corpus, vocab)?;
                        let at_best = &history.epochs[history.best_epoch];
                        table.push(GridCell {
                            lr,
                            layers,
                            d_model,
                            window,
                            dropout,
                            val_weighted_f1: at_best.val_weighted_f1,
                            val_weighted_precision: at_best.val_weighted_precision,
                            val_weighted_recall: at_best.val_weighted_recall,
                            best_epoch: history.best_epoch,
                        });
                        let idx = table.len() - 1;
                        let better = best
                            .as_ref()
                            .map(|(b, _)| table[idx].val_weighted_f1 > table[*b].val_weighted_f1)
                            .unwrap_or(true);
                        if better {
                            best = Some((idx, config));
                        }
                    }
                }
            }
        }
    }
    let (_, config) = best.expect("grid has at least one cell");
    Ok((config, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionImpl;
    use crate::synth::{generate_corpus, GenSpec, PageCountDist};
    use crate::vocab::build_vocab;
    use crate::session::split_corpus;

    pub(crate) fn small_setup(
        n: usize,
        seed: u64,
    ) -> (Corpus, Vocab, ModelConfig, TrainOptions) {
        let spec = GenSpec {
            n_sessions: n,
            seed,
            page_count: PageCountDist {
                log_mean: 2.2,
                log_std: 0.4,
                min: 5,
                cap: 20,
            },
            ..GenSpec::default()
        };
        let corpus = split_corpus(&generate_corpus(&spec), (0.8, 0.1, 0.1), 3).unwrap();
        let vocab = build_vocab(&corpus, 1);
        let config = ModelConfig {
            vocab_size: vocab.size(),
            d_model: 32,
            max_tokens: 128,
            max_pages: 16,
            layers: 1,
            heads: 4,
            window: 8,
            dropout: 0.0,
            attention_impl: AttentionImpl::Banded,
            seed: 11,
            ..ModelConfig::default()
        };
        let opts = TrainOptions {
            batch_size: 8,
            epochs: 3,
            limits: Limits {
                max_pages: 16,
                max_attr_tokens: 8,
                token_budget: 128,
            },
            ..TrainOptions::default()
        };
        (corpus, vocab, config, opts)
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (corpus, vocab, config, mut opts) = small_setup(40, 2);
        opts.lr = 0.0;
        opts.epochs = 1;
        let init = init_params::<f64>(&config);
        let (out, history) = train(init.clone(), &config, &opts, &corpus, &vocab).unwrap();
        assert_eq!(history.epochs.len(), 1);
        // Best checkpoint is epoch 0 with untouched weights.
        assert_eq!(out, init);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (corpus, vocab, mut config, opts) = small_setup(40, 4);
        config.dropout = 0.1;
        let run = || {
            let init = init_params::<f64>(&config);
            train(init, &config, &opts, &corpus, &vocab).unwrap()
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn training_reduces_loss_on_planted_signal() {
        let (corpus, vocab, config, mut opts) = small_setup(80, 6);
        opts.epochs = 6;
        let init = init_params::<f32>(&config);
        let (_, history) = train(init, &config, &opts, &corpus, &vocab).unwrap();
        let first = history.epochs.first().unwrap().train_loss;
        let last = history.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not drop: {first} -> {last}");
    }

    #[test]
    fn missing_split_is_reported() {
        let (corpus, vocab, config, opts) = small_setup(20, 7);
        let untagged = Corpus::from_items(corpus.items().cloned().collect());
        let init = init_params::<f64>(&config);
        assert!(matches!(
            train(init, &config, &opts, &untagged, &vocab),
            Err(ModelError::MissingSplit("train"))
        ));
    }

    #[test]
    fn predict_argmax_and_tie_rules() {
        assert_eq!(
            argmax_class(&[0.1, 0.6, 0.1, 0.1, 0.1]),
            IntentClass::Avl
        );
        // Exact tie between the first two: lowest canonical index wins.
        assert_eq!(
            argmax_class(&[0.3, 0.3, 0.2, 0.1, 0.1]),
            IntentClass::Ins
        );
    }

    #[test]
    fn argmax_is_invariant_to_logit_shifts() {
        use crate::model::forward::softmax5;
        let mut rng = crate::rng::Rng::new(88);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..5).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let shift = rng.uniform(-10.0, 10.0);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            assert_eq!(
                argmax_class(&softmax5(&logits)),
                argmax_class(&softmax5(&shifted))
            );
        }
    }

    #[test]
    fn grid_degenerate_cell_and_dominated_lr() {
        let (corpus, vocab, config, mut opts) = small_setup(60, 9);
        opts.epochs = 2;
        let single = GridSpec::default();
        let (best, table) = grid_search::<f32>(&config, &single, &opts, &corpus, &vocab).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(best.d_model, config.d_model);

        let grid = GridSpec {
            lr: vec![0.0, 1e-3],
            ..GridSpec::default()
        };
        let (best, table) = grid_search::<f32>(&config, &grid, &opts, &corpus, &vocab).unwrap();
        assert_eq!(table.len(), 2);
        // Selection must equal the argmax over the emitted table.
        let argmax = table
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1.val_weighted_f1
                    .partial_cmp(&b.1.val_weighted_f1)
                    .unwrap()
                    .then(b.0.cmp(&a.0))
            })
            .unwrap()
            .1;
        assert_eq!(best.layers, argmax.layers);
        let zero_cell = table.iter().find(|c| c.lr == 0.0).unwrap();
        let live_cell = table.iter().find(|c| c.lr == 1e-3).unwrap();
        assert!(live_cell.val_weighted_f1 >= zero_cell.val_weighted_f1);
    }
}
