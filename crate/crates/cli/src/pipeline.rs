//! Stage orchestration. Every stage checks its prerequisites on disk
//! before touching the network and writes its artifact atomically
//! (temp file + rename) inside the run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use intent_core::classify::{
    build_classification_prompt, eval_report, match_text_to_class, ClassReport,
};
use intent_core::gateway::{run_mock, ChatMessage, ChatRequest, Gateway, MockServer};
use intent_core::generation::{
    build_generation_prompt, parse_candidates, ConditioningVariant, GenRequest,
};
use intent_core::judge::{agreement_stats, judge_pair, similar_at_m, JudgeConfig, JudgmentRecord};
use intent_core::model::{
    init_params, load_checkpoint, predict, save_checkpoint, train, ModelConfig, ModelParams,
    ModelVariant, Precision, Scalar,
};
use intent_core::rng::derive_seed;
use intent_core::session::{
    filter_min_pages, load_corpus, save_corpus, split_corpus, truncate_session, Corpus,
    IntentClass, LabeledSession, SplitTag,
};
use intent_core::synth::generate_corpus;
use intent_core::vocab::{build_vocab, Vocab};

use crate::config::RunConfig;
use crate::errors::CliError;
use crate::report::{ClassEvalArtifact, GenerationMetrics, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Train,
    ClassifyEval,
    Generate,
    Judge,
    Report,
}

pub const ALL_STAGES: [Stage; 6] = [
    Stage::Synth,
    Stage::Train,
    Stage::ClassifyEval,
    Stage::Generate,
    Stage::Judge,
    Stage::Report,
];

fn tmp_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes via a sibling temp file and rename so readers never observe a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn require(path: &Path, what: &str, produced_by: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Prereq(format!(
            "{what} not found at {}; run the {produced_by} stage first",
            path.display()
        )))
    }
}

fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Other(format!("serialization: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage]) -> Result<(), CliError> {
    for stage in stages {
        match stage {
            Stage::Synth => stage_synth(cfg)?,
            Stage::Train => stage_train(cfg)?,
            Stage::ClassifyEval => stage_classify_eval(cfg)?,
            Stage::Generate => stage_generate(cfg)?,
            Stage::Judge => stage_judge(cfg)?,
            Stage::Report => stage_report(cfg)?,
        }
    }
    Ok(())
}

fn stage_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = generate_corpus(&cfg.gen);
    let corpus = filter_min_pages(&corpus, cfg.min_pages);
    let tagged = split_corpus(&corpus, cfg.split_ratios, cfg.split_seed)?;

    let path = cfg.corpus_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_sibling(&path);
    save_corpus(&tagged, &tmp)?;
    fs::rename(&tmp, &path)?;
    println!(
        "synth: wrote {} sessions ({} train / {} val / {} test) to {}",
        tagged.len(),
        tagged.split(SplitTag::Train).count(),
        tagged.split(SplitTag::Val).count(),
        tagged.split(SplitTag::Test).count(),
        path.display()
    );
    Ok(())
}

fn train_with_precision<S: Scalar>(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<intent_core::model::TrainHistory, CliError> {
    let params = init_params::<S>(model_cfg);
    let (best, history) = train(params, model_cfg, &cfg.train, corpus, vocab)?;
    let ckpt = cfg.checkpoint_path();
    let tmp = tmp_sibling(&ckpt);
    save_checkpoint(&tmp, model_cfg, &best)?;
    fs::rename(&tmp, &ckpt)?;
    Ok(history)
}

fn stage_train(cfg: &RunConfig) -> Result<(), CliError> {
    require(&cfg.corpus_path(), "corpus", "synth")?;
    let corpus = load_corpus(cfg.corpus_path())?;
    let vocab = build_vocab(&corpus, cfg.vocab_min_freq);

    let vocab_path = cfg.vocab_path();
    if let Some(parent) = vocab_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_sibling(&vocab_path);
    vocab.save(&tmp)?;
    fs::rename(&tmp, &vocab_path)?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.size();
    let history = match model_cfg.precision {
        Precision::F32 => train_with_precision::<f32>(cfg, &model_cfg, &corpus, &vocab)?,
        Precision::F64 => train_with_precision::<f64>(cfg, &model_cfg, &corpus, &vocab)?,
    };
    write_atomic(&cfg.history_path(), &json_pretty(&history)?)?;
    let best = &history.epochs[history.best_epoch];
    println!(
        "train: {} epochs, best epoch {} (val weighted F1 {:.4}) -> {}",
        history.epochs.len(),
        history.best_epoch,
        best.val_weighted_f1,
        cfg.checkpoint_path().display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<(ModelConfig, ModelParams<f32>, Vocab), CliError> {
    require(&cfg.checkpoint_path(), "checkpoint", "train")?;
    require(&cfg.vocab_path(), "vocab", "train")?;
    let (model_cfg, params) = load_checkpoint(cfg.checkpoint_path())?;
    let vocab = Vocab::load(cfg.vocab_path())?;
    if vocab.size() != model_cfg.vocab_size {
        return Err(CliError::MetricParse(format!(
            "vocab file has {} tokens but the checkpoint was trained with {}",
            vocab.size(),
            model_cfg.vocab_size
        )));
    }
    Ok((model_cfg, params, vocab))
}

fn test_items(corpus: &Corpus) -> Result<Vec<&LabeledSession>, CliError> {
    let items: Vec<&LabeledSession> = corpus.split(SplitTag::Test).collect();
    if items.is_empty() {
        return Err(CliError::Prereq("corpus has no test split".into()));
    }
    Ok(items)
}

fn variant_label(v: ModelVariant) -> &'static str {
    match v {
        ModelVariant::LongformerPlus => "Long+",
        ModelVariant::Longformer => "Long",
    }
}

fn stage_classify_eval(cfg: &RunConfig) -> Result<(), CliError> {
    require(&cfg.corpus_path(), "corpus", "synth")?;
    let corpus = load_corpus(cfg.corpus_path())?;
    let (model_cfg, params, vocab) = load_model(cfg)?;
    let items = test_items(&corpus)?;

    let golds: Vec<IntentClass> = items.iter().map(|i| i.class).collect();
    let mut preds = Vec::with_capacity(items.len());
    for item in &items {
        let (class, _) = predict(&params, &model_cfg, &item.session, &vocab, &cfg.train.limits)?;
        preds.push(Some(class));
    }
    let model_report = eval_report(&preds, &golds)?;

    let baseline = match &cfg.baseline_model {
        Some(model_name) => {
            let gateway = Gateway::new(cfg.generator.gateway.clone())?;
            let mut base_preds = Vec::with_capacity(items.len());
            for item in &items {
                let truncated = truncate_session(&item.session, &cfg.train.limits)?;
                let prompt = build_classification_prompt(&truncated);
                let request = ChatRequest::new(
                    model_name,
                    vec![ChatMessage::user(prompt)],
                    cfg.generator.max_tokens,
                );
                let output = gateway.chat_complete(&request)?;
                base_preds.push(match_text_to_class(&output));
            }
            Some((model_name.clone(), eval_report(&base_preds, &golds)?))
        }
        None => None,
    };

    let artifact = ClassEvalArtifact {
        model_label: variant_label(model_cfg.variant).to_string(),
        model: model_report,
        baseline_label: baseline.as_ref().map(|(n, _)| n.clone()),
        baseline: baseline.map(|(_, r)| r),
    };
    write_atomic(&cfg.class_report_path(), &json_pretty(&artifact)?)?;
    let md_rows: Vec<(&str, &ClassReport)> = std::iter::once((
        artifact.model_label.as_str(),
        &artifact.model,
    ))
    .chain(
        artifact
            .baseline_label
            .as_deref()
            .zip(artifact.baseline.as_ref()),
    )
    .collect();
    write_atomic(
        &cfg.run_dir().join("class_report.md"),
        intent_core::classify::reports_to_markdown(&md_rows).as_bytes(),
    )?;
    println!(
        "classify-eval: weighted precision {:.4}, weighted recall {:.4} over {} test sessions",
        artifact.model.weighted_precision,
        artifact.model.weighted_recall,
        artifact.model.total
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRow {
    user_id: String,
    variant: String,
    candidates: Vec<String>,
}

fn stage_generate(cfg: &RunConfig) -> Result<(), CliError> {
    require(&cfg.corpus_path(), "corpus", "synth")?;
    // UsePredicted needs the classifier; check before any network call.
    let model = if cfg.variant == ConditioningVariant::UsePredicted {
        Some(load_model(cfg)?)
    } else {
        None
    };
    let corpus = load_corpus(cfg.corpus_path())?;
    let items = test_items(&corpus)?;

    let gateway = Gateway::new(cfg.generator.gateway.clone())?;
    let mut lines = Vec::with_capacity(items.len());
    for (idx, item) in items.iter().enumerate() {
        let truncated = truncate_session(&item.session, &cfg.train.limits)?;
        let class = match cfg.variant {
            ConditioningVariant::UsePredicted => {
                let (model_cfg, params, vocab) = model.as_ref().expect("checked above");
                let (class, _) =
                    predict(params, model_cfg, &item.session, vocab, &cfg.train.limits)?;
                Some(class)
            }
            ConditioningVariant::UseGroundTruth => Some(item.class),
            _ => None,
        };
        let request = GenRequest::new(
            truncated,
            cfg.variant,
            class,
            cfg.m,
            derive_seed(cfg.shuffle_seed, idx as u64),
        )?;
        let prompt = build_generation_prompt(&request);
        let chat = ChatRequest::new(
            &cfg.generator.model,
            vec![ChatMessage::user(prompt)],
            cfg.generator.max_tokens,
        );
        let output = gateway.chat_complete(&chat)?;
        let parsed = parse_candidates(&output, cfg.m)?;
        let row = CandidateRow {
            user_id: item.session.user_id.clone(),
            variant: cfg.variant.label().to_string(),
            candidates: parsed.candidates,
        };
        lines.push(serde_json::to_string(&row).map_err(|e| CliError::Other(e.to_string()))?);
    }
    write_atomic(
        &cfg.candidates_path(),
        format!("{}\n", lines.join("\n")).as_bytes(),
    )?;
    println!(
        "generate: {} candidate lists ({}) -> {}",
        lines.len(),
        cfg.variant.label(),
        cfg.candidates_path().display()
    );
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CliError::MetricParse(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

fn stage_judge(cfg: &RunConfig) -> Result<(), CliError> {
    require(&cfg.corpus_path(), "corpus", "synth")?;
    require(&cfg.candidates_path(), "candidates", "generate")?;
    let corpus = load_corpus(cfg.corpus_path())?;
    let rows: Vec<CandidateRow> = read_jsonl(&cfg.candidates_path())?;

    let intent_of = |user_id: &str| -> Result<&str, CliError> {
        corpus
            .items()
            .find(|i| i.session.user_id == user_id)
            .map(|i| i.intent.as_str())
            .ok_or_else(|| {
                CliError::MetricParse(format!("candidate user {user_id} not in corpus"))
            })
    };

    let gateway = Gateway::new(cfg.judge.gateway.clone())?;
    let judge_cfg = JudgeConfig {
        model: cfg.judge.model.clone(),
        max_tokens: cfg.judge.max_tokens,
    };
    let mut records = Vec::new();
    for row in &rows {
        let intent = intent_of(&row.user_id)?;
        for (rank0, candidate) in row.candidates.iter().enumerate() {
            let verdict = judge_pair(&gateway, &judge_cfg, intent, candidate)?;
            records.push(JudgmentRecord {
                user_id: row.user_id.clone(),
                rank: rank0 + 1,
                verdict,
            });
        }
    }
    records.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.rank.cmp(&b.rank)));
    let lines: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(r).map_err(|e| CliError::Other(e.to_string())))
        .collect::<Result<_, _>>()?;
    write_atomic(
        &cfg.judgments_path(),
        format!("{}\n", lines.join("\n")).as_bytes(),
    )?;
    println!(
        "judge: {} verdicts -> {}",
        records.len(),
        cfg.judgments_path().display()
    );
    Ok(())
}

fn read_human_labels(path: &Path) -> Result<Vec<(String, u8)>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "pair_id,human_label") {
            continue;
        }
        let (pair_id, label) = line.split_once(',').ok_or_else(|| {
            CliError::MetricParse(format!("{} line {}: expected pair_id,human_label", path.display(), i + 1))
        })?;
        let label: u8 = label.trim().parse().map_err(|_| {
            CliError::MetricParse(format!("{} line {}: bad label {label:?}", path.display(), i + 1))
        })?;
        out.push((pair_id.trim().to_string(), label));
    }
    Ok(out)
}

fn stage_report(cfg: &RunConfig) -> Result<(), CliError> {
    require(&cfg.class_report_path(), "class report", "classify-eval")?;
    let classification: ClassEvalArtifact = serde_json::from_slice(
        &fs::read(cfg.class_report_path())?,
    )
    .map_err(|e| CliError::MetricParse(format!("class report: {e}")))?;

    // Every judgments.<variant>.jsonl present in the run dir is reported.
    let mut generation = BTreeMap::new();
    let mut variant_records: BTreeMap<String, Vec<JudgmentRecord>> = BTreeMap::new();
    for variant in ConditioningVariant::ALL {
        let path = cfg
            .run_dir()
            .join(format!("judgments.{}.jsonl", variant.label()));
        if !path.exists() {
            continue;
        }
        let records: Vec<JudgmentRecord> = read_jsonl(&path)?;
        if records.is_empty() {
            continue;
        }
        let mut users: Vec<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
        users.sort_unstable();
        users.dedup();
        generation.insert(
            variant.label().to_string(),
            GenerationMetrics {
                users: users.len(),
                judgments: records.len(),
                similar_at_1: similar_at_m(&records, 1)?,
                similar_at_5: similar_at_m(&records, 5)?,
            },
        );
        variant_records.insert(variant.label().to_string(), records);
    }

    let agreement = match cfg.paths.human_labels.as_deref().filter(|p| p.exists()) {
        Some(labels_path) => {
            let labels = read_human_labels(labels_path)?;
            let records = variant_records.get(cfg.variant.label()).ok_or_else(|| {
                CliError::Prereq(format!(
                    "human labels supplied but no judgments for variant {}",
                    cfg.variant.label()
                ))
            })?;
            let mut judge_labels = Vec::with_capacity(labels.len());
            let mut human_labels = Vec::with_capacity(labels.len());
            for (pair_id, human) in &labels {
                let (user_id, rank) = pair_id.rsplit_once(':').ok_or_else(|| {
                    CliError::MetricParse(format!("pair id {pair_id:?} is not user:rank"))
                })?;
                let rank: usize = rank.parse().map_err(|_| {
                    CliError::MetricParse(format!("pair id {pair_id:?} has a bad rank"))
                })?;
                let record = records
                    .iter()
                    .find(|r| r.user_id == user_id && r.rank == rank)
                    .ok_or_else(|| {
                        CliError::MetricParse(format!("no judgment for pair {pair_id:?}"))
                    })?;
                judge_labels.push(record.verdict);
                human_labels.push(*human);
            }
            Some(agreement_stats(&judge_labels, &human_labels)?)
        }
        None => None,
    };

    let report = Report {
        run_id: cfg.run_id.clone(),
        classification,
        generation,
        agreement,
    };
    write_atomic(&cfg.report_path(), &json_pretty(&report)?)?;
    write_atomic(
        &cfg.run_dir().join("report.md"),
        report.to_markdown().as_bytes(),
    )?;
    println!("report: -> {}", cfg.report_path().display());
    Ok(())
}

/// Applies an endpoint override to both gateways.
pub fn override_endpoints(cfg: &mut RunConfig, endpoint: &str) {
    cfg.generator.gateway.endpoint = endpoint.to_string();
    cfg.judge.gateway.endpoint = endpoint.to_string();
}

/// Boots the mock from the configured fixture file.
pub fn boot_mock(cfg: &RunConfig) -> Result<MockServer, CliError> {
    let fixture = cfg
        .paths
        .fixtures
        .as_deref()
        .ok_or_else(|| CliError::Config("paths.fixtures is not set".into()))?;
    require(fixture, "mock fixture", "e2e --update-golden")?;
    run_mock(fixture, 0).map_err(|e| CliError::Other(format!("mock: {e}")))
}

/// Full offline pipeline against the mock, then a byte-for-byte check of
/// the report against the golden file.
pub fn run_e2e(cfg: &RunConfig, update_golden: bool) -> Result<(), CliError> {
    if update_golden {
        crate::fixtures::regenerate(cfg)?;
    }
    let golden_path = cfg
        .paths
        .golden_report
        .clone()
        .ok_or_else(|| CliError::Config("paths.golden_report is not set".into()))?;

    let mock = boot_mock(cfg)?;
    let mut effective = cfg.clone();
    override_endpoints(&mut effective, &mock.url());
    let result = run_pipeline(&effective, &ALL_STAGES);
    mock.save_transcript(cfg.transcript_path())
        .map_err(|e| CliError::Other(format!("transcript: {e}")))?;
    mock.shutdown();
    result?;

    let produced = fs::read(cfg.report_path())?;
    if update_golden {
        write_atomic(&golden_path, &produced)?;
        println!("e2e: wrote golden report to {}", golden_path.display());
        return Ok(());
    }
    require(&golden_path, "golden report", "e2e --update-golden")?;
    let golden = fs::read(&golden_path)?;
    if produced != golden {
        return Err(CliError::MetricParse(format!(
            "report {} differs from golden {} ({} vs {} bytes)",
            cfg.report_path().display(),
            golden_path.display(),
            produced.len(),
            golden.len()
        )));
    }
    println!("e2e: report matches golden byte-for-byte");
    Ok(())
}
