//! Regenerates the e2e mock fixture, the human-label CSV, and (via the
//! e2e run that follows) the golden report. Replies are synthesized from
//! deterministic rules over the exact prompts the pipeline will send, so
//! a later offline run replays them fingerprint-by-fingerprint.

use std::fmt::Write as _;

use intent_core::classify::build_classification_prompt;
use intent_core::gateway::{request_fingerprint, ChatMessage};
use intent_core::generation::{build_generation_prompt, ConditioningVariant, GenRequest};
use intent_core::judge::judge_messages;
use intent_core::model::{load_checkpoint, predict};
use intent_core::rng::derive_seed;
use intent_core::session::{load_corpus, truncate_session, LabeledSession, SplitTag};
use intent_core::vocab::Vocab;

use crate::config::RunConfig;
use crate::errors::CliError;
use crate::pipeline::{run_pipeline, write_atomic, Stage};

/// Candidate questions scripted for test user `idx`; fewer than M so the
/// under-generation path is exercised end to end.
fn scripted_candidates(idx: usize) -> Vec<String> {
    vec![
        format!("Can you check if this item is in stock at store {idx}?"),
        format!("Do you offer installation services for order {idx}?"),
        format!("What is the return policy for my recent purchase {idx}?"),
    ]
}

/// Scripted judge verdict for (user index, 1-based rank).
fn scripted_verdict(user_idx: usize, rank: usize) -> bool {
    (user_idx + rank) % 3 == 1
}

/// Baseline classifier replies rotate through the five classes plus one
/// deliberately unmatched output.
fn scripted_baseline_reply(idx: usize) -> &'static str {
    [
        "The customer likely needs installation help.",
        "They are asking about item availability.",
        "This looks like a price match request.",
        "The customer needs a warranty repair.",
        "They want to return an item for a refund.",
        "The customer is just browsing.",
    ][idx % 6]
}

pub fn regenerate(cfg: &RunConfig) -> Result<(), CliError> {
    let fixture_path = cfg
        .paths
        .fixtures
        .clone()
        .ok_or_else(|| CliError::Config("paths.fixtures is not set".into()))?;
    let labels_path = cfg
        .paths
        .human_labels
        .clone()
        .ok_or_else(|| CliError::Config("paths.human_labels is not set".into()))?;

    // Offline stages give us the corpus and trained classifier the real
    // run will reproduce bit-for-bit.
    run_pipeline(cfg, &[Stage::Synth, Stage::Train])?;
    let corpus = load_corpus(cfg.corpus_path())?;
    let (model_cfg, params) = load_checkpoint(cfg.checkpoint_path())?;
    let vocab = Vocab::load(cfg.vocab_path())?;
    let items: Vec<&LabeledSession> = corpus.split(SplitTag::Test).collect();
    if items.is_empty() {
        return Err(CliError::Prereq("corpus has no test split".into()));
    }

    let mut fixture_lines = Vec::new();
    let mut entry = |fingerprint: String, reply: &str| {
        fixture_lines.push(
            serde_json::json!({"match": fingerprint, "reply": reply, "status": 200}).to_string(),
        );
    };

    if cfg.baseline_model.is_some() {
        for (idx, item) in items.iter().enumerate() {
            let truncated = truncate_session(&item.session, &cfg.train.limits)?;
            let prompt = build_classification_prompt(&truncated);
            let fp = request_fingerprint(&[ChatMessage::user(prompt)]);
            entry(fp, scripted_baseline_reply(idx));
        }
    }

    let mut labels_csv = String::from("pair_id,human_label\n");
    let mut pair_index = 0usize;
    for (idx, item) in items.iter().enumerate() {
        let truncated = truncate_session(&item.session, &cfg.train.limits)?;
        let class = match cfg.variant {
            ConditioningVariant::UsePredicted => {
                Some(predict(&params, &model_cfg, &item.session, &vocab, &cfg.train.limits)?.0)
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
        let candidates = scripted_candidates(idx);
        let reply: String = candidates
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}. {q}\n", i + 1))
            .collect();
        entry(
            request_fingerprint(&[ChatMessage::user(prompt)]),
            reply.trim_end(),
        );

        for (rank0, candidate) in candidates.iter().enumerate() {
            let rank = rank0 + 1;
            let verdict = scripted_verdict(idx, rank);
            entry(
                request_fingerprint(&judge_messages(&item.intent, candidate)),
                if verdict { "Yes" } else { "No" },
            );
            // Human labels mostly agree; every fifth pair flips.
            let human = if pair_index.is_multiple_of(5) {
                !verdict
            } else {
                verdict
            };
            let _ = writeln!(
                labels_csv,
                "{}:{rank},{}",
                item.session.user_id,
                human as u8
            );
            pair_index += 1;
        }
    }

    write_atomic(&fixture_path, format!("{}\n", fixture_lines.join("\n")).as_bytes())?;
    write_atomic(&labels_path, labels_csv.as_bytes())?;
    println!(
        "fixtures: wrote {} mock entries to {} and {} human labels to {}",
        fixture_lines.len(),
        fixture_path.display(),
        pair_index,
        labels_path.display()
    );
    Ok(())
}
