//! LLM-as-judge similarity, Similar@m aggregation, and judge-vs-human
//! agreement statistics.
//!
//! The judge prompt (instruction plus four demonstration pairs, one of
//! which is dissimilar solely because the item differs) lives in a
//! versioned template file and renders as a few-shot chat conversation.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("intent strings must be non-empty")]
    EmptyIntent,
    #[error("no judgment records")]
    EmptyRecords,
    #[error("judge/human label length mismatch: {judge} vs {human}")]
    LengthMismatch { judge: usize, human: usize },
    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("chance agreement is 1; kappa is undefined")]
    DegenerateChance,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Binary similarity outcome for one (user, candidate-rank) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub user_id: String,
    /// 1-based candidate rank.
    pub rank: usize,
    /// 1 = similar, 0 = not.
    pub verdict: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub cohen_kappa: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_pairs: usize,
    /// False when the judge produced no positive labels, in which case
    /// precision is reported as 0.
    pub precision_defined: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub model: String,
    pub max_tokens: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4-0125-preview".into(),
            max_tokens: 8,
        }
    }
}

#[derive(Debug, Deserialize)]
struct JudgeTemplate {
    version: u32,
    system: String,
    demos: Vec<JudgeDemo>,
}

#[derive(Debug, Deserialize)]
struct JudgeDemo {
    reference: String,
    candidate: String,
    verdict: String,
}

fn template() -> &'static JudgeTemplate {
    static TEMPLATE: OnceLock<JudgeTemplate> = OnceLock::new();
    TEMPLATE.get_or_init(|| {
        serde_json::from_str(include_str!("../templates/judge_v1.json"))
            .expect("bundled judge template is valid JSON")
    })
}

pub fn judge_template_version() -> u32 {
    template().version
}

fn pair_text(true_intent: &str, candidate: &str) -> String {
    format!("Intent A: {true_intent}\nIntent B: {candidate}")
}

/// The full few-shot message list for one pair under test. Exposed so
/// fixtures can be scripted against the exact fingerprint.
pub fn judge_messages(true_intent: &str, candidate: &str) -> Vec<ChatMessage> {
    let t = template();
    let mut messages = vec![ChatMessage::system(&t.system)];
    for demo in &t.demos {
        messages.push(ChatMessage::user(pair_text(&demo.reference, &demo.candidate)));
        messages.push(ChatMessage::assistant(&demo.verdict));
    }
    messages.push(ChatMessage::user(pair_text(true_intent, candidate)));
    messages
}

fn parse_verdict(text: &str) -> Option<u8> {
    let t = text.trim_start();
    if t.len() >= 3 && t[..3].eq_ignore_ascii_case("yes") {
        Some(1)
    } else if t.len() >= 2 && t[..2].eq_ignore_ascii_case("no") {
        Some(0)
    } else {
        None
    }
}

/// Asks the judge model whether the candidate matches the true intent at
/// temperature 0. Output must begin with Yes or No; one re-ask is allowed
/// before falling back to verdict 0 with a logged warning.
pub fn judge_pair(
    gateway: &Gateway,
    cfg: &JudgeConfig,
    true_intent: &str,
    candidate: &str,
) -> Result<u8, JudgeError> {
    if true_intent.is_empty() || candidate.is_empty() {
        return Err(JudgeError::EmptyIntent);
    }
    let request = ChatRequest::new(
        &cfg.model,
        judge_messages(true_intent, candidate),
        cfg.max_tokens,
    );
    for attempt in 0..2 {
        let content = gateway.chat_complete(&request)?;
        if let Some(verdict) = parse_verdict(&content) {
            return Ok(verdict);
        }
        if attempt == 0 {
            continue;
        }
        eprintln!(
            "warning: judge output unparseable twice ({content:?}); recording verdict 0"
        );
    }
    Ok(0)
}

/// Fraction of users with at least one verdict-1 record at rank <= m.
/// Users with fewer than m candidates contribute their existing ranks.
pub fn similar_at_m(records: &[JudgmentRecord], m: usize) -> Result<f64, JudgeError> {
    assert!(m >= 1, "m must be >= 1");
    if records.is_empty() {
        return Err(JudgeError::EmptyRecords);
    }
    let mut hits: BTreeMap<&str, bool> = BTreeMap::new();
    for r in records {
        let hit = hits.entry(r.user_id.as_str()).or_insert(false);
        if r.verdict == 1 && r.rank <= m {
            *hit = true;
        }
    }
    let users = hits.len();
    let hit_count = hits.values().filter(|h| **h).count();
    Ok(hit_count as f64 / users as f64)
}

/// Agreement of judge labels against human labels (human = ground truth):
/// precision = P(human=1 | judge=1), recall = P(judge=1 | human=1), and
/// Cohen's kappa with marginal-product chance agreement.
pub fn agreement_stats(judge: &[u8], human: &[u8]) -> Result<AgreementStats, JudgeError> {
    if judge.len() != human.len() {
        return Err(JudgeError::LengthMismatch {
            judge: judge.len(),
            human: human.len(),
        });
    }
    if judge.is_empty() {
        return Err(JudgeError::EmptyRecords);
    }
    if let Some(&bad) = judge.iter().chain(human).find(|&&v| v > 1) {
        return Err(JudgeError::BadLabel(bad));
    }

    let n = judge.len() as f64;
    let mut table = [[0usize; 2]; 2];
    for (&j, &h) in judge.iter().zip(human) {
        table[j as usize][h as usize] += 1;
    }
    let judge_pos = (table[1][0] + table[1][1]) as f64;
    let human_pos = (table[0][1] + table[1][1]) as f64;

    let p_o = (table[0][0] + table[1][1]) as f64 / n;
    let (p_j1, p_h1) = (judge_pos / n, human_pos / n);
    let p_e = p_j1 * p_h1 + (1.0 - p_j1) * (1.0 - p_h1);
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Err(JudgeError::DegenerateChance);
    }
    let cohen_kappa = (p_o - p_e) / (1.0 - p_e);

    let precision_defined = judge_pos > 0.0;
    let precision = if precision_defined {
        table[1][1] as f64 / judge_pos
    } else {
        0.0
    };
    let recall = if human_pos > 0.0 {
        table[1][1] as f64 / human_pos
    } else {
        0.0
    };

    Ok(AgreementStats {
        cohen_kappa,
        precision,
        recall,
        n_pairs: judge.len(),
        precision_defined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rec(user: &str, rank: usize, verdict: u8) -> JudgmentRecord {
        JudgmentRecord {
            user_id: user.into(),
            rank,
            verdict,
        }
    }

    #[test]
    fn similar_at_m_enumeration_example() {
        // Three users: hits at ranks {1}, {3}, {}.
        let records = vec![
            rec("a", 1, 1),
            rec("a", 2, 0),
            rec("b", 1, 0),
            rec("b", 2, 0),
            rec("b", 3, 1),
            rec("c", 1, 0),
            rec("c", 2, 0),
        ];
        assert!((similar_at_m(&records, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((similar_at_m(&records, 5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_when_everyone_hits_rank_one() {
        let records: Vec<_> = (0..10).map(|i| rec(&format!("u{i}"), 1, 1)).collect();
        for m in 1..6 {
            assert_eq!(similar_at_m(&records, m).unwrap(), 1.0);
        }
    }

    #[test]
    fn similar_at_m_monotone_and_order_invariant() {
        let mut rng = Rng::new(55);
        for _ in 0..1000 {
            let users = 1 + rng.below(6);
            let mut records = Vec::new();
            for u in 0..users {
                let k = 1 + rng.below(5);
                for r in 1..=k {
                    records.push(rec(&format!("u{u}"), r, rng.below(2) as u8));
                }
            }
            let s1 = similar_at_m(&records, 1).unwrap();
            let s5 = similar_at_m(&records, 5).unwrap();
            assert!(s1 <= s5 + 1e-12, "monotonicity violated: {s1} > {s5}");

            // Brute force over users.
            let brute = |m: usize| {
                let mut ids: Vec<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
                ids.sort_unstable();
                ids.dedup();
                let hit = ids
                    .iter()
                    .filter(|id| {
                        records
                            .iter()
                            .any(|r| r.user_id == **id && r.verdict == 1 && r.rank <= m)
                    })
                    .count();
                hit as f64 / ids.len() as f64
            };
            assert_eq!(s1, brute(1));
            assert_eq!(s5, brute(5));

            // Reordering records must not matter.
            let mut shuffled = records.clone();
            rng.shuffle(&mut shuffled);
            assert_eq!(similar_at_m(&shuffled, 1).unwrap(), s1);
        }
    }

    #[test]
    fn empty_records_error() {
        assert!(matches!(
            similar_at_m(&[], 1),
            Err(JudgeError::EmptyRecords)
        ));
    }

    #[test]
    fn kappa_worked_example() {
        let stats = agreement_stats(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert!((stats.cohen_kappa - 0.5).abs() < 1e-12);
        assert!((stats.precision - 0.5).abs() < 1e-12);
        assert!((stats.recall - 1.0).abs() < 1e-12);
        assert!(stats.precision_defined);
        assert_eq!(stats.n_pairs, 4);
    }

    #[test]
    fn perfect_agreement_with_both_labels() {
        let stats = agreement_stats(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(stats.cohen_kappa, 1.0);
        assert_eq!(stats.precision, 1.0);
        assert_eq!(stats.recall, 1.0);
    }

    #[test]
    fn all_negative_judge_flags_precision() {
        let stats = agreement_stats(&[0, 0, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert!(!stats.precision_defined);
        assert_eq!(stats.precision, 0.0);
        assert_eq!(stats.recall, 0.0);
    }

    #[test]
    fn degenerate_chance_is_an_error() {
        assert!(matches!(
            agreement_stats(&[1, 1], &[1, 1]),
            Err(JudgeError::DegenerateChance)
        ));
        assert!(matches!(
            agreement_stats(&[1], &[1, 1]),
            Err(JudgeError::LengthMismatch { .. })
        ));
        assert!(matches!(
            agreement_stats(&[2], &[1]),
            Err(JudgeError::BadLabel(2))
        ));
    }

    #[test]
    fn agreement_matches_brute_force_contingency() {
        let mut rng = Rng::new(321);
        for _ in 0..1000 {
            let n = 2 + rng.below(40);
            let judge: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
            let human: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
            let n11 = judge
                .iter()
                .zip(&human)
                .filter(|(j, h)| **j == 1 && **h == 1)
                .count() as f64;
            let j1: f64 = judge.iter().filter(|&&j| j == 1).count() as f64;
            let h1: f64 = human.iter().filter(|&&h| h == 1).count() as f64;
            let agree = judge.iter().zip(&human).filter(|(j, h)| j == h).count() as f64;
            let nf = n as f64;
            let p_e = (j1 / nf) * (h1 / nf) + ((nf - j1) / nf) * ((nf - h1) / nf);
            match agreement_stats(&judge, &human) {
                Ok(stats) => {
                    let want_kappa = (agree / nf - p_e) / (1.0 - p_e);
                    assert!((stats.cohen_kappa - want_kappa).abs() < 1e-12);
                    if j1 > 0.0 {
                        assert_eq!(stats.precision, n11 / j1);
                    }
                    if h1 > 0.0 {
                        assert_eq!(stats.recall, n11 / h1);
                    }
                }
                Err(JudgeError::DegenerateChance) => {
                    assert!((1.0 - p_e).abs() < f64::EPSILON);
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn verdict_parsing_rules() {
        assert_eq!(parse_verdict("Yes"), Some(1));
        assert_eq!(parse_verdict("  yes, they match"), Some(1));
        assert_eq!(parse_verdict("no."), Some(0));
        assert_eq!(parse_verdict("NO"), Some(0));
        assert_eq!(parse_verdict("Maybe"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn judge_messages_carry_demos_and_pair() {
        let messages = judge_messages("true intent", "candidate intent");
        // System + 4 demo pairs + the pair under test.
        assert_eq!(messages.len(), 1 + 4 * 2 + 1);
        assert_eq!(judge_template_version(), 1);
        let last = messages.last().unwrap();
        assert!(last.content.contains("Intent A: true intent"));
        assert!(last.content.contains("Intent B: candidate intent"));
        // One demonstration is dissimilar purely by item identity.
        assert!(messages.iter().any(|m| m.content.contains("TH1234")));
    }
}
