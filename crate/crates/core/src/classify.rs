//! Classifier evaluation (per-class and weighted precision/recall over
//! the five intent classes) and the text-to-text baseline path: the
//! classification instruction prompt and output-to-class matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{flatten_session, IntentClass, Session};

/// Instruction prepended to the flattened browsing history for
/// text-to-text classification.
pub const CLASSIFY_INSTRUCTION: &str = "Predict the customer's intent behind reaching out to a live chat agent, after viewing a sequence of the following pages:";

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prediction/gold length mismatch: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no labeled examples")]
    Empty,
}

/// Evaluation summary. The confusion matrix is gold-row by predicted-col;
/// unmatched predictions are tallied separately per gold class, so each
/// gold row plus its unmatched count equals that class's support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub precision: [f64; 5],
    pub recall: [f64; 5],
    pub support: [usize; 5],
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: [[usize; 5]; 5],
    pub unmatched_by_gold: [usize; 5],
    pub total: usize,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Builds the report from paired predictions (None = unmatched output)
/// and gold labels. Precision of a class with no predictions is 0;
/// weighted averages use gold-support proportions.
pub fn eval_report(
    preds: &[Option<IntentClass>],
    golds: &[IntentClass],
) -> Result<ClassReport, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }

    let mut confusion = [[0usize; 5]; 5];
    let mut unmatched = [0usize; 5];
    for (pred, gold) in preds.iter().zip(golds) {
        match pred {
            Some(p) => confusion[gold.index()][p.index()] += 1,
            None => unmatched[gold.index()] += 1,
        }
    }

    let mut support = [0usize; 5];
    let mut predicted = [0usize; 5];
    for c in 0..5 {
        support[c] = confusion[c].iter().sum::<usize>() + unmatched[c];
        predicted[c] = (0..5).map(|g| confusion[g][c]).sum();
    }

    let mut precision = [0.0; 5];
    let mut recall = [0.0; 5];
    for c in 0..5 {
        let tp = confusion[c][c];
        precision[c] = if predicted[c] == 0 {
            0.0
        } else {
            tp as f64 / predicted[c] as f64
        };
        recall[c] = if support[c] == 0 {
            0.0
        } else {
            tp as f64 / support[c] as f64
        };
    }

    let total = golds.len();
    let weight = |c: usize| support[c] as f64 / total as f64;
    let weighted_precision = (0..5).map(|c| weight(c) * precision[c]).sum();
    let weighted_recall = (0..5).map(|c| weight(c) * recall[c]).sum();
    let weighted_f1 = (0..5).map(|c| weight(c) * f1(precision[c], recall[c])).sum();
    let correct: usize = (0..5).map(|c| confusion[c][c]).sum();

    Ok(ClassReport {
        precision,
        recall,
        support,
        weighted_precision,
        weighted_recall,
        weighted_f1,
        accuracy: correct as f64 / total as f64,
        confusion,
        unmatched_by_gold: unmatched,
        total,
    })
}

/// The verbatim instruction, a newline, then the flattened session.
pub fn build_classification_prompt(session: &Session) -> String {
    format!("{CLASSIFY_INSTRUCTION}\n{}", flatten_session(session))
}

/// Keyword lexicon for matching free-text model output to a class.
/// Multi-word phrases score 2, single words 1; the lexicon is data so
/// deployments can extend it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lexicon {
    pub phrases: Vec<(IntentClass, Vec<String>)>,
}

impl Default for Lexicon {
    fn default() -> Self {
        let p = |class: IntentClass, words: &[&str]| {
            (class, words.iter().map(|w| w.to_string()).collect())
        };
        Self {
            phrases: vec![
                p(IntentClass::Ins, &["install", "installation"]),
                p(IntentClass::Avl, &["availability", "available", "in stock", "stock"]),
                p(IntentClass::Pri, &["price match", "price", "pricing"]),
                p(IntentClass::Wty, &["warranty", "repair"]),
                p(IntentClass::Ret, &["return", "refund"]),
            ],
        }
    }
}

/// Scores the lowercased text against each class's lexicon; the highest
/// score wins, ties break toward the canonical class order, zero score is
/// unmatched.
pub fn match_text_to_class_with(lexicon: &Lexicon, text: &str) -> Option<IntentClass> {
    let lowered = text.to_lowercase();
    let mut best: Option<(IntentClass, u32)> = None;
    for class in IntentClass::ALL {
        let score: u32 = lexicon
            .phrases
            .iter()
            .filter(|(c, _)| *c == class)
            .flat_map(|(_, words)| words.iter())
            .map(|phrase| {
                if lowered.contains(phrase.as_str()) {
                    if phrase.contains(' ') {
                        2
                    } else {
                        1
                    }
                } else {
                    0
                }
            })
            .sum();
        if score > 0 && best.is_none_or(|(_, s)| score > s) {
            best = Some((class, score));
        }
    }
    best.map(|(c, _)| c)
}

pub fn match_text_to_class(text: &str) -> Option<IntentClass> {
    match_text_to_class_with(&Lexicon::default(), text)
}

/// Markdown table over one or more labeled reports, Metric x Model rows
/// against All plus the five classes.
pub fn reports_to_markdown(reports: &[(&str, &ClassReport)]) -> String {
    let mut out = String::new();
    out.push_str("| Metric | Model | All | INS | AVL | PRI | WTY | RET |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for (metric, pick_all, pick_class) in [
        (
            "Precision",
            (|r: &ClassReport| r.weighted_precision) as fn(&ClassReport) -> f64,
            (|r: &ClassReport, c: usize| r.precision[c]) as fn(&ClassReport, usize) -> f64,
        ),
        (
            "Recall",
            |r: &ClassReport| r.weighted_recall,
            |r: &ClassReport, c: usize| r.recall[c],
        ),
    ] {
        for (name, report) in reports {
            let cells: Vec<String> = (0..5).map(|c| format!("{:.3}", pick_class(report, c))).collect();
            out.push_str(&format!(
                "| {metric} | {name} | {:.3} | {} |\n",
                pick_all(report),
                cells.join(" | ")
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::session::test_util::page;
    use crate::session::Session;
    use IntentClass::*;

    #[test]
    fn hand_confusion_example() {
        // preds [A,A,B], golds [A,B,B] with A=INS, B=AVL.
        let preds = vec![Some(Ins), Some(Ins), Some(Avl)];
        let golds = vec![Ins, Avl, Avl];
        let r = eval_report(&preds, &golds).unwrap();
        assert_eq!(r.precision[Ins.index()], 0.5);
        assert_eq!(r.precision[Avl.index()], 1.0);
        assert_eq!(r.recall[Ins.index()], 1.0);
        assert_eq!(r.recall[Avl.index()], 0.5);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let golds: Vec<IntentClass> = IntentClass::ALL.into_iter().cycle().take(25).collect();
        let preds: Vec<_> = golds.iter().map(|c| Some(*c)).collect();
        let r = eval_report(&preds, &golds).unwrap();
        assert_eq!(r.weighted_precision, 1.0);
        assert_eq!(r.weighted_recall, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn weighted_mean_arithmetic() {
        // Supports 7 INS / 3 AVL; INS precision .5, AVL precision 1.0.
        let golds = vec![Ins, Ins, Ins, Ins, Ins, Ins, Ins, Avl, Avl, Avl];
        let preds = vec![
            Some(Ins),
            Some(Ins),
            None,
            None,
            None,
            None,
            None,
            Some(Ins),
            Some(Ins),
            Some(Avl),
        ];
        let r = eval_report(&preds, &golds).unwrap();
        assert_eq!(r.precision[Ins.index()], 0.5);
        assert_eq!(r.precision[Avl.index()], 1.0);
        assert!((r.weighted_precision - 0.65).abs() < 1e-12);
    }

    #[test]
    fn unmatched_hits_recall_not_precision() {
        let golds = vec![Ins, Ins];
        let preds = vec![Some(Ins), None];
        let r = eval_report(&preds, &golds).unwrap();
        assert_eq!(r.precision[Ins.index()], 1.0);
        assert_eq!(r.recall[Ins.index()], 0.5);
        assert_eq!(r.unmatched_by_gold[Ins.index()], 1);
        // Gold row + unmatched equals support.
        let row_sum: usize = r.confusion[Ins.index()].iter().sum();
        assert_eq!(row_sum + r.unmatched_by_gold[Ins.index()], r.support[Ins.index()]);
    }

    #[test]
    fn report_matches_brute_force_on_random_labels() {
        let mut rng = Rng::new(404);
        for _ in 0..300 {
            let n = 1 + rng.below(40);
            let golds: Vec<IntentClass> = (0..n)
                .map(|_| IntentClass::from_index(rng.below(5)).unwrap())
                .collect();
            let preds: Vec<Option<IntentClass>> = (0..n)
                .map(|_| {
                    if rng.below(5) == 0 {
                        None
                    } else {
                        IntentClass::from_index(rng.below(5))
                    }
                })
                .collect();
            let r = eval_report(&preds, &golds).unwrap();

            // Brute force per class.
            for c in IntentClass::ALL {
                let tp = preds
                    .iter()
                    .zip(&golds)
                    .filter(|(p, g)| **p == Some(c) && **g == c)
                    .count();
                let pc = preds.iter().filter(|p| **p == Some(c)).count();
                let gc = golds.iter().filter(|g| **g == c).count();
                let want_p = if pc == 0 { 0.0 } else { tp as f64 / pc as f64 };
                let want_r = if gc == 0 { 0.0 } else { tp as f64 / gc as f64 };
                assert_eq!(r.precision[c.index()], want_p);
                assert_eq!(r.recall[c.index()], want_r);
                assert_eq!(r.support[c.index()], gc);
            }
        }
    }

    #[test]
    fn report_invariant_under_pair_permutation() {
        let mut rng = Rng::new(1234);
        let n = 60;
        let golds: Vec<IntentClass> = (0..n)
            .map(|_| IntentClass::from_index(rng.below(5)).unwrap())
            .collect();
        let preds: Vec<Option<IntentClass>> =
            (0..n).map(|_| IntentClass::from_index(rng.below(5))).collect();
        let base = eval_report(&preds, &golds).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let p2: Vec<_> = idx.iter().map(|&i| preds[i]).collect();
        let g2: Vec<_> = idx.iter().map(|&i| golds[i]).collect();
        let permuted = eval_report(&p2, &g2).unwrap();
        assert_eq!(base.weighted_precision, permuted.weighted_precision);
        assert_eq!(base.weighted_recall, permuted.weighted_recall);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            eval_report(&[Some(Ins)], &[Ins, Avl]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn prompt_starts_with_instruction() {
        let s = Session::new("u", vec![page("home", &[])]).unwrap();
        let prompt = build_classification_prompt(&s);
        assert!(prompt.starts_with(CLASSIFY_INSTRUCTION));
        assert_eq!(
            prompt,
            format!("{CLASSIFY_INSTRUCTION}\n<page> page type: home")
        );
    }

    #[test]
    fn lexicon_matches_spec_examples() {
        assert_eq!(
            match_text_to_class("The customer wants a price match for an item."),
            Some(Pri)
        );
        assert_eq!(
            match_text_to_class("They ask about installation services."),
            Some(Ins)
        );
        assert_eq!(match_text_to_class("The customer is browsing."), None);
    }

    #[test]
    fn matching_is_case_insensitive_and_deterministic() {
        assert_eq!(match_text_to_class("REFUND please"), Some(Ret));
        assert_eq!(
            match_text_to_class("REFUND please"),
            match_text_to_class("refund PLEASE")
        );
    }

    #[test]
    fn markdown_has_table_shape() {
        let golds = vec![Ins, Avl];
        let preds = vec![Some(Ins), Some(Avl)];
        let r = eval_report(&preds, &golds).unwrap();
        let md = reports_to_markdown(&[("Long+", &r)]);
        assert!(md.contains("| Precision | Long+ | 1.000 |"));
        assert!(md.lines().count() >= 4);
    }
}
