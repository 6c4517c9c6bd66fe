//! Final report assembly: classification metrics, Similar@m per
//! generation variant, and judge-vs-human agreement when labels exist.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use intent_core::classify::{reports_to_markdown, ClassReport};
use intent_core::judge::AgreementStats;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEvalArtifact {
    pub model_label: String,
    pub model: ClassReport,
    pub baseline_label: Option<String>,
    pub baseline: Option<ClassReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub users: usize,
    pub judgments: usize,
    pub similar_at_1: f64,
    pub similar_at_5: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub classification: ClassEvalArtifact,
    /// Keyed by conditioning-variant label, sorted for stable bytes.
    pub generation: BTreeMap<String, GenerationMetrics>,
    pub agreement: Option<AgreementStats>,
}

impl Report {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# Run report: {}\n\n", self.run_id));

        out.push_str("## Intent classification\n\n");
        let mut rows: Vec<(&str, &ClassReport)> =
            vec![(self.classification.model_label.as_str(), &self.classification.model)];
        if let (Some(label), Some(baseline)) = (
            self.classification.baseline_label.as_deref(),
            self.classification.baseline.as_ref(),
        ) {
            rows.push((label, baseline));
        }
        out.push_str(&reports_to_markdown(&rows));

        if !self.generation.is_empty() {
            out.push_str("\n## Intent generation\n\n");
            out.push_str("| Variant | Users | Similar@1 | Similar@5 |\n");
            out.push_str("|---|---|---|---|\n");
            for (variant, m) in &self.generation {
                out.push_str(&format!(
                    "| {variant} | {} | {:.4} | {:.4} |\n",
                    m.users, m.similar_at_1, m.similar_at_5
                ));
            }
        }

        if let Some(a) = &self.agreement {
            out.push_str("\n## Judge vs human agreement\n\n");
            out.push_str(&format!(
                "Cohen's kappa {:.4}, precision {:.4}{}, recall {:.4} over {} pairs.\n",
                a.cohen_kappa,
                a.precision,
                if a.precision_defined {
                    ""
                } else {
                    " (no positive judge labels)"
                },
                a.recall,
                a.n_pairs
            ));
        }
        out
    }
}
