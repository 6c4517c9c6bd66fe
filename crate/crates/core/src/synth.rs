//! Synthetic browsing-corpus generator with plantable class signal.
//!
//! Stands in for the proprietary retailer dataset: sessions follow the
//! published summary statistics (heavy-tailed page counts, five-class
//! label proportions) and each session carries a handful of recent pages
//! whose attribute values contain a class-signature keyword, so a working
//! classifier is learnable at desk scale.

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, Rng};
use crate::session::{
    Corpus, CorpusEntry, IntentClass, LabeledSession, Page, Session, PAGE_TYPE_KEY,
};

/// Keyword planted by `plant_position_probe`, distinct from every class
/// signature keyword.
pub const PROBE_KEYWORD: &str = "beacon";

/// Lognormal page-count distribution, clamped to [min, cap].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PageCountDist {
    pub log_mean: f64,
    pub log_std: f64,
    pub min: usize,
    pub cap: usize,
}

impl Default for PageCountDist {
    fn default() -> Self {
        // Underlying normal fitted to mean 68, std 111.
        Self {
            log_mean: 3.5700,
            log_std: 1.1397,
            min: 5,
            cap: 400,
        }
    }
}

impl PageCountDist {
    fn sample(&self, rng: &mut Rng) -> usize {
        let raw = (self.log_mean + self.log_std * rng.normal()).exp().round();
        (raw as usize).clamp(self.min, self.cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub n_sessions: usize,
    /// Fractions per class in canonical order; must sum to 1.
    pub class_proportions: [f64; 5],
    pub page_count: PageCountDist,
    pub signal_pages_min: usize,
    pub signal_pages_max: usize,
    /// Signal pages land among the final `signal_window` pages.
    pub signal_window: usize,
    pub noise_vocab: Vec<String>,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_sessions: 1000,
            class_proportions: default_proportions(),
            page_count: PageCountDist::default(),
            signal_pages_min: 1,
            signal_pages_max: 3,
            signal_window: 5,
            noise_vocab: default_noise_vocab(),
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), String> {
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("class proportions sum to {sum}, expected 1"));
        }
        if self.class_proportions.iter().any(|&p| p <= 0.0) {
            return Err("class proportions must be positive".into());
        }
        if self.signal_pages_min < 1 || self.signal_pages_min > self.signal_pages_max {
            return Err("signal page range must satisfy 1 <= min <= max".into());
        }
        if self.signal_window < self.signal_pages_max {
            return Err("signal window must be >= max signal pages".into());
        }
        if self.noise_vocab.is_empty() {
            return Err("noise vocab is empty".into());
        }
        Ok(())
    }
}

/// Published class proportions, normalized to sum exactly to 1 (the quoted
/// percentages total 99.9%).
pub fn default_proportions() -> [f64; 5] {
    let raw = [0.373, 0.223, 0.217, 0.104, 0.082];
    let sum: f64 = raw.iter().sum();
    [
        raw[0] / sum,
        raw[1] / sum,
        raw[2] / sum,
        raw[3] / sum,
        raw[4] / sum,
    ]
}

/// Signature keyword planted in page attribute values of class `c` sessions.
pub fn signal_keyword(class: IntentClass) -> &'static str {
    match class {
        IntentClass::Ins => "installation",
        IntentClass::Avl => "availability",
        IntentClass::Pri => "pricing",
        IntentClass::Wty => "warranty",
        IntentClass::Ret => "refund",
    }
}

/// The nine attribute-bearing page types and their attribute key.
const NAMED_TYPES: [(&str, &str); 9] = [
    ("product", "product name"),
    ("search", "search query"),
    ("products list", "search query"),
    ("brand", "brand name"),
    ("catalog", "page title"),
    ("how to", "page title"),
    ("buying guide", "page title"),
    ("inspiration", "page title"),
    ("calculators", "page title"),
];

/// Full 66-entry page-type list: the nine named types plus generic fillers.
pub fn page_types() -> Vec<String> {
    let mut types: Vec<String> = NAMED_TYPES.iter().map(|(t, _)| t.to_string()).collect();
    for i in 1..=57 {
        types.push(format!("misc_{i:02}"));
    }
    types
}

fn attr_key_for_type(page_type: &str) -> Option<&'static str> {
    NAMED_TYPES
        .iter()
        .find(|(t, _)| *t == page_type)
        .map(|(_, k)| *k)
}

const QUALIFIERS: [&str; 16] = [
    "cordless",
    "smart",
    "electric",
    "compact",
    "stainless steel",
    "portable",
    "heavy duty",
    "adjustable",
    "wireless",
    "outdoor",
    "led",
    "programmable",
    "rechargeable",
    "galvanized",
    "insulated",
    "ceramic",
];

const ITEM_BASES: [&str; 13] = [
    "drill",
    "ceiling fan",
    "water heater",
    "lawn mower",
    "thermostat",
    "door lock",
    "paint sprayer",
    "shop vacuum",
    "tile cutter",
    "storage shed",
    "garage opener",
    "pressure washer",
    "space heater",
];

/// Built-in item catalog (~200 names) shared by page values and intent
/// templates so generated intents reference items that appear on pages.
pub fn item_catalog() -> Vec<String> {
    let mut items = Vec::with_capacity(QUALIFIERS.len() * ITEM_BASES.len());
    for q in QUALIFIERS {
        for b in ITEM_BASES {
            items.push(format!("{q} {b}"));
        }
    }
    items
}

pub fn default_noise_vocab() -> Vec<String> {
    [
        "reviews", "compare", "dimensions", "colors", "finish", "manual", "specs", "ideas",
        "projects", "rebates", "store", "hours", "delivery", "pickup", "tools", "hardware",
        "lighting", "plumbing", "flooring", "paint", "garden", "kitchen", "bathroom", "patio",
        "holiday", "clearance", "deals", "bundle", "parts", "accessories", "sizes", "ratings",
        "videos", "gallery", "design", "layout", "measure", "planner", "models", "series",
        "features", "options", "support", "account", "orders", "trending", "seasonal", "samples",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn intent_templates(class: IntentClass) -> &'static [&'static str] {
    match class {
        IntentClass::Ins => &[
            "Hi, do you provide installation services for the {item}?",
            "How do I add installation for the {item} I am ordering?",
            "Is professional installation included when I buy the {item}?",
        ],
        IntentClass::Avl => &[
            "Is the {item} in stock at my local store?",
            "Can you check availability of the {item} near me?",
            "When will the {item} be back in stock?",
        ],
        IntentClass::Pri => &[
            "I found the {item} cheaper elsewhere, can you match the price?",
            "Can I get a price match on the {item}?",
            "Does your pricing policy cover a price match for the {item}?",
        ],
        IntentClass::Wty => &[
            "My {item} stopped working, is it covered under warranty?",
            "How do I get a warranty repair for the {item}?",
            "Can you check the warranty status of my {item}?",
        ],
        IntentClass::Ret => &[
            "I want to return the {item} I bought, can I get a refund?",
            "What is the refund process for the {item}?",
            "Can I return the {item} without a receipt?",
        ],
    }
}

fn make_page(page_type: &str, extra: Option<(String, String)>) -> Page {
    let mut attrs = vec![(PAGE_TYPE_KEY.to_string(), page_type.to_string())];
    if let Some(kv) = extra {
        attrs.push(kv);
    }
    Page { attrs }
}

fn noise_phrase(rng: &mut Rng, vocab: &[String]) -> String {
    let n = 1 + rng.below(3);
    (0..n)
        .map(|_| rng.pick(vocab).clone())
        .collect::<Vec<_>>()
        .join(" ")
}

fn noise_page(rng: &mut Rng, types: &[String], catalog: &[String], vocab: &[String]) -> Page {
    let page_type = rng.pick(types).clone();
    let extra = attr_key_for_type(&page_type).map(|key| {
        let value = if key == "product name" {
            rng.pick(catalog).clone()
        } else {
            noise_phrase(rng, vocab)
        };
        (key.to_string(), value)
    });
    make_page(&page_type, extra)
}

fn signal_page(rng: &mut Rng, class: IntentClass, item: &str) -> Page {
    let kw = signal_keyword(class);
    let (page_type, key) = *rng.pick(&[
        ("search", "search query"),
        ("how to", "page title"),
        ("products list", "search query"),
    ]);
    let value = match rng.below(3) {
        0 => format!("{item} {kw}"),
        1 => format!("{kw} for {item}"),
        _ => format!("{item} {kw} guide"),
    };
    make_page(page_type, Some((key.to_string(), value)))
}

fn sample_class(rng: &mut Rng, proportions: &[f64; 5]) -> IntentClass {
    IntentClass::ALL[rng.weighted(proportions)]
}

fn sample_signal_positions(rng: &mut Rng, spec: &GenSpec, n_pages: usize) -> Vec<usize> {
    let count_span = spec.signal_pages_max - spec.signal_pages_min + 1;
    let count = (spec.signal_pages_min + rng.below(count_span)).min(spec.signal_window);
    let window_start = n_pages - spec.signal_window.min(n_pages);
    let mut window: Vec<usize> = (window_start..n_pages).collect();
    rng.shuffle(&mut window);
    let mut positions = window[..count].to_vec();
    positions.sort_unstable();
    positions
}

/// Generates `n_sessions` labeled sessions, deterministic per seed.
/// Per-session RNG streams are derived from (seed, index), so generation
/// order never affects content.
pub fn generate_corpus(spec: &GenSpec) -> Corpus {
    spec.validate().expect("invalid GenSpec");
    let types = page_types();
    let catalog = item_catalog();
    let entries = (0..spec.n_sessions)
        .map(|i| {
            let mut rng = Rng::new(derive_seed(spec.seed, i as u64));
            let class = sample_class(&mut rng, &spec.class_proportions);
            let n_pages = spec.page_count.sample(&mut rng).max(spec.signal_window);
            let item = rng.pick(&catalog).clone();
            let signal_at = sample_signal_positions(&mut rng, spec, n_pages);

            let pages: Vec<Page> = (0..n_pages)
                .map(|t| {
                    if signal_at.contains(&t) {
                        signal_page(&mut rng, class, &item)
                    } else {
                        noise_page(&mut rng, &types, &catalog, &spec.noise_vocab)
                    }
                })
                .collect();

            let template = rng.pick(intent_templates(class));
            let intent = template.replace("{item}", &item);
            let session = Session::new(format!("user-{i:05}"), pages).expect("non-empty");
            CorpusEntry {
                item: LabeledSession::new(session, intent, class).expect("non-empty intent"),
                split: None,
            }
        })
        .collect();
    Corpus { entries }
}

/// Variant corpus where the label depends on whether a fixed keyword sits
/// in a key slot or a value slot of the final page: value position labels
/// the session `Ins`, key position labels it `Avl`. Exercises the
/// token-type embeddings that a plain token/position model lacks.
pub fn plant_position_probe(spec: &GenSpec) -> Corpus {
    spec.validate().expect("invalid GenSpec");
    let types = page_types();
    let catalog = item_catalog();
    let misc_types: Vec<String> = types
        .iter()
        .filter(|t| attr_key_for_type(t).is_none())
        .cloned()
        .collect();
    let entries = (0..spec.n_sessions)
        .map(|i| {
            let mut rng = Rng::new(derive_seed(spec.seed ^ 0x70726f6265, i as u64));
            let in_value = rng.below(2) == 0;
            let class = if in_value {
                IntentClass::Ins
            } else {
                IntentClass::Avl
            };
            let n_pages = spec.page_count.sample(&mut rng).max(1);
            let item = rng.pick(&catalog).clone();
            let filler = rng.pick(&spec.noise_vocab).clone();

            let mut pages: Vec<Page> = (0..n_pages - 1)
                .map(|_| noise_page(&mut rng, &types, &catalog, &spec.noise_vocab))
                .collect();
            let probe_attr = if in_value {
                (filler, PROBE_KEYWORD.to_string())
            } else {
                (PROBE_KEYWORD.to_string(), filler)
            };
            pages.push(make_page(rng.pick(&misc_types), Some(probe_attr)));

            let template = rng.pick(intent_templates(class));
            let intent = template.replace("{item}", &item);
            let session = Session::new(format!("probe-{i:05}"), pages).expect("non-empty");
            CorpusEntry {
                item: LabeledSession::new(session, intent, class).expect("non-empty intent"),
                split: None,
            }
        })
        .collect();
    Corpus { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{filter_min_pages, save_corpus};
    use crate::text;

    #[test]
    fn class_histogram_tracks_published_proportions() {
        let spec = GenSpec {
            n_sessions: 1000,
            ..GenSpec::default()
        };
        let corpus = generate_corpus(&spec);
        let mut counts = [0usize; 5];
        for item in corpus.items() {
            counts[item.class.index()] += 1;
        }
        let published = [0.373, 0.223, 0.217, 0.104, 0.082];
        for (c, &target) in IntentClass::ALL.iter().zip(&published) {
            let freq = counts[c.index()] as f64 / 1000.0;
            assert!(
                (freq - target).abs() <= 0.02,
                "{}: {freq} vs {target}",
                c.code()
            );
        }
    }

    #[test]
    fn window_one_puts_keyword_on_last_page() {
        let spec = GenSpec {
            n_sessions: 60,
            signal_pages_min: 1,
            signal_pages_max: 1,
            signal_window: 1,
            ..GenSpec::default()
        };
        for item in generate_corpus(&spec).items() {
            let kw = signal_keyword(item.class);
            let last = item.session.pages.last().unwrap();
            let hit = last
                .attrs
                .iter()
                .any(|(_, v)| text::words(v).iter().any(|w| w == kw));
            assert!(hit, "missing {kw} on last page of {}", item.session.user_id);
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = GenSpec {
            n_sessions: 500,
            seed: 42,
            ..GenSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        save_corpus(&generate_corpus(&spec), &p1).unwrap();
        save_corpus(&generate_corpus(&spec), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn every_session_survives_min_page_filter() {
        let spec = GenSpec {
            n_sessions: 300,
            seed: 3,
            ..GenSpec::default()
        };
        let corpus = generate_corpus(&spec);
        assert_eq!(filter_min_pages(&corpus, 5).len(), corpus.len());
    }

    #[test]
    fn signal_keywords_are_disjoint_across_classes() {
        let spec = GenSpec {
            n_sessions: 400,
            seed: 8,
            ..GenSpec::default()
        };
        for item in generate_corpus(&spec).items() {
            for other in IntentClass::ALL {
                if other == item.class {
                    continue;
                }
                let kw = signal_keyword(other);
                for page in &item.session.pages {
                    for (k, v) in &page.attrs {
                        assert!(
                            !text::words(k).iter().any(|w| w == kw)
                                && !text::words(v).iter().any(|w| w == kw),
                            "{} session contains {kw}",
                            item.class.code()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn probe_labels_match_rule_reapplication() {
        let spec = GenSpec {
            n_sessions: 300,
            seed: 17,
            ..GenSpec::default()
        };
        let corpus = plant_position_probe(&spec);
        let mut saw = [false; 2];
        for item in corpus.items() {
            let last = item.session.pages.last().unwrap();
            let in_value = last
                .attrs
                .iter()
                .any(|(_, v)| text::words(v).iter().any(|w| w == PROBE_KEYWORD));
            let in_key = last
                .attrs
                .iter()
                .any(|(k, _)| text::words(k).iter().any(|w| w == PROBE_KEYWORD));
            let expected = if in_value {
                IntentClass::Ins
            } else {
                assert!(in_key, "probe keyword missing from last page");
                IntentClass::Avl
            };
            assert_eq!(item.class, expected);
            saw[if in_value { 0 } else { 1 }] = true;
        }
        assert!(saw[0] && saw[1], "both probe variants should occur");
    }

    #[test]
    fn probe_is_deterministic() {
        let spec = GenSpec {
            n_sessions: 100,
            seed: 5,
            ..GenSpec::default()
        };
        assert_eq!(plant_position_probe(&spec), plant_position_probe(&spec));
    }

    #[test]
    fn page_type_list_has_66_entries() {
        let types = page_types();
        assert_eq!(types.len(), 66);
        let catalog = item_catalog();
        assert!(catalog.len() >= 200);
        // Catalog and noise vocab must stay free of signature keywords.
        for class in IntentClass::ALL {
            let kw = signal_keyword(class);
            assert!(catalog.iter().all(|i| !i.contains(kw)));
            assert!(default_noise_vocab().iter().all(|w| w != kw));
        }
    }
}
