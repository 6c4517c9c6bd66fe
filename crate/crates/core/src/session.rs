//! Domain types for browsing histories and labeled intents, plus the
//! dataset operations: minimum-page filtering, seeded splitting, recency
//! truncation, page flattening, and JSONL persistence.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::text;

pub const PAGE_TYPE_KEY: &str = "page type";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid page: {0}")]
    InvalidPage(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("split ratios must be positive")]
    RatioNonPositive,
    #[error("split ratios sum to {sum}, expected 1")]
    RatioSum { sum: f64 },
    #[error("corpus has {n} items; at least 3 are required to populate all splits")]
    TooFewItems { n: usize },
    #[error("most recent page needs {needed} tokens (incl. [CLS]) but budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown intent class {value:?}")]
    UnknownClass { line: usize, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One browsed page: an ordered attribute list whose first key is always
/// `page type`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub attrs: Vec<(String, String)>,
}

impl Page {
    pub fn new(attrs: Vec<(String, String)>) -> Result<Self, DataError> {
        if attrs.is_empty() {
            return Err(DataError::InvalidPage("no attributes".into()));
        }
        if attrs.iter().any(|(k, _)| k.is_empty()) {
            return Err(DataError::InvalidPage("empty attribute key".into()));
        }
        if attrs[0].0 != PAGE_TYPE_KEY {
            return Err(DataError::InvalidPage(format!(
                "first attribute key must be {PAGE_TYPE_KEY:?}, got {:?}",
                attrs[0].0
            )));
        }
        if attrs.iter().filter(|(k, _)| k == PAGE_TYPE_KEY).count() != 1 {
            return Err(DataError::InvalidPage(format!(
                "{PAGE_TYPE_KEY:?} must appear exactly once"
            )));
        }
        Ok(Self { attrs })
    }

    pub fn page_type(&self) -> &str {
        &self.attrs[0].1
    }

    /// Word count of the page in the structured encoding (keys + values,
    /// no separators).
    pub fn token_len(&self) -> usize {
        self.attrs
            .iter()
            .map(|(k, v)| text::word_count(k) + text::word_count(v))
            .sum()
    }
}

/// A user's chronological page sequence, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub user_id: String,
    pub pages: Vec<Page>,
}

impl Session {
    pub fn new(user_id: impl Into<String>, pages: Vec<Page>) -> Result<Self, DataError> {
        if pages.is_empty() {
            return Err(DataError::InvalidSession("no pages".into()));
        }
        Ok(Self {
            user_id: user_id.into(),
            pages,
        })
    }

    /// Length of the structured encoding: [CLS] plus every page's tokens.
    pub fn structured_len(&self) -> usize {
        1 + self.pages.iter().map(Page::token_len).sum::<usize>()
    }
}

/// The five coarse intent classes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntentClass {
    Ins,
    Avl,
    Pri,
    Wty,
    Ret,
}

impl IntentClass {
    pub const ALL: [IntentClass; 5] = [
        IntentClass::Ins,
        IntentClass::Avl,
        IntentClass::Pri,
        IntentClass::Wty,
        IntentClass::Ret,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Short code used on the wire: INS, AVL, PRI, WTY, RET.
    pub fn code(self) -> &'static str {
        match self {
            IntentClass::Ins => "INS",
            IntentClass::Avl => "AVL",
            IntentClass::Pri => "PRI",
            IntentClass::Wty => "WTY",
            IntentClass::Ret => "RET",
        }
    }

    pub fn parse_code(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.code() == s)
    }

    /// Display name as used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            IntentClass::Ins => "Installation",
            IntentClass::Avl => "Item availability",
            IntentClass::Pri => "Price match",
            IntentClass::Wty => "Repair/Warranty",
            IntentClass::Ret => "Return/Refund",
        }
    }

    /// The ordered canonical list of display names.
    pub fn class_set() -> [&'static str; 5] {
        [
            IntentClass::Ins.display_name(),
            IntentClass::Avl.display_name(),
            IntentClass::Pri.display_name(),
            IntentClass::Wty.display_name(),
            IntentClass::Ret.display_name(),
        ]
    }
}

impl fmt::Display for IntentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl Serialize for IntentClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for IntentClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        IntentClass::parse_code(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown intent class {s:?}")))
    }
}

/// A session together with its raw intent text and intent class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSession {
    pub session: Session,
    pub intent: String,
    pub class: IntentClass,
}

impl LabeledSession {
    pub fn new(
        session: Session,
        intent: impl Into<String>,
        class: IntentClass,
    ) -> Result<Self, DataError> {
        let intent = intent.into();
        if intent.is_empty() {
            return Err(DataError::InvalidSession("empty intent".into()));
        }
        Ok(Self {
            session,
            intent,
            class,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// One corpus record: a labeled session plus its optional split tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub item: LabeledSession,
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn new(entries: Vec<CorpusEntry>) -> Self {
        Self { entries }
    }

    pub fn from_items(items: Vec<LabeledSession>) -> Self {
        Self {
            entries: items
                .into_iter()
                .map(|item| CorpusEntry { item, split: None })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &LabeledSession> {
        self.entries.iter().map(|e| &e.item)
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &LabeledSession> {
        self.entries
            .iter()
            .filter(move |e| e.split == Some(tag))
            .map(|e| &e.item)
    }
}

/// Truncation budgets for feeding sessions to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_pages: usize,
    pub max_attr_tokens: usize,
    pub token_budget: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_pages: 50,
            max_attr_tokens: 32,
            token_budget: 1024,
        }
    }
}

/// Keeps only the sessions with at least `min_pages` pages, preserving order.
pub fn filter_min_pages(corpus: &Corpus, min_pages: usize) -> Corpus {
    assert!(min_pages >= 1, "min_pages must be >= 1");
    Corpus {
        entries: corpus
            .entries
            .iter()
            .filter(|e| e.item.session.pages.len() >= min_pages)
            .cloned()
            .collect(),
    }
}

/// Assigns train/val/test tags: a seeded shuffle of indices is sliced
/// contiguously, train and val sized by floor, test taking the remainder.
/// Item order in the returned corpus is unchanged.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Corpus, DataError> {
    let (r_train, r_val, r_test) = ratios;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 {
        return Err(DataError::RatioNonPositive);
    }
    let sum = r_train + r_val + r_test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::RatioSum { sum });
    }
    let n = corpus.len();
    if n < 3 {
        return Err(DataError::TooFewItems { n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = (n as f64 * r_train).floor() as usize;
    let n_val = (n as f64 * r_val).floor() as usize;

    let mut out = corpus.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.entries[idx].split = Some(if rank < n_train {
            SplitTag::Train
        } else if rank < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        });
    }
    Ok(out)
}

/// Truncates a session to the classifier budgets: keep the most recent
/// `max_pages` pages, cap each attribute key and value at
/// `max_attr_tokens` words, then drop oldest pages until the structured
/// encoding fits `token_budget`. The result is a suffix of the input pages.
pub fn truncate_session(session: &Session, limits: &Limits) -> Result<Session, DataError> {
    assert!(limits.max_pages >= 1, "max_pages must be >= 1");
    let start = session.pages.len().saturating_sub(limits.max_pages);
    let mut pages: Vec<Page> = session.pages[start..]
        .iter()
        .map(|p| Page {
            attrs: p
                .attrs
                .iter()
                .map(|(k, v)| {
                    let k = text::truncate_words(k, limits.max_attr_tokens)
                        .unwrap_or_else(|| k.clone());
                    let v = text::truncate_words(v, limits.max_attr_tokens)
                        .unwrap_or_else(|| v.clone());
                    (k, v)
                })
                .collect(),
        })
        .collect();

    let mut total = 1 + pages.iter().map(Page::token_len).sum::<usize>();
    let mut drop_from = 0;
    while total > limits.token_budget && drop_from + 1 < pages.len() {
        total -= pages[drop_from].token_len();
        drop_from += 1;
    }
    pages.drain(..drop_from);
    if total > limits.token_budget {
        return Err(DataError::BudgetTooSmall {
            needed: total,
            budget: limits.token_budget,
        });
    }
    Ok(Session {
        user_id: session.user_id.clone(),
        pages,
    })
}

fn sanitize_value(v: &str) -> String {
    let mut s = v.to_string();
    while s.contains(" ; ") {
        s = s.replace(" ; ", " ");
    }
    s
}

/// Serializes a session as `<page> k1: v1 ; k2: v2 …` per page, pages
/// joined by single spaces. Embedded ` ; ` in values collapses to a space
/// so the separator stays unambiguous.
pub fn flatten_session(session: &Session) -> String {
    session
        .pages
        .iter()
        .map(|p| {
            let attrs = p
                .attrs
                .iter()
                .map(|(k, v)| format!("{}: {}", k, sanitize_value(v)))
                .collect::<Vec<_>>()
                .join(" ; ");
            format!("<page> {attrs}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Serialize, Deserialize)]
struct PageWire {
    attrs: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    user_id: String,
    pages: Vec<PageWire>,
    intent: String,
    class: String,
    split: Option<SplitTag>,
}

/// Writes the corpus as one JSON record per line.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    for entry in &corpus.entries {
        let rec = RecordWire {
            user_id: entry.item.session.user_id.clone(),
            pages: entry
                .item
                .session
                .pages
                .iter()
                .map(|p| PageWire {
                    attrs: p.attrs.clone(),
                })
                .collect(),
            intent: entry.item.intent.clone(),
            class: entry.item.class.code().to_string(),
            split: entry.split,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| DataError::Malformed {
            line: 0,
            msg: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSONL corpus, validating every record; errors carry the
/// 1-based line number.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordWire =
            serde_json::from_str(&line).map_err(|e| DataError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        let class = IntentClass::parse_code(&rec.class).ok_or(DataError::UnknownClass {
            line: line_no,
            value: rec.class,
        })?;
        let pages = rec
            .pages
            .into_iter()
            .map(|p| Page::new(p.attrs))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DataError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        let session = Session::new(rec.user_id, pages).map_err(|e| DataError::Malformed {
            line: line_no,
            msg: e.to_string(),
        })?;
        let item =
            LabeledSession::new(session, rec.intent, class).map_err(|e| DataError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        entries.push(CorpusEntry {
            item,
            split: rec.split,
        });
    }
    Ok(Corpus { entries })
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    /// Builds a page with the given type and extra attributes.
    pub fn page(page_type: &str, extra: &[(&str, &str)]) -> Page {
        let mut attrs = vec![(PAGE_TYPE_KEY.to_string(), page_type.to_string())];
        attrs.extend(
            extra
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string())),
        );
        Page::new(attrs).unwrap()
    }

    pub fn session_with_pages(user: &str, n: usize) -> Session {
        let pages = (0..n)
            .map(|i| page("search", &[("search query", &format!("item {i}"))]))
            .collect();
        Session::new(user, pages).unwrap()
    }

    pub fn labeled(user: &str, n_pages: usize, class: IntentClass) -> LabeledSession {
        LabeledSession::new(session_with_pages(user, n_pages), "Can you help me?", class)
            .unwrap()
    }
}
