//! Word-level vocabulary and the two session encoders.
//!
//! `encode_structured` produces the four parallel id streams consumed by
//! the classifier (token ids, token positions, token types, page
//! positions). `encode_flat` produces plain token ids over the `<page>`
//! serialization for text-to-text baselines.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::session::{Corpus, Session, SplitTag};
use crate::text;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const PAGE_ID: usize = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[UNK]", "<page>"];

pub const TYPE_CLS: u8 = 0;
pub const TYPE_KEY: u8 = 1;
pub const TYPE_VALUE: u8 = 2;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("encoded length {len} exceeds the {max}-token limit; truncate the session first")]
    TooLong { len: usize, max: usize },
    #[error("session has {pages} pages but the page-position table holds {max}")]
    TooManyPages { pages: usize, max: usize },
    #[error("bad vocab file: {0}")]
    BadVocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense token-id map with four fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, ids }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let mut out = BufWriter::new(File::create(path)?);
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let reader = BufReader::new(File::open(path)?);
        let tokens: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        if tokens.len() < RESERVED.len() {
            return Err(TokenizerError::BadVocabFile(format!(
                "only {} lines; the reserved tokens are missing",
                tokens.len()
            )));
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if tokens[i] != *want {
                return Err(TokenizerError::BadVocabFile(format!(
                    "line {i} is {:?}, expected reserved token {want:?}",
                    tokens[i]
                )));
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Parallel id streams feeding the classifier. All arrays share one length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub token_ids: Vec<usize>,
    pub token_positions: Vec<usize>,
    pub token_types: Vec<u8>,
    pub page_positions: Vec<usize>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Builds the vocabulary from the training split (or the whole corpus when
/// nothing is tagged). A token is counted once per occurrence: every key
/// and value word, the flat-text form of the final key word with its
/// trailing colon, and the `;` separating attributes in flat text, so both
/// encoders resolve without spurious unknowns.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Vocab {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let bump = |counts: &mut HashMap<String, u64>, token: String| {
        if token != "<page>" {
            *counts.entry(token).or_insert(0) += 1;
        }
    };

    let has_train = corpus.entries.iter().any(|e| e.split == Some(SplitTag::Train));
    let items: Vec<_> = if has_train {
        corpus.split(SplitTag::Train).collect()
    } else {
        corpus.items().collect()
    };

    for item in items {
        for page in &item.session.pages {
            for (i, (k, v)) in page.attrs.iter().enumerate() {
                let key_words = text::words(k);
                for w in &key_words {
                    bump(&mut counts, w.clone());
                }
                if let Some(last) = key_words.last() {
                    bump(&mut counts, format!("{last}:"));
                }
                for w in text::words(v) {
                    bump(&mut counts, w);
                }
                if i > 0 {
                    bump(&mut counts, ";".to_string());
                }
            }
        }
    }

    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq as u64)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Vocab::from_tokens(tokens)
}

/// Encodes a truncated session into the four parallel streams: [CLS]
/// first, then per page its attribute key words (type 1) and value words
/// (type 2), all carrying that page's 0-based position. [CLS] shares page
/// position 0 with the first page.
pub fn encode_structured(
    session: &Session,
    vocab: &Vocab,
    max_tokens: usize,
    max_pages: usize,
) -> Result<EncodedInput, TokenizerError> {
    if session.pages.len() > max_pages {
        return Err(TokenizerError::TooManyPages {
            pages: session.pages.len(),
            max: max_pages,
        });
    }
    let len = session.structured_len();
    if len > max_tokens {
        return Err(TokenizerError::TooLong {
            len,
            max: max_tokens,
        });
    }

    let mut token_ids = Vec::with_capacity(len);
    let mut token_types = Vec::with_capacity(len);
    let mut page_positions = Vec::with_capacity(len);
    token_ids.push(CLS_ID);
    token_types.push(TYPE_CLS);
    page_positions.push(0);

    for (j, page) in session.pages.iter().enumerate() {
        for (k, v) in &page.attrs {
            for w in text::words(k) {
                token_ids.push(vocab.id_or_unk(&w));
                token_types.push(TYPE_KEY);
                page_positions.push(j);
            }
            for w in text::words(v) {
                token_ids.push(vocab.id_or_unk(&w));
                token_types.push(TYPE_VALUE);
                page_positions.push(j);
            }
        }
    }

    let token_positions = (0..token_ids.len()).collect();
    Ok(EncodedInput {
        token_ids,
        token_positions,
        token_types,
        page_positions,
    })
}

/// Encodes flattened text to token ids, keeping the most recent `max_len`
/// tokens (front truncation, matching session truncation's recency bias).
pub fn encode_flat(flat_text: &str, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = text::words(flat_text)
        .iter()
        .map(|w| vocab.id_or_unk(w))
        .collect();
    if ids.len() > max_len {
        ids.drain(..ids.len() - max_len);
    }
    ids
}
