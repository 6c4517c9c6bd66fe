//! Word-level tokenization shared by the vocabulary builder, the encoders,
//! and session truncation. Lowercased whitespace splitting; punctuation
//! stays attached to its word.

/// Splits text into lowercase whitespace-delimited words.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Number of words without allocating the lowercased forms.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First `max` words rejoined with single spaces, or `None` when the text
/// already fits (callers keep the original bytes in that case).
pub fn truncate_words(text: &str, max: usize) -> Option<String> {
    if word_count(text) <= max {
        return None;
    }
    Some(
        text.split_whitespace()
            .take(max)
            .collect::<Vec<_>>()
            .join(" "),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_lowercase_and_split() {
        assert_eq!(words("Cordless  Drill"), vec!["cordless", "drill"]);
        assert_eq!(words("  page type:  "), vec!["page", "type:"]);
        assert!(words("").is_empty());
    }

    #[test]
    fn truncate_keeps_short_text_untouched() {
        assert_eq!(truncate_words("a b", 2), None);
        assert_eq!(truncate_words("a  b", 5), None);
    }

    #[test]
    fn truncate_takes_prefix() {
        assert_eq!(truncate_words("a b c d", 2), Some("a b".to_string()));
    }
}
