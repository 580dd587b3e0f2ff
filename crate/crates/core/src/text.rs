//! Lexical helpers shared by the reference rules: token accounting,
//! content-token extraction and truncation.

use std::collections::BTreeSet;

/// English function words removed before overlap scoring.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "but", "by", "can", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her",
    "his", "how", "i", "if", "in", "into", "is", "it", "its", "me", "my", "no", "not", "of", "on",
    "or", "our", "she", "so", "than", "that", "the", "their", "them", "then", "there", "they",
    "this", "to", "up", "was", "we", "were", "what", "when", "where", "which", "who", "why",
    "will", "with", "would", "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Number of maximal whitespace-separated segments.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercased alphanumeric runs with stopwords, one-character runs and
/// pure numbers removed, in order of appearance (duplicates kept).
pub fn content_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .filter(|t| t.chars().any(char::is_alphabetic))
        .filter(|t| !is_stopword(t))
        .map(str::to_owned)
        .collect()
}

pub fn content_set(text: &str) -> BTreeSet<String> {
    content_tokens(text).into_iter().collect()
}

/// First `budget` whitespace tokens of `text`, re-joined with single spaces.
pub fn truncate_tokens(text: &str, budget: usize) -> String {
    text.split_whitespace().take(budget).collect::<Vec<_>>().join(" ")
}

/// Collapses all whitespace runs into single spaces and trims the ends.
pub fn normalize_space(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase alphanumeric words, stopwords kept. Used for lexicon lookups.
pub fn plain_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn content_tokens_drop_function_words() {
        assert_eq!(
            content_tokens("Why do they throw food in a big bowl?"),
            vec!["throw", "food", "big", "bowl"]
        );
        assert_eq!(content_tokens("It's 42, ok"), vec!["ok"]);
    }

    #[test]
    fn truncate_keeps_budget() {
        assert_eq!(truncate_tokens("a b  c d", 2), "a b");
        assert_eq!(truncate_tokens("a", 5), "a");
    }
}
