//! Answer normalization shared by weak supervision and exact-match scoring.

/// Built-in English stop-word list used to normalize long targets.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "are", "as", "at", "be", "been", "being", "but", "by", "did", "do", "does", "for",
    "from", "had", "has", "have", "he", "her", "him", "his", "i", "if", "in", "into", "is", "it", "its", "me", "my",
    "no", "not", "of", "on", "or", "our", "over", "she", "so", "that", "the", "their", "them", "these", "they", "this",
    "those", "to", "under", "us", "was", "we", "were", "with", "you", "your",
];

const ARTICLES: &[&str] = &["a", "an", "the"];

fn strip_punctuation_lower(text: &str) -> String {
    text.chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect()
}

/// Lowercases, removes punctuation, collapses whitespace and drops leading
/// articles.
pub fn normalize_answer(text: &str) -> String {
    let cleaned = strip_punctuation_lower(text);
    let mut words = cleaned.split_whitespace().peekable();
    while words.peek().is_some_and(|w| ARTICLES.contains(w)) {
        words.next();
    }
    words.collect::<Vec<_>>().join(" ")
}

/// Lowercases, removes punctuation and stop words; remaining tokens are kept
/// in order and joined by single spaces.
pub fn normalize_target_long(text: &str) -> String {
    strip_punctuation_lower(text)
        .split_whitespace()
        .filter(|w| !STOP_WORDS.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when `needle` occurs in `haystack` as a run of whole tokens.
pub(crate) fn contains_token_run(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    format!(" {haystack} ").contains(&format!(" {needle} "))
}
