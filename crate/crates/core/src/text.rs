//! Canonical text form shared by dictionary loading and encoding.

use unicode_normalization::UnicodeNormalization;

/// NFKC, lowercase, whitespace runs collapsed to a single space, trimmed.
pub fn normalize(text: &str) -> String {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}
