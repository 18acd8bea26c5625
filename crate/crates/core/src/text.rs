//! Text normalization and tokenization shared by matching, retrieval and
//! the property heuristics.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Normalizes a surface form for answer comparison.
///
/// Lowercases, deletes punctuation and symbols, collapses whitespace and
/// drops a single leading article (`a`, `an`, `the`).
///
/// ```
/// use tailqa_core::text::normalize;
/// assert_eq!(normalize("Dublin, Ireland "), "dublin ireland");
/// assert_eq!(normalize("The Hospital"), "hospital");
/// ```
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut tokens = stripped.split_whitespace().peekable();
    if let Some(first) = tokens.peek() {
        if ARTICLES.contains(first) {
            tokens.next();
        }
    }
    tokens.collect::<Vec<_>>().join(" ")
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True when `needle` occurs in `haystack` aligned to whitespace token
/// boundaries. Both inputs are expected to be normalized already.
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let padded_hay = format!(" {haystack} ");
    let padded_needle = format!(" {needle} ");
    padded_hay.contains(&padded_needle)
}

/// 64-bit FNV-1a. Used wherever a hash must be stable across platforms and
/// toolchain releases (seed derivation, feature hashing).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derives a sub-seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(label.as_bytes());
    fnv1a64(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_rules() {
        assert_eq!(normalize("Dublin, Ireland "), "dublin ireland");
        assert_eq!(normalize("The Hospital"), "hospital");
        assert_eq!(normalize("WW2"), "ww2");
        assert_eq!(normalize("  a  b   c "), "b c");
        assert_eq!(normalize("Theatre"), "theatre");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("the"), "");
        assert_eq!(normalize("Nelson's Pillar"), "nelsons pillar");
    }

    #[test]
    fn only_leading_article_dropped() {
        assert_eq!(normalize("The Lord of the Rings"), "lord of the rings");
    }

    #[test]
    fn tokenize_splits_on_non_alnum() {
        assert_eq!(tokenize("Foo-bar, BAZ_9"), vec!["foo", "bar", "baz", "9"]);
        assert!(tokenize(" ,. ").is_empty());
    }

    #[test]
    fn phrase_containment_respects_boundaries() {
        assert!(contains_phrase("barack obama", "obama"));
        assert!(!contains_phrase("barack obamas", "obama"));
        assert!(!contains_phrase("anything", ""));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
