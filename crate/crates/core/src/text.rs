//! Shared text utilities: word tokenization and the FNV-1a hash used
//! everywhere a content-derived seed or feature index is needed.

/// 64-bit FNV-1a. Stable across platforms, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased word tokens: whitespace-split, then trimmed of leading and
/// trailing non-alphanumeric characters. Interior punctuation survives, so
/// "apt-get", "13.04" and "can't" stay whole while "root?" becomes "root".
/// Tokens that trim to nothing are dropped.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(word_core).collect()
}

/// The trimmed, lowercased core of a single whitespace token, if any.
pub fn word_core(token: &str) -> Option<String> {
    let core = token.trim_matches(|c: char| !c.is_alphanumeric());
    if core.is_empty() {
        None
    } else {
        Some(core.to_lowercase())
    }
}

/// Collapse all whitespace runs to single spaces and trim the ends.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
