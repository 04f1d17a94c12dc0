//! Text normalization and stable hashing shared across modules.
//!
//! Two normal forms exist on purpose and must not be conflated:
//! `canonical_name` keeps word boundaries (entity identity), while
//! `normalize_title` strips them (title matching, where "Tomb-Raider"
//! and "tomb raider" must collide).

use sha2::{Digest, Sha256};

/// Canonical form for entity identity: case-folded, punctuation stripped,
/// whitespace runs collapsed to a single space.
pub fn canonical_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_space = false;
    for ch in name.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// Matching form for titles: case-folded with punctuation AND whitespace removed.
pub fn normalize_title(title: &str) -> String {
    title
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(|c| c.to_lowercase())
        .collect()
}

/// Lowercased alphanumeric tokens, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Collapses all whitespace runs to single spaces and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_gap = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !in_gap {
                out.push(' ');
                in_gap = true;
            }
        } else {
            out.push(ch);
            in_gap = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Truncates on a char boundary, appending an ellipsis when cut.
pub fn truncate_chars(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut: String = text.chars().take(max_chars.saturating_sub(1)).collect();
    format!("{cut}\u{2026}")
}

/// Hex-encoded SHA-256, the stable hash used for fixture keys and journals.
pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// First eight bytes of SHA-256 as a u64; platform-independent.
pub fn stable_hash64(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Normalized Levenshtein distance in [0,1]: edits / max length.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    strsim::levenshtein(a, b) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_name_folds_case_space_punctuation() {
        assert_eq!(canonical_name("  Lara   Croft "), "lara croft");
        assert_eq!(canonical_name("Lara-Croft!"), "lara croft");
        assert_eq!(canonical_name("LARA CROFT"), "lara croft");
    }

    #[test]
    fn normalize_title_removes_whitespace() {
        assert_eq!(normalize_title("Tomb Raider"), "tombraider");
        assert_eq!(normalize_title("TOMB RAIDER!!"), "tombraider");
    }

    #[test]
    fn edit_distance_matches_hand_computation() {
        // "tombrader" vs "tombraider": one insertion over 10 chars.
        let d = normalized_edit_distance("tombrader", "tombraider");
        assert!((d - 0.10).abs() < 1e-12);
    }

    #[test]
    fn collapse_whitespace_flattens_newlines() {
        assert_eq!(collapse_whitespace("a\n\n b\t c  "), "a b c");
    }

    #[test]
    fn stable_hash_is_stable() {
        assert_eq!(stable_hash64("abc"), stable_hash64("abc"));
        assert_ne!(stable_hash64("abc"), stable_hash64("abd"));
    }
}
