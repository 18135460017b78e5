//! SQL LIKE pattern matching.
//!
//! `%` matches any run of characters (including the empty run), `_` matches
//! exactly one character. Matching operates on Unicode scalar values, so a
//! multi-byte character counts as one `_`. There is no escape syntax; `%`
//! and `_` are always wildcards.

/// Returns true when `text` matches the LIKE `pattern`.
pub fn like_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    match_from(&p, &t)
}

/// Case-insensitive variant; both sides are ASCII-lowercased before matching.
pub fn ilike_match(pattern: &str, text: &str) -> bool {
    like_match(&pattern.to_ascii_lowercase(), &text.to_ascii_lowercase())
}

fn match_from(p: &[char], t: &[char]) -> bool {
    // Standard two-pointer scan with backtracking to the last '%'.
    let (mut pi, mut ti) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '_' || p[pi] == t[ti]) && p[pi] != '%' {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '%' {
        pi += 1;
    }
    pi == p.len()
}

/// Pattern text with every `%` and `_` removed: the characters that must
/// appear in any matching string.
pub fn strip_wildcards(pattern: &str) -> String {
    pattern.chars().filter(|c| *c != '%' && *c != '_').collect()
}
