use crate::text::{self, MASK};

// Stand-in for the mask while replacing, so later (shorter) surfaces can
// never match inside an earlier replacement.
const HOLE: char = '\u{E000}';

/// Lowercases `text` and replaces every case-insensitive occurrence of each
/// surface with `[MASK]`, longest surfaces first.
pub fn bleach<S: AsRef<str>>(text: &str, surfaces: &[S]) -> String {
    let mut out = text::collapse_whitespace(&text.to_lowercase());
    let mut keys: Vec<String> =
        surfaces.iter().map(|s| text::normalize(s.as_ref())).filter(|s| !s.is_empty() && !s.contains(HOLE)).collect();
    keys.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
    keys.dedup();
    for key in &keys {
        if out.contains(key.as_str()) {
            out = out.replace(key.as_str(), &HOLE.to_string());
        }
    }
    text::collapse_whitespace(&out.replace(HOLE, MASK))
}
