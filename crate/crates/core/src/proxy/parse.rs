use indexmap::IndexMap;
use serde_json::Value;

use super::{ExpertVerdict, ProxyError};

pub const DEFAULT_CONFIDENCE: f64 = 0.5;

/// End (exclusive byte offset) of the balanced `{...}` starting at `start`,
/// skipping braces inside string literals.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// The first balanced `{...}` in `text` that parses as a JSON object, keys in
/// document order.
pub fn first_json_object(text: &str) -> Option<IndexMap<String, Value>> {
    text.char_indices().filter(|(_, c)| *c == '{').find_map(|(start, _)| {
        let end = balanced_end(text, start)?;
        serde_json::from_str(&text[start..end]).ok()
    })
}

fn confidence_of(value: &Value) -> Option<f64> {
    let x = match value {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => {
            let s = s.trim();
            match s.strip_suffix('%') {
                Some(p) => p.trim().parse::<f64>().ok()? / 100.0,
                None => s.parse().ok()?,
            }
        }
        _ => return None,
    };
    x.is_finite().then(|| x.clamp(0.0, 1.0))
}

fn is_confidence_key(key: &str) -> bool {
    let k: String = key.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    k == "confidence" || k == "confidencescore"
}

/// Reads an expert verdict: the first object key naming an allowed slot
/// (case-insensitive) and the `confidence` value clamped to [0, 1]. Without a
/// confidence key a numeric slot value is read instead (`{"Cause": 0.9}`);
/// otherwise the confidence is 0.5.
pub fn parse_expert_json(response: &str, allowed_slots: &[String]) -> Result<ExpertVerdict, ProxyError> {
    let object = first_json_object(response).ok_or(ProxyError::NoJson)?;
    let (slot, value) = object
        .iter()
        .find_map(|(k, v)| allowed_slots.iter().find(|s| s.eq_ignore_ascii_case(k.trim())).map(|s| (s, v)))
        .ok_or_else(|| ProxyError::NoSlotKey(object.keys().cloned().collect()))?;
    let confidence = match object.iter().find(|(k, _)| is_confidence_key(k)) {
        Some((_, v)) => confidence_of(v),
        None => value.as_f64().and_then(|_| confidence_of(value)),
    }
    .unwrap_or(DEFAULT_CONFIDENCE);
    Ok(ExpertVerdict { slot: slot.clone(), confidence, raw: response.to_string() })
}

/// Question/answer pairs from an add-questions response. Non-string values
/// and empty entries are dropped.
pub fn parse_qa_json(response: &str) -> Result<Vec<(String, String)>, ProxyError> {
    let object = first_json_object(response).ok_or(ProxyError::NoJson)?;
    Ok(object
        .into_iter()
        .filter_map(|(q, a)| match a {
            Value::String(a) if !q.trim().is_empty() && !a.trim().is_empty() => {
                Some((q.trim().to_string(), a.trim().to_string()))
            }
            _ => None,
        })
        .collect())
}
