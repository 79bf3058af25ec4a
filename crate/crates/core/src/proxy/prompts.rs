use indexmap::IndexMap;
use tracing::warn;

use super::InContextExample;

/// `{"Slot": {"question": "answer", ...}, ...}` with slots in first-seen
/// order and examples in input order; empty when there are no examples.
fn examples_block(examples: &[InContextExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut by_slot: IndexMap<&str, IndexMap<&str, &str>> = IndexMap::new();
    for e in examples {
        by_slot.entry(e.slot.as_str()).or_default().insert(&e.question, &e.answer);
    }
    serde_json::to_string(&by_slot).expect("strings serialize")
}

/// The recluster and slot-mapping expert prompt.
pub fn build_recluster_prompt(examples: &[InContextExample], question: &str, slot_names: &[String]) -> String {
    if examples.is_empty() {
        warn!("recluster prompt built without in-context examples");
    }
    format!(
        "Below are the clusters:{}. What is the closest cluster in which there are questions like : \"{}\" should belong to? Answer should be in json format and the key of the json should be within one of the keys among: {}, also include the confidence score",
        examples_block(examples),
        question,
        slot_names.join(", ")
    )
}

/// The add-questions expert prompt. `examples` are question/answer pairs.
pub fn build_addq_prompt(context: &str, examples: &[(String, String)]) -> String {
    let pairs = if examples.is_empty() {
        String::new()
    } else {
        let map: IndexMap<&str, &str> = examples.iter().map(|(q, a)| (q.as_str(), a.as_str())).collect();
        serde_json::to_string(&map).expect("strings serialize")
    };
    format!(
        "Can you ask questions from the context {context} such that each salient mention is present in one question and another salient mention is the answer? Answer should be in the JSON Format {{Question:Answer}}. Answer should only be the salient mention. Do not include an entire sentence. Here are a few examples of question-answer pairs generated : {pairs}"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(slot: &str, q: &str, a: &str) -> InContextExample {
        InContextExample { slot: slot.into(), question: q.into(), answer: a.into(), doc_id: "d".into() }
    }

    #[test]
    fn empty_examples_leave_empty_sections() {
        let p = build_recluster_prompt(&[], "Who?", &["A".into(), "B".into()]);
        assert!(p.starts_with("Below are the clusters:. What is the closest cluster"));
        assert!(p.contains("among: A, B, also"));
        let p = build_addq_prompt("Some text.", &[]);
        assert!(p.ends_with("generated : "));
    }

    #[test]
    fn examples_grouped_by_slot_in_order() {
        let block = examples_block(&[ex("B", "q1?", "a1"), ex("A", "q2?", "a2"), ex("B", "q3?", "a3")]);
        assert_eq!(block, r#"{"B":{"q1?":"a1","q3?":"a3"},"A":{"q2?":"a2"}}"#);
    }
}
