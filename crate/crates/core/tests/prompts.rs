mod common;

use serde::Deserialize;
use slotforge_core::proxy::{
    build_addq_prompt, build_recluster_prompt, parse_expert_json, parse_qa_json, InContextExample, ProxyError,
};

use common::fixture;

fn ex(slot: &str, q: &str, a: &str) -> InContextExample {
    InContextExample { slot: slot.into(), question: q.into(), answer: a.into(), doc_id: "b".into() }
}

fn slots() -> Vec<String> {
    ["Cause", "Downregulator", "Inhibitor", "Upregulator"].map(String::from).to_vec()
}

#[test]
fn recluster_prompt_matches_golden_bytes() {
    let examples = [
        ex("Cause", "What does pilocarpine induce in rats?", "status epilepticus"),
        ex("Inhibitor", "What may inhibit the metabolism of mifepristone?", "erythromycin"),
        ex("Upregulator", "What was shown to increase the Cmax of midazolam?", "clarithromycin"),
    ];
    let got = build_recluster_prompt(&examples, "What does pilocarpine cause in rats?", &slots());
    assert_eq!(got, std::fs::read_to_string(fixture("prompts/recluster.txt")).unwrap());
}

#[test]
fn addq_prompt_matches_golden_bytes() {
    let context =
        "Heparin was given to patients with deep vein thrombosis. Bleeding was reported by the nursing staff.";
    let pairs = [
        ("What does heparin treat?", "deep vein thrombosis"),
        ("Who reported the bleeding?", "the nursing staff"),
        ("What was reported by the nursing staff?", "Bleeding"),
    ]
    .map(|(q, a)| (q.to_string(), a.to_string()));
    let got = build_addq_prompt(context, &pairs);
    assert_eq!(got, std::fs::read_to_string(fixture("prompts/addq.txt")).unwrap());
}

#[derive(Deserialize)]
struct Expected {
    slot: String,
    confidence: f64,
}

/// A response and its expected verdict; no verdict means a parse error.
#[derive(Deserialize)]
struct Case {
    response: String,
    expect: Option<Expected>,
}

#[test]
fn expert_responses_parse_or_fail_cleanly() {
    let cases: Vec<Case> =
        serde_json::from_str(&std::fs::read_to_string(fixture("prompts/expert_responses.json")).unwrap()).unwrap();
    assert_eq!(cases.len(), 20);
    for (i, case) in cases.iter().enumerate() {
        match (parse_expert_json(&case.response, &slots()), &case.expect) {
            (Ok(v), Some(want)) => {
                assert_eq!(v.slot, want.slot, "case {i}");
                assert!((v.confidence - want.confidence).abs() < 1e-12, "case {i}: {}", v.confidence);
            }
            (Err(ProxyError::NoJson | ProxyError::NoSlotKey(_)), None) => {}
            (got, _) => panic!("case {i}: got {got:?}"),
        }
    }
}

#[test]
fn unknown_keys_are_reported() {
    match parse_expert_json(r#"{"Regulator": 1, "confidence": 0.2}"#, &slots()) {
        Err(ProxyError::NoSlotKey(keys)) => assert!(keys.contains(&"Regulator".to_string())),
        other => panic!("{other:?}"),
    }
}

#[test]
fn question_answer_pairs_keep_order() {
    let pairs =
        parse_qa_json("Here you go: {\"What treats gout?\": \"colchicine\", \"Who ran it?\": \"Dr. Lee\"}").unwrap();
    assert_eq!(
        pairs,
        [("What treats gout?".to_string(), "colchicine".to_string()), ("Who ran it?".into(), "Dr. Lee".into())]
    );
    assert!(matches!(parse_qa_json("none"), Err(ProxyError::NoJson)));
}
