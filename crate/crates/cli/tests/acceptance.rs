//! Acceptance runner: one PASS/FAIL line per headline criterion. Runs as a
//! plain binary (`harness = false`) so every criterion reports even when an
//! earlier one fails; the exit status is non-zero if any failed.

// `ensure!` negates whole float comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use slotforge_core::config::{InductionConfig, Method};
use slotforge_core::fixture::{MisplacedFixture, SessionFixture};
use slotforge_core::induction::{fit_tfidf, global_representatives, kmeans, kmeans_best};
use slotforge_core::providers::LexicalReader;
use slotforge_core::proxy::{
    build_addq_prompt, build_recluster_prompt, parse_expert_json, run_episode, EpisodeConfig, InContextExample, Policy,
    ScriptedGoldAgent,
};
use slotforge_core::session::{ApplyContext, Operation, SessionError, SessionState};
use slotforge_core::slotmap::{fuzzy_score, match_count, SlotScores};

use common::{
    as_groups, exhaustive_optimum, fixture, groups, labels_to_groups, random_op, spherical_objective, synthetic_config,
    synthetic_session,
};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn slotforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slotforge")).args(args).env_remove("SLOTFORGE_CONFIG").output().unwrap()
}

fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

/// Micro-F1 column of each method row printed by `evaluate`.
fn micro_by_method(out: &Output) -> Result<Vec<(String, f64)>, String> {
    ensure!(out.status.success(), "evaluate failed: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("no output")?.split_whitespace().collect();
    let col = header.iter().position(|h| *h == "micro-f1").ok_or("no micro-f1 column")?;
    lines
        .filter(|l| !l.trim().is_empty() && !l.starts_with('-'))
        .map(|l| {
            let cells: Vec<&str> = l.split_whitespace().collect();
            let f1 = cells.get(col).and_then(|c| c.parse().ok()).ok_or_else(|| format!("bad row {l:?}"))?;
            Ok((cells[0].to_string(), f1))
        })
        .collect()
}

fn synthetic_end_to_end() -> Outcome {
    let started = Instant::now();
    let out = slotforge(&[
        "evaluate",
        "--config",
        &path("synthetic.conf"),
        "--corpus",
        &path("synthetic.jsonl"),
        "--k",
        "4",
        "--seeds",
        "1",
        "--methods",
        "ai-only+bl+sc",
    ]);
    let secs = started.elapsed().as_secs_f64();
    let rows = micro_by_method(&out)?;
    let f1 = rows.iter().find(|r| r.0 == "ai-only+bl+sc").ok_or("no ai-only+bl+sc row")?.1;
    let detail = format!("micro-F1 {f1:.4} (need >= 0.95) in {secs:.2}s (need < 5s)");
    ensure!(f1 >= 0.95 && secs < 5.0, "{detail}");
    Ok(detail)
}

fn baseline_gap() -> Outcome {
    let out = slotforge(&[
        "evaluate",
        "--config",
        &path("synthetic.conf"),
        "--corpus",
        &path("synthetic.jsonl"),
        "--k",
        "4",
        "--seeds",
        "1..10",
        "--methods",
        "random,ai-only+bl+sc",
    ]);
    let rows = micro_by_method(&out)?;
    let get = |m: &str| rows.iter().find(|r| r.0 == m).map(|r| r.1).ok_or(format!("no {m} row"));
    let (ours, random) = (get("ai-only+bl+sc")?, get("random")?);
    let detail = format!("mean micro-F1 {ours:.4} vs random {random:.4}, gap {:.4} (need >= 0.20)", ours - random);
    ensure!(ours - random >= 0.20, "{detail}");
    Ok(detail)
}

#[derive(Deserialize)]
struct Upweight {
    words: Vec<String>,
    factor: f64,
}

#[derive(Deserialize)]
struct UpweightGolden {
    upweight: Upweight,
    before: Vec<Vec<String>>,
    after: Vec<Vec<String>>,
}

/// The parts of `old` as they lie in the new partition.
fn pieces(now: &BTreeSet<BTreeSet<String>>, old: &[String]) -> Vec<BTreeSet<String>> {
    now.iter()
        .map(|g| old.iter().filter(|id| g.contains(*id)).cloned().collect::<BTreeSet<_>>())
        .filter(|p| !p.is_empty())
        .collect()
}

fn scaling_effect() -> Outcome {
    let golden: UpweightGolden =
        serde_json::from_str(&std::fs::read_to_string(fixture("upweight9.golden.json")).unwrap()).unwrap();
    let config =
        InductionConfig { k: Some(3), restarts: 20, method: Method::AiOnlyBleach, ..InductionConfig::default() };
    let state = SessionFixture::load(&fixture("upweight9.json"))?.build(&config).map_err(|e| e.to_string())?;
    let ids: Vec<String> = state.questions.keys().cloned().collect();
    let optimum = |s: &SessionState| {
        let vectors: Vec<Vec<f64>> = s.questions.values().map(|q| q.embedding.clone()).collect();
        labels_to_groups(&ids, &exhaustive_optimum(&vectors, 3).1)
    };
    ensure!(groups(&state) == as_groups(&golden.before), "initial partition differs from golden");
    ensure!(optimum(&state) == as_groups(&golden.before), "golden initial partition is not the optimum");

    // hand-computed: "increase" is in 2 of 9 questions, idf = 1 + ln(10/3)
    let q0 = &state.questions["q0"].bleached;
    let idf = 1.0 + (10.0f64 / 3.0).ln();
    let col = *state.tfidf.vocabulary.get("increase").ok_or("increase not in vocabulary")?;
    let scale = golden.upweight.words.iter().map(|w| (w.clone(), golden.upweight.factor)).collect();
    let bleached: Vec<&str> = state.questions.values().map(|q| q.bleached.as_str()).collect();
    let scaled = fit_tfidf(&bleached, &scale).map_err(|e| e.to_string())?;
    let raw = scaled.raw_weights(q0);
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let want = golden.upweight.factor * idf / norm;
    let got = scaled.embed(q0).values[col];
    ensure!((raw[col] - golden.upweight.factor * idf).abs() < 1e-12, "scaled weight {} != {}", raw[col], 10.0 * idf);
    ensure!((got - want).abs() < 1e-12, "scaled embedding {got} != hand-computed {want}");

    let reader = LexicalReader::default();
    let op = Operation::UpweightWords { words: golden.upweight.words.clone(), factor: golden.upweight.factor };
    let (after, _) = state.apply(op, &ApplyContext { reader: &reader, now_ms: 0 }).map_err(|e| e.to_string())?;
    let now = groups(&after);
    ensure!(now == as_groups(&golden.after), "partition after upweight differs from golden");
    ensure!(optimum(&after) == now, "golden partition after upweight is not the optimum");
    // a split leaves part of an old cluster as a new cluster of its own; every
    // other old cluster keeps its largest part and loses the rest
    let (mut split, mut pulled) = (0, 0);
    for old in &golden.before {
        let parts = pieces(&now, old);
        if parts.len() > 1 && parts.iter().any(|p| now.contains(p)) {
            split += 1;
        } else {
            pulled += old.len() - parts.iter().map(BTreeSet::len).max().unwrap_or(0);
        }
    }
    ensure!(split == 1 && pulled == 1, "{split} clusters split, {pulled} questions pulled");
    Ok(format!("split 1, pulled 1, scaled embedding {got:.6} matches hand value"))
}

#[derive(Deserialize)]
struct PointSet {
    k: usize,
    points: Vec<Vec<f64>>,
}

fn kmeans_oracle() -> Outcome {
    let mut names: Vec<_> = std::fs::read_dir(fixture("kmeans"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let mut runs = 0;
    for p in &names {
        let set: PointSet = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        let name = p.file_name().unwrap().to_string_lossy();
        ensure!(set.points.len() <= 7, "{name} has more than 7 points");
        let vectors: Vec<Vec<f64>> = set
            .points
            .iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let (optimum, _) = exhaustive_optimum(&vectors, set.k);
        let best = kmeans_best(&vectors, set.k, 1..=20).map_err(|e| e.to_string())?;
        ensure!((best.inertia - optimum).abs() < 1e-9, "{name}: best-of-20 {} vs optimum {optimum}", best.inertia);
        ensure!(
            (spherical_objective(&vectors, &best.assignment, set.k) - best.inertia).abs() < 1e-9,
            "{name}: reported inertia disagrees with its assignment"
        );
        for seed in 1..=20 {
            let run = kmeans(&vectors, set.k, seed).map_err(|e| e.to_string())?;
            ensure!(run.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{name} seed {seed}: trace {:?}", run.trace);
            runs += 1;
        }
    }
    Ok(format!("{} fixtures at optimum (tol 1e-9), {runs} runs with non-increasing objective", names.len()))
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na * nb)
    }
}

fn representative_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let n = rng.gen_range(1..=8);
        let members: Vec<(String, Vec<f64>)> = (0..n)
            .map(|i| {
                // small integer coordinates make exact ties common
                let mut v: Vec<f64> = (0..4).map(|_| f64::from(rng.gen_range(0u8..3))).collect();
                if v.iter().all(|x| *x == 0.0) {
                    v[i % 4] = 1.0;
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (format!("q{i}"), v.into_iter().map(|x| x / norm).collect())
            })
            .collect();
        let top_k = rng.gen_range(1..10);
        let mut oracle: Vec<(String, f64)> = members
            .iter()
            .map(|(id, v)| {
                if n == 1 {
                    return (id.clone(), 1.0);
                }
                let total: f64 = members.iter().filter(|(o, _)| o != id).map(|(_, w)| cos(v, w)).sum();
                (id.clone(), total / (n - 1) as f64)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let view: Vec<(&str, &[f64])> = members.iter().map(|(id, v)| (id.as_str(), v.as_slice())).collect();
        let ours = global_representatives(&view, top_k);
        ensure!(ours.len() == top_k.min(n), "case {case}: {} reps for top_k {top_k}", ours.len());
        for (i, r) in ours.iter().enumerate() {
            ensure!((r.score - oracle[i].1).abs() < 1e-9, "case {case} rank {i}: score {} vs {}", r.score, oracle[i].1);
            // tied scores may differ in the last bits, so only untied ranks must agree on id
            let tied = oracle.iter().filter(|o| (o.1 - oracle[i].1).abs() < 1e-9).count() > 1;
            ensure!(tied || r.id == oracle[i].0, "case {case} rank {i}: {} vs {}", r.id, oracle[i].0);
        }
    }
    Ok("200 clusters of size <= 8 agree with brute force (tol 1e-9)".into())
}

fn brute_force_matching(preds: &[String], golds: &[String], theta: f64) -> usize {
    fn go(i: usize, preds: &[String], golds: &[String], used: &mut Vec<bool>, theta: f64) -> usize {
        if i == preds.len() {
            return 0;
        }
        let mut best = go(i + 1, preds, golds, used, theta);
        for g in 0..golds.len() {
            if !used[g] && fuzzy_score(&preds[i], &golds[g]) >= theta {
                used[g] = true;
                best = best.max(1 + go(i + 1, preds, golds, used, theta));
                used[g] = false;
            }
        }
        best
    }
    go(0, preds, golds, &mut vec![false; golds.len()], theta)
}

fn evaluation_arithmetic() -> Outcome {
    let s = SlotScores::from_counts(2, 1, 0);
    ensure!((s.precision - 2.0 / 3.0).abs() < 1e-9, "P = {}", s.precision);
    ensure!((s.recall - 1.0).abs() < 1e-9, "R = {}", s.recall);
    ensure!((s.f1 - 0.8).abs() < 1e-9, "F1 = {}", s.f1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let answer = |rng: &mut ChaCha8Rng| {
        // near-duplicates of a few stems so many pairs straddle the threshold
        let mut s: Vec<char> = ["heparin", "heparins", "hepatin"][rng.gen_range(0..3)].chars().collect();
        for _ in 0..rng.gen_range(0..3) {
            match rng.gen_range(0..4) {
                0 => s.push('x'),
                1 => {
                    s.pop();
                }
                2 => s.insert(0, 'a'),
                _ => s[0] = 'z',
            }
        }
        s.into_iter().collect::<String>()
    };
    for case in 0..100 {
        let preds: Vec<String> = (0..rng.gen_range(0..=5)).map(|_| answer(&mut rng)).collect();
        let golds: Vec<String> = (0..rng.gen_range(0..=5)).map(|_| answer(&mut rng)).collect();
        let view: Vec<&str> = preds.iter().map(String::as_str).collect();
        let (ours, best) = (match_count(&view, &golds, 0.8), brute_force_matching(&preds, &golds, 0.8));
        ensure!(ours == best, "case {case}: {ours} matches vs optimum {best} ({preds:?} / {golds:?})");
    }
    Ok(format!(
        "P {:.4}, R {:.1}, F1 {:.1}; 100 random documents match the optimal matching",
        s.precision, s.recall, s.f1
    ))
}

fn session_fuzz() -> Outcome {
    let reader = LexicalReader::default();
    let initial = synthetic_session();
    let mut live = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut expected = live.questions.len();
    let mut applied = 0u64;
    while applied < 1000 {
        let op = random_op(&live, &mut rng);
        let deleting = matches!(op, Operation::DeleteQuestion { .. });
        match live.apply(op, &ApplyContext { reader: &reader, now_ms: applied + 1 }) {
            Ok((next, digest)) => {
                expected = expected - usize::from(deleting) + digest.added_questions.len();
                live = next;
                applied += 1;
            }
            // reader-mode adds may find nothing to answer
            Err(SessionError::NoRelevantDocument(_)) => continue,
            Err(e) => return Err(format!("valid op rejected: {e}")),
        }
        ensure!(
            live.questions.len() == expected,
            "op {applied}: {} questions, expected {expected}",
            live.questions.len()
        );
        live.check_invariants().map_err(|e| format!("op {applied}: {e}"))?;
    }
    let replayed = initial.replay(&live.event_log, &reader).map_err(|e| e.to_string())?;
    ensure!(replayed == live, "replayed state differs from live state");
    Ok(format!("{applied} ops, {} questions, {} clusters, replay equal", live.questions.len(), live.cluster_count()))
}

fn proxy_trajectory() -> Outcome {
    let budgets = vec![0, 5, 10, 15, 20];
    let reader = LexicalReader::default();
    let episode = |state: &SessionState, policy: Policy| {
        let mut agent = ScriptedGoldAgent::new(Arc::clone(&state.corpus), state.config.theta);
        let config = EpisodeConfig::for_session(state, budgets.clone(), policy);
        run_episode(state, &mut agent, &config, &reader).map_err(|e| e.to_string())
    };
    let misplaced = MisplacedFixture::load(&fixture("misplaced8.json"))?.build(&synthetic_config())?;
    let ep = episode(&misplaced, Policy::ReclusterOnly)?;
    let f1: Vec<f64> = ep.trajectory.points.iter().map(|p| p.report.micro.f1).collect();
    let slot_f1: Vec<f64> = ep.state.report.per_slot.values().map(|s| s.f1).collect();
    ensure!(ep.actions <= 8, "{} actions (need <= 8)", ep.actions);
    ensure!(slot_f1.iter().all(|f| (f - 1.0).abs() < 1e-12), "per-slot F1 {slot_f1:?} after {} actions", ep.actions);
    ensure!(f1.windows(2).all(|w| w[1] >= w[0] - 1e-12), "micro-F1 trajectory decreases: {f1:?}");

    let withheld = MisplacedFixture::load(&fixture("withheld3.json"))?.build(&synthetic_config())?;
    let only = episode(&withheld, Policy::ReclusterOnly)?;
    let plus = episode(&withheld, Policy::ReclusterPlusAdd)?;
    let last = |e: &slotforge_core::proxy::Episode| e.trajectory.final_report().map(|r| r.micro.f1).unwrap_or(0.0);
    let (f_only, f_plus) = (last(&only), last(&plus));
    ensure!(f_plus >= f_only, "withheld: recluster+add {f_plus:.4} < recluster {f_only:.4}");
    Ok(format!(
        "misplaced8: all slots F1 1.0 after {} actions, micro-F1 {:?}; withheld3: +add {f_plus:.4} >= only {f_only:.4}",
        ep.actions,
        f1.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
    ))
}

#[derive(Deserialize)]
struct Expected {
    slot: String,
    confidence: f64,
}

#[derive(Deserialize)]
struct Case {
    response: String,
    expect: Option<Expected>,
}

fn prompts_and_parsing() -> Outcome {
    let ex = |slot: &str, q: &str, a: &str| InContextExample {
        slot: slot.into(),
        question: q.into(),
        answer: a.into(),
        doc_id: "b".into(),
    };
    let slots: Vec<String> = ["Cause", "Downregulator", "Inhibitor", "Upregulator"].map(String::from).to_vec();
    let examples = [
        ex("Cause", "What does pilocarpine induce in rats?", "status epilepticus"),
        ex("Inhibitor", "What may inhibit the metabolism of mifepristone?", "erythromycin"),
        ex("Upregulator", "What was shown to increase the Cmax of midazolam?", "clarithromycin"),
    ];
    let recluster = build_recluster_prompt(&examples, "What does pilocarpine cause in rats?", &slots);
    ensure!(
        recluster == std::fs::read_to_string(fixture("prompts/recluster.txt")).unwrap(),
        "recluster prompt differs from golden"
    );
    let context =
        "Heparin was given to patients with deep vein thrombosis. Bleeding was reported by the nursing staff.";
    let pairs = [
        ("What does heparin treat?", "deep vein thrombosis"),
        ("Who reported the bleeding?", "the nursing staff"),
        ("What was reported by the nursing staff?", "Bleeding"),
    ]
    .map(|(q, a)| (q.to_string(), a.to_string()));
    let addq = build_addq_prompt(context, &pairs);
    ensure!(
        addq == std::fs::read_to_string(fixture("prompts/addq.txt")).unwrap(),
        "add-question prompt differs from golden"
    );

    let cases: Vec<Case> =
        serde_json::from_str(&std::fs::read_to_string(fixture("prompts/expert_responses.json")).unwrap()).unwrap();
    ensure!(cases.len() == 20, "{} parse cases", cases.len());
    for (i, case) in cases.iter().enumerate() {
        match (parse_expert_json(&case.response, &slots), &case.expect) {
            (Ok(v), Some(want)) => {
                ensure!(v.slot == want.slot && (v.confidence - want.confidence).abs() < 1e-12, "case {i}: got {v:?}")
            }
            (Err(_), None) => {}
            (got, _) => return Err(format!("case {i}: got {got:?}")),
        }
    }
    Ok("both prompts byte-match goldens; 20/20 parse cases".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let o = slotforge(&[
            "induce",
            "--config",
            &path("synthetic.conf"),
            "--corpus",
            &path("synthetic.jsonl"),
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure!(o.status.success(), "induce failed: {}", String::from_utf8_lossy(&o.stderr));
        outs.push(std::fs::read(&out).unwrap());
    }
    ensure!(outs[0] == outs[1], "snapshots differ");
    let text = String::from_utf8_lossy(&outs[0]);
    ensure!(text.contains("\"embedding\""), "snapshot has no embeddings");
    Ok(format!("two snapshots of {} bytes are identical, embeddings included", outs[0].len()))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("synthetic end-to-end", synthetic_end_to_end),
        ("baseline gap", baseline_gap),
        ("scaling effect", scaling_effect),
        ("k-means oracle", kmeans_oracle),
        ("representative oracle", representative_oracle),
        ("evaluation arithmetic", evaluation_arithmetic),
        ("session fuzz", session_fuzz),
        ("proxy trajectory", proxy_trajectory),
        ("prompts and parsing", prompts_and_parsing),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
