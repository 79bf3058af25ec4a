use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{
    build_addq_prompt, build_recluster_prompt, gold_examples, parse_expert_json, parse_qa_json, sample_incontext,
    Agent, AgentRequest, ExpertVerdict, InContextExample, ProxyError, Task,
};
use crate::providers::Reader;
use crate::session::{ApplyContext, Operation, SessionError, SessionState};
use crate::slotmap::EvaluationReport;
use crate::text;

/// Which experts an episode consults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Recluster verdicts on existing questions only.
    ReclusterOnly,
    /// Recluster verdicts, then new questions per document.
    ReclusterPlusAdd,
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recluster" | "recluster_only" => Ok(Policy::ReclusterOnly),
            "recluster+add" | "recluster_plus_add" => Ok(Policy::ReclusterPlusAdd),
            other => Err(format!("unknown policy {other:?} (expected recluster or recluster+add)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Action counts at which the evaluation is recorded; ascending, from 0.
    pub budgets: Vec<usize>,
    pub policy: Policy,
    /// Verdicts at or above this confidence make a question representative.
    pub rho: f64,
    /// Orders the documents visited on each pass.
    pub seed: u64,
    pub examples: Vec<InContextExample>,
    pub addq_examples: Vec<(String, String)>,
    /// Slot names offered to the expert, in prompt order.
    pub slot_names: Vec<String>,
    /// Passes over the documents; an episode also stops after a pass with no
    /// action.
    pub max_passes: usize,
    /// Timestamp of the first action; later ones add one millisecond each.
    pub start_ms: u64,
}

pub const EXAMPLES_PER_SLOT: usize = 10;
const ADDQ_EXAMPLES: usize = 3;

impl EpisodeConfig {
    /// Defaults drawn from the session: its slot inventory, ρ and seed, and
    /// in-context examples sampled from its gold-matching questions.
    pub fn for_session(state: &SessionState, budgets: Vec<usize>, policy: Policy) -> Self {
        let slot_names: Vec<String> = state.corpus.slot_inventory.iter().cloned().collect();
        let pool = gold_examples(state);
        let examples = sample_incontext(&pool, &slot_names, EXAMPLES_PER_SLOT, state.config.seed).examples;
        let addq_examples =
            examples.iter().take(ADDQ_EXAMPLES).map(|e| (e.question.clone(), e.answer.clone())).collect();
        EpisodeConfig {
            budgets,
            policy,
            rho: state.config.rho,
            seed: state.config.seed,
            examples,
            addq_examples,
            slot_names,
            max_passes: 3,
            start_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ProxyError> {
        if self.budgets.first() != Some(&0) {
            return Err(ProxyError::Config("budgets must start at 0".into()));
        }
        if self.budgets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ProxyError::Config("budgets must be strictly ascending".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(ProxyError::Config("rho must lie in [0, 1]".into()));
        }
        if self.slot_names.is_empty() {
            return Err(ProxyError::Config("no slot names to offer".into()));
        }
        Ok(())
    }
}

/// The evaluation after up to `budget` actions. `action_count` is lower than
/// the budget when the agent ran out of edits first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub budget: usize,
    pub action_count: usize,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub budgets: Vec<usize>,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    /// `budget,action_count,slot,precision,recall,f1`, one row per slot per
    /// point followed by micro and macro rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("budget,action_count,slot,precision,recall,f1\n");
        for p in &self.points {
            let mut row = |slot: &str, pr: f64, re: f64, f1: f64| {
                out.push_str(&format!("{},{},{slot},{pr:.4},{re:.4},{f1:.4}\n", p.budget, p.action_count));
            };
            for (slot, s) in &p.report.per_slot {
                row(slot, s.precision, s.recall, s.f1);
            }
            let m = &p.report.micro;
            row("micro", m.precision, m.recall, m.f1);
            let a = &p.report.macro_avg;
            row("macro", a.precision, a.recall, a.f1);
        }
        out
    }

    pub fn final_report(&self) -> Option<&EvaluationReport> {
        self.points.last().map(|p| &p.report)
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub state: SessionState,
    pub actions: usize,
    /// Responses that could not be parsed or turned into a valid operation.
    pub skipped: usize,
}

/// An agent failure; `partial` holds the points recorded before it.
#[derive(Debug)]
pub struct EpisodeError {
    pub partial: Trajectory,
    pub source: ProxyError,
}

impl fmt::Display for EpisodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "episode aborted after {} point(s): {}", self.partial.points.len(), self.source)
    }
}

impl std::error::Error for EpisodeError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Turns a verdict on question `qid` into at most one operation.
///
/// Same slot as the question's cluster: confidence decides the
/// representative flag. Another slot: a confident verdict moves the question
/// to the largest cluster mapped to that slot, an unconfident one demotes it.
pub fn decide(state: &SessionState, qid: &str, verdict: &ExpertVerdict, rho: f64) -> Option<Operation> {
    let current = state.cluster_of(qid)?;
    let confident = verdict.confidence >= rho;
    let rep = state.is_representative(qid);
    if state.mapping.slot_of(current) == Some(verdict.slot.as_str()) {
        return match (confident, rep) {
            (true, false) => Some(Operation::PromoteQuestion { qid: qid.to_string() }),
            (false, true) => Some(Operation::DemoteQuestion { qid: qid.to_string() }),
            _ => None,
        };
    }
    if !confident {
        return rep.then(|| Operation::DemoteQuestion { qid: qid.to_string() });
    }
    largest_cluster_for(state, &verdict.slot)
        .map(|to_cluster| Operation::MoveQuestion { qid: qid.to_string(), to_cluster })
}

fn largest_cluster_for(state: &SessionState, slot: &str) -> Option<usize> {
    let sizes = state.clusters.sizes();
    state.mapping.clusters_for(slot).into_iter().max_by(|a, b| sizes[*a].cmp(&sizes[*b]).then(b.cmp(a)))
}

struct Run<'a> {
    config: &'a EpisodeConfig,
    reader: &'a dyn Reader,
    state: SessionState,
    actions: usize,
    skipped: usize,
    trajectory: Trajectory,
}

enum Step {
    Continue,
    BudgetSpent,
}

impl Run<'_> {
    fn max_budget(&self) -> usize {
        *self.config.budgets.last().expect("validated")
    }

    fn record_due(&mut self) {
        while let Some(&b) = self.config.budgets.get(self.trajectory.points.len()) {
            if b != self.actions {
                break;
            }
            self.trajectory.points.push(TrajectoryPoint {
                budget: b,
                action_count: self.actions,
                report: self.state.report.clone(),
            });
        }
    }

    /// Applies `op`; invalid operations are counted and skipped.
    fn act(&mut self, op: Operation) -> Result<Step, ProxyError> {
        let ctx = ApplyContext { reader: self.reader, now_ms: self.config.start_ms + self.actions as u64 };
        match self.state.apply(op, &ctx) {
            Ok((next, digest)) => {
                debug!(action = self.actions + 1, micro_f1 = digest.micro_f1, "proxy action");
                self.state = next;
                self.actions += 1;
                self.record_due();
                Ok(if self.actions >= self.max_budget() { Step::BudgetSpent } else { Step::Continue })
            }
            Err(SessionError::InvalidOp(_) | SessionError::UnknownId { .. } | SessionError::NoRelevantDocument(_)) => {
                self.skipped += 1;
                Ok(Step::Continue)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn verdict(
        &mut self,
        agent: &mut dyn Agent,
        doc_id: &str,
        question: &str,
        answer: &str,
    ) -> Result<Option<ExpertVerdict>, ProxyError> {
        let prompt = build_recluster_prompt(&self.config.examples, question, &self.config.slot_names);
        let task = Task::Recluster { doc_id, question, answer, slots: &self.config.slot_names };
        let text = agent.respond(&AgentRequest { prompt: &prompt, task })?;
        match parse_expert_json(&text, &self.config.slot_names) {
            Ok(v) => Ok(Some(v)),
            Err(_) => {
                self.skipped += 1;
                Ok(None)
            }
        }
    }

    /// Returns true when an action was taken; `Err` aborts the episode.
    fn visit_document(&mut self, agent: &mut dyn Agent, doc_id: &str) -> Result<(bool, Step), ProxyError> {
        let mut acted = false;
        let qids: Vec<String> =
            self.state.questions.values().filter(|q| q.doc_id == doc_id).map(|q| q.id.clone()).collect();
        for qid in qids {
            let Some(q) = self.state.questions.get(&qid) else {
                continue;
            };
            let (question, answer) = (q.text.clone(), q.answer_text.clone());
            let Some(v) = self.verdict(agent, doc_id, &question, &answer)? else {
                continue;
            };
            if let Some(op) = decide(&self.state, &qid, &v, self.config.rho) {
                acted = true;
                if let Step::BudgetSpent = self.act(op)? {
                    return Ok((acted, Step::BudgetSpent));
                }
            }
        }
        if self.config.policy == Policy::ReclusterOnly {
            return Ok((acted, Step::Continue));
        }

        let Some(doc) = self.state.corpus.document(doc_id).cloned() else {
            return Ok((acted, Step::Continue));
        };
        let covered: Vec<String> =
            self.state.predictions().into_iter().filter(|p| p.doc_id == doc_id).map(|p| p.answer).collect();
        let prompt = build_addq_prompt(&doc.text, &self.config.addq_examples);
        let task = Task::AddQuestions { doc_id, covered: &covered };
        let text = agent.respond(&AgentRequest { prompt: &prompt, task })?;
        let pairs = match parse_qa_json(&text) {
            Ok(p) => p,
            Err(_) => {
                self.skipped += 1;
                return Ok((acted, Step::Continue));
            }
        };
        for (question, answer) in pairs {
            if text::find_ignore_case(&doc.text, &answer).is_none() {
                self.skipped += 1;
                continue;
            }
            let Some(v) = self.verdict(agent, doc_id, &question, &answer)? else {
                continue;
            };
            if v.confidence < self.config.rho {
                continue;
            }
            let Some(target) = largest_cluster_for(&self.state, &v.slot) else {
                continue;
            };
            let op = Operation::AddQuestion {
                text: question,
                target_cluster: Some(target),
                doc_id: Some(doc_id.to_string()),
                answer: Some(answer),
            };
            acted = true;
            if let Step::BudgetSpent = self.act(op)? {
                return Ok((acted, Step::BudgetSpent));
            }
        }
        Ok((acted, Step::Continue))
    }
}

/// Runs a budgeted proxy episode on a copy of `session`.
///
/// Documents are visited in a seeded order. For each, every question is put
/// to the recluster expert and the verdict applied; under
/// [`Policy::ReclusterPlusAdd`] the add-questions expert is then asked for
/// new question/answer pairs, each placed by a recluster verdict. The
/// evaluation is recorded whenever the action count reaches a budget, and
/// budgets not reached by the end hold the final evaluation.
pub fn run_episode(
    session: &SessionState,
    agent: &mut dyn Agent,
    config: &EpisodeConfig,
    reader: &dyn Reader,
) -> Result<Episode, EpisodeError> {
    let abort = |partial: Trajectory, source: ProxyError| EpisodeError { partial, source };
    config.validate().map_err(|e| abort(Trajectory::default(), e))?;
    let mut run = Run {
        config,
        reader,
        state: session.clone(),
        actions: 0,
        skipped: 0,
        trajectory: Trajectory { budgets: config.budgets.clone(), points: Vec::new() },
    };
    run.record_due();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    'passes: for _ in 0..config.max_passes {
        if run.actions >= run.max_budget() {
            break;
        }
        let mut docs: Vec<String> = run.state.corpus.documents.iter().map(|d| d.id.clone()).collect();
        docs.shuffle(&mut rng);
        let mut acted = false;
        for doc_id in docs {
            match run.visit_document(agent, &doc_id) {
                Ok((a, step)) => {
                    acted |= a;
                    if let Step::BudgetSpent = step {
                        break 'passes;
                    }
                }
                Err(e) => return Err(abort(run.trajectory, e)),
            }
        }
        if !acted {
            break;
        }
    }
    for &b in &config.budgets[run.trajectory.points.len()..] {
        run.trajectory.points.push(TrajectoryPoint {
            budget: b,
            action_count: run.actions,
            report: run.state.report.clone(),
        });
    }
    Ok(Episode { trajectory: run.trajectory, state: run.state, actions: run.actions, skipped: run.skipped })
}
