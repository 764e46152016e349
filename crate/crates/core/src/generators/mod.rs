//! Plan generators: the component that turns a task, a skill and the
//! session's feedback into an optimization plan.

mod llm_backend;
mod scripted;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::CriteriaReport;
use crate::evolution::SkillSet;
use crate::plan::OptimizationPlan;
use crate::taskspec::{task_to_value, TaskSpec};
use crate::taxonomy::ErrorCategory;

pub use llm_backend::{parse_plan_completion, LlmGenerator};
pub use scripted::{FaultProfile, ScriptedGenerator};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ProposeError {
    /// No usable plan was produced.
    #[error("no plan: {0}")]
    NoPlan(String),
    /// The backend could not be reached.
    #[error("transport failure: {0}")]
    Transport(String),
}

impl ProposeError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            ProposeError::NoPlan(_) => ErrorCategory::NoCode,
            ProposeError::Transport(_) => ErrorCategory::Infrastructure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub plan: OptimizationPlan,
    /// Tokens consumed by the backend for this proposal.
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackKind {
    ExecError { category: ErrorCategory, message: String },
    Margins { normalized: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    /// Attempt index within the round, starting at 1.
    pub attempt: u32,
    #[serde(flatten)]
    pub kind: FeedbackKind,
}

/// Compact summary carried into a fresh session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarriedBest {
    pub plan: OptimizationPlan,
    pub report: CriteriaReport,
    /// Error categories seen in the round that just finished.
    pub error_histogram: BTreeMap<ErrorCategory, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSession {
    pub session_id: String,
    pub round: u32,
    pub attempt: u32,
    pub carried_best: Option<CarriedBest>,
    pub feedback_log: Vec<FeedbackItem>,
    /// Plan emitted by the previous attempt of this session.
    pub last_plan: Option<OptimizationPlan>,
}

impl GeneratorSession {
    /// Fresh session for `round`; nothing survives from earlier rounds
    /// except `carried_best`.
    pub fn new(session_id: impl Into<String>, round: u32, carried_best: Option<CarriedBest>) -> Self {
        GeneratorSession {
            session_id: session_id.into(),
            round,
            attempt: 1,
            carried_best,
            feedback_log: Vec::new(),
            last_plan: None,
        }
    }

    pub fn record(&mut self, plan: Option<OptimizationPlan>, kind: FeedbackKind) {
        if plan.is_some() {
            self.last_plan = plan;
        }
        self.feedback_log.push(FeedbackItem { attempt: self.attempt, kind });
    }
}

pub trait PlanGenerator: Sync {
    fn name(&self) -> &str;

    fn propose(&self, task: &TaskSpec, skill: &SkillSet, session: &GeneratorSession) -> Result<Proposal, ProposeError>;
}

/// Prompt text for text-completion backends: skill markdown, then the task,
/// then the carried summary, then the session's feedback in attempt order.
pub fn render_prompt(task: &TaskSpec, skill: &SkillSet, session: &GeneratorSession) -> String {
    let mut p = String::new();
    p.push_str("# Skill\n\n");
    p.push_str(&skill.markdown_body);
    p.push_str("\n# Task\n\n");
    p.push_str(&task.query);
    let task_json = task_to_value(task);
    let criteria = serde_json::to_string_pretty(&task_json["gt_eval"]).expect("json");
    let space = serde_json::to_string_pretty(&task.design_space.params).expect("json");
    let _ = write!(p, "\n\nEvaluation:\n```json\n{criteria}\n```\n\nDesign parameters:\n```json\n{space}\n```\n");

    p.push_str("\n# Best prior candidate\n\n");
    match &session.carried_best {
        Some(cb) => {
            let margins: Vec<String> = cb.report.normalized_margins().iter().map(|m| format!("{m:.4}")).collect();
            let _ = writeln!(p, "```json\n{}\n```", serde_json::to_string_pretty(&cb.plan).expect("json"));
            let _ = writeln!(
                p,
                "SG={} CPF={:.3} BM={:.4}; normalized margins: [{}]",
                u8::from(cb.report.sg),
                cb.report.cpf,
                cb.report.bm,
                margins.join(", ")
            );
            if !cb.error_histogram.is_empty() {
                let errs: Vec<String> = cb.error_histogram.iter().map(|(c, n)| format!("{c}: {n}")).collect();
                let _ = writeln!(p, "Errors last round: {}", errs.join(", "));
            }
        }
        None => p.push_str("(none)\n"),
    }

    p.push_str("\n# Feedback\n\n");
    if session.feedback_log.is_empty() {
        p.push_str("(none)\n");
    }
    for item in &session.feedback_log {
        let _ = writeln!(p, "- attempt {}: {}", item.attempt, serde_json::to_string(&item.kind).expect("json"));
    }

    p.push_str(
        "\n# Output\n\nReply with a single ```json fenced block containing the plan: \
         {strategy_note, init{kind, seed, values?}, optimizer{method, lr, steps, restarts}, \
         loss_terms[{criterion_index, form, weight}], projection}.\n",
    );
    p
}
