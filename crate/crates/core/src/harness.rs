//! Per-task generation and evaluation with two-level retry.
//!
//! Outer rounds reset the generator session and carry forward only the
//! best candidate so far plus a compact summary. Inner attempts revise
//! within a session using execution errors or per-criterion margins. The
//! loop stops at the first attempt that satisfies every criterion.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{evaluate_task, CriteriaReport};
use crate::evolution::SkillSet;
use crate::generators::{CarriedBest, FeedbackKind, GeneratorSession, PlanGenerator, ProposeError};
use crate::physics::PhysicsError;
use crate::plan::{execute_plan, ExecStatus, OptimizationPlan, PlanError, RuntimeLimits};
use crate::taskspec::{TaskSpec, TemplateId};
use crate::taxonomy::ErrorCategory;
use crate::util::{bool_as_int, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub outer_rounds: u32,
    pub inner_attempts: u32,
    pub seed: u64,
    pub limits: RuntimeLimitsConfig,
}

/// Serializable mirror of [`RuntimeLimits`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeLimitsConfig {
    pub solver_call_budget: u64,
}

impl From<RuntimeLimitsConfig> for RuntimeLimits {
    fn from(c: RuntimeLimitsConfig) -> Self {
        RuntimeLimits { solver_call_budget: c.solver_call_budget }
    }
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            outer_rounds: 5,
            inner_attempts: 2,
            seed: 0,
            limits: RuntimeLimitsConfig { solver_call_budget: crate::plan::DEFAULT_SOLVER_CALL_BUDGET },
        }
    }
}

impl HarnessConfig {
    pub fn max_attempts(&self) -> u32 {
        self.outer_rounds * self.inner_attempts
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.outer_rounds == 0 || self.inner_attempts == 0 {
            return Err("outer_rounds and inner_attempts must both be at least 1".into());
        }
        if self.limits.solver_call_budget == 0 {
            return Err("solver_call_budget must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateStatus {
    Evaluated,
    ExecutionError { category: ErrorCategory, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Global attempt index, `(round - 1) * A + attempt`.
    pub ordinal: u32,
    pub round: u32,
    pub attempt: u32,
    pub plan: Option<OptimizationPlan>,
    #[serde(flatten)]
    pub status: CandidateStatus,
    pub report: Option<CriteriaReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub final_params: Vec<f64>,
    pub final_loss: Option<f64>,
    pub steps_used: u64,
    pub solver_calls: u64,
}

impl CandidateRecord {
    pub fn error_category(&self) -> Option<ErrorCategory> {
        match &self.status {
            CandidateStatus::Evaluated => None,
            CandidateStatus::ExecutionError { category, .. } => Some(*category),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub template: TemplateId,
    #[serde(with = "bool_as_int")]
    pub sg: bool,
    #[serde(with = "bool_as_int")]
    pub se: bool,
    pub cpf: f64,
    /// Absent when no candidate executed.
    pub bm: Option<f64>,
    pub attempts: u32,
    pub error_category: Option<ErrorCategory>,
    pub first_success_attempt: Option<u32>,
    pub best: Option<CandidateRecord>,
    pub candidates: Vec<CandidateRecord>,
    pub generator_calls: u32,
    pub tokens: u64,
}

impl TaskRecord {
    /// Category of every failed attempt, in attempt order.
    pub fn failed_categories(&self) -> Vec<ErrorCategory> {
        self.candidates.iter().filter_map(CandidateRecord::error_category).collect()
    }
}

/// Error sources that can end an attempt without an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptFailure {
    Propose(ProposeError),
    Plan(PlanError),
    Physics(PhysicsError),
    Timeout,
}

/// Map any attempt failure onto the error taxonomy.
pub fn classify_failure(failure: &AttemptFailure) -> ErrorCategory {
    match failure {
        AttemptFailure::Propose(e) => e.category(),
        AttemptFailure::Plan(e) => e.category,
        AttemptFailure::Physics(PhysicsError::NonFiniteResponse | PhysicsError::NonFiniteGradient { .. }) => {
            ErrorCategory::GradientError
        }
        AttemptFailure::Physics(PhysicsError::InvalidInput(_) | PhysicsError::EvanescentSubstrate) => {
            ErrorCategory::ApiMisuse
        }
        AttemptFailure::Timeout => ErrorCategory::Infrastructure,
    }
}

/// Order two evaluated candidates: higher CPF, then higher BM, then the
/// earlier ordinal. `Greater` means `a` ranks above `b`.
pub fn rank(a: &CandidateRecord, b: &CandidateRecord) -> Ordering {
    let key = |c: &CandidateRecord| c.report.as_ref().map(|r| (r.cpf, r.bm)).unwrap_or((f64::NEG_INFINITY, f64::NEG_INFINITY));
    let (ca, ba) = key(a);
    let (cb, bb) = key(b);
    ca.total_cmp(&cb).then(ba.total_cmp(&bb)).then(b.ordinal.cmp(&a.ordinal))
}

fn run_attempt(
    task: &TaskSpec,
    skill: &SkillSet,
    generator: &dyn PlanGenerator,
    session: &GeneratorSession,
    ordinal: u32,
    exec_seed: u64,
    limits: &RuntimeLimits,
) -> (CandidateRecord, u64) {
    let mut record = CandidateRecord {
        ordinal,
        round: session.round,
        attempt: session.attempt,
        plan: None,
        status: CandidateStatus::Evaluated,
        report: None,
        final_params: Vec::new(),
        final_loss: None,
        steps_used: 0,
        solver_calls: 0,
    };
    let proposal = match generator.propose(task, skill, session) {
        Ok(p) => p,
        Err(e) => {
            let failure = AttemptFailure::Propose(e.clone());
            record.status = CandidateStatus::ExecutionError { category: classify_failure(&failure), message: e.to_string() };
            return (record, 0);
        }
    };
    let outcome = execute_plan(&proposal.plan, task, exec_seed, limits);
    record.plan = Some(proposal.plan);
    record.steps_used = outcome.steps_used;
    record.solver_calls = outcome.solver_calls;
    match outcome.status {
        ExecStatus::ExecutionError { category, message } => {
            record.status = CandidateStatus::ExecutionError { category, message };
        }
        ExecStatus::Evaluated => match evaluate_task(task, &outcome.responses) {
            Ok(report) => {
                record.report = Some(report);
                record.final_params = outcome.final_params;
                record.final_loss = Some(outcome.final_loss);
            }
            Err(e) => {
                record.status =
                    CandidateStatus::ExecutionError { category: ErrorCategory::ApiMisuse, message: e.to_string() };
            }
        },
    }
    (record, proposal.tokens)
}

/// Run the two-level retry loop on one task.
pub fn codegen_eval(task: &TaskSpec, skill: &SkillSet, generator: &dyn PlanGenerator, config: &HarnessConfig) -> TaskRecord {
    let a_max = config.inner_attempts;
    let limits: RuntimeLimits = config.limits.into();
    let exec_seed = derive_seed(config.seed, &task.task_id);
    let mut candidates: Vec<CandidateRecord> = Vec::new();
    let mut best: Option<usize> = None;
    let mut carried: Option<CarriedBest> = None;
    let mut tokens = 0;
    let mut calls = 0;

    for r in 1..=config.outer_rounds {
        let mut session = GeneratorSession::new(format!("{}/round-{r}", task.task_id), r, carried.clone());
        let mut round_errors: BTreeMap<ErrorCategory, u32> = BTreeMap::new();
        for a in 1..=a_max {
            session.attempt = a;
            let ordinal = (r - 1) * a_max + a;
            let (cand, used) = run_attempt(task, skill, generator, &session, ordinal, exec_seed, &limits);
            calls += 1;
            tokens += used;
            let feedback = match (&cand.status, &cand.report) {
                (CandidateStatus::Evaluated, Some(report)) => {
                    FeedbackKind::Margins { normalized: report.normalized_margins() }
                }
                (CandidateStatus::ExecutionError { category, message }, _) => {
                    *round_errors.entry(*category).or_default() += 1;
                    FeedbackKind::ExecError { category: *category, message: message.clone() }
                }
                (CandidateStatus::Evaluated, None) => unreachable!("evaluated candidates carry a report"),
            };
            let plan = cand.plan.clone();
            let success = cand.report.as_ref().is_some_and(|rep| rep.sg);
            candidates.push(cand);
            let idx = candidates.len() - 1;
            if candidates[idx].report.is_some()
                && best.is_none_or(|b| rank(&candidates[idx], &candidates[b]) == Ordering::Greater)
            {
                best = Some(idx);
            }
            if success {
                return finish(task, candidates, best, ordinal, true, calls, tokens);
            }
            session.record(plan, feedback);
        }
        carried = best.map(|b| {
            let c = &candidates[b];
            CarriedBest {
                plan: c.plan.clone().expect("evaluated candidates have a plan"),
                report: c.report.clone().expect("evaluated candidates have a report"),
                error_histogram: round_errors,
            }
        });
    }
    finish(task, candidates, best, config.max_attempts(), false, calls, tokens)
}

fn finish(
    task: &TaskSpec,
    candidates: Vec<CandidateRecord>,
    best: Option<usize>,
    attempts: u32,
    sg: bool,
    generator_calls: u32,
    tokens: u64,
) -> TaskRecord {
    let best = best.map(|b| candidates[b].clone());
    let report = best.as_ref().and_then(|b| b.report.as_ref());
    let error_category = if best.is_none() { candidates.iter().rev().find_map(|c| c.error_category()) } else { None };
    TaskRecord {
        task_id: task.task_id.clone(),
        template: task.template,
        sg,
        se: best.is_some(),
        cpf: report.map_or(0.0, |r| r.cpf),
        bm: report.map(|r| r.bm),
        attempts,
        error_category,
        first_success_attempt: sg.then_some(attempts),
        best,
        candidates,
        generator_calls,
        tokens,
    }
}

/// Evaluate many tasks concurrently; output order follows `tasks`.
pub fn run_batch(tasks: &[TaskSpec], skill: &SkillSet, generator: &dyn PlanGenerator, config: &HarnessConfig) -> Vec<TaskRecord> {
    tasks.par_iter().map(|t| codegen_eval(t, skill, generator, config)).collect()
}

pub fn write_jsonl(path: &Path, records: &[TaskRecord]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<TaskRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    file.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| {
            let line = l?;
            serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
