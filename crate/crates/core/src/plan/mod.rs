//! Declarative optimization plans and their deterministic execution.
//!
//! A plan names an initialization, an optimizer profile and one hinge term
//! per criterion. Execution runs projected gradient steps on the compiled
//! loss using exact derivatives from the solver.

mod exec;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskspec::TaskSpec;
use crate::taxonomy::ErrorCategory;

pub use exec::{
    evaluate_loss, execute_plan, loss_and_gradient, ExecStatus, ExecutionOutcome, LossEvaluation, RuntimeLimits,
    DEFAULT_SOLVER_CALL_BUDGET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Midpoint,
    RandomUniform,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub kind: InitKind,
    #[serde(default)]
    pub seed: u64,
    /// Physical design values, required for `explicit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl InitSpec {
    pub fn midpoint(seed: u64) -> Self {
        InitSpec { kind: InitKind::Midpoint, seed, values: None }
    }

    pub fn random(seed: u64) -> Self {
        InitSpec { kind: InitKind::RandomUniform, seed, values: None }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        InitSpec { kind: InitKind::Explicit, seed: 0, values: Some(values) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    /// Projected gradient descent.
    #[default]
    Gd,
    /// Adam with the usual moment constants.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(default)]
    pub method: OptimizerMethod,
    pub lr: f64,
    pub steps: u32,
    #[serde(default)]
    pub restarts: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    #[default]
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub criterion_index: usize,
    #[serde(default)]
    pub form: LossForm,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub terms: Vec<LossTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `weight / (value - lower_bound)`; diverges at the lower bound.
    ReciprocalOffset,
}

/// Extra regularization term on one design parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub param_index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationPlan {
    #[serde(default)]
    pub strategy_note: String,
    pub init: InitSpec,
    pub optimizer: OptimizerSpec,
    pub loss_terms: Vec<LossTerm>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub penalties: Vec<Penalty>,
    #[serde(default = "default_projection")]
    pub projection: bool,
}

fn default_projection() -> bool {
    true
}

impl OptimizationPlan {
    /// Plan with unit-weight hinge terms over every criterion of `task`.
    pub fn for_task(task: &TaskSpec, init: InitSpec, optimizer: OptimizerSpec) -> Self {
        OptimizationPlan {
            strategy_note: String::new(),
            init,
            optimizer,
            loss_terms: compile_loss(task).terms,
            penalties: Vec::new(),
            projection: true,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{category}: {message}")]
pub struct PlanError {
    pub category: ErrorCategory,
    pub message: String,
}

impl PlanError {
    pub fn new(category: ErrorCategory, message: impl fmt::Display) -> Self {
        PlanError { category, message: message.to_string() }
    }
}

/// One unit-weight hinge term per criterion, in criterion order.
pub fn compile_loss(task: &TaskSpec) -> LossSpec {
    LossSpec {
        terms: (0..task.criteria.len())
            .map(|criterion_index| LossTerm { criterion_index, form: LossForm::Hinge, weight: 1.0 })
            .collect(),
    }
}

/// Static checks before execution. Index problems map to
/// `TensorIndexOob`; bad numeric settings map to `ApiMisuse`.
pub fn validate_plan(plan: &OptimizationPlan, task: &TaskSpec) -> Result<(), PlanError> {
    use ErrorCategory::{ApiMisuse, TensorIndexOob};
    let k = task.criteria.len();
    let d = task.design_space.dim();

    let mut covered = vec![0usize; k];
    for term in &plan.loss_terms {
        if term.criterion_index >= k {
            return Err(PlanError::new(
                TensorIndexOob,
                format!("loss term references criterion {} but the task has {k}", term.criterion_index),
            ));
        }
        covered[term.criterion_index] += 1;
        if !(term.weight.is_finite() && term.weight > 0.0) {
            return Err(PlanError::new(ApiMisuse, format!("loss weight must be positive, got {}", term.weight)));
        }
    }
    if let Some(j) = covered.iter().position(|&c| c != 1) {
        let what = if covered[j] == 0 { "missing" } else { "duplicated" };
        return Err(PlanError::new(TensorIndexOob, format!("loss term for criterion {j} is {what}")));
    }

    for p in &plan.penalties {
        if p.param_index >= d {
            return Err(PlanError::new(
                TensorIndexOob,
                format!("penalty references parameter {} but the design has {d}", p.param_index),
            ));
        }
        if !(p.weight.is_finite() && p.weight > 0.0) {
            return Err(PlanError::new(ApiMisuse, format!("penalty weight must be positive, got {}", p.weight)));
        }
    }

    let opt = &plan.optimizer;
    if !(opt.lr.is_finite() && opt.lr > 0.0) {
        return Err(PlanError::new(ApiMisuse, format!("learning rate must be positive, got {}", opt.lr)));
    }
    if opt.steps == 0 {
        return Err(PlanError::new(ApiMisuse, "steps must be at least 1"));
    }

    match (plan.init.kind, &plan.init.values) {
        (InitKind::Explicit, None) => return Err(PlanError::new(ApiMisuse, "explicit init needs values")),
        (InitKind::Explicit, Some(v)) if v.len() != d => {
            return Err(PlanError::new(
                TensorIndexOob,
                format!("explicit init has {} values but the design has {d}", v.len()),
            ))
        }
        (InitKind::Explicit, Some(v)) if !task.design_space.contains(v) => {
            return Err(PlanError::new(ApiMisuse, "explicit init lies outside the design bounds"))
        }
        _ => {}
    }
    Ok(())
}
