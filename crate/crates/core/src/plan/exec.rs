//! Plan execution: loss and gradient evaluation, optimizer loop, restarts.
//!
//! Iterates live in the unit box `u in [0, 1]^d` with
//! `param = lower + u * (upper - lower)`, so one learning rate suits
//! thicknesses and indices alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{validate_plan, InitKind, OptimizationPlan, OptimizerMethod, PenaltyKind, PlanError};
use crate::criteria::{margin_at, normalization_scale, wrapped_difference_deg, ResponseSet};
use crate::physics::{build_stack, solve_stack, solve_with_gradient, GradientBundle, PhysicsError};
use crate::taskspec::{Metric, Operation, TaskSpec};
use crate::taxonomy::ErrorCategory;
use crate::util::derive_seed;

pub const DEFAULT_SOLVER_CALL_BUDGET: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeLimits {
    /// Solver evaluations allowed per execution.
    pub solver_call_budget: u64,
}

impl Default for RuntimeLimits {
    fn default() -> Self {
        RuntimeLimits { solver_call_budget: DEFAULT_SOLVER_CALL_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecStatus {
    Evaluated,
    ExecutionError { category: ErrorCategory, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    /// Physical design values of the selected trajectory endpoint.
    pub final_params: Vec<f64>,
    pub responses: ResponseSet,
    pub final_loss: f64,
    /// Final loss of every trajectory, in run order.
    pub trajectory_losses: Vec<f64>,
    pub steps_used: u64,
    pub solver_calls: u64,
}

impl ExecutionOutcome {
    fn failed(category: ErrorCategory, message: impl Into<String>, steps_used: u64, solver_calls: u64) -> Self {
        ExecutionOutcome {
            status: ExecStatus::ExecutionError { category, message: message.into() },
            final_params: Vec::new(),
            responses: ResponseSet::new(),
            final_loss: f64::NAN,
            trajectory_losses: Vec::new(),
            steps_used,
            solver_calls,
        }
    }

    pub fn is_evaluated(&self) -> bool {
        self.status == ExecStatus::Evaluated
    }

    pub fn error_category(&self) -> Option<ErrorCategory> {
        match &self.status {
            ExecStatus::Evaluated => None,
            ExecStatus::ExecutionError { category, .. } => Some(*category),
        }
    }
}

/// Loss value and its gradient with respect to the physical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub solver_calls: u64,
}

fn physics_category(e: &PhysicsError) -> ErrorCategory {
    match e {
        PhysicsError::NonFiniteResponse | PhysicsError::NonFiniteGradient { .. } => ErrorCategory::GradientError,
        PhysicsError::InvalidInput(_) | PhysicsError::EvanescentSubstrate => ErrorCategory::ApiMisuse,
    }
}

/// Metric value and its derivative row from a gradient bundle.
fn metric_with_derivative(metric: Metric, bundle: &GradientBundle) -> Option<(f64, Vec<f64>)> {
    let r = &bundle.response;
    let d = &bundle.d_by_param;
    match metric {
        Metric::TotalReflection => Some((r.reflection, d.iter().map(|p| p.d_reflection).collect())),
        Metric::TotalTransmission => Some((r.transmission, d.iter().map(|p| p.d_transmission).collect())),
        Metric::TransmissionPhaseDeg => Some((r.phase_deg()?, d.iter().map(|p| p.d_phase_deg).collect())),
    }
}

/// Plan loss `sum_j w_j max(0, -raw_j / scale_j)` plus penalties, and its
/// gradient in physical parameter units.
pub fn loss_and_gradient(plan: &OptimizationPlan, task: &TaskSpec, params: &[f64]) -> Result<LossEvaluation, PlanError> {
    let ctx = &task.physical_context;
    let sources = ctx.sources();
    let mut bundles = std::collections::BTreeMap::new();
    let mut calls = 0;
    for key in task.response_keys() {
        let wl = ctx.wavelengths_um[key.wavelength_index];
        let src = sources[key.source_index];
        calls += 1;
        let b = solve_with_gradient(ctx, &task.design_space, params, wl, src)
            .map_err(|e| PlanError::new(physics_category(&e), e))?;
        bundles.insert(key, b);
    }

    let d = params.len();
    let mut loss = 0.0;
    let mut gradient = vec![0.0; d];
    for term in &plan.loss_terms {
        let c = &task.criteria[term.criterion_index];
        let bundle = &bundles[&c.params.response_key()];
        let (value, dvalue) = metric_with_derivative(c.metric, bundle).ok_or_else(|| {
            PlanError::new(ErrorCategory::ApiMisuse, format!("metric {} unavailable", c.metric.as_str()))
        })?;
        let raw = margin_at(c, value);
        if raw >= 0.0 {
            continue;
        }
        let scale = normalization_scale(c);
        loss += term.weight * (-raw / scale);
        // d(raw)/d(value)
        let slope = match c.operation {
            Operation::AtLeast => 1.0,
            Operation::AtMost => -1.0,
            Operation::CloseTo if c.metric.is_phase() => -wrapped_difference_deg(value, c.target).signum(),
            Operation::CloseTo => -(value - c.target).signum(),
        };
        for (g, dv) in gradient.iter_mut().zip(&dvalue) {
            *g -= term.weight * slope * dv / scale;
        }
    }

    for p in &plan.penalties {
        let lo = task.design_space.params[p.param_index].lower_bound;
        match p.kind {
            PenaltyKind::ReciprocalOffset => {
                let offset = params[p.param_index] - lo;
                loss += p.weight / offset;
                gradient[p.param_index] -= p.weight / (offset * offset);
            }
        }
    }

    if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(PlanError::new(ErrorCategory::GradientError, "loss or gradient is not finite"));
    }
    Ok(LossEvaluation { loss, gradient, solver_calls: calls })
}

/// Loss value only, from a precomputed response set (no penalties).
pub fn evaluate_loss(plan: &OptimizationPlan, task: &TaskSpec, responses: &ResponseSet) -> Option<f64> {
    let mut loss = 0.0;
    for term in &plan.loss_terms {
        let c = task.criteria.get(term.criterion_index)?;
        let resp = responses.get(&c.params.response_key())?;
        let raw = crate::criteria::raw_margin(c, resp).ok()?;
        loss += term.weight * (-raw / normalization_scale(c)).max(0.0);
    }
    Some(loss)
}

struct Trajectory {
    unit: Vec<f64>,
    loss: f64,
}

struct Budget {
    limit: u64,
    calls: u64,
    steps: u64,
}

impl Budget {
    fn charge(&mut self, calls: u64) -> Result<(), PlanError> {
        self.calls += calls;
        if self.calls > self.limit {
            return Err(PlanError::new(
                ErrorCategory::Infrastructure,
                format!("solver-call budget of {} exceeded", self.limit),
            ));
        }
        Ok(())
    }
}

fn to_physical(task: &TaskSpec, unit: &[f64]) -> Vec<f64> {
    task.design_space.params.iter().zip(unit).map(|(p, u)| p.lower_bound + u * p.range()).collect()
}

fn initial_unit(plan: &OptimizationPlan, task: &TaskSpec, trajectory: u32, seed: u64) -> Vec<f64> {
    let d = task.design_space.dim();
    let random = |label: String| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.init.seed, &label));
        (0..d).map(|_| rng.gen::<f64>()).collect::<Vec<_>>()
    };
    if trajectory > 0 {
        return random(format!("restart/{seed}/{trajectory}"));
    }
    match plan.init.kind {
        InitKind::Midpoint => vec![0.5; d],
        InitKind::RandomUniform => random(format!("init/{seed}")),
        InitKind::Explicit => {
            let values = plan.init.values.as_deref().unwrap_or_default();
            task.design_space.params.iter().zip(values).map(|(p, v)| (v - p.lower_bound) / p.range()).collect()
        }
    }
}

fn run_trajectory(
    plan: &OptimizationPlan,
    task: &TaskSpec,
    mut unit: Vec<f64>,
    budget: &mut Budget,
) -> Result<Trajectory, PlanError> {
    let opt = &plan.optimizer;
    let ranges: Vec<f64> = task.design_space.params.iter().map(|p| p.range()).collect();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; unit.len()];
    let mut v = vec![0.0; unit.len()];

    for step in 1..=opt.steps {
        let eval = loss_and_gradient(plan, task, &to_physical(task, &unit))?;
        budget.charge(eval.solver_calls)?;
        if eval.loss == 0.0 {
            return Ok(Trajectory { unit, loss: 0.0 });
        }
        budget.steps += 1;
        for i in 0..unit.len() {
            let g = eval.gradient[i] * ranges[i];
            let delta = match opt.method {
                OptimizerMethod::Gd => opt.lr * g,
                OptimizerMethod::Adam => {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / (1.0 - beta1.powi(step as i32));
                    let v_hat = v[i] / (1.0 - beta2.powi(step as i32));
                    opt.lr * m_hat / (v_hat.sqrt() + eps)
                }
            };
            unit[i] -= delta;
            if plan.projection {
                unit[i] = unit[i].clamp(0.0, 1.0);
            }
        }
    }
    let eval = loss_and_gradient(plan, task, &to_physical(task, &unit))?;
    budget.charge(eval.solver_calls)?;
    Ok(Trajectory { unit, loss: eval.loss })
}

/// Validate and run `plan` on `task`. Deterministic in `(plan, task, seed)`.
///
/// Runs `restarts + 1` trajectories (the first from the plan's init, the
/// rest from seeded uniform draws) and keeps the endpoint with the lowest
/// final loss, earliest on ties. Any failure aborts the whole execution.
pub fn execute_plan(plan: &OptimizationPlan, task: &TaskSpec, seed: u64, limits: &RuntimeLimits) -> ExecutionOutcome {
    if let Err(e) = validate_plan(plan, task) {
        return ExecutionOutcome::failed(e.category, e.message, 0, 0);
    }
    let mut budget = Budget { limit: limits.solver_call_budget, calls: 0, steps: 0 };
    let mut best: Option<Trajectory> = None;
    let mut losses = Vec::new();
    for k in 0..=plan.optimizer.restarts {
        let start = initial_unit(plan, task, k, seed);
        match run_trajectory(plan, task, start, &mut budget) {
            Ok(traj) => {
                losses.push(traj.loss);
                if best.as_ref().is_none_or(|b| traj.loss < b.loss) {
                    best = Some(traj);
                }
                if losses.last() == Some(&0.0) {
                    break;
                }
            }
            Err(e) => return ExecutionOutcome::failed(e.category, e.message, budget.steps, budget.calls),
        }
    }
    let best = best.expect("at least one trajectory runs");
    let final_params = to_physical(task, &best.unit);
    if !task.design_space.contains(&final_params) {
        return ExecutionOutcome::failed(
            ErrorCategory::ApiMisuse,
            "unprojected iterate left the design space",
            budget.steps,
            budget.calls,
        );
    }

    let ctx = &task.physical_context;
    let sources = ctx.sources();
    let stack = build_stack(ctx, &task.design_space, &final_params);
    let mut responses = ResponseSet::new();
    for key in task.response_keys() {
        let src = sources[key.source_index];
        match solve_stack(&stack, ctx.wavelengths_um[key.wavelength_index], src.angle_deg, src.polarization) {
            Ok(r) => {
                responses.insert(key, r);
            }
            Err(e) => return ExecutionOutcome::failed(physics_category(&e), e.to_string(), budget.steps, budget.calls),
        }
    }
    ExecutionOutcome {
        status: ExecStatus::Evaluated,
        final_params,
        responses,
        final_loss: best.loss,
        trajectory_losses: losses,
        steps_used: budget.steps,
        solver_calls: budget.calls + task.response_keys().len() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{InitSpec, OptimizerSpec, Penalty};
    use super::*;
    use crate::criteria::evaluate_task;
    use crate::plan::tests::g1_task;

    fn plan(task: &TaskSpec, init: InitSpec, lr: f64, steps: u32, restarts: u32) -> OptimizationPlan {
        OptimizationPlan::for_task(task, init, OptimizerSpec { method: OptimizerMethod::Gd, lr, steps, restarts })
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let task = g1_task(0.95);
        let p = plan(&task, InitSpec::midpoint(0), 0.05, 1, 0);
        for x in [0.05, 0.11, 0.2, 0.27] {
            let e = loss_and_gradient(&p, &task, &[x]).unwrap();
            let h = 1e-6;
            let up = loss_and_gradient(&p, &task, &[x + h]).unwrap().loss;
            let dn = loss_and_gradient(&p, &task, &[x - h]).unwrap().loss;
            let fd = (up - dn) / (2.0 * h);
            assert!((e.gradient[0] - fd).abs() < 1e-5 * fd.abs().max(1.0), "x={x}: {} vs {fd}", e.gradient[0]);
        }
    }

    #[test]
    fn feasible_explicit_start_is_a_fixed_point() {
        let task = g1_task(0.5);
        let x = 0.6 / (4.0 * 4.5);
        let p = plan(&task, InitSpec::explicit(vec![x]), 0.05, 1, 0);
        let out = execute_plan(&p, &task, 0, &RuntimeLimits::default());
        assert!(out.is_evaluated());
        assert_eq!(out.final_params, vec![x]);
        assert_eq!(out.final_loss, 0.0);
        assert!(evaluate_task(&task, &out.responses).unwrap().sg);
    }

    #[test]
    fn reciprocal_penalty_at_lower_bound_is_gradient_error() {
        let task = g1_task(0.8);
        let mut p = plan(&task, InitSpec::explicit(vec![0.02]), 0.05, 10, 0);
        p.penalties.push(Penalty { kind: PenaltyKind::ReciprocalOffset, param_index: 0, weight: 1.0 });
        let out = execute_plan(&p, &task, 0, &RuntimeLimits::default());
        assert_eq!(out.error_category(), Some(ErrorCategory::GradientError));
    }

    #[test]
    fn budget_overrun_is_infrastructure() {
        let task = g1_task(0.99);
        let p = plan(&task, InitSpec::midpoint(0), 1e-4, 500, 0);
        let out = execute_plan(&p, &task, 0, &RuntimeLimits { solver_call_budget: 50 });
        assert_eq!(out.error_category(), Some(ErrorCategory::Infrastructure));
    }

    #[test]
    fn best_restart_is_no_worse_than_any_trajectory() {
        let task = g1_task(0.99);
        let p = plan(&task, InitSpec::random(3), 0.01, 20, 3);
        let out = execute_plan(&p, &task, 9, &RuntimeLimits::default());
        assert!(out.is_evaluated());
        assert_eq!(out.trajectory_losses.len(), 4);
        assert!(out.trajectory_losses.iter().all(|&l| out.final_loss <= l));
    }
}
