//! Deterministic rule-following generator with optional fault injection.
//!
//! Revision policy, applied to the previous plan of the session:
//! - worst criterion is a phase target with negative margin: double the
//!   steps and halve the learning rate (or add a restart at the step cap);
//! - worst criterion is an inequality shortfall: add a restart (or double
//!   the steps at the restart cap);
//! - gradient error: re-initialize from a random point with the next seed,
//!   halving the learning rate when the skill has that repair directive;
//! - any other error: rebuild the plan from the skill recipe.
//!
//! A new round starts from the carried best plan, revised by its margins.

use serde::{Deserialize, Serialize};

use super::{FeedbackKind, GeneratorSession, PlanGenerator, Proposal, ProposeError};
use crate::evolution::{Recipe, RepairAction, SkillSet};
use crate::plan::{compile_loss, InitKind, InitSpec, OptimizationPlan, OptimizerSpec, Penalty, PenaltyKind};
use crate::taskspec::TaskSpec;
use crate::taxonomy::ErrorCategory;
use crate::util::stable_hash;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum FaultProfile {
    #[default]
    None,
    /// Never produce a plan.
    AlwaysOmit,
    /// Reference a criterion that does not exist.
    BadIndex,
    /// Start on the lower bound with a penalty that diverges there.
    NanLoss,
    /// Zero learning rate.
    MisuseLr,
    /// Backend unreachable.
    Transport,
    /// Per attempt, inject one fault with probability `rate`, picked by a
    /// hash of (task, round, attempt). Faults the skill has a repair
    /// directive for are suppressed.
    Mixed { rate: f64 },
}

impl FaultProfile {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(FaultProfile::None),
            "always-omit" => Ok(FaultProfile::AlwaysOmit),
            "bad-index" => Ok(FaultProfile::BadIndex),
            "nan-loss" => Ok(FaultProfile::NanLoss),
            "misuse-lr" => Ok(FaultProfile::MisuseLr),
            "transport" => Ok(FaultProfile::Transport),
            "mixed" => Ok(FaultProfile::Mixed { rate: 0.35 }),
            other => match other.strip_prefix("mixed:").map(str::parse::<f64>) {
                Some(Ok(rate)) if (0.0..=1.0).contains(&rate) => Ok(FaultProfile::Mixed { rate }),
                _ => Err(format!("unknown fault profile `{s}`")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    Omit,
    BadIndex,
    NanLoss,
    MisuseLr,
    Transport,
}

impl Fault {
    fn category(self) -> ErrorCategory {
        match self {
            Fault::Omit => ErrorCategory::NoCode,
            Fault::BadIndex => ErrorCategory::TensorIndexOob,
            Fault::NanLoss => ErrorCategory::GradientError,
            Fault::MisuseLr => ErrorCategory::ApiMisuse,
            Fault::Transport => ErrorCategory::Infrastructure,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    pub faults: FaultProfile,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        ScriptedGenerator { faults: FaultProfile::None }
    }

    pub fn with_faults(faults: FaultProfile) -> Self {
        ScriptedGenerator { faults }
    }

    fn fault_for(&self, task: &TaskSpec, skill: &SkillSet, session: &GeneratorSession) -> Option<Fault> {
        match self.faults {
            FaultProfile::None => None,
            FaultProfile::AlwaysOmit => Some(Fault::Omit),
            FaultProfile::BadIndex => Some(Fault::BadIndex),
            FaultProfile::NanLoss => Some(Fault::NanLoss),
            FaultProfile::MisuseLr => Some(Fault::MisuseLr),
            FaultProfile::Transport => Some(Fault::Transport),
            FaultProfile::Mixed { rate } => {
                let h = stable_hash(&[&task.task_id, &session.round.to_string(), &session.attempt.to_string()]);
                let u = (h % 10_000) as f64 / 10_000.0;
                if u >= rate {
                    return None;
                }
                const KINDS: [Fault; 5] = [Fault::Omit, Fault::BadIndex, Fault::NanLoss, Fault::MisuseLr, Fault::Transport];
                let fault = KINDS[((h >> 20) % KINDS.len() as u64) as usize];
                let repaired = skill.rules.repair_for(fault.category()).is_some();
                (!repaired).then_some(fault)
            }
        }
    }
}

fn task_seed(task: &TaskSpec) -> u64 {
    stable_hash(&[&task.task_id]) % 1_000_000
}

/// Plan straight from the skill recipe for this task's family.
pub(crate) fn recipe_plan(task: &TaskSpec, recipe: &Recipe) -> OptimizationPlan {
    let mut plan = OptimizationPlan::for_task(
        task,
        InitSpec::midpoint(task_seed(task)),
        OptimizerSpec { method: recipe.method, lr: recipe.lr, steps: recipe.steps, restarts: recipe.restarts },
    );
    plan.strategy_note = format!("recipe for {}", task.family());
    plan
}

/// Strip anything that cannot come from the recipe: extra penalties,
/// malformed loss terms, and invalid optimizer settings.
fn sanitize(mut plan: OptimizationPlan, task: &TaskSpec, recipe: &Recipe) -> OptimizationPlan {
    plan.penalties.clear();
    plan.loss_terms = compile_loss(task).terms;
    if !(plan.optimizer.lr.is_finite() && plan.optimizer.lr > 0.0) || plan.optimizer.steps == 0 {
        plan.optimizer = OptimizerSpec { method: recipe.method, lr: recipe.lr, steps: recipe.steps, restarts: recipe.restarts };
    }
    if plan.init.kind == InitKind::Explicit && !plan.init.values.as_ref().is_some_and(|v| task.design_space.contains(v)) {
        plan.init = InitSpec::midpoint(plan.init.seed);
    }
    plan.projection = true;
    plan
}

fn escalate_steps(plan: &mut OptimizationPlan, recipe: &Recipe, halve_lr: bool) -> bool {
    let steps = plan.optimizer.steps;
    if steps >= recipe.max_steps {
        return false;
    }
    plan.optimizer.steps = (steps * 2).min(recipe.max_steps);
    if halve_lr {
        plan.optimizer.lr *= 0.5;
    }
    true
}

fn escalate_restarts(plan: &mut OptimizationPlan, recipe: &Recipe) -> bool {
    if plan.optimizer.restarts >= recipe.max_restarts {
        return false;
    }
    plan.optimizer.restarts += 1;
    true
}

fn revise_for_margins(mut plan: OptimizationPlan, task: &TaskSpec, recipe: &Recipe, margins: &[f64]) -> OptimizationPlan {
    let worst = margins
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f64)>, (i, &m)| match acc {
            Some((_, best)) if best <= m => acc,
            _ => Some((i, m)),
        });
    let Some((worst, margin)) = worst else { return plan };
    if margin >= 0.0 {
        return plan;
    }
    let phase = task.criteria.get(worst).is_some_and(|c| c.metric.is_phase());
    if phase {
        if !escalate_steps(&mut plan, recipe, true) {
            escalate_restarts(&mut plan, recipe);
        }
        plan.strategy_note = format!("phase criterion {worst} short; longer run at lower lr");
    } else {
        if !escalate_restarts(&mut plan, recipe) {
            escalate_steps(&mut plan, recipe, false);
        }
        plan.strategy_note = format!("criterion {worst} short; more restarts");
    }
    plan
}

fn revise_for_error(plan: OptimizationPlan, task: &TaskSpec, skill: &SkillSet, recipe: &Recipe, category: ErrorCategory) -> OptimizationPlan {
    let mut plan = sanitize(plan, task, recipe);
    if category == ErrorCategory::GradientError {
        plan.init = InitSpec::random(plan.init.seed + 1);
        if skill.rules.repair_for(category) == Some(RepairAction::HalveLr) {
            plan.optimizer.lr *= 0.5;
        }
        plan.strategy_note = "gradient failure; fresh random start".to_string();
    } else {
        plan.strategy_note = format!("recovering from {category}");
    }
    plan
}

impl PlanGenerator for ScriptedGenerator {
    fn name(&self) -> &str {
        "scripted"
    }

    fn propose(&self, task: &TaskSpec, skill: &SkillSet, session: &GeneratorSession) -> Result<Proposal, ProposeError> {
        let recipe = skill.rules.recipe_for(task.family());
        let fresh = || recipe_plan(task, recipe);
        let base = match session.feedback_log.last() {
            None => match &session.carried_best {
                Some(cb) => revise_for_margins(cb.plan.clone(), task, recipe, &cb.report.normalized_margins()),
                None => fresh(),
            },
            Some(item) => {
                let prev = session.last_plan.clone().unwrap_or_else(fresh);
                match &item.kind {
                    FeedbackKind::Margins { normalized } => revise_for_margins(prev, task, recipe, normalized),
                    FeedbackKind::ExecError { category, .. } => revise_for_error(prev, task, skill, recipe, *category),
                }
            }
        };

        let mut plan = base;
        match self.fault_for(task, skill, session) {
            None => {}
            Some(Fault::Omit) => return Err(ProposeError::NoPlan("generator returned no plan".into())),
            Some(Fault::Transport) => return Err(ProposeError::Transport("connection reset by peer".into())),
            Some(Fault::BadIndex) => {
                if let Some(term) = plan.loss_terms.first_mut() {
                    term.criterion_index = task.criteria.len() + 2;
                }
            }
            Some(Fault::NanLoss) => {
                plan.init = InitSpec::explicit(task.design_space.params.iter().map(|p| p.lower_bound).collect());
                plan.penalties =
                    vec![Penalty { kind: PenaltyKind::ReciprocalOffset, param_index: 0, weight: 1e-3 }];
            }
            Some(Fault::MisuseLr) => plan.optimizer.lr = 0.0,
        }
        Ok(Proposal { plan, tokens: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{report_from_outcomes, CriterionOutcome};
    use crate::evolution::starter_skill;
    use crate::generators::CarriedBest;
    use crate::taskspec::{generate_template_instance, Family, TemplateId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task(family: Family) -> TaskSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        generate_template_instance(TemplateId::new(family, 'a'), &mut rng).unwrap()
    }

    fn skill_with(recipe: Recipe) -> SkillSet {
        let mut rules = starter_skill().rules;
        rules.default_recipe = recipe;
        SkillSet::from_rules("s", "d", rules, Default::default())
    }

    fn recipe(steps: u32, lr: f64) -> Recipe {
        Recipe { method: Default::default(), lr, steps, restarts: 0, max_steps: 800, max_restarts: 2 }
    }

    #[test]
    fn fresh_session_applies_the_recipe() {
        let t = task(Family::G1);
        let s = skill_with(recipe(200, 0.05));
        let p = ScriptedGenerator::new().propose(&t, &s, &GeneratorSession::new("x", 1, None)).unwrap().plan;
        assert_eq!(p.optimizer.steps, 200);
        assert_eq!(p.optimizer.lr, 0.05);
        assert_eq!(p.init.kind, InitKind::Midpoint);
    }

    #[test]
    fn negative_phase_margin_doubles_steps_and_halves_lr() {
        let t = task(Family::G6);
        let s = skill_with(recipe(100, 0.04));
        let g = ScriptedGenerator::new();
        let mut session = GeneratorSession::new("x", 1, None);
        let first = g.propose(&t, &s, &session).unwrap().plan;
        session.record(Some(first.clone()), FeedbackKind::Margins { normalized: vec![0.1, -0.4] });
        session.attempt = 2;
        let second = g.propose(&t, &s, &session).unwrap().plan;
        assert_eq!(second.optimizer.steps, 200);
        assert_eq!(second.optimizer.lr, 0.02);
        assert_eq!(second.init, first.init);
    }

    #[test]
    fn new_round_depends_only_on_carried_best() {
        let t = task(Family::G1);
        let s = skill_with(recipe(50, 0.05));
        let g = ScriptedGenerator::new();
        let plan = recipe_plan(&t, s.rules.recipe_for(Family::G1));
        let report = report_from_outcomes(vec![CriterionOutcome {
            raw_margin: -0.1,
            scale: 0.8,
            normalized_margin: -0.125,
            passed: false,
        }]);
        let cb = CarriedBest { plan, report, error_histogram: Default::default() };
        let a = g.propose(&t, &s, &GeneratorSession::new("a", 2, Some(cb.clone()))).unwrap();
        let b = g.propose(&t, &s, &GeneratorSession::new("b", 2, Some(cb))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.plan.optimizer.restarts, 1);
    }

    #[test]
    fn omit_profile_never_plans() {
        let t = task(Family::G1);
        let g = ScriptedGenerator::with_faults(FaultProfile::AlwaysOmit);
        let err = g.propose(&t, &starter_skill(), &GeneratorSession::new("x", 1, None)).unwrap_err();
        assert_eq!(err.category(), ErrorCategory::NoCode);
    }

    #[test]
    fn profile_names_parse() {
        assert_eq!(FaultProfile::parse("nan-loss"), Ok(FaultProfile::NanLoss));
        assert_eq!(FaultProfile::parse("mixed:0.5"), Ok(FaultProfile::Mixed { rate: 0.5 }));
        assert!(FaultProfile::parse("mixed:2").is_err());
    }
}
