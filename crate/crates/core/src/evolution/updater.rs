//! Skill updaters: turn rollout evidence into candidate skills.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::skill::{Recipe, RepairAction, RuleTable, SkillError, SkillSet, SkillVersion};
use crate::harness::TaskRecord;
use crate::llm::LlmClient;
use crate::plan::OptimizerMethod;
use crate::taskspec::{Family, TaskSpec};
use crate::taxonomy::ErrorCategory;

pub const STEP_CAP: u32 = 600;
pub const MAX_STEP_CAP: u32 = 1200;
pub const RESTART_CAP: u32 = 3;
/// Learning rate used when a recipe is switched to Adam.
pub const ADAM_LR: f64 = 0.02;

#[derive(Debug, Error)]
pub enum UpdaterError {
    #[error("updater backend failed: {0}")]
    Backend(String),
    #[error("updater produced an invalid skill: {0}")]
    InvalidSkill(#[from] SkillError),
}

/// One training rollout together with the task it ran on.
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a> {
    pub task: &'a TaskSpec,
    pub record: &'a TaskRecord,
}

pub trait SkillUpdater: Sync {
    fn name(&self) -> &str;

    /// Propose candidate skills derived from `current`. Candidate `m`
    /// (1-based) gets version `(iteration, m)`.
    fn propose(
        &self,
        current: &SkillSet,
        evidence: &[Evidence<'_>],
        iteration: u32,
        candidates: u32,
    ) -> Result<Vec<SkillSet>, UpdaterError>;
}

/// Aggregated failure evidence from a batch.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct EvidenceSummary {
    /// Executed but unsolved tasks per family.
    pub shortfalls: BTreeMap<Family, u32>,
    /// Of those, tasks whose worst criterion was a phase target.
    pub phase_shortfalls: BTreeMap<Family, u32>,
    /// Tasks that never executed, per family.
    pub no_execution: BTreeMap<Family, u32>,
    /// Code-level error counts over all failed attempts.
    pub errors: BTreeMap<ErrorCategory, u32>,
}

impl EvidenceSummary {
    pub fn from_evidence(evidence: &[Evidence<'_>]) -> Self {
        let mut s = EvidenceSummary::default();
        for ev in evidence {
            for cat in ev.record.failed_categories() {
                if !cat.is_excluded() {
                    *s.errors.entry(cat).or_default() += 1;
                }
            }
            if ev.record.sg {
                continue;
            }
            let family = ev.task.family();
            let Some(report) = ev.record.best.as_ref().and_then(|b| b.report.as_ref()) else {
                // Nothing executed. Only code-level causes count as evidence.
                if ev.record.failed_categories().iter().any(|c| !c.is_excluded()) {
                    *s.no_execution.entry(family).or_default() += 1;
                }
                continue;
            };
            *s.shortfalls.entry(family).or_default() += 1;
            let phase = report.worst_criterion().and_then(|i| ev.task.criteria.get(i)).is_some_and(|c| c.metric.is_phase());
            if phase {
                *s.phase_shortfalls.entry(family).or_default() += 1;
            }
        }
        s
    }

    pub fn is_empty(&self) -> bool {
        self.shortfalls.is_empty() && self.no_execution.is_empty() && self.errors.is_empty()
    }
}

fn repair_for(category: ErrorCategory) -> Option<RepairAction> {
    match category {
        ErrorCategory::TensorIndexOob => Some(RepairAction::RebuildLoss),
        ErrorCategory::ApiMisuse => Some(RepairAction::ResetOptimizer),
        ErrorCategory::GradientError => Some(RepairAction::HalveLr),
        ErrorCategory::NoCode => Some(RepairAction::EmitCompletePlan),
        ErrorCategory::Infrastructure => None,
    }
}

/// Lengthen a recipe. The aggressive variant also switches to Adam.
pub fn strengthen(recipe: &Recipe, aggressive: bool) -> Recipe {
    let steps = recipe.steps.saturating_mul(3).clamp(1, STEP_CAP);
    let restarts = (recipe.restarts + 1).min(RESTART_CAP);
    let mut r = Recipe {
        method: recipe.method,
        lr: recipe.lr,
        steps,
        restarts,
        max_steps: recipe.max_steps.max(steps * 2).min(MAX_STEP_CAP),
        max_restarts: recipe.max_restarts.max(restarts).min(RESTART_CAP),
    };
    if aggressive && r.method == OptimizerMethod::Gd {
        r.method = OptimizerMethod::Adam;
        r.lr = ADAM_LR;
    }
    r
}

/// Evidence-gated recipe adjustments.
///
/// Families with unsolved tasks get longer recipes; when failures span two
/// or more families the default recipe is lengthened too, so unseen
/// families benefit. Phase shortfalls add the learning-rate repair, and
/// every observed code-level error category gets its repair directive.
/// Infrastructure errors are ignored. Without evidence the current skill is
/// returned unchanged.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedUpdater;

impl RuleBasedUpdater {
    pub fn update_rules(current: &RuleTable, summary: &EvidenceSummary, aggressive: bool) -> RuleTable {
        let mut rules = current.clone();
        let mut touched: Vec<Family> = summary.shortfalls.keys().chain(summary.no_execution.keys()).copied().collect();
        touched.sort();
        touched.dedup();
        for family in &touched {
            let next = strengthen(current.recipe_for(*family), aggressive);
            rules.families.insert(*family, next);
        }
        if touched.len() >= 2 {
            rules.default_recipe = strengthen(&current.default_recipe, aggressive);
        }
        for cat in summary.errors.keys() {
            if let Some(action) = repair_for(*cat) {
                rules.repairs.entry(*cat).or_insert(action);
            }
        }
        if !summary.phase_shortfalls.is_empty() {
            rules.repairs.entry(ErrorCategory::GradientError).or_insert(RepairAction::HalveLr);
            let note = "Phase targets converge slowly: prefer long runs at small learning rates.".to_string();
            if !rules.global.contains(&note) {
                rules.global.push(note);
            }
        }
        if aggressive && !touched.is_empty() {
            let note = "Adaptive moment steps handle mixed-scale margins better than plain descent.".to_string();
            if !rules.global.contains(&note) {
                rules.global.push(note);
            }
        }
        rules
    }
}

impl SkillUpdater for RuleBasedUpdater {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn propose(
        &self,
        current: &SkillSet,
        evidence: &[Evidence<'_>],
        iteration: u32,
        candidates: u32,
    ) -> Result<Vec<SkillSet>, UpdaterError> {
        let summary = EvidenceSummary::from_evidence(evidence);
        let out = (1..=candidates.max(1))
            .map(|m| {
                let version = SkillVersion { iteration, sub_iteration: m };
                if summary.is_empty() {
                    let mut same = current.clone();
                    same.version = version;
                    return same;
                }
                let rules = Self::update_rules(&current.rules, &summary, m % 2 == 0);
                SkillSet::from_rules(&current.name, &current.description, rules, version)
            })
            .collect();
        Ok(out)
    }
}

/// Rewrites the skill markdown through a chat-completions endpoint. The
/// reply must be a complete SKILL.md, optionally inside a fenced block.
pub struct LlmUpdater {
    client: LlmClient,
}

impl LlmUpdater {
    pub fn new(client: LlmClient) -> Self {
        LlmUpdater { client }
    }
}

pub fn render_update_prompt(current: &SkillSet, summary: &EvidenceSummary, evidence: &[Evidence<'_>], variant: u32) -> String {
    let mut p = String::new();
    p.push_str("You maintain a skill document that guides an agent writing thin-film optimization plans.\n");
    p.push_str("Rewrite it using the rollout evidence below. Keep the frontmatter, the `## Skill Overview` section ");
    let _ = writeln!(p, "and a valid ```{} block. Reply with the full document only.\n", super::skill::RULES_FENCE);
    let _ = writeln!(p, "Variant {variant}: {}.\n", if variant % 2 == 0 { "bolder changes" } else { "minimal changes" });
    p.push_str("# Current skill\n\n");
    p.push_str(&current.markdown_body);
    p.push_str("\n# Evidence\n\n");
    let _ = writeln!(p, "shortfalls by family: {:?}", summary.shortfalls);
    let _ = writeln!(p, "phase shortfalls by family: {:?}", summary.phase_shortfalls);
    let _ = writeln!(p, "error counts: {:?}", summary.errors);
    for ev in evidence {
        let r = ev.record;
        let _ = writeln!(
            p,
            "- {} ({}): SG={} CPF={:.3} BM={} attempts={}",
            r.task_id,
            r.template,
            u8::from(r.sg),
            r.cpf,
            r.bm.map_or("n/a".to_string(), |b| format!("{b:.4}")),
            r.attempts
        );
    }
    p
}

fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```markdown\n").or_else(|| t.strip_prefix("```md\n")) {
        if let Some(end) = rest.rfind("\n```") {
            return &rest[..end];
        }
    }
    t
}

impl SkillUpdater for LlmUpdater {
    fn name(&self) -> &str {
        "llm"
    }

    fn propose(
        &self,
        current: &SkillSet,
        evidence: &[Evidence<'_>],
        iteration: u32,
        candidates: u32,
    ) -> Result<Vec<SkillSet>, UpdaterError> {
        let summary = EvidenceSummary::from_evidence(evidence);
        (1..=candidates.max(1))
            .map(|m| {
                let version = SkillVersion { iteration, sub_iteration: m };
                if summary.is_empty() {
                    let mut same = current.clone();
                    same.version = version;
                    return Ok(same);
                }
                let prompt = render_update_prompt(current, &summary, evidence, m);
                let reply = self.client.complete(&prompt).map_err(|e| UpdaterError::Backend(e.to_string()))?;
                let mut doc = strip_fence(&reply.text).to_string();
                if !doc.ends_with('\n') {
                    doc.push('\n');
                }
                Ok(SkillSet::from_markdown(&doc, version)?)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::starter_skill;

    #[test]
    fn strengthen_triples_steps_within_caps() {
        let r = Recipe { method: OptimizerMethod::Gd, lr: 0.02, steps: 100, restarts: 0, max_steps: 200, max_restarts: 0 };
        let s = strengthen(&r, false);
        assert_eq!((s.steps, s.restarts, s.max_steps, s.max_restarts), (300, 1, 600, 1));
        assert_eq!(s.method, OptimizerMethod::Gd);
        let top = strengthen(&strengthen(&strengthen(&s, true), true), true);
        assert_eq!(top.steps, STEP_CAP);
        assert_eq!(top.restarts, RESTART_CAP);
        assert_eq!(top.max_steps, MAX_STEP_CAP);
        assert_eq!(top.method, OptimizerMethod::Adam);
    }

    #[test]
    fn empty_summary_keeps_rules() {
        let s = starter_skill();
        let rules = RuleBasedUpdater::update_rules(&s.rules, &EvidenceSummary::default(), false);
        assert_eq!(rules, s.rules);
    }

    #[test]
    fn infrastructure_is_not_a_repair_target() {
        assert_eq!(repair_for(ErrorCategory::Infrastructure), None);
        for c in ErrorCategory::CODE_LEVEL {
            assert!(repair_for(c).is_some());
        }
    }

    #[test]
    fn fenced_reply_is_unwrapped() {
        assert_eq!(strip_fence("```markdown\n---\nx\n```"), "---\nx");
        assert_eq!(strip_fence("  ---\nbody  "), "---\nbody");
    }
}
