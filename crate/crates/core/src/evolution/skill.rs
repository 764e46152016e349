//! Skill artifacts: a markdown document whose fenced `skill-rules` block
//! holds the machine-readable rule table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::OptimizerMethod;
use crate::taskspec::Family;
use crate::taxonomy::ErrorCategory;

/// Info string of the fenced block that carries the rule table.
pub const RULES_FENCE: &str = "json skill-rules";

pub const SKILL_NAME: &str = "learning-context";

#[derive(Debug, Error, PartialEq)]
pub enum SkillError {
    #[error("skill markdown is missing YAML frontmatter")]
    MissingFrontmatter,
    #[error("frontmatter is missing the `{0}` field")]
    MissingField(&'static str),
    #[error("skill markdown has no `## Skill Overview` section")]
    MissingOverview,
    #[error("skill markdown has no `{RULES_FENCE}` block")]
    MissingRules,
    #[error("rule block is not valid: {0}")]
    BadRules(String),
}

/// Optimizer settings for one family, plus escalation caps used when
/// revising a plan after feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    #[serde(default)]
    pub method: OptimizerMethod,
    pub lr: f64,
    pub steps: u32,
    #[serde(default)]
    pub restarts: u32,
    pub max_steps: u32,
    #[serde(default)]
    pub max_restarts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairAction {
    /// Halve the learning rate and re-initialize from a fresh seed.
    HalveLr,
    /// Rebuild loss terms from the criterion list.
    RebuildLoss,
    /// Restore the recipe's optimizer settings.
    ResetOptimizer,
    /// Always emit a complete plan.
    EmitCompletePlan,
}

impl RepairAction {
    pub fn describe(self) -> &'static str {
        match self {
            RepairAction::HalveLr => "halve the learning rate and restart from a new random seed",
            RepairAction::RebuildLoss => "rebuild the loss with exactly one term per listed criterion",
            RepairAction::ResetOptimizer => "restore the recipe learning rate and step count before retrying",
            RepairAction::EmitCompletePlan => "always return a complete plan, never an empty reply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub default_recipe: Recipe,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub families: BTreeMap<Family, Recipe>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub repairs: BTreeMap<ErrorCategory, RepairAction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub global: Vec<String>,
}

impl RuleTable {
    pub fn recipe_for(&self, family: Family) -> &Recipe {
        self.families.get(&family).unwrap_or(&self.default_recipe)
    }

    pub fn repair_for(&self, category: ErrorCategory) -> Option<RepairAction> {
        self.repairs.get(&category).copied()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkillVersion {
    pub iteration: u32,
    pub sub_iteration: u32,
}

impl SkillVersion {
    pub fn id(self) -> String {
        format!("iter{}_sub{}", self.iteration, self.sub_iteration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSet {
    pub name: String,
    pub description: String,
    pub markdown_body: String,
    pub rules: RuleTable,
    pub version: SkillVersion,
}

fn method_name(m: OptimizerMethod) -> &'static str {
    match m {
        OptimizerMethod::Gd => "gradient descent",
        OptimizerMethod::Adam => "Adam",
    }
}

fn recipe_line(label: &str, r: &Recipe) -> String {
    format!(
        "| {label} | {} | {} | {} | {} | {} / {} |",
        method_name(r.method),
        r.lr,
        r.steps,
        r.restarts,
        r.max_steps,
        r.max_restarts
    )
}

/// Render the canonical markdown for a rule table.
pub fn render_markdown(name: &str, description: &str, rules: &RuleTable) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "---\nname: {name}\ndescription: {description}\n---\n");
    md.push_str("# Thin-film inverse design\n\n## Skill Overview\n\n");
    md.push_str(
        "Write an optimization plan for a layered-stack design task. Parameterize every listed design \
         variable inside its bounds, add one hinge term per criterion, and run projected gradient steps \
         on the solver's exact derivatives. Phase criteria are measured on the circle.\n\n",
    );
    md.push_str("## Optimizer recipes\n\n");
    md.push_str("| family | method | lr | steps | restarts | caps (steps / restarts) |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    let _ = writeln!(md, "{}", recipe_line("default", &rules.default_recipe));
    for (family, r) in &rules.families {
        let _ = writeln!(md, "{}", recipe_line(family.as_str(), r));
    }
    md.push_str("\n## Revising after feedback\n\n");
    md.push_str("- If the worst criterion is a phase target, double the steps and halve the learning rate.\n");
    md.push_str("- If an inequality falls short, add one restart; once restarts hit the cap, double the steps.\n");
    md.push_str("- Never exceed the caps listed above.\n");
    if !rules.repairs.is_empty() {
        md.push_str("\n## Error repairs\n\n");
        for (cat, action) in &rules.repairs {
            let _ = writeln!(md, "- {}: {}.", cat.label(), action.describe());
        }
    }
    if !rules.global.is_empty() {
        md.push_str("\n## Notes\n\n");
        for g in &rules.global {
            let _ = writeln!(md, "- {g}");
        }
    }
    let rules_json = serde_json::to_string_pretty(rules).expect("rules serialize");
    let _ = write!(md, "\n## Rules\n\n```{RULES_FENCE}\n{rules_json}\n```\n");
    md
}

fn frontmatter_field<'a>(front: &'a str, key: &'static str) -> Result<&'a str, SkillError> {
    front
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|rest| rest.strip_prefix(':')))
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or(SkillError::MissingField(key))
}

impl SkillSet {
    pub fn from_rules(name: &str, description: &str, rules: RuleTable, version: SkillVersion) -> Self {
        SkillSet {
            name: name.to_string(),
            description: description.to_string(),
            markdown_body: render_markdown(name, description, &rules),
            rules,
            version,
        }
    }

    /// Parse and validate a SKILL.md document. The rule table is read from
    /// the fenced rules block.
    pub fn from_markdown(markdown: &str, version: SkillVersion) -> Result<Self, SkillError> {
        let rest = markdown.strip_prefix("---\n").ok_or(SkillError::MissingFrontmatter)?;
        let end = rest.find("\n---").ok_or(SkillError::MissingFrontmatter)?;
        let front = &rest[..end];
        let name = frontmatter_field(front, "name")?.to_string();
        let description = frontmatter_field(front, "description")?.to_string();
        let body = &rest[end..];
        if !body.lines().any(|l| l.trim_end() == "## Skill Overview") {
            return Err(SkillError::MissingOverview);
        }
        let open = format!("```{RULES_FENCE}\n");
        let start = body.find(&open).ok_or(SkillError::MissingRules)? + open.len();
        let len = body[start..].find("\n```").ok_or(SkillError::MissingRules)?;
        let rules: RuleTable =
            serde_json::from_str(&body[start..start + len]).map_err(|e| SkillError::BadRules(e.to_string()))?;
        Ok(SkillSet { name, description, markdown_body: markdown.to_string(), rules, version })
    }

    /// Content hash of the markdown, used as a stable candidate id suffix.
    pub fn digest(&self) -> String {
        crate::util::sha256_hex(self.markdown_body.as_bytes())[..12].to_string()
    }
}

/// The untrained starting skill: a deliberately short gradient-descent
/// budget with no restarts and no repair directives.
pub fn starter_skill() -> SkillSet {
    let rules = RuleTable {
        default_recipe: Recipe {
            method: OptimizerMethod::Gd,
            lr: 0.0003,
            steps: 4,
            restarts: 0,
            max_steps: 8,
            max_restarts: 0,
        },
        families: BTreeMap::new(),
        repairs: BTreeMap::new(),
        global: vec!["Start from the midpoint of the design box.".to_string()],
    };
    SkillSet::from_rules(
        SKILL_NAME,
        "Plan gradient-based thin-film inverse design runs from a task description.",
        rules,
        SkillVersion::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_round_trips_through_rules_block() {
        let s = starter_skill();
        let back = SkillSet::from_markdown(&s.markdown_body, s.version).unwrap();
        assert_eq!(back, s);
        assert!(s.markdown_body.starts_with("---\nname: learning-context\ndescription: "));
    }

    #[test]
    fn overview_section_is_required() {
        let s = starter_skill();
        let broken = s.markdown_body.replace("## Skill Overview", "## Overview");
        assert_eq!(SkillSet::from_markdown(&broken, s.version), Err(SkillError::MissingOverview));
        let no_front = s.markdown_body.replacen("---\n", "", 1);
        assert_eq!(SkillSet::from_markdown(&no_front, s.version), Err(SkillError::MissingFrontmatter));
    }

    #[test]
    fn family_recipe_overrides_default() {
        let mut rules = starter_skill().rules;
        let mut g6 = rules.default_recipe.clone();
        g6.steps = 300;
        rules.families.insert(Family::G6, g6);
        assert_eq!(rules.recipe_for(Family::G6).steps, 300);
        assert_eq!(rules.recipe_for(Family::G1).steps, 4);
    }
}
