//! Skill-evolving harness for physics-grounded inverse design.
//!
//! Candidate optimization plans are generated from an explicit skill artifact,
//! executed against a deterministic differentiable thin-film solver, scored
//! with fixed criterion margins, and the skill artifact is evolved from
//! rollout feedback with validation-based selection.
//!
//! Module map:
//!
//! * [`taskspec`] task model, JSON task files, family generators, splits
//! * [`physics`] transfer-matrix solver with forward-mode gradients
//! * [`criteria`] margins, normalization and per-task SG / CPF / BM
//! * [`plan`] declarative optimization plans and their runtime
//! * [`generators`] plan generators (scripted and HTTP LLM backends)
//! * [`harness`] the two-level retry loop and rollout records
//! * [`evolution`] skill artifacts, updaters, selection and archives
//! * [`metrics`] dataset metrics, Pass@K, transitions, error composition
//! * [`report`] report bundle emission (JSON, CSV, SVG)

pub mod criteria;
pub mod evolution;
pub mod generators;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod physics;
pub mod plan;
pub mod report;
pub mod taskspec;
pub mod taxonomy;
pub mod util;

/// Library version recorded in reproducibility stamps.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use criteria::{CriteriaReport, CriterionOutcome};
pub use evolution::{evolve, select_skill, starter_skill, EvolutionConfig, SkillSet};
pub use harness::{codegen_eval, HarnessConfig, TaskRecord};
pub use metrics::{aggregate, DatasetMetrics};
pub use physics::{Polarization, Stack, StackResponse};
pub use plan::OptimizationPlan;
pub use taskspec::{Family, TaskSpec};
pub use taxonomy::ErrorCategory;
