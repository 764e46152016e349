//! Bi-level skill evolution: training batches under the current skill,
//! updater proposals, validation of every candidate, and selection by
//! validation SG.

mod archive;
mod skill;
mod updater;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{margin_at, normalization_scale};
use crate::generators::PlanGenerator;
use crate::harness::{run_batch, HarnessConfig, TaskRecord};
use crate::metrics::{aggregate, DatasetMetrics, MetricsError};
use crate::physics::{solve_stack, Polarization, Stack};
use crate::taskspec::{Criterion, CriterionParams, Metric, SplitSet, TaskSpec};
use crate::util::{derive_seed, sha256_hex};

pub use archive::{
    archive_skill, iteration_dir, write_canonical, write_rollout_package, write_sub_iteration, REFERENCE_FILES,
};
pub use skill::{
    render_markdown, starter_skill, Recipe, RepairAction, RuleTable, SkillError, SkillSet, SkillVersion, RULES_FENCE,
    SKILL_NAME,
};
pub use updater::{
    render_update_prompt, strengthen, Evidence, EvidenceSummary, LlmUpdater, RuleBasedUpdater, SkillUpdater,
    UpdaterError, ADAM_LR, MAX_STEP_CAP, RESTART_CAP, STEP_CAP,
};

pub const TRAIN_LOG: &str = "train_rollouts.jsonl";
pub const VALIDATION_LOG: &str = "validation_rollouts.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("batch size {batch} is not within 1..={train} training tasks")]
    BadBatchSize { batch: usize, train: usize },
    #[error("archive write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("evaluator hash changed from {before} to {after}")]
    EvaluatorChanged { before: String, after: String },
    #[error("test task {0} would be used during evolution")]
    TestLeak(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub iterations: u32,
    pub batch_size: usize,
    pub candidates_per_iteration: u32,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig { iterations: 4, batch_size: 20, candidates_per_iteration: 2, seed: 0 }
    }
}

/// A validated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub skill: SkillSet,
    pub validation: DatasetMetrics,
    /// Creation order within the run.
    pub created: usize,
}

impl PoolEntry {
    pub fn id(&self) -> String {
        self.skill.version.id()
    }
}

/// `Greater` means `a` is preferred: validation SG, then CPF, then BM, then
/// fewer mean attempts, then earlier creation.
pub fn compare_entries(a: &PoolEntry, b: &PoolEntry) -> Ordering {
    let bm = |e: &PoolEntry| e.validation.bm.unwrap_or(f64::NEG_INFINITY);
    a.validation
        .sg
        .total_cmp(&b.validation.sg)
        .then(a.validation.cpf.total_cmp(&b.validation.cpf))
        .then(bm(a).total_cmp(&bm(b)))
        .then(b.validation.attempts_mean.total_cmp(&a.validation.attempts_mean))
        .then(b.created.cmp(&a.created))
}

pub fn select_skill(pool: &[PoolEntry]) -> Result<&PoolEntry, EvolutionError> {
    pool.iter()
        .reduce(|best, e| if compare_entries(e, best) == Ordering::Greater { e } else { best })
        .ok_or(EvolutionError::EmptyPool)
}

/// Seeded training batch for `iteration`, kept in split order.
pub fn sample_batch(train: &[TaskSpec], size: usize, seed: u64, iteration: u32) -> Result<Vec<TaskSpec>, EvolutionError> {
    if size == 0 || size > train.len() {
        return Err(EvolutionError::BadBatchSize { batch: size, train: train.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("batch/{iteration}")));
    let mut idx = rand::seq::index::sample(&mut rng, train.len(), size).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| train[i].clone()).collect())
}

/// Hash of solver and scorer outputs on fixed inputs. Any change to either
/// changes the hash.
pub fn evaluator_hash() -> String {
    let mut buf = String::new();
    let stacks = [
        Stack::bare(1.0, 1.5),
        Stack::bare(1.0, 1.45).with_layer(num_complex::Complex64::new(2.1, 0.0), 0.071),
        Stack::bare(1.0, 1.4)
            .with_layer(num_complex::Complex64::new(4.5, 0.01), 0.13)
            .with_layer(num_complex::Complex64::new(1.45, 0.0), 0.2),
        Stack::bare(1.0, 1.52).with_layer(num_complex::Complex64::new(0.2, 3.5), 0.03),
    ];
    for stack in &stacks {
        for (wl, angle) in [(0.55, 0.0), (0.8, 30.0), (4.9, 60.0)] {
            for pol in [Polarization::TE, Polarization::TM] {
                match solve_stack(stack, wl, angle, pol) {
                    Ok(r) => {
                        let t0 = r.t0.unwrap_or_default();
                        let _ = writeln!(
                            buf,
                            "{:016x} {:016x} {:016x} {:016x}",
                            r.reflection.to_bits(),
                            r.transmission.to_bits(),
                            t0.re.to_bits(),
                            t0.im.to_bits()
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(buf, "error {e}");
                    }
                }
            }
        }
    }
    let p = CriterionParams::at(0);
    let criteria = [
        Criterion::at_least(Metric::TotalReflection, p.clone(), 0.8),
        Criterion::at_most(Metric::TotalTransmission, p.clone(), 0.0),
        Criterion::close_to(Metric::TransmissionPhaseDeg, p, 350.0, 5.0),
    ];
    for c in &criteria {
        for v in [0.0, 0.25, 0.8, 10.0, 355.0] {
            let _ = writeln!(buf, "{:016x} {:016x}", margin_at(c, v).to_bits(), normalization_scale(c).to_bits());
        }
    }
    sha256_hex(buf.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub id: String,
    pub digest: String,
    pub validation: DatasetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    pub start_skill: String,
    pub batch: Vec<String>,
    pub training: DatasetMetrics,
    pub updater_error: Option<String>,
    pub candidates: Vec<CandidateSummary>,
    pub archived: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionManifest {
    pub setting: String,
    pub split_seed: u64,
    pub generator: String,
    pub updater: String,
    pub config: EvolutionConfig,
    pub harness: HarnessConfig,
    pub evaluator_hash: String,
    pub starter: CandidateSummary,
    pub iterations: Vec<IterationSummary>,
    pub selected: String,
    pub selected_digest: String,
}

impl EvolutionManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionRun {
    pub manifest: EvolutionManifest,
    pub selected: SkillSet,
    pub pool: Vec<PoolEntry>,
    /// Training rollouts keyed by iteration.
    pub training_rounds: Vec<(u32, Vec<TaskRecord>)>,
    pub validation_rollouts: Vec<(String, Vec<TaskRecord>)>,
}

/// Output of one training iteration before validation.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub batch: Vec<TaskSpec>,
    pub rollouts: Vec<TaskRecord>,
    pub candidates: Vec<SkillSet>,
    pub updater_error: Option<String>,
}

/// Sample a batch, roll it out under `current`, and ask the updater for
/// candidates. An updater failure is recorded and yields no candidates.
#[allow(clippy::too_many_arguments)]
pub fn run_iteration(
    current: &SkillSet,
    train: &[TaskSpec],
    iteration: u32,
    config: &EvolutionConfig,
    harness: &HarnessConfig,
    generator: &dyn PlanGenerator,
    updater: &dyn SkillUpdater,
) -> Result<IterationOutput, EvolutionError> {
    let batch = sample_batch(train, config.batch_size, config.seed, iteration)?;
    let rollouts = run_batch(&batch, current, generator, harness);
    let evidence: Vec<Evidence<'_>> =
        batch.iter().zip(&rollouts).map(|(task, record)| Evidence { task, record }).collect();
    let (candidates, updater_error) =
        match updater.propose(current, &evidence, iteration, config.candidates_per_iteration) {
            Ok(c) => (c, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
    Ok(IterationOutput { batch, rollouts, candidates, updater_error })
}

fn summary(entry: &PoolEntry) -> CandidateSummary {
    CandidateSummary { id: entry.id(), digest: entry.skill.digest(), validation: entry.validation.clone() }
}

fn check_hygiene<'a>(test_ids: &BTreeSet<&str>, tasks: impl IntoIterator<Item = &'a TaskSpec>) -> Result<(), EvolutionError> {
    for t in tasks {
        if test_ids.contains(t.task_id.as_str()) {
            return Err(EvolutionError::TestLeak(t.task_id.clone()));
        }
    }
    Ok(())
}

/// Full evolution loop. The starter is validated and enters the pool as
/// `iter0_sub0`. Each iteration starts from the best validated skill so
/// far, and the skill archived for iteration `i` is the best of that
/// iteration's candidates. Only the train and validation splits are used.
pub fn evolve(
    splits: &SplitSet,
    starter: SkillSet,
    generator: &dyn PlanGenerator,
    updater: &dyn SkillUpdater,
    harness: &HarnessConfig,
    config: &EvolutionConfig,
    archive_root: Option<&Path>,
) -> Result<EvolutionRun, EvolutionError> {
    let hash_before = evaluator_hash();
    let test_ids: BTreeSet<&str> = splits.test.iter().map(|t| t.task_id.as_str()).collect();
    check_hygiene(&test_ids, splits.train.iter().chain(&splits.validation))?;

    let mut pool: Vec<PoolEntry> = Vec::new();
    let mut validation_rollouts = Vec::new();
    let mut validate = |skill: SkillSet, pool: &mut Vec<PoolEntry>| -> Result<(), EvolutionError> {
        let records = run_batch(&splits.validation, &skill, generator, harness);
        if let Some(root) = archive_root {
            write_sub_iteration(root, &skill, &records, VALIDATION_LOG)?;
        }
        let validation = aggregate(&records)?;
        validation_rollouts.push((skill.version.id(), records));
        let created = pool.len();
        pool.push(PoolEntry { skill, validation, created });
        Ok(())
    };

    let mut starter = starter;
    starter.version = SkillVersion::default();
    validate(starter, &mut pool)?;

    let mut iterations = Vec::new();
    let mut training_rounds = Vec::new();
    for i in 1..=config.iterations {
        let current = select_skill(&pool)?.skill.clone();
        let out = run_iteration(&current, &splits.train, i, config, harness, generator, updater)?;
        check_hygiene(&test_ids, &out.batch)?;
        if let Some(root) = archive_root {
            let mut start = current.clone();
            start.version = SkillVersion { iteration: i, sub_iteration: 0 };
            write_sub_iteration(root, &start, &out.rollouts, TRAIN_LOG)?;
        }
        let first_new = pool.len();
        for cand in out.candidates {
            validate(cand, &mut pool)?;
        }
        let archived = if pool.len() > first_new { select_skill(&pool[first_new..])?.skill.clone() } else { current.clone() };
        if let Some(root) = archive_root {
            archive_skill(root, &archived, i)?;
        }
        iterations.push(IterationSummary {
            iteration: i,
            start_skill: current.version.id(),
            batch: out.batch.iter().map(|t| t.task_id.clone()).collect(),
            training: aggregate(&out.rollouts)?,
            updater_error: out.updater_error,
            candidates: pool[first_new..].iter().map(summary).collect(),
            archived: archived.version.id(),
        });
        training_rounds.push((i, out.rollouts));
    }

    let hash_after = evaluator_hash();
    if hash_before != hash_after {
        return Err(EvolutionError::EvaluatorChanged { before: hash_before, after: hash_after });
    }
    let selected = select_skill(&pool)?.clone();
    let manifest = EvolutionManifest {
        setting: splits.setting.to_string(),
        split_seed: splits.seed,
        generator: generator.name().to_string(),
        updater: updater.name().to_string(),
        config: config.clone(),
        harness: harness.clone(),
        evaluator_hash: hash_after,
        starter: summary(&pool[0]),
        iterations,
        selected: selected.id(),
        selected_digest: selected.skill.digest(),
    };
    if let Some(root) = archive_root {
        std::fs::write(root.join(MANIFEST_FILE), manifest.to_json())?;
    }
    Ok(EvolutionRun { manifest, selected: selected.skill, pool, training_rounds, validation_rollouts })
}
