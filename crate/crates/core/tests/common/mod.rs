//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};

use evoskill::evolution::{evolve, starter_skill, EvolutionConfig, EvolutionRun, RuleBasedUpdater, SkillSet};
use evoskill::generators::{GeneratorSession, PlanGenerator, Proposal, ProposeError, ScriptedGenerator};
use evoskill::harness::{run_batch, write_jsonl, CandidateRecord, HarnessConfig, TaskRecord};
use evoskill::plan::{InitSpec, OptimizationPlan, OptimizerMethod, OptimizerSpec};
use evoskill::report::{build_report, write_report, Condition, ReportInput};
use evoskill::taskspec::{build_splits, Family, Setting, SplitSet, TaskSpec, TemplateId};
use evoskill::ErrorCategory;
use rand::Rng;

// ---------------------------------------------------------------- records

pub fn template() -> TemplateId {
    TemplateId::new(Family::G1, 'a')
}

/// Random task record obeying the harness invariants: SG implies SE,
/// unexecuted tasks carry no CPF / BM, and BM is positive only on success.
pub fn random_record<R: Rng>(rng: &mut R, id: usize, max_attempts: u32) -> TaskRecord {
    let se = rng.gen_bool(0.8);
    let sg = se && rng.gen_bool(0.5);
    let attempts = if sg { rng.gen_range(1..=max_attempts) } else { max_attempts };
    let k = rng.gen_range(1..=3u32);
    let cpf = if !se {
        0.0
    } else if sg {
        1.0
    } else {
        f64::from(rng.gen_range(0..k)) / f64::from(k)
    };
    let bm = if !se {
        None
    } else if sg {
        Some(rng.gen_range(0.0..2.0))
    } else {
        Some(-rng.gen_range(1e-6..3.0))
    };
    let calls = attempts;
    TaskRecord {
        task_id: format!("task-{id:04}"),
        template: template(),
        sg,
        se,
        cpf,
        bm,
        attempts,
        error_category: (!se).then_some(ErrorCategory::NoCode),
        first_success_attempt: sg.then_some(attempts),
        best: None,
        candidates: Vec::new(),
        generator_calls: calls,
        tokens: rng.gen_range(0..5000),
    }
}

pub fn random_record_set<R: Rng>(rng: &mut R, max_attempts: u32) -> Vec<TaskRecord> {
    let n = rng.gen_range(1..=60);
    (0..n).map(|i| random_record(rng, i, max_attempts)).collect()
}

/// Direct per-formula transcription of the dataset metrics, computed
/// without going through the library.
#[derive(Debug, PartialEq)]
pub struct NaiveMetrics {
    pub se: f64,
    pub sg: f64,
    pub cpf: f64,
    pub bm: Option<f64>,
    pub attempts: f64,
}

pub fn naive_metrics(records: &[TaskRecord]) -> NaiveMetrics {
    let n = records.len();
    let mut se_count = 0usize;
    let mut sg_count = 0usize;
    let mut cpf_sum = 0.0;
    let mut bm_sum = 0.0;
    let mut bm_n = 0usize;
    let mut att_sum = 0u64;
    for i in 0..n {
        let r = &records[i];
        if r.se {
            se_count += 1;
        }
        if r.sg {
            sg_count += 1;
        }
        cpf_sum += r.cpf;
        if let Some(b) = r.bm {
            bm_sum += b;
            bm_n += 1;
        }
        att_sum += u64::from(r.attempts);
    }
    NaiveMetrics {
        se: se_count as f64 / n as f64,
        sg: sg_count as f64 / n as f64,
        cpf: cpf_sum / n as f64,
        bm: if bm_n == 0 { None } else { Some(bm_sum / bm_n as f64) },
        attempts: att_sum as f64 / n as f64,
    }
}

pub fn naive_pass_at(records: &[TaskRecord], k: u32) -> f64 {
    let mut hits = 0usize;
    for r in records {
        if let Some(a) = r.first_success_attempt {
            if a <= k {
                hits += 1;
            }
        }
    }
    hits as f64 / records.len() as f64
}

/// (pass->pass, pass->fail, fail->pass, fail->fail) by linear-scan join.
pub fn naive_transitions(base: &[TaskRecord], post: &[TaskRecord]) -> [usize; 4] {
    let mut out = [0usize; 4];
    for b in base {
        let p = post.iter().find(|p| p.task_id == b.task_id).expect("ids match");
        let slot = match (b.sg, p.sg) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        out[slot] += 1;
    }
    out
}

// ---------------------------------------------------------------- traces

/// One scripted attempt outcome.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Reply without a plan.
    Omit,
    /// Backend unreachable.
    Transport,
    /// Run a near-zero-step plan starting at this design point.
    At(Vec<f64>),
}

/// Generator replaying a fixed schedule indexed by global attempt ordinal.
pub struct TraceGenerator {
    pub inner_attempts: u32,
    pub schedule: Vec<Step>,
    pub calls: AtomicU32,
}

impl TraceGenerator {
    pub fn new(inner_attempts: u32, schedule: Vec<Step>) -> Self {
        TraceGenerator { inner_attempts, schedule, calls: AtomicU32::new(0) }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Plan that evaluates (essentially) at `point`.
pub fn pinned_plan(task: &TaskSpec, point: Vec<f64>) -> OptimizationPlan {
    OptimizationPlan::for_task(
        task,
        InitSpec::explicit(point),
        OptimizerSpec { method: OptimizerMethod::Gd, lr: 1e-300, steps: 1, restarts: 0 },
    )
}

impl PlanGenerator for TraceGenerator {
    fn name(&self) -> &str {
        "trace"
    }

    fn propose(&self, task: &TaskSpec, _skill: &SkillSet, session: &GeneratorSession) -> Result<Proposal, ProposeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let ordinal = (session.round - 1) * self.inner_attempts + session.attempt;
        match &self.schedule[(ordinal - 1) as usize] {
            Step::Omit => Err(ProposeError::NoPlan("scripted omission".into())),
            Step::Transport => Err(ProposeError::Transport("scripted outage".into())),
            Step::At(p) => Ok(Proposal { plan: pinned_plan(task, p.clone()), tokens: 1 }),
        }
    }
}

/// Index of the candidate a brute-force scan ranks highest: max CPF, then
/// max BM, then the smallest ordinal. Only evaluated candidates compete.
pub fn brute_force_best(candidates: &[CandidateRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Some(rep) = &c.report else { continue };
        let better = match best {
            None => true,
            Some(j) => {
                let b = candidates[j].report.as_ref().unwrap();
                rep.cpf > b.cpf
                    || (rep.cpf == b.cpf && rep.bm > b.bm)
                    || (rep.cpf == b.cpf && rep.bm == b.bm && c.ordinal < candidates[j].ordinal)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

// ---------------------------------------------------------------- pipeline

pub const E2E_SEED: u64 = 1;

pub struct PipelineOutput {
    pub splits: SplitSet,
    pub run: EvolutionRun,
    pub baseline: Vec<TaskRecord>,
    pub post: Vec<TaskRecord>,
    pub root: PathBuf,
}

/// Baseline on test, evolution with an on-disk archive, selected skill on
/// test, and the report bundle; everything lands under `root`.
pub fn run_pipeline(root: &Path, seed: u64) -> PipelineOutput {
    let splits = build_splits(Setting::Iid, seed).expect("splits");
    let generator = ScriptedGenerator::new();
    let harness = HarnessConfig { seed, ..HarnessConfig::default() };
    let config = EvolutionConfig { seed, ..EvolutionConfig::default() };

    let baseline = run_batch(&splits.test, &starter_skill(), &generator, &harness);
    let evolve_root = root.join("evolve");
    std::fs::create_dir_all(&evolve_root).unwrap();
    let run = evolve(&splits, starter_skill(), &generator, &RuleBasedUpdater, &harness, &config, Some(&evolve_root))
        .expect("evolve");
    let post = run_batch(&splits.test, &run.selected, &generator, &harness);

    write_jsonl(&root.join("baseline/rollouts.jsonl"), &baseline).unwrap();
    write_jsonl(&root.join("post/rollouts.jsonl"), &post).unwrap();
    let bundle = build_report(&ReportInput {
        conditions: vec![
            Condition { dataset: "IID".into(), condition: "Baseline".into(), records: baseline.clone() },
            Condition { dataset: "IID".into(), condition: "Post-train".into(), records: post.clone() },
        ],
        training_rounds: run.training_rounds.clone(),
        k_max: harness.max_attempts(),
        usd_per_1k_tokens: None,
    })
    .expect("report");
    write_report(&root.join("report"), &bundle).unwrap();
    PipelineOutput { splits, run, baseline, post, root: root.to_path_buf() }
}

/// Every regular file under `root`, keyed by `/`-joined relative path.
pub fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().components().map(|c| c.as_os_str().to_string_lossy().into_owned());
                out.insert(rel.collect::<Vec<_>>().join("/"), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
