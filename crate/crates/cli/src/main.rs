use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use evoskill::evolution::{
    evaluator_hash, evolve, starter_skill, EvolutionConfig, LlmUpdater, RuleBasedUpdater, SkillSet, SkillUpdater,
    SkillVersion, MANIFEST_FILE, TRAIN_LOG,
};
use evoskill::generators::{FaultProfile, LlmGenerator, PlanGenerator, ScriptedGenerator};
use evoskill::harness::{codegen_eval, read_jsonl, run_batch, write_jsonl, HarnessConfig, TaskRecord};
use evoskill::llm::{LlmClient, LlmConfig};
use evoskill::metrics::aggregate;
use evoskill::report::{build_report, write_report, Condition, ReportInput};
use evoskill::taskspec::{build_splits, parse_task, Setting, SplitManifest, SplitName, SplitSet};

#[derive(Parser, Debug)]
#[command(name = "evoskill", version, about = "Skill evolution for thin-film inverse design")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    #[arg(long)]
    setting: Option<Setting>,
    #[arg(long)]
    seed: Option<u64>,
    /// Split manifest from `gen-tasks`; built from setting and seed if absent.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Plan generator: `scripted` or `llm`.
    #[arg(long)]
    generator: Option<String>,
    /// Fault profile for the scripted generator.
    #[arg(long)]
    faults: Option<String>,
    #[arg(long)]
    outer_rounds: Option<u32>,
    #[arg(long)]
    inner_attempts: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the train / validation / test split manifest.
    GenTasks {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one task under one skill and print its record.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Task JSON file, or a task id within the split manifest.
        #[arg(long)]
        task: String,
        /// `starter` or a path to SKILL.md.
        #[arg(long, default_value = "starter")]
        skill: String,
    },
    /// Evaluate a skill on a split: rollout log plus metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "starter")]
        skill: String,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the skill evolution loop and write the archive.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<u32>,
        /// Skill updater: `rule-based` or `llm`.
        #[arg(long)]
        updater: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a report bundle from rollout logs.
    Report {
        /// `DATASET:CONDITION:PATH` where PATH is a rollout log or an
        /// `evaluate` output directory. Repeatable; order is kept.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        /// `evolve` output directory whose training rollouts feed the error
        /// composition table.
        #[arg(long)]
        evolution: Option<PathBuf>,
        #[arg(long)]
        k_max: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GeneratorConfig {
    backend: String,
    faults: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { backend: "scripted".into(), faults: "none".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReportConfig {
    usd_per_1k_tokens: Option<f64>,
}

/// Single-document run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    setting: Setting,
    seed: Option<u64>,
    output_root: PathBuf,
    updater: String,
    harness: HarnessConfig,
    evolution: EvolutionConfig,
    generator: GeneratorConfig,
    llm: LlmConfig,
    report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            setting: Setting::Iid,
            seed: None,
            output_root: PathBuf::from("runs"),
            updater: "rule-based".into(),
            harness: HarnessConfig::default(),
            evolution: EvolutionConfig::default(),
            generator: GeneratorConfig::default(),
            llm: LlmConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Error carrying its exit status.
struct Failure {
    code: u8,
    kind: &'static str,
    error: anyhow::Error,
}

fn config_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, kind: "config", error: error.into() }
}

fn runtime_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, kind: "runtime", error: error.into() }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(config_error)?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(config_error)
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(s) = c.setting {
        cfg.setting = s;
    }
    if let Some(s) = c.seed {
        cfg.seed = Some(s);
    }
    if let Some(g) = &c.generator {
        cfg.generator.backend = g.clone();
    }
    if let Some(f) = &c.faults {
        cfg.generator.faults = f.clone();
    }
    if let Some(r) = c.outer_rounds {
        cfg.harness.outer_rounds = r;
    }
    if let Some(a) = c.inner_attempts {
        cfg.harness.inner_attempts = a;
    }
}

/// Seed-dependent settings are resolved here; there is no wall-clock fallback.
fn finalize(cfg: &mut RunConfig) -> Result<u64, Failure> {
    let seed = cfg.seed.ok_or_else(|| config_error(anyhow!("a seed is required (--seed or `seed` in the config)")))?;
    cfg.harness.seed = seed;
    cfg.evolution.seed = seed;
    cfg.harness.validate().map_err(|e| config_error(anyhow!(e)))?;
    // Checked for every command so a bad config never runs silently.
    FaultProfile::parse(&cfg.generator.faults).map_err(|e| config_error(anyhow!(e)))?;
    if !matches!(cfg.generator.backend.as_str(), "scripted" | "llm") {
        return Err(config_error(anyhow!("unknown generator `{}` (expected scripted or llm)", cfg.generator.backend)));
    }
    if !matches!(cfg.updater.as_str(), "rule-based" | "llm") {
        return Err(config_error(anyhow!("unknown updater `{}` (expected rule-based or llm)", cfg.updater)));
    }
    Ok(seed)
}

fn load_splits(cfg: &RunConfig, tasks: Option<&Path>, seed: u64) -> Result<SplitSet, Failure> {
    match tasks {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(config_error)?;
            let manifest = SplitManifest::from_json(&text).map_err(config_error)?;
            manifest.to_split_set().map_err(config_error)
        }
        None => build_splits(cfg.setting, seed).map_err(runtime_error),
    }
}

fn load_skill(spec: &str) -> Result<SkillSet, Failure> {
    if spec == "starter" {
        return Ok(starter_skill());
    }
    let mut path = PathBuf::from(spec);
    if path.is_dir() {
        path.push("SKILL.md");
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading skill {}", path.display())).map_err(config_error)?;
    SkillSet::from_markdown(&text, SkillVersion::default())
        .with_context(|| format!("invalid skill {}", path.display()))
        .map_err(config_error)
}

fn make_generator(cfg: &RunConfig) -> Result<Box<dyn PlanGenerator>, Failure> {
    match cfg.generator.backend.as_str() {
        "scripted" => {
            let faults = FaultProfile::parse(&cfg.generator.faults).map_err(|e| config_error(anyhow!(e)))?;
            Ok(Box::new(ScriptedGenerator::with_faults(faults)))
        }
        "llm" => {
            let client = LlmClient::from_env(cfg.llm.clone()).map_err(config_error)?;
            Ok(Box::new(LlmGenerator::new(client)))
        }
        other => Err(config_error(anyhow!("unknown generator `{other}` (expected scripted or llm)"))),
    }
}

fn make_updater(cfg: &RunConfig) -> Result<Box<dyn SkillUpdater>, Failure> {
    match cfg.updater.as_str() {
        "rule-based" => Ok(Box::new(RuleBasedUpdater)),
        "llm" => {
            let client = LlmClient::from_env(cfg.llm.clone()).map_err(config_error)?;
            Ok(Box::new(LlmUpdater::new(client)))
        }
        other => Err(config_error(anyhow!("unknown updater `{other}` (expected rule-based or llm)"))),
    }
}

#[derive(Serialize)]
struct Stamp<'a> {
    command: &'a str,
    config_hash: String,
    seed: Option<u64>,
    harness_seed: u64,
    evaluator_hash: String,
    versions: serde_json::Value,
    config: &'a RunConfig,
}

fn write_stamp(dir: &Path, command: &str, cfg: &RunConfig) -> Result<(), Failure> {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let stamp = Stamp {
        command,
        config_hash: hex::encode(Sha256::digest(canonical.as_bytes())),
        seed: cfg.seed,
        harness_seed: cfg.harness.seed,
        evaluator_hash: evaluator_hash(),
        versions: serde_json::json!({ "evoskill": evoskill::VERSION, "evoskill-cli": env!("CARGO_PKG_VERSION") }),
        config: cfg,
    };
    std::fs::create_dir_all(dir).map_err(runtime_error)?;
    let body = serde_json::to_string_pretty(&stamp).expect("stamp serializes") + "\n";
    std::fs::write(dir.join("stamp.json"), body).map_err(runtime_error)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(runtime_error)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(runtime_error)
}

fn task_failures(records: &[TaskRecord]) -> u8 {
    u8::from(records.iter().any(|r| !r.sg))
}

fn records_from(path: &Path) -> Result<Vec<TaskRecord>, Failure> {
    let file = if path.is_dir() { path.join("rollouts.jsonl") } else { path.to_path_buf() };
    read_jsonl(&file).with_context(|| format!("reading rollouts {}", file.display())).map_err(config_error)
}

fn training_rounds(dir: &Path) -> Result<Vec<(u32, Vec<TaskRecord>)>, Failure> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
        .with_context(|| format!("reading {}", dir.join(MANIFEST_FILE).display()))
        .map_err(config_error)?;
    let manifest: evoskill::evolution::EvolutionManifest =
        serde_json::from_str(&text).context("parsing evolution manifest").map_err(config_error)?;
    manifest
        .iterations
        .iter()
        .map(|it| {
            let version = SkillVersion { iteration: it.iteration, sub_iteration: 0 };
            let log = dir.join(version.id()).join(TRAIN_LOG);
            let records = read_jsonl(&log).with_context(|| format!("reading {}", log.display())).map_err(config_error)?;
            Ok((it.iteration, records))
        })
        .collect()
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(config_error(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().map_err(runtime_error)?;
    }
    match cli.command {
        Command::GenTasks { common, out } => {
            apply_common(&mut cfg, &common);
            let seed = finalize(&mut cfg)?;
            let splits = build_splits(cfg.setting, seed).map_err(runtime_error)?;
            let out = out.unwrap_or_else(|| cfg.output_root.join(format!("tasks-{}-{seed}.json", cfg.setting)));
            write_text(&out, &splits.to_manifest().to_json())?;
            write_stamp(out.parent().unwrap_or(Path::new(".")), "gen-tasks", &cfg)?;
            let summary = serde_json::json!({
                "manifest": out,
                "train": splits.train.len(),
                "validation": splits.validation.len(),
                "test": splits.test.len(),
            });
            println!("{summary}");
            Ok(0)
        }
        Command::Solve { common, task, skill } => {
            apply_common(&mut cfg, &common);
            let seed = finalize(&mut cfg)?;
            let skill = load_skill(&skill)?;
            let generator = make_generator(&cfg)?;
            let spec = if Path::new(&task).is_file() {
                let text = std::fs::read_to_string(&task).map_err(config_error)?;
                parse_task(&text).map_err(config_error)?
            } else {
                let splits = load_splits(&cfg, common.tasks.as_deref(), seed)?;
                let found = [&splits.train, &splits.validation, &splits.test]
                    .into_iter()
                    .flatten()
                    .find(|t| t.task_id == task)
                    .cloned();
                found.ok_or_else(|| config_error(anyhow!("no task file or task id `{task}`")))?
            };
            let record = codegen_eval(&spec, &skill, generator.as_ref(), &cfg.harness);
            println!("{}", serde_json::to_string(&record).expect("record serializes"));
            Ok(task_failures(std::slice::from_ref(&record)))
        }
        Command::Evaluate { common, skill, split, out } => {
            apply_common(&mut cfg, &common);
            let seed = finalize(&mut cfg)?;
            let skill = load_skill(&skill)?;
            let generator = make_generator(&cfg)?;
            let splits = load_splits(&cfg, common.tasks.as_deref(), seed)?;
            let records = run_batch(splits.split(split), &skill, generator.as_ref(), &cfg.harness);
            let metrics = aggregate(&records).map_err(runtime_error)?;
            let out = out.unwrap_or_else(|| cfg.output_root.join(format!("evaluate-{}-{split}-{seed}", cfg.setting)));
            write_jsonl(&out.join("rollouts.jsonl"), &records).map_err(runtime_error)?;
            write_text(&out.join("metrics.json"), &(serde_json::to_string_pretty(&metrics).expect("json") + "\n"))?;
            write_stamp(&out, "evaluate", &cfg)?;
            println!("{}", serde_json::json!({ "out": out, "metrics": metrics }));
            Ok(task_failures(&records))
        }
        Command::Evolve { common, iterations, updater, out } => {
            apply_common(&mut cfg, &common);
            if let Some(i) = iterations {
                cfg.evolution.iterations = i;
            }
            if let Some(u) = updater {
                cfg.updater = u;
            }
            let seed = finalize(&mut cfg)?;
            let generator = make_generator(&cfg)?;
            let updater = make_updater(&cfg)?;
            let splits = load_splits(&cfg, common.tasks.as_deref(), seed)?;
            let out = out.unwrap_or_else(|| cfg.output_root.join(format!("evolve-{}-{seed}", cfg.setting)));
            std::fs::create_dir_all(&out).map_err(runtime_error)?;
            let run = evolve(&splits, starter_skill(), generator.as_ref(), updater.as_ref(), &cfg.harness, &cfg.evolution, Some(&out))
                .map_err(runtime_error)?;
            write_text(&out.join("selected").join("SKILL.md"), &run.selected.markdown_body)?;
            write_stamp(&out, "evolve", &cfg)?;
            println!(
                "{}",
                serde_json::json!({
                    "out": out,
                    "selected": run.manifest.selected,
                    "validation": run.pool.iter().find(|e| e.id() == run.manifest.selected).map(|e| &e.validation),
                })
            );
            Ok(0)
        }
        Command::Report { runs, evolution, k_max, out } => {
            let mut conditions = Vec::new();
            for spec in &runs {
                let mut parts = spec.splitn(3, ':');
                let (Some(dataset), Some(condition), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(config_error(anyhow!("--run expects DATASET:CONDITION:PATH, got `{spec}`")));
                };
                conditions.push(Condition {
                    dataset: dataset.to_string(),
                    condition: condition.to_string(),
                    records: records_from(Path::new(path))?,
                });
            }
            let training = match &evolution {
                Some(dir) => training_rounds(dir)?,
                None => Vec::new(),
            };
            let input = ReportInput {
                conditions,
                training_rounds: training,
                k_max: k_max.unwrap_or_else(|| cfg.harness.max_attempts()),
                usd_per_1k_tokens: cfg.report.usd_per_1k_tokens,
            };
            let bundle = build_report(&input).map_err(config_error)?;
            let out = out.unwrap_or_else(|| cfg.output_root.join("report"));
            let files = write_report(&out, &bundle).map_err(runtime_error)?;
            write_stamp(&out, "report", &cfg)?;
            println!("{}", serde_json::json!({ "out": out, "files": files }));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let msg = serde_json::json!({ "error": { "kind": f.kind, "message": format!("{:#}", f.error) } });
            eprintln!("{msg}");
            ExitCode::from(f.code)
        }
    }
}
