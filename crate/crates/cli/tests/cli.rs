use std::path::Path;
use std::process::{Command, Output};

fn evoskill(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evoskill")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {:?}", out))
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn pct(cell: &str) -> f64 {
    cell.trim_end_matches('%').parse().unwrap()
}

#[test]
fn gen_tasks_writes_the_three_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = evoskill(&["gen-tasks", "--seed", "2", "--out", "tasks.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let v = stdout_json(&out);
    assert_eq!((v["train"].as_u64(), v["validation"].as_u64(), v["test"].as_u64()), (Some(50), Some(15), Some(50)));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tasks.json")).unwrap()).unwrap();
    assert!(manifest.is_object());
    let stamp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stamp.json")).unwrap()).unwrap();
    assert_eq!(stamp["seed"], 2);
    assert_eq!(stamp["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn evaluate_evolve_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = evoskill(&["evaluate", "--seed", "1", "--out", "base"], d);
    assert_eq!(base.status.code(), Some(1), "baseline leaves failed tasks: {base:?}");
    assert!(d.join("base/rollouts.jsonl").is_file() && d.join("base/metrics.json").is_file());

    let evo = evoskill(&["evolve", "--seed", "1", "--iterations", "4", "--out", "evo"], d);
    assert_eq!(evo.status.code(), Some(0), "{evo:?}");
    for i in 1..=4 {
        assert!(d.join(format!("evo/meta_agent/skills/learning-context-iter{i}/SKILL.md")).is_file());
    }
    assert!(!d.join("evo/meta_agent/skills/learning-context-iter5").exists());
    assert!(d.join("evo/manifest.json").is_file());
    assert!(d.join("evo/iter0_sub0/.agents/skills/learning-context/SKILL.md").is_file());

    let post = evoskill(&["evaluate", "--seed", "1", "--skill", "evo/selected/SKILL.md", "--out", "post"], d);
    assert!(matches!(post.status.code(), Some(0 | 1)), "{post:?}");

    let rep = evoskill(
        &["report", "--run", "IID:Baseline:base", "--run", "IID:Post-train:post/rollouts.jsonl", "--evolution", "evo", "--out", "rep"],
        d,
    );
    assert_eq!(rep.status.code(), Some(0), "{rep:?}");
    let table = std::fs::read_to_string(d.join("rep/table1.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["Dataset", "Condition", "SG", "SE", "CPF", "BM", "Attempts"]);
    assert_eq!(&rows[1][..2], ["IID", "Baseline"]);
    assert_eq!(&rows[2][..2], ["IID", "Post-train"]);
    assert!(rows[3][1].starts_with("Delta"));
    assert!(pct(rows[1][2]) <= 40.0, "baseline SG {}", rows[1][2]);
    assert!(pct(rows[2][2]) >= 80.0, "post SG {}", rows[2][2]);
    for f in ["metrics.json", "passk.csv", "transitions.csv", "errors_by_round.csv", "plots/passk.svg"] {
        assert!(d.join("rep").join(f).is_file(), "{f} missing");
    }
}

#[test]
fn solve_exit_code_tracks_success() {
    let dir = tempfile::tempdir().unwrap();
    evoskill(&["gen-tasks", "--seed", "3", "--out", "tasks.json"], dir.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tasks.json")).unwrap()).unwrap();
    let id = manifest["test"][0].as_str().unwrap().to_string();
    let out = evoskill(&["solve", "--seed", "3", "--tasks", "tasks.json", "--task", &id], dir.path());
    let record = stdout_json(&out);
    assert_eq!(record["task_id"], id.as_str());
    let want = if record["sg"] == 1 { 0 } else { 1 };
    assert_eq!(out.status.code(), Some(want));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [&[&str]; 4] = [
        &["evaluate"],
        &["evaluate", "--seed", "1", "--generator", "oracle"],
        &["--jobs", "0", "gen-tasks", "--seed", "1"],
        &["gen-tasks", "--seed", "1", "--faults", "sometimes"],
    ];
    for args in cases {
        let out = evoskill(args, d);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {out:?}");
        assert_eq!(error_kind(&out), "config", "{args:?}");
    }
    let out = evoskill(&["transmogrify"], d);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");

    std::fs::write(d.join("bad.toml"), "seed = 1\nbogus = true\n").unwrap();
    let out = evoskill(&["--config", "bad.toml", "gen-tasks"], d);
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    std::fs::write(d.join("good.toml"), "seed = 4\nsetting = \"ood\"\noutput_root = \"out\"\n").unwrap();
    let out = evoskill(&["--config", "good.toml", "gen-tasks"], d);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(d.join("out/tasks-ood-4.json").is_file());
}
