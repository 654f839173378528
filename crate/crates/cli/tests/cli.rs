use std::path::{Path, PathBuf};

use poddp::{ExperimentConfig, ExperimentKind};
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = poddp_cli::run(
        std::iter::once("poddp").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_equal_defaults() {
    for kind in ExperimentKind::ALL {
        let path = configs_dir().join(format!("{kind}.toml"));
        let loaded = ExperimentConfig::load(None, Some(&path), &[]).unwrap();
        assert_eq!(
            loaded,
            ExperimentConfig::default_for(kind),
            "{}",
            path.display()
        );
    }
}

#[test]
fn solve_tmaze_writes_seven_node_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = run(&["solve", "--experiment", "tmaze", "--out", out]);
    assert_eq!(code, 0, "{err}");
    let tree = read_json(&dir.path().join("tree.json"));
    assert_eq!(tree["tree"]["nodes"].as_object().unwrap().len(), 7);
    let hash = tree["config_hash"].as_str().unwrap();
    assert_eq!(
        hash,
        ExperimentConfig::default_for(ExperimentKind::Tmaze).hash()
    );
    assert_eq!(tree["config"]["experiment"], "tmaze");

    let log = std::fs::read_to_string(dir.path().join("iterations.jsonl")).unwrap();
    let lines: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 2);
    assert_eq!(lines[0]["config_hash"], hash);
    assert!(lines[1..]
        .iter()
        .all(|l| l["config_hash"] == hash && l["cost"].is_f64()));
    assert_eq!(read_json(&dir.path().join("solve.json"))["converged"], true);
}

#[test]
fn single_segment_has_only_the_root() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "solve",
        "--experiment",
        "tmaze",
        "--segments",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let tree = read_json(&dir.path().join("tree.json"));
    let nodes = tree["tree"]["nodes"].as_object().unwrap();
    assert_eq!(nodes.len(), 1);
    assert_eq!(tree["config"]["solver"]["segments"], 1);
}

#[test]
fn non_convergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(&[
        "solve",
        "--experiment",
        "terrain",
        "--set",
        "solver.max_iterations=1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert_eq!(
        read_json(&dir.path().join("solve.json"))["converged"],
        false
    );
}

#[test]
fn bad_input_exits_one_with_diagnostic() {
    let (code, _, err) = run(&["solve", "--experiment", "maze"]);
    assert_eq!(code, 1);
    for name in ["tmaze", "terrain", "lanechange"] {
        assert!(err.contains(name), "{err}");
    }

    let (code, _, err) = run(&[
        "config",
        "--experiment",
        "tmaze",
        "--set",
        "scenario.nope=1",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("scenario.nope"), "{err}");

    let (code, _, _) = run(&[
        "config",
        "--experiment",
        "tmaze",
        "--set",
        "solver.horizon=-3",
    ]);
    assert_eq!(code, 1);

    let (code, _, err) = run(&["config", "--experiment", "terrain", "--sigma-level", "2.0"]);
    assert_eq!(code, 1, "{err}");

    let (code, _, _) = run(&["config", "--config", "/nonexistent/file.toml"]);
    assert_eq!(code, 1);

    let (code, _, _) = run(&[
        "benchmark",
        "--experiment",
        "tmaze",
        "--planners",
        "poddp,greedy",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("benchmark"));
}

#[test]
fn config_reflects_flags() {
    let (code, out, _) = run(&[
        "config",
        "--experiment",
        "tmaze",
        "--horizon",
        "24",
        "--prior",
        "0.3",
        "--sigma-level",
        "2.1",
    ]);
    assert_eq!(code, 0);
    let text: String = out
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = ExperimentConfig::resolve(None, Some(&text), &[]).unwrap();
    assert_eq!(cfg.solver.horizon, 24);
    let json: Value = serde_json::from_str(&cfg.canonical_json()).unwrap();
    assert_eq!(json["scenario"]["prior_left"], 0.3);
    assert_eq!(json["scenario"]["sigma_level"], 2.1);
}

#[test]
fn single_episode_flags_undefined_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "benchmark",
        "--experiment",
        "tmaze",
        "--planner",
        "poddp",
        "--n",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["rows"].as_array().unwrap().len(), 1);
    assert_eq!(summary["rows"][0]["stderr_defined"], false);
    assert!(summary["comparisons"].as_array().unwrap().is_empty());
}

#[test]
fn benchmark_rows_and_pairwise_tests() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "benchmark",
        "--experiment",
        "tmaze",
        "--planners",
        "poddp,mlddp,pwddp",
        "--n",
        "6",
        "--seed",
        "11",
        "--traces",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["rows"].as_array().unwrap().len(), 3);
    assert_eq!(summary["comparisons"].as_array().unwrap().len(), 3);
    assert_eq!(summary["base_seed"], 11);

    let csv = std::fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
    let hash = summary["config_hash"].as_str().unwrap();
    assert!(csv.starts_with(&format!("# config_hash: {hash}\n# config: {{")));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(csv.as_bytes());
    let seeds: Vec<u64> = reader
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(seeds, [11, 12, 13, 14, 15, 16].repeat(3));

    let traces = read_json(&dir.path().join("traces.json"));
    assert_eq!(traces["episodes"].as_array().unwrap().len(), 18);
}

#[test]
fn sigma_sweep_covers_thirteen_levels() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "benchmark",
        "--experiment",
        "tmaze",
        "--planners",
        "poddp,mlddp",
        "--n",
        "2",
        "--sigma-sweep",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 26);
    assert!(rows[0].starts_with("0.1,poddp,"));
    assert!(rows[25].starts_with("12.1,mlddp,"));
    let last = read_json(&dir.path().join("level_12/summary.json"));
    assert_eq!(last["config"]["scenario"]["sigma_level"], 12.1);

    let (code, _, _) = run(&[
        "benchmark",
        "--experiment",
        "terrain",
        "--n",
        "2",
        "--sigma-sweep",
    ]);
    assert_eq!(code, 1);
}
