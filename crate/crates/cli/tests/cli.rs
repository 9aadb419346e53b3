//! End-to-end tests of the `discover` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn discover(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_discover"))
        .args(args)
        .env_remove("DISCOVER_BASE_URL")
        .env_remove("DISCOVER_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn packing_config(program: &str, iterations: u64) -> Value {
    json!({
        "task_prompt": "pack circles",
        "initial_program": program,
        "evaluator": {"kind": "builtin", "task_id": "circle_packing"},
        "direction": "maximize",
        "max_iterations": iterations,
        "parallelism": 2,
        "model_weights": {"mock": 1.0},
        "timeout_s": 10,
        "seed": 4,
        "clock": "logical"
    })
}

const TWO_CIRCLES: &str = "packing n=2\n0.25 0.5 0.2\n0.75 0.5 0.2\n";

fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run(dir: &Path, config: &Value, id: &str) -> (Output, PathBuf) {
    let path = write_config(dir, &format!("{id}.json"), config);
    let runs = dir.join("runs");
    let o = discover(&["run", "--config", path.to_str().unwrap(), "--runs-dir", runs.to_str().unwrap(), "--run-id", id]);
    (o, runs.join(id))
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn mock_run_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run(tmp.path(), &packing_config(TWO_CIRCLES, 5), "r");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.json", "db.jsonl", "report.json", "programs/0.txt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 7);
    for (i, l) in lines[..6].iter().enumerate() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["iteration"], i);
    }
    assert!(lines[6].starts_with("best score "), "{}", lines[6]);
    assert!(lines[6].contains("after 5 iterations"));
}

#[test]
fn initial_program_file_is_resolved_next_to_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("seed.txt"), TWO_CIRCLES).unwrap();
    let mut config = packing_config("", 2);
    config.as_object_mut().unwrap().remove("initial_program");
    config["initial_program_file"] = json!("seed.txt");
    let (o, dir) = run(tmp.path(), &config, "f");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(dir.join("programs/0.txt")).unwrap(), TWO_CIRCLES);
}

#[test]
fn bad_weights_exit_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = packing_config(TWO_CIRCLES, 2);
    config["model_weights"] = json!({"a": 0.5, "b": 0.4});
    let (o, _) = run(tmp.path(), &config, "w");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model_weights"), "{}", stderr(&o));
}

#[test]
fn malformed_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(discover(&["run", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    let missing = tmp.path().join("missing.json");
    assert_eq!(discover(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_exits_1_after_retries() {
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut config = packing_config(TWO_CIRCLES, 20);
    config["model_weights"] = json!({"m": 1.0});
    config["provider"] = json!({
        "kind": "chat",
        "base_url": format!("http://127.0.0.1:{port}/v1"),
        "max_attempts": 2,
        "initial_backoff_s": 0.0
    });
    let (o, dir) = run(tmp.path(), &config, "u");
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("aborted"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["stop_reason"], "aborted");
}

#[test]
fn report_emits_monotone_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run(tmp.path(), &packing_config(TWO_CIRCLES, 3), "p");
    assert!(o.status.success());
    let o = discover(&["report", dir.to_str().unwrap(), "--plot"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("iteration,attempts_cumulative,best_score,best_id\n"));
    let rows = csv_rows(&out);
    // the seed row plus one row per iteration
    assert_eq!(rows.len(), 4);
    let scores: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[1] >= w[0]));
    let iterations: Vec<u64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(iterations, [0, 1, 2, 3]);
    assert!(std::fs::read_to_string(dir.join("trajectory.svg")).unwrap().starts_with("<svg"));
    assert_eq!(stdout(&discover(&["report", dir.to_str().unwrap()])), out);
}

#[test]
fn report_scale_column() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = packing_config("packing n=1\n0.5 0.5 0.0182\n", 1);
    config["provider"] = json!({"kind": "mock", "step_scale": 0.0});
    let (o, dir) = run(tmp.path(), &config, "s");
    assert!(o.status.success());
    let o = discover(&["report", dir.to_str().unwrap(), "--scale-c", "0.017"]);
    let rows = csv_rows(&stdout(&o));
    let scaled: f64 = rows[0][4].parse().unwrap();
    assert!((scaled - 0.017 / 0.0182).abs() < 1e-12);
    assert!((scaled - 0.934_065_934).abs() < 1e-9);
}

#[test]
fn report_on_empty_directory_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = discover(&["report", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn resuming_a_completed_run_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run(tmp.path(), &packing_config(TWO_CIRCLES, 4), "c");
    assert!(o.status.success());
    let report = std::fs::read(dir.join("report.json")).unwrap();
    let db = std::fs::read(dir.join("db.jsonl")).unwrap();
    let o = discover(&["run", "--resume", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.join("report.json")).unwrap(), report);
    assert_eq!(std::fs::read(dir.join("db.jsonl")).unwrap(), db);

    let other = write_config(tmp.path(), "other.json", &packing_config(TWO_CIRCLES, 9));
    let o = discover(&["run", "--resume", dir.to_str().unwrap(), "--config", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resuming_extends_a_run_with_a_larger_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, whole) = run(tmp.path(), &packing_config(TWO_CIRCLES, 6), "whole");
    let (_, part) = run(tmp.path(), &packing_config(TWO_CIRCLES, 3), "part");
    // widen the budget in place, then continue
    std::fs::copy(whole.join("config.json"), part.join("config.json")).unwrap();
    let o = discover(&["run", "--resume", part.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(whole.join("db.jsonl")).unwrap(), std::fs::read(part.join("db.jsonl")).unwrap());
}

#[test]
fn bench_compare_reports_speedup_or_not_reached() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, a) = run(tmp.path(), &packing_config(TWO_CIRCLES, 10), "a");
    let (_, b) = run(tmp.path(), &packing_config(TWO_CIRCLES, 10), "b");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let best = report["best_score_trajectory"].as_array().unwrap().last().unwrap()["best_score"].as_f64().unwrap();
    assert!(best > 0.4);
    let threshold = best.to_string();
    let o = discover(&["bench", "compare", a.to_str().unwrap(), b.to_str().unwrap(), "--threshold", &threshold]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("speedup 1x"), "{out}");
    let v: Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    assert_eq!(v["speedup"], 1.0);

    let o = discover(&["bench", "compare", a.to_str().unwrap(), b.to_str().unwrap(), "--threshold", "5"]);
    let out = stdout(&o);
    assert!(out.contains("not reached"), "{out}");
    assert!(out.contains("undefined"), "{out}");
}

#[test]
fn eval_builtin_and_external() {
    let tmp = tempfile::tempdir().unwrap();
    let program = tmp.path().join("p.txt");
    std::fs::write(&program, "packing n=1\n0.5 0.5 0.5\n").unwrap();
    let p = program.to_str().unwrap();

    let o = discover(&["eval", "--task", "circle_packing", "--program", p]);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!((v["valid"].clone(), v["score"].clone()), (json!(true), json!(0.5)));

    let o = discover(&["eval", "--cmd", "sh", "--arg=-c", "--arg", "sleep 30", "--timeout", "1", "--program", p]);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["failure_reason"], "timeout");

    let o = discover(&["eval", "--cmd", "sh", "--arg=-c", "--arg", "echo looks good", "--program", p]);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["failure_reason"], "protocol");

    let script = r#"r=$(tail -n 1 "$1" | cut -d' ' -f3); echo "{\"valid\": true, \"score\": $r}""#;
    let o = discover(&["eval", "--cmd", "sh", "--arg=-c", "--arg", script, "--arg", "sh", "--program", p]);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["score"], 0.5, "{v}");

    let o = discover(&["eval", "--cmd", "/no/such/evaluator", "--program", p]);
    assert_eq!(o.status.code(), Some(2));
}
