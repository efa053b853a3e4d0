use std::path::Path;
use std::process::Command;

fn jumpdr(args: &[&str], out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_jumpdr"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("JUMPDR_THREADS", "1")
        .output()
        .expect("binary runs");
    (o.status.code().expect("exit code"), String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr))
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

fn config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.display().to_string()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(jumpdr(&["--help"], dir.path()).0, 0);
    assert_eq!(jumpdr(&["frobnicate"], dir.path()).0, 1);
    assert_eq!(jumpdr(&["solve", "--divergence", "chi2"], dir.path()).0, 1);
}

#[test]
fn bad_config_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "{ not json");
    let (code, msg) = jumpdr(&["solve", "--config", &cfg], dir.path());
    assert_eq!(code, 1, "{msg}");
    let cfg = config(dir.path(), r#"{"solve": {"x0": [1.0]}}"#);
    assert_eq!(jumpdr(&["solve", "--config", &cfg], dir.path()).0, 1);
}

#[test]
fn solve_writes_program_and_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let (code, msg) = jumpdr(&["solve", "--variant", "dr", "--horizon", "2", "--seed", "3"], &out);
    assert_eq!(code, 0, "{msg}");
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["solution"]["status"], "Optimal");
    assert_eq!(sol["nodes"], 1 + 3 + 9);
    assert!(!std::fs::read_to_string(out.join("program.txt")).unwrap().is_empty());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["seed"], 3);
}

#[test]
fn infeasible_state_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"horizon": 2, "solve": {"x0": [5.0, 5.0], "variant": "robust"}}"#);
    let (code, msg) = jumpdr(&["solve", "--config", &cfg], dir.path());
    assert_eq!(code, 2, "{msg}");
}

#[test]
fn concentration_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"concentration": {"runs": 5, "t_max": 100, "points_per_decade": 2}}"#);
    let (code, msg) = jumpdr(&["concentration", "--config", &cfg, "--divergence", "tv"], dir.path());
    assert_eq!(code, 0, "{msg}");
    assert_eq!(header(&dir.path().join("concentration.csv")), "divergence,t,beta,radius,q_lower,q_upper,median,mean");
}

#[test]
fn simulate_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let (code, msg) = jumpdr(&["simulate", "--horizon", "2", "--runs", "1", "--steps", "2"], dir.path());
    assert_eq!(code, 0, "{msg}");
    let d = dir.path();
    assert_eq!(header(&d.join("simulate_steps.csv")), "variant,t,quantity,mean,q05,q95");
    assert_eq!(header(&d.join("simulate_costs.csv")), "variant,run,seed,cost,outcome");
    assert_eq!(
        header(&d.join("simulate_summary.csv")),
        "variant,runs,completed,infeasible,solver_failures,cost_mean,cost_q05,cost_median,cost_q95,first_input_norm_mean,value_shortfalls,theta_sum_mean"
    );
    assert_eq!(header(&d.join("simulate_violations.csv")), "variant,constraint,violations,steps,rate");
    let first = std::fs::read_to_string(d.join("traces.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["mode"], 1);
}

#[test]
fn consistency_and_timing_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#"{"horizon": 2, "consistency": {"grid": [10, 20]}, "timing": {"samples": 2}}"#);
    let (code, msg) = jumpdr(&["consistency", "--config", &cfg, "--divergence", "tv"], dir.path());
    assert_eq!(code, 0, "{msg}");
    assert_eq!(header(&dir.path().join("consistency.csv")), "divergence,t,value,v_star,v_robust,rel_subopt,robust_rel_subopt,status");
    let (code, msg) = jumpdr(&["timing", "--config", &cfg, "--divergence", "tv"], dir.path());
    assert_eq!(code, 0, "{msg}");
    assert_eq!(header(&dir.path().join("timing.csv")), "divergence,sample,x0,solve_ms,status");
    assert_eq!(header(&dir.path().join("timing_summary.csv")), "divergence,samples,optimal,avg_ms,max_ms");
}
