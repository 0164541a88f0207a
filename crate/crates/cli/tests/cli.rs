//! End-to-end checks of the command-line interface: exit codes, artifact
//! schemas, config layering, and cross-command consistency.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphtrack"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("graphtrack-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn simulate_small(dir: &Path, out: &str, seed: u64, d: usize) {
    let status = bin()
        .current_dir(dir)
        .args([
            "simulate",
            "--scenario",
            "scenario1",
            "--n",
            "6",
            "--degree",
            "4",
            "--graph-seed",
            "3",
            "--d",
            &d.to_string(),
            "--t",
            "15",
            "--inv-r2-db",
            "10",
            "--seed",
            &seed.to_string(),
            "--out",
            out,
            "--save-graph",
            "graph.json",
        ])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn simulate_writes_artifacts_and_exits_zero() {
    let dir = workdir("simulate");
    simulate_small(&dir, "data.bin", 42, 6);
    assert!(dir.join("data.bin").exists());
    assert!(dir.join("data.run.json").exists());
    assert!(dir.join("graph.json").exists());
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("data.run.json")).unwrap())
            .unwrap();
    assert_eq!(echo["command"], "simulate");
    assert_eq!(echo["config"]["seed"], 42);
    assert_eq!(echo["config"]["noise"]["kind"], "gauss");
}

#[test]
fn missing_input_file_is_runtime_error() {
    let dir = workdir("missing");
    let output = bin()
        .current_dir(&dir)
        .args(["eval", "--dataset", "nope.bin", "--filter", "ekf"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let dir = workdir("usage");
    simulate_small(&dir, "data.bin", 1, 4);
    // Empty filter list.
    let output = bin()
        .current_dir(&dir)
        .args([
            "sweep",
            "--scenario",
            "scenario1",
            "--graph",
            "graph.json",
            "--grid",
            "5",
            "--filters",
            "",
            "--d",
            "2",
            "--test-d",
            "2",
            "--t",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    // Unknown filter name.
    let output = bin()
        .current_dir(&dir)
        .args(["eval", "--dataset", "data.bin", "--graph", "graph.json", "--filter", "ukf"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    // gsp-kalmannet without a checkpoint.
    let output = bin()
        .current_dir(&dir)
        .args([
            "eval",
            "--dataset",
            "data.bin",
            "--graph",
            "graph.json",
            "--filter",
            "gsp-kalmannet",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    // Unparseable flags come back as clap usage errors, also exit 2.
    let output = bin().current_dir(&dir).args(["simulate", "--d", "many"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn topology_hash_guard_fires() {
    let dir = workdir("hashguard");
    simulate_small(&dir, "data.bin", 5, 4);
    // A different graph than the dataset's generating one.
    let status = bin()
        .current_dir(&dir)
        .args([
            "simulate",
            "--scenario",
            "scenario1",
            "--n",
            "6",
            "--degree",
            "2",
            "--graph-seed",
            "9",
            "--d",
            "2",
            "--t",
            "5",
            "--out",
            "other.bin",
            "--save-graph",
            "other_graph.json",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let output = bin()
        .current_dir(&dir)
        .args([
            "eval",
            "--dataset",
            "data.bin",
            "--graph",
            "other_graph.json",
            "--filter",
            "ekf",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("topology hash"), "stderr: {stderr}");
}

#[test]
fn sweep_csv_schema_is_pinned() {
    let dir = workdir("schema");
    simulate_small(&dir, "data.bin", 1, 4);
    let status = bin()
        .current_dir(&dir)
        .args([
            "sweep",
            "--scenario",
            "scenario1",
            "--graph",
            "graph.json",
            "--grid",
            "10",
            "--filters",
            "gsp-ekf",
            "--test-d",
            "3",
            "--t",
            "10",
            "--seed",
            "4",
            "--out-dir",
            "sw",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    let mut lines = text.lines();
    // Golden schema: first and third lines are pinned exactly.
    assert_eq!(lines.next().unwrap(), "# graphtrack sweep csv v1");
    let config_line = lines.next().unwrap();
    assert!(config_line.starts_with("# config: {"));
    assert!(config_line.contains("\"scenario\":\"scenario1\""));
    assert_eq!(lines.next().unwrap(), "noise_param,filter,mse_db,mse_linear,seed,status");
    let row = lines.next().unwrap();
    assert!(row.starts_with("10,gsp-ekf,"));
    assert!(row.ends_with(",4,ok"));
}

#[test]
fn single_point_sweep_matches_eval() {
    let dir = workdir("consistency");
    let status = bin()
        .current_dir(&dir)
        .args([
            "sweep",
            "--scenario",
            "scenario1",
            "--n",
            "6",
            "--degree",
            "4",
            "--graph-seed",
            "3",
            "--grid",
            "10",
            "--filters",
            "gsp-ekf",
            "--test-d",
            "4",
            "--t",
            "12",
            "--seed",
            "8",
            "--keep-datasets",
            "--out-dir",
            "sw",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    let row = csv.lines().nth(3).unwrap();
    let mse_linear: f64 = row.split(',').nth(3).unwrap().parse().unwrap();

    // Re-evaluate the kept test dataset through cmd_eval.
    let status = bin()
        .current_dir(&dir)
        .args([
            "simulate",
            "--scenario",
            "scenario1",
            "--n",
            "6",
            "--degree",
            "4",
            "--graph-seed",
            "3",
            "--d",
            "1",
            "--t",
            "2",
            "--seed",
            "0",
            "--out",
            "scratch.bin",
            "--save-graph",
            "graph.json",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .current_dir(&dir)
        .args([
            "eval",
            "--dataset",
            "sw/data/point_0_seed_8_test.bin",
            "--graph",
            "graph.json",
            "--filter",
            "gsp-ekf",
            "--out",
            "eval.json",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    let eval_mse = eval["report"]["mse_linear"].as_f64().unwrap();
    assert_eq!(eval_mse, mse_linear);
}

#[test]
fn ekf_sweep_mse_monotone_in_inverse_noise() {
    let dir = workdir("monotone");
    let status = bin()
        .current_dir(&dir)
        .args([
            "sweep",
            "--scenario",
            "scenario1",
            "--n",
            "10",
            "--degree",
            "4",
            "--graph-seed",
            "5",
            "--grid",
            "0,5,10,15,20",
            "--filters",
            "ekf",
            "--test-d",
            "12",
            "--t",
            "40",
            "--seed",
            "6",
            "--out-dir",
            "sw",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    let mses: Vec<f64> = csv
        .lines()
        .skip(3)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mses.len(), 5);
    for w in mses.windows(2) {
        assert!(w[1] <= w[0], "MSE not nonincreasing: {mses:?}");
    }
}

#[test]
fn config_file_layering_and_env_seed() {
    let dir = workdir("config");
    std::fs::write(
        dir.join("run.toml"),
        "[global]\nseed = 11\n\n[simulate]\nscenario = \"scenario1\"\nn = 6\ndegree = 4\ngraph_seed = 3\nd = 3\nt = 8\ninv_r2_db = 10.0\nout = \"from_config.bin\"\n",
    )
    .unwrap();
    // Values come from the file...
    let status = bin()
        .current_dir(&dir)
        .args(["--config", "run.toml", "simulate"])
        .status()
        .unwrap();
    assert!(status.success());
    let echo: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("from_config.run.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(echo["config"]["seed"], 11);
    assert_eq!(echo["config"]["d"], 3);

    // ...flags override the file...
    let status = bin()
        .current_dir(&dir)
        .args(["--config", "run.toml", "simulate", "--seed", "99", "--out", "flagged.bin"])
        .status()
        .unwrap();
    assert!(status.success());
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("flagged.run.json")).unwrap())
            .unwrap();
    assert_eq!(echo["config"]["seed"], 99);

    // ...and GRAPHTRACK_SEED fills in when nothing else sets the seed.
    let status = bin()
        .current_dir(&dir)
        .env("GRAPHTRACK_SEED", "1234")
        .args([
            "simulate", "--scenario", "scenario1", "--n", "6", "--degree", "4",
            "--graph-seed", "3", "--d", "2", "--t", "5", "--inv-r2-db", "10",
            "--out", "env.bin",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("env.run.json")).unwrap())
            .unwrap();
    assert_eq!(echo["config"]["seed"], 1234);
}

#[test]
fn sweep_rows_independent_of_worker_count() {
    let dir = workdir("jobs");
    simulate_small(&dir, "data.bin", 1, 4);
    let run = |out: &str, jobs: &str| {
        let status = bin()
            .current_dir(&dir)
            .args([
                "sweep", "--scenario", "scenario1", "--graph", "graph.json", "--grid", "5,10,15",
                "--filters", "ekf,gsp-ekf", "--test-d", "3", "--t", "10", "--seed", "4",
                "--jobs", jobs, "--out-dir", out,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("serial", "1");
    run("parallel", "2");
    assert_eq!(
        std::fs::read(dir.join("serial/sweep.csv")).unwrap(),
        std::fs::read(dir.join("parallel/sweep.csv")).unwrap()
    );
}

#[test]
fn bench_rerun_keeps_identical_mses() {
    let dir = workdir("bench");
    let run = |out: &str| {
        let status = bin()
            .current_dir(&dir)
            .args([
                "bench", "--sizes", "15,30", "--t", "5", "--reps", "2", "--filters",
                "ekf,gsp-ekf", "--seed", "5", "--out-dir", out,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("b1");
    run("b2");
    let parse = |p: &str| -> Vec<(String, String, String)> {
        std::fs::read_to_string(dir.join(p))
            .unwrap()
            .lines()
            .skip(2)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                // (n, filter, mse_db): deterministic; timings may jitter.
                (f[0].to_string(), f[1].to_string(), f[2].to_string())
            })
            .collect()
    };
    let a = parse("b1/bench.csv");
    assert_eq!(a, parse("b2/bench.csv"));
    assert_eq!(a.len(), 4);
    // Schema header is pinned.
    let text = std::fs::read_to_string(dir.join("b1/bench.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "# graphtrack bench csv v1");
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "n,filter,mse_db,median_step_seconds,median_traj_seconds,inversions_per_step,reps,steps,status"
    );
}

#[test]
fn psse_scenarios_use_bundled_case() {
    let dir = workdir("psse");
    let status = bin()
        .current_dir(&dir)
        .args([
            "simulate",
            "--scenario",
            "psse-exp",
            "--d",
            "2",
            "--t",
            "10",
            "--noise",
            "exp",
            "--exp-rate",
            "5.0",
            "--seed",
            "3",
            "--out",
            "psse.bin",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("psse.run.json")).unwrap())
            .unwrap();
    assert_eq!(echo["config"]["noise"]["kind"], "exp");
    // IEEE-14: n = 14 is recorded via the graph hash of the bundled case.
    assert!(echo["config"]["topology"]["graph_hash"].as_str().unwrap().len() == 64);
}
