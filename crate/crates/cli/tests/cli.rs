use std::path::Path;
use std::process::{Command, Output};

fn qdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdrift"))
        .args(args)
        .env_remove("QDRIFT_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"
model = "lattice_0"
t = 0.05
b_values = [0.1]
channels = ["trotter(1)", "composite_finite(1,2,1)"]
distributions = ["standard", "cost_weighted"]
repetitions = 2
master_seed = 5

[diamond]
restarts = 4
"#;

#[test]
fn table2_prints_every_entry_and_succeeds() {
    let out = qdrift(&["table2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with("pass")).count(), 14);

    let out = qdrift(&["table2", "--json"]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), 14);
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = qdrift(&["run", &config, "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut reader = csv::Reader::from_path(out_dir.join("results.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "model");
    assert_eq!(&header[10], "total_cost");
    // One Trotter row plus two repetitions for each distribution.
    assert_eq!(reader.records().count(), 5);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["histograms"].as_array().unwrap().len(), 2);
}

#[test]
fn thread_count_does_not_change_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let csv_at = |threads: &str| {
        let out_dir = dir.path().join(format!("out-{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_qdrift"))
            .args(["run", &config, "--output", out_dir.to_str().unwrap()])
            .env("QDRIFT_THREADS", threads)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        std::fs::read(out_dir.join("results.csv")).unwrap()
    };
    assert_eq!(csv_at("1"), csv_at("4"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "model = \"lattice_0\"\nt = 0.1\nchannels = [\"trotter(0)\"]\n",
    );
    let out = qdrift(&["run", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let unknown = write_config(
        dir.path(),
        "model = \"lattice_0\"\nt = 0.1\nchannels = [\"exact\"]\nspeed = 3\n",
    );
    assert_eq!(qdrift(&["costs", &unknown]).status.code(), Some(2));

    let missing = dir.path().join("absent.toml");
    assert_eq!(
        qdrift(&["bounds-plan", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let out = Command::new(env!("CARGO_BIN_EXE_qdrift"))
        .args(["table2"])
        .env("QDRIFT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_mode_exits_with_3_on_unconverged_estimates() {
    let dir = tempfile::tempdir().unwrap();
    // A single two-step climb cannot close the certificate.
    let config = write_config(
        dir.path(),
        r#"
model = "lattice_0"
t = 0.1
b_values = [0.5]
channels = ["composite_avg(1,1)"]

[diamond]
restarts = 1
max_iter = 2
"#,
    );
    let out_dir = dir.path().join("out");
    let out_dir = out_dir.to_str().unwrap();
    assert_eq!(
        qdrift(&["run", &config, "--output", out_dir]).status.code(),
        Some(0)
    );
    assert_eq!(
        qdrift(&["run", &config, "--output", out_dir, "--strict"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn costs_and_bounds_plan_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SMALL}\n[plan]\nepsilon = 0.01\n"));
    let out = qdrift(&["costs", &config]);
    assert!(out.status.success());
    let hist: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let hist = hist.as_array().unwrap();
    assert_eq!(hist.len(), 2);
    for h in hist {
        assert_eq!(h["circuits"], 4);
        assert!(h["achievable_costs"].as_array().is_some());
    }

    let plan_path = dir.path().join("plan.json");
    let out = qdrift(&["bounds-plan", &config, "--output", plan_path.to_str().unwrap()]);
    assert!(out.status.success());
    let plans: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(plan_path).unwrap()).unwrap();
    let first = &plans.as_array().unwrap()[0];
    assert!(first["pure"]["n_samples"]["ceiled"].as_u64().unwrap() >= 1);
    assert!(first["composite"]["m_experiments"]["ceiled"].as_u64().unwrap() >= 1);
}
