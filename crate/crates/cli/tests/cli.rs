use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_brar");

const SMALL: &str = r#"
[scenario]
name = "SNN"

[trial]
total_n = 120
num_stages = 3
delta = 0.0

[rule]
name = "rule3"

[mcmc]
iterations = 400
burn_in = 100
thin = 5

[spending]
name = "power"
gamma = 1.0

[spending.calibration]
n_rep = 100
null_arm = { lambda = 0.2, omega = 0.3, mu = -2.3, sigma2 = 0.64 }

[replication]
replicates = 6
seed = 5

[output]
directory = "out"
run_id = "small"
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    std::fs::write(dir.join("run.toml"), config).unwrap();
    Command::new(BIN).current_dir(dir).args(args).args(["--config", "run.toml"]).output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out/small").join(name)).unwrap()
}

#[test]
fn calibrate_writes_power_increments() {
    let tmp = tempfile::tempdir().unwrap();
    let config = SMALL.replace("num_stages = 3", "num_stages = 10").replace("total_n = 120", "total_n = 200");
    let out = run(tmp.path(), &config, &["calibrate", "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(tmp.path(), "boundaries.csv");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# brar boundaries v1"));
    assert!(lines.next().unwrap().contains(&format!("brar_version={}", env!("CARGO_PKG_VERSION"))));
    assert_eq!(lines.next(), Some("j,t,alpha_t,delta_alpha,c"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 10);
    for (j, r) in rows.iter().enumerate() {
        assert_eq!(r[0] as usize, j + 1);
        assert!((r[3] - 0.0025).abs() < 1e-12, "row {j}: {}", r[3]);
        assert!((0.0..=1.0).contains(&r[4]));
    }
}

#[test]
fn missing_null_arm_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = SMALL.replace("null_arm = { lambda = 0.2, omega = 0.3, mu = -2.3, sigma2 = 0.64 }", "");
    let out = run(tmp.path(), &config, &["calibrate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("null_arm"));
    assert!(!tmp.path().join("out/small/boundaries.csv").exists());
}

#[test]
fn unknown_rule_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &SMALL.replace("rule3", "rule9"), &["replicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_replicate_has_one_row_and_zero_sd() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &SMALL.replace("replicates = 6", "replicates = 1"), &["replicate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(tmp.path(), "replicates.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# brar replicates v1");
    assert!(lines[1].starts_with("# brar_version="));
    assert!(lines[2].starts_with("replicate,"));
    assert_eq!(lines.len(), 4);
    let summary = read(tmp.path(), "summary.toml");
    assert!(summary.starts_with("# brar summary v1\n"));
    assert!(summary.contains("pps_ha1_sd = 0.0"));
    assert!(summary.contains("replicates = 1"));
}

#[test]
fn existing_outputs_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(tmp.path(), SMALL, &["calibrate"]).status.success());
    let out = run(tmp.path(), SMALL, &["calibrate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    assert!(run(tmp.path(), SMALL, &["calibrate", "--force"]).status.success());
}

#[test]
fn boundary_file_is_reused() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(tmp.path(), SMALL, &["calibrate"]).status.success());
    std::fs::rename(tmp.path().join("out/small/boundaries.csv"), tmp.path().join("b.csv")).unwrap();
    let config = SMALL.replace("gamma = 1.0", "gamma = 1.0\nboundary_file = \"b.csv\"");
    let out = run(tmp.path(), &config, &["replicate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("out/small/boundaries.csv").exists());

    let wrong_stages = config.replace("num_stages = 3", "num_stages = 4").replace("total_n = 120", "total_n = 160");
    let out = run(tmp.path(), &wrong_stages, &["replicate", "--force"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(tmp.path().join("b.csv"), "j,t\n1,2\n").unwrap();
    let out = run(tmp.path(), &config, &["replicate", "--force"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in ["1", "8"] {
        let out = run(tmp.path(), SMALL, &["replicate", "--force", "--workers", workers]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(["boundaries.csv", "replicates.csv", "summary.toml"].map(|f| read(tmp.path(), f)));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(tmp.path(), SMALL, &["replicate", "--seed", "11"]);
    assert!(a.status.success());
    let first = read(tmp.path(), "replicates.csv");
    assert!(first.contains("seed=11"));
    run(tmp.path(), SMALL, &["replicate", "--seed", "12", "--force"]);
    assert_ne!(first, read(tmp.path(), "replicates.csv"));
}

#[test]
fn degenerate_asymptotics_arm_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"
[asymptotics]
arm = { lambda = 0.0, omega = 0.3, mu = -2.3, sigma2 = 0.64 }

[output]
directory = "out"
run_id = "small"
"#;
    let out = run(tmp.path(), config, &["asymptotics"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn asymptotics_report_is_versioned() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"
[asymptotics.verification]
mc_samples = 20000
score_probes = 10
probe_records = 10
fits = 10
fit_n = 200
consistency_sizes = [100, 400]
consistency_reps = 10

[asymptotics.verification.mcmc]
iterations = 400
burn_in = 100
thin = 5

[output]
directory = "out"
run_id = "small"
"#;
    let out = run(tmp.path(), config, &["asymptotics"]);
    // tiny settings may fail statistical checks, which is a numerical failure
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    let text = read(tmp.path(), "asymptotics.txt");
    assert!(text.starts_with("# brar asymptotics report v1\n"));
    assert!(text.contains("score_vs_finite_difference"));
}
