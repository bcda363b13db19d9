use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stab-synth"));
    c.env_remove("STAB_SYNTH_SEED").env_remove("STAB_SYNTH_OUTPUT_DIR");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Row {
    alpha: f64,
    delta: f64,
    gain: Vec<f64>,
}

fn read_schedule(path: &Path) -> (String, Vec<Row>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            Row {
                alpha: f[1],
                delta: f[2],
                gain: f[5..].to_vec(),
            }
        })
        .collect();
    (header, rows)
}

const SMALL_MODEL_FREE: &str = r#"
format = "stab-synth/1"
mode = "model_free"
alpha0 = 3.0

[system]
a = [[1.0]]
b = [[1.0]]
c = [[0.3]]
d = [[0.1]]

[cost]
q = [[1.0]]
r = [[1.0]]
zeta = 10.0

[sim]
t0 = 1.0
n_grid = 20
dt = 0.005
n_traj = 300
l = 4
master_seed = 3
"#;

#[test]
fn demo_config_runs_model_based() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(bin().args(["run"]).arg(example("sec4.cfg")).arg("--output-dir").arg(&out));

    let (header, rows) = read_schedule(&out.join("schedule.csv"));
    assert_eq!(header, "iter,alpha,delta_alpha,cost,inner_iters,k_1_1,k_1_2");
    assert_eq!(rows.len(), 5);
    let k = &rows[4].gain;
    assert!((k[0] + 2.731).abs() < 2e-2 && (k[1] + 1.027).abs() < 2e-2, "{k:?}");

    let result = read_json(&out.join("result.json"));
    assert_eq!(result["format"], "stab-synth-result/1");
    assert_eq!(result["mode"], "model_based");
    assert_eq!(result["outer_iterations"], 5);
    assert_eq!(result["stabilizer"]["verdict"], true);
    assert_eq!(result["iteration_bound"]["within"], true);
    assert!(result["riccati_residual"].as_f64().unwrap() < 1e-6);
}

#[test]
fn schedule_rows_are_consistent_and_verifiable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(bin().args(["run"]).arg(example("sec4.cfg")).arg("--output-dir").arg(&out));
    let (_, rows) = read_schedule(&out.join("schedule.csv"));
    for w in rows.windows(2) {
        assert!(w[1].alpha < w[0].alpha);
        assert!((w[0].alpha - w[0].delta - w[1].alpha).abs() < 1e-12);
    }
    let last = rows.last().unwrap();
    assert!(last.alpha - last.delta <= 0.0);

    for (i, row) in rows.iter().enumerate() {
        let gain_file = dir.path().join(format!("gain_{i}.json"));
        std::fs::write(&gain_file, serde_json::json!({ "gain": [row.gain] }).to_string()).unwrap();
        let out = run_ok(
            bin()
                .args(["verify"])
                .arg(example("sec4.cfg"))
                .arg(&gain_file)
                .arg("--alpha")
                .arg(row.alpha.to_string()),
        );
        assert!(String::from_utf8_lossy(&out.stdout).contains("stabilizer: true"));
    }
}

#[test]
fn oracle_mode_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(
        bin()
            .args(["run"])
            .arg(example("sec4.cfg"))
            .args(["--mode", "model_free_oracle", "--output-dir"])
            .arg(&out),
    );
    let result = read_json(&out.join("result.json"));
    assert_eq!(result["mode"], "model_free_oracle");
    assert_eq!(result["outer_iterations"], 5);
    assert_eq!(result["diagnostics"].as_array().unwrap().len(), 5);
}

#[test]
fn scalar_config_reaches_the_closed_form_gain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_ok(bin().args(["run"]).arg(example("scalar.cfg")).arg("--output-dir").arg(&out));
    let result = read_json(&out.join("result.json"));
    let k = result["gain"][0][0].as_f64().unwrap();
    assert!((k + 1.0 + 2f64.sqrt()).abs() < 1e-6, "k = {k}");
}

#[test]
fn model_free_runs_are_reproducible_and_save_batches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL_MODEL_FREE).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(bin().arg("run").arg(&cfg).arg("--save-batches").arg("--output-dir").arg(&a));
    run_ok(bin().arg("run").arg(&cfg).arg("--output-dir").arg(&b));
    let sa = std::fs::read(a.join("schedule.csv")).unwrap();
    assert_eq!(sa, std::fs::read(b.join("schedule.csv")).unwrap());

    let rows = read_schedule(&a.join("schedule.csv")).1.len();
    for i in 0..rows {
        assert!(a.join("batches").join(format!("batch_{i:03}.bin")).is_file());
    }
    assert!(!b.join("batches").exists());
}

#[test]
fn environment_overrides_seed_and_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL_MODEL_FREE).unwrap();
    let env_out = dir.path().join("from-env");
    run_ok(
        bin()
            .arg("run")
            .arg(&cfg)
            .env("STAB_SYNTH_OUTPUT_DIR", &env_out)
            .env("STAB_SYNTH_SEED", "99"),
    );
    let result = read_json(&env_out.join("result.json"));
    assert_eq!(result["seed"], 99);

    let flag_out = dir.path().join("from-flag");
    run_ok(bin().arg("run").arg(&cfg).arg("--seed").arg("3").arg("--output-dir").arg(&flag_out));
    assert_ne!(
        std::fs::read(env_out.join("schedule.csv")).unwrap(),
        std::fs::read(flag_out.join("schedule.csv")).unwrap()
    );
}

#[test]
fn verify_reports_verdicts_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"gain": [[-2.731, -1.027]]}"#).unwrap();
    let out = run_ok(bin().arg("verify").arg(example("sec4.cfg")).arg(&good));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("stabilizer: true"));
    assert!(text.contains("spectral abscissa"));
    assert!(text.contains("lyapunov eigenvalues"));

    let bad = bin()
        .arg("verify")
        .arg(example("remark.cfg"))
        .arg(example("remark_gain.json"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("stabilizer: false"));

    let stable = dir.path().join("stable.cfg");
    std::fs::write(
        &stable,
        "[system]\na = [[-1.0, 0.0], [0.0, -1.0]]\nb = [[1.0], [0.0]]\nc = [[0.0, 0.0], [0.0, 0.0]]\nd = [[0.0], [0.0]]\n\
         [cost]\nq = [[1.0, 0.0], [0.0, 1.0]]\nr = [[1.0]]\nzeta = 2.0\n",
    )
    .unwrap();
    let zero = dir.path().join("zero.json");
    std::fs::write(&zero, "[[0.0, 0.0]]").unwrap();
    run_ok(bin().arg("verify").arg(&stable).arg(&zero));

    let wrong = dir.path().join("wrong.json");
    std::fs::write(&wrong, "[[0.0, 0.0, 0.0]]").unwrap();
    let out = bin().arg("verify").arg(&stable).arg(&wrong).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(example("sec4.cfg")).unwrap();

    let not_pd = dir.path().join("q.cfg");
    std::fs::write(&not_pd, text.replace("[0.0, 3.0]]", "[0.0, -3.0]]")).unwrap();
    let out = bin().arg("run").arg(&not_pd).arg("--output-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cost.q"));

    let no_d = dir.path().join("d.cfg");
    std::fs::write(&no_d, text.replace("d = [[0.2], [0.1]]", "")).unwrap();
    let out = bin().arg("run").arg(&no_d).arg("--output-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("system.d"));
}

#[test]
fn algorithm_failure_exits_with_status_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("run")
        .arg(example("remark.cfg"))
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
