use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEADER: &str = "algorithm,K,m_policy,noise_kind,noise_param,seed,T,mse,mean_m,mean_delta_selected,wall_time_ms";

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn rlbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlbf")).args(args).output().unwrap()
}

fn small(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "small.json",
        r#"{"noise": {"kind": "contaminated", "epsilon": [0.1]}, "widths": [31], "len": 500,
            "algorithms": ["lbf", "bank"], "seeds": [1]}"#,
    )
}

#[test]
fn run_writes_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let res = rlbf(&["run", "--config", small(dir.path()).to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("lbf,31,adaptive,contaminated,0.1,1,500,"));
    assert!(lines[2].starts_with("bank,31,"));
    assert!(lines[1].ends_with(','), "no timing column outside bench mode");
}

#[test]
fn stdout_when_no_out_path() {
    let dir = tempfile::tempdir().unwrap();
    let res = rlbf(&["run", "--config", small(dir.path()).to_str().unwrap(), "--seeds", "4,9"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let seeds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(seeds, vec!["4", "4", "9", "9"]);
}

#[test]
fn bench_fills_timing() {
    let dir = tempfile::tempdir().unwrap();
    let res = rlbf(&["bench", "--config", small(dir.path()).to_str().unwrap()]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    for line in text.lines().skip(1) {
        let ms: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(ms > 0.0);
    }
}

#[test]
fn mopt_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mopt.json",
        r#"{"noise": {"kind": "contaminated", "epsilon": [0.0]}, "widths": [51, 151]}"#,
    );
    let res = rlbf(&["mopt", "--config", cfg.to_str().unwrap()]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("K,m_opt,sigma_e_sq,sigma_theta_sq,predicted_mse"));
    assert!(lines.next().unwrap().starts_with("51,2,0.032,"));
    assert!(lines.next().unwrap().starts_with("151,3,0.032,"));
}

#[test]
fn config_errors_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"noise": {"kind": "sas", "alpha": [1.2]}, "widths": [51], "windows": 3}"#, "windows"),
        (r#"{"noise": {"kind": "sas", "alpha": [1.2]}}"#, "widths"),
        (r#"{"noise": {"kind": "sas", "alpha": [1.2]}, "widths": [51], "eta0": 2.0}"#, "eta0"),
        (r#"{"noise": {"kind": "sas", "alpha": [3.0]}, "widths": [51]}"#, "noise"),
    ];
    for (body, key) in cases {
        let cfg = write_config(dir.path(), "bad.json", body);
        let res = rlbf(&["run", "--config", cfg.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(2), "{body}");
        let err = String::from_utf8(res.stderr).unwrap();
        assert!(err.contains(&format!("`{key}`")), "{err}");
    }
    let res = rlbf(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(rlbf(&["run"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_with_window() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "wild.json",
        r#"{"noise": {"kind": "sas", "sigma": 1.0, "alpha": [0.01]}, "widths": [21], "len": 400,
            "algorithms": ["lbf"], "seeds": [1]}"#,
    );
    let res = rlbf(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8(res.stderr).unwrap().contains("numerical failure at window"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["fig1.json", "fig5.json", "timing.json", "mopt.json"] {
        let spec = rlbf_cli::ExperimentSpec::load(&dir.join(name)).unwrap();
        spec.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
