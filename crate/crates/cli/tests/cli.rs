use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptive-mc"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

fn small_gaussian(extra: &str) -> String {
    format!(
        "target = \"gaussian\"\ncovariance = [[0.96, 2.44], [2.44, 7.04]]\n\
         temperatures = [10.0, 5.0, 2.0, 1.0]\ntheta = 0.5\niterations = 200\nseed = 5\n{extra}"
    )
}

fn report_value(text: &str, key: &str) -> f64 {
    let prefix = format!("{key} = ");
    text.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap().trim().parse().unwrap()
}

#[test]
fn bundled_configs_validate() {
    for name in ["table1.toml", "oracle_five_state.toml", "shared_level_five_state.toml"] {
        let o = run(&["validate", bundled(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stdout(&o));
        assert!(stdout(&o).trim_end().ends_with("valid"));
    }
}

#[test]
fn bad_configs_are_rejected() {
    let dir = TempDir::new().unwrap();
    let increasing = small_gaussian("").replace("[10.0, 5.0, 2.0, 1.0]", "[1.0, 2.0, 5.0, 10.0]");
    let zero_theta = small_gaussian("").replace("theta = 0.5", "theta = 0.0");
    for (name, body) in [("inc.toml", increasing), ("theta.toml", zero_theta)] {
        let path = write_config(&dir, name, &body);
        let o = run(&["validate", &path]);
        assert!(!o.status.success(), "{name} should be invalid");
        assert!(stdout(&o).trim_end().ends_with("invalid"));
    }
    let typo = write_config(&dir, "typo.toml", &small_gaussian("itertions = 3\n"));
    let o = run(&["validate", &typo]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("itertions"));
}

#[test]
fn ee_run_writes_every_level_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.toml", &small_gaussian(""));
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["run", &cfg, "--kind", "ee", "--seed", "11", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("trajectory_ee.csv")).unwrap());
        assert!(out.join("trajectory_ee.meta").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_digest="));
    assert_eq!(lines.next().unwrap(), "iteration,level,x1,x2,branch,accepted");
    assert_eq!(lines.count(), 4 * 200);

    let out = dir.path().join("c");
    let o = run(&["run", &cfg, "--kind", "ee", "--seed", "12", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(fs::read(out.join("trajectory_ee.csv")).unwrap(), outputs[0]);
}

#[test]
fn limit_kind_without_exact_sampler_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.toml", &small_gaussian("exact_sampler = false\n"));
    let out = dir.path().join("out");
    let o = run(&["run", &cfg, "--kind", "ee_limit", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).contains("panicked"));
    assert!(out.join("FAILED").exists());
}

#[test]
fn single_replication_table_is_flagged_unreliable() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.toml", &small_gaussian("replications = 1\nkernels = [\"rwm\", \"ee\"]\n"));
    let out = dir.path().join("t");
    let o = run(&["table1", &cfg, "--out", out.to_str().unwrap(), "--jobs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).to_lowercase().contains("unreliable"));
    for f in ["mse.csv", "mse.txt", "mse.meta"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn oracle_with_theta_one_has_no_gamma_term() {
    let dir = TempDir::new().unwrap();
    let body = fs::read_to_string(bundled("oracle_five_state.toml")).unwrap().replace("theta = 0.5", "theta = 1.0");
    let cfg = write_config(&dir, "o.toml", &body);
    let out = dir.path().join("o");
    let o = run(&["oracle", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("variance_report.txt")).unwrap();
    assert_eq!(report_value(&text, "clt_variance"), report_value(&text, "sigma_star_sq"));
}

#[test]
fn oracle_on_iid_base_chain_gives_plain_variance() {
    // Uniform energies and a uniform proposal make every Metropolis move accept.
    let f = [2.0, -1.0, 0.5, 0.0];
    let mean = f.iter().sum::<f64>() / 4.0;
    let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    let row = "[0.25, 0.25, 0.25, 0.25]";
    let body = format!(
        "target = \"finite\"\nenergies = [0.0, 0.0, 0.0, 0.0]\ntemperatures = [2.0, 1.0]\ntheta = 0.5\n\
         proposal_matrix = [{row}, {row}, {row}, {row}]\noracle_function = {f:?}\n"
    );
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "iid.toml", &body);
    let out = dir.path().join("o");
    let o = run(&["oracle", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sigma = report_value(&stdout(&o), "sigma_star_sq");
    assert!((sigma - var).abs() < 1e-9, "{sigma} vs {var}");
}

#[test]
fn oracle_rejects_gaussian_targets() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.toml", &small_gaussian(""));
    let out = dir.path().join("o");
    let o = run(&["oracle", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(out.join("FAILED").exists());
}
