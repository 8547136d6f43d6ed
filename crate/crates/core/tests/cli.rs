use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rbeam::cli::{read_csv_columns, RunManifest};

fn rbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbeam"))
        .args(args)
        .env_remove("RBEAM_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = rbeam(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn data_rows(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    read_csv_columns(&text)[0].values.len()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_config_exits_2() {
    let o = rbeam(&["transient", "--config", "/no/such/file.cfg", "--out", "/tmp"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/no/such/file.cfg"), "{err}");
}

#[test]
fn invalid_config_names_the_line() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "# split\n\nsplit_lambda = 0.2\nsplit_lambda = 0.3\n");
    let o = rbeam(&["sweep-lambda", "--config", &cfg, "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.cfg:4:"));

    let cfg = write_config(d.path(), "split_lambda = 1.5\n");
    let o = rbeam(&["sweep-lambda", "--config", &cfg, "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("split_lambda"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let file = d.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let o = rbeam(&["sweep-lambda", "--out", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn single_pump_power_gives_one_row() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "sweep_powers = 30\nsweep_t_end = 0.03\n");
    ok(&["sweep-pump", "--config", &cfg, "--out", d.path().to_str().unwrap()]);
    assert_eq!(data_rows(&d.path().join("fig7_pump_sweep.csv")), 1);
}

#[test]
fn lambda_sweep_rows_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    ok(&["sweep-lambda", "--out", out, "--seed", "11", "--svg"]);
    let csv = d.path().join("fig9_lambda.csv");
    assert_eq!(data_rows(&csv), 21);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().any(|l| l == "# rng_seed = 11"));

    let m: RunManifest =
        serde_json::from_str(&fs::read_to_string(d.path().join("sweep-lambda.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "sweep-lambda");
    assert_eq!(m.seed, 11);
    assert!(m.outputs.iter().any(|f| f == "fig9_lambda.svg"));
    for f in &m.outputs {
        assert!(d.path().join(f).is_file(), "{f}");
    }
    // The recorded config reproduces the run.
    let cfg = write_config(d.path(), &m.config);
    let again = tempfile::tempdir().unwrap();
    ok(&[
        "sweep-lambda",
        "--config",
        &cfg,
        "--out",
        again.path().to_str().unwrap(),
    ]);
    let a = fs::read_to_string(&csv).unwrap();
    let b = fs::read_to_string(again.path().join("fig9_lambda.csv")).unwrap();
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&a), body(&b));
}

#[test]
fn ber_table_holds_every_rate() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "ber_n_bits = 2000\nber_snr_db = 0, 10\n");
    ok(&[
        "ber",
        "--path",
        "bypass",
        "--config",
        &cfg,
        "--out",
        d.path().to_str().unwrap(),
    ]);
    let text = fs::read_to_string(d.path().join("fig10_ber.csv")).unwrap();
    let cols = read_csv_columns(&text);
    let names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["snr_db", "rate", "n_bits", "errors", "ber", "ci95"]);
    assert_eq!(cols[1].values, [1e5, 1e5, 2e5, 2e5]);
    assert!(text.contains("# ber_path = bypass"));
}

#[test]
fn seed_from_environment_and_flag() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "ber_n_bits = 1000\nber_snr_db = 0\n");
    let out = d.path().to_str().unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_rbeam"));
        c.args(["ber", "--path", "bypass", "--config", &cfg, "--out", out])
            .args(extra);
        match env {
            Some(s) => c.env("RBEAM_SEED", s),
            None => c.env_remove("RBEAM_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        let m: RunManifest =
            serde_json::from_str(&fs::read_to_string(d.path().join("ber.manifest.json")).unwrap()).unwrap();
        m.seed
    };
    assert_eq!(run(None, &[]), 1);
    assert_eq!(run(Some("5"), &[]), 5);
    assert_eq!(run(Some("5"), &["--seed", "9"]), 9);

    let mut c = Command::new(env!("CARGO_BIN_EXE_rbeam"));
    c.args(["ber", "--config", &cfg, "--out", out])
        .env("RBEAM_SEED", "five");
    assert_eq!(c.output().unwrap().status.code(), Some(2));
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = write_config(cfg_dir.path(), "ber_n_bits = 20000\nsweep_powers = 20, 40\n");
    let dirs: Vec<_> = ["1", "3"]
        .iter()
        .map(|jobs| {
            let d = tempfile::tempdir().unwrap();
            let out = d.path().to_str().unwrap().to_string();
            ok(&["ber", "--config", &cfg, "--out", &out, "--jobs", jobs]);
            ok(&["sweep-pump", "--config", &cfg, "--out", &out, "--jobs", jobs]);
            d
        })
        .collect();
    for f in ["fig10_ber.csv", "fig7_pump_sweep.csv"] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs between worker counts");
    }
}

#[test]
fn transient_reports_relaxation() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "waveform = constant\nt_end = 0.03\nsample_dt = 1e-5\n");
    ok(&["transient", "--config", &cfg, "--out", d.path().to_str().unwrap()]);
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("relaxation.json")).unwrap()).unwrap();
    assert_eq!(r["settled"], true);
    let steady = r["metrics"]["steady_power"].as_f64().unwrap();
    assert!(steady > 2.9 && steady < 3.1, "{steady}");
    assert_eq!(data_rows(&d.path().join("fig6_transient.csv")), 3001);
}

#[test]
fn readme_config_example_is_the_default() {
    let readme = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let start = readme.find("```ini\n").unwrap() + 7;
    let end = start + readme[start..].find("```").unwrap();
    let mut b = rbeam::params::parse_config(&readme[start..end], "README.md").unwrap();
    let d = rbeam::params::Bundle::default();
    assert_eq!(b.experiments.freq_response_freqs, [10.0, 100.0, 1e3, 1e4, 1e5, 1e6]);
    b.experiments.freq_response_freqs = d.experiments.freq_response_freqs.clone();
    assert_eq!(b, d);
}
