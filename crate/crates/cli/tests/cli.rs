use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embreach::experiment::{ExperimentConfig, ExperimentId};

fn embreach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embreach"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_match_presets() {
    for id in ExperimentId::ALL {
        let path = configs_dir().join(format!("{id}.toml"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), ExperimentConfig::preset(id), "{id}");
        let out = embreach(&["preset", id.name()]);
        assert_eq!(String::from_utf8(out.stdout).unwrap(), text, "{id}");
    }
}

#[test]
fn validate_reports_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset(ExperimentId::Integrator);
    cfg.bounds.as_mut().unwrap().delta = 2.5;
    cfg.kernel.lambda = Some(0.0);
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    let out = embreach(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bounds.delta: δ outside (0,2)"), "{err}");
    assert!(err.contains("kernel.lambda"), "{err}");

    let ok = embreach(&["validate", "--config", configs_dir().join("integrator.toml").to_str().unwrap()]);
    assert!(ok.status.success());
}

#[test]
fn missing_controller_file_fails() {
    let cfg = configs_dir().join("cartpole-nonlinear.toml");
    let out = embreach(&["validate", "--config", cfg.to_str().unwrap(), "--controller", "/nonexistent/net.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("policy.weights"));
}

#[test]
fn run_then_compare_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset(ExperimentId::Integrator);
    cfg.sample = embreach::experiment::SampleConfig::Iid {
        m: 300,
        init_lo: vec![-1.1, -1.1],
        init_hi: vec![1.1, 1.1],
    };
    cfg.grid.axes.iter_mut().for_each(|a| a.count = 9);
    let path = dir.path().join("small.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    let out_dir = dir.path().join("out");
    let run = embreach(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "17",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["sample.csv", "field.csv", "field.pgm", "dp.csv", "errors.csv", "manifest.toml"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let manifest = std::fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&manifest).unwrap().seed, 17);

    let field = out_dir.join("field.csv");
    let cmp = embreach(&["compare", field.to_str().unwrap(), field.to_str().unwrap()]);
    assert!(cmp.status.success());
    assert_eq!(String::from_utf8(cmp.stdout).unwrap(), "max_abs,mean_abs\n0,0\n");
}

#[test]
fn unknown_preset_fails() {
    assert!(!embreach(&["preset", "nope"]).status.success());
}
