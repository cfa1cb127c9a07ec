//! Config files, the experiment runner, CSV/PGM artifacts.
//!
//! A run is a pure function of its [`ExperimentConfig`]: every random draw
//! comes from substreams of `seed`, so re-running a manifest reproduces the
//! CSV and PGM artifacts byte for byte. Only `manifest.toml` carries timings.

pub mod artifacts;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bounds::{bound_field, BoundParams};
use crate::dp::{compare_fields, dp_solve, ErrorStats, GridSpec};
use crate::embedding::{fit, SampleSet};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::points::PointSet;
use crate::reach::{safety_field, Policy, SafetyField, SafetySpec};
use crate::systems::mlp::MlpController;
use crate::systems::{
    reverse_time_sample, sample_iid, sample_trajectories, InitBox, ReverseSampleSpec, RngSpec, SystemModel,
};

pub use artifacts::SweepRow;
pub use config::{
    validate, AxisConfig, BoundsConfig, DpConfig, ExperimentConfig, ExperimentId, GridConfig, KernelConfig,
    PolicyConfig, SafetyConfig, SampleConfig, SetConfig, SweepConfig, SystemConfig, VariantConfig, Violation,
};

const SAMPLE_STREAM: u64 = 0;
const SWEEP_STREAM_BASE: u64 = 1;

pub fn build_system(cfg: &SystemConfig) -> Result<SystemModel> {
    SystemModel::isotropic(cfg.kind(), cfg.noise_scale())
}

pub fn build_policy(cfg: &PolicyConfig, state_dim: usize) -> Result<Policy> {
    Ok(match cfg {
        PolicyConfig::Zero => Policy::zero(1),
        PolicyConfig::Constant { value } => Policy::Constant(value.clone()),
        PolicyConfig::Affine { gain, offset } => Policy::affine(gain.clone(), offset.clone(), state_dim)?,
        PolicyConfig::Mlp { weights } => Policy::Mlp(MlpController::load(weights)?),
        PolicyConfig::Scripted { controller } => Policy::Scripted(*controller),
    })
}

pub fn build_spec(cfg: &SafetyConfig) -> Result<SafetySpec> {
    Ok(SafetySpec {
        safe: cfg.safe.to_spec()?,
        target: cfg.target.to_spec()?,
        horizon: cfg.horizon,
        variant: cfg.variant.into(),
    })
}

/// Draws (or loads) the sample described by `cfg`.
pub fn build_sample(cfg: &SampleConfig, system: &SystemModel, policy: &Policy, seed: u64) -> Result<SampleSet> {
    let mut rng = RngSpec::new(seed).substream(SAMPLE_STREAM);
    match cfg {
        SampleConfig::Iid { m, init_lo, init_hi } => {
            let init = InitBox::new(init_lo.clone(), init_hi.clone())?;
            sample_iid(system, policy, &init, *m, &mut rng)
        }
        SampleConfig::Trajectories {
            trajectories,
            steps,
            init_lo,
            init_hi,
        } => {
            let init = InitBox::new(init_lo.clone(), init_hi.clone())?;
            let mut inits = PointSet::empty(init.dim());
            for _ in 0..*trajectories {
                inits.push(&init.draw(&mut rng))?;
            }
            sample_trajectories(system, policy, &inits, *steps, &mut rng)
        }
        SampleConfig::ReverseTime {
            target_lo,
            target_hi,
            domain_lo,
            domain_hi,
            inside,
            outside,
            steps,
            uniform,
        } => {
            let spec = ReverseSampleSpec {
                target: InitBox::new(target_lo.clone(), target_hi.clone())?,
                domain: InitBox::new(domain_lo.clone(), domain_hi.clone())?,
                trajectories_inside: *inside,
                trajectories_outside: *outside,
                steps: *steps,
                uniform: *uniform,
            };
            reverse_time_sample(system, policy, &spec, &mut rng)
        }
        SampleConfig::File { path } => SampleSet::load(path),
    }
}

/// Everything a run computes, before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub sample: Option<SampleSet>,
    pub lambda: Option<f64>,
    pub field: Option<SafetyField>,
    pub bound_params: Option<BoundParams>,
    pub dp_field: Option<SafetyField>,
    pub dp_errors: Option<ErrorStats>,
    pub sweep: Option<Vec<SweepRow>>,
    /// `(phase, seconds)` in execution order.
    pub timings: Vec<(String, f64)>,
}

fn timed<T>(timings: &mut Vec<(String, f64)>, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    timings.push((phase.to_string(), t.elapsed().as_secs_f64()));
    Ok(out)
}

fn reject_violations(cfg: &ExperimentConfig) -> Result<()> {
    let v = validate(cfg);
    if v.is_empty() {
        return Ok(());
    }
    Err(Error::Config {
        path: v[0].path.clone(),
        message: v.iter().map(Violation::to_string).collect::<Vec<_>>().join("; "),
    })
}

/// Runs the experiment in memory. Sweep experiments run [`run_sweep`].
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    reject_violations(cfg)?;
    if cfg.experiment == ExperimentId::Sweep {
        return run_sweep(cfg);
    }
    let mut timings = Vec::new();
    let n = cfg.state_dim();
    let system = build_system(&cfg.system)?;
    let policy = build_policy(&cfg.policy, n)?;
    let spec = build_spec(&cfg.safety)?;
    let grid = cfg.grid.to_grid();
    let points = grid.points()?;
    let (cols, rows) = grid
        .shape_2d()
        .ok_or_else(|| Error::Shape("evaluation grid needs one or two axes".into()))?;

    let sample = timed(&mut timings, "sample", || build_sample(&cfg.sample, &system, &policy, cfg.seed))?;
    let lambda = cfg.kernel.lambda_for(sample.len());
    let model = timed(&mut timings, "fit", || {
        fit(
            sample.clone(),
            KernelSpec::gaussian(cfg.kernel.sigma)?,
            KernelSpec::gaussian(cfg.kernel.joint_sigma())?,
            lambda,
        )
    })?;
    let mut field = timed(&mut timings, "recursion", || safety_field(&model, &policy, &spec, &points))?
        .with_grid_shape(cols, rows)?;
    let mut bound_params = None;
    if let Some(b) = &cfg.bounds {
        let report = timed(&mut timings, "bounds", || bound_field(&model, &policy, &points, b.delta, b.ell_method))?;
        bound_params = Some(report.params);
        field = field.with_bounds(report.bounds)?;
    }
    drop(model);

    let (mut dp_field, mut dp_errors) = (None, None);
    if let Some(dp) = &cfg.dp {
        let g = GridSpec::cube(n, dp.lo, dp.hi, dp.count)?;
        let truth = timed(&mut timings, "dp", || dp_solve(&g, &system, &policy, &spec)?.field(&points))?
            .with_grid_shape(cols, rows)?;
        dp_errors = Some(compare_fields(&field, &truth)?);
        dp_field = Some(truth);
    }

    Ok(RunOutcome {
        config: cfg.clone(),
        sample: Some(sample),
        lambda: Some(lambda),
        field: Some(field),
        bound_params,
        dp_field,
        dp_errors,
        sweep: None,
        timings,
    })
}

/// Mean bound over the evaluation grid for every `(M, δ)` pair. Each `M`
/// draws a fresh i.i.d. sample; the complexity terms are shared across `δ`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config {
            path: "sweep".into(),
            message: "missing [sweep] section".into(),
        })?;
    let SampleConfig::Iid { init_lo, init_hi, .. } = &cfg.sample else {
        return Err(Error::Config {
            path: "sample.mode".into(),
            message: "sweeps redraw i.i.d. samples of each size".into(),
        });
    };
    let method = cfg.bounds.map(|b| b.ell_method).unwrap_or_default();
    let n = cfg.state_dim();
    let system = build_system(&cfg.system)?;
    let policy = build_policy(&cfg.policy, n)?;
    let points = cfg.grid.to_grid().points()?;
    let init = InitBox::new(init_lo.clone(), init_hi.clone())?;
    let mut timings = Vec::new();
    let mut rows = Vec::with_capacity(sweep.m_values.len() * sweep.deltas.len());
    for (i, &m) in sweep.m_values.iter().enumerate() {
        let phase = format!("sweep_m{m}");
        timed(&mut timings, &phase, || {
            let mut rng = RngSpec::new(cfg.seed).substream(SWEEP_STREAM_BASE + i as u64);
            let sample = sample_iid(&system, &policy, &init, m, &mut rng)?;
            let model = fit(
                sample,
                KernelSpec::gaussian(cfg.kernel.sigma)?,
                KernelSpec::gaussian(cfg.kernel.joint_sigma())?,
                cfg.kernel.lambda_for(m),
            )?;
            let report = bound_field(&model, &policy, &points, sweep.deltas[0], method)?;
            let mean_c = report.complexity.iter().sum::<f64>() / report.complexity.len() as f64;
            for &delta in &sweep.deltas {
                let params = BoundParams::new(m, report.params.rho, report.params.ell, delta)?;
                rows.push(SweepRow {
                    m,
                    delta,
                    mean_b: params.radius(mean_c),
                });
            }
            Ok(())
        })?;
    }
    Ok(RunOutcome {
        config: cfg.clone(),
        sample: None,
        lambda: None,
        field: None,
        bound_params: None,
        dp_field: None,
        dp_errors: None,
        sweep: Some(rows),
        timings,
    })
}

/// Writes every artifact of `outcome` into `dir` and returns the file names,
/// `manifest.toml` last.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files = Vec::new();
    if let Some(sample) = &outcome.sample {
        sample.save(&dir.join("sample.csv"))?;
        files.push("sample.csv".to_string());
    }
    if let Some(field) = &outcome.field {
        artifacts::write_field_csv(&dir.join("field.csv"), field)?;
        files.push("field.csv".into());
        files.extend(artifacts::write_field_heatmaps(dir, "field", field)?);
    }
    if let Some(truth) = &outcome.dp_field {
        artifacts::write_field_csv(&dir.join("dp.csv"), truth)?;
        files.push("dp.csv".into());
        files.extend(artifacts::write_field_heatmaps(dir, "dp", truth)?);
    }
    if let Some(stats) = &outcome.dp_errors {
        let mut w = artifacts::create_file(&dir.join("errors.csv"))?;
        artifacts::write_errors_csv(stats, &mut w)?;
        w.flush()?;
        files.push("errors.csv".into());
    }
    if let Some(rows) = &outcome.sweep {
        let mut w = artifacts::create_file(&dir.join("sweep.csv"))?;
        artifacts::write_sweep_csv(rows, &mut w)?;
        w.flush()?;
        files.push("sweep.csv".into());
    }
    artifacts::write_file(&dir.join("manifest.toml"), manifest(outcome, &files).as_bytes())?;
    files.push("manifest.toml".into());
    Ok(files)
}

/// Manifest text: run summary, timings, results and the resolved config.
/// Feeding it back to [`ExperimentConfig::from_toml_str`] recovers the config.
pub fn manifest(outcome: &RunOutcome, files: &[String]) -> String {
    use toml::{Table, Value};
    let mut run = Table::new();
    run.insert("experiment".into(), Value::String(outcome.config.experiment.to_string()));
    run.insert("seed".into(), Value::Integer(outcome.config.seed as i64));
    run.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    run.insert(
        "artifacts".into(),
        Value::Array(files.iter().cloned().map(Value::String).collect()),
    );

    let mut timings = Table::new();
    for (phase, secs) in &outcome.timings {
        timings.insert(phase.clone(), Value::Float(*secs));
    }

    let mut results = Table::new();
    if let Some(s) = &outcome.sample {
        results.insert("sample_size".into(), Value::Integer(s.len() as i64));
    }
    if let Some(l) = outcome.lambda {
        results.insert("lambda".into(), Value::Float(l));
    }
    if let Some(p) = &outcome.bound_params {
        results.insert("ell".into(), Value::Float(p.ell));
        results.insert("bounded_difference_c".into(), Value::Float(p.c));
        results.insert("concentration_term".into(), Value::Float(p.concentration_term()));
    }
    if let Some(e) = &outcome.dp_errors {
        results.insert("dp_max_abs_error".into(), Value::Float(e.max_abs));
        results.insert("dp_mean_abs_error".into(), Value::Float(e.mean_abs));
    }
    if let Some(f) = &outcome.field {
        let mean = f.values.iter().sum::<f64>() / f.len().max(1) as f64;
        results.insert("mean_value".into(), Value::Float(mean));
        if let Some(b) = &f.bounds {
            let mean_b = b.iter().sum::<f64>() / b.len().max(1) as f64;
            results.insert("mean_bound".into(), Value::Float(mean_b));
        }
    }

    let config: Table = Table::try_from(&outcome.config).expect("config serializes");
    let mut root = Table::new();
    root.insert("run".into(), Value::Table(run));
    root.insert("timings".into(), Value::Table(timings));
    root.insert("results".into(), Value::Table(results));
    root.insert("config".into(), Value::Table(config));
    toml::to_string(&root).expect("manifest serializes")
}

/// Validates, executes and writes `cfg` into `dir`.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<(RunOutcome, Vec<String>)> {
    let outcome = execute(cfg)?;
    let files = write_artifacts(&outcome, dir)?;
    Ok((outcome, files))
}

/// `cfg.output_dir`, else `out/<experiment>`.
pub fn default_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_integrator() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(ExperimentId::Integrator);
        cfg.sample = SampleConfig::Iid {
            m: 200,
            init_lo: vec![-1.1, -1.1],
            init_hi: vec![1.1, 1.1],
        };
        cfg.grid.axes.iter_mut().for_each(|a| a.count = 5);
        cfg.dp = Some(DpConfig { lo: -1.1, hi: 1.1, count: 11 });
        cfg
    }

    #[test]
    fn rerun_from_manifest_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = small_integrator();
        let (_, files) = run(&cfg, a.path()).unwrap();
        let manifest = std::fs::read_to_string(a.path().join("manifest.toml")).unwrap();
        let again = ExperimentConfig::from_toml_str(&manifest).unwrap();
        assert_eq!(again, cfg);
        run(&again, b.path()).unwrap();
        for f in files.iter().filter(|f| *f != "manifest.toml") {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn invalid_config_is_rejected_before_running() {
        let mut cfg = small_integrator();
        cfg.bounds.as_mut().unwrap().delta = 0.0;
        let err = execute(&cfg).unwrap_err().to_string();
        assert!(err.contains("bounds.delta"), "{err}");
    }

    #[test]
    fn small_sweep_shape() {
        let mut cfg = ExperimentConfig::preset(ExperimentId::Sweep);
        cfg.sweep = Some(SweepConfig {
            m_values: vec![20, 40],
            deltas: vec![0.1, 1.0, 1.9],
        });
        cfg.grid.axes.iter_mut().for_each(|a| a.count = 3);
        let out = execute(&cfg).unwrap();
        let rows = out.sweep.unwrap();
        assert_eq!(rows.len(), 6);
        for pair in rows.chunks(3) {
            assert!(pair[0].mean_b > pair[1].mean_b && pair[1].mean_b > pair[2].mean_b);
        }
    }
}
