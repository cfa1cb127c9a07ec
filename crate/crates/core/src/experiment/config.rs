//! TOML experiment configuration, presets and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::EllMethod;
use crate::error::{Error, Result};
use crate::reach::{AxisInterval, EvalGrid, GridAxis, SetSpec, Variant};
use crate::systems::{CartpoleForm, CartpoleParams, Direction, ScriptedController, SystemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Integrator,
    CartpoleLinear,
    CartpoleNonlinear,
    Pendulum,
    Sweep,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::Integrator,
        ExperimentId::CartpoleLinear,
        ExperimentId::CartpoleNonlinear,
        ExperimentId::Pendulum,
        ExperimentId::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Integrator => "integrator",
            ExperimentId::CartpoleLinear => "cartpole-linear",
            ExperimentId::CartpoleNonlinear => "cartpole-nonlinear",
            ExperimentId::Pendulum => "pendulum",
            ExperimentId::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    IntegratorChain {
        dim: usize,
        period: f64,
        noise_scale: f64,
    },
    CartpoleLinear {
        period: f64,
        noise_scale: f64,
    },
    CartpoleNonlinear {
        period: f64,
        noise_scale: f64,
        #[serde(default)]
        form: CartpoleForm,
    },
    Pendulum {
        period: f64,
        noise_scale: f64,
        #[serde(default)]
        direction: Direction,
    },
}

impl SystemConfig {
    pub fn kind(&self) -> SystemKind {
        match *self {
            SystemConfig::IntegratorChain { dim, period, .. } => SystemKind::IntegratorChain { dim, period },
            SystemConfig::CartpoleLinear { period, .. } => SystemKind::CartpoleLinear { period },
            SystemConfig::CartpoleNonlinear { period, form, .. } => SystemKind::CartpoleNonlinear {
                period,
                form,
                params: CartpoleParams::default(),
            },
            SystemConfig::Pendulum { period, direction, .. } => SystemKind::Pendulum { period, direction },
        }
    }

    pub fn noise_scale(&self) -> f64 {
        match *self {
            SystemConfig::IntegratorChain { noise_scale, .. }
            | SystemConfig::CartpoleLinear { noise_scale, .. }
            | SystemConfig::CartpoleNonlinear { noise_scale, .. }
            | SystemConfig::Pendulum { noise_scale, .. } => noise_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyConfig {
    Zero,
    Constant { value: Vec<f64> },
    /// `u = gain · x + offset`, `gain` row-major `m × n`.
    Affine { gain: Vec<f64>, offset: Vec<f64> },
    /// Network weights file, resolved against the config file's directory.
    Mlp { weights: PathBuf },
    Scripted { controller: ScriptedController },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SampleConfig {
    /// `m` i.i.d. transitions from a uniform box.
    Iid { m: usize, init_lo: Vec<f64>, init_hi: Vec<f64> },
    /// `trajectories` closed-loop rollouts of `steps` transitions each.
    Trajectories {
        trajectories: usize,
        steps: usize,
        init_lo: Vec<f64>,
        init_hi: Vec<f64>,
    },
    /// Reversed forward rollouts plus uniform reverse-time transitions.
    ReverseTime {
        target_lo: Vec<f64>,
        target_hi: Vec<f64>,
        domain_lo: Vec<f64>,
        domain_hi: Vec<f64>,
        inside: usize,
        outside: usize,
        steps: usize,
        uniform: usize,
    },
    /// A sample CSV recorded elsewhere.
    File { path: PathBuf },
}

impl SampleConfig {
    /// Number of rows the sample will have, when known without reading files.
    pub fn size(&self) -> Option<usize> {
        match *self {
            SampleConfig::Iid { m, .. } => Some(m),
            SampleConfig::Trajectories { trajectories, steps, .. } => Some(trajectories * steps),
            SampleConfig::ReverseTime {
                inside,
                outside,
                steps,
                uniform,
                ..
            } => Some((inside + outside) * steps + uniform),
            SampleConfig::File { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Gaussian bandwidth of the state kernel.
    pub sigma: f64,
    /// Bandwidth of the joint state-input kernel; defaults to `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_sigma: Option<f64>,
    /// Explicit λ; overrides `lambda_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `λ = lambda_scale / M`; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_scale: Option<f64>,
}

impl KernelConfig {
    pub fn joint_sigma(&self) -> f64 {
        self.joint_sigma.unwrap_or(self.sigma)
    }

    pub fn lambda_for(&self, m: usize) -> f64 {
        self.lambda
            .unwrap_or_else(|| self.lambda_scale.unwrap_or(1.0) / m.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SetConfig {
    Everything,
    Nothing,
    /// Closed box; `dims` lists the constrained coordinates (all when omitted).
    Box {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dims: Option<Vec<usize>>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl SetConfig {
    pub fn to_spec(&self) -> Result<SetSpec> {
        match self {
            SetConfig::Everything => Ok(SetSpec::Everything),
            SetConfig::Nothing => Ok(SetSpec::Nothing),
            SetConfig::Box { dims, lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(Error::Dimension {
                        expected: lo.len(),
                        found: hi.len(),
                    });
                }
                let dims: Vec<usize> = dims.clone().unwrap_or_else(|| (0..lo.len()).collect());
                if dims.len() != lo.len() {
                    return Err(Error::Dimension {
                        expected: dims.len(),
                        found: lo.len(),
                    });
                }
                SetSpec::slab(
                    dims.iter()
                        .zip(lo.iter().zip(hi))
                        .map(|(&dim, (&lo, &hi))| AxisInterval { dim, lo, hi })
                        .collect(),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantConfig {
    Terminal,
    FirstHitting,
}

impl From<VariantConfig> for Variant {
    fn from(v: VariantConfig) -> Self {
        match v {
            VariantConfig::Terminal => Variant::TerminalHitting,
            VariantConfig::FirstHitting => Variant::FirstHitting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    pub variant: VariantConfig,
    pub horizon: usize,
    pub safe: SetConfig,
    pub target: SetConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Evaluation grid over one or two coordinates; the rest sit at `slice`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axes: Vec<AxisConfig>,
    pub slice: Vec<f64>,
}

impl GridConfig {
    pub fn to_grid(&self) -> EvalGrid {
        EvalGrid {
            axes: self
                .axes
                .iter()
                .map(|a| GridAxis {
                    dim: a.dim,
                    lo: a.lo,
                    hi: a.hi,
                    count: a.count,
                })
                .collect(),
            slice: self.slice.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub delta: f64,
    #[serde(default)]
    pub ell_method: EllMethod,
}

/// Ground-truth grid for linear systems: `count` nodes per axis over `[lo, hi]ⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub m_values: Vec<usize>,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub policy: PolicyConfig,
    pub sample: SampleConfig,
    pub kernel: KernelConfig,
    pub safety: SafetyConfig,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// Run manifests embed the resolved config under `[config]`.
#[derive(Deserialize)]
struct ManifestShape {
    config: ExperimentConfig,
}

impl ExperimentConfig {
    /// Parses a config, or the `[config]` table of a run manifest.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let parse_err = |e: toml::de::Error| Error::Parse {
            what: "experiment config".into(),
            message: e.to_string(),
        };
        let value: toml::Table = text.parse().map_err(parse_err)?;
        if value.contains_key("config") {
            let m: ManifestShape = toml::from_str(text).map_err(parse_err)?;
            return Ok(m.config);
        }
        toml::from_str(text).map_err(parse_err)
    }

    /// Loads `path`; relative file references are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let PolicyConfig::Mlp { weights } = &mut self.policy {
            fix(weights);
        }
        if let SampleConfig::File { path } = &mut self.sample {
            fix(path);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn state_dim(&self) -> usize {
        self.system.kind().state_dim()
    }

    pub fn preset(id: ExperimentId) -> Self {
        match id {
            ExperimentId::Integrator => integrator_preset(),
            ExperimentId::CartpoleLinear => cartpole_linear_preset(),
            ExperimentId::CartpoleNonlinear => cartpole_nonlinear_preset(),
            ExperimentId::Pendulum => pendulum_preset(),
            ExperimentId::Sweep => sweep_preset(),
        }
    }
}

fn square_grid(dims: [usize; 2], lo: [f64; 2], hi: [f64; 2], count: usize, slice: Vec<f64>) -> GridConfig {
    GridConfig {
        axes: (0..2)
            .map(|i| AxisConfig {
                dim: dims[i],
                lo: lo[i],
                hi: hi[i],
                count,
            })
            .collect(),
        slice,
    }
}

fn unit_box() -> SetConfig {
    SetConfig::Box {
        dims: None,
        lo: vec![-1.0, -1.0],
        hi: vec![1.0, 1.0],
    }
}

fn integrator_preset() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentId::Integrator,
        seed: 2020,
        output_dir: None,
        system: SystemConfig::IntegratorChain {
            dim: 2,
            period: 0.25,
            noise_scale: 0.01,
        },
        policy: PolicyConfig::Zero,
        sample: SampleConfig::Iid {
            m: 2500,
            init_lo: vec![-1.1, -1.1],
            init_hi: vec![1.1, 1.1],
        },
        kernel: KernelConfig {
            sigma: 0.1,
            joint_sigma: None,
            lambda: None,
            lambda_scale: Some(0.25),
        },
        safety: SafetyConfig {
            variant: VariantConfig::Terminal,
            horizon: 5,
            safe: unit_box(),
            target: unit_box(),
        },
        grid: square_grid([0, 1], [-1.0, -1.0], [1.0, 1.0], 41, vec![0.0, 0.0]),
        bounds: Some(BoundsConfig {
            delta: 0.1,
            ell_method: EllMethod::Gershgorin,
        }),
        dp: Some(DpConfig {
            lo: -1.1,
            hi: 1.1,
            count: 41,
        }),
        sweep: None,
    }
}

fn sweep_preset() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentId::Sweep,
        bounds: Some(BoundsConfig {
            delta: 0.1,
            ell_method: EllMethod::Gershgorin,
        }),
        dp: None,
        sweep: Some(SweepConfig {
            m_values: vec![100, 400, 900, 1600, 2500, 3600],
            deltas: (0..10).map(|i| (1 + 2 * i) as f64 / 10.0).collect(),
        }),
        ..integrator_preset()
    }
}

fn cartpole_safe_set() -> SetConfig {
    SetConfig::Box {
        dims: Some(vec![0, 1, 2]),
        lo: vec![-0.7, -1.0, -std::f64::consts::FRAC_PI_6],
        hi: vec![0.7, 1.0, std::f64::consts::FRAC_PI_6],
    }
}

fn pole_upright() -> SetConfig {
    SetConfig::Box {
        dims: Some(vec![2]),
        lo: vec![-0.05],
        hi: vec![0.05],
    }
}

fn cartpole_linear_preset() -> ExperimentConfig {
    let pi6 = std::f64::consts::FRAC_PI_6;
    ExperimentConfig {
        experiment: ExperimentId::CartpoleLinear,
        seed: 2020,
        output_dir: None,
        system: SystemConfig::CartpoleLinear {
            period: 0.1,
            noise_scale: 0.01,
        },
        policy: PolicyConfig::Scripted {
            controller: ScriptedController::CartpoleLqr,
        },
        sample: SampleConfig::Trajectories {
            trajectories: 10,
            steps: 300,
            init_lo: vec![-0.7, -1.0, -pi6, -1.0],
            init_hi: vec![0.7, 1.0, pi6, 1.0],
        },
        kernel: KernelConfig {
            sigma: 0.1,
            joint_sigma: None,
            lambda: None,
            lambda_scale: Some(0.25),
        },
        safety: SafetyConfig {
            variant: VariantConfig::Terminal,
            horizon: 3,
            safe: cartpole_safe_set(),
            target: pole_upright(),
        },
        grid: square_grid([2, 3], [-0.6, -1.5], [0.6, 1.5], 41, vec![0.0; 4]),
        bounds: Some(BoundsConfig {
            delta: 0.1,
            ell_method: EllMethod::Gershgorin,
        }),
        dp: None,
        sweep: None,
    }
}

fn cartpole_nonlinear_preset() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentId::CartpoleNonlinear,
        system: SystemConfig::CartpoleNonlinear {
            period: 0.1,
            noise_scale: 0.01,
            form: CartpoleForm::Printed,
        },
        policy: PolicyConfig::Scripted {
            controller: ScriptedController::cartpole_bang_bang(),
        },
        safety: SafetyConfig {
            variant: VariantConfig::Terminal,
            horizon: 3,
            safe: SetConfig::Everything,
            target: pole_upright(),
        },
        ..cartpole_linear_preset()
    }
}

fn pendulum_target() -> (Vec<f64>, Vec<f64>) {
    (vec![0.6, -0.7, -0.4, 0.5], vec![0.7, -0.6, -0.3, 0.6])
}

fn pendulum_preset() -> ExperimentConfig {
    let (lo, hi) = pendulum_target();
    ExperimentConfig {
        experiment: ExperimentId::Pendulum,
        seed: 2020,
        output_dir: None,
        system: SystemConfig::Pendulum {
            period: 0.1,
            noise_scale: 1e-4,
            direction: Direction::Forward,
        },
        policy: PolicyConfig::Scripted {
            controller: ScriptedController::pendulum_damping(),
        },
        sample: SampleConfig::ReverseTime {
            target_lo: lo.clone(),
            target_hi: hi.clone(),
            domain_lo: vec![-2.1; 4],
            domain_hi: vec![2.1; 4],
            inside: 20,
            outside: 20,
            steps: 200,
            uniform: 2000,
        },
        kernel: KernelConfig {
            sigma: 0.1,
            joint_sigma: None,
            lambda: None,
            lambda_scale: Some(0.25),
        },
        safety: SafetyConfig {
            variant: VariantConfig::FirstHitting,
            horizon: 200,
            safe: SetConfig::Everything,
            target: SetConfig::Box { dims: None, lo, hi },
        },
        grid: square_grid([0, 1], [-2.0, -2.0], [2.0, 2.0], 21, vec![0.0, 0.0, -0.35, 0.55]),
        bounds: Some(BoundsConfig {
            delta: 1.0,
            ell_method: EllMethod::Gershgorin,
        }),
        dp: None,
        sweep: None,
    }
}

/// One failed precondition, addressed by its config path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, path: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(path, format!("must be positive and finite, got {v}"));
        }
    }

    fn nonneg(&mut self, path: &str, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.fail(path, format!("must be non-negative and finite, got {v}"));
        }
    }

    fn at_least_one(&mut self, path: &str, v: usize) {
        if v == 0 {
            self.fail(path, "must be at least 1");
        }
    }

    fn bounds_pair(&mut self, path: &str, lo: &[f64], hi: &[f64], n: usize) {
        if lo.len() != n || hi.len() != n {
            self.fail(
                path,
                format!("needs {n} lower and upper bounds, got {} and {}", lo.len(), hi.len()),
            );
            return;
        }
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            if !(l <= h) || !l.is_finite() || !h.is_finite() {
                self.fail(path, format!("dim {i}: need finite lo <= hi, got [{l}, {h}]"));
            }
        }
    }

    fn set(&mut self, path: &str, set: &SetConfig, n: usize) {
        if let SetConfig::Box { dims, lo, hi } = set {
            let k = dims.as_ref().map_or(lo.len(), Vec::len);
            if dims.is_none() && lo.len() != n {
                self.fail(path, format!("box without dims must constrain all {n} coordinates"));
            }
            if let Some(d) = dims.as_ref().and_then(|d| d.iter().find(|d| **d >= n)) {
                self.fail(path, format!("dim {d} out of range for a {n}-dimensional state"));
            }
            self.bounds_pair(path, lo, hi, k);
        }
    }
}

/// Dry-run check of every precondition reachable from `cfg`.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut c = Checker(Vec::new());
    let n = cfg.state_dim();

    match &cfg.system {
        SystemConfig::IntegratorChain { dim, .. } => c.at_least_one("system.dim", *dim),
        SystemConfig::Pendulum { .. } | SystemConfig::CartpoleLinear { .. } | SystemConfig::CartpoleNonlinear { .. } => {}
    }
    c.positive("system.period", cfg.system.kind().period());
    c.nonneg("system.noise_scale", cfg.system.noise_scale());

    match &cfg.policy {
        PolicyConfig::Zero => {}
        PolicyConfig::Constant { value } => {
            if value.len() != 1 {
                c.fail("policy.value", format!("input dimension is 1, got {}", value.len()));
            }
        }
        PolicyConfig::Affine { gain, offset } => {
            if offset.len() != 1 || gain.len() != n {
                c.fail("policy.gain", format!("needs a 1x{n} gain and one offset"));
            }
        }
        PolicyConfig::Mlp { weights } => {
            if !weights.is_file() {
                c.fail("policy.weights", format!("controller file {} does not exist", weights.display()));
            }
        }
        PolicyConfig::Scripted { .. } => {
            if n != 4 {
                c.fail("policy.controller", "scripted controllers act on four-state systems");
            }
        }
    }

    match &cfg.sample {
        SampleConfig::Iid { m, init_lo, init_hi } => {
            c.at_least_one("sample.m", *m);
            c.bounds_pair("sample.init", init_lo, init_hi, n);
        }
        SampleConfig::Trajectories {
            trajectories,
            steps,
            init_lo,
            init_hi,
        } => {
            c.at_least_one("sample.trajectories", *trajectories);
            c.at_least_one("sample.steps", *steps);
            c.bounds_pair("sample.init", init_lo, init_hi, n);
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
            if !matches!(cfg.system, SystemConfig::Pendulum { .. }) {
                c.fail("sample.mode", "reverse-time sampling needs the pendulum system");
            }
            c.bounds_pair("sample.target", target_lo, target_hi, n);
            c.bounds_pair("sample.domain", domain_lo, domain_hi, n);
            if (inside + outside) * steps + uniform == 0 {
                c.fail("sample", "composition yields no transitions");
            }
            if (inside + outside) > 0 {
                c.at_least_one("sample.steps", *steps);
            }
        }
        SampleConfig::File { path } => {
            if !path.is_file() {
                c.fail("sample.path", format!("sample file {} does not exist", path.display()));
            }
        }
    }

    c.positive("kernel.sigma", cfg.kernel.sigma);
    if let Some(s) = cfg.kernel.joint_sigma {
        c.positive("kernel.joint_sigma", s);
    }
    if let Some(l) = cfg.kernel.lambda {
        c.positive("kernel.lambda", l);
    }
    if let Some(l) = cfg.kernel.lambda_scale {
        c.positive("kernel.lambda_scale", l);
    }

    c.at_least_one("safety.horizon", cfg.safety.horizon);
    c.set("safety.safe", &cfg.safety.safe, n);
    c.set("safety.target", &cfg.safety.target, n);

    if cfg.grid.slice.len() != n {
        c.fail("grid.slice", format!("needs {n} coordinates, got {}", cfg.grid.slice.len()));
    }
    if cfg.grid.axes.is_empty() || cfg.grid.axes.len() > 2 {
        c.fail("grid.axes", "needs one or two axes");
    }
    for (i, a) in cfg.grid.axes.iter().enumerate() {
        let p = format!("grid.axes[{i}]");
        if a.dim >= n {
            c.fail(&p, format!("dim {} out of range", a.dim));
        }
        if a.count == 0 || !(a.lo <= a.hi) {
            c.fail(&p, "needs count >= 1 and lo <= hi");
        }
    }

    if let Some(b) = &cfg.bounds {
        if !(b.delta > 0.0 && b.delta < 2.0) {
            c.fail("bounds.delta", format!("δ outside (0,2): {}", b.delta));
        }
    }

    if let Some(dp) = &cfg.dp {
        if !cfg.system.kind().is_linear() {
            c.fail("dp", "grid dynamic programming needs a linear system");
        }
        if dp.count < 2 || !(dp.lo < dp.hi) {
            c.fail("dp", "needs count >= 2 and lo < hi");
        }
        if matches!(cfg.policy, PolicyConfig::Mlp { .. } | PolicyConfig::Scripted { .. }) {
            c.fail("dp", "ground truth needs an affine or constant policy");
        }
    }

    match (&cfg.experiment, &cfg.sweep) {
        (ExperimentId::Sweep, None) => c.fail("sweep", "sweep experiment needs a [sweep] section"),
        (_, Some(s)) => {
            if s.m_values.is_empty() || s.m_values.contains(&0) {
                c.fail("sweep.m_values", "needs positive sample sizes");
            }
            if s.deltas.is_empty() {
                c.fail("sweep.deltas", "needs at least one δ");
            }
            for d in &s.deltas {
                if !(*d > 0.0 && *d < 2.0) {
                    c.fail("sweep.deltas", format!("δ outside (0,2): {d}"));
                }
            }
            if !matches!(cfg.sample, SampleConfig::Iid { .. }) {
                c.fail("sample.mode", "sweeps redraw i.i.d. samples of each size");
            }
        }
        _ => {}
    }
    c.0
}
