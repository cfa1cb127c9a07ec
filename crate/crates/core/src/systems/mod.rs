//! Benchmark dynamics, disturbance sampling and sample generation.
//!
//! Continuous-time systems are discretized with one fixed-step RK4 step of
//! length `T` under zero-order hold; additive Gaussian noise is applied once
//! per discrete step, after integration.

pub mod mlp;
pub mod scripted;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::SampleSet;
use crate::error::{check_dim, Error, Result};
use crate::points::PointSet;
use crate::reach::Policy;

pub use scripted::ScriptedController;

/// Seeded generator family used everywhere.
pub type SimRng = ChaCha8Rng;

/// A 64-bit seed for [`SimRng`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn rng(&self) -> SimRng {
        SimRng::seed_from_u64(self.seed)
    }

    /// Independent substream `stream` of the same seed.
    pub fn substream(&self, stream: u64) -> SimRng {
        let mut rng = self.rng();
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Forward,
    /// Integrates the negated vector field.
    Reverse,
}

/// Which nonlinear cart-pole right-hand side to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CartpoleForm {
    /// The benchmark equations exactly as published, including the trailing
    /// `cos θ / m_t` factors.
    #[default]
    Printed,
    /// The textbook pole-on-cart equations.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleParams {
    pub gravity: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub total_mass: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            pole_mass: 0.1,
            half_length: 0.5,
            total_mass: 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SystemKind {
    /// `n`-fold discrete integrator chain with sampling time `period`.
    IntegratorChain { dim: usize, period: f64 },
    /// Linearized cart-pole, state `(x, ẋ, θ, θ̇)`.
    CartpoleLinear { period: f64 },
    /// Nonlinear cart-pole, state `(x, ẋ, θ, ω)`.
    CartpoleNonlinear {
        period: f64,
        form: CartpoleForm,
        params: CartpoleParams,
    },
    /// Four-state pendulum driven through an actuated second oscillator.
    Pendulum { period: f64, direction: Direction },
}

impl SystemKind {
    pub fn state_dim(&self) -> usize {
        match self {
            SystemKind::IntegratorChain { dim, .. } => *dim,
            _ => 4,
        }
    }

    pub fn input_dim(&self) -> usize {
        1
    }

    pub fn period(&self) -> f64 {
        match *self {
            SystemKind::IntegratorChain { period, .. }
            | SystemKind::CartpoleLinear { period }
            | SystemKind::CartpoleNonlinear { period, .. }
            | SystemKind::Pendulum { period, .. } => period,
        }
    }

    /// Whether the deterministic step is affine in `(x, u)`.
    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            SystemKind::IntegratorChain { .. } | SystemKind::CartpoleLinear { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let t = self.period();
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Parameter(format!("sampling time must be positive, got {t}")));
        }
        if let SystemKind::IntegratorChain { dim, .. } = self {
            if *dim == 0 {
                return Err(Error::Parameter("integrator chain needs dim >= 1".into()));
            }
        }
        Ok(())
    }

    /// Continuous-time vector field `ẋ = f(x, u)`.
    fn field(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        match *self {
            SystemKind::IntegratorChain { .. } => unreachable!("integrator chain is discrete"),
            SystemKind::CartpoleLinear { .. } => {
                let (v, th, om) = (x[1], x[2], x[3]);
                dx[0] = v;
                dx[1] = 0.0043 * om - 2.75 * th + 1.94 * u - 10.95 * v;
                dx[2] = om;
                dx[3] = 28.58 * th - 0.044 * om - 4.44 * u + 24.92 * v;
            }
            SystemKind::CartpoleNonlinear { form, params, .. } => {
                let CartpoleParams {
                    gravity: g,
                    pole_mass: m,
                    half_length: l,
                    total_mass: mt,
                } = params;
                let (v, th, om) = (x[1], x[2], x[3]);
                let (s, c) = th.sin_cos();
                let f = (u + m * l * om * om * s) / mt;
                let den = l * (4.0 / 3.0 - m * c * c / mt);
                let (acc, alpha) = match form {
                    CartpoleForm::Printed => (
                        f - m * l * (g * s - c) * f / den * c / mt,
                        (g * s - c * f) / den * c / mt,
                    ),
                    CartpoleForm::Standard => {
                        let alpha = (g * s - c * f) / den;
                        (f - m * l * alpha * c / mt, alpha)
                    }
                };
                dx[0] = v;
                dx[1] = acc;
                dx[2] = om;
                dx[3] = alpha;
            }
            SystemKind::Pendulum { direction, .. } => {
                let sign = match direction {
                    Direction::Forward => 1.0,
                    Direction::Reverse => -1.0,
                };
                dx[0] = sign * x[1];
                dx[1] = sign * (-x[0] + 0.1 * x[2].sin());
                dx[2] = sign * x[3];
                dx[3] = sign * u;
            }
        }
    }

    /// Deterministic one-step map.
    pub fn step_deterministic(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.state_dim(), x.len())?;
        check_dim(self.input_dim(), u.len())?;
        Ok(match *self {
            SystemKind::IntegratorChain { dim, period } => integrator_step(dim, period, x, u[0]),
            _ => rk4(self, x, u[0], self.period()),
        })
    }
}

fn integrator_step(n: usize, t: f64, x: &[f64], u: f64) -> Vec<f64> {
    // A_ij = T^{j-i}/(j-i)!, B_i = T^{n-i}/(n-i)! (1-based)
    let mut powers = vec![1.0; n + 1];
    for k in 1..=n {
        powers[k] = powers[k - 1] * t / k as f64;
    }
    (0..n)
        .map(|i| {
            let drift: f64 = (i..n).map(|j| powers[j - i] * x[j]).sum();
            drift + powers[n - i] * u
        })
        .collect()
}

fn rk4(kind: &SystemKind, x: &[f64], u: f64, h: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    kind.field(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    kind.field(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    kind.field(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    kind.field(&tmp, u, &mut k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Lower factor `L` with `L Lᵀ = Σ` for a symmetric positive semidefinite `Σ`.
fn psd_factor(sigma: &[f64], n: usize) -> Result<Vec<f64>> {
    check_dim(n * n, sigma.len())?;
    let scale = (0..n).map(|i| sigma[i * n + i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (sigma[i * n + j], sigma[j * n + i]);
            if !a.is_finite() || !b.is_finite() || (a - b).abs() > tol.max(1e-15) {
                return Err(Error::Parameter(format!("covariance is not symmetric at ({i}, {j})")));
            }
        }
    }
    let not_psd = || Error::Parameter("covariance is not positive semidefinite".into());
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        let d = sigma[j * n + j] - (0..j).map(|k| l[j * n + k].powi(2)).sum::<f64>();
        if !d.is_finite() || d < -tol {
            return Err(not_psd());
        }
        if d <= tol {
            // degenerate direction: the rest of the column must vanish too
            for i in (j + 1)..n {
                let r = sigma[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
                if r.abs() > tol.sqrt() * scale.sqrt().max(1.0) {
                    return Err(not_psd());
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let r = sigma[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            l[i * n + j] = r / djj;
        }
    }
    Ok(l)
}

/// `w = L z` with `L Lᵀ = Σ` (row-major `n × n`) and `z` standard normal.
pub fn draw_disturbance<R: Rng + ?Sized>(rng: &mut R, sigma: &[f64], n: usize) -> Result<Vec<f64>> {
    let l = psd_factor(sigma, n)?;
    Ok(draw_with_factor(rng, &l, n))
}

fn draw_with_factor<R: Rng + ?Sized>(rng: &mut R, l: &[f64], n: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..n)
        .map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum())
        .collect()
}

/// Dynamics plus additive Gaussian disturbance `w ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    kind: SystemKind,
    sigma: Vec<f64>,
    noise_factor: Vec<f64>,
}

impl SystemModel {
    /// `sigma` is the row-major `n × n` covariance.
    pub fn new(kind: SystemKind, sigma: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        let n = kind.state_dim();
        let noise_factor = psd_factor(&sigma, n)?;
        Ok(Self {
            kind,
            sigma,
            noise_factor,
        })
    }

    /// `Σ = scale · I`.
    pub fn isotropic(kind: SystemKind, scale: f64) -> Result<Self> {
        let n = kind.state_dim();
        let mut sigma = vec![0.0; n * n];
        for i in 0..n {
            sigma[i * n + i] = scale;
        }
        Self::new(kind, sigma)
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.kind.input_dim()
    }

    /// Diagonal of `Σ` when it is diagonal.
    pub fn diagonal_sigma(&self) -> Option<Vec<f64>> {
        let n = self.state_dim();
        let off_zero = (0..n).all(|i| (0..n).all(|j| i == j || self.sigma[i * n + j] == 0.0));
        off_zero.then(|| (0..n).map(|i| self.sigma[i * n + i]).collect())
    }

    /// The same system integrated in the opposite time direction.
    pub fn reversed(&self) -> Result<Self> {
        let kind = match self.kind {
            SystemKind::Pendulum { period, direction } => SystemKind::Pendulum {
                period,
                direction: match direction {
                    Direction::Forward => Direction::Reverse,
                    Direction::Reverse => Direction::Forward,
                },
            },
            other => {
                return Err(Error::Unsupported(format!(
                    "time reversal is only implemented for the pendulum, not {other:?}"
                )))
            }
        };
        Ok(Self {
            kind,
            ..self.clone()
        })
    }

    /// `y = f(x, u) + w` with `w` supplied by the caller.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.state_dim(), w.len())?;
        let mut y = self.kind.step_deterministic(x, u)?;
        for (yi, wi) in y.iter_mut().zip(w) {
            *yi += wi;
        }
        Ok(y)
    }

    pub fn draw_disturbance<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        draw_with_factor(rng, &self.noise_factor, self.state_dim())
    }

    /// One noisy step with the disturbance drawn from `rng`.
    pub fn step_random<R: Rng + ?Sized>(&self, x: &[f64], u: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let w = self.draw_disturbance(rng);
        self.step(x, u, &w)
    }
}

/// Uniform distribution over an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InitBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.lo.len(), self.hi.len())?;
        for (i, (lo, hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Parameter(format!(
                    "init box dim {i} is degenerate: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
            .collect()
    }
}

fn check_policy(system: &SystemModel, policy: &Policy) -> Result<()> {
    check_dim(system.input_dim(), policy.input_dim())?;
    if let Some(n) = policy.state_dim() {
        check_dim(system.state_dim(), n)?;
    }
    Ok(())
}

/// `M` i.i.d. transitions with `xᵢ` uniform on `init` and `uᵢ = π(xᵢ)`.
pub fn sample_iid<R: Rng + ?Sized>(
    system: &SystemModel,
    policy: &Policy,
    init: &InitBox,
    m: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::Parameter("sample size M must be at least 1".into()));
    }
    init.validate()?;
    check_dim(system.state_dim(), init.dim())?;
    check_policy(system, policy)?;
    let mut s = SampleSet::empty(system.state_dim(), system.input_dim());
    for _ in 0..m {
        let x = init.draw(rng);
        let u = policy.eval(&x)?;
        let y = system.step_random(&x, &u, rng)?;
        s.push(&x, &u, &y)?;
    }
    Ok(s)
}

/// A closed-loop rollout of `steps` transitions from `x0`.
pub fn rollout<R: Rng + ?Sized>(
    system: &SystemModel,
    policy: &Policy,
    x0: &[f64],
    steps: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    check_dim(system.state_dim(), x0.len())?;
    let mut s = SampleSet::empty(system.state_dim(), system.input_dim());
    let mut x = x0.to_vec();
    for _ in 0..steps {
        let u = policy.eval(&x)?;
        let y = system.step_random(&x, &u, rng)?;
        s.push(&x, &u, &y)?;
        x = y;
    }
    Ok(s)
}

/// Transitions `(x_k, u_k, x_{k+1})` along one rollout per initial state.
///
/// Each trajectory runs on its own substream of a seed drawn from `rng`, so
/// the result does not depend on thread scheduling.
pub fn sample_trajectories<R: Rng + ?Sized>(
    system: &SystemModel,
    policy: &Policy,
    inits: &PointSet,
    steps: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if inits.is_empty() {
        return Err(Error::Parameter("trajectory sampling needs at least one initial state".into()));
    }
    if steps == 0 {
        return Err(Error::Parameter("trajectory length must be at least 1".into()));
    }
    check_dim(system.state_dim(), inits.dim())?;
    check_policy(system, policy)?;
    let base = RngSpec::new(rng.next_u64());
    let parts = (0..inits.len())
        .into_par_iter()
        .map(|t| {
            let mut sub = base.substream(t as u64);
            rollout(system, policy, inits.row(t), steps, &mut sub)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = SampleSet::empty(system.state_dim(), system.input_dim());
    for p in &parts {
        s.append(p)?;
    }
    Ok(s)
}

/// Each row `(x, u, y)` becomes `(y, u, x)`.
pub fn reverse_transitions(s: &SampleSet) -> SampleSet {
    s.reversed()
}

/// Composition of a reverse-time sample from forward rollouts plus uniform draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseSampleSpec {
    /// Box the first group of forward rollouts starts in.
    pub target: InitBox,
    /// Box containing every draw; the second rollout group starts in `domain ∖ target`.
    pub domain: InitBox,
    pub trajectories_inside: usize,
    pub trajectories_outside: usize,
    pub steps: usize,
    /// Number of i.i.d. reverse-time transitions uniform on `domain`.
    pub uniform: usize,
}

/// Forward rollouts from inside and outside `target`, reversed, followed by
/// uniform i.i.d. transitions of the reverse-time system.
pub fn reverse_time_sample<R: Rng + ?Sized>(
    forward: &SystemModel,
    policy: &Policy,
    spec: &ReverseSampleSpec,
    rng: &mut R,
) -> Result<SampleSet> {
    spec.target.validate()?;
    spec.domain.validate()?;
    let n = forward.state_dim();
    check_dim(n, spec.target.dim())?;
    check_dim(n, spec.domain.dim())?;
    let reverse = forward.reversed()?;

    let mut inits = PointSet::empty(n);
    for _ in 0..spec.trajectories_inside {
        inits.push(&spec.target.draw(rng))?;
    }
    let mut outside = 0;
    let mut attempts = 0usize;
    while outside < spec.trajectories_outside {
        attempts += 1;
        if attempts > 1000 * (spec.trajectories_outside + 1) {
            return Err(Error::Parameter("domain has no room outside the target box".into()));
        }
        let x = spec.domain.draw(rng);
        if !spec.target.contains(&x) {
            inits.push(&x)?;
            outside += 1;
        }
    }

    let mut sample = SampleSet::empty(n, forward.input_dim());
    if !inits.is_empty() {
        let fwd = sample_trajectories(forward, policy, &inits, spec.steps, rng)?;
        sample.append(&fwd.reversed())?;
    }
    if spec.uniform > 0 {
        sample.append(&sample_iid(&reverse, policy, &spec.domain, spec.uniform, rng)?)?;
    }
    if sample.is_empty() {
        return Err(Error::Parameter("reverse-time sample spec produces no rows".into()));
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrator(n: usize) -> SystemKind {
        SystemKind::IntegratorChain { dim: n, period: 0.25 }
    }

    #[test]
    fn integrator_step_example() {
        let y = integrator(2).step_deterministic(&[0.0, 1.0], &[0.0]).unwrap();
        assert_eq!(y, vec![0.25, 1.0]);
        let y = integrator(2).step_deterministic(&[0.0, 0.0], &[1.0]).unwrap();
        assert_eq!(y, vec![0.25 * 0.25 / 2.0, 0.25]);
    }

    #[test]
    fn integrator_chain_three() {
        let t: f64 = 0.5;
        let y = SystemKind::IntegratorChain { dim: 3, period: t }
            .step_deterministic(&[1.0, 2.0, 3.0], &[4.0])
            .unwrap();
        let expect = [
            1.0 + t * 2.0 + t * t / 2.0 * 3.0 + t.powi(3) / 6.0 * 4.0,
            2.0 + t * 3.0 + t * t / 2.0 * 4.0,
            3.0 + t * 4.0,
        ];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn equilibria() {
        let p = SystemKind::Pendulum {
            period: 0.1,
            direction: Direction::Forward,
        };
        assert_eq!(p.step_deterministic(&[0.0; 4], &[0.0]).unwrap(), vec![0.0; 4]);
        for form in [CartpoleForm::Printed, CartpoleForm::Standard] {
            let c = SystemKind::CartpoleNonlinear {
                period: 0.1,
                form,
                params: CartpoleParams::default(),
            };
            assert_eq!(c.step_deterministic(&[0.0; 4], &[0.0]).unwrap(), vec![0.0; 4]);
        }
    }

    #[test]
    fn pendulum_reverse_undoes_forward_approximately() {
        let fwd = SystemModel::isotropic(
            SystemKind::Pendulum {
                period: 0.1,
                direction: Direction::Forward,
            },
            0.0,
        )
        .unwrap();
        let rev = fwd.reversed().unwrap();
        let x = [0.3, -0.2, 0.5, 0.1];
        let y = fwd.step(&x, &[0.4], &[0.0; 4]).unwrap();
        let back = rev.step(&y, &[0.4], &[0.0; 4]).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_errors() {
        assert!(integrator(2).step_deterministic(&[0.0], &[0.0]).is_err());
        assert!(integrator(2).step_deterministic(&[0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn psd_factor_accepts_semidefinite_and_rejects_indefinite() {
        let l = psd_factor(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(l, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(psd_factor(&[0.0; 4], 2).unwrap(), vec![0.0; 4]);
        assert!(psd_factor(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        assert!(psd_factor(&[-1.0, 0.0, 0.0, 1.0], 2).is_err());
        assert!(psd_factor(&[1.0, 0.5, 0.0, 1.0], 2).is_err());
    }

    #[test]
    fn zero_covariance_draws_zero() {
        let mut rng = RngSpec::new(3).rng();
        assert_eq!(draw_disturbance(&mut rng, &[0.0; 9], 3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn degenerate_init_box_rejected() {
        assert!(InitBox::new(vec![1.0], vec![0.0]).is_err());
        let b = InitBox::new(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let mut rng = RngSpec::new(0).rng();
        assert_eq!(b.draw(&mut rng), vec![0.5, 0.5]);
    }

    #[test]
    fn reversal_only_for_pendulum() {
        let s = SystemModel::isotropic(integrator(2), 0.01).unwrap();
        assert!(s.reversed().is_err());
    }
}
