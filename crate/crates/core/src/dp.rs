//! Ground truth for systems with affine dynamics and diagonal Gaussian noise.
//!
//! The grid recursion stores the continuation `Gₖ(x) = E[V_{k+1}(y) | x]` at
//! the nodes and represents it between nodes by multilinear interpolation.
//! Because the noise is a product of 1-D Gaussians and the interpolant is a
//! sum of products of 1-D hat functions, `E[1_A(y)·G(y)]` over a box `A`
//! factors into per-axis integrals of a Gaussian against piecewise-linear
//! hats, which are evaluated in closed form. The last stage is exact:
//! `G_{N−1}(x) = P(y ∈ 𝒯)`.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{check_dim, Error, Result};
use crate::points::PointSet;
use crate::reach::{Policy, SafetyField, SafetySpec, SetSpec, Variant};
use crate::systems::{RngSpec, SystemModel};

/// Gaussian tails beyond this many standard deviations are dropped.
const TAIL_SIGMAS: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl DpAxis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.step() * i as f64
    }
}

/// Regular grid of nodes, first axis varying fastest in flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<DpAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<DpAxis>) -> Result<Self> {
        let g = Self { axes };
        g.validate()?;
        Ok(g)
    }

    /// `count` nodes per axis over `[lo, hi]ⁿ`.
    pub fn cube(n: usize, lo: f64, hi: f64, count: usize) -> Result<Self> {
        Self::new(vec![DpAxis { lo, hi, count }; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::EmptyInput("grid axes"));
        }
        for (d, a) in self.axes.iter().enumerate() {
            if a.count < 2 || !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(Error::Parameter(format!(
                    "grid axis {d} needs count >= 2 and finite lo < hi"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.dim());
        let mut acc = 1;
        for a in &self.axes {
            s.push(acc);
            acc *= a.count;
        }
        s
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        self.axes
            .iter()
            .map(|a| {
                let i = rest % a.count;
                rest /= a.count;
                a.node(i)
            })
            .collect()
    }

    pub fn nodes(&self) -> PointSet {
        let mut p = PointSet::empty(self.dim());
        for k in 0..self.len() {
            p.push(&self.node(k)).expect("node dimension");
        }
        p
    }
}

/// Closed interval per axis, `±∞` where unconstrained.
type BoxBounds = Vec<(f64, f64)>;

/// `None` for the empty set.
fn set_bounds(set: &SetSpec, n: usize) -> Result<Option<BoxBounds>> {
    set.check_dim(n)?;
    match set {
        SetSpec::Everything => Ok(Some(vec![(f64::NEG_INFINITY, f64::INFINITY); n])),
        SetSpec::Nothing => Ok(None),
        SetSpec::Box(ivs) => {
            let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
            for iv in ivs {
                let (lo, hi) = b[iv.dim];
                b[iv.dim] = (lo.max(iv.lo), hi.min(iv.hi));
            }
            Ok(if b.iter().any(|(lo, hi)| lo > hi) { None } else { Some(b) })
        }
        SetSpec::Predicate(p) => Err(Error::Unsupported(format!(
            "grid dynamic programming needs box sets, got predicate '{}'",
            p.name
        ))),
    }
}

fn intersect(a: &Option<BoxBounds>, b: &Option<BoxBounds>) -> Option<BoxBounds> {
    let (a, b) = (a.as_ref()?, b.as_ref()?);
    let out: BoxBounds = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.0.max(y.0), x.1.min(y.1)))
        .collect();
    if out.iter().any(|(lo, hi)| lo > hi) {
        None
    } else {
        Some(out)
    }
}

#[inline]
fn std_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[inline]
fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(a ≤ Y ≤ b)` for `Y ~ N(μ, s²)`.
fn interval_mass(mu: f64, s: f64, a: f64, b: f64) -> f64 {
    if a > b {
        return 0.0;
    }
    if s == 0.0 {
        return if a <= mu && mu <= b { 1.0 } else { 0.0 };
    }
    let (za, zb) = ((a - mu) / s, (b - mu) / s);
    // difference of upper tails is more accurate on the right
    if za > 0.0 {
        (std_cdf(-za) - std_cdf(-zb)).max(0.0)
    } else {
        (std_cdf(zb) - std_cdf(za)).max(0.0)
    }
}

/// `∫_a^b (y − c) N(y; μ, s²) dy` for `s > 0`.
fn first_moment(mu: f64, s: f64, a: f64, b: f64, c: f64) -> f64 {
    let (za, zb) = ((a - mu) / s, (b - mu) / s);
    (mu - c) * interval_mass(mu, s, a, b) - s * (std_pdf(zb) - std_pdf(za))
}

/// `∫_{[a,b]} hat(y) N(y; μ, s²) dy` for the hat centred at `c` with
/// half-width `h`, truncated to `[lo, hi]`.
fn hat_mass(mu: f64, s: f64, c: f64, h: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    let left = ((c - h).max(lo).max(a), c.min(b));
    let right = (c.max(a), (c + h).min(hi).min(b));
    if s == 0.0 {
        let hat = 1.0 - (mu - c).abs() / h;
        let inside = |(l, r): (f64, f64)| l <= mu && mu <= r;
        return if hat > 0.0 && (inside(left) || inside(right)) { hat } else { 0.0 };
    }
    let mut total = 0.0;
    if left.0 < left.1 {
        total += interval_mass(mu, s, left.0, left.1) + first_moment(mu, s, left.0, left.1, c) / h;
    }
    if right.0 < right.1 {
        total += interval_mass(mu, s, right.0, right.1) - first_moment(mu, s, right.0, right.1, c) / h;
    }
    total.max(0.0)
}

/// Per-axis weights `w[i] = E[hat_i(Y_d)·1{Y_d ∈ [a,b]}]` over a node window.
fn axis_weights(axis: &DpAxis, mu: f64, s: f64, (a, b): (f64, f64)) -> (usize, Vec<f64>) {
    let h = axis.step();
    let reach = TAIL_SIGMAS * s + h;
    let lo = (mu - reach).max(a - h).max(axis.lo);
    let hi = (mu + reach).min(b + h).min(axis.hi);
    if lo > hi {
        return (0, Vec::new());
    }
    let first = (((lo - axis.lo) / h).floor().max(0.0)) as usize;
    let last = ((((hi - axis.lo) / h).ceil()) as usize).min(axis.count - 1);
    let w = (first..=last)
        .map(|i| hat_mass(mu, s, axis.node(i), h, axis.lo, axis.hi, a, b))
        .collect();
    (first, w)
}

/// `E[1_A(y)·Ĝ(y)]` for `y ~ N(μ, diag(var))`, `Ĝ` the multilinear interpolant of `values`.
fn expect_interpolant(grid: &GridSpec, strides: &[usize], values: &[f64], mu: &[f64], sd: &[f64], a: &BoxBounds) -> f64 {
    let weights: Vec<(usize, Vec<f64>)> = grid
        .axes
        .iter()
        .enumerate()
        .map(|(d, axis)| axis_weights(axis, mu[d], sd[d], a[d]))
        .collect();
    if weights.iter().any(|(_, w)| w.is_empty()) {
        return 0.0;
    }
    let n = grid.dim();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        let mut flat = 0;
        for d in 0..n {
            w *= weights[d].1[idx[d]];
            flat += (weights[d].0 + idx[d]) * strides[d];
        }
        total += w * values[flat];
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < weights[d].1.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n {
                return total;
            }
        }
    }
}

/// `P(y ∈ A)` for `y ~ N(μ, diag(var))`.
fn box_probability(mu: &[f64], sd: &[f64], a: &Option<BoxBounds>) -> f64 {
    match a {
        None => 0.0,
        Some(b) => mu
            .iter()
            .zip(sd)
            .zip(b)
            .map(|((&m, &s), &(lo, hi))| interval_mass(m, s, lo, hi))
            .product(),
    }
}

/// A solved grid recursion; [`value_at`](Self::value_at) applies the last
/// backup exactly at arbitrary states.
#[derive(Debug, Clone)]
pub struct DpSolution {
    grid: GridSpec,
    system: SystemModel,
    policy: Policy,
    safe: Option<BoxBounds>,
    target: Option<BoxBounds>,
    variant: Variant,
    /// `G₁` at the nodes when `N ≥ 2`.
    continuation: Option<Vec<f64>>,
    sd: Vec<f64>,
}

/// Backward recursion on `grid` for a linear system with diagonal noise.
pub fn dp_solve(grid: &GridSpec, system: &SystemModel, policy: &Policy, spec: &SafetySpec) -> Result<DpSolution> {
    grid.validate()?;
    let n = system.state_dim();
    check_dim(n, grid.dim())?;
    check_dim(system.input_dim(), policy.input_dim())?;
    spec.validate(n)?;
    if !system.kind().is_linear() {
        return Err(Error::Unsupported(format!(
            "grid dynamic programming needs affine dynamics, got {:?}",
            system.kind()
        )));
    }
    let var = system.diagonal_sigma().ok_or_else(|| {
        Error::Unsupported("grid dynamic programming needs a diagonal disturbance covariance".into())
    })?;
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let safe = set_bounds(&spec.safe, n)?;
    let target = set_bounds(&spec.target, n)?;
    if spec.horizon >= 2 {
        if let Some(k) = &safe {
            for (d, (&(lo, hi), axis)) in k.iter().zip(&grid.axes).enumerate() {
                if lo < axis.lo || hi > axis.hi {
                    return Err(Error::Config {
                        path: format!("grid.axis[{d}]"),
                        message: format!(
                            "safe set [{lo}, {hi}] exceeds the grid [{}, {}]",
                            axis.lo, axis.hi
                        ),
                    });
                }
            }
        }
    }

    let mut sol = DpSolution {
        grid: grid.clone(),
        system: system.clone(),
        policy: policy.clone(),
        safe,
        target,
        variant: spec.variant,
        continuation: None,
        sd,
    };
    if spec.horizon >= 2 {
        let nodes = grid.nodes();
        let means = nodes
            .rows()
            .map(|x| sol.mean(x))
            .collect::<Result<Vec<_>>>()?;
        // G_{N-1} = P(y ∈ 𝒯)
        let mut g: Vec<f64> = means
            .par_iter()
            .map(|mu| box_probability(mu, &sol.sd, &sol.target))
            .collect();
        for _ in 1..spec.horizon - 1 {
            g = means.par_iter().map(|mu| sol.backup(mu, &g)).collect();
        }
        sol.continuation = Some(g);
    }
    Ok(sol)
}

impl DpSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.policy.eval(x)?;
        self.system.kind().step_deterministic(x, &u)
    }

    /// `E[V(y)]` where `V = 1_𝒦·Ĝ` or `1_𝒯 + 1_{𝒦∖𝒯}·Ĝ`.
    fn backup(&self, mu: &[f64], g: &[f64]) -> f64 {
        let strides = self.grid.strides();
        let on = |a: &Option<BoxBounds>| {
            a.as_ref()
                .map_or(0.0, |b| expect_interpolant(&self.grid, &strides, g, mu, &self.sd, b))
        };
        let v = match self.variant {
            Variant::TerminalHitting => on(&self.safe),
            Variant::FirstHitting => {
                let both = intersect(&self.safe, &self.target);
                box_probability(mu, &self.sd, &self.target) + on(&self.safe) - on(&both)
            }
        };
        v.clamp(0.0, 1.0)
    }

    fn contains(set: &Option<BoxBounds>, x: &[f64]) -> bool {
        set.as_ref()
            .is_some_and(|b| b.iter().zip(x).all(|(&(lo, hi), v)| lo <= *v && *v <= hi))
    }

    /// `V₀(x)`.
    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.grid.dim(), x.len())?;
        if self.variant == Variant::FirstHitting && Self::contains(&self.target, x) {
            return Ok(1.0);
        }
        if !Self::contains(&self.safe, x) {
            return Ok(0.0);
        }
        let mu = self.mean(x)?;
        Ok(match &self.continuation {
            None => box_probability(&mu, &self.sd, &self.target),
            Some(g) => self.backup(&mu, g),
        })
    }

    /// `V₀` at every point, in the same CSV-compatible shape as an embedding field.
    pub fn field(&self, points: &PointSet) -> Result<SafetyField> {
        let values = (0..points.len())
            .into_par_iter()
            .map(|i| self.value_at(points.row(i)))
            .collect::<Result<Vec<_>>>()?;
        SafetyField::new(points.clone(), values)
    }

    /// `V₀` at the grid nodes.
    pub fn node_values(&self) -> Result<Vec<f64>> {
        Ok(self.field(&self.grid.nodes())?.values)
    }
}

/// Fraction of seeded closed-loop rollouts from `x0` that realize the spec's event.
///
/// Rollout `r` runs on substream `r` of a seed drawn from `rng`.
pub fn monte_carlo<R: Rng + ?Sized>(
    system: &SystemModel,
    policy: &Policy,
    spec: &SafetySpec,
    x0: &[f64],
    rollouts: usize,
    rng: &mut R,
) -> Result<f64> {
    check_dim(system.state_dim(), x0.len())?;
    check_dim(system.input_dim(), policy.input_dim())?;
    spec.validate(system.state_dim())?;
    if rollouts == 0 {
        return Err(Error::Parameter("monte carlo needs at least one rollout".into()));
    }
    let base = RngSpec::new(rng.next_u64());
    let hits = (0..rollouts)
        .into_par_iter()
        .map(|r| {
            let mut sub = base.substream(r as u64);
            rollout_event(system, policy, spec, x0, &mut sub).map(usize::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / rollouts as f64)
}

fn rollout_event<R: Rng + ?Sized>(
    system: &SystemModel,
    policy: &Policy,
    spec: &SafetySpec,
    x0: &[f64],
    rng: &mut R,
) -> Result<bool> {
    let mut x = x0.to_vec();
    for _ in 0..spec.horizon {
        match spec.variant {
            Variant::TerminalHitting => {
                if !spec.safe.contains(&x) {
                    return Ok(false);
                }
            }
            Variant::FirstHitting => {
                if spec.target.contains(&x) {
                    return Ok(true);
                }
                if !spec.safe.contains(&x) {
                    return Ok(false);
                }
            }
        }
        let u = policy.eval(&x)?;
        x = system.step_random(&x, &u, rng)?;
    }
    Ok(spec.target.contains(&x))
}

/// Maximum and mean absolute difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub max_abs: f64,
    pub mean_abs: f64,
}

pub fn compare(a: &[f64], b: &[f64]) -> Result<ErrorStats> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::EmptyInput("compared values"));
    }
    let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    let (mut max_abs, mut sum) = (0.0f64, 0.0);
    for d in diffs {
        max_abs = max_abs.max(d);
        sum += d;
    }
    Ok(ErrorStats {
        max_abs,
        mean_abs: sum / a.len() as f64,
    })
}

/// [`compare`] for two fields over the same points.
pub fn compare_fields(a: &SafetyField, b: &SafetyField) -> Result<ErrorStats> {
    if a.points != b.points {
        return Err(Error::Shape("compared fields are over different point sets".into()));
    }
    compare(&a.values, &b.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::SystemKind;

    fn erf_product(mu: &[f64], s: f64) -> f64 {
        mu.iter()
            .map(|m| std_cdf((1.0 - m) / s) - std_cdf((-1.0 - m) / s))
            .product()
    }

    #[test]
    fn interval_mass_matches_symmetric_form() {
        let p = interval_mass(0.0, 0.1, -1.0, 1.0);
        assert!((p - erf_product(&[0.0], 0.1)).abs() < 1e-15);
        assert!((interval_mass(0.0, 1.0, 0.0, f64::INFINITY) - 0.5).abs() < 1e-15);
        assert_eq!(interval_mass(0.0, 0.0, -1.0, 1.0), 1.0);
        assert_eq!(interval_mass(2.0, 0.0, -1.0, 1.0), 0.0);
    }

    #[test]
    fn hats_partition_unity_in_the_interior() {
        let axis = DpAxis { lo: -2.0, hi: 2.0, count: 81 };
        let (_, w) = axis_weights(&axis, 0.13, 0.1, (f64::NEG_INFINITY, f64::INFINITY));
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        let (_, w) = axis_weights(&axis, 0.13, 0.1, (-0.5, 0.5));
        let total: f64 = w.iter().sum();
        assert!((total - interval_mass(0.13, 0.1, -0.5, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn interpolant_expectation_of_linear_function_is_the_mean() {
        let grid = GridSpec::cube(1, -3.0, 3.0, 121).unwrap();
        let values: Vec<f64> = (0..121).map(|i| grid.axes[0].node(i)).collect();
        let e = expect_interpolant(&grid, &grid.strides(), &values, &[0.4], &[0.2], &vec![(f64::NEG_INFINITY, f64::INFINITY)]);
        assert!((e - 0.4).abs() < 1e-12);
    }

    #[test]
    fn compare_examples() {
        let a = [0.1, 0.5, 0.9];
        assert_eq!(compare(&a, &a).unwrap(), ErrorStats { max_abs: 0.0, mean_abs: 0.0 });
        let b: Vec<f64> = a.iter().map(|v| v + 0.3).collect();
        let s = compare(&a, &b).unwrap();
        assert!((s.max_abs - 0.3).abs() < 1e-15 && (s.mean_abs - 0.3).abs() < 1e-15);
        assert!(compare(&a, &b[..2]).is_err());
    }

    #[test]
    fn one_step_value_matches_cdf_product() {
        let sys = SystemModel::isotropic(SystemKind::IntegratorChain { dim: 2, period: 0.25 }, 0.01).unwrap();
        let k = SetSpec::boxed(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let spec = SafetySpec::terminal(k.clone(), k, 1);
        let grid = GridSpec::cube(2, -1.1, 1.1, 41).unwrap();
        let sol = dp_solve(&grid, &sys, &Policy::zero(1), &spec).unwrap();
        let v = sol.value_at(&[0.0, 0.0]).unwrap();
        assert!((v - erf_product(&[0.0, 0.0], 0.1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonlinear_and_oversized_sets() {
        let sys = SystemModel::isotropic(
            SystemKind::Pendulum { period: 0.1, direction: Default::default() },
            0.01,
        )
        .unwrap();
        let spec = SafetySpec::terminal(SetSpec::Everything, SetSpec::Everything, 2);
        let grid = GridSpec::cube(4, -1.0, 1.0, 3).unwrap();
        assert!(matches!(dp_solve(&grid, &sys, &Policy::zero(1), &spec), Err(Error::Unsupported(_))));

        let sys = SystemModel::isotropic(SystemKind::IntegratorChain { dim: 2, period: 0.25 }, 0.01).unwrap();
        let grid = GridSpec::cube(2, -1.0, 1.0, 11).unwrap();
        let k = SetSpec::boxed(&[-2.0, -1.0], &[1.0, 1.0]).unwrap();
        let spec = SafetySpec::terminal(k, SetSpec::Everything, 3);
        assert!(matches!(dp_solve(&grid, &sys, &Policy::zero(1), &spec), Err(Error::Config { .. })));
    }

    #[test]
    fn non_diagonal_covariance_unsupported() {
        let sys = SystemModel::new(
            SystemKind::IntegratorChain { dim: 2, period: 0.25 },
            vec![0.01, 0.005, 0.005, 0.01],
        )
        .unwrap();
        let spec = SafetySpec::terminal(SetSpec::Everything, SetSpec::Everything, 1);
        let grid = GridSpec::cube(2, -1.0, 1.0, 11).unwrap();
        assert!(matches!(dp_solve(&grid, &sys, &Policy::zero(1), &spec), Err(Error::Unsupported(_))));
    }
}
