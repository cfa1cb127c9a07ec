//! Finite-sample radii for embedding-based expectations.
//!
//! For a query `(x, u)` with coefficients `β = β(x, u)` the radius is
//!
//! ```text
//! B(x,u) = 2·√(Σᵢ βᵢ² k(yᵢ,yᵢ)) + 3·√(M·C²·ln(2/δ)/2),   C = (2M−1)ρ/ℓ
//! ```
//!
//! where `ℓ` is a certified lower bound on the eigenvalues of `G + λMI`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::embedding::{fit, EmbeddingModel, QueryPoint, SampleSet};
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelSpec;
use crate::points::PointSet;
use crate::reach::{join_with_policy, Policy};

/// Columns per batched `β` solve; caps the `M × chunk` right-hand side.
const BETA_CHUNK: usize = 256;

/// How the eigenvalue floor `ℓ` of `G + λMI` is certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EllMethod {
    /// `λM`.
    Regularization,
    /// Gershgorin discs, floored at `λM`.
    #[default]
    Gershgorin,
    /// Trace moments `m̄ − s√(M−1)`, floored at `λM`.
    Trace,
}

impl EllMethod {
    pub fn name(self) -> &'static str {
        match self {
            EllMethod::Regularization => "regularization",
            EllMethod::Gershgorin => "gershgorin",
            EllMethod::Trace => "trace",
        }
    }
}

/// The parts of a Gram matrix `G` the eigenvalue floors need.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSummary {
    pub diag: Vec<f64>,
    /// `Σ_{j≠i} |Gᵢⱼ|` per row.
    pub off_diag_abs: Vec<f64>,
    /// `Σ_{i≠j} Gᵢⱼ²`.
    pub off_diag_sq: f64,
}

impl GramSummary {
    pub fn from_gram(g: MatRef<'_, f64>) -> Self {
        let m = g.nrows();
        let mut diag = Vec::with_capacity(m);
        let mut off_diag_abs = vec![0.0; m];
        let mut off_diag_sq = 0.0;
        for j in 0..m {
            let col = g.col(j);
            for i in 0..m {
                let v = col[i];
                if i == j {
                    diag.push(v);
                } else {
                    off_diag_abs[i] += v.abs();
                    off_diag_sq += v * v;
                }
            }
        }
        Self {
            diag,
            off_diag_abs,
            off_diag_sq,
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Certified lower bound on the spectrum of `G + λMI`.
    pub fn lower_bound(&self, lambda: f64, method: EllMethod) -> Result<f64> {
        check_lambda(lambda)?;
        let m = self.dim();
        if m == 0 {
            return Err(Error::EmptyInput("gram matrix"));
        }
        let shift = lambda * m as f64;
        Ok(match method {
            EllMethod::Regularization => shift,
            EllMethod::Gershgorin => {
                let disc = self
                    .diag
                    .iter()
                    .zip(&self.off_diag_abs)
                    .map(|(d, r)| d + shift - r)
                    .fold(f64::INFINITY, f64::min);
                shift.max(disc)
            }
            EllMethod::Trace => {
                let mf = m as f64;
                let tr: f64 = self.diag.iter().map(|d| d + shift).sum();
                let tr_sq: f64 =
                    self.diag.iter().map(|d| (d + shift) * (d + shift)).sum::<f64>() + self.off_diag_sq;
                let mean = tr / mf;
                let var = (tr_sq / mf - mean * mean).max(0.0);
                shift.max(mean - var.sqrt() * (mf - 1.0).sqrt())
            }
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "regularization lambda must be positive, got {lambda}"
        )))
    }
}

/// Certified lower bound `ℓ` on the eigenvalues of `G + λMI`.
pub fn eigen_lower_bound(g: MatRef<'_, f64>, lambda: f64, method: EllMethod) -> Result<f64> {
    check_lambda(lambda)?;
    if g.nrows() != g.ncols() {
        return Err(Error::Input(format!(
            "gram matrix must be square, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    GramSummary::from_gram(g).lower_bound(lambda, method)
}

/// `C = (2M − 1)ρ/ℓ`.
pub fn bounded_difference_constant(m: usize, rho: f64, ell: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::Parameter("sample size M must be at least 1".into()));
    }
    if !(ell > 0.0) {
        return Err(Error::Parameter(format!("eigenvalue floor must be positive, got {ell}")));
    }
    if !(rho > 0.0) {
        return Err(Error::Parameter(format!("kernel bound rho must be positive, got {rho}")));
    }
    Ok((2.0 * m as f64 - 1.0) * rho / ell)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 2.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("δ outside (0,2): {delta}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    pub rho: f64,
    pub ell: f64,
    pub c: f64,
    pub m: usize,
}

impl BoundParams {
    pub fn new(m: usize, rho: f64, ell: f64, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let c = bounded_difference_constant(m, rho, ell)?;
        Ok(Self { delta, rho, ell, c, m })
    }

    /// Parameters for a fitted model with `ℓ` from `method`.
    pub fn for_model(model: &EmbeddingModel, delta: f64, method: EllMethod) -> Result<Self> {
        let ell = model.gram_summary().lower_bound(model.lambda(), method)?;
        Self::new(model.len(), model.rho(), ell, delta)
    }

    /// The sample-independent part `3√(M·C²·ln(2/δ)/2)`.
    pub fn concentration_term(&self) -> f64 {
        3.0 * (self.m as f64 * self.c * self.c * (2.0 / self.delta).ln() / 2.0).sqrt()
    }

    /// `2·complexity + concentration_term`.
    pub fn radius(&self, complexity: f64) -> f64 {
        2.0 * complexity + self.concentration_term()
    }
}

/// `√(Σᵢ βᵢ² k(yᵢ,yᵢ))`.
pub fn complexity_from_beta(model: &EmbeddingModel, beta: &[f64]) -> Result<f64> {
    check_dim(model.len(), beta.len())?;
    Ok(beta
        .iter()
        .zip(model.output_diag())
        .map(|(b, d)| b * b * d)
        .sum::<f64>()
        .sqrt())
}

pub fn complexity_term(model: &EmbeddingModel, q: &QueryPoint) -> Result<f64> {
    let beta = model.beta(q)?;
    complexity_from_beta(model, &beta)
}

/// `B(x,u)` for one query.
pub fn bound_b(model: &EmbeddingModel, q: &QueryPoint, delta: f64, params: &BoundParams) -> Result<f64> {
    check_delta(delta)?;
    check_dim(model.len(), params.m)?;
    let params = BoundParams { delta, ..*params };
    Ok(params.radius(complexity_term(model, q)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub bounds: Vec<f64>,
    pub complexity: Vec<f64>,
    pub params: BoundParams,
    pub method: EllMethod,
}

/// Complexity terms for already-joined `(x, u)` rows, solved in column batches.
fn complexity_batch(model: &EmbeddingModel, joined: &PointSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(joined.len());
    let indices: Vec<usize> = (0..joined.len()).collect();
    for chunk in indices.chunks(BETA_CHUNK) {
        let mut rhs: Mat<f64> = model.cross_kernel(&joined.select(chunk))?;
        model.handle().solve_in_place(&mut rhs)?;
        for j in 0..rhs.ncols() {
            out.push(complexity_from_beta(model, rhs.col_as_slice(j))?);
        }
    }
    Ok(out)
}

/// `B` at `(x, π(x))` for every evaluation point, with `ℓ` computed once.
pub fn bound_field(
    model: &EmbeddingModel,
    policy: &Policy,
    eval_points: &PointSet,
    delta: f64,
    method: EllMethod,
) -> Result<BoundReport> {
    let params = BoundParams::for_model(model, delta, method)?;
    if !eval_points.is_empty() {
        check_dim(model.sample().state_dim(), eval_points.dim())?;
    }
    check_dim(model.sample().input_dim(), policy.input_dim())?;
    let joined = join_with_policy(eval_points, policy)?;
    let complexity = complexity_batch(model, &joined)?;
    let bounds = complexity.iter().map(|c| params.radius(*c)).collect();
    Ok(BoundReport {
        bounds,
        complexity,
        params,
        method,
    })
}

/// Mean complexity over `probes` for a model fitted with bandwidth `sigma` on both kernels.
pub fn mean_complexity(sample: &SampleSet, sigma: f64, probes: &[QueryPoint], lambda: f64) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::EmptyInput("probe queries"));
    }
    let k = KernelSpec::gaussian(sigma)?;
    let model = fit(sample.clone(), k, k, lambda)?;
    let betas = model.beta_matrix(probes)?;
    let mut total = 0.0;
    for j in 0..probes.len() {
        total += complexity_from_beta(&model, betas.col_as_slice(j))?;
    }
    Ok(total / probes.len() as f64)
}

/// The candidate bandwidth minimizing mean complexity; ties go to the earlier candidate.
pub fn select_bandwidth(
    sample: &SampleSet,
    candidates: &[f64],
    probes: &[QueryPoint],
    lambda: f64,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Parameter("bandwidth candidate list is empty".into()));
    }
    let mut best = (f64::INFINITY, candidates[0]);
    for &sigma in candidates {
        let score = mean_complexity(sample, sigma, probes, lambda)?;
        // strict comparison keeps the earliest minimizer
        if score < best.0 {
            best = (score, sigma);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dup_gram() -> Mat<f64> {
        Mat::from_fn(2, 2, |_, _| 1.0)
    }

    #[test]
    fn ell_methods_on_duplicate_pair() {
        let g = dup_gram();
        assert_eq!(eigen_lower_bound(g.as_ref(), 0.5, EllMethod::Regularization).unwrap(), 1.0);
        assert_eq!(eigen_lower_bound(g.as_ref(), 0.5, EllMethod::Gershgorin).unwrap(), 1.0);
        assert_abs_diff_eq!(
            eigen_lower_bound(g.as_ref(), 0.5, EllMethod::Trace).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(eigen_lower_bound(g.as_ref(), 0.0, EllMethod::Trace).is_err());
    }

    #[test]
    fn gershgorin_beats_floor_on_diagonal_gram() {
        let g = Mat::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let ell = eigen_lower_bound(g.as_ref(), 0.1, EllMethod::Gershgorin).unwrap();
        assert_abs_diff_eq!(ell, 1.3, epsilon = 1e-12);
    }

    #[test]
    fn bounded_difference_examples() {
        assert_eq!(bounded_difference_constant(1, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(bounded_difference_constant(2, 1.0, 1.0).unwrap(), 3.0);
        let ell = 2500.0 * (1.0 / 2500.0);
        assert_abs_diff_eq!(bounded_difference_constant(2500, 1.0, ell).unwrap(), 4999.0, epsilon = 1e-9);
        assert!(bounded_difference_constant(2, 1.0, 0.0).is_err());
    }

    #[test]
    fn delta_range_enforced() {
        assert!(BoundParams::new(1, 1.0, 1.0, 0.0).is_err());
        assert!(BoundParams::new(1, 1.0, 1.0, 2.0).is_err());
        assert!(BoundParams::new(1, 1.0, 1.0, 2.5).is_err());
        assert!(BoundParams::new(1, 1.0, 1.0, 1.999).is_ok());
    }

    #[test]
    fn single_sample_bound() {
        let s = SampleSet::new(
            PointSet::from_rows(&[[0.3]]).unwrap(),
            PointSet::from_rows(&[[0.0]]).unwrap(),
            PointSet::from_rows(&[[0.1]]).unwrap(),
        )
        .unwrap();
        let k = KernelSpec::gaussian(0.5).unwrap();
        let model = fit(s, k, k, 1.0).unwrap();
        let q = QueryPoint::new([0.3], [0.0]);
        assert_abs_diff_eq!(complexity_term(&model, &q).unwrap(), 0.5, epsilon = 1e-15);
        let params = BoundParams::for_model(&model, 0.1, EllMethod::Regularization).unwrap();
        assert_eq!(params.ell, 1.0);
        assert_eq!(params.c, 1.0);
        let b = bound_b(&model, &q, 0.1, &params).unwrap();
        let expected = 1.0 + 3.0 * (20f64.ln() / 2.0).sqrt();
        assert_abs_diff_eq!(b, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 4.671_620_246, epsilon = 1e-8);
    }

    #[test]
    fn empty_candidates_rejected() {
        let s = SampleSet::empty(1, 1);
        assert!(select_bandwidth(&s, &[], &[], 0.1).is_err());
    }
}
