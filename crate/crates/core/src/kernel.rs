//! Kernel evaluation, Gram matrices, and regularized positive-definite solves.
//!
//! Every embedding computation reduces to two primitives: a bounded
//! positive-definite kernel evaluated over point lists, and solves against
//! the regularized Gram matrix `G + λMI`. The latter is kept in factored
//! (Cholesky) form in a [`SolveHandle`] and never inverted explicitly.

use faer::linalg::solvers::Llt;
use faer::prelude::*;
use faer::{Mat, MatRef, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::points::PointSet;

/// Asymmetry tolerated in a Gram matrix handed to [`regularized_factorize`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Diagonal jitter factor (times `M`) applied on the single factorization retry.
pub const JITTER_FACTOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `k(a, b) = exp(-‖a − b‖² / 2σ²)`
    GaussianRbf,
}

/// A bounded positive-definite kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Bandwidth σ, in state units.
    pub bandwidth: f64,
    /// Uniform bound ρ ≥ sup √k(x, x).
    pub rho: f64,
}

impl KernelSpec {
    /// Gaussian RBF kernel with bandwidth `sigma` and ρ = 1.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = Self {
            family: KernelFamily::GaussianRbf,
            bandwidth: sigma,
            rho: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Overrides ρ. It must still dominate √k(x, x).
    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        self.rho = rho;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Parameter(format!(
                "kernel bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        let diag_max = match self.family {
            KernelFamily::GaussianRbf => 1.0,
        };
        if !(self.rho.is_finite() && self.rho >= diag_max) {
            return Err(Error::Parameter(format!(
                "kernel bound rho = {} is below sup sqrt k(x,x) = {diag_max}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Checked evaluation of `k(a, b)`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.validate()?;
        check_dim(a.len(), b.len())?;
        Ok(self.value(a, b))
    }

    /// Unchecked evaluation; callers guarantee equal lengths and a valid spec.
    #[inline]
    pub fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self.family {
            KernelFamily::GaussianRbf => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }

    /// `k(x, x)`, which does not depend on `x` for stationary kernels.
    #[inline]
    pub fn diagonal(&self, _x: &[f64]) -> f64 {
        match self.family {
            KernelFamily::GaussianRbf => 1.0,
        }
    }
}

/// Cross Gram matrix with entries `k(a_i, b_j)`, shape `|a| × |b|`.
pub fn gram(spec: &KernelSpec, a: &PointSet, b: &PointSet) -> Result<Mat<f64>> {
    spec.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("gram point list"));
    }
    check_dim(a.dim(), b.dim())?;
    let mut g = Mat::<f64>::zeros(a.len(), b.len());
    g.par_col_iter_mut().enumerate().for_each(|(j, mut col)| {
        let bj = b.row(j);
        for i in 0..a.len() {
            col[i] = spec.value(a.row(i), bj);
        }
    });
    Ok(g)
}

/// Gram matrix of a single point list, exactly symmetric by construction.
pub fn gram_symmetric(spec: &KernelSpec, a: &PointSet) -> Result<Mat<f64>> {
    spec.validate()?;
    if a.is_empty() {
        return Err(Error::EmptyInput("gram point list"));
    }
    let n = a.len();
    let mut g = Mat::<f64>::zeros(n, n);
    g.par_col_iter_mut().enumerate().for_each(|(j, mut col)| {
        let aj = a.row(j);
        for i in j..n {
            col[i] = spec.value(a.row(i), aj);
        }
    });
    for j in 0..n {
        for i in 0..j {
            g[(i, j)] = g[(j, i)];
        }
    }
    Ok(g)
}

/// Factored form of `G + λMI`.
#[derive(Debug)]
pub struct SolveHandle {
    llt: Llt<f64>,
    lambda: f64,
    dim: usize,
    jittered: bool,
}

/// Factors `G + λMI` with a symmetric positive-definite (Cholesky) factorization.
///
/// `G` is consumed so the regularization can be added in place. On a failed
/// factorization the diagonal is bumped by `1e-10·M` and the factorization is
/// retried once.
pub fn regularized_factorize(mut g: Mat<f64>, lambda: f64) -> Result<SolveHandle> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "regularization lambda must be positive, got {lambda}"
        )));
    }
    let m = g.nrows();
    if m == 0 {
        return Err(Error::EmptyInput("gram matrix"));
    }
    if g.ncols() != m {
        return Err(Error::Input(format!(
            "gram matrix must be square, got {}x{}",
            m,
            g.ncols()
        )));
    }
    check_symmetric(g.as_ref())?;

    let shift = lambda * m as f64;
    for i in 0..m {
        g[(i, i)] += shift;
    }
    let (llt, jittered) = match g.llt(Side::Lower) {
        Ok(llt) => (llt, false),
        Err(_) => {
            let jitter = JITTER_FACTOR * m as f64;
            for i in 0..m {
                g[(i, i)] += jitter;
            }
            let llt = g.llt(Side::Lower).map_err(|e| {
                Error::Numerical(format!("cholesky factorization failed after jitter: {e}"))
            })?;
            (llt, true)
        }
    };
    Ok(SolveHandle {
        llt,
        lambda,
        dim: m,
        jittered,
    })
}

fn check_symmetric(g: MatRef<'_, f64>) -> Result<()> {
    let m = g.nrows();
    for j in 0..m {
        for i in (j + 1)..m {
            let (a, b) = (g[(i, j)], g[(j, i)]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Input(format!("non-finite gram entry at ({i}, {j})")));
            }
            if (a - b).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::Input(format!(
                    "gram matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

impl SolveHandle {
    /// Matrix dimension `M`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The diagonal shift `λM` that was added to `G`.
    pub fn shift(&self) -> f64 {
        self.lambda * self.dim as f64
    }

    /// Whether the jitter retry was needed.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// Solves `(G + λMI) w = v`.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, v.len())?;
        let mut rhs = Mat::<f64>::from_fn(self.dim, 1, |i, _| v[i]);
        self.llt.solve_in_place(rhs.as_mut());
        Ok(rhs.col_as_slice(0).to_vec())
    }

    /// Solves against every column of `rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut Mat<f64>) -> Result<()> {
        check_dim(self.dim, rhs.nrows())?;
        self.llt.solve_in_place(rhs.as_mut());
        Ok(())
    }

    /// Lower-triangular Cholesky factor.
    pub fn factor(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(rows: &[&[f64]]) -> PointSet {
        PointSet::from_rows(rows).unwrap()
    }

    #[test]
    fn kernel_is_one_on_diagonal() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        assert_eq!(k.eval(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
    }

    #[test]
    fn kernel_at_sqrt2_sigma_is_inverse_e() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let d = 0.1 * 2f64.sqrt();
        assert_abs_diff_eq!(k.eval(&[0.0], &[d]).unwrap(), (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_at_one_sigma() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        // exp(-0.01 / 0.02)
        let v = k.eval(&[0.0, 0.0], &[0.1, 0.0]).unwrap();
        assert_abs_diff_eq!(v, 0.606_530_659_712_633_4, epsilon = 1e-12);
    }

    #[test]
    fn kernel_errors() {
        assert!(matches!(KernelSpec::gaussian(0.0), Err(Error::Parameter(_))));
        assert!(matches!(KernelSpec::gaussian(-1.0), Err(Error::Parameter(_))));
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::Dimension { .. })));
        assert!(k.with_rho(0.5).is_err());
    }

    #[test]
    fn gram_of_single_point() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let a = pts(&[&[0.2, 0.4]]);
        let g = gram(&k, &a, &a).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
    }

    #[test]
    fn gram_of_duplicates_is_all_ones() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let a = pts(&[&[0.2, 0.4], &[0.2, 0.4]]);
        let g = gram_symmetric(&k, &a).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g[(i, j)], 1.0);
            }
        }
    }

    #[test]
    fn gram_rejects_empty() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let a = pts(&[&[0.0]]);
        assert!(matches!(
            gram(&k, &a, &PointSet::empty(1)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn cross_gram_shape() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let a = pts(&[&[0.0], &[1.0], &[2.0]]);
        let b = pts(&[&[0.5], &[1.5]]);
        let g = gram(&k, &a, &b).unwrap();
        assert_eq!((g.nrows(), g.ncols()), (3, 2));
        assert_abs_diff_eq!(g[(2, 1)], (-0.125f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn factorize_scalar() {
        let g = Mat::<f64>::from_fn(1, 1, |_, _| 1.0);
        let h = regularized_factorize(g, 1.0).unwrap();
        assert_abs_diff_eq!(h.solve(&[1.0]).unwrap()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn factorize_duplicate_pair() {
        // (G + 0.5·2·I) = [[2,1],[1,2]], inverse = [[2,-1],[-1,2]]/3
        let g = Mat::<f64>::from_fn(2, 2, |_, _| 1.0);
        let h = regularized_factorize(g, 0.5).unwrap();
        let w = h.solve(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn factorize_rejects_asymmetry_and_bad_lambda() {
        let mut g = Mat::<f64>::identity(3, 3);
        g[(0, 2)] = 1e-6;
        assert!(matches!(regularized_factorize(g.clone(), 1.0), Err(Error::Input(_))));
        assert!(matches!(
            regularized_factorize(Mat::identity(2, 2), 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            regularized_factorize(Mat::zeros(2, 3), 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn jitter_retry_rescues_tiny_negative_curvature() {
        // G with a -1e-12-ish negative eigenvalue that λM cannot cover when λ is tiny.
        let lambda = 1e-13;
        let mut g = Mat::<f64>::from_fn(2, 2, |_, _| 1.0);
        g[(0, 0)] -= 1e-12;
        g[(1, 1)] -= 1e-12;
        let h = regularized_factorize(g, lambda).unwrap();
        assert!(h.jittered());
    }

    #[test]
    fn solve_rejects_wrong_length() {
        let h = regularized_factorize(Mat::identity(2, 2), 1.0).unwrap();
        assert!(matches!(h.solve(&[1.0]), Err(Error::Dimension { .. })));
    }
}
