//! Conditional distribution embeddings fitted from sampled transitions.
//!
//! For a sample `{(xᵢ, uᵢ, yᵢ)}` of size `M`, the regularized least-squares
//! estimate of the embedding of `Q(·|x, u)` is
//!
//! ```text
//! m̂(x,u) = Σᵢ βᵢ(x,u) k(yᵢ, ·),    β(x,u) = (G + λMI)⁻¹ kvec(x,u)
//! ```
//!
//! where `G` is the joint Gram matrix over the concatenated `(xᵢ, uᵢ)` rows
//! and `kvec(x,u)ᵢ = k((xᵢ,uᵢ), (x,u))`. The empirical conditional
//! expectation of a function `f` is then `fᵀβ(x,u)` with `fᵢ = f(yᵢ)`.

use std::io::{BufRead, Write};
use std::path::Path;

use faer::Mat;
use rayon::prelude::*;

use crate::bounds::GramSummary;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram_symmetric, regularized_factorize, KernelSpec, SolveHandle};
use crate::points::PointSet;

/// `M` transition triples `yᵢ ~ Q(·|xᵢ, uᵢ)`.
///
/// Rows are assumed i.i.d.; nothing here can check that.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    states: PointSet,
    inputs: PointSet,
    successors: PointSet,
}

impl SampleSet {
    pub fn new(states: PointSet, inputs: PointSet, successors: PointSet) -> Result<Self> {
        check_dim(states.len(), inputs.len())?;
        check_dim(states.len(), successors.len())?;
        check_dim(states.dim(), successors.dim())?;
        Ok(Self {
            states,
            inputs,
            successors,
        })
    }

    /// An empty sample with state dimension `n` and input dimension `m`.
    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            states: PointSet::empty(n),
            inputs: PointSet::empty(m),
            successors: PointSet::empty(n),
        }
    }

    pub fn push(&mut self, x: &[f64], u: &[f64], y: &[f64]) -> Result<()> {
        check_dim(self.state_dim(), x.len())?;
        check_dim(self.input_dim(), u.len())?;
        check_dim(self.state_dim(), y.len())?;
        self.states.push(x)?;
        self.inputs.push(u)?;
        self.successors.push(y)
    }

    pub fn append(&mut self, other: &SampleSet) -> Result<()> {
        check_dim(self.state_dim(), other.state_dim())?;
        check_dim(self.input_dim(), other.input_dim())?;
        self.states.extend(&other.states)?;
        self.inputs.extend(&other.inputs)?;
        self.successors.extend(&other.successors)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn states(&self) -> &PointSet {
        &self.states
    }

    pub fn inputs(&self) -> &PointSet {
        &self.inputs
    }

    pub fn successors(&self) -> &PointSet {
        &self.successors
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            states: self.states.select(indices),
            inputs: self.inputs.select(indices),
            successors: self.successors.select(indices),
        }
    }

    /// Swaps the roles of states and successors: `(x, u, y) → (y, u, x)`.
    pub fn reversed(&self) -> SampleSet {
        SampleSet {
            states: self.successors.clone(),
            inputs: self.inputs.clone(),
            successors: self.states.clone(),
        }
    }

    /// Writes the sample CSV: a `# n,m,M` comment line, a column header,
    /// then one `x_1..x_n,u_1..u_m,y_1..y_n` row per transition.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut out = out;
        writeln!(out, "# n,m,M = {},{},{}", n, m, self.len())?;
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=n)
            .map(|i| format!("x_{i}"))
            .chain((1..=m).map(|i| format!("u_{i}")))
            .chain((1..=n).map(|i| format!("y_{i}")))
            .collect();
        w.write_record(&header).map_err(csv_error)?;
        for i in 0..self.len() {
            let row = self
                .states
                .row(i)
                .iter()
                .chain(self.inputs.row(i))
                .chain(self.successors.row(i))
                .map(|v| v.to_string());
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<SampleSet> {
        let mut input = input;
        let mut first = String::new();
        input.read_line(&mut first)?;
        let (n, m, count) = parse_sample_header(&first)?;
        let mut sample = SampleSet::empty(n, m);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(csv_error)?;
            if record.len() != 2 * n + m {
                return Err(Error::Parse {
                    what: "sample csv".into(),
                    message: format!(
                        "row {} has {} columns, expected {}",
                        line + 1,
                        record.len(),
                        2 * n + m
                    ),
                });
            }
            let values = record
                .iter()
                .map(|s| parse_finite(s, "sample csv"))
                .collect::<Result<Vec<f64>>>()?;
            sample.push(&values[..n], &values[n..n + m], &values[n + m..])?;
        }
        if sample.len() != count {
            return Err(Error::Parse {
                what: "sample csv".into(),
                message: format!("header declares M = {count} but {} rows follow", sample.len()),
            });
        }
        Ok(sample)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<SampleSet> {
        let file = std::fs::File::open(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn parse_sample_header(line: &str) -> Result<(usize, usize, usize)> {
    let bad = |message: String| Error::Parse {
        what: "sample csv header".into(),
        message,
    };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad(format!("expected a `# n,m,M = ...` comment line, got {line:?}")))?;
    let values = body
        .split_once('=')
        .map(|(_, v)| v)
        .ok_or_else(|| bad(format!("missing `=` in {line:?}")))?;
    let parts = values
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    match parts.as_slice() {
        [n, m, count] => Ok((*n, *m, *count)),
        _ => Err(bad(format!("expected three integers, got {values:?}"))),
    }
}

pub(crate) fn parse_finite(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|e: std::num::ParseFloatError| Error::Parse {
        what: what.into(),
        message: format!("{s:?}: {e}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            what: what.into(),
            message: format!("non-finite value {s:?}"),
        });
    }
    Ok(v)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Parse {
        what: "csv".into(),
        message: e.to_string(),
    }
}

/// Conditioning pair `(x, u)` at which an expectation is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl QueryPoint {
    pub fn new(x: impl Into<Vec<f64>>, u: impl Into<Vec<f64>>) -> Self {
        Self {
            x: x.into(),
            u: u.into(),
        }
    }

    /// Concatenated `[x, u]`.
    pub fn joint(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + self.u.len());
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.u);
        v
    }
}

/// Standard decaying regularization schedule `λ = 1/M`.
pub fn default_lambda(m: usize) -> f64 {
    1.0 / m.max(1) as f64
}

/// A fitted conditional distribution embedding.
#[derive(Debug)]
pub struct EmbeddingModel {
    sample: SampleSet,
    state_kernel: KernelSpec,
    joint_kernel: KernelSpec,
    lambda: f64,
    joint: PointSet,
    handle: SolveHandle,
    output_diag: Vec<f64>,
    gram_summary: GramSummary,
}

/// Fits the embedding: factors `G + λMI` over the joint `(xᵢ, uᵢ)` Gram matrix.
pub fn fit(
    sample: SampleSet,
    state_kernel: KernelSpec,
    joint_kernel: KernelSpec,
    lambda: f64,
) -> Result<EmbeddingModel> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("sample set"));
    }
    state_kernel.validate()?;
    joint_kernel.validate()?;
    let joint = sample.states().hstack(sample.inputs())?;
    let g = gram_symmetric(&joint_kernel, &joint)?;
    let gram_summary = GramSummary::from_gram(g.as_ref());
    let handle = regularized_factorize(g, lambda)?;
    let output_diag = sample
        .successors()
        .rows()
        .map(|y| state_kernel.diagonal(y))
        .collect();
    Ok(EmbeddingModel {
        sample,
        state_kernel,
        joint_kernel,
        lambda,
        joint,
        handle,
        output_diag,
        gram_summary,
    })
}

impl EmbeddingModel {
    pub fn sample(&self) -> &SampleSet {
        &self.sample
    }

    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn state_kernel(&self) -> &KernelSpec {
        &self.state_kernel
    }

    pub fn joint_kernel(&self) -> &KernelSpec {
        &self.joint_kernel
    }

    /// Concatenated `(xᵢ, uᵢ)` rows the joint kernel is evaluated on.
    pub fn joint_points(&self) -> &PointSet {
        &self.joint
    }

    pub fn handle(&self) -> &SolveHandle {
        &self.handle
    }

    /// `k_𝒳(yᵢ, yᵢ)` for every sample output.
    pub fn output_diag(&self) -> &[f64] {
        &self.output_diag
    }

    /// Row statistics of the joint Gram matrix, kept after `G` is factored.
    pub fn gram_summary(&self) -> &GramSummary {
        &self.gram_summary
    }

    /// Uniform kernel bound shared by both kernels.
    pub fn rho(&self) -> f64 {
        self.state_kernel.rho.max(self.joint_kernel.rho)
    }

    fn check_query(&self, q: &QueryPoint) -> Result<()> {
        check_dim(self.sample.state_dim(), q.x.len())?;
        check_dim(self.sample.input_dim(), q.u.len())
    }

    fn kernel_vector_joint(&self, joint: &[f64]) -> Vec<f64> {
        self.joint
            .rows()
            .map(|p| self.joint_kernel.value(p, joint))
            .collect()
    }

    /// `kvec(x,u)ᵢ = k((xᵢ,uᵢ), (x,u))`.
    pub fn kernel_vector(&self, q: &QueryPoint) -> Result<Vec<f64>> {
        self.check_query(q)?;
        Ok(self.kernel_vector_joint(&q.joint()))
    }

    /// Regression coefficients `β(x,u) = (G + λMI)⁻¹ kvec(x,u)`.
    ///
    /// Entries may be negative; they are weights, not probabilities.
    pub fn beta(&self, q: &QueryPoint) -> Result<Vec<f64>> {
        let kvec = self.kernel_vector(q)?;
        self.handle.solve(&kvec)
    }

    /// `β` for many queries at once, one column per query.
    pub fn beta_matrix(&self, queries: &[QueryPoint]) -> Result<Mat<f64>> {
        for q in queries {
            self.check_query(q)?;
        }
        let joints = queries.iter().map(QueryPoint::joint).collect::<Vec<_>>();
        let mut rhs = Mat::<f64>::zeros(self.len(), queries.len());
        rhs.par_col_iter_mut().enumerate().for_each(|(j, mut col)| {
            for (i, p) in self.joint.rows().enumerate() {
                col[i] = self.joint_kernel.value(p, &joints[j]);
            }
        });
        self.handle.solve_in_place(&mut rhs)?;
        Ok(rhs)
    }

    /// Empirical conditional expectation `valuesᵀβ(x,u)`, unclipped.
    pub fn expectation(&self, values: &[f64], q: &QueryPoint) -> Result<f64> {
        check_dim(self.len(), values.len())?;
        let beta = self.beta(q)?;
        Ok(dot(values, &beta))
    }

    /// `α = (G + λMI)⁻¹ values`; then `valuesᵀβ(q) = αᵀkvec(q)` for every `q`.
    pub fn dual_weights(&self, values: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.len(), values.len())?;
        self.handle.solve(values)
    }

    /// `αᵀkvec(q)` for precomputed dual weights.
    pub fn expectation_from_weights(&self, weights: &[f64], q: &QueryPoint) -> Result<f64> {
        check_dim(self.len(), weights.len())?;
        let kvec = self.kernel_vector(q)?;
        Ok(dot(weights, &kvec))
    }

    /// [`expectation`](Self::expectation) over many queries, reusing one solve.
    pub fn batch_expectation(&self, values: &[f64], queries: &[QueryPoint]) -> Result<Vec<f64>> {
        if queries.is_empty() {
            check_dim(self.len(), values.len())?;
            return Ok(Vec::new());
        }
        for q in queries {
            self.check_query(q)?;
        }
        let weights = self.dual_weights(values)?;
        Ok(queries
            .par_iter()
            .map(|q| dot(&weights, &self.kernel_vector_joint(&q.joint())))
            .collect())
    }

    /// Cross kernel matrix between the sample rows and `queries` given as
    /// already-joined `(x, u)` rows: entry `(i, j) = k((xᵢ,uᵢ), q_j)`.
    pub(crate) fn cross_kernel(&self, joined: &PointSet) -> Result<Mat<f64>> {
        check_dim(self.joint.dim(), joined.dim())?;
        let mut c = Mat::<f64>::zeros(self.len(), joined.len());
        c.par_col_iter_mut().enumerate().for_each(|(j, mut col)| {
            let qj = joined.row(j);
            for (i, p) in self.joint.rows().enumerate() {
                col[i] = self.joint_kernel.value(p, qj);
            }
        });
        Ok(c)
    }

    pub(crate) fn kernel_vector_unchecked(&self, joint: &[f64]) -> Vec<f64> {
        self.kernel_vector_joint(joint)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(lambda: f64) -> EmbeddingModel {
        let s = SampleSet::new(
            PointSet::from_rows(&[[0.1, 0.2]]).unwrap(),
            PointSet::from_rows(&[[0.0]]).unwrap(),
            PointSet::from_rows(&[[0.3, 0.2]]).unwrap(),
        )
        .unwrap();
        let k = KernelSpec::gaussian(0.1).unwrap();
        fit(s, k, k, lambda).unwrap()
    }

    fn duplicated(lambda: f64) -> EmbeddingModel {
        let s = SampleSet::new(
            PointSet::from_rows(&[[0.1, 0.2], [0.1, 0.2]]).unwrap(),
            PointSet::from_rows(&[[0.5], [0.5]]).unwrap(),
            PointSet::from_rows(&[[0.3, 0.2], [-0.3, 0.0]]).unwrap(),
        )
        .unwrap();
        let k = KernelSpec::gaussian(0.1).unwrap();
        fit(s, k, k, lambda).unwrap()
    }

    #[test]
    fn single_sample_beta_closed_form() {
        for lambda in [0.1, 1.0, 3.0] {
            let m = single(lambda);
            let b = m.beta(&QueryPoint::new([0.1, 0.2], [0.0])).unwrap();
            assert_abs_diff_eq!(b[0], 1.0 / (1.0 + lambda), epsilon = 1e-14);
            let e = m
                .expectation(&[1.0], &QueryPoint::new([0.1, 0.2], [0.0]))
                .unwrap();
            assert_abs_diff_eq!(e, 1.0 / (1.0 + lambda), epsilon = 1e-14);
        }
    }

    #[test]
    fn duplicate_pair_beta_closed_form() {
        for lambda in [0.5, 0.01, 2.0] {
            let m = duplicated(lambda);
            let b = m.beta(&QueryPoint::new([0.1, 0.2], [0.5])).unwrap();
            let expected = 1.0 / (2.0 + 2.0 * lambda);
            assert_abs_diff_eq!(b[0], expected, epsilon = 1e-12);
            assert_abs_diff_eq!(b[1], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn far_query_gives_vanishing_beta() {
        let m = duplicated(0.5);
        let b = m.beta(&QueryPoint::new([50.0, 50.0], [0.5])).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn zero_values_give_zero_expectation() {
        let m = duplicated(0.5);
        let e = m
            .expectation(&[0.0, 0.0], &QueryPoint::new([0.0, 0.0], [0.0]))
            .unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn dimension_errors() {
        let m = duplicated(0.5);
        assert!(matches!(
            m.beta(&QueryPoint::new([0.0], [0.0])),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            m.expectation(&[1.0], &QueryPoint::new([0.0, 0.0], [0.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn empty_sample_rejected() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        assert!(matches!(
            fit(SampleSet::empty(2, 1), k, k, 0.1),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn batch_handles_empty_and_single() {
        let m = duplicated(0.5);
        let v = [1.0, 0.0];
        assert!(m.batch_expectation(&v, &[]).unwrap().is_empty());
        let q = QueryPoint::new([0.12, 0.2], [0.4]);
        let batch = m.batch_expectation(&v, std::slice::from_ref(&q)).unwrap();
        assert_abs_diff_eq!(batch[0], m.expectation(&v, &q).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn sample_csv_round_trip() {
        let s = SampleSet::new(
            PointSet::from_rows(&[[0.1, -2.5e-3], [1.0 / 3.0, 7.0]]).unwrap(),
            PointSet::from_rows(&[[0.0], [-10.0]]).unwrap(),
            PointSet::from_rows(&[[0.2, 0.1], [0.3, 1e-17]]).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# n,m,M = 2,1,2\nx_1,x_2,u_1,y_1,y_2\n"));
        let back = SampleSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn sample_csv_rejects_bad_rows() {
        let text = "# n,m,M = 1,1,1\nx_1,u_1,y_1\n0.1,nan,0.2\n";
        assert!(SampleSet::read_csv(text.as_bytes()).is_err());
        let text = "# n,m,M = 1,1,2\nx_1,u_1,y_1\n0.1,0.0,0.2\n";
        assert!(SampleSet::read_csv(text.as_bytes()).is_err());
        let text = "n,m,M\n";
        assert!(SampleSet::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn reversal_is_an_involution() {
        let s = SampleSet::new(
            PointSet::from_rows(&[[1.0]]).unwrap(),
            PointSet::from_rows(&[[2.0]]).unwrap(),
            PointSet::from_rows(&[[3.0]]).unwrap(),
        )
        .unwrap();
        let r = s.reversed();
        assert_eq!(r.states().row(0), &[3.0]);
        assert_eq!(r.successors().row(0), &[1.0]);
        assert_eq!(r.reversed(), s);
    }
}
