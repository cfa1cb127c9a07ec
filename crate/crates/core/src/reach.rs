//! Safety probabilities from a fitted embedding.
//!
//! The value recursion is carried on the sample outputs: at each stage the
//! length-`M` vector `V_{k+1}(yᵢ)` is turned into dual weights
//! `α = (G + λMI)⁻¹ V_{k+1}` once, after which the empirical expectation at
//! any query is `αᵀkvec(q)`. Stage values are clipped to `[0, 1]`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::embedding::{dot, EmbeddingModel};
use crate::error::{check_dim, Error, Result};
use crate::points::PointSet;
use crate::systems::mlp::MlpController;
use crate::systems::ScriptedController;

/// Closed interval constraint on one state coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisInterval {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
}

/// A membership predicate with a display name.
#[derive(Clone)]
pub struct NamedPredicate {
    pub name: String,
    test: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
}

impl NamedPredicate {
    pub fn new(name: impl Into<String>, test: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            test: Arc::new(test),
        }
    }
}

impl fmt::Debug for NamedPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("NamedPredicate").field(&self.name).finish()
    }
}

/// A measurable subset of the state space.
#[derive(Debug, Clone)]
pub enum SetSpec {
    Everything,
    Nothing,
    /// Axis-aligned closed box over the listed coordinates; the rest are free.
    Box(Vec<AxisInterval>),
    Predicate(NamedPredicate),
}

impl SetSpec {
    /// Closed box constraining every coordinate.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        let intervals = lo
            .iter()
            .zip(hi)
            .enumerate()
            .map(|(dim, (&lo, &hi))| AxisInterval { dim, lo, hi })
            .collect();
        Self::slab(intervals)
    }

    /// Closed box over a subset of coordinates.
    pub fn slab(intervals: Vec<AxisInterval>) -> Result<Self> {
        for iv in &intervals {
            if !(iv.lo <= iv.hi) {
                return Err(Error::Parameter(format!(
                    "box bounds on dim {} are inverted or NaN: [{}, {}]",
                    iv.dim, iv.lo, iv.hi
                )));
            }
        }
        Ok(SetSpec::Box(intervals))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SetSpec::Everything => true,
            SetSpec::Nothing => false,
            SetSpec::Box(ivs) => ivs.iter().all(|iv| {
                let v = x[iv.dim];
                iv.lo <= v && v <= iv.hi
            }),
            SetSpec::Predicate(p) => (p.test)(x),
        }
    }

    /// `1_A(x)`.
    pub fn indicator(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            1.0
        } else {
            0.0
        }
    }

    /// Checks that every constrained coordinate exists in dimension `n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        if let SetSpec::Box(ivs) = self {
            if let Some(iv) = ivs.iter().find(|iv| iv.dim >= n) {
                return Err(Error::Dimension {
                    expected: n,
                    found: iv.dim + 1,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Stay in 𝒦 through step N−1 and be in 𝒯 at step N.
    TerminalHitting,
    /// Reach 𝒯 at some step k ≤ N while in 𝒦 before entry.
    FirstHitting,
}

#[derive(Debug, Clone)]
pub struct SafetySpec {
    pub safe: SetSpec,
    pub target: SetSpec,
    pub horizon: usize,
    pub variant: Variant,
}

impl SafetySpec {
    pub fn terminal(safe: SetSpec, target: SetSpec, horizon: usize) -> Self {
        Self {
            safe,
            target,
            horizon,
            variant: Variant::TerminalHitting,
        }
    }

    pub fn first_hitting(safe: SetSpec, target: SetSpec, horizon: usize) -> Self {
        Self {
            safe,
            target,
            horizon,
            variant: Variant::FirstHitting,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Parameter("horizon N must be at least 1".into()));
        }
        self.safe.check_dim(n)?;
        self.target.check_dim(n)
    }

    /// One backup: combines the clipped continuation `e` with the indicators at `x`.
    #[inline]
    fn backup(&self, x: &[f64], continuation: impl FnOnce() -> f64) -> f64 {
        match self.variant {
            Variant::TerminalHitting => {
                if self.safe.contains(x) {
                    clip01(continuation())
                } else {
                    0.0
                }
            }
            Variant::FirstHitting => {
                if self.target.contains(x) {
                    1.0
                } else if self.safe.contains(x) {
                    clip01(continuation())
                } else {
                    0.0
                }
            }
        }
    }

    /// `V_N`.
    fn terminal_value(&self, x: &[f64]) -> f64 {
        self.target.indicator(x)
    }
}

#[inline]
pub fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// A Markov policy mapping states to inputs.
#[derive(Debug, Clone)]
pub enum Policy {
    /// The same input everywhere (`π ≡ 0` is `Constant(vec![0.0; m])`).
    Constant(Vec<f64>),
    /// `u = K x + b` with `K` stored row-major as `m × n`.
    Affine {
        gain: Vec<f64>,
        offset: Vec<f64>,
        state_dim: usize,
    },
    Mlp(MlpController),
    Scripted(ScriptedController),
}

impl Policy {
    pub fn zero(m: usize) -> Self {
        Policy::Constant(vec![0.0; m])
    }

    pub fn affine(gain: Vec<f64>, offset: Vec<f64>, state_dim: usize) -> Result<Self> {
        if gain.len() != offset.len() * state_dim {
            return Err(Error::Dimension {
                expected: offset.len() * state_dim,
                found: gain.len(),
            });
        }
        Ok(Policy::Affine {
            gain,
            offset,
            state_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Policy::Constant(u) => u.len(),
            Policy::Affine { offset, .. } => offset.len(),
            Policy::Mlp(c) => c.output_dim(),
            Policy::Scripted(s) => s.input_dim(),
        }
    }

    /// State dimension the policy accepts, when it is fixed.
    pub fn state_dim(&self) -> Option<usize> {
        match self {
            Policy::Constant(_) => None,
            Policy::Affine { state_dim, .. } => Some(*state_dim),
            Policy::Mlp(c) => Some(c.input_dim()),
            Policy::Scripted(s) => Some(s.state_dim()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let Some(n) = self.state_dim() {
            check_dim(n, x.len())?;
        }
        Ok(match self {
            Policy::Constant(u) => u.clone(),
            Policy::Affine {
                gain,
                offset,
                state_dim,
            } => offset
                .iter()
                .enumerate()
                .map(|(r, b)| b + dot(&gain[r * state_dim..(r + 1) * state_dim], x))
                .collect(),
            Policy::Mlp(c) => c.eval(x)?,
            Policy::Scripted(s) => s.eval(x),
        })
    }
}

/// Safety probabilities over a point set, optionally with bound brackets.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyField {
    pub points: PointSet,
    pub values: Vec<f64>,
    pub bounds: Option<Vec<f64>>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// `(columns, rows)` when the points form a rectangular 2-D grid with the
    /// first grid axis varying fastest.
    pub grid_shape: Option<(usize, usize)>,
}

impl SafetyField {
    pub fn new(points: PointSet, values: Vec<f64>) -> Result<Self> {
        check_dim(points.len(), values.len())?;
        Ok(Self {
            points,
            values,
            bounds: None,
            lower: None,
            upper: None,
            grid_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_grid_shape(mut self, cols: usize, rows: usize) -> Result<Self> {
        if cols * rows != self.len() {
            return Err(Error::Shape(format!(
                "{cols}x{rows} grid does not match {} points",
                self.len()
            )));
        }
        self.grid_shape = Some((cols, rows));
        Ok(self)
    }

    /// Attaches radii `B` and the clipped bracket `[max(0, V−B), min(1, V+B)]`.
    pub fn with_bounds(mut self, bounds: Vec<f64>) -> Result<Self> {
        check_dim(self.len(), bounds.len())?;
        if let Some(b) = bounds.iter().find(|b| !(**b >= 0.0)) {
            return Err(Error::Numerical(format!("negative or NaN bound {b}")));
        }
        let lower = self
            .values
            .iter()
            .zip(&bounds)
            .map(|(v, b)| (v - b).max(0.0))
            .collect();
        let upper = self
            .values
            .iter()
            .zip(&bounds)
            .map(|(v, b)| (v + b).min(1.0))
            .collect();
        self.bounds = Some(bounds);
        self.lower = Some(lower);
        self.upper = Some(upper);
        Ok(self)
    }

    /// CSV with columns `x_1..x_n,value,bound,lo,hi` (bound columns empty
    /// when no bounds are attached).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.points.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        header.extend(["value", "bound", "lo", "hi"].map(String::from));
        w.write_record(&header).map_err(crate::embedding::csv_error)?;
        let opt = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
        for (i, p) in self.points.rows().enumerate() {
            let mut rec: Vec<String> = p.iter().map(f64::to_string).collect();
            rec.push(self.values[i].to_string());
            rec.push(opt(&self.bounds, i));
            rec.push(opt(&self.lower, i));
            rec.push(opt(&self.upper, i));
            w.write_record(&rec).map_err(crate::embedding::csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = r.headers().map_err(crate::embedding::csv_error)?.clone();
        let n = headers.iter().take_while(|h| h.starts_with("x_")).count();
        if headers.len() != n + 4 {
            return Err(Error::Parse {
                what: "field csv".into(),
                message: format!("unexpected header {headers:?}"),
            });
        }
        let mut points = PointSet::empty(n);
        let (mut values, mut bounds, mut lower, mut upper) = (vec![], vec![], vec![], vec![]);
        let mut has_bounds = true;
        for rec in r.records() {
            let rec = rec.map_err(crate::embedding::csv_error)?;
            let coords = (0..n)
                .map(|i| crate::embedding::parse_finite(&rec[i], "field csv"))
                .collect::<Result<Vec<_>>>()?;
            points.push(&coords)?;
            values.push(crate::embedding::parse_finite(&rec[n], "field csv")?);
            if rec[n + 1].is_empty() {
                has_bounds = false;
            } else {
                bounds.push(crate::embedding::parse_finite(&rec[n + 1], "field csv")?);
                lower.push(crate::embedding::parse_finite(&rec[n + 2], "field csv")?);
                upper.push(crate::embedding::parse_finite(&rec[n + 3], "field csv")?);
            }
        }
        let mut field = SafetyField::new(points, values)?;
        if has_bounds && !field.is_empty() {
            field.bounds = Some(bounds);
            field.lower = Some(lower);
            field.upper = Some(upper);
        }
        Ok(field)
    }
}

/// One axis of an evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn value(&self, i: usize) -> f64 {
        if self.count == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64
        }
    }
}

/// A rectangular grid over some coordinates, with the others held at slice values.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub axes: Vec<GridAxis>,
    /// Full-dimension base point; grid axes overwrite their coordinates.
    pub slice: Vec<f64>,
}

impl EvalGrid {
    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::EmptyInput("grid axes"));
        }
        for a in &self.axes {
            if a.dim >= self.slice.len() {
                return Err(Error::Dimension {
                    expected: self.slice.len(),
                    found: a.dim + 1,
                });
            }
            if a.count == 0 || !(a.lo <= a.hi) {
                return Err(Error::Parameter(format!(
                    "grid axis on dim {} needs count >= 1 and lo <= hi",
                    a.dim
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points, first axis varying fastest.
    pub fn points(&self) -> Result<PointSet> {
        self.validate()?;
        let mut out = PointSet::empty(self.slice.len());
        let mut idx = vec![0usize; self.axes.len()];
        for _ in 0..self.len() {
            let mut p = self.slice.clone();
            for (a, &i) in self.axes.iter().zip(&idx) {
                p[a.dim] = a.value(i);
            }
            out.push(&p)?;
            for (k, a) in self.axes.iter().enumerate() {
                idx[k] += 1;
                if idx[k] < a.count {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(out)
    }

    /// `(columns, rows)` for two-axis grids.
    pub fn shape_2d(&self) -> Option<(usize, usize)> {
        match self.axes.as_slice() {
            [a, b] => Some((a.count, b.count)),
            [a] => Some((a.count, 1)),
            _ => None,
        }
    }
}

/// Terminal-hitting safety probabilities `V̄₀` at `eval_points`.
pub fn terminal_hitting(
    model: &EmbeddingModel,
    policy: &Policy,
    spec: &SafetySpec,
    eval_points: &PointSet,
) -> Result<SafetyField> {
    if spec.variant != Variant::TerminalHitting {
        return Err(Error::Parameter("terminal_hitting needs a terminal-hitting spec".into()));
    }
    recursion(model, policy, spec, eval_points)
}

/// First-hitting probabilities: `V̄_k = 1_𝒯 + 1_{𝒦∖𝒯}·clip(⟨m̂, V̄_{k+1}⟩)`.
pub fn first_hitting(
    model: &EmbeddingModel,
    policy: &Policy,
    spec: &SafetySpec,
    eval_points: &PointSet,
) -> Result<SafetyField> {
    if spec.variant != Variant::FirstHitting {
        return Err(Error::Parameter("first_hitting needs a first-hitting spec".into()));
    }
    recursion(model, policy, spec, eval_points)
}

/// Dispatches on `spec.variant`.
pub fn safety_field(
    model: &EmbeddingModel,
    policy: &Policy,
    spec: &SafetySpec,
    eval_points: &PointSet,
) -> Result<SafetyField> {
    recursion(model, policy, spec, eval_points)
}

/// Joins every row of `states` with `policy(row)`.
pub(crate) fn join_with_policy(states: &PointSet, policy: &Policy) -> Result<PointSet> {
    let mut joined = PointSet::empty(states.dim() + policy.input_dim());
    let mut row = Vec::with_capacity(joined.dim());
    for x in states.rows() {
        row.clear();
        row.extend_from_slice(x);
        let u = policy.eval(x)?;
        check_dim(policy.input_dim(), u.len())?;
        row.extend_from_slice(&u);
        joined.push(&row)?;
    }
    Ok(joined)
}

fn recursion(
    model: &EmbeddingModel,
    policy: &Policy,
    spec: &SafetySpec,
    eval_points: &PointSet,
) -> Result<SafetyField> {
    let n = model.sample().state_dim();
    spec.validate(n)?;
    check_dim(model.sample().input_dim(), policy.input_dim())?;
    if !eval_points.is_empty() {
        check_dim(n, eval_points.dim())?;
    }

    let outputs = model.sample().successors();
    let mut values: Vec<f64> = outputs.rows().map(|y| spec.terminal_value(y)).collect();

    if spec.horizon >= 2 {
        let joined = join_with_policy(outputs, policy)?;
        let cross = model.cross_kernel(&joined)?;
        for _stage in (1..spec.horizon).rev() {
            let alpha = model.dual_weights(&values)?;
            values = (0..outputs.len())
                .into_par_iter()
                .map(|j| spec.backup(outputs.row(j), || dot(cross.col_as_slice(j), &alpha)))
                .collect();
        }
    }

    let alpha = model.dual_weights(&values)?;
    let joined = join_with_policy(eval_points, policy)?;
    let field: Vec<f64> = (0..eval_points.len())
        .into_par_iter()
        .map(|j| {
            spec.backup(eval_points.row(j), || {
                dot(&alpha, &model.kernel_vector_unchecked(joined.row(j)))
            })
        })
        .collect();
    SafetyField::new(eval_points.clone(), field)
}
