#![allow(dead_code)]

use embreach::embedding::{SampleSet, QueryPoint};
use embreach::PointSet;
use nalgebra::DMatrix;
use rand::Rng;

/// Smallest eigenvalue of `G + λMI` by dense symmetric eigendecomposition.
pub fn min_eigenvalue(g: &[Vec<f64>], lambda: f64) -> f64 {
    let m = g.len();
    let a = DMatrix::from_fn(m, m, |i, j| g[i][j] + if i == j { lambda * m as f64 } else { 0.0 });
    a.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Gaussian kernel written out independently of the library.
pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn gram_rows(points: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| points.iter().map(|b| rbf(a, b, sigma)).collect())
        .collect()
}

/// `P(lo ≤ μ + s·Z ≤ hi)` by composite Simpson quadrature of the density.
pub fn normal_mass(mu: f64, s: f64, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo.max(mu - 12.0 * s), hi.min(mu + 12.0 * s));
    if a >= b {
        return 0.0;
    }
    let n = 20_000;
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-(x - mu) * (x - mu) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = pdf(a) + pdf(b);
    for i in 1..n {
        acc += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

pub fn random_sample<R: Rng>(rng: &mut R, m: usize, n: usize, spread: f64) -> SampleSet {
    let draw = |rng: &mut R, d: usize| -> Vec<f64> { (0..d).map(|_| rng.random_range(-spread..spread)).collect() };
    let mut s = SampleSet::empty(n, 1);
    for _ in 0..m {
        let x = draw(rng, n);
        let u = draw(rng, 1);
        let y = draw(rng, n);
        s.push(&x, &u, &y).unwrap();
    }
    s
}

pub fn query(x: &[f64], u: f64) -> QueryPoint {
    QueryPoint::new(x.to_vec(), vec![u])
}

/// The 3×3 probe lattice `{a, 0, −a}²` used by the Monte-Carlo checks.
pub fn probe_lattice(a: f64) -> PointSet {
    let mut p = PointSet::empty(2);
    for y in [-a, 0.0, a] {
        for x in [-a, 0.0, a] {
            p.push(&[x, y]).unwrap();
        }
    }
    p
}
