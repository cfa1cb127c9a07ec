//! Contiguous row-major storage for lists of equal-dimension points.

use crate::error::{Error, Result};

/// A list of points sharing one dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    /// An empty set whose future rows have `dim` coordinates.
    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::Input("zero-dimensional points carry no data".into()));
            }
        } else if data.len() % dim != 0 {
            return Err(Error::Input(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptyInput("point list"));
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            crate::error::check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        crate::error::check_dim(self.dim, row.len())?;
        self.data.extend_from_slice(row);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Row-wise concatenation `[self_i, other_i]`.
    pub fn hstack(&self, other: &PointSet) -> Result<PointSet> {
        crate::error::check_dim(self.len(), other.len())?;
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(dim * self.len());
        for i in 0..self.len() {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(PointSet { dim, data })
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut data = Vec::with_capacity(self.dim * indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        PointSet { dim: self.dim, data }
    }

    pub fn extend(&mut self, other: &PointSet) -> Result<()> {
        crate::error::check_dim(self.dim, other.dim)?;
        self.data.extend_from_slice(&other.data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let p = PointSet::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.row(1), &[3.0, 4.0]);
        assert_eq!(p.to_rows(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(
            PointSet::from_rows(&rows),
            Err(Error::Dimension { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn hstack_joins_columns() {
        let a = PointSet::from_rows(&[[1.0], [2.0]]).unwrap();
        let b = PointSet::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let c = a.hstack(&b).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.row(1), &[2.0, 7.0, 8.0]);
    }

    #[test]
    fn zero_dim_sets_are_empty() {
        let p = PointSet::empty(0);
        assert_eq!(p.len(), 0);
        assert_eq!(p.rows().count(), 0);
    }
}
