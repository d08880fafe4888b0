use nalgebra::DVector;

use crate::error::{Error, Result};

/// A vector-valued sequence on a contiguous integer range `[start, start + len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    start: i64,
    values: Vec<DVector<f64>>,
}

impl Sequence {
    pub fn new(start: i64, values: Vec<DVector<f64>>) -> Self {
        Self { start, values }
    }

    pub fn zeros(start: i64, end: i64, dim: usize) -> Self {
        let len = (end - start + 1).max(0) as usize;
        Self::new(start, vec![DVector::zeros(dim); len])
    }

    pub fn from_fn(start: i64, end: i64, mut f: impl FnMut(i64) -> DVector<f64>) -> Self {
        Self::new(start, (start..=end).map(&mut f).collect())
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// Last index (inclusive).
    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.start && n <= self.end()
    }

    pub fn get(&self, n: i64) -> Option<&DVector<f64>> {
        if self.contains(n) {
            Some(&self.values[(n - self.start) as usize])
        } else {
            None
        }
    }

    pub fn at(&self, n: i64) -> Result<&DVector<f64>> {
        self.get(n).ok_or(Error::IndexOutOfWindow {
            n,
            lo: self.start,
            hi: self.end(),
        })
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &DVector<f64>)> {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.start + i as i64, v))
    }

    /// Sup of Euclidean norms.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Sup norm of the difference over the common index range.
    pub fn sup_distance(&self, other: &Sequence) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        (lo..=hi)
            .map(|n| (&self.values[(n - self.start) as usize] - &other.values[(n - other.start) as usize]).norm())
            .fold(0.0, f64::max)
    }

    /// Restriction to `[lo, hi]`, which must lie inside the sequence.
    pub fn restrict(&self, lo: i64, hi: i64) -> Result<Sequence> {
        self.at(lo)?;
        self.at(hi)?;
        let a = (lo - self.start) as usize;
        let b = (hi - self.start) as usize;
        Ok(Sequence::new(lo, self.values[a..=b].to_vec()))
    }

    pub fn map(&self, mut f: impl FnMut(i64, &DVector<f64>) -> DVector<f64>) -> Sequence {
        Sequence::new(self.start, self.iter().map(|(n, v)| f(n, v)).collect())
    }

    /// Pointwise `self + scale * other` on identical ranges.
    pub fn axpy(&self, scale: f64, other: &Sequence) -> Sequence {
        debug_assert_eq!(self.start, other.start);
        debug_assert_eq!(self.len(), other.len());
        Sequence::new(
            self.start,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b * scale)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Sequence {
        Sequence::new(self.start, self.values.iter().map(|v| v * s).collect())
    }
}
