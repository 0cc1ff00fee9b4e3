use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sparse feature vector stored as `(index, value)` pairs.
///
/// Indices are strictly increasing and no stored value is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct SparseVector<T = f64> {
    entries: Vec<(usize, T)>,
}

impl<T: Scalar> Default for SparseVector<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> SparseVector<T> {
    pub fn new() -> Self {
        SparseVector {
            entries: Vec::new(),
        }
    }

    /// Validates ordering, finiteness and the no-explicit-zero rule.
    pub fn from_entries(entries: Vec<(usize, T)>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::SparseVector(format!(
                    "indices not strictly increasing at {} -> {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        if let Some(&(i, v)) = entries.iter().find(|(_, v)| *v == T::zero() || !v.is_finite()) {
            return Err(Error::SparseVector(format!(
                "entry {} has stored value {}",
                i, v
            )));
        }
        Ok(SparseVector { entries })
    }

    /// Builds from unordered pairs, summing duplicates and dropping zeros.
    pub fn from_unsorted(mut entries: Vec<(usize, T)>) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(usize, T)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 = last.1 + v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|&(_, v)| v != T::zero());
        SparseVector { entries: merged }
    }

    pub fn entries(&self) -> &[(usize, T)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the largest stored index, or 0 when empty.
    pub fn min_dimension(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i + 1)
    }

    pub fn get(&self, index: usize) -> T {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(T::zero(), |pos| self.entries[pos].1)
    }

    pub fn check_dimension(&self, size: usize) -> Result<()> {
        match self.entries.last() {
            Some(&(index, _)) if index >= size => Err(Error::IndexOutOfRange { index, size }),
            _ => Ok(()),
        }
    }

    /// Keeps only entries whose index lies in `range`.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Self {
        SparseVector {
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|(i, _)| range.contains(i))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> SparseVector<U> {
        SparseVector {
            entries: self
                .entries
                .iter()
                .map(|&(i, v)| (i, U::of(v.as_f64())))
                .collect(),
        }
    }

    pub(crate) fn clear(&mut self) {
        self.entries.clear();
    }

    pub(crate) fn push_unchecked(&mut self, index: usize, value: T) {
        debug_assert!(self.entries.last().is_none_or(|&(i, _)| i < index));
        self.entries.push((index, value));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unordered_and_zero_entries() {
        assert!(SparseVector::from_entries(vec![(2, 1.0), (1, 1.0)]).is_err());
        assert!(SparseVector::from_entries(vec![(1, 1.0), (1, 2.0)]).is_err());
        assert!(SparseVector::from_entries(vec![(0, 0.0)]).is_err());
        assert!(SparseVector::from_entries(vec![(0, f64::NAN)]).is_err());
        assert!(SparseVector::from_entries(vec![(0, 1.0), (4, 2.0)]).is_ok());
    }

    #[test]
    fn from_unsorted_merges_duplicates() {
        let v = SparseVector::from_unsorted(vec![(3, 1.0), (1, 2.0), (3, 1.0), (2, 0.0)]);
        assert_eq!(v.entries(), &[(1, 2.0), (3, 2.0)]);
        assert_eq!(v.get(3), 2.0);
        assert_eq!(v.get(2), 0.0);
    }

    #[test]
    fn dimension_check() {
        let v = SparseVector::from_entries(vec![(0, 1.0), (4, 1.0)]).unwrap();
        assert!(v.check_dimension(5).is_ok());
        assert!(matches!(
            v.check_dimension(4),
            Err(Error::IndexOutOfRange { index: 4, size: 4 })
        ));
    }
}
