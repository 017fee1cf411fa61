//! Flat parameter vectors and the head/head/shared segment layout.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Segment lengths for a parameter vector split as `[head1 | head2 | shared]`.
///
/// `head1` and `head2` hold the task-specific parameters of a two-task model;
/// `shared` holds the trunk parameters both tasks read and write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub head1: usize,
    pub head2: usize,
    pub shared: usize,
}

impl Partition {
    pub fn new(head1: usize, head2: usize, shared: usize) -> Self {
        Partition {
            head1,
            head2,
            shared,
        }
    }

    pub fn total(&self) -> usize {
        self.head1 + self.head2 + self.shared
    }

    pub fn head1_range(&self) -> std::ops::Range<usize> {
        0..self.head1
    }

    pub fn head2_range(&self) -> std::ops::Range<usize> {
        self.head1..self.head1 + self.head2
    }

    pub fn shared_range(&self) -> std::ops::Range<usize> {
        self.head1 + self.head2..self.total()
    }

    /// Extracts the shared-segment block of a full-length vector.
    pub fn shared_block(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.shared,
            self.shared_range().map(|i| full[i]),
        )
    }

    /// Places a shared-segment block into a full-length vector, zero elsewhere.
    pub fn embed_shared(&self, block: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.total());
        for (i, idx) in self.shared_range().enumerate() {
            full[idx] = block[i];
        }
        full
    }
}

/// A flat parameter vector, optionally carrying its segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: DVector<f64>,
    partition: Option<Partition>,
}

impl ParamVector {
    /// Wraps a vector with no segment layout. Rejects non-finite entries.
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector",
            });
        }
        Ok(ParamVector {
            values,
            partition: None,
        })
    }

    /// Wraps a vector together with its `[head1 | head2 | shared]` layout.
    pub fn with_partition(values: DVector<f64>, partition: Partition) -> Result<Self> {
        if partition.total() != values.len() {
            return Err(Error::BadPartition {
                head1: partition.head1,
                head2: partition.head2,
                shared: partition.shared,
                len: values.len(),
            });
        }
        let mut pv = Self::new(values)?;
        pv.partition = Some(partition);
        Ok(pv)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn partition(&self) -> Option<Partition> {
        self.partition
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    /// Replaces the values, keeping the layout. The caller is responsible for
    /// finiteness; integrators and steppers check their own outputs.
    pub fn map_values(&self, values: DVector<f64>) -> ParamVector {
        debug_assert_eq!(values.len(), self.values.len());
        ParamVector {
            values,
            partition: self.partition,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_ranges_cover_layout() {
        let p = Partition::new(2, 3, 4);
        assert_eq!(p.total(), 9);
        assert_eq!(p.head1_range(), 0..2);
        assert_eq!(p.head2_range(), 2..5);
        assert_eq!(p.shared_range(), 5..9);
    }

    #[test]
    fn partition_must_sum_to_length() {
        let v = DVector::from_element(5, 1.0);
        assert!(ParamVector::with_partition(v.clone(), Partition::new(1, 1, 3)).is_ok());
        assert!(matches!(
            ParamVector::with_partition(v, Partition::new(1, 1, 2)),
            Err(Error::BadPartition { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_entries() {
        let v = DVector::from_column_slice(&[1.0, f64::NAN]);
        assert!(matches!(
            ParamVector::new(v),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn embed_and_extract_shared_block() {
        let p = Partition::new(1, 2, 2);
        let block = DVector::from_column_slice(&[7.0, -3.0]);
        let full = p.embed_shared(&block);
        assert_eq!(full.as_slice(), &[0.0, 0.0, 0.0, 7.0, -3.0]);
        assert_eq!(p.shared_block(&full), block);
    }

    #[test]
    fn empty_heads_partition_is_all_shared() {
        let p = Partition::new(0, 0, 3);
        let v = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(p.shared_block(&v), v);
    }
}
