use crate::error::{GateError, Result};

/// Row-major store of `count` vectors of dimension `dim`. Ids are the row
/// indices `0..count`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDataset {
    dim: usize,
    data: Vec<f32>,
}

/// Query vectors share the dataset representation; pair them with a base
/// dataset through [`VectorDataset::check_compatible`].
pub type QuerySet = VectorDataset;

impl VectorDataset {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(GateError::invalid("vector dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(GateError::invalid(format!("data length {} is not a multiple of dim {dim}", data.len())));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(GateError::invalid(format!(
                "non-finite component in vector {} (component {})",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(GateError::invalid(format!("row {i} has dimension {} (expected {dim})", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Copies the selected rows, in order, into a new set.
    pub fn select(&self, ids: &[usize]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(self.get(i));
        }
        Self { dim: self.dim, data }
    }

    pub fn check_compatible(&self, other: &VectorDataset) -> Result<()> {
        if self.dim != other.dim {
            return Err(GateError::invalid(format!("dimension mismatch: {} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }

    pub fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(GateError::invalid(format!(
                "query dimension {} does not match dataset dimension {}",
                q.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Component-wise mean of all vectors, accumulated in f64.
    pub fn mean(&self) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        for v in self.iter() {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += *x as f64;
            }
        }
        let n = self.len().max(1) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }

    /// Id of the vector closest to the dataset mean (ties to smaller id).
    pub fn medoid(&self) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        let mean = self.mean();
        let mut best = (f32::INFINITY, 0usize);
        for (i, v) in self.iter().enumerate() {
            let d = crate::distance::l2_sq(v, &mean);
            if d < best.0 {
                best = (d, i);
            }
        }
        Some(best.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(VectorDataset::new(0, vec![]).is_err());
        assert!(VectorDataset::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(VectorDataset::new(2, vec![1.0, f32::NAN]).is_err());
        assert!(VectorDataset::new(1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn medoid_of_line() {
        let ds = VectorDataset::new(1, vec![0.0, 1.0, 2.0, 10.0]).unwrap();
        // mean is 3.25
        assert_eq!(ds.medoid(), Some(2));
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.get(3), &[10.0]);
    }
}
