use nalgebra::{DMatrix, DVector};

/// Feature vector stored as sorted, de-duplicated `(index, value)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVec {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from unsorted pairs; repeated indices are summed and exact zeros dropped.
    ///
    /// Panics if an index is out of range.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            assert!(i < dim, "sparse index {i} out of range for dimension {dim}");
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        Self { dim, entries }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        Self {
            dim: values.len(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|&(_, v)| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, v) in &mut self.entries {
            *v *= factor;
        }
        if factor == 0.0 {
            self.entries.clear();
        }
    }

    /// Element-wise multiplication by a dense vector of the same dimension.
    pub fn scale_elementwise(&mut self, factors: &[f64]) {
        for (i, v) in &mut self.entries {
            *v *= factors[*i];
        }
        self.entries.retain(|&(_, v)| v != 0.0);
    }

    /// `map * self` for a `p x dim` matrix.
    pub fn left_mul(&self, map: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(map.nrows());
        for &(i, v) in &self.entries {
            out.axpy(v, &map.column(i), 1.0);
        }
        out
    }
}
