//! Ridge regression for a single update map.
//!
//! The map `D` minimizes `(1/N) sum ||r_i - D h_i||^2 + lambda ||D||_F^2`.
//! Statistics are accumulated as `H = sum h h^T`, `C = sum r h^T` and
//! `sum ||r||^2`, and the minimizer solves `D (H/N + lambda I) = C/N`.

use nalgebra::{DMatrix, DVector};

use super::SparseVec;
use crate::{Error, Result};

const DENSE_BATCH: usize = 128;
const ZERO_LAMBDA_JITTER: f64 = 1e-12;

/// Running sufficient statistics of the ridge objective.
#[derive(Clone, Debug)]
pub struct RidgeAccumulator {
    param_dim: usize,
    feature_dim: usize,
    count: usize,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    residual_sq: f64,
    batch_features: Vec<f64>,
    batch_residuals: Vec<f64>,
    batch_rows: usize,
}

impl RidgeAccumulator {
    pub fn new(param_dim: usize, feature_dim: usize) -> Self {
        Self {
            param_dim,
            feature_dim,
            count: 0,
            gram: DMatrix::zeros(feature_dim, feature_dim),
            cross: DMatrix::zeros(param_dim, feature_dim),
            residual_sq: 0.0,
            batch_features: Vec::new(),
            batch_residuals: Vec::new(),
            batch_rows: 0,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds one `(residual, feature)` pair. Dense-ish features are batched into
    /// a matrix product; sparse ones update the statistics directly.
    pub fn add(&mut self, residual: &[f64], feature: &SparseVec) -> Result<()> {
        Error::check_dim("ridge residual", self.param_dim, residual.len())?;
        Error::check_dim("ridge feature", self.feature_dim, feature.dim())?;
        if residual.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ridge residual".into()));
        }
        if !feature.is_finite() {
            return Err(Error::NonFinite("ridge feature".into()));
        }
        self.count += 1;
        self.residual_sq += residual.iter().map(|v| v * v).sum::<f64>();

        if feature.nnz() * 8 > self.feature_dim {
            let start = self.batch_features.len();
            self.batch_features.resize(start + self.feature_dim, 0.0);
            for &(i, v) in feature.entries() {
                self.batch_features[start + i] = v;
            }
            self.batch_residuals.extend_from_slice(residual);
            self.batch_rows += 1;
            if self.batch_rows == DENSE_BATCH {
                self.flush();
            }
            return Ok(());
        }

        self.accumulate(residual, feature.entries());
        Ok(())
    }

    /// Like [`RidgeAccumulator::add`] for a feature given as unsorted
    /// `(index, value)` pairs; repeated indices add up.
    pub fn add_entries(&mut self, residual: &[f64], entries: &[(usize, f64)]) -> Result<()> {
        Error::check_dim("ridge residual", self.param_dim, residual.len())?;
        if residual.iter().any(|v| !v.is_finite()) || entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite("ridge sample".into()));
        }
        if let Some(&(i, _)) = entries.iter().find(|(i, _)| *i >= self.feature_dim) {
            return Err(Error::invalid(format!("feature index {i} out of range")));
        }
        self.count += 1;
        self.residual_sq += residual.iter().map(|v| v * v).sum::<f64>();
        self.accumulate(residual, entries);
        Ok(())
    }

    fn accumulate(&mut self, residual: &[f64], entries: &[(usize, f64)]) {
        for &(a, va) in entries {
            for &(b, vb) in entries {
                self.gram[(a, b)] += va * vb;
            }
            for (row, &r) in residual.iter().enumerate() {
                self.cross[(row, a)] += r * va;
            }
        }
    }

    fn flush(&mut self) {
        if self.batch_rows == 0 {
            return;
        }
        let rows = self.batch_rows;
        // Column k of `ft` is the k-th buffered feature.
        let ft = DMatrix::from_vec(
            self.feature_dim,
            rows,
            std::mem::take(&mut self.batch_features),
        );
        let rt = DMatrix::from_vec(
            self.param_dim,
            rows,
            std::mem::take(&mut self.batch_residuals),
        );
        let f_rows = ft.transpose();
        self.gram.gemm(1.0, &ft, &f_rows, 1.0);
        self.cross.gemm(1.0, &rt, &f_rows, 1.0);
        self.batch_rows = 0;
    }

    /// Normalized statistics `(H/N, C/N, sum||r||^2 / N)`.
    pub fn moments(&mut self) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
        self.flush();
        if self.count == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let n = self.count as f64;
        Ok((&self.gram / n, &self.cross / n, self.residual_sq / n))
    }

    /// Solves for the map. `lambda == 0` is regularized by a `1e-12` jitter.
    pub fn solve(&mut self, lambda: f64) -> Result<DMatrix<f64>> {
        let (gram, cross, _) = self.moments()?;
        solve_normal_equations(gram, &cross, lambda)
    }

    /// Ridge objective of `map` computed from the accumulated statistics.
    pub fn objective(&mut self, map: &DMatrix<f64>, lambda: f64) -> Result<f64> {
        let (gram, cross, rr) = self.moments()?;
        Ok(objective_from_moments(map, &gram, &cross, rr, lambda))
    }
}

pub(crate) fn objective_from_moments(
    map: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    residual_sq: f64,
    lambda: f64,
) -> f64 {
    let dh = map * gram;
    residual_sq - 2.0 * map.dot(cross) + dh.dot(map) + lambda * map.norm_squared()
}

fn solve_normal_equations(
    mut gram: DMatrix<f64>,
    cross: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge weight must be >= 0, got {lambda}")));
    }
    let shift = if lambda > 0.0 { lambda } else { ZERO_LAMBDA_JITTER };
    for i in 0..gram.nrows() {
        gram[(i, i)] += shift;
    }
    let rhs = cross.transpose();
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(&rhs).transpose());
    }
    // Only reachable when lambda is zero and the Gram matrix is rank deficient.
    let pinv = gram
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(format!("ridge pseudo-inverse: {e}")))?;
    Ok((pinv * rhs).transpose())
}

/// Solves one ridge problem from explicit `(residual, feature)` lists.
pub fn ridge_solve(
    residuals: &[DVector<f64>],
    features: &[SparseVec],
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let first = residuals.first().ok_or(Error::EmptyTrainingSet)?;
    let feature_dim = features.first().ok_or(Error::EmptyTrainingSet)?.dim();
    Error::check_dim("ridge sample count", residuals.len(), features.len())?;
    let mut acc = RidgeAccumulator::new(first.len(), feature_dim);
    for (r, h) in residuals.iter().zip(features) {
        acc.add(r.as_slice(), h)?;
    }
    acc.solve(lambda)
}

/// Direct evaluation of the ridge objective.
pub fn ridge_objective(
    map: &DMatrix<f64>,
    residuals: &[DVector<f64>],
    features: &[SparseVec],
    lambda: f64,
) -> f64 {
    let n = residuals.len() as f64;
    let fit: f64 = residuals
        .iter()
        .zip(features)
        .map(|(r, h)| (r - h.left_mul(map)).norm_squared())
        .sum();
    fit / n + lambda * map.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        f: usize,
    ) -> (Vec<DVector<f64>>, Vec<SparseVec>) {
        let residuals = (0..n)
            .map(|_| DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let features = (0..n)
            .map(|_| {
                let dense: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
                SparseVec::from_dense(&dense)
            })
            .collect();
        (residuals, features)
    }

    #[test]
    fn single_basis_feature_has_closed_form() {
        let r = DVector::from_vec(vec![3.0, -1.5]);
        let h = SparseVec::from_pairs(4, vec![(0, 1.0)]);
        let d = ridge_solve(&[r.clone()], &[h], 0.5).unwrap();
        for row in 0..2 {
            assert!((d[(row, 0)] - r[row] / 1.5).abs() < 1e-14);
            for col in 1..4 {
                assert_eq!(d[(row, col)], 0.0);
            }
        }
    }

    #[test]
    fn unsorted_entries_match_sparse_vectors() {
        let mut a = RidgeAccumulator::new(1, 6);
        let mut b = RidgeAccumulator::new(1, 6);
        let samples: [(f64, Vec<(usize, f64)>); 3] = [
            (0.5, vec![(3, 1.0), (0, 1.0), (3, 1.0)]),
            (-1.0, vec![(5, 2.0)]),
            (0.25, vec![(1, 1.0), (0, -1.0), (4, 1.0), (1, 1.0)]),
        ];
        for (r, e) in &samples {
            a.add_entries(&[*r], e).unwrap();
            b.add(&[*r], &SparseVec::from_pairs(6, e.clone())).unwrap();
        }
        assert_eq!(a.moments().unwrap(), b.moments().unwrap());
        assert!(a.add_entries(&[0.0], &[(6, 1.0)]).is_err());
        assert!(a.add_entries(&[f64::NAN], &[(0, 1.0)]).is_err());
    }

    #[test]
    fn zero_residuals_give_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut residuals, features) = random_problem(&mut rng, 10, 2, 5);
        residuals.iter_mut().for_each(|r| r.fill(0.0));
        let d = ridge_solve(&residuals, &features, 1e-3).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_stacked_least_squares_oracle() {
        // Stack [F; sqrt(N lambda) I] D^T = [R; 0] and solve with a pseudo-inverse.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, p, f, lambda) = (20, 3, 7, 1e-3);
        let (residuals, features) = random_problem(&mut rng, n, p, f);
        let d = ridge_solve(&residuals, &features, lambda).unwrap();

        let mut a = DMatrix::zeros(n + f, f);
        let mut b = DMatrix::zeros(n + f, p);
        for i in 0..n {
            let dense = features[i].to_dense();
            for k in 0..f {
                a[(i, k)] = dense[k];
            }
            for k in 0..p {
                b[(i, k)] = residuals[i][k];
            }
        }
        let s = (n as f64 * lambda).sqrt();
        for k in 0..f {
            a[(n + k, k)] = s;
        }
        let oracle = (a.pseudo_inverse(1e-14).unwrap() * b).transpose();
        let ours = ridge_objective(&d, &residuals, &features, lambda);
        let theirs = ridge_objective(&oracle, &residuals, &features, lambda);
        assert!(ours <= theirs + 1e-9, "{ours} vs {theirs}");
    }

    #[test]
    fn moment_objective_matches_direct_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (residuals, features) = random_problem(&mut rng, 300, 2, 9);
        let mut acc = RidgeAccumulator::new(2, 9);
        for (r, h) in residuals.iter().zip(&features) {
            acc.add(r.as_slice(), h).unwrap();
        }
        let d = DMatrix::from_fn(2, 9, |_, _| rng.random_range(-1.0..1.0));
        let direct = ridge_objective(&d, &residuals, &features, 0.01);
        let moments = acc.objective(&d, 0.01).unwrap();
        assert!((direct - moments).abs() < 1e-10 * direct.max(1.0));
    }

    #[test]
    fn sparse_and_batched_paths_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (f, nnz) in [(64, 2), (4, 4)] {
            let mut acc = RidgeAccumulator::new(1, f);
            let mut gram = DMatrix::<f64>::zeros(f, f);
            let mut cross = DMatrix::<f64>::zeros(1, f);
            for _ in 0..300 {
                let pairs: Vec<(usize, f64)> = (0..nnz)
                    .map(|k| ((k * 7 + rng.random_range(0..f)) % f, rng.random_range(-1.0..1.0)))
                    .collect();
                let h = SparseVec::from_pairs(f, pairs);
                let r = rng.random_range(-1.0..1.0);
                let dense = h.to_dense();
                for i in 0..f {
                    cross[(0, i)] += r * dense[i];
                    for j in 0..f {
                        gram[(i, j)] += dense[i] * dense[j];
                    }
                }
                acc.add(&[r], &h).unwrap();
            }
            let (g, c, _) = acc.moments().unwrap();
            assert!((g * 300.0 - &gram).abs().max() < 1e-10);
            assert!((c * 300.0 - &cross).abs().max() < 1e-10);
        }
    }

    #[test]
    fn zero_lambda_is_accepted_and_negative_rejected() {
        let h = SparseVec::from_pairs(3, vec![(1, 2.0)]);
        let r = DVector::from_vec(vec![4.0]);
        let d = ridge_solve(&[r.clone()], &[h.clone()], 0.0).unwrap();
        assert!((d[(0, 1)] - 2.0).abs() < 1e-9);
        assert!(ridge_solve(&[r], &[h], -1.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut acc = RidgeAccumulator::new(2, 3);
        let h = SparseVec::zeros(4);
        assert!(matches!(
            acc.add(&[0.0, 0.0], &h),
            Err(Error::DimensionMismatch { .. })
        ));
        let h = SparseVec::from_pairs(3, vec![(0, f64::NAN)]);
        assert!(matches!(acc.add(&[0.0, 0.0], &h), Err(Error::NonFinite(_))));
    }

    proptest::proptest! {
        #[test]
        fn returned_map_is_a_local_minimum(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (residuals, features) = random_problem(&mut rng, 12, 2, 5);
            let lambda = 1e-2;
            let d = ridge_solve(&residuals, &features, lambda).unwrap();
            let base = ridge_objective(&d, &residuals, &features, lambda);
            for _ in 0..10 {
                let mut dir = DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
                let n = dir.norm();
                dir /= n / 1e-3;
                let moved = ridge_objective(&(&d + dir), &residuals, &features, lambda);
                proptest::prop_assert!(moved >= base - 1e-9);
            }
        }
    }
}
