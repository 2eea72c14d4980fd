//! Sequences of update maps: training by iterated ridge regression and
//! inference by fixed-point iteration `x <- x - D_t h(x)`.

mod infer;
mod io;
mod ridge;
mod sparse;
mod train;

pub use infer::{infer, infer_traced, InferenceOutcome, InferenceSettings};
pub use io::{load_sum, read_sum, save_sum, write_sum, SUM_MAGIC};
pub use ridge::{ridge_objective, ridge_solve, RidgeAccumulator};
pub use sparse::SparseVec;
pub use train::{
    monotonicity_probe, train_sum, training_error, MapDiagnostics, TrainOptions, TrainReport,
    TrainingInstance,
};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Feature function `h: R^p -> R^f` of one problem instance.
///
/// Implementations must be pure: the same `x` always yields the same vector.
pub trait FeatureMap: Sync {
    fn feature_dim(&self) -> usize;
    fn features(&self, x: &DVector<f64>) -> Result<SparseVec>;
}

impl<T: FeatureMap + ?Sized> FeatureMap for &T {
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn features(&self, x: &DVector<f64>) -> Result<SparseVec> {
        (**self).features(x)
    }
}

impl<T: FeatureMap + ?Sized> FeatureMap for Box<T> {
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn features(&self, x: &DVector<f64>) -> Result<SparseVec> {
        (**self).features(x)
    }
}

/// Wraps a closure as a feature map.
pub struct FnFeatures<F> {
    dim: usize,
    f: F,
}

impl<F> FnFeatures<F>
where
    F: Fn(&DVector<f64>) -> Result<SparseVec> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> FeatureMap for FnFeatures<F>
where
    F: Fn(&DVector<f64>) -> Result<SparseVec> + Sync,
{
    fn feature_dim(&self) -> usize {
        self.dim
    }
    fn features(&self, x: &DVector<f64>) -> Result<SparseVec> {
        (self.f)(x)
    }
}

/// A trained SUM: maps `D_1..D_T`, each `p x f`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateMapSequence {
    param_dim: usize,
    feature_dim: usize,
    maps: Vec<DMatrix<f64>>,
    lambda: f64,
    training_rmse: Vec<f64>,
}

impl UpdateMapSequence {
    pub fn new(
        maps: Vec<DMatrix<f64>>,
        lambda: f64,
        training_rmse: Vec<f64>,
    ) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("a SUM needs at least one map"))?;
        let (p, f) = first.shape();
        if p == 0 || f == 0 {
            return Err(Error::invalid("maps must have positive dimensions"));
        }
        for m in &maps {
            Error::check_dim("map rows", p, m.nrows())?;
            Error::check_dim("map columns", f, m.ncols())?;
        }
        Error::check_dim("training rmse length", maps.len() + 1, training_rmse.len())?;
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self {
            param_dim: p,
            feature_dim: f,
            maps,
            lambda,
            training_rmse,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of maps `T`.
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[DMatrix<f64>] {
        &self.maps
    }

    pub fn map(&self, t: usize) -> &DMatrix<f64> {
        &self.maps[t]
    }

    pub fn last_map(&self) -> &DMatrix<f64> {
        self.maps.last().expect("SUM is never empty")
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn training_rmse(&self) -> &[f64] {
        &self.training_rmse
    }

    /// Keeps the first `t` maps.
    pub fn truncated(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.len() {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-map SUM to {t} maps",
                self.len()
            )));
        }
        Self::new(
            self.maps[..t].to_vec(),
            self.lambda,
            self.training_rmse[..=t].to_vec(),
        )
    }
}
