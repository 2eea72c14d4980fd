//! Histogram features that stand in for the gradient of an unknown penalty.
//!
//! For residual terms `g_j: R^p -> R^d` with Jacobians `dg_j/dx`, the feature
//! concatenates, over parameter index `l` (slowest) and residual component `k`,
//! the Jacobian entry `[dg_j/dx]_{k,l}` placed in the grid cell that `g_j(x)`
//! falls into, averaged over `j`. Its length is `p * d * r^d`.

use nalgebra::DVector;

use crate::sum::{FeatureMap, SparseVec};
use crate::{Error, Result};

/// Bins `[lo, hi]` of one residual component into `bins` equal cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisBins {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl AxisBins {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("bin range needs lo < hi, got [{lo}, {hi}]")));
        }
        if bins < 2 {
            return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
        }
        Ok(Self { lo, hi, bins })
    }

    /// 1-based bin of `y`; out-of-range values clamp to the boundary bins.
    pub fn bin_index(&self, y: f64) -> usize {
        bin_index(y, self.lo, self.hi, self.bins)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    /// Center of the 1-based bin `k`.
    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 - 0.5) * self.width()
    }
}

/// `min(r, max(1, 1 + floor((y - lo) / ((hi - lo) / r))))`.
pub fn bin_index(y: f64, lo: f64, hi: f64, r: usize) -> usize {
    let width = (hi - lo) / r as f64;
    let raw = 1.0 + ((y - lo) / width).floor();
    if raw <= 1.0 {
        1
    } else if raw >= r as f64 {
        r
    } else {
        raw as usize
    }
}

/// A `d`-dimensional grid with the same number of bins on every axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    axes: Vec<AxisBins>,
}

impl GridSpec {
    pub fn uniform(dims: usize, bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("grid needs at least one dimension"));
        }
        let axis = AxisBins::new(lo, hi, bins)?;
        Ok(Self {
            axes: vec![axis; dims],
        })
    }

    pub fn from_axes(axes: Vec<AxisBins>) -> Result<Self> {
        let first = axes
            .first()
            .ok_or_else(|| Error::invalid("grid needs at least one dimension"))?;
        if axes.iter().any(|a| a.bins != first.bins) {
            return Err(Error::invalid("all grid axes must share the bin count"));
        }
        Ok(Self { axes })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn bins(&self) -> usize {
        self.axes[0].bins
    }

    pub fn axis(&self, k: usize) -> &AxisBins {
        &self.axes[k]
    }

    /// `r^d`, or an error on overflow.
    pub fn cells(&self) -> Result<usize> {
        let d = u32::try_from(self.dims()).map_err(|_| Error::invalid("grid dimension too large"))?;
        self.bins()
            .checked_pow(d)
            .ok_or_else(|| Error::invalid("grid cell count overflows"))
    }

    /// 0-based row-major cell of a residual, first component slowest.
    pub fn cell_of(&self, residual: &[f64]) -> usize {
        let r = self.bins();
        residual
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&y, axis)| acc * r + (axis.bin_index(y) - 1))
    }
}

/// `p * d * r^d`.
pub fn feature_dim(grid: &GridSpec, param_dim: usize) -> Result<usize> {
    grid.cells()?
        .checked_mul(grid.dims())
        .and_then(|n| n.checked_mul(param_dim))
        .ok_or_else(|| Error::invalid("feature dimension overflows"))
}

/// A set of residual functions `g_j` with Jacobians.
pub trait ResidualModel: Sync {
    fn param_dim(&self) -> usize;
    fn residual_dim(&self) -> usize;
    fn num_terms(&self) -> usize;

    /// Writes `g_j(x)` into `residual` (length `d`) and `dg_j/dx` row-major
    /// into `jacobian` (`d x p`). Returns `false` when the term is undefined at
    /// `x`; such terms are left out of the feature.
    fn evaluate(&self, j: usize, x: &[f64], residual: &mut [f64], jacobian: &mut [f64]) -> bool;
}

/// Builds the histogram feature of `model` at `x`.
pub fn build_feature<M: ResidualModel + ?Sized>(
    x: &[f64],
    model: &M,
    grid: &GridSpec,
) -> Result<SparseVec> {
    let p = model.param_dim();
    let d = model.residual_dim();
    Error::check_dim("parameter", p, x.len())?;
    Error::check_dim("grid dimension", d, grid.dims())?;
    let cells = grid.cells()?;
    let dim = feature_dim(grid, p)?;
    let terms = model.num_terms();
    if terms == 0 {
        return Ok(SparseVec::zeros(dim));
    }
    let weight = 1.0 / terms as f64;

    let mut g = vec![0.0; d];
    let mut jac = vec![0.0; d * p];
    let mut pairs = Vec::with_capacity(terms * d * p);
    for j in 0..terms {
        if !model.evaluate(j, x, &mut g, &mut jac) {
            continue;
        }
        if g.iter().chain(&jac).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("residual term {j}")));
        }
        let cell = grid.cell_of(&g);
        for l in 0..p {
            for k in 0..d {
                let value = jac[k * p + l];
                if value != 0.0 {
                    pairs.push(((l * d + k) * cells + cell, weight * value));
                }
            }
        }
    }
    Ok(SparseVec::from_pairs(dim, pairs))
}

/// A residual model bound to a grid, usable as a SUM feature map.
pub struct GridFeature<M> {
    pub model: M,
    pub grid: GridSpec,
    dim: usize,
}

impl<M: ResidualModel> GridFeature<M> {
    pub fn new(model: M, grid: GridSpec) -> Result<Self> {
        Error::check_dim("grid dimension", model.residual_dim(), grid.dims())?;
        let dim = feature_dim(&grid, model.param_dim())?;
        Ok(Self { model, grid, dim })
    }
}

impl<M: ResidualModel> FeatureMap for GridFeature<M> {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, x: &DVector<f64>) -> Result<SparseVec> {
        build_feature(x.as_slice(), &self.model, &self.grid)
    }
}
