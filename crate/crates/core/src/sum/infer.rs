use nalgebra::DVector;

use super::{FeatureMap, UpdateMapSequence};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceSettings {
    pub max_iter: usize,
    /// Stop repeating the last map once `||D_T h(x)|| < epsilon`.
    pub epsilon: f64,
}

impl InferenceSettings {
    pub fn new(max_iter: usize, epsilon: f64) -> Self {
        Self { max_iter, epsilon }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceOutcome {
    pub x: DVector<f64>,
    /// Number of updates applied.
    pub iterations: usize,
    /// Norm of the last update computed (applied or not).
    pub final_update_norm: f64,
}

/// Applies maps `1..T` once each, then repeats `D_T` until its update is
/// shorter than `epsilon` or `max_iter` updates have been made.
pub fn infer<F: FeatureMap + ?Sized>(
    x0: &DVector<f64>,
    features: &F,
    sum: &UpdateMapSequence,
    settings: &InferenceSettings,
) -> Result<InferenceOutcome> {
    run(x0, features, sum, settings, |_| {})
}

/// Like [`infer`], also returning every iterate starting with `x0`.
pub fn infer_traced<F: FeatureMap + ?Sized>(
    x0: &DVector<f64>,
    features: &F,
    sum: &UpdateMapSequence,
    settings: &InferenceSettings,
) -> Result<(InferenceOutcome, Vec<DVector<f64>>)> {
    let mut trace = vec![x0.clone()];
    let out = run(x0, features, sum, settings, |x| trace.push(x.clone()))?;
    Ok((out, trace))
}

fn run<F: FeatureMap + ?Sized>(
    x0: &DVector<f64>,
    features: &F,
    sum: &UpdateMapSequence,
    settings: &InferenceSettings,
    mut observe: impl FnMut(&DVector<f64>),
) -> Result<InferenceOutcome> {
    Error::check_dim("initial parameter", sum.param_dim(), x0.len())?;
    Error::check_dim("feature map", sum.feature_dim(), features.feature_dim())?;
    if settings.max_iter < sum.len() {
        return Err(Error::invalid(format!(
            "max_iter {} is below the number of maps {}",
            settings.max_iter,
            sum.len()
        )));
    }
    if !(settings.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }

    let update = |x: &DVector<f64>, t: usize| -> Result<DVector<f64>> {
        let h = features.features(x)?;
        if !h.is_finite() {
            return Err(Error::NonFinite(format!("feature at iteration {}", t + 1)));
        }
        Ok(h.left_mul(sum.map(t)))
    };

    let mut x = x0.clone();
    let mut last_norm = 0.0;
    for t in 0..sum.len() {
        let dx = update(&x, t)?;
        last_norm = dx.norm();
        x -= dx;
        observe(&x);
    }
    let last = sum.len() - 1;
    let mut iterations = sum.len();
    while iterations < settings.max_iter {
        let dx = update(&x, last)?;
        last_norm = dx.norm();
        if last_norm < settings.epsilon {
            break;
        }
        x -= dx;
        observe(&x);
        iterations += 1;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inference iterate".into()));
    }
    Ok(InferenceOutcome {
        x,
        iterations,
        final_update_norm: last_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sum::{FnFeatures, SparseVec};
    use nalgebra::DMatrix;

    fn sum_of(maps: Vec<f64>) -> UpdateMapSequence {
        let n = maps.len();
        UpdateMapSequence::new(
            maps.into_iter()
                .map(|v| DMatrix::from_element(1, 1, v))
                .collect(),
            0.0,
            vec![0.0; n + 1],
        )
        .unwrap()
    }

    fn shift_feature() -> impl FeatureMap {
        FnFeatures::new(1, |x: &DVector<f64>| Ok(SparseVec::from_dense(&[x[0] - 2.0])))
    }

    #[test]
    fn zero_maps_return_start() {
        let x0 = DVector::from_vec(vec![0.7]);
        let out = infer(&x0, &shift_feature(), &sum_of(vec![0.0; 3]), &InferenceSettings::new(50, 1e-3)).unwrap();
        assert_eq!(out.x, x0);
        assert_eq!(out.iterations, 3);
    }

    #[test]
    fn infinite_epsilon_runs_exactly_t_maps() {
        let x0 = DVector::from_vec(vec![0.0]);
        let settings = InferenceSettings::new(100, f64::INFINITY);
        let out = infer(&x0, &shift_feature(), &sum_of(vec![0.5, 0.5]), &settings).unwrap();
        assert_eq!(out.iterations, 2);
        assert!((out.x[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn repeats_last_map_until_small_update() {
        let x0 = DVector::from_vec(vec![0.0]);
        let settings = InferenceSettings::new(1000, 1e-6);
        let out = infer(&x0, &shift_feature(), &sum_of(vec![0.1, 0.5]), &settings).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-5);
        assert!(out.final_update_norm < 1e-6);
        assert!(out.iterations < 1000);
    }

    #[test]
    fn iteration_cap_is_respected() {
        let x0 = DVector::from_vec(vec![0.0]);
        // Oscillates forever: x <- x - 2 (x - 2).
        let settings = InferenceSettings::new(17, 1e-9);
        let out = infer(&x0, &shift_feature(), &sum_of(vec![2.0]), &settings).unwrap();
        assert_eq!(out.iterations, 17);
        assert!(infer(&x0, &shift_feature(), &sum_of(vec![1.0; 3]), &InferenceSettings::new(2, 1.0)).is_err());
    }

    #[test]
    fn non_finite_features_abort() {
        let bad = FnFeatures::new(1, |_: &DVector<f64>| Ok(SparseVec::from_dense(&[f64::NAN])));
        let err = infer(&DVector::zeros(1), &bad, &sum_of(vec![1.0]), &InferenceSettings::new(5, 1e-3));
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn traces_are_bitwise_reproducible() {
        let x0 = DVector::from_vec(vec![-3.0]);
        let settings = InferenceSettings::new(40, 1e-12);
        let sum = sum_of(vec![0.3, 0.7, 0.45]);
        let (a, ta) = infer_traced(&x0, &shift_feature(), &sum, &settings).unwrap();
        let (b, tb) = infer_traced(&x0, &shift_feature(), &sum, &settings).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.len(), a.iterations + 1);
        for (u, v) in ta.iter().zip(&tb) {
            assert_eq!(u[0].to_bits(), v[0].to_bits());
        }
    }
}
