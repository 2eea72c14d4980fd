use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ridge::{objective_from_moments, RidgeAccumulator};
use super::{FeatureMap, SparseVec, UpdateMapSequence};
use crate::{Error, Result};

/// Instances are featurized in parallel in chunks of this size, then reduced
/// sequentially in instance order.
const CHUNK: usize = 256;

/// One training triplet `(x0, x*, h)`.
pub struct TrainingInstance<F> {
    pub x0: DVector<f64>,
    pub x_star: DVector<f64>,
    pub features: F,
}

impl<F: FeatureMap> TrainingInstance<F> {
    pub fn new(x0: DVector<f64>, x_star: DVector<f64>, features: F) -> Self {
        Self {
            x0,
            x_star,
            features,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// Maximum number of maps.
    pub maps: usize,
    pub lambda: f64,
    /// Stop after the first map that improves the training RMSE by no more
    /// than this (that map is kept); 0 disables.
    pub early_stop_rmse_delta: f64,
    /// Rescale every feature element by its maximum absolute value over the
    /// training set before each map is learned. The scale is folded into the
    /// stored map, so inference sees raw features.
    pub normalize_features: bool,
}

impl TrainOptions {
    pub fn new(maps: usize, lambda: f64) -> Self {
        Self {
            maps,
            lambda,
            early_stop_rmse_delta: 0.0,
            normalize_features: false,
        }
    }
}

/// Ridge objective of each learned map next to that of the zero map.
#[derive(Clone, Copy, Debug)]
pub struct MapDiagnostics {
    pub objective: f64,
    pub zero_map_objective: f64,
    pub map_norm_sq: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// RMSE before training and after each kept map.
    pub rmse: Vec<f64>,
    pub maps: Vec<MapDiagnostics>,
    pub final_estimates: Vec<DVector<f64>>,
}

/// Mean squared distance `sum ||x* - x||^2 / N`.
pub fn training_error(truth: &[DVector<f64>], estimates: &[DVector<f64>]) -> f64 {
    assert_eq!(truth.len(), estimates.len());
    if truth.is_empty() {
        return 0.0;
    }
    let total: f64 = truth
        .iter()
        .zip(estimates)
        .map(|(t, e)| (t - e).norm_squared())
        .sum();
    total / truth.len() as f64
}

fn rmse_of<F>(instances: &[TrainingInstance<F>], estimates: &[DVector<f64>]) -> f64 {
    let total: f64 = instances
        .iter()
        .zip(estimates)
        .map(|(inst, x)| (&inst.x_star - x).norm_squared())
        .sum();
    (total / instances.len() as f64).sqrt()
}

fn featurize<F: FeatureMap>(
    instances: &[TrainingInstance<F>],
    estimates: &[DVector<f64>],
) -> Result<Vec<SparseVec>> {
    instances
        .par_iter()
        .zip(estimates.par_iter())
        .map(|(inst, x)| {
            let h = inst.features.features(x)?;
            Error::check_dim("feature length", inst.features.feature_dim(), h.dim())?;
            if !h.is_finite() {
                return Err(Error::NonFinite("training feature".into()));
            }
            Ok(h)
        })
        .collect()
}

fn featurize_all<F: FeatureMap>(
    instances: &[TrainingInstance<F>],
    estimates: &[DVector<f64>],
) -> Result<Vec<SparseVec>> {
    let mut out = Vec::with_capacity(instances.len());
    for start in (0..instances.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(instances.len());
        out.extend(featurize(&instances[start..end], &estimates[start..end])?);
    }
    Ok(out)
}

fn element_scales(features: &[SparseVec], feature_dim: usize) -> Vec<f64> {
    let mut max_abs = vec![0.0f64; feature_dim];
    for h in features {
        for &(i, v) in h.entries() {
            max_abs[i] = max_abs[i].max(v.abs());
        }
    }
    max_abs
        .into_iter()
        .map(|m| if m > 0.0 { 1.0 / m } else { 1.0 })
        .collect()
}

/// Learns a SUM with the sequential ridge-regression loop.
pub fn train_sum<F: FeatureMap>(
    instances: &[TrainingInstance<F>],
    options: &TrainOptions,
) -> Result<(UpdateMapSequence, TrainReport)> {
    let first = instances.first().ok_or(Error::EmptyTrainingSet)?;
    if options.maps == 0 {
        return Err(Error::invalid("number of maps must be positive"));
    }
    if !(options.early_stop_rmse_delta >= 0.0) {
        return Err(Error::invalid("early-stop delta must be >= 0"));
    }
    let p = first.x0.len();
    let f = first.features.feature_dim();
    for inst in instances {
        Error::check_dim("initial parameter", p, inst.x0.len())?;
        Error::check_dim("ground-truth parameter", p, inst.x_star.len())?;
        Error::check_dim("instance feature dimension", f, inst.features.feature_dim())?;
    }

    let mut estimates: Vec<DVector<f64>> = instances.iter().map(|i| i.x0.clone()).collect();
    let mut rmse = vec![rmse_of(instances, &estimates)];
    let mut maps = Vec::new();
    let mut diagnostics = Vec::new();

    for t in 0..options.maps {
        let features = featurize_all(instances, &estimates)?;
        let scales = options
            .normalize_features
            .then(|| element_scales(&features, f));

        let mut acc = RidgeAccumulator::new(p, f);
        for ((inst, x), h) in instances.iter().zip(&estimates).zip(&features) {
            let residual = x - &inst.x_star;
            match &scales {
                Some(s) => {
                    let mut scaled = h.clone();
                    scaled.scale_elementwise(s);
                    acc.add(residual.as_slice(), &scaled)?;
                }
                None => acc.add(residual.as_slice(), h)?,
            }
        }
        let (gram, cross, rr) = acc.moments()?;
        let mut map = acc.solve(options.lambda)?;
        let diag = MapDiagnostics {
            objective: objective_from_moments(&map, &gram, &cross, rr, options.lambda),
            zero_map_objective: rr,
            map_norm_sq: map.norm_squared(),
        };
        if let Some(s) = &scales {
            for (col, &scale) in s.iter().enumerate() {
                map.column_mut(col).scale_mut(scale);
            }
        }

        let updated: Vec<DVector<f64>> = estimates
            .iter()
            .zip(&features)
            .map(|(x, h)| x - h.left_mul(&map))
            .collect();
        let next_rmse = rmse_of(instances, &updated);
        let stalled = options.early_stop_rmse_delta > 0.0
            && rmse[t] - next_rmse <= options.early_stop_rmse_delta;
        estimates = updated;
        rmse.push(next_rmse);
        maps.push(map);
        diagnostics.push(diag);
        if stalled {
            break;
        }
    }

    let sum = UpdateMapSequence::new(maps, options.lambda, rmse.clone())?;
    Ok((
        sum,
        TrainReport {
            rmse,
            maps: diagnostics,
            final_estimates: estimates,
        },
    ))
}

/// Fraction of `samples` where `(x - x*)^T (map h(x)) >= 0`.
pub fn monotonicity_probe<F: FeatureMap>(
    map: &DMatrix<f64>,
    instance: &TrainingInstance<F>,
    samples: &[DVector<f64>],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("monotonicity probe needs at least one sample"));
    }
    let mut hits = 0usize;
    for x in samples {
        let update = instance.features.features(x)?.left_mul(map);
        if (x - &instance.x_star).dot(&update) >= 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sum::FnFeatures;

    fn constant_feature() -> FnFeatures<impl Fn(&DVector<f64>) -> Result<SparseVec> + Sync> {
        FnFeatures::new(1, |_: &DVector<f64>| Ok(SparseVec::from_dense(&[1.0])))
    }

    #[test]
    fn instance_at_solution_learns_zero_map() {
        let inst = TrainingInstance::new(
            DVector::from_vec(vec![0.3]),
            DVector::from_vec(vec![0.3]),
            constant_feature(),
        );
        let (sum, report) = train_sum(&[inst], &TrainOptions::new(3, 1e-3)).unwrap();
        assert!(sum.maps().iter().all(|m| m.iter().all(|&v| v == 0.0)));
        assert!(report.rmse.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn symmetric_residuals_cancel() {
        let instances = vec![
            TrainingInstance::new(
                DVector::from_vec(vec![0.0]),
                DVector::from_vec(vec![1.0]),
                constant_feature(),
            ),
            TrainingInstance::new(
                DVector::from_vec(vec![0.0]),
                DVector::from_vec(vec![-1.0]),
                constant_feature(),
            ),
        ];
        let (sum, report) = train_sum(&instances, &TrainOptions::new(1, 0.1)).unwrap();
        assert_eq!(sum.map(0)[(0, 0)], 0.0);
        assert_eq!(report.rmse[0], report.rmse[1]);
    }

    #[test]
    fn linear_feature_converges_in_one_map() {
        // h(x) = x - c_i with a single shared map: D = 1 zeroes every residual
        // when the feature is exactly the residual.
        let targets = [0.5, -0.25, 1.5];
        let instances: Vec<_> = targets
            .iter()
            .map(|&c| {
                TrainingInstance::new(
                    DVector::from_vec(vec![0.0]),
                    DVector::from_vec(vec![c]),
                    FnFeatures::new(1, move |x: &DVector<f64>| {
                        Ok(SparseVec::from_dense(&[x[0] - c]))
                    }),
                )
            })
            .collect();
        let (sum, report) = train_sum(&instances, &TrainOptions::new(2, 0.0)).unwrap();
        assert!((sum.map(0)[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(report.rmse[1] < 1e-9);
    }

    #[test]
    fn early_stop_keeps_at_least_one_map() {
        let inst = TrainingInstance::new(
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.0]),
            constant_feature(),
        );
        let mut opts = TrainOptions::new(10, 1e-3);
        opts.early_stop_rmse_delta = 0.5;
        let (sum, report) = train_sum(&[inst], &opts).unwrap();
        assert_eq!(sum.len(), 1);
        assert_eq!(report.rmse.len(), 2);
    }

    #[test]
    fn empty_and_inconsistent_sets_are_rejected() {
        let none: Vec<TrainingInstance<FnFeatures<fn(&DVector<f64>) -> Result<SparseVec>>>> =
            Vec::new();
        assert!(matches!(
            train_sum(&none, &TrainOptions::new(1, 0.1)),
            Err(Error::EmptyTrainingSet)
        ));

        let a: Box<dyn FeatureMap> = Box::new(FnFeatures::new(2, |_: &DVector<f64>| {
            Ok(SparseVec::from_dense(&[1.0, 0.0]))
        }));
        let b: Box<dyn FeatureMap> = Box::new(FnFeatures::new(3, |_: &DVector<f64>| {
            Ok(SparseVec::from_dense(&[1.0, 0.0, 0.0]))
        }));
        let instances = vec![
            TrainingInstance::new(DVector::zeros(1), DVector::zeros(1), a),
            TrainingInstance::new(DVector::zeros(1), DVector::zeros(1), b),
        ];
        assert!(matches!(
            train_sum(&instances, &TrainOptions::new(1, 0.1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn training_error_examples() {
        let truth = vec![DVector::from_vec(vec![1.0, 1.0])];
        assert_eq!(training_error(&truth, &truth), 0.0);
        let est = vec![DVector::from_vec(vec![4.0, 5.0])];
        assert_eq!(training_error(&truth, &est), 25.0);
    }

    #[test]
    fn probe_on_identity_and_zero_maps() {
        let inst = TrainingInstance::new(
            DVector::zeros(1),
            DVector::from_vec(vec![0.2]),
            FnFeatures::new(1, |x: &DVector<f64>| Ok(SparseVec::from_dense(&[x[0] - 0.2]))),
        );
        let samples: Vec<_> = (0..21)
            .map(|k| DVector::from_vec(vec![-1.0 + 0.1 * k as f64]))
            .collect();
        let identity = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(monotonicity_probe(&identity, &inst, &samples).unwrap(), 1.0);
        let zero = DMatrix::zeros(1, 1);
        assert_eq!(monotonicity_probe(&zero, &inst, &samples).unwrap(), 1.0);
        assert!(monotonicity_probe(&zero, &inst, &[]).is_err());
    }
}
