//! Two-level stacking ensemble: the six backbones form level 0; a
//! logistic-regression meta-learner fit on the validation split's level-0
//! probabilities forms level 1.

use crate::backbones::{build_model, BackboneId, BackboneSpec};
use crate::dataset::{self, DatasetManifest, SplitAssignment, SplitStrategy};
use crate::tensor::Tensor;
use crate::train::{self, FineTuneConfig, TrainedModel, TrainError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// N x 6 matrix of level-0 probabilities, column j from model_order[j].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelZeroOutputs {
    pub matrix: Vec<[f32; 6]>,
    pub model_order: [BackboneId; 6],
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLearner {
    pub coefficients: [f64; 6],
    pub intercept: f64,
    pub regularization: f64,
    pub threshold: f64,
    pub model_order: [BackboneId; 6],
}

pub struct StackedModel {
    pub level0: Vec<TrainedModel>,
    pub meta: MetaLearner,
    pub split: SplitAssignment,
}

#[derive(Debug, thiserror::Error)]
pub enum StackingError {
    #[error("level-0 training failed for {backbone}: {source}")]
    Level0 {
        backbone: &'static str,
        #[source]
        source: TrainError,
    },
    #[error("singular fit: validation labels contain a single class")]
    SingularFit,
    #[error("leakage: {0} meta-training sample ids intersect the test split")]
    Leakage(usize),
    #[error("meta-learner failed to converge within {0} iterations")]
    NoConvergence(usize),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

/// Train the six backbones on the STACKING train split, canonical order.
/// `weights_dir`, when given, receives one `<token>.fwt` per backbone.
pub fn fit_level0(
    manifest: &DatasetManifest,
    assignment: &SplitAssignment,
    config: &FineTuneConfig,
    pretrained: bool,
    weights_dir: Option<&Path>,
) -> Result<Vec<TrainedModel>, StackingError> {
    assert_eq!(
        assignment.spec.strategy,
        SplitStrategy::Stacking,
        "fit_level0 requires a STACKING split"
    );
    let mut level0 = Vec::with_capacity(6);
    for id in BackboneId::ALL {
        let wrap = |source| StackingError::Level0 { backbone: id.token(), source };
        let model = build_model(&BackboneSpec::new(id), pretrained, config.seed)
            .map_err(|e| wrap(TrainError::Persist(e.to_string())))?;
        let out = weights_dir.map(|d| d.join(format!("{}.fwt", id.token())));
        let trained =
            train::train(model, manifest, assignment, config, out.as_deref()).map_err(wrap)?;
        level0.push(trained);
    }
    Ok(level0)
}

/// N x 6 probabilities for the given pixel batch, models in canonical order.
pub fn predict_level0(models: &[TrainedModel], samples: &[Tensor], ids: &[String]) -> LevelZeroOutputs {
    assert_eq!(models.len(), 6, "level 0 is exactly six models");
    assert_eq!(samples.len(), ids.len());
    let mut matrix = vec![[0.0f32; 6]; samples.len()];
    for (j, m) in models.iter().enumerate() {
        let col = train::predict_proba(&m.model, samples);
        for (row, p) in matrix.iter_mut().zip(col) {
            row[j] = p;
        }
    }
    LevelZeroOutputs {
        matrix,
        model_order: BackboneId::ALL,
        sample_ids: ids.to_vec(),
    }
}

/// Fit the level-1 logistic regression on validation-split outputs by
/// Newton-Raphson with L2 strength lambda. `test_ids` backs the leakage
/// guard: any overlap with the meta-training ids is rejected.
pub fn fit_meta(
    outputs: &LevelZeroOutputs,
    labels: &[f32],
    lambda: f64,
    test_ids: &[String],
) -> Result<MetaLearner, StackingError> {
    assert_eq!(outputs.matrix.len(), labels.len());
    let test_set: BTreeSet<&str> = test_ids.iter().map(|s| s.as_str()).collect();
    let overlap = outputs
        .sample_ids
        .iter()
        .filter(|id| test_set.contains(id.as_str()))
        .count();
    if overlap > 0 {
        return Err(StackingError::Leakage(overlap));
    }
    let positives = labels.iter().filter(|&&y| y >= 0.5).count();
    if positives == 0 || positives == labels.len() {
        return Err(StackingError::SingularFit);
    }

    // Newton-Raphson on the L2-regularized negative log-likelihood over
    // w in R^7 (six coefficients + intercept, intercept unregularized).
    const D: usize = 7;
    const MAX_ITERS: usize = 10_000;
    const TOL: f64 = 1e-8;
    let x = |row: &[f32; 6], k: usize| -> f64 {
        if k < 6 {
            row[k] as f64
        } else {
            1.0
        }
    };
    let mut w = [0.0f64; D];
    for iter in 0..MAX_ITERS {
        let mut grad = [0.0f64; D];
        let mut hess = [[0.0f64; D]; D];
        for (row, &y) in outputs.matrix.iter().zip(labels) {
            // Clamp the logit: on tiny separable validation sets the
            // unregularized intercept can drift far enough to saturate p to
            // an exact 0/1, zeroing the Hessian and blowing up the solve.
            let z: f64 = (0..D).map(|k| w[k] * x(row, k)).sum::<f64>().clamp(-30.0, 30.0);
            let p = 1.0 / (1.0 + (-z).exp());
            let r = p - y as f64;
            let s = p * (1.0 - p);
            for k in 0..D {
                grad[k] += r * x(row, k);
                for l in 0..D {
                    hess[k][l] += s * x(row, k) * x(row, l);
                }
            }
        }
        for k in 0..6 {
            grad[k] += lambda * w[k];
            hess[k][k] += lambda;
        }
        // Levenberg-style jitter keeps the solve well-posed on degenerate
        // designs (e.g., all-constant columns with lambda = 0).
        for (k, row) in hess.iter_mut().enumerate() {
            row[k] += 1e-12;
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < TOL {
            return Ok(finish(w, lambda, outputs.model_order));
        }
        if !gnorm.is_finite() {
            return Err(StackingError::NoConvergence(iter));
        }
        let step = solve(hess, grad);
        for k in 0..D {
            // Trust-region cap: a near-singular Hessian (saturated
            // probabilities) would otherwise yield an astronomical step.
            w[k] -= step[k].clamp(-10.0, 10.0);
        }
        if iter == MAX_ITERS - 1 {
            return Err(StackingError::NoConvergence(MAX_ITERS));
        }
    }
    unreachable!("loop returns or errors")
}

fn finish(w: [f64; 7], lambda: f64, model_order: [BackboneId; 6]) -> MetaLearner {
    let mut coefficients = [0.0f64; 6];
    coefficients.copy_from_slice(&w[..6]);
    MetaLearner {
        coefficients,
        intercept: w[6],
        regularization: lambda,
        threshold: 0.5,
        model_order,
    }
}

/// Gaussian elimination with partial pivoting on a 7x7 system.
fn solve(mut a: [[f64; 7]; 7], mut b: [f64; 7]) -> [f64; 7] {
    const D: usize = 7;
    for col in 0..D {
        let pivot = (col..D)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..D {
            let factor = a[row][col] / diag;
            for k in col..D {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0f64; D];
    for col in (0..D).rev() {
        let mut v = b[col];
        for k in col + 1..D {
            v -= a[col][k] * x[k];
        }
        x[col] = v / a[col][col];
    }
    x
}

/// sigma(intercept + coefficients . row) for one level-0 row.
pub fn stacked_probability(meta: &MetaLearner, row: &[f32; 6]) -> f64 {
    let z = meta.intercept
        + meta
            .coefficients
            .iter()
            .zip(row)
            .map(|(c, &p)| c * p as f64)
            .sum::<f64>();
    1.0 / (1.0 + (-z).exp())
}

/// Probabilities and thresholded labels for a pixel batch.
pub fn predict_stacked(model: &StackedModel, samples: &[Tensor], ids: &[String]) -> (Vec<f64>, Vec<bool>) {
    let level0 = predict_level0(&model.level0, samples, ids);
    let probs: Vec<f64> = level0
        .matrix
        .iter()
        .map(|row| stacked_probability(&model.meta, row))
        .collect();
    let labels = probs.iter().map(|&p| p >= model.meta.threshold).collect();
    (probs, labels)
}

/// Serialize the stacked model as a directory: six weight containers plus
/// `meta.json`.
pub fn save_stacked(model: &StackedModel, dir: &Path) -> Result<(), StackingError> {
    std::fs::create_dir_all(dir).map_err(|e| StackingError::Serialize(e.to_string()))?;
    for m in &model.level0 {
        let path = dir.join(format!("{}.fwt", m.model.spec.id.token()));
        crate::nn::weights::save(&m.model.graph, &path)
            .map_err(|e| StackingError::Serialize(e.to_string()))?;
    }
    let meta = serde_json::to_string_pretty(&model.meta)
        .map_err(|e| StackingError::Serialize(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), meta).map_err(|e| StackingError::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn outputs(matrix: Vec<[f32; 6]>) -> LevelZeroOutputs {
        let sample_ids = (0..matrix.len()).map(|i| format!("val/{i}")).collect();
        LevelZeroOutputs { matrix, model_order: BackboneId::ALL, sample_ids }
    }

    #[test]
    fn informative_column_gets_the_largest_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut matrix = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let y = (i % 2) as f32;
            let mut row = [0.0f32; 6];
            row[0] = if y > 0.5 { 0.9 } else { 0.1 };
            for v in row.iter_mut().skip(1) {
                *v = 0.5 + rng.gen_range(-0.05f32..0.05);
            }
            matrix.push(row);
            labels.push(y);
        }
        let meta = fit_meta(&outputs(matrix), &labels, 1.0, &[]).unwrap();
        let argmax = meta
            .coefficients
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 0);
        assert!(meta.coefficients[0] > 0.0);
    }

    #[test]
    fn no_signal_symmetry_gives_near_zero_weights() {
        let matrix = vec![[0.5f32; 6]; 40];
        let labels: Vec<f32> = (0..40).map(|i| (i % 2) as f32).collect();
        let meta = fit_meta(&outputs(matrix), &labels, 1.0, &[]).unwrap();
        for c in meta.coefficients {
            assert!(c.abs() < 1e-3, "{c}");
        }
        assert!(meta.intercept.abs() < 1e-3);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let matrix: Vec<[f32; 6]> = (0..60).map(|_| std::array::from_fn(|_| rng.gen())).collect();
        let labels: Vec<f32> = (0..60).map(|i| (i % 2) as f32).collect();
        let a = fit_meta(&outputs(matrix.clone()), &labels, 1.0, &[]).unwrap();
        let b = fit_meta(&outputs(matrix), &labels, 1.0, &[]).unwrap();
        for k in 0..6 {
            assert!((a.coefficients[k] - b.coefficients[k]).abs() < 1e-8);
        }
        assert!((a.intercept - b.intercept).abs() < 1e-8);
    }

    #[test]
    fn single_class_labels_are_a_singular_fit() {
        let matrix = vec![[0.5f32; 6]; 10];
        let labels = vec![1.0f32; 10];
        assert!(matches!(
            fit_meta(&outputs(matrix), &labels, 1.0, &[]),
            Err(StackingError::SingularFit)
        ));
    }

    #[test]
    fn leakage_guard_rejects_test_id_overlap() {
        let matrix = vec![[0.5f32; 6]; 4];
        let labels = vec![0.0, 1.0, 0.0, 1.0];
        let test_ids = vec!["val/2".to_string(), "other".to_string()];
        assert!(matches!(
            fit_meta(&outputs(matrix), &labels, 1.0, &test_ids),
            Err(StackingError::Leakage(1))
        ));
    }

    #[test]
    fn stacked_probability_is_exactly_logistic_regression() {
        let meta = MetaLearner {
            coefficients: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            intercept: 0.0,
            regularization: 1.0,
            threshold: 0.5,
            model_order: BackboneId::ALL,
        };
        let p = stacked_probability(&meta, &[0.9, 0.1, 0.2, 0.3, 0.4, 0.5]);
        // The row is f32; promote the same way the implementation does.
        let z = 0.9f32 as f64;
        assert!((p - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        assert!((p - 0.7109).abs() < 1e-4);

        let zero = MetaLearner { coefficients: [0.0; 6], intercept: 0.0, ..meta };
        assert_eq!(stacked_probability(&zero, &[0.8; 6]), 0.5);
    }

    #[test]
    fn monotone_in_each_input_under_nonnegative_coefficients() {
        let meta = MetaLearner {
            coefficients: [0.5, 1.0, 0.0, 2.0, 0.25, 0.75],
            intercept: -1.0,
            regularization: 1.0,
            threshold: 0.5,
            model_order: BackboneId::ALL,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let row: [f32; 6] = std::array::from_fn(|_| rng.gen());
            let base = stacked_probability(&meta, &row);
            for k in 0..6 {
                let mut bumped = row;
                bumped[k] = (bumped[k] + 0.1).min(1.0);
                assert!(stacked_probability(&meta, &bumped) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn permuting_order_and_coefficients_together_is_invariant() {
        let meta = MetaLearner {
            coefficients: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            intercept: 0.3,
            regularization: 1.0,
            threshold: 0.5,
            model_order: BackboneId::ALL,
        };
        let row = [0.9f32, 0.8, 0.7, 0.6, 0.5, 0.4];
        let perm = [5usize, 3, 1, 0, 2, 4];
        let mut meta2 = meta.clone();
        let mut row2 = row;
        for (new_idx, &old_idx) in perm.iter().enumerate() {
            meta2.coefficients[new_idx] = meta.coefficients[old_idx];
            meta2.model_order[new_idx] = meta.model_order[old_idx];
            row2[new_idx] = row[old_idx];
        }
        let a = stacked_probability(&meta, &row);
        let b = stacked_probability(&meta2, &row2);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn meta_json_round_trips() {
        let meta = MetaLearner {
            coefficients: [0.1, -0.2, 0.3, 0.0, 1.5, -0.6],
            intercept: 0.25,
            regularization: 1.0,
            threshold: 0.5,
            model_order: BackboneId::ALL,
        };
        let json = serde_json::to_string(&meta).unwrap();
        let back: MetaLearner = serde_json::from_str(&json).unwrap();
        assert_eq!(meta, back);
    }
}
