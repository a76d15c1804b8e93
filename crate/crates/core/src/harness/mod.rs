//! Experiment drivers: kernel benchmarking with a memory-traffic model,
//! dataset accuracy evaluation, and exhaustive precision sweeps with Pareto
//! reporting.

mod bench;
mod pareto;
mod sweep;

pub use bench::{bench_kernels, BenchConfig, BenchReport, BenchRow, KernelKind};
pub use pareto::{dominates, mark_frontier, ParetoPoint};
pub use sweep::{sweep_assignments, BackendFamily, SweepGrids, SweepOptions, SweepResult};

use crate::error::{Error, Result};
use crate::nn::dataset::Dataset;
use crate::nn::{Model, ModelInput, PrecisionAssignment, PreparedModel};

/// Index of the largest logit; ties break toward the lower index.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Classification accuracy of `model` under `assignment` over `dataset`.
pub fn eval_accuracy(
    model: &Model,
    assignment: &PrecisionAssignment,
    dataset: &Dataset,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let prepared = PreparedModel::new(model, assignment)?;
    let mut correct = 0usize;
    for (features, &label) in dataset.features.iter().zip(&dataset.labels) {
        let logits = prepared.forward(&ModelInput::Vector(features.clone()))?;
        if argmax(&logits) == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::Matrix;
    use crate::nn::{Activation, Layer, LayerKind, LinearLayer};

    fn tiny_model() -> Model {
        // 2-class linear model: class 0 iff x0 > x1
        let w = Matrix::from_vec(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        Model {
            layers: vec![Layer {
                kind: LayerKind::Linear(LinearLayer { weight: w, bias: vec![0.0, 0.0] }),
                activation: Activation::None,
            }],
        }
    }

    #[test]
    fn accuracy_counts_argmax_matches() {
        let model = tiny_model();
        let dataset = Dataset {
            features: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0], vec![1.0, 2.0]],
            labels: vec![0, 1, 0, 0],
            feature_dim: 2,
        };
        let acc = eval_accuracy(&model, &PrecisionAssignment::all_float(1), &dataset).unwrap();
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn empty_dataset_rejected() {
        let model = tiny_model();
        let dataset = Dataset { features: vec![], labels: vec![], feature_dim: 2 };
        assert!(eval_accuracy(&model, &PrecisionAssignment::all_float(1), &dataset).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
