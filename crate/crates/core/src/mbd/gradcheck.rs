//! Central-difference verification of the analytic gradients.
//!
//! Dropout is disabled throughout so the loss is a deterministic function of
//! the parameters and the finite-difference quotient is well defined.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mbd::model::MultiBranchModel;
use crate::mbd::tape::{Gradients, Tape};
use crate::mbd::{LabeledExample, MbdError};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for [`relative_error`]. Central differences at step
/// 1e-5 on a loss of order one carry round-off noise near 1e-10 absolute, so
/// gradients far below this scale cannot be resolved relatively; flooring
/// the denominator makes such coordinates compare by absolute error while a
/// sign flip on any resolvable coordinate still scores above 1e-2.
pub const SCALE_FLOOR: f64 = 1e-5;

/// Worst relative error observed in one tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(SCALE_FLOOR);
    (analytic - numeric).abs() / denom
}

fn loss_value(model: &MultiBranchModel, example: &LabeledExample) -> Result<f64, MbdError> {
    let mut tape = Tape::new(&model.params);
    let mut no_rng: Option<&mut ChaCha8Rng> = None;
    let loss = model.example_loss_on_tape(&mut tape, example, &mut no_rng)?;
    Ok(tape.scalar(loss))
}

/// Backpropagated gradients of the example loss, dropout disabled.
pub fn analytic_gradients(
    model: &MultiBranchModel,
    example: &LabeledExample,
) -> Result<Gradients, MbdError> {
    let mut tape = Tape::new(&model.params);
    let mut no_rng: Option<&mut ChaCha8Rng> = None;
    let loss = model.example_loss_on_tape(&mut tape, example, &mut no_rng)?;
    Ok(tape.backward(loss))
}

/// Central-difference derivative of the example loss with respect to one
/// parameter coordinate. The parameter is restored afterwards.
pub fn numeric_gradient(
    model: &mut MultiBranchModel,
    example: &LabeledExample,
    tensor: usize,
    coordinate: usize,
    step: f64,
) -> Result<f64, MbdError> {
    let original = model.params.tensors[tensor].data[coordinate];
    model.params_mut().tensors[tensor].data[coordinate] = original + step;
    let up = loss_value(model, example);
    model.params_mut().tensors[tensor].data[coordinate] = original - step;
    let down = loss_value(model, example);
    model.params_mut().tensors[tensor].data[coordinate] = original;
    Ok((up? - down?) / (2.0 * step))
}

/// Compares analytic and numeric gradients on `samples_per_tensor` randomly
/// chosen coordinates of every tensor (all coordinates when a tensor is
/// smaller than that).
pub fn check_gradients(
    model: &mut MultiBranchModel,
    example: &LabeledExample,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, MbdError> {
    let analytic = analytic_gradients(model, example)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    let mut overall = 0.0_f64;
    for t in 0..analytic.tensors.len() {
        let len = analytic.tensors[t].len();
        let coordinates: Vec<usize> = if len <= samples_per_tensor {
            (0..len).collect()
        } else {
            (0..samples_per_tensor).map(|_| rng.gen_range(0..len)).collect()
        };
        let mut worst = 0.0_f64;
        for &c in &coordinates {
            let numeric = numeric_gradient(model, example, t, c, DEFAULT_STEP)?;
            worst = worst.max(relative_error(analytic.tensors[t][c], numeric));
        }
        overall = overall.max(worst);
        tensors.push(TensorCheck {
            name: model.params.names[t].clone(),
            max_rel_error: worst,
            coordinates_checked: coordinates.len(),
        });
    }
    Ok(GradCheckReport { tensors, max_rel_error: overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityTable, KeyValuePair};
    use crate::mbd::model::{ModelConfig, Vocab};

    fn example() -> LabeledExample {
        LabeledExample {
            id: "g1".to_string(),
            table: EntityTable {
                pairs: vec![
                    KeyValuePair::new("name", &["ada", "lovelace"]),
                    KeyValuePair::new("field", &["mathematics"]),
                ],
            },
            target: ["ada", "lovelace", "studied", "unlisted", "mathematics", "."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            labels: vec![true, true, false, false, true, false],
        }
    }

    fn model() -> MultiBranchModel {
        // "unlisted" is kept out of the vocabulary and out of the table so
        // the <unk> path is exercised; "lovelace" is left out of the
        // vocabulary so the copy-only path is exercised.
        let vocab = Vocab::build(
            ["ada", "studied", "mathematics", ".", "name", "field"].iter().copied(),
            16,
        );
        MultiBranchModel::new(ModelConfig::tiny(3), vocab).unwrap()
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let mut model = model();
        let report = check_gradients(&mut model, &example(), 2, 99).unwrap();
        assert!(
            report.passes(1e-4),
            "worst relative error {} in {:?}",
            report.max_rel_error,
            report
                .tensors
                .iter()
                .max_by(|a, b| a.max_rel_error.partial_cmp(&b.max_rel_error).unwrap())
                .map(|t| &t.name)
        );
    }

    #[test]
    fn a_sign_flipped_gradient_is_caught() {
        let mut model = model();
        let ex = example();
        let analytic = analytic_gradients(&model, &ex).unwrap();
        // Find a coordinate with clearly nonzero gradient and compare its
        // sign-flipped analytic value against the numeric one.
        let (t, c, a) = analytic
            .tensors
            .iter()
            .enumerate()
            .flat_map(|(t, g)| g.iter().enumerate().map(move |(c, &a)| (t, c, a)))
            .max_by(|x, y| x.2.abs().partial_cmp(&y.2.abs()).unwrap())
            .unwrap();
        assert!(a.abs() > 1e-6, "model too flat for a meaningful mutation test");
        let numeric = numeric_gradient(&mut model, &ex, t, c, DEFAULT_STEP).unwrap();
        assert!(relative_error(-a, numeric) > 1e-1);
        assert!(relative_error(a, numeric) < 1e-4);
    }

    #[test]
    fn relative_error_is_absolute_below_the_noise_floor() {
        // Differences at the finite-difference noise scale pass...
        assert!(relative_error(1e-9, 3e-9) < 1e-3);
        assert!(relative_error(0.0, 1e-11) < 1e-4);
        // ...while sign flips on resolvable coordinates do not.
        assert!(relative_error(-1e-7, 1e-7) > 1e-2);
        assert!(relative_error(1.0, 0.5) > 0.3);
    }
}
