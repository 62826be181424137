//! Mini-batch training with Adam, stepped learning-rate decay, and global
//! gradient-norm clipping.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EntityTable;
use crate::mbd::model::MultiBranchModel;
use crate::mbd::tape::{Gradients, Tape};
use crate::mbd::MbdError;

/// A training instance: the table, the target tokens, and one support label
/// per target token (`true` = the token is grounded in the table).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub table: EntityTable,
    pub target: Vec<String>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// First optimizer step (1-based) at which the rate halves.
    pub decay_start: usize,
    /// Steps between subsequent halvings.
    pub decay_every: usize,
    pub clip_norm: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            steps: 1000,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            decay_start: 250,
            decay_every: 500,
            clip_norm: 5.0,
            shuffle_seed: 1,
        }
    }
}

impl TrainSchedule {
    /// Learning rate at 1-based optimizer step `step`: the base rate halves
    /// at `decay_start` and again every `decay_every` steps after that.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if step < self.decay_start {
            return self.learning_rate;
        }
        let halvings = (step - self.decay_start) / self.decay_every + 1;
        self.learning_rate * 0.5_f64.powi(halvings as i32)
    }

    fn validate(&self) -> Result<(), MbdError> {
        let fail = |msg: &str| Err(MbdError::Config(msg.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.clip_norm <= 0.0 {
            return fail("clip_norm must be positive");
        }
        if self.decay_every == 0 || self.decay_start == 0 {
            return fail("decay_start and decay_every must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Mean batch loss per optimizer step.
    pub step_losses: Vec<f64>,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: usize,
}

impl Adam {
    fn new(template: &Gradients) -> Adam {
        let zeros = Gradients { tensors: template.tensors.iter().map(|t| vec![0.0; t.len()]).collect() };
        Adam { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn apply(
        &mut self,
        model: &mut MultiBranchModel,
        grads: &Gradients,
        schedule: &TrainSchedule,
    ) {
        self.step += 1;
        let lr = schedule.learning_rate_at(self.step);
        let bias1 = 1.0 - schedule.beta1.powi(self.step as i32);
        let bias2 = 1.0 - schedule.beta2.powi(self.step as i32);
        let params = model.params_mut();
        for (t, grad) in grads.tensors.iter().enumerate() {
            let m = &mut self.m.tensors[t];
            let v = &mut self.v.tensors[t];
            let theta = &mut params.tensors[t].data;
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = schedule.beta1 * m[i] + (1.0 - schedule.beta1) * g;
                v[i] = schedule.beta2 * v[i] + (1.0 - schedule.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + schedule.adam_eps);
            }
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub(crate) fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Deterministic epoch-shuffled batch stream.
struct Batches {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Batches {
        let mut b = Batches { order: (0..n).collect(), cursor: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        b.order.shuffle(&mut b.rng);
        b
    }

    /// Up to `size` indices; truncates at epoch boundaries and reshuffles.
    fn next(&mut self, size: usize) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Trains the model in place, returning the per-step loss curve. Dropout is
/// active here and nowhere else; all randomness is seeded, so a rerun with
/// identical inputs reproduces the parameters bitwise.
pub fn train(
    model: &mut MultiBranchModel,
    examples: &[LabeledExample],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome, MbdError> {
    schedule.validate()?;
    if examples.is_empty() {
        return Err(MbdError::NoExamples);
    }
    let mut batches = Batches::new(examples.len(), schedule.shuffle_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(schedule.shuffle_seed.wrapping_add(0x517c_c1b7));
    let template = Gradients::zeros_like(&model.params);
    let mut adam = Adam::new(&template);
    let mut step_losses = Vec::with_capacity(schedule.steps);

    for step in 1..=schedule.steps {
        let batch = batches.next(schedule.batch_size);
        let mut total = template.clone();
        let mut loss_sum = 0.0;
        for &idx in &batch {
            let tape_params = &model.params;
            let mut tape = Tape::new(tape_params);
            let mut rng = Some(&mut dropout_rng);
            let loss = model.example_loss_on_tape(&mut tape, &examples[idx], &mut rng)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(MbdError::NonFiniteLoss { step });
            }
            loss_sum += value;
            total.add_assign(&tape.backward(loss));
        }
        total.scale(1.0 / batch.len() as f64);
        clip_gradients(&mut total, schedule.clip_norm);
        adam.apply(model, &total, schedule);
        step_losses.push(loss_sum / batch.len() as f64);
    }
    Ok(TrainOutcome { step_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KeyValuePair;
    use crate::mbd::model::{ModelConfig, Vocab};
    use crate::mbd::tape::Tensor;

    fn example() -> LabeledExample {
        LabeledExample {
            id: "t1".to_string(),
            table: EntityTable {
                pairs: vec![
                    KeyValuePair::new("name", &["ada", "lovelace"]),
                    KeyValuePair::new("field", &["mathematics"]),
                ],
            },
            target: ["ada", "lovelace", "studied", "mathematics", "."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            labels: vec![true, true, false, true, false],
        }
    }

    fn vocab_for(ex: &LabeledExample) -> Vocab {
        let tokens: Vec<&str> = ex
            .target
            .iter()
            .map(String::as_str)
            .chain(ex.table.pairs.iter().flat_map(|p| {
                std::iter::once(p.key.as_str()).chain(p.value.iter().map(String::as_str))
            }))
            .collect();
        Vocab::build(tokens.iter().copied(), 64)
    }

    #[test]
    fn learning_rate_halves_on_schedule() {
        let s = TrainSchedule {
            learning_rate: 1e-3,
            decay_start: 250,
            decay_every: 500,
            ..TrainSchedule::default()
        };
        assert_eq!(s.learning_rate_at(1), 1e-3);
        assert_eq!(s.learning_rate_at(249), 1e-3);
        assert_eq!(s.learning_rate_at(250), 5e-4);
        assert_eq!(s.learning_rate_at(749), 5e-4);
        assert_eq!(s.learning_rate_at(750), 2.5e-4);
        assert_eq!(s.learning_rate_at(1250), 1.25e-4);
    }

    #[test]
    fn clipping_rescales_only_oversized_gradients() {
        let mut g = Gradients { tensors: vec![vec![3.0, 4.0]] };
        let norm = clip_gradients(&mut g, 2.5);
        assert_eq!(norm, 5.0);
        assert!((g.l2_norm() - 2.5).abs() < 1e-12);
        assert!((g.tensors[0][0] - 1.5).abs() < 1e-12);
        let mut small = Gradients { tensors: vec![vec![0.3, 0.4]] };
        clip_gradients(&mut small, 2.5);
        assert_eq!(small.tensors[0], vec![0.3, 0.4]);
    }

    #[test]
    fn first_adam_update_has_magnitude_near_the_learning_rate() {
        let ex = example();
        let mut model = MultiBranchModel::new(ModelConfig::tiny(5), vocab_for(&ex)).unwrap();
        let before = model.params.tensors.clone();
        let schedule = TrainSchedule { steps: 1, clip_norm: 1e9, ..TrainSchedule::default() };
        train(&mut model, &[ex], &schedule).unwrap();
        let mut max_delta = 0.0_f64;
        for (b, a) in before.iter().zip(&model.params.tensors) {
            for (x, y) in b.data.iter().zip(&a.data) {
                max_delta = max_delta.max((x - y).abs());
            }
        }
        // With bias correction the first step is at most lr per coordinate
        // (up to epsilon), and some coordinate should move nearly that far.
        assert!(max_delta <= 1e-3 + 1e-9, "max delta {max_delta}");
        assert!(max_delta > 0.9e-3, "max delta {max_delta}");
    }

    #[test]
    fn short_training_run_reduces_the_loss() {
        let ex = example();
        let mut model = MultiBranchModel::new(ModelConfig::tiny(5), vocab_for(&ex)).unwrap();
        let schedule = TrainSchedule { steps: 120, ..TrainSchedule::default() };
        let outcome = train(&mut model, &[ex], &schedule).unwrap();
        let first = outcome.step_losses[0];
        let last = *outcome.step_losses.last().unwrap();
        assert!(
            last < first * 0.5,
            "expected loss to drop by half, got {first} -> {last}"
        );
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let ex = example();
        let schedule = TrainSchedule { steps: 25, ..TrainSchedule::default() };
        let mut a = MultiBranchModel::new(ModelConfig::tiny(5), vocab_for(&ex)).unwrap();
        let mut b = MultiBranchModel::new(ModelConfig::tiny(5), vocab_for(&ex)).unwrap();
        let out_a = train(&mut a, std::slice::from_ref(&ex), &schedule).unwrap();
        let out_b = train(&mut b, std::slice::from_ref(&ex), &schedule).unwrap();
        assert_eq!(out_a.step_losses, out_b.step_losses);
        assert_eq!(a.params.tensors, b.params.tensors);
    }

    #[test]
    fn poisoned_parameters_surface_as_a_non_finite_loss_error() {
        let ex = example();
        let mut model = MultiBranchModel::new(ModelConfig::tiny(5), vocab_for(&ex)).unwrap();
        model.params_mut().tensors[0] = Tensor {
            rows: model.params.tensors[0].rows,
            cols: model.params.tensors[0].cols,
            data: vec![f64::NAN; model.params.tensors[0].len()],
        };
        let schedule = TrainSchedule { steps: 1, ..TrainSchedule::default() };
        match train(&mut model, &[ex], &schedule) {
            Err(MbdError::NonFiniteLoss { step: 1 }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn empty_example_set_is_rejected() {
        let ex = example();
        let mut model = MultiBranchModel::new(ModelConfig::tiny(5), vocab_for(&ex)).unwrap();
        assert!(matches!(
            train(&mut model, &[], &TrainSchedule::default()),
            Err(MbdError::NoExamples)
        ));
    }
}
