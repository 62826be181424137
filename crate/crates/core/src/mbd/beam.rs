//! Beam-search generation with length-normalized scoring.

use crate::corpus::EntityTable;
use crate::mbd::model::{
    BranchWeights, DecoderState, MultiBranchModel, StepOptions, BOS_ID, EOS_ID,
};
use crate::mbd::model::PROB_FLOOR;

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub max_len: usize,
    pub beam_width: usize,
    pub weights: BranchWeights,
    /// Optional copy-gate override, forwarded to every decode step.
    pub force_p_gen: Option<f64>,
}

impl GenerateOptions {
    pub fn new(weights: BranchWeights) -> GenerateOptions {
        GenerateOptions { max_len: 40, beam_width: 4, weights, force_p_gen: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<String>,
    /// Length-normalized log-probability of the emitted sequence.
    pub score: f64,
    /// Whether the sequence ended with `<eos>` within the length budget.
    pub completed: bool,
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    state: DecoderState,
    prev: usize,
}

impl Hypothesis {
    /// Log-probability divided by the number of decode steps taken.
    fn normalized(&self, ended: bool) -> f64 {
        let steps = self.tokens.len() + usize::from(ended);
        self.log_prob / steps.max(1) as f64
    }
}

/// Generates one sequence for a table. A beam width of 1 degenerates to
/// greedy decoding (ties break toward the smaller output id). If no
/// hypothesis emits `<eos>` within `max_len` steps, the best partial
/// hypothesis is returned with `completed` set to false.
pub fn generate(
    model: &MultiBranchModel,
    table: &EntityTable,
    options: &GenerateOptions,
) -> Generation {
    let run = model.encode(table);
    if run.source.is_empty() || options.max_len == 0 || options.beam_width == 0 {
        return Generation { tokens: Vec::new(), score: 0.0, completed: false };
    }
    let step_options = StepOptions { force_p_gen: options.force_p_gen };
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(&run),
        prev: BOS_ID,
    }];
    // (tokens, normalized score) of finished hypotheses.
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();

    for _ in 0..options.max_len {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &beam {
            let out = model.decode_step(&run, &hyp.state, hyp.prev, &options.weights, &step_options);
            let mut ranked: Vec<usize> = (0..out.distribution.probs.len()).collect();
            ranked.sort_by(|&a, &b| {
                out.distribution.probs[b]
                    .partial_cmp(&out.distribution.probs[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &id in ranked.iter().take(options.beam_width) {
                let log_prob = hyp.log_prob + (out.distribution.probs[id] + PROB_FLOOR).ln();
                if id == EOS_ID {
                    let done = Hypothesis {
                        tokens: hyp.tokens.clone(),
                        log_prob,
                        state: out.state.clone(),
                        prev: id,
                    };
                    finished.push((done.tokens.clone(), done.normalized(true)));
                } else {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(id);
                    candidates.push(Hypothesis {
                        tokens,
                        log_prob,
                        state: out.state.clone(),
                        prev: id,
                    });
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap()
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(options.beam_width);
        beam = candidates;
    }

    if let Some((tokens, score)) = finished
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(&a.0)))
    {
        return Generation {
            tokens: tokens.iter().map(|&id| model.output_word(&run, id).to_string()).collect(),
            score,
            completed: true,
        };
    }
    let best = beam
        .into_iter()
        .max_by(|a, b| {
            a.normalized(false)
                .partial_cmp(&b.normalized(false))
                .unwrap()
                .then_with(|| b.tokens.cmp(&a.tokens))
        })
        .expect("beam never empties before the length budget");
    Generation {
        tokens: best.tokens.iter().map(|&id| model.output_word(&run, id).to_string()).collect(),
        score: best.normalized(false),
        completed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KeyValuePair;
    use crate::mbd::model::{ModelConfig, StepOptions, Vocab};

    fn table() -> EntityTable {
        EntityTable {
            pairs: vec![
                KeyValuePair::new("name", &["ada", "lovelace"]),
                KeyValuePair::new("field", &["mathematics"]),
            ],
        }
    }

    fn model() -> MultiBranchModel {
        let vocab = Vocab::build(
            ["ada", "lovelace", "studied", "mathematics", "name", "field", "."]
                .iter()
                .copied(),
            64,
        );
        MultiBranchModel::new(ModelConfig::tiny(11), vocab).unwrap()
    }

    #[test]
    fn beam_width_one_matches_a_hand_rolled_greedy_loop() {
        let model = model();
        let weights = BranchWeights::new([0.4, 0.1, 0.5]).unwrap();
        let options = GenerateOptions {
            max_len: 6,
            beam_width: 1,
            weights,
            force_p_gen: None,
        };
        let generated = generate(&model, &table(), &options);

        let run = model.encode(&table());
        let mut state = model.initial_state(&run);
        let mut prev = BOS_ID;
        let mut tokens = Vec::new();
        for _ in 0..6 {
            let out = model.decode_step(&run, &state, prev, &weights, &StepOptions::default());
            let id = out.distribution.argmax();
            if id == EOS_ID {
                break;
            }
            tokens.push(model.output_word(&run, id).to_string());
            state = out.state;
            prev = id;
        }
        assert_eq!(generated.tokens, tokens);
    }

    #[test]
    fn generation_is_deterministic() {
        let model = model();
        let options = GenerateOptions::new(BranchWeights::new([0.2, 0.3, 0.5]).unwrap());
        let a = generate(&model, &table(), &options);
        let b = generate(&model, &table(), &options);
        assert_eq!(a, b);
    }

    #[test]
    fn length_budget_produces_a_partial_hypothesis() {
        let model = model();
        let mut options = GenerateOptions::new(BranchWeights::new([0.0, 0.5, 0.5]).unwrap());
        options.max_len = 2;
        options.beam_width = 2;
        let g = generate(&model, &table(), &options);
        // An untrained model almost never emits <eos> in two steps; either
        // way the flag must agree with the token count and budget.
        if !g.completed {
            assert_eq!(g.tokens.len(), 2);
        } else {
            assert!(g.tokens.len() <= 2);
        }
    }

    #[test]
    fn zero_budget_or_empty_beam_yields_an_empty_incomplete_generation() {
        let model = model();
        let mut options = GenerateOptions::new(BranchWeights::new([0.5, 0.0, 0.5]).unwrap());
        options.max_len = 0;
        let g = generate(&model, &table(), &options);
        assert!(g.tokens.is_empty() && !g.completed);
    }
}
