//! Model parameters, encoder, and the shared decoder step.
//!
//! Training and generation build their forward passes through the same
//! [`MultiBranchModel::step_on_tape`] code path, so probabilities seen during
//! decoding are bitwise the ones the loss was computed from.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EntityTable;
use crate::mbd::tape::{Node, ParamId, ParamSet, Tape, Tensor};
use crate::mbd::{LabeledExample, MbdError};

pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
const SPECIALS: [&str; 3] = ["<unk>", "<bos>", "<eos>"];

/// Probability floor added before taking the log of a target probability.
pub(crate) const PROB_FLOOR: f64 = 1e-12;

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Vocabulary cap, including the three special tokens.
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Per-direction encoder width; decoder layers use the same width.
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub branch_count: usize,
    pub branch_layers: usize,
    pub dropout: f64,
    /// Number of within-value position buckets for source-unit embeddings.
    pub pos_buckets: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2000,
            embed_dim: 64,
            hidden_dim: 64,
            encoder_layers: 2,
            branch_count: 3,
            branch_layers: 2,
            dropout: 0.3,
            pos_buckets: 32,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// A deliberately small configuration for fast tests.
    pub fn tiny(seed: u64) -> Self {
        ModelConfig {
            vocab_size: 64,
            embed_dim: 12,
            hidden_dim: 12,
            dropout: 0.0,
            pos_buckets: 8,
            seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), MbdError> {
        let fail = |msg: &str| Err(MbdError::Config(msg.to_string()));
        if self.vocab_size <= SPECIALS.len() {
            return fail("vocab_size must exceed the special-token count");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return fail("embed_dim and hidden_dim must be positive");
        }
        if self.encoder_layers != 2 {
            return fail("encoder_layers must be 2");
        }
        if self.branch_count != 3 {
            return fail("branch_count must be 3");
        }
        if self.branch_layers != 2 {
            return fail("branch_layers must be 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.pos_buckets == 0 {
            return fail("pos_buckets must be positive");
        }
        Ok(())
    }
}

/// Word-to-id mapping with `<unk>`, `<bos>`, `<eos>` reserved at 0, 1, 2.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from a token stream: most frequent first, ties by
    /// lexicographic order, truncated to `cap` entries including specials.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, cap: usize) -> Vocab {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for tok in tokens {
            *counts.entry(tok).or_insert(0) += 1;
        }
        for special in SPECIALS {
            counts.remove(special);
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(
            ranked
                .into_iter()
                .take(cap.saturating_sub(SPECIALS.len()))
                .map(|(w, _)| w.to_string()),
        );
        Vocab::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Vocab {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Per-step mixing weights over the decoder branches: non-negative and
/// summing to one (within 1e-9).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchWeights([f64; 3]);

impl BranchWeights {
    pub fn new(weights: [f64; 3]) -> Result<BranchWeights, MbdError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MbdError::Weights(format!(
                "weights must be non-negative and finite, got {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MbdError::Weights(format!("weights must sum to 1, got {sum}")));
        }
        Ok(BranchWeights(weights))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

/// Mixing weights used on a training step whose target token carries the
/// given support label: supported tokens train the content branch, the rest
/// train the hallucination branch, and the fluency branch trains on both.
pub fn training_weights(supported: bool) -> BranchWeights {
    if supported {
        BranchWeights([0.5, 0.0, 0.5])
    } else {
        BranchWeights([0.0, 0.5, 0.5])
    }
}

/// One encoder input: a table value token together with its key and its
/// position inside the value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceUnit {
    pub word: String,
    pub key: String,
    pub position: usize,
}

/// Flattens a table into source units, preserving pair order and value order.
pub fn linearize_table(table: &EntityTable) -> Vec<SourceUnit> {
    let mut units = Vec::new();
    for pair in &table.pairs {
        for (position, word) in pair.value.iter().enumerate() {
            units.push(SourceUnit { word: word.clone(), key: pair.key.clone(), position });
        }
    }
    units
}

/// A linearized table resolved against the vocabulary, with out-of-vocabulary
/// source words assigned extended ids `vocab.len() + k`.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub units: Vec<SourceUnit>,
    word_ids: Vec<usize>,
    key_ids: Vec<usize>,
    pos_ids: Vec<usize>,
    /// Output-space id of each unit (vocabulary id or extended id).
    pub ext_ids: Vec<usize>,
    /// Out-of-vocabulary source words, in order of first appearance.
    pub ext_words: Vec<String>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

struct LstmParams {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

struct ParamIds {
    word_emb: ParamId,
    pos_emb: ParamId,
    /// `[layer][direction]`, direction 0 forward, 1 backward.
    enc: Vec<[LstmParams; 2]>,
    init_h: Vec<ParamId>,
    init_c: Vec<ParamId>,
    attn_w: ParamId,
    /// `[branch][layer]`.
    branches: Vec<Vec<LstmParams>>,
    mix_w: ParamId,
    mix_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
}

pub struct MultiBranchModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub(crate) params: ParamSet,
    ids: ParamIds,
}

/// Mutable handle used by training to update parameters in place.
impl MultiBranchModel {
    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }
}

fn add_lstm(params: &mut ParamSet, prefix: &str, input_dim: usize, hidden: usize) -> LstmParams {
    LstmParams {
        w_ih: params.add(&format!("{prefix}.w_ih"), Tensor::zeros(4 * hidden, input_dim)),
        w_hh: params.add(&format!("{prefix}.w_hh"), Tensor::zeros(4 * hidden, hidden)),
        b: params.add(&format!("{prefix}.b"), Tensor::zeros(4 * hidden, 1)),
    }
}

impl MultiBranchModel {
    /// Creates a model with parameters drawn uniformly from ±0.1, seeded by
    /// `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<MultiBranchModel, MbdError> {
        config.validate()?;
        if vocab.len() > config.vocab_size {
            return Err(MbdError::Config(format!(
                "vocabulary holds {} words but the cap is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let n = config.embed_dim;
        let h = config.hidden_dim;
        let v = vocab.len();
        let mut params = ParamSet::default();

        let word_emb = params.add("embed.word", Tensor::zeros(v, n));
        let pos_emb = params.add("embed.pos", Tensor::zeros(config.pos_buckets, n));

        let mut enc = Vec::new();
        for layer in 0..config.encoder_layers {
            let input_dim = if layer == 0 { n } else { 2 * h };
            enc.push([
                add_lstm(&mut params, &format!("enc.l{layer}.fwd"), input_dim, h),
                add_lstm(&mut params, &format!("enc.l{layer}.bwd"), input_dim, h),
            ]);
        }
        let mut init_h = Vec::new();
        let mut init_c = Vec::new();
        for layer in 0..config.branch_layers {
            init_h.push(params.add(&format!("enc.init_h.l{layer}"), Tensor::zeros(h, 2 * h)));
            init_c.push(params.add(&format!("enc.init_c.l{layer}"), Tensor::zeros(h, 2 * h)));
        }
        let attn_w = params.add("attn.w", Tensor::zeros(2 * h, 2 * h));

        let mut branches = Vec::new();
        for branch in 0..config.branch_count {
            let mut layers = Vec::new();
            for layer in 0..config.branch_layers {
                let input_dim = if layer == 0 { n + 3 * h } else { h };
                layers.push(add_lstm(
                    &mut params,
                    &format!("br{branch}.l{layer}"),
                    input_dim,
                    h,
                ));
            }
            branches.push(layers);
        }

        let mix_w = params.add("out.mix_w", Tensor::zeros(h, 3 * h));
        let mix_b = params.add("out.mix_b", Tensor::zeros(h, 1));
        let out_w = params.add("out.w", Tensor::zeros(v, h));
        let out_b = params.add("out.b", Tensor::zeros(v, 1));
        let gate_w = params.add("gate.w", Tensor::zeros(1, 3 * h + n));
        let gate_b = params.add("gate.b", Tensor::zeros(1, 1));

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for tensor in &mut params.tensors {
            for value in &mut tensor.data {
                *value = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }

        Ok(MultiBranchModel {
            config,
            vocab,
            params,
            ids: ParamIds {
                word_emb,
                pos_emb,
                enc,
                init_h,
                init_c,
                attn_w,
                branches,
                mix_w,
                mix_b,
                out_w,
                out_b,
                gate_w,
                gate_b,
            },
        })
    }

    /// Resolves a table against the vocabulary and assigns extended ids to
    /// out-of-vocabulary source words.
    pub fn encode_source(&self, table: &EntityTable) -> EncodedSource {
        let units = linearize_table(table);
        let mut ext_words: Vec<String> = Vec::new();
        let mut word_ids = Vec::with_capacity(units.len());
        let mut key_ids = Vec::with_capacity(units.len());
        let mut pos_ids = Vec::with_capacity(units.len());
        let mut ext_ids = Vec::with_capacity(units.len());
        for unit in &units {
            word_ids.push(self.vocab.id(&unit.word));
            key_ids.push(self.vocab.id(&unit.key));
            pos_ids.push(unit.position.min(self.config.pos_buckets - 1));
            if self.vocab.contains(&unit.word) {
                ext_ids.push(self.vocab.id(&unit.word));
            } else {
                let k = match ext_words.iter().position(|w| w == &unit.word) {
                    Some(k) => k,
                    None => {
                        ext_words.push(unit.word.clone());
                        ext_words.len() - 1
                    }
                };
                ext_ids.push(self.vocab.len() + k);
            }
        }
        EncodedSource { units, word_ids, key_ids, pos_ids, ext_ids, ext_words }
    }

    /// Output-space ids for a target sequence: vocabulary id when known,
    /// extended id when the word is copyable from the source, `<unk>`
    /// otherwise.
    pub fn target_ids(&self, target: &[String], src: &EncodedSource) -> Vec<usize> {
        target
            .iter()
            .map(|word| {
                if self.vocab.contains(word) {
                    self.vocab.id(word)
                } else if let Some(k) = src.ext_words.iter().position(|w| w == word) {
                    self.vocab.len() + k
                } else {
                    UNK_ID
                }
            })
            .collect()
    }

    fn embed_unit(&self, tape: &mut Tape, src: &EncodedSource, j: usize) -> Node {
        let word = tape.embed_row(self.ids.word_emb, src.word_ids[j]);
        let key = tape.embed_row(self.ids.word_emb, src.key_ids[j]);
        let pos = tape.embed_row(self.ids.pos_emb, src.pos_ids[j]);
        let wk = tape.add(word, key);
        tape.add(wk, pos)
    }

    fn embed_output_id(&self, tape: &mut Tape, ext_id: usize) -> Node {
        let id = if ext_id < self.vocab.len() { ext_id } else { UNK_ID };
        tape.embed_row(self.ids.word_emb, id)
    }

    fn lstm_step(
        &self,
        tape: &mut Tape,
        lstm: &LstmParams,
        x: Node,
        h: Node,
        c: Node,
    ) -> (Node, Node) {
        let hidden = self.config.hidden_dim;
        let from_x = tape.matvec(lstm.w_ih, x);
        let from_h = tape.matvec(lstm.w_hh, h);
        let bias = tape.param(lstm.b);
        let partial = tape.add(from_x, from_h);
        let gates = tape.add(partial, bias);
        let i_gate = tape.slice(gates, 0, hidden);
        let f_gate = tape.slice(gates, hidden, hidden);
        let g_gate = tape.slice(gates, 2 * hidden, hidden);
        let o_gate = tape.slice(gates, 3 * hidden, hidden);
        let i = tape.sigmoid(i_gate);
        let f = tape.sigmoid(f_gate);
        let g = tape.tanh(g_gate);
        let o = tape.sigmoid(o_gate);
        let keep = tape.mul(f, c);
        let write = tape.mul(i, g);
        let c_new = tape.add(keep, write);
        let c_act = tape.tanh(c_new);
        let h_new = tape.mul(o, c_act);
        (h_new, c_new)
    }

    fn run_direction(
        &self,
        tape: &mut Tape,
        lstm: &LstmParams,
        inputs: &[Node],
        reverse: bool,
    ) -> (Vec<Node>, Node, Node) {
        let hidden = self.config.hidden_dim;
        let mut h = tape.zeros(hidden);
        let mut c = tape.zeros(hidden);
        let mut outputs = vec![0; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for j in order {
            let (h_new, c_new) = self.lstm_step(tape, lstm, inputs[j], h, c);
            h = h_new;
            c = c_new;
            outputs[j] = h;
        }
        (outputs, h, c)
    }

    fn dropout_mask(&self, len: usize, rng: &mut Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
        let rng = rng.as_deref_mut()?;
        let p = self.config.dropout;
        if p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        Some((0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect())
    }

    fn maybe_dropout(&self, tape: &mut Tape, x: Node, rng: &mut Option<&mut ChaCha8Rng>) -> Node {
        match self.dropout_mask(tape.value(x).len(), rng) {
            Some(mask) => tape.mul_mask(x, mask),
            None => x,
        }
    }

    /// Runs the encoder on the tape. Returns per-unit annotation nodes and
    /// the projected initial (h, c) for each decoder layer.
    pub(crate) fn encode_on_tape(
        &self,
        tape: &mut Tape,
        src: &EncodedSource,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> EncoderNodes {
        let embedded: Vec<Node> = (0..src.len()).map(|j| self.embed_unit(tape, src, j)).collect();

        let mut layer_inputs = embedded;
        let mut finals: Vec<[(Node, Node); 2]> = Vec::new();
        let mut annotations = Vec::new();
        for (layer, dirs) in self.ids.enc.iter().enumerate() {
            let inputs = if layer == 0 {
                layer_inputs.clone()
            } else {
                layer_inputs
                    .iter()
                    .map(|&x| self.maybe_dropout(tape, x, rng))
                    .collect()
            };
            let (fwd_out, fwd_h, fwd_c) = self.run_direction(tape, &dirs[0], &inputs, false);
            let (bwd_out, bwd_h, bwd_c) = self.run_direction(tape, &dirs[1], &inputs, true);
            annotations = fwd_out
                .iter()
                .zip(&bwd_out)
                .map(|(&f, &b)| tape.concat(&[f, b]))
                .collect();
            finals.push([(fwd_h, fwd_c), (bwd_h, bwd_c)]);
            layer_inputs = annotations.clone();
        }

        // Decoder layer l starts from a projection of encoder layer l's
        // final states (both directions).
        let mut init_h = Vec::new();
        let mut init_c = Vec::new();
        for layer in 0..self.config.branch_layers {
            let [(fh, fc), (bh, bc)] = finals[layer.min(finals.len() - 1)];
            let h_cat = tape.concat(&[fh, bh]);
            let c_cat = tape.concat(&[fc, bc]);
            let h_proj = tape.matvec(self.ids.init_h[layer], h_cat);
            let c_proj = tape.matvec(self.ids.init_c[layer], c_cat);
            init_h.push(tape.tanh(h_proj));
            init_c.push(tape.tanh(c_proj));
        }
        EncoderNodes { annotations, init_h, init_c }
    }

    pub(crate) fn initial_state_nodes(&self, tape: &mut Tape, enc: &EncoderNodes) -> StateNodes {
        let branches = (0..self.config.branch_count)
            .map(|_| {
                (0..self.config.branch_layers)
                    .map(|l| (enc.init_h[l], enc.init_c[l]))
                    .collect()
            })
            .collect();
        let top = self.config.branch_layers - 1;
        let feed = tape.zeros(self.config.hidden_dim);
        StateNodes { branches, combined: enc.init_h[top], feed }
    }

    /// One decoder step on the tape: attention, every branch's LSTM stack,
    /// the weighted state mix, the output softmax, and the copy gate.
    pub(crate) fn step_on_tape(
        &self,
        tape: &mut Tape,
        annotations: &[Node],
        prev_emb: Node,
        state: &StateNodes,
        weights: &BranchWeights,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> StepNodes {
        // Attention over source annotations, queried by the previous
        // combined state and the input-feed vector.
        let query = tape.concat(&[state.combined, state.feed]);
        let projected = tape.matvec(self.ids.attn_w, query);
        let scores: Vec<Node> =
            annotations.iter().map(|&a| tape.dot(projected, a)).collect();
        let score_vec = tape.concat(&scores);
        let alpha = tape.softmax(score_vec);
        let mut context = tape.zeros(2 * self.config.hidden_dim);
        for (j, &a) in annotations.iter().enumerate() {
            let weight = tape.slice(alpha, j, 1);
            let term = tape.scale_by(weight, a);
            context = tape.add(context, term);
        }

        // Advance every branch; the mixing weights only blend the outputs,
        // so each branch's recurrent state stays live for later steps.
        let branch_input = tape.concat(&[prev_emb, context, state.feed]);
        let mut new_branches = Vec::with_capacity(self.config.branch_count);
        let mut tops = Vec::with_capacity(self.config.branch_count);
        for (branch, layers) in self.ids.branches.iter().enumerate() {
            let mut states = Vec::with_capacity(layers.len());
            let mut x = self.maybe_dropout(tape, branch_input, rng);
            for (layer, lstm) in layers.iter().enumerate() {
                if layer > 0 {
                    x = self.maybe_dropout(tape, x, rng);
                }
                let (h_prev, c_prev) = state.branches[branch][layer];
                let (h, c) = self.lstm_step(tape, lstm, x, h_prev, c_prev);
                states.push((h, c));
                x = h;
            }
            tops.push(x);
            new_branches.push(states);
        }
        let terms: Vec<(f64, Node)> =
            weights.as_array().iter().copied().zip(tops).collect();
        let combined = tape.weighted_sum(&terms);

        let mix_in = tape.concat(&[combined, context]);
        let mixed = tape.matvec(self.ids.mix_w, mix_in);
        let mix_bias = tape.param(self.ids.mix_b);
        let mixed_b = tape.add(mixed, mix_bias);
        let att_vec = tape.tanh(mixed_b);

        let logits = tape.matvec(self.ids.out_w, att_vec);
        let out_bias = tape.param(self.ids.out_b);
        let logits_b = tape.add(logits, out_bias);
        let p_vocab = tape.softmax(logits_b);

        let gate_in = tape.concat(&[combined, context, prev_emb]);
        let gate_lin = tape.matvec(self.ids.gate_w, gate_in);
        let gate_bias = tape.param(self.ids.gate_b);
        let gate_pre = tape.add(gate_lin, gate_bias);
        let p_gen = tape.sigmoid(gate_pre);

        StepNodes {
            alpha,
            context,
            p_vocab,
            p_gen,
            state: StateNodes { branches: new_branches, combined, feed: att_vec },
        }
    }

    /// Probability node (length 1) assigned to output id `target_ext` by a
    /// decoded step: generation mass for vocabulary words plus copy mass over
    /// matching source positions.
    pub(crate) fn target_prob_node(
        &self,
        tape: &mut Tape,
        step: &StepNodes,
        src: &EncodedSource,
        target_ext: usize,
    ) -> Node {
        let copy_positions: Vec<usize> = (0..src.len())
            .filter(|&j| src.ext_ids[j] == target_ext)
            .collect();
        let gen_part = if target_ext < self.vocab.len() {
            let pv = tape.gather_sum(step.p_vocab, vec![target_ext]);
            Some(tape.mul(step.p_gen, pv))
        } else {
            None
        };
        let copy_part = if copy_positions.is_empty() {
            None
        } else {
            let mass = tape.gather_sum(step.alpha, copy_positions);
            let keep = tape.affine_const(-1.0, 1.0, step.p_gen);
            Some(tape.mul(keep, mass))
        };
        match (gen_part, copy_part) {
            (Some(g), Some(c)) => tape.add(g, c),
            (Some(g), None) => g,
            (None, Some(c)) => c,
            (None, None) => unreachable!("extended target id without source occurrence"),
        }
    }

    /// Mean negative log-likelihood of an example under per-step training
    /// weights derived from its token labels. `<eos>` is appended as a
    /// supported step.
    pub(crate) fn example_loss_on_tape(
        &self,
        tape: &mut Tape,
        example: &LabeledExample,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Node, MbdError> {
        if example.target.is_empty() {
            return Err(MbdError::Example {
                id: example.id.clone(),
                detail: "empty target".to_string(),
            });
        }
        if example.target.len() != example.labels.len() {
            return Err(MbdError::Example {
                id: example.id.clone(),
                detail: format!(
                    "{} target tokens but {} labels",
                    example.target.len(),
                    example.labels.len()
                ),
            });
        }
        let src = self.encode_source(&example.table);
        if src.is_empty() {
            return Err(MbdError::Example {
                id: example.id.clone(),
                detail: "empty table".to_string(),
            });
        }
        let enc = self.encode_on_tape(tape, &src, rng);
        let mut state = self.initial_state_nodes(tape, &enc);

        let mut targets = self.target_ids(&example.target, &src);
        targets.push(EOS_ID);
        let mut labels: Vec<bool> = example.labels.clone();
        labels.push(true);

        let mut prev_id = BOS_ID;
        let mut losses = Vec::with_capacity(targets.len());
        for (&target_ext, &label) in targets.iter().zip(&labels) {
            let prev_emb = self.embed_output_id(tape, prev_id);
            let weights = training_weights(label);
            let step =
                self.step_on_tape(tape, &enc.annotations, prev_emb, &state, &weights, rng);
            let prob = self.target_prob_node(tape, &step, &src, target_ext);
            let shifted = tape.affine_const(1.0, PROB_FLOOR, prob);
            let logp = tape.ln(shifted);
            losses.push(tape.scale(-1.0, logp));
            state = step.state;
            prev_id = target_ext;
        }
        let mean_coeff = 1.0 / losses.len() as f64;
        let terms: Vec<(f64, Node)> = losses.into_iter().map(|l| (mean_coeff, l)).collect();
        Ok(tape.weighted_sum(&terms))
    }

    /// Evaluation-mode encoder pass: runs once per table, returns plain
    /// values for reuse across decode steps.
    pub fn encode(&self, table: &EntityTable) -> EncoderRun {
        let src = self.encode_source(table);
        let mut tape = Tape::new(&self.params);
        let mut no_rng: Option<&mut ChaCha8Rng> = None;
        let enc = self.encode_on_tape(&mut tape, &src, &mut no_rng);
        EncoderRun {
            annotations: enc.annotations.iter().map(|&a| tape.value(a).to_vec()).collect(),
            init_h: enc.init_h.iter().map(|&n| tape.value(n).to_vec()).collect(),
            init_c: enc.init_c.iter().map(|&n| tape.value(n).to_vec()).collect(),
            source: src,
        }
    }

    pub fn initial_state(&self, run: &EncoderRun) -> DecoderState {
        let branches = (0..self.config.branch_count)
            .map(|_| BranchLayers {
                layers: (0..self.config.branch_layers)
                    .map(|l| (run.init_h[l].clone(), run.init_c[l].clone()))
                    .collect(),
            })
            .collect();
        DecoderState {
            branches,
            combined: run.init_h[self.config.branch_layers - 1].clone(),
            context: vec![0.0; 2 * self.config.hidden_dim],
            input_feed: vec![0.0; self.config.hidden_dim],
        }
    }

    /// One evaluation-mode decoder step. `prev` is an output-space id (the
    /// first step passes [`BOS_ID`]); extended ids embed as `<unk>` but copy
    /// mass still flows to them through attention.
    pub fn decode_step(
        &self,
        run: &EncoderRun,
        state: &DecoderState,
        prev: usize,
        weights: &BranchWeights,
        options: &StepOptions,
    ) -> StepOutput {
        let mut tape = Tape::new(&self.params);
        let mut no_rng: Option<&mut ChaCha8Rng> = None;
        let annotations: Vec<Node> =
            run.annotations.iter().map(|a| tape.leaf(a.clone())).collect();
        let state_nodes = StateNodes {
            branches: state
                .branches
                .iter()
                .map(|b| {
                    b.layers
                        .iter()
                        .map(|(h, c)| (tape.leaf(h.clone()), tape.leaf(c.clone())))
                        .collect()
                })
                .collect(),
            combined: tape.leaf(state.combined.clone()),
            feed: tape.leaf(state.input_feed.clone()),
        };
        let prev_emb = self.embed_output_id(&mut tape, prev);
        let step =
            self.step_on_tape(&mut tape, &annotations, prev_emb, &state_nodes, weights, &mut no_rng);

        let p_gen = match options.force_p_gen {
            Some(forced) => forced,
            None => tape.scalar(step.p_gen),
        };
        let p_vocab = tape.value(step.p_vocab);
        let alpha = tape.value(step.alpha);
        let mut probs = vec![0.0; self.vocab.len() + run.source.ext_words.len()];
        for (w, &pv) in p_vocab.iter().enumerate() {
            probs[w] = p_gen * pv;
        }
        for (j, &ext) in run.source.ext_ids.iter().enumerate() {
            probs[ext] += (1.0 - p_gen) * alpha[j];
        }

        StepOutput {
            distribution: Distribution { probs, vocab_len: self.vocab.len() },
            p_gen,
            attention: alpha.to_vec(),
            state: DecoderState {
                branches: step
                    .state
                    .branches
                    .iter()
                    .map(|layers| BranchLayers {
                        layers: layers
                            .iter()
                            .map(|&(h, c)| (tape.value(h).to_vec(), tape.value(c).to_vec()))
                            .collect(),
                    })
                    .collect(),
                combined: tape.value(step.state.combined).to_vec(),
                context: tape.value(step.context).to_vec(),
                input_feed: tape.value(step.state.feed).to_vec(),
            },
        }
    }

    /// Resolves an output-space id to a word using the run's extended words.
    pub fn output_word<'a>(&'a self, run: &'a EncoderRun, id: usize) -> &'a str {
        if id < self.vocab.len() {
            self.vocab.word(id)
        } else {
            &run.source.ext_words[id - self.vocab.len()]
        }
    }
}

pub(crate) struct EncoderNodes {
    pub annotations: Vec<Node>,
    pub init_h: Vec<Node>,
    pub init_c: Vec<Node>,
}

pub(crate) struct StateNodes {
    /// `[branch][layer] -> (h, c)`.
    pub branches: Vec<Vec<(Node, Node)>>,
    pub combined: Node,
    pub feed: Node,
}

pub(crate) struct StepNodes {
    pub alpha: Node,
    pub context: Node,
    pub p_vocab: Node,
    pub p_gen: Node,
    pub state: StateNodes,
}

/// Encoder output in plain values, reusable across decode steps.
#[derive(Debug, Clone)]
pub struct EncoderRun {
    pub annotations: Vec<Vec<f64>>,
    pub source: EncodedSource,
    init_h: Vec<Vec<f64>>,
    init_c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchLayers {
    /// `(h, c)` per layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub branches: Vec<BranchLayers>,
    pub combined: Vec<f64>,
    pub context: Vec<f64>,
    pub input_feed: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions {
    /// Overrides the copy gate's value when building the output
    /// distribution; `Some(0.0)` forces pure copying.
    pub force_p_gen: Option<f64>,
}

/// Probabilities over the extended output space: vocabulary ids first, then
/// the run's out-of-vocabulary source words.
#[derive(Debug, Clone)]
pub struct Distribution {
    pub probs: Vec<f64>,
    vocab_len: usize,
}

impl Distribution {
    /// Highest-probability id; ties break toward the smaller id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub distribution: Distribution,
    pub p_gen: f64,
    pub attention: Vec<f64>,
    pub state: DecoderState,
}

impl PartialEq for Distribution {
    fn eq(&self, other: &Self) -> bool {
        self.probs == other.probs && self.vocab_len == other.vocab_len
    }
}
