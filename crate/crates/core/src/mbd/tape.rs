//! A small reverse-mode differentiation tape over `f64` vectors.
//!
//! Parameters live outside the tape in a [`ParamSet`]; tape nodes hold
//! forward values and enough structure to push gradients back to both nodes
//! and parameters. Every value is a flat vector; matrices appear only as
//! parameters consumed by [`Tape::matvec`] and [`Tape::embed_row`].
//!
//! The forward pass is eager: creating a node computes its value, so the same
//! code path serves training (build graph, call [`Tape::backward`]) and
//! inference (build graph, read values, drop the tape).

/// A dense matrix (or vector, with `cols == 1`) of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

pub type ParamId = usize;

/// Named parameter tensors; ids are indices into `tensors`.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.names.len() - 1
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Per-tensor gradients, parallel to a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients { tensors: params.tensors.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for g in t.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

pub type Node = usize;

enum Op {
    Leaf,
    Param(ParamId),
    EmbedRow(ParamId, usize),
    MatVec(ParamId, Node),
    Add(Node, Node),
    Mul(Node, Node),
    Scale(f64, Node),
    /// Stores only the slope; the intercept is folded into the value.
    AffineConst(f64, Node),
    Sigmoid(Node),
    Tanh(Node),
    Concat(Vec<Node>),
    Slice(Node, usize, usize),
    Softmax(Node),
    Dot(Node, Node),
    /// Sum of selected components; repeated indices accumulate.
    GatherSum(Node, Vec<usize>),
    MulMask(Node, Vec<f64>),
    Ln(Node),
    /// Σ cᵢ·xᵢ over same-length vectors with constant coefficients.
    WeightedSum(Vec<(f64, Node)>),
    /// scalar[0] · vector.
    ScaleBy { scalar: Node, vector: Node },
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    ops: Vec<Op>,
    values: Vec<Vec<f64>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape { params, ops: Vec::new(), values: Vec::new() }
    }

    pub fn value(&self, node: Node) -> &[f64] {
        &self.values[node]
    }

    pub fn scalar(&self, node: Node) -> f64 {
        debug_assert_eq!(self.values[node].len(), 1);
        self.values[node][0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Node {
        self.ops.push(op);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Node {
        self.push(Op::Leaf, value)
    }

    pub fn zeros(&mut self, len: usize) -> Node {
        self.leaf(vec![0.0; len])
    }

    /// The whole tensor, flattened row-major (used for bias vectors).
    pub fn param(&mut self, id: ParamId) -> Node {
        let value = self.params.tensors[id].data.clone();
        self.push(Op::Param(id), value)
    }

    pub fn embed_row(&mut self, id: ParamId, row: usize) -> Node {
        let value = self.params.tensors[id].row(row).to_vec();
        self.push(Op::EmbedRow(id, row), value)
    }

    pub fn matvec(&mut self, id: ParamId, x: Node) -> Node {
        let w = &self.params.tensors[id];
        let xv = &self.values[x];
        debug_assert_eq!(w.cols, xv.len(), "matvec shape mismatch for {}", self.params.names[id]);
        let mut out = vec![0.0; w.rows];
        for (i, out_i) in out.iter_mut().enumerate() {
            let row = w.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(xv) {
                acc += a * b;
            }
            *out_i = acc;
        }
        self.push(Op::MatVec(id, x), out)
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let value = self.values[a].iter().zip(&self.values[b]).map(|(x, y)| x + y).collect();
        self.push(Op::Add(a, b), value)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let value = self.values[a].iter().zip(&self.values[b]).map(|(x, y)| x * y).collect();
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, c: f64, x: Node) -> Node {
        let value = self.values[x].iter().map(|v| c * v).collect();
        self.push(Op::Scale(c, x), value)
    }

    /// `a·x + b`, elementwise with scalar constants.
    pub fn affine_const(&mut self, a: f64, b: f64, x: Node) -> Node {
        let value = self.values[x].iter().map(|v| a * v + b).collect();
        self.push(Op::AffineConst(a, x), value)
    }

    pub fn sigmoid(&mut self, x: Node) -> Node {
        let value = self.values[x].iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        self.push(Op::Sigmoid(x), value)
    }

    pub fn tanh(&mut self, x: Node) -> Node {
        let value = self.values[x].iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh(x), value)
    }

    pub fn concat(&mut self, xs: &[Node]) -> Node {
        let mut value = Vec::new();
        for &x in xs {
            value.extend_from_slice(&self.values[x]);
        }
        self.push(Op::Concat(xs.to_vec()), value)
    }

    pub fn slice(&mut self, x: Node, from: usize, len: usize) -> Node {
        let value = self.values[x][from..from + len].to_vec();
        self.push(Op::Slice(x, from, len), value)
    }

    /// Numerically stabilized softmax (max subtraction).
    pub fn softmax(&mut self, x: Node) -> Node {
        let xv = &self.values[x];
        let max = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value = exps.iter().map(|e| e / total).collect();
        self.push(Op::Softmax(x), value)
    }

    pub fn dot(&mut self, a: Node, b: Node) -> Node {
        let value = self.values[a].iter().zip(&self.values[b]).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), vec![value])
    }

    pub fn gather_sum(&mut self, x: Node, indices: Vec<usize>) -> Node {
        let value = indices.iter().map(|&i| self.values[x][i]).sum();
        self.push(Op::GatherSum(x, indices), vec![value])
    }

    pub fn mul_mask(&mut self, x: Node, mask: Vec<f64>) -> Node {
        let value = self.values[x].iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(Op::MulMask(x, mask), value)
    }

    pub fn ln(&mut self, x: Node) -> Node {
        let value = self.values[x].iter().map(|v| v.ln()).collect();
        self.push(Op::Ln(x), value)
    }

    /// Σ cᵢ·xᵢ. Zero coefficients are dropped; a single term with
    /// coefficient 1.0 returns its input node unchanged, so a one-hot
    /// combination is bitwise the selected input.
    pub fn weighted_sum(&mut self, terms: &[(f64, Node)]) -> Node {
        let live: Vec<(f64, Node)> =
            terms.iter().copied().filter(|(c, _)| *c != 0.0).collect();
        if live.is_empty() {
            let len = self.values[terms[0].1].len();
            return self.zeros(len);
        }
        if live.len() == 1 && live[0].0 == 1.0 {
            return live[0].1;
        }
        let len = self.values[live[0].1].len();
        let mut value = vec![0.0; len];
        for &(c, x) in &live {
            for (out, v) in value.iter_mut().zip(&self.values[x]) {
                *out += c * v;
            }
        }
        self.push(Op::WeightedSum(live), value)
    }

    pub fn scale_by(&mut self, scalar: Node, vector: Node) -> Node {
        let s = self.values[scalar][0];
        let value = self.values[vector].iter().map(|v| s * v).collect();
        self.push(Op::ScaleBy { scalar, vector }, value)
    }

    /// Reverse pass seeded with `d(seed)/d(seed) = 1`; `seed` must hold a
    /// single element. Returns parameter gradients.
    pub fn backward(&self, seed: Node) -> Gradients {
        assert_eq!(self.values[seed].len(), 1, "backward seed must be scalar");
        let mut grads = Gradients::zeros_like(self.params);
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        node_grads[seed] = Some(vec![1.0]);

        for node in (0..self.ops.len()).rev() {
            let Some(grad) = node_grads[node].take() else { continue };
            // Re-inserting below keeps the borrow checker happy while letting
            // helper `accum` mutate other slots.
            let accum = |slot: &mut Vec<Option<Vec<f64>>>, target: Node, add: &[f64]| {
                let entry = slot[target].get_or_insert_with(|| vec![0.0; add.len()]);
                for (d, s) in entry.iter_mut().zip(add) {
                    *d += s;
                }
            };

            match &self.ops[node] {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (d, s) in grads.tensors[*id].iter_mut().zip(&grad) {
                        *d += s;
                    }
                }
                Op::EmbedRow(id, row) => {
                    let cols = self.params.tensors[*id].cols;
                    let base = row * cols;
                    for (j, g) in grad.iter().enumerate() {
                        grads.tensors[*id][base + j] += g;
                    }
                }
                Op::MatVec(id, x) => {
                    let w = &self.params.tensors[*id];
                    let xv = &self.values[*x];
                    let mut gx = vec![0.0; xv.len()];
                    for i in 0..w.rows {
                        let gi = grad[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = w.row(i);
                        let grow = &mut grads.tensors[*id][i * w.cols..(i + 1) * w.cols];
                        for j in 0..w.cols {
                            grow[j] += gi * xv[j];
                            gx[j] += gi * row[j];
                        }
                    }
                    accum(&mut node_grads, *x, &gx);
                }
                Op::Add(a, b) => {
                    accum(&mut node_grads, *a, &grad);
                    accum(&mut node_grads, *b, &grad);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> =
                        grad.iter().zip(&self.values[*b]).map(|(g, v)| g * v).collect();
                    let gb: Vec<f64> =
                        grad.iter().zip(&self.values[*a]).map(|(g, v)| g * v).collect();
                    accum(&mut node_grads, *a, &ga);
                    accum(&mut node_grads, *b, &gb);
                }
                Op::Scale(c, x) => {
                    let gx: Vec<f64> = grad.iter().map(|g| c * g).collect();
                    accum(&mut node_grads, *x, &gx);
                }
                Op::AffineConst(a, x) => {
                    let gx: Vec<f64> = grad.iter().map(|g| a * g).collect();
                    accum(&mut node_grads, *x, &gx);
                }
                Op::Sigmoid(x) => {
                    let y = &self.values[node];
                    let gx: Vec<f64> =
                        grad.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accum(&mut node_grads, *x, &gx);
                }
                Op::Tanh(x) => {
                    let y = &self.values[node];
                    let gx: Vec<f64> =
                        grad.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accum(&mut node_grads, *x, &gx);
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let len = self.values[x].len();
                        accum(&mut node_grads, x, &grad[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Slice(x, from, len) => {
                    let mut gx = vec![0.0; self.values[*x].len()];
                    gx[*from..from + len].copy_from_slice(&grad);
                    accum(&mut node_grads, *x, &gx);
                }
                Op::Softmax(x) => {
                    let y = &self.values[node];
                    let dot: f64 = grad.iter().zip(y).map(|(g, y)| g * y).sum();
                    let gx: Vec<f64> =
                        grad.iter().zip(y).map(|(g, y)| y * (g - dot)).collect();
                    accum(&mut node_grads, *x, &gx);
                }
                Op::Dot(a, b) => {
                    let g0 = grad[0];
                    let ga: Vec<f64> = self.values[*b].iter().map(|v| g0 * v).collect();
                    let gb: Vec<f64> = self.values[*a].iter().map(|v| g0 * v).collect();
                    accum(&mut node_grads, *a, &ga);
                    accum(&mut node_grads, *b, &gb);
                }
                Op::GatherSum(x, indices) => {
                    let mut gx = vec![0.0; self.values[*x].len()];
                    for &i in indices {
                        gx[i] += grad[0];
                    }
                    accum(&mut node_grads, *x, &gx);
                }
                Op::MulMask(x, mask) => {
                    let gx: Vec<f64> = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
                    accum(&mut node_grads, *x, &gx);
                }
                Op::Ln(x) => {
                    let gx: Vec<f64> =
                        grad.iter().zip(&self.values[*x]).map(|(g, v)| g / v).collect();
                    accum(&mut node_grads, *x, &gx);
                }
                Op::WeightedSum(terms) => {
                    for &(c, x) in terms {
                        let gx: Vec<f64> = grad.iter().map(|g| c * g).collect();
                        accum(&mut node_grads, x, &gx);
                    }
                }
                Op::ScaleBy { scalar, vector } => {
                    let s = self.values[*scalar][0];
                    let gv: Vec<f64> = grad.iter().map(|g| s * g).collect();
                    let gs: f64 =
                        grad.iter().zip(&self.values[*vector]).map(|(g, v)| g * v).sum();
                    accum(&mut node_grads, *vector, &gv);
                    accum(&mut node_grads, *scalar, &[gs]);
                }
            }
        }
        grads
    }
}
