//! Operation tape and the differentiable operations recorded on it.
//!
//! Every operation appends one node holding its forward value. Inputs always
//! precede outputs, so a single reverse sweep over the node list visits the
//! graph in a valid order for the chain rule.

use rand::{Rng, RngCore};

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// What a recurrent layer hands back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GruOutput {
    /// Hidden state after the last processed step, `[B×n]`.
    Final,
    /// Hidden state at every time index, `[B×T×n]`, aligned to input positions.
    Sequence,
}

/// Weights of one GRU direction.
///
/// `w_ih` is `[d×3n]`, `w_hh` is `[n×3n]` and `bias` is `[3n]`, with gate
/// columns ordered update, reset, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

struct GruRecord {
    x: usize,
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    reverse: bool,
    output: GruOutput,
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
    mask: Option<Vec<f64>>,
    // Indexed [b][s][j] in processing order.
    update: Vec<f64>,
    reset: Vec<f64>,
    candidate: Vec<f64>,
    // Indexed [b][s][j] for s in 0..=steps; slot 0 is the zero initial state.
    states: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { a: usize },
    AddBias { x: usize, bias: usize },
    Conv1d { x: usize, w: usize, pad_left: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    Pointwise { x: usize, kind: Activation },
    Dropout { x: usize, mask: Vec<f64> },
    Embedding { table: usize, indices: Vec<Option<usize>> },
    EmbedConv(Box<EmbedConvRecord>),
    Reshape { x: usize },
    Concat { a: usize, b: usize },
    Gru(Box<GruRecord>),
    Sum { x: usize },
    Mean { x: usize },
    Bce { p: usize, targets: Vec<f64>, clamped: Vec<f64> },
}

struct EmbedConvRecord {
    table: usize,
    w: usize,
    indices: Vec<Option<usize>>,
    batch: usize,
    len: usize,
    kernel: usize,
    c_out: usize,
    per_example_weights: bool,
}

/// Dense slot numbers for the table rows referenced by `indices`.
fn used_rows(indices: &[Option<usize>], rows: usize) -> (Vec<usize>, Vec<usize>) {
    let mut slot_of = vec![usize::MAX; rows];
    let mut used = Vec::new();
    for &i in indices.iter().flatten() {
        if slot_of[i] == usize::MAX {
            slot_of[i] = used.len();
            used.push(i);
        }
    }
    (slot_of, used)
}

struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Tensor>,
}

/// Records a forward computation so gradients can be pulled back through it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

struct ConvGeometry {
    batch: usize,
    len: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    out_len: usize,
    per_example_weights: bool,
    batched: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let grad = matches!(op, Op::Leaf).then(|| Tensor::zeros(value.shape().to_vec()));
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter. Its gradient slot starts at zero.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf; `None` for intermediate nodes.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(dim_err("transpose", sa, &[]));
        }
        let (m, n) = (sa[0], sa[1]);
        let av = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::Transpose { a: a.0 }))
    }

    /// Adds a `[n]` bias to every row of a tensor whose last axis is `n`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(dim_err("add_bias", sx, sb));
        }
        let n = sb[0];
        let bv = self.value(bias).data();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddBias { x: x.0, bias: bias.0 }))
    }

    fn conv_geometry(&self, x: Var, w: Var, pad_left: usize, same: bool) -> Result<ConvGeometry> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let (batched, batch, len, c_in) = match *sx {
            [l, c] => (false, 1, l, c),
            [b, l, c] => (true, b, l, c),
            _ => return Err(dim_err("conv1d", sx, sw)),
        };
        let (per_example_weights, w_cin, kernel, c_out) = match *sw {
            [ci, k, co] => (false, ci, k, co),
            [b, ci, k, co] if batched && b == batch => (true, ci, k, co),
            _ => return Err(dim_err("conv1d", sx, sw)),
        };
        if w_cin != c_in || kernel == 0 {
            return Err(dim_err("conv1d", sx, sw));
        }
        let out_len = if same {
            len
        } else {
            if len < kernel {
                return Err(dim_err("conv1d", sx, sw));
            }
            len - kernel + 1
        };
        debug_assert!(pad_left < kernel);
        Ok(ConvGeometry {
            batch,
            len,
            c_in,
            kernel,
            c_out,
            out_len,
            per_example_weights,
            batched,
        })
    }

    /// Stride-1 convolution with zero padding so the output keeps the input
    /// length. `x` is `[L×C_in]` or `[B×L×C_in]`; `w` is `[C_in×k×C_out]`, or
    /// `[B×C_in×k×C_out]` to give each example its own kernel.
    pub fn conv1d_same(&mut self, x: Var, w: Var) -> Result<Var> {
        let sw = self.shape(w);
        if sw.len() >= 3 {
            let kernel = sw[sw.len() - 2];
            if kernel % 2 == 0 {
                return Err(AutodiffError::UnsupportedKernel(kernel));
            }
        }
        self.conv1d(x, w, true)
    }

    /// Stride-1 convolution without padding: output length `L − k + 1`.
    pub fn conv1d_valid(&mut self, x: Var, w: Var) -> Result<Var> {
        self.conv1d(x, w, false)
    }

    fn conv1d(&mut self, x: Var, w: Var, same: bool) -> Result<Var> {
        let sw = self.shape(w);
        let kernel = if sw.len() >= 3 { sw[sw.len() - 2] } else { 0 };
        let pad_left = if same { kernel.saturating_sub(1) / 2 } else { 0 };
        let g = self.conv_geometry(x, w, pad_left, same)?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let w_stride = g.c_in * g.kernel * g.c_out;
        let mut out = vec![0.0; g.batch * g.out_len * g.c_out];
        for b in 0..g.batch {
            let xb = &xv[b * g.len * g.c_in..(b + 1) * g.len * g.c_in];
            let wb = if g.per_example_weights {
                &wv[b * w_stride..(b + 1) * w_stride]
            } else {
                wv
            };
            let ob = &mut out[b * g.out_len * g.c_out..(b + 1) * g.out_len * g.c_out];
            for t in 0..g.out_len {
                let orow = &mut ob[t * g.c_out..(t + 1) * g.c_out];
                for kappa in 0..g.kernel {
                    let s = t as isize + kappa as isize - pad_left as isize;
                    if s < 0 || s as usize >= g.len {
                        continue;
                    }
                    let xrow = &xb[s as usize * g.c_in..(s as usize + 1) * g.c_in];
                    for (ci, &xval) in xrow.iter().enumerate() {
                        if xval == 0.0 {
                            continue;
                        }
                        let off = (ci * g.kernel + kappa) * g.c_out;
                        for (o, &wval) in orow.iter_mut().zip(&wb[off..off + g.c_out]) {
                            *o += xval * wval;
                        }
                    }
                }
            }
        }
        let shape = if g.batched {
            vec![g.batch, g.out_len, g.c_out]
        } else {
            vec![g.out_len, g.c_out]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                pad_left,
            },
        ))
    }

    /// Non-overlapping max pooling along the sequence axis. Trailing
    /// positions that do not fill a whole window are dropped.
    pub fn maxpool1d(&mut self, x: Var, pool: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batched, batch, len, ch) = match sx[..] {
            [l, c] => (false, 1, l, c),
            [b, l, c] => (true, b, l, c),
            _ => return Err(dim_err("maxpool1d", &sx, &[pool])),
        };
        if pool == 0 || len < pool {
            return Err(AutodiffError::EmptyOutput { len, pool });
        }
        let out_len = len / pool;
        let xv = self.value(x).data();
        let mut out = vec![0.0; batch * out_len * ch];
        let mut argmax = vec![0usize; batch * out_len * ch];
        for b in 0..batch {
            for w in 0..out_len {
                for c in 0..ch {
                    let mut best = b * len * ch + w * pool * ch + c;
                    for i in 1..pool {
                        let idx = b * len * ch + (w * pool + i) * ch + c;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    let o = (b * out_len + w) * ch + c;
                    out[o] = xv[best];
                    argmax[o] = best;
                }
            }
        }
        let shape = if batched {
            vec![batch, out_len, ch]
        } else {
            vec![out_len, ch]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxPool { x: x.0, argmax }))
    }

    pub fn pointwise(&mut self, x: Var, kind: Activation) -> Var {
        let value = self.value(x).map(|v| kind.apply(v));
        self.push(value, Op::Pointwise { x: x.0, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.pointwise(x, Activation::Tanh)
    }

    /// Inverted dropout. Identity at inference and for `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidProbability(p));
        }
        if mode == Mode::Infer || p == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), p, rng);
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(value, Op::Dropout { x: x.0, mask }))
    }

    /// Looks up rows of `table` (`[R×D]`). `None` entries yield zero rows.
    /// The output has shape `lead ++ [width]`; columns past `D` are zero.
    pub fn embedding(
        &mut self,
        table: Var,
        indices: &[Option<usize>],
        lead: &[usize],
        width: usize,
    ) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 || width < st[1] || lead.iter().product::<usize>() != indices.len() {
            return Err(dim_err("embedding", st, lead));
        }
        let (rows, dim) = (st[0], st[1]);
        let tv = self.value(table).data();
        let mut out = vec![0.0; indices.len() * width];
        for (pos, idx) in indices.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= rows {
                    return Err(AutodiffError::IndexOutOfRange { index: i, rows });
                }
                out[pos * width..pos * width + dim].copy_from_slice(&tv[i * dim..(i + 1) * dim]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table: table.0,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Same value as `conv1d_same(embedding(table, indices, lead, width), w)`
    /// but computed through per-row tap tables `T[v][κ] = table[v] · w[:, κ, :]`,
    /// so each output position is a sum of `k` table rows. `lead` is `[L]`
    /// or `[B, L]`; `w` is `[width×k×C_out]` or, when batched,
    /// `[B×width×k×C_out]`.
    pub fn embedding_conv1d_same(
        &mut self,
        table: Var,
        indices: &[Option<usize>],
        lead: &[usize],
        width: usize,
        w: Var,
    ) -> Result<Var> {
        let st = self.shape(table).to_vec();
        let sw = self.shape(w).to_vec();
        let (batched, batch, len) = match *lead {
            [l] => (false, 1, l),
            [b, l] => (true, b, l),
            _ => return Err(dim_err("embedding_conv1d_same", &st, lead)),
        };
        if st.len() != 2 || width < st[1] || batch * len != indices.len() {
            return Err(dim_err("embedding_conv1d_same", &st, lead));
        }
        let (per_example_weights, w_cin, kernel, c_out) = match *sw {
            [ci, k, co] => (false, ci, k, co),
            [b, ci, k, co] if batched && b == batch => (true, ci, k, co),
            _ => return Err(dim_err("embedding_conv1d_same", &[batch, len, width], &sw)),
        };
        if w_cin != width || kernel == 0 {
            return Err(dim_err("embedding_conv1d_same", &[batch, len, width], &sw));
        }
        if kernel % 2 == 0 {
            return Err(AutodiffError::UnsupportedKernel(kernel));
        }
        let (rows, dim) = (st[0], st[1]);
        if let Some(&i) = indices.iter().flatten().find(|&&i| i >= rows) {
            return Err(AutodiffError::IndexOutOfRange { index: i, rows });
        }
        let pad = (kernel - 1) / 2;
        let tv = self.value(table).data();
        let wv = self.value(w).data();
        let w_stride = width * kernel * c_out;
        let tap = kernel * c_out;
        let mut out = vec![0.0; batch * len * c_out];

        let groups: Vec<(usize, usize)> = if per_example_weights {
            (0..batch).map(|b| (b, b + 1)).collect()
        } else {
            vec![(0, batch)]
        };
        for (g0, g1) in groups {
            let wb = if per_example_weights { &wv[g0 * w_stride..g1 * w_stride] } else { wv };
            let group = &indices[g0 * len..g1 * len];
            let (slot_of, used) = used_rows(group, rows);
            let mut taps = vec![0.0; used.len() * tap];
            for (slot, &v) in used.iter().enumerate() {
                let trow = &mut taps[slot * tap..(slot + 1) * tap];
                for ci in 0..dim {
                    let e = tv[v * dim + ci];
                    if e != 0.0 {
                        axpy(trow, e, &wb[ci * tap..(ci + 1) * tap]);
                    }
                }
            }
            for b in g0..g1 {
                for t in 0..len {
                    let orow = &mut out[(b * len + t) * c_out..(b * len + t + 1) * c_out];
                    for kappa in 0..kernel {
                        let s = t as isize + kappa as isize - pad as isize;
                        if s < 0 || s as usize >= len {
                            continue;
                        }
                        if let Some(v) = indices[b * len + s as usize] {
                            let off = slot_of[v] * tap + kappa * c_out;
                            axpy(orow, 1.0, &taps[off..off + c_out]);
                        }
                    }
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.push(c_out);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::EmbedConv(Box::new(EmbedConvRecord {
                table: table.0,
                w: w.0,
                indices: indices.to_vec(),
                batch,
                len,
                kernel,
                c_out,
                per_example_weights,
            })),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x: x.0 }))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(dim_err("concat", sa, sb));
        }
        let (na, nb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = na + nb;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let rows = av.len() / na.max(1);
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for r in 0..rows {
            out.extend_from_slice(&av[r * na..(r + 1) * na]);
            out.extend_from_slice(&bv[r * nb..(r + 1) * nb]);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { a: a.0, b: b.0 }))
    }

    /// Runs a GRU over `x` (`[T×d]` or `[B×T×d]`) starting from a zero state.
    ///
    /// Gates: `z = σ(x·Wz + (m⊙h)·Uz + bz)`, `r = σ(x·Wr + (m⊙h)·Ur + br)`,
    /// `c = tanh(x·Wc + (r⊙m⊙h)·Uc + bc)`, `h' = (1−z)⊙c + z⊙h`, where `m`
    /// is the recurrent dropout mask (all ones at inference), drawn once per
    /// sequence.
    pub fn gru(
        &mut self,
        x: Var,
        params: GruParams,
        reverse: bool,
        output: GruOutput,
        recurrent_dropout: f64,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&recurrent_dropout) {
            return Err(AutodiffError::InvalidProbability(recurrent_dropout));
        }
        let sx = self.shape(x).to_vec();
        let (batched, batch, steps, input) = match sx[..] {
            [t, d] => (false, 1, t, d),
            [b, t, d] => (true, b, t, d),
            _ => return Err(dim_err("gru", &sx, self.shape(params.w_ih))),
        };
        if steps == 0 {
            return Err(AutodiffError::EmptySequence);
        }
        let (s_ih, s_hh, s_b) = (
            self.shape(params.w_ih).to_vec(),
            self.shape(params.w_hh).to_vec(),
            self.shape(params.bias).to_vec(),
        );
        if s_ih.len() != 2 || s_ih[0] != input || s_ih[1] % 3 != 0 {
            return Err(dim_err("gru", &sx, &s_ih));
        }
        let hidden = s_ih[1] / 3;
        if s_hh != [hidden, 3 * hidden] || s_b != [3 * hidden] {
            return Err(dim_err("gru", &s_ih, &s_hh));
        }
        let mask = (mode == Mode::Train && recurrent_dropout > 0.0)
            .then(|| dropout_mask(batch * hidden, recurrent_dropout, rng));

        let n = hidden;
        let g3 = 3 * n;
        let xv = self.value(x).data();
        let w_ih = self.value(params.w_ih).data();
        let w_hh = self.value(params.w_hh).data();
        let bias = self.value(params.bias).data();

        let mut update = vec![0.0; batch * steps * n];
        let mut reset = vec![0.0; batch * steps * n];
        let mut candidate = vec![0.0; batch * steps * n];
        let mut states = vec![0.0; batch * (steps + 1) * n];
        let mut pre = vec![0.0; g3];
        let mut hm = vec![0.0; n];
        let mut rh = vec![0.0; n];

        for b in 0..batch {
            let mb = mask.as_ref().map(|m| &m[b * n..(b + 1) * n]);
            for s in 0..steps {
                let t = if reverse { steps - 1 - s } else { s };
                let xt = &xv[(b * steps + t) * input..(b * steps + t + 1) * input];
                let hp_off = (b * (steps + 1) + s) * n;
                let h_prev = &states[hp_off..hp_off + n];
                for j in 0..n {
                    hm[j] = h_prev[j] * mb.map_or(1.0, |m| m[j]);
                }
                pre.copy_from_slice(bias);
                for (i, &xi) in xt.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (p, &w) in pre.iter_mut().zip(&w_ih[i * g3..(i + 1) * g3]) {
                        *p += xi * w;
                    }
                }
                for (j, &hj) in hm.iter().enumerate() {
                    let row = &w_hh[j * g3..j * g3 + 2 * n];
                    for (p, &w) in pre[..2 * n].iter_mut().zip(row) {
                        *p += hj * w;
                    }
                }
                let c_off = (b * steps + s) * n;
                for j in 0..n {
                    let z = sigmoid(pre[j]);
                    let r = sigmoid(pre[n + j]);
                    update[c_off + j] = z;
                    reset[c_off + j] = r;
                    rh[j] = r * hm[j];
                }
                for (j, &rj) in rh.iter().enumerate() {
                    let row = &w_hh[j * g3 + 2 * n..(j + 1) * g3];
                    for (p, &w) in pre[2 * n..].iter_mut().zip(row) {
                        *p += rj * w;
                    }
                }
                let h_prev: Vec<f64> = states[hp_off..hp_off + n].to_vec();
                let h_off = hp_off + n;
                for j in 0..n {
                    let c = pre[2 * n + j].tanh();
                    candidate[c_off + j] = c;
                    let z = update[c_off + j];
                    states[h_off + j] = (1.0 - z) * c + z * h_prev[j];
                }
            }
        }

        let value = match output {
            GruOutput::Final => {
                let mut out = Vec::with_capacity(batch * n);
                for b in 0..batch {
                    let off = (b * (steps + 1) + steps) * n;
                    out.extend_from_slice(&states[off..off + n]);
                }
                let shape = if batched { vec![batch, n] } else { vec![n] };
                Tensor::new(shape, out)?
            }
            GruOutput::Sequence => {
                let mut out = vec![0.0; batch * steps * n];
                for b in 0..batch {
                    for s in 0..steps {
                        let t = if reverse { steps - 1 - s } else { s };
                        let src = (b * (steps + 1) + s + 1) * n;
                        out[(b * steps + t) * n..(b * steps + t + 1) * n]
                            .copy_from_slice(&states[src..src + n]);
                    }
                }
                let shape = if batched {
                    vec![batch, steps, n]
                } else {
                    vec![steps, n]
                };
                Tensor::new(shape, out)?
            }
        };
        let record = GruRecord {
            x: x.0,
            w_ih: params.w_ih.0,
            w_hh: params.w_hh.0,
            bias: params.bias.0,
            reverse,
            output,
            batch,
            steps,
            input,
            hidden,
            mask,
            update,
            reset,
            candidate,
            states,
        };
        Ok(self.push(value, Op::Gru(Box::new(record))))
    }

    /// Final hidden states of a bidirectional GRU, concatenated as
    /// `[backward-final ; forward-final]`.
    pub fn bigru_final_states(
        &mut self,
        x: Var,
        forward: GruParams,
        backward: GruParams,
        recurrent_dropout: f64,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let back = self.gru(x, backward, true, GruOutput::Final, recurrent_dropout, mode, rng)?;
        let fwd = self.gru(x, forward, false, GruOutput::Final, recurrent_dropout, mode, rng)?;
        self.concat(back, fwd)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x: x.0 })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total: f64 = v.data().iter().sum();
        let mean = total / v.len().max(1) as f64;
        self.push(Tensor::scalar(mean), Op::Mean { x: x.0 })
    }

    /// Mean binary cross-entropy of probabilities `p` against `targets`,
    /// with `p` clamped to `[eps, 1 − eps]`. The gradient is evaluated at the
    /// clamped value and passed straight through the clamp.
    pub fn binary_cross_entropy(&mut self, p: Var, targets: &[f64], eps: f64) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != targets.len() {
            return Err(dim_err("binary_cross_entropy", pv.shape(), &[targets.len()]));
        }
        let clamped: Vec<f64> = pv.data().iter().map(|&q| q.clamp(eps, 1.0 - eps)).collect();
        let total: f64 = clamped
            .iter()
            .zip(targets)
            .map(|(&q, &y)| -(y * q.ln() + (1.0 - y) * (1.0 - q).ln()))
            .sum();
        let loss = total / targets.len().max(1) as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p: p.0,
                targets: targets.to_vec(),
                clamped,
            },
        ))
    }

    /// Pulls gradients of the scalar `loss` back to every leaf, adding them
    /// to whatever the leaves already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                }
                Op::MatMul { a, b } => {
                    let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let av = self.nodes[*a].value.data();
                    let bv = self.nodes[*b].value.data();
                    {
                        let da = slot(&mut adj, *a, m * k);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                da[i * k + p] += dot(grow, brow);
                            }
                        }
                    }
                    let db = slot(&mut adj, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            axpy(&mut db[p * n..(p + 1) * n], aip, grow);
                        }
                    }
                }
                Op::Transpose { a } => {
                    let sa = self.nodes[*a].value.shape();
                    let (m, n) = (sa[0], sa[1]);
                    let da = slot(&mut adj, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
                Op::AddBias { x, bias } => {
                    let n = self.nodes[*bias].value.len();
                    axpy(slot(&mut adj, *x, g.len()), 1.0, &g);
                    let db = slot(&mut adj, *bias, n);
                    for row in g.chunks(n) {
                        axpy(db, 1.0, row);
                    }
                }
                Op::Conv1d { x, w, pad_left } => {
                    self.conv1d_backward(&mut adj, &g, *x, *w, *pad_left);
                }
                Op::EmbedConv(rec) => {
                    self.embed_conv_backward(&mut adj, &g, rec);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = slot(&mut adj, *x, self.nodes[*x].value.len());
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src] += gv;
                    }
                }
                Op::Pointwise { x, kind } => {
                    let out = node.value.data();
                    let dx = slot(&mut adj, *x, out.len());
                    for ((d, &y), &gv) in dx.iter_mut().zip(out).zip(&g) {
                        *d += gv * kind.derivative_from_output(y);
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = slot(&mut adj, *x, mask.len());
                    for ((d, &m), &gv) in dx.iter_mut().zip(mask).zip(&g) {
                        *d += gv * m;
                    }
                }
                Op::Embedding { table, indices } => {
                    let st = self.nodes[*table].value.shape();
                    let (rows, dim) = (st[0], st[1]);
                    let width = g.len() / indices.len().max(1);
                    let dt = slot(&mut adj, *table, rows * dim);
                    for (pos, idx) in indices.iter().enumerate() {
                        if let Some(r) = *idx {
                            axpy(
                                &mut dt[r * dim..(r + 1) * dim],
                                1.0,
                                &g[pos * width..pos * width + dim],
                            );
                        }
                    }
                }
                Op::Reshape { x } => {
                    axpy(slot(&mut adj, *x, g.len()), 1.0, &g);
                }
                Op::Concat { a, b } => {
                    let na = *self.nodes[*a].value.shape().last().unwrap();
                    let nb = *self.nodes[*b].value.shape().last().unwrap();
                    let rows = g.len() / (na + nb).max(1);
                    {
                        let da = slot(&mut adj, *a, rows * na);
                        for r in 0..rows {
                            axpy(&mut da[r * na..(r + 1) * na], 1.0, &g[r * (na + nb)..r * (na + nb) + na]);
                        }
                    }
                    let db = slot(&mut adj, *b, rows * nb);
                    for r in 0..rows {
                        axpy(
                            &mut db[r * nb..(r + 1) * nb],
                            1.0,
                            &g[r * (na + nb) + na..(r + 1) * (na + nb)],
                        );
                    }
                }
                Op::Gru(record) => {
                    self.gru_backward(&mut adj, &g, record);
                }
                Op::Sum { x } => {
                    let dx = slot(&mut adj, *x, self.nodes[*x].value.len());
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean { x } => {
                    let len = self.nodes[*x].value.len();
                    let dx = slot(&mut adj, *x, len);
                    let share = g[0] / len.max(1) as f64;
                    dx.iter_mut().for_each(|d| *d += share);
                }
                Op::Bce { p, targets, clamped } => {
                    let n = targets.len().max(1) as f64;
                    let dp = slot(&mut adj, *p, targets.len());
                    for ((d, &q), &y) in dp.iter_mut().zip(clamped).zip(targets) {
                        *d += g[0] * (q - y) / (q * (1.0 - q)) / n;
                    }
                }
            }
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if let (Some(grad), Some(a)) = (node.grad.as_mut(), a) {
                axpy(grad.data_mut(), 1.0, &a);
            }
        }
        Ok(())
    }

    fn conv1d_backward(&self, adj: &mut [Option<Vec<f64>>], g: &[f64], x: usize, w: usize, pad_left: usize) {
        let sx = self.nodes[x].value.shape();
        let sw = self.nodes[w].value.shape();
        let (batch, len, c_in) = match *sx {
            [l, c] => (1, l, c),
            [b, l, c] => (b, l, c),
            _ => unreachable!(),
        };
        let per_example = sw.len() == 4;
        let (kernel, c_out) = (sw[sw.len() - 2], sw[sw.len() - 1]);
        let out_len = g.len() / (batch * c_out);
        let xv = self.nodes[x].value.data();
        let wv = self.nodes[w].value.data();
        let w_stride = c_in * kernel * c_out;
        let w_len = self.nodes[w].value.len();

        // Behind ReLU and max pooling most of `g` is zero, so each output
        // row is reduced to its non-zero entries first.
        let mut nz: Vec<(usize, f64)> = Vec::with_capacity(c_out);
        let dx_len = xv.len();
        let mut dx = std::mem::take(slot(adj, x, dx_len));
        let dw = slot(adj, w, w_len);
        for b in 0..batch {
            let wb = if per_example {
                &wv[b * w_stride..(b + 1) * w_stride]
            } else {
                wv
            };
            let dwb = if per_example {
                &mut dw[b * w_stride..(b + 1) * w_stride]
            } else {
                &mut dw[..]
            };
            for t in 0..out_len {
                let grow = &g[(b * out_len + t) * c_out..(b * out_len + t + 1) * c_out];
                nz.clear();
                nz.extend(grow.iter().copied().enumerate().filter(|&(_, v)| v != 0.0));
                if nz.is_empty() {
                    continue;
                }
                let dense = nz.len() * 2 > c_out;
                for kappa in 0..kernel {
                    let s = t as isize + kappa as isize - pad_left as isize;
                    if s < 0 || s as usize >= len {
                        continue;
                    }
                    let row = (b * len + s as usize) * c_in;
                    let xrow = &xv[row..row + c_in];
                    let dxrow = &mut dx[row..row + c_in];
                    for ci in 0..c_in {
                        let off = (ci * kernel + kappa) * c_out;
                        let wrow = &wb[off..off + c_out];
                        let dwrow = &mut dwb[off..off + c_out];
                        let xval = xrow[ci];
                        if dense {
                            dxrow[ci] += dot(grow, wrow);
                            if xval != 0.0 {
                                axpy(dwrow, xval, grow);
                            }
                        } else {
                            let mut acc = 0.0;
                            for &(co, gv) in &nz {
                                acc += gv * wrow[co];
                            }
                            dxrow[ci] += acc;
                            if xval != 0.0 {
                                for &(co, gv) in &nz {
                                    dwrow[co] += xval * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        *slot(adj, x, dx_len) = dx;
    }

    fn embed_conv_backward(&self, adj: &mut [Option<Vec<f64>>], g: &[f64], rec: &EmbedConvRecord) {
        let st = self.nodes[rec.table].value.shape();
        let (rows, dim) = (st[0], st[1]);
        let tv = self.nodes[rec.table].value.data();
        let wv = self.nodes[rec.w].value.data();
        let w_len = self.nodes[rec.w].value.len();
        let (batch, len, kernel, c_out) = (rec.batch, rec.len, rec.kernel, rec.c_out);
        let pad = (kernel - 1) / 2;
        let tap = kernel * c_out;
        let width = w_len / (tap * if rec.per_example_weights { batch } else { 1 });
        let w_stride = width * tap;

        let mut de = std::mem::take(slot(adj, rec.table, rows * dim));
        let dw = slot(adj, rec.w, w_len);
        let groups: Vec<(usize, usize)> = if rec.per_example_weights {
            (0..batch).map(|b| (b, b + 1)).collect()
        } else {
            vec![(0, batch)]
        };
        let mut nz: Vec<(usize, f64)> = Vec::with_capacity(c_out);
        for (g0, g1) in groups {
            let (wb, dwb) = if rec.per_example_weights {
                (&wv[g0 * w_stride..g1 * w_stride], &mut dw[g0 * w_stride..g1 * w_stride])
            } else {
                (wv, &mut dw[..])
            };
            let (slot_of, used) = used_rows(&rec.indices[g0 * len..g1 * len], rows);
            // Gradient with respect to each tap table row.
            let mut dtaps = vec![0.0; used.len() * tap];
            for b in g0..g1 {
                for t in 0..len {
                    let grow = &g[(b * len + t) * c_out..(b * len + t + 1) * c_out];
                    nz.clear();
                    nz.extend(grow.iter().copied().enumerate().filter(|&(_, v)| v != 0.0));
                    if nz.is_empty() {
                        continue;
                    }
                    for kappa in 0..kernel {
                        let s = t as isize + kappa as isize - pad as isize;
                        if s < 0 || s as usize >= len {
                            continue;
                        }
                        if let Some(v) = rec.indices[b * len + s as usize] {
                            let off = slot_of[v] * tap + kappa * c_out;
                            for &(co, gv) in &nz {
                                dtaps[off + co] += gv;
                            }
                        }
                    }
                }
            }
            for (slot, &v) in used.iter().enumerate() {
                let drow = &dtaps[slot * tap..(slot + 1) * tap];
                for ci in 0..dim {
                    let wrow = &wb[ci * tap..(ci + 1) * tap];
                    de[v * dim + ci] += dot(wrow, drow);
                    let e = tv[v * dim + ci];
                    if e != 0.0 {
                        axpy(&mut dwb[ci * tap..(ci + 1) * tap], e, drow);
                    }
                }
            }
        }
        *slot(adj, rec.table, rows * dim) = de;
    }

    fn gru_backward(&self, adj: &mut [Option<Vec<f64>>], g: &[f64], rec: &GruRecord) {
        let (batch, steps, input, n) = (rec.batch, rec.steps, rec.input, rec.hidden);
        let g3 = 3 * n;
        let xv = self.nodes[rec.x].value.data();
        let w_ih = self.nodes[rec.w_ih].value.data();
        let w_hh = self.nodes[rec.w_hh].value.data();

        let mut dw_ih = vec![0.0; input * g3];
        let mut dw_hh = vec![0.0; n * g3];
        let mut dbias = vec![0.0; g3];
        let mut dx = vec![0.0; xv.len()];

        let mut dh = vec![0.0; n];
        let mut da = vec![0.0; g3];
        let mut hm = vec![0.0; n];
        let mut rh = vec![0.0; n];
        let mut dhm = vec![0.0; n];

        for b in 0..batch {
            let mb = rec.mask.as_ref().map(|m| &m[b * n..(b + 1) * n]);
            match rec.output {
                GruOutput::Final => dh.copy_from_slice(&g[b * n..(b + 1) * n]),
                GruOutput::Sequence => dh.iter_mut().for_each(|d| *d = 0.0),
            }
            for s in (0..steps).rev() {
                let t = if rec.reverse { steps - 1 - s } else { s };
                if rec.output == GruOutput::Sequence {
                    axpy(&mut dh, 1.0, &g[(b * steps + t) * n..(b * steps + t + 1) * n]);
                }
                let hp_off = (b * (steps + 1) + s) * n;
                let h_prev = &rec.states[hp_off..hp_off + n];
                let c_off = (b * steps + s) * n;
                let z = &rec.update[c_off..c_off + n];
                let r = &rec.reset[c_off..c_off + n];
                let c = &rec.candidate[c_off..c_off + n];
                for j in 0..n {
                    hm[j] = h_prev[j] * mb.map_or(1.0, |m| m[j]);
                    rh[j] = r[j] * hm[j];
                }
                let mut dh_prev: Vec<f64> = (0..n).map(|j| dh[j] * z[j]).collect();
                for j in 0..n {
                    let dz = dh[j] * (h_prev[j] - c[j]);
                    let dc = dh[j] * (1.0 - z[j]);
                    da[j] = dz * z[j] * (1.0 - z[j]);
                    da[2 * n + j] = dc * (1.0 - c[j] * c[j]);
                }
                for j in 0..n {
                    let drh = dot(&da[2 * n..], &w_hh[j * g3 + 2 * n..(j + 1) * g3]);
                    let dr = drh * hm[j];
                    dhm[j] = drh * r[j];
                    da[n + j] = dr * r[j] * (1.0 - r[j]);
                }
                for j in 0..n {
                    dhm[j] += dot(&da[..2 * n], &w_hh[j * g3..j * g3 + 2 * n]);
                    dh_prev[j] += dhm[j] * mb.map_or(1.0, |m| m[j]);
                }
                for j in 0..n {
                    let row = &mut dw_hh[j * g3..(j + 1) * g3];
                    axpy(&mut row[..2 * n], hm[j], &da[..2 * n]);
                    axpy(&mut row[2 * n..], rh[j], &da[2 * n..]);
                }
                axpy(&mut dbias, 1.0, &da);
                let x_off = (b * steps + t) * input;
                for i in 0..input {
                    let xi = xv[x_off + i];
                    let wrow = &w_ih[i * g3..(i + 1) * g3];
                    dx[x_off + i] += dot(&da, wrow);
                    if xi != 0.0 {
                        axpy(&mut dw_ih[i * g3..(i + 1) * g3], xi, &da);
                    }
                }
                dh.copy_from_slice(&dh_prev);
            }
        }
        axpy(slot(adj, rec.x, dx.len()), 1.0, &dx);
        axpy(slot(adj, rec.w_ih, dw_ih.len()), 1.0, &dw_ih);
        axpy(slot(adj, rec.w_hh, dw_hh.len()), 1.0, &dw_hh);
        axpy(slot(adj, rec.bias, dbias.len()), 1.0, &dbias);
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn slot(adj: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    adj[idx].get_or_insert_with(|| vec![0.0; len])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent partial sums let the compiler vectorise.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
