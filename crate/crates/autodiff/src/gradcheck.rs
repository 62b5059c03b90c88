//! Central finite-difference gradient checking.
//!
//! A check builds a scalar loss `Σ r ⊙ f(inputs)` with fixed random weights
//! `r`, then compares tape gradients against `(L(x+h) − L(x−h)) / 2h`,
//! rebuilding the graph from scratch for every perturbation. Builders must
//! therefore be deterministic, e.g. by re-seeding any dropout RNG inside.
//!
//! [`op_suite`] lists one case per differentiable operation (and per
//! distinct code path, such as batched per-example convolution weights).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{GruOutput, GruParams, Mode, Tape, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const MAX_REL_ERR: f64 = 1e-4;
/// Below this magnitude gradients are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;
/// Random trials per case.
pub const TRIALS: usize = 100;

/// Builds the function under test from leaf variables.
pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var + Sync;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Tensor of independent `U(−1, 1)` entries.
pub fn random_tensor(rng: &mut dyn RngCore, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape and data agree")
}

fn weighted_loss(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let n = tape.value(out).len();
    let flat = tape.reshape(out, vec![1, n]).expect("flatten");
    let w = tape.leaf(weights.clone().reshape(vec![n, 1]).expect("weights match output"));
    let dot = tape.matmul(flat, w).expect("dot");
    tape.sum(dot)
}

fn eval(build: &Build, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let loss = weighted_loss(&mut tape, out, weights);
    tape.value(loss).item().expect("scalar loss")
}

/// Worst relative error over every element of every input.
pub fn check(build: &Build, inputs: &[Tensor], rng: &mut dyn RngCore) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let weights = random_tensor(rng, tape.value(out).shape());
    let loss = weighted_loss(&mut tape, out, &weights);
    tape.backward(loss).expect("finite gradients");

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).expect("leaf gradient").clone();
        for e in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= STEP;
            let numeric = (eval(build, &plus, &weights) - eval(build, &minus, &weights)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[e], numeric));
        }
    }
    worst
}

/// One differentiable operation with the input shapes it is checked at.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub build: Box<Build>,
}

impl OpCase {
    fn new(name: &'static str, shapes: &[&[usize]], build: impl Fn(&mut Tape, &[Var]) -> Var + Sync + 'static) -> Self {
        Self {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            build: Box::new(build),
        }
    }

    /// Worst relative error over `trials` random input draws.
    pub fn run(&self, trials: usize) -> f64 {
        let seed = self.name.bytes().fold(0x5eed_u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let inputs: Vec<Tensor> = self.shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
            worst = worst.max(check(&*self.build, &inputs, &mut rng));
        }
        worst
    }
}

fn gru_case(name: &'static str, reverse: bool, output: GruOutput, dropout: f64) -> OpCase {
    OpCase::new(name, &[&[2, 4, 3], &[3, 6], &[2, 6], &[6]], move |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = GruParams {
            w_ih: v[1],
            w_hh: v[2],
            bias: v[3],
        };
        t.gru(v[0], params, reverse, output, dropout, Mode::Train, &mut rng).expect("gru")
    })
}

/// Every differentiable operation of [`Tape`], on small random inputs.
pub fn op_suite() -> Vec<OpCase> {
    let idx = [Some(2), None, Some(0), Some(2), Some(3)];
    let idx_batched = [Some(1), Some(1), None, Some(0), Some(2), None, Some(2), Some(1)];
    vec![
        OpCase::new("matmul", &[&[2, 3], &[3, 2]], |t, v| t.matmul(v[0], v[1]).expect("op")),
        OpCase::new("transpose", &[&[2, 3]], |t, v| t.transpose(v[0]).expect("op")),
        OpCase::new("add_bias", &[&[2, 2, 3], &[3]], |t, v| t.add_bias(v[0], v[1]).expect("op")),
        OpCase::new("conv1d_same", &[&[5, 2], &[2, 3, 2]], |t, v| t.conv1d_same(v[0], v[1]).expect("op")),
        OpCase::new("conv1d_same_per_example", &[&[2, 5, 2], &[2, 2, 3, 2]], |t, v| {
            t.conv1d_same(v[0], v[1]).expect("op")
        }),
        OpCase::new("conv1d_valid", &[&[2, 6, 2], &[2, 4, 3]], |t, v| t.conv1d_valid(v[0], v[1]).expect("op")),
        OpCase::new("maxpool1d", &[&[2, 9, 2]], |t, v| t.maxpool1d(v[0], 4).expect("op")),
        OpCase::new("relu", &[&[5]], |t, v| t.relu(v[0])),
        OpCase::new("sigmoid", &[&[5]], |t, v| t.sigmoid(v[0])),
        OpCase::new("tanh", &[&[5]], |t, v| t.tanh(v[0])),
        OpCase::new("dropout", &[&[5]], |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            t.dropout(v[0], 0.5, Mode::Train, &mut rng).expect("op")
        }),
        OpCase::new("embedding", &[&[4, 3]], move |t, v| t.embedding(v[0], &idx, &[5], 5).expect("op")),
        OpCase::new("embedding_conv1d_same", &[&[4, 3], &[4, 3, 2]], move |t, v| {
            t.embedding_conv1d_same(v[0], &idx, &[5], 4, v[1]).expect("op")
        }),
        OpCase::new("embedding_conv1d_same_per_example", &[&[3, 2], &[2, 3, 3, 2]], move |t, v| {
            t.embedding_conv1d_same(v[0], &idx_batched, &[2, 4], 3, v[1]).expect("op")
        }),
        OpCase::new("reshape_concat", &[&[2, 2], &[2, 3]], |t, v| {
            let c = t.concat(v[0], v[1]).expect("op");
            t.reshape(c, vec![10]).expect("op")
        }),
        OpCase::new("sum", &[&[5]], |t, v| t.sum(v[0])),
        OpCase::new("mean", &[&[5]], |t, v| t.mean(v[0])),
        OpCase::new("binary_cross_entropy", &[&[5]], |t, v| {
            let p = t.sigmoid(v[0]);
            t.binary_cross_entropy(p, &[1.0, 0.0, 0.0, 1.0, 1.0], 1e-7).expect("op")
        }),
        gru_case("gru_final", false, GruOutput::Final, 0.0),
        gru_case("gru_reverse", true, GruOutput::Final, 0.0),
        gru_case("gru_sequence", true, GruOutput::Sequence, 0.0),
        gru_case("gru_recurrent_dropout", false, GruOutput::Sequence, 0.3),
        OpCase::new(
            "bigru_final_states",
            &[&[5, 2], &[2, 6], &[2, 6], &[6], &[2, 6], &[2, 6], &[6]],
            |t, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let fwd = GruParams {
                    w_ih: v[1],
                    w_hh: v[2],
                    bias: v[3],
                };
                let bwd = GruParams {
                    w_ih: v[4],
                    w_hh: v[5],
                    bias: v[6],
                };
                t.bigru_final_states(v[0], fwd, bwd, 0.1, Mode::Train, &mut rng).expect("op")
            },
        ),
    ]
}
