//! Named parameter tensors and their binding onto a tape.

use autodiff::{Tape, Tensor, Var};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push(NamedTensor {
            name: name.into(),
            tensor,
        });
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.entries.extend(other.entries);
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.tensor.clone()).collect()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) {
        for (e, t) in self.entries.iter_mut().zip(tensors) {
            e.tensor = t;
        }
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Adds every tensor to `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| (e.name.clone(), tape.leaf(e.tensor.clone())))
                .collect(),
        }
    }

    /// Names existing tape variables, one per tensor in order, e.g. leaves
    /// created by a gradient checker from perturbed copies of `tensors()`.
    pub fn bind_vars(&self, vars: &[Var]) -> Bound {
        assert_eq!(vars.len(), self.entries.len(), "one variable per parameter tensor");
        Bound {
            vars: self.entries.iter().map(|e| e.name.clone()).zip(vars.iter().copied()).collect(),
        }
    }
}

/// Tape handles for a bound [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().map(|(_, v)| *v)
    }
}

/// Glorot-uniform tensor: `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Zero-mean uniform tensor with the given variance: `U(−a, a)`, `a = √(3·var)`.
pub fn uniform_with_variance(shape: &[usize], variance: f64, rng: &mut dyn RngCore) -> Tensor {
    let limit = (3.0 * variance).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Glorot init for a matrix `[rows × cols]` read as `[fan_in × fan_out]`.
pub fn glorot_matrix(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    glorot(&[rows, cols], rows, cols, rng)
}
