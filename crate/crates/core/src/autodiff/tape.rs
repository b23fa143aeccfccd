//! Append-only scalar tape for reverse-mode differentiation of losses.
//!
//! Nodes may only reference nodes that already exist on the same tape, so a
//! constructed graph is acyclic by construction. Referencing a node from a
//! different tape (or a stale index) poisons the tape; the error surfaces on
//! [`Tape::backward`].

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Real;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

/// Network output channel carried by an evaluation bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    U,
    Ut,
    Ux,
    Uxx,
}

impl Field {
    /// Channel index in the jet layout used by the network (value, x, t, xx).
    pub fn channel(self) -> usize {
        match self {
            Field::U => 0,
            Field::Ux => 1,
            Field::Ut => 2,
            Field::Uxx => 3,
        }
    }
}

/// Leaf nodes whose adjoints are consumed outside the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leaf {
    /// Output channel of the `bundle`-th network evaluation.
    Field { bundle: u32, field: Field },
    /// Direct entry of the parameter vector (e.g. a raw physics scalar).
    Parameter(usize),
}

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Leaf(Leaf),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Square(u32),
    Scale(u32, T),
    Sum(Vec<u32>),
    Mean(Vec<u32>),
    /// Smooth unary map with its derivative at the argument.
    Map {
        arg: u32,
        derivative: T,
    },
    /// `Σ w_k(p) v_k` with weights depending on an optional scalar node `p`;
    /// each term stores `(v_k, w_k, dw_k/dp)`.
    Linear {
        terms: Vec<(u32, T, T)>,
        param: Option<u32>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: T,
}

/// Scalar computation graph.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
    poison: Option<String>,
}

/// Adjoints of every node after a reverse sweep.
#[derive(Clone, Debug)]
pub struct Adjoints<T> {
    values: Vec<T>,
}

impl<T: Real> Adjoints<T> {
    pub fn get(&self, v: Var) -> T {
        self.values[v.index as usize]
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), poison: None }
    }

    pub fn with_capacity(n: usize) -> Self {
        let mut tape = Self::new();
        tape.nodes.reserve(n);
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> T {
        match self.resolve(v) {
            Some(i) => self.nodes[i as usize].value,
            None => T::nan(),
        }
    }

    fn resolve(&self, v: Var) -> Option<u32> {
        (v.tape == self.id && (v.index as usize) < self.nodes.len()).then_some(v.index)
    }

    fn arg(&mut self, v: Var) -> u32 {
        match self.resolve(v) {
            Some(i) => i,
            None => {
                if self.poison.is_none() {
                    self.poison = Some(format!("node {} of tape {} is not defined on tape {}", v.index, v.tape, self.id));
                }
                0
            }
        }
    }

    fn push(&mut self, op: Op<T>, value: T) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { op, value });
        Var { tape: self.id, index }
    }

    fn val(&self, i: u32) -> T {
        self.nodes.get(i as usize).map_or(T::nan(), |n| n.value)
    }

    pub fn constant(&mut self, value: T) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn leaf(&mut self, leaf: Leaf, value: T) -> Var {
        self.push(Op::Leaf(leaf), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.arg(a), self.arg(b));
        let v = self.val(a) + self.val(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.arg(a), self.arg(b));
        let v = self.val(a) - self.val(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.arg(a), self.arg(b));
        let v = self.val(a) * self.val(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (a, b) = (self.arg(a), self.arg(b));
        let v = self.val(a) / self.val(b);
        self.push(Op::Div(a, b), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let a = self.arg(a);
        let x = self.val(a);
        self.push(Op::Square(a), x * x)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let a = self.arg(a);
        let v = self.val(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn sum(&mut self, items: &[Var]) -> Var {
        let idx: Vec<u32> = items.iter().map(|&v| self.arg(v)).collect();
        let v = idx.iter().fold(T::zero(), |acc, &i| acc + self.val(i));
        self.push(Op::Sum(idx), v)
    }

    /// Arithmetic mean; the mean of an empty list is zero.
    pub fn mean(&mut self, items: &[Var]) -> Var {
        let idx: Vec<u32> = items.iter().map(|&v| self.arg(v)).collect();
        let v = if idx.is_empty() {
            T::zero()
        } else {
            idx.iter().fold(T::zero(), |acc, &i| acc + self.val(i)) / T::from_usize_lossy(idx.len())
        };
        self.push(Op::Mean(idx), v)
    }

    /// Applies a smooth scalar function whose value and derivative at the
    /// argument are supplied by the caller.
    pub fn map(&mut self, a: Var, f: impl FnOnce(T) -> (T, T)) -> Var {
        let a = self.arg(a);
        let (value, derivative) = f(self.val(a));
        self.push(Op::Map { arg: a, derivative }, value)
    }

    /// Linear combination `Σ w_k v_k` with constant weights.
    pub fn linear(&mut self, terms: &[(Var, T)]) -> Var {
        let terms: Vec<(u32, T, T)> = terms.iter().map(|&(v, w)| (self.arg(v), w, T::zero())).collect();
        let v = terms.iter().fold(T::zero(), |acc, &(i, w, _)| acc + w * self.val(i));
        self.push(Op::Linear { terms, param: None }, v)
    }

    /// Linear combination whose weights depend on a scalar node `p`;
    /// `terms` holds `(v_k, w_k(p), w_k'(p))`.
    pub fn linear_with_param(&mut self, p: Var, terms: &[(Var, T, T)]) -> Var {
        let p = self.arg(p);
        let terms: Vec<(u32, T, T)> = terms.iter().map(|&(v, w, dw)| (self.arg(v), w, dw)).collect();
        let v = terms.iter().fold(T::zero(), |acc, &(i, w, _)| acc + w * self.val(i));
        self.push(Op::Linear { terms, param: Some(p) }, v)
    }

    /// Reverse sweep from `output`.
    pub fn backward(&self, output: Var) -> Result<Adjoints<T>> {
        if let Some(msg) = &self.poison {
            return Err(Error::Graph(msg.clone()));
        }
        let out = self.resolve(output).ok_or_else(|| Error::Graph("output node is not on this tape".into()))?;
        let mut adj = vec![T::zero(); self.nodes.len()];
        adj[out as usize] = T::one();
        for i in (0..=out as usize).rev() {
            let g = adj[i];
            if g == T::zero() {
                continue;
            }
            match &self.nodes[i].op {
                Op::Constant | Op::Leaf(_) => {}
                Op::Add(a, b) => {
                    adj[*a as usize] = adj[*a as usize] + g;
                    adj[*b as usize] = adj[*b as usize] + g;
                }
                Op::Sub(a, b) => {
                    adj[*a as usize] = adj[*a as usize] + g;
                    adj[*b as usize] = adj[*b as usize] - g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.val(*a), self.val(*b));
                    adj[*a as usize] = adj[*a as usize] + g * vb;
                    adj[*b as usize] = adj[*b as usize] + g * va;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.val(*a), self.val(*b));
                    adj[*a as usize] = adj[*a as usize] + g / vb;
                    adj[*b as usize] = adj[*b as usize] - g * va / (vb * vb);
                }
                Op::Square(a) => {
                    let va = self.val(*a);
                    adj[*a as usize] = adj[*a as usize] + g * (va + va);
                }
                Op::Scale(a, c) => {
                    adj[*a as usize] = adj[*a as usize] + g * *c;
                }
                Op::Sum(items) => {
                    for &k in items {
                        adj[k as usize] = adj[k as usize] + g;
                    }
                }
                Op::Mean(items) => {
                    if !items.is_empty() {
                        let share = g / T::from_usize_lossy(items.len());
                        for &k in items {
                            adj[k as usize] = adj[k as usize] + share;
                        }
                    }
                }
                Op::Map { arg, derivative } => {
                    adj[*arg as usize] = adj[*arg as usize] + g * *derivative;
                }
                Op::Linear { terms, param } => {
                    let mut dp = T::zero();
                    for &(k, w, dw) in terms {
                        adj[k as usize] = adj[k as usize] + g * w;
                        dp = dp + dw * self.val(k);
                    }
                    if let Some(p) = param {
                        adj[*p as usize] = adj[*p as usize] + g * dp;
                    }
                }
            }
        }
        Ok(Adjoints { values: adj })
    }

    /// Leaves together with their adjoints, in creation order.
    pub fn leaf_adjoints<'a>(&'a self, adj: &'a Adjoints<T>) -> impl Iterator<Item = (Leaf, T)> + 'a {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Leaf(leaf) => Some((leaf, adj.values[i])),
            _ => None,
        })
    }
}
