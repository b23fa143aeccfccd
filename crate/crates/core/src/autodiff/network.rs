//! Dense tanh network with second-order input tangents.
//!
//! Parameter layout, per layer `l` mapping width `n_in` to `n_out`:
//! the `n_out × n_in` weight matrix in row-major order (row = output
//! neuron), followed by the `n_out` biases. Layers are concatenated in
//! order. In inverse mode one extra trailing slot holds the raw physics
//! scalar. Crossover relies on this layout being identical across
//! individuals of the same architecture.
//!
//! Input derivatives are carried as jets `(v, v_x, v_t, v_xx)` through each
//! layer; parameter gradients come from a reverse sweep over the same jets.

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of requests processed per parallel work unit. Fixed so that the
/// gradient reduction order does not depend on the thread count.
const CHUNK: usize = 128;

/// Layer widths of a fully connected network mapping `(x, t)` to `u`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    widths: Vec<usize>,
}

impl NetworkArchitecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Architecture(format!("need at least 3 layer widths, got {}", widths.len())));
        }
        if widths[0] != 2 || *widths.last().unwrap() != 1 {
            return Err(Error::Architecture("input width must be 2 and output width 1".into()));
        }
        if widths.contains(&0) {
            return Err(Error::Architecture("layer widths must be positive".into()));
        }
        Ok(Self { widths })
    }

    /// `depth` hidden layers of `width` neurons.
    pub fn uniform(depth: usize, width: usize) -> Result<Self> {
        let mut w = vec![2];
        w.extend(std::iter::repeat_n(width, depth));
        w.push(1);
        Self::new(w)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Weights and biases only, excluding any physics slot.
    pub fn parameter_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

/// Flat genome: network weights and biases plus an optional physics slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector<T> {
    values: Vec<T>,
}

impl<T> ParameterVector<T> {
    pub fn into_inner(self) -> Vec<T> {
        self.values
    }
}

impl<T> From<Vec<T>> for ParameterVector<T> {
    fn from(values: Vec<T>) -> Self {
        Self { values }
    }
}

impl<T> Deref for ParameterVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.values
    }
}

impl<T> DerefMut for ParameterVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
}

/// Which input derivatives to propagate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// `u` only.
    Value,
    /// `u`, `u_x`, `u_t` and `u_xx`.
    Full,
}

impl Order {
    fn channels(self) -> usize {
        match self {
            Order::Value => 1,
            Order::Full => 4,
        }
    }
}

/// Network output and input derivatives at one point. Derivative fields are
/// zero when only [`Order::Value`] was requested.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EvaluationBundle<T> {
    pub u: T,
    pub u_t: T,
    pub u_x: T,
    pub u_xx: T,
}

/// A point at which the network should be evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRequest<T> {
    pub x: T,
    pub t: T,
    pub order: Order,
}

impl<T> EvalRequest<T> {
    pub fn value(x: T, t: T) -> Self {
        Self { x, t, order: Order::Value }
    }

    pub fn full(x: T, t: T) -> Self {
        Self { x, t, order: Order::Full }
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerLayout {
    n_in: usize,
    n_out: usize,
    weights: usize,
    biases: usize,
    /// Offset of this layer's lanes in [`Activations`].
    act: usize,
}

/// Feed-forward network: tanh on hidden layers, identity on the output.
///
/// Evaluation works on packs of [`LANES`] interleaved lanes per neuron:
/// two points with four jet channels each, or eight value-only points.
/// Dense layers then become lane-wise multiply-adds.
#[derive(Clone, Debug)]
pub struct Network {
    arch: NetworkArchitecture,
    layers: Vec<LayerLayout>,
    act_len: usize,
    physics_slot: bool,
}

/// Lanes per neuron in a pack.
const LANES: usize = 8;

/// Pre- and post-activation lanes of one pack, all layers concatenated.
/// Entry `act + i * LANES + k` is lane `k` of neuron `i`.
#[derive(Clone, Debug)]
struct Activations<T> {
    input: [T; 2 * LANES],
    z: Vec<T>,
    h: Vec<T>,
}

/// Scratch buffers for single-request evaluation.
#[derive(Clone, Debug)]
pub struct Workspace<T> {
    act: Activations<T>,
}

/// Bundles and saved activations of one parallel chunk.
type ChunkOutput<T> = (Vec<EvaluationBundle<T>>, Vec<PackRecord<T>>);

/// Saved activations of a pack with the output seeds of its points.
type PackSeeds<'a, T> = (&'a Activations<T>, Order, &'a [[T; 4]]);

#[derive(Clone, Debug)]
struct PackRecord<T> {
    start: usize,
    len: usize,
    order: Order,
    act: Activations<T>,
}

/// Stored activations of a batch evaluation, reused by
/// [`Network::backward_pass`] to avoid a second forward sweep.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    chunks: Vec<Vec<PackRecord<T>>>,
    len: usize,
}

impl Order {
    fn points_per_pack(self) -> usize {
        LANES / self.channels()
    }

    /// 1 on lanes that carry values (where biases act), 0 on tangent lanes.
    fn value_mask<T: Real>(self) -> [T; LANES] {
        let c = self.channels();
        std::array::from_fn(|k| if k % c == 0 { T::one() } else { T::zero() })
    }
}

impl Network {
    pub fn new(arch: NetworkArchitecture, physics_slot: bool) -> Self {
        let mut layers = Vec::new();
        let (mut offset, mut act) = (0, 0);
        for w in arch.widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            layers.push(LayerLayout { n_in, n_out, weights: offset, biases: offset + n_in * n_out, act });
            offset += n_in * n_out + n_out;
            act += n_out * LANES;
        }
        Self { arch, layers, act_len: act, physics_slot }
    }

    pub fn architecture(&self) -> &NetworkArchitecture {
        &self.arch
    }

    pub fn has_physics_slot(&self) -> bool {
        self.physics_slot
    }

    /// Index of the trailing physics slot, if present.
    pub fn physics_index(&self) -> Option<usize> {
        self.physics_slot.then(|| self.arch.parameter_count())
    }

    /// Genome length including the physics slot.
    pub fn parameter_len(&self) -> usize {
        self.arch.parameter_count() + usize::from(self.physics_slot)
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases, zero physics slot.
    pub fn init_parameters<T: Real>(&self, seed: u64) -> ParameterVector<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![T::zero(); self.parameter_len()];
        for layer in &self.layers {
            let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut values[layer.weights..layer.biases] {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        ParameterVector::from(values)
    }

    fn activations<T: Real>(&self) -> Activations<T> {
        Activations { input: [T::zero(); 2 * LANES], z: vec![T::zero(); self.act_len], h: vec![T::zero(); self.act_len] }
    }

    pub fn workspace<T: Real>(&self) -> Workspace<T> {
        Workspace { act: self.activations() }
    }

    fn check_len<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.parameter_len() {
            return Err(Error::ParameterLength { expected: self.parameter_len(), got: params.len() });
        }
        Ok(())
    }

    /// Forward pass over one pack of at most `order.points_per_pack()`
    /// points. Unused lanes repeat the last point.
    fn forward_pack<T: Real>(&self, params: &[T], order: Order, pts: &[EvalRequest<T>], act: &mut Activations<T>) -> Result<()> {
        let (zero, one) = (T::zero(), T::one());
        let c = order.channels();
        for p in 0..order.points_per_pack() {
            let r = &pts[p.min(pts.len() - 1)];
            let k = p * c;
            act.input[k] = r.x;
            act.input[LANES + k] = r.t;
            if c == 4 {
                // jets of the inputs: x = (x, 1, 0, 0), t = (t, 0, 1, 0)
                act.input[k + 1..k + 4].copy_from_slice(&[one, zero, zero]);
                act.input[LANES + k + 1..LANES + k + 4].copy_from_slice(&[zero, one, zero]);
            }
        }
        let mask = order.value_mask::<T>();
        let last = self.layers.len() - 1;
        let two = T::lit(2.0);
        for (l, layer) in self.layers.iter().enumerate() {
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let w = &params[layer.weights..layer.biases];
            let b = &params[layer.biases..layer.biases + n_out];
            let (prev, cur) = act.h.split_at_mut(layer.act);
            let a: &[T] = if l == 0 { &act.input } else { &prev[layer.act - n_in * LANES..] };
            let z = &mut act.z[layer.act..layer.act + n_out * LANES];
            for ((zi, row), &bi) in z.chunks_exact_mut(LANES).zip(w.chunks_exact(n_in)).zip(b) {
                let mut acc: [T; LANES] = std::array::from_fn(|k| mask[k] * bi);
                for (&wij, aj) in row.iter().zip(a.chunks_exact(LANES)) {
                    for k in 0..LANES {
                        acc[k] = acc[k] + wij * aj[k];
                    }
                }
                zi.copy_from_slice(&acc);
            }
            let h = &mut cur[..n_out * LANES];
            if l == last {
                h.copy_from_slice(z);
            } else {
                for (hi, zi) in h.chunks_exact_mut(LANES).zip(z.chunks_exact(LANES)) {
                    match order {
                        Order::Value => {
                            for k in 0..LANES {
                                hi[k] = zi[k].tanh();
                            }
                        }
                        Order::Full => {
                            for k in (0..LANES).step_by(4) {
                                let v = zi[k].tanh();
                                let s1 = one - v * v;
                                let s2 = -two * v * s1;
                                let (zx, zt, zxx) = (zi[k + 1], zi[k + 2], zi[k + 3]);
                                hi[k] = v;
                                hi[k + 1] = s1 * zx;
                                hi[k + 2] = s1 * zt;
                                hi[k + 3] = s2 * zx * zx + s1 * zxx;
                            }
                        }
                    }
                }
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
        }
        Ok(())
    }

    fn read_pack<T: Real>(&self, order: Order, n: usize, act: &Activations<T>, out: &mut Vec<EvaluationBundle<T>>) {
        let h = &act.h[self.layers.last().expect("at least one layer").act..];
        for p in 0..n {
            out.push(match order {
                Order::Value => EvaluationBundle { u: h[p], ..Default::default() },
                Order::Full => {
                    let k = 4 * p;
                    EvaluationBundle { u: h[k], u_x: h[k + 1], u_t: h[k + 2], u_xx: h[k + 3] }
                }
            });
        }
    }

    /// Evaluates the network and the requested input derivatives at `(x, t)`.
    pub fn evaluate<T: Real>(&self, params: &[T], x: T, t: T, order: Order) -> Result<EvaluationBundle<T>> {
        self.check_len(params)?;
        let mut ws = self.workspace();
        self.evaluate_with(params, &EvalRequest { x, t, order }, &mut ws)
    }

    pub fn evaluate_with<T: Real>(&self, params: &[T], req: &EvalRequest<T>, ws: &mut Workspace<T>) -> Result<EvaluationBundle<T>> {
        self.forward_pack(params, req.order, std::slice::from_ref(req), &mut ws.act)?;
        let mut out = Vec::with_capacity(1);
        self.read_pack(req.order, 1, &ws.act, &mut out);
        Ok(out[0])
    }

    /// Evaluates every request, preserving order.
    pub fn evaluate_batch<T: Real>(&self, params: &[T], requests: &[EvalRequest<T>]) -> Result<Vec<EvaluationBundle<T>>> {
        self.check_len(params)?;
        let chunks: Vec<Result<Vec<EvaluationBundle<T>>>> = requests
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut act = self.activations();
                let mut out = Vec::with_capacity(chunk.len());
                for pack in packs(chunk) {
                    let order = pack[0].order;
                    self.forward_pack(params, order, pack, &mut act)?;
                    self.read_pack(order, pack.len(), &act, &mut out);
                }
                Ok(out)
            })
            .collect();
        let mut out = Vec::with_capacity(requests.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Like [`Network::evaluate_batch`], additionally keeping the
    /// activations for a later [`Network::backward_pass`].
    pub fn forward_pass<T: Real>(&self, params: &[T], requests: &[EvalRequest<T>]) -> Result<(Vec<EvaluationBundle<T>>, ForwardPass<T>)> {
        self.check_len(params)?;
        let chunks: Vec<Result<ChunkOutput<T>>> = requests
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut out = Vec::with_capacity(chunk.len());
                let mut records = Vec::new();
                let mut start = ci * CHUNK;
                for pack in packs(chunk) {
                    let order = pack[0].order;
                    let mut act = self.activations();
                    self.forward_pack(params, order, pack, &mut act)?;
                    self.read_pack(order, pack.len(), &act, &mut out);
                    records.push(PackRecord { start, len: pack.len(), order, act });
                    start += pack.len();
                }
                Ok((out, records))
            })
            .collect();
        let mut out = Vec::with_capacity(requests.len());
        let mut pass = ForwardPass { chunks: Vec::with_capacity(chunks.len()), len: requests.len() };
        for c in chunks {
            let (values, records) = c?;
            out.extend(values);
            pass.chunks.push(records);
        }
        Ok((out, pass))
    }

    /// Reverse sweep over a group of evaluated packs, adding the parameter
    /// gradient into `grad`. `packs[p].2[q]` holds the adjoints of the
    /// channels (u, u_x, u_t, u_xx) of point `q` in pack `p`.
    ///
    /// Layers are processed for all packs at once. Adjoint buffers are
    /// neuron-major across packs (entry `(i * n + p) * LANES + k`), so each
    /// weight gradient is one contiguous dot product.
    fn backward_packs<T: Real>(&self, params: &[T], packs: &[PackSeeds<'_, T>], grad: &mut [T]) {
        let n = packs.len();
        if n == 0 {
            return;
        }
        let (zero, one) = (T::zero(), T::one());
        let (two, four) = (T::lit(2.0), T::lit(4.0));
        let row = n * LANES;
        let cap = row * self.arch.max_width();
        let mut hbar = vec![zero; cap];
        let mut zbar = vec![zero; cap];
        let mut a_all = vec![zero; cap];
        for (p, (_, order, seeds)) in packs.iter().enumerate() {
            let c = order.channels();
            for (q, s) in seeds.iter().enumerate() {
                hbar[p * LANES + q * c..p * LANES + (q + 1) * c].copy_from_slice(&s[..c]);
            }
        }
        let mask_row: Vec<T> = packs.iter().flat_map(|(_, o, _)| o.value_mask::<T>()).collect();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            if l == last {
                zbar[..n_out * row].copy_from_slice(&hbar[..n_out * row]);
            } else {
                for (p, (act, order, _)) in packs.iter().enumerate() {
                    for i in 0..n_out {
                        let at = layer.act + i * LANES;
                        let (zi, hi) = (&act.z[at..at + LANES], &act.h[at..at + LANES]);
                        let o = (i * n + p) * LANES;
                        let hb = &hbar[o..o + LANES];
                        let zb = &mut zbar[o..o + LANES];
                        match order {
                            Order::Value => {
                                for k in 0..LANES {
                                    zb[k] = (one - hi[k] * hi[k]) * hb[k];
                                }
                            }
                            Order::Full => {
                                for k in (0..LANES).step_by(4) {
                                    let v = hi[k];
                                    let s1 = one - v * v;
                                    let s2 = -two * v * s1;
                                    let s3 = -two * s1 * s1 + four * v * v * s1;
                                    let (zx, zt, zxx) = (zi[k + 1], zi[k + 2], zi[k + 3]);
                                    let (hb0, hbx, hbt, hbxx) = (hb[k], hb[k + 1], hb[k + 2], hb[k + 3]);
                                    zb[k] = s1 * hb0 + s2 * (zx * hbx + zt * hbt + zxx * hbxx) + s3 * zx * zx * hbxx;
                                    zb[k + 1] = s1 * hbx + two * s2 * zx * hbxx;
                                    zb[k + 2] = s1 * hbt;
                                    zb[k + 3] = s1 * hbxx;
                                }
                            }
                        }
                    }
                }
            }
            // gather this layer's inputs in the same layout
            for (p, (act, _, _)) in packs.iter().enumerate() {
                let src: &[T] = if l == 0 { &act.input } else { &act.h[layer.act - n_in * LANES..layer.act] };
                for j in 0..n_in {
                    a_all[(j * n + p) * LANES..][..LANES].copy_from_slice(&src[j * LANES..][..LANES]);
                }
            }
            for i in 0..n_out {
                let zrow = &zbar[i * row..(i + 1) * row];
                let gb = &mut grad[layer.biases + i];
                *gb = *gb + lane_dot(zrow, &mask_row);
                for j in 0..n_in {
                    let g = &mut grad[layer.weights + i * n_in + j];
                    *g = *g + lane_dot(zrow, &a_all[j * row..(j + 1) * row]);
                }
            }
            if l > 0 {
                let w = &params[layer.weights..layer.biases];
                let abar = &mut hbar[..n_in * row];
                abar.fill(zero);
                for (zrow, wrow) in zbar[..n_out * row].chunks_exact(row).zip(w.chunks_exact(n_in)) {
                    for (arow, &wij) in abar.chunks_exact_mut(row).zip(wrow) {
                        for (ab, zb) in arow.chunks_exact_mut(LANES).zip(zrow.chunks_exact(LANES)) {
                            lane_fma(ab, [wij; LANES], zb);
                        }
                    }
                }
            }
        }
    }

    /// Adds `Σ_c seeds[c] · ∂(channel c)/∂θ` at `req` into `grad`, where the
    /// channels are ordered (u, u_x, u_t, u_xx).
    pub fn backprop<T: Real>(
        &self,
        params: &[T],
        req: &EvalRequest<T>,
        seeds: [T; 4],
        grad: &mut [T],
        ws: &mut Workspace<T>,
    ) -> Result<()> {
        self.check_len(params)?;
        self.forward_pack(params, req.order, std::slice::from_ref(req), &mut ws.act)?;
        self.backward_packs(params, &[(&ws.act, req.order, &[seeds][..])], grad);
        Ok(())
    }

    /// Accumulates seeded parameter gradients over many requests.
    ///
    /// Requests whose seeds are all zero are skipped. The reduction runs over
    /// fixed-size chunks in a fixed order, so the result is independent of
    /// the number of worker threads.
    pub fn accumulate_gradient<T: Real>(&self, params: &[T], requests: &[EvalRequest<T>], seeds: &[[T; 4]], grad: &mut [T]) -> Result<()> {
        let (_, pass) = self.forward_pass(params, requests)?;
        self.backward_pass(params, &pass, seeds, grad)
    }

    /// Reverse sweep over a stored [`ForwardPass`]; same contract as
    /// [`Network::accumulate_gradient`].
    pub fn backward_pass<T: Real>(&self, params: &[T], pass: &ForwardPass<T>, seeds: &[[T; 4]], grad: &mut [T]) -> Result<()> {
        self.check_len(params)?;
        if pass.len != seeds.len() {
            return Err(Error::Shape(format!("{} requests but {} seed sets", pass.len, seeds.len())));
        }
        let n = self.parameter_len();
        let zero = T::zero();
        let partials: Vec<Vec<T>> = pass
            .chunks
            .par_iter()
            .map(|records| {
                let live: Vec<PackSeeds<'_, T>> = records
                    .iter()
                    .map(|r| (&r.act, r.order, &seeds[r.start..r.start + r.len]))
                    .filter(|(_, _, s)| s.iter().any(|s| s.iter().any(|v| *v != zero)))
                    .collect();
                let mut g = vec![zero; n];
                self.backward_packs(params, &live, &mut g);
                g
            })
            .collect();
        for p in partials {
            for (g, v) in grad.iter_mut().zip(p) {
                *g = *g + v;
            }
        }
        Ok(())
    }

    /// Full parameter gradient of one output channel at `(x, t)`.
    pub fn field_gradient<T: Real>(&self, params: &[T], x: T, t: T, field: super::Field) -> Result<Vec<T>> {
        self.check_len(params)?;
        let mut seeds = [T::zero(); 4];
        seeds[field.channel()] = T::one();
        let order = if field == super::Field::U { Order::Value } else { Order::Full };
        let mut grad = vec![T::zero(); self.parameter_len()];
        let mut ws = self.workspace();
        self.backprop(params, &EvalRequest { x, t, order }, seeds, &mut grad, &mut ws)?;
        Ok(grad)
    }
}

/// `acc[k] += a[k] * b[k]` over one pack of lanes.
#[inline(always)]
fn lane_fma<T: Real>(acc: &mut [T], a: [T; LANES], b: &[T]) {
    let acc: &mut [T; LANES] = acc.try_into().expect("lane width");
    let b: &[T; LANES] = b.try_into().expect("lane width");
    for k in 0..LANES {
        acc[k] = acc[k] + a[k] * b[k];
    }
}

/// Dot product of two equal-length lane rows with per-lane partial sums,
/// reduced in a fixed order.
#[inline(always)]
fn lane_dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    for (x, y) in a.chunks_exact(LANES).zip(b.chunks_exact(LANES)) {
        let x: &[T; LANES] = x.try_into().expect("lane width");
        lane_fma(&mut acc, *x, y);
    }
    acc.iter().fold(T::zero(), |s, &v| s + v)
}

/// Splits requests into runs of equal order, each at most one pack long.
fn packs<T>(requests: &[EvalRequest<T>]) -> impl Iterator<Item = &[EvalRequest<T>]> {
    let mut rest = requests;
    std::iter::from_fn(move || {
        let first = rest.first()?;
        let cap = first.order.points_per_pack();
        let n = rest.iter().take(cap).take_while(|r| r.order == first.order).count();
        let (pack, tail) = rest.split_at(n);
        rest = tail;
        Some(pack)
    })
}
