//! Feed-forward (optionally recurrent) actor-critic network over a flat
//! parameter vector.
//!
//! ```text
//! a_1 = tanh(W_1 x + b_1)
//! a_l = tanh(W_l a_{l-1} + b_l)               (+ W_r h_prev on the last layer if recurrent)
//! v   = W_p a_L + b_p                          pre-softmax policy vector
//! z   = v            (shared head)   or   W_task v   (per-task heads)
//! pi  = softmax(z),  V = w_v · a_L + b_v
//! ```

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    /// Elman recurrence on the last hidden layer.
    pub recurrent: bool,
    pub outputs: usize,
    /// Number of per-task projection heads; 0 means one shared head.
    pub heads: usize,
}

impl NetShape {
    pub fn last_hidden(&self) -> usize {
        *self.hidden.last().expect("at least one hidden layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<(usize, usize)>,
    recurrent: Option<usize>,
    policy_w: usize,
    policy_b: usize,
    value_w: usize,
    value_b: usize,
    heads: Option<usize>,
    len: usize,
}

impl Layout {
    fn new(shape: &NetShape) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let mut fan_in = shape.inputs;
        let mut layers = Vec::new();
        for &h in &shape.hidden {
            let w = take(h * fan_in);
            let b = take(h);
            layers.push((w, b));
            fan_in = h;
        }
        let last = shape.last_hidden();
        let recurrent = shape.recurrent.then(|| take(last * last));
        let policy_w = take(shape.outputs * last);
        let policy_b = take(shape.outputs);
        let value_w = take(last);
        let value_b = take(1);
        let heads = (shape.heads > 0).then(|| take(shape.heads * shape.outputs * shape.outputs));
        Self {
            layers,
            recurrent,
            policy_w,
            policy_b,
            value_w,
            value_b,
            heads,
            len: off,
        }
    }
}

/// Everything a forward pass computed for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub input: Vec<f64>,
    pub prev_hidden: Option<Vec<f64>>,
    /// Post-activation output of each hidden layer.
    pub activations: Vec<Vec<f64>>,
    pub pre_policy: Vec<f64>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

impl Forward {
    /// Output of the last hidden layer (the recurrent state when enabled).
    pub fn hidden(&self) -> &[f64] {
        self.activations.last().expect("hidden layer")
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| p * lp)
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticNet {
    shape: NetShape,
    layout: Layout,
    params: Vec<f64>,
}

impl ActorCriticNet {
    /// All weights zero, heads (if any) the identity. The policy is uniform everywhere.
    pub fn zeroed(shape: NetShape) -> Self {
        let layout = Layout::new(&shape);
        let mut net = Self {
            params: vec![0.0; layout.len],
            layout,
            shape,
        };
        net.reset_heads_to_identity();
        net
    }

    /// Hidden layers drawn uniformly in ±1/sqrt(fan_in); policy and value
    /// outputs start at zero so the initial policy is uniform.
    pub fn random(shape: NetShape, rng: &mut Rng) -> Self {
        let mut net = Self::zeroed(shape);
        let mut fan_in = net.shape.inputs;
        for (l, &h) in net.shape.hidden.clone().iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (w, _) = net.layout.layers[l];
            for p in &mut net.params[w..w + h * fan_in] {
                *p = rng.random_range(-bound..bound);
            }
            fan_in = h;
        }
        if let Some(r) = net.layout.recurrent {
            let h = net.shape.last_hidden();
            let bound = 1.0 / (h as f64).sqrt();
            for p in &mut net.params[r..r + h * h] {
                *p = rng.random_range(-bound..bound);
            }
        }
        net
    }

    /// Rebuilds a network from a saved parameter vector.
    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&shape);
        if params.len() != layout.len {
            return Err(Error::DimensionMismatch {
                expected: layout.len,
                got: params.len(),
            });
        }
        Ok(Self { shape, layout, params })
    }

    fn reset_heads_to_identity(&mut self) {
        if let Some(h) = self.layout.heads {
            let n = self.shape.outputs;
            for t in 0..self.shape.heads {
                for i in 0..n {
                    for j in 0..n {
                        self.params[h + t * n * n + i * n + j] = if i == j { 1.0 } else { 0.0 };
                    }
                }
            }
        }
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Order-sensitive hash of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
            (h ^ p.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    // Flat indices of individual parameters.

    pub fn hidden_weight(&self, layer: usize, unit: usize, input: usize) -> usize {
        let fan_in = if layer == 0 { self.shape.inputs } else { self.shape.hidden[layer - 1] };
        self.layout.layers[layer].0 + unit * fan_in + input
    }

    pub fn hidden_bias(&self, layer: usize, unit: usize) -> usize {
        self.layout.layers[layer].1 + unit
    }

    pub fn recurrent_weight(&self, unit: usize, from: usize) -> Option<usize> {
        self.layout.recurrent.map(|r| r + unit * self.shape.last_hidden() + from)
    }

    pub fn policy_weight(&self, output: usize, unit: usize) -> usize {
        self.layout.policy_w + output * self.shape.last_hidden() + unit
    }

    pub fn policy_bias(&self, output: usize) -> usize {
        self.layout.policy_b + output
    }

    pub fn value_weight(&self, unit: usize) -> usize {
        self.layout.value_w + unit
    }

    pub fn value_bias(&self) -> usize {
        self.layout.value_b
    }

    pub fn head_weight(&self, task: usize, row: usize, col: usize) -> Option<usize> {
        let n = self.shape.outputs;
        self.layout.heads.map(|h| h + task * n * n + row * n + col)
    }

    /// One forward step. `clamp` forces one unit of the last hidden layer to zero.
    pub fn forward(
        &self,
        input: &[f64],
        prev_hidden: Option<&[f64]>,
        task: usize,
        clamp: Option<usize>,
    ) -> Result<Forward> {
        if input.len() != self.shape.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.shape.inputs,
                got: input.len(),
            });
        }
        let last = self.shape.last_hidden();
        if let Some(h) = prev_hidden {
            if h.len() != last {
                return Err(Error::DimensionMismatch {
                    expected: last,
                    got: h.len(),
                });
            }
        }
        if self.shape.heads > 0 && task >= self.shape.heads {
            return Err(Error::UnknownTask {
                index: task,
                count: self.shape.heads,
            });
        }
        let p = &self.params;
        let n_layers = self.shape.hidden.len();
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        for (l, &width) in self.shape.hidden.iter().enumerate() {
            let x: &[f64] = if l == 0 { input } else { &activations[l - 1] };
            let (w, b) = self.layout.layers[l];
            let fan_in = x.len();
            let mut a = Vec::with_capacity(width);
            for u in 0..width {
                let row = &p[w + u * fan_in..w + (u + 1) * fan_in];
                let mut s = p[b + u] + dot(row, x);
                if l + 1 == n_layers {
                    if let (Some(r), Some(h)) = (self.layout.recurrent, prev_hidden) {
                        s += dot(&p[r + u * last..r + (u + 1) * last], h);
                    }
                }
                a.push(s.tanh());
            }
            if l + 1 == n_layers {
                if let Some(c) = clamp {
                    a[c] = 0.0;
                }
            }
            activations.push(a);
        }
        let h = activations.last().expect("hidden layer");
        let n_out = self.shape.outputs;
        let pre_policy: Vec<f64> = (0..n_out)
            .map(|o| p[self.layout.policy_b + o] + dot(&p[self.layout.policy_w + o * last..][..last], h))
            .collect();
        let logits = match self.layout.heads {
            Some(hd) => {
                let base = hd + task * n_out * n_out;
                (0..n_out)
                    .map(|i| dot(&p[base + i * n_out..base + (i + 1) * n_out], &pre_policy))
                    .collect()
            }
            None => pre_policy.clone(),
        };
        let log_probs = log_softmax(&logits);
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        let value = p[self.layout.value_b] + dot(&p[self.layout.value_w..self.layout.value_w + last], h);
        Ok(Forward {
            input: input.to_vec(),
            prev_hidden: prev_hidden.map(<[f64]>::to_vec),
            activations,
            pre_policy,
            logits,
            log_probs,
            probs,
            value,
        })
    }

    /// Back-propagates per-step seeds (dL/dlogits, dL/dvalue) through a
    /// sequence of forward steps taken in order, including through the
    /// recurrent connection between consecutive steps. The hidden state that
    /// fed the first step is treated as a constant.
    pub fn backward(&self, task: usize, steps: &[Forward], seeds: &[(Vec<f64>, f64)]) -> Vec<f64> {
        assert_eq!(steps.len(), seeds.len());
        let p = &self.params;
        let mut grad = vec![0.0; self.params.len()];
        let last = self.shape.last_hidden();
        let n_out = self.shape.outputs;
        let n_layers = self.shape.hidden.len();
        let mut carry = vec![0.0; last];

        for (f, (dz, dv)) in steps.iter().zip(seeds).rev() {
            let h = f.hidden();
            let dpre_policy: Vec<f64> = match self.layout.heads {
                Some(hd) => {
                    let base = hd + task * n_out * n_out;
                    let mut out = vec![0.0; n_out];
                    for i in 0..n_out {
                        for j in 0..n_out {
                            grad[base + i * n_out + j] += dz[i] * f.pre_policy[j];
                            out[j] += p[base + i * n_out + j] * dz[i];
                        }
                    }
                    out
                }
                None => dz.clone(),
            };
            let mut dh = carry.clone();
            for o in 0..n_out {
                let g = dpre_policy[o];
                if g == 0.0 {
                    continue;
                }
                grad[self.layout.policy_b + o] += g;
                let w = self.layout.policy_w + o * last;
                for u in 0..last {
                    grad[w + u] += g * h[u];
                    dh[u] += g * p[w + u];
                }
            }
            grad[self.layout.value_b] += dv;
            for u in 0..last {
                grad[self.layout.value_w + u] += dv * h[u];
                dh[u] += dv * p[self.layout.value_w + u];
            }

            carry = vec![0.0; last];
            for l in (0..n_layers).rev() {
                let a = &f.activations[l];
                let dpre: Vec<f64> = dh.iter().zip(a).map(|(d, a)| d * (1.0 - a * a)).collect();
                let x: &[f64] = if l == 0 { &f.input } else { &f.activations[l - 1] };
                let (w, b) = self.layout.layers[l];
                let fan_in = x.len();
                for (u, &g) in dpre.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    grad[b + u] += g;
                    for (i, xi) in x.iter().enumerate() {
                        grad[w + u * fan_in + i] += g * xi;
                    }
                }
                if l + 1 == n_layers {
                    if let (Some(r), Some(prev)) = (self.layout.recurrent, &f.prev_hidden) {
                        for (u, &g) in dpre.iter().enumerate() {
                            for (i, hi) in prev.iter().enumerate() {
                                grad[r + u * last + i] += g * hi;
                                carry[i] += g * p[r + u * last + i];
                            }
                        }
                    }
                }
                if l > 0 {
                    let mut below = vec![0.0; fan_in];
                    for (u, &g) in dpre.iter().enumerate() {
                        for (i, bi) in below.iter_mut().enumerate() {
                            *bi += g * p[w + u * fan_in + i];
                        }
                    }
                    dh = below;
                }
            }
        }
        grad
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Inverse-CDF draw from a probability vector using one uniform variate.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just below 1: fall back to the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
