//! Dueling Q-network with two tanh hidden layers, a tanh advantage head and
//! a linear value head; `Q = A + V`. Parameters live in one flat vector so
//! that optimiser, target blending and checkpoints work on plain slices.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("input has {got} entries, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),
    #[error("non-finite gradient in tensor {0}; update rejected")]
    NonFiniteGradient(&'static str),
    #[error("action {action} out of range for {n_actions} actions")]
    Action { action: usize, n_actions: usize },
    #[error("batch fields have mismatched lengths")]
    Batch,
}

/// Architecture: window length, per-step feature count, action count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub kappa: usize,
    pub features: usize,
    pub actions: usize,
}

impl Dims {
    pub fn input(&self) -> usize {
        self.kappa * self.features
    }

    pub fn hidden(&self) -> usize {
        self.features
    }
}

/// Location of one named tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

pub const TENSOR_NAMES: [&str; 8] = ["w1", "b1", "w2", "b2", "wa", "ba", "wv", "bv"];

pub fn tensor_specs(d: Dims) -> [TensorSpec; 8] {
    let (i, h, a) = (d.input(), d.hidden(), d.actions);
    let shapes = [
        (h * i, i, h, false),
        (h, i, h, true),
        (h * h, h, h, false),
        (h, h, h, true),
        (a * h, h, a, false),
        (a, h, a, true),
        (h, h, 1, false),
        (1, h, 1, true),
    ];
    let mut offset = 0;
    let mut out = [TensorSpec {
        name: "",
        offset: 0,
        len: 0,
        fan_in: 0,
        fan_out: 0,
        is_bias: false,
    }; 8];
    for (k, (len, fan_in, fan_out, is_bias)) in shapes.into_iter().enumerate() {
        out[k] = TensorSpec {
            name: TENSOR_NAMES[k],
            offset,
            len,
            fan_in,
            fan_out,
            is_bias,
        };
        offset += len;
    }
    out
}

pub fn param_count(d: Dims) -> usize {
    let s = tensor_specs(d);
    s[7].offset + s[7].len
}

/// Network outputs for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub q: Vec<f64>,
    pub v: f64,
    pub adv: Vec<f64>,
}

/// One training sample for the squared TD loss.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub target: f64,
    pub weight: f64,
}

/// Samples per gradient work unit. Partial gradients are summed in chunk
/// order, so the result does not depend on the execution mode.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    dims: Dims,
    params: Vec<f64>,
}

struct Cache {
    h1: Vec<f64>,
    h2: Vec<f64>,
    adv: Vec<f64>,
    v: f64,
}

impl QNetwork {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            params: vec![0.0; param_count(dims)],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(dims: Dims, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(dims);
        for spec in tensor_specs(dims) {
            if spec.is_bias {
                continue;
            }
            let bound = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
            for p in &mut net.params[spec.offset..spec.offset + spec.len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn seeded(dims: Dims, seed: u64) -> Self {
        Self::xavier(dims, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_params(dims: Dims, params: Vec<f64>) -> Result<Self, NetError> {
        if params.len() != param_count(dims) {
            return Err(NetError::Dimension {
                expected: param_count(dims),
                got: params.len(),
            });
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        tensor_specs(self.dims)
            .into_iter()
            .find(|s| s.name == name)
            .map(|s| &self.params[s.offset..s.offset + s.len])
    }

    fn check_input(&self, s: &[f64]) -> Result<(), NetError> {
        if s.len() != self.dims.input() {
            return Err(NetError::Dimension {
                expected: self.dims.input(),
                got: s.len(),
            });
        }
        if let Some(i) = s.iter().position(|x| !x.is_finite()) {
            return Err(NetError::NonFiniteInput(i));
        }
        Ok(())
    }

    fn run(&self, s: &[f64]) -> Cache {
        let [w1, b1, w2, b2, wa, ba, wv, bv] = tensor_specs(self.dims);
        let p = &self.params;
        let h1 = dense(&p[w1.as_range()], &p[b1.as_range()], s, true);
        let h2 = dense(&p[w2.as_range()], &p[b2.as_range()], &h1, true);
        let adv = dense(&p[wa.as_range()], &p[ba.as_range()], &h2, true);
        let v = dot(&p[wv.as_range()], &h2) + p[bv.offset];
        Cache { h1, h2, adv, v }
    }

    pub fn forward(&self, s: &[f64]) -> Result<Forward, NetError> {
        self.check_input(s)?;
        let c = self.run(s);
        let q = c.adv.iter().map(|a| a + c.v).collect();
        Ok(Forward { q, v: c.v, adv: c.adv })
    }

    pub fn q_values(&self, s: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward(s)?.q)
    }

    /// Weighted mean squared TD loss `(1/B) Σ w (t - Q(s, a))²`.
    pub fn loss(&self, batch: &[Sample<'_>]) -> Result<f64, NetError> {
        let mut total = 0.0;
        for smp in batch {
            self.check_sample(smp)?;
            let q = self.forward(smp.state)?.q[smp.action];
            total += smp.weight * (smp.target - q).powi(2);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    fn check_sample(&self, smp: &Sample<'_>) -> Result<(), NetError> {
        if smp.action >= self.dims.actions {
            return Err(NetError::Action {
                action: smp.action,
                n_actions: self.dims.actions,
            });
        }
        self.check_input(smp.state)
    }

    /// Loss gradient with respect to the flat parameter vector, plus the
    /// per-sample TD errors `t - Q(s, a)`.
    pub fn gradient(&self, batch: &[Sample<'_>], exec: Exec) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        for smp in batch {
            self.check_sample(smp)?;
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        let chunks: Vec<&[Sample<'_>]> = batch.chunks(GRAD_CHUNK).collect();
        let partials = exec.map(&chunks, |chunk| {
            let mut g = vec![0.0; self.params.len()];
            let td: Vec<f64> = chunk
                .iter()
                .map(|smp| self.accumulate(smp, scale, &mut g))
                .collect();
            (g, td)
        });
        let mut grad = vec![0.0; self.params.len()];
        let mut td = Vec::with_capacity(batch.len());
        for (g, t) in partials {
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
            td.extend(t);
        }
        Ok((grad, td))
    }

    fn accumulate(&self, smp: &Sample<'_>, scale: f64, g: &mut [f64]) -> f64 {
        let [w1, b1, w2, b2, wa, ba, wv, bv] = tensor_specs(self.dims);
        let p = &self.params;
        let c = self.run(smp.state);
        let a = smp.action;
        let q = c.adv[a] + c.v;
        let td = smp.target - q;
        let dq = -2.0 * smp.weight * td * scale;
        let h = self.dims.hidden();

        // heads
        let dza = dq * (1.0 - c.adv[a] * c.adv[a]);
        let wa_row = wa.offset + a * h;
        for k in 0..h {
            g[wa_row + k] += dza * c.h2[k];
            g[wv.offset + k] += dq * c.h2[k];
        }
        g[ba.offset + a] += dza;
        g[bv.offset] += dq;

        // second hidden layer
        let dz2: Vec<f64> = (0..h)
            .map(|k| (dza * p[wa_row + k] + dq * p[wv.offset + k]) * (1.0 - c.h2[k] * c.h2[k]))
            .collect();
        let mut dh1 = vec![0.0; h];
        for (r, &dz) in dz2.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let row = w2.offset + r * h;
            for k in 0..h {
                g[row + k] += dz * c.h1[k];
                dh1[k] += dz * p[row + k];
            }
            g[b2.offset + r] += dz;
        }

        // first hidden layer
        let n_in = self.dims.input();
        for r in 0..h {
            let dz = dh1[r] * (1.0 - c.h1[r] * c.h1[r]);
            if dz == 0.0 {
                continue;
            }
            let row = w1.offset + r * n_in;
            for (gk, x) in g[row..row + n_in].iter_mut().zip(smp.state) {
                *gk += dz * x;
            }
            g[b1.offset + r] += dz;
        }
        td
    }

    /// `θ⁻ ← τ θ + (1 − τ) θ⁻`.
    pub fn soft_update_from(&mut self, online: &QNetwork, tau: f64) {
        assert!(tau > 0.0 && tau <= 1.0, "soft update rate must be in (0, 1]");
        assert_eq!(self.dims, online.dims, "soft update across architectures");
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

impl TensorSpec {
    pub fn as_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense(w: &[f64], b: &[f64], x: &[f64], tanh: bool) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| {
            let z = dot(&w[r * n_in..(r + 1) * n_in], x) + bias;
            if tanh {
                z.tanh()
            } else {
                z
            }
        })
        .collect()
}

/// `t = r + γ (1 − end) max_a Q_target(s', a)`.
pub fn td_target(
    rewards: &[f64],
    ends: &[bool],
    next_states: &[&[f64]],
    target: &QNetwork,
    gamma: f64,
    exec: Exec,
) -> Result<Vec<f64>, NetError> {
    if rewards.len() != ends.len() || rewards.len() != next_states.len() {
        return Err(NetError::Batch);
    }
    let idx: Vec<usize> = (0..rewards.len()).collect();
    exec.map(&idx, |&i| {
        if ends[i] || gamma == 0.0 {
            return Ok(rewards[i]);
        }
        let q = target.q_values(next_states[i])?;
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(rewards[i] + gamma * best)
    })
    .into_iter()
    .collect()
}

/// Adam with inverse-time learning-rate decay every `decay_every` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
    pub decay_every: u64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr0: f64) -> Self {
        Self {
            lr0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.05,
            decay_every: 1024,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Learning rate for the next update.
    pub fn learning_rate(&self) -> f64 {
        self.lr0 / (1.0 + self.decay * (self.t / self.decay_every) as f64)
    }

    /// Applies one step; a non-finite gradient leaves all state untouched.
    pub fn step(&mut self, net: &mut QNetwork, grad: &[f64]) -> Result<(), NetError> {
        assert_eq!(grad.len(), net.params.len());
        for spec in tensor_specs(net.dims) {
            if grad[spec.as_range()].iter().any(|g| !g.is_finite()) {
                return Err(NetError::NonFiniteGradient(spec.name));
            }
        }
        let lr = self.learning_rate();
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in net
            .params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One gradient step on the weighted TD loss; returns `|t - Q|` per sample
/// measured before the step.
pub fn sgd_update(
    net: &mut QNetwork,
    opt: &mut Adam,
    batch: &[Sample<'_>],
    exec: Exec,
) -> Result<Vec<f64>, NetError> {
    let (grad, td) = net.gradient(batch, exec)?;
    opt.step(net, &grad)?;
    Ok(td.into_iter().map(f64::abs).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims {
            kappa: 2,
            features: 4,
            actions: 3,
        }
    }

    fn input(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(dims());
        let f = net.forward(&input(1, 8)).unwrap();
        assert_eq!(f.v, 0.0);
        assert!(f.q.iter().chain(&f.adv).all(|&x| x == 0.0));
    }

    #[test]
    fn dueling_identity() {
        let net = QNetwork::seeded(dims(), 3);
        let f = net.forward(&input(2, 8)).unwrap();
        for (q, a) in f.q.iter().zip(&f.adv) {
            assert!((q - a - f.v).abs() < 1e-15);
            assert!(a.abs() < 1.0);
        }
    }

    #[test]
    fn input_checks() {
        let net = QNetwork::zeros(dims());
        assert!(matches!(net.forward(&[0.0; 7]), Err(NetError::Dimension { .. })));
        let mut x = vec![0.0; 8];
        x[3] = f64::NAN;
        assert_eq!(net.forward(&x), Err(NetError::NonFiniteInput(3)));
    }

    #[test]
    fn param_layout() {
        let d = dims();
        let s = tensor_specs(d);
        assert_eq!(s[0].len, 4 * 8);
        assert_eq!(param_count(d), 32 + 4 + 16 + 4 + 12 + 3 + 4 + 1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = dims();
        let net = QNetwork::seeded(d, 7);
        let x = input(9, 8);
        let batch = [Sample { state: &x, action: 1, target: 0.7, weight: 0.8 }];
        let (g, _) = net.gradient(&batch, Exec::Sequential).unwrap();
        let h = 1e-5;
        for i in 0..param_count(d) {
            let mut p = net.clone();
            p.params[i] += h;
            let up = p.loss(&batch).unwrap();
            p.params[i] -= 2.0 * h;
            let down = p.loss(&batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn gradient_is_mode_independent() {
        let d = dims();
        let net = QNetwork::seeded(d, 1);
        let xs: Vec<Vec<f64>> = (0..37).map(|i| input(i, 8)).collect();
        let batch: Vec<Sample<'_>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample { state: x, action: i % 3, target: 0.1 * i as f64, weight: 1.0 })
            .collect();
        let a = net.gradient(&batch, Exec::Sequential).unwrap();
        let b = net.gradient(&batch, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn terminal_targets_ignore_target_net() {
        let x = input(4, 8);
        let net = QNetwork::seeded(dims(), 5);
        let t = td_target(&[1.5, 2.0], &[true, false], &[&x, &x], &net, 0.99, Exec::Sequential).unwrap();
        assert_eq!(t[0], 1.5);
        let zero = QNetwork::zeros(dims());
        let t = td_target(&[2.0], &[false], &[&x], &zero, 0.99, Exec::Sequential).unwrap();
        assert_eq!(t[0], 2.0);
        let t = td_target(&[2.0], &[false], &[&x], &net, 0.0, Exec::Sequential).unwrap();
        assert_eq!(t[0], 2.0);
    }

    #[test]
    fn zero_td_error_leaves_params() {
        let d = dims();
        let mut net = QNetwork::seeded(d, 5);
        let x = input(4, 8);
        let q = net.q_values(&x).unwrap()[2];
        let before = net.clone();
        let mut opt = Adam::new(param_count(d), 5e-4);
        sgd_update(&mut net, &mut opt, &[Sample { state: &x, action: 2, target: q, weight: 1.0 }], Exec::Sequential).unwrap();
        let delta = net.params.iter().zip(&before.params).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(delta < 1e-12);
    }

    #[test]
    fn first_adam_step_bounded_by_rate() {
        let d = dims();
        let mut net = QNetwork::seeded(d, 5);
        let x = input(4, 8);
        let before = net.clone();
        let mut opt = Adam::new(param_count(d), 5e-4);
        sgd_update(&mut net, &mut opt, &[Sample { state: &x, action: 0, target: 10.0, weight: 1.0 }], Exec::Sequential).unwrap();
        let delta = net.params.iter().zip(&before.params).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(delta > 0.0 && delta <= 5e-4 * (1.0 + 1e-9));
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let d = dims();
        let mut net = QNetwork::seeded(d, 5);
        let before = net.clone();
        let mut opt = Adam::new(param_count(d), 5e-4);
        let mut g = vec![0.0; param_count(d)];
        g[40] = f64::INFINITY;
        assert_eq!(opt.step(&mut net, &g), Err(NetError::NonFiniteGradient("w2")));
        assert_eq!(net, before);
        assert_eq!(opt.t, 0);
    }

    #[test]
    fn learning_rate_decays_every_1024_steps() {
        let mut opt = Adam::new(1, 5e-4);
        assert_eq!(opt.learning_rate(), 5e-4);
        opt.t = 1023;
        assert_eq!(opt.learning_rate(), 5e-4);
        opt.t = 1024;
        assert!((opt.learning_rate() - 5e-4 / 1.05).abs() < 1e-18);
    }

    #[test]
    fn soft_update_examples() {
        let d = dims();
        let online = QNetwork::from_params(d, vec![1.0; param_count(d)]).unwrap();
        let mut target = QNetwork::zeros(d);
        target.soft_update_from(&online, 0.005);
        assert!(target.params.iter().all(|&p| (p - 0.005).abs() < 1e-15));
        target.soft_update_from(&online, 1.0);
        assert_eq!(target, online);
    }
}
