//! Stochastic attack policy: a shared tanh trunk feeding a selection head
//! (categorical over agents, or one Bernoulli logit per agent) and the mean of
//! a Gaussian over the signal. The log-std is a free parameter, clamped.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Forward, Mlp};
use crate::env::{ActionMode, AttackPolicy};
use crate::system::Selection;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Architecture and initialization seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
    /// Initial log-std of the signal head (in scaled units).
    pub init_log_std: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self { hidden_sizes: vec![64, 64], seed: 0, init_log_std: 0.0 }
    }
}

/// Fixed input/output normalization derived from the scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub state: f64,
    pub theta: f64,
    pub horizon: usize,
}

impl Scaling {
    pub fn for_state(x0: &DVector<f64>, horizon: usize) -> Self {
        let s = x0.amax().max(1.0);
        Self { state: s, theta: s, horizon }
    }

    /// `[x / scale, k / N]`.
    pub fn observe(&self, k: usize, x: &DVector<f64>) -> Vec<f64> {
        let mut obs: Vec<f64> = x.iter().map(|v| v / self.state).collect();
        obs.push(k as f64 / self.horizon.max(1) as f64);
        obs
    }
}

/// Head outputs for one observation.
#[derive(Clone, Debug)]
pub struct Head {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub mean: f64,
    pub log_std: f64,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub spec: PolicySpec,
    pub mode: ActionMode,
    pub n: usize,
    pub scaling: Scaling,
    net: Mlp,
    log_std: f64,
    /// Sample (`true`) or act greedily.
    pub stochastic: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Policy {
    pub fn new(spec: PolicySpec, mode: ActionMode, n: usize, scaling: Scaling) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut sizes = vec![n + 1];
        sizes.extend(&spec.hidden_sizes);
        sizes.push(n + 1);
        let net = Mlp::new(&sizes, 0.01, &mut rng);
        let log_std = spec.init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        Self { spec, mode, n, scaling, net, log_std, stochastic: true }
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params() + 1
    }

    /// Flat parameter vector: network weights followed by the raw log-std.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.net.params().to_vec();
        p.push(self.log_std);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let m = self.net.n_params();
        self.net.params_mut().copy_from_slice(&p[..m]);
        self.log_std = p[m];
    }

    fn effective_log_std(&self) -> f64 {
        self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    pub fn head(&self, obs: &[f64]) -> (Forward, Head) {
        let fwd = self.net.forward(obs);
        let out = fwd.output();
        let logits = out[..self.n].to_vec();
        let probs = match self.mode {
            ActionMode::SingleAgent => softmax(&logits),
            ActionMode::MultiAgent => logits.iter().map(|&z| sigmoid(z)).collect(),
        };
        let head = Head { logits, probs, mean: out[self.n], log_std: self.effective_log_std() };
        (fwd, head)
    }

    /// Log-probability of `(sel, u)` with `u` the signal in scaled units.
    pub fn log_prob(&self, head: &Head, sel: &Selection, u: f64) -> f64 {
        let sel_lp = match self.mode {
            ActionMode::SingleAgent => {
                let i = sel.single_index().expect("single-agent selection");
                head.probs[i].max(1e-300).ln()
            }
            ActionMode::MultiAgent => sel
                .bits()
                .iter()
                .zip(&head.logits)
                .map(|(&b, &z)| if b { -(-z).exp().ln_1p() } else { -z.exp().ln_1p() })
                .map(|v| if v.is_finite() { v } else { -700.0 })
                .sum(),
        };
        let std = head.log_std.exp();
        let g = -0.5 * ((u - head.mean) / std).powi(2) - head.log_std - 0.5 * LN_2PI;
        sel_lp + g
    }

    pub fn entropy(&self, head: &Head) -> f64 {
        let sel_h = match self.mode {
            ActionMode::SingleAgent => -head.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>(),
            ActionMode::MultiAgent => head
                .probs
                .iter()
                .map(|&p| {
                    let mut h = 0.0;
                    if p > 0.0 {
                        h -= p * p.ln();
                    }
                    if p < 1.0 {
                        h -= (1.0 - p) * (1.0 - p).ln();
                    }
                    h
                })
                .sum(),
        };
        sel_h + head.log_std + 0.5 * (1.0 + LN_2PI)
    }

    /// Adds `c_lp ∇ log π(sel, u) + c_ent ∇ H` into `grad` (length [`Self::n_params`]).
    pub fn accumulate_grad(
        &self,
        fwd: &Forward,
        head: &Head,
        sel: &Selection,
        u: f64,
        c_lp: f64,
        c_ent: f64,
        grad: &mut [f64],
    ) {
        let n = self.n;
        let mut dout = vec![0.0; n + 1];
        match self.mode {
            ActionMode::SingleAgent => {
                let a = sel.single_index().expect("single-agent selection");
                let h: f64 = -head.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
                for j in 0..n {
                    let p = head.probs[j];
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    dout[j] += c_lp * (onehot - p);
                    if p > 0.0 {
                        dout[j] += c_ent * (-p * (p.ln() + h));
                    }
                }
            }
            ActionMode::MultiAgent => {
                for j in 0..n {
                    let p = head.probs[j];
                    let b = if sel.bits()[j] { 1.0 } else { 0.0 };
                    dout[j] += c_lp * (b - p) + c_ent * (-p * (1.0 - p) * head.logits[j]);
                }
            }
        }
        let var = (2.0 * head.log_std).exp();
        let diff = u - head.mean;
        dout[n] += c_lp * diff / var;
        let m = self.net.n_params();
        self.net.backward(fwd, &dout, &mut grad[..m]);
        if (LOG_STD_MIN..=LOG_STD_MAX).contains(&self.log_std) {
            grad[m] += c_lp * (diff * diff / var - 1.0) + c_ent;
        }
    }

    /// Samples (or picks greedily) a selection and a scaled signal.
    pub fn sample(&self, head: &Head, rng: &mut impl Rng) -> (Selection, f64) {
        if !self.stochastic {
            return (self.greedy_selection(head), head.mean);
        }
        let sel = match self.mode {
            ActionMode::SingleAgent => {
                let r: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = self.n - 1;
                for (i, p) in head.probs.iter().enumerate() {
                    acc += p;
                    if r < acc {
                        pick = i;
                        break;
                    }
                }
                Selection::single(self.n, pick)
            }
            ActionMode::MultiAgent => Selection::new(head.probs.iter().map(|&p| rng.gen::<f64>() < p).collect()),
        };
        let z: f64 = rng.sample(StandardNormal);
        (sel, head.mean + head.log_std.exp() * z)
    }

    fn greedy_selection(&self, head: &Head) -> Selection {
        match self.mode {
            ActionMode::SingleAgent => {
                let mut best = 0;
                for i in 1..self.n {
                    if head.logits[i] > head.logits[best] {
                        best = i;
                    }
                }
                Selection::single(self.n, best)
            }
            ActionMode::MultiAgent => Selection::new(head.logits.iter().map(|&z| z > 0.0).collect()),
        }
    }

    /// Deterministic copy that always takes the most likely selection and the mean signal.
    pub fn greedy(&self) -> Self {
        Self { stochastic: false, ..self.clone() }
    }

    /// Signal head mean in plant units at `(k, x)`.
    pub fn mean_signal(&self, k: usize, x: &DVector<f64>) -> f64 {
        let (_, head) = self.head(&self.scaling.observe(k, x));
        head.mean * self.scaling.theta
    }
}

impl AttackPolicy for Policy {
    fn act(&mut self, k: usize, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> (Selection, f64) {
        let (_, head) = self.head(&self.scaling.observe(k, x));
        let (sel, u) = self.sample(&head, rng);
        (sel, u * self.scaling.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn policy(mode: ActionMode) -> Policy {
        let spec = PolicySpec { hidden_sizes: vec![6, 5], seed: 4, init_log_std: -0.3 };
        Policy::new(spec, mode, 3, Scaling { state: 12.0, theta: 12.0, horizon: 50 })
    }

    #[test]
    fn categorical_probabilities_sum_to_one() {
        let p = policy(ActionMode::SingleAgent);
        let (_, head) = p.head(&p.scaling.observe(3, &dvector![-1.0, 12.0, -5.0]));
        assert!((head.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = policy(ActionMode::SingleAgent);
        let mut params = p.params();
        *params.last_mut().unwrap() = 9.0;
        p.set_params(&params);
        let (_, head) = p.head(&[0.0; 4]);
        assert_eq!(head.log_std, LOG_STD_MAX);
    }

    #[test]
    fn log_prob_gradient_matches_fd() {
        for mode in [ActionMode::SingleAgent, ActionMode::MultiAgent] {
            let mut p = policy(mode);
            let obs = [0.2, -0.4, 0.9, 0.3];
            let sel = match mode {
                ActionMode::SingleAgent => Selection::single(3, 1),
                ActionMode::MultiAgent => Selection::from_mask(3, 0b101),
            };
            let u = 0.37;
            let f = |p: &Policy| {
                let (_, h) = p.head(&obs);
                p.log_prob(&h, &sel, u) + 0.3 * p.entropy(&h)
            };
            let (fwd, head) = p.head(&obs);
            let mut grad = vec![0.0; p.n_params()];
            p.accumulate_grad(&fwd, &head, &sel, u, 1.0, 0.3, &mut grad);
            let base = p.params();
            for i in 0..base.len() {
                let mut q = base.clone();
                q[i] += 1e-6;
                p.set_params(&q);
                let up = f(&p);
                q[i] -= 2e-6;
                p.set_params(&q);
                let down = f(&p);
                p.set_params(&base);
                let fd = (up - down) / 2e-6;
                assert!((fd - grad[i]).abs() < 1e-6, "{mode:?} param {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let mut g = policy(ActionMode::SingleAgent).greedy();
        let x = dvector![1.0, 2.0, 3.0];
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(g.act(0, &x, &mut r1), g.act(0, &x, &mut r2));
    }
}
