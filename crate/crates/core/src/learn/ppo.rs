//! Clipped-surrogate policy optimization over the attack process, and the
//! two-stage variant that stops early and replaces the learned signals with
//! optimal ones.
//!
//! Stopping rule: after each iteration the greedy policy is rolled out and its
//! objective `J_c` evaluated. Training stops once the best-so-far `J` has
//! improved by less than `delta` for `patience` consecutive iterations, once it
//! reaches the optional `target_j`, or at `max_iterations`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::baselines::{baseline_random, sample_rng};
use super::mlp::{clip_grad_norm, Adam, Mlp};
use super::policy::{Policy, PolicySpec, Scaling};
use super::solution::{refine_with_oracle, AttackSolution, Provenance, RunMeta};
use crate::env::{compute_rewards, AttackEnv, MdpConfig};
use crate::error::{Error, Result};
use crate::system::{evaluate_objective, plan_objective, Selection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub delta: f64,
    /// Consecutive low-improvement iterations tolerated before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub value_learning_rate: f64,
    pub clip_ratio: f64,
    pub epochs_per_update: usize,
    pub batch_episodes: usize,
    pub minibatches: usize,
    pub max_iterations: usize,
    pub t_r: usize,
    pub seed: u64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Abort when the greedy objective exceeds this multiple of a random-plan objective.
    pub divergence_factor: f64,
    /// Stop as soon as the best greedy objective reaches this value.
    pub target_j: Option<f64>,
    pub policy: PolicySpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta: 2.0,
            patience: 3,
            learning_rate: 3e-4,
            value_learning_rate: 1e-3,
            clip_ratio: 0.2,
            epochs_per_update: 10,
            batch_episodes: 20,
            minibatches: 4,
            max_iterations: 500,
            t_r: 10,
            seed: 0,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            divergence_factor: 10.0,
            target_j: None,
            policy: PolicySpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.delta >= 0.0) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if self.t_r == 0 {
            return bad("t_r must be at least 1".into());
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad(format!("clip_ratio must lie in (0, 1), got {}", self.clip_ratio));
        }
        if self.batch_episodes == 0 || self.epochs_per_update == 0 || self.minibatches == 0 || self.max_iterations == 0 {
            return bad("batch_episodes, epochs_per_update, minibatches and max_iterations must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.value_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.policy.hidden_sizes.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn meta(&self, mdp: &MdpConfig) -> RunMeta {
        RunMeta {
            seed: Some(self.seed),
            config_hash: Some(self.hash()),
            phi: Some(mdp.phi),
            delta: Some(self.delta),
            t_r: Some(self.t_r),
        }
    }
}

/// One policy-gradient sample with frozen old log-probability and advantage.
#[derive(Clone, Debug)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub sel: Selection,
    /// Signal in scaled units.
    pub u: f64,
    pub logp_old: f64,
    pub advantage: f64,
}

/// `L = −mean(min(ρ A, clip(ρ, 1 ± ε) A)) − c_H mean(H)`.
pub fn surrogate_loss(policy: &Policy, batch: &[Sample], clip: f64, entropy_coef: f64) -> f64 {
    let b = batch.len() as f64;
    batch
        .iter()
        .map(|s| {
            let (_, head) = policy.head(&s.obs);
            let ratio = (policy.log_prob(&head, &s.sel, s.u) - s.logp_old).exp();
            let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
            -(ratio * s.advantage).min(clipped * s.advantage) / b - entropy_coef * policy.entropy(&head) / b
        })
        .sum()
}

/// Loss and its analytic gradient with respect to [`Policy::params`].
pub fn surrogate_grad(policy: &Policy, batch: &[Sample], clip: f64, entropy_coef: f64) -> (f64, Vec<f64>) {
    let b = batch.len() as f64;
    let mut grad = vec![0.0; policy.n_params()];
    let mut loss = 0.0;
    for s in batch {
        let (fwd, head) = policy.head(&s.obs);
        let ratio = (policy.log_prob(&head, &s.sel, s.u) - s.logp_old).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let (un, cl) = (ratio * s.advantage, clipped * s.advantage);
        loss += -un.min(cl) / b - entropy_coef * policy.entropy(&head) / b;
        let active = un <= cl || clipped == ratio;
        let c_lp = if active { -s.advantage * ratio / b } else { 0.0 };
        policy.accumulate_grad(&fwd, &head, &s.sel, s.u, c_lp, -entropy_coef / b, &mut grad);
    }
    (loss, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Environment episodes consumed so far, greedy evaluations included.
    pub samples: u64,
    /// Greedy-rollout objective after this iteration.
    pub j: f64,
    pub best_j: f64,
    /// Mean discounted return of the training batch.
    pub mean_return: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    TargetReached,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<CurvePoint>,
    /// Best greedy plan seen during training.
    pub best: AttackSolution,
    pub samples: u64,
    pub stop: StopReason,
}

impl TrainOutcome {
    /// Episodes consumed when the best-so-far objective first reached `target`.
    pub fn samples_to_reach(&self, target: f64) -> Option<u64> {
        self.curve.iter().find(|p| p.best_j <= target).map(|p| p.samples)
    }
}

struct Transition {
    obs: Vec<f64>,
    sel: Selection,
    u: f64,
    logp: f64,
    ret: f64,
}

fn collect_episode(
    policy: &Policy,
    mdp: &MdpConfig,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Transition>,
) -> Result<f64> {
    let mut env = AttackEnv::new(mdp);
    let start = out.len();
    while !env.is_done() {
        let obs = policy.scaling.observe(env.k(), env.state());
        let (_, head) = policy.head(&obs);
        let (sel, u) = policy.sample(&head, rng);
        let logp = policy.log_prob(&head, &sel, u);
        env.step(sel.clone(), u * policy.scaling.theta)?;
        out.push(Transition { obs, sel, u, logp, ret: 0.0 });
    }
    let rec = compute_rewards(&env.record(), mdp)?;
    let rewards = rec.rewards()?;
    let mut g = 0.0;
    for (k, r) in rewards.iter().enumerate().rev() {
        g = r + mdp.discount * g;
        out[start + k].ret = g;
    }
    rec.return_discounted()
}

fn greedy_solution(policy: &Policy, mdp: &MdpConfig, samples: u64) -> Result<AttackSolution> {
    let mut greedy = policy.greedy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rec = crate::env::run_episode(&mut greedy, mdp, &mut rng)?;
    let obj = evaluate_objective(&mdp.scenario, &rec.trajectory())?;
    let sol = AttackSolution::new(&mdp.scenario, rec.plan(), Provenance::OneStage, samples)?;
    debug_assert!((sol.j - obj.j).abs() <= 1e-9 * obj.j.abs().max(1.0));
    Ok(sol)
}

/// Clipped-surrogate training of a fresh policy.
pub fn train_one_stage(config: &TrainConfig, mdp: &MdpConfig) -> Result<TrainOutcome> {
    config.validate()?;
    mdp.validate()?;
    let sc = &mdp.scenario;
    let n = sc.n();
    let scaling = Scaling::for_state(&sc.x0, sc.horizon());
    let mut policy = Policy::new(config.policy.clone(), mdp.action_mode, n, scaling);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
    let mut value_sizes = vec![n + 1];
    value_sizes.extend(&config.policy.hidden_sizes);
    value_sizes.push(1);
    let mut value = Mlp::new(&value_sizes, 1.0, &mut init_rng);
    let mut pi_opt = Adam::new(policy.n_params(), config.learning_rate);
    let mut v_opt = Adam::new(value.n_params(), config.value_learning_rate);

    let guard = config.divergence_factor * baseline_random(mdp, 100, config.seed)?.solution.j;
    let mut shuffle_rng = sample_rng(config.seed, u64::MAX);
    let mut ret_scale: Option<f64> = None;
    let mut samples = 0u64;
    let mut episode = 0u64;
    let mut curve = Vec::new();
    let mut best: Option<AttackSolution> = None;
    let mut stall = 0;
    let mut stop = StopReason::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let mut batch = Vec::with_capacity(config.batch_episodes * (sc.horizon() + 1));
        let mut total_return = 0.0;
        for _ in 0..config.batch_episodes {
            let mut rng = sample_rng(config.seed, episode);
            episode += 1;
            total_return += collect_episode(&policy, mdp, &mut rng, &mut batch)?;
        }
        samples += config.batch_episodes as u64;
        let scale = *ret_scale.get_or_insert_with(|| {
            (batch.iter().map(|t| t.ret.abs()).sum::<f64>() / batch.len() as f64).max(1.0)
        });

        let targets: Vec<f64> = batch.iter().map(|t| t.ret / scale).collect();
        let mut adv: Vec<f64> =
            batch.iter().zip(&targets).map(|(t, g)| g - value.forward(&t.obs).output()[0]).collect();
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64).sqrt().max(1e-8);
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
        let samples_vec: Vec<Sample> = batch
            .into_iter()
            .zip(&adv)
            .map(|(t, &a)| Sample { obs: t.obs, sel: t.sel, u: t.u, logp_old: t.logp, advantage: a })
            .collect();

        let mut order: Vec<usize> = (0..samples_vec.len()).collect();
        let chunk = samples_vec.len().div_ceil(config.minibatches);
        for _ in 0..config.epochs_per_update {
            order.shuffle(&mut shuffle_rng);
            for idx in order.chunks(chunk) {
                let mb: Vec<Sample> = idx.iter().map(|&i| samples_vec[i].clone()).collect();
                let (_, mut g) = surrogate_grad(&policy, &mb, config.clip_ratio, config.entropy_coef);
                clip_grad_norm(&mut g, config.max_grad_norm);
                let mut p = policy.params();
                pi_opt.step(&mut p, &g);
                policy.set_params(&p);

                let mut vg = vec![0.0; value.n_params()];
                let b = idx.len() as f64;
                for &i in idx {
                    let fwd = value.forward(&samples_vec[i].obs);
                    let d = (fwd.output()[0] - targets[i]) / b;
                    value.backward(&fwd, &[d], &mut vg);
                }
                clip_grad_norm(&mut vg, config.max_grad_norm);
                v_opt.step(value.params_mut(), &vg);
            }
        }

        samples += 1;
        let current = greedy_solution(&policy, mdp, samples)?;
        let j_c = current.j;
        if !j_c.is_finite() || j_c > guard {
            return Err(Error::Diverged { j: j_c, guard });
        }
        let prev_best = best.as_ref().map(|b| b.j);
        if prev_best.map_or(true, |b| j_c < b) {
            best = Some(current);
        }
        let best_j = best.as_ref().map(|b| b.j).unwrap_or(j_c);
        curve.push(CurvePoint {
            iteration,
            samples,
            j: j_c,
            best_j,
            mean_return: total_return / config.batch_episodes as f64,
        });
        if config.target_j.is_some_and(|t| best_j <= t) {
            stop = StopReason::TargetReached;
            break;
        }
        if let Some(prev) = prev_best {
            if prev - best_j < config.delta {
                stall += 1;
            } else {
                stall = 0;
            }
            if stall >= config.patience {
                stop = StopReason::Converged;
                break;
            }
        }
    }

    let mut best = best.expect("at least one iteration");
    best.samples_used = samples;
    best.meta = config.meta(mdp);
    Ok(TrainOutcome { policy, curve, best, samples, stop })
}

/// One stage-2 candidate: the policy's own objective and the refined one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub j_policy: f64,
    pub j_refined: f64,
}

#[derive(Clone, Debug)]
pub struct TwoStageOutcome {
    pub solution: AttackSolution,
    pub stage1: TrainOutcome,
    pub candidates: Vec<Candidate>,
}

/// Samples `t_r` episodes from `policy` and keeps the best refined selection sequence.
pub fn refine_policy_samples(
    policy: &Policy,
    mdp: &MdpConfig,
    t_r: usize,
    seed: u64,
) -> Result<(AttackSolution, Vec<Candidate>)> {
    let mut sampler = policy.clone();
    sampler.stochastic = true;
    let mut best: Option<AttackSolution> = None;
    let mut candidates = Vec::with_capacity(t_r);
    for i in 0..t_r {
        let mut rng = sample_rng(seed ^ 0x7a57_0002, i as u64);
        let rec = crate::env::run_episode(&mut sampler, mdp, &mut rng)?;
        let j_policy = plan_objective(&mdp.scenario, &rec.plan())?.j;
        let refined = refine_with_oracle(&rec.gammas, &mdp.scenario)?;
        candidates.push(Candidate { j_policy, j_refined: refined.j });
        if best.as_ref().map_or(true, |b| refined.j < b.j) {
            best = Some(refined);
        }
    }
    Ok((best.expect("t_r >= 1"), candidates))
}

/// Short policy training followed by optimal-signal refinement of sampled selection sequences.
pub fn train_two_stage(config: &TrainConfig, mdp: &MdpConfig) -> Result<TwoStageOutcome> {
    let stage1 = train_one_stage(config, mdp)?;
    let (mut solution, candidates) = refine_policy_samples(&stage1.policy, mdp, config.t_r, config.seed)?;
    solution.provenance = Provenance::TwoStage;
    solution.samples_used = stage1.samples + config.t_r as u64;
    solution.meta = config.meta(mdp);
    Ok(TwoStageOutcome { solution, stage1, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionMode;
    use crate::scenario::builtin;
    use nalgebra::DVector;
    use rand::Rng;

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_episodes: 4,
            max_iterations: 3,
            epochs_per_update: 2,
            policy: PolicySpec { hidden_sizes: vec![8, 8], ..PolicySpec::default() },
            ..TrainConfig::default()
        }
    }

    fn frozen_batch(policy: &Policy, rng: &mut ChaCha8Rng, size: usize) -> Vec<Sample> {
        (0..size)
            .map(|_| {
                let obs: Vec<f64> = (0..policy.n + 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (_, head) = policy.head(&obs);
                let (sel, u) = policy.sample(&head, rng);
                let logp = policy.log_prob(&head, &sel, u);
                Sample { obs, sel, u, logp_old: logp + rng.gen_range(-0.5..0.5), advantage: rng.gen_range(-2.0..2.0) }
            })
            .collect()
    }

    #[test]
    fn surrogate_gradient_matches_fd() {
        for mode in [ActionMode::SingleAgent, ActionMode::MultiAgent] {
            let spec = PolicySpec { hidden_sizes: vec![5, 4], seed: 2, init_log_std: -0.2 };
            let mut policy = Policy::new(spec, mode, 3, Scaling { state: 1.0, theta: 1.0, horizon: 10 });
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let batch = frozen_batch(&policy, &mut rng, 16);
            let (loss, grad) = surrogate_grad(&policy, &batch, 0.2, 0.01);
            assert!((loss - surrogate_loss(&policy, &batch, 0.2, 0.01)).abs() < 1e-12);
            let base = policy.params();
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += 1e-6;
                policy.set_params(&p);
                let up = surrogate_loss(&policy, &batch, 0.2, 0.01);
                p[i] -= 2e-6;
                policy.set_params(&p);
                let down = surrogate_loss(&policy, &batch, 0.2, 0.01);
                policy.set_params(&base);
                let fd = (up - down) / 2e-6;
                let tol = 1e-4 * fd.abs().max(grad[i].abs()) + 1e-8;
                assert!((fd - grad[i]).abs() <= tol, "{mode:?} param {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn config_validation_and_hash() {
        assert!(TrainConfig { t_r: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { clip_ratio: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { delta: -1.0, ..TrainConfig::default() }.validate().is_err());
        let a = TrainConfig::default();
        assert_eq!(a.hash(), TrainConfig::default().hash());
        assert_ne!(a.hash(), TrainConfig { seed: 1, ..a.clone() }.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn training_is_deterministic() {
        let mdp = MdpConfig::new(builtin("linear3").unwrap().build().unwrap());
        let a = train_one_stage(&small_config(), &mdp).unwrap();
        let b = train_one_stage(&small_config(), &mdp).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.best, b.best);
        assert_eq!(a.samples, a.curve.last().unwrap().samples);
        a.best.verify(&mdp.scenario).unwrap();
    }

    #[test]
    fn two_stage_refinement_dominates() {
        let mdp = MdpConfig::new(builtin("linear3").unwrap().build().unwrap());
        let out = train_two_stage(&small_config(), &mdp).unwrap();
        assert_eq!(out.candidates.len(), 10);
        for c in &out.candidates {
            assert!(c.j_refined <= c.j_policy + 1e-9);
        }
        assert_eq!(out.solution.provenance, Provenance::TwoStage);
        assert_eq!(out.solution.samples_used, out.stage1.samples + 10);
        let min = out.candidates.iter().map(|c| c.j_refined).fold(f64::INFINITY, f64::min);
        assert_eq!(out.solution.j, min);
        let single = refine_policy_samples(&out.stage1.policy, &mdp, 1, 0).unwrap();
        assert!(single.1[0].j_refined <= single.1[0].j_policy + 1e-9);
    }

    #[test]
    fn zero_scenario_learns_silence() {
        let sc = builtin("linear3").unwrap().build::<f64>().unwrap();
        let sc = sc.with_x0(DVector::zeros(3)).unwrap();
        let mdp = MdpConfig::new(sc);
        let config = TrainConfig {
            delta: 0.0,
            max_iterations: 40,
            learning_rate: 3e-3,
            policy: PolicySpec { hidden_sizes: vec![16, 16], ..PolicySpec::default() },
            ..TrainConfig::default()
        };
        let out = train_one_stage(&config, &mdp).unwrap();
        assert!(out.best.j < 0.5, "J = {}", out.best.j);
        assert!(out.policy.mean_signal(0, &DVector::zeros(3)).abs() < 0.2);
    }
}
