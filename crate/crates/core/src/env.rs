//! Episodic decision process over the attacked plant.
//!
//! An episode runs `k = 0..=N`: at each step the attacker picks a selection
//! and a signal, the plant advances, and nothing else is returned. Rewards are
//! deferred to [`compute_rewards`] because the reference signal `θ*_k` depends
//! on the whole selection sequence of the episode.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{optimal_signal, solve_gains};
use crate::error::{Error, Result};
use crate::system::{attack_energy, weighted_sq, AttackPlan, ScenarioConfig, Selection, Trajectory};

/// Shape of the selection part of an action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    /// Exactly one agent compromised per step.
    #[default]
    SingleAgent,
    /// Any subset of agents, including none.
    MultiAgent,
}

impl ActionMode {
    pub fn check(&self, gamma: &Selection) -> Result<()> {
        match self {
            Self::SingleAgent if gamma.count() != 1 => Err(Error::Episode(format!(
                "single-agent mode needs exactly one selected agent, got {}",
                gamma.count()
            ))),
            _ => Ok(()),
        }
    }

    /// Number of distinct selections per step.
    pub fn choices(&self, n: usize) -> f64 {
        match self {
            Self::SingleAgent => n as f64,
            Self::MultiAgent => 2f64.powi(n as i32),
        }
    }
}

pub const DEFAULT_PHI: f64 = 1.0;
pub const DEFAULT_DISCOUNT: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct MdpConfig {
    pub scenario: ScenarioConfig<f64>,
    /// Weight of the `(θ_k − θ*_k)²` penalty.
    pub phi: f64,
    pub discount: f64,
    pub action_mode: ActionMode,
}

impl MdpConfig {
    pub fn new(scenario: ScenarioConfig<f64>) -> Self {
        Self { scenario, phi: DEFAULT_PHI, discount: DEFAULT_DISCOUNT, action_mode: ActionMode::default() }
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn with_action_mode(mut self, mode: ActionMode) -> Self {
        self.action_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi >= 0.0) {
            return Err(Error::Config(format!("phi must be >= 0, got {}", self.phi)));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1], got {}", self.discount)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.scenario.n()
    }

    pub fn horizon(&self) -> usize {
        self.scenario.horizon()
    }
}

/// Completed (and possibly rewarded) episode.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub states: Vec<DVector<f64>>,
    pub gammas: Vec<Selection>,
    pub thetas: Vec<f64>,
    theta_stars: Option<Vec<f64>>,
    rewards: Option<Vec<f64>>,
    return_discounted: Option<f64>,
}

impl EpisodeRecord {
    pub fn is_complete(&self) -> bool {
        !self.gammas.is_empty() && self.states.len() == self.gammas.len() + 1
    }

    pub fn rewards(&self) -> Result<&[f64]> {
        self.rewards.as_deref().ok_or_else(|| Error::Episode("rewards not computed yet".into()))
    }

    pub fn theta_stars(&self) -> Result<&[f64]> {
        self.theta_stars.as_deref().ok_or_else(|| Error::Episode("reference signals not computed yet".into()))
    }

    pub fn return_discounted(&self) -> Result<f64> {
        self.return_discounted.ok_or_else(|| Error::Episode("return not computed yet".into()))
    }

    pub fn plan(&self) -> AttackPlan<f64> {
        AttackPlan { gamma: self.gammas.clone(), theta: self.thetas.clone() }
    }

    pub fn trajectory(&self) -> Trajectory<f64> {
        Trajectory { states: self.states.clone(), plan: self.plan() }
    }
}

/// Stateful environment; one instance per rollout worker.
#[derive(Clone, Debug)]
pub struct AttackEnv<'a> {
    config: &'a MdpConfig,
    k: usize,
    states: Vec<DVector<f64>>,
    gammas: Vec<Selection>,
    thetas: Vec<f64>,
}

impl<'a> AttackEnv<'a> {
    pub fn new(config: &'a MdpConfig) -> Self {
        let mut env = Self { config, k: 0, states: Vec::new(), gammas: Vec::new(), thetas: Vec::new() };
        env.reset();
        env
    }

    /// Back to `x_0` with the step counter at zero.
    pub fn reset(&mut self) -> DVector<f64> {
        self.k = 0;
        self.states.clear();
        self.gammas.clear();
        self.thetas.clear();
        self.states.push(self.config.scenario.x0.clone());
        self.config.scenario.x0.clone()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    pub fn is_done(&self) -> bool {
        self.k > self.config.horizon()
    }

    /// Advances one step; returns the next state and whether the episode ended.
    pub fn step(&mut self, gamma: Selection, theta: f64) -> Result<(DVector<f64>, bool)> {
        if self.is_done() {
            return Err(Error::Episode("step after the episode finished".into()));
        }
        if gamma.len() != self.config.n() {
            return Err(Error::Dimension { context: "selection", expected: self.config.n(), got: gamma.len() });
        }
        self.config.action_mode.check(&gamma)?;
        if !theta.is_finite() {
            return Err(Error::Episode("non-finite signal".into()));
        }
        let next = self.config.scenario.system.step(self.k, self.state(), &gamma, theta)?;
        self.states.push(next.clone());
        self.gammas.push(gamma);
        self.thetas.push(theta);
        self.k += 1;
        Ok((next, self.is_done()))
    }

    /// Unrewarded record of the current episode.
    pub fn record(&self) -> EpisodeRecord {
        EpisodeRecord {
            states: self.states.clone(),
            gammas: self.gammas.clone(),
            thetas: self.thetas.clone(),
            theta_stars: None,
            rewards: None,
            return_discounted: None,
        }
    }
}

/// Fills in `θ*_k`, per-step rewards and the discounted return.
///
/// `θ*_k = F_k x_k + M_k` is the optimal feedback signal for the episode's own
/// selection sequence, evaluated at the visited state. The reward is
/// `r_k = −‖x_{k+1} − x*‖²_{P_k} − ‖Γ_k θ_k‖²_{Q_k} − φ (θ_k − θ*_k)²`.
pub fn compute_rewards(record: &EpisodeRecord, config: &MdpConfig) -> Result<EpisodeRecord> {
    let horizon = config.horizon();
    if !record.is_complete() || record.gammas.len() != horizon + 1 {
        return Err(Error::Episode(format!(
            "episode incomplete: {} of {} steps taken",
            record.gammas.len(),
            horizon + 1
        )));
    }
    let sc = &config.scenario;
    let gains = solve_gains(sc, &record.gammas)?;
    let mut theta_stars = Vec::with_capacity(horizon + 1);
    let mut rewards = Vec::with_capacity(horizon + 1);
    let mut ret = 0.0;
    let mut disc = 1.0;
    for k in 0..=horizon {
        let theta_star = optimal_signal(&gains, k, &record.states[k])?;
        let theta = record.thetas[k];
        let track = weighted_sq(&(&record.states[k + 1] - &sc.x_star), sc.weights.p(k));
        let energy = attack_energy(&record.gammas[k], theta, sc.weights.q(k));
        let penalty = config.phi * (theta - theta_star).powi(2);
        let r = -track - energy - penalty;
        theta_stars.push(theta_star);
        rewards.push(r);
        ret += disc * r;
        disc *= config.discount;
    }
    Ok(EpisodeRecord {
        theta_stars: Some(theta_stars),
        rewards: Some(rewards),
        return_discounted: Some(ret),
        ..record.clone()
    })
}

/// Anything that maps `(k, x_k)` to an action.
pub trait AttackPolicy {
    fn act(&mut self, k: usize, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> (Selection, f64);
}

/// Never attacks: agent 1 selected with a zero signal (single-agent mode needs a selection).
pub struct ZeroPolicy {
    pub n: usize,
}

impl AttackPolicy for ZeroPolicy {
    fn act(&mut self, _k: usize, _x: &DVector<f64>, _rng: &mut ChaCha8Rng) -> (Selection, f64) {
        (Selection::single(self.n, 0), 0.0)
    }
}

/// Replays a fixed open-loop plan.
pub struct PlanPolicy(pub AttackPlan<f64>);

impl AttackPolicy for PlanPolicy {
    fn act(&mut self, k: usize, _x: &DVector<f64>, _rng: &mut ChaCha8Rng) -> (Selection, f64) {
        (self.0.gamma[k].clone(), self.0.theta[k])
    }
}

/// Uniform selection per action mode and `θ ~ N(0, σ²)`.
pub struct RandomPolicy {
    pub n: usize,
    pub mode: ActionMode,
    pub sigma: f64,
}

impl AttackPolicy for RandomPolicy {
    fn act(&mut self, _k: usize, _x: &DVector<f64>, rng: &mut ChaCha8Rng) -> (Selection, f64) {
        let gamma = random_selection(self.n, self.mode, rng);
        let theta: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * self.sigma;
        (gamma, theta)
    }
}

pub fn random_selection(n: usize, mode: ActionMode, rng: &mut impl Rng) -> Selection {
    match mode {
        ActionMode::SingleAgent => Selection::single(n, rng.gen_range(0..n)),
        ActionMode::MultiAgent => Selection::new((0..n).map(|_| rng.gen_bool(0.5)).collect()),
    }
}

/// Runs one full episode of `policy` and returns the unrewarded record.
pub fn run_episode(policy: &mut impl AttackPolicy, config: &MdpConfig, rng: &mut ChaCha8Rng) -> Result<EpisodeRecord> {
    let mut env = AttackEnv::new(config);
    while !env.is_done() {
        let (gamma, theta) = policy.act(env.k(), env.state(), rng);
        env.step(gamma, theta)?;
    }
    Ok(env.record())
}

/// Monte-Carlo mean of the discounted return over `episodes` seeded rollouts.
pub fn expected_return(policy: &mut impl AttackPolicy, config: &MdpConfig, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Config("need at least one episode".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let rec = run_episode(policy, config, &mut rng)?;
        total += compute_rewards(&rec, config)?.return_discounted()?;
    }
    Ok(total / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::solve_optimal_plan;
    use crate::scenario::builtin;
    use crate::system::{constant_selection, evaluate_objective, LinearSystem, WeightScheme};
    use nalgebra::{dmatrix, dvector};

    fn linear() -> MdpConfig {
        MdpConfig::new(builtin("linear3").unwrap().build().unwrap())
    }

    #[test]
    fn reset_returns_initial_state() {
        let cfg = linear();
        let mut env = AttackEnv::new(&cfg);
        assert_eq!(env.reset(), dvector![-1.0, 12.0, -5.0]);
        let star = MdpConfig::new(builtin("star10").unwrap().build().unwrap());
        assert_eq!(AttackEnv::new(&star).reset().as_slice(), &[-1.0, 12.0, -5.0, 5.0, 2.0, 7.0, 7.0, 0.0, 9.0, -10.0]);
    }

    #[test]
    fn episode_length_and_done() {
        let cfg = linear();
        let mut env = AttackEnv::new(&cfg);
        for k in 0..=50 {
            let (_, done) = env.step(Selection::single(3, 0), 0.0).unwrap();
            assert_eq!(done, k == 50);
        }
        assert_eq!(env.record().states.len(), 52);
        assert!(env.step(Selection::single(3, 0), 0.0).is_err());
    }

    #[test]
    fn action_mode_enforced() {
        let cfg = linear();
        let mut env = AttackEnv::new(&cfg);
        assert!(env.step(Selection::from_mask(3, 0b011), 1.0).is_err());
        let multi = linear().with_action_mode(ActionMode::MultiAgent);
        let mut env = AttackEnv::new(&multi);
        let x = env.state().clone();
        let (next, _) = env.step(Selection::none(3), 5.0).unwrap();
        assert_eq!(next, multi.scenario.system.w(0) * x);
    }

    #[test]
    fn scalar_reward() {
        let sys = LinearSystem::time_invariant(dmatrix![1.0], 1).unwrap();
        let sc = ScenarioConfig::new(dvector![1.0], dvector![0.0], sys, WeightScheme::identity(1, 1)).unwrap();
        let cfg = MdpConfig::new(sc).with_phi(0.0);
        let mut env = AttackEnv::new(&cfg);
        let (x1, _) = env.step(Selection::single(1, 0), -1.0).unwrap();
        assert_eq!(x1, dvector![0.0]);
        env.step(Selection::single(1, 0), 0.0).unwrap();
        let rec = compute_rewards(&env.record(), &cfg).unwrap();
        assert_eq!(rec.rewards().unwrap()[0], -1.0);
    }

    #[test]
    fn rewards_deferred_until_complete() {
        let cfg = linear();
        let mut env = AttackEnv::new(&cfg);
        env.step(Selection::single(3, 0), 1.0).unwrap();
        let partial = env.record();
        assert!(partial.rewards().is_err());
        assert!(compute_rewards(&partial, &cfg).is_err());
    }

    #[test]
    fn optimal_play_has_no_penalty() {
        let cfg = linear().with_phi(7.0);
        let opt = solve_optimal_plan(&cfg.scenario, &constant_selection(&Selection::single(3, 2), 50)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = run_episode(&mut PlanPolicy(opt.plan.clone()), &cfg, &mut rng).unwrap();
        let rec = compute_rewards(&rec, &cfg).unwrap();
        for (t, ts) in rec.thetas.iter().zip(rec.theta_stars().unwrap()) {
            assert!((t - ts).abs() < 1e-9);
        }
        let undiscounted: f64 = rec.rewards().unwrap().iter().sum();
        let with_phi0 = compute_rewards(&rec, &cfg.clone().with_phi(0.0)).unwrap();
        let base: f64 = with_phi0.rewards().unwrap().iter().sum();
        assert!((undiscounted - base).abs() < 1e-9 * base.abs());
    }

    #[test]
    fn dp_plan_return_is_minus_objective() {
        let cfg = linear().with_phi(0.0).with_discount(1.0);
        let opt = solve_optimal_plan(&cfg.scenario, &constant_selection(&Selection::single(3, 0), 50)).unwrap();
        let ret = expected_return(&mut PlanPolicy(opt.plan.clone()), &cfg, 3, 1).unwrap();
        assert!((ret + opt.objective.j).abs() < 1e-9 * opt.objective.j);
        let obj = evaluate_objective(&cfg.scenario, &opt.trajectory).unwrap();
        assert_eq!(obj.j, opt.objective.j);
    }

    #[test]
    fn zero_policy_on_zero_scenario() {
        let sc = builtin("linear3").unwrap().build::<f64>().unwrap().with_x0(DVector::zeros(3)).unwrap();
        let cfg = MdpConfig::new(sc);
        assert_eq!(expected_return(&mut ZeroPolicy { n: 3 }, &cfg, 4, 0).unwrap(), 0.0);
    }

    #[test]
    fn expected_return_is_seeded() {
        let cfg = linear();
        let mut p = RandomPolicy { n: 3, mode: ActionMode::SingleAgent, sigma: 2.0 };
        let a = expected_return(&mut p, &cfg, 5, 42).unwrap();
        let b = expected_return(&mut p, &cfg, 5, 42).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(expected_return(&mut p, &cfg, 0, 42).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(linear().with_phi(-1.0).validate().is_err());
        assert!(linear().with_discount(0.0).validate().is_err());
        assert!(linear().with_discount(1.0).validate().is_ok());
    }
}
