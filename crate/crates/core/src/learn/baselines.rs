//! Comparison strategies: random plans, random selections with optimal
//! signals, and exhaustive enumeration on tiny instances.
//!
//! Sample `i` draws from its own ChaCha stream of the run seed, so results do
//! not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::solution::{AttackSolution, Provenance, RunMeta};
use crate::dp::solve_optimal_plan;
use crate::env::{random_selection, ActionMode, MdpConfig};
use crate::error::{Error, Result};
use crate::system::{AttackPlan, ScenarioConfig, Selection};

/// Standard deviation of the random baseline's signal.
pub const RANDOM_SIGMA: f64 = 2.0;
/// Largest candidate count [`baseline_brute_force`] will enumerate.
pub const ENUMERATION_CAP: u64 = 1_000_000;

/// Best solution plus its best-so-far curve as `(samples, J)` at every improvement.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub solution: AttackSolution,
    pub curve: Vec<(u64, f64)>,
}

pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Allocation-free objective of an open-loop plan, for large sample budgets.
struct PlanEvaluator {
    n: usize,
    horizon: usize,
    w: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    h: Vec<f64>,
    x0: Vec<f64>,
    x_star: Vec<f64>,
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

impl PlanEvaluator {
    fn new(sc: &ScenarioConfig<f64>) -> Self {
        let horizon = sc.horizon();
        Self {
            n: sc.n(),
            horizon,
            w: (0..=horizon).map(|k| row_major(sc.system.w(k))).collect(),
            p: (0..=horizon).map(|k| row_major(sc.weights.p(k))).collect(),
            q: (0..=horizon).map(|k| row_major(sc.weights.q(k))).collect(),
            h: row_major(sc.weights.h()),
            x0: sc.x0.iter().copied().collect(),
            x_star: sc.x_star.iter().copied().collect(),
        }
    }

    fn quad(&self, a: &[f64], v: &[f64]) -> f64 {
        let n = self.n;
        (0..n).map(|i| v[i] * (0..n).map(|j| a[i * n + j] * v[j]).sum::<f64>()).sum()
    }

    fn objective(&self, gamma: &[Selection], theta: &[f64], x: &mut Vec<f64>, next: &mut Vec<f64>, dev: &mut Vec<f64>) -> f64 {
        let n = self.n;
        x.clear();
        x.extend_from_slice(&self.x0);
        let mut j = 0.0;
        for k in 0..=self.horizon {
            let w = &self.w[k];
            for i in 0..n {
                next[i] = (0..n).map(|c| w[i * n + c] * x[c]).sum::<f64>();
            }
            let bits = gamma[k].bits();
            let mut sel_q = 0.0;
            for i in 0..n {
                if bits[i] {
                    next[i] += theta[k];
                    for c in 0..n {
                        if bits[c] {
                            sel_q += self.q[k][i * n + c];
                        }
                    }
                }
            }
            j += theta[k] * theta[k] * sel_q;
            std::mem::swap(x, next);
            for i in 0..n {
                dev[i] = x[i] - self.x_star[i];
            }
            let weight = if k == self.horizon { &self.h } else { &self.p[k + 1] };
            j += self.quad(weight, dev);
        }
        j
    }
}

/// Uniform selections and `θ ~ N(0, σ²)` with `σ = 2`; best of `budget` plans.
pub fn baseline_random(mdp: &MdpConfig, budget: u64, seed: u64) -> Result<BaselineRun> {
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let sc = &mdp.scenario;
    let (n, horizon) = (sc.n(), sc.horizon());
    let eval = PlanEvaluator::new(sc);
    let (mut x, mut next, mut dev) = (Vec::with_capacity(n), vec![0.0; n], vec![0.0; n]);
    let mut gamma = Vec::with_capacity(horizon + 1);
    let mut theta = Vec::with_capacity(horizon + 1);
    let mut best: Option<(f64, Vec<Selection>, Vec<f64>)> = None;
    let mut curve = Vec::new();
    for i in 0..budget {
        let mut rng = sample_rng(seed, i);
        gamma.clear();
        theta.clear();
        for _ in 0..=horizon {
            gamma.push(random_selection(n, mdp.action_mode, &mut rng));
            theta.push(rng.sample::<f64, _>(StandardNormal) * RANDOM_SIGMA);
        }
        let j = eval.objective(&gamma, &theta, &mut x, &mut next, &mut dev);
        if best.as_ref().map_or(true, |b| j < b.0) {
            curve.push((i + 1, j));
            best = Some((j, gamma.clone(), theta.clone()));
        }
    }
    let (_, g, t) = best.expect("budget >= 1");
    let solution = AttackSolution::new(sc, AttackPlan { gamma: g, theta: t }, Provenance::Random, budget)?
        .with_meta(RunMeta { seed: Some(seed), phi: Some(mdp.phi), ..RunMeta::default() });
    Ok(BaselineRun { solution, curve })
}

/// Uniform selection sequences, each with optimal signals; best of `budget`.
pub fn baseline_sampling(mdp: &MdpConfig, budget: u64, seed: u64) -> Result<BaselineRun> {
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let sc = &mdp.scenario;
    let (n, horizon) = (sc.n(), sc.horizon());
    let mut best: Option<(f64, AttackPlan<f64>)> = None;
    let mut curve = Vec::new();
    for i in 0..budget {
        let mut rng = sample_rng(seed, i);
        let gamma: Vec<Selection> = (0..=horizon).map(|_| random_selection(n, mdp.action_mode, &mut rng)).collect();
        let opt = solve_optimal_plan(sc, &gamma)?;
        if best.as_ref().map_or(true, |b| opt.objective.j < b.0) {
            curve.push((i + 1, opt.objective.j));
            best = Some((opt.objective.j, opt.plan));
        }
    }
    let (_, plan) = best.expect("budget >= 1");
    let solution = AttackSolution::new(sc, plan, Provenance::Sampling, budget)?
        .with_meta(RunMeta { seed: Some(seed), phi: Some(mdp.phi), ..RunMeta::default() });
    Ok(BaselineRun { solution, curve })
}

/// `(per-step choices)^(N+1)` as text, exact when it fits in `u128`.
pub fn candidate_count(mode: ActionMode, n: usize, horizon: usize) -> (Option<u128>, String) {
    let steps = (horizon + 1) as u32;
    let (base, label) = match mode {
        ActionMode::SingleAgent => (n as u128, format!("{n}^{steps}")),
        ActionMode::MultiAgent => (1u128 << n.min(127), format!("2^{}", n as u32 * steps)),
    };
    let exact = if n >= 127 { None } else { base.checked_pow(steps) };
    let text = match exact {
        Some(v) => format!("{label} = {v}"),
        None => format!("{label} ≈ {:.3e}", (base as f64).powi(steps as i32)),
    };
    (exact, text)
}

/// Enumerates every selection sequence with optimal signals; refuses above [`ENUMERATION_CAP`].
pub fn baseline_brute_force(mdp: &MdpConfig) -> Result<BaselineRun> {
    let sc = &mdp.scenario;
    let (n, horizon) = (sc.n(), sc.horizon());
    let (count, text) = candidate_count(mdp.action_mode, n, horizon);
    let total = match count {
        Some(c) if c <= ENUMERATION_CAP as u128 => c as u64,
        _ => return Err(Error::EnumerationCap { count: text, cap: ENUMERATION_CAP }),
    };
    let radix = match mdp.action_mode {
        ActionMode::SingleAgent => n as u64,
        ActionMode::MultiAgent => 1u64 << n,
    };
    let choice = |d: u64| match mdp.action_mode {
        ActionMode::SingleAgent => Selection::single(n, d as usize),
        ActionMode::MultiAgent => Selection::from_mask(n, d),
    };
    let mut digits = vec![0u64; horizon + 1];
    let mut best: Option<(f64, AttackPlan<f64>)> = None;
    let mut curve = Vec::new();
    for idx in 0..total {
        let gamma: Vec<Selection> = digits.iter().map(|&d| choice(d)).collect();
        let opt = solve_optimal_plan(sc, &gamma)?;
        if best.as_ref().map_or(true, |b| opt.objective.j < b.0) {
            curve.push((idx + 1, opt.objective.j));
            best = Some((opt.objective.j, opt.plan));
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < radix {
                break;
            }
            *d = 0;
        }
    }
    let (_, plan) = best.expect("at least one candidate");
    let solution = AttackSolution::new(sc, plan, Provenance::BruteForce, total)?
        .with_meta(RunMeta { phi: Some(mdp.phi), ..RunMeta::default() });
    Ok(BaselineRun { solution, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::solution::refine_with_oracle;
    use crate::scenario::builtin;
    use crate::system::{build_consensus_system, constant_selection, plan_objective, WeightScheme};
    use nalgebra::{dmatrix, dvector};

    fn linear() -> MdpConfig {
        MdpConfig::new(builtin("linear3").unwrap().build().unwrap())
    }

    fn tiny(horizon: usize) -> MdpConfig {
        let l = dmatrix![1.0, -1.0; -1.0, 1.0];
        let sys = build_consensus_system(&l, 0.3, horizon).unwrap();
        let sc = ScenarioConfig::new(dvector![1.0, -2.0], dvector![0.5, 1.0], sys, WeightScheme::identity(2, horizon)).unwrap();
        MdpConfig::new(sc)
    }

    #[test]
    fn fast_evaluator_matches_rollout() {
        let mdp = linear().with_action_mode(ActionMode::MultiAgent);
        let eval = PlanEvaluator::new(&mdp.scenario);
        let mut rng = sample_rng(9, 0);
        let gamma: Vec<Selection> = (0..=50).map(|_| random_selection(3, ActionMode::MultiAgent, &mut rng)).collect();
        let theta: Vec<f64> = (0..=50).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fast = eval.objective(&gamma, &theta, &mut Vec::new(), &mut vec![0.0; 3], &mut vec![0.0; 3]);
        let slow = plan_objective(&mdp.scenario, &AttackPlan { gamma, theta }).unwrap().j;
        assert!((fast - slow).abs() < 1e-9 * slow);
    }

    #[test]
    fn random_is_seeded_and_monotone() {
        let a = baseline_random(&linear(), 200, 5).unwrap();
        let b = baseline_random(&linear(), 200, 5).unwrap();
        assert_eq!(a.solution, b.solution);
        assert!(a.curve.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0));
        assert!((a.curve.last().unwrap().1 - a.solution.j).abs() < 1e-9 * a.solution.j);
        let one = baseline_random(&linear(), 1, 5).unwrap();
        assert_eq!(one.curve.len(), 1);
        assert!(baseline_random(&linear(), 0, 5).is_err());
    }

    #[test]
    fn sampling_budget_one_constant_selection() {
        let sol = refine_with_oracle(&constant_selection(&Selection::single(3, 1), 50), &linear().scenario).unwrap();
        assert!((sol.j - 36.0239).abs() < 1e-3);
        let run = baseline_sampling(&linear(), 50, 1).unwrap();
        assert!(run.curve.windows(2).all(|w| w[1].1 <= w[0].1));
        run.solution.verify(&linear().scenario).unwrap();
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let err = baseline_brute_force(&linear()).unwrap_err().to_string();
        assert!(err.contains("3^51"), "{err}");
        assert!(err.contains("2153693963075557766310747"), "{err}");
        let multi = linear().with_action_mode(ActionMode::MultiAgent);
        let err = baseline_brute_force(&multi).unwrap_err().to_string();
        assert!(err.contains("2^153"), "{err}");
    }

    #[test]
    fn brute_force_is_a_lower_bound_for_sampling() {
        let mdp = tiny(3);
        let exact = baseline_brute_force(&mdp).unwrap();
        assert_eq!(exact.solution.samples_used, 16);
        let sampled = baseline_sampling(&mdp, 200, 3).unwrap();
        assert!(exact.solution.j <= sampled.solution.j + 1e-9);
        assert!((exact.solution.j - sampled.solution.j).abs() < 1e-9);
        let random = baseline_random(&mdp, 2000, 3).unwrap();
        assert!(exact.solution.j <= random.solution.j + 1e-9);
    }

    #[test]
    fn brute_force_single_agent_network() {
        let sys = build_consensus_system(&dmatrix![0.0], 0.2, 4).unwrap();
        let sc = ScenarioConfig::new(dvector![3.0], dvector![-1.0], sys, WeightScheme::identity(1, 4)).unwrap();
        let mdp = MdpConfig::new(sc.clone());
        let run = baseline_brute_force(&mdp).unwrap();
        let refined = refine_with_oracle(&constant_selection(&Selection::single(1, 0), 4), &sc).unwrap();
        assert_eq!(run.solution.j, refined.j);
    }
}
