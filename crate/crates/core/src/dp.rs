//! Backward dynamic programming for the optimal attack signal given a
//! selection sequence.
//!
//! For a fixed `Γ_0..=Γ_N` the objective is a convex quadratic in the signals,
//! and the minimizer is the affine feedback `θ_k = F_k x_k + M_k`. The gains
//! come from a backward sweep starting at `K_{N+1} = H`:
//!
//! ```text
//! R_k = Γ_kᵀ (Q_k + K_{k+1}) Γ_k
//! F_k = −R_k⁻¹ Γ_kᵀ K_{k+1} W_k
//! K_k = P_k + W_kᵀ K_{k+1} W_k + 2 W_kᵀ K_{k+1} Γ_k F_k + F_kᵀ R_k F_k
//! ```
//!
//! `R_k` is a scalar because `θ_k` is. Steps with `Γ_k = 0` use the no-attack
//! limit (`F_k = 0`, `M_k = 0`, `R_k = 0`, `K_k = P_k + W_kᵀ K_{k+1} W_k`).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::system::{evaluate_objective, AttackPlan, Objective, ScenarioConfig, Selection, Trajectory};

/// How the affine offset `M_k` is propagated backward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OffsetRecursion {
    /// Tracking recursion through the linear value-function term
    /// `s_{N+1} = H x*`, `s_k = P_k x* + (W_k + Γ_k F_k)ᵀ s_{k+1}`, with
    /// `M_k = R_k⁻¹ Γ_kᵀ s_{k+1}`. This is the exact minimizer for any `x*`.
    #[default]
    Exact,
    /// `M_N = R_N⁻¹ Γ_Nᵀ K_{N+1} x*` and, for `k < N`,
    /// `M_k = R_k⁻¹ Γ_kᵀ K_{k+1} (P_{k+1} x* − W_{k+1}ᵀ K_{k+2} Γ_{k+1} M_{k+1})`.
    /// Agrees with [`OffsetRecursion::Exact`] when `x* = 0` (both vanish) and
    /// at `k = N`; kept for comparison.
    AsPrinted,
}

/// Output of the backward sweep.
#[derive(Clone, Debug)]
pub struct DpGains<T: Scalar> {
    /// `K_0..=K_{N+1}`.
    pub k: Vec<DMatrix<T>>,
    /// `F_0..=F_N`, each the transpose of a 1×n row.
    pub f: Vec<DVector<T>>,
    /// `M_0..=M_N`.
    pub m: Vec<T>,
    /// `R_0..=R_N`.
    pub r: Vec<T>,
    /// Linear value-function terms `s_0..=s_{N+1}` (exact recursion only).
    pub s: Vec<DVector<T>>,
    pub gamma: Vec<Selection>,
    pub recursion: OffsetRecursion,
    /// Plant, weights and selection are all constant in time.
    pub stationary: bool,
}

impl<T: Scalar> DpGains<T> {
    pub fn horizon(&self) -> usize {
        self.f.len() - 1
    }

    pub fn n(&self) -> usize {
        self.k[0].nrows()
    }
}

fn check_gamma<T: Scalar>(scenario: &ScenarioConfig<T>, gamma_seq: &[Selection]) -> Result<()> {
    let expected = scenario.horizon() + 1;
    if gamma_seq.len() != expected {
        return Err(Error::Dimension { context: "selection sequence", expected, got: gamma_seq.len() });
    }
    let n = scenario.n();
    if let Some(g) = gamma_seq.iter().find(|g| g.len() != n) {
        return Err(Error::Dimension { context: "selection vector", expected: n, got: g.len() });
    }
    Ok(())
}

fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::lit(0.5)
}

fn all_finite<T: Scalar>(it: impl IntoIterator<Item = T>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}

/// Backward sweep with the exact offset recursion.
pub fn solve_gains<T: Scalar>(scenario: &ScenarioConfig<T>, gamma_seq: &[Selection]) -> Result<DpGains<T>> {
    solve_gains_with(scenario, gamma_seq, OffsetRecursion::Exact)
}

pub fn solve_gains_with<T: Scalar>(
    scenario: &ScenarioConfig<T>,
    gamma_seq: &[Selection],
    recursion: OffsetRecursion,
) -> Result<DpGains<T>> {
    check_gamma(scenario, gamma_seq)?;
    let horizon = scenario.horizon();
    let n = scenario.n();
    let weights = &scenario.weights;
    let sys = &scenario.system;
    let x_star = &scenario.x_star;

    let mut k_seq = vec![DMatrix::zeros(n, n); horizon + 2];
    let mut s_seq = vec![DVector::zeros(n); horizon + 2];
    let mut f_seq = vec![DVector::zeros(n); horizon + 1];
    let mut m_seq = vec![T::zero(); horizon + 1];
    let mut r_seq = vec![T::zero(); horizon + 1];
    k_seq[horizon + 1] = weights.h().clone();
    s_seq[horizon + 1] = weights.h() * x_star;

    for k in (0..=horizon).rev() {
        let gamma = &gamma_seq[k];
        let w = sys.w(k);
        let k_next = &k_seq[k + 1];
        let wt_k_w = w.transpose() * k_next * w;
        let p = weights.p(k);

        let (k_new, s_new) = if gamma.is_zero() {
            (p + wt_k_w, p * x_star + w.transpose() * &s_seq[k + 1])
        } else {
            let r = gamma.quad(&(weights.q(k) + k_next));
            // u = Wᵀ K_{k+1} Γ
            let u = w.transpose() * gamma.row_sum(k_next);
            let f = -&u / r;
            let cross = &u * f.transpose() * T::lit(2.0);
            let quad = &f * f.transpose() * r;
            let k_new = p + wt_k_w + cross + quad;

            let m = match recursion {
                OffsetRecursion::Exact => gamma.dot(&s_seq[k + 1]) / r,
                OffsetRecursion::AsPrinted => {
                    let inner = if k == horizon {
                        x_star.clone()
                    } else {
                        let g1 = &gamma_seq[k + 1];
                        let carry = sys.w(k + 1).transpose() * g1.row_sum(&k_seq[k + 2]) * m_seq[k + 1];
                        weights.p(k + 1) * x_star - carry
                    };
                    gamma.dot(&(k_next * inner)) / r
                }
            };

            // closed loop W + Γ F
            let mut closed = w.clone();
            for i in gamma.indices() {
                for j in 0..n {
                    closed[(i, j)] += f[j];
                }
            }
            let s_new = p * x_star + closed.transpose() * &s_seq[k + 1];
            f_seq[k] = f;
            m_seq[k] = m;
            r_seq[k] = r;
            (k_new, s_new)
        };

        let k_new = symmetrize(k_new);
        if !all_finite(k_new.iter().copied())
            || !all_finite(f_seq[k].iter().copied())
            || !m_seq[k].is_finite()
            || !all_finite(s_new.iter().copied())
        {
            return Err(Error::NonFinite { k });
        }
        k_seq[k] = k_new;
        s_seq[k] = s_new;
    }

    let stationary = scenario.is_time_invariant() && gamma_seq.windows(2).all(|p| p[0] == p[1]);
    Ok(DpGains {
        k: k_seq,
        f: f_seq,
        m: m_seq,
        r: r_seq,
        s: s_seq,
        gamma: gamma_seq.to_vec(),
        recursion,
        stationary,
    })
}

/// `θ_k = F_k x_k + M_k`; zero whenever `Γ_k = 0`.
pub fn optimal_signal<T: Scalar>(gains: &DpGains<T>, k: usize, x_k: &DVector<T>) -> Result<T> {
    let horizon = gains.horizon();
    if k > horizon {
        return Err(Error::TimeIndex { k, max: horizon });
    }
    if x_k.len() != gains.n() {
        return Err(Error::Dimension { context: "state", expected: gains.n(), got: x_k.len() });
    }
    if gains.gamma[k].is_zero() {
        return Ok(T::zero());
    }
    Ok(gains.f[k].dot(x_k) + gains.m[k])
}

/// DP-optimal plan for a fixed selection sequence.
#[derive(Clone, Debug)]
pub struct OptimalPlan<T: Scalar> {
    pub plan: AttackPlan<T>,
    pub trajectory: Trajectory<T>,
    pub objective: Objective<T>,
    pub gains: DpGains<T>,
}

/// Forward pass injecting `θ_k = F_k x_k + M_k` along the trajectory.
pub fn forward<T: Scalar>(scenario: &ScenarioConfig<T>, gains: &DpGains<T>) -> Result<Trajectory<T>> {
    let horizon = scenario.horizon();
    let mut states = Vec::with_capacity(horizon + 2);
    let mut theta = Vec::with_capacity(horizon + 1);
    states.push(scenario.x0.clone());
    for k in 0..=horizon {
        let th = optimal_signal(gains, k, &states[k])?;
        let next = scenario.system.step(k, &states[k], &gains.gamma[k], th)?;
        theta.push(th);
        states.push(next);
    }
    Ok(Trajectory { states, plan: AttackPlan { gamma: gains.gamma.clone(), theta } })
}

pub fn solve_optimal_plan<T: Scalar>(scenario: &ScenarioConfig<T>, gamma_seq: &[Selection]) -> Result<OptimalPlan<T>> {
    solve_optimal_plan_with(scenario, gamma_seq, OffsetRecursion::Exact)
}

pub fn solve_optimal_plan_with<T: Scalar>(
    scenario: &ScenarioConfig<T>,
    gamma_seq: &[Selection],
    recursion: OffsetRecursion,
) -> Result<OptimalPlan<T>> {
    let gains = solve_gains_with(scenario, gamma_seq, recursion)?;
    let trajectory = forward(scenario, &gains)?;
    let objective = evaluate_objective(scenario, &trajectory)?;
    Ok(OptimalPlan { plan: trajectory.plan.clone(), trajectory, objective, gains })
}

/// `K_k` through the simplified update
/// `K_k = P_k + W_kᵀK_{k+1}W_k − R_k⁻¹ W_kᵀK_{k+1}Γ_kΓ_kᵀK_{k+1}W_k`.
///
/// Independent of [`solve_gains`]; used to cross-check it.
pub fn corollary1_k<T: Scalar>(scenario: &ScenarioConfig<T>, gamma_seq: &[Selection]) -> Result<Vec<DMatrix<T>>> {
    check_gamma(scenario, gamma_seq)?;
    let horizon = scenario.horizon();
    let weights = &scenario.weights;
    let mut out = vec![DMatrix::zeros(scenario.n(), scenario.n()); horizon + 2];
    out[horizon + 1] = weights.h().clone();
    for k in (0..=horizon).rev() {
        let w = scenario.system.w(k);
        let g: DVector<T> = gamma_seq[k].to_vector();
        let kn = &out[k + 1];
        let mut kk = weights.p(k) + w.transpose() * kn * w;
        if !gamma_seq[k].is_zero() {
            let r = (g.transpose() * (weights.q(k) + kn) * &g)[(0, 0)];
            let v = w.transpose() * kn * &g;
            kk -= &v * v.transpose() / r;
        }
        if !all_finite(kk.iter().copied()) {
            return Err(Error::NonFinite { k });
        }
        out[k] = kk;
    }
    Ok(out)
}

/// Largest central-difference derivative `|∂J/∂θ_k|` at `plan`, with `Γ` held fixed.
pub fn stationarity_check<T: Scalar>(scenario: &ScenarioConfig<T>, plan: &AttackPlan<T>, h: T) -> Result<T> {
    let grad = objective_gradient_fd(scenario, plan, h)?;
    Ok(grad.into_iter().fold(T::zero(), |a, g| a.max(g.abs())))
}

/// Central finite-difference gradient of `J` with respect to each `θ_k`.
pub fn objective_gradient_fd<T: Scalar>(scenario: &ScenarioConfig<T>, plan: &AttackPlan<T>, h: T) -> Result<Vec<T>> {
    let mut grad = Vec::with_capacity(plan.len());
    let mut probe = plan.clone();
    for k in 0..plan.len() {
        let base = plan.theta[k];
        probe.theta[k] = base + h;
        let up = crate::system::plan_objective(scenario, &probe)?.j;
        probe.theta[k] = base - h;
        let down = crate::system::plan_objective(scenario, &probe)?.j;
        probe.theta[k] = base;
        grad.push((up - down) / (h * T::lit(2.0)));
    }
    Ok(grad)
}
