//! Linear consensus plants under additive false-data injection.
//!
//! The attacked dynamics are `x_{k+1} = W_k x_k + Γ_k θ_k`, where `Γ_k` is a
//! binary selection vector over agents and `θ_k` a scalar signal. Every
//! time-indexed quantity is stored per step so time-varying systems are
//! supported even though the bundled scenarios are time-invariant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute tolerance on Laplacian row sums and symmetry.
pub const LAPLACIAN_TOL: f64 = 1e-9;
/// Relative tolerance on weight-matrix symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Binary attack selection vector `Γ_k`; entry `i` is set when agent `i` is compromised.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selection(Vec<bool>);

impl Selection {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    /// No agent selected.
    pub fn none(n: usize) -> Self {
        Self(vec![false; n])
    }

    /// Only agent `i` (zero-based) selected.
    pub fn single(n: usize, i: usize) -> Self {
        let mut bits = vec![false; n];
        bits[i] = true;
        Self(bits)
    }

    /// Bit `i` of `mask` selects agent `i`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Self((0..n).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn from_slice(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Config(format!("selection entry {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// True when no agent is selected.
    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Indices of the selected agents.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Index of the single selected agent, if exactly one is selected.
    pub fn single_index(&self) -> Option<usize> {
        let mut it = self.indices();
        match (it.next(), it.next()) {
            (Some(i), None) => Some(i),
            _ => None,
        }
    }

    /// Bitmask with bit `i` set for selected agent `i`. Valid for `n <= 64`.
    pub fn mask(&self) -> u64 {
        self.indices().fold(0u64, |m, i| m | 1 << i)
    }

    pub fn to_vector<T: Scalar>(&self) -> DVector<T> {
        DVector::from_iterator(self.len(), self.0.iter().map(|&b| if b { T::one() } else { T::zero() }))
    }

    /// `Γᵀ A Γ`: sum of the entries of `a` on selected rows and columns.
    pub fn quad<T: Scalar>(&self, a: &DMatrix<T>) -> T {
        let mut acc = T::zero();
        for i in self.indices() {
            for j in self.indices() {
                acc += a[(i, j)];
            }
        }
        acc
    }

    /// `Γᵀ A`: sum of the selected rows of `a`, as a column vector.
    pub fn row_sum<T: Scalar>(&self, a: &DMatrix<T>) -> DVector<T> {
        let mut acc = DVector::zeros(a.ncols());
        for i in self.indices() {
            acc += a.row(i).transpose();
        }
        acc
    }

    /// `Γᵀ v`.
    pub fn dot<T: Scalar>(&self, v: &DVector<T>) -> T {
        self.indices().fold(T::zero(), |acc, i| acc + v[i])
    }
}

/// Plant `x_{k+1} = W_k x_k` over decision indices `k = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem<T: Scalar> {
    n: usize,
    horizon: usize,
    w: Vec<DMatrix<T>>,
}

impl<T: Scalar> LinearSystem<T> {
    /// Time-varying system; `w` must hold `N + 1` square matrices.
    pub fn new(w: Vec<DMatrix<T>>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::Config("horizon N must be at least 1".into()));
        }
        let n = w[0].nrows();
        if n == 0 {
            return Err(Error::Config("system dimension must be positive".into()));
        }
        for (k, wk) in w.iter().enumerate() {
            if wk.nrows() != n || wk.ncols() != n {
                return Err(Error::Dimension { context: "W_k", expected: n, got: wk.ncols().max(wk.nrows()) });
            }
            if wk.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("W_{k} has non-finite entries")));
            }
        }
        Ok(Self { n, horizon: w.len() - 1, w })
    }

    /// Time-invariant system with `W` replicated over `k = 0..=N`.
    pub fn time_invariant(w: DMatrix<T>, horizon: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Config("horizon N must be at least 1".into()));
        }
        Self::new(vec![w; horizon + 1])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Final decision index `N`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn w(&self, k: usize) -> &DMatrix<T> {
        &self.w[k]
    }

    pub fn matrices(&self) -> &[DMatrix<T>] {
        &self.w
    }

    pub fn is_time_invariant(&self) -> bool {
        self.w.windows(2).all(|p| p[0] == p[1])
    }

    /// Same matrices truncated or extended (by repeating the last one) to a new horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let last = self.w[self.horizon].clone();
        let w = (0..=horizon).map(|k| self.w.get(k).cloned().unwrap_or_else(|| last.clone())).collect();
        Self::new(w)
    }

    /// One attacked step `W_k x + Γ_k θ_k`.
    pub fn step(&self, k: usize, x: &DVector<T>, gamma: &Selection, theta: T) -> Result<DVector<T>> {
        if k > self.horizon {
            return Err(Error::TimeIndex { k, max: self.horizon });
        }
        if x.len() != self.n {
            return Err(Error::Dimension { context: "state", expected: self.n, got: x.len() });
        }
        if gamma.len() != self.n {
            return Err(Error::Dimension { context: "selection", expected: self.n, got: gamma.len() });
        }
        let mut next = &self.w[k] * x;
        for i in gamma.indices() {
            next[i] += theta;
        }
        Ok(next)
    }
}

/// Builds `W = I − εL` from a graph Laplacian, replicated over `k = 0..=N`.
pub fn build_consensus_system<T: Scalar>(laplacian: &DMatrix<T>, epsilon: T, horizon: usize) -> Result<LinearSystem<T>> {
    validate_laplacian(laplacian)?;
    let n = laplacian.nrows();
    let max_degree = (0..n).map(|i| laplacian[(i, i)]).fold(T::zero(), |a, b| a.max(b));
    if epsilon <= T::zero() {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if max_degree > T::zero() && epsilon * max_degree >= T::one() {
        return Err(Error::Config(format!(
            "epsilon {epsilon} must be below 1/max_degree = {}",
            T::one() / max_degree
        )));
    }
    let w = DMatrix::identity(n, n) - laplacian * epsilon;
    LinearSystem::time_invariant(w, horizon)
}

/// Checks squareness, symmetry, zero row sums and nonpositive off-diagonals.
pub fn validate_laplacian<T: Scalar>(l: &DMatrix<T>) -> Result<()> {
    if l.nrows() != l.ncols() {
        return Err(Error::Laplacian(format!("not square ({}x{})", l.nrows(), l.ncols())));
    }
    if l.nrows() == 0 {
        return Err(Error::Laplacian("empty matrix".into()));
    }
    let tol = T::lit(LAPLACIAN_TOL);
    let n = l.nrows();
    for i in 0..n {
        for j in 0..n {
            if !l[(i, j)].is_finite() {
                return Err(Error::Laplacian(format!("non-finite entry at ({i}, {j})")));
            }
            if (l[(i, j)] - l[(j, i)]).abs() > tol {
                return Err(Error::Laplacian(format!("not symmetric at ({i}, {j})")));
            }
            if i != j && l[(i, j)] > tol {
                return Err(Error::Laplacian(format!("positive off-diagonal entry at ({i}, {j})")));
            }
        }
        let row_sum = l.row(i).iter().fold(T::zero(), |a, &b| a + b);
        if row_sum.abs() > tol {
            return Err(Error::Laplacian(format!("row {i} sums to {row_sum}, expected 0")));
        }
    }
    Ok(())
}

/// Cost weights `P_k`, `Q_k` (`k = 0..=N`) and terminal `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightScheme<T: Scalar> {
    p: Vec<DMatrix<T>>,
    q: Vec<DMatrix<T>>,
    h: DMatrix<T>,
}

impl<T: Scalar> WeightScheme<T> {
    pub fn new(p: Vec<DMatrix<T>>, q: Vec<DMatrix<T>>, h: DMatrix<T>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::Dimension { context: "weight sequences", expected: p.len(), got: q.len() });
        }
        let n = h.nrows();
        for (k, m) in p.iter().enumerate() {
            check_spd("P", k, m, n)?;
        }
        for (k, m) in q.iter().enumerate() {
            check_spd("Q", k, m, n)?;
        }
        check_spd("H", 0, &h, n)?;
        Ok(Self { p, q, h })
    }

    /// `P_k = Q_k = H = I` for `k = 0..=N`.
    pub fn identity(n: usize, horizon: usize) -> Self {
        let i = DMatrix::identity(n, n);
        Self { p: vec![i.clone(); horizon + 1], q: vec![i.clone(); horizon + 1], h: i }
    }

    /// Constant `P`, `Q` replicated over `k = 0..=N`.
    pub fn constant(p: DMatrix<T>, q: DMatrix<T>, h: DMatrix<T>, horizon: usize) -> Result<Self> {
        Self::new(vec![p; horizon + 1], vec![q; horizon + 1], h)
    }

    pub fn p(&self, k: usize) -> &DMatrix<T> {
        &self.p[k]
    }

    pub fn q(&self, k: usize) -> &DMatrix<T> {
        &self.q[k]
    }

    pub fn h(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.p.windows(2).all(|w| w[0] == w[1]) && self.q.windows(2).all(|w| w[0] == w[1])
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        let extend = |v: &Vec<DMatrix<T>>| {
            let last = v[v.len() - 1].clone();
            (0..=horizon).map(|k| v.get(k).cloned().unwrap_or_else(|| last.clone())).collect()
        };
        Self { p: extend(&self.p), q: extend(&self.q), h: self.h.clone() }
    }
}

fn check_spd<T: Scalar>(name: &'static str, k: usize, m: &DMatrix<T>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Weight { name, k, reason: format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols()) });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Weight { name, k, reason: "non-finite entry".into() });
    }
    let scale = m.norm().max(T::eps());
    if (m - m.transpose()).norm() > T::lit(SYMMETRY_TOL) * scale {
        return Err(Error::Weight { name, k, reason: "not symmetric".into() });
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Weight { name, k, reason: "not positive definite".into() });
    }
    Ok(())
}

/// Per-step selections `Γ_k` and signals `θ_k`, `k = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackPlan<T: Scalar> {
    pub gamma: Vec<Selection>,
    pub theta: Vec<T>,
}

impl<T: Scalar> AttackPlan<T> {
    pub fn new(gamma: Vec<Selection>, theta: Vec<T>) -> Result<Self> {
        if gamma.len() != theta.len() {
            return Err(Error::Dimension { context: "plan lengths", expected: gamma.len(), got: theta.len() });
        }
        Ok(Self { gamma, theta })
    }

    /// No selection and no signal for `N + 1` steps.
    pub fn zero(n: usize, horizon: usize) -> Self {
        Self { gamma: vec![Selection::none(n); horizon + 1], theta: vec![T::zero(); horizon + 1] }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Constant selection `Γ_k = gamma` over `k = 0..=N`.
pub fn constant_selection(gamma: &Selection, horizon: usize) -> Vec<Selection> {
    vec![gamma.clone(); horizon + 1]
}

/// Initial state, adversary target and the plant with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig<T: Scalar> {
    pub x0: DVector<T>,
    pub x_star: DVector<T>,
    pub system: LinearSystem<T>,
    pub weights: WeightScheme<T>,
}

impl<T: Scalar> ScenarioConfig<T> {
    pub fn new(x0: DVector<T>, x_star: DVector<T>, system: LinearSystem<T>, weights: WeightScheme<T>) -> Result<Self> {
        let n = system.n();
        if x0.len() != n {
            return Err(Error::Dimension { context: "x0", expected: n, got: x0.len() });
        }
        if x_star.len() != n {
            return Err(Error::Dimension { context: "x_star", expected: n, got: x_star.len() });
        }
        if x0.iter().chain(x_star.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 and x_star must be finite".into()));
        }
        if weights.len() != system.horizon() + 1 {
            return Err(Error::Dimension {
                context: "weight horizon",
                expected: system.horizon() + 1,
                got: weights.len(),
            });
        }
        if weights.h().nrows() != n {
            return Err(Error::Dimension { context: "weights", expected: n, got: weights.h().nrows() });
        }
        Ok(Self { x0, x_star, system, weights })
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn horizon(&self) -> usize {
        self.system.horizon()
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(
            self.x0.clone(),
            self.x_star.clone(),
            self.system.with_horizon(horizon)?,
            self.weights.with_horizon(horizon),
        )
    }

    pub fn with_x0(&self, x0: DVector<T>) -> Result<Self> {
        Self::new(x0, self.x_star.clone(), self.system.clone(), self.weights.clone())
    }

    pub fn with_x_star(&self, x_star: DVector<T>) -> Result<Self> {
        Self::new(self.x0.clone(), x_star, self.system.clone(), self.weights.clone())
    }

    pub fn is_time_invariant(&self) -> bool {
        self.system.is_time_invariant() && self.weights.is_time_invariant()
    }
}

/// States `x_0..=x_{N+1}` produced by a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub plan: AttackPlan<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn terminal(&self) -> &DVector<T> {
        &self.states[self.states.len() - 1]
    }
}

/// Objective decomposition: tracking error `J1`, attack energy `J2`, and `J = J1 + J2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective<T> {
    pub j1: T,
    pub j2: T,
    pub j: T,
}

/// Propagates the attacked dynamics from `x0` under `plan`.
pub fn rollout<T: Scalar>(scenario: &ScenarioConfig<T>, plan: &AttackPlan<T>) -> Result<Trajectory<T>> {
    let expected = scenario.horizon() + 1;
    if plan.len() != expected {
        return Err(Error::Dimension { context: "plan length", expected, got: plan.len() });
    }
    let mut states = Vec::with_capacity(expected + 1);
    states.push(scenario.x0.clone());
    for k in 0..expected {
        let next = scenario.system.step(k, &states[k], &plan.gamma[k], plan.theta[k])?;
        states.push(next);
    }
    Ok(Trajectory { states, plan: plan.clone() })
}

/// `‖v‖²_A = vᵀ A v`.
pub fn weighted_sq<T: Scalar>(v: &DVector<T>, a: &DMatrix<T>) -> T {
    (v.transpose() * a * v)[(0, 0)]
}

/// `‖Γ θ‖²_Q = θ² Γᵀ Q Γ`.
pub fn attack_energy<T: Scalar>(gamma: &Selection, theta: T, q: &DMatrix<T>) -> T {
    theta * theta * gamma.quad(q)
}

/// `J1 = Σ_{k=1..N} ‖x_k − x*‖²_{P_k} + ‖x_{N+1} − x*‖²_H`, `J2 = Σ_{k=0..N} ‖Γ_k θ_k‖²_{Q_k}`.
pub fn evaluate_objective<T: Scalar>(scenario: &ScenarioConfig<T>, trajectory: &Trajectory<T>) -> Result<Objective<T>> {
    let horizon = scenario.horizon();
    if trajectory.states.len() != horizon + 2 {
        return Err(Error::Dimension { context: "trajectory states", expected: horizon + 2, got: trajectory.states.len() });
    }
    if trajectory.plan.len() != horizon + 1 {
        return Err(Error::Dimension { context: "trajectory plan", expected: horizon + 1, got: trajectory.plan.len() });
    }
    let n = scenario.n();
    if let Some(bad) = trajectory.states.iter().find(|x| x.len() != n) {
        return Err(Error::Dimension { context: "trajectory state", expected: n, got: bad.len() });
    }
    let w = &scenario.weights;
    let mut j1 = T::zero();
    for k in 1..=horizon {
        j1 += weighted_sq(&(&trajectory.states[k] - &scenario.x_star), w.p(k));
    }
    j1 += weighted_sq(&(&trajectory.states[horizon + 1] - &scenario.x_star), w.h());
    let mut j2 = T::zero();
    for k in 0..=horizon {
        j2 += attack_energy(&trajectory.plan.gamma[k], trajectory.plan.theta[k], w.q(k));
    }
    Ok(Objective { j1, j2, j: j1 + j2 })
}

/// Convenience: rollout followed by objective evaluation.
pub fn plan_objective<T: Scalar>(scenario: &ScenarioConfig<T>, plan: &AttackPlan<T>) -> Result<Objective<T>> {
    let trajectory = rollout(scenario, plan)?;
    evaluate_objective(scenario, &trajectory)
}
