#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use seqattack::system::build_consensus_system;
use seqattack::{ScenarioConfig, Selection, WeightScheme};

/// Connected random graph Laplacian: a spanning path plus random extra edges.
pub fn random_laplacian(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let add = |l: &mut DMatrix<f64>, i: usize, j: usize, w: f64| {
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    };
    for i in 1..n {
        let j = rng.gen_range(0..i);
        add(&mut l, i, j, 1.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            if l[(i, j)] == 0.0 && rng.gen_bool(0.3) {
                add(&mut l, i, j, 1.0);
            }
        }
    }
    l
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    a.transpose() * a + DMatrix::identity(n, n) * rng.gen_range(0.2..1.5)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Random consensus scenario with random SPD weights.
pub fn random_scenario(rng: &mut ChaCha8Rng, n: usize, horizon: usize, zero_target: bool) -> ScenarioConfig<f64> {
    let l = random_laplacian(rng, n);
    let max_deg = (0..n).map(|i| l[(i, i)]).fold(1.0, f64::max);
    let eps = rng.gen_range(0.05..0.9) / max_deg;
    let sys = build_consensus_system(&l, eps, horizon).unwrap();
    let weights = WeightScheme::constant(random_spd(rng, n), random_spd(rng, n), random_spd(rng, n), horizon).unwrap();
    let x_star = if zero_target { DVector::zeros(n) } else { random_vector(rng, n, 5.0) };
    ScenarioConfig::new(random_vector(rng, n, 10.0), x_star, sys, weights).unwrap()
}

/// Per-step selections; zero selections only when `allow_zero`.
pub fn random_gamma(rng: &mut ChaCha8Rng, n: usize, horizon: usize, allow_zero: bool) -> Vec<Selection> {
    (0..=horizon)
        .map(|_| loop {
            let s = Selection::new((0..n).map(|_| rng.gen_bool(0.5)).collect());
            if allow_zero || !s.is_zero() {
                break s;
            }
        })
        .collect()
}

/// Finite-horizon LQR with input matrix `Γ_k` and input weight `Γ_kᵀ Q_k Γ_k`,
/// written from the textbook Riccati recursion. Returns `(u_k, J)` for `x* = 0`.
pub fn lqr_reference(sc: &ScenarioConfig<f64>, gamma: &[Selection]) -> (Vec<f64>, f64) {
    let horizon = sc.horizon();
    let n = sc.n();
    let mut s = sc.weights.h().clone();
    let mut gains: Vec<Option<DMatrix<f64>>> = vec![None; horizon + 1];
    for k in (0..=horizon).rev() {
        let a = sc.system.w(k);
        let b = DMatrix::from_fn(n, 1, |i, _| if gamma[k].bits()[i] { 1.0 } else { 0.0 });
        let r = b.transpose() * sc.weights.q(k) * &b;
        let mut next = a.transpose() * &s * a;
        if !gamma[k].is_zero() {
            let inv = (&r + b.transpose() * &s * &b).try_inverse().unwrap();
            let g = &inv * b.transpose() * &s * a;
            next -= a.transpose() * &s * &b * &g;
            gains[k] = Some(g);
        }
        s = if k >= 1 { sc.weights.p(k) + next } else { next };
        s = (&s + s.transpose()) * 0.5;
    }
    let mut x = sc.x0.clone();
    let mut u = Vec::with_capacity(horizon + 1);
    let mut cost = 0.0;
    for k in 0..=horizon {
        let b = DVector::from_fn(n, |i, _| if gamma[k].bits()[i] { 1.0 } else { 0.0 });
        let uk = gains[k].as_ref().map_or(0.0, |g| -(g * &x)[(0, 0)]);
        cost += uk * uk * (b.transpose() * sc.weights.q(k) * &b)[(0, 0)];
        x = sc.system.w(k) * &x + b * uk;
        let weight = if k == horizon { sc.weights.h() } else { sc.weights.p(k + 1) };
        cost += (x.transpose() * weight * &x)[(0, 0)];
        u.push(uk);
    }
    (u, cost)
}

/// Exact minimum of `f` over the grid `{lo + i·step}^dim`, for a convex quadratic `f`.
///
/// The quadratic is recovered from point evaluations of `f`, then searched by
/// branch and bound: fixing a prefix of coordinates, the unconstrained minimum
/// over the remaining ones is a lower bound for every grid completion.
pub struct GridOracle {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

pub struct GridResult {
    pub theta: Vec<f64>,
    pub value: f64,
    /// Largest eigenvalue of `A` in `f(θ) = θᵀAθ + gᵀθ + c`.
    pub curvature: f64,
}

impl GridOracle {
    pub fn minimize(&self, f: impl Fn(&[f64]) -> f64, dim: usize) -> GridResult {
        let zero = vec![0.0; dim];
        let c = f(&zero);
        let unit = |i: usize, s: f64| {
            let mut v = zero.clone();
            v[i] = s;
            v
        };
        let plus: Vec<f64> = (0..dim).map(|i| f(&unit(i, 1.0))).collect();
        let minus: Vec<f64> = (0..dim).map(|i| f(&unit(i, -1.0))).collect();
        let g = DVector::from_fn(dim, |i, _| (plus[i] - minus[i]) / 2.0);
        let mut a = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            a[(i, i)] = (plus[i] + minus[i] - 2.0 * c) / 2.0;
            for j in i + 1..dim {
                let mut v = zero.clone();
                v[i] = 1.0;
                v[j] = 1.0;
                let aij = (f(&v) - plus[i] - plus[j] + c) / 2.0;
                a[(i, j)] = aij;
                a[(j, i)] = aij;
            }
        }
        let curvature = a.symmetric_eigenvalues().max();
        let model = |t: &[f64]| {
            let v = DVector::from_column_slice(t);
            (v.transpose() * &a * &v)[(0, 0)] + g.dot(&v) + c
        };
        let count = ((self.hi - self.lo) / self.step).round() as i64;
        let mut best = (f64::INFINITY, vec![0.0; dim]);
        let mut prefix = Vec::with_capacity(dim);
        self.search(&a, &g, c, count, &mut prefix, dim, &mut best, &model);
        let value = f(&best.1);
        GridResult { theta: best.1, value, curvature }
    }

    /// Unconstrained minimum over coordinates `prefix.len()..dim` with the prefix fixed.
    fn bound(a: &DMatrix<f64>, g: &DVector<f64>, c: f64, prefix: &[f64], dim: usize) -> f64 {
        let p = prefix.len();
        let fixed = DVector::from_column_slice(prefix);
        let a_pp = a.view((0, 0), (p, p));
        let base = (fixed.transpose() * a_pp * &fixed)[(0, 0)] + g.rows(0, p).dot(&fixed) + c;
        if p == dim {
            return base;
        }
        let r = dim - p;
        let a_rr = a.view((p, p), (r, r)).clone_owned();
        let h = g.rows(p, r) + a.view((p, 0), (r, p)) * &fixed * 2.0;
        let sol = a_rr.cholesky().expect("positive definite").solve(&h);
        base - 0.25 * h.dot(&sol)
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        a: &DMatrix<f64>,
        g: &DVector<f64>,
        c: f64,
        count: i64,
        prefix: &mut Vec<f64>,
        dim: usize,
        best: &mut (f64, Vec<f64>),
        model: &dyn Fn(&[f64]) -> f64,
    ) {
        if prefix.len() == dim {
            let v = model(prefix);
            if v < best.0 {
                *best = (v, prefix.clone());
            }
            return;
        }
        let probe = |x: f64, prefix: &mut Vec<f64>| {
            prefix.push(x);
            let b = Self::bound(a, g, c, prefix, dim);
            prefix.pop();
            b
        };
        // The bound is quadratic in the next coordinate; start at its minimizer.
        let (b0, b1, bm) = (probe(0.0, prefix), probe(1.0, prefix), probe(-1.0, prefix));
        let curv = (b1 + bm - 2.0 * b0) / 2.0;
        let slope = (b1 - bm) / 2.0;
        let center = -slope / (2.0 * curv);
        let start = (((center - self.lo) / self.step).round() as i64).clamp(0, count);
        let value_at = |i: i64| self.lo + i as f64 * self.step;
        for dir in [1i64, -1] {
            let mut i = if dir == 1 { start } else { start - 1 };
            while (0..=count).contains(&i) {
                let x = value_at(i);
                let b = probe(x, prefix);
                if b >= best.0 {
                    break;
                }
                prefix.push(x);
                self.search(a, g, c, count, prefix, dim, best, model);
                prefix.pop();
                i += dir;
            }
        }
    }
}
