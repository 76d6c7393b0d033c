//! Empirical settling of the backward gain sequences.
//!
//! With a time-invariant plant, weights and selection, `K_k` and `F_k` settle
//! to a steady state as `k` decreases away from the horizon. This module
//! measures the error series against the most-settled iterates (`K* = K_1`,
//! `F* = F_0`) and reports the longest prefix window on which the error is
//! below a threshold. Everything here is post-processing over [`DpGains`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dp::{solve_gains, DpGains};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::system::{constant_selection, ScenarioConfig, Selection};

/// Relative threshold reproducing the published settling windows for the
/// linear 3-agent network with `Γ ≡ e1`. See [`calibrate_threshold`].
pub const TABLE3_RELATIVE_TOLERANCE: f64 = 0.01839;

/// Window threshold on the error series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Threshold<T> {
    /// Error must be below this value.
    Absolute(T),
    /// Error must be below this fraction of `‖K*‖_F` (resp. `‖F*‖`).
    Relative(T),
}

impl<T: Scalar> Threshold<T> {
    fn value(&self) -> T {
        match *self {
            Self::Absolute(v) | Self::Relative(v) => v,
        }
    }

    fn bound(&self, scale: T) -> T {
        match *self {
            Self::Absolute(v) => v,
            Self::Relative(v) => v * scale,
        }
    }
}

/// Inclusive index window `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport<T: Scalar> {
    pub horizon: usize,
    pub k_star: DMatrix<T>,
    pub f_star: DVector<T>,
    /// `‖K_k − K*‖_F` for `k = 0..=N`.
    pub k_error: Vec<T>,
    /// `‖F_k − F*‖` for `k = 0..=N`.
    pub f_error: Vec<T>,
    /// Settled window of `K_k`, starting at 1.
    pub k_window: Window,
    /// Settled window of `F_k`, starting at 0.
    pub f_window: Window,
    pub threshold: Threshold<T>,
    pub k_bound: T,
    pub f_bound: T,
}

impl<T: Scalar> ConvergenceReport<T> {
    /// Backward steps from the horizon to the end of the K window.
    pub fn k_settling_steps(&self) -> usize {
        self.horizon - self.k_window.end
    }

    pub fn f_settling_steps(&self) -> usize {
        self.horizon - self.f_window.end
    }
}

/// Longest prefix of `errors[start..]` strictly below `bound`.
fn prefix_window<T: Scalar>(errors: &[T], start: usize, bound: T) -> Window {
    let mut end = start;
    for (k, e) in errors.iter().enumerate().skip(start) {
        if *e < bound {
            end = k;
        } else {
            break;
        }
    }
    Window { start, end }
}

pub fn analyze<T: Scalar>(gains: &DpGains<T>, threshold: Threshold<T>) -> Result<ConvergenceReport<T>> {
    if !gains.stationary {
        return Err(Error::Config(
            "settling analysis needs a time-invariant plant, weights and selection".into(),
        ));
    }
    if threshold.value() <= T::zero() {
        return Err(Error::Config("threshold must be positive".into()));
    }
    let horizon = gains.horizon();
    let k_star = gains.k[1].clone();
    let f_star = gains.f[0].clone();
    let k_error: Vec<T> = gains.k[..=horizon].iter().map(|k| (k - &k_star).norm()).collect();
    let f_error: Vec<T> = gains.f.iter().map(|f| (f - &f_star).norm()).collect();
    let k_bound = threshold.bound(k_star.norm());
    let f_bound = threshold.bound(f_star.norm());
    let k_window = prefix_window(&k_error, 1, k_bound);
    let f_window = prefix_window(&f_error, 0, f_bound);
    Ok(ConvergenceReport { horizon, k_star, f_star, k_error, f_error, k_window, f_window, threshold, k_bound, f_bound })
}

/// Feasible open-closed interval of relative thresholds and its geometric midpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Calibration<T> {
    pub lower: T,
    pub upper: T,
    pub chosen: T,
}

/// Relative threshold that makes the K window end at `k_end` and the F window
/// end at `f_end` on `gains`.
///
/// The window end is monotone in the threshold, so the feasible set for each
/// series is an interval `(max error on the window, error just past it]`. The
/// two intervals are intersected and the geometric midpoint is returned.
pub fn calibrate_threshold<T: Scalar>(gains: &DpGains<T>, k_end: usize, f_end: usize) -> Result<Calibration<T>> {
    let probe = analyze(gains, Threshold::Relative(T::one()))?;
    let horizon = probe.horizon;
    if k_end >= horizon || f_end >= horizon || k_end < 1 {
        return Err(Error::Config(format!("window ends {k_end}/{f_end} must lie in 1..{horizon}")));
    }
    let k_scale = probe.k_star.norm();
    let f_scale = probe.f_star.norm();
    let interval = |errors: &[T], start: usize, end: usize, scale: T| {
        let lo = errors[start..=end].iter().fold(T::zero(), |a, &b| a.max(b)) / scale;
        let hi = errors[end + 1] / scale;
        (lo, hi)
    };
    let (k_lo, k_hi) = interval(&probe.k_error, 1, k_end, k_scale);
    let (f_lo, f_hi) = interval(&probe.f_error, 0, f_end, f_scale);
    let lower = k_lo.max(f_lo);
    let upper = k_hi.min(f_hi);
    if lower >= upper {
        return Err(Error::Config(format!(
            "no single relative threshold gives K window end {k_end} and F window end {f_end}: \
             K needs ({k_lo}, {k_hi}], F needs ({f_lo}, {f_hi}]"
        )));
    }
    Ok(Calibration { lower, upper, chosen: (lower * upper).sqrt() })
}

/// `‖K*(N1) − K*(N2)‖_F` for a constant selection.
pub fn steady_state_invariance<T: Scalar>(
    scenario: &ScenarioConfig<T>,
    gamma: &Selection,
    n1: usize,
    n2: usize,
) -> Result<T> {
    let k1 = {
        let sc = scenario.with_horizon(n1)?;
        solve_gains(&sc, &constant_selection(gamma, n1))?.k[1].clone()
    };
    let k2 = {
        let sc = scenario.with_horizon(n2)?;
        solve_gains(&sc, &constant_selection(gamma, n2))?.k[1].clone()
    };
    Ok((k1 - k2).norm())
}

/// Error series for one single-agent selection.
#[derive(Clone, Debug)]
pub struct SymmetryProbe<T: Scalar> {
    pub agent: usize,
    pub report: ConvergenceReport<T>,
}

/// Runs [`analyze`] for every single-agent constant selection.
pub fn topology_symmetry_probe<T: Scalar>(
    scenario: &ScenarioConfig<T>,
    threshold: Threshold<T>,
) -> Result<Vec<SymmetryProbe<T>>> {
    let n = scenario.n();
    let horizon = scenario.horizon();
    (0..n)
        .map(|agent| {
            let gains = solve_gains(scenario, &constant_selection(&Selection::single(n, agent), horizon))?;
            Ok(SymmetryProbe { agent, report: analyze(&gains, threshold)? })
        })
        .collect()
}

/// Largest elementwise difference between two probes' K and F error series.
pub fn series_gap<T: Scalar>(a: &ConvergenceReport<T>, b: &ConvergenceReport<T>) -> T {
    let gap = |x: &[T], y: &[T]| x.iter().zip(y).fold(T::zero(), |m, (p, q)| m.max((*p - *q).abs()));
    gap(&a.k_error, &b.k_error).max(gap(&a.f_error, &b.f_error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{build_consensus_system, LinearSystem, WeightScheme};
    use nalgebra::{dmatrix, dvector};

    fn linear3(horizon: usize) -> ScenarioConfig<f64> {
        let l = dmatrix![1.0, -1.0, 0.0; -1.0, 2.0, -1.0; 0.0, -1.0, 1.0];
        let sys = build_consensus_system(&l, 0.2, horizon).unwrap();
        ScenarioConfig::new(dvector![-1.0, 12.0, -5.0], DVector::zeros(3), sys, WeightScheme::identity(3, horizon))
            .unwrap()
    }

    #[test]
    fn windows_are_prefixes() {
        let sc = linear3(50);
        let g = solve_gains(&sc, &constant_selection(&Selection::single(3, 0), 50)).unwrap();
        let rep = analyze(&g, Threshold::Relative(TABLE3_RELATIVE_TOLERANCE)).unwrap();
        assert_eq!(rep.k_error[1], 0.0);
        assert_eq!(rep.f_error[0], 0.0);
        assert!(rep.k_error.iter().all(|&e| e >= 0.0));
        for k in 1..=rep.k_window.end {
            assert!(rep.k_error[k] < rep.k_bound);
        }
        assert!(rep.k_error[rep.k_window.end + 1] >= rep.k_bound);
    }

    #[test]
    fn table3_n50_windows() {
        let sc = linear3(50);
        let g = solve_gains(&sc, &constant_selection(&Selection::single(3, 0), 50)).unwrap();
        let rep = analyze(&g, Threshold::Relative(TABLE3_RELATIVE_TOLERANCE)).unwrap();
        assert_eq!(rep.k_window, Window { start: 1, end: 35 });
        assert_eq!(rep.f_window.end, 36);
    }

    #[test]
    fn calibration_contains_constant() {
        let sc = linear3(50);
        let g = solve_gains(&sc, &constant_selection(&Selection::single(3, 0), 50)).unwrap();
        let cal = calibrate_threshold(&g, 35, 36).unwrap();
        assert!(cal.lower < TABLE3_RELATIVE_TOLERANCE && TABLE3_RELATIVE_TOLERANCE <= cal.upper, "{cal:?}");
        let rep = analyze(&g, Threshold::Relative(cal.chosen)).unwrap();
        assert_eq!((rep.k_window.end, rep.f_window.end), (35, 36));
    }

    #[test]
    fn time_varying_rejected() {
        let sc = linear3(10);
        let mut gammas = constant_selection(&Selection::single(3, 0), 10);
        gammas[3] = Selection::single(3, 1);
        let g = solve_gains(&sc, &gammas).unwrap();
        assert!(analyze(&g, Threshold::Absolute(0.1)).is_err());
    }

    #[test]
    fn invariance_of_steady_state() {
        let sc = linear3(50);
        let g = Selection::single(3, 0);
        assert_eq!(steady_state_invariance(&sc, &g, 50, 50).unwrap(), 0.0);
        // the slow mode of the linear network leaves K_1 about 1.7e-5 from its limit at N = 50
        let d = steady_state_invariance(&sc, &g, 50, 100).unwrap();
        assert!((d - 1.694e-5).abs() < 1e-7, "{d}");
        assert!(steady_state_invariance(&sc, &g, 200, 400).unwrap() < 1e-8);
    }

    #[test]
    fn invariance_circle_network() {
        let l = dmatrix![2.0, -1.0, -1.0; -1.0, 2.0, -1.0; -1.0, -1.0, 2.0];
        let sys = build_consensus_system(&l, 0.2, 50).unwrap();
        let sc = ScenarioConfig::new(dvector![-1.0, 12.0, -5.0], DVector::zeros(3), sys, WeightScheme::identity(3, 50))
            .unwrap();
        assert!(steady_state_invariance(&sc, &Selection::single(3, 1), 50, 200).unwrap() < 1e-8);
    }

    #[test]
    fn no_attack_converges_to_lyapunov_fixed_point() {
        // stable plant: scaled consensus matrix
        let l = dmatrix![1.0, -1.0, 0.0; -1.0, 2.0, -1.0; 0.0, -1.0, 1.0];
        let w = (DMatrix::identity(3, 3) - l * 0.2) * 0.9;
        let horizon = 200;
        let sys = LinearSystem::time_invariant(w.clone(), horizon).unwrap();
        let sc = ScenarioConfig::new(DVector::zeros(3), DVector::zeros(3), sys, WeightScheme::identity(3, horizon))
            .unwrap();
        let g = solve_gains(&sc, &constant_selection(&Selection::none(3), horizon)).unwrap();
        let rep = analyze(&g, Threshold::Absolute(1e-9)).unwrap();
        // fixed point K = I + WᵀKW by plain iteration, independent of the sweep
        let mut k = DMatrix::<f64>::identity(3, 3);
        for _ in 0..2000 {
            k = DMatrix::identity(3, 3) + w.transpose() * &k * &w;
        }
        assert!((&rep.k_star - &k).norm() < 1e-9 * k.norm());
    }

    #[test]
    fn single_agent_probe() {
        let sys = LinearSystem::time_invariant(dmatrix![0.5], 30).unwrap();
        let sc = ScenarioConfig::new(dvector![1.0], dvector![0.0], sys, WeightScheme::identity(1, 30)).unwrap();
        let probes = topology_symmetry_probe(&sc, Threshold::Absolute(1e-6)).unwrap();
        assert_eq!(probes.len(), 1);
        assert_eq!(probes[0].report.k_error.len(), 31);
    }
}
