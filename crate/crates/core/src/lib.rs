//! Optimal sequential false-data-injection attacks on linear consensus networks.
//!
//! An adversary picks, at every step, which agents to compromise (`Γ_k`) and
//! how much signal to inject (`θ_k`) to steer `x_{k+1} = W_k x_k + Γ_k θ_k`
//! towards a target at minimum energy. For a fixed selection sequence the
//! optimal signals come from a backward recursion ([`dp`]); the selection
//! sequence itself is searched with policy-gradient learning and baselines
//! ([`learn`]).
//!
//! The numeric core ([`system`], [`dp`], [`convergence`]) is generic over
//! [`Scalar`] (`f32` or `f64`); the learning stack works in `f64`.
//!
//! ```
//! use seqattack::{builtin, constant_selection, solve_optimal_plan, Scenario64, Selection};
//!
//! let sc: Scenario64 = builtin("linear3").unwrap().build().unwrap();
//! let gamma = constant_selection(&Selection::single(3, 1), sc.horizon());
//! let plan = solve_optimal_plan(&sc, &gamma).unwrap();
//! assert!((plan.objective.j - 36.0239).abs() < 1e-3);
//! ```

pub mod convergence;
pub mod dp;
pub mod env;
pub mod error;
pub mod experiments;
pub mod export;
pub mod learn;
pub mod scalar;
pub mod scenario;
pub mod system;

pub use convergence::{analyze, ConvergenceReport, Threshold, TABLE3_RELATIVE_TOLERANCE};
pub use dp::{optimal_signal, solve_gains, solve_optimal_plan, DpGains, OffsetRecursion, OptimalPlan};
pub use env::{compute_rewards, expected_return, ActionMode, AttackEnv, EpisodeRecord, MdpConfig};
pub use error::{Error, Result};
pub use learn::baselines::{baseline_brute_force, baseline_random, baseline_sampling};
pub use learn::ppo::{train_one_stage, train_two_stage, TrainConfig};
pub use learn::solution::{refine_with_oracle, AttackSolution, Provenance};
pub use scalar::Scalar;
pub use scenario::{builtin, ScenarioFile};
pub use system::{
    constant_selection, evaluate_objective, rollout, AttackPlan, LinearSystem, Objective, ScenarioConfig, Selection,
    Trajectory, WeightScheme,
};

pub type Scenario64 = ScenarioConfig<f64>;
pub type Scenario32 = ScenarioConfig<f32>;
pub type System64 = LinearSystem<f64>;
pub type System32 = LinearSystem<f32>;
pub type Gains64 = DpGains<f64>;
pub type Gains32 = DpGains<f32>;
pub type Plan64 = AttackPlan<f64>;
pub type Plan32 = AttackPlan<f32>;
pub type Trajectory64 = Trajectory<f64>;
pub type Trajectory32 = Trajectory<f32>;
