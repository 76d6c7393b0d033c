use serde::{Deserialize, Serialize};

use crate::dp::solve_optimal_plan;
use crate::error::{Error, Result};
use crate::system::{plan_objective, AttackPlan, Objective, ScenarioConfig, Selection};

/// Which procedure produced a solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    OneStage,
    TwoStage,
    Random,
    Sampling,
    BruteForce,
    /// A given selection sequence paired with its optimal signals.
    Refined,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Self::OneStage => "one-stage",
            Self::TwoStage => "two-stage",
            Self::Random => "random",
            Self::Sampling => "sampling",
            Self::BruteForce => "brute-force",
            Self::Refined => "refined",
        }
    }
}

/// Settings needed to rerun whatever produced a solution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub phi: Option<f64>,
    pub delta: Option<f64>,
    pub t_r: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSolution {
    pub gamma_seq: Vec<Selection>,
    pub theta_seq: Vec<f64>,
    pub objective: Objective<f64>,
    pub j: f64,
    pub provenance: Provenance,
    pub samples_used: u64,
    pub meta: RunMeta,
}

impl AttackSolution {
    /// Rolls the plan out and records its objective.
    pub fn new(scenario: &ScenarioConfig<f64>, plan: AttackPlan<f64>, provenance: Provenance, samples_used: u64) -> Result<Self> {
        let objective = plan_objective(scenario, &plan)?;
        Ok(Self {
            gamma_seq: plan.gamma,
            theta_seq: plan.theta,
            objective,
            j: objective.j,
            provenance,
            samples_used,
            meta: RunMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: RunMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn plan(&self) -> AttackPlan<f64> {
        AttackPlan { gamma: self.gamma_seq.clone(), theta: self.theta_seq.clone() }
    }

    /// Recomputes `J` from a fresh rollout and compares with the stored value.
    pub fn verify(&self, scenario: &ScenarioConfig<f64>) -> Result<()> {
        let j = plan_objective(scenario, &self.plan())?.j;
        if (j - self.j).abs() > 1e-9 * j.abs().max(1.0) {
            return Err(Error::Config(format!("stored J {} disagrees with rollout J {j}", self.j)));
        }
        Ok(())
    }
}

/// Pairs `gamma_seq` with its optimal signals.
pub fn refine_with_oracle(gamma_seq: &[Selection], scenario: &ScenarioConfig<f64>) -> Result<AttackSolution> {
    let opt = solve_optimal_plan(scenario, gamma_seq)?;
    AttackSolution::new(scenario, opt.plan, Provenance::Refined, 0)
}
