//! Learning-based attack search and comparison baselines.

pub mod baselines;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod solution;
