//! Simulation library for tabular episodic MDPs with gap-dependent regret
//! experiments.
//!
//! The crate is organized around five pieces:
//!
//! - [`mdp`] — layered finite-horizon MDPs, episode sampling, validation;
//! - [`solve`] — exact solutions (V*, Q*, gaps) by backward induction and
//!   exact policy evaluation;
//! - [`instances`] — hard-instance generators (two-level spoke instance,
//!   binary-tree bandit family, random layered MDPs) and Bernoulli KL
//!   utilities;
//! - [`amb`] — the adaptive multi-step bootstrap learner: upper/lower
//!   confidence bounds, widest-confidence-interval action selection, and
//!   action elimination;
//! - [`ucb`] — an optimistic Q-learning baseline sharing the same learning
//!   rate and bonus;
//! - [`harness`] / [`report`] — experiment cells, exact per-episode regret,
//!   aggregation, log-regret fits, and CSV/JSON export.
//!
//! Everything is deterministic given a seed; independent runs never share
//! mutable state and may execute concurrently.

pub mod amb;
pub mod harness;
pub mod instances;
pub mod io;
pub mod mdp;
pub mod report;
pub mod solve;
pub mod ucb;

pub use amb::{alpha_weights, bonus, clip, learning_rate, AmbConfig, AmbState};
pub use harness::{run_cell, Algorithm, EnvSpec, ExperimentConfig, RegretSeries};
pub use mdp::{sample_episode, DeterministicPolicy, MdpDef, SampleStreams, TabularMdp, Trajectory};
pub use solve::{backward_induction, evaluate_policy, policy_value, ExactSolution};
pub use ucb::UcbState;
