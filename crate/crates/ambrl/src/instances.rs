//! Hard-instance generators and Bernoulli KL utilities.
//!
//! Two constructions drive the experiments:
//!
//! - [`sj_hard_instance`]: a two-level spoke instance with one decision state
//!   that makes purely optimistic learners over-explore a whole level of
//!   states. Reaching the good arm at `s2` pays `1/2 + Δ_min`; the bad arm at
//!   `s1` spreads over `s3..sn`, each worth `1/2`, so telling the arms apart
//!   within `Δ_min` requires tight value estimates at all of them.
//! - [`tree_lower_bound_base`] / [`tree_lower_bound_perturbed`]: a complete
//!   binary tree that simulates a multi-armed bandit with `S·A` arms. Only
//!   the pair `(x1, a1)` pays `1/2 + γ`; the perturbed variants raise one
//!   other leaf pair to `1/2 + 2γ` and are distinguishable from the base only
//!   through that pair.
//!
//! [`random_layered_mdp`] generates seeded random test instances, optionally
//! resampled until the solved instance has a required minimal gap and unique
//! optimal actions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::mdp::{uniform_row, MdpDef, MdpError, TabularMdp};
use crate::solve::{backward_induction, GAP_TOL};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid instance spec: {0}")]
    Spec(String),
    #[error(
        "resample budget exhausted after {attempts} rounds \
         (best min gap {best_min_gap:.6}, needed {needed})"
    )]
    ResampleBudget {
        attempts: usize,
        best_min_gap: f64,
        needed: f64,
    },
    #[error("invalid perturbation target: {0}")]
    Perturbation(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Spec for the two-level spoke instance: `n` states total, horizon 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SjInstanceSpec {
    pub n: usize,
    pub delta_min: f64,
}

/// Spec for the binary-tree bandit family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeInstanceSpec {
    /// Number of leaves; must be a power of two >= 2. Total states `2n - 1`,
    /// horizon `log2(n) + 1`.
    pub num_leaves: usize,
    /// Action count at the last level (internal states always have 2).
    pub last_level_actions: usize,
    pub gamma: f64,
}

/// Builds the two-level spoke instance.
///
/// Level 1 is `{s1}`, level 2 is `{s2, ..., sn}`, two actions everywhere.
/// `(s1, a1)` moves to `s2` deterministically; `(s1, a2)` moves uniformly
/// over `{s3, ..., sn}`. Level-1 rewards are 0; at level 2 the means are
/// `(s2, a1) = 1/2 + delta_min`, `(s_i, a1) = 1/2` for `i >= 3`, and 0 for
/// every `a2`. Solved gaps: `Δ(s1,a2) = delta_min`, `Δ(s2,a2) = 1/2 +
/// delta_min`, `Δ(s_i,a2) = 1/2`.
pub fn sj_hard_instance(spec: &SjInstanceSpec) -> Result<TabularMdp, InstanceError> {
    if spec.n < 3 {
        return Err(InstanceError::Spec(format!("need n >= 3, got {}", spec.n)));
    }
    if !(spec.delta_min > 0.0 && spec.delta_min < 0.125) {
        return Err(InstanceError::Spec(format!(
            "delta_min must lie in (0, 1/8), got {}",
            spec.delta_min
        )));
    }

    let names: Vec<String> = (1..=spec.n).map(|i| format!("s{i}")).collect();
    let spokes: Vec<String> = names[2..].to_vec();

    let mut rewards = BTreeMap::new();
    rewards.insert("s1".to_string(), vec![0.0, 0.0]);
    rewards.insert("s2".to_string(), vec![0.5 + spec.delta_min, 0.0]);
    for name in &spokes {
        rewards.insert(name.clone(), vec![0.5, 0.0]);
    }

    let mut transitions = BTreeMap::new();
    transitions.insert(
        "s1".to_string(),
        vec![vec![("s2".to_string(), 1.0)], uniform_row(&spokes)],
    );

    let def = MdpDef {
        horizon: 2,
        levels: vec![vec!["s1".to_string()], names[1..].to_vec()],
        rewards,
        transitions,
        initial: vec![("s1".to_string(), 1.0)],
    };
    Ok(TabularMdp::from_def(&def)?)
}

fn is_power_of_two(n: usize) -> bool {
    n >= 1 && n & (n - 1) == 0
}

/// Builds the base binary-tree instance `M`.
///
/// Internal states have two actions with deterministic child transitions and
/// reward mean 0; the `n` leaves (`x1..xn`, left to right) have
/// `last_level_actions` actions. Only `(x1, a1)` has mean `1/2 + gamma`;
/// every other leaf action has mean `1/2`.
pub fn tree_lower_bound_base(spec: &TreeInstanceSpec) -> Result<TabularMdp, InstanceError> {
    if spec.num_leaves < 2 || !is_power_of_two(spec.num_leaves) {
        return Err(InstanceError::Spec(format!(
            "num_leaves must be a power of two >= 2, got {}",
            spec.num_leaves
        )));
    }
    if spec.last_level_actions < 2 {
        return Err(InstanceError::Spec(format!(
            "need at least 2 last-level actions, got {}",
            spec.last_level_actions
        )));
    }
    if !(spec.gamma > 0.0 && spec.gamma <= 0.125) {
        return Err(InstanceError::Spec(format!(
            "gamma must lie in (0, 1/8], got {}",
            spec.gamma
        )));
    }

    let n = spec.num_leaves;
    let horizon = n.trailing_zeros() as usize + 1;
    let node_name = |h: usize, i: usize| -> String {
        if h + 1 == horizon {
            format!("x{i}")
        } else {
            format!("n{}_{i}", h + 1)
        }
    };

    let mut levels = Vec::with_capacity(horizon);
    for h in 0..horizon {
        levels.push((1..=(1usize << h)).map(|i| node_name(h, i)).collect::<Vec<_>>());
    }

    let mut rewards = BTreeMap::new();
    let mut transitions = BTreeMap::new();
    for h in 0..horizon {
        for i in 1..=(1usize << h) {
            let name = node_name(h, i);
            if h + 1 == horizon {
                let mut means = vec![0.5; spec.last_level_actions];
                if i == 1 {
                    means[0] = 0.5 + spec.gamma;
                }
                rewards.insert(name, means);
            } else {
                rewards.insert(name.clone(), vec![0.0, 0.0]);
                transitions.insert(
                    name,
                    vec![
                        vec![(node_name(h + 1, 2 * i - 1), 1.0)],
                        vec![(node_name(h + 1, 2 * i), 1.0)],
                    ],
                );
            }
        }
    }

    let def = MdpDef {
        horizon,
        levels,
        rewards,
        transitions,
        initial: vec![(node_name(0, 1), 1.0)],
    };
    Ok(TabularMdp::from_def(&def)?)
}

/// Builds the perturbed instance `M_{i,j}`: identical to `base` except the
/// last-level pair `(x_i, a_j)` has reward mean `1/2 + 2·gamma`. Indices are
/// 1-based; `leaf` must be in `2..=n` and `action` in `1..=A`, so the base's
/// optimal pair `(x1, a1)` can never be the target.
pub fn tree_lower_bound_perturbed(
    base: &TabularMdp,
    leaf: usize,
    action: usize,
    gamma: f64,
) -> Result<TabularMdp, InstanceError> {
    let leaves = base.states_at(base.horizon() - 1).len();
    if leaf < 2 || leaf > leaves {
        return Err(InstanceError::Perturbation(format!(
            "leaf index must be in 2..={leaves}, got {leaf}"
        )));
    }
    let name = format!("x{leaf}");
    let state = base
        .state_id(&name)
        .ok_or_else(|| InstanceError::Perturbation(format!("no leaf named '{name}' in base")))?;
    let actions = base.num_actions(state);
    if action < 1 || action > actions {
        return Err(InstanceError::Perturbation(format!(
            "action index must be in 1..={actions}, got {action}"
        )));
    }

    let mut def = base.to_def();
    def.rewards.get_mut(&name).expect("leaf has rewards")[action - 1] = 0.5 + 2.0 * gamma;
    Ok(TabularMdp::from_def(&def)?)
}

/// Default number of repair rounds for [`random_layered_mdp`].
pub const DEFAULT_RESAMPLE_BUDGET: usize = 500;

/// Generates a seeded random layered MDP: Dirichlet-like transition rows
/// (normalized exponential weights over the full next level) and uniform
/// reward means.
///
/// With `min_gap` set, the instance is resampled until backward induction
/// certifies a global minimal gap of at least `min_gap` with a unique optimal
/// action at every state. Resampling redraws the reward rows of the states
/// that still violate the target, one round at a time, so the loop converges
/// even when a joint redraw would almost never succeed.
pub fn random_layered_mdp(
    levels: &[usize],
    actions: usize,
    seed: u64,
    min_gap: Option<f64>,
) -> Result<TabularMdp, InstanceError> {
    random_layered_mdp_with_budget(levels, actions, seed, min_gap, DEFAULT_RESAMPLE_BUDGET)
}

/// As [`random_layered_mdp`] with an explicit resample budget.
pub fn random_layered_mdp_with_budget(
    levels: &[usize],
    actions: usize,
    seed: u64,
    min_gap: Option<f64>,
    budget: usize,
) -> Result<TabularMdp, InstanceError> {
    if levels.is_empty() || levels.contains(&0) {
        return Err(InstanceError::Spec(
            "every level needs a positive state count".into(),
        ));
    }
    if actions < 2 {
        return Err(InstanceError::Spec(format!(
            "need at least 2 actions, got {actions}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = levels.len();
    let name = |h: usize, i: usize| format!("s{}_{i}", h + 1);

    let level_names: Vec<Vec<String>> = levels
        .iter()
        .enumerate()
        .map(|(h, &count)| (0..count).map(|i| name(h, i)).collect())
        .collect();

    let mut dirichlet_row = |targets: &[String]| -> Vec<(String, f64)> {
        let weights: Vec<f64> = targets
            .iter()
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = weights.iter().sum();
        targets
            .iter()
            .zip(weights)
            .map(|(t, w)| (t.clone(), w / total))
            .collect()
    };

    let mut rewards = BTreeMap::new();
    let mut transitions = BTreeMap::new();
    let mut reward_row = |rng: &mut ChaCha8Rng| (0..actions).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>();
    for h in 0..horizon {
        for state in &level_names[h] {
            if h + 1 < horizon {
                transitions.insert(
                    state.clone(),
                    (0..actions).map(|_| dirichlet_row(&level_names[h + 1])).collect(),
                );
            }
        }
    }
    for h in 0..horizon {
        for state in &level_names[h] {
            rewards.insert(state.clone(), reward_row(&mut rng));
        }
    }

    let mut def = MdpDef {
        horizon,
        levels: level_names.clone(),
        rewards,
        transitions,
        initial: dirichlet_row(&level_names[0]),
    };

    let Some(needed) = min_gap else {
        return Ok(TabularMdp::from_def(&def)?);
    };

    let mut best_min_gap = 0.0f64;
    for _ in 0..budget {
        let mdp = TabularMdp::from_def(&def)?;
        let sol = backward_induction(&mdp);
        let mut offenders = Vec::new();
        for s in 0..mdp.num_states() {
            let optimal = (0..actions).filter(|&a| sol.gap(s, a) <= GAP_TOL).count();
            let narrow = (0..actions).any(|a| {
                let g = sol.gap(s, a);
                g > GAP_TOL && g < needed
            });
            if optimal > 1 || narrow {
                offenders.push(mdp.name(s).to_string());
            }
        }
        if offenders.is_empty() {
            return Ok(mdp);
        }
        if sol.unique_optimal_actions() {
            best_min_gap = best_min_gap.max(sol.gap_min_global());
        }
        for state in offenders {
            let row = reward_row(&mut rng);
            def.rewards.insert(state, row);
        }
    }

    Err(InstanceError::ResampleBudget {
        attempts: budget,
        best_min_gap,
        needed,
    })
}

/// Relative entropy of two Bernoulli distributions,
/// `p·ln(p/q) + (1−p)·ln((1−p)/(1−q))`.
///
/// Both parameters must lie strictly inside `(0, 1)`; boundary values are
/// rejected (panics) because the divergence degenerates there.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must lie strictly in (0,1), got {p}");
    assert!(q > 0.0 && q < 1.0, "q must lie strictly in (0,1), got {q}");
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}
