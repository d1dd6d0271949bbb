//! Exact solutions of layered MDPs by backward induction, plus exact policy
//! evaluation.
//!
//! Optimal values satisfy `Q*(x,a) = r(x,a) + Σ_{x'} P(x'|x,a) V*(x')` with
//! `V*` of the termination level fixed at zero, and `V*(x) = max_a Q*(x,a)`.
//! Gap bookkeeping follows the usual conventions: the gap of a pair is
//! `V*(x) − Q*(x,a)`, a pair is optimal when its gap is (numerically) zero,
//! and the per-state minimal gap is zero whenever a state has more than one
//! optimal action.
//!
//! All expectations go through one shared accumulation routine in row order,
//! so exact policy evaluation is floating-point dominated by the optimal
//! values: `V^π_0 <= V*_0` holds exactly, never just up to rounding.

use crate::mdp::{DeterministicPolicy, TabularMdp};

/// Gaps at or below this threshold classify a pair as optimal. Backward
/// induction is plain float arithmetic; this absorbs rounding without
/// conflating genuine gaps (experiments use gaps >= 1e-3).
pub const GAP_TOL: f64 = 1e-9;

/// Everything backward induction produces: optimal values, gaps, and the
/// optimal-pair sets.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    v_star: Vec<f64>,
    q_star: Vec<Vec<f64>>,
    gap: Vec<Vec<f64>>,
    gap_min_global: f64,
    gap_min_local: Vec<f64>,
    z_opt: Vec<(usize, usize)>,
    z_mul: Vec<(usize, usize)>,
    v0_star: f64,
}

/// Shared dot product for transition rows; every expectation in this module
/// uses it so rounding is identical across code paths.
#[inline]
pub(crate) fn expect(row: &[(usize, f64)], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &(s, p) in row {
        acc += p * values[s];
    }
    acc
}

/// Solves `mdp` exactly. `mdp` is valid by construction, so this cannot fail.
pub fn backward_induction(mdp: &TabularMdp) -> ExactSolution {
    let n = mdp.num_states();
    let mut v_star = vec![0.0; n];
    let mut q_star: Vec<Vec<f64>> = (0..n).map(|s| vec![0.0; mdp.num_actions(s)]).collect();

    for h in (0..mdp.horizon()).rev() {
        for &s in mdp.states_at(h) {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions(s) {
                let cont = if h + 1 < mdp.horizon() {
                    expect(mdp.transition_row(s, a), &v_star)
                } else {
                    0.0
                };
                let q = mdp.reward_mean(s, a) + cont;
                q_star[s][a] = q;
                if q > best {
                    best = q;
                }
            }
            v_star[s] = best;
        }
    }

    let mut gap: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut gap_min_global = f64::INFINITY;
    let mut gap_min_local = vec![f64::INFINITY; n];
    let mut z_opt = Vec::new();
    let mut z_mul = Vec::new();
    for s in 0..n {
        let row: Vec<f64> = q_star[s].iter().map(|q| v_star[s] - q).collect();
        let optimal: Vec<usize> = (0..row.len()).filter(|&a| row[a] <= GAP_TOL).collect();
        for &a in &optimal {
            z_opt.push((s, a));
        }
        if optimal.len() > 1 {
            gap_min_local[s] = 0.0;
            for &a in &optimal {
                z_mul.push((s, a));
            }
        } else {
            for (a, &g) in row.iter().enumerate() {
                if g > GAP_TOL && g < gap_min_local[s] && !optimal.contains(&a) {
                    gap_min_local[s] = g;
                }
            }
        }
        for &g in &row {
            if g > GAP_TOL && g < gap_min_global {
                gap_min_global = g;
            }
        }
        gap.push(row);
    }

    let v0_star = expect(mdp.initial_dist(), &v_star);

    ExactSolution {
        v_star,
        q_star,
        gap,
        gap_min_global,
        gap_min_local,
        z_opt,
        z_mul,
        v0_star,
    }
}

impl ExactSolution {
    pub fn v_star(&self, state: usize) -> f64 {
        self.v_star[state]
    }

    pub fn v_star_table(&self) -> &[f64] {
        &self.v_star
    }

    pub fn q_star(&self, state: usize, action: usize) -> f64 {
        self.q_star[state][action]
    }

    pub fn gap(&self, state: usize, action: usize) -> f64 {
        self.gap[state][action]
    }

    /// Minimum strictly positive gap; `+inf` when every action is optimal
    /// everywhere (the minimum over an empty set is left as a sentinel).
    pub fn gap_min_global(&self) -> f64 {
        self.gap_min_global
    }

    /// Per-state minimal gap: 0 when the state has multiple optimal actions,
    /// `+inf` when it has no suboptimal action to compare against.
    pub fn gap_min_local(&self, state: usize) -> f64 {
        self.gap_min_local[state]
    }

    /// Optimal pairs, `(state, action)` with gap (numerically) zero.
    pub fn z_opt(&self) -> &[(usize, usize)] {
        &self.z_opt
    }

    /// Optimal pairs at states with more than one optimal action.
    pub fn z_mul(&self) -> &[(usize, usize)] {
        &self.z_mul
    }

    pub fn v0_star(&self) -> f64 {
        self.v0_star
    }

    pub fn is_optimal(&self, state: usize, action: usize) -> bool {
        self.gap[state][action] <= GAP_TOL
    }

    /// True iff every state has a unique optimal action.
    pub fn unique_optimal_actions(&self) -> bool {
        self.z_mul.is_empty()
    }

    /// Sum of `1/gap` over strictly positive gaps.
    pub fn inverse_gap_sum(&self) -> f64 {
        self.gap
            .iter()
            .flatten()
            .filter(|&&g| g > GAP_TOL)
            .map(|&g| 1.0 / g)
            .sum()
    }

    /// Greedy argmax policy, ties broken toward the lowest action index.
    pub fn greedy_policy(&self, mdp: &TabularMdp) -> DeterministicPolicy {
        let actions = (0..mdp.num_states())
            .map(|s| {
                let mut best = 0;
                for a in 1..mdp.num_actions(s) {
                    if self.q_star[s][a] > self.q_star[s][best] {
                        best = a;
                    }
                }
                best
            })
            .collect();
        DeterministicPolicy::from_actions_unchecked(actions)
    }
}

/// Exact per-state values `V^π` by backward policy evaluation.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Vec<f64> {
    let mut v = vec![0.0; mdp.num_states()];
    for h in (0..mdp.horizon()).rev() {
        for &s in mdp.states_at(h) {
            let a = policy.action(s);
            let cont = if h + 1 < mdp.horizon() {
                expect(mdp.transition_row(s, a), &v)
            } else {
                0.0
            };
            v[s] = mdp.reward_mean(s, a) + cont;
        }
    }
    v
}

/// Exact `V^π_0`, the expected return of `policy` from the initial
/// distribution.
pub fn policy_value(mdp: &TabularMdp, policy: &DeterministicPolicy) -> f64 {
    expect(mdp.initial_dist(), &evaluate_policy(mdp, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_episode, MdpDef, SampleStreams};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn bandit(means: &[f64]) -> TabularMdp {
        let mut rewards = BTreeMap::new();
        rewards.insert("s".to_string(), means.to_vec());
        TabularMdp::from_def(&MdpDef {
            horizon: 1,
            levels: vec![vec!["s".to_string()]],
            rewards,
            transitions: BTreeMap::new(),
            initial: vec![("s".to_string(), 1.0)],
        })
        .unwrap()
    }

    #[test]
    fn one_step_bandit() {
        let mdp = bandit(&[0.7, 0.3]);
        let sol = backward_induction(&mdp);
        assert_eq!(sol.v_star(0), 0.7);
        assert_eq!(sol.v0_star(), 0.7);
        assert_eq!(sol.gap(0, 0), 0.0);
        assert_abs_diff_eq!(sol.gap(0, 1), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.gap_min_global(), 0.4, epsilon = 1e-15);
        assert_eq!(sol.z_opt(), &[(0, 0)]);
        assert!(sol.z_mul().is_empty());

        let worst = DeterministicPolicy::new(&mdp, vec![1]).unwrap();
        assert_abs_diff_eq!(policy_value(&mdp, &worst), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn q_values_stay_in_range_and_v_is_max() {
        let mdp = TabularMdp::from_def(&crate::mdp::tests::two_level_def()).unwrap();
        let sol = backward_induction(&mdp);
        for s in 0..mdp.num_states() {
            let h = mdp.level_of(s);
            let mut best = f64::NEG_INFINITY;
            let mut min_gap = f64::INFINITY;
            for a in 0..mdp.num_actions(s) {
                let q = sol.q_star(s, a);
                assert!(q >= 0.0 && q <= (mdp.horizon() - h) as f64);
                assert!(sol.gap(s, a) >= 0.0);
                best = best.max(q);
                min_gap = min_gap.min(sol.gap(s, a));
            }
            assert_eq!(best, sol.v_star(s));
            assert_eq!(min_gap, 0.0);
        }
    }

    #[test]
    fn greedy_policy_attains_optimum_and_breaks_ties_low() {
        let mdp = bandit(&[0.5, 0.5, 0.2]);
        let sol = backward_induction(&mdp);
        let pi = sol.greedy_policy(&mdp);
        assert_eq!(pi.action(0), 0);
        assert_eq!(policy_value(&mdp, &pi), sol.v0_star());
    }

    #[test]
    fn multiple_optimal_actions_detected() {
        let mdp = bandit(&[0.5, 0.5, 0.2]);
        let sol = backward_induction(&mdp);
        assert_eq!(sol.z_opt(), &[(0, 0), (0, 1)]);
        assert_eq!(sol.z_mul(), &[(0, 0), (0, 1)]);
        assert_eq!(sol.gap_min_local(0), 0.0);
        assert!(!sol.unique_optimal_actions());
    }

    #[test]
    fn all_actions_optimal_gives_infinite_min_gap() {
        let mdp = bandit(&[0.4, 0.4]);
        let sol = backward_induction(&mdp);
        assert_eq!(sol.gap_min_global(), f64::INFINITY);
    }

    #[test]
    fn single_action_state_has_infinite_local_gap() {
        let mdp = bandit(&[0.4]);
        let sol = backward_induction(&mdp);
        assert_eq!(sol.gap_min_local(0), f64::INFINITY);
        assert!(sol.unique_optimal_actions());
    }

    #[test]
    fn policy_value_never_exceeds_optimum() {
        let mdp = TabularMdp::from_def(&crate::mdp::tests::two_level_def()).unwrap();
        let sol = backward_induction(&mdp);
        for a0 in 0..2 {
            for a1 in 0..2 {
                for a2 in 0..2 {
                    let pi = DeterministicPolicy::new(&mdp, vec![a0, a1, a2]).unwrap();
                    assert!(policy_value(&mdp, &pi) <= sol.v0_star());
                }
            }
        }
    }

    #[test]
    fn policy_value_matches_monte_carlo() {
        let mdp = TabularMdp::from_def(&crate::mdp::tests::two_level_def()).unwrap();
        let pi = DeterministicPolicy::new(&mdp, vec![1, 1, 0]).unwrap();
        let exact = policy_value(&mdp, &pi);

        let samples = 1_000_000u64;
        let mut streams = SampleStreams::from_seed(2024);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for k in 0..samples {
            let ret = sample_episode(&mdp, &pi, k, &mut streams).total_reward();
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / samples as f64;
        let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
        let se = (var / samples as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "MC {mean} vs exact {exact} (se {se})"
        );
    }
}
