//! Layered finite-horizon tabular MDPs.
//!
//! A [`TabularMdp`] has `H` levels; every state belongs to exactly one level
//! and every transition from level `h` is supported on level `h+1`. Rewards
//! are Bernoulli with a declared mean in `[0, 1]`. Level-`H` states have no
//! outgoing transitions; the implicit successor is a termination state `⊥` at
//! level `H+1` whose value is zero everywhere. Internally `⊥` is addressed as
//! the extra index [`TabularMdp::terminal_id`].
//!
//! [`MdpDef`] is the unvalidated, serializable form (state names, per-action
//! reward means, sparse transition rows). [`TabularMdp::from_def`] validates
//! and indexes it; [`validate_def`] reports all violations without aborting.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for probability-mass checks (rows and the initial distribution).
pub const PROB_TOL: f64 = 1e-12;

/// Serializable MDP document: a key-value tree keyed by state name.
///
/// `rewards[s][a]` is the Bernoulli mean of action `a` at state `s`; the row
/// length defines the number of actions at `s`. `transitions[s][a]` lists
/// `(next_state, probability)` pairs and must be present exactly for states
/// below the last level. `initial` is a distribution over level-1 states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDef {
    pub horizon: usize,
    pub levels: Vec<Vec<String>>,
    pub rewards: BTreeMap<String, Vec<f64>>,
    pub transitions: BTreeMap<String, Vec<Vec<(String, f64)>>>,
    pub initial: Vec<(String, f64)>,
}

/// Result of checking an [`MdpDef`] against the model invariants.
///
/// Violations make the definition unusable; warnings (e.g. unreachable
/// states) do not.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid MDP definition: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("policy has {got} entries, MDP has {want} states")]
    PolicyLength { got: usize, want: usize },
    #[error("policy action {action} out of range at state {state} ({actions} actions)")]
    PolicyAction {
        state: String,
        action: usize,
        actions: usize,
    },
}

/// Validated, index-based layered MDP. Immutable after construction and
/// freely shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    horizon: usize,
    names: Vec<String>,
    levels: Vec<Vec<usize>>,
    level_of: Vec<usize>,
    reward: Vec<Vec<f64>>,
    // `next[s][a]` is empty exactly for last-level states.
    next: Vec<Vec<Vec<(usize, f64)>>>,
    initial: Vec<(usize, f64)>,
}

impl TabularMdp {
    /// Validates `def` and builds the indexed form. All violations are
    /// collected before failing.
    pub fn from_def(def: &MdpDef) -> Result<Self, MdpError> {
        let report = validate_def(def);
        if !report.is_ok() {
            return Err(MdpError::Invalid(report.violations));
        }

        let mut names = Vec::new();
        let mut levels = Vec::with_capacity(def.horizon);
        let mut level_of = Vec::new();
        let mut index = BTreeMap::new();
        for (h, level) in def.levels.iter().enumerate() {
            let mut ids = Vec::with_capacity(level.len());
            for name in level {
                let id = names.len();
                index.insert(name.clone(), id);
                names.push(name.clone());
                level_of.push(h);
                ids.push(id);
            }
            levels.push(ids);
        }

        let mut reward = Vec::with_capacity(names.len());
        let mut next = Vec::with_capacity(names.len());
        for (id, name) in names.iter().enumerate() {
            let means = def.rewards[name].clone();
            let rows = if level_of[id] + 1 < def.horizon {
                def.transitions[name]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|(target, p)| (index[target], *p))
                            .collect()
                    })
                    .collect()
            } else {
                vec![Vec::new(); means.len()]
            };
            reward.push(means);
            next.push(rows);
        }

        let initial = def
            .initial
            .iter()
            .map(|(name, p)| (index[name], *p))
            .collect();

        Ok(Self {
            horizon: def.horizon,
            names,
            levels,
            level_of,
            reward,
            next,
            initial,
        })
    }

    /// Converts back to the serializable definition. Lossless: feeding the
    /// result to [`TabularMdp::from_def`] reproduces `self` exactly.
    pub fn to_def(&self) -> MdpDef {
        let mut rewards = BTreeMap::new();
        let mut transitions = BTreeMap::new();
        for (id, name) in self.names.iter().enumerate() {
            rewards.insert(name.clone(), self.reward[id].clone());
            if self.level_of[id] + 1 < self.horizon {
                let rows = self.next[id]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|&(s, p)| (self.names[s].clone(), p))
                            .collect()
                    })
                    .collect();
                transitions.insert(name.clone(), rows);
            }
        }
        MdpDef {
            horizon: self.horizon,
            levels: self
                .levels
                .iter()
                .map(|ids| ids.iter().map(|&s| self.names[s].clone()).collect())
                .collect(),
            rewards,
            transitions,
            initial: self
                .initial
                .iter()
                .map(|&(s, p)| (self.names[s].clone(), p))
                .collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    /// Index of the termination state `⊥` (one past the last real state).
    pub fn terminal_id(&self) -> usize {
        self.names.len()
    }

    pub fn num_actions(&self, state: usize) -> usize {
        self.reward[state].len()
    }

    pub fn max_actions(&self) -> usize {
        self.reward.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn total_pairs(&self) -> usize {
        self.reward.iter().map(Vec::len).sum()
    }

    pub fn name(&self, state: usize) -> &str {
        &self.names[state]
    }

    pub fn state_id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// 0-based level of a state.
    pub fn level_of(&self, state: usize) -> usize {
        self.level_of[state]
    }

    /// States at a 0-based level.
    pub fn states_at(&self, level: usize) -> &[usize] {
        &self.levels[level]
    }

    pub fn reward_mean(&self, state: usize, action: usize) -> f64 {
        self.reward[state][action]
    }

    /// Sparse transition row; empty for last-level states.
    pub fn transition_row(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.next[state][action]
    }

    pub fn initial_dist(&self) -> &[(usize, f64)] {
        &self.initial
    }

    /// Checks that `actions` assigns a valid action to every state.
    pub fn check_policy(&self, actions: &[usize]) -> Result<(), MdpError> {
        if actions.len() != self.num_states() {
            return Err(MdpError::PolicyLength {
                got: actions.len(),
                want: self.num_states(),
            });
        }
        for (s, &a) in actions.iter().enumerate() {
            if a >= self.num_actions(s) {
                return Err(MdpError::PolicyAction {
                    state: self.names[s].clone(),
                    action: a,
                    actions: self.num_actions(s),
                });
            }
        }
        Ok(())
    }
}

/// Checks every model invariant of `def` and reports all findings.
///
/// Never panics or aborts; an empty violation list means the definition is
/// well-formed. Unreachable non-initial states are reported as warnings.
pub fn validate_def(def: &MdpDef) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;

    if def.horizon == 0 {
        v.push("horizon must be >= 1".into());
        return report;
    }
    if def.levels.len() != def.horizon {
        v.push(format!(
            "levels lists {} levels but horizon is {}",
            def.levels.len(),
            def.horizon
        ));
        return report;
    }

    let mut level_of = BTreeMap::new();
    for (h, level) in def.levels.iter().enumerate() {
        if level.is_empty() {
            v.push(format!("level {} has no states", h + 1));
        }
        for name in level {
            if level_of.insert(name.clone(), h).is_some() {
                v.push(format!("state name '{name}' is not globally unique"));
            }
        }
    }

    for (name, &h) in &level_of {
        let Some(means) = def.rewards.get(name) else {
            v.push(format!("state '{name}' has no reward row"));
            continue;
        };
        if means.is_empty() {
            v.push(format!("state '{name}' has zero actions"));
        }
        for (a, &m) in means.iter().enumerate() {
            if !(0.0..=1.0).contains(&m) {
                v.push(format!(
                    "reward mean {m} out of [0,1] at ('{name}', a{})",
                    a + 1
                ));
            }
        }

        let rows = def.transitions.get(name);
        if h + 1 < def.horizon {
            let Some(rows) = rows else {
                v.push(format!("state '{name}' at level {} has no transitions", h + 1));
                continue;
            };
            if rows.len() != means.len() {
                v.push(format!(
                    "state '{name}' has {} transition rows for {} actions",
                    rows.len(),
                    means.len()
                ));
            }
            for (a, row) in rows.iter().enumerate() {
                let mut mass = 0.0;
                let mut seen = Vec::new();
                for (target, p) in row {
                    match level_of.get(target) {
                        None => v.push(format!(
                            "('{name}', a{}) transitions to unknown state '{target}'",
                            a + 1
                        )),
                        Some(&th) if th != h + 1 => v.push(format!(
                            "('{name}', a{}) at level {} transitions to '{target}' at level {}",
                            a + 1,
                            h + 1,
                            th + 1
                        )),
                        Some(_) => {}
                    }
                    if *p < 0.0 {
                        v.push(format!(
                            "negative probability {p} in row ('{name}', a{})",
                            a + 1
                        ));
                    }
                    if seen.contains(target) {
                        v.push(format!(
                            "duplicate successor '{target}' in row ('{name}', a{})",
                            a + 1
                        ));
                    }
                    seen.push(target.clone());
                    mass += p;
                }
                if (mass - 1.0).abs() > PROB_TOL {
                    v.push(format!("row mass != 1 at ('{name}', a{}): {mass}", a + 1));
                }
            }
        } else if rows.map_or(false, |r| r.iter().any(|row| !row.is_empty())) {
            v.push(format!("last-level state '{name}' has outgoing transitions"));
        }
    }
    for name in def.rewards.keys() {
        if !level_of.contains_key(name) {
            v.push(format!("reward row for unknown state '{name}'"));
        }
    }
    for name in def.transitions.keys() {
        if !level_of.contains_key(name) {
            v.push(format!("transition rows for unknown state '{name}'"));
        }
    }

    let mut mass = 0.0;
    for (name, p) in &def.initial {
        match level_of.get(name) {
            None => v.push(format!("initial distribution names unknown state '{name}'")),
            Some(&h) if h != 0 => v.push(format!(
                "initial distribution puts mass on '{name}' at level {}",
                h + 1
            )),
            Some(_) => {}
        }
        if *p < 0.0 {
            v.push(format!("negative initial probability {p} for '{name}'"));
        }
        mass += p;
    }
    if (mass - 1.0).abs() > PROB_TOL {
        v.push(format!("initial distribution mass != 1: {mass}"));
    }

    if report.is_ok() {
        // Reachability sweep: forward from the initial support.
        let mut reachable: BTreeMap<&str, bool> = level_of.keys().map(|n| (n.as_str(), false)).collect();
        for (name, p) in &def.initial {
            if *p > 0.0 {
                reachable.insert(name, true);
            }
        }
        for level in &def.levels {
            for name in level {
                if !reachable[name.as_str()] {
                    continue;
                }
                if let Some(rows) = def.transitions.get(name) {
                    for row in rows {
                        for (target, p) in row {
                            if *p > 0.0 {
                                reachable.insert(target, true);
                            }
                        }
                    }
                }
            }
        }
        for (name, ok) in reachable {
            if !ok {
                report
                    .warnings
                    .push(format!("state '{name}' is unreachable from the initial distribution"));
            }
        }
    }

    report
}

/// A map state -> action index, one entry per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(mdp: &TabularMdp, actions: Vec<usize>) -> Result<Self, MdpError> {
        mdp.check_policy(&actions)?;
        Ok(Self { actions })
    }

    /// For callers that guarantee validity by construction (learner policies).
    pub(crate) fn from_actions_unchecked(actions: Vec<usize>) -> Self {
        Self { actions }
    }

    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

/// One step of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    /// Realized Bernoulli reward, 0.0 or 1.0.
    pub reward: f64,
}

/// One episode: exactly `H` steps, step `i` at level `i` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode: u64,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Independent random streams for one run: initial-state draws, transition
/// draws, and reward draws never interleave, so a change in one consumer's
/// draw count leaves the others untouched.
#[derive(Debug, Clone)]
pub struct SampleStreams {
    pub init: ChaCha8Rng,
    pub trans: ChaCha8Rng,
    pub reward: ChaCha8Rng,
}

impl SampleStreams {
    pub fn from_seed(seed: u64) -> Self {
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let mut trans = ChaCha8Rng::seed_from_u64(seed);
        let mut reward = ChaCha8Rng::seed_from_u64(seed);
        init.set_stream(0);
        trans.set_stream(1);
        reward.set_stream(2);
        Self {
            init,
            trans,
            reward,
        }
    }
}

fn draw_categorical(rng: &mut ChaCha8Rng, row: &[(usize, f64)]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s, p) in row {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // Row mass can fall a few ulps short of 1.
    row.last().expect("empty distribution").0
}

/// Plays `policy` for one episode: initial state from the initial
/// distribution, rewards Bernoulli with the declared means. Deterministic
/// given the stream states and call order.
pub fn sample_episode(
    mdp: &TabularMdp,
    policy: &DeterministicPolicy,
    episode: u64,
    streams: &mut SampleStreams,
) -> Trajectory {
    let horizon = mdp.horizon();
    let mut steps = Vec::with_capacity(horizon);
    let mut state = draw_categorical(&mut streams.init, mdp.initial_dist());
    for h in 0..horizon {
        debug_assert_eq!(mdp.level_of(state), h);
        let action = policy.action(state);
        let reward = if streams.reward.gen::<f64>() < mdp.reward_mean(state, action) {
            1.0
        } else {
            0.0
        };
        steps.push(Step {
            state,
            action,
            reward,
        });
        if h + 1 < horizon {
            state = draw_categorical(&mut streams.trans, mdp.transition_row(state, action));
        }
    }
    Trajectory { episode, steps }
}

/// Builds a probability row that sums to exactly 1.0 in floating point by
/// assigning the last entry the residual mass. Targets must be nonempty.
pub(crate) fn uniform_row(targets: &[String]) -> Vec<(String, f64)> {
    let n = targets.len();
    let p = 1.0 / n as f64;
    let mut row: Vec<(String, f64)> = targets[..n - 1].iter().map(|t| (t.clone(), p)).collect();
    let used: f64 = row.iter().map(|&(_, q)| q).sum();
    row.push((targets[n - 1].clone(), 1.0 - used));
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    pub(crate) fn two_level_def() -> MdpDef {
        let mut rewards = BTreeMap::new();
        rewards.insert("a".to_string(), vec![0.0, 0.0]);
        rewards.insert("b".to_string(), vec![1.0, 0.5]);
        rewards.insert("c".to_string(), vec![0.25, 0.75]);
        let mut transitions = BTreeMap::new();
        transitions.insert(
            "a".to_string(),
            vec![
                vec![("b".to_string(), 1.0)],
                vec![("b".to_string(), 0.5), ("c".to_string(), 0.5)],
            ],
        );
        MdpDef {
            horizon: 2,
            levels: vec![vec!["a".to_string()], vec!["b".to_string(), "c".to_string()]],
            rewards,
            transitions,
            initial: vec![("a".to_string(), 1.0)],
        }
    }

    #[test]
    fn well_formed_def_validates() {
        let def = two_level_def();
        let report = validate_def(&def);
        assert!(report.is_ok(), "violations: {:?}", report.violations);
        assert!(report.warnings.is_empty());
        TabularMdp::from_def(&def).unwrap();
    }

    #[test]
    fn row_mass_violation_is_reported() {
        let mut def = two_level_def();
        def.transitions.get_mut("a").unwrap()[0] = vec![("b".to_string(), 0.9)];
        let report = validate_def(&def);
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("row mass != 1")));
        assert!(TabularMdp::from_def(&def).is_err());
    }

    #[test]
    fn reward_out_of_range_is_reported() {
        let mut def = two_level_def();
        def.rewards.get_mut("b").unwrap()[0] = 1.2;
        let report = validate_def(&def);
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("reward mean 1.2 out of [0,1]")));
    }

    #[test]
    fn cross_level_transition_is_reported() {
        let mut def = two_level_def();
        def.transitions.get_mut("a").unwrap()[0] = vec![("a".to_string(), 1.0)];
        let report = validate_def(&def);
        assert!(report.violations.iter().any(|v| v.contains("at level 1")));
    }

    #[test]
    fn unreachable_state_is_a_warning_only() {
        let mut def = two_level_def();
        // All of a's mass now goes to b; c becomes unreachable.
        def.transitions.get_mut("a").unwrap()[1] = vec![("b".to_string(), 1.0)];
        let report = validate_def(&def);
        assert!(report.is_ok());
        assert!(report.warnings.iter().any(|w| w.contains("'c'")));
    }

    #[test]
    fn initial_mass_on_wrong_level_is_reported() {
        let mut def = two_level_def();
        def.initial = vec![("b".to_string(), 1.0)];
        let report = validate_def(&def);
        assert!(report.violations.iter().any(|v| v.contains("level 2")));
    }

    #[test]
    fn def_round_trips_through_indexed_form() {
        let def = two_level_def();
        let mdp = TabularMdp::from_def(&def).unwrap();
        assert_eq!(mdp.to_def(), def);
    }

    #[test]
    fn policy_validation() {
        let mdp = TabularMdp::from_def(&two_level_def()).unwrap();
        assert!(DeterministicPolicy::new(&mdp, vec![0, 1, 0]).is_ok());
        assert!(DeterministicPolicy::new(&mdp, vec![0, 1]).is_err());
        assert!(DeterministicPolicy::new(&mdp, vec![2, 0, 0]).is_err());
    }

    #[test]
    fn degenerate_bernoulli_rewards() {
        // Deterministic transitions, reward mean 1 along the played path.
        let mdp = TabularMdp::from_def(&two_level_def()).unwrap();
        let pi = DeterministicPolicy::new(&mdp, vec![0, 0, 0]).unwrap();
        let mut streams = SampleStreams::from_seed(3);
        for k in 0..20 {
            let traj = sample_episode(&mdp, &pi, k, &mut streams);
            assert_eq!(traj.steps.len(), 2);
            // a1 at 'a' goes to 'b' deterministically; reward mean 1 there.
            assert_eq!(traj.steps[1].state, mdp.state_id("b").unwrap());
            assert_eq!(traj.steps[1].reward, 1.0);
            // level-1 reward mean is 0.
            assert_eq!(traj.steps[0].reward, 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let mdp = TabularMdp::from_def(&two_level_def()).unwrap();
        let pi = DeterministicPolicy::new(&mdp, vec![1, 0, 1]).unwrap();
        let run = |seed| {
            let mut streams = SampleStreams::from_seed(seed);
            (0..50)
                .map(|k| sample_episode(&mdp, &pi, k, &mut streams))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn sampled_states_respect_levels_and_support() {
        let mdp = TabularMdp::from_def(&two_level_def()).unwrap();
        let pi = DeterministicPolicy::new(&mdp, vec![1, 0, 1]).unwrap();
        let mut streams = SampleStreams::from_seed(5);
        for k in 0..200 {
            let traj = sample_episode(&mdp, &pi, k, &mut streams);
            for (h, step) in traj.steps.iter().enumerate() {
                assert_eq!(mdp.level_of(step.state), h);
            }
            let row = mdp.transition_row(traj.steps[0].state, traj.steps[0].action);
            assert!(row
                .iter()
                .any(|&(s, p)| s == traj.steps[1].state && p > 0.0));
        }
    }

    #[test]
    fn empirical_reward_means_match_declared() {
        let mdp = TabularMdp::from_def(&two_level_def()).unwrap();
        let pi = DeterministicPolicy::new(&mdp, vec![1, 1, 1]).unwrap();
        let mut streams = SampleStreams::from_seed(99);
        let draws = 100_000u64;
        let mut sums: BTreeMap<(usize, usize), (f64, u64)> = BTreeMap::new();
        for k in 0..draws {
            let traj = sample_episode(&mdp, &pi, k, &mut streams);
            for step in &traj.steps {
                let e = sums.entry((step.state, step.action)).or_insert((0.0, 0));
                e.0 += step.reward;
                e.1 += 1;
            }
        }
        for ((s, a), (sum, n)) in sums {
            let mean = mdp.reward_mean(s, a);
            let sigma = (mean * (1.0 - mean) / n as f64).sqrt().max(1e-12);
            let emp = sum / n as f64;
            assert!(
                (emp - mean).abs() <= 4.0 * sigma + 1e-12,
                "pair ({s},{a}): empirical {emp} vs declared {mean} with n={n}"
            );
        }
    }

    #[test]
    fn uniform_row_mass_is_exactly_one() {
        for n in 2..40 {
            let targets: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let row = uniform_row(&targets);
            let mass: f64 = row.iter().map(|&(_, p)| p).sum();
            assert_eq!(mass, 1.0, "n={n}");
        }
    }
}
