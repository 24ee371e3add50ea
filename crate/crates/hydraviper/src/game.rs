//! Team-based tabular Markov games, policy profiles, and rollouts.
//!
//! A [`TabularMarkovGame`] is a finite Markov game whose agent set is
//! partitioned into disjoint teams, each with its own reward. States are
//! enumerable integers; observations are real feature vectors derived from
//! the state, and the *global* observation is the concatenation of all
//! agents' observation vectors in agent-index order. Joint actions are
//! indexed lexicographically with agent 0 most significant, so "lowest
//! joint-action index" means the lexicographically smallest action vector.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::rng::rng_from_seed;

/// Tolerance for probability-distribution normalization checks.
const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid team partition: {0}")]
    InvalidTeams(String),
    #[error("invalid team id {0}")]
    UnknownTeam(usize),
    #[error("transition distribution at state {state}, joint action {action} is invalid: {reason}")]
    BadTransition {
        state: usize,
        action: usize,
        reason: String,
    },
    #[error("initial distribution is invalid: {0}")]
    BadInitialDist(String),
    #[error("observation for state {state} has length {got}, expected {expected}")]
    BadObservation {
        state: usize,
        got: usize,
        expected: usize,
    },
    #[error("agent {agent} chose action {action}, outside its {limit}-action space")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        limit: usize,
    },
    #[error("policy for agent {agent} failed: {reason}")]
    PolicyFailure { agent: usize, reason: String },
    #[error("profile has {got} policies for {expected} agents")]
    ProfileSize { got: usize, expected: usize },
    #[error("invalid game definition: {0}")]
    InvalidSpec(String),
}

/// Where a policy came from; carried along for reports and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyProvenance {
    Expert,
    /// A decision-tree student snapshot from training iteration `iteration`
    /// (1-based).
    Student { iteration: usize },
}

/// A per-agent policy: maps the global observation to one of the agent's
/// actions. Implementations that only use the agent's own observation slice
/// extract it via [`TabularMarkovGame::obs_slice`].
pub trait Policy: Send + Sync {
    fn act(
        &self,
        game: &TabularMarkovGame,
        agent: usize,
        global_obs: &[f64],
    ) -> Result<usize, String>;

    fn provenance(&self) -> PolicyProvenance;
}

/// One policy per agent.
#[derive(Clone)]
pub struct PolicyProfile {
    policies: Vec<Arc<dyn Policy>>,
}

impl PolicyProfile {
    pub fn new(
        policies: Vec<Arc<dyn Policy>>,
        game: &TabularMarkovGame,
    ) -> Result<Self, GameError> {
        if policies.len() != game.agent_count() {
            return Err(GameError::ProfileSize {
                got: policies.len(),
                expected: game.agent_count(),
            });
        }
        Ok(Self { policies })
    }

    /// Replaces the policies of `agents` with those from `other`, leaving the
    /// rest untouched. Used to mix one team's students with expert opponents.
    pub fn with_replaced(&self, agents: &[usize], other: &PolicyProfile) -> PolicyProfile {
        let mut policies = self.policies.clone();
        for &a in agents {
            policies[a] = other.policies[a].clone();
        }
        PolicyProfile { policies }
    }

    pub fn provenance(&self, agent: usize) -> PolicyProvenance {
        self.policies[agent].provenance()
    }

    /// Joint action at a global observation; validates every agent's action
    /// against its action-set size.
    pub fn act(
        &self,
        game: &TabularMarkovGame,
        global_obs: &[f64],
    ) -> Result<Vec<usize>, GameError> {
        let mut joint = Vec::with_capacity(self.policies.len());
        for (agent, policy) in self.policies.iter().enumerate() {
            let action = policy
                .act(game, agent, global_obs)
                .map_err(|reason| GameError::PolicyFailure { agent, reason })?;
            let limit = game.actions_per_agent()[agent];
            if action >= limit {
                return Err(GameError::ActionOutOfRange {
                    agent,
                    action,
                    limit,
                });
            }
            joint.push(action);
        }
        Ok(joint)
    }
}

/// One step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub state: usize,
    pub global_obs: Vec<f64>,
    pub joint_action: Vec<usize>,
    /// One reward per team, in team-index order.
    pub team_rewards: Vec<f64>,
}

/// A horizon-length rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    /// Undiscounted mean per-step reward of `team`: `(1/T) * sum_t R_team(s_t, a_t)`.
    pub fn mean_return(&self, team: usize) -> Result<f64, GameError> {
        let first = self.steps.first().ok_or(GameError::UnknownTeam(team))?;
        if team >= first.team_rewards.len() {
            return Err(GameError::UnknownTeam(team));
        }
        let total: f64 = self.steps.iter().map(|s| s.team_rewards[team]).sum();
        Ok(total / self.steps.len() as f64)
    }
}

type TransitionFn = dyn Fn(usize, &[usize]) -> Vec<(usize, f64)> + Send + Sync;
/// Reward of an agent subset: `(state, full joint action, members) -> f64`.
/// The value must depend only on the members' action components.
type RewardFn = dyn Fn(usize, &[usize], &[usize]) -> f64 + Send + Sync;

/// Everything needed to construct a [`TabularMarkovGame`]; validated by
/// [`TabularMarkovGame::new`].
pub struct GameSpec {
    pub state_count: usize,
    pub actions_per_agent: Vec<usize>,
    pub teams: Vec<Vec<usize>>,
    /// Per-agent observation dimensions.
    pub obs_dims: Vec<usize>,
    /// Global observation per state (concatenation of per-agent vectors).
    pub observations: Vec<Vec<f64>>,
    /// Per-agent feature names, matching `obs_dims`.
    pub feature_names: Vec<Vec<String>>,
    pub transition: Arc<TransitionFn>,
    pub reward: Arc<RewardFn>,
    pub initial_dist: Vec<(usize, f64)>,
    pub discount: f64,
    pub horizon: usize,
    /// Inherent environment adjacency between agents, when one exists.
    pub env_adjacency: Option<Vec<(usize, usize)>>,
}

/// A finite team-partitioned Markov game. Immutable after construction and
/// safe to share across threads; rollouts are independent.
pub struct TabularMarkovGame {
    state_count: usize,
    agent_count: usize,
    actions_per_agent: Vec<usize>,
    joint_action_count: usize,
    strides: Vec<usize>,
    teams: Vec<Vec<usize>>,
    team_of: Vec<usize>,
    obs_dims: Vec<usize>,
    obs_offsets: Vec<usize>,
    observations: Vec<Vec<f64>>,
    feature_names: Vec<Vec<String>>,
    transition: Arc<TransitionFn>,
    reward: Arc<RewardFn>,
    initial_dist: Vec<(usize, f64)>,
    discount: f64,
    horizon: usize,
    env_adjacency: Option<Vec<(usize, usize)>>,
}

impl TabularMarkovGame {
    pub fn new(spec: GameSpec) -> Result<Self, GameError> {
        let agent_count = spec.actions_per_agent.len();
        if spec.state_count == 0 || agent_count == 0 {
            return Err(GameError::InvalidSpec(
                "state and agent counts must be positive".into(),
            ));
        }
        if spec.actions_per_agent.contains(&0) {
            return Err(GameError::InvalidSpec("empty action set".into()));
        }
        if !(0.0..1.0).contains(&spec.discount) {
            return Err(GameError::InvalidSpec(format!(
                "discount {} outside [0, 1)",
                spec.discount
            )));
        }
        if spec.horizon == 0 {
            return Err(GameError::InvalidSpec("horizon must be positive".into()));
        }
        let team_of = validate_teams(&spec.teams, agent_count)?;

        if spec.obs_dims.len() != agent_count || spec.feature_names.len() != agent_count {
            return Err(GameError::InvalidSpec(
                "observation dims and feature names must cover every agent".into(),
            ));
        }
        for (agent, (dim, names)) in spec.obs_dims.iter().zip(&spec.feature_names).enumerate() {
            if names.len() != *dim {
                return Err(GameError::InvalidSpec(format!(
                    "agent {agent} has {} feature names for {dim} features",
                    names.len()
                )));
            }
        }
        let global_dim: usize = spec.obs_dims.iter().sum();
        let mut obs_offsets = Vec::with_capacity(agent_count);
        let mut off = 0;
        for &d in &spec.obs_dims {
            obs_offsets.push(off);
            off += d;
        }
        if spec.observations.len() != spec.state_count {
            return Err(GameError::InvalidSpec(
                "observations must cover every state".into(),
            ));
        }
        for (state, obs) in spec.observations.iter().enumerate() {
            if obs.len() != global_dim {
                return Err(GameError::BadObservation {
                    state,
                    got: obs.len(),
                    expected: global_dim,
                });
            }
        }

        let mut strides = vec![1usize; agent_count];
        for i in (0..agent_count - 1).rev() {
            strides[i] = strides[i + 1] * spec.actions_per_agent[i + 1];
        }
        let joint_action_count: usize = spec.actions_per_agent.iter().product();

        check_dist(&spec.initial_dist, spec.state_count)
            .map_err(GameError::BadInitialDist)?;

        let game = Self {
            state_count: spec.state_count,
            agent_count,
            actions_per_agent: spec.actions_per_agent,
            joint_action_count,
            strides,
            teams: spec.teams,
            team_of,
            obs_dims: spec.obs_dims,
            obs_offsets,
            observations: spec.observations,
            feature_names: spec.feature_names,
            transition: spec.transition,
            reward: spec.reward,
            initial_dist: spec.initial_dist,
            discount: spec.discount,
            horizon: spec.horizon,
            env_adjacency: spec.env_adjacency,
        };
        game.validate_transitions()?;
        Ok(game)
    }

    /// Same dynamics, rewards, and observations under a different team
    /// partition. Transition tables are not re-validated.
    pub fn with_teams(&self, teams: Vec<Vec<usize>>) -> Result<Self, GameError> {
        let team_of = validate_teams(&teams, self.agent_count)?;
        Ok(Self {
            teams,
            team_of,
            transition: self.transition.clone(),
            reward: self.reward.clone(),
            observations: self.observations.clone(),
            feature_names: self.feature_names.clone(),
            actions_per_agent: self.actions_per_agent.clone(),
            strides: self.strides.clone(),
            obs_dims: self.obs_dims.clone(),
            obs_offsets: self.obs_offsets.clone(),
            initial_dist: self.initial_dist.clone(),
            env_adjacency: self.env_adjacency.clone(),
            ..*self
        })
    }

    fn validate_transitions(&self) -> Result<(), GameError> {
        let mut joint = vec![0usize; self.agent_count];
        for state in 0..self.state_count {
            for idx in 0..self.joint_action_count {
                self.decode_joint(idx, &mut joint);
                let dist = (self.transition)(state, &joint);
                check_dist(&dist, self.state_count).map_err(|reason| {
                    GameError::BadTransition {
                        state,
                        action: idx,
                        reason,
                    }
                })?;
            }
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    pub fn actions_per_agent(&self) -> &[usize] {
        &self.actions_per_agent
    }

    pub fn joint_action_count(&self) -> usize {
        self.joint_action_count
    }

    pub fn teams(&self) -> &[Vec<usize>] {
        &self.teams
    }

    pub fn team_count(&self) -> usize {
        self.teams.len()
    }

    pub fn team_of(&self, agent: usize) -> usize {
        self.team_of[agent]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &[(usize, f64)] {
        &self.initial_dist
    }

    pub fn env_adjacency(&self) -> Option<&[(usize, usize)]> {
        self.env_adjacency.as_deref()
    }

    pub fn global_obs(&self, state: usize) -> &[f64] {
        &self.observations[state]
    }

    pub fn global_obs_dim(&self) -> usize {
        self.obs_dims.iter().sum()
    }

    /// The slice of the global observation belonging to `agent`.
    pub fn obs_slice(&self, agent: usize) -> Range<usize> {
        let start = self.obs_offsets[agent];
        start..start + self.obs_dims[agent]
    }

    pub fn feature_names(&self, agent: usize) -> &[String] {
        &self.feature_names[agent]
    }

    /// Encodes a per-agent action vector into a joint action index.
    pub fn joint_index(&self, joint: &[usize]) -> usize {
        joint
            .iter()
            .zip(&self.strides)
            .map(|(a, s)| a * s)
            .sum()
    }

    /// Decodes a joint action index into `out` (one entry per agent).
    pub fn decode_joint(&self, mut idx: usize, out: &mut [usize]) {
        for (slot, &stride) in out.iter_mut().zip(&self.strides) {
            *slot = idx / stride;
            idx %= stride;
        }
    }

    /// Number of joint actions available to `team` alone.
    pub fn team_action_count(&self, team: usize) -> Result<usize, GameError> {
        let members = self.teams.get(team).ok_or(GameError::UnknownTeam(team))?;
        Ok(members.iter().map(|&i| self.actions_per_agent[i]).product())
    }

    /// Writes the `k`-th team action assignment (lexicographic over members
    /// in team order) into the members' slots of `joint`.
    pub fn fill_team_actions(&self, team: usize, k: usize, joint: &mut [usize]) {
        let members = &self.teams[team];
        let mut rem = k;
        for &agent in members.iter().rev() {
            let n = self.actions_per_agent[agent];
            joint[agent] = rem % n;
            rem /= n;
        }
    }

    pub fn transition_dist(&self, state: usize, joint: &[usize]) -> Vec<(usize, f64)> {
        (self.transition)(state, joint)
    }

    pub fn team_reward(&self, team: usize, state: usize, joint: &[usize]) -> f64 {
        (self.reward)(state, joint, &self.teams[team])
    }

    /// Sum of all team rewards; the social objective the expert maximizes.
    pub fn total_reward(&self, state: usize, joint: &[usize]) -> f64 {
        (0..self.teams.len())
            .map(|l| self.team_reward(l, state, joint))
            .sum()
    }

    /// Rolls out `profile` for exactly the game horizon. The seed fully
    /// determines every stochastic draw, so equal seeds give equal
    /// trajectories.
    pub fn rollout(&self, profile: &PolicyProfile, seed: u64) -> Result<Trajectory, GameError> {
        if profile.policies.len() != self.agent_count {
            return Err(GameError::ProfileSize {
                got: profile.policies.len(),
                expected: self.agent_count,
            });
        }
        let mut rng = rng_from_seed(seed);
        let mut state = sample_dist(&self.initial_dist, &mut rng);
        let mut steps = Vec::with_capacity(self.horizon);
        for _ in 0..self.horizon {
            let global_obs = self.observations[state].clone();
            let joint_action = profile.act(self, &global_obs)?;
            let team_rewards: Vec<f64> = (0..self.teams.len())
                .map(|l| self.team_reward(l, state, &joint_action))
                .collect();
            let next = sample_dist(&(self.transition)(state, &joint_action), &mut rng);
            steps.push(TrajectoryStep {
                state,
                global_obs,
                joint_action,
                team_rewards,
            });
            state = next;
        }
        Ok(Trajectory { steps })
    }
}

fn validate_teams(teams: &[Vec<usize>], agent_count: usize) -> Result<Vec<usize>, GameError> {
    if teams.is_empty() {
        return Err(GameError::InvalidTeams("no teams".into()));
    }
    let mut team_of = vec![usize::MAX; agent_count];
    for (l, members) in teams.iter().enumerate() {
        if members.is_empty() {
            return Err(GameError::InvalidTeams(format!("team {l} is empty")));
        }
        for &agent in members {
            if agent >= agent_count {
                return Err(GameError::InvalidTeams(format!(
                    "team {l} contains unknown agent {agent}"
                )));
            }
            if team_of[agent] != usize::MAX {
                return Err(GameError::InvalidTeams(format!(
                    "agent {agent} appears in teams {} and {l}",
                    team_of[agent]
                )));
            }
            team_of[agent] = l;
        }
    }
    if let Some(agent) = team_of.iter().position(|&t| t == usize::MAX) {
        return Err(GameError::InvalidTeams(format!(
            "agent {agent} belongs to no team"
        )));
    }
    Ok(team_of)
}

fn check_dist(dist: &[(usize, f64)], state_count: usize) -> Result<(), String> {
    let mut sum = 0.0;
    for &(state, p) in dist {
        if state >= state_count {
            return Err(format!("references unknown state {state}"));
        }
        if p < 0.0 {
            return Err(format!("negative probability {p} for state {state}"));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

fn sample_dist<R: Rng>(dist: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(state, p) in dist {
        acc += p;
        if u < acc {
            return state;
        }
    }
    // Rounding can leave u just past the accumulated mass.
    dist.last().map(|&(s, _)| s).unwrap_or(0)
}

/// A fixed per-agent action table over observations is awkward for tests;
/// this wraps a plain function as a [`Policy`].
pub struct FnPolicy<F> {
    f: F,
    provenance: PolicyProvenance,
}

impl<F> FnPolicy<F>
where
    F: Fn(&TabularMarkovGame, usize, &[f64]) -> usize + Send + Sync,
{
    pub fn new(f: F, provenance: PolicyProvenance) -> Self {
        Self { f, provenance }
    }
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&TabularMarkovGame, usize, &[f64]) -> usize + Send + Sync,
{
    fn act(
        &self,
        game: &TabularMarkovGame,
        agent: usize,
        global_obs: &[f64],
    ) -> Result<usize, String> {
        Ok((self.f)(game, agent, global_obs))
    }

    fn provenance(&self) -> PolicyProvenance {
        self.provenance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn self_loop_game(horizon: usize) -> TabularMarkovGame {
        TabularMarkovGame::new(GameSpec {
            state_count: 1,
            actions_per_agent: vec![2],
            teams: vec![vec![0]],
            obs_dims: vec![1],
            observations: vec![vec![0.0]],
            feature_names: vec![vec!["x".into()]],
            transition: Arc::new(|_, _| vec![(0, 1.0)]),
            reward: Arc::new(|_, joint, _| joint[0] as f64),
            initial_dist: vec![(0, 1.0)],
            discount: 0.9,
            horizon,
            env_adjacency: None,
        })
        .unwrap()
    }

    /// Two states; action 0 flips to state 1 with probability one half.
    fn chain_game() -> TabularMarkovGame {
        TabularMarkovGame::new(GameSpec {
            state_count: 2,
            actions_per_agent: vec![2],
            teams: vec![vec![0]],
            obs_dims: vec![1],
            observations: vec![vec![0.0], vec![1.0]],
            feature_names: vec![vec!["s".into()]],
            transition: Arc::new(|state, _| {
                if state == 0 {
                    vec![(0, 0.5), (1, 0.5)]
                } else {
                    vec![(1, 1.0)]
                }
            }),
            reward: Arc::new(|state, _, _| state as f64),
            initial_dist: vec![(0, 1.0)],
            discount: 0.9,
            horizon: 2,
            env_adjacency: None,
        })
        .unwrap()
    }

    fn constant_policy(action: usize, game: &TabularMarkovGame) -> PolicyProfile {
        let policies: Vec<Arc<dyn Policy>> = (0..game.agent_count())
            .map(|_| {
                Arc::new(FnPolicy::new(
                    move |_, _, _| action,
                    PolicyProvenance::Expert,
                )) as Arc<dyn Policy>
            })
            .collect();
        PolicyProfile::new(policies, game).unwrap()
    }

    #[test]
    fn self_loop_rollout_repeats_one_step() {
        let game = self_loop_game(3);
        let profile = constant_policy(1, &game);
        let traj = game.rollout(&profile, 0).unwrap();
        assert_eq!(traj.steps.len(), 3);
        for step in &traj.steps {
            assert_eq!(step.state, 0);
            assert_eq!(step.joint_action, vec![1]);
            assert_eq!(step.team_rewards, vec![1.0]);
        }
    }

    #[test]
    fn equal_seeds_give_bitwise_equal_trajectories() {
        let game = chain_game();
        let profile = constant_policy(0, &game);
        let a = game.rollout(&profile, 7).unwrap();
        let b = game.rollout(&profile, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chain_visit_frequency_matches_transition() {
        let game = chain_game();
        let profile = constant_policy(0, &game);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|&seed| game.rollout(&profile, seed).unwrap().steps[1].state == 1)
            .count();
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn empirical_next_state_frequencies_within_3_sigma() {
        // Binomial check of the declared transition row for (s0, a0).
        let game = chain_game();
        let n = 20_000usize;
        let mut rng = rng_from_seed(99);
        let dist = game.transition_dist(0, &[0]);
        let mut counts = [0usize; 2];
        for _ in 0..n {
            counts[sample_dist(&dist, &mut rng)] += 1;
        }
        for &(state, p) in &dist {
            let sigma = (p * (1.0 - p) * n as f64).sqrt();
            let diff = (counts[state] as f64 - p * n as f64).abs();
            assert!(diff <= 3.0 * sigma, "state {state}: diff {diff} > 3σ {sigma}");
        }
    }

    #[test]
    fn mean_return_examples() {
        let game = self_loop_game(25);
        let profile = constant_policy(1, &game);
        let traj = game.rollout(&profile, 1).unwrap();
        assert_eq!(traj.mean_return(0).unwrap(), 1.0);

        // rewards [2, 0, 0, 0] over T = 4
        let mut traj = game.rollout(&constant_policy(0, &game), 1).unwrap();
        traj.steps.truncate(4);
        traj.steps[0].team_rewards[0] = 2.0;
        assert_eq!(traj.mean_return(0).unwrap(), 0.5);
        assert!(traj.mean_return(3).is_err());
    }

    #[test]
    fn mean_return_matches_independent_resummation() {
        let game = chain_game();
        let profile = constant_policy(0, &game);
        let traj = game.rollout(&profile, 42).unwrap();
        let resum: f64 = traj.steps.iter().map(|s| s.team_rewards[0]).sum::<f64>()
            / traj.steps.len() as f64;
        assert_eq!(traj.mean_return(0).unwrap(), resum);
    }

    #[test]
    fn action_out_of_range_names_the_agent() {
        let game = self_loop_game(2);
        let profile = constant_policy(5, &game);
        match game.rollout(&profile, 0) {
            Err(GameError::ActionOutOfRange { agent, action, limit }) => {
                assert_eq!((agent, action, limit), (0, 5, 2));
            }
            other => panic!("expected action-range error, got {other:?}"),
        }
    }

    #[test]
    fn team_partition_violations_are_construction_errors() {
        let bad_teams = [
            vec![vec![0], vec![0]],    // duplicate
            vec![vec![0, 2]],          // unknown agent
            vec![vec![]],              // empty team
            vec![vec![1]],             // agent 0 uncovered
        ];
        for teams in bad_teams {
            let res = TabularMarkovGame::new(GameSpec {
                state_count: 1,
                actions_per_agent: vec![2, 2],
                teams,
                obs_dims: vec![1, 1],
                observations: vec![vec![0.0, 0.0]],
                feature_names: vec![vec!["a".into()], vec!["b".into()]],
                transition: Arc::new(|_, _| vec![(0, 1.0)]),
                reward: Arc::new(|_, _, _| 0.0),
                initial_dist: vec![(0, 1.0)],
                discount: 0.9,
                horizon: 1,
                env_adjacency: None,
            });
            assert!(matches!(res, Err(GameError::InvalidTeams(_))));
        }
    }

    #[test]
    fn unnormalized_transition_is_rejected() {
        let res = TabularMarkovGame::new(GameSpec {
            state_count: 2,
            actions_per_agent: vec![1],
            teams: vec![vec![0]],
            obs_dims: vec![1],
            observations: vec![vec![0.0], vec![1.0]],
            feature_names: vec![vec!["s".into()]],
            transition: Arc::new(|_, _| vec![(0, 0.5), (1, 0.4)]),
            reward: Arc::new(|_, _, _| 0.0),
            initial_dist: vec![(0, 1.0)],
            discount: 0.9,
            horizon: 1,
            env_adjacency: None,
        });
        assert!(matches!(res, Err(GameError::BadTransition { .. })));
    }

    #[test]
    fn joint_action_indexing_round_trips() {
        let game = TabularMarkovGame::new(GameSpec {
            state_count: 1,
            actions_per_agent: vec![3, 2, 4],
            teams: vec![vec![0, 1, 2]],
            obs_dims: vec![1, 1, 1],
            observations: vec![vec![0.0; 3]],
            feature_names: vec![vec!["a".into()], vec!["b".into()], vec!["c".into()]],
            transition: Arc::new(|_, _| vec![(0, 1.0)]),
            reward: Arc::new(|_, _, _| 0.0),
            initial_dist: vec![(0, 1.0)],
            discount: 0.9,
            horizon: 1,
            env_adjacency: None,
        })
        .unwrap();
        let mut joint = vec![0; 3];
        for idx in 0..game.joint_action_count() {
            game.decode_joint(idx, &mut joint);
            assert_eq!(game.joint_index(&joint), idx);
        }
        // Agent 0 is most significant: index order is lexicographic.
        game.decode_joint(0, &mut joint);
        assert_eq!(joint, vec![0, 0, 0]);
        game.decode_joint(1, &mut joint);
        assert_eq!(joint, vec![0, 0, 1]);
    }

    #[test]
    fn team_action_enumeration_covers_members_only() {
        let game = TabularMarkovGame::new(GameSpec {
            state_count: 1,
            actions_per_agent: vec![2, 3, 2],
            teams: vec![vec![0, 2], vec![1]],
            obs_dims: vec![1, 1, 1],
            observations: vec![vec![0.0; 3]],
            feature_names: vec![vec!["a".into()], vec!["b".into()], vec!["c".into()]],
            transition: Arc::new(|_, _| vec![(0, 1.0)]),
            reward: Arc::new(|_, _, _| 0.0),
            initial_dist: vec![(0, 1.0)],
            discount: 0.9,
            horizon: 1,
            env_adjacency: None,
        })
        .unwrap();
        assert_eq!(game.team_action_count(0).unwrap(), 4);
        assert_eq!(game.team_action_count(1).unwrap(), 3);
        let mut joint = vec![9, 9, 9];
        game.fill_team_actions(0, 3, &mut joint);
        assert_eq!(joint, vec![1, 9, 1]); // agent 1 untouched
    }
}
