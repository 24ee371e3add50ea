//! Dataset aggregation, Q-range sample weighting, and adaptive rollout
//! budgeting.
//!
//! The dataset stores every relabelled `(global observation, expert joint
//! action)` pair collected so far; aggregation is append-only, and one store
//! serves every team (a single rollout batch feeds all team views). Weights
//! are recomputed from scratch per group each iteration: for a team, the gap
//! between its best-response value and the worst-case team joint action with
//! opponents at their expert actions; for a single agent (the independent
//! ablation), the same gap over the agent's own actions.
//!
//! Samples whose weight falls at or below the drop threshold never survive
//! resampling, and because the weights depend only on the fixed expert
//! quantities, a once-dropped sample stays dropped in every later iteration.
//! The drop count divided by the horizon sizes the next iteration's rollout
//! collection, clipped to the per-iteration count and the remaining budget.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::game::{GameError, PolicyProfile, TabularMarkovGame};
use crate::oracle::{ObsId, OracleError, TeamValueOracle};
use crate::rng::{rng_for, STREAM_TRAIN};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sample {index}: oracle lookup failed: {source}")]
    LookupMiss {
        index: usize,
        #[source]
        source: OracleError,
    },
    #[error("resampling over zero total weight (degenerate iteration)")]
    EmptySupport,
    #[error("weights have not been computed for {0}")]
    MissingWeights(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which weight vector a sample weight belongs to: one per team in the
/// normal pipeline, one per agent under independent resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WeightGroup {
    Team(usize),
    Agent(usize),
}

impl std::fmt::Display for WeightGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightGroup::Team(l) => write!(f, "team{l}"),
            WeightGroup::Agent(i) => write!(f, "agent{i}"),
        }
    }
}

/// One aggregated rollout sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    /// Expert joint action at `obs`; student actions never enter labels.
    pub expert_joint: Vec<usize>,
    /// Iteration the sample was collected in (1-based).
    pub iteration: usize,
}

/// Append-only aggregated sample store with per-group resampling weights.
pub struct WeightedDataset {
    samples: Vec<Sample>,
    weights: BTreeMap<WeightGroup, Vec<f64>>,
    epsilon: f64,
}

impl WeightedDataset {
    /// `epsilon` is the drop threshold: weights at or below it mark the
    /// sample as dropped.
    pub fn new(epsilon: f64) -> Self {
        Self {
            samples: Vec::new(),
            weights: BTreeMap::new(),
            epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn weights(&self, group: WeightGroup) -> Option<&[f64]> {
        self.weights.get(&group).map(|w| w.as_slice())
    }

    /// Resolves every stored observation against the oracle, reporting the
    /// first miss with its sample index. Callers that recompute weights for
    /// several groups can resolve once and reuse the handles.
    pub fn resolve_all(&self, oracle: &TeamValueOracle) -> Result<Vec<ObsId>, DataError> {
        self.samples
            .par_iter()
            .enumerate()
            .map(|(index, sample)| {
                oracle
                    .resolve(&sample.obs)
                    .map_err(|source| DataError::LookupMiss { index, source })
            })
            .collect()
    }

    /// Team weights: `Vbar_team(o) - min over team actions of Qbar_team(o,
    /// a, expert opponents)`, clamped at zero against float noise.
    /// Recomputed from scratch over the whole aggregated store.
    pub fn compute_team_weights(
        &mut self,
        team: usize,
        oracle: &TeamValueOracle,
    ) -> Result<&[f64], DataError> {
        let ids = self.resolve_all(oracle)?;
        self.compute_team_weights_at(team, oracle, &ids)
    }

    /// [`Self::compute_team_weights`] over pre-resolved observation handles.
    pub fn compute_team_weights_at(
        &mut self,
        team: usize,
        oracle: &TeamValueOracle,
        ids: &[ObsId],
    ) -> Result<&[f64], DataError> {
        let weights = self.compute_weights_with(ids, |id| {
            let opponents = oracle.expert_joint_at(id).to_vec();
            oracle.q_range_at(team, id, &opponents)
        });
        self.weights.insert(WeightGroup::Team(team), weights);
        Ok(&self.weights[&WeightGroup::Team(team)])
    }

    /// Per-agent weights for the independent-resampling ablation: the range
    /// of the agent's own-team Q over its own actions, everyone else expert.
    pub fn compute_agent_weights(
        &mut self,
        agent: usize,
        oracle: &TeamValueOracle,
    ) -> Result<&[f64], DataError> {
        let ids = self.resolve_all(oracle)?;
        self.compute_agent_weights_at(agent, oracle, &ids)
    }

    /// [`Self::compute_agent_weights`] over pre-resolved observation handles.
    pub fn compute_agent_weights_at(
        &mut self,
        agent: usize,
        oracle: &TeamValueOracle,
        ids: &[ObsId],
    ) -> Result<&[f64], DataError> {
        let weights = self.compute_weights_with(ids, |id| oracle.agent_range_at(agent, id));
        self.weights.insert(WeightGroup::Agent(agent), weights);
        Ok(&self.weights[&WeightGroup::Agent(agent)])
    }

    fn compute_weights_with<F>(&self, ids: &[ObsId], range: F) -> Vec<f64>
    where
        F: Fn(ObsId) -> (f64, f64) + Sync,
    {
        ids.par_iter()
            .map(|&id| {
                let (lo, hi) = range(id);
                (hi - lo).max(0.0)
            })
            .collect()
    }

    /// Samples currently at or below the drop threshold for `group`.
    pub fn dropped_count(&self, group: WeightGroup) -> Result<usize, DataError> {
        let weights = self
            .weights
            .get(&group)
            .ok_or_else(|| DataError::MissingWeights(group.to_string()))?;
        Ok(weights.iter().filter(|&&p| p <= self.epsilon).count())
    }

    /// `ceil(dropped / horizon)` for one group.
    pub fn k_drop_for_group(
        &self,
        group: WeightGroup,
        horizon: usize,
    ) -> Result<usize, DataError> {
        Ok(self.dropped_count(group)?.div_ceil(horizon))
    }

    /// Minimum of [`Self::k_drop_for_group`] across every group with
    /// computed weights.
    pub fn compute_k_drop(&self, horizon: usize) -> Result<usize, DataError> {
        if self.weights.is_empty() {
            return Err(DataError::MissingWeights("any group".into()));
        }
        let mut best = usize::MAX;
        for &group in self.weights.keys() {
            best = best.min(self.k_drop_for_group(group, horizon)?);
        }
        Ok(best)
    }

    /// Draws `target_size` samples i.i.d. with replacement, probabilities
    /// proportional to the group's weights. Samples at or below the drop
    /// threshold are excluded (the store itself stays append-only), so
    /// zero-weight samples never appear.
    pub fn resample(
        &self,
        group: WeightGroup,
        target_size: usize,
        seed: u64,
    ) -> Result<Vec<Sample>, DataError> {
        Ok(self
            .resample_indices(group, target_size, seed)?
            .into_iter()
            .map(|idx| self.samples[idx].clone())
            .collect())
    }

    /// [`Self::resample`] returning indices into [`Self::samples`] instead
    /// of cloned samples.
    pub fn resample_indices(
        &self,
        group: WeightGroup,
        target_size: usize,
        seed: u64,
    ) -> Result<Vec<usize>, DataError> {
        let weights = self
            .weights
            .get(&group)
            .ok_or_else(|| DataError::MissingWeights(group.to_string()))?;
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut total = 0.0;
        for &w in weights {
            if w > self.epsilon {
                total += w;
            }
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(DataError::EmptySupport);
        }
        let mut rng = rng_for(seed, crate::rng::STREAM_RESAMPLE, 0);
        let mut out = Vec::with_capacity(target_size);
        for _ in 0..target_size {
            let u: f64 = rand::Rng::random::<f64>(&mut rng) * total;
            let idx = cumulative
                .partition_point(|&c| c <= u)
                .min(weights.len() - 1);
            out.push(idx);
        }
        Ok(out)
    }

    /// Writes `(iteration, group, observation, action, weight)` rows as TSV
    /// for offline analysis, one row per (group, sample).
    pub fn dump_tsv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "iteration\tgroup\tobservation\taction\tweight")?;
        for (group, weights) in &self.weights {
            for (sample, &w) in self.samples.iter().zip(weights) {
                let obs = sample
                    .obs
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(",");
                let action = sample
                    .expert_joint
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                writeln!(out, "{}\t{group}\t{obs}\t{action}\t{w:?}", sample.iteration)?;
            }
        }
        Ok(())
    }

    fn append(&mut self, sample: Sample) {
        self.samples.push(sample);
    }
}

/// Dropped-rollout estimate; unbounded until the first resampling pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KDrop {
    Unbounded,
    Count(usize),
}

impl KDrop {
    fn min_with(self, k_train: usize) -> usize {
        match self {
            KDrop::Unbounded => k_train,
            KDrop::Count(c) => c.min(k_train),
        }
    }
}

/// Training-rollout budget state across iterations.
#[derive(Debug, Clone)]
pub struct RolloutBudget {
    pub k_train: usize,
    pub b_train: usize,
    pub k_drop: KDrop,
    n_train: usize,
    iteration: usize,
}

impl RolloutBudget {
    pub fn new(k_train: usize, b_train: usize) -> Self {
        Self {
            k_train,
            b_train,
            k_drop: KDrop::Unbounded,
            n_train: 0,
            iteration: 0,
        }
    }

    /// Budgeted rollouts consumed so far (the warm-up iteration is free).
    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Completed collection iterations (1-based after the first call).
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Rollouts the next iteration may collect.
    fn next_allowance(&self) -> usize {
        let m = self.iteration + 1;
        let want = self.k_drop.min_with(self.k_train);
        if m == 1 {
            want
        } else if self.n_train <= self.b_train {
            // Clipped so the budget is never overshot.
            want.min(self.b_train - self.n_train)
        } else {
            0
        }
    }
}

/// Collects the next iteration's rollouts under `profile`, relabels every
/// visited observation with the expert joint action, and appends the pairs
/// to the aggregated store. Returns the number of rollouts collected; an
/// exhausted budget yields zero rollouts, not an error.
pub fn collect_training(
    ds: &mut WeightedDataset,
    budget: &mut RolloutBudget,
    profile: &PolicyProfile,
    oracle: &TeamValueOracle,
    game: &TabularMarkovGame,
    seed: u64,
) -> Result<usize, DataError> {
    let m = budget.iteration + 1;
    let k_m = budget.next_allowance();
    for k in 0..k_m {
        let traj = game.rollout(profile, rng_seed_for_rollout(seed, m, k))?;
        for step in &traj.steps {
            let index = ds.len();
            let id = step_obs_id(oracle, &step.global_obs, index)?;
            ds.append(Sample {
                obs: step.global_obs.clone(),
                expert_joint: oracle.expert_joint_at(id).to_vec(),
                iteration: m,
            });
        }
    }
    if m > 1 {
        budget.n_train += k_m;
    }
    budget.iteration = m;
    Ok(k_m)
}

fn rng_seed_for_rollout(seed: u64, iteration: usize, k: usize) -> u64 {
    crate::rng::derive_seed(seed, STREAM_TRAIN, ((iteration as u64) << 32) | k as u64)
}

fn step_obs_id(
    oracle: &TeamValueOracle,
    obs: &[f64],
    index: usize,
) -> Result<ObsId, DataError> {
    oracle
        .resolve(obs)
        .map_err(|source| DataError::LookupMiss { index, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::envs::{random_game, RandomGameConfig};
    use crate::game::{FnPolicy, GameSpec, Policy, PolicyProvenance};
    use crate::oracle::expert_profile;

    /// Single-state game with per-joint-action rewards and zero discount, so
    /// Q tables equal the reward table.
    fn bandit_game(
        actions: Vec<usize>,
        teams: Vec<Vec<usize>>,
        rewards: Vec<f64>,
    ) -> TabularMarkovGame {
        let n = actions.len();
        let mut strides = vec![1usize; n];
        for i in (0..n - 1).rev() {
            strides[i] = strides[i + 1] * actions[i + 1];
        }
        TabularMarkovGame::new(GameSpec {
            state_count: 1,
            actions_per_agent: actions,
            teams,
            obs_dims: vec![1; n],
            observations: vec![vec![0.0; n]],
            feature_names: (0..n).map(|i| vec![format!("x{i}")]).collect(),
            transition: Arc::new(|_, _| vec![(0, 1.0)]),
            reward: Arc::new(move |_, joint, _| {
                let idx: usize = joint.iter().zip(&strides).map(|(a, s)| a * s).sum();
                rewards[idx]
            }),
            initial_dist: vec![(0, 1.0)],
            discount: 0.0,
            horizon: 5,
            env_adjacency: None,
        })
        .unwrap()
    }

    fn sample_at(obs: &[f64], joint: &[usize]) -> Sample {
        Sample {
            obs: obs.to_vec(),
            expert_joint: joint.to_vec(),
            iteration: 1,
        }
    }

    #[test]
    fn single_agent_weight_is_value_minus_worst_q() {
        let game = bandit_game(vec![2], vec![vec![0]], vec![0.2, 1.0]);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        ds.append(sample_at(game.global_obs(0), &[1]));
        let w = ds.compute_team_weights(0, &oracle).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tied_joint_actions_weight_zero() {
        let game = bandit_game(vec![2, 2], vec![vec![0, 1]], vec![0.4; 4]);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        ds.append(sample_at(game.global_obs(0), &[0, 0]));
        let w = ds.compute_team_weights(0, &oracle).unwrap();
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn two_by_two_table_weight_is_three() {
        // Qbar table {(0,0):1, (0,1):3, (1,0):0, (1,1):2}: greedy V = 3, min 0.
        let game = bandit_game(vec![2, 2], vec![vec![0, 1]], vec![1.0, 3.0, 0.0, 2.0]);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        ds.append(sample_at(game.global_obs(0), &[0, 1]));
        let w = ds.compute_team_weights(0, &oracle).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lookup_miss_reports_the_sample_index() {
        let game = bandit_game(vec![2], vec![vec![0]], vec![0.0, 1.0]);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        ds.append(sample_at(game.global_obs(0), &[0]));
        ds.append(sample_at(&[42.0], &[0]));
        match ds.compute_team_weights(0, &oracle) {
            Err(DataError::LookupMiss { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected lookup miss, got {other:?}"),
        }
    }

    fn ds_with_weights(weights: Vec<(WeightGroup, Vec<f64>)>) -> WeightedDataset {
        let n = weights[0].1.len();
        let mut ds = WeightedDataset::new(0.0);
        for i in 0..n {
            ds.append(sample_at(&[i as f64], &[0]));
        }
        ds.weights = weights.into_iter().collect();
        ds
    }

    #[test]
    fn k_drop_formula_cases() {
        // 30 samples at or below epsilon with T = 25 rounds up to 2.
        let mut w = vec![0.0; 30];
        w.extend(vec![1.0; 10]);
        let ds = ds_with_weights(vec![(WeightGroup::Team(0), w)]);
        assert_eq!(ds.compute_k_drop(25).unwrap(), 2);

        // Nothing below the threshold in any team.
        let ds = ds_with_weights(vec![
            (WeightGroup::Team(0), vec![1.0; 8]),
            (WeightGroup::Team(1), vec![0.5; 8]),
        ]);
        assert_eq!(ds.compute_k_drop(25).unwrap(), 0);

        // Counts 30 and 80 with T = 25: min(2, 4) = 2.
        let mut w0 = vec![0.0; 30];
        w0.extend(vec![1.0; 60]);
        let mut w1 = vec![0.0; 80];
        w1.extend(vec![1.0; 10]);
        let ds = ds_with_weights(vec![(WeightGroup::Team(0), w0), (WeightGroup::Team(1), w1)]);
        assert_eq!(ds.compute_k_drop(25).unwrap(), 2);
    }

    #[test]
    fn zero_weight_samples_never_resample() {
        let ds = ds_with_weights(vec![(WeightGroup::Team(0), vec![1.0, 0.0])]);
        let out = ds.resample(WeightGroup::Team(0), 10, 7).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|s| s.obs == vec![0.0]));
    }

    #[test]
    fn resampling_frequencies_match_weights() {
        let ds = ds_with_weights(vec![(WeightGroup::Team(0), vec![3.0, 1.0])]);
        let out = ds.resample(WeightGroup::Team(0), 10_000, 11).unwrap();
        let first = out.iter().filter(|s| s.obs == vec![0.0]).count() as f64 / 10_000.0;
        assert!((first - 0.75).abs() < 0.02, "frequency {first}");

        let ds = ds_with_weights(vec![(WeightGroup::Team(0), vec![1.0, 1.0])]);
        let out = ds.resample(WeightGroup::Team(0), 10_000, 13).unwrap();
        let first = out.iter().filter(|s| s.obs == vec![0.0]).count() as f64 / 10_000.0;
        assert!((first - 0.5).abs() < 0.02, "frequency {first}");
    }

    #[test]
    fn resampling_passes_chi_square_goodness_of_fit() {
        // Four weights, 10^4 draws, alpha = 0.01: critical value for
        // df = 3 is 11.345.
        let weights = vec![4.0, 3.0, 2.0, 1.0];
        let total: f64 = weights.iter().sum();
        let ds = ds_with_weights(vec![(WeightGroup::Team(0), weights.clone())]);
        let n = 10_000usize;
        let out = ds.resample(WeightGroup::Team(0), n, 17).unwrap();
        let mut counts = vec![0usize; 4];
        for s in &out {
            counts[s.obs[0] as usize] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&c, &w)| {
                let expect = w / total * n as f64;
                (c as f64 - expect).powi(2) / expect
            })
            .sum();
        assert!(chi2 < 11.345, "chi-square {chi2}");
    }

    #[test]
    fn zero_total_weight_is_an_empty_support_error() {
        let ds = ds_with_weights(vec![(WeightGroup::Team(0), vec![0.0, 0.0])]);
        assert!(matches!(
            ds.resample(WeightGroup::Team(0), 5, 1),
            Err(DataError::EmptySupport)
        ));
    }

    fn small_game_and_oracle(seed: u64) -> (TabularMarkovGame, Arc<TeamValueOracle>) {
        let game = random_game(
            &RandomGameConfig {
                state_count: 4,
                actions_per_agent: vec![2, 2],
                team_count: 1,
                horizon: 4,
                discount: 0.8,
                branching: 2,
                inert_state_prob: 0.0,
            },
            seed,
        )
        .unwrap();
        let oracle = Arc::new(TeamValueOracle::solve(&game, 1e-9).unwrap());
        (game, oracle)
    }

    #[test]
    fn warm_up_collects_k_train_without_metering() {
        let (game, oracle) = small_game_and_oracle(3);
        let profile = expert_profile(&oracle, &game).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        let mut budget = RolloutBudget::new(10, 100);
        let k = collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 5).unwrap();
        assert_eq!(k, 10);
        assert_eq!(budget.n_train(), 0);
        assert_eq!(ds.len(), 10 * game.horizon());
        assert_eq!(budget.iteration(), 1);
    }

    #[test]
    fn exhausted_budget_collects_nothing() {
        let (game, oracle) = small_game_and_oracle(4);
        let profile = expert_profile(&oracle, &game).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        let mut budget = RolloutBudget::new(3, 6);
        collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 5).unwrap();
        for _ in 0..2 {
            let k = collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 5).unwrap();
            assert_eq!(k, 3);
        }
        assert_eq!(budget.n_train(), 6);
        let k = collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 5).unwrap();
        assert_eq!(k, 0, "budget exhausted");
        assert_eq!(budget.n_train(), 6);
    }

    #[test]
    fn k_drop_bounds_collection_and_meters_the_budget() {
        let (game, oracle) = small_game_and_oracle(5);
        let profile = expert_profile(&oracle, &game).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        let mut budget = RolloutBudget::new(10, 50);
        collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 5).unwrap();
        collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 5).unwrap();
        budget.k_drop = KDrop::Count(2);
        let k = collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 5).unwrap();
        assert_eq!(budget.iteration(), 3);
        assert_eq!(k, 2);
        assert_eq!(budget.n_train(), 12);
    }

    #[test]
    fn budget_is_never_overshot() {
        let (game, oracle) = small_game_and_oracle(6);
        let profile = expert_profile(&oracle, &game).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        let mut budget = RolloutBudget::new(4, 10);
        let mut metered = 0;
        for m in 0..8 {
            let k = collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 9).unwrap();
            if m > 0 {
                metered += k;
            }
            assert!(budget.n_train() <= budget.b_train);
        }
        assert_eq!(metered, budget.n_train());
        assert_eq!(budget.n_train(), 10);
    }

    #[test]
    fn labels_come_from_the_expert_not_the_acting_policy() {
        let (game, oracle) = small_game_and_oracle(7);
        // A deliberately bad student that always plays action 1.
        let bad: Vec<Arc<dyn Policy>> = (0..2)
            .map(|_| {
                Arc::new(FnPolicy::new(
                    |_, _, _| 1,
                    PolicyProvenance::Student { iteration: 1 },
                )) as Arc<dyn Policy>
            })
            .collect();
        let profile = PolicyProfile::new(bad, &game).unwrap();
        let mut ds = WeightedDataset::new(0.0);
        let mut budget = RolloutBudget::new(5, 50);
        collect_training(&mut ds, &mut budget, &profile, &oracle, &game, 1).unwrap();
        for sample in ds.samples() {
            let id = oracle.resolve(&sample.obs).unwrap();
            assert_eq!(sample.expert_joint, oracle.expert_joint_at(id));
        }
    }

    #[test]
    fn dropped_weights_stay_dropped_across_iterations() {
        for seed in 0..4 {
            let game = random_game(
                &RandomGameConfig {
                    state_count: 5,
                    actions_per_agent: vec![2, 2],
                    team_count: 2,
                    horizon: 4,
                    discount: 0.85,
                    branching: 2,
                    inert_state_prob: 0.4,
                },
                100 + seed,
            )
            .unwrap();
            let oracle = Arc::new(TeamValueOracle::solve(&game, 1e-9).unwrap());
            let profile = expert_profile(&oracle, &game).unwrap();
            let mut ds = WeightedDataset::new(0.0);
            let mut budget = RolloutBudget::new(4, 40);
            let mut dropped: Vec<(WeightGroup, usize)> = Vec::new();
            for _ in 0..4 {
                collect_training(&mut ds, &mut budget, &profile, &oracle, &game, seed).unwrap();
                for team in 0..game.team_count() {
                    let group = WeightGroup::Team(team);
                    let w = ds.compute_team_weights(team, &oracle).unwrap().to_vec();
                    for &(g, idx) in &dropped {
                        if g == group {
                            assert_eq!(w[idx], 0.0, "sample {idx} resurrected");
                        }
                    }
                    for (idx, &p) in w.iter().enumerate() {
                        if p == 0.0 {
                            dropped.push((group, idx));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dump_writes_one_row_per_group_and_sample() {
        let ds = ds_with_weights(vec![
            (WeightGroup::Team(0), vec![1.0, 2.0]),
            (WeightGroup::Team(1), vec![0.5, 0.0]),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.tsv");
        ds.dump_tsv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 4);
        assert_eq!(lines[0], "iteration\tgroup\tobservation\taction\tweight");
        assert!(lines[1].starts_with("1\tteam0\t"));
    }
}
