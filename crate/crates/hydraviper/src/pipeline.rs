//! End-to-end orchestration: clustering, iterative collection/resampling/
//! tree training, bandit selection, held-out evaluation, and run reports.
//!
//! A run is a pure function of `(config, seed)`: every stochastic draw flows
//! through tagged sub-seed streams, so report rows are byte-stable across
//! re-runs. Stage wall-times are accumulated separately (training rollouts,
//! resampling, tree training, validation, plus setup/clustering/evaluation)
//! and are the only non-deterministic part of a report.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{select_profile, select_uniform, BanditOutcome, SelectConfig};
use crate::cluster::{q_influence_distance, AgentGraph};
use crate::data::{collect_training, KDrop, RolloutBudget, WeightGroup, WeightedDataset};
use crate::dtree::{train_dt, DecisionTreePolicy, LabeledSample, StudentPolicy};
use crate::envs::{build_coord_targets, build_corridor, CoordTargetsConfig, CorridorConfig};
use crate::game::{Policy, PolicyProfile, TabularMarkovGame};
use crate::oracle::{expert_profile, JointSolution, TeamValueOracle};
use crate::rng::{derive_seed, STREAM_EVAL, STREAM_PARTITION, STREAM_PROBE, STREAM_VALID};

/// Held-out rollouts for the final profile evaluation.
pub const EVAL_ROLLOUTS: usize = 10;

/// Expert rollouts whose observations form the clustering probe set.
pub const PROBE_ROLLOUTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Setup,
    Clustering,
    TrainingRollouts,
    Resampling,
    DtTraining,
    Validation,
    Evaluation,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Setup => "setup",
            Stage::Clustering => "clustering",
            Stage::TrainingRollouts => "training-rollouts",
            Stage::Resampling => "resampling",
            Stage::DtTraining => "dt-training",
            Stage::Validation => "validation",
            Stage::Evaluation => "evaluation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn at<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    CoordTargets(CoordTargetsConfig),
    Corridor(CorridorConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringMode {
    #[default]
    QInfluence,
    EnvGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Number of teams; 1 leaves the environment's own team structure.
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub mode: ClusteringMode,
}

fn default_l() -> usize {
    1
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            l: 1,
            mode: ClusteringMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    /// Replace team-level weights with per-agent independent weights.
    #[serde(default)]
    pub disable_cq: bool,
    /// Collect a fixed `k_train` rollouts per iteration instead of the
    /// drop-count allowance.
    #[serde(default)]
    pub disable_tra: bool,
    /// Allocate validation rollouts uniformly instead of by UCB.
    #[serde(default)]
    pub disable_vrucb: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    #[default]
    Hydraviper,
    ImitationDt,
}

impl std::fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineMode::Hydraviper => "hydraviper",
            BaselineMode::ImitationDt => "imitation_dt",
        })
    }
}

/// One experiment: environment, budgets, hyperparameters, ablations, seeds.
/// Round-trips losslessly through its JSON file form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    /// Training iterations M.
    pub iterations: usize,
    pub k_train: usize,
    pub b_train: usize,
    pub b_valid: usize,
    /// Drop threshold for sample weights.
    #[serde(default)]
    pub epsilon: f64,
    /// UCB confidence scale.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    /// Value-iteration tolerance.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub baseline: BaselineMode,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_c() -> f64 {
    4.0
}

fn default_depth() -> usize {
    4
}

fn default_tol() -> f64 {
    1e-8
}

fn default_output_dir() -> String {
    "out".to_string()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.iterations == 0 {
            return Err(PipelineError::Config("iterations must be positive".into()));
        }
        for (name, v) in [
            ("k_train", self.k_train),
            ("b_train", self.b_train),
            ("b_valid", self.b_valid),
        ] {
            if v == 0 {
                return Err(PipelineError::Config(format!("{name} must be positive")));
            }
        }
        if self.epsilon < 0.0 {
            return Err(PipelineError::Config("epsilon must be nonnegative".into()));
        }
        if self.c < 0.0 {
            return Err(PipelineError::Config("c must be nonnegative".into()));
        }
        if self.tol <= 0.0 {
            return Err(PipelineError::Config("tol must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(PipelineError::Config("at least one seed is required".into()));
        }
        if self.clustering.l == 0 {
            return Err(PipelineError::Config("clustering.l must be positive".into()));
        }
        Ok(())
    }
}

/// Per-stage wall-times in seconds. `wall_s` spans the whole run; the other
/// fields decompose it.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub setup_s: f64,
    pub clustering_s: f64,
    pub training_s: f64,
    pub resampling_s: f64,
    pub dt_training_s: f64,
    pub validation_s: f64,
    pub evaluation_s: f64,
    pub wall_s: f64,
}

impl StageTimings {
    /// Sum of every decomposed stage, setup and evaluation included.
    pub fn stage_sum(&self) -> f64 {
        self.setup_s
            + self.clustering_s
            + self.training_s
            + self.resampling_s
            + self.dt_training_s
            + self.validation_s
            + self.evaluation_s
    }

    /// Runtime of the distillation algorithm itself: the expert oracle is an
    /// input, so setup is excluded.
    pub fn algorithm_total(&self) -> f64 {
        self.stage_sum() - self.setup_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcbLogRow {
    pub team: usize,
    pub pull: usize,
    pub arm: usize,
    pub observed: f64,
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct TeamReport {
    pub team: usize,
    pub members: Vec<usize>,
    /// Selected snapshot iteration m* (1-based).
    pub selected_iteration: usize,
    /// Mean undiscounted team return over the held-out rollouts.
    pub eval_mean_return: f64,
    pub valid_rollouts: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub baseline: BaselineMode,
    pub seed: u64,
    pub teams: Vec<TeamReport>,
    /// Budgeted training rollouts consumed (warm-up excluded).
    pub train_rollouts_metered: usize,
    /// All training rollouts collected, warm-up included.
    pub train_rollouts_total: usize,
    pub samples: usize,
    pub b_train: usize,
    pub b_valid: usize,
    pub timings: StageTimings,
    pub ucb_log: Vec<UcbLogRow>,
    /// Selected tree per agent, serialized with environment feature names.
    pub tree_texts: Vec<String>,
    /// Agent graph and partition labels when clustering ran.
    pub agent_graph_dump: Option<String>,
}

impl RunReport {
    pub fn csv_header() -> &'static str {
        "baseline,seed,team,members,selected_iteration,eval_mean_return,\
         train_rollouts_metered,train_rollouts_total,valid_rollouts,b_train,b_valid,samples"
    }

    /// One deterministic row per team; timings are deliberately excluded so
    /// re-runs are byte-identical.
    pub fn csv_rows(&self) -> Vec<String> {
        self.teams
            .iter()
            .map(|t| {
                format!(
                    "{},{},{},{},{},{:?},{},{},{},{},{},{}",
                    self.baseline,
                    self.seed,
                    t.team,
                    t.members
                        .iter()
                        .map(|m| m.to_string())
                        .collect::<Vec<_>>()
                        .join("+"),
                    t.selected_iteration,
                    t.eval_mean_return,
                    self.train_rollouts_metered,
                    self.train_rollouts_total,
                    t.valid_rollouts,
                    self.b_train,
                    self.b_valid,
                    self.samples
                )
            })
            .collect()
    }

    pub fn timings_csv_header() -> &'static str {
        "baseline,seed,setup_s,clustering_s,training_s,resampling_s,dt_training_s,\
         validation_s,evaluation_s,wall_s"
    }

    pub fn timings_csv_row(&self) -> String {
        let t = &self.timings;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.baseline,
            self.seed,
            t.setup_s,
            t.clustering_s,
            t.training_s,
            t.resampling_s,
            t.dt_training_s,
            t.validation_s,
            t.evaluation_s,
            t.wall_s
        )
    }

    pub fn ucb_csv_header() -> &'static str {
        "seed,team,pull,arm,observed,mean"
    }

    pub fn ucb_csv_rows(&self) -> Vec<String> {
        self.ucb_log
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{:?},{:?}",
                    self.seed, r.team, r.pull, r.arm, r.observed, r.mean
                )
            })
            .collect()
    }
}

/// Seed-independent preparation: the base game and the joint expert
/// solution, shared across seeds and team partitions of the same dynamics.
pub struct PreparedDynamics {
    base_game: Arc<TabularMarkovGame>,
    joint: Arc<JointSolution>,
    tol: f64,
    /// Seconds spent building the game and solving the joint values.
    pub solve_s: f64,
}

impl PreparedDynamics {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let start = Instant::now();
        let game = match &cfg.environment {
            EnvironmentSpec::CoordTargets(c) => {
                build_coord_targets(c).map_err(at(Stage::Setup))?
            }
            EnvironmentSpec::Corridor(c) => build_corridor(c).map_err(at(Stage::Setup))?,
        };
        let joint = JointSolution::solve(&game, cfg.tol).map_err(at(Stage::Setup))?;
        Ok(Self {
            base_game: Arc::new(game),
            joint: Arc::new(joint),
            tol: cfg.tol,
            solve_s: start.elapsed().as_secs_f64(),
        })
    }

    /// Prepares arbitrary game dynamics directly, bypassing the built-in
    /// environment builders.
    pub fn from_game(game: Arc<TabularMarkovGame>, tol: f64) -> Result<Self, PipelineError> {
        let start = Instant::now();
        let joint = JointSolution::solve(&game, tol).map_err(at(Stage::Setup))?;
        Ok(Self {
            base_game: game,
            joint: Arc::new(joint),
            tol,
            solve_s: start.elapsed().as_secs_f64(),
        })
    }

    pub fn base_game(&self) -> &Arc<TabularMarkovGame> {
        &self.base_game
    }
}

fn timed<T>(acc: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *acc += start.elapsed().as_secs_f64();
    out
}

/// Clustering decision for one run: the team partition plus the graph dump
/// when a graph was built.
fn decide_teams(
    cfg: &ExperimentConfig,
    prep: &PreparedDynamics,
    seed: u64,
    timings: &mut StageTimings,
) -> Result<(Vec<Vec<usize>>, Option<String>), PipelineError> {
    let base = &prep.base_game;
    if cfg.clustering.l <= 1 {
        return Ok((base.teams().to_vec(), None));
    }
    if matches!(cfg.environment, EnvironmentSpec::CoordTargets(_)) {
        return Err(PipelineError::Config(
            "coord_targets is a single-team environment; clustering.l must be 1".into(),
        ));
    }
    let l = cfg.clustering.l;
    let graph = match cfg.clustering.mode {
        ClusteringMode::EnvGraph => timed(&mut timings.clustering_s, || {
            let adjacency = base.env_adjacency().ok_or_else(|| {
                PipelineError::Config(
                    "env_graph clustering needs an environment adjacency".into(),
                )
            })?;
            Ok::<_, PipelineError>(AgentGraph::from_env_adjacency(
                base.agent_count(),
                adjacency,
            ))
        })?,
        ClusteringMode::QInfluence => {
            // Per-agent stakes need one singleton team per agent. Deriving
            // the per-agent Q tables is expert preparation, so it counts as
            // setup; only the probes and distances are clustering work.
            let (singleton, oracle) = timed(&mut timings.setup_s, || {
                let singleton = base
                    .with_teams((0..base.agent_count()).map(|i| vec![i]).collect())
                    .map_err(at(Stage::Clustering))?;
                let oracle = Arc::new(
                    TeamValueOracle::from_joint(&singleton, &prep.joint, prep.tol)
                        .map_err(at(Stage::Clustering))?,
                );
                Ok::<_, PipelineError>((singleton, oracle))
            })?;
            timed(&mut timings.clustering_s, || {
                let profile =
                    expert_profile(&oracle, &singleton).map_err(at(Stage::Clustering))?;
                let mut probes = Vec::new();
                for k in 0..PROBE_ROLLOUTS {
                    let traj = singleton
                        .rollout(&profile, derive_seed(seed, STREAM_PROBE, k as u64))
                        .map_err(at(Stage::Clustering))?;
                    probes.extend(traj.steps.into_iter().map(|s| s.global_obs));
                }
                let mut pairs = Vec::new();
                for i in 0..base.agent_count() {
                    for j in i + 1..base.agent_count() {
                        let pair = q_influence_distance(&oracle, &probes, i, j)
                            .map_err(at(Stage::Clustering))?;
                        pairs.push((i, j, pair));
                    }
                }
                AgentGraph::from_influences(base.agent_count(), &pairs)
                    .map_err(at(Stage::Clustering))
            })?
        }
    };
    timed(&mut timings.clustering_s, || {
        let teams = graph
            .partition(l, derive_seed(seed, STREAM_PARTITION, 1))
            .map_err(at(Stage::Clustering))?;
        let dump = graph.edge_list_string(&teams);
        Ok((teams, Some(dump)))
    })
}

fn student_profile(
    game: &TabularMarkovGame,
    trees: &[Arc<DecisionTreePolicy>],
    iteration: usize,
) -> Result<PolicyProfile, PipelineError> {
    let policies: Vec<Arc<dyn Policy>> = trees
        .iter()
        .map(|tree| {
            Arc::new(StudentPolicy {
                tree: tree.clone(),
                iteration,
            }) as Arc<dyn Policy>
        })
        .collect();
    PolicyProfile::new(policies, game).map_err(at(Stage::DtTraining))
}

/// Trains one agent's tree from resampled sample indices (unit weights).
fn train_agent_tree(
    game: &TabularMarkovGame,
    ds: &WeightedDataset,
    resampled: &[usize],
    agent: usize,
    max_depth: usize,
) -> Result<Arc<DecisionTreePolicy>, PipelineError> {
    let slice = game.obs_slice(agent);
    let samples = ds.samples();
    let labeled: Vec<LabeledSample> = resampled
        .iter()
        .map(|&idx| {
            let s = &samples[idx];
            LabeledSample {
                features: s.obs[slice.clone()].to_vec(),
                action: s.expert_joint[agent],
                weight: 1.0,
            }
        })
        .collect();
    let n_actions = game.actions_per_agent()[agent];
    Ok(Arc::new(
        train_dt(&labeled, n_actions, max_depth, agent).map_err(at(Stage::DtTraining))?,
    ))
}

/// Runs the full pipeline for one seed against prepared dynamics.
pub fn run_hydraviper(
    cfg: &ExperimentConfig,
    seed: u64,
    prep: &PreparedDynamics,
    dataset_dump: Option<&Path>,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let wall = Instant::now();
    let mut timings = StageTimings::default();

    let (teams, agent_graph_dump) = decide_teams(cfg, prep, seed, &mut timings)?;
    let (game, oracle, expert) = timed(&mut timings.setup_s, || {
        let game = prep
            .base_game
            .with_teams(teams)
            .map_err(at(Stage::Setup))?;
        let oracle = Arc::new(
            TeamValueOracle::from_joint(&game, &prep.joint, prep.tol).map_err(at(Stage::Setup))?,
        );
        let expert = expert_profile(&oracle, &game).map_err(at(Stage::Setup))?;
        Ok::<_, PipelineError>((Arc::new(game), oracle, expert))
    })?;

    let mut ds = WeightedDataset::new(cfg.epsilon);
    let mut budget = RolloutBudget::new(cfg.k_train, cfg.b_train);
    let mut profile = expert.clone();
    let mut total_collected = 0usize;
    // snapshots[m-1][agent]
    let mut snapshots: Vec<Vec<Arc<DecisionTreePolicy>>> = Vec::with_capacity(cfg.iterations);

    for m in 1..=cfg.iterations {
        total_collected += timed(&mut timings.training_s, || {
            collect_training(&mut ds, &mut budget, &profile, &oracle, &game, seed)
                .map_err(at(Stage::TrainingRollouts))
        })?;

        // Weight groups: one per team, or one per agent when the
        // centralised weighting is ablated.
        let groups: Vec<(WeightGroup, Vec<usize>)> = if cfg.ablation.disable_cq {
            (0..game.agent_count())
                .map(|i| (WeightGroup::Agent(i), vec![i]))
                .collect()
        } else {
            game.teams()
                .iter()
                .enumerate()
                .map(|(l, members)| (WeightGroup::Team(l), members.clone()))
                .collect()
        };

        let resampled: Vec<(WeightGroup, Vec<usize>, Vec<usize>)> =
            timed(&mut timings.resampling_s, || {
                // Observations resolve once; the per-group passes reuse the
                // handles.
                let ids = ds.resolve_all(&oracle).map_err(at(Stage::Resampling))?;
                let mut k_drop_iter = usize::MAX;
                let mut out = Vec::with_capacity(groups.len());
                for (group, members) in &groups {
                    match group {
                        WeightGroup::Team(l) => {
                            ds.compute_team_weights_at(*l, &oracle, &ids)
                                .map_err(at(Stage::Resampling))?;
                        }
                        WeightGroup::Agent(i) => {
                            ds.compute_agent_weights_at(*i, &oracle, &ids)
                                .map_err(at(Stage::Resampling))?;
                        }
                    }
                    let dropped = ds
                        .k_drop_for_group(*group, game.horizon())
                        .map_err(at(Stage::Resampling))?;
                    k_drop_iter = k_drop_iter.min(dropped);
                    let drawn = ds
                        .resample_indices(
                            *group,
                            ds.len(),
                            derive_seed(seed, crate::rng::STREAM_RESAMPLE, pack(m, group)),
                        )
                        .map_err(at(Stage::Resampling))?;
                    out.push((*group, members.clone(), drawn));
                }
                if !cfg.ablation.disable_tra {
                    budget.k_drop = KDrop::Count(k_drop_iter);
                }
                Ok::<_, PipelineError>(out)
            })?;

        let trees_m: Vec<Arc<DecisionTreePolicy>> = timed(&mut timings.dt_training_s, || {
            let mut trees: Vec<Option<Arc<DecisionTreePolicy>>> =
                vec![None; game.agent_count()];
            for (_, members, drawn) in &resampled {
                for &agent in members {
                    trees[agent] =
                        Some(train_agent_tree(&game, &ds, drawn, agent, cfg.max_depth)?);
                }
            }
            Ok::<_, PipelineError>(trees.into_iter().map(|t| t.unwrap()).collect())
        })?;

        profile = student_profile(&game, &trees_m, m)?;
        snapshots.push(trees_m);
    }

    if let Some(path) = dataset_dump {
        ds.dump_tsv(path).map_err(at(Stage::Resampling))?;
    }

    // Per-team bandit selection over the M snapshots, students vs expert
    // opponents.
    let mut selected: Vec<usize> = Vec::with_capacity(game.team_count());
    let mut ucb_log = Vec::new();
    let mut valid_rollouts = Vec::with_capacity(game.team_count());
    timed(&mut timings.validation_s, || {
        for (team, members) in game.teams().iter().enumerate() {
            let arm_profiles: Vec<PolicyProfile> = snapshots
                .iter()
                .enumerate()
                .map(|(idx, trees)| {
                    student_profile(&game, trees, idx + 1)
                        .map(|students| expert.with_replaced(members, &students))
                })
                .collect::<Result<_, _>>()?;
            let mut rollout_err = None;
            let pull = |arm: usize, k: usize| -> f64 {
                let rollout_seed =
                    derive_seed(seed, STREAM_VALID, ((team as u64) << 32) | k as u64);
                match game
                    .rollout(&arm_profiles[arm], rollout_seed)
                    .and_then(|traj| traj.mean_return(team))
                {
                    Ok(ret) => ret,
                    Err(e) => {
                        rollout_err.get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                }
            };
            let outcome: BanditOutcome = if cfg.ablation.disable_vrucb {
                select_uniform(snapshots.len(), cfg.b_valid, pull)
            } else {
                select_profile(
                    snapshots.len(),
                    &SelectConfig {
                        b_valid: cfg.b_valid,
                        c: cfg.c,
                        allow_reduced_warmup: true,
                    },
                    pull,
                )
            }
            .map_err(at(Stage::Validation))?;
            if let Some(e) = rollout_err {
                return Err(at::<crate::game::GameError>(Stage::Validation)(e));
            }
            for (pull_idx, record) in outcome.pulls.iter().enumerate() {
                ucb_log.push(UcbLogRow {
                    team,
                    pull: pull_idx,
                    arm: record.arm,
                    observed: record.observed,
                    mean: record.mean,
                });
            }
            valid_rollouts.push(outcome.total_pulls());
            selected.push(outcome.best_arm);
        }
        Ok::<_, PipelineError>(())
    })?;

    // Final profile: each team's selected snapshot.
    let final_trees: Vec<Arc<DecisionTreePolicy>> = (0..game.agent_count())
        .map(|agent| snapshots[selected[game.team_of(agent)]][agent].clone())
        .collect();
    let report = finish_run(
        cfg,
        seed,
        &game,
        &final_trees,
        selected.iter().map(|&m| m + 1).collect(),
        valid_rollouts,
        &budget,
        total_collected,
        ds.len(),
        ucb_log,
        agent_graph_dump,
        timings,
        wall,
    )?;
    Ok(report)
}

/// The non-iterative baseline: expert-collected data, one unweighted
/// training pass, no selection.
pub fn run_imitation_dt(
    cfg: &ExperimentConfig,
    seed: u64,
    prep: &PreparedDynamics,
    dataset_dump: Option<&Path>,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let wall = Instant::now();
    let mut timings = StageTimings::default();

    let (teams, agent_graph_dump) = decide_teams(cfg, prep, seed, &mut timings)?;
    let (game, oracle, expert) = timed(&mut timings.setup_s, || {
        let game = prep
            .base_game
            .with_teams(teams)
            .map_err(at(Stage::Setup))?;
        let oracle = Arc::new(
            TeamValueOracle::from_joint(&game, &prep.joint, prep.tol).map_err(at(Stage::Setup))?,
        );
        let expert = expert_profile(&oracle, &game).map_err(at(Stage::Setup))?;
        Ok::<_, PipelineError>((Arc::new(game), oracle, expert))
    })?;

    // The same total interaction budget as the iterative pipeline's
    // maximum: warm-up plus the whole training budget, all expert-driven.
    let mut ds = WeightedDataset::new(cfg.epsilon);
    let mut budget = RolloutBudget::new(cfg.k_train + cfg.b_train, cfg.b_train);
    let total_collected = timed(&mut timings.training_s, || {
        collect_training(&mut ds, &mut budget, &expert, &oracle, &game, seed)
            .map_err(at(Stage::TrainingRollouts))
    })?;

    let all_indices: Vec<usize> = (0..ds.len()).collect();
    let trees: Vec<Arc<DecisionTreePolicy>> = timed(&mut timings.dt_training_s, || {
        (0..game.agent_count())
            .map(|agent| train_agent_tree(&game, &ds, &all_indices, agent, cfg.max_depth))
            .collect::<Result<_, _>>()
    })?;

    if let Some(path) = dataset_dump {
        ds.dump_tsv(path).map_err(at(Stage::Resampling))?;
    }

    let report = finish_run(
        cfg,
        seed,
        &game,
        &trees,
        vec![1; game.team_count()],
        vec![0; game.team_count()],
        &budget,
        total_collected,
        ds.len(),
        Vec::new(),
        agent_graph_dump,
        timings,
        wall,
    )?;
    Ok(report)
}

/// Dispatches on the configured baseline.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    prep: &PreparedDynamics,
    dataset_dump: Option<&Path>,
) -> Result<RunReport, PipelineError> {
    match cfg.baseline {
        BaselineMode::Hydraviper => run_hydraviper(cfg, seed, prep, dataset_dump),
        BaselineMode::ImitationDt => run_imitation_dt(cfg, seed, prep, dataset_dump),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    cfg: &ExperimentConfig,
    seed: u64,
    game: &Arc<TabularMarkovGame>,
    final_trees: &[Arc<DecisionTreePolicy>],
    selected_iterations: Vec<usize>,
    valid_rollouts: Vec<usize>,
    budget: &RolloutBudget,
    total_collected: usize,
    samples: usize,
    ucb_log: Vec<UcbLogRow>,
    agent_graph_dump: Option<String>,
    mut timings: StageTimings,
    wall: Instant,
) -> Result<RunReport, PipelineError> {
    // Held-out evaluation of the full student profile on fresh seeds.
    let final_profile = student_profile(game, final_trees, 0)?;
    let eval_returns: Vec<Vec<f64>> = timed(&mut timings.evaluation_s, || {
        (0..EVAL_ROLLOUTS)
            .map(|k| {
                let traj = game
                    .rollout(&final_profile, derive_seed(seed, STREAM_EVAL, k as u64))
                    .map_err(at(Stage::Evaluation))?;
                (0..game.team_count())
                    .map(|team| traj.mean_return(team).map_err(at(Stage::Evaluation)))
                    .collect()
            })
            .collect::<Result<_, _>>()
    })?;

    let teams = game
        .teams()
        .iter()
        .enumerate()
        .map(|(team, members)| {
            let mean = eval_returns.iter().map(|r| r[team]).sum::<f64>()
                / eval_returns.len() as f64;
            TeamReport {
                team,
                members: members.clone(),
                selected_iteration: selected_iterations[team],
                eval_mean_return: mean,
                valid_rollouts: valid_rollouts[team],
            }
        })
        .collect();

    let tree_texts = final_trees
        .iter()
        .enumerate()
        .map(|(agent, tree)| tree.to_text(Some(game.feature_names(agent))))
        .collect();

    timings.wall_s = wall.elapsed().as_secs_f64();
    Ok(RunReport {
        baseline: cfg.baseline,
        seed,
        teams,
        train_rollouts_metered: budget.n_train(),
        train_rollouts_total: total_collected,
        samples,
        b_train: cfg.b_train,
        b_valid: cfg.b_valid,
        timings,
        ucb_log,
        tree_texts,
        agent_graph_dump,
    })
}

fn pack(m: usize, group: &WeightGroup) -> u64 {
    let (kind, idx) = match group {
        WeightGroup::Team(l) => (0u64, *l as u64),
        WeightGroup::Agent(i) => (1u64, *i as u64),
    };
    ((m as u64) << 32) | (kind << 16) | idx
}

/// The eight ablation-flag combinations, full pipeline first.
pub fn ablation_grid() -> Vec<AblationFlags> {
    let mut grid = Vec::with_capacity(8);
    for bits in 0..8u8 {
        grid.push(AblationFlags {
            disable_cq: bits & 1 != 0,
            disable_tra: bits & 2 != 0,
            disable_vrucb: bits & 4 != 0,
        });
    }
    grid
}
