//! Exact per-agent Q-functions, team mean values, and the greedy joint
//! expert.
//!
//! [`JointSolution::solve`] runs value iteration over the joint action space
//! on the *total* reward (the sum over teams), which defines the expert
//! policy independently of how agents are partitioned. A [`TeamValueOracle`]
//! then evaluates each team's own reward under that expert and tabulates
//! `Q_team(o, a)` keyed by global observation, with the expert's joint action
//! at every key. Every agent in a team shares its team's reward, so the
//! team mean `Q̄` equals the stored team table exactly.
//!
//! The team value `V̄_team(o)` is defined as the best-response value
//! `max over team actions of Q̄(o, a_team, expert opponents)`, which is what
//! the resampling weights subtract against; for a single team it coincides
//! with the usual optimal value.
//!
//! Q-tables are keyed by observation, not state. When two states share an
//! observation vector, their table rows are averaged weighted by expert
//! visit frequency, and the collision count is reported as a diagnostic.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::game::{Policy, PolicyProfile, PolicyProvenance, TabularMarkovGame};

/// Iteration cap for value iteration and policy evaluation.
const MAX_SWEEPS: usize = 100_000;

/// Cap on cached transition entries (states x joint actions x support).
const MAX_CACHED_TRANSITIONS: usize = 64_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("value iteration did not reach tolerance within {sweeps} sweeps (residual {residual:e})")]
    NonConvergence { residual: f64, sweeps: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("unknown observation key (dim {dim}, leading values {prefix:?})")]
    UnknownObservation { dim: usize, prefix: Vec<f64> },
    #[error("game too large to solve exactly: {0}")]
    TooLarge(String),
    #[error("oracle file is malformed: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Flattened transition table: row `state * joint_count + action` holds
/// `(next state, probability)` pairs.
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

impl Csr {
    fn build(game: &TabularMarkovGame) -> Result<Self, OracleError> {
        let rows = game.state_count() * game.joint_action_count();
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        let mut joint = vec![0usize; game.agent_count()];
        for state in 0..game.state_count() {
            for idx in 0..game.joint_action_count() {
                game.decode_joint(idx, &mut joint);
                let dist = game.transition_dist(state, &joint);
                for (next, p) in dist {
                    targets.push(next as u32);
                    probs.push(p);
                }
                offsets.push(targets.len());
                if targets.len() > MAX_CACHED_TRANSITIONS {
                    return Err(OracleError::TooLarge(format!(
                        "transition table exceeds {MAX_CACHED_TRANSITIONS} entries"
                    )));
                }
            }
        }
        Ok(Self {
            offsets,
            targets,
            probs,
        })
    }

    #[inline]
    fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.offsets[row];
        let hi = self.offsets[row + 1];
        self.targets[lo..hi]
            .iter()
            .zip(&self.probs[lo..hi])
            .map(|(&t, &p)| (t as usize, p))
    }
}

/// Partition-independent solution of the joint game: optimal total value and
/// greedy joint expert per state.
pub struct JointSolution {
    values: Vec<f64>,
    expert: Vec<usize>,
    residual: f64,
    sweeps: usize,
    csr: Arc<Csr>,
}

impl JointSolution {
    /// Value iteration on the total reward until the sup-norm sweep change
    /// drops below `tol`. Ties in the greedy joint action break to the
    /// lowest joint index.
    pub fn solve(game: &TabularMarkovGame, tol: f64) -> Result<Self, OracleError> {
        if tol <= 0.0 {
            return Err(OracleError::BadTolerance(tol));
        }
        let states = game.state_count();
        let joint_count = game.joint_action_count();
        let csr = Arc::new(Csr::build(game)?);

        let mut joint = vec![0usize; game.agent_count()];
        let mut total_reward = Vec::with_capacity(states * joint_count);
        for state in 0..states {
            for idx in 0..joint_count {
                game.decode_joint(idx, &mut joint);
                total_reward.push(game.total_reward(state, &joint));
            }
        }

        let gamma = game.discount();
        let mut values = vec![0.0f64; states];
        let mut residual = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            let new_values: Vec<f64> = (0..states)
                .into_par_iter()
                .map(|state| {
                    let mut best = f64::NEG_INFINITY;
                    for idx in 0..joint_count {
                        let row = state * joint_count + idx;
                        let mut q = total_reward[row];
                        for (next, p) in csr.row(row) {
                            q += gamma * p * values[next];
                        }
                        if q > best {
                            best = q;
                        }
                    }
                    best
                })
                .collect();
            residual = values
                .iter()
                .zip(&new_values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            values = new_values;
            if residual < tol {
                let expert: Vec<usize> = (0..states)
                    .into_par_iter()
                    .map(|state| {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for idx in 0..joint_count {
                            let row = state * joint_count + idx;
                            let mut q = total_reward[row];
                            for (next, p) in csr.row(row) {
                                q += gamma * p * values[next];
                            }
                            if q > best {
                                best = q;
                                best_idx = idx;
                            }
                        }
                        best_idx
                    })
                    .collect();
                return Ok(Self {
                    values,
                    expert,
                    residual,
                    sweeps,
                    csr,
                });
            }
        }
        Err(OracleError::NonConvergence {
            residual,
            sweeps: MAX_SWEEPS,
        })
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn expert_joint_index(&self, state: usize) -> usize {
        self.expert[state]
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }
}

/// Observation key: exact f64 bit patterns, so states mapping to identical
/// feature vectors collide and nothing else does.
fn obs_key(obs: &[f64]) -> Vec<u64> {
    obs.iter().map(|v| v.to_bits()).collect()
}

/// Exact per-team Q-tables and the greedy joint expert, keyed by global
/// observation. Immutable and shareable; the lookup counter is a diagnostic.
pub struct TeamValueOracle {
    agent_count: usize,
    actions_per_agent: Vec<usize>,
    strides: Vec<usize>,
    joint_count: usize,
    teams: Vec<Vec<usize>>,
    team_of: Vec<usize>,
    obs_dim: usize,
    obs_index: HashMap<Vec<u64>, usize>,
    /// Representative observation per key, in first-seen state order.
    obs_list: Vec<Vec<f64>>,
    /// Per obs, the expert's per-agent actions.
    expert_joint: Vec<Vec<usize>>,
    /// Per team: row-major `[obs][joint index]`.
    q_tables: Vec<Vec<f64>>,
    residual: f64,
    collision_count: usize,
    lookups: AtomicU64,
}

/// Opaque resolved observation handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsId(usize);

impl TeamValueOracle {
    /// Solves the game and tabulates team values in one call.
    pub fn solve(game: &TabularMarkovGame, tol: f64) -> Result<Self, OracleError> {
        let joint = JointSolution::solve(game, tol)?;
        Self::from_joint(game, &joint, tol)
    }

    /// Tabulates per-team values for `game`'s partition given a joint
    /// solution of the same dynamics.
    pub fn from_joint(
        game: &TabularMarkovGame,
        joint: &JointSolution,
        tol: f64,
    ) -> Result<Self, OracleError> {
        if tol <= 0.0 {
            return Err(OracleError::BadTolerance(tol));
        }
        let states = game.state_count();
        let joint_count = game.joint_action_count();
        let gamma = game.discount();
        let csr = &joint.csr;
        let team_count = game.team_count();

        // Per-team reward tables over (state, joint action).
        let mut decode_buf = vec![0usize; game.agent_count()];
        let mut team_rewards: Vec<Vec<f64>> = vec![Vec::with_capacity(states * joint_count); team_count];
        for state in 0..states {
            for idx in 0..joint_count {
                game.decode_joint(idx, &mut decode_buf);
                for (l, rewards) in team_rewards.iter_mut().enumerate() {
                    rewards.push(game.team_reward(l, state, &decode_buf));
                }
            }
        }

        // Policy evaluation of each team's reward under the joint expert.
        let mut team_values: Vec<Vec<f64>> = Vec::with_capacity(team_count);
        for rewards in &team_rewards {
            let mut v = vec![0.0f64; states];
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                let new_v: Vec<f64> = (0..states)
                    .into_par_iter()
                    .map(|state| {
                        let row = state * joint_count + joint.expert[state];
                        let mut val = rewards[row];
                        for (next, p) in csr.row(row) {
                            val += gamma * p * v[next];
                        }
                        val
                    })
                    .collect();
                let delta = v
                    .iter()
                    .zip(&new_v)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                v = new_v;
                if delta < tol {
                    break;
                }
                if sweeps >= MAX_SWEEPS {
                    return Err(OracleError::NonConvergence {
                        residual: delta,
                        sweeps,
                    });
                }
            }
            team_values.push(v);
        }

        // Q_team(s, a) = R_team(s, a) + gamma * E[V_team(s')].
        let q_by_state: Vec<Vec<f64>> = (0..team_count)
            .map(|l| {
                let rewards = &team_rewards[l];
                let v = &team_values[l];
                (0..states * joint_count)
                    .into_par_iter()
                    .map(|row| {
                        let mut q = rewards[row];
                        for (next, p) in csr.row(row) {
                            q += gamma * p * v[next];
                        }
                        q
                    })
                    .collect()
            })
            .collect();

        // Expert visit frequency over the game horizon, used to weight
        // states that collide on one observation key.
        let mut dist = vec![0.0f64; states];
        for &(s, p) in game.initial_dist() {
            dist[s] += p;
        }
        let mut freq = vec![0.0f64; states];
        for _ in 0..game.horizon() {
            for (s, &d) in dist.iter().enumerate() {
                freq[s] += d;
            }
            let mut next_dist = vec![0.0f64; states];
            for (s, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    let row = s * joint_count + joint.expert[s];
                    for (next, p) in csr.row(row) {
                        next_dist[next] += d * p;
                    }
                }
            }
            dist = next_dist;
        }

        // Group states by observation key.
        let mut obs_index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut obs_list: Vec<Vec<f64>> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for state in 0..states {
            let key = obs_key(game.global_obs(state));
            let next_id = obs_list.len();
            let id = *obs_index.entry(key).or_insert(next_id);
            if id == next_id {
                obs_list.push(game.global_obs(state).to_vec());
                groups.push(Vec::new());
            }
            groups[id].push(state);
        }
        let collision_count = states - obs_list.len();

        let mut q_tables: Vec<Vec<f64>> = vec![vec![0.0; obs_list.len() * joint_count]; team_count];
        for (id, members) in groups.iter().enumerate() {
            let total_freq: f64 = members.iter().map(|&s| freq[s]).sum();
            for (l, table) in q_tables.iter_mut().enumerate() {
                for idx in 0..joint_count {
                    let mut acc = 0.0;
                    if total_freq > 0.0 {
                        for &s in members {
                            acc += freq[s] / total_freq * q_by_state[l][s * joint_count + idx];
                        }
                    } else {
                        for &s in members {
                            acc += q_by_state[l][s * joint_count + idx] / members.len() as f64;
                        }
                    }
                    table[id * joint_count + idx] = acc;
                }
            }
        }

        // Expert joint action per key: greedy on the summed team tables so
        // collided keys stay self-consistent with the stored Q values.
        let mut strides = vec![1usize; game.agent_count()];
        for i in (0..game.agent_count() - 1).rev() {
            strides[i] = strides[i + 1] * game.actions_per_agent()[i + 1];
        }
        let mut expert_joint = Vec::with_capacity(obs_list.len());
        for id in 0..obs_list.len() {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0;
            for idx in 0..joint_count {
                let total: f64 = q_tables.iter().map(|t| t[id * joint_count + idx]).sum();
                if total > best {
                    best = total;
                    best_idx = idx;
                }
            }
            let mut actions = vec![0usize; game.agent_count()];
            let mut rem = best_idx;
            for (slot, &stride) in actions.iter_mut().zip(&strides) {
                *slot = rem / stride;
                rem %= stride;
            }
            expert_joint.push(actions);
        }

        Ok(Self {
            agent_count: game.agent_count(),
            actions_per_agent: game.actions_per_agent().to_vec(),
            strides,
            joint_count,
            teams: game.teams().to_vec(),
            team_of: (0..game.agent_count()).map(|i| game.team_of(i)).collect(),
            obs_dim: game.global_obs_dim(),
            obs_index,
            obs_list,
            expert_joint,
            q_tables,
            residual: joint.residual,
            collision_count,
            lookups: AtomicU64::new(0),
        })
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// States that shared an observation key with another state.
    pub fn collision_count(&self) -> usize {
        self.collision_count
    }

    pub fn obs_count(&self) -> usize {
        self.obs_list.len()
    }

    pub fn teams(&self) -> &[Vec<usize>] {
        &self.teams
    }

    pub fn team_of(&self, agent: usize) -> usize {
        self.team_of[agent]
    }

    /// Total Q-table entries read so far; exposes enumeration complexity.
    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    /// Resolves a global observation to a table handle; misses are errors,
    /// never extrapolated.
    pub fn resolve(&self, obs: &[f64]) -> Result<ObsId, OracleError> {
        self.obs_index
            .get(&obs_key(obs))
            .map(|&id| ObsId(id))
            .ok_or_else(|| OracleError::UnknownObservation {
                dim: obs.len(),
                prefix: obs.iter().take(4).copied().collect(),
            })
    }

    /// Expert per-agent actions at a resolved observation.
    pub fn expert_joint_at(&self, id: ObsId) -> &[usize] {
        &self.expert_joint[id.0]
    }

    pub fn expert_action(&self, obs: &[f64], agent: usize) -> Result<usize, OracleError> {
        Ok(self.expert_joint_at(self.resolve(obs)?)[agent])
    }

    fn joint_index(&self, joint: &[usize]) -> usize {
        joint.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    /// Team mean Q at a joint action (every agent in a team shares its
    /// team's reward, so the mean over members is the team table itself).
    pub fn qbar_at(&self, team: usize, id: ObsId, joint: &[usize]) -> f64 {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        self.q_tables[team][id.0 * self.joint_count + self.joint_index(joint)]
    }

    /// Exact min and max of `Q̄_team(o, a_team, opponents)` over the team's
    /// joint actions only. `opponents` is a full-length joint action whose
    /// team slots are ignored.
    pub fn q_range(
        &self,
        team: usize,
        obs: &[f64],
        opponents: &[usize],
    ) -> Result<(f64, f64), OracleError> {
        Ok(self.q_range_at(team, self.resolve(obs)?, opponents))
    }

    pub fn q_range_at(&self, team: usize, id: ObsId, opponents: &[usize]) -> (f64, f64) {
        let members = &self.teams[team];
        let count: usize = members
            .iter()
            .map(|&i| self.actions_per_agent[i])
            .product();
        let mut joint = opponents.to_vec();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..count {
            let mut rem = k;
            for &agent in members.iter().rev() {
                let n = self.actions_per_agent[agent];
                joint[agent] = rem % n;
                rem /= n;
            }
            let q = self.qbar_at(team, id, &joint);
            lo = lo.min(q);
            hi = hi.max(q);
        }
        (lo, hi)
    }

    /// Best-response team value: max of `Q̄` over team actions with
    /// opponents fixed to their expert actions.
    pub fn vbar_at(&self, team: usize, id: ObsId) -> f64 {
        let expert = self.expert_joint[id.0].clone();
        self.q_range_at(team, id, &expert).1
    }

    /// Range of one agent's own-team Q over its own actions with everyone
    /// else fixed to the expert. Drives the independent-resampling ablation.
    pub fn agent_range_at(&self, agent: usize, id: ObsId) -> (f64, f64) {
        let team = self.team_of[agent];
        let mut joint = self.expert_joint[id.0].clone();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in 0..self.actions_per_agent[agent] {
            joint[agent] = a;
            let q = self.qbar_at(team, id, &joint);
            lo = lo.min(q);
            hi = hi.max(q);
        }
        (lo, hi)
    }

    /// Influence of `influencer`'s action on `affected`'s Q-values: the
    /// expert-action Q minus the minimum over the influencer's deviations,
    /// with all other agents at their expert actions.
    pub fn influence_delta_at(&self, influencer: usize, affected: usize, id: ObsId) -> f64 {
        let team = self.team_of[affected];
        let mut joint = self.expert_joint[id.0].clone();
        let top = self.qbar_at(team, id, &joint);
        let mut lo = f64::INFINITY;
        for a in 0..self.actions_per_agent[influencer] {
            joint[influencer] = a;
            lo = lo.min(self.qbar_at(team, id, &joint));
        }
        top - lo
    }

    /// Writes the oracle to a binary table file (little-endian).
    pub fn save(&self, path: &Path) -> Result<(), OracleError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_u32(&mut out, self.agent_count as u32);
        for &a in &self.actions_per_agent {
            write_u32(&mut out, a as u32);
        }
        write_u32(&mut out, self.teams.len() as u32);
        for team in &self.teams {
            write_u32(&mut out, team.len() as u32);
            for &m in team {
                write_u32(&mut out, m as u32);
            }
        }
        write_u32(&mut out, self.obs_dim as u32);
        write_u32(&mut out, self.obs_list.len() as u32);
        out.extend_from_slice(&self.residual.to_le_bytes());
        write_u32(&mut out, self.collision_count as u32);
        for obs in &self.obs_list {
            for &v in obs {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for joint in &self.expert_joint {
            for &a in joint {
                write_u32(&mut out, a as u32);
            }
        }
        for table in &self.q_tables {
            for &q in table {
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads an oracle previously written by [`TeamValueOracle::save`].
    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        let magic = cur.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(OracleError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(OracleError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let agent_count = cur.u32()? as usize;
        let actions_per_agent: Vec<usize> = (0..agent_count)
            .map(|_| cur.u32().map(|v| v as usize))
            .collect::<Result<_, _>>()?;
        let team_count = cur.u32()? as usize;
        let mut teams = Vec::with_capacity(team_count);
        for _ in 0..team_count {
            let len = cur.u32()? as usize;
            let members: Vec<usize> = (0..len)
                .map(|_| cur.u32().map(|v| v as usize))
                .collect::<Result<_, _>>()?;
            teams.push(members);
        }
        let obs_dim = cur.u32()? as usize;
        let obs_count = cur.u32()? as usize;
        let residual = cur.f64()?;
        let collision_count = cur.u32()? as usize;
        let mut obs_list = Vec::with_capacity(obs_count);
        for _ in 0..obs_count {
            let obs: Vec<f64> = (0..obs_dim)
                .map(|_| cur.f64())
                .collect::<Result<_, _>>()?;
            obs_list.push(obs);
        }
        let mut expert_joint = Vec::with_capacity(obs_count);
        for _ in 0..obs_count {
            let joint: Vec<usize> = (0..agent_count)
                .map(|_| cur.u32().map(|v| v as usize))
                .collect::<Result<_, _>>()?;
            expert_joint.push(joint);
        }
        let joint_count: usize = actions_per_agent.iter().product();
        let mut q_tables = Vec::with_capacity(team_count);
        for _ in 0..team_count {
            let table: Vec<f64> = (0..obs_count * joint_count)
                .map(|_| cur.f64())
                .collect::<Result<_, _>>()?;
            q_tables.push(table);
        }
        if cur.pos != bytes.len() {
            return Err(OracleError::Format("trailing bytes".into()));
        }

        let mut strides = vec![1usize; agent_count];
        for i in (0..agent_count - 1).rev() {
            strides[i] = strides[i + 1] * actions_per_agent[i + 1];
        }
        let mut team_of = vec![0usize; agent_count];
        for (l, members) in teams.iter().enumerate() {
            for &m in members {
                if m >= agent_count {
                    return Err(OracleError::Format(format!("team member {m} out of range")));
                }
                team_of[m] = l;
            }
        }
        let obs_index = obs_list
            .iter()
            .enumerate()
            .map(|(i, obs)| (obs_key(obs), i))
            .collect();
        Ok(Self {
            agent_count,
            actions_per_agent,
            strides,
            joint_count,
            teams,
            team_of,
            obs_dim,
            obs_index,
            obs_list,
            expert_joint,
            q_tables,
            residual,
            collision_count,
            lookups: AtomicU64::new(0),
        })
    }
}

const MAGIC: &[u8] = b"HVORACLE";
const FORMAT_VERSION: u32 = 1;

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OracleError> {
        if self.pos + n > self.bytes.len() {
            return Err(OracleError::Format("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, OracleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, OracleError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// The greedy joint expert as a per-agent [`Policy`].
pub struct ExpertPolicy {
    oracle: Arc<TeamValueOracle>,
}

impl ExpertPolicy {
    pub fn new(oracle: Arc<TeamValueOracle>) -> Self {
        Self { oracle }
    }
}

impl Policy for ExpertPolicy {
    fn act(
        &self,
        _game: &TabularMarkovGame,
        agent: usize,
        global_obs: &[f64],
    ) -> Result<usize, String> {
        self.oracle
            .expert_action(global_obs, agent)
            .map_err(|e| e.to_string())
    }

    fn provenance(&self) -> PolicyProvenance {
        PolicyProvenance::Expert
    }
}

/// A profile that plays the expert for every agent.
pub fn expert_profile(
    oracle: &Arc<TeamValueOracle>,
    game: &TabularMarkovGame,
) -> Result<PolicyProfile, crate::game::GameError> {
    let policies: Vec<Arc<dyn Policy>> = (0..game.agent_count())
        .map(|_| Arc::new(ExpertPolicy::new(oracle.clone())) as Arc<dyn Policy>)
        .collect();
    PolicyProfile::new(policies, game)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_coord_targets, random_game, CoordTargetsConfig, RandomGameConfig};
    use crate::game::GameSpec;

    /// A single-state game whose Q-values equal its immediate rewards when
    /// discount is zero; `rewards` is indexed by joint action.
    fn bandit_game(actions: Vec<usize>, teams: Vec<Vec<usize>>, rewards: Vec<f64>, discount: f64) -> TabularMarkovGame {
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
            discount,
            horizon: 3,
            env_adjacency: None,
        })
        .unwrap()
    }

    #[test]
    fn geometric_series_value() {
        // Reward 1 every step at discount one half: V = 1 / (1 - 0.5) = 2.
        let game = bandit_game(vec![1], vec![vec![0]], vec![1.0], 0.5);
        let oracle = TeamValueOracle::solve(&game, 1e-10).unwrap();
        let id = oracle.resolve(game.global_obs(0)).unwrap();
        assert!((oracle.vbar_at(0, id) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn zero_reward_ties_break_to_action_zero() {
        let game = bandit_game(vec![3], vec![vec![0]], vec![0.0; 3], 0.9);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let id = oracle.resolve(game.global_obs(0)).unwrap();
        assert_eq!(oracle.expert_joint_at(id), &[0]);
        let (lo, hi) = oracle.q_range_at(0, id, &[0]);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 0.0);
    }

    /// Brute-force finite-horizon expectimax on the total reward.
    fn expectimax(game: &TabularMarkovGame, steps: usize) -> Vec<Vec<f64>> {
        let states = game.state_count();
        let joints = game.joint_action_count();
        let mut joint = vec![0usize; game.agent_count()];
        let mut v = vec![0.0f64; states];
        let mut q = vec![vec![0.0f64; joints]; states];
        for _ in 0..steps {
            let mut new_q = vec![vec![0.0f64; joints]; states];
            for s in 0..states {
                for idx in 0..joints {
                    game.decode_joint(idx, &mut joint);
                    let mut val = game.total_reward(s, &joint);
                    for (next, p) in game.transition_dist(s, &joint) {
                        val += game.discount() * p * v[next];
                    }
                    new_q[s][idx] = val;
                }
            }
            q = new_q;
            v = q
                .iter()
                .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect();
        }
        q
    }

    #[test]
    fn q_matches_truncated_expectimax() {
        let cfg = RandomGameConfig {
            state_count: 4,
            actions_per_agent: vec![2, 2],
            team_count: 1,
            horizon: 5,
            discount: 0.8,
            branching: 3,
            inert_state_prob: 0.0,
        };
        for seed in [1, 2, 3] {
            let game = random_game(&cfg, seed).unwrap();
            let oracle = TeamValueOracle::solve(&game, 1e-10).unwrap();
            let steps = 30;
            let q_ref = expectimax(&game, steps);
            // Reward magnitudes are below 1, so the truncation error is
            // bounded by gamma^steps / (1 - gamma).
            let bound = game.discount().powi(steps as i32) / (1.0 - game.discount()) + 1e-8;
            let mut joint = vec![0usize; 2];
            for s in 0..game.state_count() {
                let id = oracle.resolve(game.global_obs(s)).unwrap();
                for idx in 0..game.joint_action_count() {
                    game.decode_joint(idx, &mut joint);
                    let q = oracle.qbar_at(0, id, &joint);
                    assert!(
                        (q - q_ref[s][idx]).abs() <= bound,
                        "seed {seed} state {s} action {idx}: {q} vs {}",
                        q_ref[s][idx]
                    );
                }
            }
        }
    }

    #[test]
    fn q_range_single_agent_team() {
        let game = bandit_game(vec![2], vec![vec![0]], vec![0.2, 1.0], 0.0);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let id = oracle.resolve(game.global_obs(0)).unwrap();
        assert_eq!(oracle.q_range_at(0, id, &[0]), (0.2, 1.0));
        assert_eq!(oracle.vbar_at(0, id), 1.0);
    }

    #[test]
    fn q_range_enumerates_the_team_joint_table() {
        // Q̄ table {(0,0):1, (0,1):3, (1,0):0, (1,1):2} at discount zero.
        let game = bandit_game(
            vec![2, 2],
            vec![vec![0, 1]],
            vec![1.0, 3.0, 0.0, 2.0],
            0.0,
        );
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let id = oracle.resolve(game.global_obs(0)).unwrap();
        assert_eq!(oracle.q_range_at(0, id, &[0, 0]), (0.0, 3.0));
    }

    #[test]
    fn all_equal_q_collapses_the_range() {
        let game = bandit_game(vec![2, 2], vec![vec![0, 1]], vec![0.7; 4], 0.0);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let id = oracle.resolve(game.global_obs(0)).unwrap();
        let (lo, hi) = oracle.q_range_at(0, id, &[0, 0]);
        assert_eq!(lo, hi);
    }

    #[test]
    fn q_range_touches_exactly_the_team_action_count() {
        // Two teams over three agents: q_range for team 0 must enumerate
        // its 2 x 3 = 6 actions, not the full 12-action joint space.
        let game = bandit_game(
            vec![2, 3, 2],
            vec![vec![0, 1], vec![2]],
            (0..12).map(|i| i as f64).collect(),
            0.0,
        );
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let id = oracle.resolve(game.global_obs(0)).unwrap();
        let before = oracle.lookup_count();
        oracle.q_range_at(0, id, &[0, 0, 1]);
        assert_eq!(oracle.lookup_count() - before, 6);
        let before = oracle.lookup_count();
        oracle.q_range_at(1, id, &[0, 0, 0]);
        assert_eq!(oracle.lookup_count() - before, 2);
    }

    #[test]
    fn bellman_residual_below_tolerance_everywhere() {
        let cfg = RandomGameConfig {
            state_count: 6,
            actions_per_agent: vec![2, 2],
            team_count: 2,
            discount: 0.9,
            ..Default::default()
        };
        let game = random_game(&cfg, 11).unwrap();
        let tol = 1e-8;
        let joint = JointSolution::solve(&game, tol).unwrap();
        let mut buf = vec![0usize; 2];
        for s in 0..game.state_count() {
            let mut best = f64::NEG_INFINITY;
            for idx in 0..game.joint_action_count() {
                game.decode_joint(idx, &mut buf);
                let mut q = game.total_reward(s, &buf);
                for (next, p) in game.transition_dist(s, &buf) {
                    q += game.discount() * p * joint.value(next);
                }
                best = best.max(q);
            }
            assert!((joint.value(s) - best).abs() < tol, "state {s}");
        }
        assert!(joint.residual() < tol);
    }

    #[test]
    fn greedy_expert_is_finite_horizon_optimal_on_coord_targets() {
        let cfg = CoordTargetsConfig {
            grid_side: 3,
            n_agents: 2,
            collision_penalty: -1.0,
            horizon: 4,
            discount: 0.95,
        };
        let game = build_coord_targets(&cfg).unwrap();
        let oracle = TeamValueOracle::solve(&game, 1e-8).unwrap();

        // Exhaustive undiscounted finite-horizon optimum by backward DP.
        let t = game.horizon();
        let mut joint = vec![0usize; 2];
        let mut best = vec![0.0f64; game.state_count()];
        for _ in 0..t {
            let mut next_best = vec![f64::NEG_INFINITY; game.state_count()];
            for s in 0..game.state_count() {
                let r = game.team_reward(0, s, &[0, 0]);
                for idx in 0..game.joint_action_count() {
                    game.decode_joint(idx, &mut joint);
                    let (succ, _) = game.transition_dist(s, &joint)[0];
                    next_best[s] = next_best[s].max(r + best[succ]);
                }
            }
            best = next_best;
        }

        for s0 in 0..game.state_count() {
            let mut s = s0;
            let mut total = 0.0;
            for _ in 0..t {
                let id = oracle.resolve(game.global_obs(s)).unwrap();
                let action = oracle.expert_joint_at(id).to_vec();
                total += game.team_reward(0, s, &action);
                s = game.transition_dist(s, &action)[0].0;
            }
            assert!(
                (total - best[s0]).abs() < 1e-6,
                "start {s0}: expert {total} vs optimum {}",
                best[s0]
            );
        }
    }

    #[test]
    fn observation_collisions_average_by_visit_frequency() {
        // Two self-loop states with identical observations and rewards 0/1
        // at discount 0; with a uniform start the merged Q is 0.5.
        let game = TabularMarkovGame::new(GameSpec {
            state_count: 2,
            actions_per_agent: vec![1],
            teams: vec![vec![0]],
            obs_dims: vec![1],
            observations: vec![vec![0.0], vec![0.0]],
            feature_names: vec![vec!["x".into()]],
            transition: Arc::new(|s, _| vec![(s, 1.0)]),
            reward: Arc::new(|s, _, _| s as f64),
            initial_dist: vec![(0, 0.5), (1, 0.5)],
            discount: 0.0,
            horizon: 4,
            env_adjacency: None,
        })
        .unwrap();
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        assert_eq!(oracle.collision_count(), 1);
        assert_eq!(oracle.obs_count(), 1);
        let id = oracle.resolve(&[0.0]).unwrap();
        assert!((oracle.qbar_at(0, id, &[0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_observation_is_an_error() {
        let game = bandit_game(vec![2], vec![vec![0]], vec![0.0, 1.0], 0.0);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        assert!(matches!(
            oracle.resolve(&[123.0]),
            Err(OracleError::UnknownObservation { .. })
        ));
    }

    #[test]
    fn unreachable_tolerance_reports_non_convergence() {
        // With a contraction rate this close to one, sweep changes cannot
        // fall below tolerance within the iteration cap.
        let game = bandit_game(vec![1], vec![vec![0]], vec![1.0], 1.0 - 1e-15);
        match JointSolution::solve(&game, 1e-9) {
            Err(OracleError::NonConvergence { residual, sweeps }) => {
                assert!(residual > 1e-9);
                assert_eq!(sweeps, 100_000);
            }
            Err(other) => panic!("expected non-convergence, got {other:?}"),
            Ok(_) => panic!("expected non-convergence, got a solution"),
        }
        assert!(matches!(
            JointSolution::solve(&game, 0.0),
            Err(OracleError::BadTolerance(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = RandomGameConfig {
            state_count: 5,
            actions_per_agent: vec![2, 3],
            team_count: 2,
            ..Default::default()
        };
        let game = random_game(&cfg, 21).unwrap();
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.bin");
        oracle.save(&path).unwrap();
        let loaded = TeamValueOracle::load(&path).unwrap();
        assert_eq!(loaded.obs_count(), oracle.obs_count());
        assert_eq!(loaded.collision_count(), oracle.collision_count());
        let mut joint = vec![0usize; 2];
        for s in 0..game.state_count() {
            let a = oracle.resolve(game.global_obs(s)).unwrap();
            let b = loaded.resolve(game.global_obs(s)).unwrap();
            assert_eq!(oracle.expert_joint_at(a), loaded.expert_joint_at(b));
            for idx in 0..game.joint_action_count() {
                game.decode_joint(idx, &mut joint);
                for team in 0..game.team_count() {
                    assert_eq!(
                        oracle.qbar_at(team, a, &joint),
                        loaded.qbar_at(team, b, &joint)
                    );
                }
            }
        }
    }

    #[test]
    fn truncated_oracle_file_is_rejected() {
        let game = bandit_game(vec![2], vec![vec![0]], vec![0.0, 1.0], 0.0);
        let oracle = TeamValueOracle::solve(&game, 1e-9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.bin");
        oracle.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            TeamValueOracle::load(&path),
            Err(OracleError::Format(_))
        ));
    }
}
