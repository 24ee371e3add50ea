//! Signal-corridor queueing game.
//!
//! A line of signalised intersections, one agent each. Every intersection
//! has one queue per phase; choosing a phase releases that queue in full.
//! Released vehicles join the downstream intersection's lane 0 (pass-through
//! traffic, which couples neighbouring agents' values) or exit at the end of
//! the corridor. Exogenous arrivals hit the corridor entrance (lane 0 of
//! intersection 0) and every side lane with independent per-step
//! probabilities. The per-step reward of a team is the negated total queue
//! length across its intersections; queues cap at `queue_cap` and overflow
//! is dropped.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvError, MAX_STATES};
use crate::game::{GameSpec, TabularMarkovGame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorConfig {
    pub n_intersections: usize,
    pub queue_cap: usize,
    /// One probability per entry lane: the corridor entrance first, then the
    /// side lanes of each intersection in (intersection, lane) order.
    pub arrival_probs: Vec<f64>,
    pub phases_per_intersection: usize,
    pub horizon: usize,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    0.95
}

/// Entry lanes in arrival_probs order: the corridor entrance, then every
/// side lane by (intersection, lane).
fn entry_lanes(n: usize, phases: usize) -> Vec<(usize, usize)> {
    let mut lanes = vec![(0, 0)];
    for i in 0..n {
        for k in 1..phases {
            lanes.push((i, k));
        }
    }
    lanes
}

struct Layout {
    n: usize,
    phases: usize,
    base: usize, // queue_cap + 1
}

impl Layout {
    fn lane_count(&self) -> usize {
        self.n * self.phases
    }

    fn decode(&self, mut state: usize) -> Vec<usize> {
        let mut queues = vec![0usize; self.lane_count()];
        for slot in queues.iter_mut().rev() {
            *slot = state % self.base;
            state /= self.base;
        }
        queues
    }

    fn encode(&self, queues: &[usize]) -> usize {
        queues.iter().fold(0, |acc, &q| acc * self.base + q)
    }

    fn lane(&self, intersection: usize, phase: usize) -> usize {
        intersection * self.phases + phase
    }
}

/// Queues after service and pass-through, before arrivals.
fn serve(layout: &Layout, queues: &[usize], joint: &[usize], cap: usize) -> Vec<usize> {
    let mut next = queues.to_vec();
    let mut released = vec![0usize; layout.n];
    for (i, &phase) in joint.iter().enumerate() {
        let lane = layout.lane(i, phase);
        released[i] = next[lane];
        next[lane] = 0;
    }
    for (i, &count) in released.iter().enumerate().take(layout.n - 1) {
        let downstream = layout.lane(i + 1, 0);
        next[downstream] = (next[downstream] + count).min(cap);
    }
    next
}

pub fn build_corridor(cfg: &CorridorConfig) -> Result<TabularMarkovGame, EnvError> {
    if !(2..=7).contains(&cfg.n_intersections) {
        return Err(EnvError::InvalidConfig(
            "n_intersections must be in 2..=7".into(),
        ));
    }
    if cfg.phases_per_intersection < 2 {
        return Err(EnvError::InvalidConfig(
            "phases_per_intersection must be at least 2".into(),
        ));
    }
    if cfg.queue_cap == 0 {
        return Err(EnvError::InvalidConfig("queue_cap must be positive".into()));
    }
    let entries = entry_lanes(cfg.n_intersections, cfg.phases_per_intersection);
    if cfg.arrival_probs.len() != entries.len() {
        return Err(EnvError::InvalidConfig(format!(
            "expected {} arrival probabilities ({} entry lanes), got {}",
            entries.len(),
            entries.len(),
            cfg.arrival_probs.len()
        )));
    }
    if cfg.arrival_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(EnvError::InvalidConfig(
            "arrival probabilities must lie in [0, 1]".into(),
        ));
    }

    let layout = Arc::new(Layout {
        n: cfg.n_intersections,
        phases: cfg.phases_per_intersection,
        base: cfg.queue_cap + 1,
    });
    let lanes = layout.lane_count();
    let state_count = layout
        .base
        .checked_pow(lanes as u32)
        .filter(|&s| s <= MAX_STATES)
        .ok_or(EnvError::StateSpaceTooLarge {
            size: usize::MAX,
            limit: MAX_STATES,
        })?;

    // Observations: own queue per lane, then upstream and downstream
    // neighbour queue totals (zero at the corridor ends).
    let obs_dim = cfg.phases_per_intersection + 2;
    let mut observations = Vec::with_capacity(state_count);
    for state in 0..state_count {
        let queues = layout.decode(state);
        let totals: Vec<usize> = (0..layout.n)
            .map(|i| (0..layout.phases).map(|k| queues[layout.lane(i, k)]).sum())
            .collect();
        let mut obs = Vec::with_capacity(obs_dim * layout.n);
        for i in 0..layout.n {
            for k in 0..layout.phases {
                obs.push(queues[layout.lane(i, k)] as f64);
            }
            obs.push(if i > 0 { totals[i - 1] as f64 } else { 0.0 });
            obs.push(if i + 1 < layout.n { totals[i + 1] as f64 } else { 0.0 });
        }
        observations.push(obs);
    }

    let feature_names = (0..cfg.n_intersections)
        .map(|_| {
            let mut names: Vec<String> = (0..cfg.phases_per_intersection)
                .map(|k| format!("queue_lane{k}"))
                .collect();
            names.push("upstream_total".into());
            names.push("downstream_total".into());
            names
        })
        .collect();

    // Only lanes with nonzero arrival probability branch the transition.
    let arrivals: Vec<(usize, f64)> = entries
        .iter()
        .zip(&cfg.arrival_probs)
        .filter(|&(_, &p)| p > 0.0)
        .map(|(&(i, k), &p)| (layout.lane(i, k), p))
        .collect();

    let transition = {
        let layout = layout.clone();
        let arrivals = arrivals.clone();
        let cap = cfg.queue_cap;
        Arc::new(move |state: usize, joint: &[usize]| {
            let queues = layout.decode(state);
            let served = serve(&layout, &queues, joint, cap);
            let mut dist: BTreeMap<usize, f64> = BTreeMap::new();
            for mask in 0u32..(1 << arrivals.len()) {
                let mut prob = 1.0;
                let mut next = served.clone();
                for (bit, &(lane, p)) in arrivals.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        prob *= p;
                        next[lane] = (next[lane] + 1).min(cap);
                    } else {
                        prob *= 1.0 - p;
                    }
                }
                if prob > 0.0 {
                    *dist.entry(layout.encode(&next)).or_insert(0.0) += prob;
                }
            }
            dist.into_iter().collect()
        })
    };

    // Team reward: negated total stopped vehicles at the member
    // intersections in the current state.
    let reward = {
        let layout = layout.clone();
        Arc::new(move |state: usize, _joint: &[usize], members: &[usize]| {
            let queues = layout.decode(state);
            let mut total = 0usize;
            for &i in members {
                for k in 0..layout.phases {
                    total += queues[layout.lane(i, k)];
                }
            }
            -(total as f64)
        })
    };

    let empty_state = 0; // all queues zero
    Ok(TabularMarkovGame::new(GameSpec {
        state_count,
        actions_per_agent: vec![cfg.phases_per_intersection; cfg.n_intersections],
        teams: vec![(0..cfg.n_intersections).collect()],
        obs_dims: vec![obs_dim; cfg.n_intersections],
        observations,
        feature_names,
        transition,
        reward,
        initial_dist: vec![(empty_state, 1.0)],
        discount: cfg.discount,
        horizon: cfg.horizon,
        env_adjacency: Some(
            (0..cfg.n_intersections - 1).map(|i| (i, i + 1)).collect(),
        ),
    })?)
}
