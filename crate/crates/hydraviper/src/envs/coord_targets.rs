//! Coordinated-targets grid game.
//!
//! A single team of agents on a square grid must split up so that every
//! target is covered by a nearby agent. The per-step team reward is the
//! negated sum over targets of the closest agent's Manhattan distance, plus
//! a penalty per colliding agent pair. Dynamics are deterministic; the
//! initial state is uniform over all position combinations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvError, MAX_STATES};
use crate::game::{GameSpec, TabularMarkovGame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordTargetsConfig {
    pub grid_side: usize,
    pub n_agents: usize,
    #[serde(default = "default_collision_penalty")]
    pub collision_penalty: f64,
    pub horizon: usize,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_collision_penalty() -> f64 {
    -1.0
}

fn default_discount() -> f64 {
    0.95
}

/// Moves are indexed stay, up, down, left, right; off-grid moves stay put.
const MOVES: [(isize, isize); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

/// Target cells, one per agent, spread to distinct corners.
fn target_cells(grid_side: usize, n_agents: usize) -> Vec<(usize, usize)> {
    let g = grid_side - 1;
    match n_agents {
        2 => vec![(0, 0), (g, g)],
        _ => vec![(0, 0), (g, g), (0, g)],
    }
}

fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

struct Layout {
    grid_side: usize,
    n_agents: usize,
    cells: usize,
}

impl Layout {
    fn decode(&self, mut state: usize) -> Vec<(usize, usize)> {
        let mut cells = vec![0usize; self.n_agents];
        for slot in cells.iter_mut().rev() {
            *slot = state % self.cells;
            state /= self.cells;
        }
        cells
            .into_iter()
            .map(|c| (c / self.grid_side, c % self.grid_side))
            .collect()
    }

    fn encode(&self, positions: &[(usize, usize)]) -> usize {
        positions
            .iter()
            .fold(0, |acc, &(r, c)| acc * self.cells + (r * self.grid_side + c))
    }
}

/// Reward at a state: negated min-distance coverage plus collision penalties.
fn state_reward(
    positions: &[(usize, usize)],
    targets: &[(usize, usize)],
    collision_penalty: f64,
) -> f64 {
    let coverage: usize = targets
        .iter()
        .map(|&t| positions.iter().map(|&p| manhattan(p, t)).min().unwrap())
        .sum();
    let mut colliding_pairs = 0usize;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if positions[i] == positions[j] {
                colliding_pairs += 1;
            }
        }
    }
    -(coverage as f64) + collision_penalty * colliding_pairs as f64
}

pub fn build_coord_targets(cfg: &CoordTargetsConfig) -> Result<TabularMarkovGame, EnvError> {
    if cfg.grid_side < 2 {
        return Err(EnvError::InvalidConfig("grid_side must be at least 2".into()));
    }
    if !(2..=3).contains(&cfg.n_agents) {
        return Err(EnvError::InvalidConfig("n_agents must be 2 or 3".into()));
    }
    if cfg.collision_penalty > 0.0 {
        return Err(EnvError::InvalidConfig(
            "collision_penalty must be non-positive".into(),
        ));
    }
    let cells = cfg.grid_side * cfg.grid_side;
    let state_count = cells
        .checked_pow(cfg.n_agents as u32)
        .filter(|&s| s <= MAX_STATES)
        .ok_or(EnvError::StateSpaceTooLarge {
            size: usize::MAX,
            limit: MAX_STATES,
        })?;
    if state_count > MAX_STATES {
        return Err(EnvError::StateSpaceTooLarge {
            size: state_count,
            limit: MAX_STATES,
        });
    }

    let layout = Arc::new(Layout {
        grid_side: cfg.grid_side,
        n_agents: cfg.n_agents,
        cells,
    });
    let targets = target_cells(cfg.grid_side, cfg.n_agents);

    // Observations: own position, relative target offsets, relative offsets
    // of the other agents in index order.
    let obs_dim = 2 + 2 * targets.len() + 2 * (cfg.n_agents - 1);
    let mut observations = Vec::with_capacity(state_count);
    for state in 0..state_count {
        let positions = layout.decode(state);
        let mut obs = Vec::with_capacity(obs_dim * cfg.n_agents);
        for (i, &(r, c)) in positions.iter().enumerate() {
            obs.push(r as f64);
            obs.push(c as f64);
            for &(tr, tc) in &targets {
                obs.push(tr as f64 - r as f64);
                obs.push(tc as f64 - c as f64);
            }
            for (j, &(or, oc)) in positions.iter().enumerate() {
                if j != i {
                    obs.push(or as f64 - r as f64);
                    obs.push(oc as f64 - c as f64);
                }
            }
        }
        observations.push(obs);
    }

    let mut feature_names = Vec::with_capacity(cfg.n_agents);
    for i in 0..cfg.n_agents {
        let mut names = vec!["own_row".to_string(), "own_col".to_string()];
        for t in 0..targets.len() {
            names.push(format!("target{t}_drow"));
            names.push(format!("target{t}_dcol"));
        }
        for j in 0..cfg.n_agents {
            if j != i {
                names.push(format!("agent{j}_drow"));
                names.push(format!("agent{j}_dcol"));
            }
        }
        feature_names.push(names);
    }

    let transition = {
        let layout = layout.clone();
        let grid = cfg.grid_side as isize;
        Arc::new(move |state: usize, joint: &[usize]| {
            let mut positions = layout.decode(state);
            for (pos, &action) in positions.iter_mut().zip(joint) {
                let (dr, dc) = MOVES[action];
                let r = (pos.0 as isize + dr).clamp(0, grid - 1);
                let c = (pos.1 as isize + dc).clamp(0, grid - 1);
                *pos = (r as usize, c as usize);
            }
            vec![(layout.encode(&positions), 1.0)]
        })
    };

    let reward = {
        let layout = layout.clone();
        let targets = targets.clone();
        let penalty = cfg.collision_penalty;
        Arc::new(move |state: usize, _joint: &[usize], _members: &[usize]| {
            state_reward(&layout.decode(state), &targets, penalty)
        })
    };

    let uniform = 1.0 / state_count as f64;
    let initial_dist = (0..state_count).map(|s| (s, uniform)).collect();

    Ok(TabularMarkovGame::new(GameSpec {
        state_count,
        actions_per_agent: vec![MOVES.len(); cfg.n_agents],
        teams: vec![(0..cfg.n_agents).collect()],
        obs_dims: vec![obs_dim; cfg.n_agents],
        observations,
        feature_names,
        transition,
        reward,
        initial_dist,
        discount: cfg.discount,
        horizon: cfg.horizon,
        env_adjacency: None,
    })?)
}
