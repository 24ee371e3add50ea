//! Seeded random games for verification harnesses.
//!
//! These games have dense random transitions and rewards with injective
//! observation maps, so exact oracles and brute-force enumeration agree on
//! them without observation-collision caveats.

use std::sync::Arc;

use rand::Rng;

use crate::envs::EnvError;
use crate::game::{GameSpec, TabularMarkovGame};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone)]
pub struct RandomGameConfig {
    pub state_count: usize,
    pub actions_per_agent: Vec<usize>,
    pub team_count: usize,
    pub horizon: usize,
    pub discount: f64,
    /// Next-state support size per (state, action).
    pub branching: usize,
    /// Probability that a state is inert: all joint actions share one
    /// transition row and one reward, so its Q-range is exactly zero.
    pub inert_state_prob: f64,
}

impl Default for RandomGameConfig {
    fn default() -> Self {
        Self {
            state_count: 4,
            actions_per_agent: vec![2, 2],
            team_count: 1,
            horizon: 5,
            discount: 0.9,
            branching: 2,
            inert_state_prob: 0.0,
        }
    }
}

pub fn random_game(cfg: &RandomGameConfig, seed: u64) -> Result<TabularMarkovGame, EnvError> {
    let n = cfg.actions_per_agent.len();
    if cfg.team_count == 0 || cfg.team_count > n {
        return Err(EnvError::InvalidConfig(format!(
            "team_count {} for {n} agents",
            cfg.team_count
        )));
    }
    let mut rng = rng_from_seed(seed);
    let joint_count: usize = cfg.actions_per_agent.iter().product();
    let branching = cfg.branching.clamp(1, cfg.state_count);

    // Contiguous near-balanced teams.
    let mut teams: Vec<Vec<usize>> = Vec::with_capacity(cfg.team_count);
    let base = n / cfg.team_count;
    let extra = n % cfg.team_count;
    let mut next = 0;
    for l in 0..cfg.team_count {
        let size = base + usize::from(l < extra);
        teams.push((next..next + size).collect());
        next += size;
    }

    let inert: Vec<bool> = (0..cfg.state_count)
        .map(|_| rng.random::<f64>() < cfg.inert_state_prob)
        .collect();

    let mut table: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(cfg.state_count);
    for &state_inert in &inert {
        let mut per_action: Vec<Vec<(usize, f64)>> = Vec::with_capacity(joint_count);
        for idx in 0..joint_count {
            if state_inert && idx > 0 {
                per_action.push(per_action[0].clone());
                continue;
            }
            let mut support: Vec<usize> = Vec::with_capacity(branching);
            while support.len() < branching {
                let s = rng.random_range(0..cfg.state_count);
                if !support.contains(&s) {
                    support.push(s);
                }
            }
            support.sort_unstable();
            let raw: Vec<f64> = (0..branching).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            per_action.push(
                support
                    .into_iter()
                    .zip(raw)
                    .map(|(s, w)| (s, w / total))
                    .collect(),
            );
        }
        table.push(per_action);
    }

    // Per-team reward tables over (state, team action index).
    let team_action_counts: Vec<usize> = teams
        .iter()
        .map(|members| members.iter().map(|&i| cfg.actions_per_agent[i]).product())
        .collect();
    let rewards: Vec<Vec<Vec<f64>>> = (0..cfg.team_count)
        .map(|l| {
            (0..cfg.state_count)
                .map(|state| {
                    let shared = rng.random_range(-1.0..1.0);
                    (0..team_action_counts[l])
                        .map(|_| {
                            if inert[state] {
                                shared
                            } else {
                                rng.random_range(-1.0..1.0)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    // Injective observations: the state id plus one noise feature per agent.
    let noise: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..cfg.state_count).map(|_| rng.random::<f64>()).collect())
        .collect();
    let observations: Vec<Vec<f64>> = (0..cfg.state_count)
        .map(|s| {
            (0..n)
                .flat_map(|i| [s as f64, noise[i][s]])
                .collect()
        })
        .collect();

    let teams_for_reward = teams.clone();
    let actions = cfg.actions_per_agent.clone();
    let reward = Arc::new(move |state: usize, joint: &[usize], members: &[usize]| {
        let l = teams_for_reward
            .iter()
            .position(|t| t == members)
            .expect("reward queried for an unknown team");
        let mut idx = 0;
        for &agent in members {
            idx = idx * actions[agent] + joint[agent];
        }
        rewards[l][state][idx]
    });

    let table = Arc::new(table);
    let strides = {
        let mut s = vec![1usize; n];
        for i in (0..n - 1).rev() {
            s[i] = s[i + 1] * cfg.actions_per_agent[i + 1];
        }
        s
    };
    let transition = Arc::new(move |state: usize, joint: &[usize]| {
        let idx: usize = joint.iter().zip(&strides).map(|(a, s)| a * s).sum();
        table[state][idx].clone()
    });

    let uniform = 1.0 / cfg.state_count as f64;
    Ok(TabularMarkovGame::new(GameSpec {
        state_count: cfg.state_count,
        actions_per_agent: cfg.actions_per_agent.clone(),
        teams,
        obs_dims: vec![2; n],
        observations,
        feature_names: (0..n)
            .map(|_| vec!["state_id".to_string(), "noise".to_string()])
            .collect(),
        transition,
        reward,
        initial_dist: (0..cfg.state_count).map(|s| (s, uniform)).collect(),
        discount: cfg.discount,
        horizon: cfg.horizon,
        env_adjacency: None,
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_games_pass_construction_invariants() {
        for seed in 0..5 {
            let game = random_game(
                &RandomGameConfig {
                    state_count: 5,
                    actions_per_agent: vec![2, 3],
                    team_count: 2,
                    ..Default::default()
                },
                seed,
            )
            .unwrap();
            assert_eq!(game.agent_count(), 2);
            assert_eq!(game.team_count(), 2);
        }
    }

    #[test]
    fn same_seed_builds_identical_dynamics() {
        let cfg = RandomGameConfig::default();
        let a = random_game(&cfg, 3).unwrap();
        let b = random_game(&cfg, 3).unwrap();
        for s in 0..a.state_count() {
            assert_eq!(a.global_obs(s), b.global_obs(s));
            let mut joint = vec![0; a.agent_count()];
            for idx in 0..a.joint_action_count() {
                a.decode_joint(idx, &mut joint);
                assert_eq!(a.transition_dist(s, &joint), b.transition_dist(s, &joint));
                assert_eq!(a.team_reward(0, s, &joint), b.team_reward(0, s, &joint));
            }
        }
    }
}
