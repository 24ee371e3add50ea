//! Agent influence graphs and balanced partitioning into teams.
//!
//! The Q-influence distance between two agents inverts their symmetrised
//! influence: `delta(i -> j)` is how much agent i's action can move agent
//! j's Q-values (expert everywhere else), averaged over a probe set of
//! expert-visited observations, and `d(i, j) = 2 / (delta_ij + delta_ji)`.
//! Inverse distances become integer percentile weights in `[1, 100]`
//! (min -> 1, max -> 100, linear rank interpolation over distinct values;
//! zero-influence pairs floor at weight 1).
//!
//! Partitioning splits the weighted graph into near-equal clusters that
//! minimize inter-cluster weight: recursive bisection with best-improving
//! pairwise-swap refinement over seeded restarts. Cluster sizes always
//! differ by at most one, so no team degenerates to the whole agent set.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::oracle::{OracleError, TeamValueOracle};
use crate::rng::{rng_for, STREAM_PARTITION};

/// Refinement restarts per bisection.
const RESTARTS: u64 = 8;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cannot split {n} agents into {l} teams")]
    InvalidPartCount { l: usize, n: usize },
    #[error("distance for pair ({i}, {j}) is missing")]
    MissingPair { i: usize, j: usize },
    #[error("agent {0} paired with itself")]
    SelfPair(usize),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pairwise distance, with an explicit marker for zero mutual influence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    Finite(f64),
    Infinite,
}

/// Influence ranges and the symmetrised distance for one agent pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairInfluence {
    pub delta_ij: f64,
    pub delta_ji: f64,
    pub distance: Distance,
}

/// Mean influence of each agent on the other over the probe observations,
/// and the inverted symmetrised distance `2 / (delta_ij + delta_ji)`.
pub fn q_influence_distance(
    oracle: &TeamValueOracle,
    probes: &[Vec<f64>],
    i: usize,
    j: usize,
) -> Result<PairInfluence, ClusterError> {
    if i == j {
        return Err(ClusterError::SelfPair(i));
    }
    let mut delta_ij = 0.0;
    let mut delta_ji = 0.0;
    for obs in probes {
        let id = oracle.resolve(obs)?;
        delta_ij += oracle.influence_delta_at(i, j, id);
        delta_ji += oracle.influence_delta_at(j, i, id);
    }
    delta_ij /= probes.len() as f64;
    delta_ji /= probes.len() as f64;
    let sum = delta_ij + delta_ji;
    let distance = if sum > 0.0 {
        Distance::Finite(2.0 / sum)
    } else {
        Distance::Infinite
    };
    Ok(PairInfluence {
        delta_ij,
        delta_ji,
        distance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    QInfluence,
    EnvGraph,
}

#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    /// Percentile-rescaled integer weight in `[1, 100]`.
    pub weight: u32,
    /// Raw symmetrised distance, retained for audit.
    pub distance: Distance,
    pub delta_ij: f64,
    pub delta_ji: f64,
}

/// Symmetric agent graph with integer percentile edge weights.
pub struct AgentGraph {
    n: usize,
    edges: Vec<GraphEdge>,
    mode: GraphMode,
}

impl AgentGraph {
    /// Builds the complete graph from pairwise influences: weights are
    /// inverse distances mapped to percentile ranks, and zero-influence
    /// pairs floor at weight 1.
    pub fn from_influences(
        n: usize,
        pairs: &[(usize, usize, PairInfluence)],
    ) -> Result<Self, ClusterError> {
        for i in 0..n {
            for j in i + 1..n {
                if !pairs
                    .iter()
                    .any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i))
                {
                    return Err(ClusterError::MissingPair { i, j });
                }
            }
        }
        // Distinct inverse distances, ranked min -> 1, max -> 100.
        let mut raw: Vec<f64> = pairs
            .iter()
            .filter_map(|&(_, _, p)| match p.distance {
                Distance::Finite(d) => Some(1.0 / d),
                Distance::Infinite => None,
            })
            .collect();
        raw.sort_by(|a, b| a.partial_cmp(b).unwrap());
        raw.dedup();
        let rank_weight = |value: f64| -> u32 {
            if raw.len() <= 1 {
                return 100;
            }
            let rank = raw.partition_point(|&v| v < value);
            1 + ((99.0 * rank as f64 / (raw.len() - 1) as f64).round() as u32)
        };
        let edges = pairs
            .iter()
            .map(|&(i, j, p)| {
                let (i, j) = if i < j { (i, j) } else { (j, i) };
                let weight = match p.distance {
                    Distance::Finite(d) => rank_weight(1.0 / d),
                    Distance::Infinite => 1,
                };
                GraphEdge {
                    i,
                    j,
                    weight,
                    distance: p.distance,
                    delta_ij: p.delta_ij,
                    delta_ji: p.delta_ji,
                }
            })
            .collect();
        Ok(Self {
            n,
            edges,
            mode: GraphMode::QInfluence,
        })
    }

    /// Copies an inherent environment adjacency; every adjacency edge gets
    /// full weight and non-adjacent pairs carry no edge.
    pub fn from_env_adjacency(n: usize, adjacency: &[(usize, usize)]) -> Self {
        let edges = adjacency
            .iter()
            .map(|&(i, j)| {
                let (i, j) = if i < j { (i, j) } else { (j, i) };
                GraphEdge {
                    i,
                    j,
                    weight: 100,
                    distance: Distance::Finite(1.0),
                    delta_ij: 0.0,
                    delta_ji: 0.0,
                }
            })
            .collect();
        Self {
            n,
            edges,
            mode: GraphMode::EnvGraph,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn weight(&self, i: usize, j: usize) -> u32 {
        self.edges
            .iter()
            .find(|e| (e.i, e.j) == (i.min(j), i.max(j)))
            .map(|e| e.weight)
            .unwrap_or(0)
    }

    fn weight_matrix(&self) -> Vec<Vec<f64>> {
        let mut w = vec![vec![0.0; self.n]; self.n];
        for e in &self.edges {
            w[e.i][e.j] = e.weight as f64;
            w[e.j][e.i] = e.weight as f64;
        }
        w
    }

    /// Total weight crossing a partition.
    pub fn cut_weight(&self, teams: &[Vec<usize>]) -> f64 {
        let mut team_of = vec![usize::MAX; self.n];
        for (l, members) in teams.iter().enumerate() {
            for &m in members {
                team_of[m] = l;
            }
        }
        self.edges
            .iter()
            .filter(|e| team_of[e.i] != team_of[e.j])
            .map(|e| e.weight as f64)
            .sum()
    }

    /// Splits the nodes into `l` teams whose sizes differ by at most one,
    /// minimizing inter-team weight by recursive bisection with pairwise
    /// swap refinement. Deterministic given the graph and seed.
    pub fn partition(&self, l: usize, seed: u64) -> Result<Vec<Vec<usize>>, ClusterError> {
        if l == 0 || l > self.n {
            return Err(ClusterError::InvalidPartCount { l, n: self.n });
        }
        let base = self.n / l;
        let extra = self.n % l;
        let sizes: Vec<usize> = (0..l).map(|p| base + usize::from(p < extra)).collect();
        let w = self.weight_matrix();
        let nodes: Vec<usize> = (0..self.n).collect();
        let mut rng = rng_for(seed, STREAM_PARTITION, 0);
        let mut teams = split_recursive(nodes, &sizes, &w, &mut rng);
        for team in &mut teams {
            team.sort_unstable();
        }
        teams.sort_by_key(|team| team[0]);
        Ok(teams)
    }

    /// Edge list plus the chosen partition labels, as text.
    pub fn edge_list_string(&self, teams: &[Vec<usize>]) -> String {
        let mut team_of = vec![usize::MAX; self.n];
        for (l, members) in teams.iter().enumerate() {
            for &m in members {
                team_of[m] = l;
            }
        }
        let mut out = String::from("# node\tteam\n");
        for (node, team) in team_of.iter().enumerate() {
            out.push_str(&format!("{node}\t{team}\n"));
        }
        out.push_str("# i\tj\tweight\n");
        for e in &self.edges {
            out.push_str(&format!("{}\t{}\t{}\n", e.i, e.j, e.weight));
        }
        out
    }

    /// Edge list plus the chosen partition labels as a text file.
    pub fn dump_edge_list(&self, path: &Path, teams: &[Vec<usize>]) -> Result<(), ClusterError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(self.edge_list_string(teams).as_bytes())?;
        Ok(())
    }
}

fn split_recursive(
    nodes: Vec<usize>,
    sizes: &[usize],
    w: &[Vec<f64>],
    rng: &mut impl rand::Rng,
) -> Vec<Vec<usize>> {
    if sizes.len() == 1 {
        return vec![nodes];
    }
    let half = sizes.len().div_ceil(2);
    let left_total: usize = sizes[..half].iter().sum();
    let (a, b) = bisect(&nodes, left_total, w, rng);
    let mut out = split_recursive(a, &sizes[..half], w, rng);
    out.extend(split_recursive(b, &sizes[half..], w, rng));
    out
}

/// Minimum-cut bisection of `nodes` into sizes `(size_a, rest)` by seeded
/// restarts of best-improving pairwise swaps.
fn bisect(
    nodes: &[usize],
    size_a: usize,
    w: &[Vec<f64>],
    rng: &mut impl rand::Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let mut perm = nodes.to_vec();
        perm.shuffle(rng);
        let mut a: Vec<usize> = perm[..size_a].to_vec();
        let mut b: Vec<usize> = perm[size_a..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        loop {
            let mut best_swap: Option<(f64, usize, usize)> = None;
            for (ai, &u) in a.iter().enumerate() {
                for (bi, &v) in b.iter().enumerate() {
                    let gain = swap_gain(u, v, &a, &b, w);
                    if gain > 1e-12 && best_swap.is_none_or(|(g, ..)| gain > g) {
                        best_swap = Some((gain, ai, bi));
                    }
                }
            }
            match best_swap {
                Some((_, ai, bi)) => {
                    std::mem::swap(&mut a[ai], &mut b[bi]);
                    a.sort_unstable();
                    b.sort_unstable();
                }
                None => break,
            }
        }
        let cut = cut_between(&a, &b, w);
        if best.as_ref().is_none_or(|(c, ..)| cut < *c) {
            best = Some((cut, a, b));
        }
    }
    let (_, a, b) = best.unwrap();
    (a, b)
}

fn cut_between(a: &[usize], b: &[usize], w: &[Vec<f64>]) -> f64 {
    a.iter().map(|&u| b.iter().map(|&v| w[u][v]).sum::<f64>()).sum()
}

/// Cut reduction from swapping `u` (side A) with `v` (side B).
fn swap_gain(u: usize, v: usize, a: &[usize], b: &[usize], w: &[Vec<f64>]) -> f64 {
    let ext_u: f64 = b.iter().map(|&x| w[u][x]).sum();
    let int_u: f64 = a.iter().filter(|&&x| x != u).map(|&x| w[u][x]).sum();
    let ext_v: f64 = a.iter().map(|&x| w[v][x]).sum();
    let int_v: f64 = b.iter().filter(|&&x| x != v).map(|&x| w[v][x]).sum();
    (ext_u - int_u) + (ext_v - int_v) - 2.0 * w[u][v]
}
