//! Fixed-budget best-arm identification with a modified UCB1.
//!
//! Arms are policy-profile snapshots; a pull is one validation rollout whose
//! observation is the team's undiscounted mean return. Every arm first gets
//! `ceil(2 ln B)` warm-up pulls, the remaining budget follows the UCB index
//! `mean + sqrt(c ln B / count)`, and the final answer is the arm with the
//! highest empirical mean (ties to the lowest index). The selection loop is
//! generic over a pull closure so synthetic-arm tests drive the exact
//! production path.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("at least one arm is required")]
    NoArms,
    #[error("warm-up needs {arms} x {n_min} pulls but the budget is {budget}")]
    BudgetTooSmall {
        arms: usize,
        n_min: usize,
        budget: usize,
    },
}

/// Initial per-arm rollouts: `ceil(2 ln B_valid)`.
pub fn n_min(b_valid: usize) -> usize {
    (2.0 * (b_valid as f64).ln()).ceil() as usize
}

/// UCB index `mean + sqrt(c ln B / count)`. `b_valid` is accepted as a real
/// so the index is usable as a pure formula; `count` must be at least one
/// (unpulled arms are force-played by the selection loop, never scored).
pub fn ucb_index(mean: f64, count: usize, b_valid: f64, c: f64) -> f64 {
    mean + (c * b_valid.ln() / count as f64).sqrt()
}

/// The confidence scale achieving a `B^-4` deviation bound for returns
/// spanning at most `delta`: `2 * delta^2`.
pub fn c_for_range(delta: f64) -> f64 {
    2.0 * delta * delta
}

/// One audit-log row: the pulled arm, the observed return, and the arm's
/// updated running mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PullRecord {
    pub arm: usize,
    pub observed: f64,
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct BanditOutcome {
    pub best_arm: usize,
    pub counts: Vec<usize>,
    pub means: Vec<f64>,
    pub pulls: Vec<PullRecord>,
}

impl BanditOutcome {
    pub fn total_pulls(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct SelectConfig {
    pub b_valid: usize,
    pub c: f64,
    /// When warm-up alone would exceed the budget, shrink it to
    /// `max(1, B/M)` pulls per arm instead of failing.
    pub allow_reduced_warmup: bool,
}

/// Runs warm-up plus UCB-driven pulls within `b_valid` total rollouts and
/// returns the empirical-best arm. `pull(arm, k)` performs the `k`-th
/// overall rollout on `arm` and returns its observed mean return.
pub fn select_profile<F>(
    num_arms: usize,
    cfg: &SelectConfig,
    mut pull: F,
) -> Result<BanditOutcome, BanditError>
where
    F: FnMut(usize, usize) -> f64,
{
    if num_arms == 0 {
        return Err(BanditError::NoArms);
    }
    let target = n_min(cfg.b_valid);
    let warmup = if num_arms * target <= cfg.b_valid {
        target
    } else if cfg.allow_reduced_warmup {
        (cfg.b_valid / num_arms).max(1)
    } else {
        return Err(BanditError::BudgetTooSmall {
            arms: num_arms,
            n_min: target,
            budget: cfg.b_valid,
        });
    };

    let mut counts = vec![0usize; num_arms];
    let mut means = vec![0.0f64; num_arms];
    let mut pulls = Vec::with_capacity(cfg.b_valid);
    let mut total = 0usize;

    let observe =
        |arm: usize, total: usize, counts: &mut [usize], means: &mut [f64], pulls: &mut Vec<PullRecord>, pull: &mut F| {
            let observed = pull(arm, total);
            counts[arm] += 1;
            let n = counts[arm] as f64;
            means[arm] += (observed - means[arm]) / n;
            pulls.push(PullRecord {
                arm,
                observed,
                mean: means[arm],
            });
        };

    'warmup: for arm in 0..num_arms {
        for _ in 0..warmup {
            if total >= cfg.b_valid {
                break 'warmup;
            }
            observe(arm, total, &mut counts, &mut means, &mut pulls, &mut pull);
            total += 1;
        }
    }

    while total < cfg.b_valid {
        // Any unpulled arm is force-played before the index applies.
        let arm = if let Some(arm) = counts.iter().position(|&n| n == 0) {
            arm
        } else {
            let mut best = 0usize;
            let mut best_index = f64::NEG_INFINITY;
            for arm in 0..num_arms {
                let index = ucb_index(means[arm], counts[arm], cfg.b_valid as f64, cfg.c);
                if index > best_index {
                    best_index = index;
                    best = arm;
                }
            }
            best
        };
        observe(arm, total, &mut counts, &mut means, &mut pulls, &mut pull);
        total += 1;
    }

    let mut best_arm = 0usize;
    let mut best_mean = f64::NEG_INFINITY;
    for arm in 0..num_arms {
        if counts[arm] > 0 && means[arm] > best_mean {
            best_mean = means[arm];
            best_arm = arm;
        }
    }
    Ok(BanditOutcome {
        best_arm,
        counts,
        means,
        pulls,
    })
}

/// Uniform-allocation fallback used when the adaptive allocator is ablated:
/// `floor(B/M)` pulls per arm (at least the first `B` arms get one when the
/// floor is zero), final answer by empirical mean.
pub fn select_uniform<F>(
    num_arms: usize,
    b_valid: usize,
    mut pull: F,
) -> Result<BanditOutcome, BanditError>
where
    F: FnMut(usize, usize) -> f64,
{
    if num_arms == 0 {
        return Err(BanditError::NoArms);
    }
    let per_arm = (b_valid / num_arms).max(1);
    let mut counts = vec![0usize; num_arms];
    let mut means = vec![0.0f64; num_arms];
    let mut pulls = Vec::new();
    let mut total = 0usize;
    'outer: for arm in 0..num_arms {
        for _ in 0..per_arm {
            if total >= b_valid {
                break 'outer;
            }
            let observed = pull(arm, total);
            counts[arm] += 1;
            let n = counts[arm] as f64;
            means[arm] += (observed - means[arm]) / n;
            pulls.push(PullRecord {
                arm,
                observed,
                mean: means[arm],
            });
            total += 1;
        }
    }
    let mut best_arm = 0usize;
    let mut best_mean = f64::NEG_INFINITY;
    for arm in 0..num_arms {
        if counts[arm] > 0 && means[arm] > best_mean {
            best_mean = means[arm];
            best_arm = arm;
        }
    }
    Ok(BanditOutcome {
        best_arm,
        counts,
        means,
        pulls,
    })
}
