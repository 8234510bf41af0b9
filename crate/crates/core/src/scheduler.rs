//! Opportunistic user scheduling: exhaustively enumerates every size-`N`
//! subset of the `K` users, solves the beamforming problem on each subset's
//! reduced channel, and keeps the subset with the largest sum rate.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::numeric::derive_seed;
use crate::{Error, Result};

/// Reduced problem handed to the per-subset solver.
#[derive(Debug, Clone)]
pub struct SubsetProblem {
    /// Scheduled user indices into the full pool, strictly increasing.
    pub indices: Vec<usize>,
    /// Lexicographic rank of this subset among all `C(K, N)` subsets.
    pub rank: u64,
    /// Reduced channel matrix (one row per scheduled user).
    pub h: DMatrix<Complex64>,
    /// Reduced path gains.
    pub rho: Vec<f64>,
    /// Receiver noise variance.
    pub noise_variance: f64,
    /// Transmit power budget.
    pub total_power: f64,
    /// Stream seed for this subset, derived from the trial seed and the
    /// subset rank so evaluation order cannot change any result.
    pub seed: u64,
}

/// Winning subset together with the evidence the search saw.
#[derive(Debug, Clone)]
pub struct ScheduleResult<S> {
    /// Scheduled user indices, strictly increasing.
    pub subset: Vec<usize>,
    /// Lexicographic rank of the winner.
    pub rank: u64,
    /// The winner's sum rate (the selection metric).
    pub rate: f64,
    /// Rank-indexed rates of every enumerated subset; `None` marks subsets
    /// whose solver failed and was skipped.
    pub per_subset_rates: Vec<Option<f64>>,
    /// The winner's solver output.
    pub solution: S,
}

/// Number of size-`n` subsets of a size-`k` pool.
pub fn subset_count(k: usize, n: usize) -> u64 {
    if n > k {
        return 0;
    }
    let n = n.min(k - n);
    let mut c = 1u64;
    for i in 0..n {
        c = c * (k - i) as u64 / (i + 1) as u64;
    }
    c
}

/// Iterator over all size-`n` subsets of `{0, …, k−1}` in lexicographic
/// order.
pub struct Subsets {
    current: Vec<usize>,
    k: usize,
    done: bool,
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        // Advance to the lexicographic successor: bump the rightmost index
        // that still has room, then pack the tail tightly after it.
        let n = self.current.len();
        let mut i = n;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] < self.k - (n - i) {
                self.current[i] += 1;
                for j in (i + 1)..n {
                    self.current[j] = self.current[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Enumerates every size-`n` subset of `{0, …, k−1}` lexicographically.
pub fn enumerate_subsets(k: usize, n: usize) -> Result<Subsets> {
    if n == 0 || n > k {
        return Err(Error::Domain(format!(
            "cannot schedule {n} users out of a pool of {k}"
        )));
    }
    Ok(Subsets {
        current: (0..n).collect(),
        k,
        done: false,
    })
}

/// Exhaustive scheduling: solves every subset's reduced problem and returns
/// the argmax by sum rate, ties broken toward the lexicographically first
/// subset.
///
/// Subsets are evaluated in parallel; determinism is preserved by seeding
/// each solver call from `(trial_seed, rank)` and reducing rank-ordered
/// results sequentially. A subset whose solver errors is skipped with a
/// warning; if every subset fails the search itself fails.
pub fn select_best<S, F>(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise_variance: f64,
    total_power: f64,
    n: usize,
    trial_seed: u64,
    solver: F,
) -> Result<ScheduleResult<S>>
where
    S: Send,
    F: Fn(&SubsetProblem) -> Result<(f64, S)> + Sync,
{
    let k = h.nrows();
    if rho.len() != k {
        return Err(Error::Structure(format!(
            "{} path gains for {} pooled users",
            rho.len(),
            k
        )));
    }
    let subsets: Vec<Vec<usize>> = enumerate_subsets(k, n)?.collect();

    let outcomes: Vec<(Vec<usize>, Result<(f64, S)>)> = subsets
        .into_par_iter()
        .enumerate()
        .map(|(rank, indices)| {
            let reduced = crate::channel::reduce(h, rho, &indices);
            let outcome = reduced.and_then(|(sub_h, sub_rho)| {
                let problem = SubsetProblem {
                    rank: rank as u64,
                    h: sub_h,
                    rho: sub_rho,
                    noise_variance,
                    total_power,
                    seed: derive_seed(trial_seed, &[3, rank as u64]),
                    indices: indices.clone(),
                };
                solver(&problem)
            });
            (indices, outcome)
        })
        .collect();

    let total = outcomes.len();
    let mut per_subset_rates = Vec::with_capacity(total);
    let mut best: Option<(usize, Vec<usize>, f64, S)> = None;
    for (rank, (indices, outcome)) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((rate, solution)) => {
                per_subset_rates.push(Some(rate));
                let better = match &best {
                    Some((_, _, best_rate, _)) => rate > *best_rate,
                    None => true,
                };
                if better {
                    best = Some((rank, indices, rate, solution));
                }
            }
            Err(err) => {
                log::warn!("subset {indices:?} skipped: {err}");
                per_subset_rates.push(None);
            }
        }
    }

    match best {
        Some((rank, subset, rate, solution)) => Ok(ScheduleResult {
            subset,
            rank: rank as u64,
            rate,
            per_subset_rates,
            solution,
        }),
        None => Err(Error::AllSubsetsFailed(total)),
    }
}
