use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Attribution, Contribution, ExplainError, Result, Unit};
use crate::rng;

/// Largest player count accepted by [`shapley_exact`].
pub const MAX_EXACT_PLAYERS: usize = 20;

/// A cooperative game: players and a characteristic function over
/// coalitions, given as membership masks.
pub trait CoalitionGame: Sync {
    fn n_players(&self) -> usize;

    fn player_names(&self) -> Vec<String> {
        (0..self.n_players()).map(|i| format!("p{i}")).collect()
    }

    fn value(&self, coalition: &[bool]) -> f64;

    /// Values of many coalitions. Games backed by a model override this to
    /// evaluate them in one batch.
    fn values(&self, coalitions: &[Vec<bool>]) -> Vec<f64> {
        coalitions.iter().map(|c| self.value(c)).collect()
    }
}

/// A game defined by a closure.
pub struct FnGame<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[bool]) -> f64 + Sync> CoalitionGame for FnGame<F> {
    fn n_players(&self) -> usize {
        self.n
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        (self.f)(coalition)
    }
}

fn attribution(game: &dyn CoalitionGame, unit: Unit, phi: Vec<f64>, baseline: f64, full: f64) -> Attribution {
    let values = game
        .player_names()
        .into_iter()
        .zip(phi)
        .enumerate()
        .map(|(index, (name, phi))| Contribution { index, name, phi })
        .collect();
    Attribution { target: String::new(), unit, target_class: None, values, baseline_value: baseline, full_value: full }
}

const EXACT_BATCH: usize = 4096;

/// Exact Shapley values from all `2ⁿ` coalition values, weighting each
/// marginal contribution by `|S|!(n−|S|−1)!/n!`.
pub fn shapley_exact(game: &dyn CoalitionGame, unit: Unit) -> Result<Attribution> {
    let n = game.n_players();
    if n > MAX_EXACT_PLAYERS {
        return Err(ExplainError::TooManyPlayers { n, max: MAX_EXACT_PLAYERS });
    }
    let total = 1usize << n;
    let mut v = Vec::with_capacity(total);
    for start in (0..total).step_by(EXACT_BATCH) {
        let masks: Vec<Vec<bool>> =
            (start..(start + EXACT_BATCH).min(total)).map(|m| (0..n).map(|i| m >> i & 1 == 1).collect()).collect();
        v.extend(game.values(&masks));
    }

    // w[s] = 1 / (n · C(n−1, s))
    let mut weights = vec![0.0; n.max(1)];
    let mut binom = 1.0f64;
    for (s, w) in weights.iter_mut().enumerate().take(n) {
        *w = 1.0 / (n as f64 * binom);
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    let mut phi = vec![0.0; n];
    for mask in 0..total {
        let w = weights[(mask.count_ones() as usize).min(n.saturating_sub(1))];
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += w * (v[mask | 1 << i] - v[mask]);
            }
        }
    }
    Ok(attribution(game, unit, phi, v[0], v[total - 1]))
}

const PERMUTATION_BATCH: usize = 64;

/// Monte-Carlo Shapley values: the average marginal contribution of each
/// player over `permutations` random orderings. Ordering `t` is drawn from
/// its own stream derived from `(seed, t)`, so the result does not depend
/// on how the work is scheduled.
pub fn shapley_sampled(game: &dyn CoalitionGame, unit: Unit, permutations: usize, seed: u64) -> Result<Attribution> {
    if permutations == 0 {
        return Err(ExplainError::NoPermutations);
    }
    let n = game.n_players();
    let ends = game.values(&[vec![false; n], vec![true; n]]);
    let mut phi = vec![0.0; n];
    for start in (0..permutations).step_by(PERMUTATION_BATCH) {
        let end = (start + PERMUTATION_BATCH).min(permutations);
        let chunk: Vec<Vec<(usize, f64)>> = (start..end)
            .into_par_iter()
            .map(|t| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng::seeded(rng::derive_seed(seed, &[t as u64])));
                let mut coalition = vec![false; n];
                let mut prefixes = Vec::with_capacity(n + 1);
                prefixes.push(coalition.clone());
                for &p in &order {
                    coalition[p] = true;
                    prefixes.push(coalition.clone());
                }
                let v = game.values(&prefixes);
                order.iter().enumerate().map(|(k, &p)| (p, v[k + 1] - v[k])).collect()
            })
            .collect();
        for contributions in chunk {
            for (p, d) in contributions {
                phi[p] += d;
            }
        }
    }
    for p in &mut phi {
        *p /= permutations as f64;
    }
    Ok(attribution(game, unit, phi, ends[0], ends[1]))
}
