//! Logit quantal-response equilibria of finite games, computed with the same
//! fixed-point machinery as the selection inversion.
//!
//! Each player's mixed strategy responds to expected payoffs through an
//! exponential weighting with precision `lambda`; an equilibrium is a fixed
//! point of the joint response map. Payoffs are probability-like by
//! construction (entries in (0,1), summing to at most one per pure profile),
//! which keeps the response map inside the framework used for selection
//! functions.

use crate::error::{Error, Result};
use crate::fixpoint::FixedPointReport;

/// A finite normal-form game with probability-valued payoffs.
pub struct FiniteGame {
    n_players: usize,
    strategy_sets: Vec<Vec<f64>>,
    payoff: Box<dyn Fn(&[usize]) -> Vec<f64> + Send + Sync>,
    lambda: f64,
}

impl FiniteGame {
    /// Builds a game and validates the payoff function on every pure profile
    /// (or a generous prefix when the profile space is enormous): each entry
    /// must lie in (0,1) and the entries for one profile must sum to at most
    /// one.
    pub fn new(
        strategy_sets: Vec<Vec<f64>>,
        payoff: Box<dyn Fn(&[usize]) -> Vec<f64> + Send + Sync>,
        lambda: f64,
    ) -> Result<Self> {
        let n_players = strategy_sets.len();
        if n_players < 2 {
            return Err(Error::invalid("need at least 2 players"));
        }
        if strategy_sets.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("every player needs at least one strategy"));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        let game = Self {
            n_players,
            strategy_sets,
            payoff,
            lambda,
        };
        let total: usize = game.sizes().iter().product();
        let mut profile = vec![0usize; n_players];
        for _ in 0..total.min(100_000) {
            let pay = (game.payoff)(&profile);
            if pay.len() != n_players {
                return Err(Error::invalid("payoff must return one entry per player"));
            }
            let sum: f64 = pay.iter().sum();
            if pay.iter().any(|&v| !(v > 0.0 && v < 1.0)) || sum > 1.0 + 1e-12 {
                return Err(Error::invalid(
                    "payoff entries must lie in (0,1) and sum to at most 1",
                ));
            }
            if !game.advance(&mut profile) {
                break;
            }
        }
        Ok(game)
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn strategy_sets(&self) -> &[Vec<f64>] {
        &self.strategy_sets
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn sizes(&self) -> Vec<usize> {
        self.strategy_sets.iter().map(|s| s.len()).collect()
    }

    /// Odometer step over pure profiles; false once exhausted.
    fn advance(&self, profile: &mut [usize]) -> bool {
        for (i, p) in profile.iter_mut().enumerate() {
            *p += 1;
            if *p < self.strategy_sets[i].len() {
                return true;
            }
            *p = 0;
        }
        false
    }

    /// Expected payoff to `player` of playing `strategy` while everyone else
    /// follows `mixed`.
    fn expected_payoff(&self, player: usize, strategy: usize, mixed: &[Vec<f64>]) -> f64 {
        let sizes = self.sizes();
        let others: Vec<usize> = (0..self.n_players).filter(|&k| k != player).collect();
        let mut idx = vec![0usize; others.len()];
        let mut total = 0.0;
        loop {
            let mut profile = vec![0usize; self.n_players];
            profile[player] = strategy;
            let mut weight = 1.0;
            for (slot, &k) in others.iter().enumerate() {
                profile[k] = idx[slot];
                weight *= mixed[k][idx[slot]];
            }
            if weight > 0.0 {
                total += weight * (self.payoff)(&profile)[player];
            }
            // Advance the others' odometer.
            let mut done = true;
            for (slot, &k) in others.iter().enumerate() {
                idx[slot] += 1;
                if idx[slot] < sizes[k] {
                    done = false;
                    break;
                }
                idx[slot] = 0;
            }
            if done {
                return total;
            }
        }
    }
}

fn validate_mixed(game: &FiniteGame, mixed: &[Vec<f64>]) -> Result<()> {
    if mixed.len() != game.n_players {
        return Err(Error::invalid("one mixed strategy per player required"));
    }
    for (k, m) in mixed.iter().enumerate() {
        if m.len() != game.strategy_sets[k].len() {
            return Err(Error::invalid("mixed strategy length mismatch"));
        }
        let sum: f64 = m.iter().sum();
        if m.iter().any(|&v| !(v.is_finite() && v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "mixed strategies must be probability vectors",
            ));
        }
    }
    Ok(())
}

/// One application of the logit response map. With `lambda = 0` the output is
/// uniform for every player regardless of the input.
pub fn qre_step(game: &FiniteGame, mixed: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    validate_mixed(game, mixed)?;
    let mut out = Vec::with_capacity(game.n_players);
    for player in 0..game.n_players {
        let utilities: Vec<f64> = (0..game.strategy_sets[player].len())
            .map(|s| game.lambda * game.expected_payoff(player, s, mixed))
            .collect();
        let shift = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = utilities.iter().map(|u| (u - shift).exp()).collect();
        let total: f64 = weights.iter().sum();
        out.push(weights.into_iter().map(|w| w / total).collect());
    }
    Ok(out)
}

fn sup_norm_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Iterates the response map from a uniform start until the sup-norm step
/// falls below `tol`.
pub fn solve_qre(
    game: &FiniteGame,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<Vec<f64>>, FixedPointReport)> {
    let uniform: Vec<Vec<f64>> = game
        .strategy_sets
        .iter()
        .map(|s| vec![1.0 / s.len() as f64; s.len()])
        .collect();
    solve_qre_from(game, &uniform, tol, max_iter)
}

/// Same as [`solve_qre`] but from a caller-chosen start, used to check that
/// distinct starts agree on the equilibrium.
pub fn solve_qre_from(
    game: &FiniteGame,
    start: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<Vec<f64>>, FixedPointReport)> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive and finite"));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    validate_mixed(game, start)?;
    let mut current = start.to_vec();
    let mut steps = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next = qre_step(game, &current)?;
        let step = sup_norm_gap(&next, &current);
        steps.push(step);
        current = next;
        if step <= tol {
            converged = true;
            break;
        }
    }
    let report = FixedPointReport {
        iterations: steps.len(),
        final_step: steps.last().copied().unwrap_or(f64::INFINITY),
        converged,
        modulus: None,
        per_iteration_steps: steps,
    };
    Ok((current, report))
}

/// Two-player matching-pennies-style game: payoffs favor player 1 on a match
/// and player 2 on a mismatch, scaled into (0,1).
pub fn matching_pennies(lambda: f64) -> FiniteGame {
    FiniteGame::new(
        vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        Box::new(|profile: &[usize]| {
            if profile[0] == profile[1] {
                vec![0.9, 0.1]
            } else {
                vec![0.1, 0.9]
            }
        }),
        lambda,
    )
    .expect("matching pennies payoffs are valid")
}
