//! The selection-inversion operator and its fixed-point solver.
//!
//! A selected (observed) profile differs from the offered one because each
//! alternative's prices are kept only when that alternative is chosen. The
//! forward map applies that distortion; the operator inverts it: reweight the
//! selected atoms by the reciprocal of their model-implied retention
//! probability, where the retention probability of an atom for alternative j
//! integrates the selection function over the rivals' current candidate
//! distributions. Under a modulus below one the operator is a contraction in
//! the product Thompson metric and the iteration converges geometrically to
//! the offered profile.

use serde::{Deserialize, Serialize};

use crate::dist::{profile_distance, AtomicDistribution, DistributionProfile};
use crate::error::{Error, Result};
use crate::select::{
    choice_prob_given_own_price, compute_rho_general, compute_rho_star, Covariates, ModulusReport,
    SelectionModel, ThetaVector,
};

/// Starting point for the fixed-point iteration.
#[derive(Debug, Clone, Default)]
pub enum FixedPointInit {
    /// Start from the selected profile itself (the observed weights).
    #[default]
    Selected,
    /// Start from uniform weights on the selected support.
    Uniform,
    /// Start from a caller-supplied profile.
    Profile(DistributionProfile),
}

/// Tolerance and iteration controls for the solver.
#[derive(Debug, Clone)]
pub struct FixedPointConfig {
    /// Stop once the Thompson-metric step between successive iterates is at
    /// most this value.
    pub tol: f64,
    pub max_iter: usize,
    pub init: FixedPointInit,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            tol: 1e-10,
            max_iter: 200,
            init: FixedPointInit::Selected,
        }
    }
}

impl FixedPointConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive and finite"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// What the solver did and how fast the iterates settled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// Thompson-metric distance between the last two iterates.
    pub final_step: f64,
    /// True exactly when `final_step <= tol`.
    pub converged: bool,
    /// Contraction modulus of the configuration, when it could be computed.
    pub modulus: Option<ModulusReport>,
    /// Step sizes for every iteration performed, in order.
    pub per_iteration_steps: Vec<f64>,
}

/// Applies the selection distortion to an offered profile: each alternative's
/// weights are multiplied by the retention probability of its atoms (the
/// choice probability of that alternative at the atom's price, integrated over
/// the rivals' offered distributions) and renormalized.
pub fn forward_map(
    offered: &DistributionProfile,
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
) -> Result<DistributionProfile> {
    let j_count = offered.j_count();
    if j_count != model.j_count {
        return Err(Error::ProfileArityMismatch {
            left: j_count,
            right: model.j_count,
        });
    }
    let mut components = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let own = offered.component(j);
        let rivals: Vec<&AtomicDistribution> = (0..j_count)
            .filter(|&k| k != j)
            .map(|k| offered.component(k))
            .collect();
        let mut weights = Vec::with_capacity(own.atoms().len());
        for (&atom, &w) in own.atoms().iter().zip(own.weights()) {
            let pr = choice_prob_given_own_price(model, j, atom, &rivals, x, theta)?;
            weights.push(w * pr);
        }
        components.push(own.reweighted(weights)?);
    }
    DistributionProfile::new(components)
}

/// One application of the inversion operator: reweight each selected atom by
/// the reciprocal of its retention probability under the candidate profile.
///
/// The output support equals the selected support exactly; only weights move.
pub fn apply_t(
    candidate: &DistributionProfile,
    selected: &DistributionProfile,
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
) -> Result<DistributionProfile> {
    let j_count = selected.j_count();
    if candidate.j_count() != j_count {
        return Err(Error::ProfileArityMismatch {
            left: candidate.j_count(),
            right: j_count,
        });
    }
    if j_count != model.j_count {
        return Err(Error::ProfileArityMismatch {
            left: j_count,
            right: model.j_count,
        });
    }
    let mut components = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let own = selected.component(j);
        let rivals: Vec<&AtomicDistribution> = (0..j_count)
            .filter(|&k| k != j)
            .map(|k| candidate.component(k))
            .collect();
        // Work in logs: retention probabilities can be tiny at extreme
        // parameter values and the raw ratios would overflow.
        let mut log_w = Vec::with_capacity(own.atoms().len());
        for (&atom, &w) in own.atoms().iter().zip(own.weights()) {
            let pr = choice_prob_given_own_price(model, j, atom, &rivals, x, theta)?;
            log_w.push(w.ln() - pr.ln());
        }
        let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_w.iter().map(|lw| (lw - shift).exp()).collect();
        components.push(own.reweighted(weights)?);
    }
    DistributionProfile::new(components)
}

fn modulus_for(
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
    bounds: &[(f64, f64)],
) -> Option<ModulusReport> {
    match compute_rho_star(model, x, theta, bounds) {
        Ok(report) => Some(report),
        Err(Error::NotSupermodular) => compute_rho_general(model, x, theta, bounds, 32).ok(),
        Err(_) => None,
    }
}

/// Iterates the inversion operator from the configured start until the
/// Thompson step falls below tolerance or the iteration budget is exhausted.
///
/// A modulus at or above one does not stop the solver; it simply means
/// convergence is not guaranteed, and the report carries the evidence either
/// way. Non-convergence is reported, not raised.
pub fn solve_fixed_point(
    selected: &DistributionProfile,
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
    config: &FixedPointConfig,
) -> Result<(DistributionProfile, FixedPointReport)> {
    config.validate()?;
    let mut current = match &config.init {
        FixedPointInit::Selected => selected.clone(),
        FixedPointInit::Uniform => {
            let comps = (0..selected.j_count())
                .map(|j| {
                    let c = selected.component(j);
                    c.reweighted(vec![1.0; c.atoms().len()])
                })
                .collect::<Result<Vec<_>>>()?;
            DistributionProfile::new(comps)?
        }
        FixedPointInit::Profile(p) => {
            if p.j_count() != selected.j_count() {
                return Err(Error::ProfileArityMismatch {
                    left: p.j_count(),
                    right: selected.j_count(),
                });
            }
            p.clone()
        }
    };

    let mut steps = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let next = apply_t(&current, selected, model, x, theta)?;
        let step = profile_distance(&next, &current)?;
        steps.push(step);
        current = next;
        if step <= config.tol {
            converged = true;
            break;
        }
    }

    let bounds: Vec<(f64, f64)> = (0..selected.j_count())
        .map(|j| selected.component(j).bounds())
        .collect();
    let report = FixedPointReport {
        iterations: steps.len(),
        final_step: steps.last().copied().unwrap_or(f64::INFINITY),
        converged,
        modulus: modulus_for(model, x, theta, &bounds),
        per_iteration_steps: steps,
    };
    Ok((current, report))
}

/// Empirical Lipschitz ratios of the forward map and of the inversion, checked
/// against the bounds implied by the contraction modulus.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzDiagnostics {
    pub rho: f64,
    /// Theoretical ceiling for the forward ratio, `1 + rho`.
    pub forward_bound: f64,
    /// Theoretical ceiling for the inversion ratio, `1 / (1 - rho)`.
    pub inverse_bound: f64,
    pub max_forward_ratio: f64,
    pub max_inverse_ratio: f64,
    pub pairs_used: usize,
    pub within_bounds: bool,
}

/// Samples random profile pairs on the given per-alternative price boxes and
/// measures how much the forward map and the inversion stretch the Thompson
/// metric. Fails with `RhoTooLarge` when the modulus is not below one, since
/// the inversion bound is vacuous there. Pairs at zero distance are skipped.
pub fn lipschitz_diagnostics(
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
    bounds: &[(f64, f64)],
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzDiagnostics> {
    use rand::Rng;
    use rand::SeedableRng;

    let rho = compute_rho_general(model, x, theta, bounds, 32)?.rho;
    if rho >= 1.0 {
        return Err(Error::RhoTooLarge { rho });
    }
    let j_count = model.j_count;
    if bounds.len() != j_count {
        return Err(Error::invalid(
            "bounds must list one (low, high) pair per alternative",
        ));
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let atoms_per_component = 12;
    let solver = FixedPointConfig {
        tol: 1e-13,
        max_iter: 500,
        init: FixedPointInit::Selected,
    };

    let mut max_forward: f64 = 0.0;
    let mut max_inverse: f64 = 0.0;
    let mut pairs_used = 0usize;
    for _ in 0..n_pairs {
        let mut comps_a = Vec::with_capacity(j_count);
        let mut comps_b = Vec::with_capacity(j_count);
        for &(lo, hi) in bounds {
            let mut atoms: Vec<f64> = (0..atoms_per_component)
                .map(|_| rng.gen_range(lo..=hi))
                .collect();
            atoms.sort_by(f64::total_cmp);
            atoms.dedup();
            // Weights bounded away from zero keep the pair distance finite.
            let wa: Vec<f64> = (0..atoms.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
            let wb: Vec<f64> = (0..atoms.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
            comps_a.push(AtomicDistribution::from_unnormalized(
                atoms.clone(),
                wa,
                (lo, hi),
            )?);
            comps_b.push(AtomicDistribution::from_unnormalized(atoms, wb, (lo, hi))?);
        }
        let ga = DistributionProfile::new(comps_a)?;
        let gb = DistributionProfile::new(comps_b)?;

        let d0 = profile_distance(&ga, &gb)?;
        if !(d0.is_finite() && d0 > 1e-12) {
            continue;
        }
        let sa = forward_map(&ga, model, x, theta)?;
        let sb = forward_map(&gb, model, x, theta)?;
        let d1 = profile_distance(&sa, &sb)?;
        max_forward = max_forward.max(d1 / d0);

        if d1 > 1e-12 {
            let (ra, _) = solve_fixed_point(&sa, model, x, theta, &solver)?;
            let (rb, _) = solve_fixed_point(&sb, model, x, theta, &solver)?;
            let d2 = profile_distance(&ra, &rb)?;
            max_inverse = max_inverse.max(d2 / d1);
        }
        pairs_used += 1;
    }

    let forward_bound = 1.0 + rho;
    let inverse_bound = 1.0 / (1.0 - rho);
    Ok(LipschitzDiagnostics {
        rho,
        forward_bound,
        inverse_bound,
        max_forward_ratio: max_forward,
        max_inverse_ratio: max_inverse,
        pairs_used,
        within_bounds: max_forward <= forward_bound + 1e-6 && max_inverse <= inverse_bound + 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::select::{SelectionKind, ThetaSpace};
    use approx::assert_relative_eq;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn probit_model() -> SelectionModel {
        SelectionModel::with_default_space(SelectionKind::BinaryProbitLogprice, 2).unwrap()
    }

    /// Binary probit whose alternative-1 choice probability hits `f_at_1` at
    /// price 1 and `f_at_2` at price 2 when the rival price is fixed at 1.
    fn theta_hitting(f_at_1: f64, f_at_2: f64) -> ThetaVector {
        let n = Normal::new(0.0, 1.0).unwrap();
        let z1 = n.inverse_cdf(f_at_1);
        let z2 = n.inverse_cdf(f_at_2);
        // z(p1) = beta*x1 - xi2 - gamma*(ln p1 - ln p2); ln p2 = 0.
        let gamma = (z1 - z2) / 2.0f64.ln();
        let xi2 = -z1;
        ThetaVector::new(gamma, vec![0.0, xi2], None).unwrap()
    }

    fn two_atom_profile(w1: f64) -> DistributionProfile {
        let g1 = AtomicDistribution::new(vec![1.0, 2.0], vec![w1, 1.0 - w1], (0.9, 2.1)).unwrap();
        let g2 = AtomicDistribution::degenerate(1.0, (0.9, 2.1)).unwrap();
        DistributionProfile::new(vec![g1, g2]).unwrap()
    }

    /// Both components carry two atoms, so the operator genuinely couples the
    /// alternatives and converges only geometrically, never exactly.
    fn square_profile(w1: f64, w2: f64) -> DistributionProfile {
        let g1 = AtomicDistribution::new(vec![1.0, 2.0], vec![w1, 1.0 - w1], (0.9, 2.1)).unwrap();
        let g2 = AtomicDistribution::new(vec![1.0, 2.0], vec![w2, 1.0 - w2], (0.9, 2.1)).unwrap();
        DistributionProfile::new(vec![g1, g2]).unwrap()
    }

    #[test]
    fn forward_map_reweights_by_retention() {
        let model = probit_model();
        let theta = theta_hitting(0.8, 0.4);
        let x = Covariates { x1: None, x2: 0 };
        let offered = two_atom_profile(0.5);
        let selected = forward_map(&offered, &model, x, &theta).unwrap();
        let w = selected.component(0).weights();
        // 0.5*0.8 and 0.5*0.4 renormalize to 2/3 and 1/3.
        assert_relative_eq!(w[0], 2.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(w[1], 1.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn constant_selection_leaves_profiles_alone() {
        let model = SelectionModel::with_default_space(
            SelectionKind::Constant {
                probs: vec![0.3, 0.7],
            },
            2,
        )
        .unwrap();
        let theta = ThetaVector::new(0.0, vec![0.0, 0.0], None).unwrap();
        let x = Covariates { x1: None, x2: 0 };
        let offered = two_atom_profile(0.25);
        let fwd = forward_map(&offered, &model, x, &theta).unwrap();
        assert_relative_eq!(fwd.component(0).weights()[0], 0.25, epsilon = 1e-14);
        let inv = apply_t(&offered, &offered, &model, x, &theta).unwrap();
        assert_relative_eq!(inv.component(0).weights()[0], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn apply_t_inverts_the_hand_example() {
        let model = probit_model();
        let theta = theta_hitting(0.8, 0.4);
        let x = Covariates { x1: None, x2: 0 };
        let selected = two_atom_profile(2.0 / 3.0);
        // Candidate rivals only matter through component 2, which is
        // degenerate, so one application already lands on the answer.
        let candidate = two_atom_profile(0.5);
        let out = apply_t(&candidate, &selected, &model, x, &theta).unwrap();
        let w = out.component(0).weights();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(w[1], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn output_support_matches_selected_support() {
        let model = probit_model();
        let theta = theta_hitting(0.7, 0.45);
        let x = Covariates { x1: None, x2: 0 };
        let selected = two_atom_profile(0.4);
        let candidate = two_atom_profile(0.9);
        let out = apply_t(&candidate, &selected, &model, x, &theta).unwrap();
        for j in 0..2 {
            assert_eq!(out.component(j).atoms(), selected.component(j).atoms());
        }
    }

    #[test]
    fn solver_recovers_offered_from_selected() {
        let model = probit_model();
        let theta = theta_hitting(0.8, 0.4);
        let x = Covariates { x1: None, x2: 0 };
        let offered = square_profile(0.5, 0.3);
        let selected = forward_map(&offered, &model, x, &theta).unwrap();
        let (recovered, report) =
            solve_fixed_point(&selected, &model, x, &theta, &FixedPointConfig::default())
                .unwrap();
        assert!(report.converged);
        assert!(report.final_step <= 1e-10);
        assert!(profile_distance(&recovered, &offered).unwrap() < 1e-8);
    }

    #[test]
    fn report_bookkeeping_is_consistent() {
        let model = probit_model();
        let theta = theta_hitting(0.8, 0.4);
        let x = Covariates { x1: None, x2: 0 };
        let selected = square_profile(0.6, 0.45);
        let (_, report) =
            solve_fixed_point(&selected, &model, x, &theta, &FixedPointConfig::default())
                .unwrap();
        assert_eq!(report.per_iteration_steps.len(), report.iterations);
        assert_eq!(report.converged, report.final_step <= 1e-10);
        assert_eq!(
            report.final_step,
            *report.per_iteration_steps.last().unwrap()
        );
        let m = report.modulus.expect("probit modulus should be computable");
        assert!(m.supermodular && m.rho_star.is_some());
    }

    #[test]
    fn iteration_budget_is_respected_and_reported() {
        let model = probit_model();
        let theta = theta_hitting(0.8, 0.4);
        let x = Covariates { x1: None, x2: 0 };
        let selected = square_profile(0.6, 0.45);
        let config = FixedPointConfig {
            tol: 1e-300,
            max_iter: 3,
            init: FixedPointInit::Uniform,
        };
        let (_, report) = solve_fixed_point(&selected, &model, x, &theta, &config).unwrap();
        assert_eq!(report.iterations, 3);
        assert!(!report.converged);
    }

    #[test]
    fn custom_init_profile_must_match_arity() {
        let model = probit_model();
        let theta = theta_hitting(0.8, 0.4);
        let x = Covariates { x1: None, x2: 0 };
        let selected = two_atom_profile(0.6);
        let three = DistributionProfile::new(vec![
            AtomicDistribution::degenerate(1.0, (0.5, 2.5)).unwrap(),
            AtomicDistribution::degenerate(1.0, (0.5, 2.5)).unwrap(),
            AtomicDistribution::degenerate(1.0, (0.5, 2.5)).unwrap(),
        ])
        .unwrap();
        let config = FixedPointConfig {
            init: FixedPointInit::Profile(three),
            ..FixedPointConfig::default()
        };
        let err = solve_fixed_point(&selected, &model, x, &theta, &config).unwrap_err();
        assert!(err.to_string().contains("profile arity mismatch"));
    }

    #[test]
    fn geometric_decay_matches_modulus() {
        let model = probit_model();
        let theta = theta_hitting(0.75, 0.55);
        let x = Covariates { x1: None, x2: 0 };
        let offered = square_profile(0.35, 0.7);
        let selected = forward_map(&offered, &model, x, &theta).unwrap();
        let config = FixedPointConfig {
            init: FixedPointInit::Uniform,
            ..FixedPointConfig::default()
        };
        let (_, report) = solve_fixed_point(&selected, &model, x, &theta, &config).unwrap();
        let rho = report.modulus.as_ref().unwrap().rho;
        assert!(rho < 1.0, "test configuration should contract, rho = {rho}");
        let steps = &report.per_iteration_steps;
        for k in 0..steps.len() - 1 {
            assert!(
                steps[k + 1] <= rho * steps[k] + 1e-12,
                "step {k}: {} then {}, rho {rho}",
                steps[k],
                steps[k + 1]
            );
        }
    }

    #[test]
    fn lipschitz_ratios_respect_modulus_bounds() {
        let model = probit_model();
        let theta = theta_hitting(0.7, 0.5);
        let x = Covariates { x1: None, x2: 0 };
        let bounds = [(0.8, 2.2), (0.8, 2.2)];
        let diag = lipschitz_diagnostics(&model, x, &theta, &bounds, 40, 11).unwrap();
        assert!(diag.pairs_used > 30);
        assert!(
            diag.within_bounds,
            "forward {} vs {}, inverse {} vs {}",
            diag.max_forward_ratio,
            diag.forward_bound,
            diag.max_inverse_ratio,
            diag.inverse_bound
        );
    }

    #[test]
    fn lipschitz_rejects_expansive_configurations() {
        let model = SelectionModel::new(
            SelectionKind::BinaryProbitLogprice,
            2,
            ThetaSpace {
                gamma: (-50.0, 50.0),
                xi: vec![(0.0, 0.0), (-50.0, 50.0)],
                beta: None,
            },
        )
        .unwrap();
        let theta = ThetaVector::new(30.0, vec![0.0, 0.0], None).unwrap();
        let x = Covariates { x1: None, x2: 0 };
        let bounds = [(0.5, 4.0), (0.5, 4.0)];
        let err = lipschitz_diagnostics(&model, x, &theta, &bounds, 5, 1).unwrap_err();
        assert!(err
            .to_string()
            .contains("Proposition 1 hypotheses not met"));
    }
}
