//! Two-step parametric baseline estimator.
//!
//! Instead of inverting the selection distortion nonparametrically, this
//! estimator assumes log prices are linear in the covariate with normal
//! errors: a probit of the observed choice on the covariates gives inverse
//! Mills ratios, selection-corrected regressions of log price recover the
//! pricing equations, and the utility parameters are then fit by maximum
//! likelihood with the offered distributions pinned to the estimated
//! normals. When the pricing assumption holds this is efficient; when it
//! fails the reconstruction is biased, which is exactly what it is used to
//! demonstrate.

use std::collections::BTreeMap;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dist::{AtomicDistribution, DistributionProfile};
use crate::error::{Error, Result};
use crate::estimate::{group_cells, CellKey, Dataset, EstimateOptions, TraceEntry, LOGLIK_PENALTY};
use crate::select::{
    clamp_prob, normal_cdf, normal_pdf, std_logistic_cdf, SelectionKind, SelectionModel,
    ThetaVector,
};
use crate::simplex::minimize;

/// Atoms per alternative when discretizing the fitted log-normal offers.
pub const RECONSTRUCTION_ATOMS: usize = 128;

/// First-stage probit of the choice indicator on (1, x1, x2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbitFit {
    /// Coefficients ordered (intercept, x1, x2).
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Selection-corrected log-price regression for one alternative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PricingFit {
    pub intercept: f64,
    pub x2_slope: f64,
    /// Coefficient on the inverse Mills ratio; its sign carries the
    /// selection direction, only its square enters the variance correction.
    pub mills_coef: f64,
    /// Standard deviation of the offered log price implied by the corrected
    /// residual variance.
    pub sigma: f64,
    pub rows: usize,
}

impl PricingFit {
    /// Mean offered log price in a cell.
    pub fn mu(&self, x2: u8) -> f64 {
        self.intercept + self.x2_slope * f64::from(x2)
    }
}

/// Output of the full two-step procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStepResult {
    pub probit: ProbitFit,
    /// One pricing equation per alternative, in alternative order.
    pub pricing: Vec<PricingFit>,
    pub theta_hat: ThetaVector,
    /// Mean log-likelihood at the maximizer, offered profiles held fixed.
    pub loglik: f64,
    /// Discretized log-normal offered profiles per cell.
    pub offered: BTreeMap<CellKey, DistributionProfile>,
    pub optimizer_trace: Vec<TraceEntry>,
}

/// Inverse Mills ratio phi(q)/Phi(q), stable far into the left tail.
fn mills_ratio(q: f64) -> f64 {
    if q < -30.0 {
        // Asymptotic expansion; phi underflows past roughly -38.
        -q + 1.0 / q
    } else {
        normal_pdf(q) / normal_cdf(q).max(f64::MIN_POSITIVE)
    }
}

fn design_row(obs_x1: u8, obs_x2: u8) -> SVector<f64, 3> {
    SVector::<f64, 3>::new(1.0, f64::from(obs_x1), f64::from(obs_x2))
}

/// Probit MLE by Fisher scoring.
pub fn fit_probit(data: &Dataset) -> Result<ProbitFit> {
    if !data.has_x1() {
        return Err(Error::MillsCollinear);
    }
    let mut beta = SVector::<f64, 3>::zeros();
    let max_iter = 60;
    let mut converged = false;
    let mut used = 0;
    for it in 0..max_iter {
        let mut score = SVector::<f64, 3>::zeros();
        let mut info = SMatrix::<f64, 3, 3>::zeros();
        for obs in data.observations() {
            let x = design_row(obs.x1.unwrap(), obs.x2);
            let xb = beta.dot(&x);
            let p = normal_cdf(xb).clamp(1e-12, 1.0 - 1e-12);
            let phi = normal_pdf(xb);
            let y = f64::from(obs.choice == 1);
            let w = phi * phi / (p * (1.0 - p));
            score += x * ((y - p) * phi / (p * (1.0 - p)));
            info += x * x.transpose() * w;
        }
        let step = info
            .lu()
            .solve(&score)
            .ok_or_else(|| Error::invalid("probit information matrix is singular"))?;
        beta += step;
        used = it + 1;
        if step.amax() < 1e-10 {
            converged = true;
            break;
        }
    }
    Ok(ProbitFit {
        coef: beta.iter().copied().collect(),
        iterations: used,
        converged,
    })
}

/// Selection-corrected OLS of log price on (1, x2, mills) over the rows that
/// chose alternative `j` (1-based).
fn fit_pricing(data: &Dataset, probit: &ProbitFit, j: usize) -> Result<PricingFit> {
    let mut xtx = SMatrix::<f64, 3, 3>::zeros();
    let mut xty = SVector::<f64, 3>::zeros();
    let mut rows = Vec::new();
    for obs in data.observations() {
        if obs.choice != j {
            continue;
        }
        let xb = design_row(obs.x1.unwrap(), obs.x2).dot(&SVector::<f64, 3>::new(
            probit.coef[0],
            probit.coef[1],
            probit.coef[2],
        ));
        let q = if j == 1 { xb } else { -xb };
        let m = mills_ratio(q);
        let x = SVector::<f64, 3>::new(1.0, f64::from(obs.x2), m);
        let y = obs.price.ln();
        xtx += x * x.transpose();
        xty += x * y;
        rows.push((x, y, q, m));
    }
    if rows.len() < 4 {
        return Err(Error::invalid(format!(
            "too few rows chose alternative {j} to fit its pricing equation"
        )));
    }
    let coef = xtx.lu().solve(&xty).ok_or(Error::MillsCollinear)?;
    let n = rows.len() as f64;
    let mut sse = 0.0;
    let mut delta_sum = 0.0;
    for (x, y, q, m) in &rows {
        let e = y - coef.dot(x);
        sse += e * e;
        delta_sum += m * (m + q);
    }
    let sigma2 = sse / n + coef[2] * coef[2] * (delta_sum / n);
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid(format!(
            "corrected variance for alternative {j} is not positive"
        )));
    }
    Ok(PricingFit {
        intercept: coef[0],
        x2_slope: coef[1],
        mills_coef: coef[2],
        sigma: sigma2.sqrt(),
        rows: rows.len(),
    })
}

/// Equal-probability discretization of LogNormal(mu, sigma).
fn discretize_lognormal(mu: f64, sigma: f64) -> Result<AtomicDistribution> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let k = RECONSTRUCTION_ATOMS;
    let atoms: Vec<f64> = (0..k)
        .map(|i| {
            let t = (i as f64 + 0.5) / k as f64;
            (mu + sigma * std_normal.inverse_cdf(t)).exp()
        })
        .collect();
    let weights = vec![1.0 / k as f64; k];
    let bounds = (atoms[0], atoms[k - 1]);
    AtomicDistribution::new(atoms, weights, bounds)
}

struct FixedOfferedCell {
    x1: f64,
    n1: f64,
    n2: f64,
    /// Row-major log-price differences between the two offered atom grids.
    diff: Vec<f64>,
}

/// Mean log-likelihood with offered profiles held fixed; uniform atom
/// weights make the choice probability a plain average of the selection
/// function over the grid.
fn fixed_offered_loglik(cells: &[FixedOfferedCell], logistic: bool, n: f64, theta: &[f64]) -> f64 {
    let (gamma, xi2, beta) = (theta[0], theta[1], theta[2]);
    let mut total = 0.0;
    for cell in cells {
        let shift = beta * cell.x1 - xi2;
        let mut acc = 0.0;
        if logistic {
            for &d in &cell.diff {
                acc += std_logistic_cdf(shift - gamma * d);
            }
        } else {
            for &d in &cell.diff {
                acc += normal_cdf(shift - gamma * d);
            }
        }
        let p1 = clamp_prob(acc / cell.diff.len() as f64);
        let p2 = clamp_prob(1.0 - p1);
        total += cell.n1 * p1.ln() + cell.n2 * p2.ln();
    }
    total / n
}

/// Runs the full two-step procedure. Requires the excluded covariate: with
/// binary x2 alone the Mills ratio is an exact function of the regressor and
/// the corrected regression cannot be identified.
pub fn fit_two_step(
    data: &Dataset,
    model: &SelectionModel,
    opts: &EstimateOptions,
) -> Result<TwoStepResult> {
    let logistic = match model.kind {
        SelectionKind::BinaryProbitLogprice => false,
        SelectionKind::BinaryLogisticLogprice => true,
        _ => {
            return Err(Error::invalid(
                "two-step estimation requires a binary log-price selection kind",
            ))
        }
    };
    if !data.has_x1() {
        return Err(Error::MillsCollinear);
    }
    let probit = fit_probit(data)?;
    let pricing = vec![
        fit_pricing(data, &probit, 1)?,
        fit_pricing(data, &probit, 2)?,
    ];

    let groups = group_cells(data);
    let mut offered = BTreeMap::new();
    let mut cells = Vec::with_capacity(groups.len());
    for (key, idx) in &groups {
        let d1 = discretize_lognormal(pricing[0].mu(key.x2), pricing[0].sigma)?;
        let d2 = discretize_lognormal(pricing[1].mu(key.x2), pricing[1].sigma)?;
        let w1: Vec<f64> = d1.atoms().iter().map(|p| p.ln()).collect();
        let w2: Vec<f64> = d2.atoms().iter().map(|p| p.ln()).collect();
        let mut diff = Vec::with_capacity(w1.len() * w2.len());
        for &a in &w1 {
            for &b in &w2 {
                diff.push(a - b);
            }
        }
        let n1 = idx
            .iter()
            .filter(|&&i| data.observations()[i].choice == 1)
            .count();
        cells.push(FixedOfferedCell {
            x1: key.x1.map(f64::from).unwrap_or(0.0),
            n1: n1 as f64,
            n2: (idx.len() - n1) as f64,
            diff,
        });
        offered.insert(*key, DistributionProfile::new(vec![d1, d2])?);
    }

    let space = &model.theta_space;
    let beta_box = space.beta.unwrap_or((-10.0, 10.0));
    let lower = vec![space.gamma.0, space.xi[1].0, beta_box.0];
    let upper = vec![space.gamma.1, space.xi[1].1, beta_box.1];
    let center: Vec<f64> = lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect();
    let offset: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(a, b)| 0.15 * (b - a))
        .collect();
    let starts = [
        center.clone(),
        (0..3).map(|i| center[i] + offset[i]).collect::<Vec<_>>(),
        (0..3).map(|i| center[i] - offset[i]).collect::<Vec<_>>(),
    ];

    let n = data.len() as f64;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best_seen = f64::NEG_INFINITY;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        let mut f = |x: &[f64]| {
            let ll = fixed_offered_loglik(&cells, logistic, n, x);
            if ll > best_seen {
                best_seen = ll;
                if let Ok(theta) = ThetaVector::new(x[0], vec![0.0, x[1]], Some(x[2])) {
                    trace.push(TraceEntry { theta, loglik: ll });
                }
            }
            -ll
        };
        let outcome = minimize(&mut f, start, &lower, &upper, &opts.simplex);
        if best.as_ref().is_none_or(|(_, v)| outcome.value < *v) {
            best = Some((outcome.x, outcome.value));
        }
    }
    let (free, neg_ll) = best.expect("at least one start");
    if -neg_ll <= LOGLIK_PENALTY {
        return Err(Error::DegenerateLikelihood);
    }
    Ok(TwoStepResult {
        probit,
        pricing,
        theta_hat: ThetaVector::new(free[0], vec![0.0, free[1]], Some(free[2]))?,
        loglik: -neg_ll,
        offered,
        optimizer_trace: trace,
    })
}
