//! Simulation designs and the replication study driver.
//!
//! Five pricing designs share one binary-choice utility: alternative 1 gets
//! a standard normal taste shock and the excluded covariate, alternative 2
//! is deterministic given prices. The designs differ only in how offered log
//! prices are generated; the first is the textbook additive normal case and
//! the rest progressively break the linear-normal assumption that the
//! two-step baseline relies on.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal as NormalDist};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::estimate::{
    fit_mle, group_cells, Dataset, EstimateOptions, EstimationResult, Observation,
};
#[cfg(test)]
use crate::estimate::estimate_selected_distributions;
use crate::heckman::{fit_two_step, PricingFit, TwoStepResult};
use crate::select::{normal_cdf, normal_pdf, SelectionKind, SelectionModel};

/// Noise on the offered price equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriceNoise {
    /// Normal with mean zero; `sd` is the standard deviation.
    Normal { sd: f64 },
    /// Gumbel with location zero; `scale` is the scale parameter.
    Gumbel { scale: f64 },
}

/// How the systematic part and the noise combine into a log price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingForm {
    /// ln p = base + eta
    Additive,
    /// ln p = base * (1 + eta)
    Scaled,
    /// ln p = exp(base * (1 + eta))
    ExpScaled,
    /// ln p = base / (1 + eta)
    InverseScaled,
}

/// One alternative's offered price equation: base = delta0 + delta * x2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingEq {
    pub delta0: f64,
    pub delta: f64,
    pub noise: PriceNoise,
    pub form: PricingForm,
}

impl PricingEq {
    pub fn base(&self, x2: u8) -> f64 {
        self.delta0 + self.delta * f64::from(x2)
    }

    fn log_price(&self, x2: u8, eta: f64) -> f64 {
        let base = self.base(x2);
        match self.form {
            PricingForm::Additive => base + eta,
            PricingForm::Scaled => base * (1.0 + eta),
            PricingForm::ExpScaled => (base * (1.0 + eta)).exp(),
            PricingForm::InverseScaled => base / (1.0 + eta),
        }
    }
}

/// Error family the estimator assumes for the taste shock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumedError {
    Normal,
    Logistic,
}

/// Full description of one simulation design plus the estimator variant
/// applied to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp_id: usize,
    pub gamma: f64,
    pub xi2: f64,
    pub beta: f64,
    pub pricing: [PricingEq; 2],
    /// Whether the excluded covariate is recorded in the dataset. The data
    /// generating process always uses it; dropping it only blinds the
    /// estimator.
    pub include_excluded: bool,
    /// Taste-shock family the estimator assumes; the truth is always normal.
    pub assumed_error: AssumedError,
    pub px1: f64,
    pub px2: f64,
}

impl DgpSpec {
    /// The five standard designs.
    pub fn standard(dgp_id: usize) -> Result<Self> {
        let pricing = match dgp_id {
            1 => [
                PricingEq {
                    delta0: 0.2,
                    delta: 0.5,
                    noise: PriceNoise::Normal { sd: 0.1 },
                    form: PricingForm::Additive,
                },
                PricingEq {
                    delta0: 0.1,
                    delta: 1.0,
                    noise: PriceNoise::Normal { sd: 0.2 },
                    form: PricingForm::Additive,
                },
            ],
            2 => [
                PricingEq {
                    delta0: 0.2,
                    delta: 0.5,
                    noise: PriceNoise::Gumbel { scale: 0.1 },
                    form: PricingForm::Additive,
                },
                PricingEq {
                    delta0: 0.1,
                    delta: 1.0,
                    noise: PriceNoise::Gumbel { scale: 0.2 },
                    form: PricingForm::Additive,
                },
            ],
            3 => [
                PricingEq {
                    delta0: 0.2,
                    delta: 0.5,
                    noise: PriceNoise::Normal { sd: 0.1 },
                    form: PricingForm::Scaled,
                },
                PricingEq {
                    delta0: 0.1,
                    delta: 1.0,
                    noise: PriceNoise::Normal { sd: 0.3 },
                    form: PricingForm::Scaled,
                },
            ],
            4 => [
                PricingEq {
                    delta0: 0.2,
                    delta: 0.1,
                    noise: PriceNoise::Normal { sd: 0.1 },
                    form: PricingForm::ExpScaled,
                },
                PricingEq {
                    delta0: 0.1,
                    delta: 0.3,
                    noise: PriceNoise::Normal { sd: 0.2 },
                    form: PricingForm::ExpScaled,
                },
            ],
            5 => [
                PricingEq {
                    delta0: 0.2,
                    delta: 0.1,
                    noise: PriceNoise::Normal { sd: 0.1 },
                    form: PricingForm::InverseScaled,
                },
                PricingEq {
                    delta0: 0.1,
                    delta: 0.3,
                    noise: PriceNoise::Normal { sd: 0.2 },
                    form: PricingForm::InverseScaled,
                },
            ],
            _ => return Err(Error::invalid("dgp id must be 1..=5")),
        };
        Ok(DgpSpec {
            dgp_id,
            gamma: 1.0,
            xi2: 1.0,
            beta: 0.5,
            pricing,
            include_excluded: true,
            assumed_error: AssumedError::Normal,
            px1: 0.5,
            px2: 0.7,
        })
    }

    /// The selection model the estimator should use for this design.
    pub fn model(&self) -> Result<SelectionModel> {
        let kind = match self.assumed_error {
            AssumedError::Normal => SelectionKind::BinaryProbitLogprice,
            AssumedError::Logistic => SelectionKind::BinaryLogisticLogprice,
        };
        SelectionModel::with_default_space(kind, 2)
    }
}

fn sample_noise<R: Rng>(noise: PriceNoise, rng: &mut R) -> f64 {
    match noise {
        PriceNoise::Normal { sd } => NormalDist::new(0.0, sd).expect("valid sd").sample(rng),
        PriceNoise::Gumbel { scale } => {
            Gumbel::new(0.0, scale).expect("valid scale").sample(rng)
        }
    }
}

/// Draws one dataset. Per observation the draw order is fixed:
/// x1, x2, eta1, eta2, epsilon.
pub fn simulate_dataset(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_dist = NormalDist::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = u8::from(rng.gen::<f64>() < spec.px1);
        let x2 = u8::from(rng.gen::<f64>() < spec.px2);
        let eta1 = sample_noise(spec.pricing[0].noise, &mut rng);
        let eta2 = sample_noise(spec.pricing[1].noise, &mut rng);
        let eps = eps_dist.sample(&mut rng);
        let w1 = spec.pricing[0].log_price(x2, eta1);
        let w2 = spec.pricing[1].log_price(x2, eta2);
        let u1 = -spec.gamma * w1 + spec.beta * f64::from(x1) + eps;
        let u2 = -spec.gamma * w2 + spec.xi2;
        let choice = if u1 >= u2 { 1 } else { 2 };
        rows.push(Observation {
            choice,
            x1: spec.include_excluded.then_some(x1),
            x2,
            price: if choice == 1 { w1.exp() } else { w2.exp() },
        });
    }
    Dataset::new(rows, 2)
}

// ---------------------------------------------------------------------------
// True offered distributions on a log-price grid.

/// Points per truth grid.
pub const GRID_POINTS: usize = 300;
/// Tail mass excluded on each side when placing the grid.
pub const GRID_TAIL: f64 = 0.0005;
/// Draws behind each simulated truth curve.
const ORACLE_DRAWS: usize = 10_000_000;

/// True offered log-price distribution for one (alternative, x2) pair,
/// tabulated on an even grid: cdf values and the density used as the
/// integration weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthCurve {
    /// Log prices, evenly spaced.
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    pub pdf: Vec<f64>,
}

fn even_grid(lo: f64, hi: f64) -> Vec<f64> {
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS).map(|i| lo + step * i as f64).collect()
}

fn normal_truth(mu: f64, sd: f64) -> TruthCurve {
    use statrs::distribution::Normal;
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let lo = mu + sd * z.inverse_cdf(GRID_TAIL);
    let hi = mu + sd * z.inverse_cdf(1.0 - GRID_TAIL);
    let grid = even_grid(lo, hi);
    let cdf = grid.iter().map(|&w| normal_cdf((w - mu) / sd)).collect();
    let pdf = grid
        .iter()
        .map(|&w| normal_pdf((w - mu) / sd) / sd)
        .collect();
    TruthCurve { grid, cdf, pdf }
}

fn gumbel_truth(mu: f64, scale: f64) -> TruthCurve {
    let quantile = |t: f64| mu - scale * (-t.ln()).ln();
    let grid = even_grid(quantile(GRID_TAIL), quantile(1.0 - GRID_TAIL));
    let cdf: Vec<f64> = grid
        .iter()
        .map(|&w| (-(-(w - mu) / scale).exp()).exp())
        .collect();
    let pdf = grid
        .iter()
        .map(|&w| {
            let z = (w - mu) / scale;
            ((-z - (-z).exp()).exp()) / scale
        })
        .collect();
    TruthCurve { grid, cdf, pdf }
}

/// Truth by brute force: a large fixed-seed sample of the pricing equation.
/// Used for the designs whose log price is a nonlinear transform of the
/// noise; the seed depends only on (design, alternative, x2) so every run
/// sees the same oracle.
fn simulated_truth(spec: &DgpSpec, j: usize, x2: u8) -> TruthCurve {
    let seed = 0x5EED_0000u64 + (spec.dgp_id as u64) * 100 + (j as u64) * 10 + u64::from(x2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eq = &spec.pricing[j - 1];
    let mut draws: Vec<f64> = (0..ORACLE_DRAWS)
        .map(|_| eq.log_price(x2, sample_noise(eq.noise, &mut rng)))
        .collect();
    draws.sort_unstable_by(f64::total_cmp);
    let q = |t: f64| draws[((t * (ORACLE_DRAWS - 1) as f64).round() as usize).min(ORACLE_DRAWS - 1)];
    let grid = even_grid(q(GRID_TAIL), q(1.0 - GRID_TAIL));
    let cdf: Vec<f64> = grid
        .iter()
        .map(|&w| draws.partition_point(|&d| d <= w) as f64 / ORACLE_DRAWS as f64)
        .collect();
    // Density by centered differences of the empirical cdf; monotonicity of
    // the cdf keeps it nonnegative.
    let mut pdf = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(grid.len() - 1));
        pdf[i] = (cdf[b] - cdf[a]) / (grid[b] - grid[a]);
    }
    TruthCurve { grid, cdf, pdf }
}

/// True offered log-price curve for alternative `j` (1-based) given x2.
pub fn truth_curve(spec: &DgpSpec, j: usize, x2: u8) -> Result<TruthCurve> {
    if j < 1 || j > 2 {
        return Err(Error::invalid("alternative must be 1 or 2"));
    }
    let eq = &spec.pricing[j - 1];
    let base = eq.base(x2);
    Ok(match (eq.form, eq.noise) {
        (PricingForm::Additive, PriceNoise::Normal { sd }) => normal_truth(base, sd),
        (PricingForm::Additive, PriceNoise::Gumbel { scale }) => gumbel_truth(base, scale),
        (PricingForm::Scaled, PriceNoise::Normal { sd }) => normal_truth(base, base.abs() * sd),
        _ => simulated_truth(spec, j, x2),
    })
}

/// All four truth curves of a design, keyed like `F1|x2=0`.
pub fn truth_curves(spec: &DgpSpec) -> Result<BTreeMap<String, TruthCurve>> {
    let mut out = BTreeMap::new();
    for j in 1..=2 {
        for x2 in 0..=1u8 {
            out.insert(format!("F{j}|x2={x2}"), truth_curve(spec, j, x2)?);
        }
    }
    Ok(out)
}

/// Integrated squared bias and integrated MSE of estimated curves against a
/// truth tabulated on the same grid, optionally weighted by a density.
/// IBias2 integrates the squared pointwise mean error; IMSE integrates the
/// pointwise mean squared error.
pub fn integrated_errors(
    estimates: &[Vec<f64>],
    truth_cdf: &[f64],
    grid: &[f64],
    weights: Option<&[f64]>,
) -> Result<(f64, f64)> {
    if estimates.is_empty() {
        return Err(Error::invalid("no estimated curves"));
    }
    if truth_cdf.len() != grid.len() || estimates.iter().any(|e| e.len() != grid.len()) {
        return Err(Error::GridMismatch);
    }
    let r = estimates.len() as f64;
    let m = grid.len();
    let mut bias2 = vec![0.0; m];
    let mut mse = vec![0.0; m];
    for i in 0..m {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for est in estimates {
            let e = est[i] - truth_cdf[i];
            sum += e;
            sum_sq += e * e;
        }
        bias2[i] = (sum / r) * (sum / r);
        mse[i] = sum_sq / r;
    }
    Ok((
        integrate_on_grid(grid, &bias2, weights)?,
        integrate_on_grid(grid, &mse, weights)?,
    ))
}

/// Trapezoid rule on an even or uneven grid, with optional pointwise
/// weights (a density, typically).
pub fn integrate_on_grid(grid: &[f64], values: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if grid.len() != values.len() || weights.is_some_and(|w| w.len() != grid.len()) {
        return Err(Error::GridMismatch);
    }
    if grid.len() < 2 {
        return Err(Error::GridMismatch);
    }
    let f = |i: usize| values[i] * weights.map_or(1.0, |w| w[i]);
    let mut total = 0.0;
    for i in 1..grid.len() {
        total += 0.5 * (f(i) + f(i - 1)) * (grid[i] - grid[i - 1]);
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Study driver.

/// One study: a design, a sample size, and a replication budget.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub spec: DgpSpec,
    pub n: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub options: EstimateOptions,
    /// Run the fixed-point (semiparametric) estimator.
    pub run_fc: bool,
    /// Run the two-step parametric baseline.
    pub run_ts: bool,
}

/// Location/spread summary of one parameter across replications.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParamStats {
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

/// Integrated error summary of one estimated curve across replications.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurveStats {
    pub ibias2: f64,
    pub imse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub params: BTreeMap<String, ParamStats>,
    pub curves: BTreeMap<String, CurveStats>,
    pub used_reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub dgp_id: usize,
    pub n: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub fc: Option<EstimatorSummary>,
    pub ts: Option<EstimatorSummary>,
}

struct RepFit {
    errors: BTreeMap<String, f64>,
    /// Per curve, the estimated cdf on the truth grid.
    curves: BTreeMap<String, Vec<f64>>,
}

struct RepOutcome {
    fc: Option<RepFit>,
    ts: Option<RepFit>,
}

fn param_errors(
    spec: &DgpSpec,
    gamma: f64,
    xi2: f64,
    beta: Option<f64>,
) -> BTreeMap<String, f64> {
    let mut errors = BTreeMap::new();
    errors.insert("gamma".to_string(), gamma - spec.gamma);
    errors.insert("xi2".to_string(), xi2 - spec.xi2);
    if let Some(b) = beta {
        errors.insert("beta".to_string(), b - spec.beta);
    }
    errors
}

/// Offered cdf implied by a fixed-point fit, mixed over the excluded
/// covariate with its empirical within-x2 shares, on the truth grid.
fn fc_curve(
    result: &EstimationResult,
    data: &Dataset,
    j: usize,
    x2: u8,
    grid: &[f64],
) -> Vec<f64> {
    let groups = group_cells(data);
    let keys: Vec<_> = groups.keys().filter(|k| k.x2 == x2).collect();
    let total: usize = keys.iter().map(|k| groups[k].len()).sum();
    let mut curve = vec![0.0; grid.len()];
    for key in keys {
        let share = groups[key].len() as f64 / total as f64;
        let component = result.offered[key].component(j - 1);
        for (c, &w) in curve.iter_mut().zip(grid) {
            *c += share * component.cdf_at(w.exp());
        }
    }
    curve
}

/// Offered cdf implied by a two-step fit: normal in log price.
fn ts_curve(pricing: &PricingFit, x2: u8, grid: &[f64]) -> Vec<f64> {
    let mu = pricing.mu(x2);
    grid.iter()
        .map(|&w| normal_cdf((w - mu) / pricing.sigma))
        .collect()
}

fn fc_rep_fit(
    spec: &DgpSpec,
    truths: &BTreeMap<String, TruthCurve>,
    data: &Dataset,
    result: &EstimationResult,
) -> RepFit {
    let theta = &result.theta_hat;
    let mut curves = BTreeMap::new();
    for (name, truth) in truths {
        let (j, x2) = parse_curve_key(name);
        curves.insert(name.clone(), fc_curve(result, data, j, x2, &truth.grid));
    }
    RepFit {
        errors: param_errors(spec, theta.gamma, theta.xi[1], theta.beta),
        curves,
    }
}

fn ts_rep_fit(
    spec: &DgpSpec,
    truths: &BTreeMap<String, TruthCurve>,
    result: &TwoStepResult,
) -> RepFit {
    let theta = &result.theta_hat;
    let mut curves = BTreeMap::new();
    for (name, truth) in truths {
        let (j, x2) = parse_curve_key(name);
        curves.insert(name.clone(), ts_curve(&result.pricing[j - 1], x2, &truth.grid));
    }
    RepFit {
        errors: param_errors(spec, theta.gamma, theta.xi[1], theta.beta),
        curves,
    }
}

fn parse_curve_key(name: &str) -> (usize, u8) {
    // Keys are produced by truth_curves: F{j}|x2={v}.
    let j = name.as_bytes()[1] - b'0';
    let x2 = name.as_bytes()[name.len() - 1] - b'0';
    (j as usize, x2)
}

fn summarize_estimator(
    fits: Vec<&RepFit>,
    failures: usize,
    truths: &BTreeMap<String, TruthCurve>,
) -> Result<EstimatorSummary> {
    let r = fits.len();
    if r == 0 {
        return Err(Error::invalid(
            "no successful replications; cannot summarize",
        ));
    }
    let mut params = BTreeMap::new();
    let names: Vec<String> = fits[0].errors.keys().cloned().collect();
    for name in names {
        let errs: Vec<f64> = fits.iter().map(|f| f.errors[&name]).collect();
        let mean = errs.iter().sum::<f64>() / r as f64;
        let sd = if r == 1 {
            0.0
        } else {
            let ss: f64 = errs.iter().map(|e| (e - mean) * (e - mean)).sum();
            (ss / (r - 1) as f64).sqrt()
        };
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / r as f64).sqrt();
        params.insert(
            name,
            ParamStats {
                bias: mean,
                sd,
                rmse,
            },
        );
    }
    let mut curves = BTreeMap::new();
    for (name, truth) in truths {
        let estimates: Vec<Vec<f64>> = fits.iter().map(|f| f.curves[name].clone()).collect();
        let (ibias2, imse) =
            integrated_errors(&estimates, &truth.cdf, &truth.grid, Some(&truth.pdf))?;
        curves.insert(name.clone(), CurveStats { ibias2, imse });
    }
    Ok(EstimatorSummary {
        params,
        curves,
        used_reps: r,
        failures,
    })
}

/// Runs the full replication study: simulate, fit the requested estimators,
/// and aggregate parameter and curve errors. Replication `r` uses seed
/// `base_seed + r`; failed replications are dropped and counted.
pub fn run_study(config: &StudyConfig) -> Result<StudySummary> {
    if config.reps == 0 {
        return Err(Error::invalid("need at least 1 replication"));
    }
    if !(config.run_fc || config.run_ts) {
        return Err(Error::invalid("no estimator selected"));
    }
    let spec = &config.spec;
    let model = spec.model()?;
    let truths = truth_curves(spec)?;

    let outcomes: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let seed = config.base_seed + r as u64;
            let data = match simulate_dataset(spec, config.n, seed) {
                Ok(d) => d,
                Err(_) => return RepOutcome { fc: None, ts: None },
            };
            let fc = if config.run_fc {
                fit_mle(&data, &model, &config.options)
                    .ok()
                    .map(|res| fc_rep_fit(spec, &truths, &data, &res))
            } else {
                None
            };
            let ts = if config.run_ts {
                fit_two_step(&data, &model, &config.options)
                    .ok()
                    .map(|res| ts_rep_fit(spec, &truths, &res))
            } else {
                None
            };
            RepOutcome { fc, ts }
        })
        .collect();

    let gather = |pick: fn(&RepOutcome) -> Option<&RepFit>| -> (Vec<&RepFit>, usize) {
        let fits: Vec<&RepFit> = outcomes.iter().filter_map(pick).collect();
        let failures = config.reps - fits.len();
        (fits, failures)
    };
    let fc = if config.run_fc {
        let (fits, failures) = gather(|o| o.fc.as_ref());
        Some(summarize_estimator(fits, failures, &truths)?)
    } else {
        None
    };
    let ts = if config.run_ts {
        let (fits, failures) = gather(|o| o.ts.as_ref());
        Some(summarize_estimator(fits, failures, &truths)?)
    } else {
        None
    };
    Ok(StudySummary {
        dgp_id: spec.dgp_id,
        n: config.n,
        reps: config.reps,
        base_seed: config.base_seed,
        fc,
        ts,
    })
}
