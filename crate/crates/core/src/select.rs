//! Parametric selection functions f_j, choice probabilities against rival
//! price distributions, and the two contraction moduli that bound the
//! reweighting operator.

use serde::{Deserialize, Serialize};

use crate::dist::AtomicDistribution;
use crate::error::{Error, Result};

/// Probabilities are kept strictly inside (0,1) so log weight ratios and
/// likelihoods stay finite.
pub const F_MIN: f64 = 1e-300;
pub const F_MAX: f64 = 1.0 - 1e-16;

/// Exact tensor-product integration is used up to this many rival-atom
/// combinations; beyond it a fixed low-discrepancy rule takes over.
const TENSOR_BUDGET: usize = 2_000_000;
const QMC_POINTS: usize = 4096;

/// Grid resolution used internally when certifying log supermodularity for
/// the four-corner modulus.
const SUPERMOD_RESOLUTION: usize = 16;
/// Own-price/rival-price grid resolution for the general modulus when called
/// through [`compute_rho_star`].
const RHO_GRID_RESOLUTION: usize = 64;

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn logistic_cdf(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic CDF rescaled to unit variance, so a logistic-assumed fit reports
/// coefficients on the same scale as a probit fit instead of inflating them
/// by pi/sqrt(3).
pub fn std_logistic_cdf(z: f64) -> f64 {
    logistic_cdf(z * std::f64::consts::PI / 3.0f64.sqrt())
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(F_MIN, F_MAX)
}

/// Utility parameters: price sensitivity, alternative intercepts (first one
/// normalized to zero), and the optional excluded-covariate coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTheta")]
pub struct ThetaVector {
    pub gamma: f64,
    pub xi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Deserialize)]
struct RawTheta {
    gamma: f64,
    xi: Vec<f64>,
    #[serde(default)]
    beta: Option<f64>,
}

impl TryFrom<RawTheta> for ThetaVector {
    type Error = Error;
    fn try_from(raw: RawTheta) -> Result<Self> {
        ThetaVector::new(raw.gamma, raw.xi, raw.beta)
    }
}

impl ThetaVector {
    pub fn new(gamma: f64, xi: Vec<f64>, beta: Option<f64>) -> Result<Self> {
        let v = Self { gamma, xi, beta };
        v.check()?;
        Ok(v)
    }

    fn check(&self) -> Result<()> {
        if self.xi.is_empty() || self.xi[0] != 0.0 {
            return Err(Error::invalid("xi[0] must be exactly 0 (normalization)"));
        }
        Ok(())
    }

    pub(crate) fn validate_for(&self, j_count: usize) -> Result<()> {
        self.check()?;
        if self.xi.len() != j_count {
            return Err(Error::invalid(format!(
                "theta has {} intercepts for {} alternatives",
                self.xi.len(),
                j_count
            )));
        }
        Ok(())
    }
}

/// Box bounds for each parameter coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSpace {
    pub gamma: (f64, f64),
    pub xi: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<(f64, f64)>,
}

impl ThetaSpace {
    /// Default box: every coordinate in [-10, 10].
    pub fn default_box(j_count: usize, with_beta: bool) -> Self {
        Self {
            gamma: (-10.0, 10.0),
            xi: vec![(-10.0, 10.0); j_count],
            beta: if with_beta { Some((-10.0, 10.0)) } else { None },
        }
    }

    pub fn contains(&self, theta: &ThetaVector) -> bool {
        let inside = |v: f64, b: (f64, f64)| v >= b.0 && v <= b.1;
        if !inside(theta.gamma, self.gamma) {
            return false;
        }
        if theta.xi.len() != self.xi.len() {
            return false;
        }
        for (&v, &b) in theta.xi.iter().zip(&self.xi) {
            if !inside(v, b) {
                return false;
            }
        }
        match (theta.beta, self.beta) {
            (Some(b), Some(bb)) => inside(b, bb),
            (Some(_), None) => false,
            _ => true,
        }
    }
}

/// The selection-function families the toolkit knows how to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionKind {
    /// f_1 = Phi(beta x1 + xi_1 - xi_2 - gamma (log p_1 - log p_2))
    BinaryProbitLogprice,
    /// Same index through the logistic CDF standardized to unit variance,
    /// keeping coefficients comparable with the probit family.
    BinaryLogisticLogprice,
    /// f_j proportional to exp(gamma p_j + xi_j + beta x1 1{j=1}).
    MultinomialLogitLinear,
    /// Price-independent selection probabilities.
    Constant { probs: Vec<f64> },
}

/// A selection function family together with the alternative count and the
/// admissible parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct SelectionModel {
    #[serde(flatten)]
    pub kind: SelectionKind,
    #[serde(rename = "J")]
    pub j_count: usize,
    pub theta_space: ThetaSpace,
}

#[derive(Deserialize)]
struct RawModel {
    #[serde(flatten)]
    kind: SelectionKind,
    #[serde(rename = "J")]
    j_count: usize,
    #[serde(default)]
    theta_space: Option<ThetaSpace>,
}

impl TryFrom<RawModel> for SelectionModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        let space = raw
            .theta_space
            .unwrap_or_else(|| ThetaSpace::default_box(raw.j_count, true));
        SelectionModel::new(raw.kind, raw.j_count, space)
    }
}

impl SelectionModel {
    pub fn new(kind: SelectionKind, j_count: usize, theta_space: ThetaSpace) -> Result<Self> {
        if j_count < 2 {
            return Err(Error::invalid("need at least 2 alternatives"));
        }
        match &kind {
            SelectionKind::BinaryProbitLogprice | SelectionKind::BinaryLogisticLogprice => {
                if j_count != 2 {
                    return Err(Error::invalid("binary selection kinds require J = 2"));
                }
            }
            SelectionKind::Constant { probs } => {
                if probs.len() != j_count {
                    return Err(Error::invalid("constant kind needs one probability per alternative"));
                }
                let sum: f64 = probs.iter().sum();
                if probs.iter().any(|&p| p <= 0.0 || p >= 1.0) || sum > 1.0 + 1e-12 {
                    return Err(Error::invalid(
                        "constant probabilities must lie in (0,1) and sum to at most 1",
                    ));
                }
            }
            SelectionKind::MultinomialLogitLinear => {}
        }
        Ok(Self { kind, j_count, theta_space })
    }

    /// Model with the default parameter box.
    pub fn with_default_space(kind: SelectionKind, j_count: usize) -> Result<Self> {
        let space = ThetaSpace::default_box(j_count, true);
        Self::new(kind, j_count, space)
    }

    /// True when f depends on prices at all.
    pub fn price_sensitive(&self) -> bool {
        !matches!(self.kind, SelectionKind::Constant { .. })
    }
}

/// Discrete covariates entering the selection function. `x1` is the
/// excluded utility shifter (absent in the no-excluded-variable variant),
/// `x2` only moves prices and never enters f directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Covariates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<u8>,
    #[serde(default)]
    pub x2: u8,
}

impl Covariates {
    pub fn new(x1: Option<u8>, x2: u8) -> Self {
        Self { x1, x2 }
    }

    fn x1_value(&self) -> f64 {
        self.x1.map(f64::from).unwrap_or(0.0)
    }
}

/// On-disk model configuration: the model plus a parameter point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub model: SelectionModel,
    pub theta: ThetaVector,
}

/// The binary index beta x1 + xi_1 - xi_2 - gamma (log p1 - log p2).
fn binary_index(prices: &[f64], x: Covariates, theta: &ThetaVector) -> f64 {
    let beta = theta.beta.unwrap_or(0.0);
    beta * x.x1_value() + theta.xi[0] - theta.xi[1] - theta.gamma * (prices[0].ln() - prices[1].ln())
}

/// Selection probability of alternative `j` (0-based) at a full price vector.
pub fn eval_f(
    model: &SelectionModel,
    j: usize,
    prices: &[f64],
    x: Covariates,
    theta: &ThetaVector,
) -> Result<f64> {
    if j >= model.j_count {
        return Err(Error::invalid(format!(
            "alternative index {j} out of range for J = {}",
            model.j_count
        )));
    }
    if prices.len() != model.j_count {
        return Err(Error::invalid(format!(
            "expected {} prices, got {}",
            model.j_count,
            prices.len()
        )));
    }
    theta.validate_for(model.j_count)?;
    if !model.theta_space.contains(theta) {
        return Err(Error::ThetaOutOfBounds);
    }
    if prices.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("non-finite price"));
    }
    let f = match &model.kind {
        SelectionKind::BinaryProbitLogprice | SelectionKind::BinaryLogisticLogprice => {
            if prices.iter().any(|&p| p <= 0.0) {
                return Err(Error::invalid("log-price models need positive prices"));
            }
            let z = binary_index(prices, x, theta);
            let z = if j == 0 { z } else { -z };
            match model.kind {
                SelectionKind::BinaryProbitLogprice => normal_cdf(z),
                _ => std_logistic_cdf(z),
            }
        }
        SelectionKind::MultinomialLogitLinear => {
            let beta = theta.beta.unwrap_or(0.0);
            let util = |k: usize| {
                theta.gamma * prices[k]
                    + theta.xi[k]
                    + if k == 0 { beta * x.x1_value() } else { 0.0 }
            };
            let top = (0..model.j_count).map(util).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..model.j_count).map(|k| (util(k) - top).exp()).sum();
            (util(j) - top).exp() / denom
        }
        SelectionKind::Constant { probs } => probs[j],
    };
    Ok(clamp_prob(f))
}

/// Fixed low-discrepancy sequence (Kronecker rule on square-root-of-prime
/// irrationals); deterministic across runs and platforms.
fn kronecker_alphas(dim: usize) -> Result<Vec<f64>> {
    const PRIMES: [u64; 24] = [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    ];
    if dim > PRIMES.len() {
        return Err(Error::invalid("too many alternatives for the low-discrepancy rule"));
    }
    Ok(PRIMES[..dim].iter().map(|&p| (p as f64).sqrt().fract()).collect())
}

/// Choice probability of `j` when its own price is fixed and every rival
/// price is drawn from `others` (the profile restricted to the rivals, in
/// ascending alternative order).
pub fn choice_prob_given_own_price(
    model: &SelectionModel,
    j: usize,
    own_price: f64,
    others: &[&AtomicDistribution],
    x: Covariates,
    theta: &ThetaVector,
) -> Result<f64> {
    if others.len() + 1 != model.j_count {
        return Err(Error::invalid(format!(
            "expected {} rival distributions, got {}",
            model.j_count - 1,
            others.len()
        )));
    }
    let mut prices = vec![0.0; model.j_count];
    prices[j] = own_price;
    let rival_slots: Vec<usize> = (0..model.j_count).filter(|&k| k != j).collect();

    let combos: usize = others
        .iter()
        .map(|d| d.len())
        .try_fold(1usize, |acc, n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    let prob = if combos <= TENSOR_BUDGET {
        let mut idx = vec![0usize; others.len()];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                prices[rival_slots[d]] = others[d].atoms()[i];
                w *= others[d].weights()[i];
            }
            total += w * eval_f(model, j, &prices, x, theta)?;
            // odometer increment
            let mut d = 0;
            loop {
                if d == idx.len() {
                    return Ok(clamp_prob(total));
                }
                idx[d] += 1;
                if idx[d] < others[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    } else {
        let alphas = kronecker_alphas(others.len())?;
        let quantile = |d: &AtomicDistribution, t: f64| {
            let mut cum = 0.0;
            for (&a, &w) in d.atoms().iter().zip(d.weights()) {
                cum += w;
                if cum >= t {
                    return a;
                }
            }
            *d.atoms().last().unwrap()
        };
        let mut total = 0.0;
        for i in 0..QMC_POINTS {
            for (d, &alpha) in alphas.iter().enumerate() {
                let t = ((i + 1) as f64 * alpha).fract();
                prices[rival_slots[d]] = quantile(others[d], t);
            }
            total += eval_f(model, j, &prices, x, theta)?;
        }
        total / QMC_POINTS as f64
    };
    Ok(clamp_prob(prob))
}

/// Maximum semi-elasticity differences M_j, and the two modulus bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    pub rho: f64,
    pub rho_star: Option<f64>,
    pub supermodular: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
}

/// d ln f_j / d p_j by central finite difference.
fn semi_elasticity(
    model: &SelectionModel,
    j: usize,
    prices: &mut [f64],
    x: Covariates,
    theta: &ThetaVector,
    h: f64,
) -> Result<f64> {
    let p = prices[j];
    prices[j] = p + h;
    let up = eval_f(model, j, prices, x, theta);
    prices[j] = p - h;
    let down = eval_f(model, j, prices, x, theta);
    prices[j] = p;
    let (up, down) = match (up, down) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(Error::ThetaOutOfBounds), _) | (_, Err(Error::ThetaOutOfBounds)) => {
            return Err(Error::ThetaOutOfBounds)
        }
        _ => return Err(Error::NotDifferentiable),
    };
    let s = (up.ln() - down.ln()) / (2.0 * h);
    if !s.is_finite() {
        return Err(Error::NotDifferentiable);
    }
    Ok(s)
}

/// Rival-price configurations for the modulus grids: the full tensor grid
/// when affordable, otherwise every corner plus the low-discrepancy rule.
fn rival_configs(
    bounds: &[(f64, f64)],
    j: usize,
    resolution: usize,
) -> Result<Vec<Vec<f64>>> {
    let rivals: Vec<usize> = (0..bounds.len()).filter(|&k| k != j).collect();
    let dim = rivals.len();
    let total = resolution.checked_pow(dim as u32).unwrap_or(usize::MAX);
    let mut configs = Vec::new();
    if total <= TENSOR_BUDGET {
        let axes: Vec<Vec<f64>> =
            rivals.iter().map(|&k| linspace(bounds[k].0, bounds[k].1, resolution)).collect();
        let mut idx = vec![0usize; dim];
        loop {
            let mut cfg = vec![0.0; bounds.len()];
            for (d, &i) in idx.iter().enumerate() {
                cfg[rivals[d]] = axes[d][i];
            }
            configs.push(cfg);
            let mut d = 0;
            loop {
                if d == dim {
                    return Ok(configs);
                }
                idx[d] += 1;
                if idx[d] < resolution {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
    // corners first: under log supermodularity the extremes live there
    if dim <= 20 {
        for mask in 0..(1usize << dim) {
            let mut cfg = vec![0.0; bounds.len()];
            for (d, &k) in rivals.iter().enumerate() {
                cfg[k] = if mask >> d & 1 == 1 { bounds[k].1 } else { bounds[k].0 };
            }
            configs.push(cfg);
        }
    }
    let alphas = kronecker_alphas(dim)?;
    for i in 0..QMC_POINTS {
        let mut cfg = vec![0.0; bounds.len()];
        for (d, &k) in rivals.iter().enumerate() {
            let t = ((i + 1) as f64 * alphas[d]).fract();
            cfg[k] = bounds[k].0 + t * (bounds[k].1 - bounds[k].0);
        }
        configs.push(cfg);
    }
    Ok(configs)
}

/// Theorem-1-style modulus: rho = (J-1)/4 max_j (range_j * M_j) where M_j is
/// the largest spread of the own-price semi-elasticity across rival-price
/// configurations, maximized over the own price.
pub fn compute_rho_general(
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<ModulusReport> {
    if bounds.len() != model.j_count {
        return Err(Error::invalid("one price range per alternative required"));
    }
    if resolution < 8 {
        return Err(Error::invalid("resolution must be at least 8 per dimension"));
    }
    let j_count = model.j_count;
    let mut m = vec![0.0; j_count];
    for j in 0..j_count {
        let (lo, hi) = bounds[j];
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("bad price range for alternative {}", j + 1)));
        }
        let range = hi - lo;
        if range == 0.0 || !model.price_sensitive() {
            m[j] = 0.0;
            continue;
        }
        let h = 1e-5 * range;
        let own_grid = linspace(lo, hi, resolution);
        let configs = rival_configs(bounds, j, resolution)?;
        let mut worst = 0.0f64;
        for &own in &own_grid {
            let mut smin = f64::INFINITY;
            let mut smax = f64::NEG_INFINITY;
            for cfg in &configs {
                let mut prices = cfg.clone();
                prices[j] = own;
                let s = semi_elasticity(model, j, &mut prices, x, theta, h)?;
                smin = smin.min(s);
                smax = smax.max(s);
            }
            worst = worst.max(smax - smin);
        }
        m[j] = worst;
    }
    let rho = (j_count - 1) as f64 / 4.0
        * bounds
            .iter()
            .zip(&m)
            .map(|(&(lo, hi), &mj)| (hi - lo) * mj)
            .fold(0.0, f64::max);
    Ok(ModulusReport { m, rho, rho_star: None, supermodular: false })
}

/// True when the own-price semi-elasticity is nondecreasing in every rival
/// price along sampled grid lines (slack 1e-8).
pub fn check_log_supermodularity(
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<bool> {
    if bounds.len() != model.j_count {
        return Err(Error::invalid("one price range per alternative required"));
    }
    if resolution < 8 {
        return Err(Error::invalid("resolution must be at least 8 per dimension"));
    }
    if !model.price_sensitive() {
        return Ok(true);
    }
    let j_count = model.j_count;
    for j in 0..j_count {
        let (lo, hi) = bounds[j];
        let range = hi - lo;
        if range == 0.0 {
            continue;
        }
        let h = 1e-5 * range;
        let own_grid = linspace(lo, hi, resolution);
        for k in (0..j_count).filter(|&k| k != j) {
            let k_grid = linspace(bounds[k].0, bounds[k].1, resolution);
            // the remaining rivals sit at corner configurations (capped at 2^6)
            let rest: Vec<usize> = (0..j_count).filter(|&d| d != j && d != k).collect();
            let varying = rest.len().min(6);
            for mask in 0..(1usize << varying) {
                let mut prices = vec![0.0; j_count];
                for (d, &slot) in rest.iter().enumerate() {
                    let hi = d < varying && mask >> d & 1 == 1;
                    prices[slot] = if hi { bounds[slot].1 } else { bounds[slot].0 };
                }
                for &own in &own_grid {
                    prices[j] = own;
                    let mut prev = f64::NEG_INFINITY;
                    for &pk in &k_grid {
                        prices[k] = pk;
                        let s = match semi_elasticity(model, j, &mut prices, x, theta, h) {
                            Ok(s) => s,
                            Err(Error::ThetaOutOfBounds) => return Err(Error::ThetaOutOfBounds),
                            Err(_) => return Ok(false),
                        };
                        if s < prev - 1e-8 {
                            return Ok(false);
                        }
                        prev = s;
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Four-corner modulus, valid under log supermodularity: exact in the
/// corner prices, no own-price grid involved. Also fills the general grid
/// modulus so the report carries both bounds.
pub fn compute_rho_star(
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
    bounds: &[(f64, f64)],
) -> Result<ModulusReport> {
    if !check_log_supermodularity(model, x, theta, bounds, SUPERMOD_RESOLUTION)? {
        return Err(Error::NotSupermodular);
    }
    let mut report = compute_rho_general(model, x, theta, bounds, RHO_GRID_RESOLUTION)?;
    let j_count = model.j_count;
    let mut worst = 0.0f64;
    for j in 0..j_count {
        let corner = |own_hi: bool, rivals_hi: bool| -> Result<f64> {
            let prices: Vec<f64> = (0..j_count)
                .map(|k| {
                    let hi = if k == j { own_hi } else { rivals_hi };
                    if hi {
                        bounds[k].1
                    } else {
                        bounds[k].0
                    }
                })
                .collect();
            Ok(eval_f(model, j, &prices, x, theta)?.ln())
        };
        let r = corner(true, true)? - corner(false, true)? - corner(true, false)?
            + corner(false, false)?;
        worst = worst.max(r);
    }
    report.rho_star = Some((j_count - 1) as f64 / 4.0 * worst);
    report.supermodular = true;
    Ok(report)
}
