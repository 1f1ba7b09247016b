//! Semiparametric maximum likelihood for the selection parameters.
//!
//! The sample only records the price of the chosen alternative, so for a
//! candidate parameter vector the offered profile of every covariate cell is
//! recovered by the fixed-point inversion, the implied choice probabilities
//! are integrated against that profile, and the observed choices score the
//! parameters. A derivative-free multistart search maximizes the resulting
//! profile likelihood.
//!
//! Binary log-price models get a dedicated kernel: per cell, the matrix of
//! pairwise log-price differences is precomputed once, each parameter vector
//! costs one batch of selection-function evaluations, and the inversion runs
//! as matrix-vector passes on the atom weights. Solutions are cached by
//! (cell, rounded parameters) since the optimizer revisits nearby points.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dist::{empirical_from_sample, AtomicDistribution, DistributionProfile};
use crate::error::{Error, Result};
use crate::fixpoint::{solve_fixed_point, FixedPointConfig, FixedPointInit, FixedPointReport};
use crate::select::{
    choice_prob_given_own_price, clamp_prob, normal_cdf, std_logistic_cdf, Covariates,
    SelectionKind,
    SelectionModel, ThetaVector,
};
use crate::simplex::{minimize, SimplexOptions};

/// Sentinel mean log-likelihood for parameter values where the inversion
/// fails or degenerates; large enough that any genuine fit beats it.
pub const LOGLIK_PENALTY: f64 = -1e6;

/// One individual: the chosen alternative (1-based), the discrete covariates,
/// and the price of the chosen alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub choice: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<u8>,
    pub x2: u8,
    pub price: f64,
}

/// A validated sample: nonempty, choices within range, positive prices, and
/// the excluded covariate either present on every row or on none.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    j_count: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, j_count: usize) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptySample);
        }
        if j_count < 2 {
            return Err(Error::invalid("need at least 2 alternatives"));
        }
        let first_has_x1 = observations[0].x1.is_some();
        for (i, obs) in observations.iter().enumerate() {
            if obs.choice < 1 || obs.choice > j_count {
                return Err(Error::invalid(format!(
                    "row {}: choice {} outside 1..={}",
                    i + 1,
                    obs.choice,
                    j_count
                )));
            }
            if !(obs.price.is_finite() && obs.price > 0.0) {
                return Err(Error::invalid(format!(
                    "row {}: price must be positive and finite",
                    i + 1
                )));
            }
            if obs.x1.is_some() != first_has_x1 {
                return Err(Error::invalid(
                    "x1 must be present on every row or absent on every row",
                ));
            }
            if let Some(v) = obs.x1 {
                if v > 1 {
                    return Err(Error::invalid(format!("row {}: x1 must be 0 or 1", i + 1)));
                }
            }
            if obs.x2 > 1 {
                return Err(Error::invalid(format!("row {}: x2 must be 0 or 1", i + 1)));
            }
        }
        Ok(Self {
            observations,
            j_count,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn j_count(&self) -> usize {
        self.j_count
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty() // never true: construction requires rows
    }

    pub fn has_x1(&self) -> bool {
        self.observations[0].x1.is_some()
    }

    /// Reads `id,choice[,x1],x2,price` with a header row. Column order is
    /// free but the set must match exactly; `x1` is the optional one.
    pub fn read_csv<R: std::io::Read>(reader: R, j_count: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let find = |name: &str| names.iter().position(|&h| h == name);
        let (id_col, choice_col, x2_col, price_col) =
            match (find("id"), find("choice"), find("x2"), find("price")) {
                (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
                _ => {
                    return Err(Error::invalid(
                        "header must contain id, choice, x2, price (x1 optional)",
                    ))
                }
            };
        let x1_col = find("x1");
        let expected = 4 + usize::from(x1_col.is_some());
        if names.len() != expected {
            return Err(Error::invalid(format!(
                "unexpected columns in header: {}",
                names.join(",")
            )));
        }
        let parse = |field: &str, what: &str, row: usize| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| {
                Error::invalid(format!("row {row}: cannot parse {what} from '{field}'"))
            })
        };
        let mut observations = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 1;
            parse(&record[id_col], "id", row)?;
            let choice = parse(&record[choice_col], "choice", row)? as usize;
            let x2 = parse(&record[x2_col], "x2", row)? as u8;
            let price = parse(&record[price_col], "price", row)?;
            let x1 = match x1_col {
                Some(c) => Some(parse(&record[c], "x1", row)? as u8),
                None => None,
            };
            observations.push(Observation {
                choice,
                x1,
                x2,
                price,
            });
        }
        Self::new(observations, j_count)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        if self.has_x1() {
            wtr.write_record(["id", "choice", "x1", "x2", "price"])?;
            for (i, obs) in self.observations.iter().enumerate() {
                wtr.write_record(&[
                    (i + 1).to_string(),
                    obs.choice.to_string(),
                    obs.x1.unwrap().to_string(),
                    obs.x2.to_string(),
                    obs.price.to_string(),
                ])?;
            }
        } else {
            wtr.write_record(["id", "choice", "x2", "price"])?;
            for (i, obs) in self.observations.iter().enumerate() {
                wtr.write_record(&[
                    (i + 1).to_string(),
                    obs.choice.to_string(),
                    obs.x2.to_string(),
                    obs.price.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A covariate cell: one value combination of the observed discrete
/// covariates. Estimation conditions on cells throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub x1: Option<u8>,
    pub x2: u8,
}

impl CellKey {
    pub fn covariates(&self) -> Covariates {
        Covariates {
            x1: self.x1,
            x2: self.x2,
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.x1 {
            Some(v) => write!(f, "x1={},x2={}", v, self.x2),
            None => write!(f, "x2={}", self.x2),
        }
    }
}

impl FromStr for CellKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut x1 = None;
        let mut x2 = None;
        for part in s.split(',') {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad cell key '{s}'")))?;
            let v: u8 = value
                .parse()
                .map_err(|_| Error::invalid(format!("bad cell key '{s}'")))?;
            match name {
                "x1" => x1 = Some(v),
                "x2" => x2 = Some(v),
                _ => return Err(Error::invalid(format!("bad cell key '{s}'"))),
            }
        }
        match x2 {
            Some(x2) => Ok(CellKey { x1, x2 }),
            None => Err(Error::invalid(format!("bad cell key '{s}'"))),
        }
    }
}

impl Serialize for CellKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Groups observation indices by covariate cell, in deterministic order.
pub fn group_cells(data: &Dataset) -> BTreeMap<CellKey, Vec<usize>> {
    let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (i, obs) in data.observations.iter().enumerate() {
        cells
            .entry(CellKey {
                x1: obs.x1,
                x2: obs.x2,
            })
            .or_default()
            .push(i);
    }
    cells
}

/// Per-cell empirical distributions of the selected prices, one component per
/// alternative, with bounds set to the realized range. Every alternative must
/// be chosen at least once in every cell.
pub fn estimate_selected_distributions(
    data: &Dataset,
) -> Result<BTreeMap<CellKey, DistributionProfile>> {
    let mut out = BTreeMap::new();
    for (key, idx) in group_cells(data) {
        let mut components = Vec::with_capacity(data.j_count);
        for j in 1..=data.j_count {
            let prices: Vec<f64> = idx
                .iter()
                .map(|&i| data.observations[i])
                .filter(|o| o.choice == j)
                .map(|o| o.price)
                .collect();
            if prices.is_empty() {
                return Err(Error::EmptyCell {
                    alternative: j,
                    cell: key.to_string(),
                });
            }
            let lo = prices.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            components.push(empirical_from_sample(&prices, (lo, hi))?);
        }
        out.insert(key, DistributionProfile::new(components)?);
    }
    Ok(out)
}

/// Tolerances for the inversion and budget for the parameter search.
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    /// Thompson-step tolerance of the fixed-point iteration.
    pub tol: f64,
    /// Iteration cap of the fixed-point iteration.
    pub max_iter: usize,
    pub simplex: SimplexOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            tol: 1e-10,
            max_iter: 200,
            simplex: SimplexOptions::default(),
        }
    }
}

/// One accepted improvement during the likelihood search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub theta: ThetaVector,
    pub loglik: f64,
}

/// Everything the estimator produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: ThetaVector,
    /// Mean log-likelihood at the maximizer.
    pub loglik: f64,
    /// Empirical selected-price profiles per cell.
    pub selected: BTreeMap<CellKey, DistributionProfile>,
    /// Recovered offered-price profiles per cell, at `theta_hat`.
    pub offered: BTreeMap<CellKey, DistributionProfile>,
    /// Fixed-point diagnostics per cell, at `theta_hat`.
    pub reports: BTreeMap<CellKey, FixedPointReport>,
    /// Bootstrap standard errors, when computed.
    pub se: Option<ThetaVector>,
    /// Accepted improvements, in evaluation order; loglik is nondecreasing.
    pub optimizer_trace: Vec<TraceEntry>,
}

// ---------------------------------------------------------------------------
// Binary log-price kernel.

#[derive(Clone)]
struct KernelCell {
    key: CellKey,
    x1: f64,
    n1: f64,
    n2: f64,
    g1: Vec<f64>,
    g2: Vec<f64>,
    /// Row-major K x L matrix of log-price differences w1[k] - w2[l].
    diff: Vec<f64>,
    log_g1: Vec<f64>,
    log_g2: Vec<f64>,
}

#[derive(Clone)]
struct CellSolution {
    u: Vec<f64>,
    v: Vec<f64>,
    /// n1 ln Prob1 + n2 ln Prob2 for this cell; NaN marks a failed inversion.
    loglik_sum: f64,
    converged: bool,
    steps: Vec<f64>,
}

struct Kernel {
    cells: Vec<KernelCell>,
    logistic: bool,
    n: f64,
    tol: f64,
    max_iter: usize,
    cache: Mutex<HashMap<(usize, [i64; 3]), CellSolution>>,
}

fn build_kernel(
    data: &Dataset,
    selected: &BTreeMap<CellKey, DistributionProfile>,
    model: &SelectionModel,
    opts: &EstimateOptions,
) -> Result<Kernel> {
    let logistic = match model.kind {
        SelectionKind::BinaryProbitLogprice => false,
        SelectionKind::BinaryLogisticLogprice => true,
        _ => {
            return Err(Error::invalid(
                "maximum likelihood requires a binary log-price selection kind",
            ))
        }
    };
    let groups = group_cells(data);
    let mut cells = Vec::with_capacity(groups.len());
    for (key, idx) in &groups {
        let profile = selected
            .get(key)
            .ok_or_else(|| Error::invalid(format!("no selected profile for cell {key}")))?;
        let d1 = profile.component(0);
        let d2 = profile.component(1);
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
            .filter(|&&i| data.observations[i].choice == 1)
            .count();
        cells.push(KernelCell {
            key: *key,
            x1: key.x1.map(f64::from).unwrap_or(0.0),
            n1: n1 as f64,
            n2: (idx.len() - n1) as f64,
            log_g1: d1.weights().iter().map(|w| w.ln()).collect(),
            log_g2: d2.weights().iter().map(|w| w.ln()).collect(),
            g1: d1.weights().to_vec(),
            g2: d2.weights().to_vec(),
            diff,
        });
    }
    Ok(Kernel {
        cells,
        logistic,
        n: data.len() as f64,
        tol: opts.tol,
        max_iter: opts.max_iter,
        cache: Mutex::new(HashMap::new()),
    })
}

fn round_key(theta: &[f64; 3]) -> [i64; 3] {
    let mut k = [0i64; 3];
    for (out, v) in k.iter_mut().zip(theta) {
        *out = (v / 1e-12).round() as i64;
    }
    k
}

impl Kernel {
    /// Solves one cell at (gamma, xi2, beta), reading the cache first.
    fn solve_cell(&self, ci: usize, gamma: f64, xi2: f64, beta: f64) -> CellSolution {
        let key = (ci, round_key(&[gamma, xi2, beta]));
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let cell = &self.cells[ci];
        let k = cell.g1.len();
        let l = cell.g2.len();
        let shift = beta * cell.x1 - xi2;
        let mut f = vec![0.0f64; k * l];
        if self.logistic {
            for (fv, d) in f.iter_mut().zip(&cell.diff) {
                *fv = clamp_prob(std_logistic_cdf(shift - gamma * d));
            }
        } else {
            for (fv, d) in f.iter_mut().zip(&cell.diff) {
                *fv = clamp_prob(normal_cdf(shift - gamma * d));
            }
        }

        let mut u = cell.g1.clone();
        let mut v = cell.g2.clone();
        let mut pr1 = vec![0.0f64; k];
        let mut pr2 = vec![0.0f64; l];
        let mut steps = Vec::new();
        let mut converged = false;
        for _ in 0..self.max_iter {
            for (kk, p) in pr1.iter_mut().enumerate() {
                let row = &f[kk * l..(kk + 1) * l];
                *p = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            for (ll, p) in pr2.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (kk, &uv) in u.iter().enumerate() {
                    acc += (1.0 - f[kk * l + ll]) * uv;
                }
                *p = acc;
            }
            // New weights in logs to survive tiny retention probabilities.
            let step_u = renormalize_log(&cell.log_g1, &pr1, &mut u);
            let step_v = renormalize_log(&cell.log_g2, &pr2, &mut v);
            let step = step_u.max(step_v);
            steps.push(step);
            if !step.is_finite() {
                break;
            }
            if step <= self.tol {
                converged = true;
                break;
            }
        }

        let solution = if converged {
            for (kk, p) in pr1.iter_mut().enumerate() {
                let row = &f[kk * l..(kk + 1) * l];
                *p = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let prob1: f64 = u.iter().zip(&pr1).map(|(a, b)| a * b).sum();
            let mut prob2 = 0.0;
            for (ll, &vv) in v.iter().enumerate() {
                let mut acc = 0.0;
                for (kk, &uv) in u.iter().enumerate() {
                    acc += (1.0 - f[kk * l + ll]) * uv;
                }
                prob2 += vv * acc;
            }
            let prob1 = clamp_prob(prob1);
            let prob2 = clamp_prob(prob2);
            CellSolution {
                u,
                v,
                loglik_sum: cell.n1 * prob1.ln() + cell.n2 * prob2.ln(),
                converged,
                steps,
            }
        } else {
            CellSolution {
                u,
                v,
                loglik_sum: f64::NAN,
                converged,
                steps,
            }
        };
        self.cache.lock().unwrap().insert(key, solution.clone());
        solution
    }

    /// Mean log-likelihood; the penalty constant when any cell fails.
    fn mean_loglik(&self, gamma: f64, xi2: f64, beta: f64) -> f64 {
        let mut total = 0.0;
        for ci in 0..self.cells.len() {
            let sol = self.solve_cell(ci, gamma, xi2, beta);
            if !sol.converged || !sol.loglik_sum.is_finite() {
                return LOGLIK_PENALTY;
            }
            total += sol.loglik_sum;
        }
        total / self.n
    }
}

/// Divides `exp(log_g - ln pr)` through its total, writing into `weights`,
/// and returns the Thompson distance between old and new weights.
fn renormalize_log(log_g: &[f64], pr: &[f64], weights: &mut [f64]) -> f64 {
    let mut shift = f64::NEG_INFINITY;
    let mut log_new: Vec<f64> = log_g
        .iter()
        .zip(pr)
        .map(|(lg, p)| {
            let lw = lg - p.ln();
            if lw > shift {
                shift = lw;
            }
            lw
        })
        .collect();
    let mut total = 0.0;
    for lw in log_new.iter_mut() {
        *lw = (*lw - shift).exp();
        total += *lw;
    }
    let mut max_ratio = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    for (w, nw) in weights.iter_mut().zip(&log_new) {
        let new = nw / total;
        let r = new.ln() - w.ln();
        if r > max_ratio {
            max_ratio = r;
        }
        if r < min_ratio {
            min_ratio = r;
        }
        *w = new;
    }
    max_ratio - min_ratio
}

// ---------------------------------------------------------------------------
// Public likelihood surface.

/// Model-implied choice probabilities for one cell: invert the selected
/// profile at `theta`, then integrate the selection function against the
/// recovered offered profile. Returns one probability per alternative.
pub fn model_choice_prob(
    model: &SelectionModel,
    x: Covariates,
    theta: &ThetaVector,
    selected: &DistributionProfile,
    opts: &EstimateOptions,
) -> Result<Vec<f64>> {
    let config = FixedPointConfig {
        tol: opts.tol,
        max_iter: opts.max_iter,
        init: FixedPointInit::Selected,
    };
    let (offered, report) = solve_fixed_point(selected, model, x, theta, &config)?;
    if !report.converged {
        return Err(Error::invalid(
            "fixed point did not converge for this cell",
        ));
    }
    let j_count = offered.j_count();
    let mut probs = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let own = offered.component(j);
        let rivals: Vec<&AtomicDistribution> = (0..j_count)
            .filter(|&k| k != j)
            .map(|k| offered.component(k))
            .collect();
        let mut p = 0.0;
        for (&atom, &w) in own.atoms().iter().zip(own.weights()) {
            p += w * choice_prob_given_own_price(model, j, atom, &rivals, x, theta)?;
        }
        probs.push(p);
    }
    Ok(probs)
}

/// Mean log-likelihood of `theta` on the data, given per-cell selected
/// profiles. Failures of the inversion yield the penalty value, never an
/// error. Binary log-price kinds run on the fast kernel; everything else goes
/// through the generic solver.
pub fn log_likelihood(
    data: &Dataset,
    selected: &BTreeMap<CellKey, DistributionProfile>,
    model: &SelectionModel,
    theta: &ThetaVector,
    opts: &EstimateOptions,
) -> Result<f64> {
    theta.validate_for(model.j_count)?;
    if !model.theta_space.contains(theta) {
        return Err(Error::ThetaOutOfBounds);
    }
    if matches!(
        model.kind,
        SelectionKind::BinaryProbitLogprice | SelectionKind::BinaryLogisticLogprice
    ) {
        let kernel = build_kernel(data, selected, model, opts)?;
        return Ok(kernel.mean_loglik(
            theta.gamma,
            theta.xi[1],
            theta.beta.unwrap_or(0.0),
        ));
    }
    // Generic path: per-cell inversion through the public solver.
    let groups = group_cells(data);
    let mut total = 0.0;
    for (key, idx) in &groups {
        let profile = selected
            .get(key)
            .ok_or_else(|| Error::invalid(format!("no selected profile for cell {key}")))?;
        let probs = match model_choice_prob(model, key.covariates(), theta, profile, opts) {
            Ok(p) => p,
            Err(_) => return Ok(LOGLIK_PENALTY),
        };
        for &i in idx {
            let p = clamp_prob(probs[data.observations[i].choice - 1]);
            total += p.ln();
        }
    }
    Ok(total / data.len() as f64)
}

fn theta_from_free(model: &SelectionModel, has_beta: bool, free: &[f64]) -> Result<ThetaVector> {
    debug_assert_eq!(model.j_count, 2);
    ThetaVector::new(
        free[0],
        vec![0.0, free[1]],
        if has_beta { Some(free[2]) } else { None },
    )
}

/// Maximizes the likelihood with a deterministic three-start simplex search
/// over the model's parameter box.
pub fn fit_mle(
    data: &Dataset,
    model: &SelectionModel,
    opts: &EstimateOptions,
) -> Result<EstimationResult> {
    let selected = estimate_selected_distributions(data)?;
    let kernel = build_kernel(data, &selected, model, opts)?;
    let has_beta = data.has_x1();

    let space = &model.theta_space;
    let beta_box = space.beta.unwrap_or((-10.0, 10.0));
    let mut lower = vec![space.gamma.0, space.xi[1].0];
    let mut upper = vec![space.gamma.1, space.xi[1].1];
    if has_beta {
        lower.push(beta_box.0);
        upper.push(beta_box.1);
    }
    let dim = lower.len();

    // Three starts on the box diagonal: center and 15% of the span each way.
    let center: Vec<f64> = lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect();
    let offset: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(a, b)| 0.15 * (b - a))
        .collect();
    let starts: Vec<Vec<f64>> = vec![
        center.clone(),
        (0..dim).map(|i| center[i] + offset[i]).collect(),
        (0..dim).map(|i| center[i] - offset[i]).collect(),
    ];

    let trace: Mutex<Vec<TraceEntry>> = Mutex::new(Vec::new());
    let best_seen = Mutex::new(f64::NEG_INFINITY);
    let objective = |free: &[f64]| -> f64 {
        let gamma = free[0];
        let xi2 = free[1];
        let beta = if has_beta { free[2] } else { 0.0 };
        let ll = kernel.mean_loglik(gamma, xi2, beta);
        let mut best = best_seen.lock().unwrap();
        if ll > *best {
            *best = ll;
            if let Ok(theta) = theta_from_free(model, has_beta, &[gamma, xi2, beta]) {
                trace.lock().unwrap().push(TraceEntry { theta, loglik: ll });
            }
        }
        -ll
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        let mut f = |x: &[f64]| objective(x);
        let outcome = minimize(&mut f, start, &lower, &upper, &opts.simplex);
        if best.as_ref().is_none_or(|(_, v)| outcome.value < *v) {
            best = Some((outcome.x, outcome.value));
        }
    }
    let (free, neg_ll) = best.expect("at least one start");
    if -neg_ll <= LOGLIK_PENALTY {
        return Err(Error::DegenerateLikelihood);
    }
    let gamma = free[0];
    let xi2 = free[1];
    let beta = if has_beta { free[2] } else { 0.0 };
    let theta_hat = theta_from_free(model, has_beta, &[gamma, xi2, beta])?;

    // Final per-cell solutions at the maximizer (cache hits from the search).
    let mut offered = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for (ci, cell) in kernel.cells.iter().enumerate() {
        let sol = kernel.solve_cell(ci, gamma, xi2, beta);
        if !sol.converged {
            return Err(Error::DegenerateLikelihood);
        }
        let profile = &selected[&cell.key];
        let comp1 = profile.component(0).reweighted(sol.u.clone())?;
        let comp2 = profile.component(1).reweighted(sol.v.clone())?;
        offered.insert(cell.key, DistributionProfile::new(vec![comp1, comp2])?);
        reports.insert(
            cell.key,
            FixedPointReport {
                iterations: sol.steps.len(),
                final_step: sol.steps.last().copied().unwrap_or(f64::INFINITY),
                converged: sol.converged,
                modulus: None,
                per_iteration_steps: sol.steps.clone(),
            },
        );
    }

    Ok(EstimationResult {
        theta_hat,
        loglik: -neg_ll,
        selected,
        offered,
        reports,
        se: None,
        optimizer_trace: trace.into_inner().unwrap(),
    })
}

// ---------------------------------------------------------------------------
// Bootstrap.

/// Refits the model on one resample (with replacement) of the rows.
pub fn bootstrap_replicate(
    data: &Dataset,
    model: &SelectionModel,
    opts: &EstimateOptions,
    seed: u64,
) -> Result<ThetaVector> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let rows: Vec<Observation> = (0..n)
        .map(|_| data.observations[rng.gen_range(0..n)])
        .collect();
    let resample = Dataset::new(rows, data.j_count)?;
    Ok(fit_mle(&resample, model, opts)?.theta_hat)
}

/// Bootstrap summary: coordinate-wise standard deviations across successful
/// replicates, plus how many replicates failed and were dropped.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub se: ThetaVector,
    pub replicates: usize,
    pub failures: usize,
}

/// Resamples the data `b` times with seeds `base_seed + index`, refits each,
/// and reports standard errors across the successful fits.
pub fn bootstrap_se(
    data: &Dataset,
    model: &SelectionModel,
    opts: &EstimateOptions,
    b: usize,
    base_seed: u64,
) -> Result<BootstrapSummary> {
    use rayon::prelude::*;
    if b < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 replicates"));
    }
    let fits: Vec<Result<ThetaVector>> = (0..b)
        .into_par_iter()
        .map(|i| bootstrap_replicate(data, model, opts, base_seed + i as u64))
        .collect();
    let mut thetas = Vec::with_capacity(b);
    let mut failures = 0usize;
    for fit in fits {
        match fit {
            Ok(t) => thetas.push(t),
            Err(_) => failures += 1,
        }
    }
    if thetas.len() < 2 {
        return Err(Error::invalid(
            "too few successful bootstrap replicates to form standard errors",
        ));
    }
    let sd = |values: Vec<f64>| -> f64 {
        let m = values.iter().sum::<f64>() / values.len() as f64;
        let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (values.len() - 1) as f64).sqrt()
    };
    let gamma_sd = sd(thetas.iter().map(|t| t.gamma).collect());
    let xi2_sd = sd(thetas.iter().map(|t| t.xi[1]).collect());
    let beta_sd = if thetas[0].beta.is_some() {
        Some(sd(thetas.iter().map(|t| t.beta.unwrap()).collect()))
    } else {
        None
    };
    Ok(BootstrapSummary {
        se: ThetaVector::new(gamma_sd, vec![0.0, xi2_sd], beta_sd)?,
        replicates: thetas.len(),
        failures,
    })
}
