//! Atomic outcome distributions, the Thompson-style metric the contraction
//! theory is stated in, and grid CDF reporting.
//!
//! Distributions are stored as atomic measures on their observed support;
//! fixed points of the reweighting operator live exactly on the selected
//! sample's atoms, so nothing is smoothed. Grids only appear when reporting
//! CDFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to merge near-duplicate atoms at construction.
/// After construction, atom sets are compared exactly.
const ATOM_MERGE_RTOL: f64 = 1e-12;

/// Smallest admissible weight; anything below is rejected rather than
/// floored so that log weight ratios stay finite and meaningful.
const MIN_WEIGHT: f64 = 1e-300;

/// A discrete probability measure on `[bounds.0, bounds.1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct AtomicDistribution {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    bounds: (f64, f64),
}

#[derive(Deserialize)]
struct RawDistribution {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    bounds: (f64, f64),
}

impl TryFrom<RawDistribution> for AtomicDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        AtomicDistribution::new(raw.atoms, raw.weights, raw.bounds)
    }
}

fn same_atom(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= ATOM_MERGE_RTOL * a.abs().max(b.abs())
}

impl AtomicDistribution {
    /// Builds a distribution from ascending atoms and weights summing to 1
    /// (within 1e-12). Atoms within relative tolerance 1e-12 of each other
    /// are merged; their weights add.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>, bounds: (f64, f64)) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights must sum to 1, got {sum}")));
        }
        Self::from_unnormalized(atoms, weights, bounds)
    }

    /// Same as [`AtomicDistribution::new`] but accepts any positive total
    /// weight and renormalizes. Used by the reweighting operators, whose
    /// outputs are only defined up to normalization.
    pub fn from_unnormalized(
        atoms: Vec<f64>,
        mut weights: Vec<f64>,
        bounds: (f64, f64),
    ) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptySample);
        }
        if atoms.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if !(bounds.0.is_finite() && bounds.1.is_finite() && bounds.0 <= bounds.1) {
            return Err(Error::invalid(format!("bad bounds [{}, {}]", bounds.0, bounds.1)));
        }
        for (&a, &w) in atoms.iter().zip(&weights) {
            if !a.is_finite() || !w.is_finite() {
                return Err(Error::invalid("non-finite atom or weight"));
            }
            if a < bounds.0 || a > bounds.1 {
                return Err(Error::SupportViolation { value: a, lo: bounds.0, hi: bounds.1 });
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid("weights must have positive finite sum"));
        }
        for w in &mut weights {
            *w /= total;
        }
        // merge near-duplicates, then enforce strict ascent
        let mut merged_atoms: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (&a, &w) in atoms.iter().zip(&weights) {
            match merged_atoms.last() {
                Some(&prev) if same_atom(prev, a) => {
                    *merged_weights.last_mut().unwrap() += w;
                }
                Some(&prev) if a <= prev => {
                    return Err(Error::invalid("atoms must be ascending"));
                }
                _ => {
                    merged_atoms.push(a);
                    merged_weights.push(w);
                }
            }
        }
        if merged_weights.iter().any(|&w| w < MIN_WEIGHT) {
            return Err(Error::invalid("weight below 1e-300"));
        }
        Ok(Self { atoms: merged_atoms, weights: merged_weights, bounds })
    }

    /// Point mass at `atom`.
    pub fn degenerate(atom: f64, bounds: (f64, f64)) -> Result<Self> {
        Self::new(vec![atom], vec![1.0], bounds)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() // never true: construction requires atoms
    }

    /// Replaces the weights, keeping atoms and bounds. The operators use
    /// this to stay on a fixed support.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_unnormalized(self.atoms.clone(), weights, self.bounds)
    }

    /// Right-continuous CDF at a single point.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|&a| a <= x);
        self.weights[..k].iter().sum()
    }

    /// Right-continuous CDF on an ascending grid; one cumulative pass.
    pub fn cdf_on(&self, grid: &[f64]) -> Vec<f64> {
        let cum = self.cumulative();
        grid.iter()
            .map(|&x| {
                let k = self.atoms.partition_point(|&a| a <= x);
                if k == 0 {
                    0.0
                } else {
                    cum[k - 1]
                }
            })
            .collect()
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.weights.len());
        let mut s = 0.0;
        for &w in &self.weights {
            s += w;
            cum.push(s);
        }
        // guard the top against accumulated rounding so reported CDFs end at 1
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        cum
    }
}

/// Empirical distribution of a sample: atoms are the sorted unique values,
/// weights their multiplicities over n.
pub fn empirical_from_sample(values: &[f64], bounds: (f64, f64)) -> Result<AtomicDistribution> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    for &v in values {
        if !v.is_finite() {
            return Err(Error::invalid("non-finite sample value"));
        }
        if v < bounds.0 || v > bounds.1 {
            return Err(Error::SupportViolation { value: v, lo: bounds.0, hi: bounds.1 });
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut atoms: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &v in &sorted {
        match atoms.last() {
            Some(&prev) if same_atom(prev, v) => *weights.last_mut().unwrap() += 1.0 / n,
            _ => {
                atoms.push(v);
                weights.push(1.0 / n);
            }
        }
    }
    AtomicDistribution::from_unnormalized(atoms, weights, bounds)
}

/// Sum of the two directed log-sup weight ratios. `+inf` whenever the atom
/// sets differ (the measures are not mutually absolutely continuous);
/// equality of atom sets is exact, deduplication happened at construction.
pub fn thompson_distance(a: &AtomicDistribution, b: &AtomicDistribution) -> f64 {
    if a.atoms.len() != b.atoms.len()
        || a.atoms.iter().zip(&b.atoms).any(|(&x, &y)| x != y)
    {
        return f64::INFINITY;
    }
    let mut max_ab = f64::NEG_INFINITY;
    let mut max_ba = f64::NEG_INFINITY;
    for (&wa, &wb) in a.weights.iter().zip(&b.weights) {
        let r = wa / wb;
        max_ab = max_ab.max(r);
        max_ba = max_ba.max(1.0 / r);
    }
    max_ab.ln() + max_ba.ln()
}

/// One distribution per alternative; the object the operator acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AtomicDistribution>", into = "Vec<AtomicDistribution>")]
pub struct DistributionProfile {
    components: Vec<AtomicDistribution>,
}

impl TryFrom<Vec<AtomicDistribution>> for DistributionProfile {
    type Error = Error;
    fn try_from(components: Vec<AtomicDistribution>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<DistributionProfile> for Vec<AtomicDistribution> {
    fn from(p: DistributionProfile) -> Self {
        p.components
    }
}

impl DistributionProfile {
    pub fn new(components: Vec<AtomicDistribution>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::invalid("a profile needs at least 2 alternatives"));
        }
        Ok(Self { components })
    }

    pub fn j_count(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[AtomicDistribution] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &AtomicDistribution {
        &self.components[j]
    }
}

/// Max over alternatives of the component Thompson distances.
pub fn profile_distance(a: &DistributionProfile, b: &DistributionProfile) -> Result<f64> {
    if a.j_count() != b.j_count() {
        return Err(Error::ProfileArityMismatch { left: a.j_count(), right: b.j_count() });
    }
    Ok(a.components
        .iter()
        .zip(&b.components)
        .map(|(x, y)| thompson_distance(x, y))
        .fold(0.0, f64::max))
}

/// Total variation with the factor-2 convention: the sum of absolute weight
/// differences over the union of atoms, so the range is [0, 2].
pub fn total_variation(a: &AtomicDistribution, b: &AtomicDistribution) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut tv = 0.0;
    while i < a.atoms.len() || j < b.atoms.len() {
        if j >= b.atoms.len() || (i < a.atoms.len() && a.atoms[i] < b.atoms[j]) {
            tv += a.weights[i];
            i += 1;
        } else if i >= a.atoms.len() || b.atoms[j] < a.atoms[i] {
            tv += b.weights[j];
            j += 1;
        } else {
            tv += (a.weights[i] - b.weights[j]).abs();
            i += 1;
            j += 1;
        }
    }
    tv
}

/// A CDF reported on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl CdfCurve {
    /// CSV with header `grid,value`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "grid,value")?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{g},{v}")?;
        }
        Ok(())
    }
}

/// `n_grid` equally spaced points spanning the distribution's bounds.
pub fn to_grid_cdf(a: &AtomicDistribution, n_grid: usize) -> Result<CdfCurve> {
    if n_grid < 2 {
        return Err(Error::invalid("grid needs at least 2 points"));
    }
    let (lo, hi) = a.bounds();
    if lo >= hi {
        return Err(Error::invalid("degenerate bounds cannot span a grid"));
    }
    let step = (hi - lo) / (n_grid - 1) as f64;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| if i + 1 == n_grid { hi } else { lo + step * i as f64 })
        .collect();
    let values = a.cdf_on(&grid);
    Ok(CdfCurve { grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dist(atoms: &[f64], weights: &[f64], bounds: (f64, f64)) -> AtomicDistribution {
        AtomicDistribution::new(atoms.to_vec(), weights.to_vec(), bounds).unwrap()
    }

    #[test]
    fn empirical_counts_multiplicities() {
        let d = empirical_from_sample(&[1.0, 1.0, 2.0], (0.0, 3.0)).unwrap();
        assert_eq!(d.atoms(), &[1.0, 2.0]);
        assert_relative_eq!(d.weights()[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(d.weights()[1], 1.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn empirical_single_value_is_degenerate() {
        let d = empirical_from_sample(&[5.0], (0.0, 10.0)).unwrap();
        assert_eq!(d.atoms(), &[5.0]);
        assert_eq!(d.weights(), &[1.0]);
    }

    #[test]
    fn empirical_distinct_draws_weigh_equally() {
        let vals: Vec<f64> = (0..17).map(|i| 0.3 * i as f64 + 0.05).collect();
        let d = empirical_from_sample(&vals, (0.0, 6.0)).unwrap();
        assert_eq!(d.len(), 17);
        for &w in d.weights() {
            assert_relative_eq!(w, 1.0 / 17.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn empirical_rejects_bad_input() {
        assert_eq!(
            empirical_from_sample(&[], (0.0, 1.0)).unwrap_err().to_string(),
            "empty sample"
        );
        let err = empirical_from_sample(&[4.0], (0.0, 3.0)).unwrap_err();
        assert!(err.to_string().starts_with("support violation"));
    }

    #[test]
    fn construction_guards_invariants() {
        assert!(AtomicDistribution::new(vec![1.0, 2.0], vec![0.5, 0.6], (0.0, 3.0)).is_err());
        assert!(AtomicDistribution::new(vec![2.0, 1.0], vec![0.5, 0.5], (0.0, 3.0)).is_err());
        assert!(AtomicDistribution::new(vec![1.0], vec![1.0], (2.0, 3.0)).is_err());
        // duplicate atoms merge instead of erroring
        let d = AtomicDistribution::new(vec![1.0, 1.0, 2.0], vec![0.25, 0.25, 0.5], (0.0, 3.0))
            .unwrap();
        assert_eq!(d.atoms(), &[1.0, 2.0]);
        assert_relative_eq!(d.weights()[0], 0.5);
    }

    #[test]
    fn thompson_matches_hand_example() {
        let a = dist(&[1.0, 2.0], &[0.5, 0.5], (0.0, 3.0));
        let b = dist(&[1.0, 2.0], &[0.25, 0.75], (0.0, 3.0));
        assert_eq!(thompson_distance(&a, &a), 0.0);
        assert_relative_eq!(thompson_distance(&a, &b), 3.0f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(
            thompson_distance(&a, &b),
            thompson_distance(&b, &a),
            max_relative = 1e-14
        );
        let c = dist(&[1.0, 3.0], &[0.5, 0.5], (0.0, 3.0));
        assert_eq!(thompson_distance(&a, &c), f64::INFINITY);
    }

    #[test]
    fn profile_distance_takes_component_max() {
        let a = dist(&[1.0, 2.0], &[0.5, 0.5], (0.0, 3.0));
        let b = dist(&[1.0, 2.0], &[0.25, 0.75], (0.0, 3.0));
        let p = DistributionProfile::new(vec![a.clone(), a.clone()]).unwrap();
        let q = DistributionProfile::new(vec![b.clone(), a.clone()]).unwrap();
        assert_eq!(profile_distance(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(
            profile_distance(&p, &q).unwrap(),
            3.0f64.ln(),
            max_relative = 1e-14
        );
        let r = DistributionProfile::new(vec![a.clone(), a.clone(), a.clone()]).unwrap();
        let err = profile_distance(&p, &r).unwrap_err();
        assert!(err.to_string().starts_with("profile arity mismatch"));
        let disjoint = dist(&[1.0, 3.0], &[0.5, 0.5], (0.0, 3.0));
        let s = DistributionProfile::new(vec![disjoint, a.clone()]).unwrap();
        assert_eq!(profile_distance(&p, &s).unwrap(), f64::INFINITY);
    }

    #[test]
    fn total_variation_examples() {
        let a = dist(&[1.0, 2.0], &[0.5, 0.5], (0.0, 3.0));
        let b = dist(&[1.0, 2.0], &[0.25, 0.75], (0.0, 3.0));
        assert_eq!(total_variation(&a, &a), 0.0);
        assert_relative_eq!(total_variation(&a, &b), 0.5, max_relative = 1e-14);
        let c = dist(&[4.0, 5.0], &[0.5, 0.5], (0.0, 6.0));
        assert_relative_eq!(total_variation(&a, &c), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn tv_bound_is_tight_at_quarter_ratio() {
        // two-atom pair with p = 1/2 and eps = delta/4: (TV/2)/d approaches 1/4
        let delta = 1e-4;
        let eps = delta / 4.0;
        let a = dist(&[1.0, 2.0], &[0.5 + eps, 0.5 - eps], (0.0, 3.0));
        let b = dist(&[1.0, 2.0], &[0.5 - eps, 0.5 + eps], (0.0, 3.0));
        let d = thompson_distance(&a, &b);
        let tv = total_variation(&a, &b);
        assert!(tv <= d, "TV bound violated: {tv} > {d}");
        let ratio = 0.5 * tv / d;
        assert_relative_eq!(ratio, 0.25, max_relative = 1e-3);
    }

    #[test]
    fn grid_cdf_step_function() {
        let d = dist(&[5.0], &[1.0], (0.0, 10.0));
        let c = to_grid_cdf(&d, 3).unwrap();
        assert_eq!(c.grid, vec![0.0, 5.0, 10.0]);
        assert_eq!(c.values, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn grid_cdf_right_continuous_at_interior_point() {
        let d = dist(&[1.0, 2.0], &[2.0 / 3.0, 1.0 / 3.0], (0.0, 3.0));
        assert_relative_eq!(d.cdf_at(1.5), 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(d.cdf_at(1.0), 2.0 / 3.0, max_relative = 1e-14);
        assert_eq!(d.cdf_at(0.5), 0.0);
        assert_eq!(d.cdf_at(2.0), 1.0);
    }

    #[test]
    fn grid_cdf_300_points_monotone_ending_at_one() {
        let d = dist(&[0.5, 1.1, 2.9], &[0.2, 0.3, 0.5], (0.0, 3.0));
        let c = to_grid_cdf(&d, 300).unwrap();
        assert_eq!(c.values.len(), 300);
        for w in c.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(*c.values.last().unwrap(), 1.0);
        assert!(to_grid_cdf(&d, 1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = dist(&[1.0, 2.5], &[0.4, 0.6], (0.5, 3.0));
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"atoms\"") && s.contains("\"weights\"") && s.contains("\"bounds\""));
        let back: AtomicDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        let p = DistributionProfile::new(vec![d.clone(), d.clone()]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: DistributionProfile = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        // invalid payloads refuse to parse
        let bad = r#"{"atoms":[1.0],"weights":[0.5],"bounds":[0.0,2.0]}"#;
        assert!(serde_json::from_str::<AtomicDistribution>(bad).is_err());
    }

    #[test]
    fn csv_has_expected_header() {
        let c = CdfCurve { grid: vec![0.0, 1.0], values: vec![0.5, 1.0] };
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("grid,value\n"));
        assert!(text.contains("0,0.5"));
    }
}
