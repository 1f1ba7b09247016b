//! Bounded Nelder-Mead minimization.
//!
//! Derivative-free, deterministic, with box constraints enforced by clamping
//! every trial point. Uses the dimension-adaptive reflection/expansion/
//! contraction/shrink coefficients of Gao and Han, which behave better than
//! the classic constants when the dimension grows.

/// Options controlling a single simplex run.
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Evaluation budget. The run stops once this many objective calls have
    /// been made, whether or not the simplex has collapsed.
    pub max_evals: usize,
    /// Convergence threshold on the simplex diameter (sup-norm spread of the
    /// vertices around the incumbent).
    pub x_tol: f64,
    /// Edge length of the initial axis-aligned simplex.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evals: 500,
            x_tol: 1e-6,
            initial_step: 1.0,
        }
    }
}

/// Result of a simplex run.
#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Minimizes `f` over the box `[lower, upper]` starting from `start`.
///
/// The objective is total: non-finite values are treated as worse than any
/// finite value, so penalty returns (e.g. a large constant on numerical
/// failure) steer the simplex away without poisoning it.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &SimplexOptions,
) -> SimplexOutcome {
    let n = start.len();
    assert!(n > 0 && lower.len() == n && upper.len() == n);
    let nf = n as f64;
    // Gao-Han adaptive coefficients.
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x)
    };

    // Initial simplex: start plus one step along each axis, reflected when the
    // step would leave the box so vertices never collapse onto the start.
    let mut x0 = start.to_vec();
    clamp_into(&mut x0, lower, upper);
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    verts.push(x0.clone());
    for i in 0..n {
        let mut v = x0.clone();
        let step = if x0[i] + opts.initial_step <= upper[i] {
            opts.initial_step
        } else {
            -opts.initial_step
        };
        v[i] += step;
        clamp_into(&mut v, lower, upper);
        if v[i] == x0[i] {
            // Box thinner than the step in this coordinate: nudge to midpoint.
            v[i] = 0.5 * (lower[i] + upper[i]);
        }
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| eval(v, &mut evals)).collect();

    let mut order: Vec<usize> = (0..=n).collect();
    loop {
        order.sort_by(|&a, &b| key(vals[a]).total_cmp(&key(vals[b])));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let spread = verts
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&verts[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if spread <= opts.x_tol {
            return SimplexOutcome {
                x: verts[best].clone(),
                value: vals[best],
                evaluations: evals,
                converged: true,
            };
        }
        if evals >= opts.max_evals {
            return SimplexOutcome {
                x: verts[best].clone(),
                value: vals[best],
                evaluations: evals,
                converged: false,
            };
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; n];
        for (idx, v) in verts.iter().enumerate() {
            if idx == worst {
                continue;
            }
            for i in 0..n {
                centroid[i] += v[i];
            }
        }
        for c in centroid.iter_mut() {
            *c /= nf;
        }

        let blend = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = (0..n)
                .map(|i| centroid[i] + t * (centroid[i] - verts[worst][i]))
                .collect();
            clamp_into(&mut x, lower, upper);
            x
        };

        let xr = blend(alpha);
        let fr = eval(&xr, &mut evals);

        if key(fr) < key(vals[best]) {
            let xe = blend(alpha * beta);
            let fe = eval(&xe, &mut evals);
            if key(fe) < key(fr) {
                verts[worst] = xe;
                vals[worst] = fe;
            } else {
                verts[worst] = xr;
                vals[worst] = fr;
            }
        } else if key(fr) < key(vals[second_worst]) {
            verts[worst] = xr;
            vals[worst] = fr;
        } else {
            let (xc, fc) = if key(fr) < key(vals[worst]) {
                let xc = blend(alpha * gamma);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = blend(-gamma);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if key(fc) < key(vals[worst]).min(key(fr)) {
                verts[worst] = xc;
                vals[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                for idx in 0..=n {
                    if idx == best {
                        continue;
                    }
                    for i in 0..n {
                        verts[idx][i] = verts[best][i] + delta * (verts[idx][i] - verts[best][i]);
                    }
                    clamp_into(&mut verts[idx], lower, upper);
                    vals[idx] = eval(&verts[idx], &mut evals);
                }
            }
        }
    }
}
