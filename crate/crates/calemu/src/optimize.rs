//! Derivative-free simplex maximization (Nelder–Mead).
//!
//! Built for polishing hyperparameter estimates after a stochastic search:
//! the objective is a log-posterior that may return −∞ off its admissible
//! set, so the routine works directly with extended values and never assumes
//! smoothness. Standard reflection/expansion/contraction/shrink coefficients
//! (1, 2, 1/2, 1/2).

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when the simplex values and vertices both span less than this.
    pub tolerance: f64,
    /// Relative edge length used to build the initial simplex around the
    /// starting point (absolute fallback for zero coordinates).
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evals: 2_000,
            tolerance: 1e-10,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Maximize `f` starting from `x0`. The start point is always vertex 0, so
/// the result can never be worse than the start.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n > 0, "cannot optimize a zero-dimensional point");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for d in 0..n {
        let mut v = x0.to_vec();
        let step = if v[d] != 0.0 {
            v[d].abs() * opts.initial_step
        } else {
            opts.initial_step
        };
        v[d] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let mut converged = false;
    while evals < opts.max_evals {
        // Sort vertices best-first.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalues;

        let spread = values[0] - values[n];
        let extent = (0..n)
            .map(|d| {
                let lo = simplex.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0f64, f64::max);
        if spread.abs() < opts.tolerance && extent < opts.tolerance {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for v in simplex.iter().take(n) {
            for d in 0..n {
                centroid[d] += v[d] / n as f64;
            }
        }

        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n).map(|d| centroid[d] + (centroid[d] - worst[d])).collect();
        let f_r = eval(&reflect, &mut evals);

        if f_r > values[0] {
            let expand: Vec<f64> =
                (0..n).map(|d| centroid[d] + 2.0 * (centroid[d] - worst[d])).collect();
            let f_e = eval(&expand, &mut evals);
            if f_e > f_r {
                simplex[n] = expand;
                values[n] = f_e;
            } else {
                simplex[n] = reflect;
                values[n] = f_r;
            }
        } else if f_r > values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_r;
        } else {
            // Contract toward the better of worst/reflected.
            let (anchor, f_anchor) = if f_r > values[n] {
                (&reflect, f_r)
            } else {
                (&worst, values[n])
            };
            let contract: Vec<f64> =
                (0..n).map(|d| centroid[d] + 0.5 * (anchor[d] - centroid[d])).collect();
            let f_c = eval(&contract, &mut evals);
            if f_c > f_anchor {
                simplex[n] = contract;
                values[n] = f_c;
            } else {
                // Shrink everything toward the best vertex.
                let best = simplex[0].clone();
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = best[d] + 0.5 * (simplex[i][d] - best[d]);
                    }
                    values[i] = eval(&simplex[i].clone(), &mut evals);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] > values[best] {
            best = i;
        }
    }
    SimplexResult {
        x: simplex[best].clone(),
        value: values[best],
        evals,
        converged,
    }
}
