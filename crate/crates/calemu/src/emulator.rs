//! Gaussian-process emulation of the scalar log-likelihood surface.
//!
//! The emulator places a GP prior with constant mean and Gaussian correlation
//! on f(x), the log-likelihood at simulator input x. Because the simulator is
//! stochastic, repeated evaluations near the same input scatter, so the
//! correlation carries a nugget ν²: between distinct inputs it is
//! exp{−Σ((x_d−x′_d)/φ_d)²}, while at exact coordinate equality it is
//! 1 + ν²/σ², the replication-noise bump that keeps the correlation matrix
//! invertible however dense the training set becomes. The process variance
//! σ² and mean β get the conjugate reference prior ∝ σ⁻² and are integrated
//! out, leaving closed forms for β̂, σ̂² and the predictive mean/covariance,
//! and a marginal posterior over (φ, ν²) that is maximized once and then
//! held fixed.
//!
//! All internal correlation algebra runs in units of the process variance, so
//! the stored ν² is the nugget-to-signal ratio and every correlation query
//! inside a fit passes σ² = 1. The exact-equality branch means predictions
//! taken precisely at a training coordinate reproduce the stored value; a
//! hair's breadth away the fit behaves like the smoother the nugget implies.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, SimplexOptions};
use crate::rng::{stream_rng, streams};

/// Correlation between inputs under roughness `phi` and nugget `nu2`, with
/// the nugget expressed on the scale of the process variance `sigma2`.
pub fn correlation(x: &[f64], x_prime: &[f64], phi: &[f64], nu2: f64, sigma2: f64) -> f64 {
    debug_assert_eq!(x.len(), x_prime.len());
    debug_assert_eq!(x.len(), phi.len());
    if x == x_prime {
        1.0 + nu2 / sigma2
    } else {
        let s: f64 = x
            .iter()
            .zip(x_prime)
            .zip(phi)
            .map(|((a, b), &p)| {
                let d = (a - b) / p;
                d * d
            })
            .sum();
        (-s).exp()
    }
}

/// Roughness lengths (one per input) and the nugget-to-signal ratio.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Hyperparams {
    pub phi: Vec<f64>,
    pub nu2: f64,
}

impl Hyperparams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.phi.len() != dim {
            return Err(Error::validation(format!(
                "expected {dim} roughness lengths, got {}",
                self.phi.len()
            )));
        }
        if self.phi.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::validation("roughness lengths must be finite and positive"));
        }
        if !(self.nu2.is_finite() && self.nu2 >= 0.0) {
            return Err(Error::validation("the nugget must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Flat prior on (log φ, log ν²) inside a box; zero weight outside.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct HyperPrior {
    pub log_phi_bounds: (f64, f64),
    pub log_nu2_bounds: (f64, f64),
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            log_phi_bounds: ((1e-2f64).ln(), (1e2f64).ln()),
            log_nu2_bounds: ((1e-8f64).ln(), 0.0),
        }
    }
}

impl HyperPrior {
    pub fn contains(&self, hyper: &Hyperparams) -> bool {
        let (plo, phi_hi) = self.log_phi_bounds;
        let (nlo, nhi) = self.log_nu2_bounds;
        hyper.phi.iter().all(|&p| {
            let l = p.ln();
            l >= plo && l <= phi_hi
        }) && {
            let l = hyper.nu2.ln();
            l >= nlo && l <= nhi
        }
    }

    /// Log prior density up to a constant: 0 inside the box, −∞ outside.
    pub fn log_density(&self, hyper: &Hyperparams) -> f64 {
        if self.contains(hyper) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn bounds_for_coord(&self, k: usize, p: usize) -> (f64, f64) {
        if k < p {
            self.log_phi_bounds
        } else {
            self.log_nu2_bounds
        }
    }

    fn sample_log_point<R: Rng>(&self, p: usize, rng: &mut R) -> Vec<f64> {
        (0..=p)
            .map(|k| {
                let (lo, hi) = self.bounds_for_coord(k, p);
                lo + rng.random::<f64>() * (hi - lo)
            })
            .collect()
    }
}

fn hyper_from_log(z: &[f64]) -> Hyperparams {
    let p = z.len() - 1;
    Hyperparams {
        phi: z[..p].iter().map(|&l| l.exp()).collect(),
        nu2: z[p].exp(),
    }
}

/// A fitted emulator: training data, hyperparameters, the conjugate
/// mean/variance estimates and a factorization of the correlation matrix.
/// Immutable once fitted (refits produce a fresh state), so shared references
/// can serve predictions concurrently.
#[derive(Debug, Clone)]
pub struct EmulatorState {
    x: Vec<Vec<f64>>,
    f: Vec<f64>,
    hyper: Hyperparams,
    beta_hat: f64,
    sigma2_hat: f64,
    chol: Cholesky<f64, Dyn>,
    resid_solve: DVector<f64>,
    one_solve: DVector<f64>,
    one_a_one: f64,
    ln_det_a: f64,
}

fn build_correlation_matrix(x: &[Vec<f64>], hyper: &Hyperparams) -> DMatrix<f64> {
    let m = x.len();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = correlation(&x[i], &x[i], &hyper.phi, hyper.nu2, 1.0);
        for j in (i + 1)..m {
            let c = correlation(&x[i], &x[j], &hyper.phi, hyper.nu2, 1.0);
            a[(i, j)] = c;
            a[(j, i)] = c;
        }
    }
    a
}

fn conditioning_report(a: DMatrix<f64>) -> String {
    let eig = a.symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!("eigenvalues span [{min:.6e}, {max:.6e}]")
}

impl EmulatorState {
    /// Fit the conjugate posterior at fixed hyperparameters.
    pub fn fit(x: Vec<Vec<f64>>, f: Vec<f64>, hyper: Hyperparams) -> Result<EmulatorState> {
        let m = x.len();
        if m < 4 {
            return Err(Error::validation(format!(
                "need at least 4 training points to estimate the variance, got {m}"
            )));
        }
        if f.len() != m {
            return Err(Error::validation(format!(
                "{m} training inputs but {} values",
                f.len()
            )));
        }
        let p = x[0].len();
        if p == 0 || x.iter().any(|xi| xi.len() != p) {
            return Err(Error::validation("training inputs must share one nonzero dimension"));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("training data must be finite"));
        }
        hyper.validate(p)?;
        for i in 0..m {
            for j in (i + 1)..m {
                if x[i] == x[j] {
                    return Err(Error::validation(format!(
                        "training inputs {i} and {j} are identical; replicate runs must be \
                         averaged or jittered before fitting"
                    )));
                }
            }
        }

        let a = build_correlation_matrix(&x, &hyper);
        let chol = Cholesky::new(a.clone()).ok_or_else(|| {
            Error::numerical(format!(
                "correlation matrix is not positive definite ({}); the inputs may be too \
                 close together for nugget {:.3e}",
                conditioning_report(a),
                hyper.nu2
            ))
        })?;
        let ln_det_a = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();

        let fv = DVector::from_column_slice(&f);
        let one = DVector::from_element(m, 1.0);
        let one_solve = chol.solve(&one);
        let one_a_one = one.dot(&one_solve);
        if !(one_a_one.is_finite() && one_a_one > 0.0) {
            return Err(Error::numerical(
                "correlation matrix solve produced a non-positive normalization",
            ));
        }
        let beta_hat = one_solve.dot(&fv) / one_a_one;
        let centered = &fv - &one * beta_hat;
        let resid_solve = chol.solve(&centered);
        let rss = centered.dot(&resid_solve);
        let scale = fv.iter().map(|v| v * v).sum::<f64>().max(1.0);
        if rss < -1e-8 * scale {
            return Err(Error::numerical(format!(
                "negative residual sum of squares ({rss:.3e}); the factorization is unreliable"
            )));
        }
        let sigma2_hat = rss.max(0.0) / (m as f64 - 3.0);

        Ok(EmulatorState {
            x,
            f,
            hyper,
            beta_hat,
            sigma2_hat,
            chol,
            resid_solve,
            one_solve,
            one_a_one,
            ln_det_a,
        })
    }

    pub fn train_len(&self) -> usize {
        self.x.len()
    }

    pub fn input_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn training_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn training_values(&self) -> &[f64] {
        &self.f
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2_hat
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.train_len() - 1
    }

    /// Solve A v = b against the stored factorization.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    fn t_vector(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| correlation(xi, x, &self.hyper.phi, self.hyper.nu2, 1.0)),
        )
    }

    /// Predictive mean m*(x).
    pub fn posterior_mean(&self, x: &[f64]) -> f64 {
        self.beta_hat + self.t_vector(x).dot(&self.resid_solve)
    }

    /// Predictive covariance σ̂²·c*(x, x′), including the contribution from
    /// the uncertain mean.
    pub fn posterior_cov(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        let t = self.t_vector(x);
        let t_prime = self.t_vector(x_prime);
        let a_inv_tp = self.chol.solve(&t_prime);
        let c = correlation(x, x_prime, &self.hyper.phi, self.hyper.nu2, 1.0);
        let g = 1.0 - t.dot(&self.one_solve);
        let g_prime = 1.0 - t_prime.dot(&self.one_solve);
        self.sigma2_hat * (c - t.dot(&a_inv_tp) + g * g_prime / self.one_a_one)
    }

    /// Predictive variance at one input.
    pub fn posterior_var(&self, x: &[f64]) -> f64 {
        self.posterior_cov(x, x)
    }

    /// Full predictive covariance matrix over a set of query inputs.
    pub fn posterior_cov_matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let m = self.x.len();
        let s = xs.len();
        let mut t = DMatrix::zeros(m, s);
        for (k, xq) in xs.iter().enumerate() {
            t.set_column(k, &self.t_vector(xq));
        }
        let w = self.chol.solve(&t);
        let mut cov = DMatrix::zeros(s, s);
        for i in 0..s {
            for j in i..s {
                let c = correlation(&xs[i], &xs[j], &self.hyper.phi, self.hyper.nu2, 1.0);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        cov -= t.transpose() * &w;
        let g = DVector::from_iterator(
            s,
            (0..s).map(|k| 1.0 - t.column(k).dot(&self.one_solve)),
        );
        for i in 0..s {
            for j in 0..s {
                cov[(i, j)] += g[i] * g[j] / self.one_a_one;
            }
        }
        cov * self.sigma2_hat
    }

    /// Extend the training data and refit at the current hyperparameters.
    /// On error the existing state is left untouched.
    pub fn add_points(&mut self, xs: &[Vec<f64>], fs: &[f64]) -> Result<usize> {
        if xs.len() != fs.len() {
            return Err(Error::validation("each added input needs exactly one value"));
        }
        if xs.is_empty() {
            return Ok(0);
        }
        let mut x = self.x.clone();
        let mut f = self.f.clone();
        x.extend(xs.iter().cloned());
        f.extend_from_slice(fs);
        let refit = EmulatorState::fit(x, f, self.hyper.clone())?;
        *self = refit;
        Ok(xs.len())
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        let file = EmulatorFile {
            format_version: EMULATOR_FORMAT_VERSION,
            inputs: self.x.clone(),
            values: self.f.clone(),
            phi: self.hyper.phi.clone(),
            nu2: self.hyper.nu2,
            beta_hat: self.beta_hat,
            sigma2_hat: self.sigma2_hat,
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let io = |e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, text + "\n").map_err(io)
    }

    /// Load a saved emulator and rebuild its factorization. The stored fit
    /// summary is recomputed and cross-checked so silent file corruption
    /// cannot produce a quietly different emulator.
    pub fn from_file(path: &Path) -> Result<EmulatorState> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let file: EmulatorFile = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if file.format_version != EMULATOR_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "emulator file {} has format version {}, expected {}",
                path.display(),
                file.format_version,
                EMULATOR_FORMAT_VERSION
            )));
        }
        let state = EmulatorState::fit(
            file.inputs,
            file.values,
            Hyperparams {
                phi: file.phi,
                nu2: file.nu2,
            },
        )?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-12);
        if !close(state.beta_hat, file.beta_hat) || !close(state.sigma2_hat, file.sigma2_hat) {
            return Err(Error::validation(format!(
                "emulator file {} is inconsistent: stored fit summary does not match the \
                 training data it carries",
                path.display()
            )));
        }
        Ok(state)
    }
}

const EMULATOR_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EmulatorFile {
    format_version: u32,
    inputs: Vec<Vec<f64>>,
    values: Vec<f64>,
    phi: Vec<f64>,
    nu2: f64,
    beta_hat: f64,
    sigma2_hat: f64,
}

/// Marginal log posterior of (φ, ν²) with σ² and β integrated out:
/// −(m−q)/2·ln σ̂² − ½·ln|A| − ½·ln(1ᵀA⁻¹1) + ln π(φ, ν²), up to a constant.
/// Hyperparameters that leave the prior box or make A non-positive-definite
/// score −∞ rather than erroring, so optimizers can probe freely.
pub fn hyperparam_log_posterior(
    x: &[Vec<f64>],
    f: &[f64],
    hyper: &Hyperparams,
    prior: &HyperPrior,
) -> f64 {
    let lp_prior = prior.log_density(hyper);
    if lp_prior == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let state = match EmulatorState::fit(x.to_vec(), f.to_vec(), hyper.clone()) {
        Ok(s) => s,
        Err(_) => return f64::NEG_INFINITY,
    };
    if state.sigma2_hat <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let m = x.len() as f64;
    -(m - 1.0) / 2.0 * state.sigma2_hat.ln()
        - 0.5 * state.ln_det_a
        - 0.5 * state.one_a_one.ln()
        + lp_prior
}

#[derive(Debug, Clone)]
pub struct HyperOptOutcome {
    pub hyper: Hyperparams,
    pub log_posterior: f64,
    pub gibbs_best: f64,
    pub gibbs_accept_rate: f64,
}

const GIBBS_PROPOSAL_SD: f64 = 0.4;
const INIT_ATTEMPTS: usize = 500;

/// Locate the mode of the hyperparameter posterior: a Metropolis-within-Gibbs
/// exploration of (log φ, log ν²) for `gibbs_iters` sweeps, then a simplex
/// polish started from the best visited point.
pub fn optimize_hyperparams(
    x: &[Vec<f64>],
    f: &[f64],
    prior: &HyperPrior,
    gibbs_iters: usize,
    seed: u64,
) -> Result<HyperOptOutcome> {
    if x.len() < 4 {
        return Err(Error::validation(
            "hyperparameter estimation needs at least 4 training points",
        ));
    }
    let p = x[0].len();
    let objective = |z: &[f64]| hyperparam_log_posterior(x, f, &hyper_from_log(z), prior);
    let mut rng = stream_rng(seed, streams::HYPEROPT);

    // Start from mid-box roughness with a small nugget; fall back to random
    // prior draws if that configuration is not positive definite.
    let mut z: Vec<f64> = (0..=p)
        .map(|k| {
            let (lo, hi) = prior.bounds_for_coord(k, p);
            if k < p {
                0.5 * (lo + hi)
            } else {
                (1e-3f64).ln().clamp(lo, hi)
            }
        })
        .collect();
    let mut lp = objective(&z);
    if lp == f64::NEG_INFINITY {
        let mut found = false;
        for _ in 0..INIT_ATTEMPTS {
            let cand = prior.sample_log_point(p, &mut rng);
            let v = objective(&cand);
            if v > f64::NEG_INFINITY {
                z = cand;
                lp = v;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::numerical(
                "no positive-definite hyperparameter configuration found in the prior box",
            ));
        }
    }

    let step = Normal::new(0.0, GIBBS_PROPOSAL_SD).expect("fixed proposal scale");
    let mut best_z = z.clone();
    let mut best_lp = lp;
    let mut proposals = 0usize;
    let mut accepts = 0usize;
    for _ in 0..gibbs_iters {
        for k in 0..=p {
            let mut cand = z.clone();
            cand[k] += step.sample(&mut rng);
            let v = objective(&cand);
            proposals += 1;
            if v > f64::NEG_INFINITY && rng.random::<f64>().ln() < v - lp {
                z = cand;
                lp = v;
                accepts += 1;
                if lp > best_lp {
                    best_lp = lp;
                    best_z = z.clone();
                }
            }
        }
    }

    let polish = nelder_mead(
        |zz| objective(zz),
        &best_z,
        &SimplexOptions {
            max_evals: 2_000,
            tolerance: 1e-9,
            initial_step: 0.1,
        },
    );
    let (final_z, final_lp) = if polish.value >= best_lp {
        (polish.x, polish.value)
    } else {
        (best_z, best_lp)
    };

    Ok(HyperOptOutcome {
        hyper: hyper_from_log(&final_z),
        log_posterior: final_lp,
        gibbs_best: best_lp,
        gibbs_accept_rate: accepts as f64 / proposals as f64,
    })
}
