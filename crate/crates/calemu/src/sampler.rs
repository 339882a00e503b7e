//! Sampling calibrated inputs from the emulated log-likelihood surface.
//!
//! The loop alternates two moves until the emulator earns its keep as an
//! importance proposal. First, Metropolis-within-Gibbs draws a sample from
//! the flattened surface α·m*(x); while α < 1 the proposal is deliberately
//! overdispersed so early iterations explore widely. Second, the emulator's
//! posterior covariance over that sample is pivoted-Cholesky factorized:
//! sample points whose predictive variance still exceeds a threshold v are
//! sent to the simulator and folded into the training data. Once no point is
//! that uncertain, every sampled point gets a real log-likelihood evaluation,
//! importance weights w_s = exp{f(X_s) − α·m*(X_s)} correct the proposal, and
//! resampling with replacement yields the calibrated inputs. A weight
//! collapse (low effective sample size) sends the worst-predicted points back
//! into the training data instead of accepting a degenerate sample.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::InputRegion;
use crate::emulator::EmulatorState;
use crate::error::{Error, Result};
use crate::likelihood::logsumexp;
use crate::rng::{grandchild_seed, indexed_rng, streams};

/// The emulator surface as the sampler sees it: predictions, predictive
/// covariance, and the ability to absorb new training points. Implemented by
/// [`EmulatorState`] directly and by coordinate-transforming wrappers.
pub trait Surrogate: Sync {
    fn mean(&self, x: &[f64]) -> f64;
    fn cov_matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64>;
    fn train_len(&self) -> usize;
    /// Whether `x` coincides exactly with an existing training input.
    fn contains_input(&self, x: &[f64]) -> bool;
    /// Extend the training data and refit at fixed hyperparameters; on error
    /// the surrogate must be left unchanged.
    fn add_points(&mut self, xs: &[Vec<f64>], fs: &[f64]) -> Result<usize>;
}

impl Surrogate for EmulatorState {
    fn mean(&self, x: &[f64]) -> f64 {
        self.posterior_mean(x)
    }

    fn cov_matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        self.posterior_cov_matrix(xs)
    }

    fn train_len(&self) -> usize {
        self.train_len()
    }

    fn contains_input(&self, x: &[f64]) -> bool {
        self.training_inputs().iter().any(|t| t.as_slice() == x)
    }

    fn add_points(&mut self, xs: &[Vec<f64>], fs: &[f64]) -> Result<usize> {
        EmulatorState::add_points(self, xs, fs)
    }
}

/// A source of true log-likelihood values, however expensive.
pub trait LoglikOracle: Sync {
    fn eval(&self, x: &[f64]) -> Result<f64>;
}

impl<F> LoglikOracle for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

/// Knobs for one full calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Proposal sample size per iteration.
    pub s: usize,
    /// Chain thinning; the raw chain length is s·thin.
    pub thin: usize,
    /// Warm-up sweeps before any state is recorded.
    pub warmup: usize,
    /// Maximum simulator runs added to the training data per iteration.
    pub u: usize,
    /// Predictive-variance threshold for sending a point to the simulator.
    pub v: f64,
    pub alpha_start: f64,
    pub alpha_step: f64,
    pub alpha_cap: f64,
    /// Calibrated sample size drawn by the final resampling.
    pub m_final: usize,
    pub max_iterations: usize,
    /// Weighted iterations with ESS below this fraction of s are rejected.
    pub ess_floor: f64,
    /// Required correlation between true and emulated log-likelihoods over
    /// the weighted sample.
    pub corr_threshold: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            s: 2_000,
            thin: 50,
            warmup: 5_000,
            u: 200,
            v: 2.0,
            alpha_start: 0.1,
            alpha_step: 0.1,
            alpha_cap: 1.0,
            m_final: 1_000,
            max_iterations: 15,
            ess_floor: 0.05,
            corr_threshold: 0.9,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 2 {
            return Err(Error::validation("the proposal sample needs at least two points"));
        }
        if self.thin == 0 {
            return Err(Error::validation("thinning must keep at least every state"));
        }
        if self.u == 0 || self.u > self.s {
            return Err(Error::validation(
                "refinement batch size must be between 1 and the sample size",
            ));
        }
        if !(self.v > 0.0) {
            return Err(Error::validation("the pivot threshold must be positive"));
        }
        for (name, a) in [
            ("alpha_start", self.alpha_start),
            ("alpha_step", self.alpha_step),
            ("alpha_cap", self.alpha_cap),
        ] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::validation(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.alpha_start > self.alpha_cap {
            return Err(Error::validation("the flattening schedule starts above its cap"));
        }
        if self.m_final == 0 {
            return Err(Error::validation("the calibrated sample must be non-empty"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("need at least one iteration"));
        }
        if !(self.ess_floor > 0.0 && self.ess_floor < 1.0) {
            return Err(Error::validation("the ESS floor must lie in (0, 1)"));
        }
        if !(self.corr_threshold > 0.0 && self.corr_threshold <= 1.0) {
            return Err(Error::validation("the correlation threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Metropolis-within-Gibbs sampling.

const MCMC_TARGET_ACCEPT: f64 = 0.3;
const MCMC_ADAPT_INTERVAL: usize = 50;
const MCMC_INITIAL_STEP_FRACTION: f64 = 0.1;
const MCMC_START_ATTEMPTS: usize = 1_000;

#[derive(Debug, Clone)]
pub struct McmcSample {
    pub points: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    /// Frozen per-coordinate step sizes after warm-up.
    pub steps: Vec<f64>,
}

/// Sample `raw_length / thin` points from `log_density` restricted to the
/// region, by coordinate-wise Gaussian random-walk Metropolis sweeps.
///
/// Step sizes start at a fixed fraction of each marginal range and adapt
/// toward a target acceptance rate during `warmup` sweeps only, so the
/// recorded chain is a fixed-kernel Markov chain. Proposals leaving the
/// region are rejected outright.
pub fn mh_gibbs_sample<F>(
    log_density: F,
    region: &InputRegion,
    raw_length: usize,
    thin: usize,
    warmup: usize,
    seed: u64,
) -> Result<McmcSample>
where
    F: Fn(&[f64]) -> f64,
{
    region.validate()?;
    if thin == 0 || raw_length < thin {
        return Err(Error::validation(
            "the raw chain must be at least one thinning interval long",
        ));
    }
    let p = region.dim();
    let mut rng = indexed_rng(seed, streams::CALIBRATION, 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut x = region.center();
    if !(region.contains(&x) && log_density(&x).is_finite()) {
        let mut found = false;
        for _ in 0..MCMC_START_ATTEMPTS {
            let cand: Vec<f64> = region
                .marginals
                .iter()
                .map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
                .collect();
            if region.contains(&cand) && log_density(&cand).is_finite() {
                x = cand;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::numerical(
                "no admissible starting point with finite density was found",
            ));
        }
    }
    let mut lp = log_density(&x);

    let ranges: Vec<f64> = region.marginals.iter().map(|&(lo, hi)| hi - lo).collect();
    let mut steps: Vec<f64> = ranges.iter().map(|r| r * MCMC_INITIAL_STEP_FRACTION).collect();
    let mut warm_accepts = vec![0usize; p];
    let mut window_accepts = vec![0usize; p];

    for sweep in 0..warmup {
        for d in 0..p {
            let mut cand = x.clone();
            cand[d] += steps[d] * normal.sample(&mut rng);
            if region.contains(&cand) {
                let lp_cand = log_density(&cand);
                if rng.random::<f64>().ln() < lp_cand - lp {
                    x = cand;
                    lp = lp_cand;
                    warm_accepts[d] += 1;
                    window_accepts[d] += 1;
                }
            }
        }
        if (sweep + 1) % MCMC_ADAPT_INTERVAL == 0 {
            for d in 0..p {
                let rate = window_accepts[d] as f64 / MCMC_ADAPT_INTERVAL as f64;
                steps[d] *= (rate - MCMC_TARGET_ACCEPT).exp();
                steps[d] = steps[d].clamp(1e-6 * ranges[d], ranges[d]);
                window_accepts[d] = 0;
            }
        }
    }
    if warmup > 0 && warm_accepts.iter().all(|&a| a == 0) {
        return Err(Error::numerical(format!(
            "the chain accepted nothing during {warmup} warm-up sweeps; step sizes {steps:?}, \
             final log density {lp:.3e}"
        )));
    }

    let mut points = Vec::with_capacity(raw_length / thin);
    let mut accepts = 0usize;
    for sweep in 0..raw_length {
        for d in 0..p {
            let mut cand = x.clone();
            cand[d] += steps[d] * normal.sample(&mut rng);
            if region.contains(&cand) {
                let lp_cand = log_density(&cand);
                if rng.random::<f64>().ln() < lp_cand - lp {
                    x = cand;
                    lp = lp_cand;
                    accepts += 1;
                }
            }
        }
        if (sweep + 1) % thin == 0 {
            points.push(x.clone());
        }
    }

    Ok(McmcSample {
        points,
        acceptance_rate: accepts as f64 / (raw_length * p) as f64,
        steps,
    })
}

// ---------------------------------------------------------------------------
// Pivoted Cholesky.

#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    /// Original index of each pivot, in pivot order.
    pub pivots: Vec<usize>,
    /// Residual variances at the moment each pivot was chosen; non-increasing.
    pub p_values: Vec<f64>,
    /// Lower-triangular factor in pivot order.
    pub l: DMatrix<f64>,
    /// Number of columns actually factorized.
    pub rank: usize,
}

impl PivotedCholesky {
    /// Rebuild the matrix in its original indexing, for verification.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.pivots.len();
        let gram = &self.l * self.l.transpose();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.pivots[i], self.pivots[j])] = gram[(i, j)];
            }
        }
        out
    }
}

/// Greedy pivoted Cholesky factorization of a symmetric PSD matrix: at each
/// step the column with the largest remaining residual variance is factored
/// out, ties broken by lowest index. Residual variances shrink monotonically,
/// so the returned diagonal sequence is non-increasing. Once the residual
/// hits zero the matrix rank is exhausted and the remaining values are zero.
pub fn pivoted_cholesky(cov: &DMatrix<f64>) -> Result<PivotedCholesky> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::validation("the covariance matrix must be square and non-empty"));
    }
    let amax = cov.amax().max(1.0);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((cov[(i, j)] - cov[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * amax {
        return Err(Error::validation(format!(
            "the covariance matrix is asymmetric by {asym:.3e}"
        )));
    }
    let neg_tol = 1e-8 * amax;

    let mut resid = cov.clone();
    let mut available = vec![true; n];
    let mut pivots = Vec::with_capacity(n);
    let mut p_values = Vec::with_capacity(n);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut rank = n;

    for k in 0..n {
        let mut j = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            if available[i] && resid[(i, i)] > best {
                best = resid[(i, i)];
                j = i;
            }
        }
        if best < -neg_tol {
            return Err(Error::numerical(format!(
                "the matrix is not positive semidefinite: residual variance {best:.6e} at \
                 index {j}"
            )));
        }
        if best <= 0.0 {
            // Rank exhausted: every remaining residual is at most `best` ≤ 0,
            // so record the leftovers as zeros in residual order.
            rank = k;
            let mut rest: Vec<usize> =
                (0..n).filter(|&i| available[i]).collect();
            rest.sort_by(|&a, &b| {
                resid[(b, b)]
                    .total_cmp(&resid[(a, a)])
                    .then(a.cmp(&b))
            });
            for i in rest {
                pivots.push(i);
                p_values.push(0.0);
            }
            break;
        }
        available[j] = false;
        pivots.push(j);
        p_values.push(best);
        let scale = best.sqrt();
        let mut col = DVector::zeros(n);
        for i in 0..n {
            if available[i] {
                col[i] = resid[(i, j)] / scale;
            }
        }
        col[j] = scale;
        for i in 0..n {
            if available[i] {
                for t in 0..n {
                    if available[t] {
                        resid[(i, t)] -= col[i] * col[t];
                    }
                }
            }
        }
        cols.push(col);
        if k + 1 == n {
            rank = n;
        }
    }

    let mut l = DMatrix::zeros(n, n);
    for (k, col) in cols.iter().enumerate() {
        for (i, &pi) in pivots.iter().enumerate() {
            if i >= k {
                l[(i, k)] = col[pi];
            }
        }
    }

    Ok(PivotedCholesky {
        pivots,
        p_values,
        l,
        rank,
    })
}

/// The sample points still predicted too uncertainly: first-u pivots of the
/// predictive covariance whose residual variance exceeds `v`.
#[derive(Debug, Clone)]
pub struct RefinementSelection {
    /// Indices into the proposal sample, in pivot order.
    pub indices: Vec<usize>,
    /// Residual variances for the selected points.
    pub p_values: Vec<f64>,
    /// Largest residual predictive variance over the whole sample, whether or
    /// not it cleared the threshold.
    pub max_variance: f64,
}

impl RefinementSelection {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }
}

pub fn select_refinement_points<S: Surrogate + ?Sized>(
    sample: &[Vec<f64>],
    surrogate: &S,
    u: usize,
    v: f64,
) -> Result<RefinementSelection> {
    if sample.is_empty() {
        return Err(Error::validation("cannot select refinements from an empty sample"));
    }
    if !(v > 0.0) {
        return Err(Error::validation("the pivot threshold must be positive"));
    }
    let cov = surrogate.cov_matrix(sample);
    let piv = pivoted_cholesky(&cov)?;
    let max_variance = piv.p_values[0];
    let mut indices = Vec::new();
    let mut p_values = Vec::new();
    for (k, (&idx, &p)) in piv.pivots.iter().zip(&piv.p_values).enumerate() {
        if k >= u || p <= v {
            break;
        }
        indices.push(idx);
        p_values.push(p);
    }
    Ok(RefinementSelection {
        indices,
        p_values,
        max_variance,
    })
}

// ---------------------------------------------------------------------------
// Importance weighting.

/// Effective sample size (Σw)²/Σw² computed from log weights.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let lse = logsumexp(log_weights);
    if !lse.is_finite() {
        return 0.0;
    }
    let doubled: Vec<f64> = log_weights.iter().map(|&w| 2.0 * w).collect();
    (2.0 * lse - logsumexp(&doubled)).exp()
}

/// A weighted proposal sample and, once resampled, the calibrated inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceSample {
    pub points: Vec<Vec<f64>>,
    pub emulator_means: Vec<f64>,
    pub logliks: Vec<f64>,
    /// Unnormalized log weights f(Xₛ) − α·m*(Xₛ), correcting draws from the
    /// flattened proposal density ∝ exp{α·m*(x)}.
    pub log_weights: Vec<f64>,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    pub ess: f64,
    pub alpha: f64,
    /// Indices into `points` chosen by the final resampling.
    pub calibrated_indices: Vec<usize>,
    pub calibrated: Vec<Vec<f64>>,
}

impl ImportanceSample {
    /// Assemble a weighted sample from matched points, emulator means and
    /// true log-likelihoods; the calibrated set starts empty.
    pub fn from_evaluations(
        points: Vec<Vec<f64>>,
        emulator_means: Vec<f64>,
        logliks: Vec<f64>,
        alpha: f64,
    ) -> Result<ImportanceSample> {
        let s = points.len();
        if s == 0 || emulator_means.len() != s || logliks.len() != s {
            return Err(Error::validation(
                "points, emulator means and log-likelihoods must align and be non-empty",
            ));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::validation(format!(
                "flattening alpha must lie in (0, 1], got {alpha}"
            )));
        }
        let log_weights: Vec<f64> = logliks
            .iter()
            .zip(&emulator_means)
            .map(|(f, m)| f - alpha * m)
            .collect();
        let lse = logsumexp(&log_weights);
        if !lse.is_finite() {
            return Err(Error::numerical(
                "every importance weight is zero; the emulator and likelihood disagree \
                 everywhere in the sampled region",
            ));
        }
        let weights: Vec<f64> = log_weights.iter().map(|&w| (w - lse).exp()).collect();
        let ess = effective_sample_size(&log_weights);
        Ok(ImportanceSample {
            points,
            emulator_means,
            logliks,
            log_weights,
            weights,
            ess,
            alpha,
            calibrated_indices: Vec::new(),
            calibrated: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fraction of normalized weights below 1/(100·S).
    pub fn near_zero_fraction(&self) -> f64 {
        let cut = 1.0 / (100.0 * self.len() as f64);
        self.weights.iter().filter(|&&w| w < cut).count() as f64 / self.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.len();
        if self.emulator_means.len() != s
            || self.logliks.len() != s
            || self.log_weights.len() != s
            || self.weights.len() != s
        {
            return Err(Error::validation("importance sample fields are misaligned"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "normalized weights sum to {total}, not 1"
            )));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::validation("weights must be non-negative"));
        }
        if self.calibrated_indices.iter().any(|&i| i >= s) {
            return Err(Error::validation(
                "calibrated indices reference points outside the proposal sample",
            ));
        }
        Ok(())
    }
}

/// Multinomial resampling with replacement proportional to the normalized
/// weights; returns indices into the sample.
pub fn resample(sample: &ImportanceSample, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::validation("the calibrated sample must be non-empty"));
    }
    let total: f64 = sample.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numerical(
            "all importance weights are zero; calibration failed for this discrepancy setting",
        ));
    }
    let mut cumulative = Vec::with_capacity(sample.len());
    let mut acc = 0.0;
    for &w in &sample.weights {
        acc += w;
        cumulative.push(acc);
    }
    let last = *cumulative.last().unwrap();
    let mut rng = indexed_rng(seed, streams::RESAMPLE, 0);
    let mut indices = Vec::with_capacity(m);
    for _ in 0..m {
        let target = rng.random::<f64>() * last;
        let idx = cumulative.partition_point(|&c| c < target).min(sample.len() - 1);
        indices.push(idx);
    }
    Ok(indices)
}

/// Reweight an existing proposal sample under replacement log-likelihoods
/// (same points, same emulator means), then resample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReweightOutcome {
    pub sample: ImportanceSample,
    pub ess: f64,
    pub unique_points: usize,
}

pub fn reweight(
    base: &ImportanceSample,
    new_logliks: Vec<f64>,
    m: usize,
    seed: u64,
) -> Result<ReweightOutcome> {
    if new_logliks.len() != base.len() {
        return Err(Error::validation(format!(
            "{} replacement log-likelihoods for {} sample points",
            new_logliks.len(),
            base.len()
        )));
    }
    let mut sample = ImportanceSample::from_evaluations(
        base.points.clone(),
        base.emulator_means.clone(),
        new_logliks,
        base.alpha,
    )?;
    let indices = resample(&sample, m, seed)?;
    let mut unique = indices.clone();
    unique.sort_unstable();
    unique.dedup();
    let unique_points = unique.len();
    sample.calibrated = indices.iter().map(|&i| sample.points[i].clone()).collect();
    sample.calibrated_indices = indices;
    let ess = sample.ess;
    Ok(ReweightOutcome {
        sample,
        ess,
        unique_points,
    })
}

// ---------------------------------------------------------------------------
// The calibration iteration and driver.

/// What one iteration did.
#[derive(Debug)]
pub enum IterationOutcome {
    /// Training data grew; the emulator was refit.
    Refined { added: usize },
    /// Every sample point was evaluated and weighted.
    Weighted { sample: ImportanceSample },
}

/// Per-iteration diagnostics, written out as JSON by the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub alpha: f64,
    pub training_size: usize,
    /// Points selected by the pivoted-Cholesky criterion.
    pub selected: usize,
    /// Largest predictive variance over the proposal sample.
    pub max_predictive_variance: f64,
    /// Points actually added to the training data this iteration.
    pub added: usize,
    /// Simulator failures skipped at refinement points.
    pub failed_evaluations: usize,
    pub ess: Option<f64>,
    pub near_zero_fraction: Option<f64>,
    /// Correlation between true and emulated log-likelihoods over the latest
    /// evaluated batch.
    pub corr_f_emulator: Option<f64>,
    /// (emulator mean, true log-likelihood) pairs for the latest batch.
    pub scatter: Vec<(f64, f64)>,
    pub mcmc_acceptance: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sa = 0.0;
    let mut sb = 0.0;
    let mut sab = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sa += (x - ma) * (x - ma);
        sb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    let scale = (sa.max(sb)).max(1e-300);
    if sa / scale < 1e-24 && sb / scale < 1e-24 {
        return 1.0;
    }
    if sa <= 0.0 || sb <= 0.0 {
        return 0.0;
    }
    sab / (sa * sb).sqrt()
}

fn evaluate_parallel<O: LoglikOracle + ?Sized>(
    oracle: &O,
    points: &[Vec<f64>],
) -> Vec<Result<f64>> {
    points.par_iter().map(|x| oracle.eval(x)).collect()
}

/// One pass of the sampling loop at a fixed flattening α: draw the proposal
/// sample, either refine the emulator at its most uncertain points or weight
/// the whole sample against true log-likelihoods.
pub fn calibration_iterate<S, O>(
    config: &CalibrationConfig,
    region: &InputRegion,
    oracle: &O,
    surrogate: &mut S,
    alpha: f64,
    iteration: usize,
    seed: u64,
) -> Result<(IterationOutcome, IterationReport)>
where
    S: Surrogate + ?Sized,
    O: LoglikOracle + ?Sized,
{
    config.validate()?;
    let mcmc_seed = grandchild_seed(seed, streams::CALIBRATION, iteration as u64);
    let chain = mh_gibbs_sample(
        |x| alpha * surrogate.mean(x),
        region,
        config.s * config.thin,
        config.thin,
        config.warmup,
        mcmc_seed,
    )?;
    let sample = chain.points;

    let selection = select_refinement_points(&sample, surrogate, config.u, config.v)?;
    let mut report = IterationReport {
        iteration,
        alpha,
        training_size: surrogate.train_len(),
        selected: selection.len(),
        max_predictive_variance: selection.max_variance,
        added: 0,
        failed_evaluations: 0,
        ess: None,
        near_zero_fraction: None,
        corr_f_emulator: None,
        scatter: Vec::new(),
        mcmc_acceptance: chain.acceptance_rate,
    };

    if !selection.is_empty() {
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        for &idx in &selection.indices {
            let x = &sample[idx];
            if !surrogate.contains_input(x) && !candidates.iter().any(|c| c == x) {
                candidates.push(x.clone());
            }
        }
        let evals = evaluate_parallel(oracle, &candidates);
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for (x, r) in candidates.into_iter().zip(evals) {
            match r {
                Ok(f) => {
                    report.scatter.push((surrogate.mean(&x), f));
                    xs.push(x);
                    fs.push(f);
                }
                Err(_) => report.failed_evaluations += 1,
            }
        }
        if xs.is_empty() {
            return Err(Error::numerical(format!(
                "iteration {iteration} selected {} refinement points but none could be \
                 evaluated",
                selection.len()
            )));
        }
        let means: Vec<f64> = report.scatter.iter().map(|&(m, _)| m).collect();
        let trues: Vec<f64> = report.scatter.iter().map(|&(_, f)| f).collect();
        report.corr_f_emulator = Some(pearson(&trues, &means));
        let added = surrogate.add_points(&xs, &fs)?;
        report.added = added;
        report.training_size = surrogate.train_len();
        return Ok((IterationOutcome::Refined { added }, report));
    }

    let evals = evaluate_parallel(oracle, &sample);
    let mut logliks = Vec::with_capacity(sample.len());
    for (k, r) in evals.into_iter().enumerate() {
        match r {
            Ok(f) => logliks.push(f),
            Err(e) => {
                return Err(Error::numerical(format!(
                    "log-likelihood evaluation failed at sample point {k}: {e}"
                )))
            }
        }
    }
    let means: Vec<f64> = sample.iter().map(|x| surrogate.mean(x)).collect();
    let weighted = ImportanceSample::from_evaluations(sample, means, logliks, alpha)?;
    report.ess = Some(weighted.ess);
    report.near_zero_fraction = Some(weighted.near_zero_fraction());
    report.corr_f_emulator = Some(pearson(&weighted.logliks, &weighted.emulator_means));
    report.scatter = weighted
        .emulator_means
        .iter()
        .zip(&weighted.logliks)
        .map(|(&m, &f)| (m, f))
        .collect();
    Ok((IterationOutcome::Weighted { sample: weighted }, report))
}

/// A finished calibration run.
#[derive(Debug)]
pub struct CalibrationRun {
    /// The last weighted importance sample; `None` when every iteration spent
    /// its budget on refinement and no weighting pass ever ran.
    pub sample: Option<ImportanceSample>,
    pub reports: Vec<IterationReport>,
    pub converged: bool,
}

/// Drive [`calibration_iterate`] under the flattening schedule until the
/// proposal has fully sharpened (α at its cap), the effective sample size
/// clears its floor and the emulator tracks the true log-likelihood, then
/// resample the calibrated inputs.
///
/// A weighted iteration that misses the ESS floor or the correlation bar
/// feeds its worst-predicted points (largest |f − m*|, which are already
/// evaluated) back into the training data before trying again.
pub fn run_calibration<S, O>(
    config: &CalibrationConfig,
    region: &InputRegion,
    oracle: &O,
    surrogate: &mut S,
    seed: u64,
) -> Result<CalibrationRun>
where
    S: Surrogate + ?Sized,
    O: LoglikOracle + ?Sized,
{
    config.validate()?;
    let mut alpha = config.alpha_start;
    let mut reports = Vec::new();
    let mut last_weighted: Option<ImportanceSample> = None;

    for iteration in 1..=config.max_iterations {
        let (outcome, mut report) =
            calibration_iterate(config, region, oracle, surrogate, alpha, iteration, seed)?;
        match outcome {
            IterationOutcome::Refined { added } => {
                debug_assert!(added > 0);
                reports.push(report);
            }
            IterationOutcome::Weighted { sample } => {
                let ess_ok = sample.ess >= config.ess_floor * sample.len() as f64;
                let corr_ok = report.corr_f_emulator.unwrap_or(0.0) >= config.corr_threshold;
                let sharp = alpha >= config.alpha_cap;
                if ess_ok && corr_ok && sharp {
                    reports.push(report);
                    let indices = resample(&sample, config.m_final, seed)?;
                    let mut finished = sample;
                    finished.calibrated =
                        indices.iter().map(|&i| finished.points[i].clone()).collect();
                    finished.calibrated_indices = indices;
                    return Ok(CalibrationRun {
                        sample: Some(finished),
                        reports,
                        converged: true,
                    });
                }
                if !ess_ok || !corr_ok {
                    // The weights say the emulator is still wrong somewhere in
                    // the sampled region; recycle the worst-predicted points
                    // as free training data.
                    let mut order: Vec<usize> = (0..sample.len()).collect();
                    order.sort_by(|&a, &b| {
                        let da = (sample.logliks[a] - sample.emulator_means[a]).abs();
                        let db = (sample.logliks[b] - sample.emulator_means[b]).abs();
                        db.total_cmp(&da)
                    });
                    let mut xs = Vec::new();
                    let mut fs = Vec::new();
                    for &i in &order {
                        if xs.len() >= config.u {
                            break;
                        }
                        let x = &sample.points[i];
                        if !surrogate.contains_input(x) && !xs.iter().any(|c| c == x) {
                            xs.push(x.clone());
                            fs.push(sample.logliks[i]);
                        }
                    }
                    if !xs.is_empty() {
                        let added = surrogate.add_points(&xs, &fs)?;
                        report.added = added;
                        report.training_size = surrogate.train_len();
                    }
                }
                last_weighted = Some(sample);
                reports.push(report);
            }
        }
        alpha = (alpha + config.alpha_step).min(config.alpha_cap);
    }

    Ok(CalibrationRun {
        sample: last_weighted,
        reports,
        converged: false,
    })
}
