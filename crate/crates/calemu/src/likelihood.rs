//! Count-data likelihoods with a discrepancy discount.
//!
//! Observed counts are compared with simulated counts through conjugate
//! mixtures: a binomial observation whose success probability carries a
//! Beta(1 + λy, 1 + λ(n − y)) posterior built from the simulated counts, and
//! the multinomial analogue with a Dirichlet mixture. The discount factor
//! λ ∈ (0, 1] shrinks the effective simulated sample size from n to λn, so
//! smaller λ admits more disagreement between simulator and data. λ = 1
//! treats the simulator output as exchangeable with the observations; λ → 0
//! recovers the prior predictive (uniform over outcomes).
//!
//! Everything is computed through `ln Γ`, never through factorials or Beta
//! functions directly: λy is generally not an integer and counts get large
//! enough to overflow naive products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nhm::{AgeGroupRun, SimulatorOutput};

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// ln B(a, b) for a, b > 0.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_lambda(lambda: f64, what: &str) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::validation(format!(
            "{what} must lie in (0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// Log-probability of observing `z` successes out of `n_obs` trials when the
/// simulator produced `y` successes out of `n_sim`, discounted by `lambda`.
///
/// This is the beta-binomial mass
/// C(N, z) · B(1 + λy + z, 1 + λ(n − y) + N − z) / B(1 + λy, 1 + λ(n − y))
/// with N = `n_obs`, n = `n_sim`. `n_sim = 0` is allowed and yields the
/// uniform mass 1 / (N + 1), as does λ → 0.
pub fn beta_binomial_loglik(
    z: u64,
    n_obs: u64,
    y: u64,
    n_sim: u64,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda, "discount factor")?;
    if z > n_obs {
        return Err(Error::validation(format!(
            "observed count {z} exceeds group size {n_obs}"
        )));
    }
    if y > n_sim {
        return Err(Error::validation(format!(
            "simulated count {y} exceeds simulated group size {n_sim}"
        )));
    }
    let a = 1.0 + lambda * y as f64;
    let b = 1.0 + lambda * (n_sim - y) as f64;
    Ok(ln_choose(n_obs, z)
        + ln_beta(a + z as f64, b + (n_obs - z) as f64)
        - ln_beta(a, b))
}

/// Log-probability of the observed composition `z` (summing to `n_obs`) when
/// the simulator produced the composition `y` (summing to `n_sim`),
/// discounted by `lambda`.
///
/// This is the Dirichlet-multinomial mass
/// N! (λn + K − 1)! / (N + λn + K − 1)! · Π_k (z_k + λy_k)! / (z_k! (λy_k)!)
/// with every factorial read as Γ(· + 1). `y` is real-valued so that scaled
/// or pooled compositions can be passed directly.
pub fn dirichlet_multinomial_loglik(
    z: &[u64],
    n_obs: u64,
    y: &[f64],
    n_sim: f64,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda, "discount factor")?;
    let k = z.len();
    if k == 0 || y.len() != k {
        return Err(Error::validation(format!(
            "composition lengths disagree: observed {k}, simulated {}",
            y.len()
        )));
    }
    if z.iter().sum::<u64>() != n_obs {
        return Err(Error::validation(format!(
            "observed composition sums to {}, expected {n_obs}",
            z.iter().sum::<u64>()
        )));
    }
    if y.iter().any(|&v| v < 0.0) {
        return Err(Error::validation("simulated composition has a negative entry"));
    }
    let y_sum: f64 = y.iter().sum();
    if (y_sum - n_sim).abs() > 1e-9 * n_sim.max(1.0) {
        return Err(Error::validation(format!(
            "simulated composition sums to {y_sum}, expected {n_sim}"
        )));
    }

    let lam_n = lambda * n_sim;
    let kf = k as f64;
    let mut ll = ln_factorial(n_obs) + ln_gamma(lam_n + kf)
        - ln_gamma(n_obs as f64 + lam_n + kf);
    for (&zk, &yk) in z.iter().zip(y) {
        let lam_y = lambda * yk;
        ll += ln_gamma(zk as f64 + lam_y + 1.0) - ln_factorial(zk) - ln_gamma(lam_y + 1.0);
    }
    Ok(ll)
}

/// Log-likelihood of the cases-by-age data, averaged over the `R` randomized
/// age assignments of the cohort:
/// ln (1/R) Σ_r Π_k π(z_k | y_k^{(r)}, n_k^{(r)}), each π a discounted
/// beta-binomial with its group's discount factor.
pub fn cases_by_age_loglik(
    z: &[u64],
    n_obs: &[u64],
    runs: &[AgeGroupRun],
    lambda_by_group: &[f64],
) -> Result<f64> {
    let k = z.len();
    if n_obs.len() != k || lambda_by_group.len() != k {
        return Err(Error::validation(
            "cases-by-age group counts and discount factors must have equal length",
        ));
    }
    if runs.is_empty() {
        return Err(Error::validation("at least one randomized age assignment required"));
    }
    let mut per_run = Vec::with_capacity(runs.len());
    for run in runs {
        if run.y.len() != k || run.n.len() != k {
            return Err(Error::validation(
                "randomized age assignment has the wrong number of groups",
            ));
        }
        let mut s = 0.0;
        for gk in 0..k {
            s += beta_binomial_loglik(z[gk], n_obs[gk], run.y[gk], run.n[gk], lambda_by_group[gk])?;
        }
        per_run.push(s);
    }
    Ok(logsumexp(&per_run) - (runs.len() as f64).ln())
}

/// A binomial data group: `z` events out of `n` at-risk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BinomialGroup {
    pub label: String,
    pub z: u64,
    pub n: u64,
}

/// A multinomial data block: counts per category summing to `n`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MultinomialBlock {
    pub labels: Vec<String>,
    pub z: Vec<u64>,
    pub n: u64,
}

impl MultinomialBlock {
    fn validate(&self, what: &str, expect_k: usize) -> Result<()> {
        if self.z.len() != expect_k || self.labels.len() != expect_k {
            return Err(Error::validation(format!(
                "{what}: expected {expect_k} categories, got {} counts and {} labels",
                self.z.len(),
                self.labels.len()
            )));
        }
        if self.z.iter().sum::<u64>() != self.n {
            return Err(Error::validation(format!(
                "{what}: category counts sum to {}, declared total is {}",
                self.z.iter().sum::<u64>(),
                self.n
            )));
        }
        Ok(())
    }
}

/// The calibration target: one observed value of each of the four data types.
///
/// * `cases_by_age`: diagnoses per five-year age band of the population.
/// * `cases_by_type`: diagnoses split by stage at diagnosis.
/// * `obstructed_by_type`: the obstructed subset of diagnoses, split by stage
///   (earliest stage excluded; obstruction is not recorded for it).
/// * `undetected_adenomas`: necropsy-style counts of people who died carrying
///   adenomas that were never detected, per age-at-death band.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TargetData {
    pub cases_by_age: Vec<BinomialGroup>,
    pub cases_by_type: MultinomialBlock,
    pub obstructed_by_type: MultinomialBlock,
    pub undetected_adenomas: Vec<BinomialGroup>,
}

/// Canonical group counts for the four data types.
pub const GROUPS_BY_AGE: usize = 18;
pub const GROUPS_BY_TYPE: usize = 4;
pub const GROUPS_OBSTRUCTED: usize = 3;
pub const GROUPS_ADENOMA: usize = 4;

impl TargetData {
    pub fn validate(&self) -> Result<()> {
        self.validate_with(GROUPS_BY_AGE)
    }

    /// Validate with a non-standard number of age bands (the other three data
    /// types have fixed shapes).
    pub fn validate_with(&self, age_groups: usize) -> Result<()> {
        if self.cases_by_age.len() != age_groups {
            return Err(Error::validation(format!(
                "cases_by_age: expected {age_groups} groups, got {}",
                self.cases_by_age.len()
            )));
        }
        for g in &self.cases_by_age {
            if g.z > g.n {
                return Err(Error::validation(format!(
                    "cases_by_age group {}: {} events out of {} at risk",
                    g.label, g.z, g.n
                )));
            }
        }
        self.cases_by_type.validate("cases_by_type", GROUPS_BY_TYPE)?;
        self.obstructed_by_type
            .validate("obstructed_by_type", GROUPS_OBSTRUCTED)?;
        if self.undetected_adenomas.len() != GROUPS_ADENOMA {
            return Err(Error::validation(format!(
                "undetected_adenomas: expected {GROUPS_ADENOMA} groups, got {}",
                self.undetected_adenomas.len()
            )));
        }
        for g in &self.undetected_adenomas {
            if g.z > g.n {
                return Err(Error::validation(format!(
                    "undetected_adenomas group {}: {} events out of {} at risk",
                    g.label, g.z, g.n
                )));
            }
        }
        Ok(())
    }
}

/// Discount factors, one per data type, with optional per-group overrides for
/// the two per-group data types.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscrepancySpec {
    /// (cases_by_age, cases_by_type, obstructed_by_type, undetected_adenomas).
    pub lambda: [f64; 4],
    /// Per-age-group override for `lambda[0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_group_lambda: Option<Vec<f64>>,
    /// Per-group override for `lambda[3]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adenoma_group_lambda: Option<Vec<f64>>,
}

impl DiscrepancySpec {
    pub fn scalar(lambda: [f64; 4]) -> Self {
        DiscrepancySpec {
            lambda,
            age_group_lambda: None,
            adenoma_group_lambda: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &l) in self.lambda.iter().enumerate() {
            check_lambda(l, &format!("lambda[{i}]"))?;
        }
        if let Some(v) = &self.age_group_lambda {
            if v.len() != GROUPS_BY_AGE {
                return Err(Error::validation(format!(
                    "age_group_lambda must have {GROUPS_BY_AGE} entries, got {}",
                    v.len()
                )));
            }
            for &l in v {
                check_lambda(l, "age_group_lambda entry")?;
            }
        }
        if let Some(v) = &self.adenoma_group_lambda {
            if v.len() != GROUPS_ADENOMA {
                return Err(Error::validation(format!(
                    "adenoma_group_lambda must have {GROUPS_ADENOMA} entries, got {}",
                    v.len()
                )));
            }
            for &l in v {
                check_lambda(l, "adenoma_group_lambda entry")?;
            }
        }
        Ok(())
    }

    pub fn age_lambdas(&self) -> Vec<f64> {
        self.age_group_lambda
            .clone()
            .unwrap_or_else(|| vec![self.lambda[0]; GROUPS_BY_AGE])
    }

    pub fn adenoma_lambdas(&self) -> Vec<f64> {
        self.adenoma_group_lambda
            .clone()
            .unwrap_or_else(|| vec![self.lambda[3]; GROUPS_ADENOMA])
    }
}

/// Total log-likelihood of the target data given one simulator output: the
/// sum of the four per-type log-likelihoods, the cases-by-age term averaged
/// over the output's randomized age assignments.
pub fn total_loglik(
    target: &TargetData,
    output: &SimulatorOutput,
    disc: &DiscrepancySpec,
) -> Result<f64> {
    target.validate_with(target.cases_by_age.len())?;
    disc.validate()?;
    output.validate()?;
    if output.cases_by_age[0].y.len() != target.cases_by_age.len() {
        return Err(Error::validation(format!(
            "simulator output has {} age groups, target has {}",
            output.cases_by_age[0].y.len(),
            target.cases_by_age.len()
        )));
    }

    let z1: Vec<u64> = target.cases_by_age.iter().map(|g| g.z).collect();
    let n1: Vec<u64> = target.cases_by_age.iter().map(|g| g.n).collect();
    let k1 = target.cases_by_age.len();
    let age_lambda: Vec<f64> = match &disc.age_group_lambda {
        Some(v) if v.len() == k1 => v.clone(),
        Some(v) => {
            return Err(Error::validation(format!(
                "age_group_lambda has {} entries for {k1} age groups",
                v.len()
            )))
        }
        None => vec![disc.lambda[0]; k1],
    };

    let mut ll = cases_by_age_loglik(&z1, &n1, &output.cases_by_age, &age_lambda)?;

    let y2: Vec<f64> = output.cases_by_type.y.iter().map(|&v| v as f64).collect();
    ll += dirichlet_multinomial_loglik(
        &target.cases_by_type.z,
        target.cases_by_type.n,
        &y2,
        output.cases_by_type.n as f64,
        disc.lambda[1],
    )?;

    let y3: Vec<f64> = output.obstructed_by_type.y.iter().map(|&v| v as f64).collect();
    ll += dirichlet_multinomial_loglik(
        &target.obstructed_by_type.z,
        target.obstructed_by_type.n,
        &y3,
        output.obstructed_by_type.n as f64,
        disc.lambda[2],
    )?;

    let adenoma_lambda = disc.adenoma_lambdas();
    for (gk, g) in target.undetected_adenomas.iter().enumerate() {
        let pair = &output.undetected_adenomas[gk];
        ll += beta_binomial_loglik(g.z, g.n, pair.y, pair.n, adenoma_lambda[gk])?;
    }
    Ok(ll)
}

/// The three half-widths of the variance decomposition around a target
/// proportion `p` out of `n_obs`:
///
/// * `measurement`: sampling noise in the data alone, 2√(p(1−p)/N);
/// * `with_simulator`: plus binomial noise of the simulated proportion `p_sim`
///   out of `n_sim`;
/// * `with_discrepancy`: plus the discrepancy term p_sim(1−p_sim)(1−λ)/(λ n_sim)
///   implied by discounting the simulated sample size to λn.
///
/// The simulator variance factor p_sim(1−p_sim) is floored at its half-count
/// value (0.5/n)(1−0.5/n): a run with zero (or all) counts in a group still
/// contributes its sampling resolution instead of a degenerate zero width.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct HalfWidths {
    pub measurement: f64,
    pub with_simulator: f64,
    pub with_discrepancy: f64,
}

pub fn variance_bounds(
    p: f64,
    n_obs: u64,
    p_sim: f64,
    n_sim: f64,
    lambda: f64,
) -> Result<HalfWidths> {
    check_lambda(lambda, "discount factor")?;
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&p_sim) {
        return Err(Error::validation("proportions must lie in [0, 1]"));
    }
    if n_obs == 0 || n_sim < 1.0 {
        return Err(Error::validation("group sizes must be at least 1"));
    }
    let t1 = p * (1.0 - p) / n_obs as f64;
    // A reference run sitting on a group boundary (zero cases, or every case)
    // has plug-in variance p_sim(1−p_sim) = 0, which would collapse the
    // simulator and discrepancy terms to a zero-width bound that no replicate
    // of the run itself could sit inside. Floor the factor at its half-count
    // value so the bound keeps the run's sampling resolution.
    let half = 0.5 / n_sim;
    let sim_factor = (p_sim * (1.0 - p_sim)).max(half * (1.0 - half));
    let t2 = sim_factor / n_sim;
    let t3 = sim_factor * (1.0 - lambda) / (lambda * n_sim);
    Ok(HalfWidths {
        measurement: 2.0 * t1.sqrt(),
        with_simulator: 2.0 * (t1 + t2).sqrt(),
        with_discrepancy: 2.0 * (t1 + t2 + t3).sqrt(),
    })
}

/// One row of the variance-decomposition table: a data group, its target
/// proportion, the reference simulated proportion, and the three half-widths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsRow {
    pub data_type: u8,
    pub group: String,
    pub target_p: f64,
    pub simulator_p: f64,
    pub half_widths: HalfWidths,
}

/// Build the variance-decomposition table for every data group, using one
/// reference simulator output (conventionally the best-likelihood run seen)
/// for the simulated proportions. Cases-by-age counts are pooled across the
/// output's randomized age assignments.
pub fn variance_bounds_table(
    target: &TargetData,
    reference: &SimulatorOutput,
    disc: &DiscrepancySpec,
) -> Result<Vec<BoundsRow>> {
    target.validate_with(target.cases_by_age.len())?;
    reference.validate()?;
    disc.validate()?;

    let mut rows = Vec::new();
    let r = reference.cases_by_age.len() as f64;
    let age_lambda = if target.cases_by_age.len() == GROUPS_BY_AGE {
        disc.age_lambdas()
    } else {
        vec![disc.lambda[0]; target.cases_by_age.len()]
    };
    for (gk, g) in target.cases_by_age.iter().enumerate() {
        let y_pooled: u64 = reference.cases_by_age.iter().map(|run| run.y[gk]).sum();
        let n_pooled: u64 = reference.cases_by_age.iter().map(|run| run.n[gk]).sum();
        if n_pooled == 0 {
            return Err(Error::numerical(format!(
                "reference run assigned no persons to age group {}",
                g.label
            )));
        }
        let p_sim = y_pooled as f64 / n_pooled as f64;
        let n_mean = n_pooled as f64 / r;
        rows.push(BoundsRow {
            data_type: 1,
            group: g.label.clone(),
            target_p: g.z as f64 / g.n as f64,
            simulator_p: p_sim,
            half_widths: variance_bounds(
                g.z as f64 / g.n as f64,
                g.n,
                p_sim,
                n_mean,
                age_lambda[gk],
            )?,
        });
    }

    for (block_idx, (tb, ob, lam)) in [
        (
            &target.cases_by_type,
            &reference.cases_by_type,
            disc.lambda[1],
        ),
        (
            &target.obstructed_by_type,
            &reference.obstructed_by_type,
            disc.lambda[2],
        ),
    ]
    .into_iter()
    .enumerate()
    {
        if ob.n == 0 {
            return Err(Error::numerical(format!(
                "reference run produced no counts for {}",
                if block_idx == 0 { "cases_by_type" } else { "obstructed_by_type" }
            )));
        }
        for (ck, label) in tb.labels.iter().enumerate() {
            let p = tb.z[ck] as f64 / tb.n as f64;
            let p_sim = ob.y[ck] as f64 / ob.n as f64;
            rows.push(BoundsRow {
                data_type: 2 + block_idx as u8,
                group: label.clone(),
                target_p: p,
                simulator_p: p_sim,
                half_widths: variance_bounds(p, tb.n, p_sim, ob.n as f64, lam)?,
            });
        }
    }

    let adenoma_lambda = disc.adenoma_lambdas();
    for (gk, g) in target.undetected_adenomas.iter().enumerate() {
        let pair = &reference.undetected_adenomas[gk];
        if pair.n == 0 {
            return Err(Error::numerical(format!(
                "reference run has no deaths in age band {}",
                g.label
            )));
        }
        let p = g.z as f64 / g.n as f64;
        let p_sim = pair.y as f64 / pair.n as f64;
        rows.push(BoundsRow {
            data_type: 4,
            group: g.label.clone(),
            target_p: p,
            simulator_p: p_sim,
            half_widths: variance_bounds(p, g.n, p_sim, pair.n as f64, adenoma_lambda[gk])?,
        });
    }
    Ok(rows)
}
