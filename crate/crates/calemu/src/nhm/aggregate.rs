//! Aggregation of simulated life courses into the four count data types.
//!
//! Three of the four are direct tabulations of the cohort records:
//!
//! * cases by stage at diagnosis (every diagnosis event counts),
//! * obstructed cases by stage, for stages B, C and D,
//! * undetected adenomas by age-at-death band, out of all deaths in the band.
//!
//! The cases-by-age type mimics a cross-sectional incidence table: the real
//! data count diagnoses per age band of the population in one calendar
//! period, while the simulated cohort lives through all ages. To bridge the
//! two, each person is assigned to an age band at random according to the
//! population's age distribution, and counts as a case if any diagnosis falls
//! inside that band's reference window (the first `window_years` of the
//! band). The assignment is repeated `randomizations` times with independent
//! substreams, and the likelihood later averages over the repeats.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::indexed_rng;
use crate::rng::streams;

use super::simulate::CohortRecord;

/// One randomized age assignment of the cohort: per age band, how many
/// persons were assigned (`n`) and how many of those count as cases (`y`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AgeGroupRun {
    pub y: Vec<u64>,
    pub n: Vec<u64>,
}

/// Counts per category plus their total.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CountBlock {
    pub y: Vec<u64>,
    pub n: u64,
}

/// A numerator/denominator pair for one group.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CountPair {
    pub y: u64,
    pub n: u64,
}

/// The simulator's counterpart of the target data. Serializes to JSON as
/// plain nested count arrays; group order matches the aggregation settings
/// (age bands ascending, stages A→D, death bands ascending).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulatorOutput {
    pub cases_by_age: Vec<AgeGroupRun>,
    pub cases_by_type: CountBlock,
    pub obstructed_by_type: CountBlock,
    pub undetected_adenomas: Vec<CountPair>,
}

impl SimulatorOutput {
    pub fn validate(&self) -> Result<()> {
        if self.cases_by_age.is_empty() {
            return Err(Error::validation(
                "output must contain at least one randomized age assignment",
            ));
        }
        let k = self.cases_by_age[0].y.len();
        for run in &self.cases_by_age {
            if run.y.len() != k || run.n.len() != k {
                return Err(Error::validation(
                    "randomized age assignments have inconsistent group counts",
                ));
            }
            if run.y.iter().zip(&run.n).any(|(y, n)| y > n) {
                return Err(Error::validation("age band cases exceed assigned persons"));
            }
        }
        for (block, what, expect) in [
            (&self.cases_by_type, "cases_by_type", 4usize),
            (&self.obstructed_by_type, "obstructed_by_type", 3),
        ] {
            if block.y.len() != expect {
                return Err(Error::validation(format!(
                    "{what}: expected {expect} categories, got {}",
                    block.y.len()
                )));
            }
            if block.y.iter().sum::<u64>() != block.n {
                return Err(Error::validation(format!(
                    "{what}: counts do not sum to the declared total"
                )));
            }
        }
        if self.undetected_adenomas.len() != 4 {
            return Err(Error::validation(format!(
                "undetected_adenomas: expected 4 bands, got {}",
                self.undetected_adenomas.len()
            )));
        }
        if self.undetected_adenomas.iter().any(|p| p.y > p.n) {
            return Err(Error::validation(
                "undetected adenoma count exceeds deaths in band",
            ));
        }
        Ok(())
    }
}

/// How cohort records are collapsed into counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregationSettings {
    /// Lower edges (years) of the age bands, strictly ascending; the last
    /// band is open-ended.
    pub age_group_edges: Vec<f64>,
    /// Population mass per age band; must sum to 1.
    pub population_age_proportions: Vec<f64>,
    /// Number of randomized age assignments.
    pub randomizations: usize,
    /// Length of each band's reference window, in years from the band's
    /// lower edge.
    pub window_years: f64,
    /// Lower edges of the age-at-death bands for the adenoma counts.
    pub death_age_edges: Vec<f64>,
}

impl Default for AggregationSettings {
    fn default() -> Self {
        // A roughly realistic population pyramid over 18 five-year bands.
        let raw = [
            6.0, 5.8, 6.0, 6.5, 6.8, 6.7, 6.3, 7.2, 7.5, 6.8, 6.2, 6.0, 6.3, 4.8, 4.2,
            3.6, 2.7, 2.2,
        ];
        let total: f64 = raw.iter().sum();
        AggregationSettings {
            age_group_edges: (0..18).map(|i| 5.0 * i as f64).collect(),
            population_age_proportions: raw.iter().map(|w| w / total).collect(),
            randomizations: 8,
            window_years: 5.0,
            death_age_edges: vec![0.0, 55.0, 65.0, 75.0],
        }
    }
}

impl AggregationSettings {
    pub fn validate(&self) -> Result<()> {
        let k = self.age_group_edges.len();
        if k < 2 {
            return Err(Error::validation("need at least two age bands"));
        }
        if self.age_group_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("age band edges must be strictly ascending"));
        }
        if self.population_age_proportions.len() != k {
            return Err(Error::validation(format!(
                "{} age bands but {} population proportions",
                k,
                self.population_age_proportions.len()
            )));
        }
        if self.population_age_proportions.iter().any(|&p| p < 0.0) {
            return Err(Error::validation("population proportions must be non-negative"));
        }
        let sum: f64 = self.population_age_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "population proportions sum to {sum}, expected 1"
            )));
        }
        if self.randomizations == 0 {
            return Err(Error::validation("need at least one randomized age assignment"));
        }
        if !(self.window_years > 0.0) {
            return Err(Error::validation("reference window must be positive"));
        }
        if self.death_age_edges.len() != 4
            || self.death_age_edges.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::validation(
                "death age bands must be 4 strictly ascending lower edges",
            ));
        }
        Ok(())
    }

    /// Band index for an age, taking the last band whose lower edge is ≤ age.
    fn band(edges: &[f64], age: f64) -> usize {
        match edges.iter().rposition(|&lo| age >= lo) {
            Some(i) => i,
            None => 0,
        }
    }
}

/// Collapse a cohort into one [`SimulatorOutput`].
pub fn aggregate_outputs(
    records: &[CohortRecord],
    settings: &AggregationSettings,
    seed: u64,
) -> Result<SimulatorOutput> {
    settings.validate()?;
    if records.is_empty() {
        return Err(Error::validation("cannot aggregate an empty cohort"));
    }

    // Stage tabulations.
    let mut by_type = vec![0u64; 4];
    let mut obstructed = vec![0u64; 3];
    for r in records {
        for d in &r.diagnoses {
            let ci = d.stage.cancer_index().expect("diagnosis in a non-cancer stage");
            by_type[ci] += 1;
            if d.obstructed && ci >= 1 {
                obstructed[ci - 1] += 1;
            }
        }
    }
    let cases_total: u64 = by_type.iter().sum();
    let obstructed_total: u64 = obstructed.iter().sum();

    // Undetected adenomas by age at death.
    let mut adenomas = vec![CountPair { y: 0, n: 0 }; 4];
    for r in records {
        let band = AggregationSettings::band(&settings.death_age_edges, r.death_age);
        adenomas[band].n += 1;
        if r.undetected_adenomas {
            adenomas[band].y += 1;
        }
    }

    // Randomized cross-sectional age assignments.
    let k = settings.age_group_edges.len();
    let mut cum = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &p in &settings.population_age_proportions {
        acc += p;
        cum.push(acc);
    }
    let mut cases_by_age = Vec::with_capacity(settings.randomizations);
    for rep in 0..settings.randomizations {
        let mut rng = indexed_rng(seed, streams::AGE_ASSIGNMENT, rep as u64);
        let mut y = vec![0u64; k];
        let mut n = vec![0u64; k];
        for r in records {
            let u: f64 = rng.random();
            let band = cum.iter().position(|&c| u < c).unwrap_or(k - 1);
            n[band] += 1;
            let lo = settings.age_group_edges[band];
            let hi = lo + settings.window_years;
            if r.diagnoses.iter().any(|d| d.age >= lo && d.age < hi) {
                y[band] += 1;
            }
        }
        cases_by_age.push(AgeGroupRun { y, n });
    }

    let out = SimulatorOutput {
        cases_by_age,
        cases_by_type: CountBlock { y: by_type, n: cases_total },
        obstructed_by_type: CountBlock { y: obstructed, n: obstructed_total },
        undetected_adenomas: adenomas,
    };
    out.validate()?;
    Ok(out)
}
