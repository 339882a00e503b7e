//! A surrogate natural-history model of bowel cancer.
//!
//! Persons progress from birth through adenoma grades and cancer stages under
//! competing Weibull clocks (see [`simulate`]), and finished cohorts are
//! collapsed into the four count data types the calibration consumes (see
//! [`aggregate`]). The input vector layout lives in [`inputs`].
//!
//! The model is a stand-in with the structure of a real microsimulation:
//! stochastic, count-valued, expensive enough to be worth emulating, and
//! rich enough that no parameter setting reproduces the data exactly.

pub mod aggregate;
pub mod inputs;
pub mod simulate;

pub use aggregate::{
    aggregate_outputs, AgeGroupRun, AggregationSettings, CountBlock, CountPair,
    SimulatorOutput,
};
pub use inputs::{default_baseline, idx, NhmInputs, NhmParams, DEFAULT_DIM};
pub use simulate::{
    simulate_cohort, simulate_person, weibull_draw, weibull_inverse_cdf, CohortRecord,
    Diagnosis, HealthState, StateEntry,
};
