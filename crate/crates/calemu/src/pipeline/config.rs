//! Run configuration: one JSON document pinning everything a full pipeline
//! run needs, hashed so artifacts from different configurations can never be
//! mixed silently.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::InputRegion;
use crate::emulator::HyperPrior;
use crate::error::{Error, Result};
use crate::likelihood::DiscrepancySpec;
use crate::nhm::{default_baseline, AggregationSettings, NhmInputs};
use crate::sampler::CalibrationConfig;

/// The synthetic truth the study tries to recover.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthConfig {
    /// Values of the active inputs at the truth point.
    pub x_active: Vec<f64>,
    /// Cohort size for the target-data run; larger than ordinary runs so the
    /// target is not dominated by its own sampling noise.
    pub cohort_size: usize,
    /// Non-active slots whose values differ between the world the target data
    /// came from and the model family being calibrated. Calibration runs
    /// always use the shared baseline, so these overrides give the target a
    /// structural misfit no input setting can remove — the situation the
    /// discrepancy discount exists for.
    #[serde(default)]
    pub baseline_overrides: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WaveConfig {
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReductionConfig {
    /// Log-likelihood ratio below the best run at which a grid cell is ruled
    /// implausible.
    pub log_ratio_threshold: f64,
    pub grid: usize,
    /// Monte Carlo points for the retained-volume estimate.
    pub volume_mc_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmulatorConfig {
    pub training_runs: usize,
    pub gibbs_iterations: usize,
    pub prior: HyperPrior,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub run_id: String,
    pub master_seed: u64,
    /// Full simulator input vector; inactive slots stay at these values.
    pub baseline: Vec<f64>,
    /// Indices of the inputs being calibrated.
    pub active: Vec<usize>,
    /// Prior bounds per active input.
    pub region: Vec<(f64, f64)>,
    pub truth: TruthConfig,
    pub discrepancy: DiscrepancySpec,
    /// Cohort size for every ordinary simulator run.
    pub cohort_size: usize,
    pub waves: Vec<WaveConfig>,
    pub reduction: ReductionConfig,
    pub lhs_restarts: usize,
    pub aggregation: AggregationSettings,
    pub emulator: EmulatorConfig,
    pub calibration: CalibrationConfig,
}

impl PipelineConfig {
    /// A complete configuration sized for a desk-scale study: three active
    /// inputs, cohorts of 5,000, two waves of 500 runs, 200 training points
    /// and proposal samples of 500.
    pub fn desk_default() -> PipelineConfig {
        PipelineConfig {
            run_id: "desk".into(),
            master_seed: 20_240_901,
            baseline: default_baseline(),
            active: vec![2, 5, 24],
            region: vec![(20.0, 60.0), (3.0, 20.0), (0.1, 0.7)],
            truth: TruthConfig {
                x_active: vec![38.0, 7.5, 0.42],
                // Much larger than the per-run cohort: the target then pins
                // each group proportion tightly while a single run's output
                // stays visibly noisy, which is the regime the discrepancy
                // discount is for.
                cohort_size: 200_000,
                // The world behind the target presents stage-B disease
                // faster and obstructs stage-C disease more often than the
                // model family can reproduce at any input setting.
                baseline_overrides: vec![(13, 3.4), (17, 0.32)],
            },
            discrepancy: DiscrepancySpec::scalar([0.075, 0.05, 0.05, 0.05]),
            cohort_size: 5_000,
            waves: vec![WaveConfig { runs: 500 }, WaveConfig { runs: 500 }],
            reduction: ReductionConfig {
                log_ratio_threshold: -40.0,
                grid: 8,
                volume_mc_points: 20_000,
            },
            lhs_restarts: 10,
            aggregation: AggregationSettings::default(),
            emulator: EmulatorConfig {
                training_runs: 200,
                gibbs_iterations: 200,
                prior: HyperPrior::default(),
            },
            calibration: CalibrationConfig {
                s: 500,
                thin: 50,
                warmup: 2_000,
                u: 200,
                // Tolerable predictive variance before the emulator serves as
                // the proposal. The desk surface spans ~70 log-likelihood
                // units and its replication noise leaves a residual variance
                // floor near 2-3, so 4.0 separates "still uncovered" from
                // "as good as the noise allows"; 2.0 chases stragglers of the
                // flattened proposal forever.
                v: 4.0,
                alpha_start: 0.2,
                alpha_step: 0.2,
                // Stop the flattening schedule at one half: the proposal
                // stays wider than the posterior it targets, which keeps the
                // importance sample reusable when the discrepancy tolerances
                // are later tightened or relaxed.
                alpha_cap: 0.5,
                m_final: 500,
                max_iterations: 12,
                ess_floor: 0.05,
                // At cohort sizes this small the replication noise in the
                // log likelihood caps the achievable agreement between
                // emulator and simulator near 0.85; 0.9 is only reachable
                // with much larger cohorts.
                corr_threshold: 0.75,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() {
            return Err(Error::validation("run_id must not be empty"));
        }
        NhmInputs::new(self.baseline.clone())?;
        let p = self.active.len();
        if p == 0 {
            return Err(Error::validation("at least one input must be active"));
        }
        let mut seen = self.active.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != p {
            return Err(Error::validation("active input indices repeat"));
        }
        for &i in &self.active {
            if i >= self.baseline.len() {
                return Err(Error::validation(format!(
                    "active input {} is outside the {}-slot input vector",
                    i,
                    self.baseline.len()
                )));
            }
        }
        if self.region.len() != p || self.truth.x_active.len() != p {
            return Err(Error::validation(
                "region bounds and truth values must cover exactly the active inputs",
            ));
        }
        for (k, &(lo, hi)) in self.region.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::validation(format!(
                    "active input {} has an empty or non-finite prior range",
                    self.active[k]
                )));
            }
            let t = self.truth.x_active[k];
            if !(t >= lo && t <= hi) {
                return Err(Error::validation(format!(
                    "truth value {t} for active input {} lies outside its prior range",
                    self.active[k]
                )));
            }
        }
        for &(slot, v) in &self.truth.baseline_overrides {
            if slot >= self.baseline.len() {
                return Err(Error::validation(format!(
                    "truth override slot {} is outside the {}-slot input vector",
                    slot,
                    self.baseline.len()
                )));
            }
            if self.active.contains(&slot) {
                return Err(Error::validation(format!(
                    "truth override slot {slot} is an active input; set it through x_active"
                )));
            }
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "truth override for slot {slot} must be finite"
                )));
            }
        }
        // The truth point must itself be a valid simulator input.
        NhmInputs::new(self.truth_input()?)?;
        if self.cohort_size == 0 || self.truth.cohort_size == 0 {
            return Err(Error::validation("cohort sizes must be at least 1"));
        }
        for (i, w) in self.waves.iter().enumerate() {
            if w.runs < 2 {
                return Err(Error::validation(format!("wave {i} needs at least two runs")));
            }
        }
        if self.reduction.grid < 2 {
            return Err(Error::validation("the reduction grid needs at least two bins"));
        }
        if self.reduction.log_ratio_threshold > 0.0 {
            return Err(Error::validation("the reduction threshold is a log ratio; it cannot be positive"));
        }
        if self.reduction.volume_mc_points == 0 {
            return Err(Error::validation("the volume estimate needs Monte Carlo points"));
        }
        if self.lhs_restarts == 0 {
            return Err(Error::validation("the Latin hypercube search needs at least one restart"));
        }
        if self.emulator.training_runs < 5 {
            return Err(Error::validation("the emulator needs at least five training runs"));
        }
        if self.emulator.gibbs_iterations == 0 {
            return Err(Error::validation("hyperparameter search needs at least one sweep"));
        }
        self.discrepancy.validate()?;
        self.aggregation.validate()?;
        self.calibration.validate()?;
        Ok(())
    }

    /// The prior box over the active inputs.
    pub fn prior_region(&self) -> Result<InputRegion> {
        InputRegion::from_box(self.region.clone())
    }

    /// The full input vector the target data is synthesized from: the shared
    /// baseline with the truth-side overrides applied, truth values in the
    /// active slots.
    pub fn truth_input(&self) -> Result<Vec<f64>> {
        let mut full = self.full_input(&self.truth.x_active)?;
        for &(slot, v) in &self.truth.baseline_overrides {
            full[slot] = v;
        }
        Ok(full)
    }

    /// Assemble a full simulator input vector from active-input values.
    pub fn full_input(&self, x_active: &[f64]) -> Result<Vec<f64>> {
        if x_active.len() != self.active.len() {
            return Err(Error::validation(format!(
                "{} active values supplied for {} active inputs",
                x_active.len(),
                self.active.len()
            )));
        }
        let mut full = self.baseline.clone();
        for (&slot, &v) in self.active.iter().zip(x_active) {
            full[slot] = v;
        }
        Ok(full)
    }

    /// Hash of the canonical JSON encoding; artifacts carry this so runs
    /// under different configurations cannot be mixed.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        super::hex_encode(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_desk_configuration_is_valid() {
        let cfg = PipelineConfig::desk_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.active.len(), cfg.region.len());
        assert_eq!(cfg.active.len(), cfg.truth.x_active.len());
    }

    #[test]
    fn the_hash_tracks_content_not_identity() {
        let a = PipelineConfig::desk_default();
        let mut b = PipelineConfig::desk_default();
        assert_eq!(a.content_hash(), b.content_hash());
        b.master_seed += 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn truth_outside_the_prior_is_rejected() {
        let mut cfg = PipelineConfig::desk_default();
        cfg.truth.x_active[0] = 1e6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn full_input_replaces_only_active_slots() {
        let cfg = PipelineConfig::desk_default();
        let full = cfg.full_input(&[30.0, 10.0, 0.5]).unwrap();
        assert_eq!(full[2], 30.0);
        assert_eq!(full[5], 10.0);
        assert_eq!(full[24], 0.5);
        for (i, v) in full.iter().enumerate() {
            if !cfg.active.contains(&i) {
                assert_eq!(*v, cfg.baseline[i]);
            }
        }
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = PipelineConfig::desk_default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.content_hash(), cfg.content_hash());
    }
}
