//! Simulator run management: a content-addressed cache of aggregated runs,
//! the log-likelihood oracle the calibration loop evaluates, and a unit-box
//! coordinate wrapper around the emulator.
//!
//! Every run is keyed by the bit pattern of its full input vector and cohort
//! size; the run's seed is derived from the key and the master seed, so the
//! same point always re-simulates identically and the cache can never go
//! stale within a run. Reweighting relies on this: it replays stored outputs
//! under a new discrepancy setting without touching the simulator.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emulator::EmulatorState;
use crate::error::{Error, Result};
use crate::likelihood::{total_loglik, DiscrepancySpec, TargetData};
use crate::nhm::{aggregate_outputs, simulate_cohort, AggregationSettings, NhmInputs, SimulatorOutput};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::manifest::{read_json_file, write_json_file};
use crate::rng::{grandchild_seed, streams};
use crate::sampler::{LoglikOracle, Surrogate};

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content key of one simulator run: input bits plus cohort size.
pub fn run_key(inputs: &[f64], cohort_size: usize) -> String {
    let mut h = Sha256::new();
    for v in inputs {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((cohort_size as u64).to_le_bytes());
    hex_encode(&h.finalize())
}

fn key_index(key: &str) -> u64 {
    u64::from_str_radix(&key[..16], 16).expect("hex key")
}

/// Disk-backed cache of aggregated simulator runs.
#[derive(Debug, Clone)]
pub struct RunStore {
    cache_dir: PathBuf,
    master_seed: u64,
}

impl RunStore {
    pub fn new(cache_dir: PathBuf, master_seed: u64) -> RunStore {
        RunStore {
            cache_dir,
            master_seed,
        }
    }

    fn cache_path(&self, key: &str) -> PathBuf {
        self.cache_dir.join(format!("{key}.json"))
    }

    /// The seed a run at this key simulates under.
    pub fn run_seed(&self, key: &str) -> u64 {
        grandchild_seed(self.master_seed, streams::EVAL, key_index(key))
    }

    /// Return the cached output for this point, or simulate, aggregate and
    /// cache it. Safe to call concurrently: writers land via atomic rename
    /// and any two writers produce identical bytes.
    pub fn evaluate(
        &self,
        inputs: &NhmInputs,
        cohort_size: usize,
        aggregation: &AggregationSettings,
    ) -> Result<SimulatorOutput> {
        let key = run_key(inputs.values(), cohort_size);
        let path = self.cache_path(&key);
        if path.exists() {
            let out: SimulatorOutput = read_json_file(&path)?;
            out.validate()?;
            return Ok(out);
        }
        let seed = self.run_seed(&key);
        let records = simulate_cohort(inputs, cohort_size, seed)?;
        let out = aggregate_outputs(&records, aggregation, seed)?;
        write_json_file(&path, &out)?;
        Ok(out)
    }

    /// The cached output for this point, or a missing-artifact error; never
    /// simulates.
    pub fn stored(&self, inputs: &[f64], cohort_size: usize) -> Result<SimulatorOutput> {
        let key = run_key(inputs, cohort_size);
        let path = self.cache_path(&key);
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "no stored run for input {inputs:?} at cohort size {cohort_size} \
                 (expected {})",
                path.display()
            )));
        }
        read_json_file(&path)
    }
}

/// The calibration oracle: active-input point in, total log-likelihood out,
/// with every simulator run cached by content.
pub struct SimOracle<'a> {
    pub config: &'a PipelineConfig,
    pub store: &'a RunStore,
    pub target: &'a TargetData,
    pub discrepancy: DiscrepancySpec,
}

impl SimOracle<'_> {
    pub fn output_at(&self, x_active: &[f64]) -> Result<SimulatorOutput> {
        let full = self.config.full_input(x_active)?;
        let inputs = NhmInputs::new(full)?;
        self.store
            .evaluate(&inputs, self.config.cohort_size, &self.config.aggregation)
    }
}

impl LoglikOracle for SimOracle<'_> {
    fn eval(&self, x_active: &[f64]) -> Result<f64> {
        let out = self.output_at(x_active)?;
        total_loglik(self.target, &out, &self.discrepancy)
    }
}

/// Affine map between a raw active-input box and the unit cube the emulator
/// is trained in: one roughness per dimension then has comparable meaning
/// regardless of the inputs' native units.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputScaling {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// The active slot each coordinate corresponds to, for the record.
    pub active: Vec<usize>,
}

impl InputScaling {
    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.len() != self.active.len() {
            return Err(Error::validation("scaling bounds and slots are misaligned"));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::validation("scaling bounds must be finite and ordered"));
            }
        }
        Ok(())
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| (v - l) / (h - l))
            .collect()
    }
}

/// An emulator fitted in unit-box coordinates, exposed in raw coordinates.
#[derive(Debug)]
pub struct ScaledEmulator {
    pub state: EmulatorState,
    pub scaling: InputScaling,
}

impl ScaledEmulator {
    pub fn save(&self, state_path: &Path, scaling_path: &Path) -> Result<()> {
        self.state.to_file(state_path)?;
        write_json_file(scaling_path, &self.scaling)
    }

    pub fn load(state_path: &Path, scaling_path: &Path) -> Result<ScaledEmulator> {
        let state = EmulatorState::from_file(state_path)?;
        let scaling: InputScaling = read_json_file(scaling_path)?;
        scaling.validate()?;
        if scaling.lo.len() != state.input_dim() {
            return Err(Error::validation(format!(
                "scaling covers {} inputs but the emulator was trained on {}",
                scaling.lo.len(),
                state.input_dim()
            )));
        }
        Ok(ScaledEmulator { state, scaling })
    }
}

impl Surrogate for ScaledEmulator {
    fn mean(&self, x: &[f64]) -> f64 {
        self.state.posterior_mean(&self.scaling.to_unit(x))
    }

    fn cov_matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let unit: Vec<Vec<f64>> = xs.iter().map(|x| self.scaling.to_unit(x)).collect();
        self.state.posterior_cov_matrix(&unit)
    }

    fn train_len(&self) -> usize {
        self.state.train_len()
    }

    fn contains_input(&self, x: &[f64]) -> bool {
        let u = self.scaling.to_unit(x);
        self.state.training_inputs().iter().any(|t| t.as_slice() == u.as_slice())
    }

    fn add_points(&mut self, xs: &[Vec<f64>], fs: &[f64]) -> Result<usize> {
        let unit: Vec<Vec<f64>> = xs.iter().map(|x| self.scaling.to_unit(x)).collect();
        self.state.add_points(&unit, fs)
    }
}
