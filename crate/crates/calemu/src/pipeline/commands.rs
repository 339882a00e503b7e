//! The pipeline commands, in the order a run executes them:
//! synthesize-target → wave 0..k → emulate → calibrate → reweight → report.
//!
//! Each command reads its inputs through the manifest, writes artifacts
//! atomically, and appends one audit entry. Given the same manifest and
//! cache, every command is idempotent: rerunning rewrites byte-identical
//! artifacts.

use rayon::prelude::*;

use crate::design::{maximin_lhs, reduce_region, region_volume_fraction, InputRegion};
use crate::emulator::{optimize_hyperparams, EmulatorState};
use crate::error::{Error, Result};
use crate::likelihood::{
    total_loglik, BinomialGroup, DiscrepancySpec, MultinomialBlock, TargetData,
};
use crate::nhm::{aggregate_outputs, simulate_cohort, NhmInputs, SimulatorOutput};
use crate::pipeline::manifest::Workspace;
use crate::pipeline::runs::{InputScaling, RunStore, ScaledEmulator, SimOracle};
use crate::rng::{child_seed, grandchild_seed, streams};
use crate::sampler::{reweight, run_calibration, ImportanceSample, IterationReport, LoglikOracle};
use serde::{Deserialize, Serialize};

/// Relative artifact paths under the manifest's directory.
pub mod paths {
    pub const TARGET: &str = "target.json";
    pub const EMULATOR_STATE: &str = "emulator/state.json";
    pub const EMULATOR_SCALING: &str = "emulator/scaling.json";
    pub const EMULATOR_SEARCH: &str = "emulator/hyperparams.json";
    pub const EMULATOR_TRAINING: &str = "emulator/training.json";
    pub const CAL_SAMPLE: &str = "calibration/sample.json";
    pub const CAL_ITERATIONS: &str = "calibration/iterations.json";
    pub const CAL_POINTS: &str = "calibration/calibrated.csv";
    pub const CAL_EMULATOR: &str = "calibration/emulator_state.json";
    pub const REPORT_BOUNDS: &str = "report/bounds.csv";
    pub const REPORT_SCATTER: &str = "report/fit_scatter.csv";
    pub const REPORT_BANDS: &str = "report/calibrated_bands.csv";
    pub const REPORT_SENSITIVITY: &str = "report/sensitivity.csv";
    pub const CACHE_DIR: &str = "cache";

    pub fn wave_design(i: usize) -> String {
        format!("waves/wave{i}/design.json")
    }
    pub fn wave_outputs(i: usize) -> String {
        format!("waves/wave{i}/outputs.json")
    }
    pub fn wave_logliks(i: usize) -> String {
        format!("waves/wave{i}/logliks.json")
    }
    pub fn wave_region(i: usize) -> String {
        format!("waves/wave{i}/region.json")
    }
    pub fn reweight_outcome(tag: &str) -> String {
        format!("reweight/{tag}/outcome.json")
    }
    pub fn reweight_points(tag: &str) -> String {
        format!("reweight/{tag}/calibrated.csv")
    }
}

pub(crate) fn band_labels(edges: &[f64]) -> Vec<String> {
    let mut out = Vec::with_capacity(edges.len());
    for (i, &lo) in edges.iter().enumerate() {
        if i + 1 < edges.len() {
            out.push(format!("{:.0}-{:.0}", lo, edges[i + 1]));
        } else {
            out.push(format!("{lo:.0}+"));
        }
    }
    out
}

pub(crate) fn stage_labels() -> Vec<String> {
    ["dukes_a", "dukes_b", "dukes_c", "stage_d"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub(crate) fn store_for(ws: &Workspace) -> RunStore {
    RunStore::new(ws.path(paths::CACHE_DIR), ws.config().master_seed)
}

/// The sampling region the emulator and calibration work in: the last wave's
/// reduced region, or the prior box when no waves are configured.
pub(crate) fn final_region(ws: &Workspace) -> Result<InputRegion> {
    let n = ws.config().waves.len();
    if n == 0 {
        ws.config().prior_region()
    } else {
        let path = ws.require(&paths::wave_region(n - 1), "wave")?;
        let region: InputRegion = crate::pipeline::manifest::read_json_file(&path)?;
        region.validate()?;
        Ok(region)
    }
}

/// One observed data set: a single cross-section of the truth run. The first
/// randomized age assignment plays the census; the counting data are exact
/// tabulations of the same cohort.
fn target_from_output(out: &SimulatorOutput, config: &super::config::PipelineConfig) -> TargetData {
    let age_labels = band_labels(&config.aggregation.age_group_edges);
    let census = &out.cases_by_age[0];
    let cases_by_age = age_labels
        .iter()
        .zip(census.y.iter().zip(&census.n))
        .map(|(label, (&z, &n))| BinomialGroup {
            label: label.clone(),
            z,
            n,
        })
        .collect();
    let adenoma_labels = band_labels(&config.aggregation.death_age_edges);
    let undetected_adenomas = adenoma_labels
        .iter()
        .zip(&out.undetected_adenomas)
        .map(|(label, pair)| BinomialGroup {
            label: label.clone(),
            z: pair.y,
            n: pair.n,
        })
        .collect();
    TargetData {
        cases_by_age,
        cases_by_type: MultinomialBlock {
            labels: stage_labels(),
            z: out.cases_by_type.y.clone(),
            n: out.cases_by_type.n,
        },
        obstructed_by_type: MultinomialBlock {
            labels: stage_labels()[1..].to_vec(),
            z: out.obstructed_by_type.y.clone(),
            n: out.obstructed_by_type.n,
        },
        undetected_adenomas,
    }
}

/// Run the simulator at the configured truth point with a large cohort and
/// write the resulting target data.
pub fn cmd_synthesize_target(ws: &mut Workspace) -> Result<()> {
    let cfg = ws.config().clone();
    let inputs = NhmInputs::new(cfg.truth_input()?)?;
    let seed = grandchild_seed(cfg.master_seed, streams::TARGET, 0);
    let records = simulate_cohort(&inputs, cfg.truth.cohort_size, seed)?;
    let out = aggregate_outputs(&records, &cfg.aggregation, seed)?;
    let target = target_from_output(&out, &cfg);
    target.validate_with(cfg.aggregation.age_group_edges.len())?;
    ws.write_json(paths::TARGET, &target)?;
    let cases: u64 = target.cases_by_type.n;
    ws.append_entry(
        "synthesize-target",
        vec![paths::TARGET.into()],
        Some(format!(
            "truth {:?} at cohort {}, {} diagnoses",
            cfg.truth.x_active, cfg.truth.cohort_size, cases
        )),
    )
}

/// Run one history-matching wave: a space-filling design over the current
/// region, one simulator run per design point, and a region reduction that
/// rules out inputs whose log-likelihood falls too far below the best seen.
pub fn cmd_wave(ws: &mut Workspace, wave_index: usize) -> Result<()> {
    let cfg = ws.config().clone();
    if wave_index >= cfg.waves.len() {
        return Err(Error::validation(format!(
            "wave {wave_index} requested but the config defines {} wave(s)",
            cfg.waves.len()
        )));
    }
    let region = if wave_index == 0 {
        cfg.prior_region()?
    } else {
        let prev = ws.require(&paths::wave_region(wave_index - 1), "wave")?;
        let r: InputRegion = crate::pipeline::manifest::read_json_file(&prev)?;
        r.validate()?;
        r
    };
    let target: TargetData =
        crate::pipeline::manifest::read_json_file(&ws.require(paths::TARGET, "synthesize-target")?)?;
    let store = store_for(ws);
    let oracle = SimOracle {
        config: &cfg,
        store: &store,
        target: &target,
        discrepancy: cfg.discrepancy.clone(),
    };

    let design = maximin_lhs(
        cfg.waves[wave_index].runs,
        &region,
        wave_index,
        cfg.master_seed,
        cfg.lhs_restarts,
    )?;
    let outputs: Vec<SimulatorOutput> = design
        .points
        .par_iter()
        .map(|x| oracle.output_at(x))
        .collect::<Result<_>>()?;
    let logliks: Vec<f64> = outputs
        .iter()
        .map(|o| total_loglik(&target, o, &cfg.discrepancy))
        .collect::<Result<_>>()?;

    let reduced = reduce_region(
        &region,
        &design.points,
        &logliks,
        cfg.reduction.log_ratio_threshold,
        cfg.reduction.grid,
    )
    .map_err(|e| {
        Error::numerical(format!(
            "wave {wave_index} region reduction failed: {e}; the threshold may be too \
             aggressive for {} runs",
            design.points.len()
        ))
    })?;
    let volume = region_volume_fraction(
        &reduced,
        &region,
        cfg.reduction.volume_mc_points,
        cfg.master_seed,
    )?;

    ws.write_json(&paths::wave_design(wave_index), &design)?;
    ws.write_json(&paths::wave_outputs(wave_index), &outputs)?;
    ws.write_json(&paths::wave_logliks(wave_index), &logliks)?;
    ws.write_json(&paths::wave_region(wave_index), &reduced)?;
    let best = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ws.append_entry(
        "wave",
        vec![
            paths::wave_design(wave_index),
            paths::wave_outputs(wave_index),
            paths::wave_logliks(wave_index),
            paths::wave_region(wave_index),
        ],
        Some(format!(
            "wave {wave_index}: best loglik {best:.3}, retained volume fraction {:.4}",
            volume.fraction
        )),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperSearchRecord {
    pub phi: Vec<f64>,
    pub nu2: f64,
    pub log_posterior: f64,
    pub gibbs_best: f64,
    pub gibbs_accept_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub points: Vec<Vec<f64>>,
    pub logliks: Vec<f64>,
}

/// Fit the log-likelihood emulator: a fresh space-filling design over the
/// final region, one simulator run per point, hyperparameters at the
/// posterior mode, and the fitted state persisted in unit-box coordinates.
pub fn cmd_emulate(ws: &mut Workspace) -> Result<()> {
    let cfg = ws.config().clone();
    let region = final_region(ws)?;
    let target: TargetData =
        crate::pipeline::manifest::read_json_file(&ws.require(paths::TARGET, "synthesize-target")?)?;
    let store = store_for(ws);
    let oracle = SimOracle {
        config: &cfg,
        store: &store,
        target: &target,
        discrepancy: cfg.discrepancy.clone(),
    };

    let design = maximin_lhs(
        cfg.emulator.training_runs,
        &region,
        0,
        child_seed(cfg.master_seed, streams::TRAINING),
        cfg.lhs_restarts,
    )?;
    let f: Vec<f64> = design
        .points
        .par_iter()
        .map(|x| oracle.eval(x))
        .collect::<Result<_>>()?;

    let scaling = InputScaling {
        lo: region.marginals.iter().map(|&(lo, _)| lo).collect(),
        hi: region.marginals.iter().map(|&(_, hi)| hi).collect(),
        active: cfg.active.clone(),
    };
    let unit: Vec<Vec<f64>> = design.points.iter().map(|x| scaling.to_unit(x)).collect();
    let search = optimize_hyperparams(
        &unit,
        &f,
        &cfg.emulator.prior,
        cfg.emulator.gibbs_iterations,
        child_seed(cfg.master_seed, streams::HYPEROPT),
    )?;
    let state = EmulatorState::fit(unit, f.clone(), search.hyper.clone())?;
    let emulator = ScaledEmulator { state, scaling };

    emulator.save(
        &ws.path(paths::EMULATOR_STATE),
        &ws.path(paths::EMULATOR_SCALING),
    )?;
    ws.write_json(
        paths::EMULATOR_SEARCH,
        &HyperSearchRecord {
            phi: search.hyper.phi.clone(),
            nu2: search.hyper.nu2,
            log_posterior: search.log_posterior,
            gibbs_best: search.gibbs_best,
            gibbs_accept_rate: search.gibbs_accept_rate,
        },
    )?;
    ws.write_json(
        paths::EMULATOR_TRAINING,
        &TrainingRecord {
            points: design.points,
            logliks: f,
        },
    )?;
    ws.append_entry(
        "emulate",
        vec![
            paths::EMULATOR_STATE.into(),
            paths::EMULATOR_SCALING.into(),
            paths::EMULATOR_SEARCH.into(),
            paths::EMULATOR_TRAINING.into(),
        ],
        Some(format!(
            "{} training runs, roughness {:?}, relative nugget {:.3e}",
            cfg.emulator.training_runs, search.hyper.phi, search.hyper.nu2
        )),
    )
}

/// Run the calibration loop to its stopping rule and persist the weighted
/// sample, the calibrated inputs, the per-iteration diagnostics and the
/// refined emulator.
pub fn cmd_calibrate(ws: &mut Workspace) -> Result<()> {
    let cfg = ws.config().clone();
    let region = final_region(ws)?;
    let target: TargetData =
        crate::pipeline::manifest::read_json_file(&ws.require(paths::TARGET, "synthesize-target")?)?;
    ws.require(paths::EMULATOR_STATE, "emulate")?;
    let mut emulator = ScaledEmulator::load(
        &ws.path(paths::EMULATOR_STATE),
        &ws.path(paths::EMULATOR_SCALING),
    )?;
    let store = store_for(ws);
    let oracle = SimOracle {
        config: &cfg,
        store: &store,
        target: &target,
        discrepancy: cfg.discrepancy.clone(),
    };

    let run = run_calibration(
        &cfg.calibration,
        &region,
        &oracle,
        &mut emulator,
        cfg.master_seed,
    )?;
    ws.write_json(paths::CAL_ITERATIONS, &run.reports)?;
    if !run.converged {
        let shape = if run.sample.is_some() {
            "the weighted sample never cleared the ESS floor and correlation bar"
        } else {
            "the variance criterion kept selecting refinement points and no \
             weighting pass ever ran"
        };
        return Err(Error::numerical(format!(
            "calibration did not meet its stopping rule within {} iterations ({shape}); \
             see {} for diagnostics",
            cfg.calibration.max_iterations,
            ws.path(paths::CAL_ITERATIONS).display()
        )));
    }
    let sample = run.sample.expect("a converged run carries its weighted sample");
    ws.write_json(paths::CAL_SAMPLE, &sample)?;
    ws.write_text(paths::CAL_POINTS, &points_csv(&cfg.active, &sample.calibrated))?;
    emulator.state.to_file(&ws.path(paths::CAL_EMULATOR))?;

    let last = run.reports.last().expect("converged run has reports");
    ws.append_entry(
        "calibrate",
        vec![
            paths::CAL_SAMPLE.into(),
            paths::CAL_ITERATIONS.into(),
            paths::CAL_POINTS.into(),
            paths::CAL_EMULATOR.into(),
        ],
        Some(format!(
            "{} iterations, final ESS {:.1} of {}, training grew to {}",
            run.reports.len(),
            sample.ess,
            cfg.calibration.s,
            last.training_size
        )),
    )
}

/// The calibrated inputs as a CSV point matrix, one row per calibrated draw.
pub(crate) fn points_csv(active: &[usize], points: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let header: Vec<String> = active.iter().map(|i| format!("input_{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub(crate) fn lambda_tag(lambda: [f64; 4]) -> String {
    format!("{}_{}_{}_{}", lambda[0], lambda[1], lambda[2], lambda[3])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReweightRecord {
    pub lambda: [f64; 4],
    pub ess: f64,
    pub baseline_ess: f64,
    pub unique_points: usize,
    pub sample: ImportanceSample,
}

/// Reweight the stored proposal sample under a different discrepancy setting
/// and resample the calibrated set, without any new simulator runs.
pub fn cmd_reweight(ws: &mut Workspace, lambda: [f64; 4]) -> Result<()> {
    let cfg = ws.config().clone();
    let disc = DiscrepancySpec::scalar(lambda);
    disc.validate()?;
    let target: TargetData =
        crate::pipeline::manifest::read_json_file(&ws.require(paths::TARGET, "synthesize-target")?)?;
    let base: ImportanceSample =
        crate::pipeline::manifest::read_json_file(&ws.require(paths::CAL_SAMPLE, "calibrate")?)?;
    base.validate()?;
    let store = store_for(ws);

    let mut missing = Vec::new();
    let mut new_logliks = Vec::with_capacity(base.len());
    for x in &base.points {
        let full = cfg.full_input(x)?;
        match store.stored(&full, cfg.cohort_size) {
            Ok(out) => new_logliks.push(total_loglik(&target, &out, &disc)?),
            Err(_) => missing.push(format!("{x:?}")),
        }
    }
    if !missing.is_empty() {
        let shown = missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        let suffix = if missing.len() > 5 {
            format!(" and {} more", missing.len() - 5)
        } else {
            String::new()
        };
        return Err(Error::MissingArtifact(format!(
            "no stored simulator outputs for {} of {} sample points: {shown}{suffix}",
            missing.len(),
            base.len()
        )));
    }

    let outcome = reweight(&base, new_logliks, cfg.calibration.m_final, cfg.master_seed)?;
    let tag = lambda_tag(lambda);
    let record = ReweightRecord {
        lambda,
        ess: outcome.ess,
        baseline_ess: base.ess,
        unique_points: outcome.unique_points,
        sample: outcome.sample,
    };
    ws.write_json(&paths::reweight_outcome(&tag), &record)?;
    ws.write_text(
        &paths::reweight_points(&tag),
        &points_csv(&cfg.active, &record.sample.calibrated),
    )?;
    ws.append_entry(
        "reweight",
        vec![paths::reweight_outcome(&tag), paths::reweight_points(&tag)],
        Some(format!(
            "lambda {:?}: ESS {:.1} (baseline {:.1}), {} unique calibrated points",
            lambda, record.ess, base.ess, record.unique_points
        )),
    )
}

pub(crate) fn load_iteration_reports(ws: &Workspace) -> Result<Vec<IterationReport>> {
    crate::pipeline::manifest::read_json_file(&ws.require(paths::CAL_ITERATIONS, "calibrate")?)
}
