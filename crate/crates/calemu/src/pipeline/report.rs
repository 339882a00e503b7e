//! Report emission: the plot-ready CSV series a finished run is judged by.
//!
//! Four files, one per figure family: the variance-decomposition bounds per
//! data group, the emulator-fit scatter per iteration, the calibrated-output
//! bands against the target, and the discrepancy-sensitivity panels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::likelihood::{variance_bounds_table, BoundsRow, TargetData};
use crate::nhm::SimulatorOutput;
use crate::pipeline::commands::{load_iteration_reports, paths, store_for, ReweightRecord};
use crate::pipeline::manifest::{read_json_file, Workspace};
use crate::sampler::ImportanceSample;

/// Linear-interpolation quantile of an unsorted sample.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] * (1.0 - frac) + v[hi] * frac
}

/// One run's proportion in each of the 29 data groups, in the bounds-table
/// row order: age bands, stages, obstructed stages, adenoma bands. Cases by
/// age are pooled across the run's randomized age assignments.
pub(crate) fn group_proportions(out: &SimulatorOutput) -> Vec<f64> {
    let bands = out.cases_by_age[0].y.len();
    let mut props = Vec::with_capacity(bands + 11);
    for g in 0..bands {
        let y: u64 = out.cases_by_age.iter().map(|run| run.y[g]).sum();
        let n: u64 = out.cases_by_age.iter().map(|run| run.n[g]).sum();
        props.push(if n == 0 { 0.0 } else { y as f64 / n as f64 });
    }
    for block in [&out.cases_by_type, &out.obstructed_by_type] {
        for &y in &block.y {
            props.push(if block.n == 0 {
                0.0
            } else {
                y as f64 / block.n as f64
            });
        }
    }
    for pair in &out.undetected_adenomas {
        props.push(if pair.n == 0 {
            0.0
        } else {
            pair.y as f64 / pair.n as f64
        });
    }
    props
}

fn bounds_csv(rows: &[BoundsRow]) -> String {
    let mut out = String::from(
        "data_type,group,target_p,simulator_p,half_width_measurement,\
         half_width_with_simulator,half_width_with_discrepancy\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.data_type,
            r.group,
            r.target_p,
            r.simulator_p,
            r.half_widths.measurement,
            r.half_widths.with_simulator,
            r.half_widths.with_discrepancy
        ));
    }
    out
}

fn scatter_csv(ws: &Workspace) -> Result<String> {
    let reports = load_iteration_reports(ws)?;
    let mut out = String::from("iteration,alpha,phase,emulator_mean,true_loglik\n");
    for r in &reports {
        let phase = if r.ess.is_some() { "weighted" } else { "refined" };
        for &(m, f) in &r.scatter {
            out.push_str(&format!("{},{},{phase},{m},{f}\n", r.iteration, r.alpha));
        }
    }
    Ok(out)
}

/// Per-group quantile bands of the calibrated runs' outputs against the
/// target value and its discrepancy-inflated tolerance.
fn bands_csv(
    bounds: &[BoundsRow],
    calibrated_props: &[Vec<f64>],
) -> String {
    let mut out = String::from(
        "data_type,group,target_p,band_lo,band_hi,run_q025,run_q500,run_q975,\
         within_bounds_fraction\n",
    );
    for (g, row) in bounds.iter().enumerate() {
        let values: Vec<f64> = calibrated_props.iter().map(|p| p[g]).collect();
        let hw = row.half_widths.with_discrepancy;
        let lo = (row.target_p - hw).max(0.0);
        let hi = (row.target_p + hw).min(1.0);
        let within = values
            .iter()
            .filter(|&&p| (p - row.target_p).abs() <= hw)
            .count() as f64
            / values.len() as f64;
        out.push_str(&format!(
            "{},{},{},{lo},{hi},{},{},{},{within}\n",
            row.data_type,
            row.group,
            row.target_p,
            quantile(&values, 0.025),
            quantile(&values, 0.5),
            quantile(&values, 0.975),
        ));
    }
    out
}

struct SensitivityRow {
    scenario: String,
    lambda: [f64; 4],
    ess: f64,
    unique_points: usize,
    calibrated: Vec<Vec<f64>>,
}

fn sensitivity_csv(ws: &Workspace, baseline: &ImportanceSample) -> Result<String> {
    let cfg = ws.config();
    let mut unique = baseline.calibrated_indices.clone();
    unique.sort_unstable();
    unique.dedup();
    let mut rows = vec![SensitivityRow {
        scenario: "baseline".into(),
        lambda: cfg.discrepancy.lambda,
        ess: baseline.ess,
        unique_points: unique.len(),
        calibrated: baseline.calibrated.clone(),
    }];

    // Most recent reweight per tag wins; order by tag for a stable file.
    let mut by_tag: BTreeMap<String, ReweightRecord> = BTreeMap::new();
    for entry in ws.entries_for("reweight") {
        if let Some(path) = entry.artifacts.first() {
            let record: ReweightRecord = read_json_file(&ws.path(path))?;
            by_tag.insert(path.clone(), record);
        }
    }
    for (tag, record) in by_tag {
        rows.push(SensitivityRow {
            scenario: tag
                .trim_start_matches("reweight/")
                .trim_end_matches("/outcome.json")
                .to_string(),
            lambda: record.lambda,
            ess: record.ess,
            unique_points: record.unique_points,
            calibrated: record.sample.calibrated.clone(),
        });
    }

    let mut out = String::from("scenario,lambda_cases_by_age,lambda_cases_by_type,lambda_obstructed,lambda_adenomas,ess,unique_points");
    for &slot in &cfg.active {
        out.push_str(&format!(
            ",input_{slot}_q025,input_{slot}_q500,input_{slot}_q975"
        ));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            row.scenario,
            row.lambda[0],
            row.lambda[1],
            row.lambda[2],
            row.lambda[3],
            row.ess,
            row.unique_points
        ));
        for (k, _) in cfg.active.iter().enumerate() {
            let values: Vec<f64> = row.calibrated.iter().map(|p| p[k]).collect();
            if values.is_empty() {
                return Err(Error::numerical(format!(
                    "scenario {} has no calibrated points to summarize",
                    row.scenario
                )));
            }
            out.push_str(&format!(
                ",{},{},{}",
                quantile(&values, 0.025),
                quantile(&values, 0.5),
                quantile(&values, 0.975)
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Emit the four report series from a completed calibration.
pub fn cmd_report(ws: &mut Workspace) -> Result<()> {
    let cfg = ws.config().clone();
    let target: TargetData =
        read_json_file(&ws.require(paths::TARGET, "synthesize-target")?)?;
    let sample: ImportanceSample =
        read_json_file(&ws.require(paths::CAL_SAMPLE, "calibrate")?)?;
    sample.validate()?;
    if sample.calibrated.is_empty() {
        return Err(Error::validation(
            "the stored sample has no calibrated points; rerun calibrate",
        ));
    }
    let store = store_for(ws);

    // Reference run for the bounds table: the best-likelihood sample point.
    let best = sample
        .logliks
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty sample");
    let reference = store.stored(&cfg.full_input(&sample.points[best])?, cfg.cohort_size)?;
    let bounds = variance_bounds_table(&target, &reference, &cfg.discrepancy)?;

    let calibrated_props: Vec<Vec<f64>> = sample
        .calibrated
        .iter()
        .map(|x| {
            let out = store.stored(&cfg.full_input(x)?, cfg.cohort_size)?;
            Ok(group_proportions(&out))
        })
        .collect::<Result<_>>()?;

    ws.write_text(paths::REPORT_BOUNDS, &bounds_csv(&bounds))?;
    ws.write_text(paths::REPORT_SCATTER, &scatter_csv(ws)?)?;
    ws.write_text(paths::REPORT_BANDS, &bands_csv(&bounds, &calibrated_props))?;
    ws.write_text(paths::REPORT_SENSITIVITY, &sensitivity_csv(ws, &sample)?)?;
    ws.append_entry(
        "report",
        vec![
            paths::REPORT_BOUNDS.into(),
            paths::REPORT_SCATTER.into(),
            paths::REPORT_BANDS.into(),
            paths::REPORT_SENSITIVITY.into(),
        ],
        Some(format!(
            "{} data groups, {} calibrated runs summarized",
            bounds.len(),
            sample.calibrated.len()
        )),
    )
}
