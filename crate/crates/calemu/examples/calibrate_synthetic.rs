//! The whole calibration pipeline, in process, at a reduced scale: simulate
//! target data at a known truth, run two history-matching waves, fit the
//! log-likelihood emulator, then iterate the flattened-proposal calibration
//! loop and check the calibrated sample against the truth it came from.
//!
//!     cargo run --example calibrate_synthetic

use calemu::pipeline::commands::{
    cmd_calibrate, cmd_emulate, cmd_synthesize_target, cmd_wave,
};
use calemu::pipeline::config::PipelineConfig;
use calemu::pipeline::manifest::Workspace;
use calemu::sampler::ImportanceSample;
use calemu::Result;

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

fn main() -> Result<()> {
    // A shrunken copy of the stock desk-scale study, sized to finish in tens
    // of seconds: smaller cohorts, waves and proposal samples.
    let mut cfg = PipelineConfig::desk_default();
    cfg.run_id = "example".into();
    cfg.cohort_size = 2_500;
    cfg.truth.cohort_size = 80_000;
    cfg.waves = cfg.waves.into_iter().take(2).collect();
    for w in &mut cfg.waves {
        w.runs = 250;
    }
    cfg.emulator.training_runs = 120;
    cfg.calibration.s = 300;
    cfg.calibration.m_final = 300;
    cfg.calibration.warmup = 1_000;
    cfg.calibration.u = 120;

    let dir = std::env::temp_dir().join("calemu-example-calibrate");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| calemu::Error::validation(e.to_string()))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| calemu::Error::validation(e.to_string()))?;
    let truth = cfg.truth.x_active.clone();
    let mut ws = Workspace::create(cfg, &dir.join("manifest.json"))?;

    println!("workspace {}", dir.display());
    cmd_synthesize_target(&mut ws)?;
    println!("target synthesized at truth {truth:?}");
    for wave in 0..2 {
        cmd_wave(&mut ws, wave)?;
        println!("wave {wave} done");
    }
    cmd_emulate(&mut ws)?;
    println!("emulator fitted");
    cmd_calibrate(&mut ws)?;

    let sample: ImportanceSample = ws.read_json("calibration/sample.json")?;
    println!();
    println!(
        "calibrated: ESS {:.1} of {}, {} resampled points",
        sample.ess,
        sample.len(),
        sample.calibrated.len()
    );
    println!("central 95% intervals of the calibrated sample vs truth:");
    for k in 0..truth.len() {
        let mut vals: Vec<f64> = sample.calibrated.iter().map(|x| x[k]).collect();
        let lo = quantile(&mut vals, 0.025);
        let hi = quantile(&mut vals, 0.975);
        let hit = if (lo..=hi).contains(&truth[k]) { "covers" } else { "misses" };
        println!("  input {k}: [{lo:.3}, {hi:.3}]  truth {:.3}  ({hit})", truth[k]);
    }
    Ok(())
}
