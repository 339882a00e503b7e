//! Run the natural-history microsimulation at its default parameter setting
//! and print the four count tables the calibration consumes: diagnoses per
//! age band, the stage split at diagnosis, the obstructed subset, and
//! undetected adenomas among deaths.
//!
//!     cargo run --example simulate_cohort

use calemu::nhm::{
    aggregate_outputs, default_baseline, simulate_cohort, AggregationSettings, NhmInputs,
};
use calemu::Result;

fn main() -> Result<()> {
    let cohort = 20_000;
    let seed = 7;

    let inputs = NhmInputs::new(default_baseline())?;
    let records = simulate_cohort(&inputs, cohort, seed)?;
    let settings = AggregationSettings::default();
    let out = aggregate_outputs(&records, &settings, seed)?;

    let diagnosed: u64 = out.cases_by_type.n;
    println!("cohort of {cohort}: {diagnosed} cancer diagnoses");
    println!();

    println!("diagnoses per age band (counts pooled over {} randomized", out.cases_by_age.len());
    println!("age assignments, denominators are band populations):");
    let bands = out.cases_by_age[0].y.len();
    for g in 0..bands {
        let y: u64 = out.cases_by_age.iter().map(|r| r.y[g]).sum();
        let n: u64 = out.cases_by_age.iter().map(|r| r.n[g]).sum();
        let lo = settings.age_group_edges[g];
        let label = if g + 1 < bands {
            format!("{:.0}-{:.0}", lo, settings.age_group_edges[g + 1])
        } else {
            format!("{lo:.0}+")
        };
        let bar = "#".repeat((200.0 * y as f64 / n.max(1) as f64).round() as usize);
        println!("  {label:>6}  {y:5} / {n:7}  {bar}");
    }
    println!();

    let stages = ["dukes_a", "dukes_b", "dukes_c", "stage_d"];
    println!("stage at diagnosis:");
    for (label, y) in stages.iter().zip(&out.cases_by_type.y) {
        println!("  {label:>8}  {y:5}  ({:.1}%)", 100.0 * *y as f64 / diagnosed as f64);
    }
    println!();

    println!("obstructed at presentation (earliest stage never obstructs):");
    for (label, y) in stages[1..].iter().zip(&out.obstructed_by_type.y) {
        println!("  {label:>8}  {y:5} / {}", out.obstructed_by_type.n);
    }
    println!();

    println!("deaths carrying an undetected adenoma, by age at death:");
    for (g, pair) in out.undetected_adenomas.iter().enumerate() {
        let lo = settings.death_age_edges[g];
        let label = if g + 1 < settings.death_age_edges.len() {
            format!("{:.0}-{:.0}", lo, settings.death_age_edges[g + 1])
        } else {
            format!("{lo:.0}+")
        };
        println!("  {label:>6}  {:5} / {:6}  ({:.1}%)", pair.y, pair.n,
            100.0 * pair.y as f64 / pair.n.max(1) as f64);
    }
    Ok(())
}
