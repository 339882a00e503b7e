//! Evaluate the count likelihoods that score a simulator run against target
//! data, and show what the discrepancy discount λ does: as λ shrinks, the
//! simulated counts carry less evidence and the log-likelihood flattens
//! toward the no-information value.
//!
//!     cargo run --example count_likelihoods

use calemu::likelihood::{
    beta_binomial_loglik, dirichlet_multinomial_loglik, variance_bounds,
};
use calemu::Result;

fn main() -> Result<()> {
    // One binomial group: 23 cases out of 400 observed, against a simulator
    // run showing 31 cases out of 500.
    let (z, n_obs, y, n_sim) = (23u64, 400u64, 31u64, 500u64);
    println!("binomial group: target {z}/{n_obs}, simulated {y}/{n_sim}");
    println!("{:>8}  {:>12}", "lambda", "log-lik");
    for lambda in [1.0, 0.5, 0.1, 0.01, 1e-6] {
        let ll = beta_binomial_loglik(z, n_obs, y, n_sim, lambda)?;
        println!("{lambda:>8}  {ll:>12.4}");
    }
    let no_information = -((n_obs + 1) as f64).ln();
    println!("{:>8}  {no_information:>12.4}  (uniform over z = 0..N)", "limit");
    println!();

    // A multinomial block: stage counts summing to their total.
    let z_stages = [140u64, 130, 80, 50];
    let y_stages = [160.0, 120.0, 75.0, 45.0];
    let n_target: u64 = z_stages.iter().sum();
    let n_run: f64 = y_stages.iter().sum();
    println!("multinomial block: target {z_stages:?}, simulated {y_stages:?}");
    println!("{:>8}  {:>12}", "lambda", "log-lik");
    for lambda in [1.0, 0.5, 0.1, 0.01] {
        let ll =
            dirichlet_multinomial_loglik(&z_stages, n_target, &y_stages, n_run, lambda)?;
        println!("{lambda:>8}  {ll:>12.4}");
    }
    println!();

    // The variance decomposition behind the reporting bounds: measurement
    // noise alone, plus the run's own binomial noise, plus the discrepancy
    // inflation that discounts the run to an effective size λn.
    let p = z as f64 / n_obs as f64;
    let p_sim = y as f64 / n_sim as f64;
    println!("bounds half-widths around target p = {p:.4} (run p = {p_sim:.4}):");
    println!("{:>8}  {:>12} {:>12} {:>12}", "lambda", "measure", "+simulator", "+discrep");
    for lambda in [1.0, 0.5, 0.1, 0.05] {
        let hw = variance_bounds(p, n_obs, p_sim, n_sim as f64, lambda)?;
        println!(
            "{lambda:>8}  {:>12.4} {:>12.4} {:>12.4}",
            hw.measurement, hw.with_simulator, hw.with_discrepancy
        );
    }
    Ok(())
}
