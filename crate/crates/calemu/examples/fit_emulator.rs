//! Fit the log-likelihood emulator to noisy evaluations of a smooth surface
//! and inspect what the fit learned: roughness per input, the nugget that
//! absorbed the noise, and prediction quality at held-out points.
//!
//!     cargo run --example fit_emulator

use calemu::design::{maximin_lhs, InputRegion};
use calemu::emulator::{EmulatorState, HyperPrior};
use calemu::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    // The surface: a smooth two-dimensional bump, observed with noise of
    // standard deviation 0.3 — the stand-in for replication noise of a
    // stochastic simulator's log-likelihood.
    let surface = |x: &[f64]| {
        let dx = (x[0] - 2.0) / 1.5;
        let dy = (x[1] - 5.0) / 3.0;
        -0.5 * (dx * dx + dy * dy) * 8.0 + 1.5 * (1.4 * x[0]).sin() * (0.5 * x[1]).cos()
    };
    let noise_sd = 0.3;

    let region = InputRegion::from_box(vec![(0.0, 6.0), (0.0, 12.0)])?;
    let design = maximin_lhs(60, &region, 0, 9, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut gauss = || {
        // Box-Muller is plenty here.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let values: Vec<f64> = design
        .points
        .iter()
        .map(|x| surface(x) + noise_sd * gauss())
        .collect();

    let prior = HyperPrior::default();
    let outcome =
        calemu::emulator::optimize_hyperparams(&design.points, &values, &prior, 200, 5)?;
    let state = EmulatorState::fit(design.points.clone(), values.clone(), outcome.hyper)?;

    println!("fit on {} noisy evaluations:", state.train_len());
    println!("  roughness lengths   {:?}", state.hyperparams().phi);
    println!("  relative nugget     {:.3e}", state.hyperparams().nu2);
    println!("  process mean        {:+.3}", state.beta_hat());
    println!("  process variance    {:.3}", state.sigma2_hat());
    println!(
        "  implied noise sd    {:.3}  (true {noise_sd})",
        (state.hyperparams().nu2 * state.sigma2_hat()).sqrt()
    );
    println!();

    // Held-out accuracy: the posterior mean should track the noiseless
    // surface to well under the noise level, away from the box edges.
    let test = maximin_lhs(40, &region, 1, 77, 8)?;
    let mut rmse = 0.0;
    let mut covered = 0usize;
    for x in &test.points {
        let truth = surface(x);
        let mean = state.posterior_mean(x);
        let sd = state.posterior_var(x).max(0.0).sqrt();
        rmse += (mean - truth).powi(2);
        if (mean - truth).abs() <= 2.0 * sd {
            covered += 1;
        }
    }
    rmse = (rmse / test.points.len() as f64).sqrt();
    println!("held out ({} points):", test.points.len());
    println!("  rmse of posterior mean vs noiseless surface  {rmse:.3}");
    println!("  |error| within 2 posterior sd                {covered}/{}", test.points.len());
    Ok(())
}
