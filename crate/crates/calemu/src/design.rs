//! Input-space designs and wave-by-wave region reduction.
//!
//! The input region starts as a box. After each wave of simulator runs the
//! region is cut down by comparing binned maxima of the log-likelihood with
//! the best value seen: marginal ranges are clipped to the bins that stay
//! within a log-ratio threshold of the maximum, and pairwise cell masks carve
//! out the joint combinations that fail the same test. Every retained point
//! stays admissible, and a more negative threshold never removes more space.
//!
//! Designs are maximin Latin hypercubes: several Latin candidates are drawn
//! in the unit cube, the one with the largest minimum pairwise distance wins,
//! and its points are mapped into the region. Points that land in a masked
//! cell are redrawn, first inside their Latin strata and, failing that,
//! uniformly over the admissible set.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{indexed_rng, streams};

/// A forbidden-cell mask over one pair of inputs. The grid is anchored to the
/// marginal box the mask was built over, which never grows afterwards, so a
/// point inside later (smaller) marginals always falls inside the mask's box.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairMask {
    pub i: usize,
    pub j: usize,
    pub lo_i: f64,
    pub hi_i: f64,
    pub lo_j: f64,
    pub hi_j: f64,
    pub grid: usize,
    /// Row-major `grid × grid` admissibility, row = bin of input `i`.
    pub allowed: Vec<bool>,
}

impl PairMask {
    fn allows(&self, xi: f64, xj: f64) -> bool {
        let bi = bin_index(xi, self.lo_i, self.hi_i, self.grid);
        let bj = bin_index(xj, self.lo_j, self.hi_j, self.grid);
        self.allowed[bi * self.grid + bj]
    }
}

fn bin_index(x: f64, lo: f64, hi: f64, grid: usize) -> usize {
    let t = (x - lo) / (hi - lo) * grid as f64;
    (t.floor() as i64).clamp(0, grid as i64 - 1) as usize
}

/// The current input region: a box of marginal intervals intersected with
/// the pairwise masks accumulated over the waves so far.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputRegion {
    pub marginals: Vec<(f64, f64)>,
    #[serde(default)]
    pub masks: Vec<PairMask>,
}

impl InputRegion {
    pub fn from_box(marginals: Vec<(f64, f64)>) -> Result<Self> {
        let region = InputRegion { marginals, masks: Vec::new() };
        region.validate()?;
        Ok(region)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(Error::validation("region needs at least one input"));
        }
        for (d, &(lo, hi)) in self.marginals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::validation(format!(
                    "marginal {d} is not a proper interval: [{lo}, {hi}]"
                )));
            }
        }
        for m in &self.masks {
            if m.i >= self.dim() || m.j >= self.dim() || m.i == m.j {
                return Err(Error::validation("mask references an invalid input pair"));
            }
            if m.grid == 0 || m.allowed.len() != m.grid * m.grid {
                return Err(Error::validation("mask grid does not match its cell list"));
            }
            if !m.allowed.iter().any(|&a| a) {
                return Err(Error::validation("mask forbids every cell"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        for (&xi, &(lo, hi)) in x.iter().zip(&self.marginals) {
            if xi < lo || xi > hi {
                return false;
            }
        }
        self.masks.iter().all(|m| m.allows(x[m.i], x[m.j]))
    }

    /// Marginal midpoint, a convenient starting point for chains.
    pub fn center(&self) -> Vec<f64> {
        self.marginals.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
    }

}

/// A realized design with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
    pub wave: usize,
    pub seed: u64,
}

const STRATUM_REDRAWS: usize = 64;
const REJECTION_TRIES: usize = 100_000;

/// Draw a maximin Latin hypercube of `n` points over the region.
///
/// `restarts` Latin candidates are drawn in the unit cube and scored by their
/// minimum pairwise distance; the best is mapped affinely into the marginals.
/// Points falling foul of a mask are redrawn within their strata a bounded
/// number of times, then resampled uniformly over the admissible set, and if
/// that also fails the admissible set is treated as empty.
pub fn maximin_lhs(
    n: usize,
    region: &InputRegion,
    wave: usize,
    seed: u64,
    restarts: usize,
) -> Result<Design> {
    region.validate()?;
    if n < 2 {
        return Err(Error::validation("a design needs at least two points"));
    }
    if restarts == 0 {
        return Err(Error::validation("need at least one candidate design"));
    }
    let p = region.dim();
    let mut rng = indexed_rng(seed, streams::WAVE, wave as u64);

    // Candidate generation in the unit cube.
    let mut best: Option<(f64, Vec<Vec<f64>>, Vec<Vec<usize>>)> = None;
    for _ in 0..restarts {
        let mut cols_strata: Vec<Vec<usize>> = Vec::with_capacity(p);
        let mut pts = vec![vec![0.0; p]; n];
        for d in 0..p {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(&mut rng);
            for (i, &s) in strata.iter().enumerate() {
                pts[i][d] = (s as f64 + rng.random::<f64>()) / n as f64;
            }
            cols_strata.push(strata);
        }
        let score = min_sq_distance(&pts);
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, pts, cols_strata));
        }
    }
    let (_, unit_pts, cols_strata) = best.unwrap();

    // Map into the marginal box.
    let to_region = |u: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(&region.marginals)
            .map(|(&ui, &(lo, hi))| lo + ui * (hi - lo))
            .collect()
    };
    let mut points: Vec<Vec<f64>> = unit_pts.iter().map(|u| to_region(u)).collect();

    // Mask fix-up.
    if !region.masks.is_empty() {
        for i in 0..n {
            if region.contains(&points[i]) {
                continue;
            }
            let mut fixed = false;
            for _ in 0..STRATUM_REDRAWS {
                let mut u = vec![0.0; p];
                for d in 0..p {
                    let s = cols_strata[d][i];
                    u[d] = (s as f64 + rng.random::<f64>()) / n as f64;
                }
                let candidate = to_region(&u);
                if region.contains(&candidate) {
                    points[i] = candidate;
                    fixed = true;
                    break;
                }
            }
            if fixed {
                continue;
            }
            for _ in 0..REJECTION_TRIES {
                let candidate: Vec<f64> = region
                    .marginals
                    .iter()
                    .map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
                    .collect();
                if region.contains(&candidate) {
                    points[i] = candidate;
                    fixed = true;
                    break;
                }
            }
            if !fixed {
                return Err(Error::numerical(
                    "could not place a design point; the admissible set appears to be empty",
                ));
            }
        }
    }

    Ok(Design { points, wave, seed })
}

fn min_sq_distance(pts: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d: f64 = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Cut the region down around the high-likelihood points.
///
/// A bin (marginal) or cell (pairwise) survives if the maximum log-likelihood
/// of the points it contains is at least `max + log_ratio_threshold`, ties
/// included. Marginals are clipped to the hull of surviving bins; pairs whose
/// cell test fails anywhere contribute a mask. The returned region is the
/// intersection of the input region with the new cuts. A threshold of −∞
/// leaves the region untouched.
pub fn reduce_region(
    region: &InputRegion,
    points: &[Vec<f64>],
    logliks: &[f64],
    log_ratio_threshold: f64,
    grid: usize,
) -> Result<InputRegion> {
    region.validate()?;
    if points.is_empty() || points.len() != logliks.len() {
        return Err(Error::validation(
            "need equally many points and log-likelihood values, at least one of each",
        ));
    }
    if grid == 0 {
        return Err(Error::validation("grid must have at least one bin"));
    }
    if logliks.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("log-likelihood values must not be NaN"));
    }
    let p = region.dim();
    if points.iter().any(|x| x.len() != p) {
        return Err(Error::validation("point dimension does not match the region"));
    }
    if log_ratio_threshold == f64::NEG_INFINITY {
        return Ok(region.clone());
    }
    if log_ratio_threshold > 0.0 {
        return Err(Error::validation("the log-ratio threshold cannot be positive"));
    }
    let fmax = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !fmax.is_finite() {
        return Err(Error::numerical("all log-likelihood values are -inf"));
    }
    let cutoff = fmax + log_ratio_threshold;

    // Marginal clips.
    let mut marginals = Vec::with_capacity(p);
    for d in 0..p {
        let (lo, hi) = region.marginals[d];
        let mut bin_max = vec![f64::NEG_INFINITY; grid];
        for (x, &f) in points.iter().zip(logliks) {
            let b = bin_index(x[d], lo, hi, grid);
            if f > bin_max[b] {
                bin_max[b] = f;
            }
        }
        let pass: Vec<usize> =
            (0..grid).filter(|&b| bin_max[b] >= cutoff).collect();
        let (first, last) = match (pass.first(), pass.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => {
                return Err(Error::numerical(format!(
                    "region reduction emptied input {d}: no bin reaches the threshold"
                )))
            }
        };
        let w = (hi - lo) / grid as f64;
        marginals.push((lo + w * first as f64, lo + w * (last + 1) as f64));
    }

    // Pairwise masks, anchored to the pre-clip marginals.
    let mut masks = region.masks.clone();
    for i in 0..p {
        for j in (i + 1)..p {
            let (lo_i, hi_i) = region.marginals[i];
            let (lo_j, hi_j) = region.marginals[j];
            let mut cell_max = vec![f64::NEG_INFINITY; grid * grid];
            for (x, &f) in points.iter().zip(logliks) {
                let bi = bin_index(x[i], lo_i, hi_i, grid);
                let bj = bin_index(x[j], lo_j, hi_j, grid);
                let c = bi * grid + bj;
                if f > cell_max[c] {
                    cell_max[c] = f;
                }
            }
            let allowed: Vec<bool> = cell_max.iter().map(|&m| m >= cutoff).collect();
            if allowed.iter().all(|&a| a) {
                continue;
            }
            masks.push(PairMask {
                i,
                j,
                lo_i,
                hi_i,
                lo_j,
                hi_j,
                grid,
                allowed,
            });
        }
    }

    let reduced = InputRegion { marginals, masks };
    reduced.validate()?;
    Ok(reduced)
}

/// Monte Carlo estimate of vol(after) / vol(before).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VolumeFraction {
    pub fraction: f64,
    pub std_error: f64,
    pub points_in_before: usize,
    pub points_in_after: usize,
}

pub fn region_volume_fraction(
    after: &InputRegion,
    before: &InputRegion,
    mc_points: usize,
    seed: u64,
) -> Result<VolumeFraction> {
    after.validate()?;
    before.validate()?;
    if after.dim() != before.dim() {
        return Err(Error::validation("regions have different dimensions"));
    }
    if mc_points == 0 {
        return Err(Error::validation("need at least one Monte Carlo point"));
    }
    let mut rng = indexed_rng(seed, streams::WAVE, 0xF0F0);
    let mut in_before = 0usize;
    let mut in_after = 0usize;
    for _ in 0..mc_points {
        let x: Vec<f64> = before
            .marginals
            .iter()
            .map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
            .collect();
        if before.contains(&x) {
            in_before += 1;
            if after.contains(&x) {
                in_after += 1;
            }
        }
    }
    if in_before == 0 {
        return Err(Error::numerical(
            "no Monte Carlo point landed in the reference region",
        ));
    }
    let f = in_after as f64 / in_before as f64;
    let se = (f * (1.0 - f) / in_before as f64).sqrt();
    Ok(VolumeFraction {
        fraction: f,
        std_error: se,
        points_in_before: in_before,
        points_in_after: in_after,
    })
}
