//! The simulator's input vector.
//!
//! Inputs are packed into a flat `Vec<f64>` so that designs, emulators and
//! samplers can treat them uniformly. The default layout has 25 slots with
//! fixed meanings, listed in [`idx`]; vectors longer than 25 are accepted and
//! the extra slots are inert, which lets a configuration reserve room for
//! model extensions without touching the machinery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot indices for the default layout.
pub mod idx {
    /// Age (years) from which adenomas can start developing.
    pub const ADENOMA_ONSET_AGE: usize = 0;
    /// Natural log of the shared Weibull shape for pre-cancer progression.
    pub const PRECANCER_LOG_SHAPE: usize = 1;
    /// Weibull scale (years) of progression into the low-grade adenoma state.
    pub const SCALE_TO_LOW_ADENOMA: usize = 2;
    pub const SCALE_LOW_TO_MEDIUM: usize = 3;
    pub const SCALE_MEDIUM_TO_HIGH: usize = 4;
    /// Scale of the high-grade adenoma to first cancer stage transition.
    pub const SCALE_HIGH_TO_CANCER: usize = 5;
    /// Shared Weibull shape for progression between cancer stages.
    pub const CANCER_SHAPE: usize = 6;
    pub const SCALE_A_TO_B: usize = 7;
    pub const SCALE_B_TO_C: usize = 8;
    pub const SCALE_C_TO_D: usize = 9;
    /// Shared Weibull shape for presentation from any cancer stage.
    pub const PRESENTATION_SHAPE: usize = 10;
    /// Multiplier applied to every progression scale after a first treatment.
    /// Values below 1 make re-progression faster.
    pub const POST_TREATMENT_MULTIPLIER: usize = 11;
    pub const PRESENTATION_SCALE_A: usize = 12;
    pub const PRESENTATION_SCALE_B: usize = 13;
    pub const PRESENTATION_SCALE_C: usize = 14;
    pub const PRESENTATION_SCALE_D: usize = 15;
    /// Probability that a presentation from stage B involves an obstruction.
    pub const OBSTRUCTION_PROB_B: usize = 16;
    pub const OBSTRUCTION_PROB_C: usize = 17;
    pub const OBSTRUCTION_PROB_D: usize = 18;
    /// Weibull shape and scale of the natural (age-at-death) clock drawn at birth.
    pub const DEATH_SHAPE: usize = 19;
    pub const DEATH_SCALE: usize = 20;
    /// Shape of the excess-mortality clock that runs in stages B, C and D.
    pub const CANCER_DEATH_SHAPE: usize = 21;
    /// Scale (years) of the excess-mortality clock in stage B.
    pub const CANCER_DEATH_SCALE_B: usize = 22;
    /// Per-stage geometric factor on the excess-mortality scale:
    /// stage C uses scale·factor, stage D uses scale·factor².
    pub const CANCER_DEATH_STAGE_FACTOR: usize = 23;
    /// Probability that a person ever develops adenomas.
    pub const ADENOMA_PROBABILITY: usize = 24;
}

/// Number of meaningful slots in the default layout.
pub const DEFAULT_DIM: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SlotKind {
    Age,
    LogShape,
    Shape,
    Scale,
    Probability,
    Multiplier,
}

const SLOTS: [(&str, SlotKind); DEFAULT_DIM] = [
    ("adenoma onset age", SlotKind::Age),
    ("pre-cancer progression log shape", SlotKind::LogShape),
    ("scale to low-grade adenoma", SlotKind::Scale),
    ("scale low to medium adenoma", SlotKind::Scale),
    ("scale medium to high adenoma", SlotKind::Scale),
    ("scale high adenoma to cancer", SlotKind::Scale),
    ("cancer progression shape", SlotKind::Shape),
    ("scale stage A to B", SlotKind::Scale),
    ("scale stage B to C", SlotKind::Scale),
    ("scale stage C to D", SlotKind::Scale),
    ("presentation shape", SlotKind::Shape),
    ("post-treatment progression multiplier", SlotKind::Multiplier),
    ("presentation scale stage A", SlotKind::Scale),
    ("presentation scale stage B", SlotKind::Scale),
    ("presentation scale stage C", SlotKind::Scale),
    ("presentation scale stage D", SlotKind::Scale),
    ("obstruction probability stage B", SlotKind::Probability),
    ("obstruction probability stage C", SlotKind::Probability),
    ("obstruction probability stage D", SlotKind::Probability),
    ("natural death shape", SlotKind::Shape),
    ("natural death scale", SlotKind::Scale),
    ("cancer death shape", SlotKind::Shape),
    ("cancer death scale stage B", SlotKind::Scale),
    ("cancer death stage factor", SlotKind::Multiplier),
    ("lifetime adenoma probability", SlotKind::Probability),
];

/// A validated input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NhmInputs {
    values: Vec<f64>,
}

impl NhmInputs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate(&values)?;
        Ok(NhmInputs { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Unpack into the semantic parameter set the simulator consumes.
    pub fn params(&self) -> NhmParams {
        let v = &self.values;
        NhmParams {
            adenoma_onset_age: v[idx::ADENOMA_ONSET_AGE],
            precancer_shape: v[idx::PRECANCER_LOG_SHAPE].exp(),
            scale_to_low: v[idx::SCALE_TO_LOW_ADENOMA],
            scale_low_to_medium: v[idx::SCALE_LOW_TO_MEDIUM],
            scale_medium_to_high: v[idx::SCALE_MEDIUM_TO_HIGH],
            scale_high_to_cancer: v[idx::SCALE_HIGH_TO_CANCER],
            cancer_shape: v[idx::CANCER_SHAPE],
            cancer_scales: [
                v[idx::SCALE_A_TO_B],
                v[idx::SCALE_B_TO_C],
                v[idx::SCALE_C_TO_D],
            ],
            presentation_shape: v[idx::PRESENTATION_SHAPE],
            post_treatment_multiplier: v[idx::POST_TREATMENT_MULTIPLIER],
            presentation_scales: [
                v[idx::PRESENTATION_SCALE_A],
                v[idx::PRESENTATION_SCALE_B],
                v[idx::PRESENTATION_SCALE_C],
                v[idx::PRESENTATION_SCALE_D],
            ],
            obstruction_probs: [
                v[idx::OBSTRUCTION_PROB_B],
                v[idx::OBSTRUCTION_PROB_C],
                v[idx::OBSTRUCTION_PROB_D],
            ],
            death_shape: v[idx::DEATH_SHAPE],
            death_scale: v[idx::DEATH_SCALE],
            cancer_death_shape: v[idx::CANCER_DEATH_SHAPE],
            cancer_death_scale_b: v[idx::CANCER_DEATH_SCALE_B],
            cancer_death_stage_factor: v[idx::CANCER_DEATH_STAGE_FACTOR],
            adenoma_probability: v[idx::ADENOMA_PROBABILITY],
        }
    }
}

fn validate(values: &[f64]) -> Result<()> {
    if values.len() < DEFAULT_DIM {
        return Err(Error::validation(format!(
            "input vector has {} slots, the layout needs at least {DEFAULT_DIM}",
            values.len()
        )));
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::validation(format!("input {i} is not finite: {v}")));
        }
        if i >= DEFAULT_DIM {
            continue;
        }
        let (name, kind) = SLOTS[i];
        let ok = match kind {
            SlotKind::Age => v >= 0.0,
            SlotKind::LogShape => true,
            SlotKind::Shape | SlotKind::Scale | SlotKind::Multiplier => v > 0.0,
            SlotKind::Probability => (0.0..=1.0).contains(&v),
        };
        if !ok {
            return Err(Error::validation(format!(
                "input {i} ({name}) is out of range: {v}"
            )));
        }
    }
    Ok(())
}

/// Default operating point. Chosen to give a plausible disease burden in a
/// simulated cohort: adenomas start appearing in mid-life for roughly a third
/// of people, a minority of those progress to cancer before natural death,
/// and late stages present faster but kill faster too.
pub fn default_baseline() -> Vec<f64> {
    vec![
        20.0,          // adenoma onset age
        2.0f64.ln(),   // pre-cancer log shape
        35.0,          // scale to low-grade adenoma
        10.0,          // low -> medium
        8.0,           // medium -> high
        6.0,           // high -> cancer
        1.5,           // cancer progression shape
        3.0,           // A -> B
        2.5,           // B -> C
        2.0,           // C -> D
        1.5,           // presentation shape
        0.7,           // post-treatment multiplier
        6.0, 4.0, 2.5, 1.2,    // presentation scales A..D
        0.15, 0.25, 0.35,      // obstruction probabilities B..D
        7.0,           // natural death shape
        82.0,          // natural death scale
        1.2,           // cancer death shape
        9.0,           // cancer death scale, stage B
        0.45,          // cancer death stage factor
        0.35,          // lifetime adenoma probability
    ]
}

/// Semantic view of a validated input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NhmParams {
    pub adenoma_onset_age: f64,
    pub precancer_shape: f64,
    pub scale_to_low: f64,
    pub scale_low_to_medium: f64,
    pub scale_medium_to_high: f64,
    pub scale_high_to_cancer: f64,
    pub cancer_shape: f64,
    pub cancer_scales: [f64; 3],
    pub presentation_shape: f64,
    pub post_treatment_multiplier: f64,
    pub presentation_scales: [f64; 4],
    pub obstruction_probs: [f64; 3],
    pub death_shape: f64,
    pub death_scale: f64,
    pub cancer_death_shape: f64,
    pub cancer_death_scale_b: f64,
    pub cancer_death_stage_factor: f64,
    pub adenoma_probability: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_is_valid_and_has_the_layout_dimension() {
        let b = default_baseline();
        assert_eq!(b.len(), DEFAULT_DIM);
        NhmInputs::new(b).unwrap();
    }

    #[test]
    fn validation_names_the_offending_slot() {
        let mut b = default_baseline();
        b[idx::SCALE_A_TO_B] = -2.0;
        let err = NhmInputs::new(b).unwrap_err().to_string();
        assert!(err.contains("input 7"), "{err}");
        assert!(err.contains("stage A to B"), "{err}");
    }

    #[test]
    fn probabilities_must_stay_in_the_unit_interval() {
        let mut b = default_baseline();
        b[idx::ADENOMA_PROBABILITY] = 1.2;
        assert!(NhmInputs::new(b).is_err());
    }

    #[test]
    fn extra_slots_are_accepted() {
        let mut b = default_baseline();
        b.extend([0.0, -5.0, 1e6]);
        NhmInputs::new(b).unwrap();
    }

    #[test]
    fn short_vectors_are_rejected() {
        assert!(NhmInputs::new(vec![1.0; 10]).is_err());
    }
}
