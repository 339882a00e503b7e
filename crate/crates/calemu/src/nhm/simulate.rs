//! Life-course simulation.
//!
//! Each person is followed from birth to death through a fixed chain of
//! states: no disease, three adenoma grades, four cancer stages. In every
//! state up to three clocks compete and the earliest one fires:
//!
//! * progression to the next state in the chain,
//! * presentation (cancer states only): the person is diagnosed, treated,
//!   and returned to the no-disease state with all later progression scales
//!   multiplied by the post-treatment factor,
//! * death: a natural age-at-death clock drawn once at birth, joined in
//!   stages B, C and D by a freshly drawn excess-mortality clock.
//!
//! All clocks are Weibull, drawn by inverting the survival function:
//! t = scale · (−ln u)^(1/shape) with u uniform on (0, 1).
//!
//! Whether a person can develop adenomas at all is decided at birth with the
//! lifetime adenoma probability; the first progression clock starts at the
//! adenoma onset age. Presentation from stage B, C or D records an
//! obstruction with that stage's probability. A person who developed adenomas
//! but was never diagnosed counts as carrying undetected adenomas at death.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{indexed_rng, streams};

use super::inputs::{NhmInputs, NhmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HealthState {
    NonCancer,
    LowAdenoma,
    MediumAdenoma,
    HighAdenoma,
    DukesA,
    DukesB,
    DukesC,
    StageD,
    Dead,
}

impl HealthState {
    /// Next state in the progression chain, if any.
    pub fn next(self) -> Option<HealthState> {
        use HealthState::*;
        match self {
            NonCancer => Some(LowAdenoma),
            LowAdenoma => Some(MediumAdenoma),
            MediumAdenoma => Some(HighAdenoma),
            HighAdenoma => Some(DukesA),
            DukesA => Some(DukesB),
            DukesB => Some(DukesC),
            DukesC => Some(StageD),
            StageD | Dead => None,
        }
    }

    /// 0..=3 for the four cancer stages, None otherwise.
    pub fn cancer_index(self) -> Option<usize> {
        use HealthState::*;
        match self {
            DukesA => Some(0),
            DukesB => Some(1),
            DukesC => Some(2),
            StageD => Some(3),
            _ => None,
        }
    }

    pub fn is_cancer(self) -> bool {
        self.cancer_index().is_some()
    }
}

/// Entry of a state at a given age. `post_treatment` is set on every entry
/// after the person's first treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub state: HealthState,
    pub age: f64,
    pub post_treatment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub stage: HealthState,
    pub age: f64,
    pub obstructed: bool,
}

/// One simulated life course.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub events: Vec<StateEntry>,
    pub diagnoses: Vec<Diagnosis>,
    pub death_age: f64,
    pub developed_adenomas: bool,
    pub undetected_adenomas: bool,
}

/// Weibull quantile against the survival draw u ∈ (0, 1):
/// t = scale · (−ln u)^(1/shape).
pub fn weibull_inverse_cdf(shape: f64, scale: f64, u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0);
    scale * (-u.ln()).powf(1.0 / shape)
}

pub fn weibull_draw(shape: f64, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    let mut u: f64 = rng.random();
    while u <= 0.0 {
        u = rng.random();
    }
    weibull_inverse_cdf(shape, scale, u)
}

// A lifetime with more state changes than this only occurs for degenerate
// inputs (progression scales around machine epsilon). Cut the person off at
// their natural death rather than spinning forever.
const MAX_EVENTS: usize = 100_000;

pub fn simulate_person(p: &NhmParams, rng: &mut ChaCha8Rng) -> CohortRecord {
    use HealthState::*;

    let developer = rng.random::<f64>() < p.adenoma_probability;
    let natural_death_age = weibull_draw(p.death_shape, p.death_scale, rng);

    let mut age = 0.0;
    let mut state = NonCancer;
    let mut treated = false;
    let mut developed = false;
    let mut events = vec![StateEntry { state, age, post_treatment: false }];
    let mut diagnoses: Vec<Diagnosis> = Vec::new();

    let death_age = loop {
        let prog_mult = if treated { p.post_treatment_multiplier } else { 1.0 };

        let progression: Option<f64> = match state {
            NonCancer if !treated && !developer => None,
            NonCancer if !treated => Some(
                p.adenoma_onset_age
                    + weibull_draw(p.precancer_shape, p.scale_to_low, rng)
                    - age,
            ),
            NonCancer => Some(weibull_draw(
                p.precancer_shape,
                p.scale_to_low * prog_mult,
                rng,
            )),
            LowAdenoma => Some(weibull_draw(
                p.precancer_shape,
                p.scale_low_to_medium * prog_mult,
                rng,
            )),
            MediumAdenoma => Some(weibull_draw(
                p.precancer_shape,
                p.scale_medium_to_high * prog_mult,
                rng,
            )),
            HighAdenoma => Some(weibull_draw(
                p.precancer_shape,
                p.scale_high_to_cancer * prog_mult,
                rng,
            )),
            DukesA | DukesB | DukesC => {
                let ci = state.cancer_index().unwrap();
                Some(weibull_draw(
                    p.cancer_shape,
                    p.cancer_scales[ci] * prog_mult,
                    rng,
                ))
            }
            StageD => None,
            Dead => unreachable!("simulation continued past death"),
        };

        let presentation: Option<f64> = state
            .cancer_index()
            .map(|ci| weibull_draw(p.presentation_shape, p.presentation_scales[ci], rng));

        let natural_residual = (natural_death_age - age).max(f64::MIN_POSITIVE);
        let death = match state.cancer_index() {
            Some(ci) if ci >= 1 => {
                let scale = p.cancer_death_scale_b
                    * p.cancer_death_stage_factor.powi(ci as i32 - 1);
                natural_residual.min(weibull_draw(p.cancer_death_shape, scale, rng))
            }
            _ => natural_residual,
        };

        // Earliest clock wins; exact ties resolve in this order.
        let mut winner = Action::Death;
        let mut dt = death;
        if let Some(t) = presentation {
            if t < dt {
                winner = Action::Presentation;
                dt = t;
            }
        }
        if let Some(t) = progression {
            if t < dt {
                winner = Action::Progression;
                dt = t;
            }
        }

        age += dt;
        match winner {
            Action::Death => {
                events.push(StateEntry { state: Dead, age, post_treatment: treated });
                break age;
            }
            Action::Presentation => {
                let ci = state.cancer_index().unwrap();
                let obstructed = ci >= 1 && rng.random::<f64>() < p.obstruction_probs[ci - 1];
                diagnoses.push(Diagnosis { stage: state, age, obstructed });
                treated = true;
                state = NonCancer;
                events.push(StateEntry { state, age, post_treatment: true });
            }
            Action::Progression => {
                state = state.next().expect("progression out of a terminal state");
                if state == LowAdenoma {
                    developed = true;
                }
                events.push(StateEntry { state, age, post_treatment: treated });
            }
        }

        if events.len() >= MAX_EVENTS {
            age = age.max(natural_death_age);
            events.push(StateEntry { state: Dead, age, post_treatment: treated });
            break age;
        }
    };

    let undetected = developed && diagnoses.is_empty();
    CohortRecord {
        events,
        diagnoses,
        death_age,
        developed_adenomas: developed,
        undetected_adenomas: undetected,
    }
}

enum Action {
    Progression,
    Presentation,
    Death,
}

/// Simulate a cohort of persons from birth. Each person draws from an
/// independent substream of `seed`, so the result is reproducible and
/// insensitive to evaluation order.
pub fn simulate_cohort(
    inputs: &NhmInputs,
    cohort_size: usize,
    seed: u64,
) -> Result<Vec<CohortRecord>> {
    if cohort_size == 0 {
        return Err(crate::error::Error::validation("cohort size must be at least 1"));
    }
    let params = inputs.params();
    let records = (0..cohort_size)
        .map(|i| {
            let mut rng = indexed_rng(seed, streams::PERSON, i as u64);
            simulate_person(&params, &mut rng)
        })
        .collect();
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nhm::inputs::{default_baseline, idx};
    use approx::assert_relative_eq;

    fn inputs_with(mods: &[(usize, f64)]) -> NhmInputs {
        let mut v = default_baseline();
        for &(i, x) in mods {
            v[i] = x;
        }
        NhmInputs::new(v).unwrap()
    }

    #[test]
    fn weibull_quantile_reference_point() {
        assert_relative_eq!(
            weibull_inverse_cdf(1.0, 2.0, (-1.0f64).exp()),
            2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn weibull_mean_matches_gamma_moment() {
        // E[Weibull(shape 2, scale 1)] = Γ(1.5) = √π / 2.
        let mut rng = indexed_rng(7, 0x77, 0);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| weibull_draw(2.0, 1.0, &mut rng)).sum::<f64>() / n as f64;
        let expect = 0.5 * std::f64::consts::PI.sqrt();
        // var = 1 − π/4, three standard errors of the MC mean
        let se = ((1.0 - std::f64::consts::PI / 4.0) / n as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * se, "mean {mean}, expect {expect}");
    }

    #[test]
    fn life_courses_are_internally_consistent() {
        let inputs = inputs_with(&[]);
        let records = simulate_cohort(&inputs, 2_000, 123).unwrap();
        for r in &records {
            assert_eq!(r.events.first().unwrap().state, HealthState::NonCancer);
            assert_eq!(r.events.last().unwrap().state, HealthState::Dead);
            assert_eq!(
                r.events.iter().filter(|e| e.state == HealthState::Dead).count(),
                1
            );
            assert_eq!(r.events.last().unwrap().age, r.death_age);
            for w in r.events.windows(2) {
                assert!(w[1].age > w[0].age, "event ages must strictly increase");
            }
            for d in &r.diagnoses {
                assert!(d.age > 0.0 && d.age < r.death_age);
                assert!(d.stage.is_cancer());
                if d.stage == HealthState::DukesA {
                    assert!(!d.obstructed);
                }
            }
            let treatments = r
                .events
                .iter()
                .filter(|e| e.state == HealthState::NonCancer && e.post_treatment)
                .count();
            assert_eq!(treatments, r.diagnoses.len());
            assert_eq!(r.undetected_adenomas, r.developed_adenomas && r.diagnoses.is_empty());
            if !r.developed_adenomas {
                assert!(r.diagnoses.is_empty());
            }
        }
    }

    #[test]
    fn zero_adenoma_probability_means_no_disease() {
        let inputs = inputs_with(&[(idx::ADENOMA_PROBABILITY, 0.0)]);
        for r in simulate_cohort(&inputs, 500, 5).unwrap() {
            assert_eq!(r.events.len(), 2);
            assert!(!r.developed_adenomas);
            assert!(r.diagnoses.is_empty());
        }
    }

    #[test]
    fn tiny_death_scale_kills_everyone_at_birth() {
        let inputs = inputs_with(&[(idx::DEATH_SCALE, 1e-9)]);
        for r in simulate_cohort(&inputs, 500, 6).unwrap() {
            assert!(r.death_age < 1e-6);
            assert!(r.diagnoses.is_empty());
        }
    }

    #[test]
    fn exponential_clocks_compete_at_their_rates() {
        // Rush everyone into stage A at age ~0, then make all three stage-A
        // clocks exponential: progression scale 2, presentation scale 3,
        // death scale 4 (the natural clock is memoryless at shape 1, and no
        // excess clock runs in stage A).
        let inputs = inputs_with(&[
            (idx::ADENOMA_ONSET_AGE, 0.0),
            (idx::ADENOMA_PROBABILITY, 1.0),
            (idx::PRECANCER_LOG_SHAPE, 0.0),
            (idx::SCALE_TO_LOW_ADENOMA, 1e-9),
            (idx::SCALE_LOW_TO_MEDIUM, 1e-9),
            (idx::SCALE_MEDIUM_TO_HIGH, 1e-9),
            (idx::SCALE_HIGH_TO_CANCER, 1e-9),
            (idx::CANCER_SHAPE, 1.0),
            (idx::SCALE_A_TO_B, 2.0),
            (idx::PRESENTATION_SHAPE, 1.0),
            (idx::PRESENTATION_SCALE_A, 3.0),
            (idx::DEATH_SHAPE, 1.0),
            (idx::DEATH_SCALE, 4.0),
        ]);
        let n = 100_000;
        let records = simulate_cohort(&inputs, n, 99).unwrap();
        let mut to_b = 0usize;
        let mut presented = 0usize;
        for r in &records {
            // First event after entering stage A decides the outcome.
            let a_pos = r.events.iter().position(|e| e.state == HealthState::DukesA).unwrap();
            match r.events[a_pos + 1].state {
                HealthState::DukesB => to_b += 1,
                HealthState::NonCancer => presented += 1,
                HealthState::Dead => {}
                other => panic!("unexpected follow-on state {other:?}"),
            }
        }
        let rates = [0.5, 1.0 / 3.0, 0.25];
        let total: f64 = rates.iter().sum();
        for (count, rate) in [(to_b, rates[0]), (presented, rates[1])] {
            let p = rate / total;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let observed = count as f64 / n as f64;
            assert!(
                (observed - p).abs() < 3.0 * se,
                "observed {observed}, expected {p} ± {se}"
            );
        }
    }

    #[test]
    fn longer_lives_mean_more_diagnoses() {
        let short = inputs_with(&[(idx::DEATH_SCALE, 60.0)]);
        let long = inputs_with(&[(idx::DEATH_SCALE, 95.0)]);
        let n = 30_000;
        let count = |inputs: &NhmInputs| -> usize {
            simulate_cohort(inputs, n, 1234)
                .unwrap()
                .iter()
                .map(|r| r.diagnoses.len())
                .sum()
        };
        assert!(count(&long) > count(&short));
    }

    #[test]
    fn cohorts_are_reproducible() {
        let inputs = inputs_with(&[]);
        let a = simulate_cohort(&inputs, 200, 42).unwrap();
        let b = simulate_cohort(&inputs, 200, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_cohort(&inputs, 200, 43).unwrap();
        assert_ne!(a, c);
    }
}
