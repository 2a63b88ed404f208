//! Per-minute mortality, deterioration and walk-out rules.

use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClinicalError {
    #[error("clinical parameter {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MortalityParams {
    /// Probability per hour by true acuity, index 0 is ESI 1.
    pub base_per_hour: [f64; 5],
    /// Additive probability per hour for each hour spent waiting untreated.
    pub wait_risk_per_hour: f64,
    pub error_multiplier: f64,
    pub ratio_threshold: f64,
    pub ratio_risk_per_extra_patient: f64,
}

impl Default for MortalityParams {
    fn default() -> Self {
        MortalityParams {
            base_per_hour: [0.02, 0.005, 0.001, 0.0001, 0.00005],
            wait_risk_per_hour: 0.0005,
            error_multiplier: 2.0,
            ratio_threshold: 4.0,
            ratio_risk_per_extra_patient: 0.07,
        }
    }
}

impl MortalityParams {
    pub fn validate(&self) -> Result<(), ClinicalError> {
        let bad = |name, reason: &str| {
            Err(ClinicalError::Invalid {
                name,
                reason: reason.into(),
            })
        };
        if self.base_per_hour.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("base_per_hour", "probabilities must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.wait_risk_per_hour) {
            return bad("wait_risk_per_hour", "must lie in [0, 1]");
        }
        if !(self.error_multiplier >= 1.0) {
            return bad("error_multiplier", "must be at least 1");
        }
        if !(self.ratio_threshold > 0.0) || !(self.ratio_risk_per_extra_patient >= 0.0) {
            return bad("ratio", "threshold must be positive and risk non-negative");
        }
        Ok(())
    }

    pub fn ratio_multiplier(&self, patients_per_nurse: f64) -> f64 {
        1.0 + self.ratio_risk_per_extra_patient
            * (patients_per_nurse - self.ratio_threshold).max(0.0)
    }

    /// Death probability for one minute.
    pub fn step_probability(&self, ctx: &MortalityContext) -> f64 {
        let per_hour = self.base_per_hour[(ctx.true_esi.clamp(1, 5) - 1) as usize]
            + self.wait_risk_per_hour * ctx.hours_waiting_untreated;
        let err = if ctx.worsened_by_error {
            self.error_multiplier
        } else {
            1.0
        };
        (per_hour / 60.0 * err * self.ratio_multiplier(ctx.patients_per_nurse)).min(1.0)
    }
}

/// Inputs to one mortality evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MortalityContext {
    pub true_esi: u8,
    /// Zero once a provider has seen the patient.
    pub hours_waiting_untreated: f64,
    pub worsened_by_error: bool,
    pub patients_per_nurse: f64,
}

/// Accumulates `-ln(1 - p)` each minute and fires once the total reaches a
/// unit exponential threshold drawn up front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardClock {
    pub threshold: f64,
    pub accumulated: f64,
}

impl HazardClock {
    pub fn new(stream: &mut StreamRng) -> Self {
        HazardClock {
            threshold: rng::exp1(stream),
            accumulated: 0.0,
        }
    }

    /// Adds one minute at probability `p`; true when the event happens.
    pub fn advance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        self.accumulated += if p >= 1.0 {
            f64::INFINITY
        } else {
            -libm::log1p(-p)
        };
        self.accumulated >= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeteriorationParams {
    /// Probability per minute by true acuity, index 0 is ESI 1.
    pub per_minute: [f64; 5],
}

impl Default for DeteriorationParams {
    fn default() -> Self {
        DeteriorationParams {
            per_minute: [0.0, 0.0005, 0.0003, 0.0001, 0.00005],
        }
    }
}

impl DeteriorationParams {
    pub fn validate(&self) -> Result<(), ClinicalError> {
        if self.per_minute.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ClinicalError::Invalid {
                name: "deterioration",
                reason: "probabilities must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    /// Per-minute probability of a one-level worsening while waiting.
    pub fn step_probability(&self, true_esi: u8, hours_waiting: f64) -> f64 {
        if true_esi <= 1 {
            return 0.0;
        }
        (self.per_minute[(true_esi.min(5) - 1) as usize] * (1.0 + hours_waiting)).min(1.0)
    }
}

/// One Bernoulli draw for deterioration.
pub fn step_deterioration(
    true_esi: u8,
    hours_waiting: f64,
    params: &DeteriorationParams,
    stream: &mut StreamRng,
) -> bool {
    let p = params.step_probability(true_esi, hours_waiting);
    p > 0.0 && rng::uniform(stream) < p
}

/// Whether a patient still waiting for a room walks out now.
pub fn check_lwbs(
    minutes_since_arrival: u64,
    patience: Option<f64>,
    waiting_pre_room: bool,
) -> bool {
    match patience {
        Some(limit) if waiting_pre_room => minutes_since_arrival as f64 > limit,
        _ => false,
    }
}
