//! Patient arrivals, acuity, condition choice and triage.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use crate::des_kernel::{ResourceKind, SimTime};
use crate::rng::{self, StreamRng};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PopulationError {
    #[error("{what} must have {expected} entries, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what} entries must be positive")]
    NonPositive { what: &'static str },
    #[error("{what} must average 1.0, got {mean}")]
    Mean { what: &'static str, mean: f64 },
    #[error("{what} probabilities sum to {sum}, expected 1")]
    Sum { what: &'static str, sum: f64 },
    #[error("{what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

const MEAN_TOL: f64 = 1e-9;

fn interpolate_anchors(anchors: &[(f64, f64)], h: f64) -> f64 {
    for w in anchors.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if h >= x0 && h <= x1 {
            return y0 + (y1 - y0) * (h - x0) / (x1 - x0);
        }
    }
    anchors.last().map(|a| a.1).unwrap_or(1.0)
}

fn normalized(values: Vec<f64>) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.into_iter().map(|v| v / mean).collect()
}

/// Hourly anchors of the default daily shape, mean-normalized.
pub fn default_daily_shape() -> Vec<f64> {
    let anchors = [
        (0.0, 0.6),
        (4.0, 0.5),
        (11.0, 1.4),
        (19.0, 1.3),
        (24.0, 0.6),
    ];
    normalized(
        (0..24)
            .map(|h| interpolate_anchors(&anchors, h as f64))
            .collect(),
    )
}

/// Monday through Sunday, mean-normalized.
pub fn default_weekly_factors() -> Vec<f64> {
    normalized(vec![1.10, 1.06, 1.03, 1.01, 1.00, 0.95, 0.95])
}

/// Time-varying arrival intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProfile {
    /// Week-averaged patients per hour.
    pub lambda_avg: f64,
    /// Multipliers at the start of each hour, linearly interpolated in between.
    #[serde(default = "default_daily_shape")]
    pub daily_shape: Vec<f64>,
    #[serde(default = "default_weekly_factors")]
    pub weekly_factors: Vec<f64>,
    #[serde(default = "one")]
    pub surge: f64,
}

fn one() -> f64 {
    1.0
}

impl ArrivalProfile {
    pub fn new(lambda_avg: f64) -> Self {
        ArrivalProfile {
            lambda_avg,
            daily_shape: default_daily_shape(),
            weekly_factors: default_weekly_factors(),
            surge: 1.0,
        }
    }

    /// Flat profile: every multiplier 1.
    pub fn constant(lambda_avg: f64) -> Self {
        ArrivalProfile {
            lambda_avg,
            daily_shape: vec![1.0; 24],
            weekly_factors: vec![1.0; 7],
            surge: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        check_factors("daily_shape", &self.daily_shape, 24)?;
        check_factors("weekly_factors", &self.weekly_factors, 7)?;
        if !(self.lambda_avg >= 0.0 && self.lambda_avg.is_finite()) {
            return Err(PopulationError::Invalid {
                what: "lambda_avg",
                reason: format!(
                    "must be a finite non-negative rate, got {}",
                    self.lambda_avg
                ),
            });
        }
        if !(self.surge > 0.0 && self.surge.is_finite()) {
            return Err(PopulationError::NonPositive { what: "surge" });
        }
        Ok(())
    }

    fn shape_at(&self, minute_of_day: f64) -> f64 {
        let hour = minute_of_day / 60.0;
        let h0 = libm::floor(hour) as usize % 24;
        let frac = hour - libm::floor(hour);
        let a = self.daily_shape[h0];
        let b = self.daily_shape[(h0 + 1) % 24];
        a + (b - a) * frac
    }

    /// Patients per hour at a fractional minute since start.
    pub fn rate_at(&self, minute: f64) -> f64 {
        let day = libm::floor(minute / 1440.0);
        let within = minute - day * 1440.0;
        let weekday = (day as i64).rem_euclid(7) as usize;
        self.lambda_avg * self.surge * self.shape_at(within) * self.weekly_factors[weekday]
    }

    /// Upper bound on the rate, used as the thinning envelope.
    pub fn lambda_max(&self) -> f64 {
        let max_shape = self.daily_shape.iter().copied().fold(0.0, f64::max);
        let max_week = self.weekly_factors.iter().copied().fold(0.0, f64::max);
        self.lambda_avg * self.surge * max_shape * max_week
    }
}

fn check_factors(what: &'static str, v: &[f64], n: usize) -> Result<(), PopulationError> {
    if v.len() != n {
        return Err(PopulationError::Length {
            what,
            expected: n,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(PopulationError::NonPositive { what });
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if (mean - 1.0).abs() > MEAN_TOL {
        return Err(PopulationError::Mean { what, mean });
    }
    Ok(())
}

/// Instantaneous arrival rate (patients/hour) at the start of a minute.
pub fn instantaneous_rate(t: SimTime, profile: &ArrivalProfile) -> f64 {
    profile.rate_at(t.minutes() as f64)
}

/// Categorical distribution over ESI 1..=5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EsiDistribution(pub [f64; 5]);

impl Default for EsiDistribution {
    fn default() -> Self {
        EsiDistribution([0.02, 0.13, 0.45, 0.30, 0.10])
    }
}

impl EsiDistribution {
    pub fn validate(&self) -> Result<(), PopulationError> {
        if self.0.iter().any(|p| !(*p >= 0.0)) {
            return Err(PopulationError::Invalid {
                what: "esi_distribution",
                reason: "probabilities must be non-negative".into(),
            });
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > MEAN_TOL {
            return Err(PopulationError::Sum {
                what: "esi_distribution",
                sum,
            });
        }
        Ok(())
    }

    pub fn draw(&self, u: f64) -> u8 {
        categorical(&self.0, u) as u8 + 1
    }
}

/// Index drawn from (unnormalized) weights by inverse CDF.
pub fn categorical(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

pub fn draw_true_esi(stream: &mut StreamRng, dist: &EsiDistribution) -> u8 {
    dist.draw(rng::uniform(stream))
}

/// Under/over-triage rates. Probability mass that would leave 1..=5 stays on
/// the correct level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageErrors {
    pub p_correct: f64,
    pub p_under: f64,
    pub p_over: f64,
}

impl Default for TriageErrors {
    fn default() -> Self {
        TriageErrors {
            p_correct: 0.80,
            p_under: 0.10,
            p_over: 0.10,
        }
    }
}

impl TriageErrors {
    pub fn validate(&self) -> Result<(), PopulationError> {
        let sum = self.p_correct + self.p_under + self.p_over;
        if [self.p_correct, self.p_under, self.p_over]
            .iter()
            .any(|p| !(*p >= 0.0))
        {
            return Err(PopulationError::Invalid {
                what: "triage_errors",
                reason: "probabilities must be non-negative".into(),
            });
        }
        if (sum - 1.0).abs() > MEAN_TOL {
            return Err(PopulationError::Sum {
                what: "triage_errors",
                sum,
            });
        }
        Ok(())
    }

    /// Row of the triage matrix for a true level: P(assigned = 1..=5).
    pub fn row(&self, true_esi: u8) -> [f64; 5] {
        let i = (true_esi - 1) as usize;
        let mut row = [0.0; 5];
        let over = if true_esi > 1 { self.p_over } else { 0.0 };
        let under = if true_esi < 5 { self.p_under } else { 0.0 };
        if over > 0.0 {
            row[i - 1] = over;
        }
        if under > 0.0 {
            row[i + 1] = under;
        }
        row[i] = 1.0 - over - under;
        row
    }

    pub fn assign(&self, true_esi: u8, u: f64) -> u8 {
        categorical(&self.row(true_esi), u) as u8 + 1
    }
}

/// Assigns a triage level from the dynamics stream. Routing and queue
/// priority use the result; clinical risk keeps using the true level.
pub fn triage(true_esi: u8, errors: &TriageErrors, stream: &mut StreamRng) -> u8 {
    errors.assign(true_esi, rng::uniform(stream))
}

/// Per-level LWBS patience windows in minutes; `None` never walks out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatienceRanges(pub [Option<(f64, f64)>; 5]);

impl Default for PatienceRanges {
    fn default() -> Self {
        PatienceRanges([
            None,
            None,
            Some((120.0, 360.0)),
            Some((60.0, 240.0)),
            Some((45.0, 180.0)),
        ])
    }
}

impl PatienceRanges {
    pub fn validate(&self) -> Result<(), PopulationError> {
        for (lo, hi) in self.0.iter().flatten() {
            if !(*lo >= 0.0 && hi >= lo) {
                return Err(PopulationError::Invalid {
                    what: "patience",
                    reason: format!("range [{lo}, {hi}] is not ordered"),
                });
            }
        }
        Ok(())
    }

    /// Patience in minutes for a level and the patient's fixed quantile.
    pub fn minutes(&self, level: u8, quantile: f64) -> Option<f64> {
        self.0[(level - 1) as usize].map(|(lo, hi)| lo + quantile * (hi - lo))
    }
}

/// Condition weights conditional on true ESI. Entry `i` holds
/// `(condition index, weight)` pairs for ESI `i + 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub by_esi: [Vec<(u16, f64)>; 5],
}

impl ConditionTable {
    pub fn draw(&self, esi: u8, u: f64) -> Option<u16> {
        let row = &self.by_esi[(esi - 1) as usize];
        if row.is_empty() {
            return None;
        }
        let weights: Vec<f64> = row.iter().map(|(_, w)| *w).collect();
        Some(row[categorical(&weights, u)].0)
    }
}

/// Everything the patient stream decides about one arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    pub id: u64,
    pub time: SimTime,
    pub true_esi: u8,
    pub condition: u16,
    /// Fixed quantile within the patience window of the patient's level.
    pub patience_quantile: f64,
}

/// NHPP arrivals by thinning, drawing only from the patient stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrivalGenerator {
    stream: StreamRng,
    profile: ArrivalProfile,
    esi: EsiDistribution,
    conditions: ConditionTable,
    /// Continuous clock of the candidate process, in minutes.
    clock: f64,
    next_id: u64,
    lookahead: Option<ArrivalSpec>,
    exhausted: bool,
}

impl ArrivalGenerator {
    pub fn new(
        seed: u64,
        profile: ArrivalProfile,
        esi: EsiDistribution,
        conditions: ConditionTable,
    ) -> Self {
        ArrivalGenerator {
            stream: rng::seeded(seed),
            profile,
            esi,
            conditions,
            clock: 0.0,
            next_id: 0,
            lookahead: None,
            exhausted: false,
        }
    }

    fn generate_next(&mut self) -> Option<ArrivalSpec> {
        if self.exhausted {
            return None;
        }
        let lambda_max = self.profile.lambda_max();
        if !(lambda_max > 0.0) {
            self.exhausted = true;
            return None;
        }
        let per_minute = lambda_max / 60.0;
        loop {
            self.clock += rng::exp1(&mut self.stream) / per_minute;
            let accept = rng::uniform(&mut self.stream);
            if accept * lambda_max < self.profile.rate_at(self.clock) {
                break;
            }
        }
        let true_esi = self.esi.draw(rng::uniform(&mut self.stream));
        let condition = self
            .conditions
            .draw(true_esi, rng::uniform(&mut self.stream))
            .unwrap_or(0);
        let patience_quantile = rng::uniform(&mut self.stream);
        let id = self.next_id;
        self.next_id += 1;
        Some(ArrivalSpec {
            id,
            time: SimTime(libm::floor(self.clock) as u64),
            true_esi,
            condition,
            patience_quantile,
        })
    }

    /// Arrivals whose minute is `t` (earlier ones, if any were skipped, too).
    pub fn arrivals_at(&mut self, t: SimTime) -> Vec<ArrivalSpec> {
        let mut out = Vec::new();
        loop {
            if self.lookahead.is_none() {
                self.lookahead = self.generate_next();
            }
            match &self.lookahead {
                Some(a) if a.time <= t => out.push(self.lookahead.take().unwrap()),
                _ => break,
            }
        }
        out
    }
}

/// All arrivals strictly before `horizon`.
pub fn generate_arrivals(
    horizon: SimTime,
    profile: &ArrivalProfile,
    esi: &EsiDistribution,
    conditions: &ConditionTable,
    patient_seed: u64,
) -> Vec<ArrivalSpec> {
    let mut g = ArrivalGenerator::new(
        patient_seed,
        profile.clone(),
        esi.clone(),
        conditions.clone(),
    );
    if horizon.0 == 0 {
        return Vec::new();
    }
    g.arrivals_at(SimTime(horizon.0 - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    InProgress,
    Discharged,
    Admitted,
    Lwbs,
    Deceased,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::InProgress => "in_progress",
            Disposition::Discharged => "discharged",
            Disposition::Admitted => "admitted",
            Disposition::Lwbs => "lwbs",
            Disposition::Deceased => "deceased",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMilestone {
    pub step: String,
    pub start: SimTime,
    pub done: Option<SimTime>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Milestones {
    pub arrival: SimTime,
    pub triage_start: Option<SimTime>,
    pub triage_done: Option<SimTime>,
    pub first_provider: Option<SimTime>,
    pub room_entry: Option<SimTime>,
    pub disposition_time: Option<SimTime>,
    pub steps: Vec<StepMilestone>,
}

/// Clinical record of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: u64,
    pub arrival_time: SimTime,
    pub initial_esi: u8,
    /// Current true acuity; changes only by deterioration or treatment error.
    pub true_esi: u8,
    pub assigned_triage: Option<u8>,
    pub condition: u16,
    pub patience_quantile: f64,
    pub milestones: Milestones,
    pub disposition: Disposition,
    pub severity_worsened_by_error: bool,
    pub cumulative_wait: BTreeMap<ResourceKind, u64>,
    pub treatment_minutes: u64,
    pub travel_minutes: u64,
    pub fast_tracked: bool,
    pub physician_triaged: bool,
}

impl Patient {
    pub fn from_arrival(a: &ArrivalSpec) -> Self {
        Patient {
            id: a.id,
            arrival_time: a.time,
            initial_esi: a.true_esi,
            true_esi: a.true_esi,
            assigned_triage: None,
            condition: a.condition,
            patience_quantile: a.patience_quantile,
            milestones: Milestones {
                arrival: a.time,
                ..Default::default()
            },
            disposition: Disposition::InProgress,
            severity_worsened_by_error: false,
            cumulative_wait: BTreeMap::new(),
            treatment_minutes: 0,
            travel_minutes: 0,
            fast_tracked: false,
            physician_triaged: false,
        }
    }

    pub fn total_wait(&self) -> u64 {
        self.cumulative_wait.values().sum()
    }

    pub fn length_of_stay(&self) -> Option<u64> {
        self.milestones
            .disposition_time
            .map(|d| d - self.arrival_time)
    }

    /// Level used for routing and priority: assigned once triaged.
    pub fn priority(&self) -> u8 {
        self.assigned_triage.unwrap_or(self.true_esi)
    }

    /// Moves the true acuity one level toward 1.
    pub fn worsen(&mut self) -> bool {
        if self.true_esi > 1 {
            self.true_esi -= 1;
            true
        } else {
            false
        }
    }

    pub fn set_disposition(&mut self, d: Disposition, at: SimTime) {
        debug_assert_eq!(self.disposition, Disposition::InProgress);
        self.disposition = d;
        self.milestones.disposition_time = Some(at);
    }
}

/// SHA-256 over what the patient stream decided for each patient: arrival
/// minute, acuity at arrival, condition and patience quantile.
pub fn arrival_digest(patients: &[Patient]) -> String {
    let mut h = Sha256::new();
    for p in patients {
        h.update(p.arrival_time.0.to_le_bytes());
        h.update([p.initial_esi]);
        h.update(p.condition.to_le_bytes());
        h.update(p.patience_quantile.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}
