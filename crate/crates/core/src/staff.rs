//! Staff agents: shifts, fatigue, error rates and slowdown.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

use crate::des_kernel::{round_minutes, PoolId, ResourceKind, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Doctor,
    Nurse,
    NpPa,
    Assistant,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Doctor, Role::Nurse, Role::NpPa, Role::Assistant];

    pub fn resource_kind(self) -> ResourceKind {
        match self {
            Role::Doctor => ResourceKind::DoctorTime,
            Role::Nurse => ResourceKind::NurseTime,
            Role::NpPa => ResourceKind::NpTime,
            Role::Assistant => ResourceKind::AssistantTime,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Doctor => "doctor",
            Role::Nurse => "nurse",
            Role::NpPa => "np_pa",
            Role::Assistant => "assistant",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StaffError {
    #[error("role {0} has no staff but is required")]
    NoStaff(Role),
    #[error("shift for {role}: {reason}")]
    Shift { role: Role, reason: String },
    #[error("fatigue parameters for {role}: {reason}")]
    Fatigue { role: Role, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPattern {
    #[serde(rename = "block_12h")]
    Block12h,
    Waterfall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub pattern: ShiftPattern,
    /// Minutes of day at which shifts start.
    pub start_offsets: Vec<u32>,
    /// Shift length in minutes.
    pub duration: u32,
}

impl ShiftSpec {
    pub fn block_12h() -> Self {
        ShiftSpec {
            pattern: ShiftPattern::Block12h,
            start_offsets: vec![7 * 60, 19 * 60],
            duration: 720,
        }
    }

    pub fn waterfall(start_offsets: Vec<u32>, duration: u32) -> Self {
        ShiftSpec {
            pattern: ShiftPattern::Waterfall,
            start_offsets,
            duration,
        }
    }

    pub fn validate(&self, role: Role) -> Result<(), StaffError> {
        let err = |reason: String| Err(StaffError::Shift { role, reason });
        if self.duration == 0 || self.duration > 1440 {
            return err(format!("duration {} must be in 1..=1440", self.duration));
        }
        if self.start_offsets.is_empty() {
            return err("no start offsets".into());
        }
        if self.start_offsets.iter().any(|o| *o >= 1440) {
            return err("start offsets must be minutes of day".into());
        }
        if self.pattern == ShiftPattern::Waterfall
            && self.start_offsets.windows(2).any(|w| w[0] >= w[1])
        {
            return err("waterfall offsets must be strictly increasing".into());
        }
        Ok(())
    }

    /// Shift of the `index`-th member of the role.
    pub fn for_member(&self, index: usize) -> Shift {
        Shift {
            start: self.start_offsets[index % self.start_offsets.len()],
            duration: self.duration,
        }
    }
}

/// A daily recurring shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    pub start: u32,
    pub duration: u32,
}

impl Shift {
    /// Minutes since this shift's start if it covers `t`.
    pub fn minutes_into(&self, t: SimTime) -> Option<u32> {
        let into = (t.minute_of_day() + 1440 - self.start) % 1440;
        (into < self.duration).then_some(into)
    }

    pub fn on_duty(&self, t: SimTime) -> bool {
        self.minutes_into(t).is_some()
    }
}

/// Per-role fatigue, error and slowdown parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FatigueParams {
    /// Fatigue gained per working minute.
    pub r_work: f64,
    /// Fatigue recovered per idle or resting minute.
    pub r_rest: f64,
    /// Error probability with no fatigue.
    pub p0: f64,
    /// Exponential error coefficient.
    pub k: f64,
    pub s_max: f64,
    pub c_min: f64,
    pub rest_trigger: f64,
    pub rest_duration: u32,
}

impl Default for FatigueParams {
    fn default() -> Self {
        FatigueParams {
            r_work: 1.0 / 720.0,
            r_rest: 3.0 / 720.0,
            p0: 0.005,
            k: libm::log(11.0),
            s_max: 1.5,
            c_min: 0.7,
            rest_trigger: 0.6,
            rest_duration: 15,
        }
    }
}

impl FatigueParams {
    pub fn validate(&self, role: Role) -> Result<(), StaffError> {
        let err = |reason: &str| {
            Err(StaffError::Fatigue {
                role,
                reason: reason.into(),
            })
        };
        if !(self.r_work > 0.0 && self.r_rest > 0.0) {
            return err("r_work and r_rest must be positive");
        }
        if !(self.p0 >= 0.0 && self.p0 * libm::exp(self.k) <= 1.0) {
            return err("error probability must stay within [0, 1]");
        }
        if !(self.s_max >= 1.0) {
            return err("s_max must be at least 1");
        }
        if !(self.c_min > 0.0 && self.c_min <= 1.0) {
            return err("c_min must be in (0, 1]");
        }
        Ok(())
    }
}

/// One minute of linear accumulation or recovery, clamped to [0, 1].
pub fn step_fatigue(fatigue: f64, worked_this_minute: bool, params: &FatigueParams) -> f64 {
    let next = if worked_this_minute {
        fatigue + params.r_work
    } else {
        fatigue - params.r_rest
    };
    next.clamp(0.0, 1.0)
}

/// `p0 * exp(k * F)`.
pub fn error_probability(fatigue: f64, params: &FatigueParams) -> f64 {
    params.p0 * libm::exp(params.k * fatigue.clamp(0.0, 1.0))
}

const STABLE_MINUTES: u32 = 480;

/// Flat for the first eight hours, then linear down to `c_min` at shift end.
pub fn cognitive_effectiveness(minutes_into_shift: u32, shift_duration: u32, c_min: f64) -> f64 {
    if minutes_into_shift <= STABLE_MINUTES || shift_duration <= STABLE_MINUTES {
        return 1.0;
    }
    let span = (shift_duration - STABLE_MINUTES) as f64;
    let past = (minutes_into_shift - STABLE_MINUTES) as f64;
    (1.0 - (1.0 - c_min) * (past / span)).max(c_min)
}

/// `1 + (s_max - 1) * F`.
pub fn slowdown_factor(fatigue: f64, s_max: f64) -> f64 {
    1.0 + (s_max - 1.0) * fatigue.clamp(0.0, 1.0)
}

/// Scales a base duration by the slowest attendant's
/// `slowdown / effectiveness` factor.
pub fn effective_duration(base: u64, attendant_factors: impl IntoIterator<Item = f64>) -> u64 {
    let factor = attendant_factors.into_iter().fold(1.0_f64, f64::max);
    round_minutes(base as f64 * factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaffState {
    OffDuty,
    Active,
    Resting {
        until: SimTime,
    },
    /// Shift over or removal pending; finishing the current step.
    Draining,
    /// Held in reserve until activated.
    Reserve,
}

/// How a member's duty window is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyPlan {
    Rostered(Shift),
    /// On duty from `since` until removed.
    Open {
        since: SimTime,
    },
    /// Reserve that may be called in while the window covers the time.
    OnCall(Shift),
    Removed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaffMember {
    pub id: u64,
    pub name: String,
    pub role: Role,
    pub specializations: Vec<String>,
    pub fatigue: f64,
    pub plan: DutyPlan,
    pub state: StaffState,
    pub assigned_patients: BTreeSet<u64>,
    pub pool: PoolId,
    pub busy: bool,
    pub overtime_minutes: u64,
    pub worked_minutes: u64,
    /// Reserved for the provider-in-triage role.
    pub triage_doctor: bool,
    /// On-call member currently called in.
    pub called_in: bool,
}

/// Nominal length used for cognitive decline of staff without a roster.
pub const OPEN_SHIFT_MINUTES: u32 = 720;

impl StaffMember {
    pub fn new(id: u64, name: impl Into<String>, role: Role, plan: DutyPlan) -> Self {
        StaffMember {
            id,
            name: name.into(),
            role,
            specializations: Vec::new(),
            fatigue: 0.0,
            plan,
            state: StaffState::OffDuty,
            assigned_patients: BTreeSet::new(),
            pool: PoolId(0),
            busy: false,
            overtime_minutes: 0,
            worked_minutes: 0,
            triage_doctor: false,
            called_in: false,
        }
    }

    pub fn has_specialization(&self, spec: &str) -> bool {
        spec == "general" || self.specializations.iter().any(|s| s == spec)
    }

    /// Whether the duty plan wants this member working at `t`.
    pub fn scheduled(&self, t: SimTime) -> bool {
        match self.plan {
            DutyPlan::Rostered(shift) => shift.on_duty(t),
            DutyPlan::Open { since } => t >= since,
            DutyPlan::OnCall(shift) => self.called_in && shift.on_duty(t),
            DutyPlan::Removed => false,
        }
    }

    pub fn on_duty(&self) -> bool {
        matches!(
            self.state,
            StaffState::Active | StaffState::Resting { .. } | StaffState::Draining
        )
    }

    /// Minutes into the current shift and that shift's length.
    pub fn shift_position(&self, t: SimTime) -> (u32, u32) {
        match self.plan {
            DutyPlan::Rostered(shift) | DutyPlan::OnCall(shift) => match shift.minutes_into(t) {
                Some(m) => (m, shift.duration),
                None => (shift.duration, shift.duration),
            },
            DutyPlan::Open { since } => (
                (t.saturating_sub(since)).min(u32::MAX as u64) as u32,
                OPEN_SHIFT_MINUTES,
            ),
            DutyPlan::Removed => (0, OPEN_SHIFT_MINUTES),
        }
    }

    pub fn effectiveness(&self, t: SimTime, params: &FatigueParams) -> f64 {
        let (into, len) = self.shift_position(t);
        let into = if self.state == StaffState::Draining {
            into.max(len)
        } else {
            into
        };
        cognitive_effectiveness(into.min(len), len, params.c_min)
    }

    /// Duration multiplier this member applies to a step.
    pub fn duration_factor(&self, t: SimTime, params: &FatigueParams) -> f64 {
        slowdown_factor(self.fatigue, params.s_max) / self.effectiveness(t, params)
    }
}

/// Staffing for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleStaffing {
    pub count: u32,
    pub shift: ShiftSpec,
    /// Per-member specializations, cycled when shorter than `count`.
    #[serde(default)]
    pub specializations: Vec<Vec<String>>,
    #[serde(default)]
    pub fatigue: FatigueParams,
}

impl RoleStaffing {
    pub fn new(count: u32, shift: ShiftSpec) -> Self {
        RoleStaffing {
            count,
            shift,
            specializations: Vec::new(),
            fatigue: FatigueParams::default(),
        }
    }
}

/// Builds rostered members for a role. Ids start at `first_id`.
pub fn roster(
    role: Role,
    staffing: &RoleStaffing,
    first_id: u64,
    required: bool,
) -> Result<Vec<StaffMember>, StaffError> {
    if staffing.count == 0 {
        return if required {
            Err(StaffError::NoStaff(role))
        } else {
            Ok(Vec::new())
        };
    }
    staffing.shift.validate(role)?;
    staffing.fatigue.validate(role)?;
    Ok((0..staffing.count as usize)
        .map(|i| {
            let mut m = StaffMember::new(
                first_id + i as u64,
                format!("{}-{}", role.as_str(), i + 1),
                role,
                DutyPlan::Rostered(staffing.shift.for_member(i)),
            );
            if !staffing.specializations.is_empty() {
                m.specializations =
                    staffing.specializations[i % staffing.specializations.len()].clone();
            }
            m
        })
        .collect())
}

/// Number of members whose roster covers minute `t`.
pub fn coverage(members: &[StaffMember], t: SimTime) -> usize {
    members.iter().filter(|m| m.scheduled(t)).count()
}
