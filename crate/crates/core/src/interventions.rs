//! Fast track, nurse-ratio enforcement and split flow, the activity
//! counters they drive, and the runtime command documents that toggle them
//! or change rooms and staff.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

use crate::des_kernel::{ResourceKind, SimTime};
use crate::pathways::{PlannedStep, StaffReq, StepDef, StepKind};
use crate::staff::{Role, ShiftSpec};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InterventionError {
    #[error("intervention config: {0}")]
    Config(String),
    #[error("command line {line}: {reason}")]
    Command { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    FastTrack,
    NurseRatio,
    SplitFlow,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 3] = [
        InterventionKind::FastTrack,
        InterventionKind::NurseRatio,
        InterventionKind::SplitFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::FastTrack => "fast_track",
            InterventionKind::NurseRatio => "nurse_ratio",
            InterventionKind::SplitFlow => "split_flow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastTrackConfig {
    pub np_count: u32,
    pub np_shift: ShiftSpec,
    /// Fast-track rooms opened from the plan's spare rooms.
    pub ft_rooms: u32,
    /// Patients one fast-track room seats at once.
    pub chairs_per_room: u32,
    /// Exam rooms closed to make space for the fast-track unit.
    pub carve_exam_rooms: u32,
    pub eligible_levels: Vec<u8>,
}

impl Default for FastTrackConfig {
    fn default() -> Self {
        FastTrackConfig {
            np_count: 2,
            np_shift: ShiftSpec::block_12h(),
            ft_rooms: 1,
            chairs_per_room: 3,
            carve_exam_rooms: 1,
            eligible_levels: vec![4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NurseRatioConfig {
    pub max_ratio: f64,
    pub reserve_nurses: u32,
    /// Length of the shift a called-in reserve works before returning to
    /// the pool.
    pub reserve_shift_minutes: u32,
}

impl Default for NurseRatioConfig {
    fn default() -> Self {
        NurseRatioConfig {
            max_ratio: 4.0,
            reserve_nurses: 1,
            reserve_shift_minutes: 720,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFlowConfig {
    pub triage_doctor_count: u32,
    pub triage_doctor_shift: ShiftSpec,
    pub pit_duration: u64,
    pub eligible_levels: Vec<u8>,
    /// Levels discharged from triage when their pathway allows it.
    pub release_levels: Vec<u8>,
}

impl Default for SplitFlowConfig {
    fn default() -> Self {
        SplitFlowConfig {
            triage_doctor_count: 2,
            triage_doctor_shift: ShiftSpec::waterfall(vec![540, 780], 600),
            pit_duration: 5,
            eligible_levels: vec![3],
            release_levels: vec![4, 5],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionConfig {
    pub enabled: BTreeSet<InterventionKind>,
    pub fast_track: FastTrackConfig,
    pub nurse_ratio: NurseRatioConfig,
    pub split_flow: SplitFlowConfig,
}

impl InterventionConfig {
    pub fn with(kind: InterventionKind) -> Self {
        InterventionConfig {
            enabled: [kind].into(),
            ..Default::default()
        }
    }

    pub fn is_enabled(&self, kind: InterventionKind) -> bool {
        self.enabled.contains(&kind)
    }

    pub fn validate(&self) -> Result<(), InterventionError> {
        let err = |m: &str| Err(InterventionError::Config(m.to_string()));
        let levels_ok = |v: &[u8]| v.iter().all(|l| (1..=5).contains(l));
        let ft = &self.fast_track;
        if self.is_enabled(InterventionKind::FastTrack) && (ft.ft_rooms == 0 || ft.np_count == 0) {
            return err("fast track needs at least one room and one NP/PA");
        }
        if ft.chairs_per_room == 0 || !levels_ok(&ft.eligible_levels) {
            return err("fast track chairs must be positive and levels within 1-5");
        }
        if !(self.nurse_ratio.max_ratio > 0.0) {
            return err("nurse ratio must be positive");
        }
        if !(1..=1440).contains(&self.nurse_ratio.reserve_shift_minutes) {
            return err("reserve shift must last between 1 and 1440 minutes");
        }
        let sf = &self.split_flow;
        if self.is_enabled(InterventionKind::SplitFlow) && sf.triage_doctor_count == 0 {
            return err("split flow needs a dedicated triage doctor");
        }
        if sf.pit_duration == 0 || !levels_ok(&sf.eligible_levels) || !levels_ok(&sf.release_levels)
        {
            return err("split flow duration must be positive and levels within 1-5");
        }
        if sf
            .eligible_levels
            .iter()
            .chain(&sf.release_levels)
            .any(|l| *l <= 2)
        {
            return err("levels 1 and 2 always bypass provider-in-triage");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionCounters {
    pub fast_track_count: u64,
    pub nurse_ratio_blocked_count: u64,
    pub physician_triage_count: u64,
}

/// Whether a triaged patient goes to the fast-track unit.
pub fn fast_track_eligible(config: &InterventionConfig, assigned: u8) -> bool {
    config.is_enabled(InterventionKind::FastTrack)
        && config.fast_track.eligible_levels.contains(&assigned)
}

/// Retargets one step to the fast-track unit: bed rooms become the
/// fast-track room and provider and nurse time becomes one NP/PA.
pub fn fast_track_step(step: &mut StepDef) {
    let retarget = |k: ResourceKind| {
        if k.is_bed() {
            ResourceKind::FastTrackRoom
        } else {
            k
        }
    };
    step.room = step.room.map(retarget);
    step.location = step.location.map(retarget);
    step.alt_rooms.retain(|k| !k.is_bed());
    let had_clinician = step
        .staff
        .iter()
        .any(|s| matches!(s.role, Role::Doctor | Role::Nurse | Role::NpPa));
    step.staff
        .retain(|s| !matches!(s.role, Role::Doctor | Role::Nurse | Role::NpPa));
    if had_clinician {
        step.staff.insert(0, StaffReq::new(Role::NpPa));
    }
}

/// How split flow treats a triaged patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitFlowRoute {
    Bypass,
    Pit,
    PitAndRelease,
}

pub fn split_flow_route(
    config: &InterventionConfig,
    assigned: u8,
    treat_and_release: bool,
) -> SplitFlowRoute {
    if !config.is_enabled(InterventionKind::SplitFlow) {
        return SplitFlowRoute::Bypass;
    }
    let sf = &config.split_flow;
    if treat_and_release && sf.release_levels.contains(&assigned) {
        SplitFlowRoute::PitAndRelease
    } else if sf.eligible_levels.contains(&assigned) {
        SplitFlowRoute::Pit
    } else {
        SplitFlowRoute::Bypass
    }
}

fn triage_doctor() -> StaffReq {
    StaffReq {
        triage_doctor: true,
        ..StaffReq::new(Role::Doctor)
    }
}

pub fn pit_step(config: &SplitFlowConfig) -> StepDef {
    StepDef {
        location: Some(ResourceKind::TriageRoom),
        ..StepDef::new("pit", StepKind::PitAssessment, config.pit_duration)
    }
    .with_staff(triage_doctor())
}

/// Rewrites the steps that follow triage: the assessment goes first, then
/// diagnostics that followed the first bed step move ahead of it in their
/// original order. With `release`, the journey ends with a roomless
/// disposition handled by the triage doctor.
pub fn apply_split_flow(
    remaining: Vec<PlannedStep>,
    pit: StepDef,
    release: bool,
) -> Vec<PlannedStep> {
    let pit = PlannedStep {
        def: pit,
        inserted: true,
    };
    if release {
        let mut dispo = remaining
            .iter()
            .rev()
            .find(|s| s.def.kind == StepKind::Disposition)
            .map(|s| s.def.clone())
            .unwrap_or_else(|| StepDef::new("disposition", StepKind::Disposition, 5));
        dispo.room = None;
        dispo.alt_rooms.clear();
        dispo.location = Some(ResourceKind::TriageRoom);
        dispo.equipment.clear();
        dispo.branch.clear();
        dispo.staff.retain(|s| s.role != Role::Doctor);
        dispo.staff.insert(0, triage_doctor());
        return vec![pit, dispo.into()];
    }
    let mut out = vec![pit];
    out.extend(front_load(remaining));
    out
}

/// Stable move of diagnostics that follow the first bed step to just
/// before it.
pub fn front_load(steps: Vec<PlannedStep>) -> Vec<PlannedStep> {
    let Some(first_bed) = steps.iter().position(|s| s.def.needs_bed()) else {
        return steps;
    };
    let (head, tail) = steps.split_at(first_bed);
    let (diag, rest): (Vec<_>, Vec<_>) = tail
        .iter()
        .cloned()
        .partition(|s| s.def.kind.is_diagnostic());
    head.iter().cloned().chain(diag).chain(rest).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioDecision {
    Proceed,
    ActivateReserve,
    Blocked,
}

/// Admission check for a patient about to take a main-ED bed.
pub fn enforce_nurse_ratio(
    patients_under_care: u32,
    nurses_on_duty: u32,
    reserve_available: bool,
    max_ratio: f64,
) -> RatioDecision {
    let prospective = (patients_under_care + 1) as f64 / nurses_on_duty.max(1) as f64;
    if prospective <= max_ratio + 1e-12 {
        RatioDecision::Proceed
    } else if reserve_available {
        RatioDecision::ActivateReserve
    } else {
        RatioDecision::Blocked
    }
}

/// What a runtime command does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "params", rename_all = "snake_case")]
pub enum Action {
    Enable {
        intervention: InterventionKind,
    },
    Disable {
        intervention: InterventionKind,
    },
    OpenRoom {
        kind: ResourceKind,
    },
    CloseRoom {
        id: String,
    },
    AddStaff {
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        specialization: Option<String>,
    },
    RemoveStaff {
        id: String,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Enable { .. } => "enable",
            Action::Disable { .. } => "disable",
            Action::OpenRoom { .. } => "open_room",
            Action::CloseRoom { .. } => "close_room",
            Action::AddStaff { .. } => "add_staff",
            Action::RemoveStaff { .. } => "remove_staff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub t: SimTime,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Deserialize)]
struct RawCommand {
    t: u64,
    action: String,
    #[serde(default)]
    params: serde_json::Value,
}

fn parse_command(raw: RawCommand) -> Result<Command, String> {
    let params = match raw.params {
        serde_json::Value::Null => serde_json::json!({}),
        serde_json::Value::Object(mut map) => {
            // Staff ids may be written as numbers.
            if let Some(serde_json::Value::Number(n)) = map.get("id") {
                let s = n.to_string();
                map.insert("id".into(), serde_json::Value::String(s));
            }
            serde_json::Value::Object(map)
        }
        other => return Err(format!("params must be an object, got {other}")),
    };
    let tagged = serde_json::json!({ "action": raw.action, "params": params });
    let action: Action = serde_json::from_value(tagged).map_err(|e| e.to_string())?;
    Ok(Command {
        t: SimTime(raw.t),
        action,
    })
}

/// Reads one command per non-blank line, `{t, action, params}`.
pub fn parse_commands(text: &str) -> Result<Vec<Command>, InterventionError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| InterventionError::Command {
            line: i + 1,
            reason,
        };
        let raw: RawCommand = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        out.push(parse_command(raw).map_err(err)?);
    }
    Ok(out)
}

pub fn write_command(cmd: &Command) -> String {
    serde_json::to_string(cmd).expect("commands serialize")
}
