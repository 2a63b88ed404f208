//! Scenario configuration, shipped presets and the configuration hash that
//! guards checkpoints.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::clinical_outcomes::{DeteriorationParams, MortalityParams};
use crate::data;
use crate::des_kernel::{ResourceKind, SimTime};
use crate::interventions::{InterventionConfig, InterventionKind};
use crate::pathways::{AdmissionProbabilities, PathwayLibrary};
use crate::population::{ArrivalProfile, EsiDistribution, PatienceRanges, TriageErrors};
use crate::spatial::{FloorPlan, MovementParams, RoomKind};
use crate::staff::{self, Role, RoleStaffing};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {what}: {reason}")]
    Parse { what: String, reason: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdSize {
    Medium,
    Large,
    Xlarge,
}

impl EdSize {
    pub const ALL: [EdSize; 3] = [EdSize::Medium, EdSize::Large, EdSize::Xlarge];

    pub fn as_str(self) -> &'static str {
        match self {
            EdSize::Medium => "medium",
            EdSize::Large => "large",
            EdSize::Xlarge => "xlarge",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            EdSize::Medium => "M",
            EdSize::Large => "L",
            EdSize::Xlarge => "XL",
        }
    }

    pub fn parse(s: &str) -> Option<EdSize> {
        EdSize::ALL
            .into_iter()
            .find(|z| z.as_str() == s || z.short().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for EdSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

/// Scenario variant that stresses one part of the department.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Standard,
    HighVolume,
    StressedStaffing,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Standard => "standard",
            Baseline::HighVolume => "high_volume",
            Baseline::StressedStaffing => "stressed_staffing",
        }
    }

    pub fn parse(s: &str) -> Option<Baseline> {
        [
            Baseline::Standard,
            Baseline::HighVolume,
            Baseline::StressedStaffing,
        ]
        .into_iter()
        .find(|b| b.as_str() == s)
    }

    /// The baseline each intervention is evaluated against.
    pub fn for_intervention(kind: InterventionKind) -> Baseline {
        match kind {
            InterventionKind::FastTrack | InterventionKind::SplitFlow => Baseline::HighVolume,
            InterventionKind::NurseRatio => Baseline::StressedStaffing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub high_volume_surge: f64,
    /// Fraction of nurses kept, rounded up, never below one per shift block.
    pub stressed_nurse_fraction: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            high_volume_surge: 1.5,
            stressed_nurse_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub patient: u64,
    pub dynamics: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            patient: 1,
            dynamics: 1,
        }
    }
}

fn shipped() -> String {
    "shipped".into()
}

fn three() -> u32 {
    3
}

/// A complete scenario. Floor plan and pathway manifest are either names of
/// shipped data (`medium`, `shipped`) or paths to YAML files, resolved
/// relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub name: String,
    pub size: EdSize,
    pub floor_plan: String,
    #[serde(default = "shipped")]
    pub pathways: String,
    #[serde(default = "three")]
    pub horizon_days: u32,
    /// Overrides `horizon_days` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_minutes: Option<u64>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub baseline_params: BaselineParams,
    pub arrivals: ArrivalProfile,
    #[serde(default)]
    pub esi: EsiDistribution,
    #[serde(default)]
    pub triage_errors: TriageErrors,
    #[serde(default)]
    pub patience: PatienceRanges,
    /// Rooms open at start, by kind. Remaining plan rooms stay closed.
    pub rooms: BTreeMap<ResourceKind, u32>,
    #[serde(default)]
    pub equipment: BTreeMap<String, u32>,
    pub staffing: BTreeMap<Role, RoleStaffing>,
    #[serde(default)]
    pub movement: MovementParams,
    #[serde(default)]
    pub mortality: MortalityParams,
    #[serde(default)]
    pub deterioration: DeteriorationParams,
    #[serde(default)]
    pub admission: AdmissionProbabilities,
    #[serde(default)]
    pub interventions: InterventionConfig,
}

impl SimConfig {
    pub fn from_yaml(text: &str) -> Result<SimConfig, ConfigError> {
        serde_yaml::from_str(text).map_err(|e| ConfigError::Parse {
            what: "scenario".into(),
            reason: e.to_string(),
        })
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    /// The shipped scenario for a department size.
    pub fn preset(size: EdSize) -> SimConfig {
        SimConfig::from_yaml(data::scenario(size)).expect("shipped scenarios parse")
    }

    pub fn with_baseline(mut self, baseline: Baseline) -> Self {
        self.baseline = baseline;
        self
    }

    pub fn with_intervention(mut self, kind: InterventionKind) -> Self {
        self.interventions.enabled.insert(kind);
        self
    }

    pub fn with_seeds(mut self, patient: u64, dynamics: u64) -> Self {
        self.seeds = Seeds { patient, dynamics };
        self
    }

    pub fn with_horizon_minutes(mut self, minutes: u64) -> Self {
        self.horizon_minutes = Some(minutes);
        self
    }

    pub fn horizon(&self) -> SimTime {
        SimTime(
            self.horizon_minutes
                .unwrap_or(self.horizon_days as u64 * 1440),
        )
    }

    /// Copy with the baseline variant folded into arrivals and staffing.
    pub fn effective(&self) -> SimConfig {
        let mut c = self.clone();
        match self.baseline {
            Baseline::Standard => {}
            Baseline::HighVolume => c.arrivals.surge *= self.baseline_params.high_volume_surge,
            Baseline::StressedStaffing => {
                if let Some(n) = c.staffing.get_mut(&Role::Nurse) {
                    let kept =
                        libm::ceil(n.count as f64 * self.baseline_params.stressed_nurse_fraction)
                            as u32;
                    n.count = kept.max(n.shift.start_offsets.len() as u32).min(n.count);
                }
            }
        }
        c.baseline = Baseline::Standard;
        c
    }

    pub fn staffing_for(&self, role: Role) -> Option<&RoleStaffing> {
        self.staffing.get(&role)
    }

    pub fn open_rooms(&self, kind: ResourceKind) -> u32 {
        self.rooms.get(&kind).copied().unwrap_or(0)
    }

    /// Loads a scenario file and resolves the data it references.
    pub fn load(path: &Path) -> Result<Resolved, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let config = SimConfig::from_yaml(&text)?;
        config.resolve(path.parent())
    }

    /// Resolves floor plan and pathways, validates everything, and computes
    /// the configuration hash.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Resolved, ConfigError> {
        let read = |rel: &str| -> Result<(PathBuf, String), ConfigError> {
            let p = base.map_or_else(|| PathBuf::from(rel), |b| b.join(rel));
            let text = std::fs::read_to_string(&p).map_err(|source| ConfigError::Io {
                path: p.clone(),
                source,
            })?;
            Ok((p, text))
        };
        let plan_text = match data::floor_plan(&self.floor_plan) {
            Some(t) => t.to_string(),
            None => read(&self.floor_plan)?.1,
        };
        let (manifest_text, docs) = if self.pathways == "shipped" {
            (
                data::PATHWAY_MANIFEST.to_string(),
                data::pathway_documents(),
            )
        } else {
            let (mpath, mtext) = read(&self.pathways)?;
            let manifest: crate::pathways::Manifest =
                serde_yaml::from_str(&mtext).map_err(|e| ConfigError::Parse {
                    what: mpath.display().to_string(),
                    reason: e.to_string(),
                })?;
            let dir = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut docs = Vec::new();
            for f in &manifest.pathways {
                let p = dir.join(f);
                let t = std::fs::read_to_string(&p).map_err(|source| ConfigError::Io {
                    path: p.clone(),
                    source,
                })?;
                docs.push((f.clone(), t));
            }
            (mtext, docs)
        };
        Resolved::build(self.clone(), &plan_text, &manifest_text, &docs)
    }
}

/// A validated configuration with its floor plan, pathway library and hash.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// As written, with the baseline still named.
    pub source: SimConfig,
    /// Baseline applied.
    pub config: SimConfig,
    pub plan: FloorPlan,
    pub library: PathwayLibrary,
    pub hash: String,
}

impl Resolved {
    pub fn build(
        source: SimConfig,
        plan_text: &str,
        manifest_text: &str,
        docs: &[(String, String)],
    ) -> Result<Resolved, ConfigError> {
        let plan =
            FloorPlan::parse(plan_text).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
        let library = PathwayLibrary::load(manifest_text, docs)
            .map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
        let config = source.effective();
        let problems = validate(&config, &plan, &library);
        if !problems.is_empty() {
            return Err(ConfigError::Invalid(problems));
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&source).expect("config serializes"));
        h.update(plan_text.as_bytes());
        h.update(manifest_text.as_bytes());
        for (name, text) in docs {
            h.update(name.as_bytes());
            h.update(text.as_bytes());
        }
        Ok(Resolved {
            source,
            config,
            plan,
            library,
            hash: hex::encode(h.finalize()),
        })
    }

    pub fn shipped(config: SimConfig) -> Result<Resolved, ConfigError> {
        config.resolve(None)
    }
}

/// Collects every problem rather than stopping at the first.
pub fn validate(c: &SimConfig, plan: &FloorPlan, library: &PathwayLibrary) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |r: Result<(), String>| {
        if let Err(e) = r {
            out.push(e);
        }
    };
    check(c.arrivals.validate().map_err(|e| e.to_string()));
    check(c.esi.validate().map_err(|e| e.to_string()));
    check(c.triage_errors.validate().map_err(|e| e.to_string()));
    check(c.patience.validate().map_err(|e| e.to_string()));
    check(c.mortality.validate().map_err(|e| e.to_string()));
    check(c.deterioration.validate().map_err(|e| e.to_string()));
    check(c.interventions.validate().map_err(|e| e.to_string()));
    if c.horizon().0 == 0 {
        out.push("horizon must be at least one minute".into());
    }
    if !(c.movement.patient_speed > 0.0
        && c.movement.staff_speed > 0.0
        && c.movement.hauling_multiplier > 0.0)
    {
        out.push("movement speeds must be positive".into());
    }
    if c.admission.0.iter().any(|p| !(0.0..=1.0).contains(p)) {
        out.push("admission probabilities must lie in [0, 1]".into());
    }

    for role in Role::ALL {
        let required = matches!(role, Role::Doctor | Role::Nurse);
        match c.staffing.get(&role) {
            None if required => out.push(format!("role {role} has no staffing entry")),
            None => {}
            Some(s) => {
                if let Err(e) = staff::roster(role, s, 0, required) {
                    out.push(e.to_string());
                }
                if let Err(e) = s.fatigue.validate(role) {
                    out.push(e.to_string());
                }
            }
        }
    }
    for role in [Role::Doctor, Role::Nurse] {
        if let Some(s) = c.staffing.get(&role) {
            if let Ok(members) = staff::roster(role, s, 0, true) {
                if let Some(gap) = (0..1440).find(|m| staff::coverage(&members, SimTime(*m)) == 0) {
                    out.push(format!("no {role} on duty at minute {gap} of the day"));
                }
            }
        }
    }

    let needs = library.requirements();
    for kind in ResourceKind::ALL.into_iter().filter(|k| k.is_room()) {
        let Some(room_kind) = RoomKind::from_resource_kind(kind) else {
            continue;
        };
        let in_plan = plan.count(room_kind) as u32;
        let open = c.open_rooms(kind);
        if open > in_plan {
            out.push(format!(
                "{open} {kind} rooms requested but the floor plan has {in_plan}"
            ));
        }
        if needs.rooms.contains(&kind) && kind != ResourceKind::FastTrackRoom && open == 0 {
            out.push(format!("pathways need {kind} but none are open"));
        }
    }
    if c.open_rooms(ResourceKind::FastTrackRoom) > 0 {
        out.push(
            "fast-track rooms are opened by the fast-track intervention, not the room table".into(),
        );
    }
    if plan.count(RoomKind::WaitingArea) == 0 || plan.count(RoomKind::StaffArea) == 0 {
        out.push("floor plan needs a waiting area and a staff area".into());
    }
    for (name, n) in &c.equipment {
        if *n == 0 {
            out.push(format!("equipment {name} has zero units"));
        }
    }
    for name in &needs.equipment {
        if !c.equipment.contains_key(name) {
            out.push(format!(
                "pathways need equipment {name} but the scenario has none"
            ));
        }
    }
    for role in &needs.roles {
        if *role != Role::NpPa && c.staffing.get(role).is_none_or(|s| s.count == 0) {
            out.push(format!(
                "pathways need role {role} but the scenario has none"
            ));
        }
    }
    if let Some(doctors) = c.staffing.get(&Role::Doctor) {
        if let Ok(members) = staff::roster(Role::Doctor, doctors, 0, false) {
            for spec in &needs.specializations {
                if !members.iter().any(|m| m.has_specialization(spec)) {
                    out.push(format!("no doctor has specialization {spec}"));
                }
            }
        }
    }
    let ft = &c.interventions.fast_track;
    if c.interventions.is_enabled(InterventionKind::FastTrack) {
        let spare = plan.count(RoomKind::FastTrackRoom) as u32;
        if spare < ft.ft_rooms {
            out.push(format!(
                "fast track needs {} fast-track rooms but the floor plan has {spare}",
                ft.ft_rooms
            ));
        }
        if c.open_rooms(ResourceKind::ExamRoom) <= ft.carve_exam_rooms {
            out.push("fast track would close every exam room".into());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for size in EdSize::ALL {
            let r = Resolved::shipped(SimConfig::preset(size)).unwrap();
            assert_eq!(r.hash.len(), 64);
        }
    }

    #[test]
    fn table_one_counts() {
        let m = SimConfig::preset(EdSize::Medium);
        assert_eq!(m.staffing[&Role::Doctor].count, 4);
        assert_eq!(m.staffing[&Role::Nurse].count, 2);
        assert_eq!(m.arrivals.lambda_avg, 4.0);
        assert_eq!(m.open_rooms(ResourceKind::ExamRoom), 4);
        let xl = SimConfig::preset(EdSize::Xlarge);
        assert_eq!(xl.staffing[&Role::Nurse].count, 32);
        assert_eq!(xl.open_rooms(ResourceKind::Ct), 4);
    }

    #[test]
    fn baselines_fold_in() {
        let m = SimConfig::preset(EdSize::Medium);
        let hv = m.clone().with_baseline(Baseline::HighVolume).effective();
        assert_eq!(hv.arrivals.surge, 1.5);
        let l = SimConfig::preset(EdSize::Large)
            .with_baseline(Baseline::StressedStaffing)
            .effective();
        assert_eq!(l.staffing[&Role::Nurse].count, 3);
        let ms = m.with_baseline(Baseline::StressedStaffing).effective();
        assert_eq!(ms.staffing[&Role::Nurse].count, 2);
    }

    #[test]
    fn hash_tracks_content() {
        let a = Resolved::shipped(SimConfig::preset(EdSize::Medium)).unwrap();
        let b = Resolved::shipped(SimConfig::preset(EdSize::Medium).with_seeds(9, 9)).unwrap();
        assert_ne!(a.hash, b.hash);
        assert_eq!(
            a.hash,
            Resolved::shipped(SimConfig::preset(EdSize::Medium))
                .unwrap()
                .hash
        );
    }

    #[test]
    fn zero_doctors_is_a_config_error() {
        let mut c = SimConfig::preset(EdSize::Medium);
        c.staffing.get_mut(&Role::Doctor).unwrap().count = 0;
        let err = Resolved::shipped(c).unwrap_err();
        assert!(err.to_string().contains("doctor"), "{err}");
    }

    #[test]
    fn missing_specialization_is_reported() {
        let mut c = SimConfig::preset(EdSize::Medium);
        c.staffing.get_mut(&Role::Doctor).unwrap().specializations = vec![vec!["general".into()]];
        let ConfigError::Invalid(problems) = Resolved::shipped(c).unwrap_err() else {
            panic!()
        };
        assert!(
            problems.iter().any(|p| p.contains("trauma")),
            "{problems:?}"
        );
    }
}
