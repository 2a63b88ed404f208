//! Condition pathways: ordered treatment steps with resource needs and
//! probabilistic branches, plus the manifest that maps acuity levels to
//! pathway selection weights.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::des_kernel::ResourceKind;
use crate::population::ConditionTable;
use crate::staff::Role;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PathwayError {
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> PathwayError {
    PathwayError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Triage,
    ProviderExam,
    Labs,
    Imaging,
    Procedure,
    Observation,
    Disposition,
    /// Provider assessment at triage, inserted by split flow.
    PitAssessment,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Triage => "triage",
            StepKind::ProviderExam => "provider_exam",
            StepKind::Labs => "labs",
            StepKind::Imaging => "imaging",
            StepKind::Procedure => "procedure",
            StepKind::Observation => "observation",
            StepKind::Disposition => "disposition",
            StepKind::PitAssessment => "pit_assessment",
        }
    }

    pub fn is_diagnostic(self) -> bool {
        matches!(self, StepKind::Labs | StepKind::Imaging)
    }
}

/// Who a staff requirement may be filled by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaffReq {
    pub role: Role,
    /// Doctors only; `None` accepts any non-triage doctor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialization: Option<String>,
    #[serde(default = "one")]
    pub count: u32,
    /// Filled only by the dedicated provider-in-triage doctors.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub triage_doctor: bool,
}

fn one() -> u32 {
    1
}

impl StaffReq {
    pub fn new(role: Role) -> Self {
        StaffReq {
            role,
            specialization: None,
            count: 1,
            triage_doctor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDef {
    pub probability: f64,
    #[serde(default)]
    pub steps: Vec<StepDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDef {
    pub id: String,
    pub kind: StepKind,
    pub base_duration: u64,
    /// Room the step must hold. Bed rooms stay held until disposition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<ResourceKind>,
    /// Acceptable substitutes for `room`, tried in order after it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alt_rooms: Vec<ResourceKind>,
    /// Where the step happens when it holds no room.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<ResourceKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equipment: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub staff: Vec<StaffReq>,
    /// Minutes of passive waiting for results after the staffed part.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub turnaround: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branch: Vec<BranchDef>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl StepDef {
    pub fn new(id: &str, kind: StepKind, base_duration: u64) -> Self {
        StepDef {
            id: id.to_string(),
            kind,
            base_duration,
            room: None,
            alt_rooms: vec![],
            location: None,
            equipment: vec![],
            staff: vec![],
            turnaround: 0,
            branch: vec![],
        }
    }

    pub fn with_room(mut self, room: ResourceKind) -> Self {
        self.room = Some(room);
        self
    }

    pub fn with_staff(mut self, staff: StaffReq) -> Self {
        self.staff.push(staff);
        self
    }

    /// Room kinds acceptable for this step, preferred first.
    pub fn room_candidates(&self) -> Vec<ResourceKind> {
        self.room
            .into_iter()
            .chain(self.alt_rooms.iter().copied())
            .collect()
    }

    pub fn needs_bed(&self) -> bool {
        self.room.is_some_and(ResourceKind::is_bed)
    }

    /// Whether a doctor or NP/PA attends the step.
    pub fn has_provider(&self) -> bool {
        self.staff
            .iter()
            .any(|s| matches!(s.role, Role::Doctor | Role::NpPa))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayDef {
    pub id: String,
    pub name: String,
    pub eligible_esi: Vec<u8>,
    pub initial_severity: u8,
    /// Low-complexity pathway that may be discharged straight from triage.
    #[serde(default)]
    pub treat_and_release: bool,
    pub steps: Vec<StepDef>,
}

impl PathwayDef {
    pub fn validate(&self, file: &str) -> Result<(), PathwayError> {
        let here = |rest: &str| format!("{file}: pathway {}{rest}", self.id);
        if self.id.is_empty() {
            return Err(invalid(file, "pathway id is empty"));
        }
        if self.eligible_esi.is_empty() {
            return Err(invalid(here(".eligible_esi"), "missing eligible_esi"));
        }
        if let Some(bad) = self.eligible_esi.iter().find(|e| !(1..=5).contains(*e)) {
            return Err(invalid(
                here(".eligible_esi"),
                format!("level {bad} outside 1-5"),
            ));
        }
        if !(1..=5).contains(&self.initial_severity) {
            return Err(invalid(here(".initial_severity"), "must be within 1-5"));
        }
        if self.steps.is_empty() {
            return Err(invalid(here(".steps"), "pathway has no steps"));
        }
        if self.steps[0].kind != StepKind::Triage {
            return Err(invalid(here(".steps[0]"), "first step must be triage"));
        }
        validate_steps(&self.steps, &here(".steps"), true)
    }

    /// Every step, including those inside branches.
    pub fn all_steps(&self) -> Vec<&StepDef> {
        fn walk<'a>(steps: &'a [StepDef], out: &mut Vec<&'a StepDef>) {
            for s in steps {
                out.push(s);
                for b in &s.branch {
                    walk(&b.steps, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.steps, &mut out);
        out
    }
}

fn validate_steps(steps: &[StepDef], path: &str, top: bool) -> Result<(), PathwayError> {
    for (i, s) in steps.iter().enumerate() {
        let p = format!("{path}[{i}]");
        if s.base_duration < 1 {
            return Err(invalid(&p, "base_duration must be at least 1 minute"));
        }
        if s.kind == StepKind::Triage && !(top && i == 0) {
            return Err(invalid(&p, "triage may only be the first step"));
        }
        for r in s.room_candidates() {
            if !r.is_room() {
                return Err(invalid(
                    format!("{p}.room"),
                    format!("{r} is not a room kind"),
                ));
            }
        }
        if !s.alt_rooms.is_empty() && s.room.is_none() {
            return Err(invalid(
                format!("{p}.alt_rooms"),
                "alternatives need a primary room",
            ));
        }
        if let Some(loc) = s.location {
            if !loc.is_room() {
                return Err(invalid(
                    format!("{p}.location"),
                    format!("{loc} is not a room kind"),
                ));
            }
        }
        if s.kind == StepKind::Imaging
            && !matches!(
                s.room,
                Some(ResourceKind::Xray | ResourceKind::Ct | ResourceKind::Ultrasound)
            )
        {
            return Err(invalid(
                format!("{p}.room"),
                "imaging needs an xray, ct or ultrasound room",
            ));
        }
        for (j, st) in s.staff.iter().enumerate() {
            if st.count == 0 {
                return Err(invalid(
                    format!("{p}.staff[{j}]"),
                    "count must be at least 1",
                ));
            }
            if st.specialization.is_some() && st.role != Role::Doctor {
                return Err(invalid(
                    format!("{p}.staff[{j}]"),
                    "only doctors carry a specialization",
                ));
            }
        }
        let may_be_bare = matches!(s.kind, StepKind::Labs | StepKind::Observation);
        if s.room.is_none() && s.staff.is_empty() && s.equipment.is_empty() && !may_be_bare {
            return Err(invalid(&p, "step requires no resources"));
        }
        if !s.branch.is_empty() {
            let total: f64 = s.branch.iter().map(|b| b.probability).sum();
            if s.branch
                .iter()
                .any(|b| !(0.0..=1.0).contains(&b.probability))
                || (total - 1.0).abs() > 1e-9
            {
                let shown = (total * 1e9).round() / 1e9;
                return Err(invalid(
                    format!("{p}.branch"),
                    format!("branch probabilities sum to {shown}"),
                ));
            }
            for (j, b) in s.branch.iter().enumerate() {
                validate_steps(&b.steps, &format!("{p}.branch[{j}].steps"), false)?;
            }
        }
    }
    Ok(())
}

/// Maps acuity levels to pathway selection weights, by pathway id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Pathway files, relative to the manifest.
    pub pathways: Vec<String>,
    pub selection: BTreeMap<u8, BTreeMap<String, f64>>,
}

/// Validated pathways in manifest order plus the selection table. A
/// patient's condition is an index into `pathways`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayLibrary {
    pub pathways: Vec<PathwayDef>,
    pub conditions: ConditionTable,
}

impl PathwayLibrary {
    /// Builds a library from `(file name, yaml text)` documents and a
    /// manifest.
    pub fn load(
        manifest_text: &str,
        documents: &[(String, String)],
    ) -> Result<PathwayLibrary, PathwayError> {
        let manifest: Manifest =
            serde_yaml::from_str(manifest_text).map_err(|e| invalid("manifest", e.to_string()))?;
        let mut pathways = Vec::new();
        for file in &manifest.pathways {
            let text = documents
                .iter()
                .find(|(name, _)| name == file)
                .map(|(_, t)| t)
                .ok_or_else(|| invalid("manifest", format!("pathway file {file} not provided")))?;
            let def: PathwayDef =
                serde_yaml::from_str(text).map_err(|e| invalid(file, e.to_string()))?;
            def.validate(file)?;
            if pathways.iter().any(|p: &PathwayDef| p.id == def.id) {
                return Err(invalid(file, format!("duplicate pathway id {}", def.id)));
            }
            pathways.push(def);
        }
        Self::from_parts(pathways, &manifest.selection)
    }

    pub fn from_parts(
        pathways: Vec<PathwayDef>,
        selection: &BTreeMap<u8, BTreeMap<String, f64>>,
    ) -> Result<PathwayLibrary, PathwayError> {
        let mut by_esi: [Vec<(u16, f64)>; 5] = Default::default();
        for (&esi, weights) in selection {
            let path = format!("manifest: selection.{esi}");
            if !(1..=5).contains(&esi) {
                return Err(invalid(path, "level outside 1-5"));
            }
            for (id, &w) in weights {
                let idx = pathways
                    .iter()
                    .position(|p| &p.id == id)
                    .ok_or_else(|| invalid(&path, format!("unknown pathway {id}")))?;
                if !pathways[idx].eligible_esi.contains(&esi) {
                    return Err(invalid(
                        &path,
                        format!("pathway {id} is not eligible for level {esi}"),
                    ));
                }
                if !(w > 0.0) {
                    return Err(invalid(&path, format!("weight for {id} must be positive")));
                }
                by_esi[esi as usize - 1].push((idx as u16, w));
            }
            let total: f64 = by_esi[esi as usize - 1].iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid(path, format!("selection weights sum to {total}")));
            }
        }
        for (i, row) in by_esi.iter().enumerate() {
            if row.is_empty() {
                return Err(invalid(
                    "manifest: selection",
                    format!("no pathway for level {}", i + 1),
                ));
            }
        }
        Ok(PathwayLibrary {
            pathways,
            conditions: ConditionTable { by_esi },
        })
    }

    pub fn get(&self, condition: u16) -> &PathwayDef {
        &self.pathways[condition as usize]
    }

    pub fn index_of(&self, id: &str) -> Option<u16> {
        self.pathways
            .iter()
            .position(|p| p.id == id)
            .map(|i| i as u16)
    }

    /// Every room kind, specialization and equipment name any step uses.
    pub fn requirements(&self) -> LibraryNeeds {
        let mut needs = LibraryNeeds::default();
        for p in &self.pathways {
            for s in p.all_steps() {
                needs.rooms.extend(s.room_candidates());
                needs.rooms.extend(s.location);
                for st in &s.staff {
                    needs.roles.insert(st.role);
                    if let Some(sp) = &st.specialization {
                        needs.specializations.insert(sp.clone());
                    }
                }
                needs.equipment.extend(s.equipment.iter().cloned());
            }
        }
        needs
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LibraryNeeds {
    pub rooms: std::collections::BTreeSet<ResourceKind>,
    pub roles: std::collections::BTreeSet<Role>,
    pub specializations: std::collections::BTreeSet<String>,
    pub equipment: std::collections::BTreeSet<String>,
}

/// Admission probability by true acuity at the final step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissionProbabilities(pub [f64; 5]);

impl Default for AdmissionProbabilities {
    fn default() -> Self {
        AdmissionProbabilities([0.9, 0.6, 0.3, 0.05, 0.01])
    }
}

impl AdmissionProbabilities {
    pub fn for_esi(&self, esi: u8) -> f64 {
        self.0[(esi.clamp(1, 5) - 1) as usize]
    }
}

/// A step queued in a patient's journey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub def: StepDef,
    /// Set on steps the split-flow transformation created.
    #[serde(default)]
    pub inserted: bool,
}

impl From<StepDef> for PlannedStep {
    fn from(def: StepDef) -> Self {
        PlannedStep {
            def,
            inserted: false,
        }
    }
}

/// Picks a branch subsequence for a uniform draw `u`.
pub fn choose_branch(branches: &[BranchDef], u: f64) -> Option<&[StepDef]> {
    if branches.is_empty() {
        return None;
    }
    let weights: Vec<f64> = branches.iter().map(|b| b.probability).collect();
    let idx = crate::population::categorical(&weights, u);
    Some(&branches[idx].steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
id: minimal
name: Minimal
eligible_esi: [3]
initial_severity: 3
steps:
  - { id: triage, kind: triage, base_duration: 5, room: triage_room, staff: [{ role: nurse }] }
  - { id: exam, kind: provider_exam, base_duration: 10, room: exam_room, staff: [{ role: doctor }] }
  - { id: dispo, kind: disposition, base_duration: 5, staff: [{ role: doctor }] }
"#;

    fn manifest_for(id: &str) -> String {
        let mut s = format!("pathways: [{id}.yaml]\nselection:\n");
        for esi in 1..=5 {
            s.push_str(&format!("  {esi}: {{ {id}: 1.0 }}\n"));
        }
        s
    }

    #[test]
    fn minimal_pathway_loads() {
        let text = MINIMAL.replace("[3]", "[1, 2, 3, 4, 5]");
        let lib = PathwayLibrary::load(&manifest_for("minimal"), &[("minimal.yaml".into(), text)])
            .unwrap();
        assert_eq!(lib.pathways[0].steps.len(), 3);
    }

    #[test]
    fn bad_branch_sum_is_reported_with_path() {
        let text = MINIMAL.replace(
            "staff: [{ role: doctor }] }\n  - { id: dispo",
            "staff: [{ role: doctor }], branch: [{ probability: 0.6 }, { probability: 0.5 }] }\n  - { id: dispo",
        );
        let def: PathwayDef = serde_yaml::from_str(&text).unwrap();
        let err = def.validate("minimal.yaml").unwrap_err();
        assert_eq!(
            err,
            invalid(
                "minimal.yaml: pathway minimal.steps[1].branch",
                "branch probabilities sum to 1.1"
            )
        );
    }

    #[test]
    fn unknown_room_kind_is_rejected() {
        let text = MINIMAL.replace("room: exam_room", "room: mri");
        let manifest = manifest_for("minimal");
        let err = PathwayLibrary::load(&manifest, &[("minimal.yaml".into(), text)]).unwrap_err();
        let PathwayError::Invalid { path, reason } = err;
        assert_eq!(path, "minimal.yaml");
        assert!(reason.contains("mri"), "{reason}");
    }

    #[test]
    fn missing_eligible_levels_rejected() {
        let text = MINIMAL.replace("eligible_esi: [3]", "eligible_esi: []");
        let def: PathwayDef = serde_yaml::from_str(&text).unwrap();
        assert!(def
            .validate("m.yaml")
            .unwrap_err()
            .to_string()
            .contains("eligible_esi"));
    }

    #[test]
    fn selection_must_cover_every_level() {
        let err = PathwayLibrary::load(
            "pathways: [minimal.yaml]\nselection:\n  3: { minimal: 1.0 }\n",
            &[("minimal.yaml".into(), MINIMAL.to_string())],
        )
        .unwrap_err();
        assert!(err.to_string().contains("no pathway for level 1"));
    }

    #[test]
    fn branch_choice_follows_cumulative_weights() {
        let branches = vec![
            BranchDef {
                probability: 0.7,
                steps: vec![],
            },
            BranchDef {
                probability: 0.3,
                steps: vec![StepDef::new("obs", StepKind::Observation, 60)],
            },
        ];
        assert!(choose_branch(&branches, 0.69).unwrap().is_empty());
        assert_eq!(choose_branch(&branches, 0.71).unwrap().len(), 1);
    }
}
