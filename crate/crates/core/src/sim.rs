//! The simulation: patients, staff and rooms driven through the kernel's
//! step hooks.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::clinical_outcomes::{check_lwbs, step_deterioration, HazardClock, MortalityContext};
use crate::config::Resolved;
use crate::des_kernel::{
    Admission, EntityId, EventHandle, EventKind, EventRecord, Grant, GrantId, Kernel, Payload,
    PoolId, Request, RequestId, Requirement, ResourceKind, ResourceManager, SimTime, StepHooks,
};
use crate::interventions::{
    self, Action, Command, InterventionConfig, InterventionCounters, InterventionKind,
    RatioDecision, SplitFlowRoute,
};
use crate::metrics::{RunSummary, Sample, TimeSeries};
use crate::pathways::{choose_branch, PlannedStep, StaffReq, StepDef, StepKind};
use crate::population::{triage, ArrivalGenerator, Disposition, Patient};
use crate::rng::{self, PatientStreams};
use crate::spatial::{effective_speed, Occupancy, RoomKind};
use crate::staff::{self, DutyPlan, Role, Shift, StaffMember, StaffState};

/// Subject of records that concern the whole department.
pub const SYSTEM: EntityId = u64::MAX;
/// Staff entity ids start here so they never collide with patients.
pub const STAFF_BASE: EntityId = 1_000_000_000;
/// Placeholder for a step that has no candidate pools.
const UNSERVED: RequestId = RequestId(u64::MAX);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimEvent {
    TravelDone { patient: u64, token: u64 },
    StepDone { patient: u64, token: u64 },
    ResultsReady { patient: u64, token: u64 },
    Command(Command),
}

/// What a pool belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PoolOwner {
    Room(usize),
    Equipment(String),
    Staff(usize),
}

/// What one requirement of a step request stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Need {
    Room(Vec<ResourceKind>),
    Equipment(String),
    Staff(StaffReq),
}

impl Need {
    fn kind(&self) -> ResourceKind {
        match self {
            Need::Room(kinds) => kinds[0],
            Need::Equipment(_) => ResourceKind::Equipment,
            Need::Staff(s) => s.role.resource_kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Phase {
    Queued(RequestId),
    Travel,
    Treat,
    Results,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Route {
    Main,
    FastTrack,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Journey {
    steps: Vec<PlannedStep>,
    cursor: usize,
    phase: Phase,
    token: u64,
    route: Route,
    needs: Vec<Need>,
    grant: Option<GrantId>,
    /// Fast-track chair kept for the rest of the fast-track stay, with the
    /// grant that holds it.
    chair: Option<(GrantId, PoolId)>,
    attending: Vec<usize>,
    streams: PatientStreams,
    mortality: HazardClock,
}

impl Journey {
    fn current(&self) -> &StepDef {
        &self.steps[self.cursor].def
    }
}

/// Serializable run state outside the kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldState {
    arrivals: ArrivalGenerator,
    pub patients: Vec<Patient>,
    journeys: BTreeMap<u64, Journey>,
    pub staff: Vec<StaffMember>,
    pub occupancy: Occupancy,
    pub interventions: InterventionConfig,
    pub counters: InterventionCounters,
    pub treatment_errors: u64,
    owners: Vec<PoolOwner>,
    pool_kinds: Vec<ResourceKind>,
    room_pools: Vec<Option<PoolId>>,
    equipment: BTreeMap<String, PoolId>,
    provisioned: BTreeSet<InterventionKind>,
    carved: BTreeSet<PoolId>,
    disposed: u64,
    now: SimTime,
    // Per-step scratch for the nurse-ratio admission check.
    step_admitted: u32,
    step_activations: Vec<usize>,
    step_blocks: Vec<EntityId>,
}

/// Hooks side of the simulation: resolved inputs plus live state.
pub struct World {
    pub ctx: Arc<Resolved>,
    pub state: WorldState,
    /// One sample per executed step; not part of checkpoints.
    pub series: TimeSeries,
    pub record_series: bool,
}

pub struct Simulation {
    pub kernel: Kernel<SimEvent>,
    pub world: World,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("command at {at} is before the current time {now}")]
    CommandInPast { at: SimTime, now: SimTime },
}

impl Simulation {
    pub fn new(ctx: Arc<Resolved>) -> Simulation {
        let mut kernel = Kernel::new();
        let state = WorldState::build(&ctx, &mut kernel.resources);
        Simulation {
            kernel,
            world: World {
                ctx,
                state,
                series: TimeSeries::default(),
                record_series: true,
            },
        }
    }

    /// Rebuilds a simulation from saved parts.
    pub fn from_parts(
        ctx: Arc<Resolved>,
        kernel: Kernel<SimEvent>,
        state: WorldState,
    ) -> Simulation {
        Simulation {
            kernel,
            world: World {
                ctx,
                state,
                series: TimeSeries::default(),
                record_series: true,
            },
        }
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn horizon(&self) -> SimTime {
        self.world.ctx.config.horizon()
    }

    pub fn step(&mut self) {
        self.kernel.step(&mut self.world);
    }

    pub fn run_until(&mut self, t: SimTime) -> &[EventRecord] {
        self.kernel.run_until(t, &mut self.world)
    }

    /// Runs to the configured horizon.
    pub fn run(&mut self) -> &[EventRecord] {
        let h = self.horizon();
        self.run_until(h)
    }

    pub fn schedule_command(&mut self, cmd: Command) -> Result<(), SimError> {
        let at = cmd.t;
        self.kernel
            .schedule(at, SimEvent::Command(cmd))
            .map(|_| ())
            .map_err(|_| SimError::CommandInPast {
                at,
                now: self.kernel.now(),
            })
    }

    pub fn ledger(&self) -> &[EventRecord] {
        self.kernel.ledger.records()
    }

    pub fn summary(&self) -> RunSummary {
        let s = &self.world.state;
        RunSummary::from_patients(&s.patients, s.counters, s.treatment_errors)
    }

    pub fn patients(&self) -> &[Patient] {
        &self.world.state.patients
    }

    pub fn resources(&self) -> &ResourceManager {
        &self.kernel.resources
    }

    pub fn pool_owner(&self, pool: PoolId) -> &PoolOwner {
        &self.world.state.owners[pool.0 as usize]
    }

    /// Patients per on-duty main nurse right now.
    pub fn patients_per_nurse(&self) -> f64 {
        let s = &self.world.state;
        s.under_care() as f64 / s.nurses_on_duty().max(1) as f64
    }
}

impl WorldState {
    fn build(ctx: &Resolved, pools: &mut ResourceManager) -> WorldState {
        let c = &ctx.config;
        let plan = &ctx.plan;
        let mut owners = Vec::new();
        let mut room_pools = vec![None; plan.rooms.len()];
        let mut opened: BTreeMap<ResourceKind, u32> = BTreeMap::new();
        for (i, room) in plan.rooms.iter().enumerate() {
            let Some(kind) = room.kind.resource_kind() else {
                continue;
            };
            let n = opened.entry(kind).or_default();
            let open = *n < c.open_rooms(kind);
            if open {
                *n += 1;
            }
            let capacity = if kind == ResourceKind::FastTrackRoom {
                c.interventions.fast_track.chairs_per_room
            } else {
                1
            };
            room_pools[i] = Some(pools.add_pool(room.id.clone(), kind, capacity, open));
            owners.push(PoolOwner::Room(i));
        }
        let mut equipment = BTreeMap::new();
        for (name, count) in &c.equipment {
            equipment.insert(
                name.clone(),
                pools.add_pool(name.clone(), ResourceKind::Equipment, *count, true),
            );
            owners.push(PoolOwner::Equipment(name.clone()));
        }
        let mut state = WorldState {
            arrivals: ArrivalGenerator::new(
                c.seeds.patient,
                c.arrivals.clone(),
                c.esi.clone(),
                ctx.library.conditions.clone(),
            ),
            patients: Vec::new(),
            journeys: BTreeMap::new(),
            staff: Vec::new(),
            occupancy: Occupancy::new(plan),
            interventions: c.interventions.clone(),
            counters: InterventionCounters::default(),
            treatment_errors: 0,
            owners,
            pool_kinds: pools.pools().iter().map(|p| p.kind).collect(),
            room_pools,
            equipment,
            provisioned: BTreeSet::new(),
            carved: BTreeSet::new(),
            disposed: 0,
            now: SimTime::ZERO,
            step_admitted: 0,
            step_activations: Vec::new(),
            step_blocks: Vec::new(),
        };
        for role in Role::ALL {
            if let Some(staffing) = c.staffing_for(role) {
                let members = staff::roster(role, staffing, 0, false).expect("validated roster");
                for m in members {
                    state.add_member(pools, m);
                }
            }
        }
        let enabled: Vec<InterventionKind> = state.interventions.enabled.iter().copied().collect();
        for kind in enabled {
            state.provision(ctx, pools, kind, None);
        }
        state
    }

    fn add_member(&mut self, pools: &mut ResourceManager, mut m: StaffMember) -> usize {
        let idx = self.staff.len();
        m.id = STAFF_BASE + idx as u64;
        if m.name.is_empty() || self.staff.iter().any(|s| s.name == m.name) {
            m.name = format!("{}-{}", m.role, idx);
        }
        m.pool = pools.add_pool(m.name.clone(), m.role.resource_kind(), 1, false);
        self.owners.push(PoolOwner::Staff(idx));
        self.pool_kinds.push(m.role.resource_kind());
        self.staff.push(m);
        idx
    }

    /// Creates the rooms and staff an intervention needs. `at` is set for
    /// runtime enablement, where new staff join immediately.
    fn provision(
        &mut self,
        ctx: &Resolved,
        pools: &mut ResourceManager,
        kind: InterventionKind,
        at: Option<SimTime>,
    ) {
        if !self.provisioned.insert(kind) {
            return;
        }
        let cfg = self.interventions.clone();
        match kind {
            InterventionKind::FastTrack => {
                let ft = &cfg.fast_track;
                let ft_pools: Vec<PoolId> = self.pools_of_kind(ResourceKind::FastTrackRoom);
                for p in ft_pools.iter().take(ft.ft_rooms as usize) {
                    pools.set_open(*p, true);
                }
                let open_exam: Vec<PoolId> = self
                    .pools_of_kind(ResourceKind::ExamRoom)
                    .into_iter()
                    .filter(|p| pools.pool(*p).open)
                    .collect();
                for p in open_exam.iter().rev().take(ft.carve_exam_rooms as usize) {
                    pools.set_open(*p, false);
                    self.carved.insert(*p);
                }
                for i in 0..ft.np_count {
                    let plan = match at {
                        Some(t) => DutyPlan::Open { since: t },
                        None => DutyPlan::Rostered(ft.np_shift.for_member(i as usize)),
                    };
                    let m = StaffMember::new(0, format!("np_pa-ft-{i}"), Role::NpPa, plan);
                    self.add_member(pools, m);
                }
            }
            InterventionKind::SplitFlow => {
                let sf = &cfg.split_flow;
                for i in 0..sf.triage_doctor_count {
                    let plan = match at {
                        Some(t) => DutyPlan::Open { since: t },
                        None => DutyPlan::Rostered(sf.triage_doctor_shift.for_member(i as usize)),
                    };
                    let mut m = StaffMember::new(0, format!("doctor-pit-{i}"), Role::Doctor, plan);
                    m.triage_doctor = true;
                    self.add_member(pools, m);
                }
            }
            InterventionKind::NurseRatio => {
                let nr = &cfg.nurse_ratio;
                for i in 0..nr.reserve_nurses {
                    let mut m = StaffMember::new(
                        0,
                        format!("nurse-reserve-{i}"),
                        Role::Nurse,
                        DutyPlan::OnCall(Shift {
                            start: 0,
                            duration: nr.reserve_shift_minutes,
                        }),
                    );
                    m.state = StaffState::Reserve;
                    self.add_member(pools, m);
                }
            }
        }
        let _ = ctx;
    }

    fn go_off_duty(&mut self, pools: &mut ResourceManager, i: usize) {
        let m = &mut self.staff[i];
        pools.set_open(m.pool, false);
        m.called_in = false;
        m.state = if matches!(m.plan, DutyPlan::OnCall(_)) {
            StaffState::Reserve
        } else {
            StaffState::OffDuty
        };
        let id = m.id;
        self.occupancy.remove(id);
    }

    fn pools_of_kind(&self, kind: ResourceKind) -> Vec<PoolId> {
        self.room_pools
            .iter()
            .flatten()
            .copied()
            .filter(|p| self.pool_kinds[p.0 as usize] == kind)
            .collect()
    }

    fn staff_candidates(&self, req: &StaffReq) -> Vec<PoolId> {
        self.staff
            .iter()
            .filter(|m| m.role == req.role && m.plan != DutyPlan::Removed)
            .filter(|m| m.role != Role::Doctor || m.triage_doctor == req.triage_doctor)
            .filter(|m| {
                req.specialization
                    .as_deref()
                    .is_none_or(|s| m.has_specialization(s))
            })
            .map(|m| m.pool)
            .collect()
    }

    fn nurses_on_duty(&self) -> u32 {
        self.staff
            .iter()
            .filter(|m| {
                m.role == Role::Nurse
                    && matches!(m.state, StaffState::Active | StaffState::Resting { .. })
            })
            .count() as u32
    }

    fn reserve_available(&self) -> Option<usize> {
        self.staff.iter().enumerate().position(|(i, m)| {
            m.role == Role::Nurse
                && m.state == StaffState::Reserve
                && !m.called_in
                && !self.step_activations.contains(&i)
        })
    }

    /// Main-ED patients in a step after triage, travel included.
    fn under_care(&self) -> u32 {
        self.journeys
            .values()
            .filter(|j| j.route == Route::Main)
            .filter(|j| {
                matches!(j.phase, Phase::Travel | Phase::Treat)
                    && !matches!(j.current().kind, StepKind::Triage | StepKind::PitAssessment)
            })
            .count() as u32
    }

    fn is_main_bed(&self, pool: PoolId, pools: &ResourceManager) -> bool {
        matches!(
            pools.pool(pool).kind,
            ResourceKind::ExamRoom | ResourceKind::ShockRoom
        )
    }

    fn waiting_room(&self, ctx: &Resolved) -> usize {
        ctx.plan
            .rooms_of(RoomKind::WaitingArea)
            .next()
            .map(|(i, _)| i)
            .expect("validated plan")
    }

    fn staff_room(&self, ctx: &Resolved) -> usize {
        ctx.plan
            .rooms_of(RoomKind::StaffArea)
            .next()
            .map(|(i, _)| i)
            .expect("validated plan")
    }

    /// Where a step with the given picks takes place.
    fn destination(&self, ctx: &Resolved, journey: &Journey, picks: &[PoolId]) -> usize {
        for p in picks {
            if let PoolOwner::Room(r) = self.owners[p.0 as usize] {
                return r;
            }
        }
        if let Some(loc) = journey.current().location {
            if let Some(kind) = RoomKind::from_resource_kind(loc) {
                if let Some((_, chair)) = journey.chair {
                    if let PoolOwner::Room(r) = self.owners[chair.0 as usize] {
                        if ctx.plan.rooms[r].kind == kind {
                            return r;
                        }
                    }
                }
                let open_first = ctx.plan.rooms_of(kind).map(|(i, _)| i).find(|i| {
                    self.occupancy
                        .has_headroom(&ctx.plan, *i, 1 + picks.len() as u32)
                });
                if let Some(r) = open_first {
                    return r;
                }
            }
        }
        if let Some((_, chair)) = journey.chair {
            if let PoolOwner::Room(r) = self.owners[chair.0 as usize] {
                return r;
            }
        }
        self.waiting_room(ctx)
    }

    /// Puts a patient back in their chair, or the waiting area, between steps.
    fn park_patient(&mut self, ctx: &Resolved, patient: u64) {
        let home =
            self.journeys[&patient]
                .chair
                .and_then(|(_, p)| match self.owners[p.0 as usize] {
                    PoolOwner::Room(r) => Some(r),
                    _ => None,
                });
        let waiting = self.waiting_room(ctx);
        let target = home.unwrap_or(waiting);
        if self.occupancy.place(&ctx.plan, patient, target).is_err()
            && self.occupancy.place(&ctx.plan, patient, waiting).is_err()
        {
            self.occupancy.place_at_entrance(&ctx.plan, patient);
        }
    }

    fn park_staff(&mut self, ctx: &Resolved, idx: usize) {
        let id = self.staff[idx].id;
        let room = self.staff_room(ctx);
        if self.occupancy.place(&ctx.plan, id, room).is_err() {
            self.occupancy.place_at_entrance(&ctx.plan, id);
        }
    }
}

impl World {
    fn ctx(&self) -> Arc<Resolved> {
        Arc::clone(&self.ctx)
    }

    fn start_patient(&mut self, k: &mut Kernel<SimEvent>, spec: crate::population::ArrivalSpec) {
        let ctx = self.ctx();
        let s = &mut self.state;
        let patient = Patient::from_arrival(&spec);
        let pathway = ctx.library.get(spec.condition);
        let mut streams = PatientStreams::new(ctx.config.seeds.dynamics, spec.id);
        let mortality = HazardClock::new(&mut streams.mortality);
        let journey = Journey {
            steps: pathway
                .steps
                .iter()
                .cloned()
                .map(PlannedStep::from)
                .collect(),
            cursor: 0,
            phase: Phase::Travel,
            token: 0,
            route: Route::Main,
            needs: Vec::new(),
            grant: None,
            chair: None,
            attending: Vec::new(),
            streams,
            mortality,
        };
        k.log(
            EventKind::Arrival,
            spec.id,
            Payload::new()
                .with("true_esi", spec.true_esi as u64)
                .with("pathway", pathway.id.clone())
                .with("patience_quantile", spec.patience_quantile),
        );
        debug_assert_eq!(spec.id as usize, s.patients.len());
        s.patients.push(patient);
        s.journeys.insert(spec.id, journey);
        s.park_patient(&ctx, spec.id);
        self.request_step(k, spec.id);
    }

    /// Issues the compound request for the patient's current step.
    fn request_step(&mut self, k: &mut Kernel<SimEvent>, patient: u64) {
        let s = &mut self.state;
        let j = s.journeys.get_mut(&patient).expect("active patient");
        let step = j.steps[j.cursor].def.clone();
        let mut needs = Vec::new();
        let mut reqs = Vec::new();
        let rooms = step.room_candidates();
        let seated = j
            .chair
            .is_some_and(|(_, b)| rooms.contains(&k.resources.pool(b).kind));
        if !rooms.is_empty() && !seated {
            let mut candidates = Vec::new();
            for kind in &rooms {
                candidates.extend(
                    s.room_pools
                        .iter()
                        .flatten()
                        .copied()
                        .filter(|p| k.resources.pool(*p).kind == *kind),
                );
            }
            needs.push(Need::Room(rooms));
            reqs.push(Requirement::any(candidates));
        }
        for name in &step.equipment {
            needs.push(Need::Equipment(name.clone()));
            reqs.push(Requirement::one(s.equipment[name]));
        }
        for st in &step.staff {
            let candidates = s.staff_candidates(st);
            for _ in 0..st.count {
                needs.push(Need::Staff(st.clone()));
                reqs.push(Requirement::any(candidates.clone()));
            }
        }
        let priority = if step.kind == StepKind::Triage {
            1
        } else {
            s.patients[patient as usize].priority()
        };
        let j = s.journeys.get_mut(&patient).expect("active patient");
        j.needs = needs;
        j.token += 1;
        if reqs.is_empty() {
            j.phase = Phase::Travel;
            j.grant = None;
            j.attending.clear();
            let token = j.token;
            k.schedule(k.now() + 1, SimEvent::TravelDone { patient, token })
                .expect("future");
            return;
        }
        if reqs.iter().any(|r| r.candidates.is_empty()) {
            // No pool can serve this yet; wait until staff are added.
            j.phase = Phase::Queued(UNSERVED);
            return;
        }
        let id = k
            .request(Request::compound(patient, priority, reqs))
            .expect("valid request");
        j.phase = Phase::Queued(id);
    }

    fn handle_grant(&mut self, k: &mut Kernel<SimEvent>, grant: &Grant) {
        let ctx = self.ctx();
        let s = &mut self.state;
        let patient = grant.requester;
        let now = k.now();
        let Some(j) = s.journeys.get(&patient) else {
            return;
        };
        let dest = s.destination(&ctx, j, &grant.pools);
        let hauling = !j.current().equipment.is_empty();
        let needs = j.needs.clone();
        let mut attending = Vec::new();
        let mut bed = None;
        for (need, pool) in needs.iter().zip(&grant.pools) {
            match need {
                Need::Staff(_) => {
                    if let PoolOwner::Staff(i) = s.owners[pool.0 as usize] {
                        attending.push(i);
                    }
                }
                Need::Room(_) if k.resources.pool(*pool).kind.is_bed() => bed = Some(*pool),
                _ => {}
            }
        }
        let mv = &ctx.config.movement;
        let mut travel = s
            .occupancy
            .assign_destination(&ctx.plan, patient, dest, mv.patient_speed)
            .unwrap_or_else(|_| {
                s.occupancy.place_at_entrance(&ctx.plan, patient);
                1
            });
        for &i in &attending {
            let m = &s.staff[i];
            let params = &ctx
                .config
                .staffing_for(m.role)
                .map(|r| r.fatigue.clone())
                .unwrap_or_default();
            let speed = effective_speed(
                mv.staff_speed,
                hauling,
                mv,
                staff::slowdown_factor(m.fatigue, params.s_max),
            );
            let t = s
                .occupancy
                .assign_destination(&ctx.plan, m.id, dest, speed)
                .unwrap_or(1);
            travel = travel.max(t);
        }
        for &i in &attending {
            let m = &mut s.staff[i];
            m.busy = true;
            if matches!(m.role, Role::Doctor | Role::NpPa) {
                m.assigned_patients.insert(patient);
            }
        }
        if bed.is_some() {
            s.patients[patient as usize]
                .milestones
                .room_entry
                .get_or_insert(now);
        }
        let chair = bed.is_some_and(|b| k.resources.pool(b).kind == ResourceKind::FastTrackRoom);
        if chair && !s.patients[patient as usize].fast_tracked {
            s.counters.fast_track_count += 1;
            s.patients[patient as usize].fast_tracked = true;
        }
        let j = s.journeys.get_mut(&patient).expect("active");
        if let Some(b) = bed.filter(|_| chair) {
            j.chair = Some((grant.id, b));
        }
        j.grant = Some(grant.id);
        j.attending = attending;
        j.phase = Phase::Travel;
        let token = j.token;
        k.schedule(now + travel, SimEvent::TravelDone { patient, token })
            .expect("future");
    }

    fn travel_done(&mut self, k: &mut Kernel<SimEvent>, patient: u64) {
        let ctx = self.ctx();
        let s = &mut self.state;
        let now = k.now();
        let j = s.journeys.get(&patient).expect("active");
        let step = j.current().clone();
        let factors: Vec<f64> = j
            .attending
            .iter()
            .map(|&i| {
                let m = &s.staff[i];
                let params = ctx
                    .config
                    .staffing_for(m.role)
                    .map(|r| r.fatigue.clone())
                    .unwrap_or_default();
                m.duration_factor(now, &params)
            })
            .collect();
        let duration = staff::effective_duration(step.base_duration, factors);
        let p = &mut s.patients[patient as usize];
        p.milestones.steps.push(crate::population::StepMilestone {
            step: step.id.clone(),
            start: now,
            done: None,
        });
        if step.kind == StepKind::Triage {
            p.milestones.triage_start = Some(now);
        }
        if step.has_provider() && p.milestones.first_provider.is_none() {
            p.milestones.first_provider = Some(now);
        }
        if step.kind == StepKind::PitAssessment {
            s.counters.physician_triage_count += 1;
            p.physician_triaged = true;
        }
        let kind = if step.kind == StepKind::Triage {
            EventKind::TriageStart
        } else {
            EventKind::TreatmentStart
        };
        k.log(
            kind,
            patient,
            Payload::new()
                .with("step", step.id.clone())
                .with("kind", step.kind.as_str())
                .with("duration", duration),
        );
        let j = s.journeys.get_mut(&patient).expect("active");
        j.phase = Phase::Treat;
        let token = j.token;
        k.schedule(now + duration, SimEvent::StepDone { patient, token })
            .expect("future");
    }

    fn step_done(&mut self, k: &mut Kernel<SimEvent>, patient: u64) {
        let ctx = self.ctx();
        let now = k.now();
        let s = &mut self.state;
        let j = s.journeys.get_mut(&patient).expect("active");
        let step = j.current().clone();
        let attending = std::mem::take(&mut j.attending);

        // Error rolls, one per attending member.
        if step.kind != StepKind::Triage {
            for &i in &attending {
                let m = &s.staff[i];
                let params = ctx
                    .config
                    .staffing_for(m.role)
                    .map(|r| r.fatigue.clone())
                    .unwrap_or_default();
                let p_err = staff::error_probability(m.fatigue, &params);
                let j = s.journeys.get_mut(&patient).expect("active");
                if rng::uniform(&mut j.streams.error) < p_err {
                    s.treatment_errors += 1;
                    let p = &mut s.patients[patient as usize];
                    let worsened = p.worsen();
                    p.severity_worsened_by_error = true;
                    k.log(
                        EventKind::TreatmentError,
                        patient,
                        Payload::new()
                            .with("step", step.id.clone())
                            .with("staff", m.id)
                            .with("true_esi", p.true_esi as u64)
                            .with("worsened", worsened),
                    );
                }
            }
        }

        // Release everything but a fast-track chair.
        let j = s.journeys.get_mut(&patient).expect("active");
        if let Some(g) = j.grant.take() {
            let chair = j.chair.filter(|(cg, _)| *cg == g).map(|(_, p)| p);
            let held: Vec<PoolId> = k
                .resources
                .grant(g)
                .map(|gr| gr.pools.clone())
                .unwrap_or_default();
            let release: Vec<PoolId> = match chair {
                Some(b) => {
                    let mut r = held.clone();
                    if let Some(at) = r.iter().position(|p| *p == b) {
                        r.remove(at);
                    }
                    r
                }
                None => held,
            };
            if !release.is_empty() {
                k.release_pools(g, &release).expect("held grant");
            }
        }
        for &i in &attending {
            s.staff[i].busy = false;
            s.park_staff(&ctx, i);
        }
        let p = &mut s.patients[patient as usize];
        if let Some(m) = p.milestones.steps.last_mut() {
            m.done = Some(now);
        }
        let done_kind = if step.kind == StepKind::Triage {
            EventKind::TriageDone
        } else {
            EventKind::TreatmentDone
        };
        let mut payload = Payload::new()
            .with("step", step.id.clone())
            .with("kind", step.kind.as_str());

        if step.kind == StepKind::Triage {
            let j = s.journeys.get_mut(&patient).expect("active");
            let assigned = triage(p.true_esi, &ctx.config.triage_errors, &mut j.streams.triage);
            p.assigned_triage = Some(assigned);
            p.milestones.triage_done = Some(now);
            payload = payload
                .with("assigned", assigned as u64)
                .with("true_esi", p.true_esi as u64);
            let route = self.route_after_triage(patient, assigned, now);
            payload = payload.with("route", route);
        }
        k.log(done_kind, patient, payload);

        let s = &mut self.state;
        // Branch: splice the chosen subsequence after the current step.
        if !step.branch.is_empty() {
            let j = s.journeys.get_mut(&patient).expect("active");
            let u = rng::uniform(&mut j.streams.branch);
            let chosen: Vec<PlannedStep> = choose_branch(&step.branch, u)
                .unwrap_or(&[])
                .iter()
                .cloned()
                .map(|mut d| {
                    if j.route == Route::FastTrack {
                        interventions::fast_track_step(&mut d);
                    }
                    PlannedStep::from(d)
                })
                .collect();
            let at = j.cursor + 1;
            j.steps.splice(at..at, chosen);
        }
        if step.turnaround > 0 {
            let j = s.journeys.get_mut(&patient).expect("active");
            j.phase = Phase::Results;
            let token = j.token;
            s.park_patient(&ctx, patient);
            k.schedule(
                now + step.turnaround,
                SimEvent::ResultsReady { patient, token },
            )
            .expect("future");
            return;
        }
        self.advance(k, patient);
    }

    /// Applies fast track or split flow to the steps after triage.
    fn route_after_triage(&mut self, patient: u64, assigned: u8, now: SimTime) -> &'static str {
        let ctx = self.ctx();
        let s = &mut self.state;
        let cfg = &s.interventions;
        let treat_and_release = ctx
            .library
            .get(s.patients[patient as usize].condition)
            .treat_and_release;
        let j = s.journeys.get_mut(&patient).expect("active");
        let rest: Vec<PlannedStep> = j.steps.split_off(j.cursor + 1);
        if interventions::fast_track_eligible(cfg, assigned) {
            j.route = Route::FastTrack;
            j.steps.extend(rest.into_iter().map(|mut st| {
                interventions::fast_track_step(&mut st.def);
                st
            }));
            return "fast_track";
        }
        let route = interventions::split_flow_route(cfg, assigned, treat_and_release);
        let pit_doctor_on = s.staff.iter().any(|m| {
            m.triage_doctor
                && matches!(m.state, StaffState::Active | StaffState::Resting { .. })
                && m.scheduled(now)
        });
        if route == SplitFlowRoute::Bypass || !pit_doctor_on {
            let j = s.journeys.get_mut(&patient).expect("active");
            j.steps.extend(rest);
            return "main";
        }
        let pit = interventions::pit_step(&cfg.split_flow);
        let release = route == SplitFlowRoute::PitAndRelease;
        let j = s.journeys.get_mut(&patient).expect("active");
        j.steps
            .extend(interventions::apply_split_flow(rest, pit, release));
        if release {
            "pit_release"
        } else {
            "pit"
        }
    }

    fn advance(&mut self, k: &mut Kernel<SimEvent>, patient: u64) {
        let ctx = self.ctx();
        let s = &mut self.state;
        let j = s.journeys.get_mut(&patient).expect("active");
        j.cursor += 1;
        if j.cursor >= j.steps.len() {
            let j = s.journeys.get_mut(&patient).expect("active");
            let esi = s.patients[patient as usize].true_esi;
            let admitted =
                rng::uniform(&mut j.streams.disposition) < ctx.config.admission.for_esi(esi);
            let d = if admitted {
                Disposition::Admitted
            } else {
                Disposition::Discharged
            };
            self.finish(k, patient, d);
            return;
        }
        s.park_patient(&ctx, patient);
        self.request_step(k, patient);
    }

    /// Ends a journey: frees held resources and records the disposition.
    fn finish(&mut self, k: &mut Kernel<SimEvent>, patient: u64, d: Disposition) {
        let ctx = self.ctx();
        let now = k.now();
        let s = &mut self.state;
        let Some(mut j) = s.journeys.remove(&patient) else {
            return;
        };
        if let Phase::Queued(id) = j.phase {
            if id != UNSERVED {
                k.cancel(id).expect("pending request");
            }
        }
        if let Some(g) = j.grant.take() {
            if k.resources.grant(g).is_some() {
                k.release(g).expect("held grant");
            }
        }
        if let Some((g, _)) = j.chair {
            if k.resources.grant(g).is_some() {
                k.release(g).expect("held chair");
            }
        }
        for &i in &j.attending {
            s.staff[i].busy = false;
            s.park_staff(&ctx, i);
        }
        for m in &mut s.staff {
            m.assigned_patients.remove(&patient);
        }
        s.occupancy.remove(patient);
        let p = &mut s.patients[patient as usize];
        p.set_disposition(d, now);
        s.disposed += 1;
        let kind = match d {
            Disposition::Deceased => EventKind::Death,
            Disposition::Lwbs => EventKind::Lwbs,
            _ => EventKind::Discharge,
        };
        k.log(
            kind,
            patient,
            Payload::new()
                .with("disposition", d.as_str())
                .with("los", now - p.arrival_time)
                .with("true_esi", p.true_esi as u64),
        );
    }

    fn apply_command(&mut self, k: &mut Kernel<SimEvent>, cmd: Command) {
        let ctx = self.ctx();
        let now = k.now();
        let outcome = self.try_command(k, &ctx, &cmd.action, now);
        let params = serde_json::to_value(&cmd.action)
            .ok()
            .and_then(|v| v.get("params").cloned())
            .unwrap_or(serde_json::Value::Null);
        let mut payload = Payload::new()
            .with("action", cmd.action.name())
            .with("params", params);
        payload = match outcome {
            Ok(detail) => payload.with("accepted", true).with("detail", detail),
            Err(reason) => payload.with("accepted", false).with("reason", reason),
        };
        k.log(EventKind::InterventionApplied, SYSTEM, payload);
    }

    fn try_command(
        &mut self,
        k: &mut Kernel<SimEvent>,
        ctx: &Resolved,
        action: &Action,
        now: SimTime,
    ) -> Result<String, String> {
        let s = &mut self.state;
        match action {
            Action::Enable { intervention } => {
                let mut trial = s.interventions.clone();
                trial.enabled.insert(*intervention);
                trial.validate().map_err(|e| e.to_string())?;
                if *intervention == InterventionKind::FastTrack
                    && !s.provisioned.contains(intervention)
                    && s.pools_of_kind(ResourceKind::FastTrackRoom).is_empty()
                {
                    return Err("floor plan has no fast-track room".into());
                }
                s.interventions.enabled.insert(*intervention);
                s.provision(ctx, &mut k.resources, *intervention, Some(now));
                self.refresh_candidates(k);
                Ok(format!("{intervention} enabled"))
            }
            Action::Disable { intervention } => {
                if !s.interventions.enabled.remove(intervention) {
                    return Err(format!("{intervention} is not enabled"));
                }
                Ok(format!("{intervention} disabled"))
            }
            Action::OpenRoom { kind } => {
                if !kind.is_room() {
                    return Err(format!("{kind} is not a room kind"));
                }
                let pool = s
                    .pools_of_kind(*kind)
                    .into_iter()
                    .find(|p| !k.resources.pool(*p).open)
                    .ok_or_else(|| format!("no closed {kind} room to open"))?;
                k.resources.set_open(pool, true);
                s.carved.remove(&pool);
                Ok(k.resources.pool(pool).name.clone())
            }
            Action::CloseRoom { id } => {
                let pool = s
                    .room_pools
                    .iter()
                    .flatten()
                    .copied()
                    .find(|p| k.resources.pool(*p).name == *id)
                    .ok_or_else(|| format!("unknown room {id}"))?;
                if !k.resources.pool(pool).open {
                    return Err(format!("room {id} is already closed"));
                }
                k.resources.set_open(pool, false);
                let occupied = k.resources.pool(pool).in_use > 0;
                Ok(if occupied {
                    format!("{id} closes when its occupant leaves")
                } else {
                    format!("{id} closed")
                })
            }
            Action::AddStaff {
                role,
                specialization,
            } => {
                let mut m =
                    StaffMember::new(0, String::new(), *role, DutyPlan::Open { since: now });
                if let Some(sp) = specialization {
                    if *role != Role::Doctor {
                        return Err("only doctors carry a specialization".into());
                    }
                    m.specializations.push(sp.clone());
                }
                let idx = s.add_member(&mut k.resources, m);
                self.refresh_candidates(k);
                Ok(self.state.staff[idx].name.clone())
            }
            Action::RemoveStaff { id } => {
                let idx = s
                    .staff
                    .iter()
                    .position(|m| m.name == *id || m.id.to_string() == *id)
                    .ok_or_else(|| format!("unknown staff {id}"))?;
                let m = &mut s.staff[idx];
                if m.plan == DutyPlan::Removed {
                    return Err(format!("staff {id} already removed"));
                }
                m.plan = DutyPlan::Removed;
                Ok(m.name.clone())
            }
        }
    }

    /// Recomputes staff candidate lists of waiting requests after staff
    /// changes, and issues requests for patients that had no candidates.
    fn refresh_candidates(&mut self, k: &mut Kernel<SimEvent>) {
        let ids: Vec<u64> = self.state.journeys.keys().copied().collect();
        for pid in ids {
            let j = &self.state.journeys[&pid];
            let Phase::Queued(rid) = j.phase else {
                continue;
            };
            if rid == UNSERVED {
                self.request_step(k, pid);
                continue;
            }
            for (i, need) in j.needs.clone().iter().enumerate() {
                if let Need::Staff(st) = need {
                    let c = self.state.staff_candidates(st);
                    k.resources
                        .set_candidates(rid, i, c)
                        .expect("pending request");
                }
            }
        }
    }

    fn update_staff(&mut self, k: &mut Kernel<SimEvent>) {
        let ctx = self.ctx();
        let now = k.now();
        let s = &mut self.state;
        let pending_targets: BTreeSet<PoolId> = k
            .resources
            .pending()
            .iter()
            .flat_map(|r| r.targets())
            .collect();
        for i in 0..s.staff.len() {
            let wants = s.staff[i].scheduled(now);
            let m = &s.staff[i];
            let (id, pool, busy, state) = (m.id, m.pool, m.busy, m.state);
            let params = ctx
                .config
                .staffing_for(m.role)
                .map(|r| r.fatigue.clone())
                .unwrap_or_default();
            let log = |k: &mut Kernel<SimEvent>, what: &str| {
                k.log(
                    EventKind::ShiftChange,
                    id,
                    Payload::new().with("state", what),
                );
            };
            match state {
                StaffState::OffDuty | StaffState::Reserve if wants => {
                    s.staff[i].state = StaffState::Active;
                    k.resources.set_open(pool, true);
                    s.park_staff(&ctx, i);
                    log(k, "on_duty");
                }
                StaffState::Active | StaffState::Resting { .. } if !wants => {
                    k.resources.set_open(pool, false);
                    if busy {
                        s.staff[i].state = StaffState::Draining;
                        log(k, "draining");
                    } else {
                        s.go_off_duty(&mut k.resources, i);
                        log_off(k, id);
                    }
                }
                StaffState::Draining if !busy => {
                    if wants {
                        s.staff[i].state = StaffState::Active;
                        k.resources.set_open(pool, true);
                        log(k, "on_duty");
                    } else {
                        s.go_off_duty(&mut k.resources, i);
                        log_off(k, id);
                    }
                }
                StaffState::Resting { until } if now >= until => {
                    s.staff[i].state = StaffState::Active;
                    k.resources.set_open(pool, true);
                    log(k, "rest_end");
                }
                StaffState::Active
                    if !busy
                        && s.staff[i].fatigue >= params.rest_trigger
                        && !pending_targets.contains(&pool) =>
                {
                    s.staff[i].state = StaffState::Resting {
                        until: now + params.rest_duration as u64,
                    };
                    k.resources.set_open(pool, false);
                    log(k, "rest_start");
                }
                _ => {}
            }
            if s.staff[i].state == StaffState::Draining {
                s.staff[i].overtime_minutes += 1;
            }
        }
        for m in &s.staff {
            if matches!(m.role, Role::Doctor | Role::NpPa) {
                k.resources.set_preference(
                    m.pool,
                    (m.assigned_patients.len() as u64, (m.fatigue * 1e6) as u64),
                );
            }
        }
        s.step_admitted = 0;
    }

    fn clinical_step(&mut self, k: &mut Kernel<SimEvent>) {
        let ctx = self.ctx();
        let now = k.now();
        // Reserve nurses called in during queue service.
        let shift = self.state.interventions.nurse_ratio.reserve_shift_minutes;
        for i in std::mem::take(&mut self.state.step_activations) {
            let m = &mut self.state.staff[i];
            m.plan = DutyPlan::OnCall(Shift {
                start: (now.minutes() % 1440) as u32,
                duration: shift,
            });
            m.called_in = true;
            m.state = StaffState::Active;
            let (id, pool) = (m.id, m.pool);
            k.resources.set_open(pool, true);
            self.state.park_staff(&ctx, i);
            k.log(
                EventKind::ShiftChange,
                id,
                Payload::new().with("state", "reserve_called_in"),
            );
        }
        for patient in std::mem::take(&mut self.state.step_blocks) {
            k.log(
                EventKind::AdmissionBlocked,
                patient,
                Payload::new().with("reason", "nurse_ratio"),
            );
        }

        let ratio = self.state.under_care() as f64 / self.state.nurses_on_duty().max(1) as f64;
        let ids: Vec<u64> = self.state.journeys.keys().copied().collect();
        for pid in ids {
            let s = &mut self.state;
            let p = &s.patients[pid as usize];
            let j = s.journeys.get_mut(&pid).expect("active");
            let untreated = p.milestones.first_provider.is_none();
            let waited_hours = (now - p.arrival_time) as f64 / 60.0;
            let mctx = MortalityContext {
                true_esi: p.true_esi,
                hours_waiting_untreated: if untreated { waited_hours } else { 0.0 },
                worsened_by_error: p.severity_worsened_by_error,
                patients_per_nurse: ratio,
            };
            if j.mortality
                .advance(ctx.config.mortality.step_probability(&mctx))
            {
                self.finish(k, pid, Disposition::Deceased);
                continue;
            }
            let waiting = matches!(j.phase, Phase::Queued(_));
            if waiting
                && untreated
                && step_deterioration(
                    p.true_esi,
                    waited_hours,
                    &ctx.config.deterioration,
                    &mut j.streams.deterioration,
                )
            {
                let p = &mut s.patients[pid as usize];
                p.worsen();
                k.log(
                    EventKind::Deterioration,
                    pid,
                    Payload::new().with("true_esi", p.true_esi as u64),
                );
            }
            let p = &s.patients[pid as usize];
            let level = p.assigned_triage.unwrap_or(p.true_esi);
            let patience = ctx.config.patience.minutes(level, p.patience_quantile);
            let unseen = p.milestones.room_entry.is_none() && p.milestones.first_provider.is_none();
            if check_lwbs(now - p.arrival_time, patience, waiting && unseen) {
                self.finish(k, pid, Disposition::Lwbs);
            }
        }
    }

    fn sample_step(&mut self, k: &mut Kernel<SimEvent>) {
        let ctx = self.ctx();
        let now = k.now();
        let s = &mut self.state;
        let (mut waiting, mut in_treatment) = (0u32, 0u32);
        for (pid, j) in &s.journeys {
            let p = &mut s.patients[*pid as usize];
            match j.phase {
                Phase::Queued(rid) => {
                    waiting += 1;
                    let blocked = k
                        .resources
                        .pending_request(rid)
                        .and_then(|r| r.blocked_on)
                        .unwrap_or(0);
                    let kind = j
                        .needs
                        .get(blocked)
                        .map(Need::kind)
                        .unwrap_or(ResourceKind::NurseTime);
                    *p.cumulative_wait.entry(kind).or_default() += 1;
                }
                Phase::Travel => p.travel_minutes += 1,
                Phase::Treat | Phase::Results => {
                    in_treatment += 1;
                    p.treatment_minutes += 1;
                }
            }
        }
        let mut on_duty = [0u32; 4];
        let (mut fsum, mut fn_) = (0.0, 0u32);
        for m in &mut s.staff {
            let params = ctx
                .config
                .staffing_for(m.role)
                .map(|r| r.fatigue.clone())
                .unwrap_or_default();
            let working = m.busy;
            if m.on_duty() {
                on_duty[Role::ALL.iter().position(|r| *r == m.role).expect("role")] += 1;
                fsum += m.fatigue;
                fn_ += 1;
            }
            m.fatigue = staff::step_fatigue(m.fatigue, working, &params);
            if working {
                m.worked_minutes += 1;
            }
        }
        if self.record_series {
            let pools = k.resources.pools();
            let sample = Sample {
                t: now.0,
                queue: k.resources.queue_lengths(),
                in_use: pools.iter().map(|p| p.in_use).collect(),
                capacity: pools
                    .iter()
                    .map(|p| if p.open { p.capacity } else { 0 })
                    .collect(),
                on_duty,
                mean_fatigue: if fn_ > 0 { fsum / fn_ as f64 } else { 0.0 },
                waiting,
                in_treatment,
                disposed: s.disposed,
            };
            self.series.record(pools, sample);
        }
    }
}

fn log_off(k: &mut Kernel<SimEvent>, id: EntityId) {
    k.log(
        EventKind::ShiftChange,
        id,
        Payload::new().with("state", "off_duty"),
    );
}

impl StepHooks<SimEvent> for World {
    fn arrivals(&mut self, k: &mut Kernel<SimEvent>) {
        self.state.now = k.now();
        let horizon = self.ctx.config.horizon();
        if k.now() >= horizon {
            return;
        }
        for spec in self.state.arrivals.arrivals_at(k.now()) {
            self.start_patient(k, spec);
        }
    }

    fn on_event(&mut self, k: &mut Kernel<SimEvent>, _handle: EventHandle, event: SimEvent) {
        let live = |s: &WorldState, patient: u64, token: u64| {
            s.journeys.get(&patient).is_some_and(|j| j.token == token)
        };
        match event {
            SimEvent::TravelDone { patient, token } if live(&self.state, patient, token) => {
                self.travel_done(k, patient)
            }
            SimEvent::StepDone { patient, token } if live(&self.state, patient, token) => {
                self.step_done(k, patient)
            }
            SimEvent::ResultsReady { patient, token } if live(&self.state, patient, token) => {
                self.advance(k, patient)
            }
            SimEvent::Command(cmd) => self.apply_command(k, cmd),
            _ => {}
        }
    }

    fn agents(&mut self, k: &mut Kernel<SimEvent>) {
        self.update_staff(k);
    }

    fn admit(&mut self, pools: &ResourceManager, request: &Request, picks: &[PoolId]) -> Admission {
        let ctx = Arc::clone(&self.ctx);
        let s = &mut self.state;
        let Some(j) = s.journeys.get(&request.requester) else {
            return Admission::Grant;
        };
        let dest = s.destination(&ctx, j, picks);
        let staff_moving = picks
            .iter()
            .filter(|p| matches!(s.owners[p.0 as usize], PoolOwner::Staff(_)))
            .filter(|p| {
                let PoolOwner::Staff(i) = s.owners[p.0 as usize] else {
                    return false;
                };
                s.occupancy.position(s.staff[i].id).and_then(|pos| pos.room) != Some(dest)
            })
            .count() as u32;
        let patient_moving = u32::from(
            s.occupancy
                .position(request.requester)
                .and_then(|pos| pos.room)
                != Some(dest),
        );
        if !s
            .occupancy
            .has_headroom(&ctx.plan, dest, patient_moving + staff_moving)
        {
            return Admission::Block { requirement: 0 };
        }
        let bed_req = j
            .needs
            .iter()
            .zip(picks)
            .position(|(n, p)| matches!(n, Need::Room(_)) && s.is_main_bed(*p, pools));
        if let Some(req_idx) = bed_req {
            if s.interventions.is_enabled(InterventionKind::NurseRatio) && j.route == Route::Main {
                let under = s.under_care() + s.step_admitted;
                let nurses = s.nurses_on_duty() + s.step_activations.len() as u32;
                let reserve = s.reserve_available();
                match interventions::enforce_nurse_ratio(
                    under,
                    nurses,
                    reserve.is_some(),
                    s.interventions.nurse_ratio.max_ratio,
                ) {
                    RatioDecision::Proceed => {}
                    RatioDecision::ActivateReserve => {
                        s.step_activations.push(reserve.expect("reserve"))
                    }
                    RatioDecision::Blocked => {
                        s.counters.nurse_ratio_blocked_count += 1;
                        s.step_blocks.push(request.requester);
                        return Admission::Block {
                            requirement: req_idx,
                        };
                    }
                }
            }
            s.step_admitted += 1;
        }
        Admission::Grant
    }

    fn on_grant(&mut self, k: &mut Kernel<SimEvent>, grant: &Grant) {
        self.handle_grant(k, grant);
    }

    fn clinical(&mut self, k: &mut Kernel<SimEvent>) {
        self.clinical_step(k);
    }

    fn sample(&mut self, k: &mut Kernel<SimEvent>) {
        self.sample_step(k);
    }
}
