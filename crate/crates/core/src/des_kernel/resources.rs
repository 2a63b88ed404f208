use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use super::{EntityId, KernelError, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    TriageRoom,
    ExamRoom,
    ShockRoom,
    Xray,
    Ct,
    Ultrasound,
    FastTrackRoom,
    Equipment,
    DoctorTime,
    NurseTime,
    NpTime,
    AssistantTime,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 12] = [
        ResourceKind::TriageRoom,
        ResourceKind::ExamRoom,
        ResourceKind::ShockRoom,
        ResourceKind::Xray,
        ResourceKind::Ct,
        ResourceKind::Ultrasound,
        ResourceKind::FastTrackRoom,
        ResourceKind::Equipment,
        ResourceKind::DoctorTime,
        ResourceKind::NurseTime,
        ResourceKind::NpTime,
        ResourceKind::AssistantTime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::TriageRoom => "triage_room",
            ResourceKind::ExamRoom => "exam_room",
            ResourceKind::ShockRoom => "shock_room",
            ResourceKind::Xray => "xray",
            ResourceKind::Ct => "ct",
            ResourceKind::Ultrasound => "ultrasound",
            ResourceKind::FastTrackRoom => "fast_track_room",
            ResourceKind::Equipment => "equipment",
            ResourceKind::DoctorTime => "doctor_time",
            ResourceKind::NurseTime => "nurse_time",
            ResourceKind::NpTime => "np_time",
            ResourceKind::AssistantTime => "assistant_time",
        }
    }

    pub fn parse(s: &str) -> Option<ResourceKind> {
        ResourceKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_room(self) -> bool {
        matches!(
            self,
            ResourceKind::TriageRoom
                | ResourceKind::ExamRoom
                | ResourceKind::ShockRoom
                | ResourceKind::Xray
                | ResourceKind::Ct
                | ResourceKind::Ultrasound
                | ResourceKind::FastTrackRoom
        )
    }

    /// Rooms a patient keeps from first entry until disposition.
    pub fn is_bed(self) -> bool {
        matches!(
            self,
            ResourceKind::ExamRoom | ResourceKind::ShockRoom | ResourceKind::FastTrackRoom
        )
    }

    pub fn is_staff(self) -> bool {
        matches!(
            self,
            ResourceKind::DoctorTime
                | ResourceKind::NurseTime
                | ResourceKind::NpTime
                | ResourceKind::AssistantTime
        )
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoolId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GrantId(pub u64);

/// A capacity-constrained resource with priority-ordered waiters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourcePool {
    pub id: PoolId,
    pub name: String,
    pub kind: ResourceKind,
    pub capacity: u32,
    pub in_use: u32,
    /// Closed pools keep serving current holders but grant nothing new.
    pub open: bool,
    /// Secondary any-of preference (lower wins) ahead of target list order.
    pub preference: (u64, u64),
}

impl ResourcePool {
    pub fn free(&self) -> u32 {
        if self.open {
            self.capacity.saturating_sub(self.in_use)
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    Single,
    AllOf,
    AnyOf,
}

impl RequestMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestMode::Single => "single",
            RequestMode::AllOf => "all_of",
            RequestMode::AnyOf => "any_of",
        }
    }
}

/// One unit from any of the candidate pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub candidates: Vec<PoolId>,
}

impl Requirement {
    pub fn one(pool: PoolId) -> Self {
        Requirement {
            candidates: vec![pool],
        }
    }

    pub fn any(pools: impl IntoIterator<Item = PoolId>) -> Self {
        Requirement {
            candidates: pools.into_iter().collect(),
        }
    }
}

/// A (possibly compound) resource request.
///
/// Requirements are granted together or not at all. `single` and `any_of`
/// requests carry one requirement; `all_of` requests carry one requirement per
/// target, each of which may itself offer alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub requester: EntityId,
    /// 1 is most urgent.
    pub priority: u8,
    pub mode: RequestMode,
    pub requirements: Vec<Requirement>,
    pub issued_at: SimTime,
    /// Index of the requirement that held this request back at the last
    /// service pass.
    pub blocked_on: Option<usize>,
}

impl Request {
    fn build(
        requester: EntityId,
        priority: u8,
        mode: RequestMode,
        requirements: Vec<Requirement>,
    ) -> Self {
        Request {
            id: RequestId(0),
            requester,
            priority,
            mode,
            requirements,
            issued_at: SimTime::ZERO,
            blocked_on: None,
        }
    }

    pub fn single(requester: EntityId, priority: u8, pool: PoolId) -> Self {
        Self::build(
            requester,
            priority,
            RequestMode::Single,
            vec![Requirement::one(pool)],
        )
    }

    pub fn all_of(
        requester: EntityId,
        priority: u8,
        pools: impl IntoIterator<Item = PoolId>,
    ) -> Self {
        let reqs = pools.into_iter().map(Requirement::one).collect();
        Self::build(requester, priority, RequestMode::AllOf, reqs)
    }

    pub fn any_of(
        requester: EntityId,
        priority: u8,
        pools: impl IntoIterator<Item = PoolId>,
    ) -> Self {
        Self::build(
            requester,
            priority,
            RequestMode::AnyOf,
            vec![Requirement::any(pools)],
        )
    }

    /// All of the given requirements, each satisfied by any of its candidates.
    pub fn compound(requester: EntityId, priority: u8, requirements: Vec<Requirement>) -> Self {
        let mode = match requirements.as_slice() {
            [r] if r.candidates.len() == 1 => RequestMode::Single,
            [_] => RequestMode::AnyOf,
            _ => RequestMode::AllOf,
        };
        Self::build(requester, priority, mode, requirements)
    }

    pub fn targets(&self) -> impl Iterator<Item = PoolId> + '_ {
        self.requirements
            .iter()
            .flat_map(|r| r.candidates.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub id: GrantId,
    pub request: RequestId,
    pub requester: EntityId,
    pub priority: u8,
    /// One pool per requirement, in requirement order.
    pub pools: Vec<PoolId>,
    pub issued_at: SimTime,
    pub granted_at: SimTime,
}

/// Verdict of the admission hook on a satisfiable request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Grant,
    /// Hold the request back; the index names the requirement to blame.
    Block {
        requirement: usize,
    },
}

#[derive(Debug, Default)]
pub struct ServiceOutcome {
    pub grants: Vec<Grant>,
}

/// Pools, pending requests (sorted by priority then issue order) and live grants.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResourceManager {
    pools: Vec<ResourcePool>,
    pending: Vec<Request>,
    grants: BTreeMap<GrantId, Grant>,
    next_request: u64,
    next_grant: u64,
}

impl ResourceManager {
    pub fn add_pool(
        &mut self,
        name: impl Into<String>,
        kind: ResourceKind,
        capacity: u32,
        open: bool,
    ) -> PoolId {
        let id = PoolId(self.pools.len() as u32);
        self.pools.push(ResourcePool {
            id,
            name: name.into(),
            kind,
            capacity,
            in_use: 0,
            open,
            preference: (0, 0),
        });
        id
    }

    pub fn pool(&self, id: PoolId) -> &ResourcePool {
        &self.pools[id.0 as usize]
    }

    pub fn get(&self, id: PoolId) -> Option<&ResourcePool> {
        self.pools.get(id.0 as usize)
    }

    pub fn pools(&self) -> &[ResourcePool] {
        &self.pools
    }

    pub fn set_open(&mut self, id: PoolId, open: bool) {
        self.pools[id.0 as usize].open = open;
    }

    pub fn set_preference(&mut self, id: PoolId, preference: (u64, u64)) {
        self.pools[id.0 as usize].preference = preference;
    }

    pub fn pending(&self) -> &[Request] {
        &self.pending
    }

    pub fn pending_request(&self, id: RequestId) -> Option<&Request> {
        self.pending.iter().find(|r| r.id == id)
    }

    pub fn grants(&self) -> impl Iterator<Item = &Grant> {
        self.grants.values()
    }

    pub fn grant(&self, id: GrantId) -> Option<&Grant> {
        self.grants.get(&id)
    }

    pub fn enqueue(
        &mut self,
        mut request: Request,
        now: SimTime,
    ) -> Result<RequestId, KernelError> {
        if request.requirements.is_empty()
            || request.requirements.iter().any(|r| r.candidates.is_empty())
        {
            return Err(KernelError::EmptyRequest);
        }
        if let Some(bad) = request.targets().find(|p| p.0 as usize >= self.pools.len()) {
            return Err(KernelError::UnknownPool(bad));
        }
        request.id = RequestId(self.next_request);
        self.next_request += 1;
        request.issued_at = now;
        request.blocked_on = None;
        let key = (request.priority, request.id);
        let at = self.pending.partition_point(|r| (r.priority, r.id) < key);
        let id = request.id;
        self.pending.insert(at, request);
        Ok(id)
    }

    pub fn cancel(&mut self, id: RequestId) -> Result<Request, KernelError> {
        let idx = self
            .pending
            .iter()
            .position(|r| r.id == id)
            .ok_or(KernelError::UnknownRequest(id))?;
        Ok(self.pending.remove(idx))
    }

    pub fn release(&mut self, id: GrantId) -> Result<Grant, KernelError> {
        let grant = self
            .grants
            .remove(&id)
            .ok_or(KernelError::DoubleRelease(id))?;
        for p in &grant.pools {
            let pool = &mut self.pools[p.0 as usize];
            debug_assert!(pool.in_use > 0);
            pool.in_use -= 1;
        }
        Ok(grant)
    }

    /// Releases some pools of a grant and keeps the rest under the same
    /// grant id. Releasing every remaining pool removes the grant.
    pub fn release_pools(&mut self, id: GrantId, pools: &[PoolId]) -> Result<Grant, KernelError> {
        let grant = self
            .grants
            .get_mut(&id)
            .ok_or(KernelError::DoubleRelease(id))?;
        let mut held = grant.pools.clone();
        for p in pools {
            let at = held
                .iter()
                .position(|h| h == p)
                .ok_or(KernelError::DoubleRelease(id))?;
            held.remove(at);
        }
        grant.pools = held;
        for p in pools {
            self.pools[p.0 as usize].in_use -= 1;
        }
        let mut released = grant.clone();
        released.pools = pools.to_vec();
        if grant.pools.is_empty() {
            self.grants.remove(&id);
        }
        Ok(released)
    }

    /// Replaces the candidate list of one requirement of a pending request.
    pub fn set_candidates(
        &mut self,
        id: RequestId,
        requirement: usize,
        candidates: Vec<PoolId>,
    ) -> Result<(), KernelError> {
        if candidates.is_empty() {
            return Err(KernelError::EmptyRequest);
        }
        if let Some(bad) = candidates.iter().find(|p| p.0 as usize >= self.pools.len()) {
            return Err(KernelError::UnknownPool(*bad));
        }
        let req = self
            .pending
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or(KernelError::UnknownRequest(id))?;
        let slot = req
            .requirements
            .get_mut(requirement)
            .ok_or(KernelError::UnknownRequest(id))?;
        slot.candidates = candidates;
        Ok(())
    }

    /// Picks one pool per requirement from current free capacity, or names
    /// the first requirement that cannot be met. Candidates are tried in
    /// preference order with backtracking, so overlapping alternatives never
    /// hide a feasible assignment.
    fn pick(&self, request: &Request, free: &mut [u32]) -> Result<Vec<PoolId>, usize> {
        let starved = request
            .requirements
            .iter()
            .position(|r| r.candidates.iter().all(|p| free[p.0 as usize] == 0));
        if let Some(i) = starved {
            return Err(i);
        }
        let mut picks = Vec::with_capacity(request.requirements.len());
        let mut deepest = 0;
        if self.assign(&request.requirements, free, &mut picks, &mut deepest) {
            Ok(picks)
        } else {
            Err(deepest)
        }
    }

    fn assign(
        &self,
        reqs: &[Requirement],
        free: &mut [u32],
        picks: &mut Vec<PoolId>,
        deepest: &mut usize,
    ) -> bool {
        let depth = picks.len();
        let Some(req) = reqs.get(depth) else {
            return true;
        };
        *deepest = (*deepest).max(depth);
        let mut order: Vec<(usize, PoolId)> = req
            .candidates
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, p)| free[p.0 as usize] > 0)
            .collect();
        order.sort_by_key(|(idx, p)| (self.pools[p.0 as usize].preference, *idx));
        let mut seen = Vec::with_capacity(order.len());
        order.retain(|(_, p)| {
            !seen.contains(p) && {
                seen.push(*p);
                true
            }
        });
        for (_, p) in order {
            free[p.0 as usize] -= 1;
            picks.push(p);
            if self.assign(reqs, free, picks, deepest) {
                return true;
            }
            picks.pop();
            free[p.0 as usize] += 1;
        }
        false
    }

    /// One pass over the queue in priority order, granting every request that
    /// is satisfiable and admitted.
    pub fn service(
        &mut self,
        now: SimTime,
        admit: &mut dyn FnMut(&ResourceManager, &Request, &[PoolId]) -> Admission,
    ) -> ServiceOutcome {
        let mut outcome = ServiceOutcome::default();
        if self.pending.is_empty() {
            return outcome;
        }
        let queue = std::mem::take(&mut self.pending);
        let mut free: Vec<u32> = self.pools.iter().map(ResourcePool::free).collect();
        let mut remaining = Vec::with_capacity(queue.len());
        for mut request in queue {
            match self.pick(&request, &mut free) {
                Err(i) => {
                    request.blocked_on = Some(i);
                    remaining.push(request);
                }
                Ok(picks) => match admit(self, &request, &picks) {
                    Admission::Grant => {
                        for p in &picks {
                            self.pools[p.0 as usize].in_use += 1;
                        }
                        let grant = Grant {
                            id: GrantId(self.next_grant),
                            request: request.id,
                            requester: request.requester,
                            priority: request.priority,
                            pools: picks,
                            issued_at: request.issued_at,
                            granted_at: now,
                        };
                        self.next_grant += 1;
                        self.grants.insert(grant.id, grant.clone());
                        outcome.grants.push(grant);
                    }
                    Admission::Block { requirement } => {
                        for p in &picks {
                            free[p.0 as usize] += 1;
                        }
                        request.blocked_on = Some(requirement);
                        remaining.push(request);
                    }
                },
            }
        }
        self.pending = remaining;
        outcome
    }

    /// Pending requests naming each pool among their candidates.
    pub fn queue_lengths(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.pools.len()];
        for r in &self.pending {
            let mut seen: Vec<PoolId> = r.targets().collect();
            seen.sort();
            seen.dedup();
            for p in seen {
                out[p.0 as usize] += 1;
            }
        }
        out
    }
}
