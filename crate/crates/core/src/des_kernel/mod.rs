//! Deterministic discrete-event core.
//!
//! The kernel owns the simulation clock, the future-event calendar, the
//! resource pools with their priority queues, and the append-only event
//! ledger. Time advances in whole minutes; every minute is one step and
//! every step runs the same fixed sequence of hooks:
//!
//! 1. arrivals
//! 2. calendar events, then agent decisions
//! 3. resource queue service
//! 4. clinical checks
//! 5. metrics sampling
//!
//! The agent layer plugs in through [`StepHooks`].

mod calendar;
mod ledger;
mod resources;

pub use calendar::{Calendar, EventHandle};
pub use ledger::{read_jsonl, write_jsonl, EventKind, EventRecord, Ledger, Payload};
pub use resources::{
    Admission, Grant, GrantId, PoolId, Request, RequestId, RequestMode, Requirement, ResourceKind,
    ResourceManager, ResourcePool, ServiceOutcome,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Sub};

/// Whole minutes since simulation start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn minutes(self) -> u64 {
        self.0
    }

    /// Minute within the current day, 0..1440.
    pub fn minute_of_day(self) -> u32 {
        (self.0 % 1440) as u32
    }

    /// Day index since start; day 0 is a Monday.
    pub fn day(self) -> u64 {
        self.0 / 1440
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, rhs: SimTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

/// Identifier of any simulated entity (patient, staff member, room, the
/// simulation itself).
pub type EntityId = u64;

/// Converts a fractional duration to whole minutes, rounding half up, with a
/// floor of one minute.
pub fn round_minutes(value: f64) -> u64 {
    let r = libm::floor(value + 0.5);
    if r < 1.0 {
        1
    } else {
        r as u64
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("cannot schedule at {at} while the clock reads {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("unknown resource pool {0:?}")]
    UnknownPool(PoolId),
    #[error("request has no targets")]
    EmptyRequest,
    #[error("grant {0:?} released twice or never held")]
    DoubleRelease(GrantId),
    #[error("unknown request {0:?}")]
    UnknownRequest(RequestId),
}

/// Callbacks the agent layer provides for each step of [`Kernel::step`].
///
/// All methods except [`StepHooks::on_event`] default to no-ops.
pub trait StepHooks<E> {
    fn arrivals(&mut self, _kernel: &mut Kernel<E>) {}
    fn on_event(&mut self, kernel: &mut Kernel<E>, handle: EventHandle, event: E);
    fn agents(&mut self, _kernel: &mut Kernel<E>) {}
    /// Veto point for a satisfiable request during queue service.
    fn admit(
        &mut self,
        _pools: &ResourceManager,
        _request: &Request,
        _picks: &[PoolId],
    ) -> Admission {
        Admission::Grant
    }
    fn on_grant(&mut self, _kernel: &mut Kernel<E>, _grant: &Grant) {}
    fn clinical(&mut self, _kernel: &mut Kernel<E>) {}
    fn sample(&mut self, _kernel: &mut Kernel<E>) {}
}

/// Clock, calendar, pools and ledger for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kernel<E> {
    now: SimTime,
    calendar: Calendar<E>,
    pub resources: ResourceManager,
    pub ledger: Ledger,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Kernel {
            now: SimTime::ZERO,
            calendar: Calendar::new(),
            resources: ResourceManager::default(),
            ledger: Ledger::default(),
        }
    }

    /// The minute currently being processed, or the next one to process
    /// between steps.
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventHandle, KernelError> {
        if at < self.now {
            return Err(KernelError::InPast { at, now: self.now });
        }
        Ok(self.calendar.push(at, event))
    }

    pub fn pending_events(&self) -> usize {
        self.calendar.len()
    }

    pub fn log(&mut self, kind: EventKind, subject: EntityId, payload: Payload) -> u64 {
        self.ledger.append(self.now, kind, subject, payload)
    }

    /// Enqueues a request and logs it. Service happens in the step's queue
    /// phase (or on an explicit [`Kernel::service`] call).
    pub fn request(&mut self, request: Request) -> Result<RequestId, KernelError> {
        let requester = request.requester;
        let priority = request.priority;
        let mode = request.mode;
        let id = self.resources.enqueue(request, self.now)?;
        self.log(
            EventKind::ResourceRequest,
            requester,
            Payload::new()
                .with("request", id.0)
                .with("priority", priority as u64)
                .with("mode", mode.as_str()),
        );
        Ok(id)
    }

    pub fn cancel(&mut self, id: RequestId) -> Result<Request, KernelError> {
        self.resources.cancel(id)
    }

    pub fn release(&mut self, grant: GrantId) -> Result<Grant, KernelError> {
        let g = self.resources.release(grant)?;
        let pools: Vec<u64> = g.pools.iter().map(|p| p.0 as u64).collect();
        self.log(
            EventKind::ResourceRelease,
            g.requester,
            Payload::new().with("grant", g.id.0).with("pools", pools),
        );
        Ok(g)
    }

    /// Releases part of a grant and logs the released pools.
    pub fn release_pools(
        &mut self,
        grant: GrantId,
        pools: &[PoolId],
    ) -> Result<Grant, KernelError> {
        let g = self.resources.release_pools(grant, pools)?;
        let ids: Vec<u64> = g.pools.iter().map(|p| p.0 as u64).collect();
        self.log(
            EventKind::ResourceRelease,
            g.requester,
            Payload::new().with("grant", g.id.0).with("pools", ids),
        );
        Ok(g)
    }

    /// Serves the queues at the current time. Grants are logged and returned
    /// in issue order.
    pub fn service(
        &mut self,
        mut admit: impl FnMut(&ResourceManager, &Request, &[PoolId]) -> Admission,
    ) -> Vec<Grant> {
        let outcome = self.resources.service(self.now, &mut admit);
        for g in &outcome.grants {
            let pools: Vec<u64> = g.pools.iter().map(|p| p.0 as u64).collect();
            self.ledger.append(
                self.now,
                EventKind::ResourceGrant,
                g.requester,
                Payload::new()
                    .with("request", g.request.0)
                    .with("grant", g.id.0)
                    .with("pools", pools),
            );
        }
        outcome.grants
    }

    /// Runs one minute through the fixed hook order and advances the clock.
    pub fn step<H: StepHooks<E>>(&mut self, hooks: &mut H) {
        let t = self.now;
        hooks.arrivals(self);
        while let Some((handle, event)) = self.calendar.pop_due(t) {
            hooks.on_event(self, handle, event);
        }
        hooks.agents(self);
        let grants = self.service(|pools, req, picks| hooks.admit(pools, req, picks));
        for g in &grants {
            hooks.on_grant(self, g);
        }
        hooks.clinical(self);
        hooks.sample(self);
        self.now = t + 1;
    }

    /// Executes every minute in `[now, t_end)`. Afterwards the clock reads
    /// `t_end`; events stamped `t_end` fire at the start of the next step.
    /// Returns the ledger records appended by this call.
    pub fn run_until<H: StepHooks<E>>(&mut self, t_end: SimTime, hooks: &mut H) -> &[EventRecord] {
        let start = self.ledger.records().len();
        while self.now < t_end {
            self.step(hooks);
        }
        &self.ledger.records()[start..]
    }
}
