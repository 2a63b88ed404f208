//! Random request/release schedules and their check against [`NaiveQueue`].

use edsim::des_kernel::{
    Admission, GrantId, PoolId, Request, Requirement, ResourceKind, ResourceManager, SimTime,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use super::NaiveQueue;

#[derive(Debug, Clone)]
pub enum Op {
    Enqueue {
        priority: u8,
        requirements: Vec<Vec<u32>>,
    },
    Release {
        pick: usize,
    },
    Toggle {
        pool: u32,
    },
    Prefer {
        pool: u32,
        rank: u64,
    },
    Service {
        veto_mod: u64,
    },
}

fn op(pools: u32) -> impl Strategy<Value = Op> {
    let reqs = prop::collection::vec(prop::collection::vec(0..pools, 1..=3), 1..=3);
    prop_oneof![
        5 => (1u8..=5, reqs).prop_map(|(priority, requirements)| Op::Enqueue { priority, requirements }),
        3 => any::<usize>().prop_map(|pick| Op::Release { pick }),
        1 => (0..pools).prop_map(|pool| Op::Toggle { pool }),
        1 => (0..pools, 0u64..3).prop_map(|(pool, rank)| Op::Prefer { pool, rank }),
        4 => (0u64..4).prop_map(|veto_mod| Op::Service { veto_mod }),
    ]
}

pub fn schedule() -> impl Strategy<Value = (Vec<u32>, Vec<Op>)> {
    prop::collection::vec(1u32..=3, 1..=5).prop_flat_map(|caps| {
        let n = caps.len() as u32;
        (Just(caps), prop::collection::vec(op(n), 1..80))
    })
}

/// Vetoes a request when `veto_mod` divides `requester + pass`; zero never vetoes.
fn vetoed(veto_mod: u64, requester: u64, pass: u64) -> bool {
    veto_mod > 1 && (requester + pass).is_multiple_of(veto_mod)
}

/// Replays one schedule on the kernel and the naive model in lock step.
pub fn check_schedule(caps: Vec<u32>, ops: Vec<Op>) -> Result<(), TestCaseError> {
    let mut m = ResourceManager::default();
    let mut oracle = NaiveQueue::new(&caps);
    for (i, c) in caps.iter().enumerate() {
        m.add_pool(format!("p{i}"), ResourceKind::ExamRoom, *c, true);
    }
    let mut live: Vec<GrantId> = Vec::new();
    let mut requester = 0u64;
    let mut pass = 0u64;
    for op in ops {
        match op {
            Op::Enqueue {
                priority,
                requirements,
            } => {
                requester += 1;
                let reqs = requirements
                    .iter()
                    .map(|c| Requirement::any(c.iter().map(|p| PoolId(*p))))
                    .collect();
                m.enqueue(Request::compound(requester, priority, reqs), SimTime(pass))
                    .unwrap();
                oracle.enqueue(requester, priority, requirements);
            }
            Op::Release { pick } => {
                if !live.is_empty() {
                    let id = live.remove(pick % live.len());
                    let g = m.release(id).unwrap();
                    oracle.release(g.requester);
                }
            }
            Op::Toggle { pool } => {
                let open = !m.pool(PoolId(pool)).open;
                m.set_open(PoolId(pool), open);
                oracle.open[pool as usize] = open;
            }
            Op::Prefer { pool, rank } => {
                m.set_preference(PoolId(pool), (rank, 0));
                oracle.preference[pool as usize] = rank;
            }
            Op::Service { veto_mod } => {
                pass += 1;
                let grants = m
                    .service(SimTime(pass), &mut |_, r, _| {
                        if vetoed(veto_mod, r.requester, pass) {
                            Admission::Block { requirement: 0 }
                        } else {
                            Admission::Grant
                        }
                    })
                    .grants;
                let expected = oracle.service(|who| vetoed(veto_mod, who, pass));
                let got: Vec<(u64, Vec<u32>)> = grants
                    .iter()
                    .map(|g| (g.requester, g.pools.iter().map(|p| p.0).collect()))
                    .collect();
                prop_assert_eq!(&got, &expected);
                live.extend(grants.iter().map(|g| g.id));

                // Nothing left waiting could have been served from what is free now.
                let free: Vec<u32> = m.pools().iter().map(|p| p.free()).collect();
                for r in m.pending() {
                    if vetoed(veto_mod, r.requester, pass) {
                        continue;
                    }
                    prop_assert!(
                        !super::satisfiable(&r.requirements, &free),
                        "request {} left waiting",
                        r.requester
                    );
                }
            }
        }
        // Capacity and atomicity after every operation.
        let mut held = vec![0u32; caps.len()];
        for g in m.grants() {
            for p in &g.pools {
                held[p.0 as usize] += 1;
            }
        }
        for p in m.pools() {
            prop_assert!(p.in_use <= p.capacity);
            prop_assert_eq!(p.in_use, held[p.id.0 as usize]);
        }
        for g in m.grants() {
            let want = oracle.requirement_count(g.requester);
            prop_assert_eq!(g.pools.len(), want);
        }
    }
    Ok(())
}
