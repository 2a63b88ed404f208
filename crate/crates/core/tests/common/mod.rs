//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

pub mod schedule;

/// Priority queue over counted pools, re-simulated from scratch.
pub struct NaiveQueue {
    pub capacity: Vec<u32>,
    pub in_use: Vec<u32>,
    pub open: Vec<bool>,
    pub preference: Vec<u64>,
    /// (priority, arrival order, requester, requirements)
    waiting: Vec<(u8, u64, u64, Vec<Vec<u32>>)>,
    held: BTreeMap<u64, (Vec<u32>, usize)>,
    arrivals: u64,
    shapes: BTreeMap<u64, usize>,
}

impl NaiveQueue {
    pub fn new(capacity: &[u32]) -> Self {
        NaiveQueue {
            capacity: capacity.to_vec(),
            in_use: vec![0; capacity.len()],
            open: vec![true; capacity.len()],
            preference: vec![0; capacity.len()],
            waiting: Vec::new(),
            held: BTreeMap::new(),
            arrivals: 0,
            shapes: BTreeMap::new(),
        }
    }

    pub fn enqueue(&mut self, requester: u64, priority: u8, requirements: Vec<Vec<u32>>) {
        self.shapes.insert(requester, requirements.len());
        self.waiting
            .push((priority, self.arrivals, requester, requirements));
        self.arrivals += 1;
    }

    pub fn requirement_count(&self, requester: u64) -> usize {
        self.shapes[&requester]
    }

    pub fn release(&mut self, requester: u64) {
        let (pools, _) = self.held.remove(&requester).expect("released a held grant");
        for p in pools {
            self.in_use[p as usize] -= 1;
        }
    }

    /// Depth-first search over candidate choices, each requirement trying
    /// its free candidates by (preference, list position).
    fn search(&self, reqs: &[Vec<u32>], free: &mut Vec<u32>, picks: &mut Vec<u32>) -> bool {
        let Some(cands) = reqs.get(picks.len()) else {
            return true;
        };
        let mut order: Vec<(u64, usize, u32)> = cands
            .iter()
            .enumerate()
            .map(|(i, p)| (self.preference[*p as usize], i, *p))
            .collect();
        order.sort();
        for (_, _, p) in order {
            if free[p as usize] == 0 {
                continue;
            }
            free[p as usize] -= 1;
            picks.push(p);
            if self.search(reqs, free, picks) {
                return true;
            }
            picks.pop();
            free[p as usize] += 1;
        }
        false
    }

    /// Walks waiting requests from most to least urgent, oldest first within
    /// a level, and grants each one whose every requirement can be met from
    /// what is still free. Returns `(requester, pools)` per grant.
    pub fn service(&mut self, veto: impl Fn(u64) -> bool) -> Vec<(u64, Vec<u32>)> {
        let mut order: Vec<usize> = (0..self.waiting.len()).collect();
        order.sort_by_key(|&i| (self.waiting[i].0, self.waiting[i].1));
        let mut free: Vec<u32> = (0..self.capacity.len())
            .map(|p| {
                if self.open[p] {
                    self.capacity[p] - self.in_use[p]
                } else {
                    0
                }
            })
            .collect();
        let mut granted = Vec::new();
        let mut done = Vec::new();
        for i in order {
            let (_, _, who, reqs) = &self.waiting[i];
            let mut trial = free.clone();
            let mut picks = Vec::new();
            let found = self.search(reqs, &mut trial, &mut picks);
            if found && !veto(*who) {
                free = trial;
                for p in &picks {
                    self.in_use[*p as usize] += 1;
                }
                self.held.insert(*who, (picks.clone(), reqs.len()));
                granted.push((*who, picks));
                done.push(i);
            }
        }
        done.sort_unstable_by(|a, b| b.cmp(a));
        for i in done {
            self.waiting.remove(i);
        }
        granted
    }
}

/// Whether every requirement can take a distinct unit from `free`.
pub fn satisfiable(requirements: &[edsim::des_kernel::Requirement], free: &[u32]) -> bool {
    // Exhaustive search over candidate choices; requirement lists are short.
    fn go(reqs: &[edsim::des_kernel::Requirement], free: &mut Vec<u32>) -> bool {
        let Some((first, rest)) = reqs.split_first() else {
            return true;
        };
        for p in &first.candidates {
            let i = p.0 as usize;
            if free[i] > 0 {
                free[i] -= 1;
                let ok = go(rest, free);
                free[i] += 1;
                if ok {
                    return true;
                }
            }
        }
        false
    }
    go(requirements, &mut free.to_vec())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Student-t density.
fn t_density(x: f64, df: f64) -> f64 {
    let log_norm = libm::lgamma((df + 1.0) / 2.0)
        - libm::lgamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Two-sided tail probability by composite Simpson integration of the
/// density over [0, |t|].
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let upper = t.abs();
    if upper == 0.0 {
        return 1.0;
    }
    let n = 200_000usize;
    let h = upper / n as f64;
    let mut sum = t_density(0.0, df) + t_density(upper, df);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * t_density(i as f64 * h, df);
    }
    1.0 - 2.0 * sum * h / 3.0
}

/// Welch statistic, Welch-Satterthwaite df and two-sided p from the
/// textbook formulas.
pub fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let t = (mean(a) - mean(b)) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa.powi(2) / (na - 1.0) + sb.powi(2) / (nb - 1.0));
    (t, df, t_two_sided_p(t, df))
}

pub fn cohens_d_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b))
        / (na + nb - 2.0))
        .sqrt();
    (mean(a) - mean(b)) / pooled
}

/// Fixed sample pairs for the statistics checks.
pub fn stat_pairs() -> Vec<(Vec<f64>, Vec<f64>)> {
    vec![
        (vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![2.0, 3.0, 4.0, 5.0, 6.0]),
        (vec![8.0, 10.0, 12.0], vec![10.0, 12.0, 14.0]),
        (
            vec![208.7, 195.2, 221.4, 199.9, 215.0, 204.3],
            vec![152.3, 160.1, 149.8, 171.2, 158.4, 149.0, 155.5],
        ),
        (
            vec![0.5, 0.7, 0.2, 0.9],
            vec![3.1, 2.8, 3.6, 2.9, 3.3, 3.0, 2.7, 3.4],
        ),
        (
            vec![
                12.0, 15.5, 9.25, 11.0, 14.75, 13.0, 10.5, 12.25, 16.0, 11.75,
            ],
            vec![11.5, 14.0, 10.0, 12.5, 13.25],
        ),
    ]
}
