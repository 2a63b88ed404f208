//! Run KPIs: per-step samples, bottleneck ranking, summary statistics and
//! CSV/JSON exports.

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};
use std::collections::BTreeMap;
use std::io::Write;

use crate::des_kernel::{ResourceKind, ResourcePool};
use crate::interventions::InterventionCounters;
use crate::pathways::PathwayLibrary;
use crate::population::{Disposition, Patient};
use crate::staff::Role;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("export failed: {0}")]
    Io(#[from] std::io::Error),
}

/// One step's snapshot. Pool vectors follow pool id order; pools added
/// during the run make later samples longer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: u64,
    pub queue: Vec<u32>,
    pub in_use: Vec<u32>,
    /// Capacity available this step; zero while a pool is closed.
    pub capacity: Vec<u32>,
    /// On-duty count per role in [`Role::ALL`] order.
    pub on_duty: [u32; 4],
    pub mean_fatigue: f64,
    pub waiting: u32,
    pub in_treatment: u32,
    pub disposed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub pool_names: Vec<String>,
    pub pool_kinds: Vec<ResourceKind>,
    pub samples: Vec<Sample>,
}

impl TimeSeries {
    pub fn record(&mut self, pools: &[ResourcePool], sample: Sample) {
        for p in &pools[self.pool_names.len()..] {
            self.pool_names.push(p.name.clone());
            self.pool_kinds.push(p.kind);
        }
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Drops samples at or after minute `t`.
    pub fn truncate_from(&mut self, t: u64) {
        self.samples.retain(|s| s.t < t);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        for n in &self.pool_names {
            header.push(format!("queue_{n}"));
            header.push(format!("in_use_{n}"));
        }
        for r in Role::ALL {
            header.push(format!("on_duty_{r}"));
        }
        header.extend(["mean_fatigue", "waiting", "in_treatment", "disposed"].map(String::from));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            for i in 0..self.pool_names.len() {
                row.push(s.queue.get(i).copied().unwrap_or(0).to_string());
                row.push(s.in_use.get(i).copied().unwrap_or(0).to_string());
            }
            row.extend(s.on_duty.iter().map(u32::to_string));
            row.push(format!("{:.6}", s.mean_fatigue));
            row.push(s.waiting.to_string());
            row.push(s.in_treatment.to_string());
            row.push(s.disposed.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckRow {
    pub pool: String,
    pub kind: ResourceKind,
    pub mean_queue_ratio: f64,
    pub mean_utilization: f64,
}

/// Ranks pools by mean queue-to-capacity ratio, then by utilization, over
/// the steps each pool had capacity. For internal analysis only; it is not
/// part of the state handed to external deciders.
pub fn bottleneck_report(ts: &TimeSeries) -> Vec<BottleneckRow> {
    let mut rows = Vec::new();
    for (i, name) in ts.pool_names.iter().enumerate() {
        let (mut n, mut q, mut u) = (0u64, 0.0, 0.0);
        for s in &ts.samples {
            let cap = s.capacity.get(i).copied().unwrap_or(0);
            if cap == 0 {
                continue;
            }
            n += 1;
            q += s.queue[i] as f64 / cap as f64;
            u += s.in_use[i] as f64 / cap as f64;
        }
        if n > 0 {
            rows.push(BottleneckRow {
                pool: name.clone(),
                kind: ts.pool_kinds[i],
                mean_queue_ratio: q / n as f64,
                mean_utilization: u / n as f64,
            });
        }
    }
    rows.sort_by(|a, b| {
        b.mean_queue_ratio
            .total_cmp(&a.mean_queue_ratio)
            .then(b.mean_utilization.total_cmp(&a.mean_utilization))
            .then_with(|| a.pool.cmp(&b.pool))
    });
    rows
}

/// Mean, median and 95th percentile; all `None` for an empty sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p95: Option<f64>,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut data = Data::new(values.to_vec());
        Stats {
            mean: Some(mean),
            median: Some(data.median()),
            p95: Some(data.quantile(0.95)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub arrivals: u64,
    /// Discharged plus admitted.
    pub completed: u64,
    pub discharged: u64,
    pub admitted: u64,
    pub lwbs: u64,
    pub deceased: u64,
    pub in_progress: u64,
    pub los: Stats,
    pub wait: Stats,
    /// Mean minutes per completed patient, by resource kind.
    pub wait_breakdown: BTreeMap<ResourceKind, f64>,
    pub lwbs_rate: f64,
    pub mortality_rate: f64,
    pub counters: InterventionCounters,
    /// Rows: true acuity at arrival 1-5. Columns: assigned level 1-5, then
    /// not yet triaged.
    pub lwbs_by_esi: [[u64; 6]; 5],
    /// Arrivals by true acuity at arrival.
    pub arrivals_by_esi: [u64; 5],
    /// Completed patients arriving at true acuity 1-2.
    pub high_acuity_wait_breakdown: BTreeMap<ResourceKind, f64>,
    pub deceased_wait_breakdown: BTreeMap<ResourceKind, f64>,
    pub treatment_errors: u64,
    pub note: String,
}

pub const SUMMARY_NOTE: &str =
    "LoS and wait cover discharged and admitted patients; LWBS and deceased patients are reported as rates";

fn mean_breakdown<'a>(patients: impl Iterator<Item = &'a Patient>) -> BTreeMap<ResourceKind, f64> {
    let mut sums: BTreeMap<ResourceKind, u64> = BTreeMap::new();
    let mut n = 0u64;
    for p in patients {
        n += 1;
        for (k, v) in &p.cumulative_wait {
            *sums.entry(*k).or_default() += v;
        }
    }
    sums.into_iter()
        .map(|(k, v)| (k, v as f64 / n as f64))
        .collect()
}

impl RunSummary {
    /// Summarizes the patient records of a finished (or stopped) run.
    pub fn from_patients(
        patients: &[Patient],
        counters: InterventionCounters,
        treatment_errors: u64,
    ) -> RunSummary {
        let mut s = RunSummary {
            arrivals: patients.len() as u64,
            counters,
            treatment_errors,
            ..Default::default()
        };
        for p in patients {
            s.arrivals_by_esi[(p.initial_esi - 1) as usize] += 1;
            match p.disposition {
                Disposition::Discharged => s.discharged += 1,
                Disposition::Admitted => s.admitted += 1,
                Disposition::Lwbs => {
                    s.lwbs += 1;
                    let col = p.assigned_triage.map_or(5, |a| (a - 1) as usize);
                    s.lwbs_by_esi[(p.initial_esi - 1) as usize][col] += 1;
                }
                Disposition::Deceased => s.deceased += 1,
                Disposition::InProgress => s.in_progress += 1,
            }
        }
        s.completed = s.discharged + s.admitted;
        let done = || {
            patients.iter().filter(|p| {
                matches!(
                    p.disposition,
                    Disposition::Discharged | Disposition::Admitted
                )
            })
        };
        let los: Vec<f64> = done()
            .filter_map(|p| p.length_of_stay())
            .map(|v| v as f64)
            .collect();
        let wait: Vec<f64> = done().map(|p| p.total_wait() as f64).collect();
        s.los = Stats::of(&los);
        s.wait = Stats::of(&wait);
        if s.completed > 0 {
            s.wait_breakdown = mean_breakdown(done());
        }
        if done().any(|p| p.initial_esi <= 2) {
            s.high_acuity_wait_breakdown = mean_breakdown(done().filter(|p| p.initial_esi <= 2));
        }
        if s.deceased > 0 {
            s.deceased_wait_breakdown = mean_breakdown(
                patients
                    .iter()
                    .filter(|p| p.disposition == Disposition::Deceased),
            );
        }
        if s.arrivals > 0 {
            s.lwbs_rate = 100.0 * s.lwbs as f64 / s.arrivals as f64;
            s.mortality_rate = 100.0 * s.deceased as f64 / s.arrivals as f64;
        }
        s.note = SUMMARY_NOTE.to_string();
        s
    }

    /// Arrivals equal the sum of all dispositions, in progress included.
    pub fn conserved(&self) -> bool {
        self.arrivals
            == self.discharged + self.admitted + self.lwbs + self.deceased + self.in_progress
    }

    /// Resource kind with the largest mean wait.
    pub fn dominant_wait(&self) -> Option<ResourceKind> {
        self.wait_breakdown
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| *k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn opt(t: Option<crate::des_kernel::SimTime>) -> String {
    t.map(|t| t.0.to_string()).unwrap_or_default()
}

/// One row per patient with milestones and waits.
pub fn write_patients_csv<W: Write>(
    out: W,
    patients: &[Patient],
    library: &PathwayLibrary,
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "id",
        "arrival",
        "initial_esi",
        "true_esi",
        "assigned_triage",
        "pathway",
        "disposition",
        "disposition_time",
        "los",
        "triage_start",
        "triage_done",
        "first_provider",
        "room_entry",
        "total_wait",
    ]
    .map(String::from)
    .to_vec();
    header.extend(ResourceKind::ALL.iter().map(|k| format!("wait_{k}")));
    header.extend(
        [
            "treatment_minutes",
            "travel_minutes",
            "fast_tracked",
            "physician_triaged",
            "severity_worsened_by_error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for p in patients {
        let m = &p.milestones;
        let mut row = vec![
            p.id.to_string(),
            p.arrival_time.0.to_string(),
            p.initial_esi.to_string(),
            p.true_esi.to_string(),
            p.assigned_triage.map(|a| a.to_string()).unwrap_or_default(),
            library.get(p.condition).id.clone(),
            p.disposition.as_str().to_string(),
            opt(m.disposition_time),
            p.length_of_stay()
                .map(|v| v.to_string())
                .unwrap_or_default(),
            opt(m.triage_start),
            opt(m.triage_done),
            opt(m.first_provider),
            opt(m.room_entry),
            p.total_wait().to_string(),
        ];
        row.extend(
            ResourceKind::ALL
                .iter()
                .map(|k| p.cumulative_wait.get(k).copied().unwrap_or(0).to_string()),
        );
        row.push(p.treatment_minutes.to_string());
        row.push(p.travel_minutes.to_string());
        row.push(p.fast_tracked.to_string());
        row.push(p.physician_triaged.to_string());
        row.push(p.severity_worsened_by_error.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
