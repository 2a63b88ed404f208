//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fail.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::schedule::{check_schedule, schedule};
use common::{cohens_d_oracle, stat_pairs, welch_oracle};
use edsim::clinical_outcomes::{MortalityContext, MortalityParams};
use edsim::config::{Baseline, EdSize, Resolved, SimConfig};
use edsim::des_kernel::{write_jsonl, EventKind, ResourceKind, SimTime};
use edsim::experiments::{
    cohens_d, run_study, welch_t, Arm, Cell, ScenarioMatrix, StudyOptions, StudyResults,
    DEFAULT_MASTER_SEED,
};
use edsim::interventions::InterventionKind;
use edsim::ledger_replay::{encode_checkpoint, Checkpoint};
use edsim::population::{
    arrival_digest, generate_arrivals, instantaneous_rate, ArrivalProfile, ConditionTable,
    Disposition, EsiDistribution,
};
use edsim::rng::mix;
use edsim::sim::Simulation;
use edsim::staff::{cognitive_effectiveness, error_probability, slowdown_factor, FatigueParams};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rayon::prelude::*;

const THREE_DAYS: u64 = 3 * 1440;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn medium(
    baseline: Baseline,
    kinds: &[InterventionKind],
    patient: u64,
    dynamics: u64,
    minutes: u64,
) -> Arc<Resolved> {
    let mut c = SimConfig::preset(EdSize::Medium)
        .with_baseline(baseline)
        .with_seeds(patient, dynamics)
        .with_horizon_minutes(minutes);
    for k in kinds {
        c = c.with_intervention(*k);
    }
    Arc::new(Resolved::shipped(c).expect("shipped scenario resolves"))
}

fn ledger_bytes(sim: &mut Simulation) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(&mut out, sim.ledger()).unwrap();
    out
}

fn determinism() -> Verdict {
    let ctx = medium(
        Baseline::Standard,
        &[],
        mix(&[DEFAULT_MASTER_SEED, 1]),
        mix(&[DEFAULT_MASTER_SEED, 1, 1]),
        THREE_DAYS,
    );
    let mut a = Simulation::new(ctx.clone());
    a.run();
    let mut b = Simulation::new(ctx.clone());
    b.run();
    let same_ledger = ledger_bytes(&mut a) == ledger_bytes(&mut b);
    let same_summary = a.summary().to_json() == b.summary().to_json();

    let mut sim = Simulation::new(ctx.clone());
    let mut checkpoints = Vec::new();
    for start in (0..THREE_DAYS).step_by(60) {
        sim.run_until(SimTime(start));
        let bytes = encode_checkpoint(&sim, start / 60);
        let slice = sim.run_until(SimTime(start + 60)).to_vec();
        checkpoints.push((start, bytes, slice));
    }
    let mismatched: Vec<u64> = checkpoints
        .par_iter()
        .filter(|(start, bytes, slice)| {
            let mut restored = Checkpoint::from_bytes(bytes)
                .and_then(|c| c.restore(ctx.clone()))
                .expect("checkpoint restores");
            restored.run_until(SimTime(start + 60)) != slice.as_slice()
        })
        .map(|(start, _, _)| *start)
        .collect();
    verdict(
        same_ledger && same_summary && mismatched.is_empty(),
        format!(
            "ledger identical {same_ledger}, summary identical {same_summary}, {} of {} batch replays identical",
            checkpoints.len() - mismatched.len(),
            checkpoints.len()
        ),
    )
}

fn seed_isolation() -> Verdict {
    let patient = mix(&[DEFAULT_MASTER_SEED, 2]);
    let mut arms: Vec<Vec<InterventionKind>> = vec![vec![]];
    arms.extend(InterventionKind::ALL.iter().map(|k| vec![*k]));
    arms.push(InterventionKind::ALL.to_vec());
    let digests: Vec<String> = arms
        .par_iter()
        .enumerate()
        .map(|(i, kinds)| {
            let mut sim = Simulation::new(medium(
                Baseline::HighVolume,
                kinds,
                patient,
                mix(&[DEFAULT_MASTER_SEED, 2, i as u64]),
                THREE_DAYS,
            ));
            sim.run();
            arrival_digest(sim.patients())
        })
        .collect();
    let same = digests.iter().all(|d| *d == digests[0]);
    verdict(
        same,
        format!("{} arms, digest {}", digests.len(), &digests[0][..16]),
    )
}

fn conservation() -> Verdict {
    let failures: Vec<String> = (0..100u64)
        .into_par_iter()
        .filter_map(|i| {
            let ctx = medium(
                Baseline::Standard,
                &[],
                mix(&[DEFAULT_MASTER_SEED, 3, i]),
                mix(&[DEFAULT_MASTER_SEED, 3, i, 1]),
                THREE_DAYS,
            );
            let mut sim = Simulation::new(ctx);
            sim.run();
            if !sim.summary().conserved() {
                return Some(format!("run {i}: dispositions do not sum to arrivals"));
            }
            let horizon = sim.now();
            for p in sim.patients() {
                let window = match p.disposition {
                    Disposition::InProgress => horizon.0 - p.arrival_time.0,
                    _ => p.length_of_stay()?,
                };
                if p.total_wait() + p.treatment_minutes + p.travel_minutes != window {
                    return Some(format!(
                        "run {i}: patient {} minutes do not decompose",
                        p.id
                    ));
                }
            }
            None
        })
        .collect();
    verdict(
        failures.is_empty(),
        match failures.first() {
            None => "100 runs conserve patients and minutes".to_string(),
            Some(f) => format!("{} failing runs, first {f}", failures.len()),
        },
    )
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn nhpp_calibration() -> Verdict {
    let esi = EsiDistribution::default();
    let conditions = ConditionTable::default();
    let flat = ArrivalProfile::constant(8.0);
    let week = SimTime(7 * 1440);
    let counts: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            generate_arrivals(
                week,
                &flat,
                &esi,
                &conditions,
                mix(&[DEFAULT_MASTER_SEED, 4, i]),
            )
            .len() as f64
        })
        .collect();
    let mean = common::mean(&counts);
    let se = (common::sample_variance(&counts) / counts.len() as f64).sqrt();
    let mean_ok = (mean - 1344.0).abs() <= 3.0 * se;

    let shaped = ArrivalProfile::new(8.0);
    let days = 400u64;
    let arrivals = generate_arrivals(
        SimTime(days * 1440),
        &shaped,
        &esi,
        &conditions,
        mix(&[DEFAULT_MASTER_SEED, 4, 1000]),
    );
    let mut observed = vec![0.0; 168];
    let mut exposure = vec![0.0; 168];
    let mut expected = vec![0.0; 168];
    for hour in 0..days * 24 {
        exposure[(hour % 168) as usize] += 1.0;
    }
    for a in &arrivals {
        observed[((a.time.0 / 60) % 168) as usize] += 1.0;
    }
    for (bin, e) in expected.iter_mut().enumerate() {
        let start = bin as u64 * 60;
        *e = (start..start + 60)
            .map(|m| instantaneous_rate(SimTime(m), &shaped))
            .sum::<f64>()
            / 60.0;
    }
    let rate: Vec<f64> = observed.iter().zip(&exposure).map(|(o, n)| o / n).collect();
    let r = pearson(&rate, &expected);
    verdict(
        mean_ok && r > 0.9,
        format!("mean count {mean:.1} (SE {se:.2}, target 1344), hourly Pearson r {r:.4}"),
    )
}

fn kernel_properties() -> Verdict {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 1000,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    match runner.run(&schedule(), |(caps, ops)| check_schedule(caps, ops)) {
        Ok(()) => verdict(true, "1000 schedules agree with the naive queue"),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn fatigue_endpoints() -> Verdict {
    let p = FatigueParams::default();
    let err = error_probability(1.0, &p);
    let slow = slowdown_factor(1.0, p.s_max);
    let flat = (0..=480).all(|m| cognitive_effectiveness(m, 720, p.c_min) == 1.0)
        && cognitive_effectiveness(481, 720, p.c_min) < 1.0;
    verdict(
        (err - 0.055).abs() <= 1e-9 && slow == p.s_max && flat,
        format!("error probability at full fatigue {err:.12}, slowdown {slow} (max {}), flat through minute 480 {flat}", p.s_max),
    )
}

fn mortality_multipliers() -> Verdict {
    let m = MortalityParams::default();
    let ctx = |esi: u8, error: bool, ratio: f64| MortalityContext {
        true_esi: esi,
        hours_waiting_untreated: 1.5,
        worsened_by_error: error,
        patients_per_nurse: ratio,
    };
    let doubled = (1..=5).all(|esi| {
        m.step_probability(&ctx(esi, true, 2.0)) == 2.0 * m.step_probability(&ctx(esi, false, 2.0))
    });
    let six = m.step_probability(&ctx(3, false, 6.0)) / m.step_probability(&ctx(3, false, 4.0));
    let multiplier = m.ratio_multiplier(6.0);
    verdict(
        doubled && (multiplier - 1.14).abs() < 1e-12 && (six - 1.14).abs() < 1e-12,
        format!("error flag doubles {doubled}, 6:1 multiplier {multiplier}, probability ratio {six:.15}"),
    )
}

fn statistics() -> Verdict {
    let mut worst = 0.0f64;
    for (a, b) in stat_pairs() {
        let w = welch_t(&a, &b).unwrap();
        let (t, df, p) = welch_oracle(&a, &b);
        let d = cohens_d(&a, &b).unwrap();
        for gap in [w.t - t, w.df - df, w.p - p, d - cohens_d_oracle(&a, &b)] {
            worst = worst.max(gap.abs());
        }
    }
    verdict(
        worst <= 1e-9,
        format!("largest gap to oracle {worst:.2e} over 5 pairs"),
    )
}

fn pool_ids(sim: &Simulation, kind: ResourceKind) -> Vec<u64> {
    sim.resources()
        .pools()
        .iter()
        .filter(|p| p.kind == kind)
        .map(|p| p.id.0 as u64)
        .collect()
}

fn intervention_counters() -> Verdict {
    let run = |baseline, kind| {
        let mut sim = Simulation::new(medium(
            baseline,
            &[kind],
            mix(&[DEFAULT_MASTER_SEED, 9]),
            mix(&[DEFAULT_MASTER_SEED, 9, 1]),
            THREE_DAYS,
        ));
        sim.run();
        sim
    };
    let ft = run(Baseline::HighVolume, InterventionKind::FastTrack);
    let ft_pools = pool_ids(&ft, ResourceKind::FastTrackRoom);
    let ft_grants = ft
        .ledger()
        .iter()
        .filter(|r| r.kind == EventKind::ResourceGrant)
        .filter(|r| {
            r.payload
                .get("pools")
                .and_then(|v| v.as_array())
                .is_some_and(|ps| {
                    ps.iter()
                        .any(|p| p.as_u64().is_some_and(|p| ft_pools.contains(&p)))
                })
        })
        .count() as u64;
    let ft_count = ft.summary().counters.fast_track_count;

    let sf = run(Baseline::HighVolume, InterventionKind::SplitFlow);
    let pit = sf
        .ledger()
        .iter()
        .filter(|r| {
            r.kind == EventKind::TreatmentStart && r.payload.str("kind") == Some("pit_assessment")
        })
        .count() as u64;
    let pit_count = sf.summary().counters.physician_triage_count;

    let nr = run(Baseline::StressedStaffing, InterventionKind::NurseRatio);
    let blocks = nr
        .ledger()
        .iter()
        .filter(|r| r.kind == EventKind::AdmissionBlocked)
        .count() as u64;
    let block_count = nr.summary().counters.nurse_ratio_blocked_count;

    verdict(
        ft_count == ft_grants && pit_count == pit && block_count == blocks && ft_count > 0 && pit_count > 0,
        format!(
            "fast track {ft_count} vs {ft_grants} grants, physician triage {pit_count} vs {pit} assessments, blocked {block_count} vs {blocks} records"
        ),
    )
}

fn cell_for(results: &StudyResults, kind: InterventionKind) -> Cell {
    *results
        .matrix
        .cells()
        .iter()
        .find(|c| c.intervention == kind && c.size == EdSize::Medium)
        .expect("desk matrix covers every intervention")
}

fn change(results: &StudyResults, cell: &Cell, metric: &str) -> (f64, Option<f64>) {
    let s = results.stat(cell, metric).expect("metric compared");
    (s.relative_change_pct.unwrap_or(f64::NAN), s.p_value)
}

fn fast_track(results: &StudyResults) -> Verdict {
    let cell = cell_for(results, InterventionKind::FastTrack);
    let (los, p) = change(results, &cell, "los");
    let (lwbs, _) = change(results, &cell, "lwbs_pct");
    let p = p.unwrap_or(f64::NAN);
    verdict(
        (-40.0..=-10.0).contains(&los) && lwbs < -50.0 && p < 0.05,
        format!("LoS {los:+.1}% (p {p:.2e}), LWBS {lwbs:+.1}%"),
    )
}

fn split_flow(results: &StudyResults) -> Verdict {
    let cell = cell_for(results, InterventionKind::SplitFlow);
    let (wait, p) = change(results, &cell, "wait");
    let p = p.unwrap_or(f64::NAN);
    let m = results.stat(&cell, "mortality_pct").unwrap();
    let mortality_up = m.mean_intervention > m.mean_baseline && m.p_value.is_some_and(|p| p < 0.05);
    verdict(
        (-50.0..=-20.0).contains(&wait) && p < 0.05 && !mortality_up,
        format!(
            "wait {wait:+.1}% (p {p:.2e}), mortality {:.3}% vs {:.3}% (p {:.3})",
            m.mean_intervention,
            m.mean_baseline,
            m.p_value.unwrap_or(f64::NAN)
        ),
    )
}

fn nurse_ratio(results: &StudyResults) -> Verdict {
    let cell = cell_for(results, InterventionKind::NurseRatio);
    let (los, _) = change(results, &cell, "los");
    let (wait, _) = change(results, &cell, "wait");
    let (lwbs, _) = change(results, &cell, "lwbs_pct");
    let blocked = results
        .arm(&cell, Arm::Intervention)
        .iter()
        .filter(|r| r.summary.counters.nurse_ratio_blocked_count > 0)
        .count();
    verdict(
        los.abs() < 10.0 && wait.abs() < 15.0 && lwbs < -20.0 && blocked >= 1,
        format!("LoS {los:+.1}%, wait {wait:+.1}%, LWBS {lwbs:+.1}%, replications with blocks {blocked}"),
    )
}

fn high_volume_baselines(results: &StudyResults) -> Vec<Cell> {
    results
        .matrix
        .cells()
        .into_iter()
        .filter(|c| c.baseline == Baseline::HighVolume && c.size == EdSize::Medium)
        .collect()
}

fn calibration(results: &StudyResults) -> Verdict {
    let runs: Vec<_> = high_volume_baselines(results)
        .iter()
        .flat_map(|c| results.arm(c, Arm::Baseline))
        .collect();
    let lwbs = runs.iter().map(|r| r.summary.lwbs_rate).sum::<f64>() / runs.len() as f64;
    let los = runs
        .iter()
        .map(|r| r.summary.los.mean.unwrap_or(f64::NAN))
        .sum::<f64>()
        / runs.len() as f64;
    verdict(
        (5.0..=15.0).contains(&lwbs) && (150.0..=280.0).contains(&los),
        format!(
            "LWBS {lwbs:.2}%, mean LoS {los:.1} min over {} baseline runs",
            runs.len()
        ),
    )
}

fn bottleneck(results: &StudyResults) -> Verdict {
    let mut pass = true;
    let mut details = Vec::new();
    for cell in high_volume_baselines(results) {
        let runs = results.arm(&cell, Arm::Baseline);
        let mut sums: BTreeMap<ResourceKind, f64> = BTreeMap::new();
        for r in &runs {
            for (k, v) in &r.summary.wait_breakdown {
                *sums.entry(*k).or_default() += v / runs.len() as f64;
            }
        }
        let (top, minutes) = sums
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, v)| (*k, *v))
            .unwrap_or((ResourceKind::Equipment, f64::NAN));
        pass &= top == ResourceKind::ExamRoom;
        details.push(format!(
            "{}: {} {minutes:.1} min",
            cell.label(),
            top.as_str()
        ));
    }
    verdict(pass && !details.is_empty(), details.join(", "))
}

fn main() -> ExitCode {
    let began = Instant::now();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, v: Verdict| {
        println!(
            "criterion {n:>2} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "determinism", determinism());
    report(2, "seed isolation", seed_isolation());
    report(3, "conservation", conservation());
    report(4, "arrival calibration", nhpp_calibration());
    report(5, "kernel properties", kernel_properties());
    report(6, "fatigue endpoints", fatigue_endpoints());
    report(7, "mortality multipliers", mortality_multipliers());
    report(8, "statistics", statistics());
    report(9, "intervention counters", intervention_counters());
    let study_began = Instant::now();
    let results = run_study(&ScenarioMatrix::desk(), &StudyOptions::default(), &|_| {})
        .expect("desk study runs");
    let study_time = study_began.elapsed();
    report(10, "fast track", fast_track(&results));
    report(11, "split flow", split_flow(&results));
    report(12, "nurse ratio", nurse_ratio(&results));
    report(13, "high volume calibration", calibration(&results));
    report(14, "exam room bottleneck", bottleneck(&results));
    println!(
        "desk study {} runs in {:.1}s, total {:.1}s",
        results.runs.len(),
        study_time.as_secs_f64(),
        began.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
