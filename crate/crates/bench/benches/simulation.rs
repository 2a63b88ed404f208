use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use edsim::config::{Baseline, EdSize};
use edsim::des_kernel::{
    Admission, PoolId, Request, Requirement, ResourceKind, ResourceManager, SimTime,
};
use edsim::experiments::{cohens_d, welch_t};
use edsim::interventions::InterventionKind;
use edsim::ledger_replay::{encode_checkpoint, Checkpoint};
use edsim::population::{generate_arrivals, ArrivalProfile, ConditionTable, EsiDistribution};
use edsim::sim::Simulation;
use edsim_bench::scenario;

fn whole_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_one_day");
    g.sample_size(20);
    let arms = [
        (
            "medium_standard",
            EdSize::Medium,
            Baseline::Standard,
            vec![],
        ),
        (
            "medium_high_volume",
            EdSize::Medium,
            Baseline::HighVolume,
            vec![],
        ),
        (
            "medium_high_volume_all_interventions",
            EdSize::Medium,
            Baseline::HighVolume,
            InterventionKind::ALL.to_vec(),
        ),
        (
            "xlarge_standard",
            EdSize::Xlarge,
            Baseline::Standard,
            vec![],
        ),
    ];
    for (name, size, baseline, kinds) in arms {
        let ctx = scenario(size, baseline, &kinds, 1440);
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut sim = Simulation::new(ctx.clone());
                sim.run();
                black_box(sim.summary())
            })
        });
    }
    g.finish();
}

fn checkpoints(c: &mut Criterion) {
    let ctx = scenario(EdSize::Medium, Baseline::HighVolume, &[], 1440);
    let mut sim = Simulation::new(ctx.clone());
    sim.run_until(SimTime(720));
    let bytes = encode_checkpoint(&sim, 12);
    c.bench_function("checkpoint_encode", |b| {
        b.iter(|| black_box(encode_checkpoint(&sim, 12)))
    });
    c.bench_function("checkpoint_restore", |b| {
        b.iter(|| {
            black_box(
                Checkpoint::from_bytes(&bytes)
                    .and_then(|ck| ck.restore(ctx.clone()))
                    .unwrap(),
            )
        })
    });
}

fn kernel(c: &mut Criterion) {
    c.bench_function("kernel_service_500_compound_requests", |b| {
        b.iter_batched(
            || {
                let mut m = ResourceManager::default();
                let pools: Vec<PoolId> = (0..8)
                    .map(|i| m.add_pool(format!("p{i}"), ResourceKind::ExamRoom, 3, true))
                    .collect();
                for r in 0..500u64 {
                    let a = pools[(r % 8) as usize];
                    let b = pools[((r * 3 + 1) % 8) as usize];
                    let req = Request::compound(
                        r,
                        (r % 5 + 1) as u8,
                        vec![Requirement::any([a, b]), Requirement::any([b])],
                    );
                    m.enqueue(req, SimTime(r)).unwrap();
                }
                m
            },
            |mut m| black_box(m.service(SimTime(500), &mut |_, _, _| Admission::Grant)),
            BatchSize::SmallInput,
        )
    });
}

fn arrivals(c: &mut Criterion) {
    let profile = ArrivalProfile::new(8.0);
    let esi = EsiDistribution::default();
    let conditions = ConditionTable::default();
    c.bench_function("arrivals_seven_days", |b| {
        b.iter(|| {
            black_box(generate_arrivals(
                SimTime(7 * 1440),
                &profile,
                &esi,
                &conditions,
                3,
            ))
        })
    });
}

fn statistics(c: &mut Criterion) {
    let a: Vec<f64> = (0..30).map(|i| 200.0 + (i * 37 % 23) as f64).collect();
    let b: Vec<f64> = (0..30).map(|i| 170.0 + (i * 41 % 29) as f64).collect();
    c.bench_function("welch_and_cohens_d_n30", |bench| {
        bench.iter(|| black_box((welch_t(&a, &b).unwrap(), cohens_d(&a, &b).unwrap())))
    });
}

criterion_group!(
    benches,
    whole_runs,
    checkpoints,
    kernel,
    arrivals,
    statistics
);
criterion_main!(benches);
