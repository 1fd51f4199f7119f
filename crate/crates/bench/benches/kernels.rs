use criterion::{black_box, criterion_group, criterion_main, Criterion};

use thermoflow::flow::{
    lorenz_cloud, Flow, OdeFlow, Potential, RegionLabel, Sft, SymPoint, SymbolicSuspension,
};
use thermoflow::partition::{partition_sum, phi_eps, PartitionOptions};
use thermoflow::segments::{bowen_distance, CylinderSlices, OrbitSegment};
use thermoflow::specification::{Glue, GlueParams, SearchBudget};
use thermoflow::Neighborhood;

fn bernoulli() -> Potential {
    Potential::FirstSymbol {
        values: vec![0.7f64.ln(), 0.3f64.ln()],
    }
}

fn symbolic(c: &mut Criterion) {
    let f = SymbolicSuspension::full_shift(2, 1.0, 0.01).unwrap();
    let x = SymPoint::new(vec![0, 1, 1, 0, 1, 0, 0, 1], 0, 0.3);
    let y = SymPoint::new(vec![0, 1, 1, 0, 1, 1, 0, 1], 0, 0.31);
    c.bench_function("symbolic/distance", |b| {
        b.iter(|| f.distance(black_box(&x), black_box(&y)))
    });
    c.bench_function("symbolic/bowen_t16", |b| {
        b.iter(|| bowen_distance(&f, black_box(&x), black_box(&y), 16.0, None).unwrap())
    });
    c.bench_function("symbolic/phi_eps_t16", |b| {
        b.iter(|| phi_eps(&f, &bernoulli(), black_box(&x), 16.0, 0.05, 16, 7).unwrap())
    });
    let mut group = c.benchmark_group("symbolic/partition_sum");
    group.sample_size(10);
    for t in [8.0, 12.0] {
        group.bench_function(format!("t{t}"), |b| {
            b.iter(|| {
                partition_sum(
                    &f,
                    &bernoulli(),
                    &CylinderSlices(RegionLabel::Lambda),
                    0.002,
                    0.0,
                    t,
                    &PartitionOptions::default(),
                )
                .unwrap()
                .log_lambda
            })
        });
    }
    group.finish();
}

fn glue(c: &mut Criterion) {
    let f = SymbolicSuspension::new(Sft::golden_mean(), vec![1.0, 1.0], 0.01).unwrap();
    let segs: Vec<_> = [vec![0, 1, 0], vec![0, 0, 1], vec![0, 1]]
        .into_iter()
        .map(|w| OrbitSegment::new(SymPoint::new(w, 0, 0.0), 4.0))
        .collect();
    let params = GlueParams {
        delta: 0.05,
        tau_max: 3.0,
        t0: 1.0,
        container: Neighborhood::new(RegionLabel::U, f.region(RegionLabel::U)),
        budget: SearchBudget::default(),
        n_samples: None,
    };
    c.bench_function("symbolic/glue_3", |b| {
        b.iter(|| f.glue(black_box(&segs), &params).unwrap())
    });
}

fn ode(c: &mut Criterion) {
    let f = OdeFlow::lorenz();
    let x = lorenz_cloud(&f, 2, 20.0, 0.01).unwrap();
    c.bench_function("lorenz/evolve_1", |b| {
        b.iter(|| f.evolve(black_box(&x[0]), 1.0).unwrap())
    });
    c.bench_function("lorenz/bowen_1", |b| {
        b.iter(|| bowen_distance(&f, black_box(&x[0]), black_box(&x[1]), 1.0, None).unwrap())
    });
}

criterion_group!(benches, symbolic, glue, ode);
criterion_main!(benches);
