use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use permlll_core::par::Execution;
use permlll_core::pdc::SetSpec;
use permlll_core::pdc_sampler::{mcmc_batch, SamplerConfig};
use permlll_core::prp::{max_zeros_per_line, PrpInstance};
use permlll_core::prp_sampler::{count_approx_with, sample_exact_batch};
use permlll_core::rng::stream;
use permlll_core::PdcFormula;

/// Zeros on the first `cap` cyclic diagonals.
fn dense(n: usize) -> PrpInstance {
    let cap = max_zeros_per_line(n);
    let zeros: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..cap).map(move |d| (i, (i + d) % n)))
        .collect();
    PrpInstance::from_zeros(n, &zeros).unwrap()
}

fn toy() -> PdcFormula {
    let set = |name: &str, p: &str| -> SetSpec {
        (
            name.into(),
            (0..4).map(|i| format!("{p}{i}")).collect(),
            (0..4).collect(),
        )
    };
    PdcFormula::new(
        vec![set("A", "a"), set("B", "b")],
        vec![
            vec![("a0".into(), 0), ("b0".into(), 0)],
            vec![("a1".into(), 2), ("b2".into(), 1)],
            vec![("a3".into(), 3), ("b1".into(), 3)],
        ],
    )
    .unwrap()
}

const MODES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

fn exact_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_exact_batch");
    g.sample_size(10);
    for n in [50usize, 200] {
        let inst = dense(n);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n), &inst, |b, inst| {
                b.iter(|| black_box(sample_exact_batch(inst, 64, 1, exec).unwrap()))
            });
        }
    }
    g.finish();
}

fn counting(c: &mut Criterion) {
    let mut g = c.benchmark_group("count_approx");
    g.sample_size(10);
    let inst = dense(14);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(count_approx_with(&inst, 0.2, 0.1, &mut stream(3), exec).unwrap()))
        });
    }
    g.finish();
}

fn chains(c: &mut Criterion) {
    let mut g = c.benchmark_group("mcmc_batch");
    g.sample_size(10);
    let f = toy();
    let cfg = SamplerConfig {
        force_regime: true,
        ..Default::default()
    };
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(mcmc_batch(&f, &cfg, 200, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, exact_batch, counting, chains);
criterion_main!(benches);
