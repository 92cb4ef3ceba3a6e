use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use epic_rc::masks::{MaskKind, MaskSpec};
use epic_rc::trainer::{run_suite_sequential, RunConfig};

fn small_suite() -> Vec<RunConfig> {
    [MaskKind::Identity, MaskKind::Layernorm, MaskKind::VectorFilter, MaskKind::Epic]
        .into_iter()
        .map(|kind| {
            let mut c = RunConfig::default();
            c.bandit.noise_dim = 8;
            c.bandit.episode_len = 20;
            c.reservoir.n_unique = 8;
            c.reservoir.n_shared = 4;
            c.agent.n_hidden = 16;
            c.mask = MaskSpec::of_kind(kind);
            c.num_episodes = 10;
            c.eval_window = 10;
            c.seeds = vec![0, 1];
            c
        })
        .collect()
}

fn suites(c: &mut Criterion) {
    let configs = small_suite();
    let mut g = c.benchmark_group("run_suite");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("sequential", configs.len()), |b| {
        b.iter(|| run_suite_sequential(&configs))
    });
    #[cfg(feature = "parallel")]
    g.bench_function(BenchmarkId::new("parallel", configs.len()), |b| {
        b.iter(|| epic_rc::trainer::run_suite_parallel(&configs))
    });
    g.finish();
}

criterion_group!(benches, suites);
criterion_main!(benches);
