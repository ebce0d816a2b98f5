use std::path::PathBuf;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use uncert_cot::{
    default_few_shot, entropy_uncertainty, generate, pd_uncertainty, EngineConfig, Mode,
    ScenarioProvider, TokenDistribution, TruncationMode,
};

const MIN_PRODUCTS: &str = "def min_products(prices: list, n: int) -> int:\n    \"\"\"Return the minimum number of products whose prices add up to exactly n.\n    Every product may be bought any number of times; return -1 when no\n    combination reaches n.\n    >>> min_products([1, 3, 4], 6)\n    2\n    \"\"\"\n";

fn skewed(n: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|i| 1.0 / i as f64).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn measures(c: &mut Criterion) {
    let mut group = c.benchmark_group("uncertainty");
    let top5 = TokenDistribution::from_probs(&skewed(64)[..5], 32_000).unwrap();
    group.bench_function("entropy_top5_of_32000", |b| {
        b.iter(|| entropy_uncertainty(black_box(&top5), TruncationMode::ResidualUniform).unwrap())
    });
    for n in [5usize, 64, 1024] {
        let d = TokenDistribution::from_probs(&skewed(n), n).unwrap();
        group.bench_with_input(BenchmarkId::new("entropy_full", n), &d, |b, d| {
            b.iter(|| entropy_uncertainty(black_box(d), TruncationMode::ResidualUniform).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("pd", n), &d, |b, d| {
            b.iter(|| pd_uncertainty(black_box(d)))
        });
    }
    group.finish();
}

fn motivating(c: &mut Criterion) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/scenarios/motivating.json");
    let provider = ScenarioProvider::from_path(path).unwrap();
    let examples = default_few_shot();
    let mut group = c.benchmark_group("generate_motivating");
    for mode in [Mode::Greedy, Mode::Uncert] {
        let cfg = EngineConfig {
            mode,
            ..EngineConfig::default()
        };
        group.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| generate(&provider, black_box(MIN_PRODUCTS), &cfg, &examples).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, measures, motivating);
criterion_main!(benches);
