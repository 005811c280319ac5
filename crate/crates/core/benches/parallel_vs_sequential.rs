use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mimicry_core::classifier::{cross_validate, train_forest, ForestConfig, LabeledSample};
use mimicry_core::exec::Execution;
use mimicry_core::lex::default_idioms;
use mimicry_core::mutate::{generate_all, GenerateConfig, LexicalValidator, SourceUnit};
use mimicry_core::predictor::BuiltinPredictor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn samples(n: usize, dim: usize) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            LabeledSample {
                mutant_id: format!("m{i}"),
                group_id: format!("g{}", i % 20),
                truth: features[0] + features[1] * features[2] > 0.2,
                features,
            }
        })
        .collect()
}

fn source(methods: usize) -> String {
    let mut s = String::from("class Buffer {\n  int[] data;\n  int limit;\n");
    for m in 0..methods {
        s.push_str(&format!(
            "  int read{m}(int pos) {{\n    if (pos < 0 || pos >= limit + {m}) {{ return -1; }}\n    return data[pos] * {m} + this.limit;\n  }}\n"
        ));
    }
    s.push_str("}\n");
    s
}

fn forest(c: &mut Criterion) {
    let data = samples(1000, 16);
    let cfg = ForestConfig {
        n_trees: 50,
        seed: 3,
        ..ForestConfig::default()
    };
    let mut g = c.benchmark_group("train_forest");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train_forest(&data, &cfg, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("cross_validate");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| cross_validate(&data, 5, 7, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn mutants(c: &mut Criterion) {
    let unit = SourceUnit::new("src/Buffer.java", &source(40), &default_idioms()).unwrap();
    let cfg = GenerateConfig::default();
    let mut g = c.benchmark_group("generate_all");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| generate_all(&unit, &BuiltinPredictor, &LexicalValidator, &cfg, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, forest, mutants);
criterion_main!(benches);
