//! Sequential against rayon execution for the two hot paths: batched top-K
//! inference and the training-step matrix product.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use leal_core::data::generators::letter_style;
use leal_core::data::synthetic_feature_split;
use leal_core::par::Exec;
use leal_core::tensor::{RngStream, StreamLabel, Tape, Tensor};
use leal_core::training::{init_leal, leal_outputs, LealConfig};

fn policies() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn inference(c: &mut Criterion) {
    let (table, labels) = letter_style(2000, 4.0, 0).expect("generator");
    let bundle = synthetic_feature_split(&table, labels, &RngStream::new(0, StreamLabel::Synth), true).expect("split");
    let config = LealConfig::default();
    let (store, sampler, model) = init_leal(&bundle, &config).expect("init");
    let primary = bundle.primary.values.select_rows(&bundle.split.test);
    let secondary = &bundle.secondary.values;

    let mut group = c.benchmark_group("leal_outputs");
    group.sample_size(10);
    for (name, exec) in policies() {
        group.bench_function(name, |b| {
            b.iter(|| {
                leal_outputs(&store, &sampler, &model, &primary, secondary, config.k, config.batch_size, exec)
                    .expect("forward")
            })
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let mut rng = RngStream::new(1, StreamLabel::Init);
    let mut group = c.benchmark_group("tape_matmul");
    for n in [64usize, 256] {
        let a = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.normal()).collect()).expect("sized");
        let b = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.normal()).collect()).expect("sized");
        for (name, exec) in policies() {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| {
                    let mut tape = Tape::no_grad().with_exec(exec);
                    let x = tape.constant(a.clone());
                    let y = tape.constant(b.clone());
                    let z = tape.matmul(x, y).expect("shapes");
                    tape.value(z).sum()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, inference, matmul);
criterion_main!(benches);
