use caen_core::data::{
    Dataset, SyntheticWorld, SyntheticWorldConfig, TrainingSample, TruncationConfig,
};
use caen_core::model::{ctr_loss, Ablation, CaenModel, ModelConfig, Vocab};
use caen_core::nn::{Graph, MultiHeadAttention, ParamStore};
use caen_core::tensor::Tensor;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256, 512] {
        let (a, b) = (random(&mut rng, &[n, n]), random(&mut rng, &[n, n]));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::projected(&mut store, "att", 2, 32, 32, 32, 16, 16, 32, &mut rng);
    let (groups, keys) = (256, 50);
    let q = random(&mut rng, &[groups, 1, 32]);
    let kv = random(&mut rng, &[groups, keys, 32]);
    let mask: Vec<bool> = (0..groups * keys)
        .map(|i| i % keys < 1 + (i / keys) % keys)
        .collect();
    c.bench_function("attention/forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store, true);
            let (q, k) = (g.constant(q.clone()), g.constant(kv.clone()));
            let out = mha.forward(&mut g, q, k, k, &mask).unwrap();
            let loss = g.tape.sum_all(out.out).unwrap();
            black_box(g.param_grads(loss).unwrap())
        })
    });
}

fn model_step(c: &mut Criterion) {
    let world = SyntheticWorld::generate(&SyntheticWorldConfig {
        n_users: 400,
        n_items: 200,
        exposures: 3000,
        ..Default::default()
    })
    .unwrap();
    let ds: Dataset = world.into();
    let vocab = Vocab::from_catalog(&ds.users, &ds.items);
    let split = ds.samples(&TruncationConfig::default()).unwrap();
    let batch: Vec<&TrainingSample> = split.train.iter().take(256).collect();
    let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let mut group = c.benchmark_group("model/forward_backward_256");
    group.sample_size(10);
    for a in [Ablation::Full, Ablation::Nh, Ablation::Ub] {
        let model = CaenModel::new(ModelConfig::default(), vocab, a, 3).unwrap();
        group.bench_function(a.name(), |bench| {
            bench.iter(|| {
                let mut g = Graph::new(&model.params, true);
                let out = model.forward(&mut g, &batch).unwrap();
                let loss = ctr_loss(&mut g, out.probs, &labels).unwrap();
                black_box(g.param_grads(loss).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, attention, model_step);
criterion_main!(benches);
