use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mvrm_core::encoding::{vlad_encode, Codebook};
use mvrm_core::recurrent::{gru_step, unroll, CouplingMode, GruWeights, MgruConfig, MgruState, MgruWeights};
use mvrm_core::{Graph, ParamStore, RngState, Tensor};

fn random(rng: &mut RngState, r: usize, c: usize) -> Tensor<f32> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_nt");
    let mut rng = RngState::new(0);
    for n in [64, 256] {
        let a = random(&mut rng, 16, n);
        let w = random(&mut rng, 3 * n, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(a.matmul_nt(&w)))
        });
    }
    group.finish();
}

fn bench_recurrent(c: &mut Criterion) {
    let mut rng = RngState::new(1);
    let (batch, input, cell, steps) = (16, 64, 64, 30);
    let xs: Vec<Tensor<f32>> = (0..steps).map(|_| random(&mut rng, batch, input)).collect();

    let mut gru_store = ParamStore::<f32>::new();
    let gru = GruWeights::new(&mut gru_store, "gru", input, cell, cell, &mut rng).unwrap();
    c.bench_function("gru_unroll_fwd_bwd", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let mut h = g.constant(Tensor::zeros(&[batch, cell]));
            let mut last = h;
            for x in &xs {
                let xn = g.constant(x.clone());
                let (h1, o) = gru_step(&mut g, &gru_store, &gru, xn, h).unwrap();
                h = h1;
                last = o;
            }
            let loss = g.sum_all(last);
            g.backward(loss, &mut gru_store).unwrap();
        })
    });

    for mode in [CouplingMode::FastToSlow, CouplingMode::SlowToFast] {
        let mut store = ParamStore::<f32>::new();
        let cfg = MgruConfig::split_evenly(cell, vec![1, 3, 6], mode).unwrap();
        let w = MgruWeights::new(&mut store, "enc", cfg, input, cell, &mut rng).unwrap();
        c.bench_function(&format!("mgru_unroll_fwd_bwd/{mode:?}"), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let xn: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
                let init = MgruState::zeros(&mut g, batch, cell);
                let run = unroll(&mut g, &store, &w, &xn, init).unwrap();
                let loss = g.sum_all(*run.outputs.last().unwrap());
                g.backward(loss, &mut store).unwrap();
            })
        });
    }
}

fn bench_vlad(c: &mut Criterion) {
    let mut rng = RngState::new(2);
    let data: Vec<f64> = (0..400 * 22).map(|_| rng.normal()).collect();
    let x = Tensor::matrix(400, 22, data).unwrap();
    let book = Codebook::fit(&x, 32, 256, 10, &mut rng).unwrap();
    let clip = Tensor::matrix(150, 22, x.data()[..150 * 22].to_vec()).unwrap();
    c.bench_function("vlad_encode_150x22_k32", |b| b.iter(|| black_box(vlad_encode(&clip, &book).unwrap())));
}

criterion_group!(benches, bench_matmul, bench_recurrent, bench_vlad);
criterion_main!(benches);
