use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use echolab::acoustics::{simulate_echo, AcousticsConfig};
use echolab::autodiff::{Conv2d, ParamStore, Tape, Tensor};
use echolab::dsp::{convolve_fft, fft, stft_log_magnitude, StftParams};
use echolab::render::{depth_to_normals, render_rgbd, Camera};
use echolab::scene::{generate_scene, navigable_poses, GridSpec, SceneGenConfig};

fn bench_fft(c: &mut Criterion) {
    let mut rng = Pcg32::seed_from_u64(1);
    let mut g = c.benchmark_group("fft");
    for n in [64usize, 512, 4096] {
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| fft(black_box(x)).unwrap()));
    }
    g.finish();
    let a: Vec<f64> = (0..2646).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..132).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("convolve_fft 2646x132", |b| b.iter(|| convolve_fft(black_box(&a), black_box(&k))));
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = Pcg32::seed_from_u64(2);
    let mut g = c.benchmark_group("conv2d");
    for (cin, cout, hw, k, s, p) in [(3usize, 16usize, 64usize, 4usize, 2usize, 1usize), (64, 32, 16, 3, 1, 1)] {
        let mut store = ParamStore::<f32>::new();
        let conv = Conv2d::new(&mut store, "c", cin, cout, k, s, p, &mut rng);
        let data: Vec<f32> = (0..8 * cin * hw * hw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(&[8, cin, hw, hw], data).unwrap();
        let id = format!("{cin}->{cout} {hw}x{hw} k{k}s{s}");
        g.bench_function(BenchmarkId::new("forward_backward", &id), |b| {
            b.iter(|| {
                let mut tape = Tape::new(&store);
                let xi = tape.input(x.clone());
                let y = conv.forward(&mut tape, xi).unwrap();
                let l = tape.sum(y).unwrap();
                black_box(tape.backward(l).unwrap());
            })
        });
    }
    g.finish();
}

fn bench_render(c: &mut Criterion) {
    let scene = generate_scene(3, &SceneGenConfig::default()).unwrap();
    let pose = navigable_poses(&scene, &GridSpec::default())[0];
    let cam = Camera::default();
    c.bench_function("render_rgbd 64x64", |b| b.iter(|| render_rgbd(&scene, black_box(&pose), &cam).unwrap()));
    let (_, depth) = render_rgbd(&scene, &pose, &cam).unwrap();
    c.bench_function("depth_to_normals 64x64", |b| b.iter(|| depth_to_normals(black_box(&depth), &cam)));
}

fn bench_echo(c: &mut Criterion) {
    let scene = generate_scene(4, &SceneGenConfig::default()).unwrap();
    let pose = navigable_poses(&scene, &GridSpec::default())[0];
    let cfg = AcousticsConfig::default();
    let chirp = cfg.chirp().unwrap();
    c.bench_function("simulate_echo order 3", |b| {
        b.iter(|| simulate_echo(&scene, black_box(&pose), &chirp, cfg.clip, &cfg).unwrap())
    });
    let wave = simulate_echo(&scene, &pose, &chirp, cfg.clip, &cfg).unwrap();
    let params = StftParams::default();
    c.bench_function("stft_log_magnitude 60ms", |b| b.iter(|| stft_log_magnitude(black_box(&wave), &params).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_fft, bench_conv, bench_render, bench_echo
}
criterion_main!(benches);
