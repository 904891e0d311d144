use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use canonica_bench::{benchmark, flight, plant_grid};
use canonica_core::canonical::deform_image;
use canonica_core::capture::simulate_flight;
use canonica_core::flow::estimate_flow;
use canonica_core::mesh::marching_cubes;
use canonica_core::metrics::ssim;
use canonica_core::splat::{photometric_loss_grad, render, render_gradients, train};

fn splat(c: &mut Criterion) {
    let fx = benchmark();
    let cam = &fx.data.cameras[0];
    let target = &fx.data.observed[0];
    let bg = fx.setup.train.background;

    let mut g = c.benchmark_group("splat");
    g.bench_function("render_64", |b| b.iter(|| render(black_box(&fx.init), cam, bg)));
    let image = render(&fx.init, cam, bg);
    let (_, dl) = photometric_loss_grad(&image, target, 0.2).unwrap();
    g.bench_function("loss_grad_64", |b| b.iter(|| photometric_loss_grad(black_box(&image), target, 0.2).unwrap()));
    g.bench_function("backward_64", |b| b.iter(|| render_gradients(black_box(&fx.init), cam, bg, &dl)));
    g.sample_size(10);
    let mut cfg = fx.setup.train.clone();
    cfg.steps = 50;
    g.bench_function("train_50_steps_30_views", |b| {
        b.iter(|| train(&fx.data.observed, &fx.data.cameras, black_box(&fx.init), &cfg).unwrap())
    });
    g.finish();
}

fn flow(c: &mut Criterion) {
    let fx = benchmark();
    let (a, b_img) = (&fx.data.canonical[3], &fx.data.observed[3]);
    let mut g = c.benchmark_group("flow");
    for ds in [1, 2] {
        let mut cfg = fx.setup.loop_cfg.flow.clone();
        cfg.downsample = ds;
        g.bench_with_input(BenchmarkId::new("estimate_64", ds), &cfg, |b, cfg| {
            b.iter(|| estimate_flow(black_box(a), b_img, cfg).unwrap())
        });
    }
    let f = estimate_flow(a, b_img, &fx.setup.loop_cfg.flow).unwrap();
    g.bench_function("deform_64", |b| b.iter(|| deform_image(black_box(b_img), &f).unwrap()));
    g.bench_function("ssim_64", |b| b.iter(|| ssim(black_box(a), b_img).unwrap()));
    g.finish();
}

fn mesh(c: &mut Criterion) {
    let fx = benchmark();
    let mut g = c.benchmark_group("mesh");
    g.sample_size(10);
    for res in [32, 64, 128] {
        let grid = plant_grid(&fx, res);
        g.bench_with_input(BenchmarkId::new("marching_cubes", res), &grid, |b, grid| {
            b.iter(|| marching_cubes(black_box(grid), 0.5).unwrap())
        });
    }
    g.bench_function("opacity_grid_64", |b| b.iter(|| plant_grid(black_box(&fx), 64)));
    g.finish();
}

fn capture(c: &mut Criterion) {
    let (board, plan, cfg) = flight();
    let mut g = c.benchmark_group("capture");
    g.sample_size(10);
    g.bench_function("windy_flight_100_waypoints", |b| {
        b.iter(|| simulate_flight(&board, black_box(&plan), &cfg, 3).unwrap())
    });
    g.finish();
}

criterion_group!(benches, splat, flow, mesh, capture);
criterion_main!(benches);
