use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ctiqa_core::ctsim::{fbp, generate_phantom, project, DEFAULT_FOV_CM, MU_WATER};
use ctiqa_core::diffusion::{make_schedule, DenoiserSpec, NoisePredictor, TinyUnet};
use ctiqa_core::dissim::ssim_map;
use ctiqa_core::evaluator::{Evaluator, EvaluatorConfig};
use ctiqa_core::image::Image;
use ctiqa_core::numerics::{Tape, Tensor};

fn conv2d(c: &mut Criterion) {
    let x = Tensor::<f32>::from_fn(&[16, 32, 32], |i| (i % 7) as f32 * 0.1);
    let w = Tensor::<f32>::from_fn(&[16, 16, 3, 3], |i| (i % 5) as f32 * 0.01);
    c.bench_function("conv2d 16x32x32 k3", |b| {
        b.iter(|| {
            let mut tape = Tape::inference();
            let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
            black_box(tape.conv2d(xv, wv, None, 1, 1).unwrap());
        })
    });
}

fn filtered_backprojection(c: &mut Criterion) {
    let phantom = generate_phantom(1, 6).unwrap();
    let sino = project(&phantom, 180, 96, MU_WATER).unwrap();
    c.bench_function("fbp 180 views to 64x64", |b| {
        b.iter(|| black_box(fbp(&sino, 64, DEFAULT_FOV_CM, MU_WATER).unwrap()))
    });
}

fn ssim(c: &mut Criterion) {
    let a = Image::from_fn(64, 64, |i, j| ((i * 7 + j * 3) % 17) as f32 / 17.0);
    let b2 = Image::from_fn(64, 64, |i, j| ((i * 5 + j * 11) % 13) as f32 / 13.0);
    c.bench_function("ssim map 64x64", |b| b.iter(|| black_box(ssim_map(&a, &b2).unwrap())));
}

fn unet(c: &mut Criterion) {
    let model = TinyUnet::<f32>::new(DenoiserSpec::tiny_unet(8, 2), 0).unwrap();
    let sched = make_schedule(200, 1e-4, 0.02).unwrap();
    let x = vec![0.3f32; 32 * 32];
    let y = vec![0.5f32; 32 * 32];
    c.bench_function("tiny unet w8 forward 32x32", |b| {
        b.iter(|| black_box(model.predict_noise(&x, &y, (32, 32), 100, &sched).unwrap()))
    });
}

fn evaluator(c: &mut Criterion) {
    let model = Evaluator::<f32>::new(EvaluatorConfig::default(), 0).unwrap();
    let chw = vec![0.5f32; 3 * 32 * 32];
    c.bench_function("evaluator forward 3x32x32", |b| b.iter(|| black_box(model.predict_chw(&chw).unwrap())));
}

criterion_group!(benches, conv2d, filtered_backprojection, ssim, unet, evaluator);
criterion_main!(benches);
