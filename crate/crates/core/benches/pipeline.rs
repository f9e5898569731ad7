//! Criterion benchmarks for the render and objective hot paths.
//!
//! The core is data-parallel over image rows (rayon) with a sequential
//! fallback behind the `parallel` feature. The two modes compile to
//! different binaries, so run the suite once per mode and let criterion's
//! saved baselines carry the comparison:
//!
//! ```text
//! cargo bench -p sculpt-core -- --save-baseline parallel
//! cargo bench -p sculpt-core --no-default-features -- --save-baseline sequential
//! # then compare the two baselines, e.g. with critcmp, or open
//! # target/criterion/report/index.html
//! ```
//!
//! Forward and backward rendering dominate every pipeline stage; the
//! objective benchmark measures one full gradient evaluation (three renders
//! plus backward passes) as driven by the optimizer loop.

use criterion::{criterion_group, criterion_main, Criterion};

use sculpt_core::diffusion::PromptTarget;
use sculpt_core::pipeline::{compose_objective_at, draw_objective};
use sculpt_core::scene::{
    render, render_backward, CameraPose, RenderQuality, SceneGenerator,
};
use sculpt_core::{seeds, LatentCode, ObjectiveSpec, PipelineContext, PipelineSettings};

fn render_fixture(size: usize) -> (SceneGenerator, LatentCode, CameraPose, RenderQuality) {
    let g = SceneGenerator::with_defaults(7);
    let mut rng = seeds::stream_rng(7, 990);
    let w = g.sample_latent(&mut rng);
    (g, w, CameraPose::frontal(size), RenderQuality::default())
}

fn bench_render_forward(c: &mut Criterion) {
    for size in [32usize, 64] {
        let (g, w, pose, q) = render_fixture(size);
        c.bench_function(&format!("render_forward_{size}px"), |b| {
            b.iter(|| render(&g, &w, &pose, &q).unwrap())
        });
    }
}

fn bench_render_backward(c: &mut Criterion) {
    let (g, w, pose, q) = render_fixture(32);
    let view = render(&g, &w, &pose, &q).unwrap();
    let n = view.pixel_count();
    let d_rgb = vec![[1.0 / n as f64; 3]; n];
    let d_zero = vec![[0.0; 3]; n];
    c.bench_function("render_backward_32px", |b| {
        b.iter(|| render_backward(&g, &w, &pose, &q, &d_rgb, &d_zero, &d_zero).unwrap())
    });
}

fn bench_objective(c: &mut Criterion) {
    let mut ctx = PipelineContext::build(PipelineSettings {
        weights_seed: 7,
        image_size: 32,
        quality: RenderQuality {
            samples_per_ray: 16,
            ..RenderQuality::default()
        },
        stats_samples: 64,
        ..PipelineSettings::default()
    })
    .unwrap();
    let mut rng = seeds::stream_rng(7, 991);
    let code = ctx.generator.sample_latent(&mut rng);
    let pose = ctx.frontal_pose();
    let img = render(&ctx.generator, &code, &pose, ctx.quality())
        .unwrap()
        .rgb()
        .to_vec();
    let mu = ctx.latent_encoder.encode(&img).unwrap();
    ctx.bank.insert("bench", PromptTarget::new(mu, 1.0).unwrap());
    let spec = ObjectiveSpec::edit("bench", img, pose);
    let w = ctx.mean_latent();
    let mut draw_rng = seeds::stream_rng(7, 992);
    let draws = draw_objective(&spec, &ctx, &mut draw_rng);
    c.bench_function("objective_grad_32px", |b| {
        b.iter(|| compose_objective_at(&ctx, &w, &spec, &draws).unwrap())
    });
}

criterion_group!(benches, bench_render_forward, bench_render_backward, bench_objective);
criterion_main!(benches);
