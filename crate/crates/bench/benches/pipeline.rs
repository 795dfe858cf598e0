use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use std::hint::black_box;
use uavap::ekf::{ekf_predict, ekf_update, EkfInputs, EkfParams, EkfState};
use uavap::raster::{canny, frame_difference, lk_track, render, CannyParams, LkParams};
use uavap::sensors::{CameraIntrinsics, PixelPoint};
use uavap_bench::{turbine_frames, turbine_sim};

fn vision(c: &mut Criterion) {
    let sim = turbine_sim();
    c.bench_function("render_640x480", |b| b.iter(|| render(black_box(&sim.scene), &sim.quad, &sim.k)));

    let (prev, next, bbox) = turbine_frames();
    let cp = CannyParams::default();
    c.bench_function("canny_in_box", |b| b.iter(|| canny(black_box(&next), &bbox, &cp)));
    c.bench_function("frame_difference", |b| b.iter(|| frame_difference(black_box(&next), &prev, 20)));

    let points: Vec<PixelPoint> = canny(&prev, &bbox, &cp).points.into_iter().step_by(4).take(100).collect();
    let lk = LkParams::default();
    c.bench_function("lk_track_100_points", |b| b.iter(|| lk_track(black_box(&prev), &next, &points, &lk)));
}

fn estimation(c: &mut Criterion) {
    let k = CameraIntrinsics::default();
    let p = EkfParams::default();
    let s = EkfState::init(60.0, &PixelPoint::new(330.0, 250.0), &k, &p);
    let inp = EkfInputs { omega: Vector3::new(0.01, -0.02, 0.005), v_c: Vector3::new(1.5, 0.1, -0.05) };
    c.bench_function("ekf_predict_update", |b| {
        b.iter(|| {
            let s = ekf_predict(black_box(&s), &inp, 0.08, &p);
            ekf_update(&s, &PixelPoint::new(331.0, 249.5), &k, &p)
        })
    });
}

fn mission(c: &mut Criterion) {
    let mut sim = turbine_sim();
    c.bench_function("sim_frame_80ms", |b| b.iter(|| sim.advance_frame().unwrap()));
}

criterion_group!(benches, vision, estimation, mission);
criterion_main!(benches);
