use std::hint::black_box;

use activecam_core::controllers::CnnController;
use activecam_core::nn::{self, Mode, Scale, Tensor};
use activecam_core::output_filter::WmaState;
use activecam_core::sequences::synth_sequence;
use activecam_core::simulator::{run_episode, CameraState};
use activecam_core::{ControlVector, SynthConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn batch(n: usize) -> Tensor {
    let len = n * 3 * 48 * 64;
    let data = (0..len).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    Tensor::from_vec(&[n, 3, 48, 64], data).unwrap()
}

fn network(c: &mut Criterion) {
    let (g, p) = nn::build_c3net(64, 48, Scale::Tiny, 1).unwrap();
    let x = batch(32);
    let y = vec![ControlVector { mx: 0.1, my: -0.1 }; 32];
    c.bench_function("tiny_forward_batch32", |b| {
        b.iter(|| nn::forward(&g, &p, black_box(&x), Mode::infer()).unwrap())
    });
    let train = Mode {
        batch_stats: true,
        dropout_seed: Some(7),
    };
    c.bench_function("tiny_forward_backward_batch32", |b| {
        b.iter(|| {
            let pass = nn::forward(&g, &p, black_box(&x), train).unwrap();
            nn::backward(&g, &p, &pass, &y).unwrap()
        })
    });
}

fn closed_loop(c: &mut Criterion) {
    let cfg = SynthConfig {
        frames: 100,
        targets: 2,
        ..SynthConfig::default()
    };
    let seq = synth_sequence(&cfg, 1).unwrap();
    let (g, p) = nn::build_c3net(64, 48, Scale::Tiny, 1).unwrap();
    let start = CameraState::centered_on_targets(&seq, 64.0, 48.0).unwrap();
    c.bench_function("cnn_episode_100_frames", |b| {
        b.iter(|| {
            let mut ctl = CnnController::new(g.clone(), p.clone(), Some(WmaState::new(3))).unwrap();
            run_episode(&seq, &mut ctl, start, None, None).unwrap()
        })
    });
}

criterion_group!(benches, network, closed_loop);
criterion_main!(benches);
