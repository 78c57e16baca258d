//! Mean processing time of one analysis window per estimator and width.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rlbf_core::basis::hypermodel_basis;
use rlbf_core::sim::{gen_channel, gen_noise, gen_output, gen_qpsk};
use rlbf_core::{
    BankConfig, BankTracker, ChannelConfig, Frame, InitMethod, LadConfig, LadTracker, LbfTracker, LevelSolver, MPolicy,
    NoiseConfig, Tracker, TrimConfig, TrimmedTracker,
};

const WIDTHS: [usize; 3] = [51, 151, 301];
const FRAMES: usize = 400;

fn frames(width: usize) -> Vec<Frame> {
    let channel = ChannelConfig::default();
    let len = FRAMES + width;
    let noise = NoiseConfig::ContaminatedGaussian { sigma1_sq: 0.032, sigma2_sq: 32.0, epsilon: 0.1 };
    let u = gen_qpsk(len, 1);
    let theta = gen_channel(&channel, len, 1).unwrap();
    let y = gen_output(&u, &theta, &gen_noise(&noise, len, 1).unwrap());
    let half = width / 2;
    (half..len - half).map(|t| Frame::from_stream(&u, &y, t, half, channel.n).unwrap()).collect()
}

fn trackers(width: usize) -> Vec<(&'static str, Box<dyn Tracker>)> {
    let channel = ChannelConfig::default();
    let n = channel.n;
    let basis = hypermodel_basis(&channel.hypermodel().unwrap(), width, width / n).unwrap();
    let policy = MPolicy::Known { sigma_e_sq: 0.032, sigma_theta_sq: channel.sigma_theta_sq() };
    let bank = |solver| {
        let mut cfg = BankConfig::standard(width).unwrap();
        cfg.solver = solver;
        Box::new(BankTracker::new(&basis, n, cfg, policy, 0.99, InitMethod::Lad).unwrap()) as Box<dyn Tracker>
    };
    vec![
        ("lbf", Box::new(LbfTracker::new(&basis, n, policy, 0.99).unwrap())),
        (
            "trimmed",
            Box::new(
                TrimmedTracker::new(
                    &basis,
                    n,
                    TrimConfig::from_mu(0.05, width).unwrap(),
                    policy,
                    0.99,
                    InitMethod::Lad,
                )
                .unwrap(),
            ),
        ),
        ("bank", bank(LevelSolver::Refactor)),
        ("bank-woodbury", bank(LevelSolver::Woodbury)),
        ("lad", Box::new(LadTracker::new(&basis, n, LadConfig::default(), policy, 0.99).unwrap())),
    ]
}

fn per_frame(c: &mut Criterion) {
    let mut group = c.benchmark_group("frame");
    for width in WIDTHS {
        let frames = frames(width);
        for (name, mut tracker) in trackers(width) {
            // settle the basis count before measuring
            for frame in &frames[..width] {
                tracker.step(frame).unwrap();
            }
            let mut next = 0;
            group.bench_with_input(BenchmarkId::new(name, width), &frames, |b, frames| {
                b.iter(|| {
                    let step = tracker.step(&frames[next]).unwrap();
                    next = (next + 1) % frames.len();
                    black_box(step)
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, per_frame);
criterion_main!(benches);
