//! Timings for the hot paths: LSTM forward/backward, max-min pooling,
//! and linear SVM training.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelseq_core::lstm::{backward_through_time, compute_loss, forward_sequence, LossOptions};
use skelseq_core::normalize::NormalizedSequence;
use skelseq_core::region::{maxmin_pool, RegionFrameDescriptor};
use skelseq_core::svm::train_ovr;
use skelseq_core::LstmParams;

fn bench_sequence(t: usize, dim: usize) -> NormalizedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    NormalizedSequence {
        id: "bench".into(),
        subject: 1,
        label: 1,
        vectors: (0..t).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        mask: vec![true; t],
    }
}

fn lstm_benches(c: &mut Criterion) {
    let dim = 24;
    let seq = bench_sequence(50, dim);
    let params = LstmParams::init(dim, &[64, 64, 64], 4, 7).unwrap();
    let opts = LossOptions::many_to_many();

    c.bench_function("lstm_forward_t50_h64x3", |b| {
        b.iter(|| forward_sequence(&seq, &params, 0.0, false, 0).unwrap())
    });

    let tapes = vec![forward_sequence(&seq, &params, 0.0, true, 0).unwrap()];
    let labels = vec![seq.label];
    c.bench_function("lstm_backward_t50_h64x3", |b| {
        b.iter(|| {
            let _loss = compute_loss(&tapes, &labels, opts).unwrap();
            backward_through_time(&tapes, &labels, opts, &params).unwrap()
        })
    });
}

fn pooling_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<RegionFrameDescriptor> = (0..64)
        .map(|f| RegionFrameDescriptor {
            sample_id: "bench".into(),
            region: 0,
            frame: f,
            vector: (0..2048).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    c.bench_function("maxmin_pool_64x2048", |b| b.iter(|| maxmin_pool(&frames).unwrap()));
}

fn svm_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 120;
    let dim = 256;
    let features: Vec<Vec<f64>> =
        (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    c.bench_function("svm_ovr_n120_d256_e100", |b| {
        b.iter(|| train_ovr(&features, &labels, 1.0, 100, 0).unwrap())
    });
}

criterion_group!(benches, lstm_benches, pooling_bench, svm_bench);
criterion_main!(benches);
