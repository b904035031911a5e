use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lscodec::codec::{encode, Architecture, CodecModel, EncodeOptions, QuantMode};
use lscodec::harness::dataset::synthetic_image;
use lscodec::layers::LayerParams;
use lscodec::par;

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = LayerParams::init(lscodec::layers::LayerKind::Conv, 32, 64, 4, 2, 1, 1.0, &mut rng).unwrap();
    let x = lscodec::Tensor::from_fn(&[128, 128, 32], |i| ((i * 7919) % 1000) as f64 / 1000.0);
    let mut g = c.benchmark_group("conv_128x128_32to64");
    g.bench_function(BenchmarkId::new("forward", "pool"), |b| b.iter(|| layer.forward(&x).unwrap()));
    g.bench_function(BenchmarkId::new("forward", "single"), |b| {
        b.iter(|| par::single_threaded(|| layer.forward(&x).unwrap()))
    });
    g.finish();
}

fn bench_codec(c: &mut Criterion) {
    let model = CodecModel::new(Architecture::default(), 0.01, 1).unwrap();
    let x = synthetic_image(128, 3);
    let mut g = c.benchmark_group("codec_128x128");
    g.sample_size(10);
    for (name, single) in [("pool", false), ("single", true)] {
        let run_grad = || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            model.loss_and_param_grads(&x, QuantMode::Noise, &mut rng).unwrap()
        };
        g.bench_function(BenchmarkId::new("train_step", name), |b| {
            b.iter(|| if single { par::single_threaded(run_grad) } else { run_grad() })
        });
        let run_enc = || encode(&x, &model, EncodeOptions { shift: true, lambda_index: 0 }).unwrap();
        g.bench_function(BenchmarkId::new("shift_encode", name), |b| {
            b.iter(|| if single { par::single_threaded(run_enc) } else { run_enc() })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_conv, bench_codec);
criterion_main!(benches);
