use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use vidkern_core::captioning::{decode, CaptionConfig, CaptionModelParams, DecodeMode};
use vidkern_core::conv::{conv_spatial, conv_temporal, depthwise_temporal_conv};
use vidkern_core::lstr::{frame_map, roi_pool_3d, Box2d, Detection, GroundTruth, FRAME_IOU};
use vidkern_core::quantization::{tcp, FeatureSequence, TcpParams};
use vidkern_core::{SplitMix64, Tensor};

fn convolutions(c: &mut Criterion) {
    let mut rng = SplitMix64::new(1);
    let x = Tensor::randn(&[2, 8, 8, 16, 16], &mut rng);
    let ws = Tensor::randn(&[8, 8, 3, 3], &mut rng);
    let wt = Tensor::randn(&[8, 8, 3], &mut rng);
    c.bench_function("conv_spatial 2x8x8x16x16 k3", |b| b.iter(|| conv_spatial(black_box(&x), &ws).unwrap()));
    c.bench_function("conv_temporal 2x8x8x16x16 k3", |b| b.iter(|| conv_temporal(black_box(&x), &wt).unwrap()));

    let seq = Tensor::randn(&[64, 128], &mut rng);
    let k = Tensor::randn(&[128, 3], &mut rng);
    c.bench_function("depthwise_temporal_conv 64x128", |b| {
        b.iter(|| depthwise_temporal_conv(black_box(&seq), &k).unwrap())
    });
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = SplitMix64::new(2);
    for n in [16, 64, 128] {
        let a = Tensor::randn(&[n, n], &mut rng);
        let b = Tensor::randn(&[n, n], &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| black_box(&a).matmul(&b).unwrap())
        });
    }
    group.finish();
}

fn quantizer(c: &mut Criterion) {
    let mut rng = SplitMix64::new(3);
    let seq = FeatureSequence::new(Tensor::randn(&[32, 64], &mut rng)).unwrap();
    let p = TcpParams::init(64, &mut rng);
    c.bench_function("tcp 32x64", |b| b.iter(|| tcp(black_box(&seq), &p).unwrap()));
}

fn captioning(c: &mut Criterion) {
    let mut rng = SplitMix64::new(4);
    let cfg = CaptionConfig {
        vocab: 40,
        embed: 16,
        hidden: 32,
        feat: 24,
        attrs: 8,
        attr_proj: 4,
        attention: 16,
    };
    let p = CaptionModelParams::init(&cfg, &mut rng).unwrap();
    let frames = Tensor::randn(&[16, 24], &mut rng);
    c.bench_function("greedy decode 12 tokens", |b| {
        b.iter(|| decode(&p, black_box(&frames), None, DecodeMode::Greedy, 12, 0).unwrap())
    });
}

fn localization(c: &mut Criterion) {
    let mut rng = SplitMix64::new(5);
    let feat = Tensor::randn(&[16, 4, 14, 14], &mut rng);
    let bx = Box2d::new(0.2, 0.1, 0.7, 0.9).unwrap();
    c.bench_function("roi_pool_3d 16x4x14x14 -> 2x3x3", |b| {
        b.iter(|| roi_pool_3d(black_box(&feat), &bx, (2, 3, 3)).unwrap())
    });

    let boxes: Vec<Box2d> = (0..400)
        .map(|_| {
            let x = rng.uniform(0.0, 0.7);
            let y = rng.uniform(0.0, 0.7);
            Box2d::new(x, y, x + 0.3, y + 0.3).unwrap()
        })
        .collect();
    let gts: Vec<GroundTruth> = (0..200)
        .map(|i| GroundTruth { frame: i % 50, class: i % 4, bbox: boxes[i] })
        .collect();
    let dets: Vec<Detection> = (0..400)
        .map(|i| Detection { frame: i % 50, class: i % 4, bbox: boxes[(i * 7) % 400], score: rng.next_f64() })
        .collect();
    c.bench_function("frame_map 400 dets / 200 gt", |b| {
        b.iter(|| frame_map(black_box(&dets), &gts, FRAME_IOU))
    });
}

criterion_group!(benches, convolutions, matmul, quantizer, captioning, localization);
criterion_main!(benches);
