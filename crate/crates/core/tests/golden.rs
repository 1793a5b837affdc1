//! Frozen output of a small one-stream recognition setup. Regenerate with
//! `VIDKERN_BLESS=1 cargo test -p vidkern-core --test golden` after an
//! intended numerical change.

use std::path::PathBuf;

use vidkern_core::backbone::{BackboneConfig, BackboneParams, BlockKind, StageConfig};
use vidkern_core::harness::{read_tensor, write_tensor};
use vidkern_core::quantization::{Quantizer, TcpParams};
use vidkern_core::recognition::{recognize_pipeline, FusionWeights, LinearClassifier, StreamModel};
use vidkern_core::{SplitMix64, Tensor};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/recognize_one_stream.vtf")
}

fn one_stream_scores() -> Tensor {
    let mut rng = SplitMix64::new(2024);
    let cfg = BackboneConfig {
        stages: vec![StageConfig::new(4, 1, BlockKind::P3dA)],
        input: [3, 4, 6, 6],
    };
    let params = BackboneParams::init(&cfg, &mut rng).unwrap();
    let classifier = LinearClassifier {
        weight: Tensor::randn(&[4, 3], &mut rng),
        bias: Tensor::randn(&[1, 3], &mut rng),
    };
    let model = StreamModel {
        name: "rgb".into(),
        quantizer: Quantizer::TCP,
        tcp: Some(TcpParams::identity(4)),
        backbone: Some((cfg, params)),
        classifier,
    };
    let clips: Vec<Tensor> = (0..4).map(|_| Tensor::randn(&[3, 4, 6, 6], &mut rng)).collect();
    let out = recognize_pipeline(&[model], &[clips], &FusionWeights::uniform(1)).unwrap();
    assert_eq!(out.fused, *out.streams[0].scores());
    out.fused
}

#[test]
fn one_stream_recognition_matches_frozen_scores() {
    let scores = one_stream_scores();
    let path = golden_path();
    if std::env::var_os("VIDKERN_BLESS").is_some() {
        write_tensor(&path, &scores).unwrap();
    }
    let frozen = read_tensor(&path).unwrap();
    assert_eq!(frozen.dims(), scores.dims());
    let diff = frozen.max_abs_diff(&scores);
    assert!(diff < 1e-12, "scores moved by {diff:e}");
}
