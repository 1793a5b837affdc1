//! Experiment orchestration: one pipeline per task, summarized as a JSON
//! report whose content depends only on the config (wall time aside).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::backbone::BackboneParams;
use crate::captioning::{
    self, dense_caption_pipeline, proposals::temporal_iou, proxy_reward, scst_update, train_xent,
    AttributeVector, CaptionConfig, CaptionModelParams, CaptionSample, DecodeMode, DenseCaptioner,
    Vocabulary, XentTraining, EOS, PROPOSALS_PER_VIDEO, UNK,
};
use crate::error::{Error, Result};
use crate::gradcheck::GradCheckConfig;
use crate::harness::config::{ExperimentConfig, Task};
use crate::harness::gradsuite::run_suite;
use crate::harness::synth::{self, frame_id, LocalizeData, LOCALIZE_STREAMS};
use crate::lstr::{
    self, fit_classifier, frame_map, iou_2d, two_stream_average, Detection, LstrConfig, LstrParams, FRAME_IOU,
};
use crate::quantization::{Quantizer, TcpParams};
use crate::recognition::{
    fuse, topk_accuracy, tune_fusion_weights, LinearClassifier, StreamModel,
};
use crate::rng::SplitMix64;
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: Value,
    /// False when a numeric self-check (the gradient suite) failed.
    pub checks_passed: bool,
}

/// Dataset directory inside an output directory.
pub fn data_dir(out: &Path) -> std::path::PathBuf {
    out.join("data")
}

/// Runs `cfg.task`, generating its dataset under `out/data` if absent, and
/// writes `out/report.json`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let data = data_dir(out);
    if !synth::dataset_present(cfg.task, &data) {
        synth::generate(cfg, &data)?;
    }
    let (metrics, checks_passed) = match cfg.task {
        Task::Recognize => (recognize(cfg, &data)?, true),
        Task::Caption => (caption(cfg, &data)?, true),
        Task::Localize => (localize(cfg, &data)?, true),
        Task::Gradcheck => gradcheck()?,
    };
    let config = serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let report = json!({
        "task": cfg.task.name(),
        "seed": cfg.seed,
        "config": config,
        "metrics": metrics,
        "wall_time_secs": started.elapsed().as_secs_f64(),
    });
    synth::create_dir(out)?;
    synth::write_json(&out.join("report.json"), &report)?;
    Ok(RunOutcome { report, checks_passed })
}

/// Copy of `report` without its wall time, for reproducibility comparisons.
pub fn stable_part(report: &Value) -> Value {
    let mut r = report.clone();
    if let Some(m) = r.as_object_mut() {
        m.remove("wall_time_secs");
    }
    r
}

fn model_rng(cfg: &ExperimentConfig, salt: u64) -> SplitMix64 {
    SplitMix64::new(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt))
}

fn recognize(cfg: &ExperimentConfig, dir: &Path) -> Result<Value> {
    let data = synth::load_recognize(cfg, dir)?;
    let classes = cfg.dataset.classes;
    let top5 = classes.min(5);
    let mut rng = model_rng(cfg, 1);
    let mut preds = Vec::with_capacity(cfg.streams.len());
    let mut per_stream = BTreeMap::new();
    for (s, spec) in cfg.streams.iter().enumerate() {
        let backbone = if spec.backbone {
            Some((cfg.backbone.clone(), BackboneParams::init(&cfg.backbone, &mut rng)?))
        } else {
            None
        };
        let width = if spec.backbone {
            cfg.backbone.output_width()
        } else {
            cfg.dataset.feature_dim
        };
        let tcp = match spec.quantizer {
            Quantizer::TCP => Some(TcpParams::init(width, &mut rng)),
            Quantizer::AP => None,
        };
        let mut model = StreamModel {
            name: spec.name.clone(),
            quantizer: spec.quantizer,
            tcp,
            backbone,
            classifier: LinearClassifier::zeros(width, classes),
        };
        let reps = model.represent_all(&data.train.inputs[s])?;
        model.classifier = LinearClassifier::fit(
            &reps,
            &data.train.labels,
            classes,
            cfg.training.classifier_steps,
            cfg.training.classifier_lr,
        )?;
        let p = model.predict(&data.val.inputs[s])?;
        per_stream.insert(
            spec.name.clone(),
            json!({
                "top1": topk_accuracy(p.scores(), &data.val.labels, 1)?,
                "top5": topk_accuracy(p.scores(), &data.val.labels, top5)?,
            }),
        );
        preds.push(p);
    }
    let weights = tune_fusion_weights(&preds, &data.val.labels, cfg.training.fusion_resolution)?;
    let fused = fuse(&preds, &weights)?;
    let named: BTreeMap<&str, f64> = cfg
        .streams
        .iter()
        .map(|s| s.name.as_str())
        .zip(weights.as_slice().iter().copied())
        .collect();
    Ok(json!({
        "split": "val",
        "videos": data.val.labels.len(),
        "streams": per_stream,
        "fused": {
            "top1": topk_accuracy(&fused, &data.val.labels, 1)?,
            "top5": topk_accuracy(&fused, &data.val.labels, top5)?,
        },
        "topk": top5,
        "weights": named,
    }))
}

fn caption(cfg: &ExperimentConfig, dir: &Path) -> Result<Value> {
    let data = synth::load_caption(dir)?;
    let d = &cfg.dataset;
    let t = &cfg.training;
    let vocab = Vocabulary::new(&data.words)?;
    let ids = |words: &[String]| -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| match vocab.id(w) {
                UNK => Err(Error::Data(format!("word {w:?} not in vocabulary"))),
                id => Ok(id),
            })
            .collect()
    };

    // actionness: logistic regression separating event frames from the rest
    let all_frames: Vec<&Tensor> = data.frames.iter().collect();
    let stacked = Tensor::concat(&all_frames, 0)?;
    let mut targets = Vec::with_capacity(stacked.dims()[0]);
    for a in &data.annotations {
        targets.extend((0..d.frames).map(|f| f64::from(u8::from(f >= a.start && f < a.end))));
    }
    let targets = Tensor::new(&[targets.len(), 1], targets)?;
    let (w, _) = fit_classifier(&stacked, &targets, t.classifier_steps, t.classifier_lr)?;
    let actionness = w.reshape(&[d.feature_dim])?;

    let samples: Vec<CaptionSample> = data
        .annotations
        .iter()
        .map(|a| {
            let mut reference = ids(&a.words)?;
            reference.push(EOS);
            Ok(CaptionSample {
                frames: data.frames[a.video].slice(0, a.start, a.end)?,
                attr: Some(AttributeVector::new(Tensor::vector(a.attributes.clone()))?),
                reference,
            })
        })
        .collect::<Result<_>>()?;

    let ccfg = CaptionConfig {
        vocab: vocab.len(),
        embed: t.hidden,
        hidden: t.hidden,
        feat: d.feature_dim,
        attrs: data.words.len(),
        attr_proj: t.hidden.min(8),
        attention: t.hidden,
    };
    let mut rng = model_rng(cfg, 2);
    let mut decoder = CaptionModelParams::init(&ccfg, &mut rng)?;
    let xent = train_xent(
        &mut decoder,
        &samples,
        &XentTraining {
            steps: t.caption_steps,
            lr: t.caption_lr,
            clip: 5.0,
            check_every: 0,
            target: samples.len(),
        },
    )?;

    let max_len = d.caption_len + 2;
    let greedy_reward = |p: &CaptionModelParams| -> Result<f64> {
        let r: Vec<f64> = samples
            .par_iter()
            .map(|s| {
                let g = captioning::decode(p, &s.frames, s.attr.as_ref(), DecodeMode::Greedy, max_len, 0)?;
                Ok(proxy_reward(&g.tokens, &s.reference[..s.reference.len() - 1]))
            })
            .collect::<Result<_>>()?;
        Ok(mean(&r))
    };
    let reward_before = greedy_reward(&decoder)?;
    let mut advantages = Vec::new();
    for round in 0..t.scst_steps {
        for (i, s) in samples.iter().enumerate() {
            let seed = model_rng(cfg, 1000 + (round * samples.len() + i) as u64).next_u64();
            let diag = scst_update(&mut decoder, &s.frames, s.attr.as_ref(), &s.reference, t.scst_lr, max_len, seed)?;
            advantages.push(diag.advantage);
        }
    }
    let reward_after = greedy_reward(&decoder)?;

    let model = DenseCaptioner {
        actionness,
        decoder,
        proposals: PROPOSALS_PER_VIDEO,
        max_len,
    };
    let per_video: Vec<(Value, f64, f64, usize)> = data
        .annotations
        .par_iter()
        .zip(&samples)
        .map(|(a, s)| {
            let events = dense_caption_pipeline(&data.frames[a.video], s.attr.as_ref(), &model)?;
            let reference = &s.reference[..s.reference.len() - 1];
            let best = events
                .iter()
                .map(|e| (temporal_iou((e.start, e.end), (a.start, a.end)), e))
                .max_by(|x, y| x.0.total_cmp(&y.0))
                .expect("at least one proposal");
            let json_events: Vec<Value> = events
                .iter()
                .map(|e| {
                    json!({
                        "start": e.start,
                        "end": e.end,
                        "score": e.score,
                        "tokens": vocab.decode(&e.tokens),
                    })
                })
                .collect();
            let v = json!({"video": a.video, "events": json_events});
            Ok((v, best.0, proxy_reward(&best.1.tokens, reference), events.len()))
        })
        .collect::<Result<_>>()?;

    let counts: Vec<usize> = per_video.iter().map(|x| x.3).collect();
    let best_iou: Vec<f64> = per_video.iter().map(|x| x.1).collect();
    let best_reward: Vec<f64> = per_video.iter().map(|x| x.2).collect();
    let videos: Vec<Value> = per_video.into_iter().map(|x| x.0).collect();
    Ok(json!({
        "videos": videos.len(),
        "proposals_per_video": {
            "min": counts.iter().min(),
            "max": counts.iter().max(),
        },
        "xent": {"steps": xent.steps, "final_loss": xent.final_loss, "reconstructed": xent.reconstructed},
        "scst": {
            "updates": advantages.len(),
            "mean_advantage": mean(&advantages),
            "greedy_reward_before": reward_before,
            "greedy_reward_after": reward_after,
        },
        "mean_best_proposal_tiou": mean(&best_iou),
        "mean_best_proposal_reward": mean(&best_reward),
        "captions": videos,
    }))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Multi-label targets of each proposal: classes of ground truth on the same
/// keyframe overlapping it at IoU ≥ 0.5.
fn proposal_targets(data: &LocalizeData, window: usize, classes: usize) -> Tensor {
    let props = data.window_proposals(window);
    let mut t = Tensor::zeros(&[props.len(), classes]);
    for (i, p) in props.iter().enumerate() {
        let frame = frame_id(window, p.clip);
        for g in data.groundtruth.iter().filter(|g| g.frame == frame) {
            if iou_2d(&g.bbox, &p.bbox) >= FRAME_IOU {
                t.data_mut()[i * classes + g.class] = 1.0;
            }
        }
    }
    t
}

fn localize(cfg: &ExperimentConfig, dir: &Path) -> Result<Value> {
    let data = synth::load_localize(cfg, dir)?;
    let d = &cfg.dataset;
    let windows = data.windows();
    let train_windows = if windows > 1 { windows.div_ceil(2) } else { 1 };
    let eval: Vec<usize> = if windows > 1 { (train_windows..windows).collect() } else { vec![0] };
    let lcfg = LstrConfig {
        channels: d.clip_map[0],
        pool: [1, 2, 2],
        actor_dim: cfg.training.hidden.min(16),
        classes: d.classes,
        lambda: lstr::DEFAULT_LAMBDA,
    };

    let mut rng = model_rng(cfg, 3);
    let mut stream_scores: Vec<Vec<Tensor>> = Vec::new();
    let mut metrics = BTreeMap::new();
    for (s, name) in LOCALIZE_STREAMS.iter().enumerate() {
        let params = LstrParams::init(&lcfg, &mut rng)?;
        let hidden: Vec<Tensor> = (0..windows)
            .into_par_iter()
            .map(|w| Ok(lstr::lstr_forward(&data.clips[s][w], &data.window_proposals(w), &params, &lcfg)?.hidden))
            .collect::<Result<_>>()?;
        let train_h: Vec<&Tensor> = hidden[..train_windows].iter().collect();
        let train_t: Vec<Tensor> = (0..train_windows).map(|w| proposal_targets(&data, w, d.classes)).collect();
        let train_t: Vec<&Tensor> = train_t.iter().collect();
        let (wc, bc) = fit_classifier(
            &Tensor::concat(&train_h, 0)?,
            &Tensor::concat(&train_t, 0)?,
            cfg.training.classifier_steps,
            cfg.training.classifier_lr,
        )?;
        let scores: Vec<Tensor> = eval
            .iter()
            .map(|&w| Ok(hidden[w].matmul(&wc)?.add(&bc)?.map(sigmoid)))
            .collect::<Result<_>>()?;
        metrics.insert(name.to_string(), frame_map(&detections(&data, &eval, &scores), &eval_gt(&data, &eval), FRAME_IOU));
        stream_scores.push(scores);
    }
    let fused: Vec<Tensor> = stream_scores[0]
        .iter()
        .zip(&stream_scores[1])
        .map(|(a, b)| two_stream_average(a, b))
        .collect::<Result<_>>()?;
    let fused_map = frame_map(&detections(&data, &eval, &fused), &eval_gt(&data, &eval), FRAME_IOU);
    Ok(json!({
        "windows": {"train": train_windows, "eval": eval.len()},
        "proposals": data.proposals.len(),
        "frame_map": {"streams": metrics, "two_stream": fused_map},
        "iou_threshold": FRAME_IOU,
    }))
}

fn detections(data: &LocalizeData, eval: &[usize], scores: &[Tensor]) -> Vec<Detection> {
    let mut out = Vec::new();
    for (&w, s) in eval.iter().zip(scores) {
        let k = s.dims()[1];
        for (i, p) in data.window_proposals(w).iter().enumerate() {
            for class in 0..k {
                out.push(Detection {
                    frame: frame_id(w, p.clip),
                    class,
                    bbox: p.bbox,
                    score: s.data()[i * k + class],
                });
            }
        }
    }
    out
}

fn eval_gt(data: &LocalizeData, eval: &[usize]) -> Vec<lstr::GroundTruth> {
    let frames: Vec<usize> = eval
        .iter()
        .flat_map(|&w| (0..lstr::CLIPS_PER_WINDOW).map(move |k| frame_id(w, k)))
        .collect();
    data.groundtruth
        .iter()
        .filter(|g| frames.contains(&g.frame))
        .cloned()
        .collect()
}

fn gradcheck() -> Result<(Value, bool)> {
    let gcfg = GradCheckConfig::default();
    let reports = run_suite(&gcfg)?;
    let passed = reports.iter().all(|r| r.passed(gcfg.tolerance));
    let max_rel = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok((
        json!({
            "step": gcfg.step,
            "coords": gcfg.coords,
            "tolerance": gcfg.tolerance,
            "max_rel_err": max_rel,
            "passed": passed,
            "checks": reports,
        }),
        passed,
    ))
}
