//! Seeded synthetic datasets with planted, recoverable structure.
//!
//! Layout under the dataset directory:
//!
//! ```text
//! recognize/{train,val}/labels.json
//! recognize/{train,val}/<stream>/<video>.vtf      [clips, D] or [C_in, T, H, W]
//! caption/vocab.txt
//! caption/annotations.json
//! caption/frames/<video>.vtf                      [frames, D]
//! localize/{rgb,flow}/<window>_<clip>.vtf         [C, T, H, W]
//! localize/proposals.json
//! localize/groundtruth.json
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Task};
use crate::harness::tensor_file::{read_tensor, write_tensor};
use crate::lstr::{BoxProposal, Box2d, ClipFeatureMap, GroundTruth, CLIPS_PER_WINDOW};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const SPLITS: [&str; 2] = ["train", "val"];
pub const LOCALIZE_STREAMS: [&str; 2] = ["rgb", "flow"];

/// Deterministic labels covering every class within one count of each other.
pub fn balanced_labels(n: usize, classes: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    labels
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- recognize

#[derive(Clone, Debug, PartialEq)]
pub struct RecognizeSplit {
    pub labels: Vec<usize>,
    /// `inputs[stream][video]`
    pub inputs: Vec<Vec<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognizeData {
    pub train: RecognizeSplit,
    pub val: RecognizeSplit,
}

/// Each class shifts the mean of every stream by its own random prototype;
/// the prototype is repeated over clips, or over space for raw-clip streams.
pub fn recognize_data(cfg: &ExperimentConfig) -> RecognizeData {
    let d = &cfg.dataset;
    let mut rng = SplitMix64::new(cfg.seed ^ 0x7265_636f);
    let protos: Vec<Vec<Tensor>> = cfg
        .streams
        .iter()
        .map(|s| {
            let dims: Vec<usize> = if s.backbone {
                vec![cfg.backbone.input[0], cfg.backbone.input[1]]
            } else {
                vec![d.feature_dim]
            };
            (0..d.classes).map(|_| Tensor::randn(&dims, &mut rng)).collect()
        })
        .collect();
    let split = |rng: &mut SplitMix64| {
        let labels = balanced_labels(d.videos, d.classes, rng);
        let inputs = cfg
            .streams
            .iter()
            .zip(&protos)
            .map(|(s, proto)| {
                labels
                    .iter()
                    .map(|&y| {
                        let p = proto[y].data();
                        if s.backbone {
                            let [c, t, h, w] = cfg.backbone.input;
                            let mut x = Tensor::randn(&[c, t, h, w], rng).scale(d.noise);
                            for (i, v) in x.data_mut().iter_mut().enumerate() {
                                *v += p[i / (h * w)];
                            }
                            x
                        } else {
                            let mut x = Tensor::randn(&[d.clips, d.feature_dim], rng).scale(d.noise);
                            for (i, v) in x.data_mut().iter_mut().enumerate() {
                                *v += p[i % d.feature_dim];
                            }
                            x
                        }
                    })
                    .collect()
            })
            .collect();
        RecognizeSplit { labels, inputs }
    };
    let train = split(&mut rng);
    let val = split(&mut rng);
    RecognizeData { train, val }
}

fn write_recognize(cfg: &ExperimentConfig, data: &RecognizeData, dir: &Path) -> Result<()> {
    for (name, split) in SPLITS.iter().zip([&data.train, &data.val]) {
        let sd = dir.join("recognize").join(name);
        create_dir(&sd)?;
        write_json(&sd.join("labels.json"), &split.labels)?;
        for (s, videos) in cfg.streams.iter().zip(&split.inputs) {
            let stream_dir = sd.join(&s.name);
            create_dir(&stream_dir)?;
            for (v, x) in videos.iter().enumerate() {
                write_tensor(stream_dir.join(format!("{v:04}.vtf")), x)?;
            }
        }
    }
    Ok(())
}

pub fn load_recognize(cfg: &ExperimentConfig, dir: &Path) -> Result<RecognizeData> {
    let load = |name: &str| -> Result<RecognizeSplit> {
        let sd = dir.join("recognize").join(name);
        let labels: Vec<usize> = read_json(&sd.join("labels.json"))?;
        let inputs = cfg
            .streams
            .iter()
            .map(|s| {
                (0..labels.len())
                    .map(|v| read_tensor(sd.join(&s.name).join(format!("{v:04}.vtf"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(RecognizeSplit { labels, inputs })
    };
    Ok(RecognizeData {
        train: load("train")?,
        val: load("val")?,
    })
}

// ------------------------------------------------------------------ caption

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionAnnotation {
    pub video: usize,
    pub start: usize,
    pub end: usize,
    pub words: Vec<String>,
    /// Attribute activations, one per vocabulary word.
    pub attributes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionData {
    pub words: Vec<String>,
    pub annotations: Vec<CaptionAnnotation>,
    /// `[frames, D]` per video.
    pub frames: Vec<Tensor>,
}

/// One event per video. Its frames are split into as many runs as the
/// caption has words, and each run carries its word's prototype plus a
/// shared actionness direction; frames outside the event are noise.
pub fn caption_data(cfg: &ExperimentConfig) -> CaptionData {
    let d = &cfg.dataset;
    let mut rng = SplitMix64::new(cfg.seed ^ 0x6361_7074);
    let words: Vec<String> = (0..d.vocab).map(|i| format!("w{i}")).collect();
    let protos: Vec<Tensor> = (0..d.vocab)
        .map(|_| Tensor::randn(&[d.feature_dim], &mut rng).scale(2.0))
        .collect();
    let action = Tensor::randn(&[d.feature_dim], &mut rng).scale(2.0);
    let mut annotations = Vec::with_capacity(d.videos);
    let mut frames = Vec::with_capacity(d.videos);
    for video in 0..d.videos {
        let len_lo = d.caption_len.max(8).min(d.frames);
        let len_hi = (d.frames / 2).max(len_lo);
        let len = len_lo + rng.below(len_hi - len_lo + 1);
        let start = rng.below(d.frames - len + 1);
        let toks: Vec<usize> = (0..d.caption_len).map(|_| rng.below(d.vocab)).collect();
        let mut x = Tensor::randn(&[d.frames, d.feature_dim], &mut rng).scale(d.noise);
        for f in 0..len {
            let word = toks[f * d.caption_len / len];
            let row = &mut x.data_mut()[(start + f) * d.feature_dim..(start + f + 1) * d.feature_dim];
            for (k, v) in row.iter_mut().enumerate() {
                *v += protos[word].data()[k] + action.data()[k];
            }
        }
        let mut attributes = vec![0.0; d.vocab];
        for &t in &toks {
            attributes[t] = 1.0;
        }
        annotations.push(CaptionAnnotation {
            video,
            start,
            end: start + len,
            words: toks.iter().map(|&t| words[t].clone()).collect(),
            attributes,
        });
        frames.push(x);
    }
    CaptionData {
        words,
        annotations,
        frames,
    }
}

fn write_caption(data: &CaptionData, dir: &Path) -> Result<()> {
    let cd = dir.join("caption");
    create_dir(&cd.join("frames"))?;
    let vocab = crate::captioning::Vocabulary::new(&data.words)?;
    fs::write(cd.join("vocab.txt"), vocab.to_file_string()).map_err(|e| Error::io(cd.join("vocab.txt"), e))?;
    write_json(&cd.join("annotations.json"), &data.annotations)?;
    for (v, x) in data.frames.iter().enumerate() {
        write_tensor(cd.join("frames").join(format!("{v:04}.vtf")), x)?;
    }
    Ok(())
}

pub fn load_caption(dir: &Path) -> Result<CaptionData> {
    let cd = dir.join("caption");
    let vocab = crate::captioning::Vocabulary::load(cd.join("vocab.txt"))?;
    let words = vocab.decode(&(crate::captioning::vocab::RESERVED.len()..vocab.len()).collect::<Vec<_>>());
    let annotations: Vec<CaptionAnnotation> = read_json(&cd.join("annotations.json"))?;
    let frames = (0..annotations.len())
        .map(|v| read_tensor(cd.join("frames").join(format!("{v:04}.vtf"))))
        .collect::<Result<_>>()?;
    Ok(CaptionData {
        words,
        annotations,
        frames,
    })
}

// ----------------------------------------------------------------- localize

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowProposal {
    pub window: usize,
    #[serde(flatten)]
    pub proposal: BoxProposal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizeData {
    /// `clips[stream][window]`, eight maps each.
    pub clips: Vec<Vec<Vec<ClipFeatureMap>>>,
    pub proposals: Vec<WindowProposal>,
    pub groundtruth: Vec<GroundTruth>,
}

impl LocalizeData {
    pub fn windows(&self) -> usize {
        self.clips[0].len()
    }

    pub fn window_proposals(&self, w: usize) -> Vec<BoxProposal> {
        self.proposals
            .iter()
            .filter(|p| p.window == w)
            .map(|p| p.proposal.clone())
            .collect()
    }
}

/// Keyframe id of clip `k` in window `w`.
pub fn frame_id(window: usize, clip: usize) -> usize {
    window * CLIPS_PER_WINDOW + clip
}

fn random_box(rng: &mut SplitMix64) -> Box2d {
    let (w, h) = (rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.6));
    let (x1, y1) = (rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h));
    Box2d::new(x1, y1, x1 + w, y1 + h).expect("box constructed inside the unit square")
}

fn jitter(b: &Box2d, rng: &mut SplitMix64) -> Box2d {
    let mut j = |v: f64| (v + rng.uniform(-0.03, 0.03)).clamp(0.0, 1.0);
    let (x1, y1, x2, y2) = (j(b.x1), j(b.y1), j(b.x2), j(b.y2));
    Box2d::new(x1, y1, x2, y2).unwrap_or(*b)
}

/// Actors carry one or two classes; every cell of an actor's box, at every
/// time step, receives the sum of its classes' channel prototypes. Proposals
/// are jittered ground-truth boxes plus one distractor per clip.
pub fn localize_data(cfg: &ExperimentConfig) -> LocalizeData {
    let d = &cfg.dataset;
    let [c, t, h, w] = d.clip_map;
    let mut rng = SplitMix64::new(cfg.seed ^ 0x6c6f_6361);
    let protos: Vec<Vec<Tensor>> = LOCALIZE_STREAMS
        .iter()
        .map(|_| (0..d.classes).map(|_| Tensor::randn(&[c], &mut rng).scale(1.5)).collect())
        .collect();
    let mut clips: Vec<Vec<Vec<ClipFeatureMap>>> = vec![Vec::new(); LOCALIZE_STREAMS.len()];
    let mut proposals = Vec::new();
    let mut groundtruth = Vec::new();
    for window in 0..d.videos {
        let mut maps: Vec<Vec<ClipFeatureMap>> = vec![Vec::new(); LOCALIZE_STREAMS.len()];
        for k in 0..CLIPS_PER_WINDOW {
            let mut actors = Vec::new();
            for _ in 0..d.actors {
                let b = random_box(&mut rng);
                let mut classes = vec![rng.below(d.classes)];
                if d.classes > 1 && rng.next_f64() < 0.3 {
                    let extra = (classes[0] + 1 + rng.below(d.classes - 1)) % d.classes;
                    classes.push(extra);
                }
                for &cl in &classes {
                    groundtruth.push(GroundTruth {
                        frame: frame_id(window, k),
                        class: cl,
                        bbox: b,
                    });
                }
                proposals.push(WindowProposal {
                    window,
                    proposal: BoxProposal {
                        clip: k,
                        bbox: jitter(&b, &mut rng),
                        score: rng.uniform(0.6, 1.0),
                    },
                });
                actors.push((b, classes));
            }
            proposals.push(WindowProposal {
                window,
                proposal: BoxProposal {
                    clip: k,
                    bbox: random_box(&mut rng),
                    score: rng.uniform(0.1, 0.6),
                },
            });
            for (s, stream_maps) in maps.iter_mut().enumerate() {
                let mut f = Tensor::randn(&[c, t, h, w], &mut rng).scale(d.noise);
                for (b, classes) in &actors {
                    let rows = ((b.y1 * h as f64).floor() as usize)..((b.y2 * h as f64).ceil() as usize).min(h);
                    let cols = ((b.x1 * w as f64).floor() as usize)..((b.x2 * w as f64).ceil() as usize).min(w);
                    for ch in 0..c {
                        let shift: f64 = classes.iter().map(|&cl| protos[s][cl].data()[ch]).sum();
                        for ti in 0..t {
                            for r in rows.clone() {
                                for col in cols.clone() {
                                    f.data_mut()[((ch * t + ti) * h + r) * w + col] += shift;
                                }
                            }
                        }
                    }
                }
                stream_maps.push(ClipFeatureMap { index: k, feat: f });
            }
        }
        for (s, m) in maps.into_iter().enumerate() {
            clips[s].push(m);
        }
    }
    LocalizeData {
        clips,
        proposals,
        groundtruth,
    }
}

fn write_localize(data: &LocalizeData, dir: &Path) -> Result<()> {
    let ld = dir.join("localize");
    for (name, windows) in LOCALIZE_STREAMS.iter().zip(&data.clips) {
        let sd = ld.join(name);
        create_dir(&sd)?;
        for (w, maps) in windows.iter().enumerate() {
            for m in maps {
                write_tensor(sd.join(format!("{w:04}_{}.vtf", m.index)), &m.feat)?;
            }
        }
    }
    write_json(&ld.join("proposals.json"), &data.proposals)?;
    write_json(&ld.join("groundtruth.json"), &data.groundtruth)
}

pub fn load_localize(cfg: &ExperimentConfig, dir: &Path) -> Result<LocalizeData> {
    let ld = dir.join("localize");
    let clips = LOCALIZE_STREAMS
        .iter()
        .map(|name| {
            (0..cfg.dataset.videos)
                .map(|w| {
                    (0..CLIPS_PER_WINDOW)
                        .map(|k| {
                            let feat = read_tensor(ld.join(name).join(format!("{w:04}_{k}.vtf")))?;
                            Ok(ClipFeatureMap { index: k, feat })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(LocalizeData {
        clips,
        proposals: read_json(&ld.join("proposals.json"))?,
        groundtruth: read_json(&ld.join("groundtruth.json"))?,
    })
}

// ------------------------------------------------------------------- entry

/// Whether the task's dataset already exists under `dir`.
pub fn dataset_present(task: Task, dir: &Path) -> bool {
    match task {
        Task::Recognize => dir.join("recognize/val/labels.json").is_file(),
        Task::Caption => dir.join("caption/annotations.json").is_file(),
        Task::Localize => dir.join("localize/groundtruth.json").is_file(),
        Task::Gradcheck => true,
    }
}

/// Writes the dataset of `cfg.task` under `dir`. The gradient-check task
/// needs no data.
pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    match cfg.task {
        Task::Recognize => write_recognize(cfg, &recognize_data(cfg), dir),
        Task::Caption => write_caption(&caption_data(cfg), dir),
        Task::Localize => write_localize(&localize_data(cfg), dir),
        Task::Gradcheck => Ok(()),
    }
}
