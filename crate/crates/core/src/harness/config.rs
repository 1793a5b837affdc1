//! Experiment configuration, read from JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::quantization::Quantizer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Recognize,
    Caption,
    Localize,
    Gradcheck,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Recognize => "recognize",
            Task::Caption => "caption",
            Task::Localize => "localize",
            Task::Gradcheck => "gradcheck",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub name: String,
    pub quantizer: Quantizer,
    /// Feed raw clips through the backbone instead of precomputed features.
    #[serde(default)]
    pub backbone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Videos per split (recognize, caption) or eight-clip windows (localize).
    pub videos: usize,
    pub classes: usize,
    /// Clip features per video for feature-input streams.
    pub clips: usize,
    pub feature_dim: usize,
    /// Frames per untrimmed video (caption).
    pub frames: usize,
    /// Word types besides the reserved ones (caption).
    pub vocab: usize,
    /// Words per reference caption (caption).
    pub caption_len: usize,
    /// Actors per clip (localize).
    pub actors: usize,
    /// Clip feature map extents `[C, T, H, W]` (localize).
    pub clip_map: [usize; 4],
    /// Standard deviation of the additive noise.
    pub noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            videos: 24,
            classes: 5,
            clips: 6,
            feature_dim: 12,
            frames: 48,
            vocab: 12,
            caption_len: 4,
            actors: 2,
            clip_map: [6, 2, 6, 6],
            noise: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub classifier_steps: usize,
    pub classifier_lr: f64,
    pub fusion_resolution: f64,
    pub caption_steps: usize,
    pub caption_lr: f64,
    pub scst_steps: usize,
    pub scst_lr: f64,
    pub hidden: usize,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            classifier_steps: 300,
            classifier_lr: 0.5,
            fusion_resolution: 0.05,
            caption_steps: 150,
            caption_lr: 0.02,
            scst_steps: 8,
            scst_lr: 1e-3,
            hidden: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Required: every random draw derives from it.
    pub seed: u64,
    #[serde(default)]
    pub streams: Vec<StreamSpec>,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    /// Directory receiving the dataset and report.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let counts = [
            ("videos", d.videos),
            ("classes", d.classes),
            ("clips", d.clips),
            ("feature_dim", d.feature_dim),
            ("frames", d.frames),
            ("vocab", d.vocab),
            ("caption_len", d.caption_len),
            ("actors", d.actors),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("dataset.{name} must be at least 1")));
        }
        if d.clip_map.contains(&0) {
            return Err(Error::Config("dataset.clip_map extents must be at least 1".into()));
        }
        if !(d.noise >= 0.0) {
            return Err(Error::Config("dataset.noise must be nonnegative".into()));
        }
        let t = &self.training;
        if t.hidden == 0 || !(t.fusion_resolution > 0.0) {
            return Err(Error::Config("training.hidden and training.fusion_resolution must be positive".into()));
        }
        self.backbone.validate()?;
        match self.task {
            Task::Recognize => {
                if self.streams.is_empty() {
                    return Err(Error::Config("recognize needs at least one stream".into()));
                }
                let mut names: Vec<&str> = self.streams.iter().map(|s| s.name.as_str()).collect();
                names.sort_unstable();
                names.dedup();
                if names.len() != self.streams.len() || names.iter().any(|n| !valid_name(n)) {
                    return Err(Error::Config("stream names must be unique [A-Za-z0-9_-]+".into()));
                }
            }
            Task::Caption if d.frames < 8 => {
                return Err(Error::Config("caption needs at least 8 frames per video".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("vidkern-out"))
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}
