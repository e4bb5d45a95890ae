use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::AcousticsConfig;
use crate::autodiff::AdamConfig;
use crate::dsp::StftParams;
use crate::error::{Error, Result};
use crate::models::{LrSchedule, ModelConfig, TrainConfig};
use crate::render::Camera;
use crate::scene::{GridSpec, SceneGenConfig};

/// Network widths; image and spectrogram sizes come from the camera and
/// audio settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub visual_widths: [usize; 4],
    pub audio_widths: Vec<usize>,
    pub audio_dim: usize,
    pub fusion_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        ArchConfig {
            visual_widths: m.visual_widths,
            audio_widths: m.audio_widths,
            audio_dim: m.audio_dim,
            fusion_dim: m.fusion_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs_pretext: usize,
    pub epochs_downstream: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs_pretext: 30,
            epochs_downstream: 50,
            batch_size: 8,
            adam: AdamConfig::default(),
            schedule: LrSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 16,
            val: 2,
            test: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenes: usize,
    /// Seeds for every trained network; transfer runs pair seed `s` with the
    /// pretext network trained under seed `s`.
    pub seeds: Vec<u64>,
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    pub scene_gen: SceneGenConfig,
    pub grid: GridSpec,
    pub camera: Camera,
    pub acoustics: AcousticsConfig,
    pub stft: StftParams,
    pub model: ArchConfig,
    pub train: TrainSettings,
    pub split: SplitSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            scenes: 21,
            seeds: vec![0, 1, 2],
            dataset_dir: PathBuf::from("data/desk"),
            output_dir: PathBuf::from("runs/desk"),
            scene_gen: SceneGenConfig::default(),
            grid: GridSpec {
                spacing: 1.0,
                ..GridSpec::default()
            },
            camera: Camera::default(),
            acoustics: AcousticsConfig::default(),
            stft: StftParams::default(),
            model: ArchConfig::default(),
            train: TrainSettings::default(),
            split: SplitSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Toml {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |section: &str, e: Error| Error::Config(format!("[{section}] {e}"));
        self.scene_gen.validate().map_err(|e| ctx("scene_gen", e))?;
        self.grid.validate().map_err(|e| ctx("grid", e))?;
        self.camera.validate().map_err(|e| ctx("camera", e))?;
        self.acoustics.validate().map_err(|e| ctx("acoustics", e))?;
        self.stft.validate().map_err(|e| ctx("stft", e))?;
        if self.scenes == 0 {
            return Err(Error::Config("scenes must be positive".into()));
        }
        let s = self.split;
        if s.train == 0 {
            return Err(Error::Config("[split] train needs at least one scene".into()));
        }
        if s.train + s.val + s.test > self.scenes {
            return Err(Error::Config(format!(
                "[split] {}+{}+{} scenes requested but only {} generated",
                s.train, s.val, s.test, self.scenes
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.acoustics.clip_samples() < self.stft.win {
            return Err(Error::Config(format!(
                "[acoustics] clip of {} samples is shorter than the STFT window {}",
                self.acoustics.clip_samples(),
                self.stft.win
            )));
        }
        self.train_config(1).validate().map_err(|e| ctx("train", e))?;
        self.model_config().validate().map_err(|e| ctx("model", e))?;
        Ok(())
    }

    /// Full architecture description with sizes derived from the sensors.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_height: self.camera.height,
            image_width: self.camera.width,
            visual_widths: self.model.visual_widths,
            audio_widths: self.model.audio_widths.clone(),
            audio_dim: self.model.audio_dim,
            fusion_dim: self.model.fusion_dim,
            max_depth: self.camera.max_depth,
            spec_bins: self.stft.bins(),
            spec_frames: self.stft.frames(self.acoustics.clip_samples()),
        }
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.train.batch_size,
            adam: self.train.adam,
            schedule: self.train.schedule,
        }
    }
}
