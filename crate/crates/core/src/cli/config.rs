use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_model::{Contrast, Orientation};
use crate::encoder::EncoderConfig;
use crate::evaluation::TsneConfig;
use crate::ingestion::ImageFormat;
use crate::losses::DEFAULT_TEMPERATURE;
use crate::mogras::TemplateConfig;
use crate::motion_sim::GradeThresholds;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// Keys owned by another section or by the top-level seed.
const RESERVED_KEYS: [(&str, &str, &str); 4] = [
    ("training", "temperature", "set it as `loss.temperature`"),
    ("training", "seed", "set the top-level `seed`"),
    ("training", "checkpoint_dir", "checkpoints live under `output.root`"),
    ("encoder", "init_seed", "set the top-level `seed`"),
];

/// Everything one pipeline run needs. Every section is optional in the
/// file; omitted values take their defaults and are echoed in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub simulator: SimulatorConfig,
    pub encoder: EncoderConfig,
    pub loss: LossSection,
    pub training: TrainConfig,
    pub templates: TemplateConfig,
    pub evaluation: EvaluationConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            simulator: SimulatorConfig::default(),
            encoder: EncoderConfig::default(),
            loss: LossSection::default(),
            training: TrainConfig::default(),
            templates: TemplateConfig::default(),
            evaluation: EvaluationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of clean source slices (`.amac` or `.png`); procedural
    /// phantoms when unset.
    pub source_dir: Option<PathBuf>,
    pub source_contrast: Contrast,
    pub source_orientation: Orientation,
    pub phantom_count: usize,
    pub phantom_size: usize,
    /// Simulated slices per grade across all splits.
    pub per_grade: usize,
    pub split_ratios: [f64; 3],
    /// Existing dataset to use instead of the simulated one.
    pub manifest: Option<PathBuf>,
    /// `image_path,split` assignment for `manifest`; a stratified split is
    /// computed when unset.
    pub split: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source_dir: None,
            source_contrast: Contrast::T1w,
            source_orientation: Orientation::Axial,
            phantom_count: 1500,
            phantom_size: 128,
            per_grade: 500,
            split_ratios: [0.6, 0.1, 0.3],
            manifest: None,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub thresholds: GradeThresholds,
    pub max_rotation_deg: f64,
    pub max_shift_px: f64,
    pub n_motion_states: usize,
    pub format: ImageFormat,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        let spec = crate::motion_sim::SimulationSpec::default();
        SimulatorConfig {
            thresholds: spec.thresholds,
            max_rotation_deg: spec.max_rotation_deg,
            max_shift_px: spec.max_shift_px,
            n_motion_states: spec.n_motion_states,
            format: spec.format,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub temperature: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub figures: bool,
    /// Embedding-space silhouette and 2-D projection.
    pub embeddings: bool,
    /// Points drawn in the projection scatter (evenly strided subsample).
    pub projection_points: usize,
    pub tsne: TsneConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            figures: true,
            embeddings: true,
            projection_points: 600,
            tsne: TsneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub root: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            root: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Parses a TOML document; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (section, key, hint) in RESERVED_KEYS {
            if value.get(section).and_then(|s| s.get(key)).is_some() {
                return Err(Error::Config(format!("`{section}.{key}` cannot be set here; {hint}")));
            }
        }
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.data.source_dir.as_mut(),
            self.data.manifest.as_mut(),
            self.data.split.as_mut(),
            self.encoder.weights_dir.as_mut(),
            Some(&mut self.output.root),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.simulator.thresholds.validate().map_err(cfg_err)?;
        crate::ingestion::SplitSpec::new(self.data.split_ratios, self.seed).map_err(cfg_err)?;
        self.encoder.validate().map_err(|e| match e {
            Error::Unsupported(_) => e,
            other => cfg_err(other),
        })?;
        self.train_config(None).validate()?;
        crate::losses::LossConfig {
            temperature: self.loss.temperature,
            ..Default::default()
        }
        .validate()
        .map_err(cfg_err)?;
        if self.data.phantom_size < crate::data_model::MIN_SLICE_SIDE {
            return Err(Error::Config(format!(
                "phantom_size must be at least {}, got {}",
                crate::data_model::MIN_SLICE_SIDE,
                self.data.phantom_size
            )));
        }
        Ok(())
    }

    /// Encoder settings with the run seed applied.
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            init_seed: self.seed,
            ..self.encoder.clone()
        }
    }

    /// Training settings with the run seed, temperature and checkpoint
    /// directory applied.
    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            temperature: self.loss.temperature,
            checkpoint_dir,
            ..self.training.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = RunConfig::from_toml("", Path::new("/base")).unwrap();
        assert_eq!(cfg.output.root, Path::new("/base/runs/default"));
        assert_eq!(cfg.loss.temperature, 0.07);
        assert_eq!(cfg.simulator.thresholds, GradeThresholds::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_reserved_keys() {
        for doc in [
            "bogus = 1",
            "[training]\nepochs = 3",
            "[training]\ntemperature = 0.5",
            "[encoder]\ninit_seed = 3",
            "[simulator.thresholds]\nsubtle_min = 0.1\nsevere_min = 0.2\nextra = 1",
        ] {
            let err = RunConfig::from_toml(doc, Path::new(".")).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{doc}: {err}");
        }
    }

    #[test]
    fn seed_and_temperature_flow_into_stage_configs() {
        let doc = "seed = 9\n[loss]\ntemperature = 0.5\n[training]\nstage1_epochs = 3";
        let cfg = RunConfig::from_toml(doc, Path::new(".")).unwrap();
        let t = cfg.train_config(None);
        assert_eq!((t.seed, t.temperature, t.stage1_epochs), (9, 0.5, 3));
        assert_eq!(cfg.encoder_config().init_seed, 9);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for doc in [
            "[loss]\ntemperature = 0.0",
            "[data]\nsplit_ratios = [0.5, 0.5, 0.5]",
            "[simulator.thresholds]\nsubtle_min = 0.3\nsevere_min = 0.2",
        ] {
            let cfg = RunConfig::from_toml(doc, Path::new(".")).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{doc}");
        }
    }
}
