//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vbreathnet::data::{ClassLabel, CurationParams, Split, SynthParams};
use vbreathnet::model::ModelConfig;
use vbreathnet::train::{LrSchedule, RmsPropParams, TrainConfig};
use vbreathnet::Error;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_DATA: &str = "data/synthetic";
pub const DEFAULT_MANIFEST: &str = "runs/curate/manifest.json";
pub const DEFAULT_CKPT: &str = "runs/train/best.ckpt";
pub const DEFAULT_MODEL: &str = "mini";
pub const DEFAULT_SPLIT: &str = "test";
pub const DEFAULT_ALPHA: f32 = 0.5;
pub const DEFAULT_LIMIT: usize = 30;
pub const RESOLVED_FILE: &str = "resolved_config.toml";

/// Partial configuration as read from a `--config` file or collected from
/// flags. Every field is optional; absent fields fall through.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub paths: PathsSection,
    pub synth: SynthSection,
    pub curation: CurationSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub explain: ExplainSection,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub per_class: Option<usize>,
    pub size: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    pub blur_min: Option<f64>,
    pub contrast_min: Option<f64>,
    pub contrast_max: Option<f64>,
    pub subsample_per_class: Option<usize>,
    pub target_per_class: Option<usize>,
    pub split_ratio: Option<f64>,
    pub resolution: Option<[usize; 2]>,
    pub crop_center: Option<f32>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_factor: Option<f64>,
    pub lr_step_epochs: Option<usize>,
    pub lr_floor: Option<f64>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub split: Option<String>,
    pub layer: Option<usize>,
    pub class: Option<String>,
    pub alpha: Option<f32>,
    pub limit: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            what: format!("run config {}", path.display()),
            message: e.to_string().trim().replace('\n', " "),
        })
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(mut self, over: &RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident).+) => {
                if over.$($f).+.is_some() {
                    self.$($f).+ = over.$($f).+.clone();
                }
            };
        }
        take!(seed);
        take!(model);
        take!(paths.data);
        take!(paths.manifest);
        take!(paths.ckpt);
        take!(paths.out);
        take!(synth.per_class);
        take!(synth.size);
        take!(curation.blur_min);
        take!(curation.contrast_min);
        take!(curation.contrast_max);
        take!(curation.subsample_per_class);
        take!(curation.target_per_class);
        take!(curation.split_ratio);
        take!(curation.resolution);
        take!(curation.crop_center);
        take!(train.epochs);
        take!(train.batch_size);
        take!(train.lr);
        take!(train.lr_factor);
        take!(train.lr_step_epochs);
        take!(train.lr_floor);
        take!(train.rho);
        take!(train.epsilon);
        take!(eval.split);
        take!(explain.split);
        take!(explain.layer);
        take!(explain.class);
        take!(explain.alpha);
        take!(explain.limit);
        self
    }

    /// Every field filled from the built-in defaults where unset.
    pub fn with_defaults(self) -> RunConfig {
        let cur = CurationParams::default();
        let synth = SynthParams::default();
        let train = TrainConfig::default();
        let defaults = RunConfig {
            seed: Some(DEFAULT_SEED),
            model: Some(DEFAULT_MODEL.into()),
            paths: PathsSection {
                data: Some(DEFAULT_DATA.into()),
                manifest: Some(DEFAULT_MANIFEST.into()),
                ckpt: Some(DEFAULT_CKPT.into()),
                out: None,
            },
            synth: SynthSection {
                per_class: Some(synth.per_class),
                size: Some(synth.size),
            },
            curation: CurationSection {
                blur_min: Some(cur.blur_min),
                contrast_min: Some(cur.contrast_min),
                contrast_max: Some(cur.contrast_max),
                subsample_per_class: cur.subsample_per_class,
                target_per_class: cur.target_per_class,
                split_ratio: Some(cur.split_ratio),
                resolution: Some(cur.resolution),
                crop_center: cur.crop_center,
            },
            train: TrainSection {
                epochs: Some(train.epochs),
                batch_size: Some(train.batch_size),
                lr: Some(train.schedule.initial),
                lr_factor: Some(train.schedule.factor),
                lr_step_epochs: Some(train.schedule.step_epochs),
                lr_floor: Some(train.schedule.floor),
                rho: Some(train.rmsprop.rho),
                epsilon: Some(train.rmsprop.epsilon),
            },
            eval: EvalSection {
                split: Some(DEFAULT_SPLIT.into()),
            },
            explain: ExplainSection {
                split: Some(DEFAULT_SPLIT.into()),
                layer: None,
                class: None,
                alpha: Some(DEFAULT_ALPHA),
                limit: Some(DEFAULT_LIMIT),
            },
        };
        defaults.overlay(&self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn curation_params(&self) -> CurationParams {
        let d = CurationParams::default();
        let c = &self.curation;
        CurationParams {
            blur_min: c.blur_min.unwrap_or(d.blur_min),
            contrast_min: c.contrast_min.unwrap_or(d.contrast_min),
            contrast_max: c.contrast_max.unwrap_or(d.contrast_max),
            subsample_per_class: c.subsample_per_class,
            target_per_class: c.target_per_class,
            split_ratio: c.split_ratio.unwrap_or(d.split_ratio),
            augment: d.augment,
            resolution: c.resolution.unwrap_or(d.resolution),
            crop_center: c.crop_center,
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        let d = SynthParams::default();
        SynthParams {
            per_class: self.synth.per_class.unwrap_or(d.per_class),
            size: self.synth.size.unwrap_or(d.size),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            schedule: LrSchedule {
                initial: t.lr.unwrap_or(d.schedule.initial),
                factor: t.lr_factor.unwrap_or(d.schedule.factor),
                step_epochs: t.lr_step_epochs.unwrap_or(d.schedule.step_epochs),
                floor: t.lr_floor.unwrap_or(d.schedule.floor),
            },
            rmsprop: RmsPropParams {
                rho: t.rho.unwrap_or(d.rmsprop.rho),
                epsilon: t.epsilon.unwrap_or(d.rmsprop.epsilon),
            },
        }
    }

    /// `mini`, `reference` (alias `vbreathnet`) or a path to a model file.
    pub fn model_config(&self) -> Result<ModelConfig, Error> {
        let name = self.model.as_deref().unwrap_or(DEFAULT_MODEL);
        match name {
            "mini" => Ok(ModelConfig::desk_scale()),
            "reference" | "vbreathnet" => Ok(ModelConfig::reference()),
            path => ModelConfig::load(Path::new(path)),
        }
    }
}

/// `train`, `test` or `all`.
pub fn parse_split(s: &str) -> Result<Option<Split>, Error> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Some(Split::Train)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => Err(Error::Config(format!(
            "unknown split {other:?} (expected train, test or all)"
        ))),
    }
}

/// Class name (case-insensitive) or index.
pub fn parse_class(s: &str) -> Result<ClassLabel, Error> {
    let lower = s.to_ascii_lowercase();
    ClassLabel::ALL
        .into_iter()
        .find(|c| {
            c.dir_name().to_ascii_lowercase() == lower
                || c.index().to_string() == lower
                || (lower == "covid-19" && *c == ClassLabel::Covid)
        })
        .ok_or_else(|| Error::Config(format!("unknown class {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_defaults_file_flags() {
        let file: RunConfig = toml::from_str(
            "seed = 5\n[train]\nepochs = 10\nbatch_size = 8\n[curation]\nblur_min = 0.01\n",
        )
        .unwrap();
        let mut flags = RunConfig::default();
        flags.train.epochs = Some(3);
        let r = file.overlay(&flags).with_defaults();
        assert_eq!(r.seed(), 5);
        let t = r.train_config();
        assert_eq!((t.epochs, t.batch_size), (3, 8));
        assert_eq!(t.schedule, LrSchedule::default());
        assert_eq!(r.curation_params().blur_min, 0.01);
        assert_eq!(r.curation_params().contrast_max, 0.45);
    }

    #[test]
    fn resolved_config_round_trips() {
        let r = RunConfig::default().with_defaults();
        let back: RunConfig = toml::from_str(&r.to_toml()).unwrap();
        assert_eq!(back.to_toml(), r.to_toml());
        assert_eq!(back.train_config(), TrainConfig::default());
        assert_eq!(back.curation_params(), CurationParams::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn class_and_split_names() {
        assert_eq!(parse_class("COVID").unwrap(), ClassLabel::Covid);
        assert_eq!(parse_class("2").unwrap(), ClassLabel::Pneumonia);
        assert!(parse_class("flu").is_err());
        assert_eq!(parse_split("all").unwrap(), None);
        assert!(parse_split("val").is_err());
    }
}
