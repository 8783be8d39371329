use std::fmt::Display;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vbreathnet::data::{CurationParams, SynthParams};
use vbreathnet::train::TrainConfig;

use crate::config::{self, RunConfig};

/// Help text with the effective default appended. Flags are optional so a
/// config file can sit between the defaults and the command line.
fn dflt(text: &str, value: impl Display) -> String {
    format!("{text} [default: {value}]")
}

#[derive(Debug, Parser)]
#[command(
    name = "vbreathnet",
    version,
    about = "Chest X-ray CNN pipeline: synthesize, curate, train, evaluate, explain",
    after_help = "Precedence: built-in defaults < --config file < flags.\n\
Exit codes: 0 ok, 1 other, 2 usage, 3 missing file / I/O, 4 parse or schema, \
5 shape mismatch, 6 corrupt checkpoint, 7 domain error, 8 invalid configuration."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic three-class corpus with ground-truth patches.
    Synth(SynthArgs),
    /// Score, filter, balance and split a raw corpus into a manifest.
    Curate(CurateArgs),
    /// Train a model on a manifest's train split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Write GradCAM heatmaps and overlays for a manifest split.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration file (TOML)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, help = dflt("Random seed", config::DEFAULT_SEED))]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<command>; synth: the --data directory]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "DIR", help = dflt("Corpus directory", config::DEFAULT_DATA))]
    pub data: Option<PathBuf>,
    #[arg(long, help = dflt("Images per class", SynthParams::default().per_class))]
    pub per_class: Option<usize>,
    #[arg(long, help = dflt("Image side length in pixels", SynthParams::default().size))]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "DIR", help = dflt("Raw corpus with Normal/, Covid/, Pneumonia/", config::DEFAULT_DATA))]
    pub data: Option<PathBuf>,
    #[arg(long, help = dflt("Minimum variance of Laplacian", CurationParams::default().blur_min))]
    pub blur_min: Option<f64>,
    #[arg(long, help = dflt("Minimum intensity standard deviation", CurationParams::default().contrast_min))]
    pub contrast_min: Option<f64>,
    #[arg(long, help = dflt("Maximum intensity standard deviation", CurationParams::default().contrast_max))]
    pub contrast_max: Option<f64>,
    /// Keep at most N originals per class before balancing [default: keep all]
    #[arg(long, value_name = "N")]
    pub subsample_per_class: Option<usize>,
    /// Pad every class to N samples with augmented copies [default: no balancing]
    #[arg(long, value_name = "N")]
    pub target_per_class: Option<usize>,
    #[arg(long, help = dflt("Fraction of each class used for training", CurationParams::default().split_ratio))]
    pub split_ratio: Option<f64>,
    #[arg(long, value_name = "HxW", value_parser = parse_resolution,
          help = dflt("Loader output size", "64x64"))]
    pub resolution: Option<[usize; 2]>,
    /// Keep the central fraction of each image extent before resizing [default: no crop]
    #[arg(long, value_name = "FRACTION")]
    pub crop_center: Option<f32>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE", help = dflt("Manifest to train on", config::DEFAULT_MANIFEST))]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "NAME|FILE", help = dflt("Model: mini, reference, or a model config file", config::DEFAULT_MODEL))]
    pub model: Option<String>,
    #[arg(long, help = dflt("Training epochs", TrainConfig::default().epochs))]
    pub epochs: Option<usize>,
    #[arg(long, help = dflt("Mini-batch size", TrainConfig::default().batch_size))]
    pub batch_size: Option<usize>,
    #[arg(long, help = dflt("Initial learning rate", TrainConfig::default().schedule.initial))]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE", help = dflt("Manifest to evaluate", config::DEFAULT_MANIFEST))]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "FILE", help = dflt("Checkpoint", config::DEFAULT_CKPT))]
    pub ckpt: Option<PathBuf>,
    #[arg(long, help = dflt("Split: train, test or all", config::DEFAULT_SPLIT))]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE", help = dflt("Manifest", config::DEFAULT_MANIFEST))]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "FILE", help = dflt("Checkpoint", config::DEFAULT_CKPT))]
    pub ckpt: Option<PathBuf>,
    #[arg(long, help = dflt("Split: train, test or all", config::DEFAULT_SPLIT))]
    pub split: Option<String>,
    /// Index of the target convolution layer [default: last conv layer]
    #[arg(long)]
    pub layer: Option<usize>,
    /// Target class (normal, covid, pneumonia or 0-2) [default: predicted class]
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long, help = dflt("Overlay opacity in [0, 1]", config::DEFAULT_ALPHA))]
    pub alpha: Option<f32>,
    #[arg(long, help = dflt("Number of images", config::DEFAULT_LIMIT))]
    pub limit: Option<usize>,
}

fn parse_resolution(s: &str) -> Result<[usize; 2], String> {
    let parse = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok([parse(h)?, parse(w)?]),
        None => {
            let n = parse(s)?;
            Ok([n, n])
        }
    }
}

impl CommonArgs {
    fn apply(&self, rc: &mut RunConfig) {
        rc.seed = self.seed;
        rc.paths.out = self.out.clone();
    }
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth(a) => &a.common,
            Command::Curate(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Explain(a) => &a.common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Curate(_) => "curate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Explain(_) => "explain",
        }
    }

    /// The flags given on the command line, as a partial config.
    pub fn flags(&self) -> RunConfig {
        let mut rc = RunConfig::default();
        self.common().apply(&mut rc);
        match self {
            Command::Synth(a) => {
                rc.paths.data = a.data.clone();
                rc.synth.per_class = a.per_class;
                rc.synth.size = a.size;
            }
            Command::Curate(a) => {
                rc.paths.data = a.data.clone();
                let c = &mut rc.curation;
                c.blur_min = a.blur_min;
                c.contrast_min = a.contrast_min;
                c.contrast_max = a.contrast_max;
                c.subsample_per_class = a.subsample_per_class;
                c.target_per_class = a.target_per_class;
                c.split_ratio = a.split_ratio;
                c.resolution = a.resolution;
                c.crop_center = a.crop_center;
            }
            Command::Train(a) => {
                rc.paths.manifest = a.manifest.clone();
                rc.model = a.model.clone();
                rc.train.epochs = a.epochs;
                rc.train.batch_size = a.batch_size;
                rc.train.lr = a.lr;
            }
            Command::Eval(a) => {
                rc.paths.manifest = a.manifest.clone();
                rc.paths.ckpt = a.ckpt.clone();
                rc.eval.split = a.split.clone();
            }
            Command::Explain(a) => {
                rc.paths.manifest = a.manifest.clone();
                rc.paths.ckpt = a.ckpt.clone();
                let e = &mut rc.explain;
                e.split = a.split.clone();
                e.layer = a.layer;
                e.class = a.class.clone();
                e.alpha = a.alpha;
                e.limit = a.limit;
            }
        }
        rc
    }
}
