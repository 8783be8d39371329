use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use vbreathnet::data::{
    build_manifest, generate_synthetic, DatasetManifest, GroundTruth, ManifestDataset, Split,
    GROUND_TRUTH_FILE,
};
use vbreathnet::eval::evaluate;
use vbreathnet::explain::{gradcam, overlay, save_overlay, top_decile_inside};
use vbreathnet::model::{Checkpoint, Model};
use vbreathnet::train::{argmax_rows, train_epochs, Dataset, InMemoryDataset};
use vbreathnet::{Error, Rng};

use crate::cli::Command;
use crate::config::{parse_class, parse_split, RunConfig, RESOLVED_FILE};

const EVAL_BATCH: usize = 32;

pub fn run(cmd: &Command) -> Result<()> {
    let file = match &cmd.common().config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = file.overlay(&cmd.flags()).with_defaults();
    match cmd {
        Command::Synth(_) => synth(cfg),
        Command::Curate(_) => curate(cfg),
        Command::Train(_) => train(cfg),
        Command::Eval(_) => eval(cfg),
        Command::Explain(_) => explain(cfg),
    }
}

fn path(p: &Option<PathBuf>) -> PathBuf {
    p.clone().expect("filled by defaults")
}

/// Fixes the output directory, creates it and records the resolved config.
fn prepare_out(cfg: &mut RunConfig, default: &Path) -> Result<PathBuf> {
    let out = cfg.paths.out.clone().unwrap_or_else(|| default.to_path_buf());
    cfg.paths.out = Some(out.clone());
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    write(&out.join(RESOLVED_FILE), cfg.to_toml())?;
    log::info!("resolved configuration written to {}", out.join(RESOLVED_FILE).display());
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn synth(mut cfg: RunConfig) -> Result<()> {
    let default = path(&cfg.paths.data);
    let out = prepare_out(&mut cfg, &default)?;
    let params = cfg.synth_params();
    let gt = generate_synthetic(&out, &params, cfg.seed())?;
    println!(
        "wrote {} images ({} per class, {}x{}) to {}",
        gt.entries.len(),
        params.per_class,
        params.size,
        params.size,
        out.display()
    );
    Ok(())
}

fn curate(mut cfg: RunConfig) -> Result<()> {
    let out = prepare_out(&mut cfg, Path::new("runs/curate"))?;
    let data = path(&cfg.paths.data);
    let manifest = build_manifest(&data, &cfg.curation_params(), cfg.seed())
        .with_context(|| format!("curating {}", data.display()))?;
    let target = out.join("manifest.json");
    manifest.save(&target)?;
    let train = manifest.class_counts(Some(Split::Train));
    let test = manifest.class_counts(Some(Split::Test));
    println!(
        "manifest {}: {} samples, {} rejected",
        target.display(),
        manifest.samples.len(),
        manifest.rejected.len()
    );
    println!("train per class (Normal, Covid, Pneumonia): {train:?}");
    println!("test per class  (Normal, Covid, Pneumonia): {test:?}");
    Ok(())
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let p = path(&cfg.paths.manifest);
    Ok(DatasetManifest::load(&p)?)
}

fn load_model(cfg: &RunConfig) -> Result<Model> {
    let p = path(&cfg.paths.ckpt);
    let ckpt = Checkpoint::load(&p)?;
    Ok(ckpt.to_model()?)
}

fn train(mut cfg: RunConfig) -> Result<()> {
    let out = prepare_out(&mut cfg, Path::new("runs/train"))?;
    let manifest = load_manifest(&cfg)?;
    let model_cfg = cfg.model_config()?;
    model_cfg.validate()?;
    let train_view = ManifestDataset::new(&manifest, Some(Split::Train));
    let val_view = ManifestDataset::new(&manifest, Some(Split::Test));
    train_view.check_input_shape(model_cfg.input_shape)?;
    let train_set = InMemoryDataset::collect(&train_view)?;
    if val_view.is_empty() {
        return Err(Error::Domain("manifest has no test split to validate on".into()).into());
    }
    let val_set = InMemoryDataset::collect(&val_view)?;
    let tc = cfg.train_config();
    log::info!(
        "training {} parameters on {} samples ({} validation) for {} epochs",
        model_cfg.count_params()?,
        train_set.len(),
        val_set.len(),
        tc.epochs
    );
    let model = Model::build(&model_cfg, &mut Rng::new(model_cfg.seed))?;
    let outcome = train_epochs(model, &train_set, &val_set, &tc, &Rng::new(cfg.seed()))?;
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome.last.save(&out.join("last.ckpt"))?;
    write(&out.join("train_report.csv"), outcome.report.to_csv())?;
    write(&out.join("train_report.json"), outcome.report.to_json())?;
    let best = &outcome.report.records[outcome.report.best_epoch];
    println!(
        "best epoch {}: val accuracy {:.4}, val loss {:.4}; checkpoints in {}",
        best.epoch,
        best.val_accuracy,
        best.val_loss,
        out.display()
    );
    Ok(())
}

fn eval(mut cfg: RunConfig) -> Result<()> {
    let out = prepare_out(&mut cfg, Path::new("runs/eval"))?;
    let model = load_model(&cfg)?;
    let manifest = load_manifest(&cfg)?;
    let split = parse_split(cfg.eval.split.as_deref().unwrap_or("test"))?;
    let view = ManifestDataset::new(&manifest, split);
    view.check_input_shape(model.config().input_shape)?;
    let report = evaluate(&model, &view, EVAL_BATCH)?;
    let text = report.to_text();
    write(&out.join("metrics.txt"), &text)?;
    write(&out.join("metrics.json"), report.to_json())?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct ExplainEntry {
    path: String,
    label: String,
    predicted: String,
    target_class: String,
    target_layer: usize,
    feature_layer: usize,
    degenerate: bool,
    overlay: String,
    heatmap: String,
    /// Fraction of top-decile heatmap pixels inside the ground-truth patch.
    localization: Option<f64>,
}

#[derive(Serialize)]
struct ExplainSummary {
    images: usize,
    mean_localization: Option<f64>,
    entries: Vec<ExplainEntry>,
}

fn file_stem(sample_path: &str) -> String {
    sample_path
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn explain(mut cfg: RunConfig) -> Result<()> {
    let out = prepare_out(&mut cfg, Path::new("runs/explain"))?;
    let model = load_model(&cfg)?;
    let manifest = load_manifest(&cfg)?;
    let e = &cfg.explain;
    let split = parse_split(e.split.as_deref().unwrap_or("test"))?;
    let forced = e.class.as_deref().map(parse_class).transpose()?;
    let alpha = e.alpha.unwrap_or(crate::config::DEFAULT_ALPHA);
    let limit = e.limit.unwrap_or(crate::config::DEFAULT_LIMIT);
    let view = ManifestDataset::new(&manifest, split);
    view.check_input_shape(model.config().input_shape)?;
    if view.is_empty() {
        return Err(Error::Domain("selected split is empty".into()).into());
    }

    // Ground truth only lines up when the loader did not crop.
    let gt_path = manifest.root_path().join(GROUND_TRUTH_FILE);
    let gt = if gt_path.is_file() && manifest.params.crop_center.is_none() {
        Some(GroundTruth::load(&gt_path)?)
    } else {
        None
    };

    let mut entries = Vec::new();
    for i in 0..view.len().min(limit) {
        let sample = view.sample(i);
        let img = view.image(i)?;
        let x = img.to_tensor();
        let probs = model.predict_proba(&x.clone().reshape([1, 1, img.height(), img.width()])?)?;
        let predicted = argmax_rows(&probs)?[0];
        let target = forced.map_or(predicted, |c| c.index());
        let cam = gradcam(&model, &x, target, e.layer)?;
        let stem = format!("{i:03}_{}", file_stem(&sample.path));
        let overlay_name = format!("{stem}_overlay.png");
        let heatmap_name = format!("{stem}_heatmap.csv");
        save_overlay(&overlay(&img, &cam.heatmap, alpha)?, &out.join(&overlay_name))?;
        write(&out.join(&heatmap_name), cam.heatmap.to_csv())?;
        let localization = gt.as_ref().and_then(|gt| {
            let entry = gt.find(&sample.path).filter(|_| sample.is_original())?;
            let bbox = entry
                .patch
                .rescale([gt.size, gt.size], manifest.params.resolution);
            Some(top_decile_inside(&cam.heatmap, &bbox))
        });
        let name = |c: usize| vbreathnet::data::ClassLabel::from_index(c).expect("class index").to_string();
        entries.push(ExplainEntry {
            path: sample.path.clone(),
            label: sample.label.to_string(),
            predicted: name(predicted),
            target_class: name(target),
            target_layer: cam.heatmap.target_layer,
            feature_layer: cam.feature_layer,
            degenerate: cam.degenerate,
            overlay: overlay_name,
            heatmap: heatmap_name,
            localization,
        });
    }
    let scores: Vec<f64> = entries.iter().filter_map(|e| e.localization).collect();
    let summary = ExplainSummary {
        images: entries.len(),
        mean_localization: (!scores.is_empty())
            .then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        entries,
    };
    write(
        &out.join("explain_summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!("wrote {} overlays to {}", summary.images, out.display());
    if let Some(m) = summary.mean_localization {
        println!("mean top-decile localization: {m:.3}");
    }
    Ok(())
}
