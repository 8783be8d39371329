use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::{augment_image, AugmentRanges, Transform};
use super::image::GrayImage;
use super::quality::{contrast_score, laplacian_variance};
use super::ClassLabel;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};
use crate::train::Dataset;

pub const MANIFEST_VERSION: u32 = 1;

const EXTENSIONS: [&str; 2] = ["png", "pgm"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Provenance {
    Original,
    /// Generated on load from `source` (a sample path) with `transform`.
    Augmented { source: String, transform: Transform },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    /// Relative to the manifest root, `/`-separated. Augmented samples get a
    /// synthetic `source#augN` id.
    pub path: String,
    pub label: ClassLabel,
    pub blur_score: f64,
    pub contrast_score: f64,
    pub split: Option<Split>,
    pub provenance: Provenance,
}

impl Sample {
    /// Path of the original this sample derives from (itself if original).
    pub fn source(&self) -> &str {
        match &self.provenance {
            Provenance::Original => &self.path,
            Provenance::Augmented { source, .. } => source,
        }
    }

    pub fn is_original(&self) -> bool {
        matches!(self.provenance, Provenance::Original)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rejection {
    pub path: String,
    pub label: ClassLabel,
    pub reason: String,
    pub blur_score: f64,
    pub contrast_score: f64,
}

/// Everything that shapes a manifest besides the raw files and the seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationParams {
    /// Minimum Laplacian variance (on `[0, 1]` intensities).
    pub blur_min: f64,
    /// Bounds on the intensity standard deviation.
    pub contrast_min: f64,
    pub contrast_max: f64,
    /// Keep at most this many originals per class before balancing.
    pub subsample_per_class: Option<usize>,
    /// Pad every class to this count with augmented copies.
    pub target_per_class: Option<usize>,
    pub split_ratio: f64,
    pub augment: AugmentRanges,
    /// Loader output size `[height, width]`.
    pub resolution: [usize; 2],
    /// Fraction of each extent kept by a central crop before resizing.
    pub crop_center: Option<f32>,
}

impl Default for CurationParams {
    fn default() -> Self {
        CurationParams {
            blur_min: 0.0015,
            contrast_min: 0.04,
            contrast_max: 0.45,
            subsample_per_class: None,
            target_per_class: None,
            split_ratio: 0.8,
            augment: AugmentRanges::default(),
            resolution: [64, 64],
            crop_center: None,
        }
    }
}

impl CurationParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.blur_min, self.contrast_min, self.contrast_max];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "curation thresholds must be finite and non-negative".into(),
            ));
        }
        if self.contrast_min > self.contrast_max {
            return Err(Error::Config(format!(
                "contrast_min {} exceeds contrast_max {}",
                self.contrast_min, self.contrast_max
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        if self.resolution.contains(&0) {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if let Some(f) = self.crop_center {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("crop fraction {f} outside (0, 1]")));
            }
        }
        if self.subsample_per_class == Some(0) {
            return Err(Error::Config("subsample count must be positive".into()));
        }
        let a = &self.augment;
        if [a.rotation_deg, a.translate, a.zoom, a.brightness]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
            || a.zoom >= 1.0
        {
            return Err(Error::Config("invalid augmentation ranges".into()));
        }
        Ok(())
    }
}

/// The curated, reproducible record of every sample and its split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Raw corpus directory; sample paths are relative to it.
    pub root: String,
    pub seed: u64,
    pub params: CurationParams,
    pub samples: Vec<Sample>,
    pub rejected: Vec<Rejection>,
}

impl DatasetManifest {
    pub fn root_path(&self) -> PathBuf {
        PathBuf::from(&self.root)
    }

    pub fn class_counts(&self, split: Option<Split>) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            if split.is_none() || s.split == split {
                counts[s.label.index()] += 1;
            }
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::parse("manifest", e))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::parse(
                "manifest",
                format!("unsupported format version {}", m.format_version),
            ));
        }
        m.params.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Decodes one sample as the model sees it: augmentation, optional crop,
    /// bilinear resize to the loader resolution.
    pub fn load_image(&self, sample: &Sample) -> Result<GrayImage> {
        let root = self.root_path();
        let img = match &sample.provenance {
            Provenance::Original => GrayImage::load(&root.join(&sample.path))?,
            Provenance::Augmented { source, transform } => {
                let src = GrayImage::load(&root.join(source))?;
                augment_image(&src, transform, &self.params.augment)?
            }
        };
        let img = match self.params.crop_center {
            Some(f) => img.center_crop(f)?,
            None => img,
        };
        let [h, w] = self.params.resolution;
        img.resize(w, h)
    }

    fn sort(&mut self) {
        self.samples
            .sort_by(|a, b| (a.label, &a.path).cmp(&(b.label, &b.path)));
    }
}

fn list_class(root: &Path, class: ClassLabel) -> Result<Vec<String>> {
    let dir = root.join(class.dir_name());
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let path = entry.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ext_ok && path.is_file() {
            names.push(format!(
                "{}/{}",
                class.dir_name(),
                entry.file_name().to_string_lossy()
            ));
        }
    }
    if names.is_empty() {
        return Err(Error::Domain(format!(
            "class directory {} has no png/pgm images",
            dir.display()
        )));
    }
    names.sort();
    Ok(names)
}

fn score(img: &GrayImage) -> Result<(f64, f64)> {
    Ok((laplacian_variance(img)?, contrast_score(img)))
}

/// Scores every image under `<root>/{Normal,Covid,Pneumonia}` and drops
/// those that are too blurry or whose contrast is out of bounds.
pub fn curate(root: &Path, params: &CurationParams, seed: u64) -> Result<DatasetManifest> {
    params.validate()?;
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for class in ClassLabel::ALL {
        for path in list_class(root, class)? {
            let img = GrayImage::load(&root.join(&path))?;
            let (blur, contrast) = score(&img)?;
            let reason = if contrast < params.contrast_min {
                Some(format!("contrast {contrast:.6} below {}", params.contrast_min))
            } else if contrast > params.contrast_max {
                Some(format!("contrast {contrast:.6} above {}", params.contrast_max))
            } else if blur < params.blur_min {
                Some(format!("blur {blur:.6} below {}", params.blur_min))
            } else {
                None
            };
            match reason {
                Some(reason) => rejected.push(Rejection {
                    path,
                    label: class,
                    reason,
                    blur_score: blur,
                    contrast_score: contrast,
                }),
                None => samples.push(Sample {
                    path,
                    label: class,
                    blur_score: blur,
                    contrast_score: contrast,
                    split: None,
                    provenance: Provenance::Original,
                }),
            }
        }
    }
    let mut m = DatasetManifest {
        format_version: MANIFEST_VERSION,
        root: root.to_string_lossy().into_owned(),
        seed,
        params: *params,
        samples,
        rejected,
    };
    m.sort();
    let counts = m.class_counts(None);
    log::info!(
        "curated {} samples ({} rejected): Normal {}, Covid {}, Pneumonia {}",
        m.samples.len(),
        m.rejected.len(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(m)
}

/// Keeps a seeded random subset of at most `per_class` originals per class.
/// Used when a class already exceeds the balancing target.
pub fn subsample_originals(
    manifest: &DatasetManifest,
    per_class: usize,
    rng: &mut Rng,
) -> Result<DatasetManifest> {
    if manifest.samples.iter().any(|s| !s.is_original()) {
        return Err(Error::Domain(
            "subsampling applies to originals only; run it before balancing".into(),
        ));
    }
    let mut out = manifest.clone();
    out.samples.clear();
    for class in ClassLabel::ALL {
        let mut members: Vec<&Sample> =
            manifest.samples.iter().filter(|s| s.label == class).collect();
        if members.len() > per_class {
            rng.shuffle(&mut members);
            members.truncate(per_class);
        }
        out.samples.extend(members.into_iter().cloned());
    }
    out.sort();
    Ok(out)
}

/// Pads every class to exactly `target` samples with augmented copies of its
/// originals (round-robin over sources, random transforms).
pub fn balance_classes(
    manifest: &DatasetManifest,
    target: usize,
    rng: &mut Rng,
) -> Result<DatasetManifest> {
    let counts = manifest.class_counts(None);
    for class in ClassLabel::ALL {
        let c = counts[class.index()];
        if c > target {
            return Err(Error::Config(format!(
                "class {class} has {c} samples, above the balancing target {target}; subsample first"
            )));
        }
    }
    let mut out = manifest.clone();
    let mut seen: HashSet<(String, [u32; 5])> = HashSet::new();
    let mut taken: HashSet<String> = manifest.samples.iter().map(|s| s.path.clone()).collect();
    for class in ClassLabel::ALL {
        let sources: Vec<&Sample> = manifest
            .samples
            .iter()
            .filter(|s| s.label == class && s.is_original())
            .collect();
        let need = target - counts[class.index()];
        if need == 0 {
            continue;
        }
        if sources.is_empty() {
            return Err(Error::Domain(format!(
                "class {class} has no originals to augment"
            )));
        }
        let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
        for j in 0..need {
            let src = sources[j % sources.len()];
            let transform = loop {
                let t = manifest.params.augment.sample(rng);
                let key = (
                    src.path.clone(),
                    [t.rotation_deg, t.translate_x, t.translate_y, t.zoom, t.brightness]
                        .map(f32::to_bits),
                );
                if seen.insert(key) {
                    break t;
                }
            };
            let path = loop {
                let k = per_source.entry(&src.path).or_insert(0);
                let candidate = format!("{}#aug{}", src.path, k);
                *k += 1;
                if taken.insert(candidate.clone()) {
                    break candidate;
                }
            };
            let img = augment_image(
                &GrayImage::load(&manifest.root_path().join(&src.path))?,
                &transform,
                &manifest.params.augment,
            )?;
            let (blur, contrast) = score(&img)?;
            out.samples.push(Sample {
                path,
                label: class,
                blur_score: blur,
                contrast_score: contrast,
                split: None,
                provenance: Provenance::Augmented {
                    source: src.path.clone(),
                    transform,
                },
            });
        }
    }
    out.params.target_per_class = Some(target);
    out.sort();
    Ok(out)
}

/// Number of training samples for a class of `n` at `ratio`.
pub(crate) fn train_quota(n: usize, ratio: f64) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Chooses groups whose sizes sum to `target` (or the closest reachable
/// total below, then above). Returns a membership mask.
fn choose_groups(sizes: &[usize], target: usize) -> Vec<bool> {
    if sizes.iter().all(|&s| s == 1) {
        return (0..sizes.len()).map(|i| i < target).collect();
    }
    let total: usize = sizes.iter().sum();
    // reach[i][s]: some subset of the first i groups sums to s.
    let mut reach = vec![vec![false; total + 1]; sizes.len() + 1];
    reach[0][0] = true;
    for (i, &g) in sizes.iter().enumerate() {
        for s in 0..=total {
            reach[i + 1][s] = reach[i][s] || (s >= g && reach[i][s - g]);
        }
    }
    let best = (0..=total)
        .filter(|&s| reach[sizes.len()][s])
        .min_by_key(|&s| (s.abs_diff(target), s > target))
        .unwrap_or(0);
    let mut mask = vec![false; sizes.len()];
    let mut s = best;
    for i in (0..sizes.len()).rev() {
        if !reach[i][s] {
            mask[i] = true;
            s -= sizes[i];
        }
    }
    mask
}

/// Stratified split. An original and all its augmented copies always land
/// on the same side; each class gets `floor(ratio · n)` training samples
/// whenever the group sizes allow it.
pub fn split_train_test(
    manifest: &DatasetManifest,
    ratio: f64,
    rng: &mut Rng,
) -> Result<DatasetManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    for class in ClassLabel::ALL {
        let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
        for s in manifest.samples.iter().filter(|s| s.label == class) {
            *groups.entry(s.source()).or_insert(0) += 1;
        }
        let mut groups: Vec<(&str, usize)> = groups.into_iter().collect();
        if groups.len() < 2 {
            return Err(Error::Domain(format!(
                "class {class} has {} source image(s); at least 2 are needed to split",
                groups.len()
            )));
        }
        rng.shuffle(&mut groups);
        let n: usize = groups.iter().map(|g| g.1).sum();
        let quota = train_quota(n, ratio);
        let sizes: Vec<usize> = groups.iter().map(|g| g.1).collect();
        let mut mask = choose_groups(&sizes, quota);
        let chosen = mask.iter().filter(|&&m| m).count();
        if chosen == 0 || chosen == groups.len() {
            // Degenerate quota: keep one group on each side.
            let flip = if chosen == 0 { 0 } else { groups.len() - 1 };
            mask[flip] = !mask[flip];
        }
        let got: usize = sizes.iter().zip(&mask).filter(|(_, &m)| m).map(|(s, _)| s).sum();
        if got != quota {
            log::warn!("class {class}: {got} training samples, ratio asks for {quota}");
        }
        for ((source, _), m) in groups.iter().zip(mask) {
            assignment.insert(source.to_string(), if m { Split::Train } else { Split::Test });
        }
    }
    let mut out = manifest.clone();
    for s in &mut out.samples {
        s.split = Some(assignment[s.source()]);
    }
    out.params.split_ratio = ratio;
    Ok(out)
}

/// Curation, optional subsampling and balancing, then the split. Each stage
/// draws from its own child stream of `seed`.
pub fn build_manifest(root: &Path, params: &CurationParams, seed: u64) -> Result<DatasetManifest> {
    let rng = Rng::new(seed);
    let mut m = curate(root, params, seed)?;
    if let Some(n) = params.subsample_per_class {
        m = subsample_originals(&m, n, &mut rng.child(1))?;
    }
    if let Some(target) = params.target_per_class {
        m = balance_classes(&m, target, &mut rng.child(2))?;
    }
    split_train_test(&m, params.split_ratio, &mut rng.child(3))
}

/// A view of one split of a manifest as a [`Dataset`].
pub struct ManifestDataset<'a> {
    manifest: &'a DatasetManifest,
    indices: Vec<usize>,
}

impl<'a> ManifestDataset<'a> {
    /// `split = None` selects every sample.
    pub fn new(manifest: &'a DatasetManifest, split: Option<Split>) -> Self {
        let indices = manifest
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| split.is_none() || s.split == split)
            .map(|(i, _)| i)
            .collect();
        ManifestDataset { manifest, indices }
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.manifest.samples[self.indices[i]]
    }

    pub fn image(&self, i: usize) -> Result<GrayImage> {
        self.manifest.load_image(self.sample(i))
    }

    /// Loader output shape `[1, H, W]`.
    pub fn input_shape(&self) -> [usize; 3] {
        let [h, w] = self.manifest.params.resolution;
        [1, h, w]
    }

    /// Fails with a dimension error unless the model expects this loader's
    /// output shape.
    pub fn check_input_shape(&self, model_input: [usize; 3]) -> Result<()> {
        if model_input != self.input_shape() {
            return Err(Error::Dimension(format!(
                "model expects input {:?} but the manifest loader produces {:?}",
                model_input,
                self.input_shape()
            )));
        }
        Ok(())
    }
}

impl Dataset for ManifestDataset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, index: usize) -> usize {
        self.sample(index).label.index()
    }

    fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let items = indices
            .iter()
            .map(|&i| {
                if i >= self.len() {
                    return Err(Error::Domain(format!(
                        "sample index {i} out of range for {} samples",
                        self.len()
                    )));
                }
                Ok(self.image(i)?.to_tensor())
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }
}
