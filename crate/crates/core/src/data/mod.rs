//! Image ingestion, quality scoring, curation, augmentation-based balancing,
//! stratified splitting and the synthetic corpus generator.

mod augment;
mod image;
mod manifest;
mod quality;
mod synth;

pub use augment::{augment_image, AugmentRanges, Transform};
pub use image::GrayImage;
pub(crate) use image::resize_bilinear as resize_map;
pub use manifest::{
    balance_classes, build_manifest, curate, split_train_test, subsample_originals,
    CurationParams, DatasetManifest, ManifestDataset, Provenance, Rejection, Sample, Split,
    MANIFEST_VERSION,
};
pub use quality::{contrast_score, gaussian_blur, laplacian_variance};
pub use synth::{
    generate_synthetic, BoundingBox, GroundTruth, GroundTruthEntry, SynthParams, GROUND_TRUTH_FILE,
};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Diagnostic class. The discriminant is the model's output index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Normal = 0,
    Covid = 1,
    Pneumonia = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Normal, ClassLabel::Covid, ClassLabel::Pneumonia];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Directory name in a raw corpus.
    pub fn dir_name(self) -> &'static str {
        match self {
            ClassLabel::Normal => "Normal",
            ClassLabel::Covid => "Covid",
            ClassLabel::Pneumonia => "Pneumonia",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}
