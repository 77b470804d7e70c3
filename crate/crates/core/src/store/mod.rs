//! Feature files, dataset manifests, synthetic data and episode sampling.

mod episode;
mod format;
mod manifest;
mod synth;

use std::path::Path;
use std::sync::Arc;

pub use episode::{build_fixed_test_episodes, episode_checksum, sample_episode, Episode, Query};
pub use format::{read_feature_file, write_feature_file, FEATURE_MAGIC};
pub use manifest::{Manifest, ManifestEntry, Split, MANIFEST_FILE};
pub use synth::{
    class_label, generate_synthetic, write_synthetic, SplitCounts, SyntheticSpec, SyntheticSummary,
};

use crate::error::{Error, Result};

/// One video: `n` clip features of dimension `d`, stored clip-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    video_id: String,
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureSet {
    pub fn new(video_id: impl Into<String>, n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Empty("feature set needs n >= 1 and d >= 1"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            video_id: video_id.into(),
            n,
            d,
            data,
        })
    }

    pub fn from_clips(video_id: impl Into<String>, clips: &[Vec<f32>]) -> Result<Self> {
        let n = clips.len();
        let d = clips.first().map_or(0, Vec::len);
        if let Some(bad) = clips.iter().find(|c| c.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(video_id, n, d, clips.concat())
    }

    pub fn with_video_id(mut self, video_id: impl Into<String>) -> Self {
        self.video_id = video_id.into();
        self
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn clip(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn clips(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Same video with clips reordered so that new clip `i` is old clip `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: order.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            if i >= self.n {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.n,
                });
            }
            data.extend_from_slice(self.clip(i));
        }
        Ok(Self {
            video_id: self.video_id.clone(),
            n: self.n,
            d: self.d,
            data,
        })
    }
}

/// A manifest plus every feature set it references, loaded and validated.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    features: Vec<Arc<FeatureSet>>,
}

impl Dataset {
    /// Loads `manifest.tsv` from `dir` and every feature file it references.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(&dir.join(manifest::MANIFEST_FILE))?;
        Self::from_manifest(manifest, dir)
    }

    pub fn from_manifest(manifest: Manifest, root: &Path) -> Result<Self> {
        manifest.validate_labels()?;
        let mut features = Vec::with_capacity(manifest.entries().len());
        let mut shape: Option<(usize, usize)> = None;
        for entry in manifest.entries() {
            let fs = read_feature_file(&root.join(&entry.path))?.with_video_id(&entry.video_id);
            match shape {
                None => shape = Some((fs.n(), fs.d())),
                Some(s) if s != (fs.n(), fs.d()) => {
                    return Err(Error::Manifest(format!(
                        "video {} has shape {}x{}, expected {}x{}",
                        entry.video_id,
                        fs.n(),
                        fs.d(),
                        s.0,
                        s.1
                    )))
                }
                Some(_) => {}
            }
            features.push(Arc::new(fs));
        }
        Ok(Self { manifest, features })
    }

    /// In-memory dataset; `features[i]` belongs to manifest entry `i`.
    pub fn from_parts(manifest: Manifest, features: Vec<FeatureSet>) -> Result<Self> {
        if features.len() != manifest.entries().len() {
            return Err(Error::Manifest(format!(
                "{} feature sets for {} manifest entries",
                features.len(),
                manifest.entries().len()
            )));
        }
        manifest.validate_labels()?;
        Ok(Self {
            manifest,
            features: features.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn feature(&self, index: usize) -> &Arc<FeatureSet> {
        &self.features[index]
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.manifest.entries().iter().any(|e| e.split == split)
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.features.first().map(|f| (f.n(), f.d()))
    }
}
