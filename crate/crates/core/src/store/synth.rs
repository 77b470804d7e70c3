//! Synthetic clip-feature datasets with a controllable temporal-order signal.
//!
//! Every ordinary class owns `segments` prototypes drawn uniformly on the unit
//! sphere; a video of the class is its prototype sequence plus isotropic
//! Gaussian noise. In a reversed pair the second class reuses the first
//! class's prototypes in reverse order, so the two classes differ only in
//! temporal order.

use std::fs;
use std::path::Path;

use super::format::write_feature_file;
use super::manifest::{Manifest, ManifestEntry, Split, MANIFEST_FILE};
use super::FeatureSet;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of classes per split.
    pub classes: SplitCounts,
    /// Clips per video.
    pub segments: usize,
    pub d: usize,
    /// Scale of the noise vector: each component has standard deviation
    /// `noise_sigma / sqrt(d)`, so `E|noise|^2 = noise_sigma^2`.
    pub noise_sigma: f64,
    /// Reversed class pairs, allocated within the test split first, then
    /// val, then train.
    pub order_pairs: usize,
    pub videos_per_class: SplitCounts,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: SplitCounts {
                train: 24,
                val: 12,
                test: 24,
            },
            segments: 8,
            d: 16,
            noise_sigma: 0.5,
            order_pairs: 0,
            videos_per_class: SplitCounts {
                train: 20,
                val: 10,
                test: 10,
            },
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.total()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise_sigma must be finite and >= 0".into(),
            ));
        }
        if self.order_pairs * 2 > self.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "order_pairs={} needs {} classes, only {} configured",
                self.order_pairs,
                self.order_pairs * 2,
                self.num_classes()
            )));
        }
        let capacity: usize = Split::ALL.iter().map(|&s| self.classes.get(s) / 2).sum();
        if self.order_pairs > capacity {
            return Err(Error::InvalidConfig(format!(
                "order_pairs={} exceeds the {} pairs that fit inside splits",
                self.order_pairs, capacity
            )));
        }
        if self.segments == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("segments and d must be >= 1".into()));
        }
        Ok(())
    }

    /// Global class indices in split order: train, val, test.
    fn split_of(&self, class: usize) -> Split {
        if class < self.classes.train {
            Split::Train
        } else if class < self.classes.train + self.classes.val {
            Split::Val
        } else {
            Split::Test
        }
    }

    fn split_start(&self, split: Split) -> usize {
        match split {
            Split::Train => 0,
            Split::Val => self.classes.train,
            Split::Test => self.classes.train + self.classes.val,
        }
    }

    /// `(first, second)` global class indices of every reversed pair.
    pub fn reversed_pairs(&self) -> Vec<(usize, usize)> {
        let mut remaining = self.order_pairs;
        let mut pairs = Vec::new();
        for split in [Split::Test, Split::Val, Split::Train] {
            let start = self.split_start(split);
            let take = remaining.min(self.classes.get(split) / 2);
            pairs.extend((0..take).map(|p| (start + 2 * p, start + 2 * p + 1)));
            remaining -= take;
        }
        pairs
    }
}

pub fn class_label(class: usize) -> String {
    format!("c{class:03}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSummary {
    pub videos: SplitCounts,
    pub classes: SplitCounts,
    pub reversed_pairs: Vec<(String, String)>,
}

/// Builds the manifest and the feature sets (in manifest order).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Manifest, Vec<FeatureSet>)> {
    spec.validate()?;
    let mut rng = SeedStream::new(spec.seed);
    let num_classes = spec.num_classes();

    let mut partner_of = vec![None; num_classes];
    for (a, b) in spec.reversed_pairs() {
        partner_of[b] = Some(a);
    }
    let mut prototypes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(num_classes);
    for partner in &partner_of {
        let protos = match *partner {
            Some(a) => prototypes[a].iter().rev().cloned().collect(),
            None => (0..spec.segments)
                .map(|_| rng.unit_sphere(spec.d))
                .collect(),
        };
        prototypes.push(protos);
    }

    let component_sigma = spec.noise_sigma / (spec.d as f64).sqrt();
    let mut entries = Vec::new();
    let mut features = Vec::new();
    for (class, protos) in prototypes.iter().enumerate() {
        let split = spec.split_of(class);
        let label = class_label(class);
        for v in 0..spec.videos_per_class.get(split) {
            let video_id = format!("{label}_v{v:03}");
            let mut data = Vec::with_capacity(spec.segments * spec.d);
            for proto in protos {
                for &p in proto {
                    let noise = if component_sigma > 0.0 {
                        component_sigma * rng.normal()
                    } else {
                        0.0
                    };
                    data.push((p + noise) as f32);
                }
            }
            features.push(FeatureSet::new(&video_id, spec.segments, spec.d, data)?);
            entries.push(ManifestEntry {
                path: format!("features/{video_id}.fvf"),
                video_id,
                class: label.clone(),
                split,
            });
        }
    }
    Ok((Manifest::new(entries), features))
}

/// Generates a dataset and writes `manifest.tsv` plus `features/*.fvf` under `dir`.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<SyntheticSummary> {
    let (manifest, features) = generate_synthetic(spec)?;
    let feature_dir = dir.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    for (entry, fs) in manifest.entries().iter().zip(&features) {
        write_feature_file(fs, &dir.join(&entry.path))?;
    }
    manifest.write(&dir.join(MANIFEST_FILE))?;
    let count = |split| {
        manifest
            .entries()
            .iter()
            .filter(|e| e.split == split)
            .count()
    };
    Ok(SyntheticSummary {
        videos: SplitCounts {
            train: count(Split::Train),
            val: count(Split::Val),
            test: count(Split::Test),
        },
        classes: spec.classes,
        reversed_pairs: spec
            .reversed_pairs()
            .into_iter()
            .map(|(a, b)| (class_label(a), class_label(b)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64, pairs: usize) -> SyntheticSpec {
        SyntheticSpec {
            classes: SplitCounts {
                train: 4,
                val: 2,
                test: 4,
            },
            segments: 5,
            d: 3,
            noise_sigma: noise,
            order_pairs: pairs,
            videos_per_class: SplitCounts {
                train: 3,
                val: 2,
                test: 3,
            },
            seed: 42,
        }
    }

    #[test]
    fn zero_noise_videos_of_a_class_are_identical() {
        let (m, f) = generate_synthetic(&small(0.0, 0)).unwrap();
        let a = m.videos_of(Split::Train, "c000");
        assert_eq!(f[a[0]].data(), f[a[1]].data());
    }

    #[test]
    fn reversed_pair_is_clip_reversal() {
        let spec = small(0.0, 2);
        let (m, f) = generate_synthetic(&spec).unwrap();
        let pairs = spec.reversed_pairs();
        assert_eq!(pairs, vec![(6, 7), (8, 9)]);
        for (a, b) in pairs {
            let va = &f[m.videos_of(Split::Test, &class_label(a))[0]];
            let vb = &f[m.videos_of(Split::Test, &class_label(b))[0]];
            let rev: Vec<usize> = (0..spec.segments).rev().collect();
            assert_eq!(va.permuted(&rev).unwrap().data(), vb.data());
        }
    }

    #[test]
    fn pairs_spill_into_other_splits() {
        let spec = small(0.0, 4);
        assert_eq!(spec.reversed_pairs(), vec![(6, 7), (8, 9), (4, 5), (0, 1)]);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(&small(0.3, 1)).unwrap();
        let b = generate_synthetic(&small(0.3, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn splits_are_disjoint() {
        let (m, _) = generate_synthetic(&small(0.3, 1)).unwrap();
        m.validate_labels().unwrap();
        assert_eq!(m.classes(Split::Val), vec!["c004", "c005"]);
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = small(-1.0, 0);
        assert!(generate_synthetic(&s).is_err());
        s.noise_sigma = 0.1;
        s.order_pairs = 6;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn noise_scale_is_isotropic() {
        let mut spec = small(0.5, 0);
        spec.d = 64;
        spec.videos_per_class.train = 50;
        let (m, f) = generate_synthetic(&spec).unwrap();
        let ids = m.videos_of(Split::Train, "c000");
        // mean squared distance between two videos of a class is 2 sigma^2 per clip
        let mut acc = 0.0;
        let mut count = 0.0;
        for w in ids.windows(2) {
            for (a, b) in f[w[0]].clips().zip(f[w[1]].clips()) {
                acc += a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| ((x - y) as f64).powi(2))
                    .sum::<f64>();
                count += 1.0;
            }
        }
        let msd = acc / count;
        assert!((msd - 0.5).abs() < 0.05, "{msd}");
    }
}
