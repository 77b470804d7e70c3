//! Episode construction and seeded sampling.

use std::sync::Arc;

use super::manifest::Split;
use super::{Dataset, FeatureSet};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub features: Arc<FeatureSet>,
    /// Ground-truth class index in `0..way`, hidden from scorers.
    pub class: usize,
}

/// A `way`-way `shot`-shot task.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub class_labels: Vec<String>,
    /// `support[c][s]` is shot `s` of class `c`.
    pub support: Vec<Vec<Arc<FeatureSet>>>,
    pub queries: Vec<Query>,
}

impl Episode {
    pub fn new(
        episode_id: u64,
        class_labels: Vec<String>,
        support: Vec<Vec<Arc<FeatureSet>>>,
        queries: Vec<Query>,
    ) -> Result<Self> {
        let way = support.len();
        if way == 0 {
            return Err(Error::Empty("episode has no classes"));
        }
        if class_labels.len() != way {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} classes",
                class_labels.len(),
                way
            )));
        }
        let shot = support[0].len();
        if shot == 0 {
            return Err(Error::Empty("episode has no shots"));
        }
        if support.iter().any(|s| s.len() != shot) {
            return Err(Error::ShapeMismatch(
                "classes have unequal shot counts".into(),
            ));
        }
        if let Some(q) = queries.iter().find(|q| q.class >= way) {
            return Err(Error::IndexOutOfRange {
                index: q.class,
                len: way,
            });
        }
        let (n, d) = (support[0][0].n(), support[0][0].d());
        let all = support
            .iter()
            .flatten()
            .chain(queries.iter().map(|q| &q.features));
        for fs in all {
            if (fs.n(), fs.d()) != (n, d) {
                return Err(Error::ShapeMismatch(format!(
                    "video {} is {}x{}, episode is {}x{}",
                    fs.video_id(),
                    fs.n(),
                    fs.d(),
                    n,
                    d
                )));
            }
        }
        Ok(Self {
            episode_id,
            class_labels,
            support,
            queries,
        })
    }

    pub fn way(&self) -> usize {
        self.support.len()
    }

    pub fn shot(&self) -> usize {
        self.support[0].len()
    }

    /// Clips per video.
    pub fn n(&self) -> usize {
        self.support[0][0].n()
    }

    pub fn d(&self) -> usize {
        self.support[0][0].d()
    }

    /// Canonical text form hashed by [`episode_checksum`].
    fn fingerprint(&self, out: &mut String) {
        use std::fmt::Write;
        let _ = write!(out, "{}:", self.episode_id);
        for (label, shots) in self.class_labels.iter().zip(&self.support) {
            let _ = write!(out, "{label}[");
            for s in shots {
                let _ = write!(out, "{},", s.video_id());
            }
            out.push(']');
        }
        for q in &self.queries {
            let _ = write!(out, "{}>{},", q.features.video_id(), q.class);
        }
        out.push('\n');
    }
}

/// FNV-1a (64-bit) over the canonical text of every episode.
pub fn episode_checksum(episodes: &[Episode]) -> u64 {
    let mut text = String::new();
    for e in episodes {
        e.fingerprint(&mut text);
    }
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Draws `way` classes of `split` without replacement, then `shot` supports and
/// `queries_per_class` queries per class without replacement.
///
/// Classes are considered in lexicographic order of label and videos in
/// manifest order before shuffling. Query order is class-major.
pub fn sample_episode(
    dataset: &Dataset,
    split: Split,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    rng: &mut SeedStream,
    episode_id: u64,
) -> Result<Episode> {
    if way == 0 || shot == 0 {
        return Err(Error::InvalidConfig("way and shot must be >= 1".into()));
    }
    let manifest = &dataset.manifest;
    let mut classes = manifest.classes(split);
    if classes.len() < way {
        return Err(Error::InsufficientClasses {
            need: way,
            have: classes.len(),
        });
    }
    rng.partial_shuffle(way, &mut classes);
    let need = shot + queries_per_class;
    let mut support = Vec::with_capacity(way);
    let mut queries = Vec::with_capacity(way * queries_per_class);
    let mut labels = Vec::with_capacity(way);
    for (c, &class) in classes[..way].iter().enumerate() {
        let mut videos = manifest.videos_of(split, class);
        if videos.len() < need {
            return Err(Error::InsufficientVideos {
                class: class.to_string(),
                need,
                have: videos.len(),
            });
        }
        rng.partial_shuffle(need, &mut videos);
        support.push(
            videos[..shot]
                .iter()
                .map(|&i| Arc::clone(dataset.feature(i)))
                .collect(),
        );
        queries.extend(videos[shot..need].iter().map(|&i| Query {
            features: Arc::clone(dataset.feature(i)),
            class: c,
        }));
        labels.push(class.to_string());
    }
    Episode::new(episode_id, labels, support, queries)
}

/// `count` episodes drawn from one stream seeded with `seed`; episode ids are
/// `0..count`.
pub fn build_fixed_test_episodes(
    dataset: &Dataset,
    split: Split,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    let mut rng = SeedStream::new(seed);
    (0..count)
        .map(|i| {
            sample_episode(
                dataset,
                split,
                way,
                shot,
                queries_per_class,
                &mut rng,
                i as u64,
            )
        })
        .collect()
}
