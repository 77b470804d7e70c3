//! Line-oriented TSV manifest: `video_id\tclass\tsplit\tpath`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER: &str = "video_id\tclass\tsplit\tpath";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub class: String,
    pub split: Split,
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end_matches('\r') == HEADER => {}
            _ => return Err(Error::Manifest(format!("missing header {HEADER:?}"))),
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [video_id, class, split, path] = fields[..] else {
                return Err(Error::Manifest(format!(
                    "line {}: expected 4 fields, found {}",
                    lineno + 2,
                    fields.len()
                )));
            };
            entries.push(ManifestEntry {
                video_id: video_id.to_string(),
                class: class.to_string(),
                split: split.parse()?,
                path: path.to_string(),
            });
        }
        Ok(Self { entries })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.video_id, e.class, e.split, e.path
            ));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Unique video ids and pairwise disjoint class sets across splits.
    pub fn validate_labels(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut class_split: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate video id {:?}",
                    e.video_id
                )));
            }
            match class_split.get(e.class.as_str()) {
                Some(&s) if s != e.split => {
                    return Err(Error::Manifest(format!(
                        "class {:?} appears in both {} and {}",
                        e.class, s, e.split
                    )))
                }
                Some(_) => {}
                None => {
                    class_split.insert(&e.class, e.split);
                }
            }
        }
        Ok(())
    }

    /// Class labels of a split in lexicographic order.
    pub fn classes(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.class.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Entry indices of one class of a split, in manifest order.
    pub fn videos_of(&self, split: Split, class: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split && e.class == class)
            .map(|(i, _)| i)
            .collect()
    }
}
