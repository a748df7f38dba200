use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::image::FaceImage;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Suspect,
    ReferenceCandidate,
}

/// One frame of the corpus. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub v: u32,
    pub frame_id: String,
    pub image_path: String,
    pub landmarks_path: String,
    pub identity: String,
    pub label: Label,
    pub method: Option<String>,
    pub video_id: String,
    pub frame_index: u32,
    pub split: Split,
    pub role: Role,
}

/// JSON-lines frame index plus the directory its relative paths resolve
/// against.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            root: root.into(),
            entries,
        }
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::ManifestParse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if entry.v != MANIFEST_VERSION {
                return Err(Error::ManifestParse {
                    line: i + 1,
                    message: format!("unsupported schema version {}", entry.v),
                });
            }
            entries.push(entry);
        }
        Ok(Self::new(root, entries))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<FaceImage> {
        FaceImage::load(&self.resolve(&entry.image_path))
    }

    pub fn load_landmarks(&self, entry: &ManifestEntry) -> Result<LandmarkSet> {
        LandmarkSet::load(&self.resolve(&entry.landmarks_path))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Sorted distinct identities and their zero-based class indices.
    pub fn identity_classes(&self) -> BTreeMap<String, usize> {
        let ids: BTreeSet<&str> = self.entries.iter().map(|e| e.identity.as_str()).collect();
        ids.into_iter().enumerate().map(|(i, s)| (s.to_string(), i)).collect()
    }

    /// Training must never see a fake frame.
    pub fn check_fake_free_training(&self) -> Result<()> {
        let fakes = self
            .split(Split::Train)
            .filter(|e| e.label == Label::Fake)
            .count();
        if fakes > 0 {
            return Err(Error::FakeInTrainSplit(fakes));
        }
        Ok(())
    }

    /// Checks every schema invariant: fake-free training and no reference
    /// candidate sharing a video with a test suspect of the same identity.
    pub fn validate(&self) -> Result<()> {
        self.check_fake_free_training()?;
        let mut suspect_videos: HashMap<&str, BTreeSet<&str>> = HashMap::new();
        for e in self.split(Split::Test).filter(|e| e.role == Role::Suspect) {
            suspect_videos
                .entry(e.identity.as_str())
                .or_default()
                .insert(e.video_id.as_str());
        }
        for e in self.entries.iter().filter(|e| e.role == Role::ReferenceCandidate) {
            if suspect_videos
                .get(e.identity.as_str())
                .is_some_and(|vids| vids.contains(e.video_id.as_str()))
            {
                return Err(Error::SameVideoReference {
                    candidate: e.frame_id.clone(),
                    video: e.video_id.clone(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.frame_id.as_str()) {
                return Err(Error::ManifestParse {
                    line: 0,
                    message: format!("duplicate frame_id {}", e.frame_id),
                });
            }
        }
        Ok(())
    }
}
