//! Corpus manifests, train/test splits and the annotation store.
//!
//! Everything is plain files: a `manifest.json` per corpus and one
//! `annotations.jsonl` with one record per line.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SceneSpec;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("path", format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    /// Relative to the manifest's directory (absolute paths are kept as is).
    pub image_path: PathBuf,
    pub truth_path: PathBuf,
    #[serde(default)]
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub corpus_id: String,
    pub category: String,
    pub frames: Vec<FrameEntry>,
    #[serde(default)]
    pub spec_echo: Option<SceneSpec>,
    /// Directory that relative frame paths resolve against.
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(
        corpus_id: impl Into<String>,
        category: impl Into<String>,
        frames: Vec<FrameEntry>,
        spec_echo: Option<SceneSpec>,
    ) -> Self {
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            corpus_id: corpus_id.into(),
            category: category.into(),
            frames,
            spec_echo,
            root: PathBuf::from("."),
        }
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, entry: &FrameEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    pub fn truth_path(&self, entry: &FrameEntry) -> PathBuf {
        self.root.join(&entry.truth_path)
    }

    pub fn find(&self, frame_id: &str) -> Option<&FrameEntry> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameEntry> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    /// Reads and validates a manifest: known schema version, unique frame
    /// ids, and every referenced file present.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: DatasetManifest = read_json(path)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "manifest schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                    m.schema_version
                ),
            ));
        }
        m.root = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        let mut seen = HashSet::new();
        for f in &m.frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(Error::format(path, format!("duplicate frame_id '{}'", f.frame_id)));
            }
            for p in [m.image_path(f), m.truth_path(f)] {
                if !p.is_file() {
                    return Err(Error::format(
                        path,
                        format!("frame '{}' references missing file {}", f.frame_id, p.display()),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Marks `floor(n·train_fraction)` frames as train and the rest as test,
/// chosen by a seeded shuffle. Frame order in the manifest is unchanged.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(
            "train_fraction",
            format!("must be in (0,1), got {train_fraction}"),
        ));
    }
    let n = manifest.frames.len();
    if n == 0 {
        return Err(Error::invalid("manifest", "no frames to split"));
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.frames[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    Ok(out)
}

/// A human (or scripted) threshold choice for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub frame_id: String,
    pub average_intensity: f64,
    pub manual_threshold: f64,
    /// ISO-8601 / RFC 3339.
    pub annotated_at: String,
    pub config_hash: String,
}

impl AnnotationRecord {
    /// Record stamped with the current UTC time.
    pub fn now(
        frame_id: impl Into<String>,
        average_intensity: f64,
        manual_threshold: f64,
        config_hash: impl Into<String>,
    ) -> Self {
        AnnotationRecord {
            frame_id: frame_id.into(),
            average_intensity,
            manual_threshold,
            annotated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            config_hash: config_hash.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.average_intensity >= 0.0 && self.average_intensity.is_finite()) {
            return Err(Error::invalid(
                "annotation",
                format!("average_intensity must be finite and >= 0, got {}", self.average_intensity),
            ));
        }
        if !self.manual_threshold.is_finite() {
            return Err(Error::invalid("annotation", "manual_threshold must be finite"));
        }
        if chrono::DateTime::parse_from_rfc3339(&self.annotated_at).is_err() {
            return Err(Error::invalid(
                "annotation",
                format!("annotated_at '{}' is not an ISO-8601 timestamp", self.annotated_at),
            ));
        }
        Ok(())
    }
}

/// An annotation together with the split of its frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledAnnotation {
    pub record: AnnotationRecord,
    pub split: Split,
}

/// JSON-lines file of [`AnnotationRecord`]s, one per `(frame_id, config_hash)`.
///
/// Writers are expected to be serialized by the caller (one process owns the
/// file); each write rewrites the file atomically.
#[derive(Clone, Debug)]
pub struct AnnotationStore {
    path: PathBuf,
}

impl AnnotationStore {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        AnnotationStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All records in file order. A missing file is an empty store.
    pub fn records(&self) -> Result<Vec<AnnotationRecord>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map_err(|e| Error::format(&self.path, format!("line {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Inserts `rec`, replacing any record with the same frame and config
    /// hash. The frame must be listed in `manifest`.
    pub fn record(&self, manifest: &DatasetManifest, rec: AnnotationRecord) -> Result<()> {
        self.record_all(manifest, vec![rec])
    }

    /// [`record`](Self::record) for several records with a single rewrite.
    pub fn record_all(&self, manifest: &DatasetManifest, recs: Vec<AnnotationRecord>) -> Result<()> {
        for rec in &recs {
            if manifest.find(&rec.frame_id).is_none() {
                return Err(Error::UnknownFrame(rec.frame_id.clone()));
            }
            rec.validate()?;
        }
        let mut records = self.records()?;
        for rec in recs {
            match records
                .iter_mut()
                .find(|r| r.frame_id == rec.frame_id && r.config_hash == rec.config_hash)
            {
                Some(existing) => *existing = rec,
                None => records.push(rec),
            }
        }
        let mut buf = Vec::new();
        for r in &records {
            serde_json::to_writer(&mut buf, r).map_err(|e| Error::format(&self.path, e.to_string()))?;
            buf.push(b'\n');
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_atomic(&self.path, &buf)
    }

    /// Records for frames of `manifest`, joined with their split and ordered
    /// by frame id (then config hash).
    pub fn load(&self, manifest: &DatasetManifest) -> Result<Vec<LabeledAnnotation>> {
        let mut out: Vec<LabeledAnnotation> = self
            .records()?
            .into_iter()
            .filter_map(|record| {
                let split = manifest.find(&record.frame_id)?.split;
                Some(LabeledAnnotation { record, split })
            })
            .collect();
        out.sort_by(|a, b| {
            (&a.record.frame_id, &a.record.config_hash).cmp(&(&b.record.frame_id, &b.record.config_hash))
        });
        Ok(out)
    }
}
