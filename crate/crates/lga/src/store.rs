//! Feature storage: binary frame/text blobs and the JSON manifest tying
//! them into a [`FeatureStore`].
//!
//! A feature blob holds one `rows x cols` matrix of little-endian `f32`
//! values behind a small header (magic `LGAF`, format version, row and
//! column counts). Frame blobs carry one row per sampled frame; text blobs
//! carry one row per action phase, optionally preceded by a whole-label
//! embedding row when the manifest flags `text_includes_label`.
//!
//! The manifest is a JSON document:
//!
//! ```json
//! {
//!   "version": 1,
//!   "dim": 512,
//!   "classes": [{"id": 0, "label": "...", "text_blob": "text/class_0.lgaf"}],
//!   "videos": [{"id": "v0", "class_id": 0, "blob": "blobs/v0.lgaf", "frames": 8}]
//! }
//! ```
//!
//! Blob paths are resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::FrameFeatures;
use crate::text::TextAnatomy;

/// Magic bytes opening a feature blob.
pub const BLOB_MAGIC: [u8; 4] = *b"LGAF";
/// Current blob format version.
pub const BLOB_VERSION: u16 = 1;
/// Current manifest schema version.
pub const MANIFEST_VERSION: u32 = 1;

/// Errors from blob and manifest I/O and store assembly.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("feature blob {path} is missing")]
    MissingBlob { path: PathBuf },
    #[error("corrupt file {path} at offset {offset}: {detail}")]
    CorruptFile { path: PathBuf, offset: u64, detail: String },
    #[error("file {path} has unsupported version {found}")]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("manifest {path} is malformed: {detail}")]
    BadManifest { path: PathBuf, detail: String },
    #[error("video {video_id} references unknown class {class_id}")]
    DanglingClass { video_id: String, class_id: i64 },
    #[error("video id {video_id} appears more than once")]
    DuplicateVideo { video_id: String },
    #[error("class id {class_id} appears more than once")]
    DuplicateClass { class_id: i64 },
    #[error("{what} has {got} columns, store dim is {expected}")]
    DimMismatch { what: String, expected: usize, got: usize },
    #[error("video {video_id}: manifest promises {manifest} frames, blob holds {blob}")]
    RowCountMismatch { video_id: String, manifest: usize, blob: usize },
    #[error("text anatomies disagree on phase count: {detail}")]
    InconsistentText { detail: String },
    #[error("invalid store operation: {reason}")]
    BadStore { reason: String },
}

/// One class entry in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestClass {
    pub id: i64,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_blob: Option<String>,
    /// When true the text blob's first row is a whole-label embedding and
    /// the remaining rows are the phases.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub text_includes_label: bool,
}

/// One video entry in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub id: String,
    pub class_id: i64,
    pub blob: String,
    pub frames: usize,
}

/// The JSON manifest document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dim: usize,
    pub classes: Vec<ManifestClass>,
    pub videos: Vec<ManifestVideo>,
}

const MAX_BLOB_SIDE: u32 = 1 << 24;
const BLOB_HEADER_LEN: usize = 14;

/// Serializes a matrix into the binary blob format.
pub fn write_feature_blob(path: &Path, rows: &Array2<f32>) -> Result<(), StoreError> {
    if rows.nrows() == 0 || rows.ncols() == 0 {
        return Err(StoreError::BadStore { reason: "refusing to write an empty blob".into() });
    }
    if rows.nrows() > MAX_BLOB_SIDE as usize || rows.ncols() > MAX_BLOB_SIDE as usize {
        return Err(StoreError::BadStore {
            reason: format!("matrix {} x {} exceeds the blob format limits", rows.nrows(), rows.ncols()),
        });
    }
    let mut buf = Vec::with_capacity(BLOB_HEADER_LEN + rows.len() * 4);
    buf.extend_from_slice(&BLOB_MAGIC);
    buf.write_u16::<LittleEndian>(BLOB_VERSION).expect("vec write");
    buf.write_u32::<LittleEndian>(rows.nrows() as u32).expect("vec write");
    buf.write_u32::<LittleEndian>(rows.ncols() as u32).expect("vec write");
    for &v in rows.iter() {
        buf.write_f32::<LittleEndian>(v).expect("vec write");
    }
    std::fs::write(path, buf).map_err(|e| StoreError::Io { path: path.to_path_buf(), source: e })
}

/// Reads a blob back into a matrix, validating the header, the exact
/// length, and value finiteness. Corruption errors carry the byte offset.
pub fn read_feature_blob(path: &Path) -> Result<Array2<f32>, StoreError> {
    let data = match std::fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::MissingBlob { path: path.to_path_buf() })
        }
        Err(e) => return Err(StoreError::Io { path: path.to_path_buf(), source: e }),
    };
    let corrupt = |offset: usize, detail: String| StoreError::CorruptFile {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail,
    };
    if data.len() < BLOB_HEADER_LEN {
        return Err(corrupt(data.len(), "file shorter than the blob header".into()));
    }
    if data[..4] != BLOB_MAGIC {
        return Err(corrupt(0, format!("bad magic {:02x?}, expected {BLOB_MAGIC:02x?}", &data[..4])));
    }
    let mut cursor = std::io::Cursor::new(&data[4..BLOB_HEADER_LEN]);
    let version = cursor.read_u16::<LittleEndian>().expect("header length checked");
    if version != BLOB_VERSION {
        return Err(StoreError::UnsupportedVersion { path: path.to_path_buf(), found: version as u32 });
    }
    let rows = cursor.read_u32::<LittleEndian>().expect("header length checked");
    let cols = cursor.read_u32::<LittleEndian>().expect("header length checked");
    if rows == 0 || cols == 0 || rows > MAX_BLOB_SIDE || cols > MAX_BLOB_SIDE {
        return Err(corrupt(6, format!("implausible shape {rows} x {cols}")));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let expected = BLOB_HEADER_LEN + rows * cols * 4;
    if data.len() < expected {
        return Err(corrupt(
            data.len(),
            format!("file ends after {} bytes, expected {expected}", data.len()),
        ));
    }
    if data.len() > expected {
        return Err(corrupt(expected, format!("{} trailing bytes", data.len() - expected)));
    }
    let mut flat = vec![0f32; rows * cols];
    std::io::Cursor::new(&data[BLOB_HEADER_LEN..])
        .read_f32_into::<LittleEndian>(&mut flat)
        .expect("length checked");
    if let Some(bad) = flat.iter().position(|v| !v.is_finite()) {
        return Err(corrupt(BLOB_HEADER_LEN + bad * 4, "non-finite feature value".into()));
    }
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("shape"))
}

/// An in-memory dataset: classes, their videos' frame features, and
/// optional per-class text anatomies, all sharing one embedding dim.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dim: usize,
    classes: BTreeMap<i64, String>,
    class_videos: BTreeMap<i64, Vec<String>>,
    videos: BTreeMap<String, FrameFeatures>,
    text: BTreeMap<i64, TextAnatomy>,
    manifest_path: Option<PathBuf>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::BadStore { reason: "dim must be at least 1".into() });
        }
        Ok(Self {
            dim,
            classes: BTreeMap::new(),
            class_videos: BTreeMap::new(),
            videos: BTreeMap::new(),
            text: BTreeMap::new(),
            manifest_path: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_class(&mut self, id: i64, label: impl Into<String>) -> Result<(), StoreError> {
        if self.classes.contains_key(&id) {
            return Err(StoreError::DuplicateClass { class_id: id });
        }
        self.classes.insert(id, label.into());
        self.class_videos.insert(id, Vec::new());
        Ok(())
    }

    /// Registers a video; its class must already exist and its features
    /// must match the store dim.
    pub fn add_video(&mut self, features: FrameFeatures) -> Result<(), StoreError> {
        let class_id = features.class_id().ok_or_else(|| StoreError::BadStore {
            reason: format!("video {} carries no class id", features.video_id()),
        })?;
        if !self.classes.contains_key(&class_id) {
            return Err(StoreError::DanglingClass { video_id: features.video_id().to_string(), class_id });
        }
        if features.dim() != self.dim {
            return Err(StoreError::DimMismatch {
                what: format!("video {}", features.video_id()),
                expected: self.dim,
                got: features.dim(),
            });
        }
        let id = features.video_id().to_string();
        if self.videos.contains_key(&id) {
            return Err(StoreError::DuplicateVideo { video_id: id });
        }
        self.class_videos.get_mut(&class_id).expect("class exists").push(id.clone());
        self.videos.insert(id, features);
        Ok(())
    }

    /// Attaches text anatomy to its class. All text anatomies in one store
    /// must agree on the phase count.
    pub fn set_text(&mut self, text: TextAnatomy) -> Result<(), StoreError> {
        let class_id = text.class_id();
        if !self.classes.contains_key(&class_id) {
            return Err(StoreError::DanglingClass {
                video_id: format!("text for class {class_id}"),
                class_id,
            });
        }
        if text.dim() != self.dim {
            return Err(StoreError::DimMismatch {
                what: format!("text for class {class_id}"),
                expected: self.dim,
                got: text.dim(),
            });
        }
        if let Some((&other_id, other)) = self.text.iter().next() {
            if other.phases() != text.phases() {
                return Err(StoreError::InconsistentText {
                    detail: format!(
                        "class {class_id} has {} phases, class {other_id} has {}",
                        text.phases(),
                        other.phases()
                    ),
                });
            }
        }
        self.text.insert(class_id, text);
        Ok(())
    }

    /// Class ids in ascending order.
    pub fn class_ids(&self) -> Vec<i64> {
        self.classes.keys().copied().collect()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn video_count(&self) -> usize {
        self.videos.len()
    }

    pub fn label(&self, class_id: i64) -> Option<&str> {
        self.classes.get(&class_id).map(String::as_str)
    }

    /// Video ids of one class, in registration order.
    pub fn class_videos(&self, class_id: i64) -> &[String] {
        self.class_videos.get(&class_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn video(&self, video_id: &str) -> Option<&FrameFeatures> {
        self.videos.get(video_id)
    }

    pub fn text(&self, class_id: i64) -> Option<&TextAnatomy> {
        self.text.get(&class_id)
    }

    /// The shared phase count of stored text anatomies, if any exist.
    pub fn text_phases(&self) -> Option<usize> {
        self.text.values().next().map(TextAnatomy::phases)
    }

    /// True when every class carries text anatomy with the given phase
    /// count.
    pub fn all_classes_have_text(&self, phases: usize) -> bool {
        self.classes.keys().all(|id| self.text.get(id).is_some_and(|t| t.phases() == phases))
    }

    pub fn manifest_path(&self) -> Option<&Path> {
        self.manifest_path.as_deref()
    }
}

/// Loads a manifest and every blob it references into memory.
pub fn load_store(manifest_path: &Path) -> Result<FeatureStore, StoreError> {
    let raw = std::fs::read_to_string(manifest_path)
        .map_err(|e| StoreError::Io { path: manifest_path.to_path_buf(), source: e })?;
    let manifest: Manifest = serde_json::from_str(&raw)
        .map_err(|e| StoreError::BadManifest { path: manifest_path.to_path_buf(), detail: e.to_string() })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(StoreError::UnsupportedVersion {
            path: manifest_path.to_path_buf(),
            found: manifest.version,
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut store = FeatureStore::new(manifest.dim)?;

    for class in &manifest.classes {
        store.add_class(class.id, class.label.clone())?;
    }
    for video in &manifest.videos {
        if !store.classes.contains_key(&video.class_id) {
            return Err(StoreError::DanglingClass {
                video_id: video.id.clone(),
                class_id: video.class_id,
            });
        }
        let blob_path = base.join(&video.blob);
        let rows = read_feature_blob(&blob_path)?;
        if rows.nrows() != video.frames {
            return Err(StoreError::RowCountMismatch {
                video_id: video.id.clone(),
                manifest: video.frames,
                blob: rows.nrows(),
            });
        }
        if rows.ncols() != manifest.dim {
            return Err(StoreError::DimMismatch {
                what: format!("video {}", video.id),
                expected: manifest.dim,
                got: rows.ncols(),
            });
        }
        let features = FrameFeatures::new(&video.id, Some(video.class_id), rows)
            .map_err(|e| StoreError::BadStore { reason: format!("video {}: {e}", video.id) })?;
        store.add_video(features)?;
    }
    for class in &manifest.classes {
        let Some(blob) = &class.text_blob else { continue };
        let blob_path = base.join(blob);
        let rows = read_feature_blob(&blob_path)?;
        if rows.ncols() != manifest.dim {
            return Err(StoreError::DimMismatch {
                what: format!("text for class {}", class.id),
                expected: manifest.dim,
                got: rows.ncols(),
            });
        }
        let wide = rows.mapv(|v| v as f64);
        let (label_embedding, phases): (Option<Array1<f64>>, Array2<f64>) = if class.text_includes_label
        {
            if wide.nrows() < 2 {
                return Err(StoreError::BadManifest {
                    path: manifest_path.to_path_buf(),
                    detail: format!(
                        "class {} flags a label embedding but its text blob has {} row(s)",
                        class.id,
                        wide.nrows()
                    ),
                });
            }
            (Some(wide.row(0).to_owned()), wide.slice(ndarray::s![1.., ..]).to_owned())
        } else {
            (None, wide)
        };
        let text = TextAnatomy::new(class.id, class.label.clone(), phases, label_embedding)
            .map_err(|e| StoreError::BadStore { reason: format!("text for class {}: {e}", class.id) })?;
        store.set_text(text)?;
    }
    store.manifest_path = Some(manifest_path.to_path_buf());
    Ok(store)
}

fn filename_safe(id: &str) -> bool {
    !id.is_empty()
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.contains("..")
}

/// Writes a store to `dir` as `manifest.json` plus per-video blobs under
/// `blobs/` and per-class text blobs under `text/`. Layout and byte content
/// are deterministic for a given store. Returns the manifest path.
pub fn save_store(store: &FeatureStore, dir: &Path) -> Result<PathBuf, StoreError> {
    let blobs_dir = dir.join("blobs");
    let text_dir = dir.join("text");
    for d in [dir, &blobs_dir, &text_dir] {
        std::fs::create_dir_all(d).map_err(|e| StoreError::Io { path: d.to_path_buf(), source: e })?;
    }

    let mut classes = Vec::with_capacity(store.classes.len());
    for (&id, label) in &store.classes {
        let (text_blob, text_includes_label) = match store.text.get(&id) {
            Some(text) => {
                let rel = format!("text/class_{id}.lgaf");
                let mut rows = Array2::<f32>::zeros((
                    text.phases() + usize::from(text.label_embedding().is_some()),
                    store.dim,
                ));
                let mut next = 0;
                if let Some(label_row) = text.label_embedding() {
                    for (c, &v) in label_row.iter().enumerate() {
                        rows[(next, c)] = v as f32;
                    }
                    next += 1;
                }
                for k in 0..text.phases() {
                    for (c, &v) in text.phase(k).iter().enumerate() {
                        rows[(next + k, c)] = v as f32;
                    }
                }
                write_feature_blob(&dir.join(&rel), &rows)?;
                (Some(rel), text.label_embedding().is_some())
            }
            None => (None, false),
        };
        classes.push(ManifestClass { id, label: label.clone(), text_blob, text_includes_label });
    }

    let mut videos = Vec::with_capacity(store.videos.len());
    for (&class_id, ids) in &store.class_videos {
        for id in ids {
            if !filename_safe(id) {
                return Err(StoreError::BadStore {
                    reason: format!("video id {id:?} is not filename-safe"),
                });
            }
            let features = store.videos.get(id).expect("index consistency");
            let rel = format!("blobs/{id}.lgaf");
            write_feature_blob(&dir.join(&rel), features.frames())?;
            videos.push(ManifestVideo { id: id.clone(), class_id, blob: rel, frames: features.len() });
        }
    }

    let manifest = Manifest { version: MANIFEST_VERSION, dim: store.dim, classes, videos };
    let manifest_path = dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    std::fs::write(&manifest_path, body)
        .map_err(|e| StoreError::Io { path: manifest_path.clone(), source: e })?;
    Ok(manifest_path)
}
