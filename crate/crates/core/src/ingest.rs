//! Detection manifests and single-object crops.
//!
//! A manifest is JSON Lines: a header `{"version": 1, "feature_dim": D}`
//! followed by one image record per line, each carrying its detector boxes
//! and one feature vector per box. Every box becomes an [`ObjectInstance`]
//! with a square crop; the resulting queue order is the labeling order.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::ObjectId;
use crate::similarity::{FeatureStore, FeatureVector, SimilarityError};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading manifest: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("object {object_id}: feature has length {found}, manifest declares {expected}")]
    DimensionMismatch {
        object_id: ObjectId,
        expected: usize,
        found: usize,
    },
    #[error("object {object_id}: {source}")]
    InvalidFeature {
        object_id: ObjectId,
        source: SimilarityError,
    },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image {0:?} has a zero dimension")]
    InvalidImage(String),
    #[error("degenerate box {object_id}: {reason}")]
    DegenerateBox { object_id: ObjectId, reason: String },
    #[error("object {0}: detector score outside [0, 1]")]
    InvalidScore(ObjectId),
}

/// Axis-aligned detector box in pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
    pub score: f64,
}

/// Square crop window, always inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CropRect {
    pub fn side(&self) -> u32 {
        self.w
    }

    pub fn is_square(&self) -> bool {
        self.w == self.h
    }

    pub fn within(&self, img_w: u32, img_h: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(img_w)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(img_h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CropError {
    #[error("box has zero width or height")]
    ZeroSize,
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("box does not intersect the image")]
    OutsideImage,
}

/// Smallest square containing the box, centred on it and translated (never
/// shrunk) to fit inside the image. When the square is larger than the
/// image's shorter side it is clamped to that side.
pub fn square_crop(bbox: &BoundingBox, img_w: u32, img_h: u32) -> Result<CropRect, CropError> {
    if bbox.w == 0 || bbox.h == 0 {
        return Err(CropError::ZeroSize);
    }
    if img_w == 0 || img_h == 0 {
        return Err(CropError::EmptyImage);
    }
    let (x, y) = (bbox.x, bbox.y);
    let (w, h) = (i64::from(bbox.w), i64::from(bbox.h));
    if x >= i64::from(img_w) || y >= i64::from(img_h) || x + w <= 0 || y + h <= 0 {
        return Err(CropError::OutsideImage);
    }
    let side = w.max(h).min(i64::from(img_w.min(img_h)));
    // offsets round toward the top-left when the slack is odd
    let place = |origin: i64, extent: i64, limit: u32| -> i64 {
        let centred = origin + (extent - side).div_euclid(2);
        centred.clamp(0, i64::from(limit) - side)
    };
    let cx = place(x, w, img_w);
    let cy = place(y, h, img_h);
    let side = side as u32;
    Ok(CropRect {
        x: cx as u32,
        y: cy as u32,
        w: side,
        h: side,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoundingBox>,
}

impl ImageRecord {
    pub fn object_id(&self, ordinal: usize) -> ObjectId {
        ObjectId(format!("{}#{}", self.image_id, ordinal))
    }
}

/// A localized single-object crop with its feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub object_id: ObjectId,
    pub source: String,
    pub uri: String,
    pub crop: CropRect,
    pub score: f64,
    pub feature: FeatureVector,
}

/// Header line of a manifest file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub feature_dim: usize,
}

/// Box as written in a manifest line, feature inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLine {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
    pub score: f64,
    pub feature: Vec<f64>,
}

/// One image as written in a manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub image_id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoxLine>,
}

/// A validated manifest: image records plus the feature of every box.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub feature_dim: usize,
    pub records: Vec<ImageRecord>,
    pub store: FeatureStore,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectQueue {
    pub objects: Vec<ObjectInstance>,
    /// Images that contributed no objects.
    pub skipped: Vec<String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest, IngestError> {
        let file = fs::File::open(path)?;
        Manifest::read(io::BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Manifest, IngestError> {
        let mut header: Option<ManifestHeader> = None;
        let mut lines = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| IngestError::ParseError {
                line: line_no,
                message: e.to_string(),
            };
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(parse_err)?);
            } else {
                lines.push((line_no, serde_json::from_str::<RecordLine>(&line).map_err(parse_err)?));
            }
        }
        let header = header.ok_or(IngestError::ParseError {
            line: 1,
            message: "missing manifest header".into(),
        })?;
        Manifest::from_lines(header, lines.into_iter().map(|(_, l)| l))
    }

    /// Validates parsed lines into a manifest.
    pub fn from_lines(
        header: ManifestHeader,
        lines: impl IntoIterator<Item = RecordLine>,
    ) -> Result<Manifest, IngestError> {
        if header.version != MANIFEST_VERSION {
            return Err(IngestError::UnsupportedVersion(header.version));
        }
        let dim = header.feature_dim;
        let mut store = FeatureStore::new(dim);
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for line in lines {
            if !seen.insert(line.image_id.clone()) {
                return Err(IngestError::DuplicateId(line.image_id));
            }
            if line.width == 0 || line.height == 0 {
                return Err(IngestError::InvalidImage(line.image_id));
            }
            let mut record = ImageRecord {
                image_id: line.image_id,
                uri: line.uri,
                width: line.width,
                height: line.height,
                boxes: Vec::with_capacity(line.boxes.len()),
            };
            for (i, b) in line.boxes.into_iter().enumerate() {
                let object_id = record.object_id(i + 1);
                let bbox = BoundingBox {
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                    score: b.score,
                };
                if !(0.0..=1.0).contains(&bbox.score) {
                    return Err(IngestError::InvalidScore(object_id));
                }
                square_crop(&bbox, record.width, record.height).map_err(|e| {
                    IngestError::DegenerateBox {
                        object_id: object_id.clone(),
                        reason: e.to_string(),
                    }
                })?;
                if b.feature.len() != dim {
                    return Err(IngestError::DimensionMismatch {
                        object_id,
                        expected: dim,
                        found: b.feature.len(),
                    });
                }
                let feature = FeatureVector::new(b.feature).map_err(|source| {
                    IngestError::InvalidFeature {
                        object_id: object_id.clone(),
                        source,
                    }
                })?;
                store
                    .insert(object_id, feature)
                    .expect("dimension checked above");
                record.boxes.push(bbox);
            }
            records.push(record);
        }
        Ok(Manifest {
            feature_dim: dim,
            records,
            store,
        })
    }

    pub fn header(&self) -> ManifestHeader {
        ManifestHeader {
            version: MANIFEST_VERSION,
            feature_dim: self.feature_dim,
        }
    }

    /// Inverse of [`Manifest::from_lines`].
    pub fn to_lines(&self) -> Vec<RecordLine> {
        self.records
            .iter()
            .map(|r| RecordLine {
                image_id: r.image_id.clone(),
                uri: r.uri.clone(),
                width: r.width,
                height: r.height,
                boxes: r
                    .boxes
                    .iter()
                    .enumerate()
                    .map(|(i, b)| BoxLine {
                        x: b.x,
                        y: b.y,
                        w: b.w,
                        h: b.h,
                        score: b.score,
                        feature: self
                            .store
                            .get(&r.object_id(i + 1))
                            .expect("every box has a feature")
                            .values()
                            .to_vec(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// Manifest text in the on-disk JSON Lines format.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        for line in self.to_lines() {
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn object_count(&self) -> usize {
        self.records.iter().map(|r| r.boxes.len()).sum()
    }

    /// Expands every image into its single-object instances, in manifest
    /// order then box order.
    pub fn explode(&self) -> ObjectQueue {
        let mut queue = ObjectQueue::default();
        for record in &self.records {
            if record.boxes.is_empty() {
                log::info!("SkippedNoDetections: image {}", record.image_id);
                queue.skipped.push(record.image_id.clone());
                continue;
            }
            for (i, bbox) in record.boxes.iter().enumerate() {
                let object_id = record.object_id(i + 1);
                let crop = square_crop(bbox, record.width, record.height)
                    .expect("boxes validated at load");
                let feature = self
                    .store
                    .get(&object_id)
                    .expect("features validated at load")
                    .clone();
                queue.objects.push(ObjectInstance {
                    object_id,
                    source: record.image_id.clone(),
                    uri: record.uri.clone(),
                    crop,
                    score: bbox.score,
                    feature,
                });
            }
        }
        queue
    }
}
