//! Precomputed embeddings for objects and descriptions.
//!
//! The frozen encoders are not run here. Their outputs live in a
//! [`FeatureArchive`], either imported from elsewhere or manufactured by the
//! [`synth`] generator.

mod archive;
pub mod synth;

use std::collections::HashMap;

use thiserror::Error;

use crate::voxel::{FactorSet, VoxelError};

pub use archive::{read_archive, write_archive, write_records, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub(crate) use archive::{write_atomic, Reader, Writer};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}, expected \"VLGF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload while reading {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("record {id}: {field} has length {found}, manifest declares {expected}")]
    DimensionMismatch {
        id: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("string too long to encode ({0} bytes)")]
    StringTooLong(usize),
    #[error("invalid utf-8 in {0}")]
    Utf8(String),
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

/// Precomputed features of one candidate object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeatures {
    pub object_id: String,
    /// One embedding per rendered view.
    pub view_embeddings: Vec<Vec<f32>>,
    pub factors: FactorSet,
}

/// Precomputed features of one referring expression.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionFeatures {
    pub description_id: String,
    pub sentence_embedding: Vec<f32>,
    pub word_embeddings: Vec<Vec<f32>>,
    pub text: Option<String>,
}

/// Dimensions shared by every record of an archive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub views: usize,
    pub d_view: usize,
    pub d_text: usize,
    /// Free-form note on which encoders produced the payloads.
    pub provenance: String,
}

impl Manifest {
    /// `key=value` lines for the `manifest` subcommand.
    pub fn dump(&self, objects: usize, descriptions: usize) -> String {
        format!(
            "views={}\nd_v={}\nd_t={}\nobjects={}\ndescriptions={}\nprovenance={}\n",
            self.views, self.d_view, self.d_text, objects, descriptions, self.provenance
        )
    }
}

#[derive(Debug, Clone)]
pub struct FeatureArchive {
    manifest: Manifest,
    objects: Vec<ObjectFeatures>,
    descriptions: Vec<DescriptionFeatures>,
    object_index: HashMap<String, usize>,
    description_index: HashMap<String, usize>,
}

impl PartialEq for FeatureArchive {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest
            && self.objects == other.objects
            && self.descriptions == other.descriptions
    }
}

fn check_len(
    id: &str,
    field: &'static str,
    expected: usize,
    found: usize,
) -> Result<(), ArchiveError> {
    if expected == found {
        Ok(())
    } else {
        Err(ArchiveError::DimensionMismatch {
            id: id.to_string(),
            field,
            expected,
            found,
        })
    }
}

fn check_finite<'a>(id: &str, values: impl IntoIterator<Item = &'a f32>) -> Result<(), ArchiveError> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ArchiveError::InvalidRecord {
            id: id.to_string(),
            reason: "non-finite embedding entry".into(),
        })
    }
}

impl FeatureArchive {
    /// Validates every record against the manifest and builds the id indexes.
    pub fn new(
        manifest: Manifest,
        objects: Vec<ObjectFeatures>,
        descriptions: Vec<DescriptionFeatures>,
    ) -> Result<Self, ArchiveError> {
        let mut object_index = HashMap::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            let id = &o.object_id;
            check_len(id, "view count", manifest.views, o.view_embeddings.len())?;
            if o.view_embeddings.is_empty() {
                return Err(ArchiveError::InvalidRecord {
                    id: id.clone(),
                    reason: "no view embeddings".into(),
                });
            }
            for v in &o.view_embeddings {
                check_len(id, "d_v", manifest.d_view, v.len())?;
                check_finite(id, v)?;
            }
            if object_index.insert(id.clone(), i).is_some() {
                return Err(ArchiveError::DuplicateId(id.clone()));
            }
        }
        let mut description_index = HashMap::with_capacity(descriptions.len());
        for (i, d) in descriptions.iter().enumerate() {
            let id = &d.description_id;
            check_len(id, "d_t", manifest.d_text, d.sentence_embedding.len())?;
            check_finite(id, &d.sentence_embedding)?;
            if d.word_embeddings.is_empty() {
                return Err(ArchiveError::InvalidRecord {
                    id: id.clone(),
                    reason: "no word embeddings".into(),
                });
            }
            for w in &d.word_embeddings {
                check_len(id, "d_t", manifest.d_text, w.len())?;
                check_finite(id, w)?;
            }
            if description_index.insert(id.clone(), i).is_some() || object_index.contains_key(id)
            {
                return Err(ArchiveError::DuplicateId(id.clone()));
            }
        }
        Ok(FeatureArchive {
            manifest,
            objects,
            descriptions,
            object_index,
            description_index,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn objects(&self) -> &[ObjectFeatures] {
        &self.objects
    }

    pub fn descriptions(&self) -> &[DescriptionFeatures] {
        &self.descriptions
    }

    pub fn get_object(&self, id: &str) -> Result<&ObjectFeatures, ArchiveError> {
        self.object_index
            .get(id)
            .map(|&i| &self.objects[i])
            .ok_or_else(|| ArchiveError::NotFound {
                kind: "object",
                id: id.to_string(),
            })
    }

    pub fn get_description(&self, id: &str) -> Result<&DescriptionFeatures, ArchiveError> {
        self.description_index
            .get(id)
            .map(|&i| &self.descriptions[i])
            .ok_or_else(|| ArchiveError::NotFound {
                kind: "description",
                id: id.to_string(),
            })
    }

    /// Copy of this archive with every view payload replaced by `views(id)`.
    ///
    /// Models the alternate-backbone ablation where the scorer sees a
    /// different image encoder's features; `d_view` may change.
    pub fn with_view_payload(
        &self,
        d_view: usize,
        mut views: impl FnMut(&ObjectFeatures) -> Vec<Vec<f32>>,
    ) -> Result<Self, ArchiveError> {
        let mut manifest = self.manifest.clone();
        manifest.d_view = d_view;
        let objects: Vec<ObjectFeatures> = self
            .objects
            .iter()
            .map(|o| ObjectFeatures {
                view_embeddings: views(o),
                ..o.clone()
            })
            .collect();
        if let Some(o) = objects.first() {
            manifest.views = o.view_embeddings.len();
        }
        FeatureArchive::new(manifest, objects, self.descriptions.clone())
    }
}
