//! The VLGF binary archive.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "VLGF" | version u16 = 1
//! views u32 | d_v u32 | d_t u32 | objects u32 | descriptions u32
//! provenance: str
//! objects:      id: str | views × d_v f32 | 12 × (x[32], y[32], z[32]) f32
//! descriptions: id: str | has_text u8 | [text: str] | words u32
//!               | sentence d_t f32 | words × d_t f32
//! str = u16 byte length + UTF-8
//! ```

use std::fs;
use std::path::Path;

use super::{ArchiveError, DescriptionFeatures, FeatureArchive, Manifest, ObjectFeatures};
use crate::voxel::{FactorSet, FactorTriplet, GRID, NUM_FACTORS};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"VLGF";
pub const ARCHIVE_VERSION: u16 = 1;

pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u32(&mut self, v: usize) -> Result<(), ArchiveError> {
        let v = u32::try_from(v).map_err(|_| ArchiveError::StringTooLong(v))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn str(&mut self, s: &str) -> Result<(), ArchiveError> {
        let len = u16::try_from(s.len()).map_err(|_| ArchiveError::StringTooLong(s.len()))?;
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub(crate) fn f32s(&mut self, values: &[f32]) {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ArchiveError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ArchiveError::Truncated(what.to_string()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], ArchiveError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8, ArchiveError> {
        Ok(self.array::<1>(what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<usize, ArchiveError> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn str(&mut self, what: &str) -> Result<String, ArchiveError> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ArchiveError::Utf8(what.to_string()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, ArchiveError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| ArchiveError::Truncated(what.to_string()))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<(), ArchiveError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(ArchiveError::TrailingBytes(n)),
        }
    }
}

pub(crate) fn encode(archive: &FeatureArchive) -> Result<Vec<u8>, ArchiveError> {
    let m = archive.manifest();
    let mut w = Writer::new();
    w.buf.extend_from_slice(&ARCHIVE_MAGIC);
    w.u16(ARCHIVE_VERSION);
    w.u32(m.views)?;
    w.u32(m.d_view)?;
    w.u32(m.d_text)?;
    w.u32(archive.objects().len())?;
    w.u32(archive.descriptions().len())?;
    w.str(&m.provenance)?;
    for o in archive.objects() {
        w.str(&o.object_id)?;
        for v in &o.view_embeddings {
            w.f32s(v);
        }
        for f in o.factors.factors() {
            w.f32s(&f.x);
            w.f32s(&f.y);
            w.f32s(&f.z);
        }
    }
    for d in archive.descriptions() {
        w.str(&d.description_id)?;
        match &d.text {
            Some(t) => {
                w.u8(1);
                w.str(t)?;
            }
            None => w.u8(0),
        }
        w.u32(d.word_embeddings.len())?;
        w.f32s(&d.sentence_embedding);
        for word in &d.word_embeddings {
            w.f32s(word);
        }
    }
    Ok(w.buf)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<FeatureArchive, ArchiveError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array("magic")?;
    if magic != ARCHIVE_MAGIC {
        return Err(ArchiveError::BadMagic(magic));
    }
    let version = r.u16("version")?;
    if version != ARCHIVE_VERSION {
        return Err(ArchiveError::UnsupportedVersion(version));
    }
    let views = r.u32("header")?;
    let d_view = r.u32("header")?;
    let d_text = r.u32("header")?;
    let n_objects = r.u32("header")?;
    let n_descriptions = r.u32("header")?;
    let provenance = r.str("provenance")?;

    let mut objects = Vec::new();
    for i in 0..n_objects {
        let ctx = format!("object record {i}");
        let object_id = r.str(&ctx)?;
        let view_embeddings = (0..views)
            .map(|_| r.f32s(d_view, &ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let mut factors = Vec::with_capacity(NUM_FACTORS);
        for _ in 0..NUM_FACTORS {
            let x = r.f32s(GRID, &ctx)?;
            let y = r.f32s(GRID, &ctx)?;
            let z = r.f32s(GRID, &ctx)?;
            factors.push(FactorTriplet::from_slices(&x, &y, &z)?);
        }
        objects.push(ObjectFeatures {
            object_id,
            view_embeddings,
            factors: FactorSet::new(factors)?,
        });
    }
    let mut descriptions = Vec::new();
    for i in 0..n_descriptions {
        let ctx = format!("description record {i}");
        let description_id = r.str(&ctx)?;
        let text = match r.u8(&ctx)? {
            0 => None,
            _ => Some(r.str(&ctx)?),
        };
        let words = r.u32(&ctx)?;
        let sentence_embedding = r.f32s(d_text, &ctx)?;
        let word_embeddings = (0..words)
            .map(|_| r.f32s(d_text, &ctx))
            .collect::<Result<Vec<_>, _>>()?;
        descriptions.push(DescriptionFeatures {
            description_id,
            sentence_embedding,
            word_embeddings,
            text,
        });
    }
    r.finish()?;
    FeatureArchive::new(
        Manifest {
            views,
            d_view,
            d_text,
            provenance,
        },
        objects,
        descriptions,
    )
}

/// Writes `archive` to `path`. The file is written to a sibling temporary
/// and renamed into place, so a failed write leaves nothing behind.
pub fn write_archive(archive: &FeatureArchive, path: &Path) -> Result<(), ArchiveError> {
    let bytes = encode(archive)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Validates loose records against `manifest` and writes them. A record that
/// disagrees with the declared dims is refused by id before any byte is written.
pub fn write_records(
    manifest: Manifest,
    objects: Vec<ObjectFeatures>,
    descriptions: Vec<DescriptionFeatures>,
    path: &Path,
) -> Result<FeatureArchive, ArchiveError> {
    let archive = FeatureArchive::new(manifest, objects, descriptions)?;
    write_archive(&archive, path)?;
    Ok(archive)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

pub fn read_archive(path: &Path) -> Result<FeatureArchive, ArchiveError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureArchive {
        let mut factors = FactorSet::zeros();
        factors.factors_mut()[3].y[7] = -1.25;
        let objects = vec![
            ObjectFeatures {
                object_id: "chair-1".into(),
                view_embeddings: vec![vec![0.1, 0.2, 0.3], vec![f32::MIN_POSITIVE, -0.0, 7.5]],
                factors: factors.clone(),
            },
            ObjectFeatures {
                object_id: "chair-2".into(),
                view_embeddings: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
                factors: FactorSet::zeros(),
            },
        ];
        let descriptions = (0..3)
            .map(|i| DescriptionFeatures {
                description_id: format!("d{i}"),
                sentence_embedding: vec![i as f32; 2],
                word_embeddings: vec![vec![0.5, -0.5]; i + 1],
                text: (i != 1).then(|| format!("swivel chair {i}")),
            })
            .collect();
        FeatureArchive::new(
            Manifest {
                views: 2,
                d_view: 3,
                d_text: 2,
                provenance: "test fixture".into(),
            },
            objects,
            descriptions,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vlgf");
        let a = sample();
        write_archive(&a, &path).unwrap();
        let b = read_archive(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            b.get_object("chair-1").unwrap(),
            a.get_object("chair-1").unwrap()
        );
        // -0.0 survives bit-exactly
        assert_eq!(
            b.objects()[0].view_embeddings[1][1].to_bits(),
            (-0.0f32).to_bits()
        );
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(ArchiveError::BadMagic(_))));
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = encode(&sample()).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(ArchiveError::Truncated(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(ArchiveError::TrailingBytes(1))));
    }

    #[test]
    fn bad_version() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(ArchiveError::UnsupportedVersion(9))
        ));
    }
}
