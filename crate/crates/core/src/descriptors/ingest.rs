//! Readers for externally computed descriptors.
//!
//! Local descriptor file: magic `LDS1`, `u32` frame count, then per frame a
//! `u16` id length, the UTF-8 frame id, `u32` descriptor count `M`, `u32`
//! dimension `p` and `M * p` little-endian `f32`. All integers little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{DescriptorError, FeatureMatrix, LocalDescriptorSet};
use crate::corpus::CorpusManifest;
use crate::matrix::{read_emb, Matrix};

pub const LDS_MAGIC: &[u8; 4] = b"LDS1";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DescriptorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            DescriptorError::Malformed(format!("unexpected end of file at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DescriptorError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DescriptorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses an `LDS1` file into per-frame sets in file order.
pub fn read_local_descriptor_file(path: &Path) -> Result<Vec<LocalDescriptorSet>, DescriptorError> {
    let bytes = fs::read(path).map_err(|source| DescriptorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_local_descriptors(&bytes)
}

pub fn decode_local_descriptors(bytes: &[u8]) -> Result<Vec<LocalDescriptorSet>, DescriptorError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != LDS_MAGIC {
        return Err(DescriptorError::Malformed("magic mismatch: expected LDS1".into()));
    }
    let frames = c.u32()? as usize;
    let mut out = Vec::with_capacity(frames.min(1 << 20));
    for _ in 0..frames {
        let len = c.u16()? as usize;
        let frame_id = std::str::from_utf8(c.take(len)?)
            .map_err(|_| DescriptorError::Malformed("frame id is not UTF-8".into()))?
            .to_string();
        let m = c.u32()? as usize;
        let p = c.u32()? as usize;
        let raw = c.take(m.checked_mul(p).and_then(|v| v.checked_mul(4)).ok_or_else(|| {
            DescriptorError::Malformed("descriptor block size overflows".into())
        })?)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::NonFinite(frame_id));
        }
        out.push(LocalDescriptorSet {
            frame_id,
            descriptors: Matrix::from_vec(m, p, data)?,
        });
    }
    if c.pos != bytes.len() {
        return Err(DescriptorError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

pub fn encode_local_descriptors(sets: &[LocalDescriptorSet]) -> Vec<u8> {
    let mut out = LDS_MAGIC.to_vec();
    out.extend_from_slice(&(sets.len() as u32).to_le_bytes());
    for s in sets {
        out.extend_from_slice(&(s.frame_id.len() as u16).to_le_bytes());
        out.extend_from_slice(s.frame_id.as_bytes());
        out.extend_from_slice(&(s.descriptors.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(s.descriptors.cols() as u32).to_le_bytes());
        for &v in s.descriptors.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_local_descriptor_file(
    path: &Path,
    sets: &[LocalDescriptorSet],
) -> Result<(), DescriptorError> {
    fs::write(path, encode_local_descriptors(sets)).map_err(|source| DescriptorError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One set per manifest record, in manifest order. Frames absent from the
/// file get an empty set. The descriptor dimension must agree across frames
/// that have descriptors.
pub fn ingest_local_descriptors(
    path: &Path,
    manifest: &CorpusManifest,
) -> Result<Vec<LocalDescriptorSet>, DescriptorError> {
    let sets = read_local_descriptor_file(path)?;
    let index: HashMap<&str, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.frame_id.as_str(), i))
        .collect();
    let mut dim: Option<usize> = None;
    let mut by_row: Vec<Option<LocalDescriptorSet>> = vec![None; manifest.len()];
    for set in sets {
        let &i = index
            .get(set.frame_id.as_str())
            .ok_or_else(|| DescriptorError::UnknownFrame(set.frame_id.clone()))?;
        if set.descriptors.rows() > 0 {
            let p = set.descriptors.cols();
            match dim {
                None => dim = Some(p),
                Some(expected) if expected != p => {
                    return Err(DescriptorError::InconsistentDim {
                        frame_id: set.frame_id,
                        expected,
                        found: p,
                    })
                }
                _ => {}
            }
        }
        by_row[i] = Some(set);
    }
    let p = dim.unwrap_or(0);
    Ok(by_row
        .into_iter()
        .zip(&manifest.records)
        .map(|(set, r)| match set {
            Some(s) if s.descriptors.rows() > 0 => s,
            _ => LocalDescriptorSet {
                frame_id: r.frame_id.clone(),
                descriptors: Matrix::zeros(0, p),
            },
        })
        .collect())
}

/// Reads an `EMB1` file and gathers row `record.row` for every manifest
/// record, in manifest order.
pub fn ingest_global_embeddings(
    path: &Path,
    manifest: &CorpusManifest,
) -> Result<FeatureMatrix, DescriptorError> {
    let all = read_emb(path)?;
    let mut indices = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        let row = r.row.ok_or_else(|| DescriptorError::MissingRow(r.frame_id.clone()))?;
        if row as usize >= all.rows() {
            return Err(DescriptorError::RowOutOfRange {
                frame_id: r.frame_id.clone(),
                row,
                rows: all.rows(),
            });
        }
        indices.push(row as usize);
    }
    Ok(FeatureMatrix {
        frame_ids: manifest.frame_ids(),
        values: all.select_rows(&indices),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FrameRecord;
    use crate::matrix::write_emb;

    fn manifest(ids: &[&str]) -> CorpusManifest {
        CorpusManifest::new(
            ids.iter()
                .enumerate()
                .map(|(i, id)| FrameRecord {
                    frame_id: id.to_string(),
                    video_id: "v".into(),
                    frame_index: i as u64,
                    path: None,
                    row: Some(i as u64),
                })
                .collect(),
        )
    }

    fn set(id: &str, m: usize, p: usize, fill: f64) -> LocalDescriptorSet {
        let data = (0..m * p).map(|k| fill + k as f64).collect();
        LocalDescriptorSet {
            frame_id: id.into(),
            descriptors: Matrix::from_vec(m, p, data).unwrap(),
        }
    }

    #[test]
    fn two_frames_of_three_descriptors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.lds");
        write_local_descriptor_file(&p, &[set("a", 3, 128, 0.0), set("b", 3, 128, 1.0)]).unwrap();
        let sets = ingest_local_descriptors(&p, &manifest(&["a", "b"])).unwrap();
        assert_eq!(sets.len(), 2);
        for s in &sets {
            assert_eq!((s.descriptors.rows(), s.descriptors.cols()), (3, 128));
        }
        assert_eq!(sets[1].descriptors.get(0, 1), 2.0);
    }

    #[test]
    fn absent_frame_gets_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.lds");
        write_local_descriptor_file(&p, &[set("b", 2, 4, 0.0)]).unwrap();
        let sets = ingest_local_descriptors(&p, &manifest(&["a", "b"])).unwrap();
        assert_eq!(sets[0].frame_id, "a");
        assert_eq!((sets[0].descriptors.rows(), sets[0].descriptors.cols()), (0, 4));
        assert_eq!(sets[1].descriptors.rows(), 2);
    }

    #[test]
    fn nan_rejected() {
        let mut bad = set("a", 1, 2, 0.0);
        bad.descriptors.set(0, 1, f64::NAN);
        let bytes = encode_local_descriptors(&[bad]);
        let err = decode_local_descriptors(&bytes).unwrap_err();
        assert!(err.to_string().contains("non-finite descriptor"), "{err}");
    }

    #[test]
    fn unknown_frame_and_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.lds");
        write_local_descriptor_file(&p, &[set("zz", 1, 2, 0.0)]).unwrap();
        assert!(matches!(
            ingest_local_descriptors(&p, &manifest(&["a"])),
            Err(DescriptorError::UnknownFrame(_))
        ));
        write_local_descriptor_file(&p, &[set("a", 1, 2, 0.0), set("b", 1, 3, 0.0)]).unwrap();
        assert!(matches!(
            ingest_local_descriptors(&p, &manifest(&["a", "b"])),
            Err(DescriptorError::InconsistentDim { .. })
        ));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let bytes = encode_local_descriptors(&[set("a", 2, 2, 0.0)]);
        assert!(matches!(
            decode_local_descriptors(&bytes[..bytes.len() - 1]),
            Err(DescriptorError::Malformed(_))
        ));
    }

    #[test]
    fn global_embeddings_follow_manifest_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let data: Vec<f64> = (0..4 * 512).map(|k| (k % 97) as f64 * 0.25).collect();
        let m = Matrix::from_vec(4, 512, data).unwrap();
        write_emb(&p, &m).unwrap();
        let fm = ingest_global_embeddings(&p, &manifest(&["a", "b", "c", "d"])).unwrap();
        assert_eq!((fm.values.rows(), fm.values.cols()), (4, 512));
        assert_eq!(fm.values, m);

        let mut far = manifest(&["a"]);
        far.records[0].row = Some(7);
        let err = ingest_global_embeddings(&p, &far).unwrap_err();
        assert!(err.to_string().contains("row out of range"), "{err}");
    }
}
