//! The hybrid compressed model: a small set of full-descriptor points plus a
//! larger set of word-quantized points, with the word index used at query
//! time and the `HSCZ` on-disk format.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! header (72 bytes):
//!   magic "HSCZ" | version u32
//!   cover_k u32 | grid u32 | beta u32 | budget_bytes u64 | full_fraction f64
//!   vocab_k u32 | vocab_hash u64 | scene_hash u64
//!   full_count u64 | compressed_count u64
//! full point record (152 + 4c bytes):
//!   id u32 | position 3xf32 | word u32 | camera_count u32 | camera ids u32 x c
//!   | descriptor 128 raw bytes
//! compressed point record (20 bytes):
//!   id u32 | position 3xf32 | word u32
//! ```
//!
//! Positions are kept as f64 in memory for pose solving and stored as f32,
//! which is what the byte budget accounts for.

use crate::compress::CoverConfig;
use crate::descriptor::Descriptor;
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MODEL_MAGIC: [u8; 4] = *b"HSCZ";
pub const MODEL_VERSION: u32 = 1;
/// Fixed size of the HSCZ header.
pub const MODEL_HEADER_BYTES: u64 = 72;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene has no points or no cameras")]
    EmptyScene,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
    #[error("point {0} appears in both the full and compressed sets")]
    SetsOverlap(u32),
    #[error("point {id} carries word {word}, outside vocabulary of {k} words")]
    WordOutOfRange { id: u32, word: u32, k: usize },
    #[error("serialized model ({size} bytes) exceeds the budget ({budget} bytes)")]
    BudgetExceeded { size: u64, budget: u64 },
}

/// A point retained with its full descriptor and visibility list.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPoint {
    pub id: u32,
    pub position: Vector3<f64>,
    pub mean_descriptor: Descriptor,
    pub word: u32,
    /// Sorted ids of the database cameras that observe this point.
    pub cameras: Vec<u32>,
}

/// A point retained with only its position and visual word.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPoint {
    pub id: u32,
    pub position: Vector3<f64>,
    pub word: u32,
}

/// Where the model came from: the selection config and input hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config: CoverConfig,
    pub scene_hash: u64,
    pub vocab_k: u32,
    pub vocab_hash: u64,
}

/// Serialized size of a full point record with `camera_count` cameras.
pub fn full_record_bytes(camera_count: usize) -> u64 {
    152 + 4 * camera_count as u64
}

/// Serialized size of a compressed point record.
pub fn compressed_record_bytes() -> u64 {
    20
}

/// The hybrid compressed scene. Records are kept in selection order so that
/// serialization is deterministic; the word index is derived.
#[derive(Debug, Clone)]
pub struct HybridModel {
    full_points: Vec<FullPoint>,
    compressed_points: Vec<CompressedPoint>,
    /// word id -> sorted full point ids in that word.
    full_by_word: Vec<Vec<u32>>,
    /// word id -> sorted compressed point ids in that word.
    compressed_by_word: Vec<Vec<u32>>,
    /// point id -> (is_full, index into the respective vector).
    by_id: BTreeMap<u32, (bool, usize)>,
    provenance: Provenance,
}

impl HybridModel {
    pub fn new(
        full_points: Vec<FullPoint>,
        compressed_points: Vec<CompressedPoint>,
        provenance: Provenance,
    ) -> Result<Self, CompressError> {
        let k = provenance.vocab_k as usize;
        let mut by_id = BTreeMap::new();
        let mut full_by_word = vec![Vec::new(); k];
        let mut compressed_by_word = vec![Vec::new(); k];
        for (idx, p) in full_points.iter().enumerate() {
            if p.word as usize >= k {
                return Err(CompressError::WordOutOfRange {
                    id: p.id,
                    word: p.word,
                    k,
                });
            }
            if by_id.insert(p.id, (true, idx)).is_some() {
                return Err(CompressError::SetsOverlap(p.id));
            }
            full_by_word[p.word as usize].push(p.id);
        }
        for (idx, p) in compressed_points.iter().enumerate() {
            if p.word as usize >= k {
                return Err(CompressError::WordOutOfRange {
                    id: p.id,
                    word: p.word,
                    k,
                });
            }
            if by_id.insert(p.id, (false, idx)).is_some() {
                return Err(CompressError::SetsOverlap(p.id));
            }
            compressed_by_word[p.word as usize].push(p.id);
        }
        for list in full_by_word.iter_mut().chain(compressed_by_word.iter_mut()) {
            list.sort_unstable();
        }
        Ok(HybridModel {
            full_points,
            compressed_points,
            full_by_word,
            compressed_by_word,
            by_id,
            provenance,
        })
    }

    pub fn full_points(&self) -> &[FullPoint] {
        &self.full_points
    }

    pub fn compressed_points(&self) -> &[CompressedPoint] {
        &self.compressed_points
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn vocab_k(&self) -> usize {
        self.provenance.vocab_k as usize
    }

    /// Sorted full point ids sharing `word`.
    pub fn full_ids_in_word(&self, word: u32) -> &[u32] {
        self.full_by_word
            .get(word as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Sorted compressed point ids sharing `word`.
    pub fn compressed_ids_in_word(&self, word: u32) -> &[u32] {
        self.compressed_by_word
            .get(word as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn full_by_id(&self, id: u32) -> Option<&FullPoint> {
        match self.by_id.get(&id) {
            Some(&(true, idx)) => Some(&self.full_points[idx]),
            _ => None,
        }
    }

    pub fn compressed_by_id(&self, id: u32) -> Option<&CompressedPoint> {
        match self.by_id.get(&id) {
            Some(&(false, idx)) => Some(&self.compressed_points[idx]),
            _ => None,
        }
    }

    pub fn position_of(&self, id: u32) -> Option<Vector3<f64>> {
        match self.by_id.get(&id) {
            Some(&(true, idx)) => Some(self.full_points[idx].position),
            Some(&(false, idx)) => Some(self.compressed_points[idx].position),
            None => None,
        }
    }

    /// Exact size of this model under the HSCZ layout.
    pub fn serialized_size(&self) -> u64 {
        let mut total = MODEL_HEADER_BYTES;
        for p in &self.full_points {
            total += full_record_bytes(p.cameras.len());
        }
        total += compressed_record_bytes() * self.compressed_points.len() as u64;
        total
    }

    pub fn save(&self, path: &Path) -> Result<u64, CompressError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&MODEL_MAGIC)?;
        w.write_u32::<LE>(MODEL_VERSION)?;
        let cfg = &self.provenance.config;
        w.write_u32::<LE>(cfg.cover_k)?;
        w.write_u32::<LE>(cfg.grid)?;
        w.write_u32::<LE>(cfg.beta)?;
        w.write_u64::<LE>(cfg.budget_bytes)?;
        w.write_f64::<LE>(cfg.full_fraction)?;
        w.write_u32::<LE>(self.provenance.vocab_k)?;
        w.write_u64::<LE>(self.provenance.vocab_hash)?;
        w.write_u64::<LE>(self.provenance.scene_hash)?;
        w.write_u64::<LE>(self.full_points.len() as u64)?;
        w.write_u64::<LE>(self.compressed_points.len() as u64)?;
        for p in &self.full_points {
            w.write_u32::<LE>(p.id)?;
            for v in p.position.iter() {
                w.write_f32::<LE>(*v as f32)?;
            }
            w.write_u32::<LE>(p.word)?;
            w.write_u32::<LE>(p.cameras.len() as u32)?;
            for cam in &p.cameras {
                w.write_u32::<LE>(*cam)?;
            }
            w.write_all(p.mean_descriptor.as_bytes())?;
        }
        for p in &self.compressed_points {
            w.write_u32::<LE>(p.id)?;
            for v in p.position.iter() {
                w.write_f32::<LE>(*v as f32)?;
            }
            w.write_u32::<LE>(p.word)?;
        }
        w.flush()?;
        Ok(self.serialized_size())
    }

    pub fn load(path: &Path) -> Result<HybridModel, CompressError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MODEL_MAGIC {
            return Err(CompressError::BadMagic {
                expected: MODEL_MAGIC,
                found: magic,
            });
        }
        let version = r.read_u32::<LE>()?;
        if version != MODEL_VERSION {
            return Err(CompressError::UnsupportedVersion(version));
        }
        let config = CoverConfig {
            cover_k: r.read_u32::<LE>()?,
            grid: r.read_u32::<LE>()?,
            beta: r.read_u32::<LE>()?,
            budget_bytes: r.read_u64::<LE>()?,
            full_fraction: r.read_f64::<LE>()?,
        };
        let vocab_k = r.read_u32::<LE>()?;
        let vocab_hash = r.read_u64::<LE>()?;
        let scene_hash = r.read_u64::<LE>()?;
        let full_count = r.read_u64::<LE>()? as usize;
        let compressed_count = r.read_u64::<LE>()? as usize;

        let mut full_points = Vec::with_capacity(full_count);
        for _ in 0..full_count {
            let id = r.read_u32::<LE>()?;
            let mut position = Vector3::zeros();
            for v in position.iter_mut() {
                *v = r.read_f32::<LE>()? as f64;
            }
            let word = r.read_u32::<LE>()?;
            let n_cams = r.read_u32::<LE>()? as usize;
            let mut cameras = Vec::with_capacity(n_cams);
            for _ in 0..n_cams {
                cameras.push(r.read_u32::<LE>()?);
            }
            let mut desc = [0u8; crate::descriptor::DESCRIPTOR_DIM];
            r.read_exact(&mut desc)?;
            full_points.push(FullPoint {
                id,
                position,
                mean_descriptor: Descriptor(desc),
                word,
                cameras,
            });
        }
        let mut compressed_points = Vec::with_capacity(compressed_count);
        for _ in 0..compressed_count {
            let id = r.read_u32::<LE>()?;
            let mut position = Vector3::zeros();
            for v in position.iter_mut() {
                *v = r.read_f32::<LE>()? as f64;
            }
            let word = r.read_u32::<LE>()?;
            compressed_points.push(CompressedPoint { id, position, word });
        }

        HybridModel::new(
            full_points,
            compressed_points,
            Provenance {
                config,
                scene_hash,
                vocab_k,
                vocab_hash,
            },
        )
    }
}
