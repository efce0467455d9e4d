//! Flat k-means visual vocabulary: deterministic training, exhaustive word
//! assignment, and occupancy bookkeeping.
//!
//! Training is k-means++ seeding followed by Lloyd iterations until the
//! assignment reaches a fixpoint (at most [`MAX_LLOYD_ITERATIONS`]). Empty
//! clusters are reseeded to the descriptor farthest from its current
//! centroid. Everything is single-threaded and seeded, so identical inputs
//! produce identical centroids.

use crate::descriptor::{Descriptor, DESCRIPTOR_DIM};
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const VOCAB_MAGIC: [u8; 4] = *b"HVC1";
pub const MAX_LLOYD_ITERATIONS: usize = 25;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("k={k} exceeds the number of descriptors ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be >= 1")]
    KZero,
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("vocabulary file declares dimension {0}, expected {DESCRIPTOR_DIM}")]
    BadDimension(u32),
    #[error("word id {word} out of range for k={k}")]
    WordOutOfRange { word: u32, k: usize },
    #[error("centroid contains non-finite values")]
    NonFiniteCentroid,
}

/// A trained vocabulary: `k` centroids in 128-dimensional descriptor space.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    k: usize,
    /// Row-major `k x 128` centroid matrix.
    centroids: Vec<f32>,
    /// Number of descriptors the vocabulary was trained on (0 when loaded).
    pub trained_on: u64,
    /// Training seed (0 when loaded from file).
    pub seed: u64,
}

impl Vocabulary {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn centroid(&self, word: u32) -> &[f32] {
        let w = word as usize;
        &self.centroids[w * DESCRIPTOR_DIM..(w + 1) * DESCRIPTOR_DIM]
    }

    /// Nearest centroid by squared Euclidean distance; ties break to the
    /// lowest word id.
    pub fn assign(&self, descriptor: &Descriptor) -> u32 {
        let d = descriptor.to_f32();
        let mut best_word = 0u32;
        let mut best_dist = f32::INFINITY;
        for w in 0..self.k {
            let dist = dist_sq(&self.centroids[w * DESCRIPTOR_DIM..(w + 1) * DESCRIPTOR_DIM], &d);
            if dist < best_dist {
                best_dist = dist;
                best_word = w as u32;
            }
        }
        best_word
    }

    /// Stable content hash of `k` and the centroid bits.
    pub fn content_hash(&self) -> u64 {
        use fnv::FnvHasher;
        use std::hash::Hasher;
        let mut h = FnvHasher::default();
        h.write_u64(self.k as u64);
        for c in &self.centroids {
            h.write_u32(c.to_bits());
        }
        h.finish()
    }

    pub fn save(&self, path: &Path) -> Result<u64, VocabError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&VOCAB_MAGIC)?;
        w.write_u32::<LE>(self.k as u32)?;
        w.write_u32::<LE>(DESCRIPTOR_DIM as u32)?;
        for c in &self.centroids {
            w.write_f32::<LE>(*c)?;
        }
        w.flush()?;
        Ok(12 + 4 * self.centroids.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Vocabulary, VocabError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != VOCAB_MAGIC {
            return Err(VocabError::BadMagic {
                expected: VOCAB_MAGIC,
                found: magic,
            });
        }
        let k = r.read_u32::<LE>()? as usize;
        let dim = r.read_u32::<LE>()?;
        if dim as usize != DESCRIPTOR_DIM {
            return Err(VocabError::BadDimension(dim));
        }
        if k == 0 {
            return Err(VocabError::KZero);
        }
        let mut centroids = vec![0f32; k * DESCRIPTOR_DIM];
        for c in centroids.iter_mut() {
            *c = r.read_f32::<LE>()?;
        }
        if !centroids.iter().all(|c| c.is_finite()) {
            return Err(VocabError::NonFiniteCentroid);
        }
        Ok(Vocabulary {
            k,
            centroids,
            trained_on: 0,
            seed: 0,
        })
    }
}

/// Squared Euclidean distance between a centroid row and a float descriptor.
/// Four accumulators keep the loop vectorizable with a fixed summation order.
fn dist_sq(centroid: &[f32], d: &[f32; DESCRIPTOR_DIM]) -> f32 {
    let mut acc = [0f32; 4];
    let mut i = 0;
    while i < DESCRIPTOR_DIM {
        for lane in 0..4 {
            let e = centroid[i + lane] - d[i + lane];
            acc[lane] += e * e;
        }
        i += 4;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Train a vocabulary with k-means++ seeding and Lloyd iterations.
pub fn train_vocabulary(
    descriptors: &[Descriptor],
    k: usize,
    seed: u64,
) -> Result<Vocabulary, VocabError> {
    train_with_trace(descriptors, k, seed).map(|(vocab, _)| vocab)
}

/// Training entry point that also returns the quantization energy measured
/// after every assignment step (used to verify Lloyd monotonicity).
pub fn train_with_trace(
    descriptors: &[Descriptor],
    k: usize,
    seed: u64,
) -> Result<(Vocabulary, Vec<f64>), VocabError> {
    if descriptors.is_empty() {
        return Err(VocabError::EmptyTrainingSet);
    }
    if k == 0 {
        return Err(VocabError::KZero);
    }
    if k > descriptors.len() {
        return Err(VocabError::KTooLarge {
            k,
            n: descriptors.len(),
        });
    }

    let data: Vec<[f32; DESCRIPTOR_DIM]> = descriptors.iter().map(|d| d.to_f32()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&data, k, &mut rng);

    let mut assignments: Vec<u32> = vec![u32::MAX; data.len()];
    let mut energies = Vec::new();
    for _iteration in 0..MAX_LLOYD_ITERATIONS {
        // Assignment step.
        let mut changed = false;
        let mut energy = 0.0f64;
        let mut dist_to_own: Vec<f32> = vec![0.0; data.len()];
        for (i, d) in data.iter().enumerate() {
            let mut best_word = 0u32;
            let mut best = f32::INFINITY;
            for w in 0..k {
                let dist = dist_sq(&centroids[w * DESCRIPTOR_DIM..(w + 1) * DESCRIPTOR_DIM], d);
                if dist < best {
                    best = dist;
                    best_word = w as u32;
                }
            }
            if assignments[i] != best_word {
                changed = true;
                assignments[i] = best_word;
            }
            dist_to_own[i] = best;
            energy += best as f64;
        }
        energies.push(energy);
        if !changed {
            break;
        }

        // Update step: means in f64, stored back as f32.
        let mut sums = vec![0f64; k * DESCRIPTOR_DIM];
        let mut counts = vec![0u64; k];
        for (i, d) in data.iter().enumerate() {
            let w = assignments[i] as usize;
            counts[w] += 1;
            for (dim, v) in d.iter().enumerate() {
                sums[w * DESCRIPTOR_DIM + dim] += *v as f64;
            }
        }
        let mut reseeded: Vec<usize> = Vec::new();
        for w in 0..k {
            if counts[w] == 0 {
                // Reseed the empty cluster to the point farthest from its
                // current centroid, excluding points already used this round.
                let mut far_idx = usize::MAX;
                let mut far_dist = -1.0f32;
                for (i, &dist) in dist_to_own.iter().enumerate() {
                    if reseeded.contains(&i) {
                        continue;
                    }
                    if dist > far_dist {
                        far_dist = dist;
                        far_idx = i;
                    }
                }
                if far_idx != usize::MAX {
                    reseeded.push(far_idx);
                    centroids[w * DESCRIPTOR_DIM..(w + 1) * DESCRIPTOR_DIM]
                        .copy_from_slice(&data[far_idx]);
                }
            } else {
                for dim in 0..DESCRIPTOR_DIM {
                    centroids[w * DESCRIPTOR_DIM + dim] =
                        (sums[w * DESCRIPTOR_DIM + dim] / counts[w] as f64) as f32;
                }
            }
        }
    }

    Ok((
        Vocabulary {
            k,
            centroids,
            trained_on: descriptors.len() as u64,
            seed,
        },
        energies,
    ))
}

fn kmeans_plus_plus(
    data: &[[f32; DESCRIPTOR_DIM]],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let mut centroids = Vec::with_capacity(k * DESCRIPTOR_DIM);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let first = rng.random_range(0..data.len());
    chosen.push(first);
    centroids.extend_from_slice(&data[first]);

    let mut min_dist: Vec<f64> = data
        .iter()
        .map(|d| dist_sq(&data[first][..], d) as f64)
        .collect();

    while chosen.len() < k {
        let total: f64 = min_dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = data.len() - 1;
            for (i, &d) in min_dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every remaining descriptor coincides with a centroid; take the
            // lowest index not yet chosen so the result stays deterministic.
            (0..data.len())
                .find(|i| !chosen.contains(i))
                .unwrap_or(0)
        };
        chosen.push(next);
        centroids.extend_from_slice(&data[next]);
        for (i, d) in data.iter().enumerate() {
            let dist = dist_sq(&data[next][..], d) as f64;
            if dist < min_dist[i] {
                min_dist[i] = dist;
            }
        }
    }
    centroids
}

/// Per-word assignment counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordHistogram {
    counts: Vec<u64>,
}

impl WordHistogram {
    pub fn new(k: usize) -> Self {
        WordHistogram {
            counts: vec![0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn increment(&mut self, word: u32) -> Result<(), VocabError> {
        let k = self.counts.len();
        let slot = self
            .counts
            .get_mut(word as usize)
            .ok_or(VocabError::WordOutOfRange { word, k })?;
        *slot += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Current count for `word`; errors on out-of-range ids.
pub fn occupancy(hist: &WordHistogram, word: u32) -> Result<u64, VocabError> {
    hist.counts
        .get(word as usize)
        .copied()
        .ok_or(VocabError::WordOutOfRange {
            word,
            k: hist.counts.len(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use tempfile::tempdir;

    fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
        let mut d = [0u8; DESCRIPTOR_DIM];
        for v in d.iter_mut() {
            *v = rng.random_range(0..=255u16) as u8;
        }
        Descriptor(d)
    }

    #[test]
    fn perfect_fit_has_zero_energy() {
        let descriptors: Vec<Descriptor> = (0..16u8).map(|i| Descriptor::splat(i * 12)).collect();
        let vocab = train_vocabulary(&descriptors, 16, 7).unwrap();
        for d in &descriptors {
            let w = vocab.assign(d);
            let centroid = vocab.centroid(w);
            let dfloat = d.to_f32();
            let dist: f32 = centroid
                .iter()
                .zip(dfloat.iter())
                .map(|(c, v)| (c - v) * (c - v))
                .sum();
            assert_eq!(dist, 0.0);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let descriptors: Vec<Descriptor> = (0..200).map(|_| random_descriptor(&mut rng)).collect();
        let a = train_vocabulary(&descriptors, 16, 42).unwrap();
        let b = train_vocabulary(&descriptors, 16, 42).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn well_separated_clusters_are_recovered() {
        // Four prototypes far apart; generator labels are the oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bases = [10u8, 80, 160, 230];
        let mut descriptors = Vec::new();
        let mut labels = Vec::new();
        for (label, base) in bases.iter().enumerate() {
            for _ in 0..100 {
                let mut d = [0u8; DESCRIPTOR_DIM];
                for v in d.iter_mut() {
                    let delta: i16 = rng.random_range(-5..=5);
                    *v = (*base as i16 + delta).clamp(0, 255) as u8;
                }
                descriptors.push(Descriptor(d));
                labels.push(label);
            }
        }
        let vocab = train_vocabulary(&descriptors, 4, 1).unwrap();
        // Every descriptor of a generating cluster must share one word.
        let mut word_of_label = [u32::MAX; 4];
        for (d, &label) in descriptors.iter().zip(labels.iter()) {
            let w = vocab.assign(d);
            if word_of_label[label] == u32::MAX {
                word_of_label[label] = w;
            }
            assert_eq!(word_of_label[label], w, "label {label} split across words");
        }
        let mut distinct = word_of_label.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn assign_returns_exact_centroid_and_breaks_ties_low() {
        // Build a vocabulary by training on distinct splat descriptors.
        let descriptors: Vec<Descriptor> =
            (0..8u8).map(|i| Descriptor::splat(i * 30)).collect();
        let vocab = train_vocabulary(&descriptors, 8, 5).unwrap();
        // A descriptor equal to some centroid maps to that word.
        for d in &descriptors {
            let w = vocab.assign(d);
            let c = vocab.centroid(w);
            assert!(c.iter().zip(d.to_f32().iter()).all(|(a, b)| a == b));
        }

        // Handmade equidistant case: centroids at 0 and 2, query at 1.
        let vocab = Vocabulary {
            k: 6,
            centroids: {
                let mut c = vec![200f32; 6 * DESCRIPTOR_DIM];
                c[2 * DESCRIPTOR_DIM..3 * DESCRIPTOR_DIM].fill(0.0);
                c[5 * DESCRIPTOR_DIM..6 * DESCRIPTOR_DIM].fill(2.0);
                c
            },
            trained_on: 0,
            seed: 0,
        };
        assert_eq!(vocab.assign(&Descriptor::splat(1)), 2);
    }

    #[test]
    fn assign_matches_brute_force_scan() {
        // Exhaustive scan with the same distance kernel; this pins today's
        // behaviour so any future indexing shortcut must reproduce it.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let descriptors: Vec<Descriptor> = (0..300).map(|_| random_descriptor(&mut rng)).collect();
        let vocab = train_vocabulary(&descriptors, 24, 11).unwrap();
        for _ in 0..1000 {
            let d = random_descriptor(&mut rng);
            let df = d.to_f32();
            let mut best = (f32::INFINITY, u32::MAX);
            for w in 0..vocab.k() as u32 {
                let dist = dist_sq(vocab.centroid(w), &df);
                if dist < best.0 {
                    best = (dist, w);
                }
            }
            assert_eq!(vocab.assign(&d), best.1);
        }
    }

    #[test]
    fn lloyd_energy_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let descriptors: Vec<Descriptor> = (0..400).map(|_| random_descriptor(&mut rng)).collect();
        let (_, energies) = train_with_trace(&descriptors, 12, 3).unwrap();
        assert!(energies.len() >= 2);
        for pair in energies.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-12),
                "energy increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn histogram_counts_and_conserves() {
        let mut hist = WordHistogram::new(8);
        assert_eq!(occupancy(&hist, 5).unwrap(), 0);
        for _ in 0..3 {
            hist.increment(5).unwrap();
        }
        assert_eq!(occupancy(&hist, 5).unwrap(), 3);
        hist.increment(0).unwrap();
        assert_eq!(hist.total(), 4);
        assert!(matches!(
            occupancy(&hist, 99),
            Err(VocabError::WordOutOfRange { word: 99, .. })
        ));
        assert!(hist.increment(8).is_err());
    }

    #[test]
    fn vocabulary_file_roundtrips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.hvc1");
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let descriptors: Vec<Descriptor> = (0..100).map(|_| random_descriptor(&mut rng)).collect();
        let vocab = train_vocabulary(&descriptors, 10, 2).unwrap();
        let written = vocab.save(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), written);
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.k(), vocab.k());
        assert_eq!(loaded.content_hash(), vocab.content_hash());
    }

    #[test]
    fn k_larger_than_training_set_errors() {
        let descriptors = vec![Descriptor::splat(1); 4];
        assert!(matches!(
            train_vocabulary(&descriptors, 5, 0),
            Err(VocabError::KTooLarge { k: 5, n: 4 })
        ));
    }
}
