//! Fixed-size appearance descriptors and the integer distance arithmetic used
//! throughout matching.
//!
//! Descriptors are 128 unsigned bytes. All descriptor-to-descriptor distances
//! are squared Euclidean computed in integer arithmetic so that nearest
//! neighbours and ratio tests are exactly reproducible across platforms.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

/// Dimensionality of every descriptor.
pub const DESCRIPTOR_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("cannot average an empty descriptor set")]
    EmptyInput,
    #[error("descriptor has {found} entries, expected {DESCRIPTOR_DIM}")]
    BadLength { found: usize },
}

/// A 128-dimensional unsigned-byte appearance descriptor.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u8; DESCRIPTOR_DIM]);

impl Descriptor {
    pub fn zeros() -> Self {
        Descriptor([0u8; DESCRIPTOR_DIM])
    }

    /// All dimensions set to `value`.
    pub fn splat(value: u8) -> Self {
        Descriptor([value; DESCRIPTOR_DIM])
    }

    pub fn from_slice(values: &[u8]) -> Result<Self, DescriptorError> {
        let arr: [u8; DESCRIPTOR_DIM] = values
            .try_into()
            .map_err(|_| DescriptorError::BadLength { found: values.len() })?;
        Ok(Descriptor(arr))
    }

    pub fn as_bytes(&self) -> &[u8; DESCRIPTOR_DIM] {
        &self.0
    }

    /// Squared Euclidean distance, each term computed in 32-bit integer
    /// arithmetic and accumulated into 64 bits.
    pub fn distance_sq(&self, other: &Descriptor) -> u64 {
        let mut acc: u32 = 0;
        for i in 0..DESCRIPTOR_DIM {
            let d = self.0[i] as i32 - other.0[i] as i32;
            acc += (d * d) as u32;
        }
        acc as u64
    }

    /// Float view used for centroid distances during vocabulary work.
    pub fn to_f32(&self) -> [f32; DESCRIPTOR_DIM] {
        let mut out = [0f32; DESCRIPTOR_DIM];
        for (o, v) in out.iter_mut().zip(self.0.iter()) {
            *o = *v as f32;
        }
        out
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Descriptor[{}, {}, {}, {}, ..]",
            self.0[0], self.0[1], self.0[2], self.0[3]
        )
    }
}

impl Serialize for Descriptor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter())
    }
}

impl<'de> Deserialize<'de> for Descriptor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<u8>::deserialize(deserializer)?;
        Descriptor::from_slice(&values)
            .map_err(|_| D::Error::custom(format!("descriptor must have {DESCRIPTOR_DIM} entries")))
    }
}

/// Per-dimension arithmetic mean, rounded half-up and clamped to byte range.
pub fn mean_descriptor(raw: &[Descriptor]) -> Result<Descriptor, DescriptorError> {
    if raw.is_empty() {
        return Err(DescriptorError::EmptyInput);
    }
    let n = raw.len() as u64;
    let mut out = [0u8; DESCRIPTOR_DIM];
    for (dim, slot) in out.iter_mut().enumerate() {
        let sum: u64 = raw.iter().map(|d| d.0[dim] as u64).sum();
        // round-half-up: floor(sum / n + 1/2) in integer arithmetic
        let mean = (2 * sum + n) / (2 * n);
        *slot = mean.min(255) as u8;
    }
    Ok(Descriptor(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_singleton_is_identity() {
        let d = Descriptor::splat(37);
        assert_eq!(mean_descriptor(&[d.clone()]).unwrap(), d);
    }

    #[test]
    fn mean_is_elementwise() {
        let a = Descriptor::splat(0);
        let b = Descriptor::splat(2);
        assert_eq!(mean_descriptor(&[a, b]).unwrap(), Descriptor::splat(1));

        let trio = [Descriptor::splat(0), Descriptor::splat(1), Descriptor::splat(2)];
        assert_eq!(mean_descriptor(&trio).unwrap(), Descriptor::splat(1));
    }

    #[test]
    fn mean_rounds_half_up() {
        let pair = [Descriptor::splat(1), Descriptor::splat(2)];
        // 1.5 rounds up to 2
        assert_eq!(mean_descriptor(&pair).unwrap(), Descriptor::splat(2));

        let trio = [Descriptor::splat(1), Descriptor::splat(1), Descriptor::splat(2)];
        // 4/3 rounds down to 1
        assert_eq!(mean_descriptor(&trio).unwrap(), Descriptor::splat(1));
    }

    #[test]
    fn mean_stays_in_byte_range() {
        let pair = [Descriptor::splat(255), Descriptor::splat(255)];
        assert_eq!(mean_descriptor(&pair).unwrap(), Descriptor::splat(255));
    }

    #[test]
    fn mean_of_empty_errors() {
        assert!(matches!(mean_descriptor(&[]), Err(DescriptorError::EmptyInput)));
    }

    #[test]
    fn distance_is_integer_exact() {
        let mut a = Descriptor::zeros();
        let mut b = Descriptor::zeros();
        a.0[0] = 255;
        b.0[1] = 255;
        assert_eq!(a.distance_sq(&b), 2 * 255 * 255);
        assert_eq!(a.distance_sq(&a), 0);
    }

    #[test]
    fn serde_roundtrip_enforces_length() {
        let d = Descriptor::splat(9);
        let json = serde_json::to_string(&d).unwrap();
        let back: Descriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<Descriptor>("[1,2,3]").is_err());
    }
}
