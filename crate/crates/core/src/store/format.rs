//! Binary layer file format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SEMPROBE"
//! 8       4     version (u32 LE, = 1)
//! 12      4     n_sentences (u32 LE)
//! 16      4     dim (u32 LE)
//! 20      4     layer_index (u32 LE)
//! 24      4·n·d payload: f32 LE, row-major
//! ```
//!
//! The checksum is 64-bit FNV-1a over the payload bytes only.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EmbeddingSet, StoreError};

pub const MAGIC: &[u8; 8] = b"SEMPROBE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Serializes `set` to the layer file format. Nothing is written when the
/// set fails validation.
pub fn encode_embedding_file(set: &EmbeddingSet) -> Result<(Vec<u8>, u64), StoreError> {
    set.validate()?;
    let n = u32::try_from(set.n_sentences()).map_err(|_| StoreError::TooLarge)?;
    let dim = u32::try_from(set.dim()).map_err(|_| StoreError::TooLarge)?;
    let layer = u32::try_from(set.layer_index).map_err(|_| StoreError::TooLarge)?;

    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * set.data().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&layer.to_le_bytes());
    for v in set.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = fnv1a64(&buf[HEADER_LEN..]);
    Ok((buf, checksum))
}

/// Writes `set` to `destination` and returns the payload checksum.
pub fn write_embedding_file(set: &EmbeddingSet, destination: &Path) -> Result<u64, StoreError> {
    let (bytes, checksum) = encode_embedding_file(set)?;
    let mut file = fs::File::create(destination).map_err(|e| StoreError::io(destination, e))?;
    file.write_all(&bytes)
        .and_then(|_| file.sync_all())
        .map_err(|e| StoreError::io(destination, e))?;
    Ok(checksum)
}

/// Header fields of a layer file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerHeader {
    pub version: u32,
    pub n_sentences: usize,
    pub dim: usize,
    pub layer_index: usize,
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    let mut word = [0u8; 4];
    word.copy_from_slice(&bytes[offset..offset + 4]);
    u32::from_le_bytes(word)
}

pub fn decode_header(bytes: &[u8]) -> Result<LayerHeader, StoreError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = read_u32(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: version });
    }
    Ok(LayerHeader {
        version,
        n_sentences: read_u32(bytes, 12) as usize,
        dim: read_u32(bytes, 16) as usize,
        layer_index: read_u32(bytes, 20) as usize,
    })
}

/// Parses a layer file held in memory. `expected_checksum`, when given, is
/// compared against the payload hash.
pub fn decode_embedding_file(
    bytes: &[u8],
    model_id: &str,
    pooling: super::Pooling,
    expected_checksum: Option<u64>,
) -> Result<EmbeddingSet, StoreError> {
    let header = decode_header(bytes)?;
    let payload_len = header
        .n_sentences
        .checked_mul(header.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or(StoreError::TooLarge)?;
    let expected_len = HEADER_LEN + payload_len;
    if bytes.len() < expected_len {
        return Err(StoreError::Truncated {
            expected: expected_len,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected_len {
        return Err(StoreError::TrailingBytes {
            expected: expected_len,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    if let Some(expected) = expected_checksum {
        let actual = fnv1a64(payload);
        if actual != expected {
            return Err(StoreError::ChecksumMismatch { expected, actual });
        }
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingSet::new(
        model_id.to_owned(),
        header.layer_index,
        header.n_sentences,
        header.dim,
        pooling,
        data,
    )
}

/// Reads a layer file from disk. Model id and pooling are not part of the
/// binary header; callers holding a manifest should use
/// [`super::Dataset::load_layer`] instead.
pub fn read_embedding_file(
    source: &Path,
    expected_checksum: Option<u64>,
) -> Result<EmbeddingSet, StoreError> {
    let bytes = fs::read(source).map_err(|e| StoreError::io(source, e))?;
    decode_embedding_file(&bytes, "", super::Pooling::MeanTokens, expected_checksum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Pooling;

    fn set(n: usize, dim: usize, data: Vec<f32>) -> EmbeddingSet {
        EmbeddingSet::new("m".into(), 0, n, dim, Pooling::MeanTokens, data).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(&[0u8; 8]), 0xa8c7f832281a39c5);
    }

    #[test]
    fn single_zero_row_layout() {
        let (bytes, checksum) = encode_embedding_file(&set(1, 2, vec![0.0, 0.0])).unwrap();
        assert_eq!(bytes.len(), 24 + 8);
        assert_eq!(&bytes[..8], b"SEMPROBE");
        assert_eq!(&bytes[8..24], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(checksum, 0xa8c7f832281a39c5);
    }

    #[test]
    fn bad_magic() {
        let (mut bytes, _) = encode_embedding_file(&set(1, 2, vec![1.0, 2.0])).unwrap();
        bytes[7] = b'X';
        let err = decode_embedding_file(&bytes, "m", Pooling::MeanTokens, None).unwrap_err();
        assert!(matches!(err, StoreError::BadMagic));
    }

    #[test]
    fn version_mismatch() {
        let (mut bytes, _) = encode_embedding_file(&set(1, 2, vec![1.0, 2.0])).unwrap();
        bytes[8] = 2;
        let err = decode_embedding_file(&bytes, "m", Pooling::MeanTokens, None).unwrap_err();
        assert!(matches!(err, StoreError::VersionMismatch { found: 2 }));
    }

    #[test]
    fn payload_one_float_short() {
        let (bytes, _) = encode_embedding_file(&set(2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let err =
            decode_embedding_file(&bytes[..bytes.len() - 4], "m", Pooling::MeanTokens, None)
                .unwrap_err();
        assert!(matches!(err, StoreError::Truncated { expected: 40, actual: 36 }));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let (mut bytes, _) = encode_embedding_file(&set(1, 1, vec![1.0])).unwrap();
        bytes.push(0);
        let err = decode_embedding_file(&bytes, "m", Pooling::MeanTokens, None).unwrap_err();
        assert!(matches!(err, StoreError::TrailingBytes { .. }));
    }

    #[test]
    fn checksum_mismatch() {
        let (mut bytes, checksum) = encode_embedding_file(&set(1, 2, vec![1.0, 2.0])).unwrap();
        bytes[30] ^= 0x01;
        let err =
            decode_embedding_file(&bytes, "m", Pooling::MeanTokens, Some(checksum)).unwrap_err();
        assert!(matches!(err, StoreError::ChecksumMismatch { .. }));
    }

    #[test]
    fn nan_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let bad = EmbeddingSet {
            model_id: "m".into(),
            layer_index: 0,
            pooling: Pooling::MeanTokens,
            n_sentences: 1,
            dim: 2,
            data: vec![1.0, f32::NAN],
        };
        assert!(matches!(
            write_embedding_file(&bad, &path),
            Err(StoreError::NonFinite { row: 0, col: 1 })
        ));
        assert!(!path.exists());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layer.bin");
        let original = EmbeddingSet::new(
            "m".into(),
            3,
            5,
            3,
            Pooling::MeanTokens,
            (0..15).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        let checksum = write_embedding_file(&original, &path).unwrap();
        let back = read_embedding_file(&path, Some(checksum)).unwrap();
        assert_eq!(back.layer_index, 3);
        let a: Vec<u32> = original.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
