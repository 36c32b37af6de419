//! The `.oodx` binary container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OODX"
//! 4       2     format version, u16 LE
//! 6       4     manifest length in bytes, u32 LE
//! 10      m     manifest, UTF-8 JSON object
//! 10+m    4·r·c payload, f32 LE, row-major
//! ```
//!
//! The manifest always carries `kind`, `rows`, `cols` and `crc32` (CRC-32 of
//! the payload bytes); each kind adds its own fields.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{OodError, Result};

pub const MAGIC: &[u8; 4] = b"OODX";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContainerKind {
    FeatureSet,
    LogitSet,
    Scores,
    GaussianModel,
    KnnIndex,
    LofModel,
}

impl ContainerKind {
    pub const ALL: [ContainerKind; 6] = [
        ContainerKind::FeatureSet,
        ContainerKind::LogitSet,
        ContainerKind::Scores,
        ContainerKind::GaussianModel,
        ContainerKind::KnnIndex,
        ContainerKind::LofModel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContainerKind::FeatureSet => "feature-set",
            ContainerKind::LogitSet => "logit-set",
            ContainerKind::Scores => "scores",
            ContainerKind::GaussianModel => "gaussian-model",
            ContainerKind::KnnIndex => "knn-index",
            ContainerKind::LofModel => "lof-model",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| OodError::UnsupportedKind(s.to_owned()))
    }

    /// Manifest keys every container of this kind must carry, beyond the
    /// common ones.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            ContainerKind::FeatureSet => &["feature_kind", "split", "ids"],
            ContainerKind::LogitSet => &["ids"],
            ContainerKind::Scores => &["detector", "calibration", "ids"],
            ContainerKind::GaussianModel => &[
                "classes",
                "dim",
                "fit_sample_count",
                "shrinkage_epsilon",
                "feature_kind",
            ],
            ContainerKind::KnnIndex => &["k"],
            ContainerKind::LofModel => &["k_lof", "normalize"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub rows: u64,
    pub cols: u64,
    pub crc32: u32,
    #[serde(flatten)]
    pub fields: Map<String, Value>,
}

impl Manifest {
    pub fn new(kind: ContainerKind, rows: usize, cols: usize) -> Self {
        Self {
            kind: kind.as_str().to_owned(),
            rows: rows as u64,
            cols: cols as u64,
            crc32: 0,
            fields: Map::new(),
        }
    }

    pub fn container_kind(&self) -> Result<ContainerKind> {
        ContainerKind::parse(&self.kind)
    }

    pub fn insert(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.fields
            .insert(key.to_owned(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.fields.get(key).ok_or_else(|| {
            OodError::MalformedContainer(format!("{} manifest lacks {key:?}", self.kind))
        })?;
        serde_json::from_value(v.clone()).map_err(|e| {
            OodError::MalformedContainer(format!("{} manifest field {key:?}: {e}", self.kind))
        })
    }

    pub fn get_opt<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.fields.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn expect_kind(&self, kind: ContainerKind) -> Result<()> {
        let found = self.container_kind()?;
        if found != kind {
            return Err(OodError::MalformedContainer(format!(
                "expected a {} container, found {}",
                kind.as_str(),
                found.as_str()
            )));
        }
        Ok(())
    }

    fn validate_schema(&self) -> Result<ContainerKind> {
        let kind = self.container_kind()?;
        for key in kind.required_fields() {
            if !self.fields.contains_key(*key) {
                return Err(OodError::MalformedContainer(format!(
                    "{} manifest lacks {key:?}",
                    self.kind
                )));
            }
        }
        Ok(kind)
    }

    fn payload_bytes(&self) -> Result<u64> {
        self.rows
            .checked_mul(self.cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| OodError::MalformedContainer("declared shape overflows".into()))
    }
}

fn payload_to_bytes(payload: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() * 4);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serializes a container. `manifest.crc32` is recomputed from the payload.
pub fn encode(manifest: &Manifest, payload: &[f32]) -> Result<Vec<u8>> {
    manifest.validate_schema()?;
    if manifest.payload_bytes()? != payload.len() as u64 * 4 {
        return Err(OodError::MalformedContainer(format!(
            "manifest declares {}×{} but payload has {} values",
            manifest.rows,
            manifest.cols,
            payload.len()
        )));
    }
    let bytes = payload_to_bytes(payload);
    let mut manifest = manifest.clone();
    manifest.crc32 = crc32fast::hash(&bytes);
    let json = serde_json::to_vec(&manifest)?;
    let json_len = u32::try_from(json.len())
        .map_err(|_| OodError::MalformedContainer("manifest too large".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN as usize + json.len() + bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes);
    Ok(out)
}

/// Reads a container from `reader`, which holds exactly `total_len` bytes.
/// Sizes are checked against `total_len` before any large buffer is allocated.
fn read_from<R: Read>(
    mut reader: R,
    total_len: u64,
    origin: &Path,
) -> Result<(Manifest, Vec<f32>)> {
    if total_len < HEADER_LEN {
        return Err(OodError::MalformedContainer(format!(
            "{}: {total_len} bytes is shorter than the header",
            origin.display()
        )));
    }
    let mut header = [0u8; HEADER_LEN as usize];
    reader.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(OodError::MalformedContainer(format!(
            "{}: bad magic bytes",
            origin.display()
        )));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(OodError::MalformedContainer(format!(
            "{}: unsupported format version {version}",
            origin.display()
        )));
    }
    let manifest_len = u32::from_le_bytes([header[6], header[7], header[8], header[9]]) as u64;
    if HEADER_LEN + manifest_len > total_len {
        return Err(OodError::MalformedContainer(format!(
            "{}: manifest length {manifest_len} exceeds file size",
            origin.display()
        )));
    }
    let mut json = vec![0u8; manifest_len as usize];
    reader.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| {
        OodError::MalformedContainer(format!("{}: manifest: {e}", origin.display()))
    })?;
    manifest.validate_schema()?;

    let declared = manifest.payload_bytes()?;
    let available = total_len - HEADER_LEN - manifest_len;
    if declared != available {
        return Err(OodError::MalformedContainer(format!(
            "{}: manifest declares {}×{} ({declared} payload bytes) but {available} bytes follow",
            origin.display(),
            manifest.rows,
            manifest.cols
        )));
    }
    let mut bytes = vec![0u8; declared as usize];
    reader.read_exact(&mut bytes)?;
    let crc = crc32fast::hash(&bytes);
    if crc != manifest.crc32 {
        return Err(OodError::CorruptFile {
            path: origin.to_path_buf(),
            reason: format!(
                "payload crc32 {crc:08x} does not match manifest {:08x}",
                manifest.crc32
            ),
        });
    }
    let payload = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((manifest, payload))
}

pub fn decode(bytes: &[u8]) -> Result<(Manifest, Vec<f32>)> {
    read_from(bytes, bytes.len() as u64, Path::new("<memory>"))
}

pub fn write_container(path: &Path, manifest: &Manifest, payload: &[f32]) -> Result<()> {
    let bytes = encode(manifest, payload)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(Manifest, Vec<f32>)> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    read_from(BufReader::new(file), len, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores_manifest(rows: usize) -> Manifest {
        let mut m = Manifest::new(ContainerKind::Scores, rows, 1);
        m.insert("detector", "md").unwrap();
        m.insert("calibration", "raw").unwrap();
        m.insert("ids", (0..rows as i64).collect::<Vec<_>>())
            .unwrap();
        m
    }

    #[test]
    fn layout() {
        let bytes = encode(&scores_manifest(2), &[1.0, -2.5]).unwrap();
        assert_eq!(&bytes[0..4], b"OODX");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let mlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let tail = &bytes[10 + mlen..];
        assert_eq!(tail, &[0, 0, 0x80, 0x3f, 0, 0, 0x20, 0xc0]);
        let (m, p) = decode(&bytes).unwrap();
        assert_eq!(m.crc32, crc32fast::hash(tail));
        assert_eq!(p, vec![1.0, -2.5]);
    }

    #[test]
    fn reencode_is_identical() {
        let bytes = encode(&scores_manifest(3), &[0.1, 0.2, f32::MIN_POSITIVE]).unwrap();
        let (m, p) = decode(&bytes).unwrap();
        assert_eq!(encode(&m, &p).unwrap(), bytes);
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&scores_manifest(3), &[0.1, 0.2, 0.3]).unwrap();
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, OodError::MalformedContainer(_)), "{err}");
    }

    #[test]
    fn flipped_payload_bit() {
        let mut bytes = encode(&scores_manifest(3), &[0.1, 0.2, 0.3]).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(OodError::CorruptFile { .. })));
    }

    #[test]
    fn unknown_kind() {
        let mut m = scores_manifest(0);
        m.kind = "tensor".into();
        assert!(matches!(encode(&m, &[]), Err(OodError::UnsupportedKind(_))));
    }

    #[test]
    fn missing_schema_field() {
        let mut m = scores_manifest(0);
        m.fields.remove("detector");
        assert!(matches!(
            encode(&m, &[]),
            Err(OodError::MalformedContainer(_))
        ));
    }

    #[test]
    fn huge_declared_shape_rejected_without_allocating() {
        let bytes = encode(&scores_manifest(1), &[1.0]).unwrap();
        let (mut m, _) = decode(&bytes).unwrap();
        m.rows = u64::MAX / 8;
        let json = serde_json::to_vec(&m).unwrap();
        let mut forged = Vec::new();
        forged.extend_from_slice(MAGIC);
        forged.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        forged.extend_from_slice(&(json.len() as u32).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(&[0u8; 4]);
        assert!(matches!(
            decode(&forged),
            Err(OodError::MalformedContainer(_))
        ));
    }
}
