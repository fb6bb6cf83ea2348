//! Versioned binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic           8 bytes   "RISKMLA\0"
//! format_version  u32
//! header_len      u32
//! header          header_len bytes of UTF-8 JSON (ArtifactMeta)
//! payload_len     u64
//! payload         bincode-encoded Payload
//! checksum        32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Model parameters live only in the payload, where bincode stores each
//! `f64` as its raw IEEE-754 bytes, so a round trip is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, FeatureSchema, Scaler};
use crate::ensemble::StackModel;
use crate::error::{Error, Result};
use crate::learners::TrainedModel;
use crate::matrix::Matrix;
use crate::Classifier;

pub const MAGIC: &[u8; 8] = b"RISKMLA\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPayload {
    Single(TrainedModel),
    Stack(StackModel),
}

impl ModelPayload {
    pub fn kind_name(&self) -> String {
        match self {
            ModelPayload::Single(m) => m.family().to_string(),
            ModelPayload::Stack(_) => "stack".to_string(),
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            ModelPayload::Single(m) => &m.feature_names,
            ModelPayload::Stack(m) => &m.feature_names,
        }
    }
}

impl Classifier for ModelPayload {
    fn n_features(&self) -> usize {
        match self {
            ModelPayload::Single(m) => m.n_features(),
            ModelPayload::Stack(m) => m.n_features(),
        }
    }

    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<f64>> {
        match self {
            ModelPayload::Single(m) => m.predict_proba(rows),
            ModelPayload::Stack(m) => m.predict_proba(rows),
        }
    }
}

/// Normalized evaluation rows bundled for importance estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub features: Matrix,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Payload {
    model: ModelPayload,
    scaler: Scaler,
    schema: Vec<FeatureSchema>,
    holdout: Option<Holdout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub format_version: u32,
    pub model: String,
    pub features: Vec<String>,
    pub seed: u64,
    /// Unix seconds, when the caller supplies one.
    pub created_unix: Option<u64>,
    /// SHA-256 of the training data, hex.
    pub dataset_fingerprint: String,
    pub library_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub meta: ArtifactMeta,
    pub model: ModelPayload,
    /// Min-max scaler restricted to `features`, in order.
    pub scaler: Scaler,
    pub schema: Vec<FeatureSchema>,
    pub holdout: Option<Holdout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSummary {
    pub path: PathBuf,
    pub bytes: usize,
    pub checksum: String,
}

/// Hex SHA-256 over feature bits and labels.
pub fn dataset_fingerprint(d: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((d.row_count() as u64).to_le_bytes());
    h.update((d.n_features() as u64).to_le_bytes());
    for name in d.feature_names() {
        h.update(name.as_bytes());
        h.update([0]);
    }
    for v in d.features.as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(&d.labels);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelArtifact {
    /// `scaler` and `schema` may cover more features than the model; they
    /// are narrowed to the model's features.
    pub fn new(
        model: ModelPayload,
        scaler: &Scaler,
        schema: &[FeatureSchema],
        seed: u64,
        dataset_fingerprint: String,
    ) -> Result<Self> {
        let features = model.feature_names().to_vec();
        let scaler = scaler.subset(&features)?;
        let schema = features
            .iter()
            .map(|f| {
                schema
                    .iter()
                    .find(|s| &s.name == f)
                    .cloned()
                    .ok_or_else(|| Error::FeatureSetMismatch(format!("no schema entry for `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelArtifact {
            meta: ArtifactMeta {
                format_version: FORMAT_VERSION,
                model: model.kind_name(),
                features,
                seed,
                created_unix: None,
                dataset_fingerprint,
                library_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            model,
            scaler,
            schema,
            holdout: None,
        })
    }

    pub fn with_holdout(mut self, holdout: Holdout) -> Result<Self> {
        if holdout.features.cols() != self.meta.features.len()
            || holdout.features.rows() != holdout.labels.len()
        {
            return Err(Error::DimensionMismatch {
                expected: self.meta.features.len(),
                got: holdout.features.cols(),
            });
        }
        self.holdout = Some(holdout);
        Ok(self)
    }

    pub fn features(&self) -> &[String] {
        &self.meta.features
    }

    /// Scales raw-unit rows, then predicts.
    pub fn predict_raw(&self, raw: &Matrix) -> Result<Vec<f64>> {
        self.model.predict_proba(&self.scaler.transform(raw)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header =
            serde_json::to_vec(&self.meta).map_err(|e| Error::Serialization(e.to_string()))?;
        let payload = bincode::serialize(&Payload {
            model: self.model.clone(),
            scaler: self.scaler.clone(),
            schema: self.schema.clone(),
            holdout: self.holdout.clone(),
        })
        .map_err(|e| Error::Serialization(e.to_string()))?;
        let mut out = Vec::with_capacity(header.len() + payload.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.meta.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |m: &str| Error::MalformedArtifact(m.to_string());
        if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
            return Err(malformed("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if bytes.len() < 12 + 4 + 8 + 32 {
            return Err(malformed("truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::ChecksumMismatch);
        }
        let header_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let header_end = 16 + header_len;
        if body.len() < header_end + 8 {
            return Err(malformed("truncated header"));
        }
        let meta: ArtifactMeta =
            serde_json::from_slice(&body[16..header_end]).map_err(|e| malformed(&e.to_string()))?;
        let payload_len =
            u64::from_le_bytes(body[header_end..header_end + 8].try_into().unwrap()) as usize;
        let payload_bytes = &body[header_end + 8..];
        if payload_bytes.len() != payload_len {
            return Err(malformed("payload length mismatch"));
        }
        let payload: Payload =
            bincode::deserialize(payload_bytes).map_err(|e| malformed(&e.to_string()))?;
        if payload.model.feature_names() != meta.features.as_slice()
            || payload.scaler.names != meta.features
        {
            return Err(malformed("feature lists disagree"));
        }
        Ok(ModelArtifact {
            meta,
            model: payload.model,
            scaler: payload.scaler,
            schema: payload.schema,
            holdout: payload.holdout,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<ArtifactSummary> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(ArtifactSummary {
            path: path.to_path_buf(),
            bytes: bytes.len(),
            checksum: hex(&bytes[bytes.len() - 32..]),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hex SHA-256 trailer of an encoded artifact.
pub fn checksum_of(bytes: &[u8]) -> Option<String> {
    (bytes.len() >= 32).then(|| hex(&bytes[bytes.len() - 32..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{self, Family, LearnerSpec};

    fn artifact() -> ModelArtifact {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64, (i * 7 % 5) as f64])
            .collect();
        let labels: Vec<u8> = (0..30).map(|i| u8::from(i >= 15)).collect();
        let d = Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, &["a", "b"]).unwrap();
        let (norm, scaler) = crate::dataset::normalize(&d).unwrap();
        let m = learners::fit(&LearnerSpec::new(Family::Logreg), &norm).unwrap();
        ModelArtifact::new(
            ModelPayload::Single(m),
            &scaler,
            &d.schema,
            3,
            dataset_fingerprint(&d),
        )
        .unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let a = artifact();
        let b = ModelArtifact::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = artifact().to_bytes().unwrap();
        let i = bytes.len() - 40;
        bytes[i] ^= 0x01;
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes),
            Err(Error::ChecksumMismatch)
        ));
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = artifact().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let err = ModelArtifact::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported version"));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(
            ModelArtifact::from_bytes(b"nope"),
            Err(Error::MalformedArtifact(_))
        ));
    }
}
