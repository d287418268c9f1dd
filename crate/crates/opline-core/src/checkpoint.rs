//! Versioned checkpoint persistence with lineage metadata, so merge
//! operations can verify that the checkpoints they combine share one
//! architecture, normalizer, and anchor.
//!
//! File layout (integers little-endian):
//!   magic    8 bytes  "OPLCKPT1"
//!   version  u32      1
//!   schema   u32 tensor count, then per tensor: u32 name length, name
//!            bytes, u32 rank, u64 dims
//!   data     f64 values per tensor, schema order
//!   metadata u32 length + canonical JSON (config, normalizer, lineage)
//!   hash     32 bytes, SHA-256 of everything above
//!
//! Files are immutable after save; writers go through write-then-rename.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::operator::{Normalizer, OperatorConfig};
use crate::weights::{hex_digest, Tensor, WeightSet};

const MAGIC: &[u8; 8] = b"OPLCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Anchor,
    EndpointLow,
    EndpointHigh,
    Merged,
    Baseline,
}

/// Provenance of a checkpoint: who it was trained or composed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub role: Role,
    pub family: String,
    /// Physical axis value for endpoint experts.
    pub lambda: Option<f64>,
    /// Content hash of the parent checkpoint (the anchor for experts and
    /// baselines; absent for the anchor itself).
    pub parent: Option<String>,
    /// Anchor content hash, recorded on composed checkpoints.
    pub anchor: Option<String>,
    pub seed: u64,
    pub config_digest: String,
    /// Composition coordinate for merged checkpoints.
    pub alpha: Option<f64>,
    /// (low, high) source hashes for merged checkpoints.
    pub sources: Option<(String, String)>,
    /// Free-form, deterministic creation note (stage name, merge rule).
    pub note: String,
}

impl Lineage {
    pub fn anchor_root(&self, own_hash: &str) -> Option<String> {
        match self.role {
            Role::Anchor => Some(own_hash.to_string()),
            Role::EndpointLow | Role::EndpointHigh | Role::Baseline => self.parent.clone(),
            Role::Merged => self.anchor.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    config: OperatorConfig,
    normalizer: Normalizer,
    lineage: Lineage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: WeightSet,
    pub config: OperatorConfig,
    pub normalizer: Normalizer,
    pub lineage: Lineage,
}

impl Checkpoint {
    pub fn new(
        weights: WeightSet,
        config: OperatorConfig,
        normalizer: Normalizer,
        lineage: Lineage,
    ) -> Self {
        Self {
            weights,
            config,
            normalizer,
            lineage,
        }
    }

    /// Content hash over schema and raw weight bytes (metadata excluded), so
    /// the identity of a checkpoint is its weights.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(schema_bytes(&self.weights));
        for (_, t) in self.weights.iter() {
            for v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_digest(hasher)
    }

    pub fn operator(&self) -> Result<crate::operator::Operator> {
        crate::operator::Operator::new(
            self.config.clone(),
            self.weights.clone(),
            self.normalizer.clone(),
        )
    }
}

fn schema_bytes(ws: &WeightSet) -> Vec<u8> {
    let mut out = Vec::new();
    let schema = ws.schema();
    out.extend((schema.entries.len() as u32).to_le_bytes());
    for (name, shape) in &schema.entries {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend((*d as u64).to_le_bytes());
        }
    }
    out
}

/// Save a checkpoint; returns its content hash. Write-then-rename keeps
/// concurrent readers safe.
pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<String> {
    let mut body = Vec::new();
    body.extend(MAGIC);
    body.extend(VERSION.to_le_bytes());
    body.extend(schema_bytes(&ckpt.weights));
    for (_, t) in ckpt.weights.iter() {
        for v in &t.data {
            body.extend(v.to_le_bytes());
        }
    }
    let meta = Metadata {
        config: ckpt.config.clone(),
        normalizer: ckpt.normalizer.clone(),
        lineage: ckpt.lineage.clone(),
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    body.extend((meta_bytes.len() as u32).to_le_bytes());
    body.extend(&meta_bytes);

    let mut hasher = Sha256::new();
    hasher.update(&body);
    let digest = hasher.finalize();

    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        w.write_all(&body)?;
        w.write_all(&digest)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(ckpt.content_hash())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 44 {
        return Err(Error::Corrupt(format!("{} is truncated", path.display())));
    }
    let (body, stored_hash) = bytes.split_at(bytes.len() - 32);
    let mut hasher = Sha256::new();
    hasher.update(body);
    if hasher.finalize().as_slice() != stored_hash {
        return Err(Error::Corrupt(format!(
            "hash mismatch in {}",
            path.display()
        )));
    }

    let mut cur = std::io::Cursor::new(body);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut cur)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut cur)? as usize);
        }
        entries.push((name, shape));
    }
    let mut weights = WeightSet::new();
    for (name, shape) in &entries {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(read_f64(&mut cur)?);
        }
        weights.insert(name.clone(), Tensor::from_vec(shape, data)?);
    }
    // The canonical order is lexicographic; a file whose schema block is in
    // any other order would hash differently, so reject it.
    let reordered: Vec<(String, Vec<usize>)> = weights.schema().entries;
    if reordered != entries {
        return Err(Error::Format(
            "schema block is not in canonical order".into(),
        ));
    }
    let meta_len = read_u32(&mut cur)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    cur.read_exact(&mut meta_bytes)?;
    let meta: Metadata = serde_json::from_slice(&meta_bytes)?;

    let mut probe = [0u8; 1];
    if cur.read(&mut probe)? != 0 {
        return Err(Error::Corrupt(format!(
            "trailing bytes in {}",
            path.display()
        )));
    }

    Ok(Checkpoint {
        weights,
        config: meta.config,
        normalizer: meta.normalizer,
        lineage: meta.lineage,
    })
}

/// Succeeds iff both checkpoints share the weight schema, the normalizer, and
/// the same anchor root.
pub fn assert_same_lineage(a: &Checkpoint, b: &Checkpoint) -> Result<()> {
    if a.weights.schema() != b.weights.schema() {
        return Err(Error::LineageMismatch(format!(
            "schema hashes differ: {} vs {}",
            a.weights.schema_hash(),
            b.weights.schema_hash()
        )));
    }
    if a.normalizer != b.normalizer {
        return Err(Error::LineageMismatch(
            "normalizer statistics differ".into(),
        ));
    }
    let ra = a.lineage.anchor_root(&a.content_hash());
    let rb = b.lineage.anchor_root(&b.content_hash());
    match (ra, rb) {
        (Some(x), Some(y)) if x == y => Ok(()),
        (x, y) => Err(Error::LineageMismatch(format!(
            "anchor roots differ: {x:?} vs {y:?}"
        ))),
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::operator::{init_weights, Normalizer, TrainObjective};

    pub(crate) fn test_cfg(seed: u64) -> OperatorConfig {
        OperatorConfig {
            grid_h: 8,
            grid_w: 8,
            channels: 2,
            width: 4,
            modes: 2,
            layers: 1,
            lr: 1e-3,
            steps: 5,
            batch_size: 2,
            seed,
            objective: TrainObjective::OneStep,
            eval_every: 5,
        }
    }

    pub(crate) fn anchor_ckpt(seed: u64) -> Checkpoint {
        let cfg = test_cfg(seed);
        let weights = init_weights(&cfg).unwrap();
        Checkpoint::new(
            weights,
            cfg.clone(),
            Normalizer::identity(2),
            Lineage {
                role: Role::Anchor,
                family: "diffreact".into(),
                lambda: None,
                parent: None,
                anchor: None,
                seed,
                config_digest: cfg.digest(),
                alpha: None,
                sources: None,
                note: "test".into(),
            },
        )
    }

    pub(crate) fn expert_from(anchor: &Checkpoint, role: Role, shift: f64) -> Checkpoint {
        let mut weights = anchor.weights.clone();
        for (_, t) in weights.iter_mut() {
            for v in t.data.iter_mut() {
                *v += shift;
            }
        }
        let mut lineage = anchor.lineage.clone();
        lineage.role = role;
        lineage.parent = Some(anchor.content_hash());
        lineage.lambda = Some(if role == Role::EndpointLow { -1.0 } else { 1.0 });
        Checkpoint::new(
            weights,
            anchor.config.clone(),
            anchor.normalizer.clone(),
            lineage,
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ckpt = anchor_ckpt(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchor.ckpt");
        let hash = save(&ckpt, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(ckpt, back);
        assert_eq!(hash, back.content_hash());
    }

    #[test]
    fn truncated_file_fails_closed() {
        let ckpt = anchor_ckpt(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchor.ckpt");
        save(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn repeated_saves_share_the_content_hash() {
        let ckpt = anchor_ckpt(11);
        let dir = tempfile::tempdir().unwrap();
        let h1 = save(&ckpt, &dir.path().join("a.ckpt")).unwrap();
        let h2 = save(&ckpt, &dir.path().join("b.ckpt")).unwrap();
        assert_eq!(h1, h2);
        let b1 = std::fs::read(dir.path().join("a.ckpt")).unwrap();
        let b2 = std::fs::read(dir.path().join("b.ckpt")).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn lineage_accepts_siblings_and_self() {
        let anchor = anchor_ckpt(12);
        let low = expert_from(&anchor, Role::EndpointLow, -0.01);
        let high = expert_from(&anchor, Role::EndpointHigh, 0.01);
        assert!(assert_same_lineage(&low, &high).is_ok());
        assert!(assert_same_lineage(&anchor, &anchor).is_ok());
        assert!(assert_same_lineage(&anchor, &low).is_ok());
    }

    #[test]
    fn lineage_rejects_foreign_anchors() {
        let a = anchor_ckpt(13);
        let b = anchor_ckpt(14);
        let ea = expert_from(&a, Role::EndpointLow, -0.01);
        let eb = expert_from(&b, Role::EndpointHigh, 0.01);
        assert!(assert_same_lineage(&ea, &eb).is_err());
    }
}
