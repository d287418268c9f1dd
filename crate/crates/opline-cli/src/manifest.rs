//! Stage manifests: every stage records the digests of its inputs and
//! outputs plus its wall time, and a top-level manifest lets one command
//! re-verify the whole artifact tree.
//!
//! Training logs carry wall-clock columns and are the one artifact class
//! excluded from digest maps.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: u64,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("reading {} for digest", path.display()))?;
    Ok(digest_bytes(&bytes))
}

/// True for artifacts whose bytes contain wall-clock timing.
pub fn is_volatile(rel: &str) -> bool {
    rel.ends_with("_train_log.csv")
}

/// Digest a set of output files relative to the run directory, skipping
/// volatile ones.
pub fn collect_digests(out_dir: &Path, rels: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for rel in rels {
        if is_volatile(rel) {
            continue;
        }
        map.insert(rel.clone(), digest_file(&out_dir.join(rel))?);
    }
    Ok(map)
}

fn manifest_path(out_dir: &Path, stage: &str) -> std::path::PathBuf {
    out_dir.join("manifests").join(format!("{stage}.json"))
}

pub fn write_stage_manifest(out_dir: &Path, manifest: &StageManifest) -> Result<()> {
    let dir = out_dir.join("manifests");
    fs::create_dir_all(&dir)?;
    let path = manifest_path(out_dir, &manifest.stage);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(manifest)?)?;
    fs::rename(&tmp, &path)?;
    update_top_manifest(out_dir)?;
    Ok(())
}

pub fn load_stage_manifest(out_dir: &Path, stage: &str) -> Result<StageManifest> {
    let path = manifest_path(out_dir, stage);
    if !path.exists() {
        bail!(
            "missing artifact: stage '{stage}' has not produced {} yet",
            path.display()
        );
    }
    Ok(serde_json::from_slice(&fs::read(&path)?)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopManifest {
    pub stages: BTreeMap<String, String>,
}

fn update_top_manifest(out_dir: &Path) -> Result<()> {
    let dir = out_dir.join("manifests");
    let mut stages = BTreeMap::new();
    for entry in fs::read_dir(&dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stage) = name.strip_suffix(".json") {
            if stage == "top" {
                continue;
            }
            stages.insert(stage.to_string(), digest_file(&entry.path())?);
        }
    }
    let top = TopManifest { stages };
    let path = dir.join("top.json");
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&top)?)?;
    fs::rename(&tmp, &path)?;
    Ok(())
}

/// Re-verify: every output recorded by any stage manifest must digest to the
/// recorded value. Returns the number of checked files.
pub fn verify_all(out_dir: &Path) -> Result<usize> {
    let dir = out_dir.join("manifests");
    if !dir.exists() {
        bail!("missing artifact: no manifests under {}", out_dir.display());
    }
    let mut checked = 0;
    for entry in fs::read_dir(&dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".json") || name == "top.json" {
            continue;
        }
        let manifest: StageManifest = serde_json::from_slice(&fs::read(entry.path())?)?;
        for (rel, recorded) in &manifest.outputs {
            let current = digest_file(&out_dir.join(rel))
                .with_context(|| format!("stage {}: output {rel}", manifest.stage))?;
            if &current != recorded {
                bail!(
                    "stale inputs: {rel} digests to {current}, manifest of stage {} recorded {recorded}",
                    manifest.stage
                );
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Check that the current bytes of an upstream stage's outputs still match
/// its manifest, and return those digests as this stage's input map.
pub fn require_upstream(
    out_dir: &Path,
    stage: &str,
    config_digest: &str,
) -> Result<BTreeMap<String, String>> {
    let manifest = load_stage_manifest(out_dir, stage)?;
    if manifest.config_digest != config_digest {
        bail!(
            "stale inputs: stage '{stage}' ran with config digest {}, current config is {config_digest}",
            manifest.config_digest
        );
    }
    let mut inputs = BTreeMap::new();
    for (rel, recorded) in &manifest.outputs {
        let current = digest_file(&out_dir.join(rel))
            .with_context(|| format!("upstream stage {stage}: {rel}"))?;
        if &current != recorded {
            bail!(
                "stale inputs: {rel} changed since stage '{stage}' ran (recorded {recorded}, found {current})"
            );
        }
        inputs.insert(rel.clone(), current);
    }
    Ok(inputs)
}
