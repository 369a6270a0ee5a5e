//! Provenance sidecars (`<artifact>.prov.json`) and staleness checks.
//!
//! Descriptor, model and CSV files have fixed layouts, so their metadata
//! lives next to them rather than inside.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "hloc";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

pub fn sidecar(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".prov.json");
    artifact.with_file_name(name)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f
            .read(&mut buf)
            .with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Every regular file under `root` (or `root` itself), sorted.
pub fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Digest of a file, or of a directory as the digest of its sorted
/// `(relative path, file digest)` listing.
pub fn digest(path: &Path) -> Result<String> {
    if path.is_file() {
        return sha256_file(path);
    }
    let mut hasher = Sha256::new();
    for f in files_under(path)? {
        let rel = f.strip_prefix(path).unwrap_or(&f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(sha256_file(&f)?.as_bytes());
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn record(
    artifact: &Path,
    stage: &str,
    seed: Option<u64>,
    params: &impl Serialize,
    inputs: &[&Path],
) -> Result<()> {
    let prov = Provenance {
        tool: TOOL.into(),
        version: VERSION.into(),
        stage: stage.into(),
        seed,
        params: serde_json::to_value(params)?,
        inputs: inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.to_path_buf(),
                    sha256: digest(p)?,
                })
            })
            .collect::<Result<_>>()?,
    };
    let path = sidecar(artifact);
    let mut json = serde_json::to_vec_pretty(&prov)?;
    json.push(b'\n');
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))
}

pub fn read(artifact: &Path) -> Option<Provenance> {
    let bytes = fs::read(sidecar(artifact)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn mtime(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// True when every output exists, is at least as new as every input file,
/// and the first output's provenance records the same tool version and
/// parameters.
pub fn is_fresh(outputs: &[&Path], inputs: &[&Path], params: &impl Serialize) -> bool {
    let Some(first) = outputs.first() else {
        return false;
    };
    let Some(prov) = read(first) else {
        return false;
    };
    let Ok(params) = serde_json::to_value(params) else {
        return false;
    };
    if prov.version != VERSION || prov.params != params {
        return false;
    }
    let Some(oldest_output) = outputs
        .iter()
        .map(|p| mtime(p))
        .collect::<Option<Vec<_>>>()
        .and_then(|v| v.into_iter().min())
    else {
        return false;
    };
    let mut newest_input = SystemTime::UNIX_EPOCH;
    for input in inputs {
        let Ok(files) = files_under(input) else {
            return false;
        };
        for f in files {
            match mtime(&f) {
                Some(t) => newest_input = newest_input.max(t),
                None => return false,
            }
        }
    }
    oldest_output >= newest_input
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_name_appends_suffix() {
        assert_eq!(
            sidecar(Path::new("out/model.hlcm")),
            Path::new("out/model.hlcm.prov.json")
        );
    }

    #[test]
    fn freshness_tracks_params_and_times() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        fs::write(&input, "a").unwrap();
        assert!(!is_fresh(&[&output], &[&input], &1));
        fs::write(&output, "b").unwrap();
        record(&output, "test", Some(3), &1, &[&input]).unwrap();
        assert!(is_fresh(&[&output], &[&input], &1));
        assert!(!is_fresh(&[&output], &[&input], &2));
        let prov = read(&output).unwrap();
        assert_eq!(prov.seed, Some(3));
        assert_eq!(prov.inputs[0].sha256, sha256_file(&input).unwrap());
    }

    #[test]
    fn directory_digest_depends_on_content() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/a"), "1").unwrap();
        let d1 = digest(dir.path()).unwrap();
        fs::write(dir.path().join("sub/a"), "2").unwrap();
        assert_ne!(d1, digest(dir.path()).unwrap());
    }
}
