//! Persisted nuisance artifact, dataset fingerprinting and atomic writes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ColumnRoles;
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceConfig, NuisanceEstimates, PseudoOutcomes};

pub const CACHE_FORMAT_VERSION: u32 = 1;

/// Strips a UTF-8 BOM, normalises line endings to `\n` and drops trailing
/// whitespace on each line and at the end of the file.
pub fn canonicalize(bytes: &[u8]) -> Vec<u8> {
    let body = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut out = Vec::with_capacity(body.len());
    for line in body.split(|&b| b == b'\n') {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let end = line.iter().rposition(|b| !b.is_ascii_whitespace()).map_or(0, |p| p + 1);
        out.extend_from_slice(&line[..end]);
        out.push(b'\n');
    }
    while out.last() == Some(&b'\n') {
        out.pop();
    }
    out
}

/// Hex SHA-256 of the canonicalised bytes.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(canonicalize(bytes)))
}

pub fn fingerprint_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(fingerprint(&bytes))
}

/// Writes via a temporary file in the target directory, then renames, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let ctx = |e| Error::io(path.display().to_string(), e);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(ctx)
}

/// Everything the later stages need, so they never refit a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceCache {
    pub format_version: u32,
    pub fingerprint: String,
    pub roles: ColumnRoles,
    pub config: NuisanceConfig,
    pub seed: u64,
    pub estimates: NuisanceEstimates,
    pub pseudo_outcomes: Vec<f64>,
}

impl NuisanceCache {
    pub fn new(
        fingerprint: String,
        roles: ColumnRoles,
        config: NuisanceConfig,
        seed: u64,
        estimates: NuisanceEstimates,
        d: &PseudoOutcomes,
    ) -> Self {
        NuisanceCache {
            format_version: CACHE_FORMAT_VERSION,
            fingerprint,
            roles,
            config,
            seed,
            estimates,
            pseudo_outcomes: d.values.clone(),
        }
    }

    pub fn pseudo_outcomes(&self) -> PseudoOutcomes {
        PseudoOutcomes::from_values(self.pseudo_outcomes.clone())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("cache is serialisable");
        bytes.push(b'\n');
        bytes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cache: NuisanceCache =
            serde_json::from_slice(&bytes).map_err(|e| Error::MalformedCache(e.to_string()))?;
        if cache.format_version != CACHE_FORMAT_VERSION {
            return Err(Error::MalformedCache(format!(
                "format version {} is not supported",
                cache.format_version
            )));
        }
        let n = cache.estimates.g.len();
        if cache.pseudo_outcomes.len() != n || cache.estimates.q0.len() != n || cache.estimates.q1.len() != n {
            return Err(Error::MalformedCache("arrays differ in length".into()));
        }
        Ok(cache)
    }

    /// Refuses the cache unless it was computed from data with fingerprint
    /// `found`.
    pub fn check_fresh(&self, found: &str) -> Result<()> {
        if self.fingerprint != found {
            return Err(Error::StaleCache {
                expected: self.fingerprint.clone(),
                found: found.to_string(),
            });
        }
        Ok(())
    }
}
