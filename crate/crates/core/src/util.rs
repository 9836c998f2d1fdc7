//! Small shared helpers: dotted key/value text, atomic file writes, seed mixing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are skipped.
/// Keys keep their order; duplicate keys are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Format(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::Format(format!("line {}: duplicate key {k}", lineno + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finaliser; decorrelates nearby seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one job, derived from the master seed and textual identifiers.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = mix64(master);
    for p in parts {
        h = mix64(h ^ fnv1a(p.as_bytes()));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_basic() {
        let kv = parse_kv("# c\n a.b = x \n\nc=1\n").unwrap();
        assert_eq!(kv, vec![("a.b".into(), "x".into()), ("c".into(), "1".into())]);
        assert!(parse_kv("novalue").is_err());
        assert!(parse_kv("a=1\na=2").is_err());
    }

    #[test]
    fn seeds_differ_by_part() {
        assert_ne!(derive_seed(1, &["a"]), derive_seed(1, &["b"]));
        assert_eq!(derive_seed(7, &["x", "y"]), derive_seed(7, &["x", "y"]));
    }
}
