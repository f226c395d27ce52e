//! Small shared helpers: stable hashing, atomic file writes, JSONL I/O.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

/// 64-bit FNV-1a. Used for shard checksums and for feature hashing, where the
/// value must be stable across Rust releases (std's `DefaultHasher` is not).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Write `contents` to `path` via a temp file and rename, so readers never
/// observe a partially written file and a crash never truncates prior state.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Read a JSONL file into parsed values, returning `(parsed, malformed)`
/// where malformed lines are kept verbatim instead of aborting the read.
pub fn read_jsonl_lossy<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> io::Result<(Vec<T>, Vec<String>)> {
    let file = fs::File::open(path)?;
    let mut parsed = Vec::new();
    let mut malformed = Vec::new();
    for line in io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(v) => parsed.push(v),
            Err(_) => malformed.push(line),
        }
    }
    Ok((parsed, malformed))
}

/// Serialize items one per line. Any item failing to serialize is a bug in
/// the caller's type, so this propagates the error.
pub fn to_jsonl<T: serde::Serialize>(items: &[T]) -> serde_json::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a64_known_vectors() {
        // Reference values for the classic FNV-1a test strings.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn write_atomic_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert!(!path.with_extension("tmp").exists());
    }
}
