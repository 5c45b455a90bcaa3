use std::path::Path;

use tracing::warn;
use walkdir::WalkDir;

use super::detectors::LineDetector;
use super::{Baseline, DetectorConfig, ScanError};

const BINARY_SNIFF_LEN: usize = 8 * 1024;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub files_scanned: usize,
    pub binary_skipped: usize,
    /// Files that could not be read and were skipped.
    pub warnings: usize,
}

#[derive(Debug, Clone)]
pub struct ScanOutput {
    pub baseline: Baseline,
    pub stats: ScanStats,
}

/// A file is treated as binary when its first 8 KiB contain a NUL byte.
pub fn is_binary(bytes: &[u8]) -> bool {
    bytes[..bytes.len().min(BINARY_SNIFF_LEN)].contains(&0)
}

/// Scans every regular file under `root` with the enabled detectors.
pub fn scan_tree(root: &Path, config: &DetectorConfig) -> Result<ScanOutput, ScanError> {
    config.validate()?;
    let meta = std::fs::metadata(root).map_err(|source| ScanError::Root {
        path: root.display().to_string(),
        source,
    })?;
    if !meta.is_dir() {
        return Err(ScanError::Root {
            path: root.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        });
    }
    std::fs::read_dir(root).map_err(|source| ScanError::Root {
        path: root.display().to_string(),
        source,
    })?;

    let detector = LineDetector::new(config);
    let mut stats = ScanStats::default();
    let mut findings = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                warn!("skipping unreadable entry: {e}");
                stats.warnings += 1;
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = relative_path(root, entry.path());
        let bytes = match std::fs::read(entry.path()) {
            Ok(b) => b,
            Err(e) => {
                warn!("skipping unreadable file {rel}: {e}");
                stats.warnings += 1;
                continue;
            }
        };
        if is_binary(&bytes) {
            stats.binary_skipped += 1;
            continue;
        }
        stats.files_scanned += 1;
        let text = String::from_utf8_lossy(&bytes);
        for (i, line) in text.lines().enumerate() {
            findings.extend(detector.findings(&rel, i + 1, line));
        }
    }
    Ok(ScanOutput {
        baseline: Baseline::new(config.enabled.iter().copied(), findings),
        stats,
    })
}

/// `path` relative to `root`, with `/` separators.
pub(crate) fn relative_path(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let out = scan_tree(dir.path(), &DetectorConfig::default()).unwrap();
        assert!(out.baseline.is_empty());
        assert_eq!(out.stats, ScanStats::default());
    }

    #[test]
    fn binary_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("blob.bin"), b"password = \"hunter22\"\0\x01").unwrap();
        let out = scan_tree(dir.path(), &DetectorConfig::default()).unwrap();
        assert!(out.baseline.is_empty());
        assert_eq!(out.stats.binary_skipped, 1);
    }

    #[test]
    fn missing_root_is_an_error() {
        let err = scan_tree(Path::new("/definitely/not/here"), &DetectorConfig::default());
        assert!(matches!(err, Err(ScanError::Root { .. })));
    }

    #[test]
    fn nested_paths_use_forward_slashes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("a/b")).unwrap();
        std::fs::write(dir.path().join("a/b/c.py"), "token = 'abcd1234'\n").unwrap();
        let out = scan_tree(dir.path(), &DetectorConfig::default()).unwrap();
        let paths: Vec<_> = out.baseline.results().keys().cloned().collect();
        assert_eq!(paths, ["a/b/c.py"]);
    }
}
