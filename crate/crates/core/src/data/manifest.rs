//! `clean<TAB>rainy` pair lists. Relative paths resolve against the
//! directory holding the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPaths {
    pub clean: PathBuf,
    pub rainy: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<PairPaths>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let [clean, rainy] = fields[..] else {
            return Err(DataError::Manifest {
                line: i + 1,
                msg: format!("expected 2 tab-separated paths, found {}", fields.len()),
            });
        };
        if clean.is_empty() || rainy.is_empty() {
            return Err(DataError::Manifest {
                line: i + 1,
                msg: "empty path".into(),
            });
        }
        pairs.push(PairPaths {
            clean: base.join(clean),
            rainy: base.join(rainy),
        });
    }
    Ok(pairs)
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairPaths>> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

/// Writes entries verbatim, one `clean<TAB>rainy` line each.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let text: String = entries.iter().map(|(c, r)| format!("{c}\t{r}\n")).collect();
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_comments_and_blank_lines() {
        let text = "# pairs\n\na.png\tb.png\n  \nc.ppm\td.ppm\n";
        let pairs = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].rainy, PathBuf::from("/data/d.ppm"));
    }

    #[test]
    fn reports_malformed_line_number() {
        let err = parse_manifest("a.png\tb.png\nonly-one\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, DataError::Manifest { line: 2, .. }));
    }
}
