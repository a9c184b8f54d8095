use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub utt_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
}

/// Tab-separated `utt_id  speaker_id  path` rows with unique utterance ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id `{}`", r.utt_id)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sorted distinct speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.speaker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Speaker id → class index, in sorted order.
    pub fn speaker_index(&self) -> BTreeMap<String, usize> {
        self.speakers().into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    }

    pub fn speaker_of(&self, utt_id: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.utt_id == utt_id)
            .map(|r| r.speaker_id.as_str())
    }

    /// Requires at least two distinct speakers.
    pub fn require_trainable(&self) -> Result<()> {
        if self.speakers().len() < 2 {
            return Err(Error::invalid("manifest needs at least two distinct speakers"));
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: &Path, context: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [utt, spk, path] = fields.as_slice() else {
                return Err(Error::format(
                    context,
                    format!("line {}: expected 3 tab-separated fields, got {}", i + 1, fields.len()),
                ));
            };
            let p = PathBuf::from(path);
            rows.push(ManifestRow {
                utt_id: utt.to_string(),
                speaker_id: spk.to_string(),
                path: if p.is_absolute() { p } else { base_dir.join(p) },
            });
        }
        Self::new(rows).map_err(|e| Error::format(context, e.to_string()))
    }

    /// Loads a manifest, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, &path.display().to_string())
    }

    /// Writes the manifest with paths relative to `path`'s directory where possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = String::new();
        for r in &self.rows {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            out.push_str(&format!("{}\t{}\t{}\n", r.utt_id, r.speaker_id, p.display()));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let m = Manifest::parse("u1\ts1\ta/u1.wav\nu2\ts2\t/abs/u2.wav\n", Path::new("/base"), "m").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows()[0].path, PathBuf::from("/base/a/u1.wav"));
        assert_eq!(m.rows()[1].path, PathBuf::from("/abs/u2.wav"));
        assert_eq!(m.speakers(), vec!["s1", "s2"]);
    }

    #[test]
    fn rejects_duplicates_and_bad_rows() {
        assert!(Manifest::parse("u1\ts1\tp\nu1\ts2\tq\n", Path::new("."), "m").is_err());
        assert!(Manifest::parse("u1 s1 p\n", Path::new("."), "m").is_err());
    }

    #[test]
    fn single_speaker_is_not_trainable() {
        let m = Manifest::parse("u1\ts1\tp\nu2\ts1\tq\n", Path::new("."), "m").unwrap();
        assert!(m.require_trainable().is_err());
    }
}
