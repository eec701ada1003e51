use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::read_features;
use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One line of a manifest. `path` is relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base: PathBuf,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<ManifestEntry> = read_jsonl(path)?;
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Data(format!("{}: duplicate id `{}`", path.display(), e.id)));
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, base })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn load_features<F: Real>(&self, entry: &ManifestEntry) -> Result<Tensor<F>> {
        read_features(&self.resolve(entry))
    }

    /// Features of every entry in `split`, in manifest order.
    pub fn load_split<F: Real>(&self, split: Split) -> Result<(Vec<&ManifestEntry>, Vec<Tensor<F>>)> {
        let entries = self.split(split);
        let feats = entries.iter().map(|e| self.load_features(e)).collect::<Result<Vec<_>>>()?;
        Ok((entries, feats))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
}

pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    read_jsonl(path)
}

pub fn write_captions(path: &Path, rows: &[CaptionRecord]) -> Result<()> {
    write_jsonl(path, rows)
}

/// One line of decoder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedCaption {
    pub id: String,
    pub caption: String,
    pub logprob: f64,
}

pub fn write_decoded(path: &Path, rows: &[DecodedCaption]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn read_decoded(path: &Path) -> Result<Vec<DecodedCaption>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"path\":\"a.fvec\",\"label\":2,\"split\":\"train\"}\n\n{\"id\":\"b\",\"path\":\"/x/b.fvec\",\"label\":null,\"split\":\"test\"}\n",
        )
        .unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].label, Some(2));
        assert_eq!(m.resolve(&m.entries[0]), dir.path().join("a.fvec"));
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/x/b.fvec"));
        assert_eq!(m.split(Split::Test).len(), 1);

        fs::write(&path, "{\"id\":\"a\",\"path\":\"a\",\"label\":1,\"split\":\"train\"}\n{\"id\":\"a\",\"path\":\"b\",\"label\":1,\"split\":\"train\"}\n").unwrap();
        assert!(Manifest::load(&path).is_err());
        fs::write(&path, "{\"id\":\"a\",\"path\":\"a\",\"label\":1,\"split\":\"dev\"}\n").unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }
}
