//! Plain-text dataset manifest: one `path split role` triple per line.

use std::path::{Path, PathBuf};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::io::read_wav;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Speech,
    Noise,
    Rir,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split '{s}' (train, val or test)"))),
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(Role::Speech),
            "noise" => Ok(Role::Noise),
            "rir" => Ok(Role::Rir),
            _ => Err(Error::Data(format!("unknown role '{s}' (speech, noise or rir)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub role: Role,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Loaded recordings of one split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pools {
    pub speech: Vec<Waveform>,
    pub noise: Vec<Waveform>,
    pub rir: Vec<Waveform>,
}

impl DatasetManifest {
    /// Parses manifest text. Relative paths are resolved against `base`.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [path, split, role] = fields[..] else {
                return Err(Error::Data(format!("manifest line {}: expected 'path split role', got '{line}'", no + 1)));
            };
            let path = PathBuf::from(path);
            let path = if path.is_absolute() { path } else { base.join(path) };
            entries.push(ManifestEntry {
                path,
                split: split.parse().map_err(|e| Error::Data(format!("manifest line {}: {e}", no + 1)))?,
                role: role.parse().map_err(|e| Error::Data(format!("manifest line {}: {e}", no + 1)))?,
            });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let split = match e.split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            let role = match e.role {
                Role::Speech => "speech",
                Role::Noise => "noise",
                Role::Rir => "rir",
            };
            out.push_str(&format!("{} {split} {role}\n", e.path.display()));
        }
        out
    }

    pub fn paths(&self, split: Split, role: Role) -> impl Iterator<Item = &Path> {
        self.entries.iter().filter(move |e| e.split == split && e.role == role).map(|e| e.path.as_path())
    }

    /// Reads every recording of `split`. Room responses are shared across
    /// splits when the split itself lists none.
    pub fn pools(&self, split: Split) -> Result<Pools> {
        let read = |role| self.paths(split, role).map(read_wav).collect::<Result<Vec<_>>>();
        let mut pools = Pools { speech: read(Role::Speech)?, noise: read(Role::Noise)?, rir: read(Role::Rir)? };
        if pools.rir.is_empty() {
            pools.rir = self
                .entries
                .iter()
                .filter(|e| e.role == Role::Rir)
                .map(|e| read_wav(&e.path))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(pools)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let text = "# corpus\nclean/a.wav train speech\n\n/abs/n.wav train noise # babble\nr.wav test rir\n";
        let m = DatasetManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[0].path, PathBuf::from("/data/clean/a.wav"));
        assert_eq!(m.entries[1].path, PathBuf::from("/abs/n.wav"));
        assert_eq!(m.entries[2].role, Role::Rir);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(DatasetManifest::parse("a.wav train", Path::new(".")).is_err());
        assert!(DatasetManifest::parse("a.wav dev speech", Path::new(".")).is_err());
    }
}
