//! Tab-separated dataset index with a `#vocab:` header line.
//!
//! ```text
//! #vocab:blues;jazz;rock
//! #clip_id	path	split	labels	duration_s
//! clip_000	audio/clip_000.wav	train	jazz	12.5
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const VOCAB_PREFIX: &str = "#vocab:";
pub const COLUMNS: &str = "#clip_id\tpath\tsplit\tlabels\tduration_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
    Pretrain,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
            Split::Pretrain => "pretrain",
        }
    }
}

impl FromStr for Split {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Split::Train,
            "valid" => Split::Valid,
            "test" => Split::Test,
            "pretrain" => Split::Pretrain,
            _ => bail!("unknown split `{s}`"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub clip_id: String,
    /// Audio (or feature) path, relative to the manifest's directory unless
    /// absolute.
    pub path: PathBuf,
    pub split: Split,
    pub labels: Vec<String>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub vocab: Vec<String>,
    pub entries: Vec<Entry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.contains([';', '\t', '\n', '\r'])
}

impl Manifest {
    pub fn new(vocab: Vec<String>, entries: Vec<Entry>, base_dir: PathBuf) -> Result<Self> {
        let m = Manifest { vocab, entries, base_dir };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() {
            bail!("label vocabulary is empty");
        }
        for (i, name) in self.vocab.iter().enumerate() {
            if !valid_name(name) {
                bail!("invalid label name `{name}`");
            }
            if self.vocab[..i].contains(name) {
                bail!("label `{name}` appears twice in the vocabulary");
            }
        }
        let mut ids: Vec<&str> = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if !valid_id(&e.clip_id) {
                bail!("clip id `{}` must be non-empty ASCII letters, digits, `_`, `-` or `.`", e.clip_id);
            }
            for l in &e.labels {
                if !self.vocab.contains(l) {
                    bail!("clip `{}` uses label `{l}` missing from the vocabulary", e.clip_id);
                }
            }
            if !(e.duration_s >= 0.0) {
                bail!("clip `{}` has a negative duration", e.clip_id);
            }
            ids.push(&e.clip_id);
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            bail!("clip id `{}` is not unique", w[0]);
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut vocab: Option<Vec<String>> = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix(VOCAB_PREFIX) {
                if vocab.is_some() {
                    bail!("line {n}: second vocabulary header");
                }
                vocab = Some(rest.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if vocab.is_none() {
                bail!("line {n}: row before the `{VOCAB_PREFIX}` header");
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                bail!("line {n}: expected 5 tab-separated columns, found {}", cols.len());
            }
            let labels = cols[3].split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            entries.push(Entry {
                clip_id: cols[0].to_string(),
                path: PathBuf::from(cols[1]),
                split: cols[2].parse().with_context(|| format!("line {n}"))?,
                labels,
                duration_s: cols[4].trim().parse().map_err(|e| anyhow!("line {n}: bad duration: {e}"))?,
            });
        }
        let vocab = vocab.ok_or_else(|| anyhow!("manifest has no `{VOCAB_PREFIX}` header"))?;
        Manifest::new(vocab, entries, base_dir.to_path_buf())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).with_context(|| format!("in manifest {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn resolve(&self, entry: &Entry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.vocab.iter().position(|v| v == name)
    }

    /// The single genre label of `entry` as a vocabulary index.
    pub fn class_of(&self, entry: &Entry) -> Result<usize> {
        match entry.labels.as_slice() {
            [one] => Ok(self.label_index(one).expect("validated")),
            _ => bail!("clip `{}` needs exactly one label for genre classification", entry.clip_id),
        }
    }

    /// Multi-hot tag vector of `entry`.
    pub fn tags_of(&self, entry: &Entry) -> Vec<bool> {
        let mut t = vec![false; self.vocab.len()];
        for l in &entry.labels {
            t[self.label_index(l).expect("validated")] = true;
        }
        t
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{VOCAB_PREFIX}{}", self.vocab.join(";"))?;
        writeln!(f, "{COLUMNS}")?;
        for e in &self.entries {
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}",
                e.clip_id,
                e.path.display(),
                e.split.name(),
                e.labels.join(";"),
                e.duration_s
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "#vocab:blues;jazz;rock\n#clip_id\tpath\tsplit\tlabels\tduration_s\n\
                        a\taudio/a.wav\ttrain\tjazz\t12.5\n\
                        b\taudio/b.wav\ttest\tblues;rock\t30\n";

    #[test]
    fn parse_and_round_trip() {
        let m = Manifest::parse(TEXT, Path::new("/data")).unwrap();
        assert_eq!(m.vocab, ["blues", "jazz", "rock"]);
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].labels, ["blues", "rock"]);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/audio/a.wav"));
        assert_eq!(m.class_of(&m.entries[0]).unwrap(), 1);
        assert!(m.class_of(&m.entries[1]).is_err());
        assert_eq!(m.tags_of(&m.entries[1]), [true, false, true]);
        assert_eq!(m.split(Split::Test).count(), 1);
        assert_eq!(Manifest::parse(&m.to_string(), Path::new("/data")).unwrap(), m);
    }

    #[test]
    fn rejects_malformed_manifests() {
        let base = Path::new(".");
        assert!(Manifest::parse("a\tx\ttrain\tjazz\t1\n", base).is_err());
        assert!(Manifest::parse("#vocab:jazz\na\tx\ttrain\trock\t1\n", base).is_err());
        assert!(Manifest::parse("#vocab:jazz\na\tx\ttrain\tjazz\t1\na\ty\ttrain\tjazz\t1\n", base).is_err());
        assert!(Manifest::parse("#vocab:jazz\na\tx\tholdout\tjazz\t1\n", base).is_err());
        assert!(Manifest::parse("#vocab:jazz\na\tx\ttrain\tjazz\n", base).is_err());
        assert!(Manifest::parse("#vocab:jazz\n../a\tx\ttrain\tjazz\t1\n", base).is_err());
        assert!(Manifest::parse("#vocab:jazz;jazz\n", base).is_err());
    }
}
