//! Layout of a preprocessed directory.
//!
//! ```text
//! manifest.txt   key=value counts, seed, feature paths
//! vocab.txt      one token per line, specials first
//! records.csv    encoded records
//! train.csv, validation.csv, test.csv   labelled pairs
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmlink::dataset::{read_pairs, read_records, PairExample, Record, Vocabulary};
use mmlink::features::{FeatureKind, FeatureStore};

pub const MANIFEST: &str = "manifest.txt";
pub const VOCAB: &str = "vocab.txt";
pub const RECORDS: &str = "records.csv";
pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|_| mmlink::Error::MissingInput(path.to_path_buf()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(mmlink::Error::Parse {
                line: i as u64 + 1,
                reason: format!("expected key=value, got {line:?}"),
            })
            .with_context(|| path.display().to_string());
        };
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

/// A loaded preprocessed directory.
pub struct Prepared {
    pub dir: PathBuf,
    pub manifest: BTreeMap<String, String>,
    pub vocab: Vocabulary,
    pub records: Vec<Record>,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_kv(&dir.join(MANIFEST))?;
        let vocab = Vocabulary::load(dir.join(VOCAB))?;
        let records =
            read_records(dir.join(RECORDS)).with_context(|| format!("reading {}", dir.join(RECORDS).display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            vocab,
            records,
        })
    }

    pub fn index(&self) -> HashMap<u64, &Record> {
        self.records.iter().map(|r| (r.item_id, r)).collect()
    }

    pub fn split(&self, name: &str) -> Result<Vec<PairExample>> {
        if !SPLITS.contains(&name) {
            bail!(crate::commands::UsageError(format!(
                "unknown split {name:?}; expected train, validation or test"
            )));
        }
        let path = self.dir.join(format!("{name}.csv"));
        read_pairs(&path).with_context(|| format!("reading {}", path.display()))
    }

    /// The global or regional store recorded in the manifest.
    pub fn features(&self, kind: FeatureKind) -> Result<FeatureStore> {
        let key = match kind {
            FeatureKind::Global => "features",
            FeatureKind::Regional => "regions",
        };
        let Some(path) = self.manifest.get(key) else {
            return Err(mmlink::Error::Config(format!(
                "the preprocessed directory has no {key} store; rerun preprocess with --{key}"
            ))
            .into());
        };
        let path = PathBuf::from(path);
        let path = if path.is_absolute() { path } else { self.dir.join(path) };
        FeatureStore::load(&path, Some(kind)).with_context(|| format!("loading {}", path.display()))
    }
}
