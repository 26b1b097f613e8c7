use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];
pub const DEFAULT_VOCAB_SIZE: usize = 30_000;

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Token ↔ index map. Indices 0–3 are the special tokens; the rest follow
/// descending corpus frequency, ties broken by token order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    /// Keeps the `max_size` most frequent space-separated tokens of the
    /// (already normalized) corpus.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for tok in doc.as_ref().split(' ').filter(|t| !t.is_empty()) {
                if SPECIAL_TOKENS.contains(&tok) {
                    continue;
                }
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(max_size).map(|(t, _)| t.to_owned()))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Total size including the specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the specials are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_SPECIALS
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or [`UNK`].
    pub fn index_of(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads the one-token-per-line format written by [`Vocabulary::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut tokens = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if n < NUM_SPECIALS && line != SPECIAL_TOKENS[n] {
                return Err(Error::Parse {
                    line: n as u64 + 1,
                    reason: format!("expected special token {}", SPECIAL_TOKENS[n]),
                });
            }
            tokens.push(line);
        }
        if tokens.len() < NUM_SPECIALS {
            return Err(Error::Parse {
                line: tokens.len() as u64 + 1,
                reason: "vocabulary file lacks the special tokens".into(),
            });
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Parse {
                line: 0,
                reason: "duplicate token in vocabulary file".into(),
            });
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_most_frequent() {
        let v = Vocabulary::build(&["a a b", "b a c"], 2);
        assert_eq!(v.get("a"), Some(4));
        assert_eq!(v.get("b"), Some(5));
        assert_eq!(v.get("c"), None);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn empty_corpus_has_specials_only() {
        let v = Vocabulary::build::<&str>(&[], DEFAULT_VOCAB_SIZE);
        assert_eq!(v.len(), 4);
        assert!(v.is_empty());
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.index_of("anything"), UNK);
    }

    #[test]
    fn ties_broken_lexicographically() {
        let v = Vocabulary::build(&["z y x", "y z"], 10);
        assert_eq!(&v.tokens()[4..], &["y", "z", "x"]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::build(&["привет мир", "мир"], 100);
        v.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<pad>\n<s>\n</s>\n<unk>\nмир\n"));
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    #[test]
    fn load_rejects_missing_specials() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        std::fs::write(&p, "a\nb\n").unwrap();
        assert!(matches!(Vocabulary::load(&p), Err(Error::Parse { line: 1, .. })));
    }
}
