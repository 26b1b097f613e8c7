//! Hand-feature baseline: Jaccard overlap of description tokens and Euclidean
//! distance of image features, z-scored and fed to logistic regression.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{PairExample, Record};
use crate::features::FeatureStore;
use crate::{Error, Result};

/// Which tokens feed the Jaccard coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenSource {
    /// Vocabulary word ids (UNK kept as one token, specials dropped).
    #[default]
    Vocabulary,
    /// Whitespace tokens of the normalized description, before lookup.
    Raw,
}

impl TokenSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenSource::Vocabulary => "vocab",
            TokenSource::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vocab" => Ok(TokenSource::Vocabulary),
            "raw" => Ok(TokenSource::Raw),
            other => Err(Error::Config(format!("unknown token source {other:?}"))),
        }
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets count as identical (1.0).
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn euclidean(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePair {
    pub jaccard: f64,
    pub euclid: f64,
}

impl FeaturePair {
    pub fn to_array(self) -> [f64; 2] {
        [self.jaccard, self.euclid]
    }
}

fn record_jaccard(a: &Record, b: &Record, source: TokenSource) -> f64 {
    match source {
        TokenSource::Vocabulary => {
            let sa: BTreeSet<u32> = a.content().iter().copied().collect();
            let sb: BTreeSet<u32> = b.content().iter().copied().collect();
            jaccard(&sa, &sb)
        }
        TokenSource::Raw => {
            let sa: BTreeSet<&str> = a.text.split_whitespace().collect();
            let sb: BTreeSet<&str> = b.text.split_whitespace().collect();
            jaccard(&sa, &sb)
        }
    }
}

pub fn pair_features(a: &Record, b: &Record, features: &FeatureStore, source: TokenSource) -> Result<FeaturePair> {
    let fa = features.get(a.feature_key)?;
    let fb = features.get(b.feature_key)?;
    Ok(FeaturePair {
        jaccard: record_jaccard(a, b, source),
        euclid: euclidean(fa.values, fb.values)?,
    })
}

/// Features for every pair, in input order.
pub fn compute_features(
    pairs: &[PairExample],
    records: &HashMap<u64, &Record>,
    features: &FeatureStore,
    source: TokenSource,
) -> Result<Vec<FeaturePair>> {
    pairs
        .par_iter()
        .map(|p| {
            let a = records.get(&p.id_a).ok_or(Error::MissingId(p.id_a))?;
            let b = records.get(&p.id_b).ok_or(Error::MissingId(p.id_b))?;
            pair_features(a, b, features, source)
        })
        .collect()
}

pub const FEATURE_DUMP_HEADER: &str = "id_a,id_b,jaccard,euclid,label";

pub fn write_feature_dump(path: impl AsRef<Path>, pairs: &[PairExample], feats: &[FeaturePair]) -> Result<()> {
    if pairs.len() != feats.len() {
        return Err(Error::DimMismatch {
            expected: pairs.len(),
            found: feats.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{FEATURE_DUMP_HEADER}")?;
    for (p, f) in pairs.iter().zip(feats) {
        writeln!(w, "{},{},{},{},{}", p.id_a, p.id_b, f.jaccard, f.euclid, p.label)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-feature z-score transform with population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub means: [f64; 2],
    pub stds: [f64; 2],
}

impl Normalizer {
    pub fn fit(x: &[[f64; 2]]) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::ContractViolation(format!(
                "z-score fit needs at least 2 samples, got {}",
                x.len()
            )));
        }
        let n = x.len() as f64;
        let mut means = [0.0; 2];
        let mut stds = [0.0; 2];
        for j in 0..2 {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::ConstantFeature(j));
            }
            means[j] = m;
            stds[j] = s;
        }
        Ok(Self { means, stds })
    }

    pub fn apply(&self, row: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|j| (row[j] - self.means[j]) / self.stds[j])
    }

    pub fn inverse(&self, row: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|j| row[j] * self.stds[j] + self.means[j])
    }

    pub fn apply_all(&self, x: &[[f64; 2]]) -> Vec<[f64; 2]> {
        x.iter().map(|&r| self.apply(r)).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Two-feature logistic regression.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogisticModel {
    pub w: [f64; 2],
    pub b: f64,
}

impl LogisticModel {
    pub fn predict_one(&self, x: [f64; 2]) -> f64 {
        sigmoid(self.w[0] * x[0] + self.w[1] * x[1] + self.b)
    }

    pub fn predict(&self, x: &[[f64; 2]]) -> Vec<f64> {
        x.iter().map(|&r| self.predict_one(r)).collect()
    }

    /// Mean negative log-likelihood.
    pub fn nll(&self, x: &[[f64; 2]], y: &[u8]) -> f64 {
        let eps = 1e-12;
        x.iter()
            .zip(y)
            .map(|(&r, &l)| {
                let p = self.predict_one(r).clamp(eps, 1.0 - eps);
                if l == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / x.len() as f64
    }

    /// Full-batch gradient descent on the mean NLL from zero weights.
    pub fn train(x: &[[f64; 2]], y: &[u8], lr: f64, epochs: usize) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::DimMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        let mut m = Self::default();
        let n = x.len() as f64;
        for _ in 0..epochs {
            let mut gw = [0.0; 2];
            let mut gb = 0.0;
            for (&r, &l) in x.iter().zip(y) {
                let d = m.predict_one(r) - f64::from(l);
                gw[0] += d * r[0];
                gw[1] += d * r[1];
                gb += d;
            }
            m.w[0] -= lr * gw[0] / n;
            m.w[1] -= lr * gw[1] / n;
            m.b -= lr * gb / n;
        }
        if !(m.w.iter().all(|v| v.is_finite()) && m.b.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch: epochs,
                batch: 0,
            });
        }
        Ok(m)
    }
}

pub const DEFAULT_BASELINE_LR: f64 = 0.5;
pub const DEFAULT_BASELINE_EPOCHS: usize = 2000;

/// A fitted baseline: normalizer, classifier and token source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineModel {
    pub normalizer: Normalizer,
    pub logistic: LogisticModel,
    pub source: TokenSource,
}

impl BaselineModel {
    /// Fits the normalizer on `train` and trains the classifier on the
    /// normalized features.
    pub fn fit(train: &[FeaturePair], labels: &[u8], source: TokenSource, lr: f64, epochs: usize) -> Result<Self> {
        let x: Vec<[f64; 2]> = train.iter().map(|f| f.to_array()).collect();
        let normalizer = Normalizer::fit(&x)?;
        let logistic = LogisticModel::train(&normalizer.apply_all(&x), labels, lr, epochs)?;
        Ok(Self {
            normalizer,
            logistic,
            source,
        })
    }

    pub fn score(&self, feats: &[FeaturePair]) -> Vec<f64> {
        feats
            .iter()
            .map(|f| self.logistic.predict_one(self.normalizer.apply(f.to_array())))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "model=baseline")?;
        writeln!(w, "token_source={}", self.source.as_str())?;
        writeln!(w, "mean_jaccard={}", self.normalizer.means[0])?;
        writeln!(w, "mean_euclid={}", self.normalizer.means[1])?;
        writeln!(w, "std_jaccard={}", self.normalizer.stds[0])?;
        writeln!(w, "std_euclid={}", self.normalizer.stds[1])?;
        writeln!(w, "w_jaccard={}", self.logistic.w[0])?;
        writeln!(w, "w_euclid={}", self.logistic.w[1])?;
        writeln!(w, "bias={}", self.logistic.b)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
        let mut kv = HashMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            kv.insert(k.to_owned(), v.to_owned());
        }
        if kv.get("model").map(String::as_str) != Some("baseline") {
            return Err(Error::Config(format!(
                "{} is not a baseline model file",
                path.display()
            )));
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("baseline model file lacks a numeric {k}")))
        };
        Ok(Self {
            normalizer: Normalizer {
                means: [num("mean_jaccard")?, num("mean_euclid")?],
                stds: [num("std_jaccard")?, num("std_euclid")?],
            },
            logistic: LogisticModel {
                w: [num("w_jaccard")?, num("w_euclid")?],
                b: num("bias")?,
            },
            source: TokenSource::parse(kv.get("token_source").map(String::as_str).unwrap_or("vocab"))?,
        })
    }
}
