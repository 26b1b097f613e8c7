//! Synthetic corpora in the ingestion formats.
//!
//! Two generators:
//!
//! * [`InteractionMode::Shared`]: items are grouped into entities. Items of
//!   one entity share a topic (a small word pool their descriptions draw
//!   from) and a latent image vector, and every within-entity pair is a
//!   duplicate. Text overlap and image distance both point the same way.
//! * [`InteractionMode::Xor`]: every item carries a text sign (which of two
//!   word pools it draws from) and an image sign (which side of a fixed
//!   direction its features lie on). A pair is a duplicate iff the two items
//!   agree on the *product* of their signs. Duplicates are then either
//!   (high overlap, small distance) or (low overlap, large distance), and
//!   non-duplicates the other two corners, which no linear function of
//!   (Jaccard, Euclidean) separates. A per-record multiplicative fusion of
//!   text and image encodings can represent the sign product directly.

use std::collections::HashSet;
use std::path::Path;

use super::io::{write_items, write_pairs, PairExample, RawItem};
use crate::features::{FeatureKind, FeatureStore};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionMode {
    Shared,
    Xor,
}

impl InteractionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InteractionMode::Shared => "shared",
            InteractionMode::Xor => "xor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(InteractionMode::Shared),
            "xor" => Ok(InteractionMode::Xor),
            other => Err(Error::Config(format!("unknown interaction mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_pairs: usize,
    /// Fraction of duplicate pairs; exactly `round(n_pairs * ratio)` are
    /// generated.
    pub positive_ratio: f64,
    /// Size of the pseudo-word lexicon.
    pub vocab_size: usize,
    /// Words per topic pool.
    pub topic_words: usize,
    /// Probability that a description word comes from the item's pool
    /// rather than the whole lexicon.
    pub topic_weight: f64,
    pub min_words: usize,
    pub max_words: usize,
    /// Each item gets `1..=max_images` images (at most 16).
    pub max_images: usize,
    pub feature_dim: usize,
    /// `(R, D_r)` of an optional regional store.
    pub regions: Option<(usize, usize)>,
    /// Standard deviation of per-image feature noise.
    pub feature_noise: f64,
    pub mode: InteractionMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_pairs: 5000,
            positive_ratio: 0.33,
            vocab_size: 500,
            topic_words: 10,
            topic_weight: 0.7,
            min_words: 4,
            max_words: 30,
            max_images: 3,
            feature_dim: 64,
            regions: None,
            feature_noise: 0.5,
            mode: InteractionMode::Shared,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return bad("positive_ratio must lie in (0, 1)");
        }
        if self.n_items < 2 {
            return bad("n_items must be at least 2");
        }
        if self.min_words == 0 || self.max_words < self.min_words {
            return bad("word counts must satisfy 1 <= min_words <= max_words");
        }
        if self.max_images == 0 || self.max_images > 16 {
            return bad("max_images must lie in 1..=16");
        }
        if self.feature_dim == 0 || matches!(self.regions, Some((r, d)) if r == 0 || d == 0) {
            return bad("feature dimensions must be at least 1");
        }
        if self.topic_words == 0 || self.vocab_size < 2 * self.topic_words + 1 {
            return bad("vocab_size must exceed twice topic_words");
        }
        if !(0.0..=1.0).contains(&self.topic_weight) || self.feature_noise.is_nan() || self.feature_noise < 0.0 {
            return bad("topic_weight must lie in [0, 1] and feature_noise be non-negative");
        }
        let all_pairs = self.n_items * (self.n_items - 1) / 2;
        if self.n_pairs > all_pairs {
            return Err(Error::Config(format!(
                "n_pairs {} exceeds the {all_pairs} distinct item pairs",
                self.n_pairs
            )));
        }
        Ok(())
    }
}

/// Generated corpus: items, labelled pairs and feature stores keyed by
/// image id.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub items: Vec<RawItem>,
    pub pairs: Vec<PairExample>,
    pub global: FeatureStore,
    pub regional: Option<FeatureStore>,
}

impl SynthCorpus {
    /// Writes `items.csv`, `pairs.csv`, `features.bin` and, when present,
    /// `regions.bin`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_items(dir.join("items.csv"), &self.items)?;
        write_pairs(dir.join("pairs.csv"), &self.pairs)?;
        self.global.save(dir.join("features.bin"))?;
        if let Some(r) = &self.regional {
            r.save(dir.join("regions.bin"))?;
        }
        Ok(())
    }
}

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Distinct pronounceable lowercase word for every index (at least two
/// syllables). Letters only, so normalization leaves it intact.
pub fn pseudo_word(mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut s = String::new();
    let mut k = 0;
    loop {
        let syl = i % base;
        i /= base;
        s.push(CONSONANTS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
        k += 1;
        if i == 0 && k >= 2 {
            return s;
        }
    }
}

struct Latent {
    /// Word pool index into the lexicon.
    pool: Vec<usize>,
    global: Vec<f64>,
    regional: Option<Vec<f64>>,
}

/// Generates a corpus; identical `(config, seed)` produce identical output.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    config.validate()?;
    let root = RngStream::new(seed).fork("synth");
    let n_pos = (config.n_pairs as f64 * config.positive_ratio).round() as usize;
    let n_neg = config.n_pairs - n_pos;

    // Latent assignment: group label per item plus the latent per group.
    let mut rng = root.fork("latent");
    let (groups, latents, pairs) = match config.mode {
        InteractionMode::Shared => {
            let mut group_of = Vec::with_capacity(config.n_items);
            let mut g = 0;
            while group_of.len() < config.n_items {
                let size = 2 + rng.index(3);
                for _ in 0..size.min(config.n_items - group_of.len()) {
                    group_of.push(g);
                }
                g += 1;
            }
            let latents: Vec<Latent> = (0..g)
                .map(|_| {
                    let pool = (0..config.topic_words).map(|_| rng.index(config.vocab_size)).collect();
                    let global = (0..config.feature_dim).map(|_| rng.normal()).collect();
                    let regional = config.regions.map(|(_, d)| (0..d).map(|_| rng.normal()).collect());
                    Latent { pool, global, regional }
                })
                .collect();
            let pairs = shared_pairs(&group_of, n_pos, n_neg, &mut root.fork("pairs"))?;
            (group_of, latents, pairs)
        }
        InteractionMode::Xor => {
            // Group = 2 * text_sign + image_sign.
            let group_of: Vec<usize> = (0..config.n_items).map(|_| rng.index(4)).collect();
            let direction: Vec<f64> = (0..config.feature_dim)
                .map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 })
                .collect();
            let region_dir: Option<Vec<f64>> = config
                .regions
                .map(|(_, d)| (0..d).map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect());
            let latents = (0..4)
                .map(|g| {
                    let text_sign = g / 2;
                    let sign = if g % 2 == 1 { 1.0 } else { -1.0 };
                    let start = text_sign * config.topic_words;
                    Latent {
                        pool: (start..start + config.topic_words).collect(),
                        global: direction.iter().map(|v| v * sign).collect(),
                        regional: region_dir.as_ref().map(|d| d.iter().map(|v| v * sign).collect()),
                    }
                })
                .collect();
            let pairs = xor_pairs(&group_of, n_pos, n_neg, &mut root.fork("pairs"))?;
            (group_of, latents, pairs)
        }
    };

    let mut text_rng = root.fork("text");
    let mut image_rng = root.fork("images");
    let mut items = Vec::with_capacity(config.n_items);
    let mut global = Vec::new();
    let mut regional = Vec::new();
    // Xor noise words come from outside both sign pools.
    let noise_start = match config.mode {
        InteractionMode::Shared => 0,
        InteractionMode::Xor => 2 * config.topic_words,
    };
    for (i, &g) in groups.iter().enumerate() {
        let item_id = i as u64 + 1;
        let latent = &latents[g];
        let n_words = config.min_words + text_rng.index(config.max_words - config.min_words + 1);
        let words: Vec<String> = (0..n_words)
            .map(|_| {
                let w = if text_rng.bernoulli(config.topic_weight) {
                    latent.pool[text_rng.index(latent.pool.len())]
                } else {
                    noise_start + text_rng.index(config.vocab_size - noise_start)
                };
                pseudo_word(w)
            })
            .collect();
        let n_images = 1 + image_rng.index(config.max_images);
        let image_ids: Vec<u64> = (0..n_images as u64).map(|j| item_id * 16 + j).collect();
        for &img in &image_ids {
            let v = latent
                .global
                .iter()
                .map(|&m| (m + config.feature_noise * image_rng.normal()) as f32)
                .collect();
            global.push((img, v));
            if let (Some((r, d)), Some(lat)) = (config.regions, &latent.regional) {
                let hot = image_rng.index(r);
                let mut m = Vec::with_capacity(r * d);
                for region in 0..r {
                    for &l in lat.iter().take(d) {
                        let signal = if region == hot { l } else { 0.0 };
                        m.push((signal + config.feature_noise * image_rng.normal()) as f32);
                    }
                }
                regional.push((img, m));
            }
        }
        items.push(RawItem {
            item_id,
            description: capitalize(&words.join(" ")),
            image_ids,
        });
    }

    let global = FeatureStore::from_entries(FeatureKind::Global, 1, config.feature_dim, global)?;
    let regional = match config.regions {
        Some((r, d)) => Some(FeatureStore::from_entries(FeatureKind::Regional, r, d, regional)?),
        None => None,
    };
    Ok(SynthCorpus {
        items,
        pairs,
        global,
        regional,
    })
}

// Upper-case first letter so normalization has something to do.
fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn to_examples(raw: Vec<(usize, usize, u8)>, rng: &mut RngStream) -> Vec<PairExample> {
    let mut out: Vec<PairExample> = raw
        .into_iter()
        .map(|(a, b, label)| {
            let (a, b) = if rng.bernoulli(0.5) { (a, b) } else { (b, a) };
            PairExample::new(a as u64 + 1, b as u64 + 1, label)
        })
        .collect();
    rng.shuffle(&mut out);
    out
}

/// Draws `need` distinct pairs `(a, b)` with `a` from `left` and `b` from
/// `right` (or both from `left` when `right` is `None`), avoiding `used`.
fn draw_from_cell(
    left: &[usize],
    right: Option<&[usize]>,
    need: usize,
    used: &mut HashSet<(usize, usize)>,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    let avail = match right {
        None => left.len() * left.len().saturating_sub(1) / 2,
        Some(r) => left.len() * r.len(),
    };
    if need > avail {
        return Err(Error::Config(format!(
            "need {need} pairs of one kind but only {avail} distinct pairs exist"
        )));
    }
    let mut out = Vec::with_capacity(need);
    if need * 2 > avail {
        let mut all = Vec::with_capacity(avail);
        match right {
            None => {
                for i in 0..left.len() {
                    for j in i + 1..left.len() {
                        all.push(pair_key(left[i], left[j]));
                    }
                }
            }
            Some(r) => {
                for &a in left {
                    for &b in r {
                        all.push(pair_key(a, b));
                    }
                }
            }
        }
        rng.shuffle(&mut all);
        for p in all {
            if out.len() == need {
                break;
            }
            if used.insert(p) {
                out.push(p);
            }
        }
        if out.len() < need {
            return Err(Error::Config("not enough distinct pairs".into()));
        }
        return Ok(out);
    }
    while out.len() < need {
        let a = left[rng.index(left.len())];
        let b = match right {
            Some(r) => r[rng.index(r.len())],
            None => left[rng.index(left.len())],
        };
        if a == b {
            continue;
        }
        let p = pair_key(a, b);
        if used.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn shared_pairs(group_of: &[usize], n_pos: usize, n_neg: usize, rng: &mut RngStream) -> Result<Vec<PairExample>> {
    let n_groups = group_of.iter().max().map_or(0, |g| g + 1);
    let mut members = vec![Vec::new(); n_groups];
    for (i, &g) in group_of.iter().enumerate() {
        members[g].push(i);
    }
    let mut positives: Vec<(usize, usize)> = members
        .iter()
        .flat_map(|m| (0..m.len()).flat_map(move |i| (i + 1..m.len()).map(move |j| (m[i], m[j]))))
        .collect();
    if positives.len() < n_pos {
        return Err(Error::Config(format!(
            "{n_pos} duplicate pairs requested but only {} exist; raise n_items",
            positives.len()
        )));
    }
    rng.shuffle(&mut positives);
    positives.truncate(n_pos);

    let n = group_of.len();
    let total_neg = n * (n - 1) / 2 - members.iter().map(|m| m.len() * (m.len() - 1) / 2).sum::<usize>();
    if n_neg > total_neg {
        return Err(Error::Config(format!(
            "{n_neg} non-duplicate pairs requested but only {total_neg} exist"
        )));
    }
    let mut used: HashSet<(usize, usize)> = HashSet::with_capacity(n_neg);
    let mut negatives = Vec::with_capacity(n_neg);
    if n_neg * 2 > total_neg {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| group_of[a] != group_of[b])
            .collect();
        rng.shuffle(&mut all);
        all.truncate(n_neg);
        negatives = all;
    } else {
        while negatives.len() < n_neg {
            let (a, b) = (rng.index(n), rng.index(n));
            if group_of[a] != group_of[b] && used.insert(pair_key(a, b)) {
                negatives.push(pair_key(a, b));
            }
        }
    }
    let raw = positives
        .into_iter()
        .map(|(a, b)| (a, b, 1))
        .chain(negatives.into_iter().map(|(a, b)| (a, b, 0)))
        .collect();
    Ok(to_examples(raw, rng))
}

fn xor_pairs(group_of: &[usize], n_pos: usize, n_neg: usize, rng: &mut RngStream) -> Result<Vec<PairExample>> {
    let mut members = vec![Vec::new(); 4];
    for (i, &g) in group_of.iter().enumerate() {
        members[g].push(i);
    }
    // Groups are 2*text + image: 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1).
    // Duplicates: same text & same image, or both differ.
    // Non-duplicates: exactly one of the two differs.
    let mut used = HashSet::new();
    let mut raw = Vec::with_capacity(n_pos + n_neg);
    let mut take =
        |cells: &[(usize, Option<usize>)], need: usize, label: u8, raw: &mut Vec<(usize, usize, u8)>| -> Result<()> {
            let k = cells.len();
            for (c, &(l, r)) in cells.iter().enumerate() {
                let share = need / k + usize::from(c < need % k);
                let got = draw_from_cell(&members[l], r.map(|r| members[r].as_slice()), share, &mut used, rng)?;
                raw.extend(got.into_iter().map(|(a, b)| (a, b, label)));
            }
            Ok(())
        };
    // Each of the four (text agrees?, image agrees?) corners gets an equal
    // share of its class, so the corners mirror each other.
    let same_same = n_pos.div_ceil(2);
    take(&[(0, None), (1, None), (2, None), (3, None)], same_same, 1, &mut raw)?;
    take(&[(0, Some(3)), (1, Some(2))], n_pos - same_same, 1, &mut raw)?;
    let text_same = n_neg.div_ceil(2);
    take(&[(0, Some(1)), (2, Some(3))], text_same, 0, &mut raw)?;
    take(&[(0, Some(2)), (1, Some(3))], n_neg - text_same, 0, &mut raw)?;
    Ok(to_examples(raw, rng))
}
