//! Turning raw items and pairs into encoded records.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::io::{PairExample, RawItem};
use super::record::{encode_description, Record};
use super::text::{normalize_text, NormalizerHook};
use super::vocab::Vocabulary;
use crate::features::{select_representative_image, FeatureStore};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Anything that can tell whether an image id has usable features.
pub trait FeatureIndex {
    fn has_features(&self, image_id: u64) -> bool;
}

impl FeatureIndex for FeatureStore {
    fn has_features(&self, image_id: u64) -> bool {
        self.contains(image_id)
    }
}

impl FeatureIndex for HashSet<u64> {
    fn has_features(&self, image_id: u64) -> bool {
        self.contains(&image_id)
    }
}

impl FeatureIndex for BTreeSet<u64> {
    fn has_features(&self, image_id: u64) -> bool {
        self.contains(&image_id)
    }
}

/// Counts gathered while filtering.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub items_in: usize,
    pub dropped_empty: usize,
    pub dropped_no_features: usize,
    pub pairs_in: usize,
    pub pairs_dropped: usize,
}

/// Settings shared by [`filter_and_align`] and [`prepare_corpus`].
#[derive(Clone, Copy)]
pub struct EncodeOptions<'a> {
    pub max_len: usize,
    /// Seeds the per-item representative image choice.
    pub seed: u64,
    pub hook: Option<&'a dyn NormalizerHook>,
}

/// Encodes every item that has a non-empty normalized description and at
/// least one image with features, then drops pairs touching a removed (or
/// unknown) item. Record order follows item order; pair order is kept.
pub fn filter_and_align(
    items: &[RawItem],
    pairs: &[PairExample],
    features: &dyn FeatureIndex,
    vocab: &Vocabulary,
    opts: &EncodeOptions<'_>,
) -> Result<(Vec<Record>, Vec<PairExample>, FilterStats)> {
    let image_rng = RngStream::new(opts.seed).fork("image");
    let mut stats = FilterStats {
        items_in: items.len(),
        pairs_in: pairs.len(),
        ..Default::default()
    };
    let mut seen = HashSet::with_capacity(items.len());
    let mut records = Vec::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.item_id) {
            return Err(Error::DuplicateId(item.item_id));
        }
        let text = normalize_text(&item.description, opts.hook);
        let (token_ids, content_length) = match encode_description(&text, vocab, opts.max_len) {
            Ok(enc) => enc,
            Err(Error::FilteredOut) => {
                stats.dropped_empty += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let usable: Vec<u64> = item
            .image_ids
            .iter()
            .copied()
            .filter(|&id| features.has_features(id))
            .collect();
        let seed = image_rng.fork_indexed("item", item.item_id).seed();
        let feature_key = match select_representative_image(&usable, seed) {
            Ok(id) => id,
            Err(Error::NoImages) => {
                stats.dropped_no_features += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        records.push(Record {
            item_id: item.item_id,
            token_ids,
            content_length,
            feature_key,
            text,
        });
    }
    let alive: HashSet<u64> = records.iter().map(|r| r.item_id).collect();
    let kept: Vec<PairExample> = pairs
        .iter()
        .filter(|p| alive.contains(&p.id_a) && alive.contains(&p.id_b))
        .copied()
        .collect();
    stats.pairs_dropped = pairs.len() - kept.len();
    Ok((records, kept, stats))
}

/// Output of the full preprocessing pipeline.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub records: Vec<Record>,
    pub pairs: Vec<PairExample>,
    pub stats: FilterStats,
}

impl PreparedCorpus {
    /// Lookup table item id → record.
    pub fn record_index(&self) -> HashMap<u64, &Record> {
        self.records.iter().map(|r| (r.item_id, r)).collect()
    }
}

/// normalize → vocabulary → encode → filter. The vocabulary is built from
/// every normalized description in the items table.
pub fn prepare_corpus(
    items: &[RawItem],
    pairs: &[PairExample],
    features: &dyn FeatureIndex,
    vocab_size: usize,
    opts: &EncodeOptions<'_>,
) -> Result<PreparedCorpus> {
    if vocab_size == 0 {
        return Err(Error::Config("vocabulary size must be at least 1".into()));
    }
    let normalized: Vec<String> = items
        .iter()
        .map(|it| normalize_text(&it.description, opts.hook))
        .collect();
    let vocab = Vocabulary::build(&normalized, vocab_size);
    let (records, pairs, stats) = filter_and_align(items, pairs, features, &vocab, opts)?;
    Ok(PreparedCorpus {
        vocab,
        records,
        pairs,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: u64, desc: &str, images: &[u64]) -> RawItem {
        RawItem {
            item_id: id,
            description: desc.into(),
            image_ids: images.to_vec(),
        }
    }

    fn opts() -> EncodeOptions<'static> {
        EncodeOptions {
            max_len: 10,
            seed: 7,
            hook: None,
        }
    }

    #[test]
    fn missing_features_drop_item_and_pairs() {
        let items = [item(1, "a", &[10]), item(2, "b", &[20]), item(3, "c", &[30])];
        let pairs = [PairExample::new(1, 2, 1), PairExample::new(2, 3, 0)];
        let feats: HashSet<u64> = [10, 20].into();
        let vocab = Vocabulary::build(&["a b c"], 10);
        let (records, kept, stats) = filter_and_align(&items, &pairs, &feats, &vocab, &opts()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(kept, vec![PairExample::new(1, 2, 1)]);
        assert_eq!(stats.dropped_no_features, 1);
        assert_eq!(stats.pairs_dropped, 1);
    }

    #[test]
    fn empty_description_dropped() {
        let items = [item(1, "a", &[10]), item(2, "!!! ...", &[20])];
        let pairs = [PairExample::new(1, 2, 0)];
        let feats: HashSet<u64> = [10, 20].into();
        let vocab = Vocabulary::build(&["a"], 10);
        let (records, kept, stats) = filter_and_align(&items, &pairs, &feats, &vocab, &opts()).unwrap();
        assert_eq!(records.len(), 1);
        assert!(kept.is_empty());
        assert_eq!(stats.dropped_empty, 1);
    }

    #[test]
    fn all_valid_keeps_pairs() {
        let items = [item(1, "a b", &[10, 11]), item(2, "b", &[20])];
        let pairs = [PairExample::new(1, 2, 0), PairExample::new(2, 1, 1)];
        let feats: HashSet<u64> = [10, 11, 20].into();
        let corpus = prepare_corpus(&items, &pairs, &feats, 100, &opts()).unwrap();
        assert_eq!(corpus.pairs, pairs.to_vec());
        assert!(corpus.records.iter().all(Record::check_layout));
    }

    #[test]
    fn representative_image_is_usable_and_frozen() {
        let items = [item(5, "x", &[1, 2, 3, 4])];
        let feats: HashSet<u64> = [2, 4].into();
        let vocab = Vocabulary::build(&["x"], 10);
        let a = filter_and_align(&items, &[], &feats, &vocab, &opts()).unwrap().0;
        let b = filter_and_align(&items, &[], &feats, &vocab, &opts()).unwrap().0;
        assert!([2, 4].contains(&a[0].feature_key));
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_item_rejected() {
        let items = [item(1, "a", &[1]), item(1, "b", &[1])];
        let feats: HashSet<u64> = [1].into();
        let vocab = Vocabulary::build(&["a"], 10);
        assert!(matches!(
            filter_and_align(&items, &[], &feats, &vocab, &opts()),
            Err(Error::DuplicateId(1))
        ));
    }
}
