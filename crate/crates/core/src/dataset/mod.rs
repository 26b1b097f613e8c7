//! Item/pair ingestion, text preprocessing, vocabulary, splitting and
//! synthetic corpora.

mod align;
mod io;
mod record;
mod split;
mod synth;
mod text;
mod vocab;

pub use align::{filter_and_align, prepare_corpus, EncodeOptions, FeatureIndex, FilterStats, PreparedCorpus};
pub use io::{
    read_items, read_items_from, read_pairs, read_pairs_from, read_records, write_items, write_items_to, write_pairs,
    write_pairs_to, write_records, PairExample, RawItem,
};
pub use record::{decode_tokens, encode_description, Record, DEFAULT_MAX_LEN};
pub use split::{positive_ratio, split_dataset, DatasetSplit, DEFAULT_RATIOS, MIN_SPLIT_PAIRS};
pub use synth::{generate_synthetic_corpus, pseudo_word, InteractionMode, SynthConfig, SynthCorpus};
pub use text::{normalize_text, NormalizerHook};
pub use vocab::{is_special, Vocabulary, DEFAULT_VOCAB_SIZE, EOS, NUM_SPECIALS, PAD, SOS, SPECIAL_TOKENS, UNK};
