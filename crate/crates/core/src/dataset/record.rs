use super::vocab::{is_special, Vocabulary, EOS, PAD, SOS, UNK};
use crate::{Error, Result};

/// Default number of description words kept.
pub const DEFAULT_MAX_LEN: usize = 100;

/// A preprocessed item: fixed-length token ids plus the key of its frozen
/// representative image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub item_id: u64,
    /// `[SOS, w_1 .. w_n, EOS, PAD ..]`, length `max_len + 2`.
    pub token_ids: Vec<u32>,
    /// Number of word tokens `n` (specials excluded), in `1..=max_len`.
    pub content_length: usize,
    pub feature_key: u64,
    /// Normalized description, kept for raw-token similarity features.
    pub text: String,
}

impl Record {
    /// Word token ids without SOS/EOS/PAD.
    pub fn content(&self) -> &[u32] {
        &self.token_ids[1..1 + self.content_length]
    }

    /// Checks the positional layout: SOS first, exactly one EOS right after
    /// the content, PAD afterwards.
    pub fn check_layout(&self) -> bool {
        let n = self.content_length;
        self.token_ids.len() >= n + 2
            && n >= 1
            && self.token_ids[0] == SOS
            && self.token_ids[1..=n].iter().all(|&t| t != PAD && t != SOS && t != EOS)
            && self.token_ids[n + 1] == EOS
            && self.token_ids[n + 2..].iter().all(|&t| t == PAD)
    }
}

/// Encodes a normalized description: first `max_len` words, unknown words
/// to UNK, wrapped in SOS/EOS and padded to `max_len + 2`. Returns the ids
/// and the content length.
pub fn encode_description(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<(Vec<u32>, usize)> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut ids = Vec::with_capacity(max_len + 2);
    ids.push(SOS);
    ids.extend(
        text.split(' ')
            .filter(|t| !t.is_empty())
            .take(max_len)
            .map(|t| vocab.index_of(t)),
    );
    let n = ids.len() - 1;
    if n == 0 {
        return Err(Error::FilteredOut);
    }
    ids.push(EOS);
    ids.resize(max_len + 2, PAD);
    Ok((ids, n))
}

/// Inverse of [`encode_description`] up to truncation and OOV words, which
/// come back as `<unk>`.
pub fn decode_tokens(ids: &[u32], vocab: &Vocabulary) -> String {
    ids.iter()
        .filter(|&&t| !is_special(t) || t == UNK)
        .map(|&t| vocab.token(t).unwrap_or("<unk>"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_vocab() -> Vocabulary {
        Vocabulary::build(&["a a b"], 10)
    }

    #[test]
    fn hand_encoding() {
        let v = ab_vocab();
        assert_eq!(v.get("a"), Some(4));
        assert_eq!(v.get("b"), Some(5));
        let (ids, n) = encode_description("a b", &v, 4).unwrap();
        assert_eq!(ids, vec![1, 4, 5, 2, 0, 0]);
        assert_eq!(n, 2);
    }

    #[test]
    fn unknown_word() {
        let (ids, n) = encode_description("zzz", &ab_vocab(), 100).unwrap();
        assert_eq!(&ids[..4], &[1, 3, 2, 0]);
        assert_eq!(ids.len(), 102);
        assert_eq!(n, 1);
    }

    #[test]
    fn truncates_to_max_len() {
        let text = vec!["a"; 150].join(" ");
        let (ids, n) = encode_description(&text, &ab_vocab(), 100).unwrap();
        assert_eq!(n, 100);
        assert_eq!(ids.len(), 102);
        assert_eq!(ids[101], EOS);
    }

    #[test]
    fn empty_is_filtered() {
        assert!(matches!(
            encode_description("", &ab_vocab(), 5),
            Err(Error::FilteredOut)
        ));
    }

    #[test]
    fn decode_then_encode_round_trip() {
        let v = ab_vocab();
        let (ids, _) = encode_description("b zz a a", &v, 8).unwrap();
        let text = decode_tokens(&ids, &v);
        assert_eq!(text, "b <unk> a a");
        assert_eq!(encode_description(&text, &v, 8).unwrap().0, ids);
    }
}
