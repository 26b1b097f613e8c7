//! Stratified train/validation/test split.

use super::io::PairExample;
use crate::rng::RngStream;
use crate::{Error, Result};

/// Default 80/10/10 proportions.
pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];
/// Smallest corpus that can be split.
pub const MIN_SPLIT_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<PairExample>,
    pub validation: Vec<PairExample>,
    pub test: Vec<PairExample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// The three parts with their conventional names.
    pub fn parts(&self) -> [(&'static str, &[PairExample]); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }
}

pub fn positive_ratio(pairs: &[PairExample]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|p| p.is_positive()).count() as f64 / pairs.len() as f64
}

/// Shuffles each class with the seed, interleaves the two classes evenly
/// (every prefix holds its proportional share of positives, ±1) and cuts the
/// sequence at the cumulative ratios. Each part therefore keeps the corpus
/// class balance.
pub fn split_dataset(pairs: &[PairExample], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let n = pairs.len();
    if n < MIN_SPLIT_PAIRS {
        return Err(Error::SplitTooSmall(n));
    }
    let mut rng = RngStream::new(seed).fork("split");
    let (mut pos, mut neg): (Vec<PairExample>, Vec<PairExample>) = pairs.iter().partition(|p| p.is_positive());
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);

    let n_pos = pos.len();
    let mut pos = pos.into_iter();
    let mut neg = neg.into_iter();
    let mut merged = Vec::with_capacity(n);
    let mut taken_pos = 0;
    for i in 0..n {
        let due = (i + 1) * n_pos / n;
        if due > taken_pos {
            taken_pos += 1;
            merged.push(pos.next().expect("positive count"));
        } else {
            merged.push(neg.next().expect("negative count"));
        }
    }

    let cut1 = (ratios[0] * n as f64).round() as usize;
    let cut2 = ((ratios[0] + ratios[1]) * n as f64).round() as usize;
    let test = merged.split_off(cut2.min(n));
    let validation = merged.split_off(cut1.min(cut2));
    Ok(DatasetSplit {
        train: merged,
        validation,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn corpus(n: usize, n_pos: usize) -> Vec<PairExample> {
        (0..n)
            .map(|i| PairExample::new(i as u64, (i + n) as u64, u8::from(i < n_pos)))
            .collect()
    }

    #[test]
    fn thousand_pairs_stratified() {
        let s = split_dataset(&corpus(1000, 330), DEFAULT_RATIOS, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (800, 100, 100));
        let test_pos = s.test.iter().filter(|p| p.is_positive()).count();
        assert!((32..=34).contains(&test_pos), "{test_pos}");
    }

    #[test]
    fn deterministic() {
        let c = corpus(200, 70);
        assert_eq!(
            split_dataset(&c, DEFAULT_RATIOS, 9).unwrap(),
            split_dataset(&c, DEFAULT_RATIOS, 9).unwrap()
        );
        assert_ne!(
            split_dataset(&c, DEFAULT_RATIOS, 9).unwrap(),
            split_dataset(&c, DEFAULT_RATIOS, 10).unwrap()
        );
    }

    #[test]
    fn bad_ratios_and_small_corpus() {
        assert!(matches!(
            split_dataset(&corpus(100, 10), [0.5, 0.5, 0.1], 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            split_dataset(&corpus(9, 3), DEFAULT_RATIOS, 0),
            Err(Error::SplitTooSmall(9))
        ));
    }

    proptest! {
        #[test]
        fn split_invariants(n in 10usize..400, pos_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let n_pos = (n as f64 * pos_frac) as usize;
            let c = corpus(n, n_pos);
            let s = split_dataset(&c, DEFAULT_RATIOS, seed).unwrap();
            prop_assert_eq!(s.total(), n);
            let ids: HashSet<u64> = s.parts().iter().flat_map(|(_, p)| p.iter().map(|x| x.id_a)).collect();
            prop_assert_eq!(ids.len(), n);
            let full = positive_ratio(&c);
            for ((_, part), r) in s.parts().iter().zip(DEFAULT_RATIOS) {
                prop_assert!((part.len() as f64 - r * n as f64).abs() <= 1.0);
                if !part.is_empty() {
                    let dev = (positive_ratio(part) - full).abs();
                    prop_assert!(dev <= 1.0 / part.len() as f64 + 0.01, "dev {}", dev);
                }
            }
        }
    }
}
