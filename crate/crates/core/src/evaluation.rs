//! Ranking metrics: precision, recall, non-interpolated average precision,
//! precision-recall curves and the breakdown by description length.
//!
//! Scores are ranked descending with a stable sort, so ties keep input order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Number of length buckets: nine decades, the `[90, 100)` decade and the
/// exact-100 truncation pile.
pub const NUM_BUCKETS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub id_a: u64,
    pub id_b: u64,
    pub score: f64,
    pub label: u8,
    /// Mean content length of the two descriptions.
    pub avg_len: f64,
}

impl ScoredPair {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Indices sorted by score descending, ties in input order.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    idx
}

/// `Σ_n (R_n − R_{n−1}) P_n` over the ranked list.
pub fn average_precision_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut tp = 0usize;
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (n, &i) in rank_order(scores).iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            let r = tp as f64 / total_pos as f64;
            ap += (r - prev_r) * (tp as f64 / (n + 1) as f64);
            prev_r = r;
        }
    }
    Ok(ap)
}

pub fn average_precision(scored: &[ScoredPair]) -> Result<f64> {
    let (s, l) = unzip(scored);
    average_precision_scores(&s, &l)
}

fn unzip(scored: &[ScoredPair]) -> (Vec<f64>, Vec<u8>) {
    scored.iter().map(|p| (p.score, p.label)).unzip()
}

/// Confusion counts at a fixed threshold (positive iff `score > threshold`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdCounts {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Precision is 1 with no positive predictions; recall is 1 with no
/// positive labels.
pub fn precision_recall_at(scored: &[ScoredPair], threshold: f64) -> ThresholdCounts {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for p in scored {
        match (p.score > threshold, p.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    ThresholdCounts {
        threshold,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        tp,
        fp,
        fn_,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// Prefix length `n`, from 1.
    pub rank: usize,
    /// Score of the `n`-th ranked pair.
    pub threshold_score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per prefix of the ranking.
pub fn pr_curve(scored: &[ScoredPair]) -> Result<Vec<PrPoint>> {
    let total_pos = scored.iter().filter(|p| p.is_positive()).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let (s, _) = unzip(scored);
    let mut tp = 0;
    Ok(rank_order(&s)
        .iter()
        .enumerate()
        .map(|(n, &i)| {
            tp += usize::from(scored[i].is_positive());
            PrPoint {
                rank: n + 1,
                threshold_score: scored[i].score,
                precision: tp as f64 / (n + 1) as f64,
                recall: tp as f64 / total_pos as f64,
            }
        })
        .collect())
}

/// Average precision recomputed from curve points.
pub fn area_from_curve(points: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in points {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    ap
}

pub const PR_HEADER: &str = "rank,threshold_score,precision,recall";

pub fn write_pr_csv(mut w: impl Write, points: &[PrPoint]) -> Result<()> {
    writeln!(w, "{PR_HEADER}")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.rank, p.threshold_score, p.precision, p.recall)?;
    }
    Ok(())
}

/// `min(floor(avg_len / 10), 10)`.
pub fn bucket_index(avg_len: f64) -> usize {
    ((avg_len / 10.0).floor().max(0.0) as usize).min(NUM_BUCKETS - 1)
}

/// Inclusive-exclusive length range of a bucket; the last is exactly 100.
pub fn bucket_range(index: usize) -> (f64, f64) {
    if index + 1 == NUM_BUCKETS {
        (100.0, 100.0)
    } else {
        ((index * 10).max(1) as f64, ((index + 1) * 10) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketReport {
    pub index: usize,
    pub count: usize,
    pub positives: usize,
    /// `None` for buckets without positives.
    pub ap: Option<f64>,
}

impl BucketReport {
    pub fn positive_ratio(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.positives as f64 / self.count as f64
        }
    }
}

pub fn bucket_analysis(scored: &[ScoredPair]) -> Vec<BucketReport> {
    let mut groups: Vec<Vec<ScoredPair>> = vec![Vec::new(); NUM_BUCKETS];
    for p in scored {
        groups[bucket_index(p.avg_len)].push(*p);
    }
    groups
        .iter()
        .enumerate()
        .map(|(index, g)| BucketReport {
            index,
            count: g.len(),
            positives: g.iter().filter(|p| p.is_positive()).count(),
            ap: average_precision(g).ok(),
        })
        .collect()
}

/// Everything reported for one scored pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_pairs: usize,
    pub n_positive: usize,
    pub average_precision: f64,
    pub at_half: ThresholdCounts,
    pub pr: Vec<PrPoint>,
    pub buckets: Vec<BucketReport>,
    /// Digest of the (unordered) labelled pair set.
    pub pair_digest: String,
}

fn pair_digest(scored: &[ScoredPair]) -> String {
    let mut keys: Vec<(u64, u64, u8)> = scored
        .iter()
        .map(|p| (p.id_a.min(p.id_b), p.id_a.max(p.id_b), p.label))
        .collect();
    keys.sort_unstable();
    let mut h = Sha256::new();
    for (a, b, l) in keys {
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
        h.update([l]);
    }
    hex::encode(h.finalize())
}

impl EvalReport {
    pub fn build(scored: &[ScoredPair]) -> Result<Self> {
        let pr = pr_curve(scored)?;
        Ok(Self {
            n_pairs: scored.len(),
            n_positive: scored.iter().filter(|p| p.is_positive()).count(),
            average_precision: average_precision(scored)?,
            at_half: precision_recall_at(scored, 0.5),
            pr,
            buckets: bucket_analysis(scored),
            pair_digest: pair_digest(scored),
        })
    }

    /// `metric=value` lines.
    pub fn write_metrics(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "pairs={}", self.n_pairs)?;
        writeln!(w, "positives={}", self.n_positive)?;
        writeln!(w, "average_precision={}", self.average_precision)?;
        writeln!(w, "threshold={}", self.at_half.threshold)?;
        writeln!(w, "precision={}", self.at_half.precision)?;
        writeln!(w, "recall={}", self.at_half.recall)?;
        writeln!(w, "tp={}", self.at_half.tp)?;
        writeln!(w, "fp={}", self.at_half.fp)?;
        writeln!(w, "fn={}", self.at_half.fn_)?;
        writeln!(w, "pair_digest={}", self.pair_digest)?;
        Ok(())
    }

    pub fn write_buckets(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "bucket,min_len,max_len,count,positive_ratio,ap")?;
        for b in &self.buckets {
            let (lo, hi) = bucket_range(b.index);
            let ap = b.ap.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into());
            writeln!(w, "{},{},{},{},{},{}", b.index, lo, hi, b.count, b.positive_ratio(), ap)?;
        }
        Ok(())
    }

    /// Metrics, a blank line, then the bucket table.
    pub fn write_report(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_metrics(&mut w)?;
        writeln!(w)?;
        self.write_buckets(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_pr(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_pr_csv(&mut w, &self.pr)?;
        w.flush()?;
        Ok(())
    }
}

/// Side-by-side APs of several models on one pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub models: Vec<String>,
    /// `("overall" | "bucket_k", pair count, AP per model)`.
    pub rows: Vec<(String, usize, Vec<Option<f64>>)>,
}

pub fn compare_reports(reports: &[(&str, &EvalReport)]) -> Result<Comparison> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    if reports.iter().any(|(_, r)| r.pair_digest != first.pair_digest) {
        return Err(Error::PairSetMismatch);
    }
    let mut rows = vec![(
        "overall".to_owned(),
        first.n_pairs,
        reports.iter().map(|(_, r)| Some(r.average_precision)).collect(),
    )];
    for b in 0..NUM_BUCKETS {
        rows.push((
            format!("bucket_{b}"),
            first.buckets[b].count,
            reports.iter().map(|(_, r)| r.buckets[b].ap).collect(),
        ));
    }
    Ok(Comparison {
        models: reports.iter().map(|(n, _)| (*n).to_owned()).collect(),
        rows,
    })
}

impl Comparison {
    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "scope,count,{}", self.models.join(","))?;
        for (scope, count, aps) in &self.rows {
            let cells: Vec<String> = aps
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into()))
                .collect();
            writeln!(w, "{scope},{count},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Combined plot-ready curve: `model,rank,threshold_score,precision,recall`.
pub fn write_combined_pr(mut w: impl Write, reports: &[(&str, &EvalReport)]) -> Result<()> {
    writeln!(w, "model,{PR_HEADER}")?;
    for (name, r) in reports {
        for p in &r.pr {
            writeln!(
                w,
                "{name},{},{},{},{}",
                p.rank, p.threshold_score, p.precision, p.recall
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn pairs(scores: &[f64], labels: &[u8]) -> Vec<ScoredPair> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &label))| ScoredPair {
                id_a: i as u64,
                id_b: 1000 + i as u64,
                score,
                label,
                avg_len: 5.0,
            })
            .collect()
    }

    /// Definition-level AP: repeatedly pick the highest remaining score
    /// (earliest index on ties), recount TP over the prefix from scratch.
    fn oracle_ap(scores: &[f64], labels: &[u8]) -> f64 {
        let mut order = Vec::new();
        let mut used = vec![false; scores.len()];
        for _ in 0..scores.len() {
            let mut best = None;
            for i in 0..scores.len() {
                if !used[i] && best.is_none_or(|b: usize| scores[i] > scores[b]) {
                    best = Some(i);
                }
            }
            used[best.unwrap()] = true;
            order.push(best.unwrap());
        }
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let mut ap = 0.0;
        let mut prev_r = 0.0;
        for n in 1..=order.len() {
            let tp = order[..n].iter().filter(|&&i| labels[i] == 1).count() as f64;
            let fp = n as f64 - tp;
            let p = tp / (tp + fp);
            let r = tp / pos;
            ap += (r - prev_r) * p;
            prev_r = r;
        }
        ap
    }

    #[test]
    fn hand_cases() {
        assert_eq!(average_precision(&pairs(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&pairs(&[0.1, 0.9], &[1, 0])).unwrap(), 0.5);
        assert_eq!(average_precision(&pairs(&[0.3, 0.7, 0.1], &[1, 1, 1])).unwrap(), 1.0);
        assert!(matches!(
            average_precision(&pairs(&[0.3], &[0])),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(average_precision(&pairs(&[0.5, 0.5], &[1, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&pairs(&[0.5, 0.5], &[0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn threshold_counts() {
        let c = precision_recall_at(&pairs(&[0.9, 0.6], &[1, 0]), 0.5);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
        assert_eq!((c.precision, c.recall), (0.5, 1.0));
        let c = precision_recall_at(&pairs(&[0.9, 0.2], &[1, 0]), 0.5);
        assert_eq!((c.precision, c.recall), (1.0, 1.0));
        let c = precision_recall_at(&pairs(&[0.9, 0.2], &[1, 0]), 1.0);
        assert_eq!((c.precision, c.recall, c.tp), (1.0, 0.0, 0));
    }

    #[test]
    fn curve_matches_ap() {
        let mut rng = RngStream::new(2);
        let s: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let l: Vec<u8> = (0..50).map(|_| u8::from(rng.bernoulli(0.3))).collect();
        let p = pairs(&s, &l);
        let curve = pr_curve(&p).unwrap();
        assert_eq!(curve.len(), 50);
        assert!(curve.windows(2).all(|w| w[1].recall >= w[0].recall));
        assert_eq!(area_from_curve(&curve), average_precision(&p).unwrap());
    }

    #[test]
    fn bucket_boundaries() {
        for (len, b) in [(5.0, 0), (9.5, 0), (10.0, 1), (40.0, 4), (99.5, 9), (100.0, 10)] {
            assert_eq!(bucket_index(len), b, "{len}");
        }
        let mut p = pairs(&[0.9, 0.8, 0.1, 0.4], &[1, 0, 1, 0]);
        p[0].avg_len = 100.0;
        p[1].avg_len = 100.0;
        p[2].avg_len = 12.0;
        p[3].avg_len = 3.0;
        let b = bucket_analysis(&p);
        assert_eq!(b.len(), NUM_BUCKETS);
        assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), 4);
        assert_eq!(b[10].ap, Some(1.0));
        assert_eq!(b[1].ap, Some(1.0));
        assert_eq!(b[0].ap, None);
        assert_eq!(b[5].count, 0);
    }

    #[test]
    fn report_and_comparison() {
        let p = pairs(&[0.9, 0.2, 0.6, 0.4], &[1, 0, 0, 1]);
        let r = EvalReport::build(&p).unwrap();
        let c = compare_reports(&[("a", &r), ("b", &r)]).unwrap();
        assert!(c.rows.iter().all(|(_, _, aps)| aps[0] == aps[1]));
        let mut flipped = p.clone();
        flipped
            .iter_mut()
            .for_each(|x| std::mem::swap(&mut x.id_a, &mut x.id_b));
        flipped.reverse();
        let r2 = EvalReport::build(&flipped).unwrap();
        assert_eq!(r.pair_digest, r2.pair_digest);
        let mut other = p.clone();
        other[0].id_b = 77;
        let r3 = EvalReport::build(&other).unwrap();
        assert!(matches!(
            compare_reports(&[("a", &r), ("c", &r3)]),
            Err(Error::PairSetMismatch)
        ));
        let mut buf = Vec::new();
        r.write_metrics(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("average_precision=0.8333333333333333"));
    }

    #[test]
    fn shuffled_labels_concentrate_near_positive_rate() {
        let mut rng = RngStream::new(11);
        let n = 400;
        let scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < 120)).collect();
        let aps: Vec<f64> = (0..1000)
            .map(|_| {
                rng.shuffle(&mut labels);
                average_precision_scores(&scores, &labels).unwrap()
            })
            .collect();
        let mean = aps.iter().sum::<f64>() / aps.len() as f64;
        let sd = (aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / aps.len() as f64).sqrt();
        assert!((mean - 0.3).abs() < 0.02, "mean {mean}");
        let outside = aps.iter().filter(|a| (**a - mean).abs() > 3.0 * sd).count();
        assert!(outside < 10, "{outside}");
    }

    proptest! {
        #[test]
        fn matches_oracle(raw in proptest::collection::vec((1u8..10, 0u8..2), 1..13)) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| f64::from(*v) / 10.0).collect();
            let l: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(l.contains(&1));
            let ap = average_precision_scores(&s, &l).unwrap();
            prop_assert!((ap - oracle_ap(&s, &l)).abs() <= 1e-9);
        }

        #[test]
        fn monotone_transform_invariant(raw in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..30)) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| *v).collect();
            let l: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(l.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 2.0).collect();
            prop_assert_eq!(average_precision_scores(&s, &l).unwrap(), average_precision_scores(&t, &l).unwrap());
        }
    }
}
