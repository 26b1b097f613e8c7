//! Mini-batch training with early stopping, checkpoints, grid search and
//! multi-seed reruns.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::autodiff::{clip_grad_norm, zero_grads, Graph, Mode, Optimizer, OptimizerKind, ParamStore, Shape, BCE_EPS};
use crate::dataset::{PairExample, Record};
use crate::encoders::PretrainedEmbeddings;
use crate::evaluation::{average_precision_scores, ScoredPair};
use crate::features::FeatureStore;
use crate::rng::RngStream;
use crate::siamese::{MatcherModel, ModelConfig};
use crate::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_MAX_EPOCHS: usize = 30;
pub const DEFAULT_PATIENCE: usize = 5;
pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub optimizer: OptimizerKind,
    /// Joint gradient-norm ceiling, if any.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: Some(DEFAULT_PATIENCE),
            optimizer: OptimizerKind::Sgd,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == Some(0) {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be at least 1".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Model keys plus the training keys.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = self.model.to_kv();
        m.insert("lr".into(), self.lr.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("max_epochs".into(), self.max_epochs.to_string());
        m.insert(
            "patience".into(),
            self.patience.map_or_else(|| "none".into(), |p| p.to_string()),
        );
        m.insert("optimizer".into(), self.optimizer.as_str().into());
        m.insert(
            "clip_norm".into(),
            self.clip_norm.map_or_else(|| "none".into(), |c| c.to_string()),
        );
        m.insert("seed".into(), self.seed.to_string());
        m
    }

    pub fn apply_kv<'a>(&mut self, kv: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {k}")))
        }
        let mut model_kv = Vec::new();
        for (k, v) in kv {
            match k {
                "lr" => self.lr = num(k, v)?,
                "batch_size" => self.batch_size = num(k, v)?,
                "max_epochs" => self.max_epochs = num(k, v)?,
                "patience" => self.patience = if v == "none" { None } else { Some(num(k, v)?) },
                "optimizer" => {
                    self.optimizer =
                        OptimizerKind::parse(v).ok_or_else(|| Error::Config(format!("unknown optimizer {v:?}")))?
                }
                "clip_norm" => self.clip_norm = if v == "none" { None } else { Some(num(k, v)?) },
                "seed" => self.seed = num(k, v)?,
                _ => model_kv.push((k, v)),
            }
        }
        self.model.apply_kv(model_kv)
    }
}

/// Records and image features shared by all splits.
#[derive(Clone, Copy)]
pub struct Corpus<'a> {
    pub records: &'a HashMap<u64, &'a Record>,
    pub features: Option<&'a FeatureStore>,
}

impl<'a> Corpus<'a> {
    pub fn resolve(&self, pairs: &[PairExample]) -> Result<(Vec<&'a Record>, Vec<&'a Record>)> {
        pairs
            .iter()
            .map(|p| {
                let a = *self.records.get(&p.id_a).ok_or(Error::MissingId(p.id_a))?;
                let b = *self.records.get(&p.id_b).ok_or(Error::MissingId(p.id_b))?;
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }

    pub fn avg_len(&self, p: &PairExample) -> Result<f64> {
        let a = self.records.get(&p.id_a).ok_or(Error::MissingId(p.id_a))?;
        let b = self.records.get(&p.id_b).ok_or(Error::MissingId(p.id_b))?;
        Ok((a.content_length + b.content_length) as f64 / 2.0)
    }
}

/// Eval-mode probabilities for `pairs`, in input order. Chunks are scored
/// in parallel; each score is independent of how pairs are batched.
pub fn score_pairs(
    model: &MatcherModel<f32>,
    corpus: Corpus<'_>,
    pairs: &[PairExample],
    chunk: usize,
) -> Result<Vec<f32>> {
    let (a, b) = corpus.resolve(pairs)?;
    let chunk = chunk.max(1);
    let parts: Vec<Vec<f32>> = a
        .par_chunks(chunk)
        .zip(b.par_chunks(chunk))
        .map(|(ca, cb)| model.predict(ca, cb, corpus.features))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Mean binary cross-entropy with the same clamp as the training loss.
pub fn mean_bce(probs: &[f32], pairs: &[PairExample]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(pairs)
        .map(|(&p, e)| {
            let p = f64::from(p).clamp(BCE_EPS, 1.0 - BCE_EPS);
            if e.is_positive() {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / pairs.len().max(1) as f64
}

/// Average precision, or NaN when `pairs` has no positives.
pub fn pairs_ap(probs: &[f32], pairs: &[PairExample]) -> f64 {
    let s: Vec<f64> = probs.iter().map(|&p| f64::from(p)).collect();
    let l: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    average_precision_scores(&s, &l).unwrap_or(f64::NAN)
}

/// Loss and AP of a model on a pair set.
pub fn evaluate_pairs(
    model: &MatcherModel<f32>,
    corpus: Corpus<'_>,
    pairs: &[PairExample],
    chunk: usize,
) -> Result<(f64, f64, Vec<f32>)> {
    let probs = score_pairs(model, corpus, pairs, chunk)?;
    Ok((mean_bce(&probs, pairs), pairs_ap(&probs, pairs), probs))
}

/// Scored pairs ready for the evaluation module.
pub fn to_scored(corpus: Corpus<'_>, pairs: &[PairExample], scores: &[f64]) -> Result<Vec<ScoredPair>> {
    pairs
        .iter()
        .zip(scores)
        .map(|(p, &score)| {
            Ok(ScoredPair {
                id_a: p.id_a,
                id_b: p.id_b,
                score,
                label: p.label,
                avg_len: corpus.avg_len(p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// From 1.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_aps: f64,
    pub val_loss: f64,
    pub val_aps: f64,
    /// Wall time; the only non-deterministic field.
    pub seconds: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,train_aps,val_loss,val_aps,seconds";

pub fn write_epoch_logs(mut w: impl Write, logs: &[EpochLog]) -> Result<()> {
    writeln!(w, "{EPOCH_LOG_HEADER}")?;
    for l in logs {
        writeln!(
            w,
            "{},{},{},{},{},{:.3}",
            l.epoch, l.train_loss, l.train_aps, l.val_loss, l.val_aps, l.seconds
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; improvement means strictly lower.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: Option<usize>,
    pub best_loss: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        match self.patience {
            Some(p) if self.since_best >= p => StopDecision::Stop,
            _ => StopDecision::Continue,
        }
    }
}

/// Parameters plus the configuration and validation loss they were saved at.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_loss: f64,
    pub store: ParamStore<f32>,
}

pub const CHECKPOINT_MAGIC: &str = "mmlink-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_model(model: &MatcherModel<f32>, config: &TrainConfig, epoch: usize, val_loss: f64) -> Self {
        Self {
            config: config.clone(),
            epoch,
            val_loss,
            store: model.store.clone(),
        }
    }

    /// Rebuilds the model and copies the saved parameters in by name.
    pub fn to_model(&self) -> Result<MatcherModel<f32>> {
        let mut model = MatcherModel::new(self.config.model.clone(), self.config.seed, None)?;
        if model.store.len() != self.store.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.store.len(),
                model.store.len()
            )));
        }
        for (_, saved) in self.store.iter() {
            let id = model
                .store
                .id(&saved.name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown parameter {}", saved.name)))?;
            let p = model.store.get_mut(id);
            if p.shape != saved.shape {
                return Err(Error::CorruptCheckpoint(format!("shape of {} differs", saved.name)));
            }
            p.value.copy_from_slice(&saved.value);
            p.requires_grad = saved.requires_grad;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::with_capacity(self.store.numel() * 4);
        let mut head = String::new();
        head.push_str(&format!("{CHECKPOINT_MAGIC}\nversion={CHECKPOINT_VERSION}\n"));
        head.push_str(&format!("epoch={}\nval_loss={}\n", self.epoch, self.val_loss));
        for (k, v) in self.config.to_kv() {
            head.push_str(&format!("config.{k}={v}\n"));
        }
        for (_, p) in self.store.iter() {
            let dims: Vec<String> = p.shape.dims().iter().map(|d| d.to_string()).collect();
            head.push_str(&format!(
                "param name={} shape={} offset={} trainable={}\n",
                p.name,
                dims.join("x"),
                data.len(),
                u8::from(p.requires_grad)
            ));
            for v in &p.value {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        head.push_str(&format!("data_bytes={}\n", data.len()));
        head.push_str(&format!("checksum={}\nend\n", hex::encode(Sha256::digest(&data))));
        let mut out = head.into_bytes();
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_owned());
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| corrupt("manifest terminator missing"))?;
        let head = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("manifest is not UTF-8"))?;
        let data = &bytes[end + 5..];
        let mut lines = head.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(corrupt("bad magic line"));
        }
        let mut config_kv = Vec::new();
        let mut params = Vec::new();
        let (mut version, mut epoch, mut val_loss, mut data_bytes, mut checksum) = (None, None, None, None, None);
        for line in lines {
            if let Some(rest) = line.strip_prefix("param ") {
                params.push(parse_param_line(rest)?);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt("manifest line without '='"))?;
            match k {
                "version" => version = Some(v.parse::<u32>().map_err(|_| corrupt("bad version"))?),
                "epoch" => epoch = Some(v.parse::<usize>().map_err(|_| corrupt("bad epoch"))?),
                "val_loss" => val_loss = Some(v.parse::<f64>().map_err(|_| corrupt("bad val_loss"))?),
                "data_bytes" => data_bytes = Some(v.parse::<usize>().map_err(|_| corrupt("bad data_bytes"))?),
                "checksum" => checksum = Some(v.to_owned()),
                _ => match k.strip_prefix("config.") {
                    Some(ck) => config_kv.push((ck, v)),
                    None => return Err(Error::CorruptCheckpoint(format!("unknown manifest key {k}"))),
                },
            }
        }
        let version = version.ok_or_else(|| corrupt("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let data_bytes = data_bytes.ok_or_else(|| corrupt("missing data_bytes"))?;
        if data.len() != data_bytes {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {data_bytes} data bytes, found {}",
                data.len()
            )));
        }
        if checksum.as_deref() != Some(hex::encode(Sha256::digest(data)).as_str()) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut config = TrainConfig::default();
        config.apply_kv(config_kv)?;
        let mut store = ParamStore::new();
        for (name, shape, offset, trainable) in params {
            let n = shape.numel();
            let chunk = data
                .get(offset..offset + 4 * n)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("parameter {name} runs past the data")))?;
            let values = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let id = store.add(&name, shape, values)?;
            store.get_mut(id).requires_grad = trainable;
        }
        Ok(Self {
            config,
            epoch: epoch.ok_or_else(|| corrupt("missing epoch"))?,
            val_loss: val_loss.ok_or_else(|| corrupt("missing val_loss"))?,
            store,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = File::open(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn parse_param_line(rest: &str) -> Result<(String, Shape, usize, bool)> {
    let mut fields = HashMap::new();
    for part in rest.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::CorruptCheckpoint(format!("bad parameter field {part:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::CorruptCheckpoint(format!("parameter line lacks {k}")))
    };
    let bad = |k: &str| Error::CorruptCheckpoint(format!("bad parameter {k}"));
    let dims = get("shape")?
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| bad("shape")))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        get("name")?.to_owned(),
        Shape(dims),
        get("offset")?.parse().map_err(|_| bad("offset"))?,
        get("trainable")? == "1",
    ))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub logs: Vec<EpochLog>,
    pub stopped_early: bool,
    /// Optimizer steps taken (mini-batches over all epochs).
    pub steps: usize,
}

impl TrainOutcome {
    pub fn best_log(&self) -> &EpochLog {
        self.logs
            .iter()
            .find(|l| l.epoch == self.best.epoch)
            .expect("best epoch is logged")
    }
}

/// Trains with default hooks.
pub fn train(
    config: &TrainConfig,
    corpus: Corpus<'_>,
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    pretrained: Option<&PretrainedEmbeddings>,
) -> Result<TrainOutcome> {
    train_with(config, corpus, train_pairs, val_pairs, pretrained, |_| {})
}

/// Trains from the `"init"`, `"shuffle"` and `"dropout"` streams of
/// `config.seed`, calling `on_epoch` after every epoch.
pub fn train_with(
    config: &TrainConfig,
    corpus: Corpus<'_>,
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    pretrained: Option<&PretrainedEmbeddings>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let mut model = MatcherModel::<f32>::new(config.model.clone(), config.seed, pretrained)?;
    model.check_features(corpus.features)?;
    let (train_a, train_b) = corpus.resolve(train_pairs)?;
    corpus.resolve(val_pairs)?;
    let labels: Vec<f32> = train_pairs.iter().map(|p| f32::from(p.label)).collect();

    let root = RngStream::new(config.seed);
    let mut shuffle = root.fork("shuffle");
    let mut dropout = root.fork("dropout");
    let mut optimizer = Optimizer::new(config.optimizer, &model.store);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = Checkpoint::from_model(&model, config, 0, f64::INFINITY);
    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut stopped_early = false;
    let mut steps = 0;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        shuffle.shuffle(&mut order);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let a: Vec<&Record> = idx.iter().map(|&i| train_a[i]).collect();
            let b: Vec<&Record> = idx.iter().map(|&i| train_b[i]).collect();
            let y: Vec<f32> = idx.iter().map(|&i| labels[i]).collect();
            let grads = {
                let mut g = Graph::new(&model.store);
                let out = model.forward_pairs(&mut g, &a, &b, corpus.features, Mode::Train, &mut dropout)?;
                let loss = g.bce_loss(out.probs, &y)?;
                if !g.scalar(loss).is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
                g.backward(loss)?
            };
            zero_grads(&mut model.store);
            model.store.accumulate(&grads);
            if let Some(c) = config.clip_norm {
                clip_grad_norm(&mut model.store, c);
            }
            optimizer.step(&mut model.store, config.lr);
            steps += 1;
        }
        let chunk = config.batch_size.max(DEFAULT_BATCH_SIZE);
        let (train_loss, train_aps, _) = evaluate_pairs(&model, corpus, train_pairs, chunk)?;
        let (val_loss, val_aps, _) = evaluate_pairs(&model, corpus, val_pairs, chunk)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        let log = EpochLog {
            epoch,
            train_loss,
            train_aps,
            val_loss,
            val_aps,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = Checkpoint::from_model(&model, config, epoch, val_loss),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        logs,
        stopped_early,
        steps,
    })
}

/// One grid-search entry: the configuration and the metrics of its best
/// epoch, or the error that stopped it.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub config: TrainConfig,
    pub result: std::result::Result<EpochLog, String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Row with the highest validation AP.
    pub best: Option<usize>,
}

pub const GRID_HEADER: &str =
    "layers,hid_size,fs_out_size,fc1_hid_size,fc2_hid_size,lr,dr,train_loss,train_aps,val_loss,val_aps";

impl GridResult {
    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{GRID_HEADER}")?;
        for row in &self.rows {
            let m = &row.config.model;
            let metrics = match &row.result {
                Ok(l) => format!("{},{},{},{}", l.train_loss, l.train_aps, l.val_loss, l.val_aps),
                Err(_) => "NaN,NaN,NaN,NaN".into(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{metrics}",
                m.layers, m.hid_size, m.fs_out_size, m.fc1_hid_size, m.fc2_hid_size, row.config.lr, m.dropout
            )?;
        }
        Ok(())
    }
}

/// Trains every configuration (concurrently); failures are recorded and
/// the search continues.
pub fn grid_search(
    configs: &[TrainConfig],
    corpus: Corpus<'_>,
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
) -> Result<GridResult> {
    if configs.is_empty() {
        return Err(Error::Config("grid search needs at least one configuration".into()));
    }
    let rows: Vec<GridRow> = configs
        .par_iter()
        .map(|c| GridRow {
            config: c.clone(),
            result: train(c, corpus, train_pairs, val_pairs, None)
                .map(|o| *o.best_log())
                .map_err(|e| e.to_string()),
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.result.as_ref().ok().map(|l| (i, l.val_aps)))
        .filter(|(_, ap)| !ap.is_nan())
        .fold(None, |acc: Option<(usize, f64)>, (i, ap)| match acc {
            Some((_, b)) if b >= ap => acc,
            _ => Some((i, ap)),
        })
        .map(|(i, _)| i);
    Ok(GridResult { rows, best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Largest absolute deviation from the mean.
    pub max_dev: f64,
}

impl SeedSummary {
    pub fn from_values(seeds: Vec<u64>, values: Vec<f64>) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max_dev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        Self {
            seeds,
            values,
            mean,
            max_dev,
        }
    }
}

/// Validation AP of the best checkpoint for each seed.
pub fn multi_seed_eval(
    config: &TrainConfig,
    corpus: Corpus<'_>,
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    seeds: &[u64],
) -> Result<SeedSummary> {
    if seeds.len() < 2 {
        return Err(Error::Config("multi-seed evaluation needs at least 2 seeds".into()));
    }
    let values = seeds
        .par_iter()
        .map(|&seed| {
            let c = TrainConfig { seed, ..config.clone() };
            train(&c, corpus, train_pairs, val_pairs, None).map(|o| o.best_log().val_aps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedSummary::from_values(seeds.to_vec(), values))
}
