use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmlink::baseline::{
    compute_features, write_feature_dump, BaselineModel, TokenSource, DEFAULT_BASELINE_EPOCHS, DEFAULT_BASELINE_LR,
};
use mmlink::dataset::{
    generate_synthetic_corpus, normalize_text, positive_ratio, prepare_corpus, split_dataset, write_pairs,
    write_records, EncodeOptions, InteractionMode, NormalizerHook, PairExample, Record, SynthConfig, DEFAULT_RATIOS,
};
use mmlink::encoders::load_pretrained_embeddings;
use mmlink::evaluation::{compare_reports, write_combined_pr, EvalReport};
use mmlink::features::{FeatureKind, FeatureStore};
use mmlink::fusion::export_attention;
use mmlink::rng::RngStream;
use mmlink::siamese::{FusionVariant, MatcherModel};
use mmlink::training::{
    grid_search, multi_seed_eval, score_pairs, to_scored, train_with, write_epoch_logs, Checkpoint, Corpus,
    TrainConfig, CHECKPOINT_MAGIC,
};

use crate::prep::{read_kv, Prepared, MANIFEST, RECORDS, SPLITS, VOCAB};
use crate::{
    CompareArgs, EvaluateArgs, GridArgs, Mode, ModelFlags, PredictArgs, PreprocessArgs, SeedsArgs, SynthArgs,
    TrainArgs, Variant,
};

const SCORE_CHUNK: usize = 256;

/// Bad arguments detected after parsing; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(mmlink::Error::MissingInput(path.to_path_buf()).into());
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_items: a.n_items,
        n_pairs: a.n_pairs,
        positive_ratio: a.positive_ratio,
        vocab_size: a.lexicon,
        feature_dim: a.feature_dim,
        regions: a.regions.map(|r| (r, a.region_dim)),
        feature_noise: a.noise,
        mode: match a.interaction_mode {
            Mode::Shared => InteractionMode::Shared,
            Mode::Xor => InteractionMode::Xor,
        },
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic_corpus(&config, a.seed)?;
    corpus.write_to_dir(&a.out)?;
    eprintln!(
        "wrote {} items, {} pairs ({} positive) to {}",
        corpus.items.len(),
        corpus.pairs.len(),
        corpus.pairs.iter().filter(|p| p.is_positive()).count(),
        a.out.display()
    );
    Ok(())
}

/// Drops listed words after the built-in normalization.
struct Stopwords(HashSet<String>);

impl NormalizerHook for Stopwords {
    fn apply(&self, text: &str) -> String {
        text.split_whitespace()
            .filter(|w| !self.0.contains(*w))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn load_stopwords(path: &Path) -> Result<Stopwords> {
    require_file(path)?;
    let text = std::fs::read_to_string(path)?;
    Ok(Stopwords(
        text.lines()
            .map(|l| normalize_text(l, None))
            .filter(|w| !w.is_empty())
            .collect(),
    ))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    for p in [&a.items, &a.pairs, &a.features].into_iter().chain(a.regions.as_ref()) {
        require_file(p)?;
    }
    let items = mmlink::dataset::read_items(&a.items).with_context(|| format!("reading {}", a.items.display()))?;
    let pairs = mmlink::dataset::read_pairs(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let global = FeatureStore::load(&a.features, Some(FeatureKind::Global))
        .with_context(|| format!("loading {}", a.features.display()))?;
    let mut usable: HashSet<u64> = global.ids().iter().copied().collect();
    if let Some(path) = &a.regions {
        let regional = FeatureStore::load(path, Some(FeatureKind::Regional))
            .with_context(|| format!("loading {}", path.display()))?;
        let with_regions: HashSet<u64> = regional.ids().iter().copied().collect();
        usable.retain(|id| with_regions.contains(id));
    }
    let stopwords = a.stopwords.as_deref().map(load_stopwords).transpose()?;
    let opts = EncodeOptions {
        max_len: a.max_len,
        seed: a.seed,
        hook: stopwords.as_ref().map(|s| s as &dyn NormalizerHook),
    };
    let corpus = prepare_corpus(&items, &pairs, &usable, a.vocab_size, &opts)?;
    let split = split_dataset(&corpus.pairs, DEFAULT_RATIOS, a.seed)?;

    create_out_dir(&a.out)?;
    corpus.vocab.save(a.out.join(VOCAB))?;
    let records: Vec<&Record> = corpus.records.iter().collect();
    write_records(a.out.join(RECORDS), &records)?;
    for (name, part) in split.parts() {
        write_pairs(a.out.join(format!("{name}.csv")), part)?;
    }

    let s = &corpus.stats;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let features_path = absolute(&a.features)?;
    let regions_path = a.regions.as_deref().map(absolute).transpose()?;
    write_file(&a.out.join(MANIFEST), |w| {
        writeln!(w, "seed={}", a.seed)?;
        writeln!(w, "vocab_size={}", corpus.vocab.len())?;
        writeln!(w, "max_len={}", a.max_len)?;
        writeln!(w, "items_in={}", s.items_in)?;
        writeln!(w, "dropped_empty={}", s.dropped_empty)?;
        writeln!(w, "dropped_no_features={}", s.dropped_no_features)?;
        writeln!(w, "records={}", corpus.records.len())?;
        writeln!(w, "pairs_in={}", s.pairs_in)?;
        writeln!(w, "pairs_dropped={}", s.pairs_dropped)?;
        writeln!(w, "pairs={}", corpus.pairs.len())?;
        for (name, part) in split.parts() {
            writeln!(w, "{name}_pairs={}", part.len())?;
            writeln!(w, "{name}_positive_ratio={}", positive_ratio(part))?;
        }
        writeln!(w, "features={}", features_path.display())?;
        if let Some(r) = &regions_path {
            writeln!(w, "regions={}", r.display())?;
        }
        writeln!(w, "created_unix={created}")
    })?;
    eprintln!(
        "{} records, {} pairs (train {}, validation {}, test {}); dropped {} items without text, {} without features",
        corpus.records.len(),
        corpus.pairs.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        s.dropped_empty,
        s.dropped_no_features
    );
    Ok(())
}

fn flag_kv(f: &ModelFlags) -> Vec<(&'static str, String)> {
    let mut kv: Vec<(&'static str, String)> = Vec::new();
    let mut put = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            kv.push((k, v));
        }
    };
    put("cell", f.cell.clone());
    put("layers", f.layers.map(|v| v.to_string()));
    put("embed_dim", f.embed_dim.map(|v| v.to_string()));
    put("hid_size", f.hid.map(|v| v.to_string()));
    put("fs_out_size", f.fs_out.map(|v| v.to_string()));
    put("fc1_hid_size", f.fc1.map(|v| v.to_string()));
    put("fc2_hid_size", f.fc2.map(|v| v.to_string()));
    put("k", f.k.map(|v| v.to_string()));
    put("dropout", f.dropout.map(|v| v.to_string()));
    put("lr", f.lr.map(|v| v.to_string()));
    put("batch_size", f.batch_size.map(|v| v.to_string()));
    put("max_epochs", f.epochs.map(|v| v.to_string()));
    put("patience", f.patience.clone());
    put("optimizer", f.optimizer.clone());
    put("clip_norm", f.clip_norm.map(|v| v.to_string()));
    put("gru_bias", f.gru_bias.then(|| "true".into()));
    put("fusion_tanh", f.fusion_tanh.then(|| "true".into()));
    put("seed", f.seed.map(|v| v.to_string()));
    kv
}

/// Keys that describe the data rather than the model; always taken from
/// the preprocessed directory.
const DATA_KEYS: [&str; 4] = ["vocab_size", "image_dim", "regions", "region_dim"];

fn apply_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let kv = read_kv(path)?;
    let kv: Vec<(&str, &str)> = kv
        .iter()
        .filter(|(k, _)| !DATA_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    cfg.apply_kv(kv).with_context(|| format!("in {}", path.display()))?;
    Ok(())
}

/// Defaults, then the config file, then flags, then dimensions from the data.
fn build_config(variant: FusionVariant, flags: &ModelFlags, prep: &Prepared, stores: &Stores) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.model.variant = variant;
    if let Some(path) = &flags.config {
        apply_config_file(&mut cfg, path)?;
        cfg.model.variant = variant;
    }
    let kv = flag_kv(flags);
    cfg.apply_kv(kv.iter().map(|(k, v)| (*k, v.as_str())))?;
    fit_to_data(&mut cfg, prep, stores);
    cfg.validate()?;
    Ok(cfg)
}

fn fit_to_data(cfg: &mut TrainConfig, prep: &Prepared, stores: &Stores) {
    cfg.model.vocab_size = prep.vocab.len();
    if let Some(g) = &stores.global {
        cfg.model.image_dim = g.dim();
    }
    if let Some(r) = &stores.regional {
        cfg.model.regions = r.regions();
        cfg.model.region_dim = r.dim();
    }
}

#[derive(Default)]
struct Stores {
    global: Option<FeatureStore>,
    regional: Option<FeatureStore>,
}

impl Stores {
    fn for_variant(prep: &Prepared, variant: FusionVariant) -> Result<Self> {
        let mut s = Stores::default();
        match variant.feature_kind() {
            Some(FeatureKind::Global) => s.global = Some(prep.features(FeatureKind::Global)?),
            Some(FeatureKind::Regional) => s.regional = Some(prep.features(FeatureKind::Regional)?),
            None => {}
        }
        Ok(s)
    }

    fn for_model(&self, variant: FusionVariant) -> Option<&FeatureStore> {
        match variant.feature_kind() {
            Some(FeatureKind::Global) => self.global.as_ref(),
            Some(FeatureKind::Regional) => self.regional.as_ref(),
            None => None,
        }
    }
}

fn fusion_variant(v: Variant) -> FusionVariant {
    match v {
        Variant::Pointwise => FusionVariant::Pointwise,
        Variant::San => FusionVariant::San,
        Variant::Baseline => unreachable!("the baseline has no fusion variant"),
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let prep = Prepared::load(&a.prep)?;
    create_out_dir(&a.out)?;
    if a.variant == Variant::Baseline {
        return train_baseline(&a, &prep);
    }
    let variant = fusion_variant(a.variant);
    let stores = Stores::for_variant(&prep, variant)?;
    let mut cfg = build_config(variant, &a.flags, &prep, &stores)?;
    let pretrained = match &a.embeddings {
        Some(path) => {
            let mut rng = RngStream::new(cfg.seed).fork("pretrained");
            let emb = load_pretrained_embeddings(path, &prep.vocab, &mut rng)
                .with_context(|| format!("loading {}", path.display()))?;
            eprintln!("pretrained embeddings: dim {}, coverage {:.3}", emb.dim, emb.coverage);
            cfg.model.embed_dim = emb.dim;
            Some(emb)
        }
        None => None,
    };
    let records = prep.index();
    let corpus = Corpus {
        records: &records,
        features: stores.for_model(variant),
    };
    let train_pairs = prep.split("train")?;
    let val_pairs = prep.split("validation")?;
    let outcome = train_with(&cfg, corpus, &train_pairs, &val_pairs, pretrained.as_ref(), |log| {
        eprintln!(
            "epoch {:>3}  train_loss {:.5}  train_aps {:.4}  val_loss {:.5}  val_aps {:.4}  ({:.1}s)",
            log.epoch, log.train_loss, log.train_aps, log.val_loss, log.val_aps, log.seconds
        );
    })?;
    outcome.best.save(a.out.join("model.ckpt"))?;
    write_file(&a.out.join("epochs.csv"), |w| {
        write_epoch_logs(&mut *w, &outcome.logs).map_err(std::io::Error::other)
    })?;
    let best = *outcome.best_log();
    write_file(&a.out.join("report.txt"), |w| {
        for (k, v) in cfg.to_kv() {
            writeln!(w, "config.{k}={v}")?;
        }
        writeln!(w, "best_epoch={}", best.epoch)?;
        writeln!(w, "train_loss={}", best.train_loss)?;
        writeln!(w, "train_aps={}", best.train_aps)?;
        writeln!(w, "val_loss={}", best.val_loss)?;
        writeln!(w, "val_aps={}", best.val_aps)?;
        writeln!(w, "epochs_run={}", outcome.logs.len())?;
        writeln!(w, "stopped_early={}", outcome.stopped_early)?;
        writeln!(w, "steps={}", outcome.steps)
    })?;
    eprintln!(
        "best epoch {} (val_loss {:.5}, val_aps {:.4}); wrote {}",
        best.epoch,
        best.val_loss,
        best.val_aps,
        a.out.join("model.ckpt").display()
    );
    Ok(())
}

fn train_baseline(a: &TrainArgs, prep: &Prepared) -> Result<()> {
    if a.embeddings.is_some() {
        bail!(UsageError("--embeddings does not apply to the baseline".into()));
    }
    let source = TokenSource::parse(&a.tokens)?;
    let lr = a.flags.lr.unwrap_or(DEFAULT_BASELINE_LR);
    let epochs = a.flags.epochs.unwrap_or(DEFAULT_BASELINE_EPOCHS);
    let global = prep.features(FeatureKind::Global)?;
    let records = prep.index();
    let mut splits = Vec::new();
    for name in SPLITS {
        let pairs = prep.split(name)?;
        let feats = compute_features(&pairs, &records, &global, source)?;
        write_feature_dump(a.out.join(format!("features_{name}.csv")), &pairs, &feats)?;
        splits.push((name, pairs, feats));
    }
    let (_, train_pairs, train_feats) = &splits[0];
    let labels: Vec<u8> = train_pairs.iter().map(|p| p.label).collect();
    let model = BaselineModel::fit(train_feats, &labels, source, lr, epochs)?;
    model.save(a.out.join("baseline.txt"))?;
    let corpus = Corpus {
        records: &records,
        features: Some(&global),
    };
    write_file(&a.out.join("report.txt"), |w| {
        writeln!(w, "config.variant=baseline")?;
        writeln!(w, "config.tokens={}", source.as_str())?;
        writeln!(w, "config.lr={lr}")?;
        writeln!(w, "config.epochs={epochs}")?;
        for (name, pairs, feats) in &splits[..2] {
            let scores = model.score(feats);
            let ap = to_scored(corpus, pairs, &scores)
                .and_then(|s| mmlink::evaluation::average_precision(&s))
                .map_or_else(|e| format!("undefined ({e})"), |v| v.to_string());
            writeln!(w, "{name}_aps={ap}")?;
        }
        Ok(())
    })?;
    eprintln!("wrote {}", a.out.join("baseline.txt").display());
    Ok(())
}

enum LoadedModel {
    Neural(Box<MatcherModel<f32>>),
    Baseline(BaselineModel),
}

impl LoadedModel {
    fn load(path: &Path) -> Result<Self> {
        require_file(path)?;
        let mut head = Vec::new();
        BufReader::new(File::open(path)?).read_until(b'\n', &mut head)?;
        if head.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            Ok(LoadedModel::Neural(Box::new(ckpt.to_model()?)))
        } else if head.starts_with(b"model=baseline") {
            Ok(LoadedModel::Baseline(
                BaselineModel::load(path).with_context(|| format!("loading {}", path.display()))?,
            ))
        } else {
            Err(mmlink::Error::BadMagic).with_context(|| format!("{} is not a model file", path.display()))
        }
    }

    fn stores(&self, prep: &Prepared) -> Result<Stores> {
        match self {
            LoadedModel::Neural(m) => Stores::for_variant(prep, m.config.variant),
            LoadedModel::Baseline(_) => Ok(Stores {
                global: Some(prep.features(FeatureKind::Global)?),
                regional: None,
            }),
        }
    }

    fn features<'s>(&self, stores: &'s Stores) -> Option<&'s FeatureStore> {
        match self {
            LoadedModel::Neural(m) => stores.for_model(m.config.variant),
            LoadedModel::Baseline(_) => stores.global.as_ref(),
        }
    }

    fn score(&self, corpus: Corpus<'_>, pairs: &[PairExample]) -> Result<Vec<f64>> {
        match self {
            LoadedModel::Neural(m) => {
                m.check_features(corpus.features)?;
                Ok(score_pairs(m, corpus, pairs, SCORE_CHUNK)?
                    .into_iter()
                    .map(f64::from)
                    .collect())
            }
            LoadedModel::Baseline(b) => {
                let global = corpus.features.expect("baseline scoring needs the global store");
                let feats = compute_features(pairs, corpus.records, global, b.source)?;
                Ok(b.score(&feats))
            }
        }
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let prep = Prepared::load(&a.prep)?;
    let pairs = prep.split(&a.split)?;
    let model = LoadedModel::load(&a.model)?;
    if a.export_attention && !matches!(&model, LoadedModel::Neural(m) if m.config.variant == FusionVariant::San) {
        bail!(UsageError("--export-attention needs a san checkpoint".into()));
    }
    let stores = model.stores(&prep)?;
    let records = prep.index();
    let corpus = Corpus {
        records: &records,
        features: model.features(&stores),
    };
    let scores = model.score(corpus, &pairs)?;
    let scored = to_scored(corpus, &pairs, &scores)?;
    let report = EvalReport::build(&scored)?;

    create_out_dir(&a.out)?;
    if a.buckets {
        report.write_report(a.out.join("report.txt"))?;
        write_file(&a.out.join("buckets.csv"), |w| {
            report.write_buckets(&mut *w).map_err(std::io::Error::other)
        })?;
    } else {
        write_file(&a.out.join("report.txt"), |w| {
            report.write_metrics(&mut *w).map_err(std::io::Error::other)
        })?;
    }
    report.write_pr(a.out.join("pr.csv"))?;
    write_file(&a.out.join("scores.csv"), |w| {
        writeln!(w, "id_a,id_b,score,label")?;
        for p in &scored {
            writeln!(w, "{},{},{},{}", p.id_a, p.id_b, p.score, p.label)?;
        }
        Ok(())
    })?;
    if a.export_attention {
        let LoadedModel::Neural(m) = &model else { unreachable!() };
        export_split_attention(m, &pairs, corpus, &a.out.join("attention.csv"))?;
    }
    eprintln!(
        "{} split: {} pairs, AP {:.4}, P@0.5 {:.4}, R@0.5 {:.4}",
        a.split, report.n_pairs, report.average_precision, report.at_half.precision, report.at_half.recall
    );
    Ok(())
}

/// One block of `K x R` rows for every distinct record in the split, in
/// order of first appearance.
fn export_split_attention(
    model: &MatcherModel<f32>,
    pairs: &[PairExample],
    corpus: Corpus<'_>,
    path: &Path,
) -> Result<()> {
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    for p in pairs {
        for id in [p.id_a, p.id_b] {
            if seen.insert(id) {
                ids.push(id);
            }
        }
    }
    let mut traces = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(SCORE_CHUNK) {
        let recs: Vec<&Record> = chunk
            .iter()
            .map(|id| corpus.records.get(id).copied().ok_or(mmlink::Error::MissingId(*id)))
            .collect::<mmlink::Result<_>>()?;
        let t = model.attention_traces(&recs, corpus.features)?;
        traces.extend(chunk.iter().copied().zip(t));
    }
    export_attention(path, &traces)?;
    Ok(())
}

/// Reads `id_a,id_b[,...]` rows; a non-numeric first row is a header.
fn read_query_pairs(path: &Path) -> Result<Vec<std::result::Result<(u64, u64), String>>> {
    require_file(path)?;
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (a, b) = (fields.next().unwrap_or(""), fields.next().unwrap_or(""));
        match (a.parse::<u64>(), b.parse::<u64>()) {
            (Ok(a), Ok(b)) => rows.push(Ok((a, b))),
            _ if i == 0 => {}
            _ => rows.push(Err(format!("line {}: expected two item ids", i + 1))),
        }
    }
    Ok(rows)
}

type FailedRow = (String, String, String);

pub fn predict(a: PredictArgs) -> Result<()> {
    let prep = Prepared::load(&a.prep)?;
    let model = LoadedModel::load(&a.model)?;
    let stores = model.stores(&prep)?;
    let records = prep.index();
    let corpus = Corpus {
        records: &records,
        features: model.features(&stores),
    };
    let rows = read_query_pairs(&a.pairs)?;
    // Ok rows are scored in order; Err rows carry the echoed ids and the reason.
    let mut outcome: Vec<std::result::Result<(u64, u64), FailedRow>> = Vec::with_capacity(rows.len());
    let mut valid = Vec::new();
    for row in &rows {
        match row {
            Ok((ia, ib)) => {
                let missing = [ia, ib].into_iter().find(|id| !records.contains_key(id));
                match missing {
                    Some(id) => outcome.push(Err((ia.to_string(), ib.to_string(), format!("unknown item {id}")))),
                    None => {
                        valid.push(PairExample::new(*ia, *ib, 0));
                        outcome.push(Ok((*ia, *ib)));
                    }
                }
            }
            Err(msg) => outcome.push(Err((String::new(), String::new(), msg.clone()))),
        }
    }
    let scores = if valid.is_empty() {
        Vec::new()
    } else {
        model.score(corpus, &valid)?
    };
    let mut next = scores.iter();
    write_file(&a.out, |w| {
        writeln!(w, "id_a,id_b,score,error")?;
        for o in &outcome {
            match o {
                Ok((ia, ib)) => writeln!(w, "{ia},{ib},{},", next.next().expect("one score per valid row"))?,
                Err((ia, ib, msg)) => writeln!(w, "{ia},{ib},,{}", msg.replace(',', ";"))?,
            }
        }
        Ok(())
    })?;
    let failed = outcome.len() - valid.len();
    eprintln!("scored {} pairs, {} failed", valid.len(), failed);
    if valid.is_empty() {
        bail!(mmlink::Error::ContractViolation(format!(
            "none of the {} rows could be scored",
            outcome.len()
        )));
    }
    Ok(())
}

pub fn grid(a: GridArgs) -> Result<()> {
    let prep = Prepared::load(&a.prep)?;
    let mut configs = Vec::with_capacity(a.configs.len());
    for path in &a.configs {
        let mut cfg = TrainConfig::default();
        apply_config_file(&mut cfg, path)?;
        configs.push(cfg);
    }
    let mut stores = Stores::default();
    for cfg in &configs {
        match cfg.model.variant.feature_kind() {
            Some(FeatureKind::Global) if stores.global.is_none() => {
                stores.global = Some(prep.features(FeatureKind::Global)?)
            }
            Some(FeatureKind::Regional) if stores.regional.is_none() => {
                stores.regional = Some(prep.features(FeatureKind::Regional)?)
            }
            _ => {}
        }
    }
    for cfg in &mut configs {
        fit_to_data(cfg, &prep, &stores);
    }
    let variants: HashSet<&str> = configs.iter().map(|c| c.model.variant.as_str()).collect();
    if variants.len() > 1 {
        bail!(UsageError("all grid configurations must share one variant".into()));
    }
    let variant = configs[0].model.variant;
    let records = prep.index();
    let corpus = Corpus {
        records: &records,
        features: stores.for_model(variant),
    };
    let train_pairs = prep.split("train")?;
    let val_pairs = prep.split("validation")?;
    let result = grid_search(&configs, corpus, &train_pairs, &val_pairs)?;
    create_out_dir(&a.out)?;
    write_file(&a.out.join("grid.csv"), |w| {
        result.write_table(&mut *w).map_err(std::io::Error::other)
    })?;
    for (row, path) in result.rows.iter().zip(&a.configs) {
        if let Err(e) = &row.result {
            eprintln!("{}: failed: {e}", path.display());
        }
    }
    match result.best {
        Some(i) => eprintln!("best configuration: {}", a.configs[i].display()),
        None => eprintln!("no configuration produced a defined validation AP"),
    }
    Ok(())
}

pub fn seeds(a: SeedsArgs) -> Result<()> {
    if a.variant == Variant::Baseline {
        bail!(UsageError("seed studies apply to the neural variants".into()));
    }
    let prep = Prepared::load(&a.prep)?;
    let variant = fusion_variant(a.variant);
    let stores = Stores::for_variant(&prep, variant)?;
    let cfg = build_config(variant, &a.flags, &prep, &stores)?;
    let records = prep.index();
    let corpus = Corpus {
        records: &records,
        features: stores.for_model(variant),
    };
    let train_pairs = prep.split("train")?;
    let val_pairs = prep.split("validation")?;
    let summary = multi_seed_eval(&cfg, corpus, &train_pairs, &val_pairs, &a.seeds)?;
    create_out_dir(&a.out)?;
    write_file(&a.out.join("seeds.csv"), |w| {
        writeln!(w, "seed,val_aps")?;
        for (s, v) in summary.seeds.iter().zip(&summary.values) {
            writeln!(w, "{s},{v}")?;
        }
        Ok(())
    })?;
    write_file(&a.out.join("summary.txt"), |w| {
        writeln!(w, "seeds={}", summary.seeds.len())?;
        writeln!(w, "mean_val_aps={}", summary.mean)?;
        writeln!(w, "max_dev={}", summary.max_dev)
    })?;
    eprintln!("mean val_aps {:.4}, max deviation {:.4}", summary.mean, summary.max_dev);
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let prep = Prepared::load(&a.prep)?;
    let pairs = prep.split(&a.split)?;
    let records = prep.index();
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for entry in &a.models {
        let Some((name, path)) = entry.split_once('=') else {
            bail!(UsageError(format!("expected name=path, got {entry:?}")));
        };
        let model = LoadedModel::load(Path::new(path))?;
        let stores = model.stores(&prep)?;
        let corpus = Corpus {
            records: &records,
            features: model.features(&stores),
        };
        let scores = model.score(corpus, &pairs)?;
        let report = EvalReport::build(&to_scored(corpus, &pairs, &scores)?)?;
        reports.push((name.to_owned(), report));
    }
    let named: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let comparison = compare_reports(&named)?;
    create_out_dir(&a.out)?;
    write_file(&a.out.join("comparison.csv"), |w| {
        comparison.write_table(&mut *w).map_err(std::io::Error::other)
    })?;
    write_file(&a.out.join("pr.csv"), |w| {
        write_combined_pr(&mut *w, &named).map_err(std::io::Error::other)
    })?;
    for (name, r) in &named {
        eprintln!("{name}: AP {:.4}", r.average_precision);
    }
    Ok(())
}
