//! Weight-shared two-branch matcher.
//!
//! Each record is encoded (description encoder, then the configured fusion)
//! into a vector `z`. Both sides go through the same branch
//! `relu(fc2(relu(fc1 z)))`; the head scores `sigmoid(fc_out(|b_a − b_b|))`.
//! The two sides of a batch are stacked into one `2B`-row batch so the
//! encoder and branch run once, with literally the same parameter nodes.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, Linear, Mode, NodeId, ParamStore, Scalar};
use crate::dataset::Record;
use crate::encoders::{
    encode_sequence, CellKind, EmbeddingTable, PretrainedEmbeddings, SequenceBatch, SequenceEncoder,
};
use crate::features::{FeatureKind, FeatureStore};
use crate::fusion::{pointwise_fuse, san_fuse, AttentionTrace, PointwiseFusionParams, SanParams};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionVariant {
    Pointwise,
    San,
    /// Text only: the description encoding goes straight to the branches.
    None,
}

impl FusionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionVariant::Pointwise => "pointwise",
            FusionVariant::San => "san",
            FusionVariant::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(FusionVariant::Pointwise),
            "san" => Ok(FusionVariant::San),
            "none" => Ok(FusionVariant::None),
            other => Err(Error::Config(format!("unknown fusion variant {other:?}"))),
        }
    }

    /// Feature store kind the variant reads, if any.
    pub fn feature_kind(self) -> Option<FeatureKind> {
        match self {
            FusionVariant::Pointwise => Some(FeatureKind::Global),
            FusionVariant::San => Some(FeatureKind::Regional),
            FusionVariant::None => None,
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: FusionVariant,
    pub cell: CellKind,
    pub layers: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hid_size: usize,
    pub fs_out_size: usize,
    pub fc1_hid_size: usize,
    pub fc2_hid_size: usize,
    /// Attention layers (SAN only).
    pub k: usize,
    pub dropout: f64,
    /// Global feature width (pointwise).
    pub image_dim: usize,
    /// Region count and width (SAN).
    pub regions: usize,
    pub region_dim: usize,
    pub gru_bias: bool,
    pub fusion_tanh: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: FusionVariant::Pointwise,
            cell: CellKind::Gru,
            layers: 1,
            vocab_size: crate::dataset::DEFAULT_VOCAB_SIZE + crate::dataset::NUM_SPECIALS,
            embed_dim: crate::encoders::DEFAULT_EMBED_DIM,
            hid_size: 256,
            fs_out_size: crate::fusion::DEFAULT_FS_OUT,
            fc1_hid_size: 128,
            fc2_hid_size: 64,
            k: 2,
            dropout: 0.0,
            image_dim: crate::features::DEFAULT_GLOBAL_DIM,
            regions: crate::features::DEFAULT_REGIONS,
            region_dim: crate::features::DEFAULT_REGION_DIM,
            gru_bias: false,
            fusion_tanh: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("layers", self.layers),
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hid_size", self.hid_size),
            ("fs_out_size", self.fs_out_size),
            ("fc1_hid_size", self.fc1_hid_size),
            ("fc2_hid_size", self.fc2_hid_size),
            ("k", self.k),
            ("image_dim", self.image_dim),
            ("regions", self.regions),
            ("region_dim", self.region_dim),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.variant == FusionVariant::San && self.hid_size != self.fs_out_size {
            return Err(Error::Config(format!(
                "the attention query starts from the description encoding, so hid_size ({}) must equal fs_out_size ({})",
                self.hid_size, self.fs_out_size
            )));
        }
        Ok(())
    }

    /// Width of the per-record vector entering the branches.
    pub fn fused_dim(&self) -> usize {
        match self.variant {
            FusionVariant::None => self.hid_size,
            _ => self.fs_out_size,
        }
    }

    /// Flat `key=value` form.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put("variant", self.variant.as_str().into());
        put("cell", self.cell.as_str().into());
        put("layers", self.layers.to_string());
        put("vocab_size", self.vocab_size.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("hid_size", self.hid_size.to_string());
        put("fs_out_size", self.fs_out_size.to_string());
        put("fc1_hid_size", self.fc1_hid_size.to_string());
        put("fc2_hid_size", self.fc2_hid_size.to_string());
        put("k", self.k.to_string());
        put("dropout", self.dropout.to_string());
        put("image_dim", self.image_dim.to_string());
        put("regions", self.regions.to_string());
        put("region_dim", self.region_dim.to_string());
        put("gru_bias", self.gru_bias.to_string());
        put("fusion_tanh", self.fusion_tanh.to_string());
        m
    }

    /// Overrides fields from `key=value` pairs; unknown keys are errors.
    pub fn apply_kv<'a>(&mut self, kv: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {k}")))
        }
        for (k, v) in kv {
            match k {
                "variant" => self.variant = FusionVariant::parse(v)?,
                "cell" => self.cell = CellKind::parse(v)?,
                "layers" => self.layers = num(k, v)?,
                "vocab_size" => self.vocab_size = num(k, v)?,
                "embed_dim" => self.embed_dim = num(k, v)?,
                "hid_size" => self.hid_size = num(k, v)?,
                "fs_out_size" => self.fs_out_size = num(k, v)?,
                "fc1_hid_size" => self.fc1_hid_size = num(k, v)?,
                "fc2_hid_size" => self.fc2_hid_size = num(k, v)?,
                "k" => self.k = num(k, v)?,
                "dropout" => self.dropout = num(k, v)?,
                "image_dim" => self.image_dim = num(k, v)?,
                "regions" => self.regions = num(k, v)?,
                "region_dim" => self.region_dim = num(k, v)?,
                "gru_bias" => self.gru_bias = num(k, v)?,
                "fusion_tanh" => self.fusion_tanh = num(k, v)?,
                other => return Err(Error::Config(format!("unknown model key {other:?}"))),
            }
        }
        Ok(())
    }
}

/// The two fully connected layers applied to each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchParams {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Scalar scoring layer on the absolute difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub fc_out: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FusionParams {
    Pointwise(PointwiseFusionParams),
    San(SanParams),
    None,
}

/// `relu(fc2(relu(fc1 z)))`, `z [n, F]` → `[n, fc2_hid]`.
pub fn branch_forward<T: Scalar>(g: &mut Graph<'_, T>, z: NodeId, p: &BranchParams) -> Result<NodeId> {
    let h = p.fc1.forward(g, z)?;
    let h = g.relu(h);
    let h = p.fc2.forward(g, h)?;
    Ok(g.relu(h))
}

/// `sigmoid(fc_out(|branch(z_a) − branch(z_b)|))` → `[B, 1]`.
pub fn match_encodings<T: Scalar>(
    g: &mut Graph<'_, T>,
    z_a: NodeId,
    z_b: NodeId,
    branch: &BranchParams,
    head: &HeadParams,
) -> Result<NodeId> {
    let b = g.shape(z_a).0[0];
    let both = g.concat(z_a, z_b, 0)?;
    let out = branch_forward(g, both, branch)?;
    let oa = g.slice_rows(out, 0, b)?;
    let ob = g.slice_rows(out, b, 2 * b)?;
    head_forward(g, oa, ob, head)
}

fn head_forward<T: Scalar>(g: &mut Graph<'_, T>, oa: NodeId, ob: NodeId, head: &HeadParams) -> Result<NodeId> {
    let diff = g.sub(oa, ob)?;
    let dist = g.abs(diff);
    let logit = head.fc_out.forward(g, dist)?;
    Ok(g.sigmoid(logit))
}

/// A complete matcher: configuration, parameters and their layout.
#[derive(Debug, Clone)]
pub struct MatcherModel<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub embedding: EmbeddingTable,
    pub encoder: SequenceEncoder,
    pub fusion: FusionParams,
    pub branch: BranchParams,
    pub head: HeadParams,
}

/// Forward results for a pair batch.
pub struct PairForward {
    /// `[B, 1]` duplicate probabilities.
    pub probs: NodeId,
    /// SAN attention distributions over the stacked `2B` records (rows
    /// `0..B` are side a).
    pub attention: Vec<NodeId>,
}

impl<T: Scalar> MatcherModel<T> {
    /// Initializes every parameter from the `"init"` fork of `seed`.
    /// Pretrained embeddings, if given, are frozen.
    pub fn new(config: ModelConfig, seed: u64, pretrained: Option<&PretrainedEmbeddings>) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed).fork("init");
        let mut store = ParamStore::new();
        let embedding = match pretrained {
            Some(p) => {
                if p.dim != config.embed_dim || p.values.len() != config.vocab_size * p.dim {
                    return Err(Error::DimMismatch {
                        expected: config.vocab_size * config.embed_dim,
                        found: p.values.len(),
                    });
                }
                let values = p.values.iter().map(|&v| <T as Scalar>::from_f32(v)).collect();
                EmbeddingTable::from_values(&mut store, "embedding.weight", config.vocab_size, p.dim, values, false)?
            }
            None => EmbeddingTable::random(
                &mut store,
                "embedding.weight",
                config.vocab_size,
                config.embed_dim,
                &mut rng,
            )?,
        };
        let encoder = SequenceEncoder::register(
            &mut store,
            "encoder",
            config.cell,
            config.layers,
            config.embed_dim,
            config.hid_size,
            config.gru_bias,
            &mut rng,
        )?;
        let fusion = match config.variant {
            FusionVariant::Pointwise => FusionParams::Pointwise(PointwiseFusionParams::register(
                &mut store,
                "fusion",
                config.hid_size,
                config.image_dim,
                config.fs_out_size,
                config.fusion_tanh,
                &mut rng,
            )?),
            FusionVariant::San => FusionParams::San(SanParams::register(
                &mut store,
                "fusion",
                config.region_dim,
                config.fs_out_size,
                config.k,
                &mut rng,
            )?),
            FusionVariant::None => FusionParams::None,
        };
        let branch = BranchParams {
            fc1: Linear::register(
                &mut store,
                "branch.fc1",
                config.fused_dim(),
                config.fc1_hid_size,
                &mut rng,
            )?,
            fc2: Linear::register(
                &mut store,
                "branch.fc2",
                config.fc1_hid_size,
                config.fc2_hid_size,
                &mut rng,
            )?,
        };
        let head = HeadParams {
            fc_out: Linear::register_zero_bias(&mut store, "head.fc_out", config.fc2_hid_size, 1, &mut rng)?,
        };
        Ok(Self {
            config,
            store,
            embedding,
            encoder,
            fusion,
            branch,
            head,
        })
    }

    /// Checks that `features` has the kind and shape this model reads.
    pub fn check_features(&self, features: Option<&FeatureStore>) -> Result<()> {
        let Some(kind) = self.config.variant.feature_kind() else {
            return Ok(());
        };
        let f = features
            .ok_or_else(|| Error::Config(format!("{} fusion needs a feature store", self.config.variant.as_str())))?;
        if f.kind() != kind {
            return Err(Error::Config(format!(
                "{} fusion needs {:?} features, got {:?}",
                self.config.variant.as_str(),
                kind,
                f.kind()
            )));
        }
        let (regions, dim) = match kind {
            FeatureKind::Global => (1, self.config.image_dim),
            FeatureKind::Regional => (self.config.regions, self.config.region_dim),
        };
        if f.regions() != regions || f.dim() != dim {
            return Err(Error::DimMismatch {
                expected: regions * dim,
                found: f.regions() * f.dim(),
            });
        }
        Ok(())
    }

    /// Encodes records into `[n, fused_dim]`; returns attention nodes for
    /// SAN.
    pub fn encode_records(
        &self,
        g: &mut Graph<'_, T>,
        records: &[&Record],
        features: Option<&FeatureStore>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let batch = SequenceBatch::from_records(records)?;
        let v_d = encode_sequence(g, &batch, &self.embedding, &self.encoder)?;
        let gather = |f: &FeatureStore| -> Result<Vec<T>> {
            let mut out = Vec::with_capacity(records.len() * f.regions() * f.dim());
            for r in records {
                out.extend(f.get(r.feature_key)?.values.iter().map(|&v| <T as Scalar>::from_f32(v)));
            }
            Ok(out)
        };
        match &self.fusion {
            FusionParams::Pointwise(p) => {
                self.check_features(features)?;
                let f = features.expect("checked");
                let img = g.constant([records.len(), f.dim()], gather(f)?)?;
                Ok((
                    pointwise_fuse(g, v_d, img, p, self.config.dropout, mode, rng)?,
                    Vec::new(),
                ))
            }
            FusionParams::San(p) => {
                self.check_features(features)?;
                let f = features.expect("checked");
                let raw = g.constant([records.len(), f.regions(), f.dim()], gather(f)?)?;
                san_fuse(g, v_d, raw, p, self.config.dropout, mode, rng)
            }
            FusionParams::None => Ok((g.dropout(v_d, self.config.dropout, mode.is_train(), rng)?, Vec::new())),
        }
    }

    /// Scores `a[i]` against `b[i]` for every `i`.
    pub fn forward_pairs(
        &self,
        g: &mut Graph<'_, T>,
        a: &[&Record],
        b: &[&Record],
        features: Option<&FeatureStore>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<PairForward> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "forward_pairs",
                left: vec![a.len()],
                right: vec![b.len()],
            });
        }
        let n = a.len();
        let stacked: Vec<&Record> = a.iter().chain(b).copied().collect();
        let (z, attention) = self.encode_records(g, &stacked, features, mode, rng)?;
        let out = branch_forward(g, z, &self.branch)?;
        let oa = g.slice_rows(out, 0, n)?;
        let ob = g.slice_rows(out, n, 2 * n)?;
        let probs = head_forward(g, oa, ob, &self.head)?;
        Ok(PairForward { probs, attention })
    }

    /// Evaluation-mode probabilities for a pair batch.
    pub fn predict(&self, a: &[&Record], b: &[&Record], features: Option<&FeatureStore>) -> Result<Vec<f32>> {
        let mut g = Graph::new(&self.store);
        let mut rng = RngStream::new(0);
        let out = self.forward_pairs(&mut g, a, b, features, Mode::Eval, &mut rng)?;
        Ok(g.value(out.probs).iter().map(|&v| Scalar::to_f32(v)).collect())
    }

    /// Evaluation-mode attention traces for each record (SAN only).
    pub fn attention_traces(
        &self,
        records: &[&Record],
        features: Option<&FeatureStore>,
    ) -> Result<Vec<AttentionTrace>> {
        let mut g = Graph::new(&self.store);
        let (_, nodes) = self.encode_records(&mut g, records, features, Mode::Eval, &mut RngStream::new(0))?;
        if nodes.is_empty() {
            return Err(Error::Config("attention traces exist only for the san variant".into()));
        }
        Ok((0..records.len())
            .map(|b| AttentionTrace::from_nodes(&g, &nodes, b))
            .collect())
    }
}
