//! Word embeddings and recurrent description encoders.
//!
//! Sequences are processed time-major: at step `t` the batch column of token
//! ids is looked up in the embedding table and fed through every layer.
//! Positions holding PAD carry each row's state through unchanged, so a
//! row's encoding is its top-layer hidden state after its last real token,
//! however much padding follows.

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::autodiff::{lit, Graph, NodeId, ParamId, ParamStore, Scalar};
use crate::dataset::{Record, Vocabulary, PAD};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Default embedding width.
pub const DEFAULT_EMBED_DIM: usize = 300;

/// `|V| × E` lookup table stored as one parameter. Row 0 (PAD) is zero and
/// never updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub weight: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Registers a table with `N(0, 1)` rows (PAD zeroed).
    pub fn random<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let values = (0..vocab_size * dim).map(|_| lit(rng.normal())).collect();
        Self::from_values(store, name, vocab_size, dim, values, true)
    }

    pub fn from_values<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab_size: usize,
        dim: usize,
        mut values: Vec<T>,
        trainable: bool,
    ) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::Config("embedding table must be non-empty".into()));
        }
        let head = dim.min(values.len());
        values[..head].iter_mut().for_each(|v| *v = T::zero());
        let weight = store.add(name, [vocab_size, dim], values)?;
        let p = store.get_mut(weight);
        p.pinned_zero_row = Some(PAD as usize);
        p.requires_grad = trainable;
        Ok(Self {
            weight,
            vocab_size,
            dim,
        })
    }

    pub fn is_trainable<T: Scalar>(&self, store: &ParamStore<T>) -> bool {
        store.get(self.weight).requires_grad
    }
}

/// Embedding rows read from a text file, aligned with a vocabulary.
#[derive(Debug, Clone)]
pub struct PretrainedEmbeddings {
    pub dim: usize,
    /// `|V| × dim`, row-major.
    pub values: Vec<f32>,
    /// Fraction of non-special vocabulary tokens found in the file.
    pub coverage: f64,
}

/// Reads `token v1 … vE` lines (an optional leading `count dim` line is
/// skipped). Vocabulary tokens found in the file take its vector; the rest
/// are drawn from `N(0, 1)` in vocabulary order; PAD is zero.
pub fn load_pretrained_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    rng: &mut RngStream,
) -> Result<PretrainedEmbeddings> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut dim: Option<usize> = None;
    let mut header_dim: Option<usize> = None;
    let mut found: Vec<Option<Vec<f32>>> = vec![None; vocab.len()];
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if n == 0 && rest.len() == 1 && token.parse::<u64>().is_ok() {
            if let Ok(d) = rest[0].parse::<usize>() {
                header_dim = Some(d);
                continue;
            }
        }
        let vector = rest
            .iter()
            .map(|s| s.parse::<f32>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| Error::BadEmbeddingFile {
                line: lineno,
                reason: "non-numeric or non-finite component".into(),
            })?;
        let expected = *dim.get_or_insert(header_dim.unwrap_or(vector.len()));
        if vector.len() != expected || expected == 0 {
            return Err(Error::BadEmbeddingFile {
                line: lineno,
                reason: format!("expected {expected} components, found {}", vector.len()),
            });
        }
        if let Some(id) = vocab.get(token) {
            if id as usize != PAD as usize {
                found[id as usize].get_or_insert(vector);
            }
        }
    }
    let dim = dim.or(header_dim).ok_or_else(|| Error::BadEmbeddingFile {
        line: 0,
        reason: "no vectors in file".into(),
    })?;
    let mut values = Vec::with_capacity(vocab.len() * dim);
    let mut hits = 0usize;
    for (id, row) in found.into_iter().enumerate() {
        match row {
            _ if id == PAD as usize => values.extend(std::iter::repeat_n(0.0, dim)),
            Some(v) => {
                if !crate::dataset::is_special(id as u32) {
                    hits += 1;
                }
                values.extend(v);
            }
            None => values.extend((0..dim).map(|_| rng.normal() as f32)),
        }
    }
    let words = vocab.len() - crate::dataset::NUM_SPECIALS;
    Ok(PretrainedEmbeddings {
        dim,
        values,
        coverage: if words == 0 { 1.0 } else { hits as f64 / words as f64 },
    })
}

/// Token ids `B × L` plus the derived content mask (true off PAD).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub len: usize,
    pub token_ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl SequenceBatch {
    pub fn new(rows: &[&[u32]]) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.len());
        let mut token_ids = Vec::with_capacity(rows.len() * len);
        for r in rows {
            if r.len() != len {
                return Err(Error::ShapeMismatch {
                    op: "sequence_batch",
                    left: vec![len],
                    right: vec![r.len()],
                });
            }
            token_ids.extend_from_slice(r);
        }
        let mask = token_ids.iter().map(|&t| t != PAD).collect();
        Ok(Self {
            batch: rows.len(),
            len,
            token_ids,
            mask,
        })
    }

    pub fn from_records(records: &[&Record]) -> Result<Self> {
        let rows: Vec<&[u32]> = records.iter().map(|r| r.token_ids.as_slice()).collect();
        Self::new(&rows)
    }

    fn column(&self, t: usize) -> Vec<usize> {
        (0..self.batch)
            .map(|b| self.token_ids[b * self.len + t] as usize)
            .collect()
    }

    fn mask_column(&self, t: usize) -> Vec<bool> {
        (0..self.batch).map(|b| self.mask[b * self.len + t]).collect()
    }

    /// One past the last non-PAD position over all rows. Errors if some row
    /// is entirely PAD.
    pub fn active_len(&self) -> Result<usize> {
        let mut end = 0;
        for b in 0..self.batch {
            let row = &self.mask[b * self.len..(b + 1) * self.len];
            match row.iter().rposition(|&m| m) {
                Some(p) => end = end.max(p + 1),
                None => {
                    return Err(Error::ContractViolation(format!(
                        "row {b} of the sequence batch is all padding"
                    )))
                }
            }
        }
        Ok(end)
    }
}

/// Looks up every token: `B × L × E`, PAD positions zero.
pub fn embed_sequence<T: Scalar>(
    g: &mut Graph<'_, T>,
    batch: &SequenceBatch,
    table: &EmbeddingTable,
) -> Result<NodeId> {
    let w = g.param(table.weight);
    let ids: Vec<usize> = batch.token_ids.iter().map(|&t| t as usize).collect();
    let flat = g.gather_rows(w, &ids)?;
    g.reshape(flat, [batch.batch, batch.len, table.dim])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell {other:?}"))),
        }
    }
}

/// GRU weights over the concatenation `[h_{t-1}, x_t]`, each `(H, H + E)`.
/// Biases are off unless requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w: ParamId,
    pub bias: Option<[ParamId; 3]>,
    pub hidden: usize,
    pub input: usize,
}

impl GruParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        bias: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let fan = hidden + input;
        let shape = [hidden, fan];
        let w_z = store.add_uniform(&format!("{prefix}.w_z"), shape, fan, rng)?;
        let w_r = store.add_uniform(&format!("{prefix}.w_r"), shape, fan, rng)?;
        let w = store.add_uniform(&format!("{prefix}.w"), shape, fan, rng)?;
        let bias = if bias {
            Some([
                store.add_uniform(&format!("{prefix}.b_z"), [hidden], fan, rng)?,
                store.add_uniform(&format!("{prefix}.b_r"), [hidden], fan, rng)?,
                store.add_uniform(&format!("{prefix}.b"), [hidden], fan, rng)?,
            ])
        } else {
            None
        };
        Ok(Self {
            w_z,
            w_r,
            w,
            bias,
            hidden,
            input,
        })
    }
}

/// LSTM weights `(H, H + E)` and biases `(H,)` for the forget, input,
/// candidate and output transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w_f: ParamId,
    pub w_i: ParamId,
    pub w_c: ParamId,
    pub w_o: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_c: ParamId,
    pub b_o: ParamId,
    pub hidden: usize,
    pub input: usize,
}

impl LstmParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let fan = hidden + input;
        let mut w =
            |s: &str, store: &mut ParamStore<T>| store.add_uniform(&format!("{prefix}.w_{s}"), [hidden, fan], fan, rng);
        let (w_f, w_i, w_c, w_o) = (w("f", store)?, w("i", store)?, w("c", store)?, w("o", store)?);
        let mut b =
            |s: &str, store: &mut ParamStore<T>| store.add_uniform(&format!("{prefix}.b_{s}"), [hidden], fan, rng);
        let (b_f, b_i, b_c, b_o) = (b("f", store)?, b("i", store)?, b("c", store)?, b("o", store)?);
        Ok(Self {
            w_f,
            w_i,
            w_c,
            w_o,
            b_f,
            b_i,
            b_c,
            b_o,
            hidden,
            input,
        })
    }
}

fn check_step_shapes<T: Scalar>(g: &Graph<'_, T>, x: NodeId, h: NodeId, input: usize, hidden: usize) -> Result<()> {
    let (xs, hs) = (g.shape(x), g.shape(h));
    let ok = xs.rank() == 2 && hs.rank() == 2 && xs.0[1] == input && hs.0[1] == hidden && xs.0[0] == hs.0[0];
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "recurrent_step",
            left: xs.0.clone(),
            right: hs.0.clone(),
        });
    }
    Ok(())
}

fn affine<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, w: ParamId, b: Option<ParamId>) -> Result<NodeId> {
    let wn = g.param(w);
    let y = g.matmul_t(x, wn)?;
    match b {
        Some(b) => {
            let bn = g.param(b);
            g.broadcast_add(y, bn)
        }
        None => Ok(y),
    }
}

/// One GRU step on a batch: `x [B, E]`, `h_prev [B, H]` → `h [B, H]`.
///
/// ```text
/// z = σ(W_z [h_prev, x])     r = σ(W_r [h_prev, x])
/// h̃ = tanh(W [r ⊙ h_prev, x])
/// h = (1 − z) ⊙ h_prev + z ⊙ h̃
/// ```
pub fn gru_step<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, h_prev: NodeId, p: &GruParams) -> Result<NodeId> {
    check_step_shapes(g, x, h_prev, p.input, p.hidden)?;
    let hx = g.concat(h_prev, x, 1)?;
    let zl = affine(g, hx, p.w_z, p.bias.map(|b| b[0]))?;
    let z = g.sigmoid(zl);
    let rl = affine(g, hx, p.w_r, p.bias.map(|b| b[1]))?;
    let r = g.sigmoid(rl);
    let rh = g.pointwise_mul(r, h_prev)?;
    let rhx = g.concat(rh, x, 1)?;
    let cl = affine(g, rhx, p.w, p.bias.map(|b| b[2]))?;
    let cand = g.tanh(cl);
    let keep = g.one_minus(z);
    let old = g.pointwise_mul(keep, h_prev)?;
    let new = g.pointwise_mul(z, cand)?;
    g.add(old, new)
}

/// One LSTM step: returns `(h, c)`.
///
/// ```text
/// f = σ(W_f [h_prev, x] + b_f)   i = σ(W_i [h_prev, x] + b_i)
/// c̃ = tanh(W_C [h_prev, x] + b_C) o = σ(W_o [h_prev, x] + b_o)
/// c = f ⊙ c_prev + i ⊙ c̃        h = o ⊙ tanh(c)
/// ```
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    p: &LstmParams,
) -> Result<(NodeId, NodeId)> {
    check_step_shapes(g, x, h_prev, p.input, p.hidden)?;
    if g.shape(c_prev) != g.shape(h_prev) {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            left: g.shape(h_prev).0.clone(),
            right: g.shape(c_prev).0.clone(),
        });
    }
    let hx = g.concat(h_prev, x, 1)?;
    let fl = affine(g, hx, p.w_f, Some(p.b_f))?;
    let f = g.sigmoid(fl);
    let il = affine(g, hx, p.w_i, Some(p.b_i))?;
    let i = g.sigmoid(il);
    let cl = affine(g, hx, p.w_c, Some(p.b_c))?;
    let cand = g.tanh(cl);
    let ol = affine(g, hx, p.w_o, Some(p.b_o))?;
    let o = g.sigmoid(ol);
    let fc = g.pointwise_mul(f, c_prev)?;
    let ic = g.pointwise_mul(i, cand)?;
    let c = g.add(fc, ic)?;
    let tc = g.tanh(c);
    let h = g.pointwise_mul(o, tc)?;
    Ok((h, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellParams {
    Gru(GruParams),
    Lstm(LstmParams),
}

/// Stacked recurrent encoder: layer 0 reads embeddings, layer `k` reads the
/// hidden states of layer `k − 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceEncoder {
    pub cell: CellKind,
    pub layers: Vec<CellParams>,
    pub hidden: usize,
}

impl SequenceEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cell: CellKind,
        num_layers: usize,
        input: usize,
        hidden: usize,
        gru_bias: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if num_layers == 0 || hidden == 0 {
            return Err(Error::Config("encoder needs at least one layer and hidden size".into()));
        }
        let layers = (0..num_layers)
            .map(|k| {
                let name = format!("{prefix}.layer{k}");
                let inp = if k == 0 { input } else { hidden };
                Ok(match cell {
                    CellKind::Gru => CellParams::Gru(GruParams::register(store, &name, inp, hidden, gru_bias, rng)?),
                    CellKind::Lstm => CellParams::Lstm(LstmParams::register(store, &name, inp, hidden, rng)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { cell, layers, hidden })
    }
}

/// Encodes a batch into `v_d [B, H]`: the top-layer hidden state after the
/// final position, with PAD positions carrying state unchanged. Steps past
/// the last non-PAD position of every row are skipped; they would be pure
/// carries.
pub fn encode_sequence<T: Scalar>(
    g: &mut Graph<'_, T>,
    batch: &SequenceBatch,
    table: &EmbeddingTable,
    encoder: &SequenceEncoder,
) -> Result<NodeId> {
    if batch.batch == 0 {
        return Err(Error::ContractViolation("empty sequence batch".into()));
    }
    let steps = batch.active_len()?;
    let h_dim = encoder.hidden;
    let zeros = vec![T::zero(); batch.batch * h_dim];
    let init = g.constant([batch.batch, h_dim], zeros)?;
    let mut h = vec![init; encoder.layers.len()];
    let mut c = vec![init; encoder.layers.len()];
    let table_node = g.param(table.weight);
    for t in 0..steps {
        let mask = batch.mask_column(t);
        let all_live = mask.iter().all(|&m| m);
        let mut x = g.gather_rows(table_node, &batch.column(t))?;
        for (k, layer) in encoder.layers.iter().enumerate() {
            match layer {
                CellParams::Gru(p) => {
                    let nh = gru_step(g, x, h[k], p)?;
                    h[k] = if all_live { nh } else { g.select_rows(&mask, nh, h[k])? };
                }
                CellParams::Lstm(p) => {
                    let (nh, nc) = lstm_step(g, x, h[k], c[k], p)?;
                    if all_live {
                        h[k] = nh;
                        c[k] = nc;
                    } else {
                        h[k] = g.select_rows(&mask, nh, h[k])?;
                        c[k] = g.select_rows(&mask, nc, c[k])?;
                    }
                }
            }
            x = h[k];
        }
    }
    Ok(*h.last().expect("at least one layer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn matvec(w: &[f64], rows: usize, v: &[f64]) -> Vec<f64> {
        let cols = v.len();
        (0..rows)
            .map(|r| (0..cols).map(|c| w[r * cols + c] * v[c]).sum())
            .collect()
    }

    // Straight-line GRU on plain vectors.
    fn gru_oracle(store: &ParamStore<f64>, p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hx: Vec<f64> = h.iter().chain(x).copied().collect();
        let z: Vec<f64> = matvec(&store.get(p.w_z).value, p.hidden, &hx)
            .into_iter()
            .map(sig)
            .collect();
        let r: Vec<f64> = matvec(&store.get(p.w_r).value, p.hidden, &hx)
            .into_iter()
            .map(sig)
            .collect();
        let rhx: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a * b).chain(x.iter().copied()).collect();
        let cand: Vec<f64> = matvec(&store.get(p.w).value, p.hidden, &rhx)
            .into_iter()
            .map(f64::tanh)
            .collect();
        (0..p.hidden).map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j]).collect()
    }

    #[test]
    fn gru_zero_weights_halves_state() {
        let mut store = ParamStore::<f64>::new();
        let p = GruParams::register(&mut store, "g", 2, 3, false, &mut RngStream::new(0)).unwrap();
        for id in [p.w_z, p.w_r, p.w] {
            store.get_mut(id).value.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&store);
        let x = g.constant([1, 2], vec![0.3, -0.7]).unwrap();
        let h = g.constant([1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let out = gru_step(&mut g, x, h, &p).unwrap();
        assert_eq!(g.value(out), &[0.5, -1.0, 0.25]);
        let h0 = g.constant([1, 3], vec![0.0; 3]).unwrap();
        let out = gru_step(&mut g, x, h0, &p).unwrap();
        assert_eq!(g.value(out), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gru_matches_oracle() {
        let mut rng = RngStream::new(4);
        let mut store = ParamStore::<f64>::new();
        let p = GruParams::register(&mut store, "g", 3, 4, false, &mut rng).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let want = gru_oracle(&store, &p, &x, &h);
        let mut g = Graph::new(&store);
        let xn = g.constant([1, 3], x).unwrap();
        let hn = g.constant([1, 4], h).unwrap();
        let out = gru_step(&mut g, xn, hn, &p).unwrap();
        for (a, b) in g.value(out).iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_zero_params_closed_form() {
        let mut store = ParamStore::<f64>::new();
        let p = LstmParams::register(&mut store, "l", 2, 2, &mut RngStream::new(0)).unwrap();
        store.iter_mut().for_each(|q| q.value.iter_mut().for_each(|v| *v = 0.0));
        let mut g = Graph::new(&store);
        let x = g.constant([1, 2], vec![1.0, 2.0]).unwrap();
        let h = g.constant([1, 2], vec![0.3, 0.3]).unwrap();
        let c = g.constant([1, 2], vec![2.0, -4.0]).unwrap();
        let (hn, cn) = lstm_step(&mut g, x, h, c, &p).unwrap();
        assert_eq!(g.value(cn), &[1.0, -2.0]);
        assert_eq!(g.value(hn), &[0.5 * 1f64.tanh(), 0.5 * (-2f64).tanh()]);
    }

    fn setup(cell: CellKind, layers: usize) -> (ParamStore<f64>, EmbeddingTable, SequenceEncoder) {
        let mut rng = RngStream::new(11);
        let mut store = ParamStore::<f64>::new();
        let table = EmbeddingTable::random(&mut store, "emb", 9, 3, &mut rng).unwrap();
        let enc = SequenceEncoder::register(&mut store, "enc", cell, layers, 3, 4, false, &mut rng).unwrap();
        (store, table, enc)
    }

    #[test]
    fn padding_never_changes_encoding() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let (store, table, enc) = setup(cell, 2);
            let short: Vec<u32> = vec![1, 5, 6, 2];
            let mut long = short.clone();
            long.extend([0; 7]);
            let mut g = Graph::new(&store);
            let a = encode_sequence(&mut g, &SequenceBatch::new(&[&short]).unwrap(), &table, &enc).unwrap();
            let b = encode_sequence(&mut g, &SequenceBatch::new(&[&long]).unwrap(), &table, &enc).unwrap();
            assert_eq!(g.value(a), g.value(b));
            // Same row padded differently inside a mixed batch.
            let other: Vec<u32> = vec![1, 4, 4, 4, 4, 4, 4, 7, 8, 3, 2];
            let mixed = encode_sequence(&mut g, &SequenceBatch::new(&[&long, &other]).unwrap(), &table, &enc).unwrap();
            assert_eq!(&g.value(mixed)[..4], g.value(a));
        }
    }

    #[test]
    fn single_token_is_three_steps() {
        let (store, table, enc) = setup(CellKind::Gru, 1);
        let CellParams::Gru(p) = enc.layers[0] else {
            unreachable!()
        };
        let mut g = Graph::new(&store);
        let v = encode_sequence(&mut g, &SequenceBatch::new(&[&[1, 7, 2, 0, 0]]).unwrap(), &table, &enc).unwrap();
        let emb = &store.get(table.weight).value;
        let mut h = vec![0.0; 4];
        for tok in [1usize, 7, 2] {
            h = gru_oracle(&store, &p, &emb[tok * 3..tok * 3 + 3], &h);
        }
        for (a, b) in g.value(v).iter().zip(h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_pad_row_rejected() {
        let (store, table, enc) = setup(CellKind::Gru, 1);
        let mut g = Graph::new(&store);
        let batch = SequenceBatch::new(&[&[1, 2], &[0, 0]]).unwrap();
        assert!(matches!(
            encode_sequence(&mut g, &batch, &table, &enc),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn embed_pad_is_zero_and_ids_checked() {
        let (store, table, _) = setup(CellKind::Gru, 1);
        let mut g = Graph::new(&store);
        let batch = SequenceBatch::new(&[&[5, 0, 5]]).unwrap();
        let e = embed_sequence(&mut g, &batch, &table).unwrap();
        let v = g.value(e);
        assert_eq!(&v[3..6], &[0.0; 3]);
        assert_eq!(&v[0..3], &v[6..9]);
        let bad = SequenceBatch::new(&[&[9]]).unwrap();
        assert!(matches!(
            embed_sequence(&mut g, &bad, &table),
            Err(Error::IdOutOfRange { id: 9, size: 9 })
        ));
    }

    #[test]
    fn four_step_unroll_grad_check() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let (mut store, table, enc) = setup(cell, 2);
            let batch = SequenceBatch::new(&[&[1, 4, 5, 2], &[1, 6, 2, 0]]).unwrap();
            let report = grad_check(
                &mut store,
                |g| {
                    let v = encode_sequence(g, &batch, &table, &enc)?;
                    let s = g.tanh(v);
                    g.sum(s, None)
                },
                &GradCheckConfig::double(),
            )
            .unwrap();
            assert!(report.passed, "{cell:?}: {:?}", report.worst());
        }
    }

    #[test]
    fn pad_row_gets_no_update() {
        let (mut store, table, enc) = setup(CellKind::Gru, 1);
        let batch = SequenceBatch::new(&[&[1, 4, 2, 0]]).unwrap();
        let grads = {
            let mut g = Graph::new(&store);
            let v = encode_sequence(&mut g, &batch, &table, &enc).unwrap();
            let s = g.sum(v, None).unwrap();
            g.backward(s).unwrap()
        };
        store.accumulate(&grads);
        assert!(store.get(table.weight).grad[..3].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pretrained_file_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "3 2\nfoo 0.5 -1\nbar 2 3\nzzz 1 1\n").unwrap();
        let vocab = Vocabulary::build(&["foo baz"], 10);
        let emb = load_pretrained_embeddings(&path, &vocab, &mut RngStream::new(1)).unwrap();
        assert_eq!(emb.dim, 2);
        let foo = vocab.get("foo").unwrap() as usize;
        assert_eq!(&emb.values[foo * 2..foo * 2 + 2], &[0.5, -1.0]);
        assert_eq!(&emb.values[..2], &[0.0, 0.0]);
        assert!((emb.coverage - 0.5).abs() < 1e-12);
        let again = load_pretrained_embeddings(&path, &vocab, &mut RngStream::new(1)).unwrap();
        assert_eq!(again.values, emb.values);
    }

    #[test]
    fn pretrained_inconsistent_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "a 1 2 3\nb 1 2\n").unwrap();
        let vocab = Vocabulary::build(&["a b"], 10);
        assert!(matches!(
            load_pretrained_embeddings(&path, &vocab, &mut RngStream::new(1)),
            Err(Error::BadEmbeddingFile { line: 2, .. })
        ));
    }
}
