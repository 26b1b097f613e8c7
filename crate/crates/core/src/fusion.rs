//! Joint text + image encodings.
//!
//! * Pointwise fusion projects the description encoding and the global image
//!   vector to a common width and multiplies them elementwise.
//! * The stacked attention network projects every image region to the query
//!   width, then refines the query `K` times: each layer scores all regions
//!   against the current query, takes the softmax-weighted region sum and
//!   adds it to the query.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::autodiff::{Graph, Linear, Mode, NodeId, ParamId, ParamStore, Scalar};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Default fused width.
pub const DEFAULT_FS_OUT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointwiseFusionParams {
    pub proj_text: Linear,
    pub proj_image: Linear,
    /// Apply `tanh` to both projections before multiplying.
    pub tanh: bool,
}

impl PointwiseFusionParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        text_dim: usize,
        image_dim: usize,
        out: usize,
        tanh: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            proj_text: Linear::register(store, &format!("{prefix}.proj_text"), text_dim, out, rng)?,
            proj_image: Linear::register(store, &format!("{prefix}.proj_image"), image_dim, out, rng)?,
            tanh,
        })
    }
}

/// `dropout(proj_text(v_d) ⊙ proj_image(g))` for a batch: `v_d [B, H]`,
/// `image [B, D_g]` → `[B, F]`. Dropout is active only in training mode.
pub fn pointwise_fuse<T: Scalar>(
    g: &mut Graph<'_, T>,
    v_d: NodeId,
    image: NodeId,
    params: &PointwiseFusionParams,
    dropout: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<NodeId> {
    let mut t = params.proj_text.forward(g, v_d)?;
    let mut m = params.proj_image.forward(g, image)?;
    if params.tanh {
        t = g.tanh(t);
        m = g.tanh(m);
    }
    let fused = g.pointwise_mul(t, m)?;
    g.dropout(fused, dropout, mode.is_train(), rng)
}

/// Per-layer attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayerParams {
    /// `(d, d)`
    pub w_ia: ParamId,
    /// `(d, d)`
    pub w_qa: ParamId,
    /// `(d,)`
    pub b_a: ParamId,
    /// `(1, d)`
    pub w_p: ParamId,
    /// `(1,)`
    pub b_p: ParamId,
    pub dim: usize,
}

impl AttentionLayerParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            w_ia: store.add_uniform(&format!("{prefix}.w_ia"), [dim, dim], dim, rng)?,
            w_qa: store.add_uniform(&format!("{prefix}.w_qa"), [dim, dim], dim, rng)?,
            b_a: store.add_uniform(&format!("{prefix}.b_a"), [dim], dim, rng)?,
            w_p: store.add_uniform(&format!("{prefix}.w_p"), [1, dim], dim, rng)?,
            b_p: store.add_uniform(&format!("{prefix}.b_p"), [1], dim, rng)?,
            dim,
        })
    }
}

/// Region projection plus `K` attention layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SanParams {
    pub project: Linear,
    pub layers: Vec<AttentionLayerParams>,
}

impl SanParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        region_dim: usize,
        dim: usize,
        k: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("attention needs at least one layer (K >= 1)".into()));
        }
        let project = Linear::register(store, &format!("{prefix}.project"), region_dim, dim, rng)?;
        let layers = (0..k)
            .map(|i| AttentionLayerParams::register(store, &format!("{prefix}.layer{i}"), dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self { project, layers })
    }

    pub fn dim(&self) -> usize {
        self.project.output
    }
}

fn dims3<T: Scalar>(g: &Graph<'_, T>, x: NodeId, op: &'static str) -> Result<(usize, usize, usize)> {
    let s = g.shape(x);
    if s.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op,
            left: s.0.clone(),
            right: vec![],
        });
    }
    Ok((s.0[0], s.0[1], s.0[2]))
}

/// Maps every region row with the same weights: `[B, R, D_r]` → `[B, R, d]`.
pub fn project_regions<T: Scalar>(g: &mut Graph<'_, T>, raw: NodeId, project: &Linear) -> Result<NodeId> {
    let (b, r, dr) = dims3(g, raw, "project_regions")?;
    if r == 0 {
        return Err(Error::ShapeMismatch {
            op: "project_regions",
            left: vec![b, r, dr],
            right: vec![],
        });
    }
    let flat = g.reshape(raw, [b * r, dr])?;
    let out = project.forward(g, flat)?;
    g.reshape(out, [b, r, project.output])
}

/// One attention layer over a batch: `v_i [B, R, d]`, `u_prev [B, d]` →
/// `(u [B, d], p [B, R])`.
///
/// ```text
/// h_A = tanh(v_I W_IAᵀ ⊕ (u_prev W_QAᵀ + b_A))   (query added to every region)
/// p   = softmax_regions(h_A W_Pᵀ + b_P)
/// u   = Σ_i p_i v_I[i] + u_prev
/// ```
pub fn attention_layer<T: Scalar>(
    g: &mut Graph<'_, T>,
    v_i: NodeId,
    u_prev: NodeId,
    p: &AttentionLayerParams,
) -> Result<(NodeId, NodeId)> {
    let (b, r, d) = dims3(g, v_i, "attention_layer")?;
    let us = g.shape(u_prev).0.clone();
    if d != p.dim || us != [b, d] {
        return Err(Error::ShapeMismatch {
            op: "attention_layer",
            left: vec![b, r, d],
            right: us,
        });
    }
    let flat = g.reshape(v_i, [b * r, d])?;
    let w_ia = g.param(p.w_ia);
    let img = g.matmul_t(flat, w_ia)?;
    let w_qa = g.param(p.w_qa);
    let q = g.matmul_t(u_prev, w_qa)?;
    let b_a = g.param(p.b_a);
    let q = g.broadcast_add(q, b_a)?;
    let q = g.repeat_rows(q, r)?;
    let pre = g.add(img, q)?;
    let h_a = g.tanh(pre);
    let w_p = g.param(p.w_p);
    let logits = g.matmul_t(h_a, w_p)?;
    let b_p = g.param(p.b_p);
    let logits = g.broadcast_add(logits, b_p)?;
    let logits = g.reshape(logits, [b, r])?;
    let probs = g.softmax(logits, 1)?;
    let p3 = g.reshape(probs, [b, 1, r])?;
    let attended = g.bmm(p3, v_i)?;
    let attended = g.reshape(attended, [b, d])?;
    let u = g.add(attended, u_prev)?;
    Ok((u, probs))
}

/// Runs all layers from `u_0 = v_d`: returns `dropout(u_K)` and the `K`
/// attention distributions (`[B, R]` each). `raw_regions` is `[B, R, D_r]`.
pub fn san_fuse<T: Scalar>(
    g: &mut Graph<'_, T>,
    v_d: NodeId,
    raw_regions: NodeId,
    params: &SanParams,
    dropout: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(NodeId, Vec<NodeId>)> {
    if params.layers.is_empty() {
        return Err(Error::Config("attention needs at least one layer (K >= 1)".into()));
    }
    let v_i = project_regions(g, raw_regions, &params.project)?;
    let mut u = v_d;
    let mut trace = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, p) = attention_layer(g, v_i, u, layer)?;
        u = next;
        trace.push(p);
    }
    let out = g.dropout(u, dropout, mode.is_train(), rng)?;
    Ok((out, trace))
}

/// Attention distributions of one record, `layers[k][region]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<f32>>,
}

impl AttentionTrace {
    /// Row `b` of every layer's `[B, R]` distribution node.
    pub fn from_nodes<T: Scalar>(g: &Graph<'_, T>, nodes: &[NodeId], b: usize) -> Self {
        let layers = nodes
            .iter()
            .map(|&n| {
                let r = g.shape(n).0[1];
                g.value(n)[b * r..(b + 1) * r]
                    .iter()
                    .map(|&v| Scalar::to_f32(v))
                    .collect()
            })
            .collect();
        Self { layers }
    }
}

pub const ATTENTION_HEADER: &str = "record_id,layer,region_index,weight";

/// Appends `record_id,layer,region_index,weight` rows (no header).
pub fn write_attention_rows(mut w: impl Write, record_id: u64, trace: &AttentionTrace) -> Result<()> {
    for (k, layer) in trace.layers.iter().enumerate() {
        for (i, p) in layer.iter().enumerate() {
            writeln!(w, "{record_id},{k},{i},{p}")?;
        }
    }
    Ok(())
}

/// Writes a header and the rows of every trace.
pub fn export_attention(path: impl AsRef<Path>, traces: &[(u64, AttentionTrace)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{ATTENTION_HEADER}")?;
    for (id, t) in traces {
        write_attention_rows(&mut w, *id, t)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`export_attention`]; records keep file order.
pub fn read_attention(path: impl AsRef<Path>) -> Result<Vec<(u64, AttentionTrace)>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut out: Vec<(u64, AttentionTrace)> = Vec::new();
    for (n, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let lineno = n as u64 + 1;
        if n == 0 {
            if line != ATTENTION_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("expected header {ATTENTION_HEADER}"),
                });
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<(u64, usize, usize, f32)> {
            if f.len() != 4 {
                return None;
            }
            Some((
                f[0].parse().ok()?,
                f[1].parse().ok()?,
                f[2].parse().ok()?,
                f[3].parse().ok()?,
            ))
        })();
        let (id, k, i, p) = parsed.ok_or_else(|| Error::Parse {
            line: lineno,
            reason: format!("malformed attention row {line:?}"),
        })?;
        if out.last().is_none_or(|(last, _)| *last != id) {
            out.push((id, AttentionTrace { layers: Vec::new() }));
        }
        let trace = &mut out.last_mut().expect("pushed").1;
        if k == trace.layers.len() {
            trace.layers.push(Vec::new());
        }
        let ok = k + 1 == trace.layers.len() && i == trace.layers[k].len();
        if !ok {
            return Err(Error::Parse {
                line: lineno,
                reason: "attention rows out of order".into(),
            });
        }
        trace.layers[k].push(p);
    }
    Ok(out)
}
