//! Attention-based path scorer trained with a margin ranking loss.
//!
//! Context rows `C` (m × d_p) and path-node rows `P` (k × d_n) are projected to
//! `d_model`, then:
//!
//! ```text
//! C' = SelfAttn(C)
//! A  = CrossAttn(Q = C', K = P, V = P)
//! S  = sigmoid(W · MeanPool(A) + b)
//! ```
//!
//! Each attention block is multi-head scaled dot-product attention with an
//! output projection and no residual or positional terms, so the score is
//! invariant to the order of both context rows and path nodes. Gradients are
//! computed analytically.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingSource, EmbeddingTable, Vector};
use crate::kgraph::{ConceptId, DocId, TemporalGraph};
use crate::pathgen::LabeledPathSample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss needs at least one negative score")]
    EmptyNegatives,
    #[error("training set is empty or a group lacks negatives")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("unknown document {0}")]
    UnknownDocument(DocId),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_n: usize,
    pub d_p: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            d_model: 32,
            heads: 2,
            d_n: 32,
            d_p: 32,
            margin: 0.3,
            lr: 0.05,
            epochs: 200,
            seed: 0,
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        let bad = |m: &str| Err(RankerError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_n == 0 || self.d_p == 0 {
            return bad("dimensions and heads must be positive");
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by heads");
        }
        if self.margin.is_nan() || self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Query/key/value and output projections of one multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

impl AttentionWeights {
    fn zeros(d: usize) -> Self {
        AttentionWeights {
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub config: RankerConfig,
    pub proj_ctx: Array2<f64>,
    pub proj_node: Array2<f64>,
    pub self_attn: AttentionWeights,
    pub cross_attn: AttentionWeights,
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

const TENSOR_NAMES: [&str; 12] = [
    "proj_ctx",
    "proj_node",
    "self_wq",
    "self_wk",
    "self_wv",
    "self_wo",
    "cross_wq",
    "cross_wk",
    "cross_wv",
    "cross_wo",
    "head_w",
    "head_b",
];

impl RankerParams {
    pub fn zeros(config: RankerConfig) -> Self {
        let d = config.d_model;
        RankerParams {
            config,
            proj_ctx: Array2::zeros((config.d_p, d)),
            proj_node: Array2::zeros((config.d_n, d)),
            self_attn: AttentionWeights::zeros(d),
            cross_attn: AttentionWeights::zeros(d),
            head_w: Array1::zeros(d),
            head_b: 0.0,
        }
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) weights from `config.seed`; bias starts at zero.
    pub fn init(config: RankerConfig) -> Result<Self, RankerError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, t) in p.tensors_mut() {
            if name == "head_b" {
                continue;
            }
            let fan_in = match name {
                "proj_ctx" => config.d_p,
                "proj_node" => config.d_n,
                _ => config.d_model,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in t.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
        }
        Ok(p)
    }

    /// Every parameter tensor as a flat slice, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        fn sl(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        vec![
            ("proj_ctx", sl(&self.proj_ctx)),
            ("proj_node", sl(&self.proj_node)),
            ("self_wq", sl(&self.self_attn.wq)),
            ("self_wk", sl(&self.self_attn.wk)),
            ("self_wv", sl(&self.self_attn.wv)),
            ("self_wo", sl(&self.self_attn.wo)),
            ("cross_wq", sl(&self.cross_attn.wq)),
            ("cross_wk", sl(&self.cross_attn.wk)),
            ("cross_wv", sl(&self.cross_attn.wv)),
            ("cross_wo", sl(&self.cross_attn.wo)),
            ("head_w", self.head_w.as_slice().expect("standard layout")),
            ("head_b", std::slice::from_ref(&self.head_b)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn sl(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        vec![
            ("proj_ctx", sl(&mut self.proj_ctx)),
            ("proj_node", sl(&mut self.proj_node)),
            ("self_wq", sl(&mut self.self_attn.wq)),
            ("self_wk", sl(&mut self.self_attn.wk)),
            ("self_wv", sl(&mut self.self_attn.wv)),
            ("self_wo", sl(&mut self.self_attn.wo)),
            ("cross_wq", sl(&mut self.cross_attn.wq)),
            ("cross_wk", sl(&mut self.cross_attn.wk)),
            ("cross_wv", sl(&mut self.cross_attn.wv)),
            ("cross_wo", sl(&mut self.cross_attn.wo)),
            ("head_w", self.head_w.as_slice_mut().expect("standard layout")),
            ("head_b", std::slice::from_mut(&mut self.head_b)),
        ]
    }

    fn shape_of(&self, name: &str) -> (usize, usize) {
        let c = &self.config;
        match name {
            "proj_ctx" => (c.d_p, c.d_model),
            "proj_node" => (c.d_n, c.d_model),
            "head_w" => (1, c.d_model),
            "head_b" => (1, 1),
            _ => (c.d_model, c.d_model),
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &RankerParams, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Text checkpoint: a `[config]` block followed by one `[tensor name rows cols]`
    /// block per parameter, values written in shortest round-trip form.
    pub fn to_checkpoint(&self) -> String {
        let c = &self.config;
        let mut s = String::from("# hgcr ranker checkpoint\n[config]\n");
        let _ = writeln!(s, "d_model={}", c.d_model);
        let _ = writeln!(s, "heads={}", c.heads);
        let _ = writeln!(s, "d_n={}", c.d_n);
        let _ = writeln!(s, "d_p={}", c.d_p);
        let _ = writeln!(s, "margin={}", c.margin);
        let _ = writeln!(s, "lr={}", c.lr);
        let _ = writeln!(s, "epochs={}", c.epochs);
        let _ = writeln!(s, "seed={}", c.seed);
        for (name, data) in self.tensors() {
            let (rows, cols) = self.shape_of(name);
            let _ = writeln!(s, "[tensor {name} {rows} {cols}]");
            for row in data.chunks(cols) {
                let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_checkpoint().as_bytes())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self, RankerError> {
        let err = |m: String| RankerError::Checkpoint(m);
        let mut lines = BufReader::new(r)
            .lines()
            .map(|l| l.map_err(|e| err(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .peekable();

        if lines.next().as_deref() != Some("[config]") {
            return Err(err("missing [config] block".into()));
        }
        let mut config = RankerConfig::default();
        while let Some(line) = lines.next_if(|l| !l.starts_with('[')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("bad config line {line:?}")))?;
            let perr = |e: &dyn std::fmt::Display| err(format!("{k}: {e}"));
            match k.trim() {
                "d_model" => config.d_model = v.trim().parse().map_err(|e| perr(&e))?,
                "heads" => config.heads = v.trim().parse().map_err(|e| perr(&e))?,
                "d_n" => config.d_n = v.trim().parse().map_err(|e| perr(&e))?,
                "d_p" => config.d_p = v.trim().parse().map_err(|e| perr(&e))?,
                "margin" => config.margin = v.trim().parse().map_err(|e| perr(&e))?,
                "lr" => config.lr = v.trim().parse().map_err(|e| perr(&e))?,
                "epochs" => config.epochs = v.trim().parse().map_err(|e| perr(&e))?,
                "seed" => config.seed = v.trim().parse().map_err(|e| perr(&e))?,
                other => return Err(err(format!("unknown config key {other:?}"))),
            }
        }
        config.validate()?;
        let mut params = RankerParams::zeros(config);
        let mut seen = Vec::new();
        while let Some(header) = lines.next() {
            let inner = header
                .strip_prefix("[tensor ")
                .and_then(|h| h.strip_suffix(']'))
                .ok_or_else(|| err(format!("bad tensor header {header:?}")))?;
            let parts: Vec<&str> = inner.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(err(format!("bad tensor header {header:?}")));
            };
            let name = TENSOR_NAMES
                .iter()
                .find(|n| **n == name)
                .ok_or_else(|| err(format!("unknown tensor {name}")))?;
            let shape = params.shape_of(name);
            let declared = (
                rows.parse::<usize>().map_err(|e| err(e.to_string()))?,
                cols.parse::<usize>().map_err(|e| err(e.to_string()))?,
            );
            if declared != shape {
                return Err(RankerError::ShapeMismatch(format!(
                    "{name}: checkpoint {declared:?}, config {shape:?}"
                )));
            }
            let mut values = Vec::with_capacity(shape.0 * shape.1);
            for _ in 0..shape.0 {
                let row = lines.next().ok_or_else(|| err(format!("{name}: truncated")))?;
                for tok in row.split_whitespace() {
                    values.push(tok.parse::<f64>().map_err(|e| err(format!("{name}: {e}")))?);
                }
            }
            let mut tensors = params.tensors_mut();
            let (_, dst) = tensors
                .iter_mut()
                .find(|(n, _)| n == name)
                .expect("name validated above");
            if values.len() != dst.len() {
                return Err(RankerError::ShapeMismatch(format!("{name}: wrong value count")));
            }
            dst.copy_from_slice(&values);
            seen.push(*name);
        }
        if seen.len() != TENSOR_NAMES.len() {
            return Err(err("missing tensors".into()));
        }
        if !params.is_finite() {
            return Err(err("non-finite parameter".into()));
        }
        Ok(params)
    }
}

/// Dense inputs for one scored sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    /// m × d_p context embeddings.
    pub contexts: Array2<f64>,
    /// k × d_n path-node embeddings.
    pub nodes: Array2<f64>,
}

impl SampleInput {
    pub fn from_vectors(contexts: &[Vector], nodes: &[Vector]) -> Result<Self, RankerError> {
        Ok(SampleInput {
            contexts: stack_rows(contexts)?,
            nodes: stack_rows(nodes)?,
        })
    }
}

fn stack_rows(rows: &[Vector]) -> Result<Array2<f64>, RankerError> {
    let dim = rows
        .first()
        .ok_or_else(|| RankerError::ShapeMismatch("no rows".into()))?
        .dim();
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.dim() != dim {
            return Err(RankerError::ShapeMismatch("ragged rows".into()));
        }
        out.row_mut(i).assign(&Array1::from(r.values().to_vec()));
    }
    Ok(out)
}

struct AttentionCache {
    q_in: Array2<f64>,
    kv_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

struct AttentionGrads {
    d_q_in: Array2<f64>,
    d_kv_in: Array2<f64>,
    weights: AttentionWeights,
}

fn softmax_rows(mut s: Array2<f64>) -> Array2<f64> {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    s
}

fn attention_forward(
    q_in: ArrayView2<'_, f64>,
    kv_in: ArrayView2<'_, f64>,
    w: &AttentionWeights,
    heads: usize,
) -> (Array2<f64>, AttentionCache) {
    let d = w.wq.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = q_in.dot(&w.wq);
    let k = kv_in.dot(&w.wk);
    let v = kv_in.dot(&w.wv);
    let mut concat = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let p = softmax_rows(scores);
        concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let out = concat.dot(&w.wo);
    (
        out,
        AttentionCache {
            q_in: q_in.to_owned(),
            kv_in: kv_in.to_owned(),
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

fn attention_backward(
    cache: &AttentionCache,
    w: &AttentionWeights,
    heads: usize,
    d_out: &Array2<f64>,
) -> AttentionGrads {
    let d = w.wq.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let d_wo = cache.concat.t().dot(d_out);
    let d_concat = d_out.dot(&w.wo.t());
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_oh = d_concat.slice(cols);
        let d_p = d_oh.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&d_oh));
        // softmax Jacobian applied row-wise
        let row_dot = (&d_p * p).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_s = p * &(&d_p - &row_dot) * scale;
        dq.slice_mut(cols).assign(&d_s.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&d_s.t().dot(&cache.q.slice(cols)));
    }
    AttentionGrads {
        d_q_in: dq.dot(&w.wq.t()),
        d_kv_in: dk.dot(&w.wk.t()) + dv.dot(&w.wv.t()),
        weights: AttentionWeights {
            wq: cache.q_in.t().dot(&dq),
            wk: cache.kv_in.t().dot(&dk),
            wv: cache.kv_in.t().dot(&dv),
            wo: d_wo,
        },
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct ForwardCache {
    self_cache: AttentionCache,
    cross_cache: AttentionCache,
    pooled: Array1<f64>,
    score: f64,
}

fn check_input(params: &RankerParams, x: &SampleInput) -> Result<(), RankerError> {
    let c = &params.config;
    if x.contexts.nrows() == 0 {
        return Err(RankerError::ShapeMismatch("need at least one context row".into()));
    }
    if x.nodes.nrows() < 3 {
        return Err(RankerError::ShapeMismatch(format!(
            "need at least 3 path nodes, got {}",
            x.nodes.nrows()
        )));
    }
    if x.contexts.ncols() != c.d_p || x.nodes.ncols() != c.d_n {
        return Err(RankerError::ShapeMismatch(format!(
            "contexts {}x{} / nodes {}x{} vs d_p={} d_n={}",
            x.contexts.nrows(),
            x.contexts.ncols(),
            x.nodes.nrows(),
            x.nodes.ncols(),
            c.d_p,
            c.d_n
        )));
    }
    Ok(())
}

fn forward_cached(params: &RankerParams, x: &SampleInput) -> Result<ForwardCache, RankerError> {
    check_input(params, x)?;
    let heads = params.config.heads;
    let ctx_proj = x.contexts.dot(&params.proj_ctx);
    let node_proj = x.nodes.dot(&params.proj_node);
    let (ctx_attn, self_cache) = attention_forward(ctx_proj.view(), ctx_proj.view(), &params.self_attn, heads);
    let (cross, cross_cache) = attention_forward(ctx_attn.view(), node_proj.view(), &params.cross_attn, heads);
    let pooled = cross.mean_axis(Axis(0)).expect("at least one row");
    let score = sigmoid(params.head_w.dot(&pooled) + params.head_b);
    Ok(ForwardCache {
        self_cache,
        cross_cache,
        pooled,
        score,
    })
}

/// Plausibility score in (0, 1).
pub fn forward(params: &RankerParams, x: &SampleInput) -> Result<f64, RankerError> {
    Ok(forward_cached(params, x)?.score)
}

/// Accumulates `d_score * ∂score/∂θ` into `grads`.
fn backward(params: &RankerParams, x: &SampleInput, cache: &ForwardCache, d_score: f64, grads: &mut RankerParams) {
    let heads = params.config.heads;
    let s = cache.score;
    let dz = d_score * s * (1.0 - s);
    grads.head_b += dz;
    grads.head_w.scaled_add(dz, &cache.pooled);

    let m = x.contexts.nrows() as f64;
    let row = &params.head_w * (dz / m);
    let d_cross = row
        .insert_axis(Axis(0))
        .broadcast((x.contexts.nrows(), params.config.d_model))
        .expect("broadcast row")
        .to_owned();

    let cg = attention_backward(&cache.cross_cache, &params.cross_attn, heads, &d_cross);
    let sg = attention_backward(&cache.self_cache, &params.self_attn, heads, &cg.d_q_in);
    let d_ctx_proj = &sg.d_q_in + &sg.d_kv_in;

    grads.proj_ctx += &x.contexts.t().dot(&d_ctx_proj);
    grads.proj_node += &x.nodes.t().dot(&cg.d_kv_in);
    for (dst, src) in [(&mut grads.self_attn, sg.weights), (&mut grads.cross_attn, cg.weights)] {
        dst.wq += &src.wq;
        dst.wk += &src.wk;
        dst.wv += &src.wv;
        dst.wo += &src.wo;
    }
}

/// Mean hinge `max(0, δ − (s⁺ − s⁻ᵢ))` over the negatives.
pub fn margin_loss(s_pos: f64, s_negs: &[f64], margin: f64) -> Result<f64, RankerError> {
    if s_negs.is_empty() {
        return Err(RankerError::EmptyNegatives);
    }
    let total: f64 = s_negs.iter().map(|&n| (margin - (s_pos - n)).max(0.0)).sum();
    Ok(total / s_negs.len() as f64)
}

/// One positive sample with every negative it is contrasted against.
#[derive(Debug, Clone)]
pub struct TrainingGroup {
    pub positive: SampleInput,
    pub negatives: Vec<SampleInput>,
}

/// Loss of one group and its exact gradient with respect to every parameter.
pub fn gradients(params: &RankerParams, group: &TrainingGroup) -> Result<(f64, RankerParams), RankerError> {
    if group.negatives.is_empty() {
        return Err(RankerError::EmptyNegatives);
    }
    let margin = params.config.margin;
    let pos = forward_cached(params, &group.positive)?;
    let negs = group
        .negatives
        .iter()
        .map(|x| forward_cached(params, x))
        .collect::<Result<Vec<_>, _>>()?;
    let neg_scores: Vec<f64> = negs.iter().map(|c| c.score).collect();
    let loss = margin_loss(pos.score, &neg_scores, margin)?;

    let n = negs.len() as f64;
    let mut grads = RankerParams::zeros(params.config);
    let mut d_pos = 0.0;
    for (x, cache) in group.negatives.iter().zip(&negs) {
        if margin - (pos.score - cache.score) > 0.0 {
            d_pos -= 1.0 / n;
            backward(params, x, cache, 1.0 / n, &mut grads);
        }
    }
    if d_pos != 0.0 {
        backward(params, &group.positive, &pos, d_pos, &mut grads);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean group loss per epoch, measured before each group's update.
    pub epoch_loss: Vec<f64>,
}

/// Plain gradient descent, one update per group, groups visited in order.
pub fn train(config: RankerConfig, groups: &[TrainingGroup]) -> Result<(RankerParams, TrainLog), RankerError> {
    let params = RankerParams::init(config)?;
    train_from(params, groups)
}

pub fn train_from(
    mut params: RankerParams,
    groups: &[TrainingGroup],
) -> Result<(RankerParams, TrainLog), RankerError> {
    if groups.is_empty() || groups.iter().any(|g| g.negatives.is_empty()) {
        return Err(RankerError::EmptyDataset);
    }
    let lr = params.config.lr;
    let mut log = TrainLog::default();
    for _ in 0..params.config.epochs {
        let mut total = 0.0;
        for g in groups {
            let (loss, grads) = gradients(&params, g)?;
            total += loss;
            params.add_scaled(&grads, -lr);
        }
        log.epoch_loss.push(total / groups.len() as f64);
    }
    Ok((params, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample: LabeledPathSample,
    pub score: f64,
}

/// Scores every sample and sorts by score descending; ties fall back to path
/// node order, then input order.
pub fn score_paths(
    params: &RankerParams,
    samples: Vec<(LabeledPathSample, SampleInput)>,
) -> Result<Vec<ScoredSample>, RankerError> {
    let mut scored = samples
        .into_iter()
        .map(|(sample, x)| Ok(ScoredSample { score: forward(params, &x)?, sample }))
        .collect::<Result<Vec<_>, RankerError>>()?;
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.sample.path.nodes.cmp(&b.sample.path.nodes))
    });
    Ok(scored)
}

/// Where context (document) vectors come from.
#[derive(Debug, Clone)]
pub enum DocVectors {
    /// Precomputed vectors keyed by document id.
    Table(EmbeddingTable),
    /// Unit-normalized mean of the document's concept vectors.
    ConceptMean(EmbeddingSource),
}

impl DocVectors {
    pub fn dim(&self) -> usize {
        match self {
            DocVectors::Table(t) => t.dim(),
            DocVectors::ConceptMean(s) => s.dim(),
        }
    }

    pub fn vector(&self, g: &TemporalGraph, id: &DocId) -> Result<Vector, RankerError> {
        match self {
            DocVectors::Table(t) => Ok(t.get(id.as_str())?.clone()),
            DocVectors::ConceptMean(src) => {
                let doc = g
                    .document(id)
                    .ok_or_else(|| RankerError::UnknownDocument(id.clone()))?;
                let vs = doc
                    .concepts
                    .iter()
                    .map(|c| src.vector(c.as_str()))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Vector::mean(&vs)?.normalized()?)
            }
        }
    }
}

/// Looks up context and node embeddings for a sample.
pub fn encode_sample(
    sample: &LabeledPathSample,
    g: &TemporalGraph,
    concepts: &EmbeddingSource,
    docs: &DocVectors,
) -> Result<SampleInput, RankerError> {
    let ctx = sample
        .contexts
        .iter()
        .map(|d| docs.vector(g, d))
        .collect::<Result<Vec<_>, _>>()?;
    let nodes = sample
        .path
        .nodes
        .iter()
        .map(|c: &ConceptId| concepts.vector(c.as_str()))
        .collect::<Result<Vec<_>, _>>()?;
    SampleInput::from_vectors(&ctx, &nodes)
}
