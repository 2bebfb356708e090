//! TAMformer assembly: per-modality encoders on the full frame grid, an
//! early-fusion query branch on the sub-sampled grid, learned-mask biased
//! attention on both, masked cross-attention decoding, and a sigmoid head
//! producing one crossing probability per query step.
//!
//! Dataflow for one sample window (T_enc frames, M modalities):
//!   x_m  = Phi_m(raw_m)                       [T_enc x D_m]
//!   feats = Cat[x_1..x_M]                     [T_enc x D_cat]
//!   M_e  = predict_mask(feats, feats, 0..T)   encoder self-attention gate
//!   z_m  = TE_m(x_m + PE)  biased by ln(M_e)  per-modality encoding
//!   z_e  = Cat[z_1..z_M]                      [T_enc x D_cat]
//!   z_q  = TQ(feats[query_frames])            hard causal self-attention
//!   M_d  = predict_mask(feats[qf], feats, qf) decoder cross-attention gate
//!   z_d  = LN(TD(z_q, z_e)  biased by ln(M_d))
//!   y    = Sigmoid(MLP(z_d))                  one score per query step

use crate::autodiff::{grad_check, GradCheckReport, Graph, NodeId, Tensor};
use crate::blocks::{causal_bias, positional_encoding, transformer_block, BlockParams, BLOCK_FIELDS};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::json_io;
use crate::maskgen::{predict_mask, LearnedMask, MaskPrediction, MaskScorerParams, LOGIT_CLAMP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    /// Width of the raw feature track in the dataset.
    pub raw_width: usize,
    /// Width after the learned input projection Phi_m.
    pub embed_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub modalities: Vec<ModalitySpec>,
    /// Encoder steps on the full frame grid.
    pub t_enc: usize,
    /// Sub-sampling factor for the query grid (3 realizes 30 -> 10 FPS).
    pub query_stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    /// Blocks per encoder stack, query stack, and decoder stack.
    pub depth: usize,
    pub mask_hidden: Vec<usize>,
    pub head_hidden: usize,
    pub ln_eps: f64,
    pub mask_eps: f64,
}

impl ModelConfig {
    /// Small profile sized so every test and the full gradient check run in
    /// seconds on a laptop.
    pub fn desk() -> Self {
        ModelConfig {
            modalities: vec![
                ModalitySpec { name: "context".into(), raw_width: 16, embed_width: 4 },
                ModalitySpec { name: "bbox".into(), raw_width: 4, embed_width: 2 },
                ModalitySpec { name: "pose".into(), raw_width: 12, embed_width: 3 },
                ModalitySpec { name: "speed".into(), raw_width: 1, embed_width: 1 },
            ],
            t_enc: 12,
            query_stride: 3,
            d_model: 8,
            n_heads: 2,
            ff_dim: 16,
            depth: 1,
            mask_hidden: vec![8, 4, 2],
            head_hidden: 32,
            ln_eps: 1e-5,
            mask_eps: 1e-6,
        }
    }

    /// Published hyperparameters (6 heads, 1024-wide feed-forward, mask MLP
    /// 128/64/32, 4.5 s windows at 30 FPS) over the synthetic modality
    /// tracks. Constructible and runnable, but far slower than `desk`.
    pub fn paper() -> Self {
        ModelConfig {
            modalities: vec![
                ModalitySpec { name: "context".into(), raw_width: 16, embed_width: 32 },
                ModalitySpec { name: "bbox".into(), raw_width: 4, embed_width: 16 },
                ModalitySpec { name: "pose".into(), raw_width: 12, embed_width: 24 },
                ModalitySpec { name: "speed".into(), raw_width: 1, embed_width: 8 },
            ],
            t_enc: 135,
            query_stride: 3,
            d_model: 96,
            n_heads: 6,
            ff_dim: 1024,
            depth: 1,
            mask_hidden: vec![128, 64, 32],
            head_hidden: 32,
            ln_eps: 1e-5,
            mask_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Contract("config needs at least one modality".into()));
        }
        if self.modalities.iter().any(|m| m.raw_width == 0 || m.embed_width == 0) {
            return Err(Error::Contract("modality widths must be positive".into()));
        }
        if self.query_stride == 0 {
            return Err(Error::Contract("query_stride must be at least 1".into()));
        }
        if self.t_enc < self.query_stride {
            return Err(Error::Contract(format!(
                "t_enc {} shorter than query_stride {}",
                self.t_enc, self.query_stride
            )));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Contract(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ff_dim == 0 || self.depth == 0 || self.head_hidden == 0 {
            return Err(Error::Contract("ff_dim, depth, head_hidden must be positive".into()));
        }
        if !(self.ln_eps > 0.0) || !(self.mask_eps > 0.0) {
            return Err(Error::Contract("eps values must be positive".into()));
        }
        Ok(())
    }

    /// Total width of the concatenated per-modality embeddings.
    pub fn d_cat(&self) -> usize {
        self.modalities.iter().map(|m| m.embed_width).sum()
    }

    /// Query steps per window.
    pub fn t_q(&self) -> usize {
        self.t_enc / self.query_stride
    }

    /// Frame index of each query step: the last frame of each stride group,
    /// so the final query sees the whole window.
    pub fn query_frames(&self) -> Vec<usize> {
        (1..=self.t_q()).map(|k| k * self.query_stride - 1).collect()
    }

    /// Canonical (name, rows, cols) list of every parameter tensor. Init,
    /// SGD, checkpoints, and the gradient checker all follow this order.
    pub fn slot_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut v = Vec::new();
        for (m, spec) in self.modalities.iter().enumerate() {
            v.push((format!("phi.{m}.w"), spec.raw_width, spec.embed_width));
            v.push((format!("phi.{m}.b"), 1, spec.embed_width));
        }
        let block = |v: &mut Vec<(String, usize, usize)>, prefix: String, d_io: usize| {
            let shapes = [
                (d_io, self.d_model),
                (d_io, self.d_model),
                (d_io, self.d_model),
                (self.d_model, d_io),
                (d_io, self.ff_dim),
                (1, self.ff_dim),
                (self.ff_dim, d_io),
                (1, d_io),
                (1, d_io),
                (1, d_io),
                (1, d_io),
                (1, d_io),
            ];
            for (f, (r, c)) in BLOCK_FIELDS.iter().zip(shapes) {
                v.push((format!("{prefix}.{f}"), r, c));
            }
        };
        for (m, spec) in self.modalities.iter().enumerate() {
            for l in 0..self.depth {
                block(&mut v, format!("enc.{m}.{l}"), spec.embed_width);
            }
        }
        for l in 0..self.depth {
            block(&mut v, format!("query.{l}"), self.d_cat());
        }
        for l in 0..self.depth {
            block(&mut v, format!("dec.{l}"), self.d_cat());
        }
        let scorer = |v: &mut Vec<(String, usize, usize)>, prefix: &str| {
            let mut dims = vec![2 * self.d_cat()];
            dims.extend_from_slice(&self.mask_hidden);
            dims.push(1);
            for i in 0..dims.len() - 1 {
                v.push((format!("{prefix}.l{i}.w"), dims[i], dims[i + 1]));
                v.push((format!("{prefix}.l{i}.b"), 1, dims[i + 1]));
            }
        };
        scorer(&mut v, "mask_e");
        scorer(&mut v, "mask_d");
        v.push(("final_ln.g".into(), 1, self.d_cat()));
        v.push(("final_ln.b".into(), 1, self.d_cat()));
        v.push(("head.w1".into(), self.d_cat(), self.head_hidden));
        v.push(("head.b1".into(), 1, self.head_hidden));
        v.push(("head.w2".into(), self.head_hidden, 1));
        v.push(("head.b2".into(), 1, 1));
        v
    }

    pub fn param_count(&self) -> usize {
        self.slot_shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TamformerParams<T> {
    /// Per-modality input projections (weight, bias).
    pub phi: Vec<(T, T)>,
    /// Per-modality encoder stacks, `depth` blocks each.
    pub enc: Vec<Vec<BlockParams<T>>>,
    pub query: Vec<BlockParams<T>>,
    pub dec: Vec<BlockParams<T>>,
    pub scorer_e: MaskScorerParams<T>,
    pub scorer_d: MaskScorerParams<T>,
    /// Final layer norm fixing the scale of z_d.
    pub final_ln: (T, T),
    pub head: HeadParams<T>,
}

impl<T> TamformerParams<T> {
    /// Traversal order identical to `ModelConfig::slot_shapes`.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> TamformerParams<U> {
        TamformerParams {
            phi: self.phi.iter().map(|(w, b)| (f(w), f(b))).collect(),
            enc: self.enc.iter().map(|s| s.iter().map(|blk| blk.map(&mut f)).collect()).collect(),
            query: self.query.iter().map(|blk| blk.map(&mut f)).collect(),
            dec: self.dec.iter().map(|blk| blk.map(&mut f)).collect(),
            scorer_e: self.scorer_e.map(&mut f),
            scorer_d: self.scorer_d.map(&mut f),
            final_ln: (f(&self.final_ln.0), f(&self.final_ln.1)),
            head: HeadParams {
                w1: f(&self.head.w1),
                b1: f(&self.head.b1),
                w2: f(&self.head.w2),
                b2: f(&self.head.b2),
            },
        }
    }

    pub fn slots(&self) -> Vec<(String, &T)> {
        let mut v = Vec::new();
        for (m, (w, b)) in self.phi.iter().enumerate() {
            v.push((format!("phi.{m}.w"), w));
            v.push((format!("phi.{m}.b"), b));
        }
        for (m, stack) in self.enc.iter().enumerate() {
            for (l, blk) in stack.iter().enumerate() {
                for (f, s) in BLOCK_FIELDS.iter().zip(blk.slots()) {
                    v.push((format!("enc.{m}.{l}.{f}"), s));
                }
            }
        }
        for (l, blk) in self.query.iter().enumerate() {
            for (f, s) in BLOCK_FIELDS.iter().zip(blk.slots()) {
                v.push((format!("query.{l}.{f}"), s));
            }
        }
        for (l, blk) in self.dec.iter().enumerate() {
            for (f, s) in BLOCK_FIELDS.iter().zip(blk.slots()) {
                v.push((format!("dec.{l}.{f}"), s));
            }
        }
        for (n, s) in self.scorer_e.slots() {
            v.push((format!("mask_e.{n}"), s));
        }
        for (n, s) in self.scorer_d.slots() {
            v.push((format!("mask_d.{n}"), s));
        }
        v.push(("final_ln.g".into(), &self.final_ln.0));
        v.push(("final_ln.b".into(), &self.final_ln.1));
        v.push(("head.w1".into(), &self.head.w1));
        v.push(("head.b1".into(), &self.head.b1));
        v.push(("head.w2".into(), &self.head.w2));
        v.push(("head.b2".into(), &self.head.b2));
        v
    }

    pub fn slots_mut(&mut self) -> Vec<&mut T> {
        let mut v = Vec::new();
        for (w, b) in self.phi.iter_mut() {
            v.push(w);
            v.push(b);
        }
        for stack in self.enc.iter_mut() {
            for blk in stack.iter_mut() {
                v.extend(blk.slots_mut());
            }
        }
        for blk in self.query.iter_mut() {
            v.extend(blk.slots_mut());
        }
        for blk in self.dec.iter_mut() {
            v.extend(blk.slots_mut());
        }
        v.extend(self.scorer_e.slots_mut());
        v.extend(self.scorer_d.slots_mut());
        v.push(&mut self.final_ln.0);
        v.push(&mut self.final_ln.1);
        v.push(&mut self.head.w1);
        v.push(&mut self.head.b1);
        v.push(&mut self.head.w2);
        v.push(&mut self.head.b2);
        v
    }
}

impl TamformerParams<Tensor> {
    /// Deterministic init. Glorot weights throughout, except the two layers
    /// whose zeros make the untrained model maximally noncommittal: the head
    /// output layer (every score starts at exactly 0.5) and each scorer's
    /// final layer (every causal mask entry starts at exactly 0.5). The draw
    /// order follows `slot_shapes` and is part of the determinism contract.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let phi = config
            .modalities
            .iter()
            .map(|m| {
                (Tensor::glorot(m.raw_width, m.embed_width, rng), Tensor::zeros(1, m.embed_width))
            })
            .collect();
        let enc = config
            .modalities
            .iter()
            .map(|m| {
                (0..config.depth)
                    .map(|_| BlockParams::init(m.embed_width, config.d_model, config.ff_dim, rng))
                    .collect()
            })
            .collect();
        let d_cat = config.d_cat();
        let query = (0..config.depth)
            .map(|_| BlockParams::init(d_cat, config.d_model, config.ff_dim, rng))
            .collect();
        let dec = (0..config.depth)
            .map(|_| BlockParams::init(d_cat, config.d_model, config.ff_dim, rng))
            .collect();
        let scorer_e = MaskScorerParams::init(2 * d_cat, &config.mask_hidden, rng);
        let scorer_d = MaskScorerParams::init(2 * d_cat, &config.mask_hidden, rng);
        let params = TamformerParams {
            phi,
            enc,
            query,
            dec,
            scorer_e,
            scorer_d,
            final_ln: (Tensor::filled(1, d_cat, 1.0), Tensor::zeros(1, d_cat)),
            head: HeadParams {
                w1: Tensor::glorot(d_cat, config.head_hidden, rng),
                b1: Tensor::zeros(1, config.head_hidden),
                w2: Tensor::zeros(config.head_hidden, 1),
                b2: Tensor::zeros(1, 1),
            },
        };
        debug_assert_eq!(
            params.slots().iter().map(|(n, t)| (n.clone(), t.rows(), t.cols())).collect::<Vec<_>>(),
            config.slot_shapes()
        );
        Ok(params)
    }

    /// Trainable graph leaves.
    pub fn bind(&self, g: &mut Graph) -> TamformerParams<NodeId> {
        self.map(|t| g.param(t.clone()))
    }

    /// Frozen graph leaves for inference (no gradient bookkeeping).
    pub fn bind_const(&self, g: &mut Graph) -> TamformerParams<NodeId> {
        self.map(|t| g.constant(t.clone()))
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|(_, t)| t.rows() * t.cols()).sum()
    }
}

/// Per-step output of one forward pass.
#[derive(Debug, Clone)]
pub struct PredictionTimeline {
    /// Window-local frame index of each query step, strictly increasing.
    pub query_frames: Vec<usize>,
    /// Crossing probability per query step, each strictly inside (0,1).
    pub scores: Vec<f64>,
    /// z_d rows, kept for the anticipation-gap regularizer.
    pub embeddings: Tensor,
}

/// Graph handles from `forward_nodes`, for loss construction and mask dumps.
pub struct ForwardNodes {
    pub query_frames: Vec<usize>,
    /// [T_q x 1] probabilities.
    pub scores: NodeId,
    /// [T_q x D_cat] decoder embeddings after the final layer norm.
    pub z_d: NodeId,
    pub mask_e: MaskPrediction,
    pub mask_d: MaskPrediction,
    /// Every attention-weight grid in the pass, one entry per head per
    /// block, tagged with the last key column each row may attend to.
    pub attn: Vec<(Vec<usize>, NodeId)>,
}

/// Sinusoidal table for an arbitrary width: odd widths use an even table
/// with the trailing column dropped.
fn pe_for(t_steps: usize, d: usize) -> Result<Tensor> {
    if d % 2 == 0 {
        return positional_encoding(t_steps, d);
    }
    let full = positional_encoding(t_steps, d + 1)?;
    let mut out = Tensor::zeros(t_steps, d);
    for r in 0..t_steps {
        for c in 0..d {
            out.set(r, c, full.get(r, c));
        }
    }
    Ok(out)
}

/// Trailing observation window: the most recent `t_enc` frames of every
/// modality track, plus the window's offset into the sample's frame indices.
pub fn encoding_window(
    config: &ModelConfig,
    sample: &FeatureSequence,
) -> Result<(Vec<Tensor>, usize)> {
    if sample.modalities.len() != config.modalities.len() {
        return Err(Error::Contract(format!(
            "sample {} has {} modalities, config expects {}",
            sample.sample_id,
            sample.modalities.len(),
            config.modalities.len()
        )));
    }
    let t_avail = sample.t_avail();
    if t_avail < config.t_enc {
        return Err(Error::Contract(format!(
            "sample {} has {} frames, window needs {}",
            sample.sample_id, t_avail, config.t_enc
        )));
    }
    let offset = t_avail - config.t_enc;
    let mut windows = Vec::with_capacity(config.modalities.len());
    for ((name, track), spec) in sample.modalities.iter().zip(&config.modalities) {
        if name != &spec.name || track.cols() != spec.raw_width {
            return Err(Error::Contract(format!(
                "sample {}: modality {name} ({} wide) does not match config {} ({} wide)",
                sample.sample_id,
                track.cols(),
                spec.name,
                spec.raw_width
            )));
        }
        let rows: Vec<Vec<f64>> =
            (offset..t_avail).map(|r| track.row(r).to_vec()).collect();
        windows.push(Tensor::from_rows(&rows)?);
    }
    Ok((windows, offset))
}

/// Full forward pass on bound parameters. `windows` are raw per-modality
/// tracks of exactly `t_enc` rows (see `encoding_window`).
pub fn forward_nodes(
    g: &mut Graph,
    params: &TamformerParams<NodeId>,
    config: &ModelConfig,
    windows: &[Tensor],
) -> Result<ForwardNodes> {
    if windows.len() != config.modalities.len() {
        return Err(Error::Contract(format!(
            "{} windows for {} modalities",
            windows.len(),
            config.modalities.len()
        )));
    }
    let mut xs = Vec::with_capacity(windows.len());
    for ((w, spec), (pw, pb)) in windows.iter().zip(&config.modalities).zip(&params.phi) {
        if w.shape() != (config.t_enc, spec.raw_width) {
            return Err(Error::Dimension {
                op: "forward".into(),
                detail: format!(
                    "window for {} is {:?}, expected {:?}",
                    spec.name,
                    w.shape(),
                    (config.t_enc, spec.raw_width)
                ),
            });
        }
        let raw = g.constant(w.clone());
        let proj = g.matmul(raw, *pw)?;
        xs.push(g.add_row(proj, *pb)?);
    }
    let feats = g.concat_cols(&xs)?;

    // Encoder gate scored on the fused raw embeddings, frame t vs frames <= t.
    let identity: Vec<usize> = (0..config.t_enc).collect();
    let mask_e = predict_mask(g, &params.scorer_e, feats, feats, &identity)?;
    let bias_e = mask_e.to_bias(g, config.mask_eps)?;

    let mut attn: Vec<(Vec<usize>, NodeId)> = Vec::new();
    let self_frontier: Vec<usize> = identity.clone();

    let mut z_parts = Vec::with_capacity(xs.len());
    for ((&x, spec), stack) in xs.iter().zip(&config.modalities).zip(&params.enc) {
        let pe = pe_for(config.t_enc, spec.embed_width)?;
        let pe = g.constant(pe);
        let mut cur = g.add(x, pe)?;
        for blk in stack {
            let (out, heads) =
                transformer_block(g, blk, config.n_heads, config.ln_eps, cur, cur, bias_e)?;
            cur = out;
            attn.extend(heads.into_iter().map(|h| (self_frontier.clone(), h)));
        }
        z_parts.push(cur);
    }
    let z_e = g.concat_cols(&z_parts)?;

    let qf = config.query_frames();
    let zq0 = g.gather_rows(feats, &qf)?;
    let hard = g.constant(causal_bias(qf.len()));
    let query_frontier: Vec<usize> = (0..qf.len()).collect();
    let mut z_q = zq0;
    for blk in &params.query {
        let (out, heads) =
            transformer_block(g, blk, config.n_heads, config.ln_eps, z_q, z_q, hard)?;
        z_q = out;
        attn.extend(heads.into_iter().map(|h| (query_frontier.clone(), h)));
    }

    // Decoder gate: each query step against every frame up to its own.
    let mask_d = predict_mask(g, &params.scorer_d, zq0, feats, &qf)?;
    let bias_d = mask_d.to_bias(g, config.mask_eps)?;
    let mut z_d = z_q;
    for blk in &params.dec {
        let (out, heads) =
            transformer_block(g, blk, config.n_heads, config.ln_eps, z_d, z_e, bias_d)?;
        z_d = out;
        attn.extend(heads.into_iter().map(|h| (qf.clone(), h)));
    }
    let z_d = g.layer_norm(z_d, params.final_ln.0, params.final_ln.1, config.ln_eps)?;

    let h = g.matmul(z_d, params.head.w1)?;
    let h = g.add_row(h, params.head.b1)?;
    let h = g.relu(h);
    let logit = g.matmul(h, params.head.w2)?;
    let logit = g.add_row(logit, params.head.b2)?;
    let logit = g.clamp(logit, -LOGIT_CLAMP, LOGIT_CLAMP);
    let scores = g.sigmoid(logit);

    Ok(ForwardNodes { query_frames: qf, scores, z_d, mask_e, mask_d, attn })
}

fn timeline_from(g: &Graph, fwd: &ForwardNodes) -> PredictionTimeline {
    let s = g.value(fwd.scores);
    PredictionTimeline {
        query_frames: fwd.query_frames.clone(),
        scores: (0..s.rows()).map(|r| s.get(r, 0)).collect(),
        embeddings: g.value(fwd.z_d).clone(),
    }
}

pub fn forward(
    params: &TamformerParams<Tensor>,
    config: &ModelConfig,
    sample: &FeatureSequence,
) -> Result<PredictionTimeline> {
    Ok(forward_trace(params, config, sample)?.0)
}

/// Forward pass that also returns both learned masks, for dumps and
/// sparsity accounting.
pub fn forward_trace(
    params: &TamformerParams<Tensor>,
    config: &ModelConfig,
    sample: &FeatureSequence,
) -> Result<(PredictionTimeline, LearnedMask, LearnedMask)> {
    config.validate()?;
    let (windows, _) = encoding_window(config, sample)?;
    let mut g = Graph::new();
    let bound = params.bind_const(&mut g);
    let fwd = forward_nodes(&mut g, &bound, config, &windows)?;
    let timeline = timeline_from(&g, &fwd);
    Ok((timeline, fwd.mask_e.learned_mask(&g), fwd.mask_d.learned_mask(&g)))
}

/// Per-modality encoding of already-projected features under a learned
/// self-attention gate; returns the concatenated z_e.
pub fn encode(
    params: &TamformerParams<Tensor>,
    config: &ModelConfig,
    x: &[Tensor],
    mask_e: &LearnedMask,
) -> Result<Tensor> {
    config.validate()?;
    if x.len() != config.modalities.len() {
        return Err(Error::Contract(format!(
            "{} feature tracks for {} modalities",
            x.len(),
            config.modalities.len()
        )));
    }
    for (t, spec) in x.iter().zip(&config.modalities) {
        if t.shape() != (config.t_enc, spec.embed_width) {
            return Err(Error::Contract(format!(
                "features for {} are {:?}, expected {:?}",
                spec.name,
                t.shape(),
                (config.t_enc, spec.embed_width)
            )));
        }
    }
    if mask_e.rows.shape() != (config.t_enc, config.t_enc)
        || mask_e.grid_map.iter().enumerate().any(|(i, &f)| f != i)
    {
        return Err(Error::Contract(
            "encoder mask must be t_enc x t_enc with the identity grid".into(),
        ));
    }
    let mut g = Graph::new();
    let bias = g.constant(crate::maskgen::mask_to_bias(mask_e, config.mask_eps)?);
    let mut parts = Vec::with_capacity(x.len());
    for ((t, spec), stack) in x.iter().zip(&config.modalities).zip(&params.enc) {
        let xm = g.constant(t.clone());
        let pe = g.constant(pe_for(config.t_enc, spec.embed_width)?);
        let mut cur = g.add(xm, pe)?;
        for blk in stack {
            let b = blk.map(|t| g.constant(t.clone()));
            cur = transformer_block(&mut g, &b, config.n_heads, config.ln_eps, cur, cur, bias)?.0;
        }
        parts.push(cur);
    }
    let z_e = g.concat_cols(&parts)?;
    Ok(g.value(z_e).clone())
}

/// Early-fusion query branch on already-projected features: concatenate,
/// sub-sample the last frame of each stride group, run TQ causally.
pub fn build_queries(
    params: &TamformerParams<Tensor>,
    config: &ModelConfig,
    x: &[Tensor],
) -> Result<(Tensor, Vec<usize>)> {
    config.validate()?;
    if x.len() != config.modalities.len() {
        return Err(Error::Contract(format!(
            "{} feature tracks for {} modalities",
            x.len(),
            config.modalities.len()
        )));
    }
    let mut g = Graph::new();
    let parts: Vec<NodeId> = x.iter().map(|t| g.constant(t.clone())).collect();
    let feats = g.concat_cols(&parts)?;
    let qf = config.query_frames();
    let mut z_q = g.gather_rows(feats, &qf)?;
    let hard = g.constant(causal_bias(qf.len()));
    for blk in &params.query {
        let b = blk.map(|t| g.constant(t.clone()));
        z_q = transformer_block(&mut g, &b, config.n_heads, config.ln_eps, z_q, z_q, hard)?.0;
    }
    Ok((g.value(z_q).clone(), qf))
}

/// Finite-difference check of the whole model against a fixed synthetic
/// sample, over every parameter including both mask scorers. Weights are
/// jittered away from init so no gradient path sits at an exact zero. The
/// probe loss is mean cross entropy plus a small embedding magnitude term,
/// then scaled down by 0.01: finite differences resolve to ulp(loss)/(2 eps),
/// and shrinking the loss pushes that quantum below the checker's absolute
/// floor so near-zero gradients are not drowned in rounding noise.
pub fn gradient_probe(config: &ModelConfig, seed: u64, eps: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let (samples, _) =
        crate::data::generate_synthetic(2, 7, &crate::data::GeneratorConfig::default())?;
    let (windows, _) = encoding_window(config, &samples[0])?;

    let params = TamformerParams::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let params = params.map(|t| t.map(|v| v + rng.gen_range(-0.3..0.3)));

    let named: Vec<(String, Tensor)> =
        params.slots().into_iter().map(|(n, t)| (n, t.clone())).collect();
    grad_check(&named, eps, |g, leaves| {
        let mut it = leaves.iter().copied();
        let bound = params.map(|_| it.next().expect("slot count"));
        let fwd = forward_nodes(g, &bound, config, &windows)?;
        let per_step = g.bce(fwd.scores, 1.0)?;
        let ce = g.mean(per_step);
        let mag = g.sum_sq(fwd.z_d);
        let mag = g.scale(mag, 0.01);
        let tot = g.add(ce, mag)?;
        Ok(g.scale(tot, 0.01))
    })
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: (usize, usize),
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &TamformerParams<Tensor>,
) -> Result<()> {
    let tensors = params
        .slots()
        .into_iter()
        .map(|(name, t)| {
            if !t.is_finite() {
                return Err(Error::Contract(format!(
                    "refusing to checkpoint non-finite tensor {name}"
                )));
            }
            Ok(TensorEntry { name, shape: t.shape(), values: t.data().to_vec() })
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = CheckpointFile { format_version: CHECKPOINT_FORMAT_VERSION, config: config.clone(), tensors };
    json_io::write_json_file(path, &doc)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, TamformerParams<Tensor>)> {
    let doc: CheckpointFile = json_io::read_json_file(path)?;
    let path_str = path.display().to_string();
    if doc.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Version {
            path: path_str,
            found: doc.format_version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    doc.config.validate()?;
    let mut by_name = std::collections::HashMap::new();
    for e in doc.tensors {
        if by_name.insert(e.name.clone(), e).is_some() {
            return Err(Error::Parse {
                path: path_str,
                detail: "duplicate tensor entry".into(),
            });
        }
    }
    let mut params = TamformerParams::init(&doc.config, 0)?;
    for ((name, rows, cols), slot) in
        doc.config.slot_shapes().into_iter().zip(params.slots_mut())
    {
        let e = by_name.remove(&name).ok_or_else(|| Error::Parse {
            path: path_str.clone(),
            detail: format!("missing tensor {name}"),
        })?;
        if e.shape != (rows, cols) || e.values.len() != rows * cols {
            return Err(Error::Parse {
                path: path_str.clone(),
                detail: format!(
                    "tensor {name} has shape {:?} with {} values, expected {:?}",
                    e.shape,
                    e.values.len(),
                    (rows, cols)
                ),
            });
        }
        if e.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path_str.clone(),
                detail: format!("tensor {name} contains a non-finite value"),
            });
        }
        *slot = Tensor::new(rows, cols, e.values)?;
    }
    if let Some(name) = by_name.keys().next() {
        return Err(Error::Parse {
            path: path_str,
            detail: format!("unknown tensor {name}"),
        });
    }
    Ok((doc.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorConfig};
    use rand::Rng;

    fn sample() -> FeatureSequence {
        let (mut s, _) = generate_synthetic(2, 7, &GeneratorConfig::default()).unwrap();
        s.remove(0)
    }

    #[test]
    fn desk_param_count_is_frozen() {
        let cfg = ModelConfig::desk();
        // phi 119; encoder blocks 69w+16 for w in {4,2,3,1}; query+dec at
        // w=10; two scorers 217 each; final norm 20; head 385.
        assert_eq!(cfg.param_count(), 3124);
        let params = TamformerParams::init(&cfg, 1).unwrap();
        assert_eq!(params.param_count(), 3124);
        let shapes = cfg.slot_shapes();
        assert_eq!(shapes.len(), params.slots().len());
    }

    #[test]
    fn query_frames_follow_floor_arithmetic() {
        let mut cfg = ModelConfig::desk();
        cfg.t_enc = 7;
        cfg.query_stride = 3;
        assert_eq!(cfg.query_frames(), vec![2, 5]);
        cfg.t_enc = 12;
        assert_eq!(cfg.query_frames(), vec![2, 5, 8, 11]);
        cfg.query_stride = 1;
        assert_eq!(cfg.query_frames(), (0..12).collect::<Vec<_>>());
        cfg.t_enc = 135;
        cfg.query_stride = 3;
        assert_eq!(cfg.query_frames().len(), 45);
    }

    #[test]
    fn config_validation_rejects_degenerate_setups() {
        let mut cfg = ModelConfig::desk();
        cfg.query_stride = 0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = ModelConfig::desk();
        cfg.t_enc = 2;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = ModelConfig::desk();
        cfg.d_model = 9;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        assert!(ModelConfig::paper().validate().is_ok());
    }

    #[test]
    fn fresh_init_scores_exactly_half() {
        let cfg = ModelConfig::desk();
        let params = TamformerParams::init(&cfg, 42).unwrap();
        let tl = forward(&params, &cfg, &sample()).unwrap();
        assert_eq!(tl.scores.len(), cfg.t_q());
        assert_eq!(tl.query_frames, vec![2, 5, 8, 11]);
        for &s in &tl.scores {
            assert_eq!(s.to_bits(), 0.5f64.to_bits());
        }
        assert_eq!(tl.embeddings.shape(), (cfg.t_q(), cfg.d_cat()));
    }

    /// Zero layers leave some directions flat (a zero head output layer
    /// kills gradients into the head's first layer), so checks and probes
    /// run on a jittered copy where every tensor is perturbed.
    fn jittered(cfg: &ModelConfig, seed: u64) -> TamformerParams<Tensor> {
        let params = TamformerParams::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        params.map(|t| t.map(|v| v + rng.gen_range(-0.3..0.3)))
    }

    #[test]
    fn scores_stay_causal_under_future_perturbation() {
        let cfg = ModelConfig::desk();
        let params = jittered(&cfg, 3);
        let s = sample();
        let base = forward(&params, &cfg, &s).unwrap();

        // Poke every modality strictly after query step 1 (window frame 5).
        let mut poked = s.clone();
        let offset = poked.t_avail() - cfg.t_enc;
        for (_, track) in poked.modalities.iter_mut() {
            for r in offset + 6..track.rows() {
                for c in 0..track.cols() {
                    track.set(r, c, track.get(r, c) + 7.5);
                }
            }
        }
        let after = forward(&params, &cfg, &poked).unwrap();
        for q in 0..2 {
            assert_eq!(
                base.scores[q].to_bits(),
                after.scores[q].to_bits(),
                "step {q} leaked future information"
            );
        }
        assert_ne!(base.scores[3].to_bits(), after.scores[3].to_bits());
    }

    #[test]
    fn encode_concatenates_in_modality_order() {
        let mut cfg = ModelConfig::desk();
        cfg.modalities = vec![
            ModalitySpec { name: "a".into(), raw_width: 4, embed_width: 4 },
            ModalitySpec { name: "b".into(), raw_width: 6, embed_width: 6 },
            ModalitySpec { name: "c".into(), raw_width: 2, embed_width: 2 },
        ];
        cfg.t_enc = 6;
        let params = TamformerParams::init(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Tensor> = cfg
            .modalities
            .iter()
            .map(|m| Tensor::zeros(6, m.embed_width).map(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let mask = LearnedMask {
            rows: {
                let mut t = Tensor::zeros(6, 6);
                for r in 0..6 {
                    for c in 0..=r {
                        t.set(r, c, 1.0);
                    }
                }
                t
            },
            grid_map: (0..6).collect(),
        };
        let z_e = encode(&params, &cfg, &x, &mask).unwrap();
        assert_eq!(z_e.shape(), (6, 12));

        // Single-modality encode equals its slice of nothing else: width check.
        let solo_cfg = ModelConfig {
            modalities: vec![cfg.modalities[0].clone()],
            ..cfg.clone()
        };
        let solo_params = TamformerParams::init(&solo_cfg, 5).unwrap();
        let solo_mask = LearnedMask { rows: mask.rows.clone(), grid_map: (0..6).collect() };
        let z = encode(&solo_params, &solo_cfg, &x[..1], &solo_mask).unwrap();
        assert_eq!(z.shape(), (6, 4));
    }

    #[test]
    fn encode_is_causal_per_row() {
        let mut cfg = ModelConfig::desk();
        cfg.t_enc = 6;
        let params = jittered(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x: Vec<Tensor> = cfg
            .modalities
            .iter()
            .map(|m| Tensor::zeros(6, m.embed_width).map(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let mask = {
            let mut t = Tensor::zeros(6, 6);
            for r in 0..6 {
                for c in 0..=r {
                    t.set(r, c, 0.5 + 0.05 * (r + c) as f64);
                }
            }
            LearnedMask { rows: t, grid_map: (0..6).collect() }
        };
        let base = encode(&params, &cfg, &x, &mask).unwrap();
        for t in x.iter_mut() {
            let last = t.rows() - 1;
            for c in 0..t.cols() {
                t.set(last, c, 99.0);
            }
        }
        let after = encode(&params, &cfg, &x, &mask).unwrap();
        for r in 0..5 {
            for c in 0..base.cols() {
                assert_eq!(base.get(r, c).to_bits(), after.get(r, c).to_bits());
            }
        }
        assert_ne!(base.get(5, 0).to_bits(), after.get(5, 0).to_bits());
    }

    #[test]
    fn full_model_gradient_check() {
        let mut cfg = ModelConfig::desk();
        // Tiny but structurally complete: every op and both scorers engaged.
        cfg.t_enc = 6;
        cfg.query_stride = 3;
        cfg.head_hidden = 4;
        cfg.mask_hidden = vec![4, 2];
        let report = gradient_probe(&cfg, 17, crate::autodiff::DEFAULT_EPS).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_bits() {
        let cfg = ModelConfig::desk();
        let params = jittered(&cfg, 31);
        let s = sample();
        let before = forward(&params, &cfg, &s).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        for ((na, ta), (nb, tb)) in params.slots().iter().zip(params2.slots().iter()) {
            assert_eq!(na, nb);
            assert!(ta.bits_eq(tb), "slot {na} changed across the round trip");
        }
        let after = forward(&params2, &cfg2, &s).unwrap();
        for (a, b) in before.scores.iter().zip(&after.scores) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(before.embeddings.bits_eq(&after.embeddings));
    }

    #[test]
    fn checkpoint_version_and_shape_are_validated() {
        let cfg = ModelConfig::desk();
        let params = TamformerParams::init(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &cfg, &params).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert_ne!(text, bumped);
        std::fs::write(&path, bumped).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);

        let mangled = text.replacen("\"head.w2\"", "\"head.w9\"", 1);
        std::fs::write(&path, mangled).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);

        let mut bad = params.clone();
        bad.head.b2 = Tensor::filled(1, 1, f64::NAN);
        let err = save_checkpoint(&path, &cfg, &bad).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn window_contract_errors() {
        let cfg = ModelConfig::desk();
        let mut s = sample();
        s.modalities = s
            .modalities
            .iter()
            .map(|(n, t)| {
                let rows: Vec<Vec<f64>> = (0..6).map(|r| t.row(r).to_vec()).collect();
                (n.clone(), Tensor::from_rows(&rows).unwrap())
            })
            .collect();
        let err = encoding_window(&cfg, &s).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
