//! Transformer building blocks: sinusoidal positional encoding, multi-head
//! attention with an additive bias, and the pre-norm residual block used for
//! every encoder/query/decoder instance.
//!
//! Blocks preserve their input width: attention projects the io width to
//! `d_model` internally (heads of width d_model / n_h) and back, and the
//! feed-forward layer maps io -> ff_dim -> io. This lets per-modality
//! encoders run at their own narrow widths while sharing one attention size.

use crate::autodiff::{Graph, NodeId, Tensor, NEG_LARGE};
use crate::error::{Error, Result};
use rand::Rng;

/// Parameters of one attention block, generic over the binding: plain
/// `Tensor` storage or `NodeId` once bound into a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub ff1: T,
    pub ff1_b: T,
    pub ff2: T,
    pub ff2_b: T,
    pub ln1_g: T,
    pub ln1_b: T,
    pub ln2_g: T,
    pub ln2_b: T,
}

/// Field order shared by `slots`, `slots_mut`, and checkpoint naming.
pub const BLOCK_FIELDS: [&str; 12] = [
    "w_q", "w_k", "w_v", "w_o", "ff1", "ff1_b", "ff2", "ff2_b", "ln1_g", "ln1_b", "ln2_g",
    "ln2_b",
];

impl<T> BlockParams<T> {
    pub fn slots(&self) -> [&T; 12] {
        [
            &self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.ff1, &self.ff1_b, &self.ff2,
            &self.ff2_b, &self.ln1_g, &self.ln1_b, &self.ln2_g, &self.ln2_b,
        ]
    }

    pub fn slots_mut(&mut self) -> [&mut T; 12] {
        [
            &mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o, &mut self.ff1,
            &mut self.ff1_b, &mut self.ff2, &mut self.ff2_b, &mut self.ln1_g, &mut self.ln1_b,
            &mut self.ln2_g, &mut self.ln2_b,
        ]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> BlockParams<U> {
        BlockParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
            ff1: f(&self.ff1),
            ff1_b: f(&self.ff1_b),
            ff2: f(&self.ff2),
            ff2_b: f(&self.ff2_b),
            ln1_g: f(&self.ln1_g),
            ln1_b: f(&self.ln1_b),
            ln2_g: f(&self.ln2_g),
            ln2_b: f(&self.ln2_b),
        }
    }
}

impl BlockParams<Tensor> {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains. The draw
    /// order (w_q, w_k, w_v, w_o, ff1, ff2) is part of the determinism
    /// contract: a given rng state always yields the same block.
    pub fn init(d_io: usize, d_model: usize, ff_dim: usize, rng: &mut impl Rng) -> Self {
        BlockParams {
            w_q: Tensor::glorot(d_io, d_model, rng),
            w_k: Tensor::glorot(d_io, d_model, rng),
            w_v: Tensor::glorot(d_io, d_model, rng),
            w_o: Tensor::glorot(d_model, d_io, rng),
            ff1: Tensor::glorot(d_io, ff_dim, rng),
            ff2: Tensor::glorot(ff_dim, d_io, rng),
            ff1_b: Tensor::zeros(1, ff_dim),
            ff2_b: Tensor::zeros(1, d_io),
            ln1_g: Tensor::filled(1, d_io, 1.0),
            ln1_b: Tensor::zeros(1, d_io),
            ln2_g: Tensor::filled(1, d_io, 1.0),
            ln2_b: Tensor::zeros(1, d_io),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BlockParams<NodeId> {
        self.map(|t| g.param(t.clone()))
    }
}

#[derive(Debug)]
pub struct MhaOut {
    pub out: NodeId,
    /// One [T_q x T_k] weight matrix per head, rows summing to 1.
    pub head_weights: Vec<NodeId>,
}

/// Sinusoidal table: PE[t, 2i] = sin(t / 10000^(2i/d)),
/// PE[t, 2i+1] = cos(t / 10000^(2i/d)).
pub fn positional_encoding(t_steps: usize, d: usize) -> Result<Tensor> {
    if t_steps == 0 {
        return Err(Error::Contract("positional_encoding needs at least one step".into()));
    }
    if d == 0 || d % 2 != 0 {
        return Err(Error::Contract(format!(
            "positional_encoding width must be even and positive, got {d}"
        )));
    }
    let mut pe = Tensor::zeros(t_steps, d);
    for t in 0..t_steps {
        for i in 0..d / 2 {
            let denom = 10000f64.powf((2 * i) as f64 / d as f64);
            let angle = t as f64 / denom;
            pe.set(t, 2 * i, angle.sin());
            pe.set(t, 2 * i + 1, angle.cos());
        }
    }
    Ok(pe)
}

/// Scaled dot-product attention with `n_h` heads and an additive [T_q x T_k]
/// bias on the pre-softmax logits. Emits the output projection and the
/// per-head weight matrices.
pub fn multi_head_attention(
    g: &mut Graph,
    p: &BlockParams<NodeId>,
    n_h: usize,
    q_in: NodeId,
    kv_in: NodeId,
    bias: NodeId,
) -> Result<MhaOut> {
    let d_model = g.value(p.w_q).cols();
    if n_h == 0 || d_model % n_h != 0 {
        return Err(Error::Contract(format!(
            "head count {n_h} must divide attention width {d_model}"
        )));
    }
    let (t_q, t_k) = (g.value(q_in).rows(), g.value(kv_in).rows());
    let bias_t = g.value(bias);
    if bias_t.shape() != (t_q, t_k) {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            detail: format!("bias {:?} for {t_q} queries x {t_k} keys", bias_t.shape()),
        });
    }
    if !bias_t.is_finite() {
        return Err(Error::Contract("attention bias must be finite".into()));
    }
    for r in 0..t_q {
        if bias_t.row(r).iter().all(|&v| v == NEG_LARGE) {
            return Err(Error::Contract(format!(
                "attention bias row {r} forbids every position"
            )));
        }
    }

    let q = g.matmul(q_in, p.w_q)?;
    let k = g.matmul(kv_in, p.w_k)?;
    let v = g.matmul(kv_in, p.w_v)?;
    let d_h = d_model / n_h;
    let scale = 1.0 / (d_h as f64).sqrt();

    let mut contexts = Vec::with_capacity(n_h);
    let mut head_weights = Vec::with_capacity(n_h);
    for h in 0..n_h {
        let qh = g.slice_cols(q, h * d_h, d_h)?;
        let kh = g.slice_cols(k, h * d_h, d_h)?;
        let vh = g.slice_cols(v, h * d_h, d_h)?;
        let kht = g.transpose(kh);
        let logits = g.matmul(qh, kht)?;
        let scaled = g.scale(logits, scale);
        let biased = g.add(scaled, bias)?;
        let weights = g.softmax_rows(biased)?;
        let ctx = g.matmul(weights, vh)?;
        contexts.push(ctx);
        head_weights.push(weights);
    }
    let ctx = g.concat_cols(&contexts)?;
    let out = g.matmul(ctx, p.w_o)?;
    Ok(MhaOut { out, head_weights })
}

/// Pre-norm residual block:
/// x' = q_in + MHA(LN1(q_in), LN1(kv_in), bias); out = x' + FFN(LN2(x')).
pub fn transformer_block(
    g: &mut Graph,
    p: &BlockParams<NodeId>,
    n_h: usize,
    ln_eps: f64,
    q_in: NodeId,
    kv_in: NodeId,
    bias: NodeId,
) -> Result<(NodeId, Vec<NodeId>)> {
    let nq = g.layer_norm(q_in, p.ln1_g, p.ln1_b, ln_eps)?;
    let nkv = if kv_in == q_in { nq } else { g.layer_norm(kv_in, p.ln1_g, p.ln1_b, ln_eps)? };
    let mha = multi_head_attention(g, p, n_h, nq, nkv, bias)?;
    let x = g.add(q_in, mha.out)?;

    let nx = g.layer_norm(x, p.ln2_g, p.ln2_b, ln_eps)?;
    let h1 = g.matmul(nx, p.ff1)?;
    let h1 = g.add_row(h1, p.ff1_b)?;
    let h1 = g.relu(h1);
    let h2 = g.matmul(h1, p.ff2)?;
    let h2 = g.add_row(h2, p.ff2_b)?;
    let out = g.add(x, h2)?;
    Ok((out, mha.head_weights))
}

/// Hard causal self-attention bias: 0 at or before the diagonal, NEG_LARGE
/// strictly above it.
pub fn causal_bias(t: usize) -> Tensor {
    let mut b = Tensor::zeros(t, t);
    for r in 0..t {
        for c in r + 1..t {
            b.set(r, c, NEG_LARGE);
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positional_encoding_known_entries() {
        let pe = positional_encoding(4, 6).unwrap();
        assert_eq!(pe.get(0, 0), 0.0);
        assert_eq!(pe.get(0, 1), 1.0);
        assert!((pe.get(1, 0) - 0.841470984807897).abs() < 1e-6);
    }

    #[test]
    fn positional_encoding_bounded() {
        let pe = positional_encoding(50, 8).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn positional_encoding_rejects_odd_width() {
        assert_eq!(positional_encoding(4, 5).unwrap_err().exit_code(), 2);
        assert_eq!(positional_encoding(0, 4).unwrap_err().exit_code(), 2);
    }

    fn test_block(d_io: usize, d_model: usize, ff: usize, seed: u64) -> BlockParams<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BlockParams::init(d_io, d_model, ff, &mut rng)
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let p = test_block(4, 8, 16, 3);
        let mut g = Graph::new();
        let pb = p.bind(&mut g);
        let q_in = g.constant(Tensor::glorot(3, 4, &mut ChaCha8Rng::seed_from_u64(9)));
        let kv = g.constant(Tensor::from_rows(&vec![vec![1.0, -2.0, 0.5, 3.0]; 5]).unwrap());
        let bias = g.constant(Tensor::zeros(3, 5));
        let mha = multi_head_attention(&mut g, &pb, 2, q_in, kv, bias).unwrap();
        for &w in &mha.head_weights {
            let t = g.value(w);
            for r in 0..3 {
                for c in 0..5 {
                    assert!((t.get(r, c) - 0.2).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sentinel_bias_row_concentrates_weight() {
        let p = test_block(4, 8, 16, 3);
        let mut g = Graph::new();
        let pb = p.bind(&mut g);
        let q_in = g.constant(Tensor::glorot(1, 4, &mut ChaCha8Rng::seed_from_u64(2)));
        let kv = g.constant(Tensor::glorot(4, 4, &mut ChaCha8Rng::seed_from_u64(4)));
        let bias =
            g.constant(Tensor::from_rows(&[vec![0.0, NEG_LARGE, NEG_LARGE, NEG_LARGE]]).unwrap());
        let mha = multi_head_attention(&mut g, &pb, 2, q_in, kv, bias).unwrap();
        for &w in &mha.head_weights {
            let t = g.value(w);
            assert_eq!(t.get(0, 0), 1.0);
            for c in 1..4 {
                assert_eq!(t.get(0, c).to_bits(), 0.0_f64.to_bits());
            }
        }
    }

    #[test]
    fn fully_forbidden_row_is_a_contract_error() {
        let p = test_block(4, 8, 16, 3);
        let mut g = Graph::new();
        let pb = p.bind(&mut g);
        let q_in = g.constant(Tensor::glorot(2, 4, &mut ChaCha8Rng::seed_from_u64(2)));
        let kv = g.constant(Tensor::glorot(4, 4, &mut ChaCha8Rng::seed_from_u64(4)));
        let bias = g.constant(
            Tensor::from_rows(&[vec![0.0; 4], vec![NEG_LARGE; 4]]).unwrap(),
        );
        let err = multi_head_attention(&mut g, &pb, 2, q_in, kv, bias).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn attention_rows_sum_to_one_under_random_bias() {
        let p = test_block(5, 8, 16, 7);
        let mut g = Graph::new();
        let pb = p.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q_in = g.constant(Tensor::glorot(6, 5, &mut rng));
        let kv = g.constant(Tensor::glorot(9, 5, &mut rng));
        let bias = g.constant(Tensor::glorot(6, 9, &mut rng));
        let mha = multi_head_attention(&mut g, &pb, 4, q_in, kv, bias).unwrap();
        for &w in &mha.head_weights {
            let t = g.value(w);
            for r in 0..t.rows() {
                let sum: f64 = t.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "row {r} sums to {sum}");
            }
        }
    }

    #[test]
    fn zero_weight_block_is_the_identity() {
        let mut p = test_block(4, 8, 16, 3);
        for w in [&mut p.w_q, &mut p.w_k, &mut p.w_v, &mut p.w_o, &mut p.ff1, &mut p.ff2] {
            *w = Tensor::zeros(w.rows(), w.cols());
        }
        let mut g = Graph::new();
        let pb = p.bind(&mut g);
        let x_t = Tensor::glorot(5, 4, &mut ChaCha8Rng::seed_from_u64(8));
        let x = g.constant(x_t.clone());
        let bias = g.constant(Tensor::zeros(5, 5));
        let (out, _) = transformer_block(&mut g, &pb, 2, 1e-5, x, x, bias).unwrap();
        assert!(g.value(out).bits_eq(&x_t));
    }

    #[test]
    fn block_output_shape_follows_queries() {
        let p = test_block(6, 8, 16, 5);
        let mut g = Graph::new();
        let pb = p.bind(&mut g);
        let q_in = g.constant(Tensor::glorot(3, 6, &mut ChaCha8Rng::seed_from_u64(1)));
        let kv = g.constant(Tensor::glorot(7, 6, &mut ChaCha8Rng::seed_from_u64(2)));
        let bias = g.constant(Tensor::zeros(3, 7));
        let (out, weights) = transformer_block(&mut g, &pb, 2, 1e-5, q_in, kv, bias).unwrap();
        assert_eq!(g.value(out).shape(), (3, 6));
        assert_eq!(weights.len(), 2);
        assert_eq!(g.value(weights[0]).shape(), (3, 7));
    }

    #[test]
    fn causal_bias_makes_rows_ignore_later_keys() {
        let p = test_block(4, 8, 16, 13);
        let run = |tail: f64| {
            let mut g = Graph::new();
            let pb = p.bind(&mut g);
            let mut x_t = Tensor::glorot(6, 4, &mut ChaCha8Rng::seed_from_u64(30));
            for c in 0..4 {
                x_t.set(5, c, tail); // only the last step differs between runs
            }
            let x = g.constant(x_t);
            let bias = g.constant(causal_bias(6));
            let (out, _) = transformer_block(&mut g, &pb, 2, 1e-5, x, x, bias).unwrap();
            g.value(out).clone()
        };
        let a = run(0.0);
        let b = run(1e6);
        for r in 0..5 {
            for c in 0..4 {
                assert_eq!(a.get(r, c).to_bits(), b.get(r, c).to_bits(), "row {r} col {c}");
            }
        }
        assert_ne!(a.get(5, 0).to_bits(), b.get(5, 0).to_bits());
    }

    #[test]
    fn single_block_gradient_check() {
        // T=6 tokens of width 8, attention width 8, two heads.
        let p = test_block(8, 8, 16, 18);
        let x = Tensor::glorot(6, 8, &mut ChaCha8Rng::seed_from_u64(77));
        let mut params: Vec<(String, Tensor)> = BLOCK_FIELDS
            .iter()
            .zip(p.slots())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        params.push(("x".to_string(), x));
        let report = grad_check(&params, 1e-5, |g, ids| {
            let pb = BlockParams {
                w_q: ids[0],
                w_k: ids[1],
                w_v: ids[2],
                w_o: ids[3],
                ff1: ids[4],
                ff1_b: ids[5],
                ff2: ids[6],
                ff2_b: ids[7],
                ln1_g: ids[8],
                ln1_b: ids[9],
                ln2_g: ids[10],
                ln2_b: ids[11],
            };
            let x = ids[12];
            let bias = g.constant(causal_bias(6));
            let (out, _) = transformer_block(g, &pb, 2, 1e-5, x, x, bias)?;
            let sq = g.sum_sq(out);
            Ok(g.scale(sq, 0.05))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "worst {:?}", report.worst);
    }
}
