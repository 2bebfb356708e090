//! Learned causal attention masks.
//!
//! A pairwise scorer MLP sees [target-step features ; source-step features]
//! and emits one logit per pair. Only pairs at or below the causal frontier
//! (source frame <= frame(target row)) are ever scored, so entries above the
//! frontier are exactly zero by construction, not by arithmetic that happens
//! to cancel: row t of the mask literally never reads later features.

use crate::autodiff::{Graph, NodeId, Tensor, NEG_LARGE};
use crate::error::{Error, Result};
use rand::Rng;
use std::io::Write;
use std::path::Path;

/// Logits are clamped here before the sigmoid so mask entries stay strictly
/// inside (0,1) in f64: sigmoid(30) is still 1 - 9.4e-14.
pub const LOGIT_CLAMP: f64 = 30.0;

pub const DEFAULT_MASK_EPS: f64 = 1e-6;
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 0.5;

/// Soft causal mask: entries in (0,1) up to the frontier, exactly 0 above.
/// `grid_map[t]` is the source-frame index row t may see up to.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedMask {
    pub rows: Tensor,
    pub grid_map: Vec<usize>,
}

/// Pairwise scorer: relu MLP over concatenated feature pairs, linear head to
/// one logit. `layers` holds (weight, bias) in input-to-output order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskScorerParams<T> {
    pub layers: Vec<(T, T)>,
}

impl<T> MaskScorerParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MaskScorerParams<U> {
        MaskScorerParams {
            layers: self.layers.iter().map(|(w, b)| (f(w), f(b))).collect(),
        }
    }

    pub fn slots(&self) -> Vec<(String, &T)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("l{i}.w"), w));
            out.push((format!("l{i}.b"), b));
        }
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in self.layers.iter_mut() {
            out.push(w);
            out.push(b);
        }
        out
    }
}

impl MaskScorerParams<Tensor> {
    /// Hidden layers are Glorot-initialized; the final 1-logit layer starts
    /// at zero so every causal mask entry begins at sigmoid(0) = 0.5, a
    /// neutral gate.
    pub fn init(input_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            let w = if last {
                Tensor::zeros(dims[i], dims[i + 1])
            } else {
                Tensor::glorot(dims[i], dims[i + 1], rng)
            };
            layers.push((w, Tensor::zeros(1, dims[i + 1])));
        }
        MaskScorerParams { layers }
    }

    pub fn bind(&self, g: &mut Graph) -> MaskScorerParams<NodeId> {
        self.map(|t| g.param(t.clone()))
    }
}

/// The graph-side result of `predict_mask`: the dense [T_q x T_k] mask node
/// plus the causal layout needed to turn it into an attention bias.
#[derive(Debug, Clone)]
pub struct MaskPrediction {
    pub dense: NodeId,
    pub grid_map: Vec<usize>,
    /// Row-major flags: true at or below the frontier.
    pub allowed: Vec<bool>,
}

impl MaskPrediction {
    pub fn learned_mask(&self, g: &Graph) -> LearnedMask {
        LearnedMask { rows: g.value(self.dense).clone(), grid_map: self.grid_map.clone() }
    }

    /// Attention bias node: ln(mask + eps) on causal entries, the hard
    /// sentinel above the frontier.
    pub fn to_bias(&self, g: &mut Graph, eps: f64) -> Result<NodeId> {
        g.mask_to_bias(self.dense, &self.allowed, eps)
    }
}

fn mlp_forward(
    g: &mut Graph,
    scorer: &MaskScorerParams<NodeId>,
    mut x: NodeId,
) -> Result<NodeId> {
    let n = scorer.layers.len();
    for (i, &(w, b)) in scorer.layers.iter().enumerate() {
        x = g.matmul(x, w)?;
        x = g.add_row(x, b)?;
        if i + 1 < n {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Scores every causal (target row, source frame) pair and scatters the
/// sigmoid values into a dense mask with exact zeros above the frontier.
/// `grid_map[t]` must be nondecreasing and < source rows.
pub fn predict_mask(
    g: &mut Graph,
    scorer: &MaskScorerParams<NodeId>,
    target_feats: NodeId,
    source_feats: NodeId,
    grid_map: &[usize],
) -> Result<MaskPrediction> {
    let t_q = g.value(target_feats).rows();
    let t_k = g.value(source_feats).rows();
    if grid_map.len() != t_q {
        return Err(Error::Contract(format!(
            "grid_map has {} rows for {} target steps",
            grid_map.len(),
            t_q
        )));
    }
    if let Some(bad) = grid_map.iter().find(|&&f| f >= t_k) {
        return Err(Error::Contract(format!(
            "grid_map frame {bad} out of range for {t_k} source frames"
        )));
    }
    if grid_map.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Contract("grid_map must be nondecreasing".into()));
    }

    let mut tgt_idx = Vec::new();
    let mut src_idx = Vec::new();
    let mut positions = Vec::new();
    for (t, &frame) in grid_map.iter().enumerate() {
        for c in 0..=frame {
            tgt_idx.push(t);
            src_idx.push(c);
            positions.push((t, c));
        }
    }

    let tg = g.gather_rows(target_feats, &tgt_idx)?;
    let sg = g.gather_rows(source_feats, &src_idx)?;
    let pairs = g.concat_cols(&[tg, sg])?;
    let logits = mlp_forward(g, scorer, pairs)?;
    let clamped = g.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP);
    let vals = g.sigmoid(clamped);
    let dense = g.scatter_pairs(vals, &positions, t_q, t_k)?;

    let mut allowed = vec![false; t_q * t_k];
    for &(r, c) in &positions {
        allowed[r * t_k + c] = true;
    }
    Ok(MaskPrediction { dense, grid_map: grid_map.to_vec(), allowed })
}

/// Plain-tensor bias conversion for inspection paths (dumps, tests):
/// ln(mask + eps) on causal entries, NEG_LARGE above the frontier.
pub fn mask_to_bias(mask: &LearnedMask, eps: f64) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::Contract(format!("mask_to_bias eps must be positive, got {eps}")));
    }
    let (t_q, t_k) = mask.rows.shape();
    let mut out = Tensor::filled(t_q, t_k, NEG_LARGE);
    for (t, &frame) in mask.grid_map.iter().enumerate() {
        for c in 0..=frame.min(t_k - 1) {
            out.set(t, c, (mask.rows.get(t, c) + eps).ln());
        }
    }
    Ok(out)
}

/// Per-row (frames_used, frames_available): how many causal entries clear
/// `threshold`, out of frame(t)+1 available.
pub fn sparsity_stats(mask: &LearnedMask, threshold: f64) -> Result<Vec<(usize, usize)>> {
    if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
        return Err(Error::Contract(format!(
            "sparsity threshold must lie in (0,1), got {threshold}"
        )));
    }
    Ok(mask
        .grid_map
        .iter()
        .enumerate()
        .map(|(t, &frame)| {
            let used = (0..=frame).filter(|&c| mask.rows.get(t, c) >= threshold).count();
            (used, frame + 1)
        })
        .collect())
}

/// CSV dump: header `row,col,value`, rows in (row, col) lexicographic order,
/// six decimal digits.
pub fn dump_mask_csv(mask: &LearnedMask, path: &Path) -> Result<()> {
    let mut out = String::from("row,col,value\n");
    let (t_q, t_k) = mask.rows.shape();
    for r in 0..t_q {
        for c in 0..t_k {
            out.push_str(&format!("{r},{c},{:.6}\n", mask.rows.get(r, c)));
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_scorer(input_dim: usize, hidden: &[usize]) -> MaskScorerParams<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = MaskScorerParams::init(input_dim, hidden, &mut rng);
        for (w, b) in s.layers.iter_mut() {
            *w = Tensor::zeros(w.rows(), w.cols());
            *b = Tensor::zeros(b.rows(), b.cols());
        }
        s
    }

    fn random_scorer(input_dim: usize, hidden: &[usize], seed: u64) -> MaskScorerParams<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = MaskScorerParams::init(input_dim, hidden, &mut rng);
        // tests want non-neutral masks, so give the zero-initialized final
        // layer random weights too
        let last = s.layers.len() - 1;
        let (w, _) = &mut s.layers[last];
        *w = Tensor::glorot(w.rows(), w.cols(), &mut rng);
        s
    }

    #[test]
    fn zero_scorer_gives_half_on_causal_entries_and_zero_above() {
        let scorer = zero_scorer(8, &[4, 2]);
        let mut g = Graph::new();
        let sb = scorer.bind(&mut g);
        let feats = g.constant(Tensor::glorot(4, 4, &mut ChaCha8Rng::seed_from_u64(1)));
        let pred = predict_mask(&mut g, &sb, feats, feats, &[0, 1, 2, 3]).unwrap();
        let mask = pred.learned_mask(&g);
        for r in 0..4 {
            for c in 0..4 {
                if c <= r {
                    assert_eq!(mask.rows.get(r, c), 0.5);
                } else {
                    assert_eq!(mask.rows.get(r, c).to_bits(), 0.0_f64.to_bits());
                }
            }
        }
    }

    #[test]
    fn identity_grid_has_lower_triangle_support() {
        let scorer = random_scorer(8, &[4, 2], 3);
        let mut g = Graph::new();
        let sb = scorer.bind(&mut g);
        let feats = g.constant(Tensor::glorot(4, 4, &mut ChaCha8Rng::seed_from_u64(2)));
        let pred = predict_mask(&mut g, &sb, feats, feats, &[0, 1, 2, 3]).unwrap();
        let mask = pred.learned_mask(&g);
        let nonzero = mask.rows.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 10);
        for v in mask.rows.data() {
            assert!(*v >= 0.0 && *v < 1.0);
            if *v != 0.0 {
                assert!(*v > 0.0 && *v < 1.0);
            }
        }
    }

    #[test]
    fn rows_ignore_later_source_features() {
        let scorer = random_scorer(6, &[4], 5);
        let run = |spike: f64| {
            let mut g = Graph::new();
            let sb = scorer.bind(&mut g);
            let mut feats_t = Tensor::glorot(4, 3, &mut ChaCha8Rng::seed_from_u64(9));
            feats_t.set(3, 0, spike);
            let feats = g.constant(feats_t);
            let pred = predict_mask(&mut g, &sb, feats, feats, &[0, 1, 2, 3]).unwrap();
            pred.learned_mask(&g)
        };
        let a = run(0.0);
        let b = run(500.0);
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(a.rows.get(r, c).to_bits(), b.rows.get(r, c).to_bits());
            }
        }
        assert_ne!(a.rows.get(3, 3).to_bits(), b.rows.get(3, 3).to_bits());
    }

    #[test]
    fn grid_map_contract_violations() {
        let scorer = random_scorer(4, &[2], 1);
        let mut g = Graph::new();
        let sb = scorer.bind(&mut g);
        let feats = g.constant(Tensor::glorot(3, 2, &mut ChaCha8Rng::seed_from_u64(4)));
        let err = predict_mask(&mut g, &sb, feats, feats, &[0, 1, 3]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = predict_mask(&mut g, &sb, feats, feats, &[2, 1, 2]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = predict_mask(&mut g, &sb, feats, feats, &[0, 1]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bias_conversion_known_values() {
        let mask = LearnedMask {
            rows: Tensor::from_rows(&[vec![1.0 - 1e-6, 0.0], vec![0.5, 0.5]]).unwrap(),
            grid_map: vec![0, 1],
        };
        let bias = mask_to_bias(&mask, 1e-6).unwrap();
        assert!(bias.get(0, 0).abs() < 1e-5);
        assert_eq!(bias.get(0, 1), NEG_LARGE);
        assert!((bias.get(1, 0) - (-0.693145)).abs() < 1e-5);
    }

    #[test]
    fn bias_then_softmax_starves_future_positions() {
        let scorer = random_scorer(6, &[4], 8);
        let mut g = Graph::new();
        let sb = scorer.bind(&mut g);
        let feats = g.constant(Tensor::glorot(5, 3, &mut ChaCha8Rng::seed_from_u64(12)));
        let pred = predict_mask(&mut g, &sb, feats, feats, &[0, 1, 2, 3, 4]).unwrap();
        let bias = pred.to_bias(&mut g, DEFAULT_MASK_EPS).unwrap();
        let w = g.softmax_rows(bias).unwrap();
        let t = g.value(w);
        for r in 0..5 {
            let sum: f64 = t.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for c in r + 1..5 {
                assert!(t.get(r, c) < 1e-12);
            }
        }
    }

    #[test]
    fn sparsity_counts() {
        let all_half = LearnedMask {
            rows: Tensor::from_rows(&[vec![0.5, 0.0], vec![0.5, 0.5]]).unwrap(),
            grid_map: vec![0, 1],
        };
        assert_eq!(sparsity_stats(&all_half, 0.5).unwrap(), vec![(1, 1), (2, 2)]);

        let row = LearnedMask {
            rows: Tensor::from_rows(&[vec![0.9, 0.1, 0.6, 0.2]]).unwrap(),
            grid_map: vec![3],
        };
        assert_eq!(sparsity_stats(&row, 0.5).unwrap(), vec![(2, 4)]);
        assert_eq!(sparsity_stats(&row, 0.999).unwrap(), vec![(0, 4)]);
        assert_eq!(sparsity_stats(&row, 1.0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn availability_is_nondecreasing_for_monotone_grids() {
        let scorer = random_scorer(4, &[2], 2);
        let mut g = Graph::new();
        let sb = scorer.bind(&mut g);
        let tgt = g.constant(Tensor::glorot(3, 2, &mut ChaCha8Rng::seed_from_u64(3)));
        let src = g.constant(Tensor::glorot(9, 2, &mut ChaCha8Rng::seed_from_u64(4)));
        let pred = predict_mask(&mut g, &sb, tgt, src, &[2, 5, 8]).unwrap();
        let stats = sparsity_stats(&pred.learned_mask(&g), 0.5).unwrap();
        let avail: Vec<usize> = stats.iter().map(|&(_, a)| a).collect();
        assert_eq!(avail, vec![3, 6, 9]);
    }

    #[test]
    fn mask_chain_gradient_check() {
        // predict_mask -> bias -> softmax attention -> scalar loss, checking
        // scorer parameters and both feature inputs
        let scorer = random_scorer(6, &[4, 3], 6);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tgt = Tensor::glorot(3, 3, &mut rng);
        let src = Tensor::glorot(4, 3, &mut rng);
        let mut params: Vec<(String, Tensor)> = scorer
            .slots()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        params.push(("tgt".into(), tgt));
        params.push(("src".into(), src));
        let report = grad_check(&params, 1e-5, |g, ids| {
            let sb = MaskScorerParams {
                layers: vec![(ids[0], ids[1]), (ids[2], ids[3]), (ids[4], ids[5])],
            };
            let (tgt, src) = (ids[6], ids[7]);
            let pred = predict_mask(g, &sb, tgt, src, &[1, 2, 3])?;
            let bias = pred.to_bias(g, DEFAULT_MASK_EPS)?;
            let att = g.softmax_rows(bias)?;
            let mixed = g.matmul(att, src)?;
            Ok(g.sum_sq(mixed))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "worst {:?}", report.worst);
    }

    #[test]
    fn csv_dump_layout() {
        let mask = LearnedMask {
            rows: Tensor::from_rows(&[vec![0.5, 0.0], vec![0.25, 0.75]]).unwrap(),
            grid_map: vec![0, 1],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        dump_mask_csv(&mask, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "row,col,value\n0,0,0.500000\n0,1,0.000000\n1,0,0.250000\n1,1,0.750000\n"
        );
    }
}
