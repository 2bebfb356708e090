//! Losses, SGD, and the two-stage training procedure: cross-entropy
//! pre-training, then a second stage that adds the anticipation-gap
//! regularizer pulling every decoder embedding toward the final step's.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::{augment, mix, FeatureSequence};
use crate::error::{Error, Result};
use crate::metrics::compute_metrics;
use crate::model::{
    encoding_window, forward_nodes, save_checkpoint, ModelConfig, PredictionTimeline,
    TamformerParams,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

const LN_FLOOR: f64 = 1e-12;

/// Parameters past this magnitude cannot survive the next forward pass
/// (chained products overflow), so the run is declared diverged while the
/// offending epoch is still known.
const PARAM_GUARD: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Expand the train set with shifted encoding windows before training.
    pub augment: bool,
    pub aug_max_shifts: usize,
    pub aug_shift_step: usize,
    /// Detach the final embedding in the regularizer so it acts as a
    /// teacher for earlier steps.
    pub stop_target: bool,
    pub reg_scale: f64,
    /// Multiplier on the crossing-class cross entropy.
    pub pos_weight: f64,
    /// Extra checkpoint every this many epochs; 0 writes only stage ends.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            epochs_stage1: 150,
            epochs_stage2: 150,
            batch_size: 8,
            seed: 0,
            augment: false,
            aug_max_shifts: 5,
            aug_shift_step: 3,
            stop_target: true,
            reg_scale: 1.0,
            pos_weight: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Published schedule: two 500-epoch phases. The published learning
    /// rates are 1e-5, 1e-2, and 1e-3 depending on dataset; 1e-3 is the
    /// default here and the field is free to override.
    pub fn paper() -> Self {
        TrainConfig { lr: 1e-3, epochs_stage1: 500, epochs_stage2: 500, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Contract(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be at least 1".into()));
        }
        if !(self.reg_scale >= 0.0) || !(self.pos_weight > 0.0) {
            return Err(Error::Contract("reg_scale must be >= 0 and pos_weight > 0".into()));
        }
        if self.augment && self.aug_shift_step == 0 {
            return Err(Error::Contract("aug_shift_step must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean binary cross entropy over the timeline's scores, ln arguments
/// floored at 1e-12. Matches the graph-side loss exactly.
pub fn bce_loss(timeline: &PredictionTimeline, label: u8) -> Result<f64> {
    if timeline.scores.is_empty() {
        return Err(Error::Contract("cross entropy needs at least one query step".into()));
    }
    if label > 1 {
        return Err(Error::Contract(format!("label must be 0 or 1, got {label}")));
    }
    let y = label as f64;
    let total: f64 = timeline
        .scores
        .iter()
        .map(|&s| -(y * s.max(LN_FLOOR).ln() + (1.0 - y) * (1.0 - s).max(LN_FLOOR).ln()))
        .sum();
    Ok(total / timeline.scores.len() as f64)
}

/// Anticipation gap: sum over steps of the squared distance to the final
/// step's embedding.
pub fn reg_loss(embeddings: &Tensor) -> Result<f64> {
    if embeddings.rows() < 2 {
        return Err(Error::Contract("regularizer needs at least 2 query steps".into()));
    }
    let last = embeddings.rows() - 1;
    let mut total = 0.0;
    for t in 0..embeddings.rows() {
        for c in 0..embeddings.cols() {
            let d = embeddings.get(t, c) - embeddings.get(last, c);
            total += d * d;
        }
    }
    Ok(total)
}

/// Graph form of `bce_loss`; `pos_weight` scales the whole term for
/// crossing samples.
pub fn bce_loss_node(g: &mut Graph, scores: NodeId, label: u8, pos_weight: f64) -> Result<NodeId> {
    if g.value(scores).rows() == 0 {
        return Err(Error::Contract("cross entropy needs at least one query step".into()));
    }
    let per_step = g.bce(scores, label as f64)?;
    let ce = g.mean(per_step);
    Ok(if label == 1 && pos_weight != 1.0 { g.scale(ce, pos_weight) } else { ce })
}

/// Graph form of `reg_loss`. With `stop_target` the final embedding is
/// detached, so gradient flows only into the earlier steps being pulled.
pub fn reg_loss_node(g: &mut Graph, z_d: NodeId, stop_target: bool) -> Result<NodeId> {
    let rows = g.value(z_d).rows();
    if rows < 2 {
        return Err(Error::Contract("regularizer needs at least 2 query steps".into()));
    }
    let last = g.gather_rows(z_d, &[rows - 1])?;
    let target = if stop_target { g.stop_grad(last) } else { last };
    let neg = g.scale(target, -1.0);
    let diff = g.add_row(z_d, neg)?;
    Ok(g.sum_sq(diff))
}

/// One SGD update, elementwise theta <- theta - lr * g.
pub fn apply_sgd(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::Dimension {
            op: "sgd_step".into(),
            detail: format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
        });
    }
    let g = grad.data();
    for (p, &gv) in param.data_mut().iter_mut().zip(g) {
        *p -= lr * gv;
    }
    Ok(())
}

/// Update every parameter from grads aligned with the canonical slot order.
/// A missing gradient means the parameter did not influence the loss and is
/// left unchanged.
pub fn sgd_step(
    params: &mut TamformerParams<Tensor>,
    grads: &[Option<Tensor>],
    lr: f64,
) -> Result<()> {
    let slots = params.slots_mut();
    if slots.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            slots.len()
        )));
    }
    for (slot, grad) in slots.into_iter().zip(grads) {
        if let Some(grad) = grad {
            apply_sgd(slot, grad, lr)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based across both stages.
    pub epoch: usize,
    pub stage: u8,
    pub l_ce: f64,
    pub l_r: f64,
    pub l_total: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,stage,l_ce,l_r,l_total,acc,auc,f1\n");
        for r in &self.rows {
            let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.stage, r.l_ce, r.l_r, r.l_total, r.accuracy, auc, r.f1
            ));
        }
        let mut f =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

struct Prepared {
    windows: Vec<Tensor>,
    label: u8,
}

/// Two-stage training. Stage 1 minimizes the cross entropy; stage 2 resumes
/// from the stage-1 parameters and adds the anticipation-gap term. Writes
/// `stage1.json` / `stage2.json` checkpoints into `out_dir`, plus optional
/// per-epoch ones. Per-epoch metrics come from each sample's final-step
/// score collected during the training pass.
pub fn train_two_stage(
    samples: &[FeatureSequence],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(TamformerParams<Tensor>, TrainLog)> {
    model_cfg.validate()?;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("training needs a nonempty sample set".into()));
    }

    let mut train_set: Vec<FeatureSequence> = Vec::new();
    if cfg.augment {
        for s in samples {
            train_set.extend(augment(s, cfg.aug_max_shifts, cfg.aug_shift_step)?);
        }
    } else {
        train_set.extend_from_slice(samples);
    }
    let prepared: Vec<Prepared> = train_set
        .iter()
        .map(|s| {
            let (windows, _) = encoding_window(model_cfg, s)?;
            Ok(Prepared { windows, label: s.label })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = TamformerParams::init(model_cfg, cfg.seed)?;
    let n_slots = params.slots().len();
    let mut log = TrainLog::default();
    let mut epoch = 0usize;

    for stage in 1u8..=2 {
        let epochs = if stage == 1 { cfg.epochs_stage1 } else { cfg.epochs_stage2 };
        for _ in 0..epochs {
            epoch += 1;
            let mut order: Vec<usize> = (0..prepared.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64)));

            let mut sum_ce = 0.0;
            let mut sum_r = 0.0;
            let mut finals: Vec<(f64, u8)> = Vec::with_capacity(prepared.len());

            for batch in order.chunks(cfg.batch_size) {
                let mut grad_sums: Vec<Option<Tensor>> = vec![None; n_slots];
                for &i in batch {
                    let p = &prepared[i];
                    let mut g = Graph::new();
                    let bound = params.bind(&mut g);
                    let fwd = forward_nodes(&mut g, &bound, model_cfg, &p.windows)?;
                    let ce = bce_loss_node(&mut g, fwd.scores, p.label, cfg.pos_weight)?;
                    let total = if stage == 2 {
                        let reg = reg_loss_node(&mut g, fwd.z_d, cfg.stop_target)?;
                        let reg = g.scale(reg, cfg.reg_scale);
                        sum_r += g.value(reg).as_scalar()?;
                        g.add(ce, reg)?
                    } else {
                        ce
                    };
                    let loss_val = g.value(total).as_scalar()?;
                    if !loss_val.is_finite() {
                        return Err(Error::Diverged { epoch, stage });
                    }
                    sum_ce += g.value(ce).as_scalar()?;
                    let scores = g.value(fwd.scores);
                    finals.push((scores.get(scores.rows() - 1, 0), p.label));

                    g.backward(total)?;
                    for (slot, (_, id)) in grad_sums.iter_mut().zip(bound.slots()) {
                        if let Some(gr) = g.grad(*id) {
                            match slot {
                                Some(acc) => acc.add_assign(gr),
                                None => *slot = Some(gr.clone()),
                            }
                        }
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                let grads: Vec<Option<Tensor>> =
                    grad_sums.into_iter().map(|o| o.map(|t| t.map(|v| v * inv))).collect();
                sgd_step(&mut params, &grads, cfg.lr)?;
                // Catch hard divergence before the next forward pass sees it.
                let blown = params.slots().iter().any(|(_, t)| {
                    t.data().iter().any(|v| !v.is_finite() || v.abs() > PARAM_GUARD)
                });
                if blown {
                    return Err(Error::Diverged { epoch, stage });
                }
            }

            let n = prepared.len() as f64;
            let (scores, labels): (Vec<f64>, Vec<u8>) = finals.into_iter().unzip();
            let m = compute_metrics(&scores, &labels, 0.5)?;
            let l_ce = sum_ce / n;
            let l_r = sum_r / n;
            log.rows.push(EpochRecord {
                epoch,
                stage,
                l_ce,
                l_r,
                l_total: l_ce + l_r,
                accuracy: m.accuracy,
                auc: m.auc,
                f1: m.f1,
            });

            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(&out_dir.join(format!("epoch{epoch}.json")), model_cfg, &params)?;
            }
        }
        save_checkpoint(&out_dir.join(format!("stage{stage}.json")), model_cfg, &params)?;
    }
    Ok((params, log))
}
