//! Evaluation across anticipation times: map each requested lead time to
//! the nearest query step per sample, score the split there, and emit the
//! per-time metrics grid as CSV or JSON.

use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::json_io;
use crate::maskgen::{sparsity_stats, DEFAULT_SPARSITY_THRESHOLD};
use crate::metrics::compute_metrics;
use crate::model::{forward_trace, ModelConfig, TamformerParams};
use crate::autodiff::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    /// Seconds of lead time before the event.
    pub t_a: f64,
    pub accuracy: f64,
    /// Absent when the split holds a single class.
    pub auc: Option<f64>,
    pub f1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Mean count of past frames whose decoder mask value clears 0.5 at the
    /// mapped step.
    pub mean_frames_used: f64,
    pub mean_frames_available: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// One row per distinct requested time, descending (furthest from the
    /// event first).
    pub rows: Vec<TimeRow>,
    pub threshold: f64,
    /// Fixed convention, recorded so numbers are comparable across tools.
    pub auc_ties: String,
    pub config: ModelConfig,
    /// Generator seed of the evaluated split when known.
    pub dataset_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Index of the step whose anticipation is closest to `t_a`; ties go to the
/// earlier frame. `anticipations` descend with the step index because later
/// frames sit closer to the event.
pub(crate) fn nearest_step(anticipations: &[f64], t_a: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (q, &a) in anticipations.iter().enumerate() {
        let d = (a - t_a).abs();
        if d < best_dist {
            best_dist = d;
            best = q;
        }
    }
    best
}

struct Traced {
    label: u8,
    /// Anticipation seconds per query step.
    anticipations: Vec<f64>,
    scores: Vec<f64>,
    /// (frames over threshold, frames available) per query step.
    sparsity: Vec<(usize, usize)>,
}

/// Score every sample at the query step nearest each requested lead time.
/// Every time must fall inside the range observable by all samples, else
/// the error reports the valid bounds.
pub fn evaluate_at_times(
    params: &TamformerParams<Tensor>,
    config: &ModelConfig,
    samples: &[FeatureSequence],
    times: &[f64],
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluation needs a nonempty split".into()));
    }
    if times.is_empty() {
        return Err(Error::Contract("evaluation needs at least one anticipation time".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Contract("anticipation times must be finite".into()));
    }

    let mut traced = Vec::with_capacity(samples.len());
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for s in samples {
        let (timeline, _, mask_d) = forward_trace(params, config, s)?;
        // The window is the trailing t_enc frames, so this offset is exact.
        let offset = s.t_avail() - config.t_enc;
        let fps = s.fps as f64;
        let anticipations: Vec<f64> = timeline
            .query_frames
            .iter()
            .map(|&f| (s.event_frame as f64 - (offset + f) as f64) / fps)
            .collect();
        lo = lo.max(*anticipations.last().unwrap());
        hi = hi.min(anticipations[0]);
        traced.push(Traced {
            label: s.label,
            anticipations,
            scores: timeline.scores,
            sparsity: sparsity_stats(&mask_d, DEFAULT_SPARSITY_THRESHOLD)?,
        });
    }
    if lo > hi {
        return Err(Error::Contract(
            "samples share no common observable anticipation range".into(),
        ));
    }

    let mut wanted: Vec<f64> = times.to_vec();
    wanted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    wanted.dedup();

    let mut rows = Vec::with_capacity(wanted.len());
    for &t_a in &wanted {
        if t_a < lo - 1e-9 || t_a > hi + 1e-9 {
            return Err(Error::TimeRange { requested: t_a, min: lo, max: hi });
        }
        let mut scores = Vec::with_capacity(traced.len());
        let mut labels = Vec::with_capacity(traced.len());
        let mut used_sum = 0.0;
        let mut avail_sum = 0.0;
        for t in &traced {
            let q = nearest_step(&t.anticipations, t_a);
            scores.push(t.scores[q]);
            labels.push(t.label);
            used_sum += t.sparsity[q].0 as f64;
            avail_sum += t.sparsity[q].1 as f64;
        }
        let m = compute_metrics(&scores, &labels, threshold)?;
        rows.push(TimeRow {
            t_a,
            accuracy: m.accuracy,
            auc: m.auc,
            f1: m.f1,
            n_pos: m.n_pos,
            n_neg: m.n_neg,
            mean_frames_used: used_sum / traced.len() as f64,
            mean_frames_available: avail_sum / traced.len() as f64,
        });
    }

    Ok(MetricsReport {
        rows,
        threshold,
        auc_ties: "mid-rank, tied pairs credited 0.5".into(),
        config: config.clone(),
        dataset_seed: None,
    })
}

pub fn emit_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => json_io::write_json_file(path, report),
        ReportFormat::Csv => {
            let mut out = String::from(
                "t_a,acc,auc,f1,n_pos,n_neg,mean_frames_used,mean_frames_available\n",
            );
            for r in &report.rows {
                let auc = r.auc.map(|a| format!("{a:.4}")).unwrap_or_default();
                out.push_str(&format!(
                    "{:.4},{:.4},{},{:.4},{},{},{:.4},{:.4}\n",
                    r.t_a, r.accuracy, auc, r.f1, r.n_pos, r.n_neg, r.mean_frames_used,
                    r.mean_frames_available
                ));
            }
            let mut f = std::fs::File::create(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            f.write_all(out.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
        }
    }
}
