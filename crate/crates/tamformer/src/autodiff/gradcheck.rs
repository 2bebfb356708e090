//! Central finite-difference verification of the reverse sweep.

use crate::autodiff::graph::{Graph, NodeId};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct WorstEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<WorstEntry>,
    pub n_elements: usize,
}

/// Compares the analytic gradient of `build`'s scalar loss against
/// (f(θ+eps) − f(θ−eps)) / (2·eps) for every entry of every parameter.
/// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
///
/// `build` must be a pure function of the leaves it is handed: it is re-run
/// 2·n times with perturbed values.
pub fn grad_check<F>(params: &[(String, Tensor)], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "grad_check eps must lie in [1e-7, 1e-3], got {eps:e}"
        )));
    }

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let loss_val = g.value(loss).as_scalar().map_err(|_| {
        Error::Contract(format!(
            "grad_check loss must be scalar, got {:?}",
            g.value(loss).shape()
        ))
    })?;
    if !loss_val.is_finite() {
        return Err(Error::Contract(format!("grad_check loss is not finite: {loss_val}")));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(&id, (_, t))| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();
    drop(g);

    // Numeric pass over a mutable copy of the parameter set.
    let mut work: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss).as_scalar()
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, n_elements: 0 };
    for pi in 0..work.len() {
        for j in 0..work[pi].len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.n_elements += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some(WorstEntry {
                    param: params[pi].0.clone(),
                    index: j,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}
