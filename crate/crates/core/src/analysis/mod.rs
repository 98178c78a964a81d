//! Post-hoc diagnostics: nearest-neighbour overlap, PCA of hidden states,
//! linear probes and the evaluation report.

mod embed;

pub use embed::{fit_ridge, knn_sets, nn_overlap, pca, Pca, Ridge};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::numcore::{Real, Tensor};
use crate::tasks::lorenz::{CLEAN, OOD_TARGETS};
use crate::tasks::{Dataset, Targets};
use crate::training::{check_compatible, evaluate, persistence_scale, LossKind, TrainConfig};

/// Mixer outputs of the last layer, `(N, T, H)`.
pub fn collect_hidden<F: Real>(
    params: &NetworkParams<F>,
    data: &Dataset,
    batch: usize,
) -> Result<Tensor<f32>> {
    let (n, t, h) = (data.len(), data.seq_len(), params.config.hidden);
    let mut out = Vec::with_capacity(n * t * h);
    for start in (0..n).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let (_, cache) = params.forward(&data.batch_inputs(&idx))?;
        let last = cache
            .hidden_states()
            .pop()
            .ok_or_else(|| Error::invalid("network has no layers"))?;
        out.extend(last.data().iter().map(|v| v.f64() as f32));
    }
    Tensor::new(&[n, t, h], out)
}

/// Rows `(n, t)` with `t >= washout`, flattened to `(rows, D)`.
fn rows_after(x: &Tensor<f32>, washout: usize) -> Tensor<f64> {
    let (n, t, d) = (x.dim(0), x.dim(1), x.dim(2));
    let keep = t.saturating_sub(washout);
    let mut out = Vec::with_capacity(n * keep * d);
    for b in 0..n {
        for ti in washout.min(t)..t {
            out.extend(
                x.data()[(b * t + ti) * d..(b * t + ti + 1) * d]
                    .iter()
                    .map(|&v| v as f64),
            );
        }
    }
    Tensor::new(&[n * keep, d], out).expect("row count matches")
}

/// Every `stride`-th row so at most `max` rows remain.
fn thin(x: &Tensor<f64>, max: usize) -> Tensor<f64> {
    let n = x.dim(0);
    if n <= max {
        return x.clone();
    }
    let stride = n.div_ceil(max);
    x.gather_rows(&(0..n).step_by(stride).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Neighbours per point in the overlap score.
    pub k: usize,
    /// Points used for the overlap score (thinned by stride).
    pub max_points: usize,
    /// Leading steps of every sequence left out of probe and overlap.
    pub washout: usize,
    pub ridge: f64,
    pub batch: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 20,
            max_points: 2000,
            washout: 16,
            ridge: 1e-3,
            batch: 256,
        }
    }
}

/// Metrics JSON. Keys are stable; metrics that do not apply are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub loss: f64,
    #[serde(rename = "val_MASE_obs", skip_serializing_if = "Option::is_none")]
    pub val_mase_obs: Option<f64>,
    #[serde(rename = "OOD_MASE_unobs", skip_serializing_if = "Option::is_none")]
    pub ood_mase_unobs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nn_overlap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_accuracy: Option<f64>,
}

/// Score `params` on `data`.
///
/// For Lorenz data the unobserved coordinates are predicted by a ridge
/// probe from the last layer's hidden states, fitted on `fit` (or on the
/// first half of `data` when `fit` is `None`, in which case the probe and
/// the overlap are scored on the second half).
pub fn eval_suite<F: Real>(
    params: &NetworkParams<F>,
    data: &Dataset,
    fit: Option<&Dataset>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    // A 4-way flip-flop readout emits set logits rather than a multi-hot vector.
    let loss = match (&data.targets, params.config.output_dim) {
        (Targets::FlipFlop { .. }, 4) => LossKind::Ce,
        (t, _) => TrainConfig::default().loss_for(t),
    };
    check_compatible(params, data, loss)?;
    let ev = evaluate(params, data, loss, opts.batch)?;
    let mut report = EvalReport {
        n: data.len(),
        loss: ev.loss,
        ..Default::default()
    };
    match &data.targets {
        Targets::Classes(_) | Targets::StepClasses(_) => report.accuracy = Some(ev.metric),
        Targets::FlipFlop { .. } => {
            report.set_accuracy = Some(ev.metric);
            report.read_accuracy = ev.read_accuracy;
        }
        Targets::Values(_) => {
            report.val_mase_obs = Some(ev.metric);
            if data.extras.contains_key(OOD_TARGETS) {
                let (fit_set, eval_set) = match fit {
                    Some(f) => (f.clone(), data.clone()),
                    None => {
                        let half = data.len() / 2;
                        if half == 0 {
                            return Err(Error::Data(
                                "need at least 2 sequences to fit and score the probe".into(),
                            ));
                        }
                        (data.first(half), data.range(half, data.len()))
                    }
                };
                let (ood, overlap) = lorenz_probe(params, &fit_set, &eval_set, opts)?;
                report.ood_mase_unobs = Some(ood);
                report.nn_overlap = overlap;
            }
        }
    }
    Ok(report)
}

fn extra<'a>(d: &'a Dataset, key: &str) -> Result<&'a Tensor<f32>> {
    d.extras
        .get(key)
        .ok_or_else(|| Error::Data(format!("dataset lacks the `{key}` extra")))
}

/// OOD MASE of a ridge probe and the clean-state overlap on `eval`.
fn lorenz_probe<F: Real>(
    params: &NetworkParams<F>,
    fit: &Dataset,
    eval: &Dataset,
    opts: &EvalOptions,
) -> Result<(f64, Option<f64>)> {
    let w = opts.washout.min(fit.seq_len().saturating_sub(2));
    let h_fit = rows_after(&collect_hidden(params, fit, opts.batch)?, w);
    let y_fit = rows_after(extra(fit, OOD_TARGETS)?, w);
    let probe = fit_ridge(&h_fit, &y_fit, opts.ridge)?;

    let h_eval_seq = collect_hidden(params, eval, opts.batch)?;
    let ood_seq = extra(eval, OOD_TARGETS)?;
    let h_eval = rows_after(&h_eval_seq, w);
    let pred = probe.predict(&h_eval)?;
    let y_eval = rows_after(ood_seq, w);
    let abs_err = pred
        .data()
        .iter()
        .zip(y_eval.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / pred.len() as f64;
    let scale = persistence_scale(&ood_seq.slice(1, w..ood_seq.dim(1))?)?;
    let overlap = match eval.extras.get(CLEAN) {
        Some(clean) => {
            let orig = thin(&rows_after(clean, w), opts.max_points);
            let hid = thin(&h_eval, opts.max_points);
            if orig.dim(0) > opts.k {
                Some(nn_overlap(&orig, &hid, opts.k)?)
            } else {
                None
            }
        }
        None => None,
    };
    Ok((abs_err / scale, overlap))
}

/// `pc1,pc2,...` CSV of PCA projections.
pub fn projections_csv(p: &Pca) -> String {
    let k = p.projections.dim(1);
    let mut s = (1..=k)
        .map(|i| format!("pc{i}"))
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for row in p.projections.data().chunks(k) {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "{line}");
    }
    s
}
