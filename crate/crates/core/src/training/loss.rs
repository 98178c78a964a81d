use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Softmax cross-entropy over the last axis.
    Ce,
    Mse,
    /// Mean absolute error over the naive persistence error.
    Mase,
}

/// Mean loss and its gradient with respect to the outputs.
#[derive(Debug, Clone)]
pub struct LossValue<F: Real> {
    pub value: f64,
    pub grad: Tensor<F>,
}

/// Mean softmax cross-entropy of `logits (.., C)` against one class per row.
pub fn cross_entropy<F: Real>(logits: &Tensor<F>, classes: &[usize]) -> Result<LossValue<F>> {
    let c = logits.last_dim();
    let rows = if c == 0 { 0 } else { logits.len() / c };
    if rows != classes.len() || rows == 0 {
        return Err(Error::shape(
            "cross_entropy",
            logits.shape(),
            &[classes.len(), c],
        ));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    let inv = 1.0 / rows as f64;
    for (r, &y) in classes.iter().enumerate() {
        if y >= c {
            return Err(Error::Data(format!(
                "class {y} out of range for {c} outputs"
            )));
        }
        let row = &logits.data()[r * c..(r + 1) * c];
        let max = row
            .iter()
            .map(|v| v.f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - row[y].f64();
        let g = &mut grad.data_mut()[r * c..(r + 1) * c];
        for (k, e) in exps.iter().enumerate() {
            let p = e / z;
            g[k] = F::of((p - if k == y { 1.0 } else { 0.0 }) * inv);
        }
    }
    Ok(LossValue {
        value: total * inv,
        grad,
    })
}

/// Mean squared error over every element.
pub fn mse<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<LossValue<F>> {
    if pred.shape() != target.shape() || pred.is_empty() {
        return Err(Error::shape("mse", pred.shape(), target.shape()));
    }
    let inv = 1.0 / pred.len() as f64;
    let mut total = 0.0;
    let grad = Tensor::from_fn(pred.shape(), |i| {
        let d = pred.data()[i].f64() - target.data()[i].f64();
        total += d * d;
        F::of(2.0 * d * inv)
    });
    Ok(LossValue {
        value: total * inv,
        grad,
    })
}

/// Mean absolute one-step change of `series (N, T, D)` along time: the error
/// of forecasting each step with the previous one.
pub fn persistence_scale<F: Real>(series: &Tensor<F>) -> Result<f64> {
    if series.rank() != 3 || series.dim(1) < 2 {
        return Err(Error::invalid(format!(
            "persistence scale needs (N, T >= 2, D) series, got {:?}",
            series.shape()
        )));
    }
    let (n, t, d) = (series.dim(0), series.dim(1), series.dim(2));
    let s = series.data();
    let level = s.iter().map(|v| v.f64().abs()).sum::<f64>() / s.len() as f64;
    let mut total = 0.0;
    for b in 0..n {
        for ti in 1..t {
            for k in 0..d {
                total += (s[(b * t + ti) * d + k].f64() - s[(b * t + ti - 1) * d + k].f64()).abs();
            }
        }
    }
    let scale = total / (n * (t - 1) * d) as f64;
    // Changes at rounding level count as zero: a series sitting on a fixed
    // point drifts by ulps, not by zero.
    if !(scale > 1e-12 * level.max(1.0)) || !scale.is_finite() {
        return Err(Error::Numerical(
            "MASE denominator is zero: the target series is constant".into(),
        ));
    }
    Ok(scale)
}

/// `mean|pred - target| / scale`, with the scale from [`persistence_scale`].
pub fn mase<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, scale: f64) -> Result<LossValue<F>> {
    if pred.shape() != target.shape() || pred.is_empty() {
        return Err(Error::shape("mase", pred.shape(), target.shape()));
    }
    if !(scale > 0.0) {
        return Err(Error::Numerical("MASE denominator is zero".into()));
    }
    let inv = 1.0 / (pred.len() as f64 * scale);
    let mut total = 0.0;
    let grad = Tensor::from_fn(pred.shape(), |i| {
        let d = pred.data()[i].f64() - target.data()[i].f64();
        total += d.abs();
        F::of(if d == 0.0 { 0.0 } else { d.signum() * inv })
    });
    Ok(LossValue {
        value: total * inv,
        grad,
    })
}
