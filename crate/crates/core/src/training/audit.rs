//! Finite-difference audit of every hand-written backward pass in a network.

use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, mse, LossValue};
use crate::error::{Error, Result};
use crate::model::{ConvConfig, ConvKind, Head, NetworkConfig, NetworkParams, ParamGroup};
use crate::numcore::{compare_grads, finite_diff_grad, GradComparison, Rng, Tensor, AUDIT_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub network: NetworkConfig,
    pub seq_len: usize,
    pub batch: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Inputs are redrawn until every ReLU input is at least this far from 0.
    pub kink_margin: f64,
}

/// Two layers of four units with learnable positions, every block on.
pub fn reference_audit_network() -> NetworkConfig {
    NetworkConfig {
        layers: 2,
        hidden: 4,
        input_dim: 2,
        output_dim: 3,
        conv: ConvConfig {
            variant: ConvKind::L,
            taps: 3,
            max_delay: 4,
            ..Default::default()
        },
        decoder_bias: true,
        head: Head::RegressPerStep,
        ..Default::default()
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            network: reference_audit_network(),
            seq_len: 8,
            batch: 2,
            seed: 0,
            tolerance: 1e-4,
            kink_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub loss: &'static str,
    pub entries: Vec<GradComparison>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl AuditReport {
    pub fn failures(&self) -> impl Iterator<Item = &GradComparison> {
        self.entries.iter().filter(|c| !c.passes(self.tolerance))
    }
}

fn kink_free(p: &NetworkParams<f64>, u: &Tensor<f64>, margin: f64) -> Result<bool> {
    let (_, cache) = p.forward(u)?;
    Ok(cache.layers.iter().zip(&p.layers).all(|(c, lp)| {
        let relu_ok = lp.gru.is_some() || c.conv_out.data().iter().all(|v| v.abs() > margin);
        relu_ok
            && c.mlp_pre()
                .is_none_or(|pre| pre.data().iter().all(|v| v.abs() > margin))
    }))
}

/// Check every parameter gradient of the end-to-end loss (cross-entropy for
/// classification heads, MSE otherwise) and, per layer, the parameter and
/// input gradients of a random linear functional of that layer's output.
pub fn gradient_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    let net = &cfg.network;
    if cfg.seq_len == 0 || cfg.batch == 0 {
        return Err(Error::invalid(
            "audit needs seq_len and batch of at least 1",
        ));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut p = NetworkParams::<f64>::init(net, &mut rng)?;
    // Zero biases park early-step activations exactly on ReLU kinks.
    for r in p.tensors_mut() {
        if r.group == ParamGroup::Bias {
            r.tensor
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.uniform(-0.5, 0.5));
        }
    }
    let p = p;
    let shape = [cfg.batch, cfg.seq_len, net.input_dim];
    let mut u = None;
    for _ in 0..10_000 {
        let cand = Tensor::from_fn(&shape, |_| rng.normal());
        if kink_free(&p, &cand, cfg.kink_margin)? {
            u = Some(cand);
            break;
        }
    }
    let u = u.ok_or_else(|| {
        Error::Numerical("no input clear of ReLU kinks found; lower kink_margin".into())
    })?;

    let (out, cache) = p.forward(&u)?;
    let classify = net.head.is_classification();
    let rows = out.len() / net.output_dim;
    let classes: Vec<usize> = (0..rows).map(|_| rng.below(net.output_dim)).collect();
    let target = Tensor::from_fn(out.shape(), |_| rng.normal());
    let loss_of = |o: &Tensor<f64>| -> Result<LossValue<f64>> {
        if classify {
            cross_entropy(o, &classes)
        } else {
            mse(o, &target)
        }
    };

    let mut entries = Vec::new();
    let g = p.backward(&cache, &loss_of(&out)?.grad)?;
    let analytic = g.tensors();
    for (i, r) in p.tensors().iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let mut q = p.clone();
                *q.tensors_mut()[i].tensor = x.clone();
                Ok(loss_of(&q.forward(&u)?.0)?.value)
            },
            r.tensor,
            AUDIT_EPS,
        )?;
        entries.push(compare_grads(
            &format!("loss/{}", r.path),
            analytic[i].tensor,
            &numeric,
        )?);
    }

    for (l, (lp, lc)) in p.layers.iter().zip(&cache.layers).enumerate() {
        let (y, _) = lp.forward(net, &lc.input)?;
        let w = Tensor::from_fn(y.shape(), |_| rng.normal());
        let probe = |q: &NetworkParams<f64>, x: &Tensor<f64>| -> Result<f64> {
            Ok(q.layers[l].forward(net, x)?.0.mul(&w)?.sum())
        };
        let (gl, gx) = lp.backward(net, lc, &w)?;
        let numeric = finite_diff_grad(|x| probe(&p, x), &lc.input, AUDIT_EPS)?;
        entries.push(compare_grads(&format!("layer{l}/input"), &gx, &numeric)?);
        let mut grads = p.zeros_like();
        grads.layers[l] = gl;
        let analytic = grads.tensors();
        let prefix = format!("layers.{l}.");
        for (i, r) in p
            .tensors()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.path.starts_with(&prefix))
        {
            let numeric = finite_diff_grad(
                |x| {
                    let mut q = p.clone();
                    *q.tensors_mut()[i].tensor = x.clone();
                    probe(&q, &lc.input)
                },
                r.tensor,
                AUDIT_EPS,
            )?;
            entries.push(compare_grads(
                &format!("layer{l}/{}", r.path),
                analytic[i].tensor,
                &numeric,
            )?);
        }
    }

    let max_rel_err = entries.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(AuditReport {
        loss: if classify { "ce" } else { "mse" },
        passed: entries.iter().all(|c| c.passes(cfg.tolerance)),
        entries,
        max_rel_err,
        tolerance: cfg.tolerance,
    })
}
