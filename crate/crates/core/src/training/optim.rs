use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, NetworkParams, ParamGroup};
use crate::numcore::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to the weights group only.
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
        }
    }
}

/// Adam moments for every parameter tensor, in `NetworkParams::tensors` order.
///
/// The weights group gets AdamW (decoupled decay); biases and positions get
/// plain Adam. Positions are clamped to `[0, Γ]` after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<f64>>,
    pub v: Vec<Tensor<f64>>,
    pub groups: Vec<ParamGroup>,
}

impl OptimState {
    pub fn new<F: Real>(params: &NetworkParams<F>, config: AdamConfig) -> Self {
        let refs = params.tensors();
        Self {
            config,
            step: 0,
            m: refs
                .iter()
                .map(|r| Tensor::zeros(r.tensor.shape()))
                .collect(),
            v: refs
                .iter()
                .map(|r| Tensor::zeros(r.tensor.shape()))
                .collect(),
            groups: refs.iter().map(|r| r.group).collect(),
        }
    }

    /// One update with learning rate `lr`.
    pub fn step<F: Real>(
        &mut self,
        params: &mut NetworkParams<F>,
        grads: &NetworkParams<F>,
        lr: f64,
    ) -> Result<()> {
        let grads = grads.tensors();
        if grads.len() != self.m.len() {
            return Err(Error::invalid(
                "gradient set does not match optimizer state",
            ));
        }
        for g in &grads {
            if let Some(i) = g.tensor.data().iter().position(|v| !v.f64().is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in `{}` at element {i}",
                    g.path
                )));
            }
        }
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.tensor.data())
                    .map(|v| v.f64().powi(2))
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (i, (p, g)) in params.tensors_mut().into_iter().zip(&grads).enumerate() {
            let decay = if p.group == ParamGroup::Weights {
                lr * c.weight_decay
            } else {
                0.0
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, gv)) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g.tensor.data())
                .enumerate()
            {
                let gv = gv.f64() * clip;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gv;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gv * gv;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                let w64 = w.f64();
                *w = F::of(w64 - decay * w64 - lr * update);
            }
        }
        params.clamp_positions();
        Ok(())
    }

    /// Store moments under `adam/m/<path>` and `adam/v/<path>`.
    pub fn save<F: Real>(&self, params: &NetworkParams<F>, ck: &mut Checkpoint) -> Result<()> {
        ck.put_json(
            "adam/state",
            &serde_json::json!({"step": self.step, "config": self.config}),
        )?;
        for (i, r) in params.tensors().iter().enumerate() {
            ck.put_tensor(&format!("adam/m/{}", r.path), &self.m[i]);
            ck.put_tensor(&format!("adam/v/{}", r.path), &self.v[i]);
        }
        Ok(())
    }

    pub fn load<F: Real>(params: &NetworkParams<F>, ck: &Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            step: u64,
            config: AdamConfig,
        }
        let meta: Meta = ck.json("adam/state")?;
        let mut s = Self::new(params, meta.config);
        s.step = meta.step;
        for (i, r) in params.tensors().iter().enumerate() {
            s.m[i] = ck.tensor(&format!("adam/m/{}", r.path))?.to();
            s.v[i] = ck.tensor(&format!("adam/v/{}", r.path))?.to();
            if s.m[i].shape() != r.tensor.shape() || s.v[i].shape() != r.tensor.shape() {
                return Err(Error::Data(format!(
                    "optimizer moments for `{}` have the wrong shape",
                    r.path
                )));
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvConfig, ConvKind, NetworkConfig};
    use crate::numcore::Rng;

    fn net() -> NetworkParams<f64> {
        let cfg = NetworkConfig {
            layers: 1,
            hidden: 2,
            output_dim: 2,
            conv: ConvConfig {
                variant: ConvKind::L,
                taps: 2,
                max_delay: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        NetworkParams::init(&cfg, &mut Rng::new(2)).unwrap()
    }

    fn fill(p: &NetworkParams<f64>, v: f64) -> NetworkParams<f64> {
        let mut g = p.zeros_like();
        g.tensors_mut().into_iter().for_each(|r| r.tensor.fill(v));
        g
    }

    #[test]
    fn zero_grads_without_decay_leave_params() {
        let mut p = net();
        let before = p.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = OptimState::new(&p, cfg);
        opt.step(&mut p, &fill(&before, 0.0), 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = net();
        let before = p.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = OptimState::new(&p, cfg);
        opt.step(&mut p, &fill(&before, 1.0), 1e-3).unwrap();
        let w0 = before.decoder.weight.data()[0];
        let w1 = p.decoder.weight.data()[0];
        assert!((w1 - w0 + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn decay_touches_weights_only() {
        let mut p = net();
        p.tensors_mut()
            .into_iter()
            .filter(|r| r.group != ParamGroup::Positions)
            .for_each(|r| r.tensor.fill(1.0));
        p.clamp_positions();
        let before = p.clone();
        let mut opt = OptimState::new(&p, AdamConfig::default());
        opt.step(&mut p, &fill(&before, 0.0), 0.5).unwrap();
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            let expect = match a.group {
                ParamGroup::Weights => b.tensor.map(|v| v * (1.0 - 0.5 * 0.01)),
                _ => b.tensor.clone(),
            };
            assert_eq!(a.tensor, &expect, "{}", a.path);
        }
    }

    #[test]
    fn positions_stay_clamped_at_gamma() {
        let mut p = net();
        p.layers[0].conv.as_mut().unwrap().positions.fill(3.0);
        let before = p.clone();
        let mut g = fill(&before, 0.0);
        g.layers[0].conv.as_mut().unwrap().positions.fill(-1.0);
        let mut opt = OptimState::new(&p, AdamConfig::default());
        opt.step(&mut p, &g, 0.5).unwrap();
        assert!(p.layers[0]
            .conv
            .as_ref()
            .unwrap()
            .positions
            .data()
            .iter()
            .all(|&v| v == 3.0));
    }

    #[test]
    fn non_finite_grad_names_the_parameter() {
        let mut p = net();
        let mut g = fill(&p, 0.0);
        g.decoder.weight.data_mut()[1] = f64::NAN;
        let mut opt = OptimState::new(&p, AdamConfig::default());
        let err = opt.step(&mut p, &g, 0.1).unwrap_err().to_string();
        assert!(err.contains("decoder.weight"), "{err}");
    }

    #[test]
    fn state_roundtrips_through_checkpoint() {
        let mut p = net();
        let g = fill(&p, 0.3);
        let mut opt = OptimState::new(&p, AdamConfig::default());
        opt.step(&mut p, &g, 0.01).unwrap();
        let mut ck = Checkpoint::new();
        opt.save(&p, &mut ck).unwrap();
        assert_eq!(OptimState::load(&p, &ck).unwrap(), opt);
    }
}
