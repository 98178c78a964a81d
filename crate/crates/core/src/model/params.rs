use serde::Serialize;

use super::config::{ConvKind, Mixer, NetworkConfig, PositionInit};
use crate::dcls_conv::{ConvVariant, KernelSpec};
use crate::error::{Error, Result};
use crate::layers::{mlp_param_count, LinearParams, MlpParams, NormParams};
use crate::mingru::{gru_param_count, GruParams};
use crate::numcore::{Real, Rng, Tensor};

/// Optimizer treatment of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Matrices, conv taps and norm gains; decoupled weight decay applies.
    Weights,
    Bias,
    /// Learnable tap positions; clamped to `[0, Γ]` after each update.
    Positions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F: Real> {
    pub conv: Option<KernelSpec<F>>,
    /// `None` for the ReLU mixer.
    pub gru: Option<GruParams<F>>,
    pub mlp: Option<MlpParams<F>>,
    pub norm: Option<NormParams<F>>,
}

/// All trainable tensors of a network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<F: Real> {
    pub config: NetworkConfig,
    /// `(H, H_in)`, no bias.
    pub encoder: LinearParams<F>,
    pub layers: Vec<LayerParams<F>>,
    /// `(H_out, H)`, bias only if `decoder_bias`.
    pub decoder: LinearParams<F>,
}

/// A named view of one parameter tensor.
pub struct ParamRef<T> {
    pub path: String,
    pub group: ParamGroup,
    pub tensor: T,
    /// `Γ` of the owning kernel for position tensors.
    pub max_delay: Option<usize>,
}

fn kernel_for<F: Real>(
    cfg: &NetworkConfig,
    layer: usize,
    rng: &mut Rng,
) -> Result<Option<KernelSpec<F>>> {
    let (h, k) = (cfg.hidden, cfg.conv.taps);
    let Some(variant) = cfg.conv.variant.variant() else {
        return Ok(None);
    };
    let a = 1.0 / (k as f64).sqrt();
    let weights = Tensor::from_fn(&[h, k], |_| F::of(rng.uniform(-a, a)));
    let spec = match variant {
        ConvVariant::Cd => KernelSpec::cd(weights, cfg.conv.dilation)?,
        ConvVariant::Eid => KernelSpec::eid(weights, cfg.conv.dilation, layer)?,
        ConvVariant::Learnable => {
            let gamma = cfg.conv.max_delay as f64;
            let positions = match cfg.conv.position_init {
                PositionInit::Dilated => Tensor::from_fn(&[h, k], |i| {
                    F::of(if k == 1 {
                        0.0
                    } else {
                        gamma * (i % k) as f64 / (k - 1) as f64
                    })
                }),
                PositionInit::Uniform => {
                    Tensor::from_fn(&[h, k], |_| F::of(rng.uniform(0.0, 1.0) * gamma))
                }
            };
            KernelSpec::learnable(
                weights,
                positions,
                cfg.conv.max_delay,
                F::of(cfg.conv.sigma),
            )?
        }
    };
    Ok(Some(spec))
}

impl<F: Real> NetworkParams<F> {
    /// Fan-in uniform init for every matrix and conv tap, zero biases, unit norm gains.
    pub fn init(cfg: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let encoder = LinearParams::init(rng, cfg.input_dim, h, false);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layers.push(LayerParams {
                conv: kernel_for(cfg, l, rng)?,
                gru: (cfg.mixer == Mixer::Gru).then(|| GruParams::init(rng, h)),
                mlp: cfg.mlp.then(|| MlpParams::init(rng, h)),
                norm: cfg.norm.then(|| NormParams::identity(h)),
            });
        }
        let decoder = LinearParams::init(rng, h, cfg.output_dim, cfg.decoder_bias);
        Ok(Self {
            config: cfg.clone(),
            encoder,
            layers,
            decoder,
        })
    }

    /// Same structure with every tensor zeroed; kernel positions are kept so
    /// the result is still a valid spec.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for r in z.tensors_mut() {
            if r.group != ParamGroup::Positions {
                r.tensor.fill(F::zero());
            }
        }
        for l in &mut z.layers {
            if let Some(k) = &mut l.conv {
                if k.is_learnable() {
                    k.positions.fill(F::zero());
                }
            }
        }
        z
    }

    pub fn cast<G: Real>(&self) -> NetworkParams<G> {
        let lin = |p: &LinearParams<F>| LinearParams {
            weight: p.weight.cast(),
            bias: p.bias.as_ref().map(|b| b.cast()),
        };
        NetworkParams {
            config: self.config.clone(),
            encoder: lin(&self.encoder),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    conv: l.conv.as_ref().map(|k| KernelSpec {
                        variant: k.variant,
                        weights: k.weights.cast(),
                        positions: k.positions.cast(),
                        dilation: k.dilation,
                        layer: k.layer,
                        max_delay: k.max_delay,
                        sigma: G::of(k.sigma.f64()),
                    }),
                    gru: l.gru.as_ref().map(|g| GruParams {
                        gate: lin(&g.gate),
                        cand: lin(&g.cand),
                    }),
                    mlp: l.mlp.as_ref().map(|m| MlpParams {
                        up: lin(&m.up),
                        down: lin(&m.down),
                    }),
                    norm: l.norm.as_ref().map(|n| NormParams {
                        gain: n.gain.cast(),
                        shift: n.shift.cast(),
                    }),
                })
                .collect(),
            decoder: lin(&self.decoder),
        }
    }

    /// Every trainable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<ParamRef<&Tensor<F>>> {
        let mut out = Vec::new();
        let mut push = |path: String, group, tensor, max_delay| {
            out.push(ParamRef {
                path,
                group,
                tensor,
                max_delay,
            })
        };
        push_linear(&mut push, "encoder", &self.encoder);
        for (l, lp) in self.layers.iter().enumerate() {
            if let Some(k) = &lp.conv {
                push(
                    format!("layers.{l}.conv.weights"),
                    ParamGroup::Weights,
                    &k.weights,
                    None,
                );
                if k.is_learnable() {
                    push(
                        format!("layers.{l}.conv.positions"),
                        ParamGroup::Positions,
                        &k.positions,
                        Some(k.max_delay),
                    );
                }
            }
            if let Some(g) = &lp.gru {
                push_linear(&mut push, &format!("layers.{l}.gru.gate"), &g.gate);
                push_linear(&mut push, &format!("layers.{l}.gru.cand"), &g.cand);
            }
            if let Some(m) = &lp.mlp {
                push_linear(&mut push, &format!("layers.{l}.mlp.up"), &m.up);
                push_linear(&mut push, &format!("layers.{l}.mlp.down"), &m.down);
            }
            if let Some(n) = &lp.norm {
                push(
                    format!("layers.{l}.norm.gain"),
                    ParamGroup::Weights,
                    &n.gain,
                    None,
                );
                push(
                    format!("layers.{l}.norm.shift"),
                    ParamGroup::Bias,
                    &n.shift,
                    None,
                );
            }
        }
        push_linear(&mut push, "decoder", &self.decoder);
        out
    }

    /// Mutable counterpart of [`NetworkParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<ParamRef<&mut Tensor<F>>> {
        let mut out = Vec::new();
        let mut push = |path: String, group, tensor, max_delay| {
            out.push(ParamRef {
                path,
                group,
                tensor,
                max_delay,
            })
        };
        push_linear_mut(&mut push, "encoder", &mut self.encoder);
        for (l, lp) in self.layers.iter_mut().enumerate() {
            if let Some(k) = &mut lp.conv {
                let learnable = k.is_learnable();
                let gamma = k.max_delay;
                push(
                    format!("layers.{l}.conv.weights"),
                    ParamGroup::Weights,
                    &mut k.weights,
                    None,
                );
                if learnable {
                    push(
                        format!("layers.{l}.conv.positions"),
                        ParamGroup::Positions,
                        &mut k.positions,
                        Some(gamma),
                    );
                }
            }
            if let Some(g) = &mut lp.gru {
                push_linear_mut(&mut push, &format!("layers.{l}.gru.gate"), &mut g.gate);
                push_linear_mut(&mut push, &format!("layers.{l}.gru.cand"), &mut g.cand);
            }
            if let Some(m) = &mut lp.mlp {
                push_linear_mut(&mut push, &format!("layers.{l}.mlp.up"), &mut m.up);
                push_linear_mut(&mut push, &format!("layers.{l}.mlp.down"), &mut m.down);
            }
            if let Some(n) = &mut lp.norm {
                push(
                    format!("layers.{l}.norm.gain"),
                    ParamGroup::Weights,
                    &mut n.gain,
                    None,
                );
                push(
                    format!("layers.{l}.norm.shift"),
                    ParamGroup::Bias,
                    &mut n.shift,
                    None,
                );
            }
        }
        push_linear_mut(&mut push, "decoder", &mut self.decoder);
        out
    }

    /// Stored trainable floats, counted by walking the tensors.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|r| r.tensor.len()).sum()
    }

    /// Replace the tensors from a name map produced by [`NetworkParams::tensors`].
    pub fn load_tensors(&mut self, mut get: impl FnMut(&str) -> Option<Tensor<F>>) -> Result<()> {
        for r in self.tensors_mut() {
            let t = get(&r.path)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor `{}`", r.path)))?;
            if t.shape() != r.tensor.shape() {
                return Err(Error::shape("load_tensors", r.tensor.shape(), t.shape()));
            }
            *r.tensor = t;
        }
        for l in &self.layers {
            if let Some(k) = &l.conv {
                k.validate()?;
            }
        }
        Ok(())
    }

    /// Project every learnable position back into `[0, Γ]`.
    pub fn clamp_positions(&mut self) {
        for l in &mut self.layers {
            if let Some(k) = &mut l.conv {
                k.clamp_positions();
            }
        }
    }

    pub fn kernels(&self) -> impl Iterator<Item = &KernelSpec<F>> {
        self.layers.iter().filter_map(|l| l.conv.as_ref())
    }
}

fn push_linear<'a, F: Real>(
    push: &mut impl FnMut(String, ParamGroup, &'a Tensor<F>, Option<usize>),
    prefix: &str,
    p: &'a LinearParams<F>,
) {
    push(
        format!("{prefix}.weight"),
        ParamGroup::Weights,
        &p.weight,
        None,
    );
    if let Some(b) = &p.bias {
        push(format!("{prefix}.bias"), ParamGroup::Bias, b, None);
    }
}

fn push_linear_mut<'a, F: Real>(
    push: &mut impl FnMut(String, ParamGroup, &'a mut Tensor<F>, Option<usize>),
    prefix: &str,
    p: &'a mut LinearParams<F>,
) {
    push(
        format!("{prefix}.weight"),
        ParamGroup::Weights,
        &mut p.weight,
        None,
    );
    if let Some(b) = &mut p.bias {
        push(format!("{prefix}.bias"), ParamGroup::Bias, b, None);
    }
}

/// Parameter counts per component, summed over layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub encoder: usize,
    pub conv: usize,
    pub recurrent: usize,
    pub mlp: usize,
    pub norm: usize,
    pub decoder: usize,
    pub total: usize,
}

/// Closed-form parameter count:
/// `Enc = H_in H`, `Conv = K H` (or `2 K H` with learnable positions),
/// `Rec = 2H^2 + 2H`, `MLP = 4H^2 + 3H`, `Norm = 2H`, `Dec = H H_out`,
/// network `= Enc + Dec + L (Conv + Rec + MLP + Norm)`.
pub fn count_params(cfg: &NetworkConfig) -> ParamBreakdown {
    let (l, h) = (cfg.layers, cfg.hidden);
    let conv = match cfg.conv.variant {
        ConvKind::None => 0,
        ConvKind::Cd | ConvKind::Eid => cfg.conv.taps * h,
        ConvKind::L => 2 * cfg.conv.taps * h,
    };
    let recurrent = match cfg.mixer {
        Mixer::Gru => gru_param_count(h),
        Mixer::Relu => 0,
    };
    let mlp = if cfg.mlp { mlp_param_count(h) } else { 0 };
    let norm = if cfg.norm { 2 * h } else { 0 };
    let encoder = cfg.input_dim * h;
    let decoder = h * cfg.output_dim + if cfg.decoder_bias { cfg.output_dim } else { 0 };
    let b = ParamBreakdown {
        encoder,
        conv: l * conv,
        recurrent: l * recurrent,
        mlp: l * mlp,
        norm: l * norm,
        decoder,
        total: 0,
    };
    ParamBreakdown {
        total: b.encoder + b.conv + b.recurrent + b.mlp + b.norm + b.decoder,
        ..b
    }
}
