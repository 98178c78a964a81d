use super::config::{Head, NetworkConfig};
use super::params::{LayerParams, NetworkParams};
use crate::dcls_conv::{causal_conv_bwd, causal_conv_fwd, KernelSpec};
use crate::error::{Error, Result};
use crate::layers::{MlpCache, NormCache};
use crate::mingru::{gru_bwd, gru_forward, GruCache};
use crate::numcore::{Real, Tensor};

/// Intermediates of one layer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache<F: Real> {
    pub input: Tensor<F>,
    /// Convolution output `c`.
    pub conv_out: Tensor<F>,
    gru: Option<GruCache<F>>,
    /// Mixer output before the skip; the exported hidden state.
    pub hidden: Tensor<F>,
    /// `g = c + mixer(c)`
    mixed: Tensor<F>,
    mlp: Option<MlpCache<F>>,
    norm: Option<NormCache<F>>,
}

impl<F: Real> LayerCache<F> {
    /// MLP pre-activation, `(B, T, 4H)`.
    pub fn mlp_pre(&self) -> Option<&Tensor<F>> {
        self.mlp.as_ref().map(|m| &m.pre)
    }
}

impl<F: Real> LayerParams<F> {
    /// `c = conv(x)`, `g = c + mixer(c)`, `m = g + mlp(g)`, `y = norm(m)`.
    ///
    /// The skips are dropped when `residual` is off; absent blocks are
    /// identities.
    pub fn forward(
        &self,
        cfg: &NetworkConfig,
        x: &Tensor<F>,
    ) -> Result<(Tensor<F>, LayerCache<F>)> {
        if x.rank() != 3 || x.dim(2) != cfg.hidden {
            return Err(Error::shape("layer_fwd", x.shape(), &[0, 0, cfg.hidden]));
        }
        let conv_out = match &self.conv {
            Some(k) => causal_conv_fwd(k, x)?,
            None => x.clone(),
        };
        let (hidden, gru) = match &self.gru {
            Some(g) => {
                let (h, cache) = gru_forward(g, &conv_out, None)?;
                (h, Some(cache))
            }
            None => (conv_out.relu(), None),
        };
        let mixed = if cfg.residual {
            conv_out.add(&hidden)?
        } else {
            hidden.clone()
        };
        let (pre_norm, mlp) = match &self.mlp {
            Some(m) => {
                let (y, cache) = m.forward(&mixed)?;
                (if cfg.residual { mixed.add(&y)? } else { y }, Some(cache))
            }
            None => (mixed.clone(), None),
        };
        let (y, norm) = match &self.norm {
            Some(n) => {
                let (y, cache) = n.forward(&pre_norm, F::of(cfg.norm_eps))?;
                (y, Some(cache))
            }
            None => (pre_norm, None),
        };
        Ok((
            y,
            LayerCache {
                input: x.clone(),
                conv_out,
                gru,
                hidden,
                mixed,
                mlp,
                norm,
            },
        ))
    }

    /// Parameter gradients (same structure as `self`) and the input gradient.
    pub fn backward(
        &self,
        cfg: &NetworkConfig,
        cache: &LayerCache<F>,
        grad_y: &Tensor<F>,
    ) -> Result<(LayerParams<F>, Tensor<F>)> {
        let (g_norm, g_pre) = match (&self.norm, &cache.norm) {
            (Some(n), Some(c)) => {
                let (g, gx) = n.backward(c, grad_y)?;
                (Some(g), gx)
            }
            _ => (None, grad_y.clone()),
        };
        let (g_mlp, g_mixed) = match (&self.mlp, &cache.mlp) {
            (Some(m), Some(c)) => {
                let (g, gx) = m.backward(&cache.mixed, c, &g_pre)?;
                let gm = if cfg.residual { gx.add(&g_pre)? } else { gx };
                (Some(g), gm)
            }
            _ => (None, g_pre),
        };
        let (g_gru, g_hidden_in) = match (&self.gru, &cache.gru) {
            (Some(g), Some(c)) => {
                let gg = gru_bwd(g, &cache.conv_out, c, &g_mixed)?;
                (Some(gg.params), gg.x)
            }
            _ => {
                let mut gx = g_mixed.clone();
                for (v, &c) in gx.data_mut().iter_mut().zip(cache.conv_out.data()) {
                    if c <= F::zero() {
                        *v = F::zero();
                    }
                }
                (None, gx)
            }
        };
        let g_conv_out = if cfg.residual {
            g_hidden_in.add(&g_mixed)?
        } else {
            g_hidden_in
        };
        let (g_conv, gx) = match &self.conv {
            Some(k) => {
                let g = causal_conv_bwd(k, &cache.input, &g_conv_out, k.is_learnable())?;
                let spec = KernelSpec {
                    weights: g.weights,
                    positions: g
                        .positions
                        .unwrap_or_else(|| Tensor::zeros(k.positions.shape())),
                    ..k.clone()
                };
                (Some(spec), g.input)
            }
            None => (None, g_conv_out),
        };
        Ok((
            LayerParams {
                conv: g_conv,
                gru: g_gru,
                mlp: g_mlp,
                norm: g_norm,
            },
            gx,
        ))
    }
}

/// Forward pass of one layer, returning `(y, hidden)`.
pub fn layer_fwd<F: Real>(
    lp: &LayerParams<F>,
    cfg: &NetworkConfig,
    x: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (y, cache) = lp.forward(cfg, x)?;
    Ok((y, cache.hidden))
}

#[derive(Debug, Clone)]
pub struct NetworkCache<F: Real> {
    pub input: Tensor<F>,
    pub layers: Vec<LayerCache<F>>,
    /// Output of the last layer, `(B, T, H)`.
    pub features: Tensor<F>,
    /// What the decoder saw: `(B, T, H)` for per-step heads, `(B, H)` otherwise.
    decoder_in: Tensor<F>,
}

impl<F: Real> NetworkCache<F> {
    /// Per-layer mixer outputs, `(B, T, H)` each.
    pub fn hidden_states(&self) -> Vec<&Tensor<F>> {
        self.layers.iter().map(|l| &l.hidden).collect()
    }
}

fn readout<F: Real>(head: Head, features: &Tensor<F>) -> Result<Tensor<F>> {
    let (b, t, h) = (features.dim(0), features.dim(1), features.dim(2));
    match head {
        Head::ClassifyPerStep | Head::RegressPerStep => Ok(features.clone()),
        Head::ClassifyLast => {
            if t == 0 {
                return Err(Error::invalid("classification needs at least one step"));
            }
            let mut out = Tensor::zeros(&[b, h]);
            for bi in 0..b {
                let src = &features.data()[(bi * t + t - 1) * h..(bi * t + t) * h];
                out.data_mut()[bi * h..(bi + 1) * h].copy_from_slice(src);
            }
            Ok(out)
        }
        Head::ClassifyMean => {
            if t == 0 {
                return Err(Error::invalid("classification needs at least one step"));
            }
            let mut out = Tensor::zeros(&[b, h]);
            let inv = F::of(1.0 / t as f64);
            for bi in 0..b {
                for ti in 0..t {
                    for c in 0..h {
                        out.data_mut()[bi * h + c] += features.data()[(bi * t + ti) * h + c] * inv;
                    }
                }
            }
            Ok(out)
        }
    }
}

fn readout_bwd<F: Real>(head: Head, shape: &[usize], grad: &Tensor<F>) -> Tensor<F> {
    let (b, t, h) = (shape[0], shape[1], shape[2]);
    match head {
        Head::ClassifyPerStep | Head::RegressPerStep => grad.clone(),
        Head::ClassifyLast => {
            let mut g = Tensor::zeros(shape);
            for bi in 0..b {
                g.data_mut()[(bi * t + t - 1) * h..(bi * t + t) * h]
                    .copy_from_slice(&grad.data()[bi * h..(bi + 1) * h]);
            }
            g
        }
        Head::ClassifyMean => {
            let inv = F::of(1.0 / t as f64);
            Tensor::from_fn(shape, |i| {
                let (bi, c) = (i / (t * h), i % h);
                grad.data()[bi * h + c] * inv
            })
        }
    }
}

impl<F: Real> NetworkParams<F> {
    /// `u: (B, T, H_in)` to `(B, H_out)` or `(B, T, H_out)` depending on the head.
    pub fn forward(&self, u: &Tensor<F>) -> Result<(Tensor<F>, NetworkCache<F>)> {
        let cfg = &self.config;
        if u.rank() != 3 || u.dim(2) != cfg.input_dim {
            return Err(Error::shape(
                "network_fwd",
                u.shape(),
                &[0, 0, cfg.input_dim],
            ));
        }
        let mut x = self.encoder.forward(u)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for lp in &self.layers {
            let (y, cache) = lp.forward(cfg, &x)?;
            caches.push(cache);
            x = y;
        }
        let decoder_in = readout(cfg.head, &x)?;
        let out = self.decoder.forward(&decoder_in)?;
        Ok((
            out,
            NetworkCache {
                input: u.clone(),
                layers: caches,
                features: x,
                decoder_in,
            },
        ))
    }

    /// Gradients of every parameter given `∂L/∂output`.
    pub fn backward(
        &self,
        cache: &NetworkCache<F>,
        grad_out: &Tensor<F>,
    ) -> Result<NetworkParams<F>> {
        let cfg = &self.config;
        let (g_dec, g_dec_in) = self.decoder.backward(&cache.decoder_in, grad_out)?;
        let mut g = readout_bwd(cfg.head, cache.features.shape(), &g_dec_in);
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (lp, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (gl, gx) = lp.backward(cfg, lc, &g)?;
            layer_grads.push(gl);
            g = gx;
        }
        layer_grads.reverse();
        let (g_enc, _) = self.encoder.backward(&cache.input, &g)?;
        Ok(NetworkParams {
            config: cfg.clone(),
            encoder: g_enc,
            layers: layer_grads,
            decoder: g_dec,
        })
    }
}

/// Network outputs without keeping the cache.
pub fn network_fwd<F: Real>(params: &NetworkParams<F>, u: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(params.forward(u)?.0)
}

#[cfg(test)]
mod tests {
    use super::super::config::{ConvConfig, ConvKind, Mixer, PositionInit};
    use super::*;
    use crate::layers::{LinearParams, NormParams};
    use crate::mingru::GruParams;
    use crate::numcore::{compare_grads, finite_diff_grad, Rng, AUDIT_EPS};

    fn small(variant: ConvKind, head: Head) -> NetworkConfig {
        NetworkConfig {
            layers: 2,
            hidden: 4,
            input_dim: 2,
            output_dim: 3,
            conv: ConvConfig {
                variant,
                taps: 3,
                dilation: 1,
                max_delay: 3,
                sigma: 0.6,
                position_init: PositionInit::Uniform,
            },
            head,
            ..Default::default()
        }
    }

    #[test]
    fn hand_composed_layer() {
        // identity conv, z = 1, W_h = I, no MLP: y = norm(2x)
        let h = 3;
        let cfg = NetworkConfig {
            hidden: h,
            mlp: false,
            ..Default::default()
        };
        let mut gate = LinearParams::<f64>::zeros(h, h, true);
        gate.bias.as_mut().unwrap().fill(80.0);
        let cand = LinearParams::new(Tensor::eye(h), Some(Tensor::zeros(&[h]))).unwrap();
        let lp = LayerParams {
            conv: Some(KernelSpec::cd(Tensor::full(&[h, 1], 1.0), 1).unwrap()),
            gru: Some(GruParams { gate, cand }),
            mlp: None,
            norm: Some(NormParams::identity(h)),
        };
        let x = Tensor::from_f64(&[1, 2, h], &[1.0, 2.0, 4.0, -1.0, 0.0, 3.0]).unwrap();
        let (y, _) = layer_fwd(&lp, &cfg, &x).unwrap();
        let (want, _) = NormParams::identity(h)
            .forward(&x.scale(2.0).unwrap(), 1e-5)
            .unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_zero_pre_norm() {
        let cfg = NetworkConfig {
            hidden: 4,
            norm: false,
            ..small(ConvKind::Cd, Head::RegressPerStep)
        };
        let p = NetworkParams::<f64>::init(&cfg, &mut Rng::new(0)).unwrap();
        let (y, _) = p.layers[0]
            .forward(&cfg, &Tensor::zeros(&[2, 5, 4]))
            .unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn output_shapes_per_head() {
        for (head, want) in [
            (Head::ClassifyLast, vec![2, 3]),
            (Head::ClassifyMean, vec![2, 3]),
            (Head::ClassifyPerStep, vec![2, 7, 3]),
            (Head::RegressPerStep, vec![2, 7, 3]),
        ] {
            let p =
                NetworkParams::<f32>::init(&small(ConvKind::Eid, head), &mut Rng::new(1)).unwrap();
            assert_eq!(
                network_fwd(&p, &Tensor::zeros(&[2, 7, 2])).unwrap().shape(),
                &want[..]
            );
        }
    }

    #[test]
    fn causal_end_to_end() {
        let p =
            NetworkParams::<f64>::init(&small(ConvKind::L, Head::RegressPerStep), &mut Rng::new(2))
                .unwrap();
        let mut rng = Rng::new(3);
        let u = Tensor::from_fn(&[1, 12, 2], |_| rng.normal());
        let y = network_fwd(&p, &u).unwrap();
        let mut v = u.clone();
        v.set(&[0, 7, 1], 5.0);
        let y2 = network_fwd(&p, &v).unwrap();
        for t in 0..12 {
            for c in 0..3 {
                let same = y.get(&[0, t, c]) == y2.get(&[0, t, c]);
                assert_eq!(same, t < 7, "t={t}");
            }
        }
    }

    #[test]
    fn batch_permutation_commutes() {
        let p =
            NetworkParams::<f64>::init(&small(ConvKind::Cd, Head::ClassifyLast), &mut Rng::new(4))
                .unwrap();
        let mut rng = Rng::new(5);
        let u = Tensor::from_fn(&[3, 6, 2], |_| rng.normal());
        let y = network_fwd(&p, &u).unwrap();
        let perm = [2, 0, 1];
        let yp = network_fwd(&p, &u.gather_rows(&perm)).unwrap();
        assert_eq!(yp, y.gather_rows(&perm));
    }

    #[test]
    fn relu_mixer_and_no_conv_run() {
        let mut cfg = small(ConvKind::None, Head::ClassifyLast);
        cfg.mixer = Mixer::Relu;
        let p = NetworkParams::<f32>::init(&cfg, &mut Rng::new(0)).unwrap();
        assert!(network_fwd(&p, &Tensor::full(&[1, 4, 2], 0.3)).is_ok());
    }

    /// Draw inputs until no ReLU input is within `margin` of its kink.
    fn clear_of_kinks(
        p: &NetworkParams<f64>,
        rng: &mut Rng,
        shape: &[usize],
        margin: f64,
    ) -> Tensor<f64> {
        for attempt in 0.. {
            assert!(attempt < 1000, "no kink-free input found");
            let u = Tensor::from_fn(shape, |_| rng.normal());
            let (_, cache) = p.forward(&u).unwrap();
            let ok = cache.layers.iter().all(|l| {
                let mlp_ok = l
                    .mlp
                    .as_ref()
                    .is_none_or(|m| m.pre.data().iter().all(|v| v.abs() > margin));
                let relu_ok = l.gru.is_some() || l.conv_out.data().iter().all(|v| v.abs() > margin);
                mlp_ok && relu_ok
            });
            if ok {
                return u;
            }
        }
        unreachable!()
    }

    fn audit(cfg: &NetworkConfig, seed: u64) {
        let mut rng = Rng::new(seed);
        let p = NetworkParams::<f64>::init(cfg, &mut rng).unwrap();
        let t = 6;
        let u = clear_of_kinks(&p, &mut rng, &[1, t, cfg.input_dim], 2e-3);
        let (out, cache) = p.forward(&u).unwrap();
        let w = Tensor::from_fn(out.shape(), |_| rng.normal());
        let g = p.backward(&cache, &w).unwrap();
        let loss = |q: &NetworkParams<f64>| network_fwd(q, &u).unwrap().mul(&w).unwrap().sum();
        let analytic = g.tensors();
        for (i, r) in p.tensors().iter().enumerate() {
            let numeric = finite_diff_grad(
                |x| {
                    let mut q = p.clone();
                    *q.tensors_mut()[i].tensor = x.clone();
                    Ok(loss(&q))
                },
                r.tensor,
                AUDIT_EPS,
            )
            .unwrap();
            let c = compare_grads(&r.path, analytic[i].tensor, &numeric).unwrap();
            assert!(c.passes(1e-4), "{c:?}");
        }
    }

    #[test]
    fn end_to_end_gradients() {
        let mut cfg = small(ConvKind::L, Head::RegressPerStep);
        cfg.hidden = 4;
        cfg.decoder_bias = true;
        audit(&cfg, 10);
        audit(&small(ConvKind::Cd, Head::ClassifyLast), 11);
        audit(&small(ConvKind::Eid, Head::ClassifyMean), 12);
        let mut relu = small(ConvKind::Cd, Head::ClassifyPerStep);
        relu.mixer = Mixer::Relu;
        audit(&relu, 13);
        let mut bare = small(ConvKind::None, Head::RegressPerStep);
        bare.residual = false;
        bare.norm = false;
        audit(&bare, 14);
    }
}
