use super::params::NetworkParams;
use crate::dcls_conv::{StreamingConv, Truncation};
use crate::error::{Error, Result};
use crate::mingru::gru_step;
use crate::numcore::{Real, Tensor};

/// Per-stream inference state: one input ring buffer and one recurrent
/// vector per layer.
#[derive(Debug, Clone)]
pub struct NetworkStream<F: Real> {
    convs: Vec<Option<StreamingConv<F>>>,
    states: Vec<Vec<F>>,
}

/// Output of one streaming step.
#[derive(Debug, Clone)]
pub struct StepOutput<F: Real> {
    /// Last layer output at this step, `H` values.
    pub features: Vec<F>,
    /// Decoder applied to `features`, `H_out` values.
    pub output: Vec<F>,
    /// Mixer output of every layer at this step.
    pub hidden: Vec<Vec<F>>,
}

impl<F: Real> NetworkStream<F> {
    pub fn new(params: &NetworkParams<F>, truncation: Truncation) -> Result<Self> {
        let h = params.config.hidden;
        let convs = params
            .layers
            .iter()
            .map(|l| {
                l.conv
                    .as_ref()
                    .map(|k| StreamingConv::new(k, truncation))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let states = params
            .layers
            .iter()
            .map(|l| {
                if l.gru.is_some() {
                    vec![F::zero(); h]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Ok(Self { convs, states })
    }

    /// Floats held between steps: buffered inputs plus recurrent states.
    pub fn state_floats(&self) -> usize {
        let buffers: usize = self
            .convs
            .iter()
            .flatten()
            .map(|c| c.buffer().len_floats())
            .sum();
        buffers + self.states.iter().map(Vec::len).sum::<usize>()
    }

    pub fn buffer_floats(&self) -> usize {
        self.convs
            .iter()
            .flatten()
            .map(|c| c.buffer().len_floats())
            .sum()
    }

    pub fn reset(&mut self) {
        self.convs
            .iter_mut()
            .flatten()
            .for_each(StreamingConv::reset);
        self.states
            .iter_mut()
            .for_each(|s| s.iter_mut().for_each(|v| *v = F::zero()));
    }

    /// Consume one input vector `u_t` (`H_in` values).
    ///
    /// For the per-step heads `output` equals the dense network's output at
    /// this step; for `classify_last` it equals the logits once the last
    /// step has been fed.
    pub fn step(&mut self, params: &NetworkParams<F>, u_t: &[F]) -> Result<StepOutput<F>> {
        let cfg = &params.config;
        if u_t.len() != cfg.input_dim {
            return Err(Error::shape("network step", &[u_t.len()], &[cfg.input_dim]));
        }
        let h = cfg.hidden;
        let mut x = params
            .encoder
            .forward(&Tensor::new(&[cfg.input_dim], u_t.to_vec())?)?;
        let mut hidden = Vec::with_capacity(params.layers.len());
        for (l, lp) in params.layers.iter().enumerate() {
            let c = match &mut self.convs[l] {
                Some(conv) => conv.step(x.data())?,
                None => x.data().to_vec(),
            };
            let mixer_out = match &lp.gru {
                Some(g) => {
                    gru_step(g, &c, &mut self.states[l])?;
                    self.states[l].clone()
                }
                None => c.iter().map(|&v| v.max(F::zero())).collect(),
            };
            let c = Tensor::new(&[1, h], c)?;
            let m_out = Tensor::new(&[1, h], mixer_out.clone())?;
            let mixed = if cfg.residual { c.add(&m_out)? } else { m_out };
            let pre = match &lp.mlp {
                Some(m) => {
                    let y = m.forward(&mixed)?.0;
                    if cfg.residual {
                        mixed.add(&y)?
                    } else {
                        y
                    }
                }
                None => mixed,
            };
            x = match &lp.norm {
                Some(n) => n.forward(&pre, F::of(cfg.norm_eps))?.0,
                None => pre,
            }
            .into_shape(&[h])?;
            hidden.push(mixer_out);
        }
        let output = params.decoder.forward(&x)?.into_data();
        Ok(StepOutput {
            features: x.into_data(),
            output,
            hidden,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::config::{ConvConfig, ConvKind, Head, NetworkConfig};
    use super::*;
    use crate::numcore::Rng;

    fn cfg(variant: ConvKind) -> NetworkConfig {
        NetworkConfig {
            layers: 2,
            hidden: 5,
            input_dim: 2,
            output_dim: 3,
            conv: ConvConfig {
                variant,
                taps: 3,
                dilation: 2,
                max_delay: 6,
                ..Default::default()
            },
            head: Head::RegressPerStep,
            ..Default::default()
        }
    }

    #[test]
    fn streaming_matches_dense_network() {
        for variant in [ConvKind::None, ConvKind::Cd, ConvKind::Eid, ConvKind::L] {
            let mut rng = Rng::new(1);
            let p = NetworkParams::<f64>::init(&cfg(variant), &mut rng).unwrap();
            let u = Tensor::from_fn(&[1, 30, 2], |_| rng.normal());
            let (dense, cache) = p.forward(&u).unwrap();
            let mut s = NetworkStream::new(&p, Truncation::Exact).unwrap();
            for t in 0..30 {
                let o = s.step(&p, &u.data()[2 * t..2 * t + 2]).unwrap();
                for c in 0..3 {
                    assert!(
                        (o.output[c] - dense.get(&[0, t, c])).abs() < 1e-9,
                        "{variant:?}"
                    );
                }
                for c in 0..5 {
                    assert!((o.hidden[1][c] - cache.layers[1].hidden.get(&[0, t, c])).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn identity_kernels_leave_only_recurrent_state() {
        let mut c = cfg(ConvKind::Cd);
        c.conv.taps = 1;
        let p = NetworkParams::<f32>::init(&c, &mut Rng::new(0)).unwrap();
        let s = NetworkStream::new(&p, Truncation::Exact).unwrap();
        assert_eq!(s.state_floats(), c.layers * c.hidden);
    }

    #[test]
    fn buffer_size_is_h_times_sum_of_delays() {
        let c = cfg(ConvKind::Eid);
        let p = NetworkParams::<f32>::init(&c, &mut Rng::new(0)).unwrap();
        let s = NetworkStream::new(&p, Truncation::Exact).unwrap();
        assert_eq!(s.buffer_floats(), c.hidden * (4 + 8));
    }
}
