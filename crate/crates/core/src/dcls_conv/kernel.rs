use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

/// How tap positions are placed inside the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvVariant {
    /// Constant dilation: `p_i = d * i` in every layer.
    Cd,
    /// Exponentially increasing dilation: `p_i = d_b * 2^l * i` in layer `l`.
    Eid,
    /// Real-valued learnable positions in `[0, max_delay]`, spread onto the
    /// integer grid with a Gaussian of width `sigma`.
    #[serde(rename = "l", alias = "learnable")]
    Learnable,
}

impl std::fmt::Display for ConvVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvVariant::Cd => "cd",
            ConvVariant::Eid => "eid",
            ConvVariant::Learnable => "l",
        })
    }
}

pub const DEFAULT_SIGMA: f64 = 0.5;

/// Per-layer depthwise kernel: `H` channels with `K` taps each.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<F: Real> {
    pub variant: ConvVariant,
    /// `(H, K)`
    pub weights: Tensor<F>,
    /// `(H, K)`; integer valued for CD and EID.
    pub positions: Tensor<F>,
    /// Spacing between taps for CD and EID (`d_b * 2^l` for EID), 0 for learnable kernels.
    pub dilation: usize,
    /// Layer index, only meaningful for EID.
    pub layer: usize,
    /// Largest allowed delay; the dense kernel spans `0..=max_delay`.
    pub max_delay: usize,
    /// Gaussian width, only used by learnable kernels.
    pub sigma: F,
}

/// Gaussian interpolation weight `c[n, p] = exp(-((n - p) / sigma)^2 / 2)`.
#[inline]
pub fn gaussian_tap<F: Real>(n: usize, p: F, sigma: F) -> F {
    let z = (F::of(n as f64) - p) / sigma;
    (-F::of(0.5) * z * z).exp()
}

impl<F: Real> KernelSpec<F> {
    fn dilated(
        variant: ConvVariant,
        weights: Tensor<F>,
        dilation: usize,
        layer: usize,
    ) -> Result<Self> {
        if weights.rank() != 2 || weights.dim(1) == 0 {
            return Err(Error::invalid(format!(
                "kernel weights must be (H, K>0), got {:?}",
                weights.shape()
            )));
        }
        let k = weights.dim(1);
        let positions = Tensor::from_fn(weights.shape(), |i| F::of((dilation * (i % k)) as f64));
        let spec = Self {
            variant,
            positions,
            dilation,
            layer,
            max_delay: dilation * (k - 1),
            sigma: F::of(DEFAULT_SIGMA),
            weights,
        };
        Ok(spec)
    }

    /// Constant-dilation kernel with taps at `d * i`.
    pub fn cd(weights: Tensor<F>, dilation: usize) -> Result<Self> {
        Self::dilated(ConvVariant::Cd, weights, dilation, 0)
    }

    /// Exponentially dilated kernel for layer `layer`: taps at `d_b * 2^layer * i`.
    pub fn eid(weights: Tensor<F>, base_dilation: usize, layer: usize) -> Result<Self> {
        let d = 1usize
            .checked_shl(layer as u32)
            .and_then(|s| base_dilation.checked_mul(s))
            .ok_or_else(|| Error::invalid(format!("EID dilation overflows at layer {layer}")))?;
        Self::dilated(ConvVariant::Eid, weights, d, layer)
    }

    pub fn learnable(
        weights: Tensor<F>,
        positions: Tensor<F>,
        max_delay: usize,
        sigma: F,
    ) -> Result<Self> {
        let spec = Self {
            variant: ConvVariant::Learnable,
            weights,
            positions,
            dilation: 0,
            layer: 0,
            max_delay,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn channels(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn taps(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn is_learnable(&self) -> bool {
        self.variant == ConvVariant::Learnable
    }

    /// Stored floats: weights, plus positions for learnable kernels.
    pub fn param_count(&self) -> usize {
        match self.variant {
            ConvVariant::Learnable => 2 * self.weights.len(),
            _ => self.weights.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.rank() != 2
            || self.positions.shape() != self.weights.shape()
            || self.taps() == 0
        {
            return Err(Error::shape(
                "kernel spec",
                self.weights.shape(),
                self.positions.shape(),
            ));
        }
        let k = self.taps();
        match self.variant {
            ConvVariant::Cd | ConvVariant::Eid => {
                for (i, &p) in self.positions.data().iter().enumerate() {
                    if p != F::of((self.dilation * (i % k)) as f64) {
                        return Err(Error::invalid(format!(
                            "{} kernel position {p} at tap {} is not {} * {}",
                            self.variant,
                            i % k,
                            self.dilation,
                            i % k
                        )));
                    }
                }
                if self.max_delay != self.dilation * (k - 1) {
                    return Err(Error::invalid(
                        "dilated kernel span does not match d * (K - 1)",
                    ));
                }
            }
            ConvVariant::Learnable => {
                if !(self.sigma > F::zero()) {
                    return Err(Error::invalid("learnable kernel needs sigma > 0"));
                }
                let hi = F::of(self.max_delay as f64);
                if let Some(p) = self
                    .positions
                    .data()
                    .iter()
                    .find(|&&p| !(p >= F::zero() && p <= hi))
                {
                    return Err(Error::invalid(format!(
                        "kernel position {p} outside [0, {}]",
                        self.max_delay
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dense `(H, max_delay + 1)` kernel `k[h][n] = Σ_i w[h][i] c[n, p[h][i]]`.
    pub fn materialize(&self) -> Result<Tensor<F>> {
        self.validate()?;
        let (h, k, span) = (self.channels(), self.taps(), self.max_delay + 1);
        let mut out = Tensor::zeros(&[h, span]);
        let (w, p) = (self.weights.data(), self.positions.data());
        let dense = out.data_mut();
        for c in 0..h {
            for i in 0..k {
                let (wi, pi) = (w[c * k + i], p[c * k + i]);
                match self.variant {
                    ConvVariant::Learnable => {
                        for n in 0..span {
                            dense[c * span + n] += wi * gaussian_tap(n, pi, self.sigma);
                        }
                    }
                    _ => dense[c * span + pi.to_usize().unwrap()] += wi,
                }
            }
        }
        Ok(out)
    }

    /// Project learnable positions back into `[0, max_delay]`. No-op for CD and EID.
    pub fn clamp_positions(&mut self) {
        if self.is_learnable() {
            let hi = F::of(self.max_delay as f64);
            for p in self.positions.data_mut() {
                *p = p.max(F::zero()).min(hi);
            }
        }
    }

    /// Buffer entries actually needed at inference when Gaussian taps are cut
    /// at three widths: `min(max_delay, ceil(max p + 3 sigma))`.
    pub fn effective_max_delay(&self) -> usize {
        match self.variant {
            ConvVariant::Learnable => {
                let reach = self
                    .positions
                    .data()
                    .iter()
                    .fold(0.0f64, |m, p| m.max(p.f64()))
                    + 3.0 * self.sigma.f64();
                (reach.ceil().max(0.0) as usize).min(self.max_delay)
            }
            _ => self.max_delay,
        }
    }

    /// Per-channel `(delay, coefficient)` lists used by the convolution loops.
    pub(crate) fn channel_taps(&self) -> Result<Vec<Vec<(usize, F)>>> {
        self.validate()?;
        let (h, k) = (self.channels(), self.taps());
        match self.variant {
            ConvVariant::Learnable => {
                let dense = self.materialize()?;
                let span = self.max_delay + 1;
                Ok((0..h)
                    .map(|c| (0..span).map(|n| (n, dense.data()[c * span + n])).collect())
                    .collect())
            }
            _ => Ok((0..h)
                .map(|c| {
                    (0..k)
                        .map(|i| {
                            (
                                self.positions.data()[c * k + i].to_usize().unwrap(),
                                self.weights.data()[c * k + i],
                            )
                        })
                        .collect()
                })
                .collect()),
        }
    }
}

/// Free-function form of [`KernelSpec::clamp_positions`].
pub fn clamp_positions<F: Real>(mut spec: KernelSpec<F>) -> KernelSpec<F> {
    spec.clamp_positions();
    spec
}

/// Global receptive field of stacked causal convolutions: `1 + Σ_l max_delay_l`.
///
/// A kernel whose largest delay is `Γ` spans `Γ + 1` steps, so each layer
/// widens the window by `Γ`.
pub fn receptive_field<F: Real>(layers: &[KernelSpec<F>]) -> usize {
    1 + layers.iter().map(|s| s.max_delay).sum::<usize>()
}

/// Closed form for `layers` constant-dilation kernels: `1 + L (K - 1) d`.
pub fn receptive_field_cd(layers: usize, taps: usize, dilation: usize) -> usize {
    1 + layers * (taps - 1) * dilation
}

/// Closed form for exponentially dilated kernels: `1 + d_b (K - 1) Σ_{l<L} 2^l`.
pub fn receptive_field_eid(layers: usize, taps: usize, base_dilation: usize) -> usize {
    1 + base_dilation * (taps - 1) * ((1usize << layers) - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(h: usize, k: usize) -> Tensor<f64> {
        Tensor::full(&[h, k], 1.0)
    }

    #[test]
    fn identity_kernel() {
        let s = KernelSpec::cd(ones(1, 1), 1).unwrap();
        assert_eq!(s.max_delay, 0);
        assert_eq!(s.materialize().unwrap().data(), &[1.0]);
    }

    #[test]
    fn dilated_pair() {
        let s = KernelSpec::cd(ones(1, 2), 2).unwrap();
        assert_eq!(s.materialize().unwrap().data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn eid_positions_double_per_layer() {
        let s = KernelSpec::eid(ones(1, 3), 1, 2).unwrap();
        assert_eq!(s.positions.data(), &[0.0, 4.0, 8.0]);
        assert_eq!(s.max_delay, 8);
    }

    #[test]
    fn gaussian_kernel_by_hand() {
        let s = KernelSpec::learnable(
            ones(1, 1),
            Tensor::from_f64(&[1, 1], &[1.5]).unwrap(),
            3,
            0.5,
        )
        .unwrap();
        let k = s.materialize().unwrap();
        let e05 = (-0.5f64).exp();
        let e45 = (-4.5f64).exp();
        for (got, want) in k.data().iter().zip([e45, e05, e05, e45]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_position_is_rejected() {
        let bad = KernelSpec::<f64> {
            variant: ConvVariant::Learnable,
            weights: ones(1, 1),
            positions: Tensor::from_f64(&[1, 1], &[3.5]).unwrap(),
            dilation: 0,
            layer: 0,
            max_delay: 3,
            sigma: 0.5,
        };
        assert!(bad.materialize().is_err());
    }

    #[test]
    fn clamp() {
        let mut s = KernelSpec::learnable(
            ones(1, 3),
            Tensor::from_f64(&[1, 3], &[0.0, 1.0, 2.0]).unwrap(),
            4,
            0.5,
        )
        .unwrap();
        s.positions.data_mut().copy_from_slice(&[-0.3, 5.0, 2.5]);
        let s = clamp_positions(s);
        assert_eq!(s.positions.data(), &[0.0, 4.0, 2.5]);
    }

    #[test]
    fn receptive_fields() {
        let one = KernelSpec::cd(ones(1, 1), 1).unwrap();
        assert_eq!(receptive_field(&[one]), 1);
        let eid: Vec<_> = (0..6)
            .map(|l| KernelSpec::eid(ones(1, 64), 1, l).unwrap())
            .collect();
        assert_eq!(receptive_field(&eid), 3970);
        assert_eq!(receptive_field_eid(6, 64, 1), 3970);
        let cd: Vec<_> = (0..6)
            .map(|_| KernelSpec::cd(ones(1, 8), 32).unwrap())
            .collect();
        assert_eq!(receptive_field(&cd), 1345);
        assert_eq!(receptive_field_cd(6, 8, 32), 1345);
    }

    #[test]
    fn effective_delay_is_capped() {
        let s = KernelSpec::learnable(
            ones(1, 2),
            Tensor::from_f64(&[1, 2], &[0.2, 3.1]).unwrap(),
            10,
            0.5,
        )
        .unwrap();
        assert_eq!(s.effective_max_delay(), 5);
        let s = KernelSpec::learnable(
            ones(1, 1),
            Tensor::from_f64(&[1, 1], &[10.0]).unwrap(),
            10,
            0.5,
        )
        .unwrap();
        assert_eq!(s.effective_max_delay(), 10);
    }
}
