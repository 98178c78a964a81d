use serde::{Deserialize, Serialize};

use crate::dcls_conv::{ConvVariant, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::layers::DEFAULT_NORM_EPS;

/// Convolution kind of every layer; `none` removes the convolution, which
/// leaves a plain minGRU stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    None,
    Cd,
    Eid,
    #[serde(alias = "learnable")]
    L,
}

impl ConvKind {
    pub fn variant(self) -> Option<ConvVariant> {
        match self {
            ConvKind::None => None,
            ConvKind::Cd => Some(ConvVariant::Cd),
            ConvKind::Eid => Some(ConvVariant::Eid),
            ConvKind::L => Some(ConvVariant::Learnable),
        }
    }
}

/// Initial placement of learnable tap positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionInit {
    /// Evenly spread over `[0, max_delay]`.
    Dilated,
    /// Drawn from `U[0, max_delay]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvConfig {
    pub variant: ConvKind,
    /// Nonzero taps per channel, `K`.
    pub taps: usize,
    /// `d` for constant dilation, `d_b` for exponential dilation.
    pub dilation: usize,
    /// `Γ` for learnable positions.
    pub max_delay: usize,
    pub sigma: f64,
    pub position_init: PositionInit,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            variant: ConvKind::Cd,
            taps: 8,
            dilation: 32,
            max_delay: 128,
            sigma: DEFAULT_SIGMA,
            position_init: PositionInit::Uniform,
        }
    }
}

impl ConvConfig {
    /// Largest delay of layer `layer`'s kernel.
    pub fn layer_max_delay(&self, layer: usize) -> usize {
        let k1 = self.taps.saturating_sub(1);
        match self.variant {
            ConvKind::None => 0,
            ConvKind::Cd => self.dilation * k1,
            ConvKind::Eid => self.dilation * (1usize << layer) * k1,
            ConvKind::L => self.max_delay,
        }
    }
}

/// Temporal mixer after the convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixer {
    Gru,
    /// Parameter-free pointwise ReLU; turns the stack into a plain TCN.
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Decoder applied to the features of the last step.
    ClassifyLast,
    /// Decoder applied to the time-averaged features.
    ClassifyMean,
    ClassifyPerStep,
    RegressPerStep,
}

impl Head {
    pub fn per_step(self) -> bool {
        matches!(self, Head::ClassifyPerStep | Head::RegressPerStep)
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Head::RegressPerStep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// `L`
    pub layers: usize,
    /// `H`
    pub hidden: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub conv: ConvConfig,
    pub mixer: Mixer,
    pub mlp: bool,
    pub norm: bool,
    /// Skip connections around the mixer and the MLP.
    pub residual: bool,
    pub decoder_bias: bool,
    pub norm_eps: f64,
    pub head: Head,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            hidden: 32,
            input_dim: 1,
            output_dim: 10,
            conv: ConvConfig::default(),
            mixer: Mixer::Gru,
            mlp: true,
            norm: true,
            residual: true,
            decoder_bias: false,
            norm_eps: DEFAULT_NORM_EPS,
            head: Head::ClassifyLast,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.hidden == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return bad("hidden, input_dim and output_dim must be at least 1");
        }
        if self.conv.variant != ConvKind::None && self.conv.taps == 0 {
            return bad("conv.taps must be at least 1");
        }
        match self.conv.variant {
            ConvKind::Cd | ConvKind::Eid if self.conv.dilation == 0 => {
                return bad("conv.dilation must be at least 1")
            }
            ConvKind::Eid
                if self.layers + self.conv.dilation.ilog2() as usize
                    >= usize::BITS as usize - 8 =>
            {
                return bad("exponential dilation overflows at this depth")
            }
            ConvKind::L if !(self.conv.sigma > 0.0) => return bad("conv.sigma must be positive"),
            _ => {}
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive");
        }
        Ok(())
    }

    /// Per-layer largest delays `Γ_l`.
    pub fn max_delays(&self) -> Vec<usize> {
        (0..self.layers)
            .map(|l| self.conv.layer_max_delay(l))
            .collect()
    }

    /// `1 + Σ_l Γ_l`
    pub fn receptive_field(&self) -> usize {
        1 + self.max_delays().iter().sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_with_partial_keys() {
        let cfg: NetworkConfig = toml::from_str(
            r#"
            layers = 1
            hidden = 10
            [conv]
            variant = "l"
            max_delay = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.conv.variant, ConvKind::L);
        assert_eq!(cfg.conv.taps, 8);
        let back: NetworkConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(toml::from_str::<NetworkConfig>("layerz = 2").is_err());
    }

    #[test]
    fn eid_delays_double() {
        let cfg = NetworkConfig {
            conv: ConvConfig {
                variant: ConvKind::Eid,
                taps: 64,
                dilation: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(cfg.max_delays(), vec![63, 126, 252, 504, 1008, 2016]);
        assert_eq!(cfg.receptive_field(), 3970);
    }

    #[test]
    fn zero_layers_invalid() {
        let cfg = NetworkConfig {
            layers: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
