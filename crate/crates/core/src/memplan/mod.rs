//! Inference memory accounting: parameter floats plus the activation buffer
//! every convolution keeps of its last `Γ_l` inputs.
//!
//! The buffer is `H · Σ_l Γ_l` floats. A literal `L × H × S` with `S`
//! already summed over layers counts the layers twice and does not match
//! reported totals for constant-dilation models, so it is not used.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{count_params, ConvKind, Mixer, NetworkConfig, NetworkParams, ParamBreakdown};
use crate::numcore::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MemoryOptions {
    /// Also report totals in bytes at this many bytes per float.
    pub bytes_per_float: Option<usize>,
    /// Add Adam moment storage (two floats per parameter). Training-time only.
    pub optimizer_state: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ByteTotals {
    pub per_float: usize,
    pub param: usize,
    pub buffer: usize,
    pub total: usize,
}

/// Memory footprint in float elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub variant: ConvKind,
    pub mixer: Mixer,
    pub layers: usize,
    pub hidden: usize,
    pub taps: usize,
    pub params: ParamBreakdown,
    /// `Γ_l` used for each layer's buffer.
    pub delays: Vec<usize>,
    /// `H · Γ_l`
    pub layer_buffers: Vec<usize>,
    /// Whether `delays` come from trained positions rather than the bound.
    pub trained_delays: bool,
    pub param_mem: usize,
    pub buffer_mem: usize,
    pub total_mem: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer_state: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<ByteTotals>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

const EID_FLAG: &str = "exponential dilation: buffer follows H * d_b * (K - 1) * (2^L - 1); \
                        not reconciled with externally quoted totals for this variant";

/// Per-layer `ceil(max p + 3σ)` (capped at `Γ`) of a trained learnable network.
pub fn effective_delays<F: Real>(params: &NetworkParams<F>) -> Vec<usize> {
    params.kernels().map(|k| k.effective_max_delay()).collect()
}

/// Footprint of `cfg`. For learnable positions `trained` supplies the
/// per-layer effective delays; without it the configured bound `Γ` is used.
pub fn footprint(
    cfg: &NetworkConfig,
    trained: Option<&[usize]>,
    opts: &MemoryOptions,
) -> Result<MemoryReport> {
    cfg.validate()?;
    let bound = cfg.max_delays();
    let delays = match (cfg.conv.variant, trained) {
        (ConvKind::L, Some(t)) => {
            if t.len() != cfg.layers {
                return Err(Error::invalid(format!(
                    "{} trained delays for a {}-layer network",
                    t.len(),
                    cfg.layers
                )));
            }
            if let Some((l, d)) = t.iter().enumerate().find(|(_, &d)| d > cfg.conv.max_delay) {
                return Err(Error::invalid(format!(
                    "layer {l} delay {d} exceeds the bound {}",
                    cfg.conv.max_delay
                )));
            }
            t.to_vec()
        }
        (_, Some(_)) => {
            return Err(Error::invalid(
                "trained delays only apply to learnable positions",
            ))
        }
        (_, None) => bound,
    };
    let params = count_params(cfg);
    let layer_buffers: Vec<usize> = delays.iter().map(|d| cfg.hidden * d).collect();
    let buffer_mem = layer_buffers.iter().sum();
    let total_mem = params.total + buffer_mem;
    let mut flags = Vec::new();
    if cfg.conv.variant == ConvKind::Eid {
        flags.push(EID_FLAG.to_string());
    }
    Ok(MemoryReport {
        variant: cfg.conv.variant,
        mixer: cfg.mixer,
        layers: cfg.layers,
        hidden: cfg.hidden,
        taps: if cfg.conv.variant == ConvKind::None {
            0
        } else {
            cfg.conv.taps
        },
        params,
        trained_delays: trained.is_some(),
        delays,
        layer_buffers,
        param_mem: params.total,
        buffer_mem,
        total_mem,
        optimizer_state: opts.optimizer_state.then_some(2 * params.total),
        bytes: opts.bytes_per_float.map(|b| ByteTotals {
            per_float: b,
            param: b * params.total,
            buffer: b * buffer_mem,
            total: b * total_mem,
        }),
        flags,
    })
}

/// Footprint of a (possibly trained) network, using effective delays for
/// learnable positions.
pub fn footprint_of<F: Real>(
    params: &NetworkParams<F>,
    opts: &MemoryOptions,
) -> Result<MemoryReport> {
    let eff = effective_delays(params);
    let trained = (params.config.conv.variant == ConvKind::L).then_some(eff.as_slice());
    footprint(&params.config, trained, opts)
}

pub const SWEEP_HEADER: &str =
    "variant,mixer,layers,hidden,taps,dilation,max_delay,params,buffer,total,accuracy";

/// One CSV row per configuration; the accuracy column is blank when absent.
pub fn sweep_report(grid: &[(NetworkConfig, Option<f64>)]) -> Result<String> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for (cfg, acc) in grid {
        let r = footprint(cfg, None, &MemoryOptions::default())?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            variant_name(cfg.conv.variant),
            mixer_name(cfg.mixer),
            cfg.layers,
            cfg.hidden,
            r.taps,
            match cfg.conv.variant {
                ConvKind::Cd | ConvKind::Eid => cfg.conv.dilation.to_string(),
                _ => String::new(),
            },
            r.delays.iter().max().copied().unwrap_or(0),
            r.param_mem,
            r.buffer_mem,
            r.total_mem,
            acc.map(|a| a.to_string()).unwrap_or_default(),
        );
    }
    Ok(out)
}

pub fn variant_name(v: ConvKind) -> &'static str {
    match v {
        ConvKind::None => "none",
        ConvKind::Cd => "cd",
        ConvKind::Eid => "eid",
        ConvKind::L => "l",
    }
}

fn mixer_name(m: Mixer) -> &'static str {
    match m {
        Mixer::Gru => "gru",
        Mixer::Relu => "relu",
    }
}

/// Named reference topologies: 6 x 32 image models, the small sMNIST
/// model, and a deep TCN with exponential dilation for the base-kernel sweep.
pub fn preset(name: &str) -> Option<NetworkConfig> {
    let mut c = NetworkConfig::default();
    match name {
        "scifar-mingru" => c.conv.variant = ConvKind::None,
        "scifar-tcn-cd" => {
            c.mixer = Mixer::Relu;
            c.conv.taps = 64;
            c.conv.dilation = 1;
        }
        "scifar-mgrade-cd" => {}
        "scifar-tcn-eid" => {
            c.mixer = Mixer::Relu;
            c.conv.variant = ConvKind::Eid;
            c.conv.taps = 64;
            c.conv.dilation = 1;
        }
        "scifar-mgrade-eid" => {
            c.conv.variant = ConvKind::Eid;
            c.conv.taps = 16;
            c.conv.dilation = 2;
        }
        "scifar-mgrade-l-dilated" => {
            c.conv.variant = ConvKind::L;
            c.conv.taps = 8;
            c.conv.max_delay = 256;
            c.conv.position_init = crate::model::PositionInit::Dilated;
        }
        "scifar-mgrade-l-uniform" => {
            c.conv.variant = ConvKind::L;
            c.conv.taps = 16;
            c.conv.max_delay = 128;
        }
        "smnist-mgrade-cd" => {
            c.layers = 3;
            c.hidden = 20;
            c.conv.taps = 4;
            c.conv.dilation = 16;
            c.mlp = false;
        }
        _ => return None,
    }
    Some(c)
}

pub const PRESETS: [&str; 8] = [
    "scifar-mingru",
    "scifar-tcn-cd",
    "scifar-mgrade-cd",
    "scifar-tcn-eid",
    "scifar-mgrade-eid",
    "scifar-mgrade-l-dilated",
    "scifar-mgrade-l-uniform",
    "smnist-mgrade-cd",
];

/// Relative change in (params, total) when a TCN with exponential dilation
/// grows its first-layer kernel `Γ_0 = d_b (K - 1)` from `from` to `to` by
/// adding taps at `d_b = 1`.
pub fn base_kernel_growth(base: &NetworkConfig, from: usize, to: usize) -> Result<(f64, f64)> {
    let at = |g: usize| -> Result<MemoryReport> {
        let mut c = base.clone();
        c.conv.variant = ConvKind::Eid;
        c.conv.dilation = 1;
        c.conv.taps = g + 1;
        footprint(&c, None, &MemoryOptions::default())
    };
    let (a, b) = (at(from)?, at(to)?);
    Ok((
        b.param_mem as f64 / a.param_mem as f64 - 1.0,
        b.total_mem as f64 / a.total_mem as f64 - 1.0,
    ))
}
