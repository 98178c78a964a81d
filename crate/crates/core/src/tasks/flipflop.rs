//! Flip-flop languages: strings over `{w, r, i, 0, 1}` alternating
//! instruction and value, where the value after every `r` repeats the value
//! after the most recent `w`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Targets};
use crate::dcls_conv::KernelSpec;
use crate::error::{Error, Result};
use crate::layers::LinearParams;
use crate::mingru::GruParams;
use crate::model::{ConvConfig, ConvKind, Head, LayerParams, NetworkConfig, NetworkParams};
use crate::numcore::{Real, Rng, Tensor};

pub const W: u8 = 0;
pub const R: u8 = 1;
pub const I: u8 = 2;
pub const ZERO: u8 = 3;
pub const ONE: u8 = 4;
pub const ALPHABET: usize = 5;
pub const SYMBOLS: [char; ALPHABET] = ['w', 'r', 'i', '0', '1'];

/// Prediction sets, in class-id order: `{0,1}`, `{w,r,i}`, `{0}`, `{1}`.
pub const SET_VALUE: u8 = 0;
pub const SET_INSTRUCTION: u8 = 1;
pub const SET_ZERO: u8 = 2;
pub const SET_ONE: u8 = 3;
pub const SET_TEMPLATES: [[f32; ALPHABET]; 4] = [
    [0.0, 0.0, 0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0],
];

/// Ignore probability of the dense training regime.
pub const P_DENSE: f64 = 0.8;
/// Ignore probability of the sparse out-of-distribution regime (mean
/// write-to-read distance around 100 steps).
pub const P_SPARSE: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipFlopConfig {
    pub seq_len: usize,
    pub p_ignore: f64,
    pub seed: u64,
}

impl Default for FlipFlopConfig {
    fn default() -> Self {
        Self {
            seq_len: 512,
            p_ignore: P_DENSE,
            seed: 0,
        }
    }
}

impl FlipFlopConfig {
    pub fn regime(&self) -> &'static str {
        if self.p_ignore >= P_SPARSE {
            "ood-sparse"
        } else {
            "dense"
        }
    }

    fn validate(&self) -> Result<()> {
        if self.seq_len < 2 || self.seq_len % 2 != 0 {
            return Err(Error::Config(format!(
                "flip-flop seq_len must be even and >= 2, got {}",
                self.seq_len
            )));
        }
        if !(0.0..=1.0).contains(&self.p_ignore) {
            return Err(Error::Config(format!(
                "p_ignore must lie in [0, 1], got {}",
                self.p_ignore
            )));
        }
        Ok(())
    }
}

pub fn render(s: &[u8]) -> String {
    s.iter().map(|&c| SYMBOLS[c as usize]).collect()
}

/// Parse `"w 1 i 0 r"` style strings (whitespace optional).
pub fn parse(text: &str) -> Result<Vec<u8>> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            SYMBOLS
                .iter()
                .position(|&s| s == c)
                .map(|p| p as u8)
                .ok_or_else(|| Error::Data(format!("`{c}` is not a flip-flop symbol")))
        })
        .collect()
}

/// One valid string of length `seq_len`.
pub fn gen_string(seq_len: usize, p_ignore: f64, rng: &mut Rng) -> Vec<u8> {
    let mut s = Vec::with_capacity(seq_len);
    let mut stored = None;
    while s.len() < seq_len {
        let instr = if s.is_empty() {
            W
        } else if rng.bernoulli(p_ignore) {
            I
        } else if rng.bernoulli(0.5) {
            W
        } else {
            R
        };
        s.push(instr);
        if s.len() == seq_len {
            break;
        }
        let value = match instr {
            R => stored.expect("read before any write"),
            _ => {
                if rng.bernoulli(0.5) {
                    ONE
                } else {
                    ZERO
                }
            }
        };
        if instr == W {
            stored = Some(value);
        }
        s.push(value);
    }
    s
}

/// A string with `w v` at the start, only ignores in between, and `r` at
/// step `distance` (even); the rest continues under the dense regime.
pub fn recall_string(seq_len: usize, distance: usize, value: u8, rng: &mut Rng) -> Result<Vec<u8>> {
    if distance % 2 != 0 || distance < 2 || distance + 2 > seq_len || seq_len % 2 != 0 {
        return Err(Error::invalid(format!(
            "recall distance {distance} must be even, >= 2 and fit in {seq_len} steps"
        )));
    }
    let mut s = vec![W, value];
    while s.len() < distance {
        s.push(I);
        s.push(if rng.bernoulli(0.5) { ONE } else { ZERO });
    }
    s.push(R);
    s.push(value);
    let mut stored = value;
    while s.len() < seq_len {
        let instr = if rng.bernoulli(P_DENSE) {
            I
        } else if rng.bernoulli(0.5) {
            W
        } else {
            R
        };
        let v = if instr == R {
            stored
        } else if rng.bernoulli(0.5) {
            ONE
        } else {
            ZERO
        };
        if instr == W {
            stored = v;
        }
        s.push(instr);
        s.push(v);
    }
    Ok(s)
}

/// Check the language rules by walking the string. Returns the offending
/// position on failure.
pub fn validate_string(s: &[u8]) -> std::result::Result<(), String> {
    if s.first() != Some(&W) {
        return Err("string must start with w".into());
    }
    let mut last_write: Option<u8> = None;
    let mut prev = None;
    for (t, &c) in s.iter().enumerate() {
        let is_instr = matches!(c, W | R | I);
        let is_value = matches!(c, ZERO | ONE);
        if t % 2 == 0 && !is_instr {
            return Err(format!("position {t}: expected an instruction, found {c}"));
        }
        if t % 2 == 1 && !is_value {
            return Err(format!("position {t}: expected a value, found {c}"));
        }
        match prev {
            Some(W) => last_write = Some(c),
            Some(R) if last_write != Some(c) => {
                return Err(format!(
                    "position {t}: read returned {c}, last write was {last_write:?}"
                ));
            }
            _ => {}
        }
        prev = Some(c);
    }
    Ok(())
}

/// Prediction set for the symbol after each position.
pub fn prediction_sets(s: &[u8]) -> Vec<u8> {
    let mut stored = ZERO;
    let mut out = Vec::with_capacity(s.len());
    for t in 0..s.len() {
        if t > 0 && s[t - 1] == W {
            stored = s[t];
        }
        out.push(match s[t] {
            W | I => SET_VALUE,
            R => {
                if stored == ONE {
                    SET_ONE
                } else {
                    SET_ZERO
                }
            }
            _ => SET_INSTRUCTION,
        });
    }
    out
}

/// One-hot inputs and multi-hot set targets for a batch of strings.
pub fn encode(strings: &[Vec<u8>]) -> Result<Dataset> {
    let n = strings.len();
    let t = strings.first().map_or(0, Vec::len);
    if strings.iter().any(|s| s.len() != t) {
        return Err(Error::Data(
            "flip-flop strings must share one length".into(),
        ));
    }
    let mut inputs = Tensor::zeros(&[n, t, ALPHABET]);
    let mut multi_hot = Tensor::zeros(&[n, t, ALPHABET]);
    let mut sets = Vec::with_capacity(n * t);
    for (b, s) in strings.iter().enumerate() {
        for (ti, (&c, set)) in s.iter().zip(prediction_sets(s)).enumerate() {
            let row = (b * t + ti) * ALPHABET;
            inputs.data_mut()[row + c as usize] = 1.0;
            multi_hot.data_mut()[row..row + ALPHABET].copy_from_slice(&SET_TEMPLATES[set as usize]);
            sets.push(set);
        }
    }
    Dataset::new(inputs, Targets::FlipFlop { multi_hot, sets })
}

/// `n` strings; string `k` uses its own substream of `cfg.seed`.
pub fn gen_flipflop(cfg: &FlipFlopConfig, n: usize) -> Result<Dataset> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("need at least one string"));
    }
    let base = Rng::new(cfg.seed);
    let strings: Vec<Vec<u8>> = (0..n)
        .map(|k| gen_string(cfg.seq_len, cfg.p_ignore, &mut base.split(k as u64)))
        .collect();
    encode(&strings)
}

/// Class id per output row. Four outputs are read as set logits (argmax);
/// five outputs as a multi-hot estimate matched to the nearest set.
pub fn decode_sets<F: Real>(outputs: &Tensor<F>) -> Result<Vec<u8>> {
    let c = outputs.last_dim();
    let rows = outputs.data().chunks(c.max(1));
    match c {
        4 => Ok(rows
            .map(|r| {
                let mut best = 0;
                for k in 1..4 {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()),
        ALPHABET => Ok(rows
            .map(|r| {
                let dist = |tpl: &[f32; ALPHABET]| -> f64 {
                    r.iter()
                        .zip(tpl)
                        .map(|(a, &b)| (a.f64() - b as f64).powi(2))
                        .sum()
                };
                let mut best = 0;
                for k in 1..4 {
                    if dist(&SET_TEMPLATES[k]) < dist(&SET_TEMPLATES[best]) {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()),
        _ => Err(Error::Data(format!(
            "flip-flop outputs need 4 or 5 channels, got {c}"
        ))),
    }
}

/// Fraction of steps whose decoded set matches, overall and on the steps
/// right after a read (`{0}` or `{1}` targets).
pub fn set_accuracy<F: Real>(outputs: &Tensor<F>, sets: &[u8]) -> Result<(f64, f64)> {
    let pred = decode_sets(outputs)?;
    if pred.len() != sets.len() || sets.is_empty() {
        return Err(Error::shape("set_accuracy", outputs.shape(), &[sets.len()]));
    }
    let (mut hit, mut r_hit, mut r_n) = (0usize, 0usize, 0usize);
    for (&p, &s) in pred.iter().zip(sets) {
        hit += (p == s) as usize;
        if s >= SET_ZERO {
            r_n += 1;
            r_hit += (p == s) as usize;
        }
    }
    let r_acc = if r_n == 0 {
        1.0
    } else {
        r_hit as f64 / r_n as f64
    };
    Ok((hit as f64 / sets.len() as f64, r_acc))
}

/// Width of the constructed network: stored and current copies of the
/// one-hot input.
pub const ORACLE_HIDDEN: usize = 2 * ALPHABET;

/// Configuration the constructed network needs: one layer, two delays
/// `{0, 1}`, recurrence only.
pub fn oracle_config() -> NetworkConfig {
    NetworkConfig {
        layers: 1,
        hidden: ORACLE_HIDDEN,
        input_dim: ALPHABET,
        output_dim: 4,
        conv: ConvConfig {
            variant: ConvKind::L,
            taps: 2,
            dilation: 1,
            max_delay: 1,
            sigma: 0.1,
            ..Default::default()
        },
        mlp: false,
        norm: false,
        residual: false,
        decoder_bias: true,
        head: Head::ClassifyPerStep,
        ..Default::default()
    }
}

/// The hand-built solution with gate saturation `m` and [`oracle_config`].
pub fn build_flipflop_oracle(m: f64) -> Result<NetworkParams<f64>> {
    build_flipflop_oracle_for(&oracle_config(), m)
}

/// Hand-built solution for `cfg`, which must match [`oracle_config`] in
/// layer count, taps and width.
///
/// Channels `0..5` of the convolution see `x_t`, channels `5..10` see
/// `x_{t-1}`. The stored half of the recurrence opens its gate only when
/// `x_{t-1} = w` and copies `x_t`; the current half always copies `x_t`.
/// The update here is `h = (1 - z) h_prev + z h~`, so "open" means `z -> 1`.
pub fn build_flipflop_oracle_for(cfg: &NetworkConfig, m: f64) -> Result<NetworkParams<f64>> {
    if cfg.layers != 1
        || cfg.conv.taps != 2
        || cfg.hidden != ORACLE_HIDDEN
        || cfg.input_dim != ALPHABET
    {
        return Err(Error::Config(format!(
            "flip-flop oracle needs 1 layer, 2 taps, hidden {ORACLE_HIDDEN}, input {ALPHABET}; got {} layers, {} taps, hidden {}, input {}",
            cfg.layers, cfg.conv.taps, cfg.hidden, cfg.input_dim
        )));
    }
    if cfg.conv.variant != ConvKind::L
        || cfg.conv.max_delay < 1
        || cfg.output_dim != 4
        || !cfg.decoder_bias
    {
        return Err(Error::Config(
            "flip-flop oracle needs learnable delays with max_delay >= 1 and a biased 4-way decoder".into(),
        ));
    }
    if cfg.mlp || cfg.norm || cfg.residual || !cfg.head.per_step() {
        return Err(Error::Config(
            "flip-flop oracle needs a bare recurrent layer and a per-step head".into(),
        ));
    }
    let (a, h) = (ALPHABET, ORACLE_HIDDEN);
    let encoder = LinearParams {
        weight: Tensor::from_fn(&[h, a], |i| if i / a % a == i % a { 1.0 } else { 0.0 }),
        bias: None,
    };
    let mut weights = Tensor::zeros(&[h, 2]);
    let mut positions = Tensor::zeros(&[h, 2]);
    for c in 0..h {
        positions.set(&[c, 1], 1.0);
        weights.set(&[c, if c < a { 0 } else { 1 }], 1.0);
    }
    let conv = KernelSpec::learnable(weights, positions, cfg.conv.max_delay, cfg.conv.sigma)?;

    let mut gate_w = Tensor::zeros(&[h, h]);
    let mut gate_b = Tensor::zeros(&[h]);
    for k in 0..a {
        gate_w.set(&[k, a + W as usize], 2.0 * m);
        gate_b.set(&[k], -m);
        gate_b.set(&[a + k], m);
    }
    let cand_w = Tensor::from_fn(&[h, h], |i| if i % h == (i / h) % a { 1.0 } else { 0.0 });
    let gru = GruParams {
        gate: LinearParams {
            weight: gate_w,
            bias: Some(gate_b),
        },
        cand: LinearParams {
            weight: cand_w,
            bias: Some(Tensor::zeros(&[h])),
        },
    };

    // Readout over [stored, current]: w/i -> {0,1}; values -> {w,r,i};
    // a read lifts {0} and {1} half-way past their negative bias and the
    // stored value decides which one crosses.
    let cur = |s: u8| a + s as usize;
    let mut dec_w = Tensor::zeros(&[4, h]);
    dec_w.set(&[SET_VALUE as usize, cur(W)], 1.0);
    dec_w.set(&[SET_VALUE as usize, cur(I)], 1.0);
    dec_w.set(&[SET_INSTRUCTION as usize, cur(ZERO)], 1.0);
    dec_w.set(&[SET_INSTRUCTION as usize, cur(ONE)], 1.0);
    dec_w.set(&[SET_ZERO as usize, cur(R)], 1.0);
    dec_w.set(&[SET_ZERO as usize, ZERO as usize], 1.0);
    dec_w.set(&[SET_ONE as usize, cur(R)], 1.0);
    dec_w.set(&[SET_ONE as usize, ONE as usize], 1.0);
    let dec_b = Tensor::new(&[4], vec![0.0, 0.0, -1.5, -1.5])?;

    Ok(NetworkParams {
        config: cfg.clone(),
        encoder,
        layers: vec![LayerParams {
            conv: Some(conv),
            gru: Some(gru),
            mlp: None,
            norm: None,
        }],
        decoder: LinearParams {
            weight: dec_w,
            bias: Some(dec_b),
        },
    })
}

/// Longest recall distance the chance demo enumerates (`2^(d/2)` strings).
pub const MAX_DEMO_DISTANCE: usize = 40;

/// Accuracy on the read positions of adversarial strings `w v (i x)* r` of
/// the given recall distance, for the best predictor that sees only the
/// last `context` symbols.
///
/// Every string of the family is enumerated to get the exact distribution
/// of `v` given each window content; the predictor takes the majority
/// (ties go to `0`) and is scored on `n` randomly drawn strings.
pub fn fixed_context_chance_demo(
    context: usize,
    distance: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if context == 0 {
        return Err(Error::invalid("context length must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one string"));
    }
    if distance < 2 || distance % 2 != 0 || distance > MAX_DEMO_DISTANCE {
        return Err(Error::invalid(format!(
            "recall distance must be even and in [2, {MAX_DEMO_DISTANCE}], got {distance}"
        )));
    }
    let values = distance / 2;
    // Bit j of `bits` is the value at odd position 2j + 1; bit 0 is `v`.
    let build = |bits: u64| -> Vec<u8> {
        let mut s = Vec::with_capacity(distance + 1);
        for j in 0..values {
            s.push(if j == 0 { W } else { I });
            s.push(if bits >> j & 1 == 1 { ONE } else { ZERO });
        }
        s.push(R);
        s
    };
    let window = |s: &[u8]| s[s.len().saturating_sub(context)..].to_vec();
    let mut table: HashMap<Vec<u8>, [u64; 2]> = HashMap::new();
    for bits in 0..1u64 << values {
        table.entry(window(&build(bits))).or_default()[(bits & 1) as usize] += 1;
    }
    let base = Rng::new(seed);
    let mut hits = 0usize;
    for k in 0..n {
        let mut rng = base.split(k as u64);
        let bits = (0..values).fold(0u64, |acc, j| acc | (rng.bernoulli(0.5) as u64) << j);
        let c = table[&window(&build(bits))];
        let guess = if c[1] > c[0] { 1 } else { 0 };
        hits += (guess == bits & 1) as usize;
    }
    Ok(hits as f64 / n as f64)
}
