//! Noisy Lorenz trajectories for next-step prediction from one observed
//! coordinate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

/// Extra holding the noise-free states aligned with the inputs, `(N, T, 3)`.
pub const CLEAN: &str = "clean";
/// Extra holding next-step noisy observations of the two unobserved
/// coordinates, `(N, T, 2)`. Never part of the training targets.
pub const OOD_TARGETS: &str = "ood_targets";

/// States beyond this magnitude count as a blown-up integration.
const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub burn_in: usize,
    pub seq_len: usize,
    pub n: usize,
    /// Noise std as a fraction of each coordinate's std over the clean data.
    pub noise: f64,
    pub seed: u64,
    /// Start every trajectory here instead of at a random point.
    pub initial: Option<[f64; 3]>,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            burn_in: 1000,
            seq_len: 256,
            n: 2000,
            noise: 0.05,
            seed: 0,
            initial: None,
        }
    }
}

impl LorenzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!(
                "lorenz dt must be positive, got {}",
                self.dt
            )));
        }
        if self.seq_len < 2 || self.n == 0 {
            return Err(Error::Config("lorenz needs seq_len >= 2 and n >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "noise must be nonnegative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn deriv(&self, s: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = s;
        [
            self.sigma * (y - x),
            x * (self.rho - z) - y,
            x * y - self.beta * z,
        ]
    }

    /// One classical Runge-Kutta step.
    pub fn rk4(&self, s: [f64; 3]) -> [f64; 3] {
        let h = self.dt;
        let add =
            |a: [f64; 3], b: [f64; 3], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]];
        let k1 = self.deriv(s);
        let k2 = self.deriv(add(s, k1, h / 2.0));
        let k3 = self.deriv(add(s, k2, h / 2.0));
        let k4 = self.deriv(add(s, k3, h));
        std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// `burn_in` discarded steps, then `len` states starting from `start`.
    pub fn integrate(&self, start: [f64; 3], len: usize) -> Result<Vec<[f64; 3]>> {
        let mut s = start;
        let mut out = Vec::with_capacity(len);
        for k in 0..self.burn_in + len {
            if k >= self.burn_in {
                out.push(s);
            }
            s = self.rk4(s);
            if s.iter()
                .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
            {
                return Err(Error::Numerical(format!(
                    "lorenz integration diverged at step {k} with dt {}; try a smaller dt",
                    self.dt
                )));
            }
        }
        Ok(out)
    }

    fn start(&self, rng: &mut Rng) -> [f64; 3] {
        self.initial.unwrap_or_else(|| {
            [
                rng.uniform(-10.0, 10.0),
                rng.uniform(-10.0, 10.0),
                rng.uniform(10.0, 40.0),
            ]
        })
    }
}

/// `cfg.n` trajectories. Inputs are the noisy first coordinate, targets its
/// next-step value; the unobserved coordinates' next-step values and the
/// clean states are kept as extras.
pub fn gen_lorenz(cfg: &LorenzConfig) -> Result<Dataset> {
    cfg.validate()?;
    let t = cfg.seq_len;
    let base = Rng::new(cfg.seed);
    let clean: Vec<Vec<[f64; 3]>> = (0..cfg.n)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.split(2 * k as u64);
            cfg.integrate(cfg.start(&mut rng), t + 1)
        })
        .collect::<Result<_>>()?;

    let count = (cfg.n * (t + 1)) as f64;
    let mut std = [0.0; 3];
    for d in 0..3 {
        let mean = clean.iter().flatten().map(|s| s[d]).sum::<f64>() / count;
        std[d] = (clean
            .iter()
            .flatten()
            .map(|s| (s[d] - mean).powi(2))
            .sum::<f64>()
            / count)
            .sqrt();
    }
    let noisy: Vec<Vec<[f64; 3]>> = clean
        .par_iter()
        .enumerate()
        .map(|(k, traj)| {
            let mut rng = base.split(2 * k as u64 + 1);
            traj.iter()
                .map(|s| std::array::from_fn(|d| s[d] + cfg.noise * std[d] * rng.normal()))
                .collect()
        })
        .collect();

    let n = cfg.n;
    let inputs = Tensor::from_fn(&[n, t, 1], |i| noisy[i / t][i % t][0] as f32);
    let targets = Tensor::from_fn(&[n, t, 1], |i| noisy[i / t][i % t + 1][0] as f32);
    let ood = Tensor::from_fn(&[n, t, 2], |i| {
        noisy[i / (2 * t)][(i / 2) % t + 1][1 + i % 2] as f32
    });
    let states = Tensor::from_fn(&[n, t, 3], |i| {
        clean[i / (3 * t)][(i / 3) % t][i % 3] as f32
    });
    let mut d = Dataset::new(inputs, Targets::Values(targets))?;
    d.extras.insert(CLEAN.into(), states);
    d.extras.insert(OOD_TARGETS.into(), ood);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::persistence_scale;

    fn small() -> LorenzConfig {
        LorenzConfig {
            n: 3,
            seq_len: 50,
            burn_in: 200,
            ..Default::default()
        }
    }

    #[test]
    fn layout_and_alignment() {
        let d = gen_lorenz(&small()).unwrap();
        assert_eq!(d.inputs.shape(), &[3, 50, 1]);
        let Targets::Values(y) = &d.targets else {
            panic!()
        };
        // Target at t is the input at t + 1.
        assert_eq!(y.get(&[1, 10, 0]), d.inputs.get(&[1, 11, 0]));
        assert_eq!(d.extras[OOD_TARGETS].shape(), &[3, 50, 2]);
        assert_eq!(d.extras[CLEAN].shape(), &[3, 50, 3]);
    }

    #[test]
    fn noise_is_five_percent_of_std() {
        let cfg = LorenzConfig {
            n: 20,
            seq_len: 200,
            burn_in: 500,
            ..Default::default()
        };
        let d = gen_lorenz(&cfg).unwrap();
        let clean = &d.extras[CLEAN];
        let xs: Vec<f64> = (0..clean.len() / 3)
            .map(|i| clean.data()[3 * i] as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        let resid: Vec<f64> = xs
            .iter()
            .zip(d.inputs.data())
            .map(|(c, &o)| o as f64 - c)
            .collect();
        let rstd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((rstd / std - 0.05).abs() < 0.005, "{}", rstd / std);
    }

    #[test]
    fn nearby_starts_diverge() {
        let cfg = LorenzConfig {
            burn_in: 0,
            ..Default::default()
        };
        let a = cfg.integrate([1.0, 1.0, 20.0], 3000).unwrap();
        let b = cfg.integrate([1.0 + 1e-9, 1.0, 20.0], 3000).unwrap();
        let gap = |k: usize| (a[k][0] - b[k][0]).abs();
        assert!(gap(100) < 1e-6);
        assert!(gap(2999) > 1e-2 || gap(2500) > 1e-2);
    }

    #[test]
    fn fixed_point_is_rejected_by_mase_guard() {
        let c = small();
        let r = (c.beta * (c.rho - 1.0)).sqrt();
        let cfg = LorenzConfig {
            initial: Some([r, r, c.rho - 1.0]),
            noise: 0.0,
            ..c
        };
        let d = gen_lorenz(&cfg).unwrap();
        let Targets::Values(y) = &d.targets else {
            panic!()
        };
        assert!(matches!(persistence_scale(y), Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_dt_rejected() {
        let cfg = LorenzConfig { dt: 0.0, ..small() };
        assert!(matches!(gen_lorenz(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn huge_dt_reports_divergence() {
        let cfg = LorenzConfig { dt: 0.5, ..small() };
        let err = gen_lorenz(&cfg).unwrap_err().to_string();
        assert!(err.contains("smaller dt"), "{err}");
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_lorenz(&small()).unwrap(), gen_lorenz(&small()).unwrap());
    }
}
