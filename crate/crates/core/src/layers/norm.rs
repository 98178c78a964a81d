use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Per-timestep layer normalization over the channel dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<F: Real> {
    pub gain: Tensor<F>,
    pub shift: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct NormCache<F: Real> {
    /// Normalized input before the affine part.
    pub xhat: Tensor<F>,
    /// One `1/sqrt(var + eps)` per row.
    pub inv_std: Vec<F>,
}

impl<F: Real> NormParams<F> {
    pub fn identity(h: usize) -> Self {
        Self {
            gain: Tensor::full(&[h], F::one()),
            shift: Tensor::zeros(&[h]),
        }
    }

    pub fn zeros(h: usize) -> Self {
        Self {
            gain: Tensor::zeros(&[h]),
            shift: Tensor::zeros(&[h]),
        }
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.width()
    }

    pub fn forward(&self, x: &Tensor<F>, eps: F) -> Result<(Tensor<F>, NormCache<F>)> {
        let h = self.width();
        if h == 0 {
            return Err(Error::invalid("layer norm over zero channels"));
        }
        if x.last_dim() != h {
            return Err(Error::shape("layernorm", x.shape(), self.gain.shape()));
        }
        let n = F::of(h as f64);
        let rows = x.len() / h;
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(rows);
        let (g, s) = (self.gain.data(), self.shift.data());
        for ((xr, xh), yr) in x
            .data()
            .chunks(h)
            .zip(xhat.data_mut().chunks_mut(h))
            .zip(y.data_mut().chunks_mut(h))
        {
            let mu = xr.iter().copied().sum::<F>() / n;
            let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            for c in 0..h {
                xh[c] = (xr[c] - mu) * is;
                yr[c] = xh[c] * g[c] + s[c];
            }
            inv_std.push(is);
        }
        Ok((y.check_finite("layernorm")?, NormCache { xhat, inv_std }))
    }

    pub fn backward(
        &self,
        cache: &NormCache<F>,
        grad_y: &Tensor<F>,
    ) -> Result<(NormParams<F>, Tensor<F>)> {
        let h = self.width();
        if grad_y.shape() != cache.xhat.shape() {
            return Err(Error::shape(
                "layernorm backward",
                cache.xhat.shape(),
                grad_y.shape(),
            ));
        }
        let n = F::of(h as f64);
        let mut grads = NormParams::zeros(h);
        let mut gx = Tensor::zeros(grad_y.shape());
        let gain = self.gain.data();
        let mut dxhat = vec![F::zero(); h];
        for (((gy, xh), gxr), &is) in grad_y
            .data()
            .chunks(h)
            .zip(cache.xhat.data().chunks(h))
            .zip(gx.data_mut().chunks_mut(h))
            .zip(&cache.inv_std)
        {
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for c in 0..h {
                grads.gain.data_mut()[c] += gy[c] * xh[c];
                grads.shift.data_mut()[c] += gy[c];
                dxhat[c] = gy[c] * gain[c];
                sum_d += dxhat[c];
                sum_dx += dxhat[c] * xh[c];
            }
            for c in 0..h {
                gxr[c] = is / n * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
            }
        }
        Ok((grads, gx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{compare_grads, finite_diff_grad, Rng, AUDIT_EPS};

    #[test]
    fn constant_input_normalizes_to_zero() {
        let p = NormParams::<f64>::identity(4);
        let (y, _) = p.forward(&Tensor::full(&[2, 4], 3.0), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_variance_pair() {
        let p = NormParams::<f64>::identity(2);
        let (y, _) = p
            .forward(&Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap(), 1e-12)
            .unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_width_is_rejected() {
        let p = NormParams::<f64>::identity(0);
        assert!(p.forward(&Tensor::zeros(&[2, 0]), 1e-5).is_err());
    }

    #[test]
    fn output_moments() {
        let mut rng = Rng::new(2);
        let p = NormParams::<f64>::identity(16);
        let x = Tensor::from_fn(&[32, 16], |_| 3.0 * rng.normal() + 1.0);
        let (_, cache) = p.forward(&x, 1e-5).unwrap();
        let mu = cache.xhat.mean_last().unwrap();
        let var = cache.xhat.var_last().unwrap();
        assert!(mu.data().iter().all(|m| m.abs() < 1e-6));
        assert!(var.data().iter().all(|v| (v - 1.0).abs() < 1e-4));
    }

    #[test]
    fn param_count_is_two_h() {
        for h in 1..=64 {
            assert_eq!(NormParams::<f32>::identity(h).param_count(), 2 * h);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let mut p = NormParams::<f64>::identity(5);
            p.gain = Tensor::from_fn(&[5], |_| rng.normal());
            p.shift = Tensor::from_fn(&[5], |_| rng.normal());
            let x = Tensor::from_fn(&[3, 5], |_| rng.normal());
            let w = Tensor::from_fn(&[3, 5], |_| rng.normal());
            let loss = |q: &NormParams<f64>, x: &Tensor<f64>| {
                q.forward(x, 1e-5).unwrap().0.mul(&w).unwrap().sum()
            };
            let (_, cache) = p.forward(&x, 1e-5).unwrap();
            let (g, gx) = p.backward(&cache, &w).unwrap();
            let nx = finite_diff_grad(|t| Ok(loss(&p, t)), &x, AUDIT_EPS).unwrap();
            assert!(compare_grads("x", &gx, &nx).unwrap().passes(1e-4));
            let ng = finite_diff_grad(
                |t| {
                    let mut q = p.clone();
                    q.gain = t.clone();
                    Ok(loss(&q, &x))
                },
                &p.gain,
                AUDIT_EPS,
            )
            .unwrap();
            assert!(compare_grads("gain", &g.gain, &ng).unwrap().passes(1e-4));
        }
    }
}
