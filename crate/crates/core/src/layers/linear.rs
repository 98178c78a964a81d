use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::{Real, Rng, Tensor};

/// Rows handled per task in the row-parallel kernels. Partial weight
/// gradients are summed in chunk order, so results do not depend on the
/// number of worker threads.
const ROW_CHUNK: usize = 256;

/// `y[r] = W x[r] + b` for every row `r`.
pub(crate) fn affine_rows<F: Real>(
    x: &[F],
    w: &[F],
    b: Option<&[F]>,
    d_in: usize,
    d_out: usize,
    y: &mut [F],
) {
    let body = |(xr, yr): (&[F], &mut [F])| {
        for o in 0..d_out {
            let wr = &w[o * d_in..(o + 1) * d_in];
            let mut acc = b.map_or(F::zero(), |b| b[o]);
            for (&a, &c) in wr.iter().zip(xr) {
                acc += a * c;
            }
            yr[o] = acc;
        }
    };
    if x.len() * d_out >= 1 << 16 {
        x.par_chunks(d_in)
            .zip(y.par_chunks_mut(d_out))
            .for_each(body);
    } else {
        x.chunks(d_in).zip(y.chunks_mut(d_out)).for_each(body);
    }
}

/// Accumulates `dW += Σ_r gy[r] x[r]^T`, `db += Σ_r gy[r]` and, if requested,
/// writes `gx[r] = W^T gy[r]`.
pub(crate) fn affine_rows_bwd<F: Real>(
    x: &[F],
    gy: &[F],
    w: &[F],
    d_in: usize,
    d_out: usize,
    gw: &mut [F],
    mut gb: Option<&mut [F]>,
    gx: Option<&mut [F]>,
) {
    let rows = if d_out == 0 { 0 } else { gy.len() / d_out };
    if let Some(gx) = gx {
        let body = |(gyr, gxr): (&[F], &mut [F])| {
            gxr.iter_mut().for_each(|v| *v = F::zero());
            for o in 0..d_out {
                let g = gyr[o];
                if g == F::zero() {
                    continue;
                }
                for (v, &a) in gxr.iter_mut().zip(&w[o * d_in..(o + 1) * d_in]) {
                    *v += g * a;
                }
            }
        };
        if rows * d_in * d_out >= 1 << 16 {
            gy.par_chunks(d_out)
                .zip(gx.par_chunks_mut(d_in))
                .for_each(body);
        } else {
            gy.chunks(d_out).zip(gx.chunks_mut(d_in)).for_each(body);
        }
    }

    let partial = |r0: usize, r1: usize| {
        let mut pw = vec![F::zero(); d_out * d_in];
        let mut pb = vec![F::zero(); d_out];
        for r in r0..r1 {
            let xr = &x[r * d_in..(r + 1) * d_in];
            for o in 0..d_out {
                let g = gy[r * d_out + o];
                if g == F::zero() {
                    continue;
                }
                pb[o] += g;
                for (v, &a) in pw[o * d_in..(o + 1) * d_in].iter_mut().zip(xr) {
                    *v += g * a;
                }
            }
        }
        (pw, pb)
    };
    let chunks: Vec<(usize, usize)> = (0..rows)
        .step_by(ROW_CHUNK)
        .map(|r| (r, (r + ROW_CHUNK).min(rows)))
        .collect();
    let partials: Vec<(Vec<F>, Vec<F>)> = if rows * d_in * d_out >= 1 << 16 {
        chunks.par_iter().map(|&(a, b)| partial(a, b)).collect()
    } else {
        chunks.iter().map(|&(a, b)| partial(a, b)).collect()
    };
    for (pw, pb) in partials {
        for (v, p) in gw.iter_mut().zip(pw) {
            *v += p;
        }
        if let Some(gb) = gb.as_deref_mut() {
            for (v, p) in gb.iter_mut().zip(pb) {
                *v += p;
            }
        }
    }
}

/// Dense affine map over the trailing dimension. The same struct carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<F: Real> {
    /// `(out, in)`
    pub weight: Tensor<F>,
    /// `(out)`, absent for bias-free projections such as the decoder.
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> LinearParams<F> {
    pub fn new(weight: Tensor<F>, bias: Option<Tensor<F>>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::invalid(format!(
                "linear weight must be rank 2, got {:?}",
                weight.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.dim(0)] {
                return Err(Error::shape("linear bias", weight.shape(), b.shape()));
            }
        }
        Ok(Self { weight, bias })
    }

    /// Weights drawn from `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn init(rng: &mut Rng, d_in: usize, d_out: usize, bias: bool) -> Self {
        let a = 1.0 / (d_in.max(1) as f64).sqrt();
        Self {
            weight: Tensor::from_fn(&[d_out, d_in], |_| F::of(rng.uniform(-a, a))),
            bias: bias.then(|| Tensor::zeros(&[d_out])),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[d_out, d_in]),
            bias: bias.then(|| Tensor::zeros(&[d_out])),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim(), self.bias.is_some())
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    fn out_shape(&self, x: &Tensor<F>) -> Result<Vec<usize>> {
        if x.rank() == 0 || x.last_dim() != self.in_dim() {
            return Err(Error::shape("linear", x.shape(), self.weight.shape()));
        }
        let mut s = x.shape().to_vec();
        *s.last_mut().unwrap() = self.out_dim();
        Ok(s)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = self.out_shape(x)?;
        let mut y = Tensor::zeros(&shape);
        affine_rows(
            x.data(),
            self.weight.data(),
            self.bias.as_ref().map(|b| b.data()),
            self.in_dim(),
            self.out_dim(),
            y.data_mut(),
        );
        y.check_finite("linear")
    }

    /// Returns the parameter gradients and the input gradient.
    pub fn backward(
        &self,
        x: &Tensor<F>,
        grad_y: &Tensor<F>,
    ) -> Result<(LinearParams<F>, Tensor<F>)> {
        let shape = self.out_shape(x)?;
        if grad_y.shape() != shape.as_slice() {
            return Err(Error::shape("linear backward", &shape, grad_y.shape()));
        }
        let mut g = self.zeros_like();
        let mut gx = Tensor::zeros(x.shape());
        affine_rows_bwd(
            x.data(),
            grad_y.data(),
            self.weight.data(),
            self.in_dim(),
            self.out_dim(),
            g.weight.data_mut(),
            g.bias.as_mut().map(|b| b.data_mut()),
            Some(gx.data_mut()),
        );
        Ok((g, gx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{compare_grads, finite_diff_grad, AUDIT_EPS};

    #[test]
    fn identity_weights_pass_through() {
        let p = LinearParams::<f64>::new(Tensor::eye(3), Some(Tensor::zeros(&[3]))).unwrap();
        let x = Tensor::from_f64(&[2, 3], &[1., 2., 3., -1., 0., 5.]).unwrap();
        assert_eq!(p.forward(&x).unwrap(), x);
    }

    #[test]
    fn scalar_affine_by_hand() {
        let p = LinearParams::<f64>::new(
            Tensor::from_f64(&[1, 1], &[2.0]).unwrap(),
            Some(Tensor::from_f64(&[1], &[1.0]).unwrap()),
        )
        .unwrap();
        let y = p.forward(&Tensor::from_f64(&[1], &[3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = LinearParams::<f32>::zeros(3, 2, true);
        assert!(p.forward(&Tensor::zeros(&[4, 2])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        for trial in 0..20 {
            let p = LinearParams::<f64>::init(&mut rng, 3, 4, trial % 2 == 0);
            let x = Tensor::from_fn(&[5, 3], |_| rng.normal());
            let w = Tensor::from_fn(&[5, 4], |_| rng.normal());
            let loss = |p: &LinearParams<f64>, x: &Tensor<f64>| {
                p.forward(x).unwrap().mul(&w).unwrap().sum()
            };
            let (g, gx) = p.backward(&x, &w).unwrap();

            let nx = finite_diff_grad(|t| Ok(loss(&p, t)), &x, AUDIT_EPS).unwrap();
            assert!(compare_grads("x", &gx, &nx).unwrap().passes(1e-4));
            let nw = finite_diff_grad(
                |t| {
                    let q = LinearParams::new(t.clone(), p.bias.clone()).unwrap();
                    Ok(loss(&q, &x))
                },
                &p.weight,
                AUDIT_EPS,
            )
            .unwrap();
            assert!(compare_grads("w", &g.weight, &nw).unwrap().passes(1e-4));
            if let Some(b) = &p.bias {
                let nb = finite_diff_grad(
                    |t| {
                        let q = LinearParams::new(p.weight.clone(), Some(t.clone())).unwrap();
                        Ok(loss(&q, &x))
                    },
                    b,
                    AUDIT_EPS,
                )
                .unwrap();
                assert!(compare_grads("b", g.bias.as_ref().unwrap(), &nb)
                    .unwrap()
                    .passes(1e-4));
            }
        }
    }
}
