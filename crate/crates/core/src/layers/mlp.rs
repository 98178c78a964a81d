use super::linear::LinearParams;
use crate::error::{Error, Result};
use crate::numcore::{Real, Rng, Tensor};

/// Two-layer perceptron `H -> 2H -> H` with a ReLU in between.
///
/// The expansion factor is fixed at 2, which gives exactly `4H^2 + 3H`
/// parameters. ReLU is the only supported nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<F: Real> {
    pub up: LinearParams<F>,
    pub down: LinearParams<F>,
}

/// Pre-activation of the hidden layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<F: Real> {
    pub pre: Tensor<F>,
    pub act: Tensor<F>,
}

pub fn mlp_param_count(h: usize) -> usize {
    4 * h * h + 3 * h
}

impl<F: Real> MlpParams<F> {
    pub fn init(rng: &mut Rng, h: usize) -> Self {
        Self {
            up: LinearParams::init(rng, h, 2 * h, true),
            down: LinearParams::init(rng, 2 * h, h, true),
        }
    }

    pub fn zeros(h: usize) -> Self {
        Self {
            up: LinearParams::zeros(h, 2 * h, true),
            down: LinearParams::zeros(2 * h, h, true),
        }
    }

    pub fn width(&self) -> usize {
        self.up.in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.up.param_count() + self.down.param_count()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, MlpCache<F>)> {
        if x.last_dim() != self.width() {
            return Err(Error::shape("mlp", x.shape(), self.up.weight.shape()));
        }
        let pre = self.up.forward(x)?;
        let act = pre.relu();
        let y = self.down.forward(&act)?;
        Ok((y, MlpCache { pre, act }))
    }

    pub fn backward(
        &self,
        x: &Tensor<F>,
        cache: &MlpCache<F>,
        grad_y: &Tensor<F>,
    ) -> Result<(MlpParams<F>, Tensor<F>)> {
        let (g_down, g_act) = self.down.backward(&cache.act, grad_y)?;
        let mut g_pre = g_act;
        for (g, &p) in g_pre.data_mut().iter_mut().zip(cache.pre.data()) {
            if p <= F::zero() {
                *g = F::zero();
            }
        }
        let (g_up, gx) = self.up.backward(x, &g_pre)?;
        Ok((
            MlpParams {
                up: g_up,
                down: g_down,
            },
            gx,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{compare_grads, finite_diff_grad, AUDIT_EPS};

    #[test]
    fn zero_params_give_zero() {
        let p = MlpParams::<f64>::zeros(3);
        let (y, _) = p.forward(&Tensor::full(&[2, 3], 1.5)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_one_by_hand() {
        let p = MlpParams::<f64> {
            up: LinearParams::new(
                Tensor::from_f64(&[2, 1], &[1.0, -1.0]).unwrap(),
                Some(Tensor::zeros(&[2])),
            )
            .unwrap(),
            down: LinearParams::new(
                Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap(),
                Some(Tensor::zeros(&[1])),
            )
            .unwrap(),
        };
        let (y, _) = p.forward(&Tensor::from_f64(&[1], &[2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn param_count_closed_form() {
        for h in 1..=64 {
            let p = MlpParams::<f32>::zeros(h);
            assert_eq!(p.param_count(), mlp_param_count(h));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let p = MlpParams::<f64>::init(&mut rng, 3);
            // ReLU has no derivative at 0; keep pre-activations clear of the kink
            let (x, cache) = loop {
                let x = Tensor::from_fn(&[4, 3], |_| rng.normal());
                let (_, cache) = p.forward(&x).unwrap();
                if cache.pre.data().iter().all(|v| v.abs() > 1e-2) {
                    break (x, cache);
                }
            };
            let w = Tensor::from_fn(&[4, 3], |_| rng.normal());
            let (g, gx) = p.backward(&x, &cache, &w).unwrap();
            let loss = |q: &MlpParams<f64>, x: &Tensor<f64>| {
                q.forward(x).unwrap().0.mul(&w).unwrap().sum()
            };

            let nx = finite_diff_grad(|t| Ok(loss(&p, t)), &x, AUDIT_EPS).unwrap();
            assert!(compare_grads("x", &gx, &nx).unwrap().passes(1e-4));
            let nw = finite_diff_grad(
                |t| {
                    let mut q = p.clone();
                    q.up.weight = t.clone();
                    Ok(loss(&q, &x))
                },
                &p.up.weight,
                AUDIT_EPS,
            )
            .unwrap();
            assert!(compare_grads("up.w", &g.up.weight, &nw)
                .unwrap()
                .passes(1e-4));
            let nb = finite_diff_grad(
                |t| {
                    let mut q = p.clone();
                    q.down.bias = Some(t.clone());
                    Ok(loss(&q, &x))
                },
                p.down.bias.as_ref().unwrap(),
                AUDIT_EPS,
            )
            .unwrap();
            assert!(compare_grads("down.b", g.down.bias.as_ref().unwrap(), &nb)
                .unwrap()
                .passes(1e-4));
        }
    }
}
