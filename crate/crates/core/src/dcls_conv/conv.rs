use super::kernel::{gaussian_tap, ConvVariant, KernelSpec};
use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

fn check_input<F: Real>(
    spec: &KernelSpec<F>,
    u: &Tensor<F>,
    op: &'static str,
) -> Result<(usize, usize, usize)> {
    if u.rank() != 3 || u.dim(2) != spec.channels() {
        return Err(Error::shape(op, u.shape(), spec.weights.shape()));
    }
    Ok((u.dim(0), u.dim(1), u.dim(2)))
}

/// Depthwise causal convolution of `u: (B, T, H)` with zero left padding:
/// `y[b, t, h] = Σ_n k[h][n] u[b, t - n, h]`.
pub fn causal_conv_fwd<F: Real>(spec: &KernelSpec<F>, u: &Tensor<F>) -> Result<Tensor<F>> {
    let (b, t, h) = check_input(spec, u, "causal_conv_fwd")?;
    let taps = spec.channel_taps()?;
    let mut y = Tensor::zeros(u.shape());
    let (src, dst) = (u.data(), y.data_mut());
    for bi in 0..b {
        let base = bi * t * h;
        for (c, ct) in taps.iter().enumerate() {
            for &(n, coef) in ct {
                if coef == F::zero() {
                    continue;
                }
                for ti in n..t {
                    dst[base + ti * h + c] += coef * src[base + (ti - n) * h + c];
                }
            }
        }
    }
    y.check_finite("causal_conv_fwd")
}

#[derive(Debug, Clone)]
pub struct ConvGrads<F: Real> {
    pub input: Tensor<F>,
    /// `(H, K)`
    pub weights: Tensor<F>,
    /// `(H, K)`, only for learnable kernels when requested.
    pub positions: Option<Tensor<F>>,
}

/// Exact gradients of [`causal_conv_fwd`].
///
/// For learnable kernels the position gradient uses
/// `∂c[n, p]/∂p = c[n, p] (n - p) / sigma^2`. Asking for position gradients
/// of a CD or EID kernel is an error since their positions are not parameters.
pub fn causal_conv_bwd<F: Real>(
    spec: &KernelSpec<F>,
    u: &Tensor<F>,
    grad_y: &Tensor<F>,
    with_positions: bool,
) -> Result<ConvGrads<F>> {
    let (b, t, h) = check_input(spec, u, "causal_conv_bwd")?;
    if grad_y.shape() != u.shape() {
        return Err(Error::shape("causal_conv_bwd", u.shape(), grad_y.shape()));
    }
    if with_positions && !spec.is_learnable() {
        return Err(Error::invalid(format!(
            "{} kernels have fixed positions; no position gradient exists",
            spec.variant
        )));
    }
    let taps = spec.channel_taps()?;
    let mut gu = Tensor::zeros(u.shape());
    // gradient w.r.t. each (channel, delay) coefficient in `taps`
    let mut gcoef: Vec<Vec<F>> = taps.iter().map(|ct| vec![F::zero(); ct.len()]).collect();
    {
        let (src, gy, gx) = (u.data(), grad_y.data(), gu.data_mut());
        for bi in 0..b {
            let base = bi * t * h;
            for (c, ct) in taps.iter().enumerate() {
                for (j, &(n, coef)) in ct.iter().enumerate() {
                    let mut acc = F::zero();
                    for ti in n..t {
                        let g = gy[base + ti * h + c];
                        acc += g * src[base + (ti - n) * h + c];
                        gx[base + (ti - n) * h + c] += coef * g;
                    }
                    gcoef[c][j] += acc;
                }
            }
        }
    }

    let k = spec.taps();
    let mut gw = Tensor::zeros(&[h, k]);
    let mut gp = with_positions.then(|| Tensor::zeros(&[h, k]));
    match spec.variant {
        ConvVariant::Cd | ConvVariant::Eid => {
            // taps are listed in weight order, one per (channel, i)
            for c in 0..h {
                gw.data_mut()[c * k..(c + 1) * k].copy_from_slice(&gcoef[c]);
            }
        }
        ConvVariant::Learnable => {
            let sigma2 = spec.sigma * spec.sigma;
            for c in 0..h {
                for i in 0..k {
                    let w = spec.weights.data()[c * k + i];
                    let p = spec.positions.data()[c * k + i];
                    let mut dw = F::zero();
                    let mut dp = F::zero();
                    for (n, &g) in gcoef[c].iter().enumerate() {
                        let cn = gaussian_tap(n, p, spec.sigma);
                        dw += g * cn;
                        dp += g * w * cn * (F::of(n as f64) - p) / sigma2;
                    }
                    gw.data_mut()[c * k + i] = dw;
                    if let Some(gp) = gp.as_mut() {
                        gp.data_mut()[c * k + i] = dp;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gu,
        weights: gw,
        positions: gp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{compare_grads, finite_diff_grad, Rng, AUDIT_EPS};

    fn seq(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[1, vals.len(), 1], vals).unwrap()
    }

    #[test]
    fn identity_kernel_returns_input() {
        let s = KernelSpec::cd(Tensor::full(&[1, 1], 1.0), 1).unwrap();
        let u = seq(&[1.0, -2.0, 3.0]);
        assert_eq!(causal_conv_fwd(&s, &u).unwrap(), u);
    }

    #[test]
    fn two_taps_by_hand() {
        let s = KernelSpec::cd(Tensor::full(&[1, 2], 1.0), 2).unwrap();
        let y = causal_conv_fwd(&s, &seq(&[1., 2., 3., 4.])).unwrap();
        assert_eq!(y.data(), &[1., 2., 4., 6.]);
    }

    #[test]
    fn causality() {
        let mut rng = Rng::new(4);
        let s = KernelSpec::cd(Tensor::from_fn(&[2, 3], |_| rng.normal()), 2).unwrap();
        let u = Tensor::from_fn(&[1, 12, 2], |_| rng.normal());
        let y0 = causal_conv_fwd(&s, &u).unwrap();
        let mut u2 = u.clone();
        u2.set(&[0, 7, 1], 100.0);
        let y1 = causal_conv_fwd(&s, &u2).unwrap();
        for t in 0..7 {
            for c in 0..2 {
                assert_eq!(y0.get(&[0, t, c]), y1.get(&[0, t, c]));
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let s = KernelSpec::cd(Tensor::<f64>::full(&[2, 1], 1.0), 1).unwrap();
        assert!(causal_conv_fwd(&s, &Tensor::zeros(&[1, 4, 3])).is_err());
    }

    #[test]
    fn position_gradient_refused_for_fixed_kernels() {
        let s = KernelSpec::cd(Tensor::<f64>::full(&[1, 2], 1.0), 1).unwrap();
        let u = seq(&[1., 2.]);
        assert!(causal_conv_bwd(&s, &u, &u, true).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let s = KernelSpec::learnable(
            Tensor::full(&[1, 2], 1.0),
            Tensor::from_f64(&[1, 2], &[0.3, 1.7]).unwrap(),
            3,
            0.5,
        )
        .unwrap();
        let u = seq(&[1., 2., 3., 4., 5.]);
        let g = causal_conv_bwd(&s, &u, &Tensor::zeros(u.shape()), true).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.weights.max_abs(), 0.0);
        assert_eq!(g.positions.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn impulse_weight_gradient_replicates_upstream() {
        // u = δ[t]: y[t] = k[t], so ∂L/∂w_i = grad_y[p_i].
        let s = KernelSpec::cd(Tensor::from_f64(&[1, 3], &[0.5, -1.0, 2.0]).unwrap(), 2).unwrap();
        let u = seq(&[1., 0., 0., 0., 0., 0.]);
        let gy = seq(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let g = causal_conv_bwd(&s, &u, &gy, false).unwrap();
        assert_eq!(g.weights.data(), &[0.1, 0.3, 0.5]);
    }

    fn check_learnable(rng: &mut Rng) {
        let (h, k, gamma) = (3, 2, 5);
        let s = KernelSpec::learnable(
            Tensor::from_fn(&[h, k], |_| rng.normal()),
            Tensor::from_fn(&[h, k], |_| rng.uniform(0.2, gamma as f64 - 0.2)),
            gamma,
            0.7,
        )
        .unwrap();
        let u = Tensor::from_fn(&[2, 9, h], |_| rng.normal());
        let w = Tensor::from_fn(&[2, 9, h], |_| rng.normal());
        let loss = |s: &KernelSpec<f64>, u: &Tensor<f64>| {
            causal_conv_fwd(s, u).unwrap().mul(&w).unwrap().sum()
        };
        let g = causal_conv_bwd(&s, &u, &w, true).unwrap();

        let nu = finite_diff_grad(|t| Ok(loss(&s, t)), &u, AUDIT_EPS).unwrap();
        let cu = compare_grads("u", &g.input, &nu).unwrap();
        assert!(cu.passes(1e-4), "{cu:?}");
        let nw = finite_diff_grad(
            |t| {
                let mut q = s.clone();
                q.weights = t.clone();
                Ok(loss(&q, &u))
            },
            &s.weights,
            AUDIT_EPS,
        )
        .unwrap();
        assert!(compare_grads("w", &g.weights, &nw).unwrap().passes(1e-4));
        let np = finite_diff_grad(
            |t| {
                let mut q = s.clone();
                q.positions = t.clone();
                Ok(loss(&q, &u))
            },
            &s.positions,
            AUDIT_EPS,
        )
        .unwrap();
        let cmp = compare_grads("p", g.positions.as_ref().unwrap(), &np).unwrap();
        assert!(cmp.passes(1e-4), "{cmp:?}");
    }

    #[test]
    fn learnable_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            check_learnable(&mut rng);
        }
    }

    #[test]
    fn dilated_gradients_match_finite_differences() {
        let mut rng = Rng::new(22);
        for layer in 0..20 {
            let s =
                KernelSpec::eid(Tensor::from_fn(&[2, 3], |_| rng.normal()), 1, layer % 3).unwrap();
            let u = Tensor::from_fn(&[1, 20, 2], |_| rng.normal());
            let w = Tensor::from_fn(&[1, 20, 2], |_| rng.normal());
            let g = causal_conv_bwd(&s, &u, &w, false).unwrap();
            let nw = finite_diff_grad(
                |t| {
                    let mut q = s.clone();
                    q.weights = t.clone();
                    Ok(causal_conv_fwd(&q, &u)?.mul(&w)?.sum())
                },
                &s.weights,
                AUDIT_EPS,
            )
            .unwrap();
            assert!(compare_grads("w", &g.weights, &nw).unwrap().passes(1e-4));
        }
    }

    #[test]
    fn channels_do_not_mix() {
        let mut rng = Rng::new(8);
        let s = KernelSpec::learnable(
            Tensor::from_fn(&[3, 2], |_| rng.normal()),
            Tensor::from_fn(&[3, 2], |_| rng.uniform(0.0, 4.0)),
            4,
            0.5,
        )
        .unwrap();
        let u = Tensor::from_fn(&[1, 10, 3], |_| rng.normal());
        for h1 in 0..3 {
            // upstream gradient only on channel h1
            let gy = Tensor::from_fn(&[1, 10, 3], |i| if i % 3 == h1 { 1.0 } else { 0.0 });
            let g = causal_conv_bwd(&s, &u, &gy, false).unwrap();
            for (i, v) in g.input.data().iter().enumerate() {
                if i % 3 != h1 {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn narrow_gaussian_at_integer_positions_matches_cd() {
        let mut rng = Rng::new(13);
        let w = Tensor::from_fn(&[2, 4], |_| rng.normal());
        let cd = KernelSpec::cd(w.clone(), 3).unwrap();
        let l = KernelSpec::learnable(w, cd.positions.clone(), cd.max_delay, 0.02).unwrap();
        let u = Tensor::from_fn(&[2, 30, 2], |_| rng.normal());
        let a = causal_conv_fwd(&cd, &u).unwrap();
        let b = causal_conv_fwd(&l, &u).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn symmetric_neighbourhood_gives_zero_position_gradient() {
        // tap centred at 4 on a 0..=8 kernel, constant input: contributions at
        // n = 4 ± j cancel pairwise.
        let s = KernelSpec::learnable(
            Tensor::full(&[1, 1], 1.3),
            Tensor::from_f64(&[1, 1], &[4.0]).unwrap(),
            8,
            0.5,
        )
        .unwrap();
        let u = Tensor::full(&[1, 40, 1], 2.0);
        let gy = Tensor::from_fn(&[1, 40, 1], |t| if t >= 8 { 1.0 } else { 0.0 });
        let g: ConvGrads<f64> = causal_conv_bwd(&s, &u, &gy, true).unwrap();
        assert!(g.positions.unwrap().data()[0].abs() < 1e-12);
    }
}
