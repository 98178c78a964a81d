//! Minimal gated recurrence `h_t = (1 - z_t) h_{t-1} + z_t h~_t` with
//! `z_t = sigmoid(W_z x_t + b_z)` and a linear candidate `h~_t = W_h x_t + b_h`.
//!
//! Both execution modes carry the state in `f64` regardless of the tensor
//! precision, so the scan and the sequential loop agree to rounding of the
//! final cast.

mod scan;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::LinearParams;
use crate::numcore::{Real, Rng, Tensor};

pub use scan::{combine, inclusive_scan, ScanElement};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<F: Real> {
    /// `W_z`, `b_z`
    pub gate: LinearParams<F>,
    /// `W_h`, `b_h`
    pub cand: LinearParams<F>,
}

pub fn gru_param_count(h: usize) -> usize {
    2 * h * h + 2 * h
}

impl<F: Real> GruParams<F> {
    pub fn init(rng: &mut Rng, h: usize) -> Self {
        Self {
            gate: LinearParams::init(rng, h, h, true),
            cand: LinearParams::init(rng, h, h, true),
        }
    }

    pub fn zeros(h: usize) -> Self {
        Self {
            gate: LinearParams::zeros(h, h, true),
            cand: LinearParams::zeros(h, h, true),
        }
    }

    pub fn width(&self) -> usize {
        self.gate.in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.gate.param_count() + self.cand.param_count()
    }
}

/// Gate and candidate for every step: `(z, h~)`, both shaped like `x`.
pub fn gru_gates<F: Real>(p: &GruParams<F>, x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    if x.rank() == 0 || x.last_dim() != p.width() {
        return Err(Error::shape("gru_gates", x.shape(), p.gate.weight.shape()));
    }
    let z = p.gate.forward(x)?.sigmoid();
    let c = p.cand.forward(x)?;
    Ok((z, c))
}

fn check_h0<F: Real>(x: &Tensor<F>, h0: Option<&Tensor<F>>) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::invalid(format!(
            "recurrence input must be (B, T, H), got {:?}",
            x.shape()
        )));
    }
    let (b, t, h) = (x.dim(0), x.dim(1), x.dim(2));
    if let Some(h0) = h0 {
        if h0.shape() != [b, h] {
            return Err(Error::shape("gru h0", &[b, h], h0.shape()));
        }
    }
    Ok((b, t, h))
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct GruCache<F: Real> {
    pub z: Tensor<F>,
    pub cand: Tensor<F>,
    /// `(B, T, H)` outputs.
    pub h: Tensor<F>,
    /// `(B, H)`
    pub h0: Tensor<F>,
}

/// One step of the recurrence on a single stream; `h` is updated in place.
///
/// The state is exactly `H` floats.
pub fn gru_step<F: Real>(p: &GruParams<F>, x_t: &[F], h: &mut [F]) -> Result<()> {
    let width = p.width();
    if x_t.len() != width || h.len() != width {
        return Err(Error::shape(
            "gru_step",
            &[x_t.len(), h.len()],
            &[width, width],
        ));
    }
    let xt = Tensor::new(&[width], x_t.to_vec())?;
    let (z, c) = gru_gates(p, &xt)?;
    for i in 0..width {
        let (zi, ci, hi) = (z.data()[i].f64(), c.data()[i].f64(), h[i].f64());
        h[i] = F::of((1.0 - zi) * hi + zi * ci);
    }
    Ok(())
}

/// Sequential recurrence from precomputed gates.
pub fn recur_sequential<F: Real>(
    z: &Tensor<F>,
    cand: &Tensor<F>,
    h0: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (b, t, h) = check_h0(z, Some(h0))?;
    if cand.shape() != z.shape() {
        return Err(Error::shape("gru recurrence", z.shape(), cand.shape()));
    }
    let mut out = Tensor::zeros(z.shape());
    if b * t * h == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(t * h)
        .enumerate()
        .for_each(|(bi, ob)| {
            let mut state: Vec<f64> = h0.data()[bi * h..(bi + 1) * h]
                .iter()
                .map(|v| v.f64())
                .collect();
            let base = bi * t * h;
            for ti in 0..t {
                for c in 0..h {
                    let i = base + ti * h + c;
                    let zz = z.data()[i].f64();
                    state[c] = (1.0 - zz) * state[c] + zz * cand.data()[i].f64();
                    ob[ti * h + c] = F::of(state[c]);
                }
            }
        });
    Ok(out)
}

/// Same recurrence evaluated as an inclusive prefix scan over time.
pub fn recur_scan<F: Real>(z: &Tensor<F>, cand: &Tensor<F>, h0: &Tensor<F>) -> Result<Tensor<F>> {
    let (b, t, h) = check_h0(z, Some(h0))?;
    if cand.shape() != z.shape() {
        return Err(Error::shape("gru recurrence", z.shape(), cand.shape()));
    }
    let mut out = Tensor::zeros(z.shape());
    if b * t * h == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(t * h)
        .enumerate()
        .for_each(|(bi, ob)| {
            let base = bi * t * h;
            let mut elems: Vec<ScanElement> = Vec::with_capacity(t * h);
            for i in base..base + t * h {
                let zz = z.data()[i].f64();
                elems.push(ScanElement {
                    a: 1.0 - zz,
                    b: zz * cand.data()[i].f64(),
                });
            }
            inclusive_scan(&mut elems, h);
            for ti in 0..t {
                for c in 0..h {
                    let e = elems[ti * h + c];
                    ob[ti * h + c] = F::of(e.a * h0.data()[bi * h + c].f64() + e.b);
                }
            }
        });
    Ok(out)
}

fn zero_h0<F: Real>(x: &Tensor<F>, h0: Option<&Tensor<F>>) -> Result<Tensor<F>> {
    let (b, _, h) = check_h0(x, h0)?;
    Ok(h0.cloned().unwrap_or_else(|| Tensor::zeros(&[b, h])))
}

/// Step-by-step evaluation over `x: (B, T, H)`; `h0` defaults to zeros.
pub fn gru_sequential<F: Real>(
    p: &GruParams<F>,
    x: &Tensor<F>,
    h0: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let h0 = zero_h0(x, h0)?;
    let (z, c) = gru_gates(p, x)?;
    recur_sequential(&z, &c, &h0)
}

/// Parallel-scan evaluation; same result as [`gru_sequential`].
pub fn gru_scan<F: Real>(
    p: &GruParams<F>,
    x: &Tensor<F>,
    h0: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    Ok(gru_forward(p, x, h0)?.0)
}

/// Scan forward that also returns the cache for [`gru_bwd`].
pub fn gru_forward<F: Real>(
    p: &GruParams<F>,
    x: &Tensor<F>,
    h0: Option<&Tensor<F>>,
) -> Result<(Tensor<F>, GruCache<F>)> {
    let h0 = zero_h0(x, h0)?;
    let (z, cand) = gru_gates(p, x)?;
    let h = recur_scan(&z, &cand, &h0)?.check_finite("gru_scan")?;
    Ok((h.clone(), GruCache { z, cand, h, h0 }))
}

#[derive(Debug, Clone)]
pub struct GruGrads<F: Real> {
    pub params: GruParams<F>,
    pub x: Tensor<F>,
    pub h0: Tensor<F>,
}

/// Reverse-mode through the recurrence.
///
/// With `λ_t = ∂L/∂h_t` (total), `λ_{t-1} = grad_h_{t-1} + λ_t (1 - z_t)`,
/// `∂L/∂z_t = λ_t (h~_t - h_{t-1})`, `∂L/∂h~_t = λ_t z_t`.
pub fn gru_bwd<F: Real>(
    p: &GruParams<F>,
    x: &Tensor<F>,
    cache: &GruCache<F>,
    grad_h: &Tensor<F>,
) -> Result<GruGrads<F>> {
    let (b, t, h) = check_h0(x, Some(&cache.h0))?;
    if grad_h.shape() != x.shape() || cache.h.shape() != x.shape() {
        return Err(Error::shape("gru_bwd", x.shape(), grad_h.shape()));
    }
    let mut g_zpre = Tensor::zeros(x.shape());
    let mut g_cand = Tensor::zeros(x.shape());
    let mut g_h0 = Tensor::zeros(&[b, h]);
    if b * t * h == 0 {
        let (gate, cand) = (p.gate.zeros_like(), p.cand.zeros_like());
        return Ok(GruGrads {
            params: GruParams { gate, cand },
            x: Tensor::zeros(x.shape()),
            h0: g_h0,
        });
    }
    g_zpre
        .data_mut()
        .par_chunks_mut(t * h)
        .zip(g_cand.data_mut().par_chunks_mut(t * h))
        .zip(g_h0.data_mut().par_chunks_mut(h))
        .enumerate()
        .for_each(|(bi, ((gz, gc), gh0))| {
            let base = bi * t * h;
            let mut lam = vec![0.0f64; h];
            for ti in (0..t).rev() {
                for c in 0..h {
                    let i = base + ti * h + c;
                    lam[c] += grad_h.data()[i].f64();
                    let zz = cache.z.data()[i].f64();
                    let prev = if ti == 0 {
                        cache.h0.data()[bi * h + c].f64()
                    } else {
                        cache.h.data()[i - h].f64()
                    };
                    let dz = lam[c] * (cache.cand.data()[i].f64() - prev);
                    gz[ti * h + c] = F::of(dz * zz * (1.0 - zz));
                    gc[ti * h + c] = F::of(lam[c] * zz);
                    lam[c] *= 1.0 - zz;
                }
            }
            for c in 0..h {
                gh0[c] = F::of(lam[c]);
            }
        });
    let (gate, gx1) = p.gate.backward(x, &g_zpre)?;
    let (cand, gx2) = p.cand.backward(x, &g_cand)?;
    Ok(GruGrads {
        params: GruParams { gate, cand },
        x: gx1.add(&gx2)?,
        h0: g_h0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{compare_grads, finite_diff_grad, sigmoid, AUDIT_EPS};

    fn scalar_params(wz: f64, bz: f64, wh: f64, bh: f64) -> GruParams<f64> {
        let lin = |w: f64, b: f64| {
            LinearParams::new(
                Tensor::from_f64(&[1, 1], &[w]).unwrap(),
                Some(Tensor::from_f64(&[1], &[b]).unwrap()),
            )
            .unwrap()
        };
        GruParams {
            gate: lin(wz, bz),
            cand: lin(wh, bh),
        }
    }

    #[test]
    fn param_count() {
        for h in 1..20 {
            assert_eq!(GruParams::<f32>::zeros(h).param_count(), gru_param_count(h));
        }
    }

    #[test]
    fn zero_gate_weights_give_half() {
        let p = GruParams::<f64>::zeros(3);
        let (z, _) = gru_gates(&p, &Tensor::full(&[1, 2, 3], 4.0)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_recurrence() {
        // z = 0.5, h~ = 1
        let p = scalar_params(0.0, 0.0, 0.0, 1.0);
        let x = Tensor::zeros(&[1, 2, 1]);
        assert_eq!(gru_sequential(&p, &x, None).unwrap().data(), &[0.5, 0.75]);
        assert_eq!(gru_scan(&p, &x, None).unwrap().data(), &[0.5, 0.75]);
    }

    #[test]
    fn open_gate_copies_candidate() {
        let p = scalar_params(0.0, 60.0, 2.0, 0.0);
        let x = Tensor::from_f64(&[1, 3, 1], &[1.0, -1.0, 0.5]).unwrap();
        let h0 = Tensor::from_f64(&[1, 1], &[9.0]).unwrap();
        let h = gru_sequential(&p, &x, Some(&h0)).unwrap();
        for (a, b) in h.data().iter().zip([2.0, -2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_gate_holds_state() {
        let p = scalar_params(0.0, -60.0, 2.0, 0.0);
        let x = Tensor::from_f64(&[1, 3, 1], &[1.0, -1.0, 0.5]).unwrap();
        let h0 = Tensor::from_f64(&[1, 1], &[9.0]).unwrap();
        let h = gru_scan(&p, &x, Some(&h0)).unwrap();
        assert!(h.data().iter().all(|v| (v - 9.0).abs() < 1e-12));
    }

    #[test]
    fn scan_equals_sequential_f64() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let p = GruParams::<f64>::init(&mut rng, 5);
            let x = Tensor::from_fn(&[2, 33, 5], |_| rng.normal());
            let h0 = Tensor::from_fn(&[2, 5], |_| rng.normal());
            let a = gru_sequential(&p, &x, Some(&h0)).unwrap();
            let b = gru_scan(&p, &x, Some(&h0)).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn scan_equals_sequential_f32() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let p = GruParams::<f32>::init(&mut rng, 5);
            let x = Tensor::from_fn(&[2, 33, 5], |_| rng.normal() as f32);
            let a = gru_sequential(&p, &x, None).unwrap();
            let b = gru_scan(&p, &x, None).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn single_step_scan() {
        let p = scalar_params(1.0, 0.0, 1.0, 0.0);
        let x = Tensor::from_f64(&[1, 1, 1], &[2.0]).unwrap();
        let h = gru_scan(&p, &x, None).unwrap();
        assert!((h.data()[0] - sigmoid(2.0) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn streaming_step_matches_sequence() {
        let mut rng = Rng::new(8);
        let p = GruParams::<f64>::init(&mut rng, 4);
        let x = Tensor::from_fn(&[1, 10, 4], |_| rng.normal());
        let full = gru_sequential(&p, &x, None).unwrap();
        let mut state = vec![0.0; 4];
        for t in 0..10 {
            gru_step(&p, &x.data()[t * 4..(t + 1) * 4], &mut state).unwrap();
            assert_eq!(&state[..], &full.data()[t * 4..(t + 1) * 4]);
        }
    }

    #[test]
    fn state_is_convex_combination() {
        let mut rng = Rng::new(9);
        let p = GruParams::<f64>::init(&mut rng, 6);
        let x = Tensor::from_fn(&[3, 40, 6], |_| rng.uniform(-1.0, 1.0));
        let h0 = Tensor::from_fn(&[3, 6], |_| rng.uniform(-2.0, 2.0));
        let (_, cand) = gru_gates(&p, &x).unwrap();
        let h = gru_scan(&p, &x, Some(&h0)).unwrap();
        for bi in 0..3 {
            for c in 0..6 {
                let mut bound = h0.get(&[bi, c]).abs();
                for t in 0..40 {
                    bound = bound.max(cand.get(&[bi, t, c]).abs());
                    assert!(h.get(&[bi, t, c]).abs() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn open_gate_decouples_initial_state() {
        let p = scalar_params(0.0, 60.0, 1.0, 0.0);
        let x = Tensor::from_f64(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, cache) = gru_forward(&p, &x, None).unwrap();
        let g = gru_bwd(&p, &x, &cache, &Tensor::full(&[1, 4, 1], 1.0)).unwrap();
        assert!(g.h0.data()[0].abs() < 1e-20);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = Rng::new(2);
        let p = GruParams::<f64>::init(&mut rng, 3);
        let x = Tensor::from_fn(&[1, 4, 3], |_| rng.normal());
        let (_, cache) = gru_forward(&p, &x, None).unwrap();
        let g = gru_bwd(&p, &x, &cache, &Tensor::zeros(x.shape())).unwrap();
        assert_eq!(g.x.max_abs(), 0.0);
        assert_eq!(g.params.gate.weight.max_abs(), 0.0);
        assert_eq!(g.h0.max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let p = GruParams::<f64>::init(&mut rng, 3);
            let x = Tensor::from_fn(&[1, 4, 3], |_| rng.normal());
            let h0 = Tensor::from_fn(&[1, 3], |_| rng.normal());
            let w = Tensor::from_fn(&[1, 4, 3], |_| rng.normal());
            let loss = |q: &GruParams<f64>, x: &Tensor<f64>, h0: &Tensor<f64>| {
                gru_scan(q, x, Some(h0)).unwrap().mul(&w).unwrap().sum()
            };
            let (_, cache) = gru_forward(&p, &x, Some(&h0)).unwrap();
            let g = gru_bwd(&p, &x, &cache, &w).unwrap();

            let check = |name: &str, a: &Tensor<f64>, n: Tensor<f64>| {
                let c = compare_grads(name, a, &n).unwrap();
                assert!(c.passes(1e-4), "{c:?}");
            };
            check(
                "x",
                &g.x,
                finite_diff_grad(|t| Ok(loss(&p, t, &h0)), &x, AUDIT_EPS).unwrap(),
            );
            check(
                "h0",
                &g.h0,
                finite_diff_grad(|t| Ok(loss(&p, &x, t)), &h0, AUDIT_EPS).unwrap(),
            );
            let fd = |set: fn(&mut GruParams<f64>, &Tensor<f64>), at: &Tensor<f64>| {
                finite_diff_grad(
                    |t| {
                        let mut q = p.clone();
                        set(&mut q, t);
                        Ok(loss(&q, &x, &h0))
                    },
                    at,
                    AUDIT_EPS,
                )
                .unwrap()
            };
            let gp = &g.params;
            check(
                "W_z",
                &gp.gate.weight,
                fd(|q, t| q.gate.weight = t.clone(), &p.gate.weight),
            );
            check(
                "b_z",
                gp.gate.bias.as_ref().unwrap(),
                fd(
                    |q, t| q.gate.bias = Some(t.clone()),
                    p.gate.bias.as_ref().unwrap(),
                ),
            );
            check(
                "W_h",
                &gp.cand.weight,
                fd(|q, t| q.cand.weight = t.clone(), &p.cand.weight),
            );
            check(
                "b_h",
                gp.cand.bias.as_ref().unwrap(),
                fd(
                    |q, t| q.cand.bias = Some(t.clone()),
                    p.cand.bias.as_ref().unwrap(),
                ),
            );
        }
    }
}
