//! Step-by-step convolution for inference with a fixed-size input buffer.

use super::kernel::{gaussian_tap, KernelSpec};
use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

/// Circular store of the last `capacity` input vectors of one layer.
///
/// Starts zeroed, which reproduces the zero left padding of the dense path.
#[derive(Debug, Clone)]
pub struct ConvRingBuffer<F: Real> {
    capacity: usize,
    channels: usize,
    data: Vec<F>,
    cursor: usize,
}

impl<F: Real> ConvRingBuffer<F> {
    pub fn new(capacity: usize, channels: usize) -> Self {
        Self {
            capacity,
            channels,
            data: vec![F::zero(); capacity * channels],
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Floats held by the buffer.
    pub fn len_floats(&self) -> usize {
        self.data.len()
    }

    /// Input seen `delay` steps ago, `1 <= delay <= capacity`.
    pub fn delayed(&self, delay: usize) -> &[F] {
        debug_assert!(delay >= 1 && delay <= self.capacity);
        let slot = (self.cursor + self.capacity - delay) % self.capacity;
        &self.data[slot * self.channels..(slot + 1) * self.channels]
    }

    pub fn push(&mut self, u_t: &[F]) {
        if self.capacity == 0 {
            return;
        }
        let slot = self.cursor;
        self.data[slot * self.channels..(slot + 1) * self.channels].copy_from_slice(u_t);
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|v| *v = F::zero());
        self.cursor = 0;
    }
}

fn check_step<F: Real>(u_t: &[F], channels: usize) -> Result<()> {
    if u_t.len() != channels {
        return Err(Error::shape("stream_step", &[u_t.len()], &[channels]));
    }
    Ok(())
}

/// Emits `y_t` for one new input `u_t` and then stores `u_t`.
///
/// Uses the full kernel over `0..=max_delay`, so the output equals the dense
/// path at the same step. The buffer must hold exactly `max_delay` entries.
pub fn stream_step<F: Real>(
    buf: &mut ConvRingBuffer<F>,
    spec: &KernelSpec<F>,
    u_t: &Tensor<F>,
) -> Result<Tensor<F>> {
    if buf.capacity() != spec.max_delay || buf.channels() != spec.channels() {
        return Err(Error::invalid(format!(
            "ring buffer holds {}x{} but the kernel needs {}x{}",
            buf.capacity(),
            buf.channels(),
            spec.max_delay,
            spec.channels()
        )));
    }
    let taps = spec.channel_taps()?;
    let y = apply_taps(&taps, buf, u_t.data())?;
    buf.push(u_t.data());
    Tensor::new(&[spec.channels()], y)
}

fn apply_taps<F: Real>(
    taps: &[Vec<(usize, F)>],
    buf: &ConvRingBuffer<F>,
    u_t: &[F],
) -> Result<Vec<F>> {
    check_step(u_t, buf.channels())?;
    let mut y = vec![F::zero(); buf.channels()];
    for (c, ct) in taps.iter().enumerate() {
        let mut acc = F::zero();
        for &(n, coef) in ct {
            acc += coef * if n == 0 { u_t[c] } else { buf.delayed(n)[c] };
        }
        y[c] = acc;
    }
    Ok(y)
}

/// How much of a Gaussian tap the streaming path evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Every grid point in `0..=max_delay`; identical to the dense path.
    Exact,
    /// Only grid points with `|n - p| <= 3 sigma`; the buffer shrinks to
    /// [`KernelSpec::effective_max_delay`].
    ThreeSigma,
}

/// A layer's streaming convolution: precomputed taps plus its ring buffer.
#[derive(Debug, Clone)]
pub struct StreamingConv<F: Real> {
    taps: Vec<Vec<(usize, F)>>,
    buffer: ConvRingBuffer<F>,
}

impl<F: Real> StreamingConv<F> {
    pub fn new(spec: &KernelSpec<F>, truncation: Truncation) -> Result<Self> {
        let (taps, capacity) = match (truncation, spec.is_learnable()) {
            (Truncation::ThreeSigma, true) => {
                let k = spec.taps();
                let reach = 3.0 * spec.sigma.f64();
                let mut taps = Vec::with_capacity(spec.channels());
                for c in 0..spec.channels() {
                    let mut dense = vec![F::zero(); spec.max_delay + 1];
                    for i in 0..k {
                        let w = spec.weights.data()[c * k + i];
                        let p = spec.positions.data()[c * k + i];
                        let lo = (p.f64() - reach).ceil().max(0.0) as usize;
                        let hi = ((p.f64() + reach).floor() as usize).min(spec.max_delay);
                        for (n, d) in dense.iter_mut().enumerate().take(hi + 1).skip(lo) {
                            *d += w * gaussian_tap(n, p, spec.sigma);
                        }
                    }
                    taps.push(
                        dense
                            .into_iter()
                            .enumerate()
                            .filter(|(_, v)| *v != F::zero())
                            .collect::<Vec<_>>(),
                    );
                }
                spec.validate()?;
                (taps, spec.effective_max_delay())
            }
            _ => (spec.channel_taps()?, spec.max_delay),
        };
        Ok(Self {
            taps,
            buffer: ConvRingBuffer::new(capacity, spec.channels()),
        })
    }

    pub fn buffer(&self) -> &ConvRingBuffer<F> {
        &self.buffer
    }

    pub fn step(&mut self, u_t: &[F]) -> Result<Vec<F>> {
        let y = apply_taps(&self.taps, &self.buffer, u_t)?;
        self.buffer.push(u_t);
        Ok(y)
    }

    pub fn reset(&mut self) {
        self.buffer.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::super::conv::causal_conv_fwd;
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn zero_delay_kernel_is_pointwise() {
        let s = KernelSpec::<f64>::cd(Tensor::from_f64(&[2, 1], &[2.0, -1.0]).unwrap(), 1).unwrap();
        let mut buf = ConvRingBuffer::new(0, 2);
        let y = stream_step(&mut buf, &s, &Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[6.0, -4.0]);
    }

    #[test]
    fn capacity_mismatch_is_rejected() {
        let s = KernelSpec::cd(Tensor::<f64>::full(&[1, 3], 1.0), 1).unwrap();
        let mut buf = ConvRingBuffer::new(1, 1);
        assert!(stream_step(&mut buf, &s, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn first_steps_see_zero_padding() {
        let s = KernelSpec::cd(Tensor::<f64>::full(&[1, 2], 1.0), 3).unwrap();
        let mut buf = ConvRingBuffer::new(3, 1);
        let out: Vec<f64> = [1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&v| {
                stream_step(&mut buf, &s, &Tensor::from_f64(&[1], &[v]).unwrap())
                    .unwrap()
                    .data()[0]
            })
            .collect();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn streaming_matches_dense_on_long_input() {
        let mut rng = Rng::new(17);
        let s = KernelSpec::learnable(
            Tensor::from_fn(&[4, 3], |_| rng.normal()),
            Tensor::from_fn(&[4, 3], |_| rng.uniform(0.0, 7.0)),
            7,
            0.5,
        )
        .unwrap();
        let u = Tensor::from_fn(&[1, 64, 4], |_| rng.normal());
        let dense = causal_conv_fwd(&s, &u).unwrap();
        let mut buf = ConvRingBuffer::new(7, 4);
        for t in 0..64 {
            let ut = u.slice(1, t..t + 1).unwrap().into_shape(&[4]).unwrap();
            let y = stream_step(&mut buf, &s, &ut).unwrap();
            for c in 0..4 {
                assert!((y.data()[c] - dense.get(&[0, t, c])).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn truncated_streaming_stays_within_tail_bound() {
        let mut rng = Rng::new(23);
        let (h, k, gamma, sigma) = (3, 2, 12, 0.5);
        let s = KernelSpec::learnable(
            Tensor::from_fn(&[h, k], |_| rng.normal()),
            Tensor::from_fn(&[h, k], |_| rng.uniform(0.0, 8.0)),
            gamma,
            sigma,
        )
        .unwrap();
        let mut sc = StreamingConv::new(&s, Truncation::ThreeSigma).unwrap();
        assert!(sc.buffer().capacity() <= gamma);
        let u = Tensor::from_fn(&[1, 50, h], |_| rng.uniform(-1.0, 1.0));
        let dense = causal_conv_fwd(&s, &u).unwrap();
        // dropped mass per channel: Σ_i |w_i| Σ_{|n-p_i| > 3σ} c[n, p_i]
        let bound: Vec<f64> = (0..h)
            .map(|c| {
                (0..k)
                    .map(|i| {
                        let (w, p) = (s.weights.get(&[c, i]), s.positions.get(&[c, i]));
                        w.abs()
                            * (0..=gamma)
                                .filter(|&n| (n as f64 - p).abs() > 3.0 * sigma)
                                .map(|n| gaussian_tap(n, p, sigma))
                                .sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        for t in 0..50 {
            let y = sc.step(&u.data()[t * h..(t + 1) * h]).unwrap();
            for c in 0..h {
                assert!((y[c] - dense.get(&[0, t, c])).abs() <= bound[c] + 1e-12);
            }
        }
    }
}
