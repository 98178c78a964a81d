//! Parallel-scan and step-by-step minGRU evaluation on random shapes.
//!
//! cargo run --release --example scan_equivalence

use std::time::Instant;

use mgrade::mingru::{gru_scan, gru_sequential, GruParams};
use mgrade::numcore::{Rng, Tensor};

fn main() -> mgrade::Result<()> {
    let mut rng = Rng::new(0);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (b, t, h) = (1 + rng.below(4), 1 + rng.below(257), 1 + rng.below(16));
        let p = GruParams::<f32>::init(&mut rng, h);
        let x = Tensor::from_fn(&[b, t, h], |_| rng.normal() as f32);
        let fast = gru_scan(&p, &x, None)?;
        let slow = gru_sequential(&p, &x, None)?;
        let diff = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    println!(
        "100 shapes, max |scan - sequential| = {worst:e}, {:.2}s",
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
