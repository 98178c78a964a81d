//! Step-at-a-time inference with ring buffers, checked against the dense
//! forward pass.
//!
//! cargo run --release --example streaming_inference

use mgrade::dcls_conv::Truncation;
use mgrade::memplan::{footprint_of, MemoryOptions};
use mgrade::model::{
    network_fwd, ConvConfig, ConvKind, Head, NetworkConfig, NetworkParams, NetworkStream,
};
use mgrade::numcore::{Rng, Tensor};

fn main() -> mgrade::Result<()> {
    let cfg = NetworkConfig {
        layers: 3,
        hidden: 16,
        input_dim: 1,
        output_dim: 2,
        conv: ConvConfig {
            variant: ConvKind::L,
            taps: 4,
            max_delay: 24,
            ..Default::default()
        },
        head: Head::RegressPerStep,
        ..Default::default()
    };
    let mut rng = Rng::new(1);
    let params = NetworkParams::<f64>::init(&cfg, &mut rng)?;
    let t = 300;
    let u = Tensor::from_fn(&[1, t, 1], |_| rng.normal());
    let dense = network_fwd(&params, &u)?;

    for trunc in [Truncation::Exact, Truncation::ThreeSigma] {
        let mut s = NetworkStream::new(&params, trunc)?;
        let mut worst = 0.0f64;
        for step in 0..t {
            let o = s.step(&params, &u.data()[step..step + 1])?;
            for (j, v) in o.output.iter().enumerate() {
                worst = worst.max((v - dense.get(&[0, step, j])).abs());
            }
        }
        println!(
            "{trunc:?}: buffered floats {}, state floats {}, max |stream - dense| {worst:.2e}",
            s.buffer_floats(),
            s.state_floats()
        );
    }
    let r = footprint_of(&params, &MemoryOptions::default())?;
    println!(
        "planned buffer {} floats over delays {:?}",
        r.buffer_mem, r.delays
    );
    Ok(())
}
