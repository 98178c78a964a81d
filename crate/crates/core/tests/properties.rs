use mgrade::dcls_conv::Truncation;
use mgrade::model::{
    network_fwd, ConvConfig, ConvKind, Head, Mixer, NetworkConfig, NetworkParams, NetworkStream,
};
use mgrade::numcore::{Rng, Tensor};
use proptest::prelude::*;

fn config(
    layers: usize,
    hidden: usize,
    kind: usize,
    mixer: bool,
    taps: usize,
    head: Head,
) -> NetworkConfig {
    let variant = [ConvKind::None, ConvKind::Cd, ConvKind::Eid, ConvKind::L][kind];
    NetworkConfig {
        layers,
        hidden,
        input_dim: 2,
        output_dim: 3,
        conv: ConvConfig {
            variant,
            taps,
            dilation: 2,
            max_delay: 3 * taps,
            ..Default::default()
        },
        mixer: if mixer || variant == ConvKind::None {
            Mixer::Gru
        } else {
            Mixer::Relu
        },
        decoder_bias: true,
        head,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streaming_matches_dense(
        seed in 0u64..10_000,
        layers in 1usize..4,
        hidden in 1usize..7,
        kind in 0usize..4,
        gru in any::<bool>(),
        taps in 1usize..4,
        t in 1usize..40,
    ) {
        let cfg = config(layers, hidden, kind, gru, taps, Head::RegressPerStep);
        let mut rng = Rng::new(seed);
        let p = NetworkParams::<f64>::init(&cfg, &mut rng).unwrap();
        let u = Tensor::from_fn(&[1, t, 2], |_| rng.normal());
        let dense = network_fwd(&p, &u).unwrap();
        let mut s = NetworkStream::new(&p, Truncation::Exact).unwrap();
        for step in 0..t {
            let o = s.step(&p, &u.data()[2 * step..2 * step + 2]).unwrap();
            for (j, v) in o.output.iter().enumerate() {
                prop_assert!((v - dense.get(&[0, step, j])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn streaming_last_step_classifier(seed in 0u64..10_000, kind in 0usize..4, t in 1usize..30) {
        let cfg = config(2, 4, kind, true, 3, Head::ClassifyLast);
        let mut rng = Rng::new(seed);
        let p = NetworkParams::<f64>::init(&cfg, &mut rng).unwrap();
        let u = Tensor::from_fn(&[1, t, 2], |_| rng.normal());
        let dense = network_fwd(&p, &u).unwrap();
        let mut s = NetworkStream::new(&p, Truncation::Exact).unwrap();
        let mut last = Vec::new();
        for step in 0..t {
            last = s.step(&p, &u.data()[2 * step..2 * step + 2]).unwrap().output;
        }
        for (a, b) in last.iter().zip(dense.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn reset_stream_replays_identically(seed in 0u64..10_000, t in 1usize..20) {
        let cfg = config(2, 3, 3, true, 2, Head::RegressPerStep);
        let mut rng = Rng::new(seed);
        let p = NetworkParams::<f64>::init(&cfg, &mut rng).unwrap();
        let u: Vec<f64> = (0..2 * t).map(|_| rng.normal()).collect();
        let mut s = NetworkStream::new(&p, Truncation::Exact).unwrap();
        let run = |s: &mut NetworkStream<f64>| -> Vec<Vec<f64>> {
            u.chunks(2).map(|x| s.step(&p, x).unwrap().output).collect()
        };
        let first = run(&mut s);
        s.reset();
        prop_assert_eq!(first, run(&mut s));
    }
}
