//! The hand-built single-layer flip-flop solution on long sparse strings,
//! and the best fixed-window predictor on adversarial recall strings.
//!
//! cargo run --release --example flipflop_oracle

use mgrade::model::network_fwd;
use mgrade::tasks::flipflop::{render, set_accuracy, P_SPARSE};
use mgrade::tasks::{
    build_flipflop_oracle, fixed_context_chance_demo, gen_flipflop, FlipFlopConfig, Targets,
};

fn main() -> mgrade::Result<()> {
    let oracle = build_flipflop_oracle(20.0)?;
    let cfg = FlipFlopConfig {
        seq_len: 512,
        p_ignore: P_SPARSE,
        seed: 7,
    };
    let data = gen_flipflop(&cfg, 1000)?;
    let Targets::FlipFlop { sets, .. } = &data.targets else {
        unreachable!()
    };
    let out = network_fwd(&oracle, &data.inputs.cast::<f64>())?;
    let (set_acc, read_acc) = set_accuracy(&out, sets)?;
    println!(
        "oracle on 1000 sparse strings: set accuracy {:.4}, read accuracy {:.4}",
        set_acc, read_acc
    );
    let first: Vec<u8> = data.inputs.data()[..40 * 5]
        .chunks(5)
        .map(|c| c.iter().position(|&v| v > 0.5).unwrap() as u8)
        .collect();
    println!("first string starts: {}", render(&first));

    for context in [2, 4, 8, 12] {
        let acc = fixed_context_chance_demo(context, 10, 4000, 0)?;
        println!("window {context:>2}, recall distance 10: read accuracy {acc:.4}");
    }
    Ok(())
}
