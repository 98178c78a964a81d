//! Train a single-layer learnable-delay model on dense flip-flop strings and
//! track out-of-distribution accuracy on sparse ones.
//!
//! cargo run --release --example train_flipflop -- --n 2000 --epochs 10

use clap::Parser;
use mgrade::model::{ConvConfig, ConvKind, Head, NetworkConfig, NetworkParams};
use mgrade::numcore::Rng;
use mgrade::tasks::flipflop::{ALPHABET, P_DENSE, P_SPARSE};
use mgrade::tasks::{gen_flipflop, FlipFlopConfig};
use mgrade::training::{evaluate, Control, LossKind, TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 512)]
    seq_len: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    max_delay: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop once OOD set accuracy reaches this.
    #[arg(long, default_value_t = 1.0)]
    target: f64,
}

fn main() -> mgrade::Result<()> {
    let a = Args::parse();
    let ff = |p_ignore, seed| FlipFlopConfig {
        seq_len: a.seq_len,
        p_ignore,
        seed,
    };
    let train = gen_flipflop(&ff(P_DENSE, a.seed), a.n)?;
    let val = gen_flipflop(&ff(P_DENSE, a.seed + 1000), a.n_test)?;
    let ood = gen_flipflop(&ff(P_SPARSE, a.seed + 2000), a.n_test)?;
    let cfg = NetworkConfig {
        layers: 1,
        hidden: a.hidden,
        input_dim: ALPHABET,
        output_dim: ALPHABET,
        conv: ConvConfig {
            variant: ConvKind::L,
            taps: 2,
            max_delay: a.max_delay,
            ..Default::default()
        },
        head: Head::RegressPerStep,
        ..Default::default()
    };
    let params = NetworkParams::<f32>::init(&cfg, &mut Rng::new(a.seed))?;
    let tc = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..Default::default()
    };
    let out = Trainer::new(params, tc, &train, &val)?.run(|rec, p| {
        let ev = evaluate(p, &ood, LossKind::Mse, 256)?;
        println!(
            "epoch {:3} train {:.5} val_acc {:.5} ood_acc {:.5} ood_read {:.4} ({:.1}s)",
            rec.epoch,
            rec.train_loss,
            rec.val_metric,
            ev.metric,
            ev.read_accuracy.unwrap_or(f64::NAN),
            rec.seconds
        );
        Ok(if ev.metric >= a.target {
            Control::Stop
        } else {
            Control::Continue
        })
    })?;
    println!(
        "best val accuracy {:.5} at epoch {}",
        out.best_metric, out.best_epoch
    );
    Ok(())
}
