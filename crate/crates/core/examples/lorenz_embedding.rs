//! Next-step prediction of one noisy Lorenz coordinate with a single-layer
//! learnable-delay model and a two-layer minGRU, then a ridge probe of the
//! unobserved coordinates and the nearest-neighbour overlap between the
//! attractor and each hidden space.
//!
//! cargo run --release --example lorenz_embedding -- --n 500 --epochs 30

use clap::Parser;
use mgrade::analysis::{collect_hidden, eval_suite, pca, EvalOptions};
use mgrade::model::{ConvConfig, ConvKind, Head, NetworkConfig, NetworkParams};
use mgrade::numcore::Rng;
use mgrade::tasks::{gen_lorenz, LorenzConfig};
use mgrade::training::{Control, TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    taps: usize,
    #[arg(long, default_value_t = 32)]
    max_delay: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.004)]
    lr: f64,
    /// Ridge penalty of the probe on the unobserved coordinates.
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
}

fn model(a: &Args, learnable: bool) -> NetworkConfig {
    NetworkConfig {
        layers: if learnable { 1 } else { 2 },
        hidden: a.hidden,
        input_dim: 1,
        output_dim: 1,
        conv: if learnable {
            ConvConfig {
                variant: ConvKind::L,
                taps: a.taps,
                max_delay: a.max_delay,
                ..Default::default()
            }
        } else {
            ConvConfig {
                variant: ConvKind::None,
                ..Default::default()
            }
        },
        decoder_bias: true,
        head: Head::RegressPerStep,
        ..Default::default()
    }
}

fn main() -> mgrade::Result<()> {
    let a = Args::parse();
    let data = gen_lorenz(&LorenzConfig {
        n: a.n,
        seed: a.seed,
        ..Default::default()
    })?;
    let split = a.n * 4 / 5;
    let (train, val) = (data.first(split), data.range(split, a.n));
    for (name, learnable) in [("mgrade-l", true), ("mingru", false)] {
        let cfg = model(&a, learnable);
        let params = NetworkParams::<f32>::init(&cfg, &mut Rng::new(a.seed))?;
        let tc = TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
            ..Default::default()
        };
        let out = Trainer::new(params, tc, &train, &val)?.run(|rec, _| {
            println!(
                "{name} epoch {:3} train {:.4} val_MASE {:.4} ({:.1}s)",
                rec.epoch, rec.train_loss, rec.val_metric, rec.seconds
            );
            Ok(Control::Continue)
        })?;
        let opts = EvalOptions {
            ridge: a.ridge,
            ..Default::default()
        };
        let r = eval_suite(&out.params, &val, Some(&train), &opts)?;
        println!(
            "{name}: val_MASE_obs {:.4} OOD_MASE_unobs {:.4} nn_overlap {:.2}%",
            r.val_mase_obs.unwrap_or(f64::NAN),
            r.ood_mase_unobs.unwrap_or(f64::NAN),
            r.nn_overlap.unwrap_or(f64::NAN)
        );
        let h = collect_hidden(&out.params, &val, 256)?;
        let rows = h.len() / a.hidden;
        let p = pca(&h.cast::<f64>().reshape(&[rows, a.hidden])?, 3)?;
        println!("{name}: top-3 explained variance {:?}", p.explained_ratio);
    }
    Ok(())
}
