//! Pixel-by-pixel MNIST with the small constant-dilation model.
//!
//! cargo run --release --example smnist -- --data data/mnist-subset

use std::path::PathBuf;

use clap::Parser;
use mgrade::memplan::preset;
use mgrade::model::{Head, NetworkParams};
use mgrade::numcore::Rng;
use mgrade::tasks::{load_images, ImageSource, Split};
use mgrade::training::{evaluate, Control, LossKind, TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "data/mnist-subset")]
    data: PathBuf,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 1000)]
    val: usize,
    #[arg(long, default_value_t = 4000)]
    test: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.004)]
    lr: f64,
    /// Warmup as a fraction of the epochs.
    #[arg(long, default_value_t = 0.5)]
    warmup: f64,
    /// Read the final step instead of averaging the last layer over time.
    #[arg(long)]
    last_step: bool,
}

fn main() -> mgrade::Result<()> {
    let a = Args::parse();
    let all = load_images(ImageSource::Smnist, &a.data, None)?;
    let (train, val, test) = Split {
        train: a.train,
        val: a.val,
        test: a.test,
    }
    .apply(&all)?;
    let mut cfg = preset("smnist-mgrade-cd").expect("known preset");
    cfg.head = if a.last_step {
        Head::ClassifyLast
    } else {
        Head::ClassifyMean
    };
    let params = NetworkParams::<f32>::init(&cfg, &mut Rng::new(a.seed))?;
    println!(
        "{} parameters, sequence length {}",
        params.param_count(),
        train.seq_len()
    );
    let tc = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        batch_size: a.batch,
        lr: a.lr,
        warmup: a.warmup,
        ..Default::default()
    };
    let out = Trainer::new(params, tc, &train, &val)?.run(|rec, _| {
        println!(
            "epoch {:2} train {:.4} val_acc {:.4} ({:.1}s)",
            rec.epoch, rec.train_loss, rec.val_metric, rec.seconds
        );
        Ok(Control::Continue)
    })?;
    let ev = evaluate(&out.best, &test, LossKind::Ce, 256)?;
    println!(
        "test accuracy {:.4} (best val epoch {})",
        ev.metric, out.best_epoch
    );
    Ok(())
}
