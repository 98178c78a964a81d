//! Dense kernels of the three tap-spacing schemes and their receptive fields.
//!
//! cargo run --release --example dcls_kernels

use mgrade::dcls_conv::{causal_conv_fwd, receptive_field, KernelSpec};
use mgrade::numcore::Tensor;

fn show(name: &str, k: &KernelSpec<f64>) -> mgrade::Result<()> {
    let dense = k.materialize()?;
    let row: Vec<String> = dense.data()[..k.max_delay + 1]
        .iter()
        .map(|v| format!("{v:.2}"))
        .collect();
    println!(
        "{name:<12} max delay {:>2}  channel 0: [{}]",
        k.max_delay,
        row.join(" ")
    );
    Ok(())
}

fn main() -> mgrade::Result<()> {
    let w = Tensor::new(&[1, 3], vec![1.0, 0.5, 0.25])?;
    let cd = KernelSpec::cd(w.clone(), 2)?;
    show("cd d=2", &cd)?;
    let eid: Vec<KernelSpec<f64>> = (0..3)
        .map(|l| KernelSpec::eid(w.clone(), 1, l))
        .collect::<Result<_, _>>()?;
    for (l, k) in eid.iter().enumerate() {
        show(&format!("eid layer {l}"), k)?;
    }
    println!("eid stack receptive field {}", receptive_field(&eid));
    let p = Tensor::new(&[1, 3], vec![0.0, 2.5, 6.2])?;
    let l = KernelSpec::learnable(w, p, 8, 0.5)?;
    show("learnable", &l)?;
    println!("learnable effective delay {}", l.effective_max_delay());

    // An impulse reproduces the kernel.
    let mut u = Tensor::zeros(&[1, 10, 1]);
    u.set(&[0, 0, 0], 1.0);
    let y = causal_conv_fwd(&cd, &u)?;
    println!("cd impulse response {:?}", y.data());
    Ok(())
}
