//! Parameter and buffer memory of the reference topologies.
//!
//! cargo run --release --example memory_planner

use mgrade::memplan::{base_kernel_growth, footprint, preset, MemoryOptions, PRESETS};

fn main() -> mgrade::Result<()> {
    let opts = MemoryOptions {
        bytes_per_float: Some(4),
        optimizer_state: false,
    };
    println!(
        "{:<26} {:>8} {:>8} {:>8} {:>9}",
        "preset", "params", "buffer", "total", "KiB f32"
    );
    for name in PRESETS {
        let r = footprint(&preset(name).expect("listed preset"), None, &opts)?;
        let kib = r.bytes.as_ref().map_or(0.0, |b| b.total as f64 / 1024.0);
        let flag = if r.flags.is_empty() { "" } else { "  *" };
        println!(
            "{name:<26} {:>8} {:>8} {:>8} {kib:>9.1}{flag}",
            r.param_mem, r.buffer_mem, r.total_mem
        );
    }
    println!("* exponential dilation, see report flags");

    let base = preset("scifar-tcn-eid").expect("listed preset");
    let (dp, dt) = base_kernel_growth(&base, 16, 64)?;
    println!(
        "TCN base kernel 16 -> 64: params {:+.1}%, total {:+.1}%",
        100.0 * dp,
        100.0 * dt
    );
    Ok(())
}
