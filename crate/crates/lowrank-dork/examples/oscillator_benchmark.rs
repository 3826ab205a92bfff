//! The linear-oscillator benchmark through its experiment driver: a bank of
//! 26 harmonic oscillators with an analytic solution, integrated at rank 16
//! on a spectrum whose trailing singular values sit nine decades down.
//!
//! This runs one row of the full comparison table (the default run sweeps
//! three step counts and emits per-order accumulation curves; see the
//! `oscillator` subcommand of the CLI for that).
//!
//! Run with `cargo run --release --example oscillator_benchmark`.

use lowrank_dork::config::RunConfig;
use lowrank_dork::experiments::oscillator::run_oscillator;

fn main() -> lowrank_dork::Result<()> {
    let cfg = RunConfig {
        experiment: "oscillator".into(),
        nt: Some(134),
        out_dir: Some("runs/examples/oscillator".into()),
        ..Default::default()
    };
    let out = run_oscillator(&cfg)?;
    print!("{}", out.summary);
    println!("\nper-step error histories:");
    for f in &out.files {
        println!("  {}", f.display());
    }
    Ok(())
}
