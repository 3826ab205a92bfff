//! Advection-diffusion of a Gaussian tracer in a steady 2-D velocity field,
//! integrated at fixed rank 5 with two schemes and compared against a dense
//! Heun reference. A reduced 64x64 grid keeps the example quick; the CLI's
//! `advdiff` subcommand runs the full 128x128 comparison table.
//!
//! Run with `cargo run --release --example advdiff_benchmark`.

use lowrank_dork::config::RunConfig;
use lowrank_dork::experiments::advdiff::run_advdiff;

fn main() -> lowrank_dork::Result<()> {
    let cfg = RunConfig {
        experiment: "advdiff".into(),
        grid: Some(64),
        rank: Some(5),
        schemes: Some(vec!["so-dork".into(), "prk".into()]),
        out_dir: Some("runs/examples/advdiff".into()),
        ..Default::default()
    };
    let out = run_advdiff(&cfg)?;
    print!("{}", out.summary);
    println!("\nper-step error histories:");
    for f in &out.files {
        println!("  {}", f.display());
    }
    Ok(())
}
