//! Stochastic Fisher-KPP fronts with Monte-Carlo columns: fixed-rank descent
//! variants against the full Monte-Carlo reference, plus a rank-adaptive run
//! that tracks the fronts' growing then saturating rank.
//!
//! Reduced size for a quick demo (the CLI's `fisher-kpp` subcommand runs the
//! full benchmark: 200 grid points, 2001 time points, 100 columns).
//!
//! Run with `cargo run --release --example fisher_kpp_benchmark`.

use lowrank_dork::config::RunConfig;
use lowrank_dork::experiments::fisher_kpp::run_fisher_kpp;

fn main() -> lowrank_dork::Result<()> {
    let cfg = RunConfig {
        experiment: "fisher-kpp".into(),
        grid: Some(120),
        nt: Some(801),
        mc: Some(40),
        out_dir: Some("runs/examples/fisher-kpp".into()),
        ..Default::default()
    };
    let out = run_fisher_kpp(&cfg)?;
    print!("{}", out.summary);
    println!("\nper-step error histories:");
    for f in &out.files {
        println!("  {}", f.display());
    }
    Ok(())
}
