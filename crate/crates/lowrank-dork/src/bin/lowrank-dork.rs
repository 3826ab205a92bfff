//! Experiment driver: one subcommand per benchmark plus a quick selftest.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when any run ends
//! in a did-not-converge outcome (its partial CSV is still written). The
//! `LOWRANK_DORK_THREADS` environment variable caps the worker-thread count.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lowrank_dork::config::RunConfig;
use lowrank_dork::experiments::{
    advdiff::run_advdiff, convergence::run_retraction_convergence, fisher_kpp::run_fisher_kpp,
    oscillator::run_oscillator, rank_discovery::run_rank_discovery, ExperimentOutput,
};
use lowrank_dork::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_DNC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lowrank-dork",
    version,
    about = "Dynamical low-rank integration of matrix ODEs: retraction studies and PDE benchmarks",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Step-size sweep of the perturbative retraction orders, plus span-only
    /// and descent-iteration comparisons
    RetractionConvergence(RunArgs),
    /// Linear oscillator bank with an analytic solution: scheme comparison
    /// table over step counts and per-order error-accumulation curves
    Oscillator(RunArgs),
    /// 2-D advection-diffusion of a Gaussian tracer: fixed ranks 5/15 against
    /// a dense reference, plus a rank-adaptive run
    Advdiff(RunArgs),
    /// Stochastic Fisher-KPP reaction-diffusion with Monte-Carlo columns:
    /// descent-iteration and rank-adaptive comparison
    FisherKpp(RunArgs),
    /// Single-target automatic rank discovery with per-iteration diagnostics
    RankDiscovery(RunArgs),
    /// Quick numerical invariant checks (factorizations, stability bounds,
    /// descent exactness, config round-trip, reproducibility)
    Selftest(SelftestArgs),
}

/// Flags mirror the config-file keys; any flag given here overrides the
/// corresponding key from `--config`.
#[derive(Args)]
struct RunArgs {
    /// Configuration file in flat `key = value` form
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Scheme to run (repeatable or comma-separated)
    #[arg(long = "scheme", alias = "schemes", value_name = "NAME", value_delimiter = ',')]
    scheme: Vec<String>,
    /// Retraction / integrator order (1-4)
    #[arg(long)]
    order: Option<usize>,
    /// Rank handling: fixed or adaptive
    #[arg(long, value_parser = ["fixed", "adaptive"])]
    rank_mode: Option<String>,
    /// Fixed rank, or the starting rank in adaptive mode
    #[arg(long)]
    rank: Option<usize>,
    /// Departure-angle threshold for rank augmentation (radians)
    #[arg(long)]
    theta_star: Option<f64>,
    /// Relative energy below which trailing directions are truncated
    #[arg(long)]
    sigma_star: Option<f64>,
    /// Rank increment per augmentation
    #[arg(long)]
    r_inc: Option<usize>,
    /// Hard rank ceiling
    #[arg(long)]
    r_max: Option<usize>,
    /// Descent iterations in fixed mode
    #[arg(long)]
    n_iters: Option<usize>,
    /// Descent iteration cap in automatic mode
    #[arg(long)]
    n_max: Option<usize>,
    /// Relative inter-iterate change tolerance for automatic descent
    #[arg(long)]
    delta_star: Option<f64>,
    /// Gram-inverse policy: none, pseudoinverse, or span-only
    #[arg(long, value_parser = ["none", "pseudoinverse", "span-only"])]
    robust_mode: Option<String>,
    /// Relative eigenvalue cutoff for the pseudoinverse
    #[arg(long)]
    rel_cut: Option<f64>,
    /// Time-step size
    #[arg(long)]
    dt: Option<f64>,
    /// Integration start time
    #[arg(long)]
    t0: Option<f64>,
    /// Integration end time
    #[arg(long)]
    t1: Option<f64>,
    /// Spatial grid points per dimension
    #[arg(long)]
    grid: Option<usize>,
    /// Monte-Carlo column count
    #[arg(long)]
    mc: Option<usize>,
    /// Number of time steps
    #[arg(long)]
    nt: Option<usize>,
    /// Diffusivity
    #[arg(long)]
    nu: Option<f64>,
    /// Relative local-error target for rank discovery
    #[arg(long)]
    eps_l_star: Option<f64>,
    /// Master seed; every random draw derives from it
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV output
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Run at the full published problem sizes instead of desk scale
    #[arg(long)]
    paper_scale: bool,
    /// Record wall time per step (off by default so outputs are byte-stable)
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    /// File config (if any) with the command-line flags layered on top.
    fn resolve(&self, experiment: &str) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let over = RunConfig {
            experiment: experiment.to_string(),
            schemes: if self.scheme.is_empty() { None } else { Some(self.scheme.clone()) },
            order: self.order,
            rank_mode: self.rank_mode.clone(),
            rank: self.rank,
            theta_star: self.theta_star,
            sigma_star: self.sigma_star,
            r_inc: self.r_inc,
            r_max: self.r_max,
            n_iters: self.n_iters,
            n_max: self.n_max,
            delta_star: self.delta_star,
            robust_mode: self.robust_mode.clone(),
            rel_cut: self.rel_cut,
            dt: self.dt,
            t0: self.t0,
            t1: self.t1,
            grid: self.grid,
            mc: self.mc,
            nt: self.nt,
            nu: self.nu,
            eps_l_star: self.eps_l_star,
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            paper_scale: self.paper_scale.then_some(true),
            timing: self.timing.then_some(true),
        };
        Ok(file.merged_with(&over))
    }
}

#[derive(Args)]
struct SelftestArgs {
    /// Master seed for the randomized checks
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(code) = apply_thread_cap() {
        return code;
    }
    match &cli.command {
        Command::RetractionConvergence(args) => {
            run(run_retraction_convergence, args, "retraction-convergence")
        }
        Command::Oscillator(args) => run(run_oscillator, args, "oscillator"),
        Command::Advdiff(args) => run(run_advdiff, args, "advdiff"),
        Command::FisherKpp(args) => run(run_fisher_kpp, args, "fisher-kpp"),
        Command::RankDiscovery(args) => run(run_rank_discovery, args, "rank-discovery"),
        Command::Selftest(args) => selftest::run(args.seed),
    }
}

/// Honor `LOWRANK_DORK_THREADS` before any parallel region spins up the
/// default global pool.
fn apply_thread_cap() -> std::result::Result<(), ExitCode> {
    let raw = match std::env::var("LOWRANK_DORK_THREADS") {
        Ok(v) => v,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => {
            eprintln!("configuration error: LOWRANK_DORK_THREADS: {e}");
            return Err(ExitCode::from(EXIT_CONFIG));
        }
    };
    let threads: usize = match raw.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => {
            eprintln!(
                "configuration error: LOWRANK_DORK_THREADS must be a positive integer, got {raw:?}"
            );
            return Err(ExitCode::from(EXIT_CONFIG));
        }
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| {
        eprintln!("failed to configure the thread pool: {e}");
        ExitCode::FAILURE
    })
}

fn run(
    driver: fn(&RunConfig) -> Result<ExperimentOutput>,
    args: &RunArgs,
    name: &str,
) -> ExitCode {
    let cfg = match args.resolve(name) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match driver(&cfg) {
        Ok(out) => {
            print!("{}", out.summary);
            for file in &out.files {
                println!("wrote {}", file.display());
            }
            if out.dnc {
                eprintln!("did not converge: a run ended with a DNC outcome; its CSV holds the partial records");
                ExitCode::from(EXIT_DNC)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Error::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(EXIT_DNC)
        }
    }
}

/// A fast subset of the library's invariants, for sanity-checking a build or
/// an unfamiliar platform without running the full test suite.
mod selftest {
    use std::process::ExitCode;

    use lowrank_dork::config::RunConfig;
    use lowrank_dork::descent::{descend_fixed, DescentConfig};
    use lowrank_dork::dork::{build_series, step_so_dork, RhsOracle};
    use lowrank_dork::manifold::{
        manifold_project, AffineTarget, Direction, LowRankState,
    };
    use lowrank_dork::matcore::{orth, svd_trunc, Mat};
    use lowrank_dork::rank_adapt::{augment, RankPolicy};
    use lowrank_dork::retraction::{optimal_retract, RetractionConfig, RobustMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    pub fn run(seed: u64) -> ExitCode {
        let mut failures = 0usize;
        let mut check = |name: &str, outcome: Result<(), String>| match outcome {
            Ok(()) => println!("selftest {name}: PASS"),
            Err(detail) => {
                failures += 1;
                println!("selftest {name}: FAIL  {detail}");
            }
        };

        check("factorizations", factorizations(seed));
        check("stability-bound", stability_bound(seed));
        check("descent-exactness", descent_exactness(seed));
        check("augment-preserves-target", augment_preserves_target(seed));
        check("series-telescoping", series_telescoping(seed));
        check("config-round-trip", config_round_trip());
        check("reproducibility", reproducibility(seed));

        if failures == 0 {
            println!("selftest: all checks passed");
            ExitCode::SUCCESS
        } else {
            println!("selftest: {failures} check(s) failed");
            ExitCode::FAILURE
        }
    }

    fn rng_mat(rng: &mut ChaCha20Rng, m: usize, n: usize) -> Mat {
        Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn random_state(rng: &mut ChaCha20Rng, m: usize, n: usize, r: usize) -> LowRankState {
        let u = orth(&rng_mat(rng, m, r)).expect("random draw is full rank").q;
        let z = rng_mat(rng, n, r);
        LowRankState::new(u, z).expect("factors valid by construction")
    }

    fn ensure(cond: bool, detail: String) -> Result<(), String> {
        if cond {
            Ok(())
        } else {
            Err(detail)
        }
    }

    /// QR orthonormality and truncated-SVD reconstruction on random input.
    fn factorizations(seed: u64) -> Result<(), String> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for trial in 0..20 {
            let a = rng_mat(&mut rng, 40, 12);
            let q = orth(&a).map_err(|e| format!("orth failed on trial {trial}: {e}"))?.q;
            let dev = (q.transpose() * &q - Mat::identity(12, 12)).norm();
            ensure(dev < 1e-12, format!("trial {trial}: orthonormality deviation {dev:.3e}"))?;

            let low = rng_mat(&mut rng, 40, 5) * rng_mat(&mut rng, 5, 30);
            let t = svd_trunc(&low, 5);
            let err = (t.reconstruct() - &low).norm() / low.norm();
            ensure(err < 1e-10, format!("trial {trial}: rank-5 SVD residual {err:.3e}"))?;
        }
        Ok(())
    }

    /// ‖X₊‖ ≤ ‖χ‖(1 + 1e-12) across orders and robust modes (a reduced draw
    /// count; the full run lives in the acceptance suite).
    fn stability_bound(seed: u64) -> Result<(), String> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
        for trial in 0..50 {
            let x = random_state(&mut rng, 24, 18, 4);
            let dir = Direction::dense(rng_mat(&mut rng, 24, 18));
            let dt = 10f64.powf(rng.gen_range(-3.0..0.0));
            let target = AffineTarget::new(x.clone(), dir.clone(), dt);
            let chi_norm = target.chi_norm();
            for order in 1..=4usize {
                for robust in [RobustMode::None, RobustMode::pseudoinverse(), RobustMode::SpanOnly]
                {
                    if robust == RobustMode::SpanOnly && order != 1 {
                        continue;
                    }
                    let cfg = RetractionConfig { order, robust, adapt_tol: None };
                    let out = optimal_retract(&x, &dir, dt, &cfg)
                        .map_err(|e| format!("trial {trial} order {order}: {e}"))?;
                    let bound = chi_norm * (1.0 + 1e-12);
                    ensure(
                        out.state.norm() <= bound,
                        format!(
                            "trial {trial} order {order} {robust:?}: ‖X₊‖ {:.6e} > {bound:.6e}",
                            out.state.norm()
                        ),
                    )?;
                }
            }
        }
        Ok(())
    }

    /// A target already on the manifold is recovered to 1e-12 within two
    /// descent iterations.
    fn descent_exactness(seed: u64) -> Result<(), String> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(2));
        let x = random_state(&mut rng, 30, 20, 4);
        let chi = manifold_project(&rng_mat(&mut rng, 30, 20), 4).reconstruct();
        let dt = 0.25;
        let dir = Direction::dense((&chi - x.reconstruct()).scale(1.0 / dt));
        let target = AffineTarget::new(x.clone(), dir, dt);
        let cfg = DescentConfig::fixed(2, RetractionConfig::of_order(1));
        let out = descend_fixed(&x, &target, &cfg).map_err(|e| e.to_string())?;
        let resid = (out.reconstruct() - &chi).norm() / chi.norm();
        ensure(resid <= 1e-12, format!("residual {resid:.3e} after 2 iterations"))
    }

    /// Rank augmentation keeps the affine target χ numerically invariant.
    fn augment_preserves_target(seed: u64) -> Result<(), String> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(3));
        let x = random_state(&mut rng, 28, 16, 3);
        let dir = Direction::dense(rng_mat(&mut rng, 28, 16));
        let dt = 0.1;
        let policy = RankPolicy { r_inc: 2, r_max: 10, seed, ..RankPolicy::default() };
        let aug = augment(&x, &dir, dt, &policy);
        ensure(aug.added > 0, "no columns were added".into())?;
        let before = x.reconstruct() + dir.materialize().scale(dt);
        let after = aug.state.reconstruct() + aug.direction.materialize().scale(dt);
        let drift = (after - &before).norm() / before.norm();
        ensure(drift < 1e-12, format!("target drifted by {drift:.3e}"))
    }

    /// Partial sums of the direction series telescope to the stage averages;
    /// a constant right-hand side kills every increment above the first.
    fn series_telescoping(seed: u64) -> Result<(), String> {
        struct Constant {
            c: Mat,
        }
        impl RhsOracle for Constant {
            fn shape(&self) -> (usize, usize) {
                self.c.shape()
            }
            fn eval_dense(&self, _x: &Mat, _t: f64) -> Mat {
                self.c.clone()
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(4));
        let rhs = Constant { c: rng_mat(&mut rng, 20, 14) };
        let x = random_state(&mut rng, 20, 14, 3);
        let series = build_series(&rhs, &x, 0.0, 0.1, 4).map_err(|e| e.to_string())?;
        for j in 2..=4 {
            let extra = series.increments()[j - 1].materialize().norm();
            ensure(
                extra < 1e-12 * rhs.c.norm(),
                format!("increment {j} should vanish, has norm {extra:.3e}"),
            )?;
        }
        let next = step_so_dork(&x, &rhs, 0.0, 0.1, 2, RobustMode::pseudoinverse())
            .map_err(|e| e.to_string())?;
        ensure(next.is_finite(), "so-dork step produced non-finite state".into())
    }

    /// dump ∘ parse is the identity on canonical text.
    fn config_round_trip() -> Result<(), String> {
        let text = "dt = 0.002\nnt = 50\nschemes = so-dork,gd-dork\nseed = 7\ntiming = false\n";
        let cfg = RunConfig::parse(text).map_err(|e| e.to_string())?;
        let dumped = cfg.dump();
        let reparsed = RunConfig::parse(&dumped).map_err(|e| e.to_string())?;
        ensure(
            reparsed == cfg && dumped.contains("schemes = so-dork,gd-dork"),
            format!("round trip changed the config:\n{dumped}"),
        )
    }

    /// The same seed must reproduce the same retraction bit-for-bit.
    fn reproducibility(seed: u64) -> Result<(), String> {
        let run = || {
            let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(5));
            let x = random_state(&mut rng, 26, 17, 4);
            let dir = Direction::dense(rng_mat(&mut rng, 26, 17));
            optimal_retract(&x, &dir, 0.05, &RetractionConfig::of_order(3))
                .map(|r| (r.state.u().clone(), r.state.z().clone()))
        };
        let a = run().map_err(|e| e.to_string())?;
        let b = run().map_err(|e| e.to_string())?;
        ensure(a == b, "two identical runs differed".into())
    }
}
