//! Perturbative retractions of orders 1-4: sweep the step size and watch the
//! distance to the best rank-r approximation shrink as O(Δt^{order+1}).
//!
//! Run with `cargo run --release --example retraction_orders`.

use lowrank_dork::experiments::{fit_loglog_slope, logspace};
use lowrank_dork::manifold::{error_metrics, AffineTarget, Direction, LowRankState};
use lowrank_dork::matcore::{orth, Mat};
use lowrank_dork::retraction::{optimal_retract, RetractionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> lowrank_dork::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut draw = |m: usize, n: usize| Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);

    // A rank-6 state on the 80x60 manifold and a rank-20 direction, both of
    // unit Frobenius norm so step sizes read as relative perturbations.
    let (m, n, r) = (80, 60, 6);
    let u = orth(&draw(m, r))?.q;
    let mut z = draw(n, r);
    z /= z.norm();
    let x = LowRankState::new(u, z)?;
    let dir = Direction::outer_scaled(1.0, draw(m, 20), draw(n, 20));
    let dir = dir.clone().scaled(1.0 / dir.norm());

    let dts = logspace(1e-3, 1e-1, 9);
    println!("eps_pr = ||X+ - P(chi)||, the gap to the truncated SVD of the target chi\n");
    print!("{:>10}", "dt");
    for order in 1..=4 {
        print!("  {:>12}", format!("order {order}"));
    }
    println!();

    let mut slopes = Vec::new();
    for order in 1..=4usize {
        let cfg = RetractionConfig::of_order(order);
        let mut errs = Vec::new();
        for &dt in &dts {
            let out = optimal_retract(&x, &dir, dt, &cfg)?;
            let target = AffineTarget::new(x.clone(), dir.clone(), dt);
            errs.push(error_metrics(&out.state, &target, None).eps_pr);
        }
        // Points at the f64 roundoff plateau (~1e-15 here) would flatten the
        // fit, so they are excluded.
        slopes.push((order, fit_loglog_slope(&dts, &errs, 1e-14), errs));
    }

    for (i, &dt) in dts.iter().enumerate() {
        print!("{dt:>10.3e}");
        for (_, _, errs) in &slopes {
            print!("  {:>12.3e}", errs[i]);
        }
        println!();
    }
    println!();
    for (order, slope, _) in &slopes {
        println!("order {order}: fitted log-log slope {slope:.2} (expected ~{})", order + 1);
    }

    // The adaptive variant keeps corrections only while they stay in the
    // contraction regime, matching the fixed order when steps are small.
    let adaptive = RetractionConfig::of_order(4).with_adaptive_order(0.1);
    let out = optimal_retract(&x, &dir, 1e-2, &adaptive)?;
    println!("\nadaptive retraction at dt=1e-2 used order {}", out.order_used);
    Ok(())
}
