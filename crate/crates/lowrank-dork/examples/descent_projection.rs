//! Gradient-descent retraction: re-applying a cheap first-order retraction to
//! the residual toward a fixed target contracts geometrically onto the best
//! rank-r approximation (the truncated SVD).
//!
//! Run with `cargo run --release --example descent_projection`.

use lowrank_dork::descent::{descend_auto, descend_fixed, DescentConfig};
use lowrank_dork::manifold::{manifold_project, AffineTarget, Direction, LowRankState};
use lowrank_dork::matcore::{orth, Mat};
use lowrank_dork::retraction::RetractionConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> lowrank_dork::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut draw = |m: usize, n: usize| Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);

    let (m, n, r) = (60, 45, 5);
    let u = orth(&draw(m, r))?.q;
    let x = LowRankState::new(u, draw(n, r))?;

    // A generic dense direction: chi = X + dt*D leaves the manifold, so the
    // best reachable point is its truncated SVD.
    let dir = Direction::dense(draw(m, n));
    let dt = 0.25;
    let target = AffineTarget::new(x.clone(), dir, dt);
    let best = manifold_project(&target.chi_dense(), r).reconstruct();

    println!("distance to the truncated-SVD projection of chi, by descent iteration:\n");
    println!("{:>11}  {:>12}  {:>9}", "iterations", "eps_pr", "ratio");
    let mut prev = f64::NAN;
    for iters in 1..=6usize {
        let cfg = DescentConfig::fixed(iters, RetractionConfig::of_order(1));
        let out = descend_fixed(&x, &target, &cfg)?;
        let err = (out.reconstruct() - &best).norm();
        let ratio = err / prev;
        if iters == 1 {
            println!("{iters:>11}  {err:>12.3e}  {:>9}", "-");
        } else {
            println!("{iters:>11}  {err:>12.3e}  {ratio:>9.3e}");
        }
        prev = err;
    }

    // The automatic driver stops on its own once iterates stop moving.
    let auto = DescentConfig::auto(16, 1e-13, RetractionConfig::of_order(1));
    let (out, used) = descend_auto(&x, &target, &auto)?;
    let err = (out.reconstruct() - &best).norm() / best.norm();
    println!("\nautomatic mode stopped after {used} iterations at relative eps_pr {err:.3e}");

    // On-manifold targets are recovered to machine precision almost at once.
    let chi_on = manifold_project(&draw(m, n), r).reconstruct();
    let dir_on = Direction::dense((&chi_on - x.reconstruct()).scale(1.0 / dt));
    let target_on = AffineTarget::new(x.clone(), dir_on, dt);
    let two = descend_fixed(&x, &target_on, &DescentConfig::fixed(2, RetractionConfig::of_order(1)))?;
    println!(
        "rank-{r} target already on the manifold: relative error {:.3e} after 2 iterations",
        (two.reconstruct() - &chi_on).norm() / chi_on.norm()
    );
    Ok(())
}
