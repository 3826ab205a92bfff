//! Automatic rank discovery: starting from a deliberately under-ranked state,
//! the driver alternates angular basis augmentation, robust descent, and
//! energy-based truncation until the target is represented to tolerance.
//!
//! Run with `cargo run --release --example rank_discovery`.

use lowrank_dork::manifold::{AffineTarget, Direction, LowRankState};
use lowrank_dork::matcore::{orth, svd_trunc, Mat};
use lowrank_dork::rank_adapt::{departure_angle, discover_rank, RankPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> lowrank_dork::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let mut draw = |m: usize, n: usize| Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);

    // Rank-4 state, rank-12 direction with an independent span: the target
    // chi = X + dt*D has numerical rank 16.
    let (m, n) = (120, 90);
    let x = LowRankState::new(orth(&draw(m, 4))?.q, draw(n, 4).scale(0.25))?;
    let dir = Direction::outer_scaled(1.0, draw(m, 12), draw(n, 12));
    let dir = dir.clone().scaled(1.0 / dir.norm());
    let dt = 0.5;

    let theta = departure_angle(&x, &dir)?;
    println!(
        "start: rank {}, departure angle {:.1} degrees (the tangent space misses most of D)",
        x.rank(),
        theta.to_degrees()
    );

    let eps_l_star = 1e-8;
    let policy = RankPolicy { r_inc: 3, r_max: 40, seed: 77, ..RankPolicy::default() };
    let found = discover_rank(&x, &dir, dt, &policy, eps_l_star, 12)?;

    let target = AffineTarget::new(x.clone(), dir.clone(), dt);
    let resid = (target.chi_dense() - found.reconstruct()).norm() / x.norm();
    println!(
        "found: rank {}, relative local error {resid:.3e} (tolerance {eps_l_star:.0e})",
        found.rank()
    );

    // Against the oracle: chi's singular spectrum shows the same rank.
    let s = svd_trunc(&target.chi_dense(), 20).s;
    let cliff = (0..s.len() - 1)
        .find(|&i| s[i + 1] < 1e-10 * s[0])
        .map(|i| i + 1)
        .unwrap_or(s.len());
    println!("oracle: chi has {cliff} singular values above 1e-10 of the largest");
    Ok(())
}
