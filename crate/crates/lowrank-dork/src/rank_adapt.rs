//! Rank adaptation: angular augmentation, post-step reduction, and the
//! rank-discovery driver.
//!
//! The departure angle θ = arccos(‖P_T L̄‖/‖L̄‖) measures how much of a
//! direction the current tangent space cannot represent. When it exceeds a
//! threshold, the basis is augmented with a randomized range basis of
//! P_U^⊥L̄, the new Z columns are pre-seeded, and the direction is adjusted
//! so the affine target χ = X + Δt·L̄ is bit-for-bit invariant. After the
//! step, eigendirections of ZᵀZ carrying relative energy below σ* are
//! dropped again.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::descent::{descend_auto, descend_fixed, DescentConfig};
use crate::manifold::{AffineTarget, Direction, LowRankState};
use crate::matcore::{self, Mat};
use crate::retraction::DEFAULT_REL_CUT;
use crate::{Error, Result};

/// Cap on the rank-discovery outer loop; the iteration has no intrinsic
/// bound, so exceeding this converts silent non-convergence into an error.
pub const DISCOVERY_OUTER_CAP: usize = 64;

/// Thresholds and bounds steering rank adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    /// Augment when θ exceeds this (radians, in [0, π/2]); 0 means always.
    pub theta_star: f64,
    /// Relative Frobenius energy below which trailing eigendirections are
    /// dropped after the step; in [0, 1].
    pub sigma_star: f64,
    /// Nominal rank increment per augmentation.
    pub r_inc: usize,
    /// Hard rank ceiling.
    pub r_max: usize,
    /// Seed for the randomized range finder.
    pub seed: u64,
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self { theta_star: 0.1, sigma_star: 1e-12, r_inc: 1, r_max: 64, seed: 0 }
    }
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.theta_star) {
            return Err(Error::InvalidConfig(format!(
                "theta_star must lie in [0, π/2], got {}",
                self.theta_star
            )));
        }
        if !(0.0..=1.0).contains(&self.sigma_star) {
            return Err(Error::InvalidConfig(format!(
                "sigma_star must lie in [0, 1], got {}",
                self.sigma_star
            )));
        }
        if self.r_inc == 0 || self.r_inc > self.r_max {
            return Err(Error::InvalidConfig(format!(
                "need 1 ≤ r_inc ≤ r_max, got r_inc={} r_max={}",
                self.r_inc, self.r_max
            )));
        }
        Ok(())
    }
}

/// Output of [`augment`]: the widened state with pre-seeded new Z columns
/// and the direction adjusted so Û·Ẑᵀ + Δt·L̄′ = U·Zᵀ + Δt·L̄ exactly.
#[derive(Debug, Clone)]
pub struct AugmentedState {
    pub state: LowRankState,
    pub direction: Direction,
    /// Number of fresh basis columns added (0 = pass-through).
    pub added: usize,
}

/// θ = arccos(‖P_T L̄‖/‖L̄‖) ∈ [0, π/2], the angle between the direction and
/// the tangent space at `x`. A zero direction yields 0 by convention.
pub fn departure_angle(x: &LowRankState, direction: &Direction) -> Result<f64> {
    let dir_norm = direction.norm();
    if dir_norm == 0.0 {
        log::warn!("departure angle of a zero direction; returning 0 by convention");
        return Ok(0.0);
    }
    let u = x.u();
    let z = x.z();
    let c = direction.tr_mul(u);
    let b = direction.mul_right(z);
    let b_perp = &b - u * (u.transpose() * &b);
    let zz = z.transpose() * z;
    // U̇ = P_U^⊥ L̄ Z (ZᵀZ)⁺; then ‖P_T L̄‖² = ‖L̄ᵀU‖² + tr(U̇ᵀU̇·ZᵀZ),
    // the two pieces being mutually orthogonal.
    let udot = matcore::pseudo_solve(&zz, &b_perp.transpose(), DEFAULT_REL_CUT)?.transpose();
    let pt_sq = c.norm_squared() + (udot.transpose() * &udot).dot(&zz);
    let cos = (pt_sq.max(0.0).sqrt() / dir_norm).clamp(0.0, 1.0);
    Ok(cos.acos())
}

/// Widen the basis by a randomized range basis of P_U^⊥L̄.
///
/// The increment is clamped to min(r, r_inc, r_max − r, m − r). New Z columns
/// are pre-seeded with Δt·L̄ᵀQ so the immediately following retraction sees
/// nonzero coordinates there, and the returned direction is
/// L̄′ = L̄ − ÛÛᵀL̄, which keeps the affine target invariant.
pub fn augment(
    x: &LowRankState,
    direction: &Direction,
    dt: f64,
    policy: &RankPolicy,
) -> AugmentedState {
    let (m, n) = x.shape();
    let r = x.rank();
    let add = policy
        .r_inc
        .min(r)
        .min(policy.r_max.saturating_sub(r))
        .min(m.saturating_sub(r));
    if add == 0 {
        return AugmentedState { state: x.clone(), direction: direction.clone(), added: 0 };
    }

    let u = x.u();
    let dense = direction.materialize();
    let perp = &dense - u * (u.transpose() * &dense);
    let q = match fresh_basis(u, &perp, add, policy.seed) {
        Some(q) => q,
        None => {
            log::warn!("could not build {add} fresh basis columns; skipping augmentation");
            return AugmentedState { state: x.clone(), direction: direction.clone(), added: 0 };
        }
    };

    let mut u_hat = Mat::zeros(m, r + add);
    u_hat.columns_mut(0, r).copy_from(u);
    u_hat.columns_mut(r, add).copy_from(&q);
    // Ẑ = [Z 0] + Δt·L̄ᵀÛ.
    let mut z_hat = Mat::zeros(n, r + add);
    z_hat.columns_mut(0, r).copy_from(x.z());
    z_hat += direction.tr_mul(&u_hat).scale(dt);

    let mut adjusted = direction.clone();
    adjusted.push_outer_scaled(-1.0, u_hat.clone(), direction.tr_mul(&u_hat));
    AugmentedState {
        state: LowRankState::from_factors(u_hat, z_hat),
        direction: adjusted,
        added: add,
    }
}

/// Orthonormal basis of the dominant range of `perp`, re-orthogonalized
/// against `u`; rank-deficient candidates are refilled from a seeded
/// Gaussian draw.
fn fresh_basis(u: &Mat, perp: &Mat, k: usize, seed: u64) -> Option<Mat> {
    let m = u.nrows();
    let mut cand = matcore::rand_range(perp, k, 8, seed);
    for attempt in 0..4u64 {
        let projected = &cand - u * (u.transpose() * &cand);
        if let Ok(o) = matcore::orth(&projected) {
            return Some(o.q);
        }
        // The range basis overlapped span(U); replace it with a fresh draw,
        // which is full rank against any fixed subspace almost surely.
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(attempt).wrapping_add(1));
        cand = Mat::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng));
    }
    None
}

/// Drop the longest ascending-eigenvalue prefix of ZᵀZ whose cumulative
/// relative energy stays below σ*: sqrt(Σλ_dropped/Σλ) < σ*. Never reduces
/// below rank 1; the relative Frobenius change is < σ* by construction.
pub fn reduce_rank(x: &LowRankState, policy: &RankPolicy) -> LowRankState {
    let r = x.rank();
    let zz = x.z().transpose() * x.z();
    let (vals, vecs) = matcore::sym_eig_asc(&zz);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let mut cum = 0.0;
    let mut drop = 0;
    while drop < r - 1 {
        let next = cum + vals[drop].max(0.0);
        let ratio = if total > 0.0 { (next / total).sqrt() } else { 0.0 };
        if ratio < policy.sigma_star {
            cum = next;
            drop += 1;
        } else {
            break;
        }
    }
    if drop == 0 {
        return x.clone();
    }
    let kept = vecs.columns(drop, r - drop).into_owned();
    LowRankState::from_factors(x.u() * &kept, x.z() * &kept)
}

/// One rank-adaptive retraction: angle test, optional augmentation, robust
/// descent toward the (possibly adjusted) target, then rank reduction.
/// The descent runs in fixed or automatic mode per `base.auto_mode`.
///
/// The base retraction must be a robust mode, because freshly added
/// directions enter with O(Δt) coordinates and an exact Gram inverse would
/// reject or amplify them.
pub fn rank_adaptive_retract(
    x: &LowRankState,
    direction: &Direction,
    dt: f64,
    policy: &RankPolicy,
    base: &DescentConfig,
) -> Result<LowRankState> {
    policy.validate()?;
    base.validate()?;
    if !base.base.robust.is_robust() {
        return Err(Error::InvalidConfig(
            "rank-adaptive retraction requires a robust base (pseudoinverse or span-only)".into(),
        ));
    }

    let should_augment = x.rank() < policy.r_max
        && (policy.theta_star == 0.0 || departure_angle(x, direction)? > policy.theta_star);

    let (work_state, work_dir) = if should_augment {
        let aug = augment(x, direction, dt, policy);
        (aug.state, aug.direction)
    } else {
        (x.clone(), direction.clone())
    };

    let target = AffineTarget::new(work_state.clone(), work_dir, dt);
    let stepped = if base.auto_mode {
        descend_auto(&work_state, &target, base)?.0
    } else {
        descend_fixed(&work_state, &target, base)?
    };
    Ok(reduce_rank(&stepped, policy))
}

/// Automatic rank discovery and compression.
///
/// Repeats rank-adaptive retraction toward the fixed target
/// χ = x + Δt·direction (θ* = 0 so every pass may widen the basis,
/// σ* = ε_l* so converged passes compress), until the relative local error
/// ‖χ − X₊‖/‖x‖ falls to ε_l* or [`DISCOVERY_OUTER_CAP`] is hit.
pub fn discover_rank(
    x: &LowRankState,
    direction: &Direction,
    dt: f64,
    policy: &RankPolicy,
    eps_l_star: f64,
    n_max: usize,
) -> Result<LowRankState> {
    policy.validate()?;
    if !(eps_l_star > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "eps_l_star must be positive, got {eps_l_star}"
        )));
    }
    let x_norm = x.norm().max(f64::MIN_POSITIVE);
    let base = DescentConfig::auto(n_max, eps_l_star, crate::retraction::RetractionConfig::default());
    let target = AffineTarget::new(x.clone(), direction.clone(), dt);

    let mut current = x.clone();
    for outer in 0..=DISCOVERY_OUTER_CAP {
        let mut chi_minus_current = target.chi_direction();
        chi_minus_current.push_outer_scaled(-1.0, current.u().clone(), current.z().clone());
        let resid = chi_minus_current.norm_compressed() / x_norm;
        if resid <= eps_l_star {
            return Ok(current);
        }
        if outer == DISCOVERY_OUTER_CAP {
            return Err(Error::MaxOuterIterations { iterations: outer, residual: resid });
        }

        let iter_policy = RankPolicy {
            theta_star: 0.0,
            sigma_star: eps_l_star,
            seed: policy.seed.wrapping_add(outer as u64),
            ..*policy
        };
        let toward_chi = target.residual_direction(&current);
        let aug = augment(&current, &toward_chi, dt, &iter_policy);
        let local = AffineTarget::new(aug.state.clone(), aug.direction, dt);
        let (next, _iters) = descend_auto(&aug.state, &local, &base)?;
        current = reduce_rank(&next, &iter_policy);
    }
    unreachable!("loop returns or errors at the cap");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{manifold_project, state_diff_norm, tangent_project};
    use crate::retraction::{RetractionConfig, RobustMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn seeded_mat(seed: u64, m: usize, n: usize) -> Mat {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn random_state(seed: u64, m: usize, n: usize, r: usize) -> LowRankState {
        let u = matcore::orth(&seeded_mat(seed, m, r)).unwrap().q;
        let z = seeded_mat(seed.wrapping_add(1), n, r);
        LowRankState::new(u, z).unwrap()
    }

    fn robust_descent(n_iters: usize) -> DescentConfig {
        DescentConfig::fixed(
            n_iters,
            RetractionConfig::of_order(1).with_robust(RobustMode::pseudoinverse()),
        )
    }

    #[test]
    fn angle_is_zero_for_tangent_directions() {
        let x = random_state(1, 20, 14, 4);
        let d = Direction::dense(x.reconstruct());
        assert!(departure_angle(&x, &d).unwrap() < 1e-7);
    }

    #[test]
    fn angle_is_right_for_fully_normal_directions() {
        let x = random_state(3, 24, 18, 4);
        let raw = seeded_mat(5, 24, 18);
        let u = x.u();
        let rows_perp = &raw - u * (u.transpose() * &raw);
        let zq = matcore::orth(x.z()).unwrap().q;
        let d = &rows_perp - (&rows_perp * &zq) * zq.transpose();
        let theta = departure_angle(&x, &Direction::dense(d)).unwrap();
        assert!((theta - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn angle_matches_dense_projector_oracle() {
        let x = random_state(7, 30, 22, 5);
        let dense = seeded_mat(9, 30, 22);
        let theta = departure_angle(&x, &Direction::dense(dense.clone())).unwrap();
        let pt = tangent_project(&x, &dense).unwrap();
        let cos_oracle = pt.norm() / dense.norm();
        assert!((theta.cos() - cos_oracle).abs() < 1e-10);
    }

    #[test]
    fn augmentation_preserves_the_affine_target_and_basis_invariants() {
        let x = random_state(11, 26, 19, 4);
        let dir = Direction::dense(seeded_mat(13, 26, 19));
        let dt = 0.07;
        let policy = RankPolicy { r_inc: 3, r_max: 20, seed: 42, ..Default::default() };
        let aug = augment(&x, &dir, dt, &policy);
        assert_eq!(aug.added, 3);
        assert_eq!(aug.state.rank(), 7);

        let u_hat = aug.state.u();
        let gram = u_hat.transpose() * u_hat - Mat::identity(7, 7);
        assert!(gram.norm() < 1e-10);

        let before = x.reconstruct() + dir.materialize().scale(dt);
        let after = aug.state.reconstruct() + aug.direction.materialize().scale(dt);
        assert!((before.clone() - after).norm() < 1e-10 * before.norm());
    }

    #[test]
    fn augmentation_increment_clamps() {
        let x = random_state(15, 40, 30, 10);
        let dir = Direction::dense(seeded_mat(17, 40, 30));
        let small = RankPolicy { r_inc: 5, r_max: 200, ..Default::default() };
        assert_eq!(augment(&x, &dir, 0.1, &small).state.rank(), 15);
        // r_inc larger than current rank: capped at doubling.
        let big = RankPolicy { r_inc: 25, r_max: 200, ..Default::default() };
        assert_eq!(augment(&x, &dir, 0.1, &big).state.rank(), 20);
        // Ceiling dominates.
        let ceil = RankPolicy { r_inc: 25, r_max: 12, ..Default::default() };
        assert_eq!(augment(&x, &dir, 0.1, &ceil).state.rank(), 12);
    }

    #[test]
    fn reduce_rank_with_zero_tolerance_is_identity() {
        let x = random_state(19, 18, 12, 4);
        let policy = RankPolicy { sigma_star: 0.0, ..Default::default() };
        let out = reduce_rank(&x, &policy);
        assert_eq!(out.rank(), 4);
        assert_eq!(out.z(), x.z());
    }

    #[test]
    fn reduce_rank_drops_exactly_the_padded_zero_direction() {
        let x = random_state(21, 18, 12, 3);
        let mut u = Mat::zeros(18, 4);
        u.columns_mut(0, 3).copy_from(x.u());
        // Fourth basis column orthogonal to the rest, with zero Z coordinates.
        let extra = {
            let raw = seeded_mat(23, 18, 1);
            let perp = &raw - x.u() * (x.u().transpose() * &raw);
            matcore::orth(&perp).unwrap().q
        };
        u.columns_mut(3, 1).copy_from(&extra);
        let mut z = Mat::zeros(12, 4);
        z.columns_mut(0, 3).copy_from(x.z());
        let padded = LowRankState::new(u, z).unwrap();

        let policy = RankPolicy { sigma_star: 1e-12, ..Default::default() };
        let out = reduce_rank(&padded, &policy);
        assert_eq!(out.rank(), 3);
        assert!(state_diff_norm(&out, &x) < 1e-12 * x.norm());
    }

    #[test]
    fn reduce_rank_error_matches_svd_tail_and_respects_bound() {
        let x = random_state(25, 30, 20, 8);
        let policy = RankPolicy { sigma_star: 0.1, ..Default::default() };
        let out = reduce_rank(&x, &policy);
        let change = state_diff_norm(&out, &x);
        assert!(change <= 0.1 * x.norm());
        // The drop equals the optimal tail for the rank it chose.
        let best = manifold_project(&x.reconstruct(), out.rank());
        let tail = state_diff_norm(&best, &x);
        assert!((change - tail).abs() < 1e-10 * x.norm());
    }

    #[test]
    fn never_reduces_below_rank_one() {
        let x = random_state(27, 10, 8, 3);
        let policy = RankPolicy { sigma_star: 1.0, ..Default::default() };
        assert_eq!(reduce_rank(&x, &policy).rank(), 1);
    }

    #[test]
    fn degenerate_policy_equals_plain_descent() {
        let x = random_state(29, 22, 16, 4);
        let dir = Direction::dense(seeded_mat(31, 22, 16));
        let policy = RankPolicy {
            theta_star: std::f64::consts::FRAC_PI_2,
            sigma_star: 0.0,
            ..Default::default()
        };
        let base = robust_descent(2);
        let adaptive = rank_adaptive_retract(&x, &dir, 0.05, &policy, &base).unwrap();
        let target = AffineTarget::new(x.clone(), dir.clone(), 0.05);
        let plain = descend_fixed(&x, &target, &base).unwrap();
        assert_eq!(adaptive.u(), plain.u());
        assert_eq!(adaptive.z(), plain.z());
    }

    #[test]
    fn always_augment_grows_rank_before_reduction() {
        let x = random_state(33, 40, 30, 10);
        // Rank-25 direction so the fresh columns carry real energy.
        let dir = Direction::outer_scaled(1.0, seeded_mat(35, 40, 25), seeded_mat(36, 30, 25));
        let policy =
            RankPolicy { theta_star: 0.0, sigma_star: 0.0, r_inc: 5, r_max: 200, seed: 7, ..Default::default() };
        let out = rank_adaptive_retract(&x, &dir, 0.1, &policy, &robust_descent(1)).unwrap();
        assert_eq!(out.rank(), 15);
    }

    #[test]
    fn exact_base_is_rejected() {
        let x = random_state(37, 12, 9, 3);
        let dir = Direction::dense(seeded_mat(39, 12, 9));
        let base =
            DescentConfig::fixed(1, RetractionConfig::of_order(1).with_robust(RobustMode::None));
        let err = rank_adaptive_retract(&x, &dir, 0.1, &RankPolicy::default(), &base);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn discovery_terminates_immediately_on_manifold_targets() {
        let x = manifold_project(&seeded_mat(41, 30, 20), 4);
        let dir = Direction::zeros(30, 20);
        let out = discover_rank(&x, &dir, 0.1, &RankPolicy::default(), 1e-10, 8).unwrap();
        assert_eq!(out.rank(), 4);
        // Zero inner steps taken: the factors come back untouched.
        assert_eq!(out.u(), x.u());
        assert_eq!(out.z(), x.z());
    }

    #[test]
    fn discovery_reaches_the_true_rank_and_compresses() {
        let x = manifold_project(&seeded_mat(43, 60, 40), 3);
        // Target of exact rank 12, reachable only by widening the basis.
        let truth = manifold_project(&seeded_mat(45, 60, 40), 12);
        let dt = 0.1;
        let mut dir = truth.as_direction().scaled(1.0 / dt);
        dir.push_outer_scaled(-1.0 / dt, x.u().clone(), x.z().clone());
        let policy = RankPolicy { r_inc: 4, r_max: 30, seed: 11, ..Default::default() };
        let out = discover_rank(&x, &dir, dt, &policy, 1e-8, 16).unwrap();
        let resid = state_diff_norm(&out, &truth) / x.norm();
        assert!(resid <= 1e-8, "residual {resid:.3e}");
        assert!(
            (12..=16).contains(&out.rank()),
            "rank {} not in the expected band around 12",
            out.rank()
        );
    }

    #[test]
    fn discovery_rank_trajectory_is_deterministic() {
        let x = manifold_project(&seeded_mat(47, 50, 35), 3);
        let truth = manifold_project(&seeded_mat(49, 50, 35), 10);
        let dt = 0.1;
        let mut dir = truth.as_direction().scaled(1.0 / dt);
        dir.push_outer_scaled(-1.0 / dt, x.u().clone(), x.z().clone());
        let policy = RankPolicy { r_inc: 3, r_max: 30, seed: 5, ..Default::default() };
        let a = discover_rank(&x, &dir, dt, &policy, 1e-8, 16).unwrap();
        let b = discover_rank(&x, &dir, dt, &policy, 1e-8, 16).unwrap();
        assert_eq!(a.u(), b.u());
        assert_eq!(a.z(), b.z());
    }

    #[test]
    fn discovery_errors_past_the_outer_cap() {
        // Unreachable tolerance with a rank ceiling below the target rank.
        let x = manifold_project(&seeded_mat(51, 40, 30), 2);
        let truth = manifold_project(&seeded_mat(53, 40, 30), 20);
        let dt = 0.1;
        let mut dir = truth.as_direction().scaled(1.0 / dt);
        dir.push_outer_scaled(-1.0 / dt, x.u().clone(), x.z().clone());
        let policy = RankPolicy { r_inc: 2, r_max: 4, seed: 3, ..Default::default() };
        let err = discover_rank(&x, &dir, dt, &policy, 1e-12, 4);
        assert!(matches!(err, Err(Error::MaxOuterIterations { .. })));
    }

    #[test]
    fn policy_validation() {
        assert!(RankPolicy { theta_star: 2.0, ..Default::default() }.validate().is_err());
        assert!(RankPolicy { sigma_star: 1.5, ..Default::default() }.validate().is_err());
        assert!(RankPolicy { r_inc: 0, ..Default::default() }.validate().is_err());
        assert!(RankPolicy { r_inc: 9, r_max: 8, ..Default::default() }.validate().is_err());
    }
}
