//! Perturbative retractions onto the rank-r manifold.
//!
//! Given X = UZᵀ and a target χ = X + Δt·L̄, the retraction builds basis
//! corrections U̇₁..U̇₄, orthonormalizes U₊ = orth(U + Σ Δtʲ·U̇_j), and sets
//! Z₊ = χᵀU₊. An order-k retraction reproduces the best rank-r approximation
//! of χ up to O(Δt^{k+1}), and the form of the Z update makes it
//! unconditionally stable: ‖X₊‖ = ‖U₊U₊ᵀχ‖ ≤ ‖χ‖.
//!
//! The same correction recurrences accept a short series of directions
//! 𝓛₁, 𝓛₂, ... with χ = X + Σ_j Δtʲ·𝓛_j, which is how the higher-order
//! integrators reuse this engine; a single direction is the special case
//! 𝓛₁ = L̄, 𝓛_{j≥2} = 0.
//!
//! Every correction applies (ZᵀZ)⁻¹ from the right. Three policies for that
//! inverse trade accuracy against robustness near rank-deficient Z:
//! exact inverse (fails loudly when ill-conditioned), eigenvalue-truncated
//! pseudoinverse, and a span-only first-order form that needs no inverse.

use crate::manifold::{Direction, LowRankState};
use crate::matcore::{self, Mat};
use crate::{Error, Result};

/// Relative eigenvalue cutoff for pseudoinverted Gram matrices.
pub const DEFAULT_REL_CUT: f64 = 1e-9;

/// Condition-number limit for the exact-inverse mode.
pub const COND_LIMIT: f64 = 1e14;

/// Default threshold for adaptive correction order.
pub const DEFAULT_ADAPT_TOL: f64 = 0.1;

/// Policy for applying (ZᵀZ)⁻¹ in the basis corrections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustMode {
    /// Exact inverse; fails with [`Error::IllConditioned`] when
    /// cond(ZᵀZ) exceeds [`COND_LIMIT`].
    None,
    /// Eigenvalue-truncated pseudoinverse: eigenvalues at or below
    /// `rel_cut`·λ_max are dropped, so corrections vanish along dead
    /// directions of Z instead of blowing up.
    Pseudoinverse { rel_cut: f64 },
    /// First-order update on spans only: U₊ = orth(U·ZᵀZ + Δt·P_U^⊥L̄Z).
    /// No inverse anywhere; equals the exact order-1 retraction whenever
    /// ZᵀZ is invertible.
    SpanOnly,
}

impl RobustMode {
    /// The pseudoinverse mode at the default cutoff.
    pub fn pseudoinverse() -> Self {
        RobustMode::Pseudoinverse { rel_cut: DEFAULT_REL_CUT }
    }

    /// True for the modes that stay finite on rank-deficient Z.
    pub fn is_robust(&self) -> bool {
        !matches!(self, RobustMode::None)
    }
}

/// Order, robustness, and adaptivity of a retraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetractionConfig {
    /// Correction order, 1 through 4.
    pub order: usize,
    pub robust: RobustMode,
    /// When set, correction j ≥ 2 is included only while
    /// Δtʲ·‖U̇_j‖/√r stays below this threshold; order 1 is always applied.
    pub adapt_tol: Option<f64>,
}

impl Default for RetractionConfig {
    fn default() -> Self {
        Self { order: 1, robust: RobustMode::pseudoinverse(), adapt_tol: None }
    }
}

impl RetractionConfig {
    pub fn of_order(order: usize) -> Self {
        Self { order, ..Self::default() }
    }

    pub fn with_robust(mut self, robust: RobustMode) -> Self {
        self.robust = robust;
        self
    }

    pub fn with_adaptive_order(mut self, tol: f64) -> Self {
        self.adapt_tol = Some(tol);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.order) {
            return Err(Error::InvalidConfig(format!(
                "retraction order must be 1..=4, got {}",
                self.order
            )));
        }
        if let Some(tol) = self.adapt_tol {
            if !(tol > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "adaptive order threshold must be positive, got {tol}"
                )));
            }
        }
        if let RobustMode::Pseudoinverse { rel_cut } = self.robust {
            if !(rel_cut > 0.0 && rel_cut < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "pseudoinverse cutoff must lie in (0, 1), got {rel_cut}"
                )));
            }
        }
        if self.robust == RobustMode::SpanOnly && (self.order != 1 || self.adapt_tol.is_some()) {
            return Err(Error::InvalidConfig(
                "span-only robust mode is first order; set order 1 and no adaptivity".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one retraction.
#[derive(Debug, Clone)]
pub struct Retracted {
    pub state: LowRankState,
    /// Highest correction actually applied (may be below the configured
    /// order under adaptivity).
    pub order_used: usize,
    /// ‖Σ Δtʲ·U̇_j‖²_F. Values ≥ 1 are outside the contraction regime of the
    /// correction series and are logged as a warning. Zero in span-only mode.
    pub correction_sq: f64,
}

/// Retract toward χ = x + Δt·dir.
pub fn optimal_retract(
    x: &LowRankState,
    dir: &Direction,
    dt: f64,
    cfg: &RetractionConfig,
) -> Result<Retracted> {
    retract_series(x, std::slice::from_ref(dir), dt, cfg)
}

/// Retract toward χ = x + Σ_j Δtʲ·series[j−1]. Missing trailing entries are
/// treated as zero, so a one-element series is the plain retraction.
pub fn retract_series(
    x: &LowRankState,
    series: &[Direction],
    dt: f64,
    cfg: &RetractionConfig,
) -> Result<Retracted> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(Error::ZeroDirection);
    }
    for d in series {
        debug_assert_eq!(d.shape(), x.shape(), "direction shape mismatch");
    }
    match cfg.robust {
        RobustMode::SpanOnly => Ok(span_only_retract(x, series, dt)),
        _ => corrected_retract(x, series, dt, cfg),
    }
}

/// The span-only first-order retraction with retain-basis fallback; never
/// inverts anything, so it is total on valid inputs.
pub fn robust_first_order(x: &LowRankState, dir: &Direction, dt: f64) -> Retracted {
    span_only_retract(x, std::slice::from_ref(dir), dt)
}

fn span_only_retract(x: &LowRankState, series: &[Direction], dt: f64) -> Retracted {
    let u = x.u();
    let z = x.z();
    let zz = z.transpose() * z;
    let mut b_total = series[0].mul_right(z);
    for (j, d) in series.iter().enumerate().skip(1) {
        b_total += d.mul_right(z).scale(dt.powi(j as i32));
    }
    let perp_b = &b_total - u * (u.transpose() * &b_total);
    let mut cand = u * &zz + perp_b.scale(dt);
    // Only the span of the candidate matters, and its raw columns inherit
    // the squared singular values from ZᵀZ — enough decades on stiff spectra
    // to defeat the QR pivot test. Rescaling each column to unit norm leaves
    // the span untouched and keeps the factorization well conditioned. A
    // zero column (dead mode with no fresh input) keeps its current basis
    // vector.
    for (k, mut col) in cand.column_iter_mut().enumerate() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        } else {
            col.copy_from(&u.column(k));
        }
    }
    let u_plus = match matcore::orth(&cand) {
        Ok(o) => o.q,
        // Numerically dependent columns even after scaling: fall back to the
        // best r-dimensional span instead of failing.
        Err(_) => matcore::svd_trunc(&cand, x.rank()).u,
    };
    Retracted {
        state: update_z(x, series, dt, u_plus),
        order_used: 1,
        correction_sq: 0.0,
    }
}

fn corrected_retract(
    x: &LowRankState,
    series: &[Direction],
    dt: f64,
    cfg: &RetractionConfig,
) -> Result<Retracted> {
    let (m, n) = x.shape();
    let r = x.rank();
    let u = x.u();
    let z = x.z();
    let zz = z.transpose() * z;
    let w = gram_inverse(&zz, cfg.robust)?;

    let zero_dir = Direction::zeros(m, n);
    let l = |j: usize| series.get(j - 1).unwrap_or(&zero_dir);
    let perp = |a: &Mat| a - u * (u.transpose() * a);
    let keep = |j: usize, udot: &Mat| match cfg.adapt_tol {
        Some(tol) => dt.powi(j as i32) * udot.norm() / (r as f64).sqrt() < tol,
        None => true,
    };

    let b1 = l(1).mul_right(z);
    let mut udots: Vec<Mat> = vec![perp(&b1) * &w];

    'orders: {
        if cfg.order < 2 {
            break 'orders;
        }
        let c1 = l(1).tr_mul(u);
        let g1u = l(1).mul_right(&c1);
        let b2 = l(2).mul_right(z);
        let m1 = u.transpose() * &b1;
        let t1 = &m1 + m1.transpose();
        let udot2 = (perp(&(&g1u + &b2)) - &udots[0] * &t1) * &w;
        if !keep(2, &udot2) {
            break 'orders;
        }
        udots.push(udot2);

        if cfg.order < 3 {
            break 'orders;
        }
        let udot1 = udots[0].clone();
        let udot2 = udots[1].clone();
        let l1l1_udot1 = l(1).mul_right(&l(1).tr_mul(&udot1));
        let c2 = l(2).tr_mul(u);
        let cross2u = l(1).mul_right(&c2) + l(2).mul_right(&c1);
        let b3 = l(3).mul_right(z);
        let a3 = &l1l1_udot1 + &cross2u + &b3;
        let d1b1 = udot1.transpose() * &b1;
        let m2 = u.transpose() * &b2;
        let t2 = u.transpose() * &g1u + &d1b1 + d1b1.transpose()
            - (udot1.transpose() * &udot1) * &zz
            + &m2
            + m2.transpose();
        let udot3 = (perp(&a3) - &udot2 * &t1 - &udot1 * &t2) * &w;
        if !keep(3, &udot3) {
            break 'orders;
        }
        udots.push(udot3);

        if cfg.order < 4 {
            break 'orders;
        }
        let udot3 = udots[2].clone();
        let l1l1_udot2 = l(1).mul_right(&l(1).tr_mul(&udot2));
        let cross2_udot1 =
            l(1).mul_right(&l(2).tr_mul(&udot1)) + l(2).mul_right(&l(1).tr_mul(&udot1));
        let c3 = l(3).tr_mul(u);
        let cross3u = l(1).mul_right(&c3) + l(3).mul_right(&c1) + l(2).mul_right(&c2);
        let b4 = l(4).mul_right(z);
        let a4 = &l1l1_udot2 + &cross2_udot1 + &cross3u + &b4;
        let e1 = u.transpose() * &l1l1_udot1;
        let e2 = udot2.transpose() * &b1;
        let q12 = udot1.transpose() * &udot2;
        let d1b2 = udot1.transpose() * &b2;
        let m3 = u.transpose() * &b3;
        let t3 = &e1 + e1.transpose() + &e2 + e2.transpose()
            - &q12 * &zz
            - q12.transpose() * &zz
            - (udot1.transpose() * &udot1) * &t1
            + u.transpose() * &cross2u
            + &d1b2
            + d1b2.transpose()
            + &m3
            + m3.transpose();
        let udot4 = (perp(&a4) - &udot3 * &t1 - &udot2 * &t2 - &udot1 * &t3) * &w;
        if keep(4, &udot4) {
            udots.push(udot4);
        }
    }

    let mut delta = Mat::zeros(m, r);
    for (i, ud) in udots.iter().enumerate() {
        delta += ud.scale(dt.powi(i as i32 + 1));
    }
    let correction_sq = delta.norm_squared();
    if correction_sq >= 1.0 {
        log::warn!(
            "basis correction ‖ΔU‖² = {correction_sq:.3e} ≥ 1: step size too large for the \
             correction series to contract"
        );
    }

    let u_plus = match matcore::orth(&(u + &delta)) {
        Ok(o) => o.q,
        Err(e @ Error::RankDeficient { .. }) => {
            if cfg.robust.is_robust() {
                log::warn!("corrected basis lost rank; retaining previous basis");
                u.clone()
            } else {
                return Err(e);
            }
        }
        Err(e) => return Err(e),
    };

    Ok(Retracted {
        state: update_z(x, series, dt, u_plus),
        order_used: udots.len(),
        correction_sq,
    })
}

/// Z₊ = χᵀU₊ = Z·(UᵀU₊) + Σ_j Δtʲ·𝓛_jᵀU₊. Shared by every mode; this is
/// what gives ‖X₊‖ ≤ ‖χ‖ regardless of how U₊ was produced.
fn update_z(x: &LowRankState, series: &[Direction], dt: f64, u_plus: Mat) -> LowRankState {
    let mut z_plus = x.z() * (x.u().transpose() * &u_plus);
    for (j, d) in series.iter().enumerate() {
        z_plus += d.tr_mul(&u_plus).scale(dt.powi(j as i32 + 1));
    }
    LowRankState::from_factors(u_plus, z_plus)
}

/// W ≈ (ZᵀZ)⁻¹ under the given mode.
fn gram_inverse(zz: &Mat, mode: RobustMode) -> Result<Mat> {
    let r = zz.nrows();
    let (vals, vecs) = matcore::sym_eig_asc(zz);
    let lam_max = vals[r - 1];
    match mode {
        RobustMode::None => {
            let lam_min = vals[0];
            let cond = if lam_min > 0.0 { lam_max / lam_min } else { f64::INFINITY };
            if !(cond <= COND_LIMIT) {
                return Err(Error::IllConditioned { cond });
            }
            Ok(scaled_eigvec_product(&vals, &vecs, |lam| 1.0 / lam))
        }
        RobustMode::Pseudoinverse { rel_cut } => {
            if lam_max <= 0.0 {
                return Ok(Mat::zeros(r, r));
            }
            let cut = rel_cut * lam_max;
            Ok(scaled_eigvec_product(&vals, &vecs, |lam| if lam > cut { 1.0 / lam } else { 0.0 }))
        }
        RobustMode::SpanOnly => unreachable!("span-only mode never forms a Gram inverse"),
    }
}

/// V·diag(f(λ))·Vᵀ.
fn scaled_eigvec_product(
    vals: &nalgebra::DVector<f64>,
    vecs: &Mat,
    f: impl Fn(f64) -> f64,
) -> Mat {
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[j]);
    }
    scaled * vecs.transpose()
}
