//! Low-rank state representation, tangent/manifold projections, and error
//! metrics.
//!
//! A point on the rank-r manifold is X = UZᵀ with U m×r orthonormal and Z n×r.
//! Retraction targets are affine: χ = X + Δt·L̄, where the direction L̄ may be
//! dense or a sum of factored outer products; [`Direction`] keeps it factored
//! so no kernel ever has to materialize an m×n product unless asked to.
//!
//! Error metrics (all Frobenius):
//! - ε_l  = ‖χ − X₊‖, the local (retraction) error;
//! - ε_pr = ‖X₊ − P_Mr(χ)‖, distance to the best rank-r approximation;
//! - ε_N  = ‖χ − P_Mr(χ)‖, the unavoidable normal part;
//! - ε_D  = ‖𝓛(X̄) − 𝓛(X)‖, dynamics closure error (caller-computed);
//! - ε_tot = ‖X̄ − X₊‖ against a full-rank reference when one exists.

use std::io::Write;

use crate::matcore::{self, Mat};
use crate::{Error, Result};

/// Relative orthonormality tolerance for U factors.
const ORTHONORMALITY_RTOL: f64 = 1e-10;

/// Rank-r state X = U·Zᵀ with orthonormal U.
#[derive(Debug, Clone)]
pub struct LowRankState {
    u: Mat,
    z: Mat,
}

impl LowRankState {
    /// Build a state, validating the orthonormality invariant
    /// ‖UᵀU − I‖ ≤ 1e-10·r.
    pub fn new(u: Mat, z: Mat) -> Result<Self> {
        let r = u.ncols();
        if z.ncols() != r {
            return Err(Error::InvalidConfig(format!(
                "factor rank mismatch: U has {} columns, Z has {}",
                r,
                z.ncols()
            )));
        }
        let dev = (u.transpose() * &u - Mat::identity(r, r)).norm();
        if !(dev <= ORTHONORMALITY_RTOL * r as f64) {
            return Err(Error::InvalidConfig(format!(
                "U columns not orthonormal: deviation {dev:.3e} exceeds {:.1e}·r",
                ORTHONORMALITY_RTOL
            )));
        }
        Ok(Self { u, z })
    }

    /// Build without validation; for internal use where U comes straight from
    /// an orthonormalization.
    pub(crate) fn from_factors(u: Mat, z: Mat) -> Self {
        debug_assert_eq!(u.ncols(), z.ncols());
        Self { u, z }
    }

    pub fn u(&self) -> &Mat {
        &self.u
    }

    pub fn z(&self) -> &Mat {
        &self.z
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// (m, n) shape of the represented matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.z.nrows())
    }

    /// Materialize U·Zᵀ.
    pub fn reconstruct(&self) -> Mat {
        &self.u * self.z.transpose()
    }

    /// Frobenius norm; equals ‖Z‖ because U is orthonormal.
    pub fn norm(&self) -> f64 {
        self.z.norm()
    }

    /// The state as a single-term factored [`Direction`].
    pub fn as_direction(&self) -> Direction {
        Direction::outer_scaled(1.0, self.u.clone(), self.z.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|x| x.is_finite()) && self.z.iter().all(|x| x.is_finite())
    }
}

/// One additive term of a [`Direction`].
#[derive(Debug, Clone)]
enum DirTerm {
    /// A dense m×n block (coefficient folded into the entries).
    Dense(Mat),
    /// coeff · left · rightᵀ with left m×k, right n×k.
    Outer { coeff: f64, left: Mat, right: Mat },
}

/// An m×n matrix held as a sum of dense blocks and factored outer products.
///
/// All contractions a retraction needs (L̄·M, L̄ᵀ·M, norms, inner products)
/// distribute over the terms, so factored directions never get materialized
/// in production paths.
#[derive(Debug, Clone)]
pub struct Direction {
    m: usize,
    n: usize,
    terms: Vec<DirTerm>,
}

impl Direction {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { m, n, terms: Vec::new() }
    }

    pub fn dense(a: Mat) -> Self {
        let (m, n) = a.shape();
        Self { m, n, terms: vec![DirTerm::Dense(a)] }
    }

    /// coeff · left · rightᵀ.
    pub fn outer_scaled(coeff: f64, left: Mat, right: Mat) -> Self {
        assert_eq!(left.ncols(), right.ncols(), "outer factor rank mismatch");
        Self {
            m: left.nrows(),
            n: right.nrows(),
            terms: vec![DirTerm::Outer { coeff, left, right }],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    /// True when any term is a dense block.
    pub fn has_dense_term(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, DirTerm::Dense(_)))
    }

    pub fn push_outer_scaled(&mut self, coeff: f64, left: Mat, right: Mat) {
        assert_eq!((left.nrows(), right.nrows()), (self.m, self.n));
        assert_eq!(left.ncols(), right.ncols());
        self.terms.push(DirTerm::Outer { coeff, left, right });
    }

    pub fn push_direction(&mut self, other: &Direction) {
        assert_eq!(other.shape(), self.shape());
        self.terms.extend(other.terms.iter().cloned());
    }

    /// Append c · other without an intermediate clone-then-scale pass.
    pub fn push_scaled(&mut self, c: f64, other: &Direction) {
        assert_eq!(other.shape(), self.shape());
        for t in &other.terms {
            self.terms.push(match t {
                DirTerm::Dense(a) => DirTerm::Dense(a.scale(c)),
                DirTerm::Outer { coeff, left, right } => {
                    DirTerm::Outer { coeff: coeff * c, left: left.clone(), right: right.clone() }
                }
            });
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        for t in &mut self.terms {
            match t {
                DirTerm::Dense(a) => *a *= c,
                DirTerm::Outer { coeff, .. } => *coeff *= c,
            }
        }
        self
    }

    /// L̄ · x for x n×k.
    pub fn mul_right(&self, x: &Mat) -> Mat {
        debug_assert_eq!(x.nrows(), self.n);
        let mut out = Mat::zeros(self.m, x.ncols());
        for t in &self.terms {
            match t {
                DirTerm::Dense(a) => out += a * x,
                DirTerm::Outer { coeff, left, right } => {
                    out += (left * (right.transpose() * x)).scale(*coeff)
                }
            }
        }
        out
    }

    /// L̄ᵀ · x for x m×k.
    pub fn tr_mul(&self, x: &Mat) -> Mat {
        debug_assert_eq!(x.nrows(), self.m);
        let mut out = Mat::zeros(self.n, x.ncols());
        for t in &self.terms {
            match t {
                DirTerm::Dense(a) => out += a.transpose() * x,
                DirTerm::Outer { coeff, left, right } => {
                    out += (right * (left.transpose() * x)).scale(*coeff)
                }
            }
        }
        out
    }

    /// Frobenius inner product ⟨self, other⟩.
    pub fn dot(&self, other: &Direction) -> f64 {
        assert_eq!(self.shape(), other.shape());
        let mut acc = 0.0;
        for a in &self.terms {
            for b in &other.terms {
                acc += term_dot(a, b);
            }
        }
        acc
    }

    /// Frobenius norm. For purely factored directions this runs through Gram
    /// products of the factors, accurate to ~√ε of the largest term; callers
    /// needing machine-precision norms of near-cancelling sums should use
    /// [`Direction::norm_compressed`].
    pub fn norm(&self) -> f64 {
        self.dot(self).max(0.0).sqrt()
    }

    /// Frobenius norm via QR compression of the stacked factors; absolute
    /// accuracy O(ε·Σ‖term‖²)^(1/2)-ish, which resolves near-total
    /// cancellation between terms. Falls back to materializing when a dense
    /// term is present.
    pub fn norm_compressed(&self) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        match self.stacked_factors() {
            Some((f, g)) => {
                let qf = f.qr();
                let qg = g.qr();
                (qf.r() * qg.r().transpose()).norm()
            }
            None => self.materialize().norm(),
        }
    }

    pub fn materialize(&self) -> Mat {
        let mut out = Mat::zeros(self.m, self.n);
        for t in &self.terms {
            match t {
                DirTerm::Dense(a) => out += a,
                DirTerm::Outer { coeff, left, right } => {
                    out += (left * right.transpose()).scale(*coeff)
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.terms.iter().all(|t| match t {
            DirTerm::Dense(a) => a.iter().all(|x| x.is_finite()),
            DirTerm::Outer { coeff, left, right } => {
                coeff.is_finite()
                    && left.iter().all(|x| x.is_finite())
                    && right.iter().all(|x| x.is_finite())
            }
        })
    }

    /// Concatenated factor pair (F, G) with self = F·Gᵀ; only valid when no
    /// dense term is present.
    fn stacked_factors(&self) -> Option<(Mat, Mat)> {
        if self.has_dense_term() {
            return None;
        }
        let total: usize = self
            .terms
            .iter()
            .map(|t| match t {
                DirTerm::Outer { left, .. } => left.ncols(),
                DirTerm::Dense(_) => unreachable!(),
            })
            .sum();
        let mut f = Mat::zeros(self.m, total);
        let mut g = Mat::zeros(self.n, total);
        let mut at = 0;
        for t in &self.terms {
            if let DirTerm::Outer { coeff, left, right } = t {
                let k = left.ncols();
                f.columns_mut(at, k).copy_from(&left.scale(*coeff));
                g.columns_mut(at, k).copy_from(right);
                at += k;
            }
        }
        Some((f, g))
    }
}

fn term_dot(a: &DirTerm, b: &DirTerm) -> f64 {
    match (a, b) {
        (DirTerm::Dense(x), DirTerm::Dense(y)) => x.dot(y),
        (DirTerm::Dense(x), DirTerm::Outer { coeff, left, right })
        | (DirTerm::Outer { coeff, left, right }, DirTerm::Dense(x)) => {
            coeff * (x.transpose() * left).dot(right)
        }
        (
            DirTerm::Outer { coeff: c1, left: l1, right: r1 },
            DirTerm::Outer { coeff: c2, left: l2, right: r2 },
        ) => c1 * c2 * (l1.transpose() * l2).dot(&(r1.transpose() * r2)),
    }
}

/// The point being approximated by a retraction: χ = X_base + Δt·L̄.
#[derive(Debug, Clone)]
pub struct AffineTarget {
    pub base: LowRankState,
    pub direction: Direction,
    pub dt: f64,
}

impl AffineTarget {
    pub fn new(base: LowRankState, direction: Direction, dt: f64) -> Self {
        assert_eq!(base.shape(), direction.shape(), "target direction shape mismatch");
        Self { base, direction, dt }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.base.shape()
    }

    /// χ as a factored direction (base + Δt·L̄).
    pub fn chi_direction(&self) -> Direction {
        let mut chi = self.base.as_direction();
        chi.push_direction(&self.direction.clone().scaled(self.dt));
        chi
    }

    /// χ materialized densely.
    pub fn chi_dense(&self) -> Mat {
        self.base.reconstruct() + self.direction.materialize().scale(self.dt)
    }

    pub fn chi_norm(&self) -> f64 {
        self.chi_direction().norm()
    }

    /// The direction d with χ = current + Δt·d, i.e. L̄ − (current − base)/Δt.
    /// Used by gradient-descent iterations that re-target the same χ from a
    /// moved iterate.
    pub fn residual_direction(&self, current: &LowRankState) -> Direction {
        let mut d = self.direction.clone();
        let inv_dt = 1.0 / self.dt;
        d.push_outer_scaled(inv_dt, self.base.u().clone(), self.base.z().clone());
        d.push_outer_scaled(-inv_dt, current.u().clone(), current.z().clone());
        d
    }
}

/// Orthogonal projection of `d` onto the tangent space of M_r at `x`:
/// P d = U·Uᵀd + P_U^⊥·d·Z(ZᵀZ)⁻¹Zᵀ, with the inverse pseudo-solved.
pub fn tangent_project(x: &LowRankState, d: &Mat) -> Result<Mat> {
    debug_assert_eq!(d.shape(), x.shape());
    let u = x.u();
    let z = x.z();
    let ut_d = u.transpose() * d;
    let dz = d * z;
    let dz_perp = &dz - u * (u.transpose() * &dz);
    let zz = z.transpose() * z;
    // U̇ = P_U^⊥ d Z (ZᵀZ)⁻¹, via (ZᵀZ)·U̇ᵀ = (P_U^⊥ d Z)ᵀ.
    let udot = pseudo_right_solve(&zz, &dz_perp)?;
    Ok(u * ut_d + udot * z.transpose())
}

/// Solve x·a = b for symmetric PSD a (i.e. x = b·a⁺) at the default cut.
fn pseudo_right_solve(a: &Mat, b: &Mat) -> Result<Mat> {
    Ok(matcore::pseudo_solve(a, &b.transpose(), crate::retraction::DEFAULT_REL_CUT)?.transpose())
}

/// Exact projection onto M_r: the truncated SVD folded into (U, Z = V·diag(s)).
///
/// This is the oracle every ε_pr computation compares against.
pub fn manifold_project(a: &Mat, r: usize) -> LowRankState {
    let t = matcore::svd_trunc(a, r);
    fold_svd(t)
}

/// Factored-input variant of [`manifold_project`]. Falls back to the dense
/// path when the direction carries a dense block.
pub fn manifold_project_direction(d: &Direction, r: usize) -> LowRankState {
    match d.stacked_factors() {
        None => manifold_project(&d.materialize(), r),
        Some((f, g)) => {
            // Compress via QR of both factors, then SVD of the small core.
            let qf = f.clone().qr();
            let qg = g.clone().qr();
            let core = qf.r() * qg.r().transpose();
            let t = matcore::svd_trunc(&core, r.min(core.nrows().min(core.ncols())));
            let u = qf.q() * &t.u;
            let mut zs = qg.q() * &t.v;
            for (j, mut col) in zs.column_iter_mut().enumerate() {
                col *= t.s[j];
            }
            LowRankState::from_factors(u, zs)
        }
    }
}

/// ‖A − B‖_F for two factored states without materializing either.
///
/// Stacks the factors and compresses through QR first, so the cancellation
/// happens inside a small well-scaled core product; accuracy is
/// O(ε·‖A‖·‖B‖) absolute, good enough to resolve differences near 1e-14
/// relative. A plain Gram expansion would bottom out near √ε.
pub fn state_diff_norm(a: &LowRankState, b: &LowRankState) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let (m, n) = a.shape();
    let (ra, rb) = (a.rank(), b.rank());
    let mut f = Mat::zeros(m, ra + rb);
    f.columns_mut(0, ra).copy_from(a.u());
    f.columns_mut(ra, rb).copy_from(b.u());
    let mut g = Mat::zeros(n, ra + rb);
    g.columns_mut(0, ra).copy_from(a.z());
    g.columns_mut(ra, rb).copy_from(&-b.z());
    let qf = f.qr();
    let qg = g.qr();
    (qf.r() * qg.r().transpose()).norm()
}

fn fold_svd(t: matcore::SvdTrunc) -> LowRankState {
    let mut z = t.v;
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col *= t.s[j];
    }
    LowRankState::from_factors(t.u, z)
}

/// The per-target error metrics of a retraction output.
#[derive(Debug, Clone, Copy)]
pub struct MetricRecord {
    pub eps_pr: f64,
    pub eps_l: f64,
    pub eps_n: f64,
    pub eps_tot: Option<f64>,
}

/// Compute ε_l, ε_pr, ε_N for `x_new` against `target` (dense-oracle path),
/// and ε_tot when a full-rank reference is supplied.
pub fn error_metrics(
    x_new: &LowRankState,
    target: &AffineTarget,
    full: Option<&Mat>,
) -> MetricRecord {
    let chi = target.chi_dense();
    let x_mat = x_new.reconstruct();
    let best = manifold_project(&chi, x_new.rank()).reconstruct();
    MetricRecord {
        eps_l: (&chi - &x_mat).norm(),
        eps_pr: (&x_mat - &best).norm(),
        eps_n: (&chi - &best).norm(),
        eps_tot: full.map(|f| (f - &x_mat).norm()),
    }
}

/// One row of an [`ErrorReport`]; absent metrics serialize as empty CSV fields.
#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    pub t: f64,
    pub rank: usize,
    pub eps_pr: Option<f64>,
    pub eps_l: Option<f64>,
    pub eps_n: Option<f64>,
    pub eps_d: Option<f64>,
    pub eps_tot: Option<f64>,
    pub wall_s: f64,
}

/// Terminal status of an integration run.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// Diverged or hit a numerical failure; records up to `step` are valid.
    DidNotConverge { step: usize, detail: String },
}

/// Time series of error metrics plus rank trajectory for one run.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub records: Vec<StepRecord>,
    pub outcome: RunOutcome,
}

impl Default for ErrorReport {
    fn default() -> Self {
        Self::new()
    }
}

impl ErrorReport {
    pub fn new() -> Self {
        Self { records: Vec::new(), outcome: RunOutcome::Completed }
    }

    pub fn is_dnc(&self) -> bool {
        matches!(self.outcome, RunOutcome::DidNotConverge { .. })
    }

    pub fn final_record(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Mean of a metric over all records where it is present.
    pub fn mean_of<F: Fn(&StepRecord) -> Option<f64>>(&self, metric: F) -> Option<f64> {
        let vals: Vec<f64> = self.records.iter().filter_map(&metric).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Serialize with the fixed schema; `header_comment` records the resolved
    /// configuration and seed so every CSV is self-describing.
    pub fn write_csv(&self, w: &mut impl Write, header_comment: &str) -> std::io::Result<()> {
        writeln!(w, "# {header_comment}")?;
        writeln!(w, "t,rank,eps_pr,eps_l,eps_N,eps_D,eps_tot,wall_s")?;
        for rec in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_float(rec.t),
                rec.rank,
                fmt_opt(rec.eps_pr),
                fmt_opt(rec.eps_l),
                fmt_opt(rec.eps_n),
                fmt_opt(rec.eps_d),
                fmt_opt(rec.eps_tot),
                fmt_float(rec.wall_s),
            )?;
        }
        if let RunOutcome::DidNotConverge { step, detail } = &self.outcome {
            writeln!(w, "# outcome: DNC at step {step}: {detail}")?;
        }
        Ok(())
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.12e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn seeded_mat(seed: u64, m: usize, n: usize) -> Mat {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn random_state(seed: u64, m: usize, n: usize, r: usize) -> LowRankState {
        let u = matcore::orth(&seeded_mat(seed, m, r)).unwrap().q;
        let z = seeded_mat(seed + 1, n, r);
        LowRankState::new(u, z).unwrap()
    }

    #[test]
    fn state_norm_matches_reconstruction() {
        let x = random_state(1, 12, 9, 3);
        assert!((x.norm() - x.reconstruct().norm()).abs() < 1e-12 * x.norm());
    }

    #[test]
    fn direction_ops_match_materialized() {
        let dense = seeded_mat(2, 10, 8);
        let mut d = Direction::dense(dense.clone());
        d.push_outer_scaled(-0.7, seeded_mat(3, 10, 2), seeded_mat(4, 8, 2));
        let full = d.materialize();

        let x = seeded_mat(5, 8, 3);
        assert!((d.mul_right(&x) - &full * &x).norm() < 1e-12 * full.norm());
        let y = seeded_mat(6, 10, 4);
        assert!((d.tr_mul(&y) - full.transpose() * &y).norm() < 1e-12 * full.norm());
        assert!((d.norm() - full.norm()).abs() < 1e-10 * full.norm());
    }

    #[test]
    fn residual_direction_retargets_chi() {
        let base = random_state(7, 14, 10, 3);
        let dir = Direction::dense(seeded_mat(8, 14, 10));
        let dt = 0.3;
        let target = AffineTarget::new(base.clone(), dir, dt);
        let current = random_state(9, 14, 10, 3);
        let resid = target.residual_direction(&current);
        let chi_again = current.reconstruct() + resid.materialize().scale(dt);
        assert!((chi_again - target.chi_dense()).norm() < 1e-12 * target.chi_norm());
    }

    #[test]
    fn tangent_project_fixes_points_of_tangent_space() {
        let x = random_state(10, 15, 11, 4);
        let d = x.reconstruct();
        let p = tangent_project(&x, &d).unwrap();
        assert!((p - &d).norm() < 1e-11 * d.norm());
    }

    #[test]
    fn tangent_project_annihilates_orthogonal_complement() {
        let x = random_state(11, 16, 12, 3);
        // Build d with rows ⊥ col(U) and columns ⊥ col(Z).
        let raw = seeded_mat(12, 16, 12);
        let u = x.u();
        let perp_rows = &raw - u * (u.transpose() * &raw);
        let zq = matcore::orth(x.z()).unwrap().q;
        let d = &perp_rows - (&perp_rows * &zq) * zq.transpose();
        let p = tangent_project(&x, &d).unwrap();
        assert!(p.norm() < 1e-12 * d.norm().max(1.0));
    }

    #[test]
    fn tangent_project_is_idempotent_and_linear() {
        let x = random_state(13, 12, 9, 3);
        let d1 = seeded_mat(14, 12, 9);
        let d2 = seeded_mat(15, 12, 9);
        let p1 = tangent_project(&x, &d1).unwrap();
        let pp1 = tangent_project(&x, &p1).unwrap();
        assert!((&pp1 - &p1).norm() < 1e-10 * p1.norm());
        let combo = tangent_project(&x, &(2.0 * &d1 - 0.5 * &d2)).unwrap();
        let lin = 2.0 * &p1 - 0.5 * tangent_project(&x, &d2).unwrap();
        assert!((combo - lin).norm() < 1e-10 * p1.norm());
    }

    #[test]
    fn manifold_project_identity_when_rank_sufficient() {
        let a = seeded_mat(16, 20, 9) * seeded_mat(17, 9, 15);
        let p = manifold_project(&a, 9);
        assert!((p.reconstruct() - &a).norm() <= 1e-11 * a.norm());
    }

    #[test]
    fn manifold_project_eckart_young_on_diag() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let p = manifold_project(&a, 2);
        assert!(((p.reconstruct() - a).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn manifold_project_direction_matches_dense_path() {
        let mut d = Direction::outer_scaled(1.3, seeded_mat(18, 30, 6), seeded_mat(19, 22, 6));
        d.push_outer_scaled(-0.4, seeded_mat(20, 30, 4), seeded_mat(21, 22, 4));
        let via_factored = manifold_project_direction(&d, 5).reconstruct();
        let via_dense = manifold_project(&d.materialize(), 5).reconstruct();
        assert!((via_factored - via_dense).norm() < 1e-10 * d.norm());
    }

    #[test]
    fn state_diff_norm_matches_dense_and_resolves_tiny_gaps() {
        let a = random_state(30, 25, 18, 4);
        let b = random_state(32, 25, 18, 6);
        let dense = (a.reconstruct() - b.reconstruct()).norm();
        assert!((state_diff_norm(&a, &b) - dense).abs() < 1e-12 * dense.max(1.0));

        // Perturb one entry of Z by 1e-13: the gap must be resolved, not
        // swamped by √ε noise.
        let mut z = a.z().clone();
        z[(0, 0)] += 1e-13;
        let a2 = LowRankState::new(a.u().clone(), z).unwrap();
        let gap = state_diff_norm(&a, &a2);
        assert!(gap > 0.5e-13 && gap < 1.5e-13, "gap {gap:.3e}");
    }

    #[test]
    fn metrics_vanish_for_exact_projection() {
        let base = random_state(22, 18, 13, 4);
        let dir = Direction::dense(seeded_mat(23, 18, 13));
        let target = AffineTarget::new(base, dir, 0.05);
        let best = manifold_project(&target.chi_dense(), 4);
        let m = error_metrics(&best, &target, None);
        assert!(m.eps_pr <= 1e-10 * target.chi_norm());
        // Pythagorean split of the SVD residual.
        let lhs = m.eps_l * m.eps_l;
        let rhs = m.eps_pr * m.eps_pr + m.eps_n * m.eps_n;
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(1e-30));
    }

    #[test]
    fn csv_schema_and_absent_fields() {
        let mut report = ErrorReport::new();
        report.records.push(StepRecord {
            t: 0.5,
            rank: 3,
            eps_l: Some(1e-3),
            ..Default::default()
        });
        let mut buf = Vec::new();
        report.write_csv(&mut buf, "test run").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# test run");
        assert_eq!(lines.next().unwrap(), "t,rank,eps_pr,eps_l,eps_N,eps_D,eps_tot,wall_s");
        let row = lines.next().unwrap();
        assert!(row.starts_with("5.000000000000e-1,3,,1.000000000000e-3,,,,"));
    }
}
