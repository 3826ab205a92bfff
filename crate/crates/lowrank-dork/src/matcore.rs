//! Dense-matrix kernels used by every other module.
//!
//! Thin, deterministic wrappers over [`nalgebra`]: orthonormalization with a
//! fixed sign convention, truncated SVD, a randomized range finder, symmetric
//! eigendecomposition in ascending order, and a pseudoinverse solve for
//! symmetric positive-semidefinite systems. Determinism matters because runs
//! must be bit-reproducible for a fixed seed, so every factorization gets a
//! canonical sign fix and ties are broken by original index.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Dense column-major matrix of f64. All public kernels keep entries finite.
pub type Mat = DMatrix<f64>;

/// Result of [`orth`]: `q` has orthonormal columns spanning col(input) and
/// `input · g = q` when the input has full column rank.
#[derive(Debug, Clone)]
pub struct OrthResult {
    pub q: Mat,
    pub g: Mat,
}

/// Rank-`k` truncated SVD, singular values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdTrunc {
    pub u: Mat,
    pub s: DVector<f64>,
    pub v: Mat,
}

impl SvdTrunc {
    /// Reconstruct the rank-k approximation u·diag(s)·vᵀ.
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        &us * self.v.transpose()
    }
}

/// Relative pivot tolerance below which `orth` declares rank deficiency.
const ORTH_PIVOT_RTOL: f64 = 1e-13;

/// Orthonormalize the columns of `a` (m×r, m ≥ r) by Householder QR.
///
/// The sign convention makes the diagonal of the triangular factor
/// nonnegative, so the output is deterministic. Fails with
/// [`Error::RankDeficient`] when the smallest pivot magnitude falls below
/// `1e-13·‖a‖`.
pub fn orth(a: &Mat) -> Result<OrthResult> {
    let (m, r) = a.shape();
    let norm_a = a.norm();
    if r > m {
        return Err(Error::RankDeficient { pivot: 0.0, tol: ORTH_PIVOT_RTOL * norm_a });
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut rr = qr.r();

    // Canonical signs: flip so every R diagonal entry is nonnegative.
    for i in 0..r {
        if rr[(i, i)] < 0.0 {
            rr.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }

    let tol = ORTH_PIVOT_RTOL * norm_a;
    let pivot = (0..r).map(|i| rr[(i, i)]).fold(f64::INFINITY, f64::min);
    if pivot <= tol {
        return Err(Error::RankDeficient { pivot, tol });
    }

    // a = q·rr, so g = rr⁻¹ maps the input onto q.
    let g = rr
        .solve_upper_triangular(&Mat::identity(r, r))
        .ok_or(Error::RankDeficient { pivot, tol })?;
    Ok(OrthResult { q, g })
}

/// Best rank-`k` approximation of `a` in Frobenius norm (Eckart-Young).
///
/// Panics only if the underlying SVD iteration fails to converge, which does
/// not happen for finite input.
pub fn svd_trunc(a: &Mat, k: usize) -> SvdTrunc {
    let (m, n) = a.shape();
    assert!(k <= m.min(n), "svd_trunc: k = {k} exceeds min(m,n) = {}", m.min(n));
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .expect("svd_trunc: SVD did not converge");
    let u_full = svd.u.expect("svd u requested");
    let vt_full = svd.v_t.expect("svd v_t requested");
    let s_full = svd.singular_values;

    // Sort descending; stable in the original index for repeated values.
    let mut idx: Vec<usize> = (0..s_full.len()).collect();
    idx.sort_by(|&i, &j| s_full[j].partial_cmp(&s_full[i]).unwrap().then(i.cmp(&j)));

    let mut u = Mat::zeros(m, k);
    let mut v = Mat::zeros(n, k);
    let mut s = DVector::zeros(k);
    for (col, &src) in idx.iter().take(k).enumerate() {
        u.set_column(col, &u_full.column(src));
        v.set_column(col, &vt_full.row(src).transpose());
        s[col] = s_full[src];
    }
    canonicalize_pair_signs(&mut u, Some(&mut v));
    SvdTrunc { u, s, v }
}

/// Semi-orthonormal basis approximately capturing the top-`k` left singular
/// subspace of `a`, via the standard randomized range finder (Gaussian test
/// matrix, no power iterations). Deterministic for a fixed `seed`.
pub fn rand_range(a: &Mat, k: usize, oversample: usize, seed: u64) -> Mat {
    let (m, n) = a.shape();
    let p = (k + oversample).min(m.min(n));
    assert!(k <= p, "rand_range: k = {k} exceeds min(m,n) = {}", m.min(n));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let omega = Mat::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let y = a * omega;
    // SVD instead of QR: stays orthonormal even when a has rank < k.
    let svd = y
        .try_svd(true, false, f64::EPSILON, 0)
        .expect("rand_range: SVD did not converge");
    let u_full = svd.u.expect("svd u requested");
    let s_full = svd.singular_values;
    let mut idx: Vec<usize> = (0..s_full.len()).collect();
    idx.sort_by(|&i, &j| s_full[j].partial_cmp(&s_full[i]).unwrap().then(i.cmp(&j)));
    let mut q = Mat::zeros(m, k);
    for (col, &src) in idx.iter().take(k).enumerate() {
        q.set_column(col, &u_full.column(src));
    }
    canonicalize_pair_signs(&mut q, None);
    q
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
///
/// The input is symmetrized as (a+aᵀ)/2 first; callers must not rely on the
/// skew part. Ties keep their original order and every eigenvector gets a
/// canonical sign, so the output is deterministic.
pub fn sym_eig_asc(a: &Mat) -> (DVector<f64>, Mat) {
    let r = a.nrows();
    debug_assert_eq!(r, a.ncols(), "sym_eig_asc requires a square matrix");
    debug_assert!(
        (a - a.transpose()).norm() <= 1e-10 * a.norm().max(1e-300),
        "sym_eig_asc input deviates from symmetry beyond tolerance"
    );
    let sym = (a + a.transpose()).scale(0.5);
    let eig = sym.symmetric_eigen();

    let mut idx: Vec<usize> = (0..r).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap().then(i.cmp(&j)));

    let mut vals = DVector::zeros(r);
    let mut vecs = Mat::zeros(r, r);
    for (col, &src) in idx.iter().enumerate() {
        vals[col] = eig.eigenvalues[src];
        vecs.set_column(col, &eig.eigenvectors.column(src));
    }
    canonicalize_pair_signs(&mut vecs, None);
    (vals, vecs)
}

/// Least-squares / minimum-norm solve of `a·x = b` for symmetric PSD `a`,
/// truncating eigenvalues below `rel_cut·λ_max(a)`.
///
/// The full-rank path runs the Cholesky-from-QR recipe: eigendecompose,
/// QR-factor √Λ·Vᵀ so that a = RᵀR, then forward/backward substitution. The
/// truncated path applies the spectral pseudoinverse of the kept part.
pub fn pseudo_solve(a: &Mat, b: &Mat, rel_cut: f64) -> Result<Mat> {
    let r = a.nrows();
    debug_assert_eq!(r, b.nrows(), "pseudo_solve: dimension mismatch");
    debug_assert!(rel_cut > 0.0 && rel_cut < 1.0, "pseudo_solve: rel_cut must be in (0,1)");
    let (vals, vecs) = sym_eig_asc(a);
    let lam_max = vals[r - 1];
    if lam_max <= 0.0 {
        if b.norm() > 0.0 {
            return Err(Error::ZeroMatrix);
        }
        return Ok(Mat::zeros(r, b.ncols()));
    }
    let cutoff = rel_cut * lam_max;
    let first_kept = vals.iter().position(|&v| v > cutoff).unwrap_or(r);
    let kept = r - first_kept;

    if kept == r {
        // a = WᵀW with W = √Λ·Vᵀ; QR of W gives the Cholesky factor R.
        let mut w = vecs.transpose();
        for i in 0..r {
            w.row_mut(i).scale_mut(vals[i].sqrt());
        }
        let qr = w.qr();
        let mut rr = qr.r();
        for i in 0..r {
            if rr[(i, i)] < 0.0 {
                rr.row_mut(i).neg_mut();
            }
        }
        let y = rr
            .transpose()
            .solve_lower_triangular(b)
            .ok_or(Error::ZeroMatrix)?;
        let x = rr.solve_upper_triangular(&y).ok_or(Error::ZeroMatrix)?;
        return Ok(x);
    }

    // Truncated spectral pseudoinverse: x = V_kept Λ_kept⁻¹ V_keptᵀ b.
    let v_kept = vecs.columns(first_kept, kept).into_owned();
    let mut vt_b = v_kept.transpose() * b;
    for i in 0..kept {
        vt_b.row_mut(i).scale_mut(1.0 / vals[first_kept + i]);
    }
    Ok(v_kept * vt_b)
}

/// Flip column signs so the largest-magnitude entry of each `u` column is
/// positive (ties to the lowest index); apply the same flips to `v` when the
/// columns come in (uᵢ, vᵢ) pairs whose product must be preserved.
fn canonicalize_pair_signs(u: &mut Mat, mut v: Option<&mut Mat>) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            if let Some(vm) = v.as_deref_mut() {
                vm.column_mut(j).neg_mut();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seeded_mat(seed: u64, m: usize, n: usize) -> Mat {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn orth_identity_scaling() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let res = orth(&a).unwrap();
        assert!((res.q - Mat::identity(2, 2)).norm() < 1e-14);
        let g_expected = Mat::from_diagonal(&DVector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!((res.g - g_expected).norm() < 1e-14);
    }

    #[test]
    fn orth_repeated_column_is_rank_deficient() {
        let mut a = seeded_mat(1, 6, 3);
        let c0 = a.column(0).into_owned();
        a.set_column(2, &c0);
        assert!(matches!(orth(&a), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn orth_random_matches_input_span() {
        let a = seeded_mat(2, 10, 3);
        let res = orth(&a).unwrap();
        assert!((res.q.transpose() * &res.q - Mat::identity(3, 3)).norm() < 1e-12 * 3.0);
        // input·g = q and q spans col(a): projector applied to a is a itself.
        assert!((&a * &res.g - &res.q).norm() < 1e-12);
        let proj_a = &res.q * (res.q.transpose() * &a);
        assert!((proj_a - &a).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn svd_trunc_diag() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let t = svd_trunc(&a, 2);
        assert!((t.s[0] - 3.0).abs() < 1e-12 && (t.s[1] - 2.0).abs() < 1e-12);
        assert!((a - t.reconstruct()).norm() - 1.0 < 1e-12);
    }

    #[test]
    fn svd_trunc_full_rank_reconstructs() {
        let a = seeded_mat(3, 8, 5);
        let t = svd_trunc(&a, 5);
        assert!((a.clone() - t.reconstruct()).norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn svd_trunc_exact_low_rank() {
        let a = seeded_mat(4, 30, 5) * seeded_mat(5, 5, 20);
        let t = svd_trunc(&a, 5);
        assert!((a.clone() - t.reconstruct()).norm() <= 1e-10 * a.norm());
        assert!((t.u.transpose() * &t.u - Mat::identity(5, 5)).norm() < 1e-12 * 5.0);
        assert!((t.v.transpose() * &t.v - Mat::identity(5, 5)).norm() < 1e-12 * 5.0);
    }

    #[test]
    fn rand_range_captures_exact_rank() {
        let a = seeded_mat(6, 40, 4) * seeded_mat(7, 4, 25);
        let q = rand_range(&a, 4, 5, 99);
        let resid = &a - &q * (q.transpose() * &a);
        assert!(resid.norm() <= 1e-8 * a.norm());
    }

    #[test]
    fn rand_range_zero_matrix_gives_orthonormal_basis() {
        let a = Mat::zeros(10, 6);
        let q = rand_range(&a, 3, 2, 7);
        assert!((q.transpose() * &q - Mat::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn rand_range_deterministic() {
        let a = seeded_mat(8, 20, 12);
        let q1 = rand_range(&a, 5, 5, 1234);
        let q2 = rand_range(&a, 5, 5, 1234);
        assert_eq!(q1.as_slice(), q2.as_slice());
    }

    #[test]
    fn sym_eig_ascending_diag() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let (vals, _) = sym_eig_asc(&a);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eig_identity_reconstructs() {
        let a = Mat::identity(3, 3);
        let (vals, vecs) = sym_eig_asc(&a);
        let rec = &vecs * Mat::from_diagonal(&vals) * vecs.transpose();
        assert!((rec - a).norm() < 1e-12);
    }

    #[test]
    fn sym_eig_matches_singular_values_squared() {
        let z = seeded_mat(9, 15, 6);
        let (vals, vecs) = sym_eig_asc(&(z.transpose() * &z));
        let gram = z.transpose() * &z;
        assert!((&gram * &vecs - &vecs * Mat::from_diagonal(&vals)).norm() <= 1e-10 * gram.norm());
        let sv = svd_trunc(&z, 6);
        for i in 0..6 {
            let expected = sv.s[5 - i] * sv.s[5 - i];
            assert!((vals[i] - expected).abs() <= 1e-9 * expected.max(1e-30));
        }
    }

    #[test]
    fn pseudo_solve_identity() {
        let a = Mat::identity(4, 4);
        let b = seeded_mat(10, 4, 3);
        let x = pseudo_solve(&a, &b, 1e-9).unwrap();
        assert!((x - b).norm() < 1e-12);
    }

    #[test]
    fn pseudo_solve_truncates_null_space() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let b = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let x = pseudo_solve(&a, &b, 1e-9).unwrap();
        assert!((x - b).norm() < 1e-12);
    }

    #[test]
    fn pseudo_solve_zero_matrix_errors() {
        let a = Mat::zeros(3, 3);
        let b = Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(matches!(pseudo_solve(&a, &b, 1e-9), Err(Error::ZeroMatrix)));
        let zero_b = Mat::zeros(3, 1);
        assert!(pseudo_solve(&a, &zero_b, 1e-9).unwrap().norm() == 0.0);
    }

    #[test]
    fn pseudo_solve_matches_direct_solve_when_well_conditioned() {
        let g = seeded_mat(11, 6, 6);
        let a = &g * g.transpose() + Mat::identity(6, 6);
        let b = seeded_mat(12, 6, 2);
        let x = pseudo_solve(&a, &b, 1e-12).unwrap();
        let direct = a.clone().lu().solve(&b).unwrap();
        assert!((x - direct).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn pseudo_solve_projects_onto_range() {
        // Rank-2 PSD 4×4: a·a⁺·b must equal the projection of b onto range(a).
        let g = seeded_mat(13, 4, 2);
        let a = &g * g.transpose();
        let b = seeded_mat(14, 4, 1);
        let x = pseudo_solve(&a, &b, 1e-12).unwrap();
        let q = orth(&g).unwrap().q;
        let proj_b = &q * (q.transpose() * &b);
        assert!((&a * x - proj_b).norm() <= 1e-9 * b.norm());
    }
}
