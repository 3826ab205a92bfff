//! Independent oracles for the integration-test suites.
//!
//! Everything here is implemented from scratch on purpose: the library's own
//! factorizations are what we are testing, so reference answers come from a
//! one-sided Jacobi SVD, a modified Gram–Schmidt QR, and direct dense
//! formulas instead.

#![allow(dead_code)]

use lowrank_dork::manifold::LowRankState;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = nalgebra::DMatrix<f64>;

/// One-sided (Hestenes) Jacobi SVD: returns `(u, sigma, v)` with
/// `a ≈ u·diag(sigma)·vᵀ`, singular values sorted descending,
/// `k = min(m, n)` columns. Column rotations only — no dependence on any
/// library factorization.
pub fn jacobi_svd(a: &Mat) -> (Mat, Vec<f64>, Mat) {
    if a.nrows() < a.ncols() {
        let (v, s, u) = jacobi_svd(&a.transpose());
        return (u, s, v);
    }
    let m = a.nrows();
    let n = a.ncols();
    let mut b = a.clone();
    let mut v = Mat::identity(n, n);
    let eps = 1e-14;
    for _sweep in 0..80 {
        let mut worst = 0.0f64;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = b.column(p).dot(&b.column(p));
                let beta = b.column(q).dot(&b.column(q));
                let gamma = b.column(p).dot(&b.column(q));
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(rel);
                if rel <= eps {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bip = b[(i, p)];
                    let biq = b[(i, q)];
                    b[(i, p)] = c * bip - s * biq;
                    b[(i, q)] = s * bip + c * biq;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if worst <= eps {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let mut u = Mat::zeros(m, n);
    let mut vs = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        if sigma > 0.0 {
            u.set_column(dst, &(b.column(src) / sigma));
        }
        vs.set_column(dst, &v.column(src));
    }
    (u, s, vs)
}

/// Best rank-`r` approximation of `a`, straight from the Jacobi SVD.
pub fn best_rank(a: &Mat, r: usize) -> Mat {
    let (u, s, v) = jacobi_svd(a);
    let k = r.min(s.len());
    let mut out = Mat::zeros(a.nrows(), a.ncols());
    for j in 0..k {
        out += u.column(j) * v.column(j).transpose() * s[j];
    }
    out
}

/// Modified Gram–Schmidt QR with one reorthogonalization pass.
/// Zero (or numerically dependent) columns stay zero in `q`.
pub fn mgs_qr(a: &Mat) -> (Mat, Mat) {
    let n = a.ncols();
    let mut q = a.clone();
    let mut r = Mat::zeros(n, n);
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.column(i).into_owned();
                let rij = qi.dot(&q.column(j).into_owned());
                r[(i, j)] += rij;
                let col = q.column(j) - &qi * rij;
                q.set_column(j, &col);
            }
        }
        let nrm = q.column(j).norm();
        // Drop directions that lost all their mass to earlier columns.
        if nrm > 1e-12 * a.column(j).norm().max(1.0) {
            r[(j, j)] = nrm;
            let col = q.column(j) / nrm;
            q.set_column(j, &col);
        } else {
            r[(j, j)] = 0.0;
            q.set_column(j, &Mat::zeros(a.nrows(), 1).column(0).into_owned());
        }
    }
    (q, r)
}

/// Dense tangent-space projection at `x = u·zᵀ`:
/// `P(y) = P_U y + (I − P_U) y P_Z` with projectors built from scratch.
pub fn dense_tangent_project(u: &Mat, z: &Mat, y: &Mat) -> Mat {
    let (qz, _) = mgs_qr(z);
    let pu_y = u * (u.transpose() * y);
    let rest = y - &pu_y;
    &pu_y + &rest * (&qz * qz.transpose())
}

/// Seeded standard-normal matrix.
pub fn randn(seed: u64, m: usize, n: usize) -> Mat {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Mat::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
}

/// Scale to unit Frobenius norm.
pub fn unit_fro(a: Mat) -> Mat {
    let n = a.norm();
    if n > 0.0 {
        a / n
    } else {
        a
    }
}

/// Random rank-`r` state with an oracle-orthonormalized basis; the library
/// constructor validates orthonormality on its own.
pub fn random_state(seed: u64, m: usize, n: usize, r: usize) -> LowRankState {
    let (q, _) = mgs_qr(&randn(seed, m, r));
    LowRankState::new(q.columns(0, r).into_owned(), randn(seed.wrapping_add(1), n, r))
        .expect("oracle basis should be orthonormal")
}

/// Degree-`k` Taylor truncation of `(e^{λΔt} − 1)/Δt`: the exact directional
/// increment of the scalar flow `ẋ = λx`, per expansion order.
pub fn scalar_series(lambda: f64, dt: f64, k: usize) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0; // λ^j Δt^{j-1} / j!, starting at j = 1
    for j in 1..=k {
        term *= lambda / j as f64;
        if j > 1 {
            term *= dt;
        }
        sum += term;
    }
    sum
}

/// Second-order central difference of a scalar function.
pub fn central_diff(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t + h) - f(t - h)) / (2.0 * h)
}

/// Frobenius condition-style spread: largest singular value over smallest
/// positive one, via the Jacobi oracle.
pub fn sv_spread(a: &Mat) -> f64 {
    let (_, s, _) = jacobi_svd(a);
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.iter().rev().find(|&&v| v > 0.0).copied().unwrap_or(0.0);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}
