//! Stochastic Fisher-KPP reaction–diffusion benchmark: u_t = u_xx + r·u(1−u)
//! on x ∈ [0,40] with zero-flux boundaries, reaction rate r and the Gaussian
//! initial profile drawn independently per Monte-Carlo column.
//!
//! Time stepping is implicit–explicit: Crank–Nicolson for diffusion around a
//! leapfrog window for the explicit reaction, bootstrapped by one backward-
//! Euler diffusion + forward reaction step. The implicit tridiagonal system
//! is prefactored once and reused for every column and every step.
//!
//! A full Monte-Carlo run provides the reference. Against it the experiment
//! integrates fixed-rank runs retracted with one and two descent iterations,
//! an exact-projection run (truncated SVD of the update each step, the best
//! a fixed-rank closure can do), the per-step best approximation of the MC
//! solution itself (the unavoidable part of the error), and a rank-adaptive
//! run. All error curves are normalized by the MC norm at the final time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::{header_kv, RunConfig};
use crate::descent::{descend_fixed, DescentConfig};
use crate::manifold::{
    manifold_project, AffineTarget, Direction, ErrorReport, LowRankState, RunOutcome, StepRecord,
};
use crate::matcore::Mat;
use crate::rank_adapt::{rank_adaptive_retract, RankPolicy};
use crate::retraction::RetractionConfig;
use crate::{Error, Result};

use super::{split_seed, write_report, ExperimentOutput};

/// Prefactored tridiagonal LU (no pivoting) for repeated right-hand sides.
///
/// Factoring is restricted to diagonally dominant systems, which holds for
/// I − Δt·A with A a discrete Laplacian; dominance makes the elimination
/// unconditionally stable without row exchanges.
#[derive(Debug, Clone)]
pub struct Tridiag {
    /// Elimination multipliers, index 1..n.
    mult: Vec<f64>,
    /// Pivots of the upper factor.
    diag: Vec<f64>,
    /// Original superdiagonal (unchanged by the elimination).
    upper: Vec<f64>,
}

impl Tridiag {
    /// Factor the matrix with subdiagonal `lower[i]` (row i, i ≥ 1), main
    /// diagonal `diag`, superdiagonal `upper[i]` (row i, i ≤ n−2).
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        assert!(n >= 2 && lower.len() == n && upper.len() == n);
        let mut mult = vec![0.0; n];
        let mut piv = vec![0.0; n];
        piv[0] = diag[0];
        for i in 1..n {
            if piv[i - 1].abs() < f64::EPSILON {
                return Err(Error::RankDeficient { pivot: piv[i - 1], tol: f64::EPSILON });
            }
            mult[i] = lower[i] / piv[i - 1];
            piv[i] = diag[i] - mult[i] * upper[i - 1];
        }
        if piv[n - 1].abs() < f64::EPSILON {
            return Err(Error::RankDeficient { pivot: piv[n - 1], tol: f64::EPSILON });
        }
        Ok(Self { mult, diag: piv, upper: upper.to_vec() })
    }

    pub fn solve_in_place(&self, col: &mut [f64]) {
        let n = self.diag.len();
        debug_assert_eq!(col.len(), n);
        for i in 1..n {
            col[i] -= self.mult[i] * col[i - 1];
        }
        col[n - 1] /= self.diag[n - 1];
        for i in (0..n - 1).rev() {
            col[i] = (col[i] - self.upper[i] * col[i + 1]) / self.diag[i];
        }
    }

    /// Solve column-by-column.
    pub fn solve_mat(&self, m: &Mat) -> Mat {
        let mut out = m.clone();
        for mut col in out.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        out
    }
}

/// Discretized stochastic problem: mesh, drawn per-column parameters, the
/// implicit operator factorization, and the explicit half of the splitting.
#[derive(Debug, Clone)]
pub struct FisherKppProblem {
    pub n_x: usize,
    pub n_mc: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub dx: f64,
    /// Reaction rate per column.
    pub rates: Vec<f64>,
    pub x0: Mat,
    /// Diagonals of A = ∂²ₓ with ghost-point zero-flux rows.
    a_lower: Vec<f64>,
    a_diag: Vec<f64>,
    a_upper: Vec<f64>,
    /// Prefactored I − Δt·A.
    solver: Tridiag,
}

impl FisherKppProblem {
    /// Draw `n_mc` independent (a, b, r) triples and build the operators.
    pub fn draw(n_x: usize, n_mc: usize, dt: f64, n_steps: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut amps = Vec::with_capacity(n_mc);
        let mut widths = Vec::with_capacity(n_mc);
        let mut rates = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            amps.push(rng.gen_range(0.2..0.4));
            widths.push(rng.gen_range(0.1..1.1));
            rates.push(rng.gen_range(0.25..0.5));
        }
        Self::with_params(n_x, dt, n_steps, &amps, &widths, &rates)
    }

    /// Build from explicit per-column parameters (u₀ = a·e^{−b·x²}).
    pub fn with_params(
        n_x: usize,
        dt: f64,
        n_steps: usize,
        amps: &[f64],
        widths: &[f64],
        rates: &[f64],
    ) -> Result<Self> {
        assert!(amps.len() == widths.len() && widths.len() == rates.len());
        let n_mc = rates.len();
        let dx = 40.0 / (n_x as f64 - 1.0);
        let x0 = Mat::from_fn(n_x, n_mc, |i, j| {
            let x = i as f64 * dx;
            amps[j] * (-widths[j] * x * x).exp()
        });

        let k = 1.0 / (dx * dx);
        let mut a_lower = vec![k; n_x];
        let mut a_upper = vec![k; n_x];
        let a_diag = vec![-2.0 * k; n_x];
        a_lower[0] = 0.0;
        a_upper[n_x - 1] = 0.0;
        // Ghost-point elimination of the zero-flux condition doubles the
        // off-diagonal neighbor at each end.
        a_upper[0] = 2.0 * k;
        a_lower[n_x - 1] = 2.0 * k;

        let m_lower: Vec<f64> = a_lower.iter().map(|v| -dt * v).collect();
        let m_diag: Vec<f64> = a_diag.iter().map(|v| 1.0 - dt * v).collect();
        let m_upper: Vec<f64> = a_upper.iter().map(|v| -dt * v).collect();
        let solver = Tridiag::factor(&m_lower, &m_diag, &m_upper)?;

        Ok(Self {
            n_x,
            n_mc,
            dt,
            n_steps,
            dx,
            rates: rates.to_vec(),
            x0,
            a_lower,
            a_diag,
            a_upper,
            solver,
        })
    }

    /// f(u)_ij = r_j·u_ij·(1 − u_ij).
    pub fn reaction(&self, u: &Mat) -> Mat {
        let mut out = u.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let r = self.rates[j];
            for v in col.iter_mut() {
                *v = r * *v * (1.0 - *v);
            }
        }
        out
    }

    /// (I + Δt·A)·m, column-wise tridiagonal multiply.
    pub fn apply_explicit_half(&self, m: &Mat) -> Mat {
        let n = self.n_x;
        let dt = self.dt;
        let mut out = Mat::zeros(n, m.ncols());
        for j in 0..m.ncols() {
            for i in 0..n {
                let mut v = (1.0 + dt * self.a_diag[i]) * m[(i, j)];
                if i > 0 {
                    v += dt * self.a_lower[i] * m[(i - 1, j)];
                }
                if i + 1 < n {
                    v += dt * self.a_upper[i] * m[(i + 1, j)];
                }
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Advance the dense Monte-Carlo state one step.
    pub fn mc_step(&self, prev: &Mat, cur: &Mat, first: bool) -> Mat {
        let rhs = if first {
            cur + self.reaction(cur).scale(self.dt)
        } else {
            self.apply_explicit_half(prev) + self.reaction(cur).scale(2.0 * self.dt)
        };
        self.solver.solve_mat(&rhs)
    }

    /// The update direction L̄ = (χ − X^n)/Δt of the implicit–explicit step
    /// as a factored ambient direction from the current state.
    ///
    /// χ = M⁻¹[(I+ΔtA)X^{n−1} + 2Δt·f(X^n)] in the leapfrog regime, and
    /// M⁻¹[X⁰ + Δt·f(X⁰)] on the bootstrap step.
    pub fn step_direction(
        &self,
        prev: &LowRankState,
        cur: &LowRankState,
        first: bool,
    ) -> Direction {
        let inv_dt = 1.0 / self.dt;
        let mut dir = Direction::zeros(self.n_x, self.n_mc);
        let f = self.reaction(&cur.reconstruct());
        if first {
            dir.push_outer_scaled(inv_dt, self.solver.solve_mat(cur.u()), cur.z().clone());
            dir.push_direction(&Direction::dense(self.solver.solve_mat(&f)));
        } else {
            let left = self.solver.solve_mat(&self.apply_explicit_half(prev.u()));
            dir.push_outer_scaled(inv_dt, left, prev.z().clone());
            dir.push_direction(&Direction::dense(self.solver.solve_mat(&f).scale(2.0)));
        }
        dir.push_outer_scaled(-inv_dt, cur.u().clone(), cur.z().clone());
        dir
    }
}

#[derive(Clone)]
enum VariantKind {
    /// descend_fixed with `n_iters` first-order retractions each step.
    Fixed { n_iters: usize },
    /// Truncated SVD of the dense update each step.
    ExactProjection,
    /// Angular rank adaptation with automatic descent.
    Adaptive { policy: RankPolicy, descent: DescentConfig },
}

struct Variant {
    name: String,
    kind: VariantKind,
    prev: LowRankState,
    cur: LowRankState,
    raw: Vec<RawRec>,
    dnc: Option<(usize, String)>,
}

struct RawRec {
    rank: usize,
    err: f64,
    eps_l: Option<f64>,
    eps_pr: Option<f64>,
    eps_n: Option<f64>,
}

impl Variant {
    fn new(name: String, kind: VariantKind, x0: &Mat, rank: usize) -> Self {
        let init = manifold_project(x0, rank);
        Self { name, kind, prev: init.clone(), cur: init, raw: Vec::new(), dnc: None }
    }

    fn advance(&mut self, prob: &FisherKppProblem, step: usize, mc_next: &Mat) {
        if self.dnc.is_some() {
            return;
        }
        let first = step == 0;
        let dir = prob.step_direction(&self.prev, &self.cur, first);
        let target = AffineTarget::new(self.cur.clone(), dir, prob.dt);
        let next = match &self.kind {
            VariantKind::Fixed { n_iters } => descend_fixed(
                &self.cur,
                &target,
                &DescentConfig::fixed(*n_iters, RetractionConfig::default()),
            ),
            VariantKind::ExactProjection => {
                Ok(manifold_project(&target.chi_dense(), self.cur.rank()))
            }
            VariantKind::Adaptive { policy, descent } => {
                let stepped = RankPolicy {
                    seed: policy.seed.wrapping_add(step as u64),
                    ..*policy
                };
                rank_adaptive_retract(&self.cur, &target.direction, prob.dt, &stepped, descent)
            }
        };
        match next {
            Ok(state) if state.is_finite() => {
                let chi = target.chi_dense();
                let x_new = state.reconstruct();
                let best = manifold_project(&chi, state.rank()).reconstruct();
                self.raw.push(RawRec {
                    rank: state.rank(),
                    err: (&x_new - mc_next).norm(),
                    eps_l: Some((&chi - &x_new).norm()),
                    eps_pr: Some((&x_new - &best).norm()),
                    eps_n: Some((&chi - &best).norm()),
                });
                self.prev = std::mem::replace(&mut self.cur, state);
            }
            Ok(_) => self.dnc = Some((step + 1, "non-finite state".into())),
            Err(e) => self.dnc = Some((step + 1, e.to_string())),
        }
    }
}

/// Default comparison set.
pub const DEFAULT_VARIANTS: &[&str] =
    &["gd-1iter", "gd-2iter", "exact-projection", "best-approximation", "adaptive"];

/// Run the benchmark; one CSV per variant plus a final-error summary.
pub fn run_fisher_kpp(cfg: &RunConfig) -> Result<ExperimentOutput> {
    let seed = cfg.seed_or(41);
    let paper = cfg.paper_scale();
    let n_x = cfg.grid.unwrap_or(if paper { 1000 } else { 200 });
    let n_t = cfg.nt.unwrap_or(if paper { 10001 } else { 2001 });
    if n_t < 2 {
        return Err(Error::InvalidConfig("need at least 2 time points".into()));
    }
    let n_mc = cfg.mc.unwrap_or(if paper { 1000 } else { 100 });
    let t1 = cfg.t1.unwrap_or(12.5);
    let n_steps = n_t - 1;
    let dt = t1 / n_steps as f64;
    let rank = cfg.rank.unwrap_or(15);
    let out_dir = cfg.out_dir_or("runs/fisher-kpp");

    let prob = FisherKppProblem::draw(n_x, n_mc, dt, n_steps, split_seed(seed, 1))?;
    let max_rate = prob.rates.iter().cloned().fold(0.0, f64::max);
    if dt * max_rate > 0.5 {
        return Err(Error::InvalidConfig(format!(
            "explicit reaction step unstable: dt*max(r) = {:.3e} > 0.5",
            dt * max_rate
        )));
    }

    let policy = RankPolicy {
        theta_star: cfg.theta_star.unwrap_or(0.05),
        sigma_star: cfg.sigma_star.unwrap_or(1e-12),
        r_inc: cfg.r_inc.unwrap_or(5),
        r_max: cfg.r_max.unwrap_or(30),
        seed: split_seed(seed, 2),
    };
    let descent = DescentConfig::auto(
        cfg.n_max.unwrap_or(8),
        cfg.delta_star.unwrap_or(1e-16),
        RetractionConfig::default(),
    );
    let adaptive_init = policy.r_max.min(29);

    let wanted: Vec<String> = match &cfg.schemes {
        Some(list) => list.clone(),
        None => DEFAULT_VARIANTS.iter().map(|s| s.to_string()).collect(),
    };
    let mut extra_iters: Vec<usize> = Vec::new();
    if let Some(k) = cfg.n_iters {
        if k != 1 && k != 2 {
            extra_iters.push(k);
        }
    }

    let mut variants: Vec<Variant> = Vec::new();
    let mut best_approx_raw: Option<Vec<RawRec>> = None;
    for name in &wanted {
        match name.as_str() {
            "gd-1iter" => variants.push(Variant::new(
                name.clone(),
                VariantKind::Fixed { n_iters: 1 },
                &prob.x0,
                rank,
            )),
            "gd-2iter" => variants.push(Variant::new(
                name.clone(),
                VariantKind::Fixed { n_iters: 2 },
                &prob.x0,
                rank,
            )),
            "exact-projection" => variants.push(Variant::new(
                name.clone(),
                VariantKind::ExactProjection,
                &prob.x0,
                rank,
            )),
            "adaptive" => variants.push(Variant::new(
                name.clone(),
                VariantKind::Adaptive { policy, descent },
                &prob.x0,
                adaptive_init,
            )),
            "best-approximation" => best_approx_raw = Some(Vec::new()),
            other => {
                return Err(Error::InvalidConfig(format!("unknown fisher-kpp variant `{other}`")))
            }
        }
    }
    for k in extra_iters {
        variants.push(Variant::new(
            format!("gd-{k}iter"),
            VariantKind::Fixed { n_iters: k },
            &prob.x0,
            rank,
        ));
    }

    // Initial records (truncation of the initial conditions).
    for v in &mut variants {
        v.raw.push(RawRec {
            rank: v.cur.rank(),
            err: (&prob.x0 - v.cur.reconstruct()).norm(),
            eps_l: None,
            eps_pr: None,
            eps_n: None,
        });
    }
    let push_best = |raw: &mut Vec<RawRec>, mc: &Mat, r: usize| {
        let tail = (mc - manifold_project(mc, r).reconstruct()).norm();
        raw.push(RawRec { rank: r, err: tail, eps_l: None, eps_pr: None, eps_n: Some(tail) });
    };
    if let Some(raw) = best_approx_raw.as_mut() {
        push_best(raw, &prob.x0, rank);
    }

    // Single shared time loop: MC advances first, every variant follows.
    let mut mc_prev = prob.x0.clone();
    let mut mc_cur = prob.x0.clone();
    for step in 0..n_steps {
        let mc_next = prob.mc_step(&mc_prev, &mc_cur, step == 0);
        for v in &mut variants {
            v.advance(&prob, step, &mc_next);
        }
        if let Some(raw) = best_approx_raw.as_mut() {
            push_best(raw, &mc_next, rank);
        }
        mc_prev = std::mem::replace(&mut mc_cur, mc_next);
    }

    let mc_final_norm = mc_cur.norm();
    let to_report = |raw: &[RawRec], dnc: &Option<(usize, String)>| -> ErrorReport {
        let mut report = ErrorReport::new();
        for (i, r) in raw.iter().enumerate() {
            report.records.push(StepRecord {
                t: i as f64 * dt,
                rank: r.rank,
                eps_pr: r.eps_pr.map(|v| v / mc_final_norm),
                eps_l: r.eps_l.map(|v| v / mc_final_norm),
                eps_n: r.eps_n.map(|v| v / mc_final_norm),
                eps_d: None,
                eps_tot: Some(r.err / mc_final_norm),
                wall_s: 0.0,
            });
        }
        if let Some((step, detail)) = dnc {
            report.outcome = RunOutcome::DidNotConverge { step: *step, detail: detail.clone() };
        }
        report
    };

    let mut files = Vec::new();
    let mut final_errs: Vec<(String, Option<f64>, bool)> = Vec::new();
    let base_header = [
        ("experiment", "fisher-kpp".to_string()),
        ("grid", n_x.to_string()),
        ("nt", n_t.to_string()),
        ("mc", n_mc.to_string()),
        ("t1", t1.to_string()),
        ("rank", rank.to_string()),
        ("seed", seed.to_string()),
    ];
    for v in &variants {
        let report = to_report(&v.raw, &v.dnc);
        let mut kv = base_header.to_vec();
        kv.insert(1, ("variant", v.name.clone()));
        let stem = format!("fisher_kpp_{}", v.name.replace('-', "_"));
        files.push(write_report(&out_dir, &stem, &report, &header_kv(&kv))?);
        final_errs.push((
            v.name.clone(),
            report.final_record().and_then(|r| r.eps_tot),
            v.dnc.is_some(),
        ));
    }
    if let Some(raw) = &best_approx_raw {
        let report = to_report(raw, &None);
        let mut kv = base_header.to_vec();
        kv.insert(1, ("variant", "best-approximation".to_string()));
        files.push(write_report(&out_dir, "fisher_kpp_best_approximation", &report, &header_kv(&kv))?);
        final_errs.push((
            "best-approximation".into(),
            report.final_record().and_then(|r| r.eps_tot),
            false,
        ));
    }

    let mut summary = format!(
        "fisher-kpp: {n_x} grid points, {n_t} time points, {n_mc} MC columns, \
         rank {rank}, t in [0,{t1}], seed {seed}\n\
         final errors (|X - MC(T)| / |MC(T)|):\n"
    );
    for (name, err, dnc) in &final_errs {
        match (dnc, err) {
            (true, _) => summary.push_str(&format!("  {name}: DNC\n")),
            (false, Some(e)) => summary.push_str(&format!("  {name}: {e:.3e}\n")),
            (false, None) => summary.push_str(&format!("  {name}: n/a\n")),
        }
    }
    if let Some(v) = variants.iter().find(|v| matches!(v.kind, VariantKind::Adaptive { .. })) {
        let peak = v.raw.iter().map(|r| r.rank).max().unwrap_or(0);
        let last = v.raw.last().map(|r| r.rank).unwrap_or(0);
        summary.push_str(&format!(
            "  adaptive rank: start {} -> peak {peak} -> final {last}\n",
            v.raw.first().map(|r| r.rank).unwrap_or(0)
        ));
    }

    let dnc = variants.iter().any(|v| v.dnc.is_some());
    Ok(ExperimentOutput { files, summary, dnc })
}
