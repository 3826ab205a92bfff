//! 2-D advection–diffusion on a periodic [0,1]² grid: a background shear
//! plus a Rankine vortex advects a sum of seven Gaussians while diffusion
//! smooths it out. Second-order central differences in space; the low-rank
//! integrators run against a co-integrated dense Heun reference.
//!
//! The comparison table reports time-averaged Frobenius error (normalized by
//! the initial-condition norm) for each scheme at fixed ranks over a short
//! window, and reproduces the exact-inverse breakdown at rank 15 where the
//! Gram matrix becomes numerically singular. The adaptive run records its
//! rank trajectory over a longer default window ([`ADAPTIVE_T1`]): the rank
//! rises while the field wraps around the vortex and falls once diffusion
//! dominates, which takes several transit periods to play out.

use rayon::prelude::*;

use crate::config::{header_kv, RunConfig};
use crate::descent::DescentConfig;
use crate::dork::{full_rank_step, integrate, IntegratorSpec, RankAdaptation, RhsOracle};
use crate::manifold::{error_metrics, manifold_project, StepRecord};
use crate::matcore::{svd_trunc, Mat};
use crate::rank_adapt::RankPolicy;
use crate::retraction::{RetractionConfig, RobustMode};
use crate::{Error, Result};

use super::oscillator::{robust_by_name, scheme_by_name};
use super::{split_seed, write_report, write_text, ExperimentOutput};

/// Advective CFL ceiling; the benchmark setting lands near 1.31, and the
/// schemes in play are stable there, so the guard only rejects genuinely
/// unresolvable configurations.
pub const CFL_LIMIT: f64 = 1.5;

/// Default end time of the adaptive demonstration run when no explicit end
/// time is configured. Rank truncation only activates once diffusion
/// overtakes vortex wind-up, which takes several background-transit periods;
/// the short fixed-rank comparison window contains less than one wrap and
/// never sheds a mode.
pub const ADAPTIVE_T1: f64 = 5.0;

/// Relative singular-value threshold below which velocity-field components
/// are dropped (keeps rank 4 on this flow at the 256×256 reference grid).
pub const VELOCITY_TRUNC: f64 = 0.1;

/// Velocity components always keep at least this many modes. On coarser
/// grids the 10% threshold alone would keep fewer, which visibly weakens
/// the core shear relative to the reference flow; the floor keeps the
/// resolved vortex comparable across grids.
pub const VELOCITY_RANK_FLOOR: usize = 4;

const GAUSS_A: [f64; 7] = [1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0];
const GAUSS_MU_X: [f64; 7] = [0.5, 0.3, 0.354, 0.4, 0.15, 0.65, 0.35];
const GAUSS_MU_Y: [f64; 7] = [0.5, 0.5, 0.5, 0.35, 0.65, 0.25, 0.65];
/// Width table in (1/256)² area units; physical σ² = value/256² on every
/// grid so refinement does not change the continuous problem.
const GAUSS_SIGMA_SQ: [f64; 7] = [200.0, 500.0, 400.0, 400.0, 400.0, 450.0, 450.0];

/// Discretized problem: truncated velocity fields, initial field, mesh.
#[derive(Debug, Clone)]
pub struct AdvDiffProblem {
    pub n: usize,
    pub dx: f64,
    pub nu: f64,
    /// Rank-truncated velocity samples c_x(x_i, y_j), c_y(x_i, y_j).
    pub cx: Mat,
    pub cy: Mat,
    pub velocity_ranks: (usize, usize),
    pub u0: Mat,
}

/// Rankine vortex of circulation scale Γ = 8R/3, core radius R = 1/16,
/// centered at (0.5, 0.5), plus a 4/3 horizontal background in c_x.
fn velocity(x: f64, y: f64) -> (f64, f64) {
    let r_core = 1.0 / 16.0;
    let gamma = 8.0 * r_core / 3.0;
    let xo = x - 0.5;
    let yo = y - 0.5;
    let r_sq = xo * xo + yo * yo;
    let scale = if r_sq.sqrt() < r_core { gamma / (r_core * r_core) } else { gamma / r_sq };
    (4.0 / 3.0 - scale * yo, scale * xo)
}

/// Keep singular values ≥ `VELOCITY_TRUNC`·σ_max (at least
/// `VELOCITY_RANK_FLOOR` of them) and rebuild densely.
fn truncate_field(a: &Mat) -> (Mat, usize) {
    let full = svd_trunc(a, a.nrows().min(a.ncols()));
    let keep = full
        .s
        .iter()
        .take_while(|&&s| s >= VELOCITY_TRUNC * full.s[0])
        .count()
        .max(VELOCITY_RANK_FLOOR)
        .min(full.s.len());
    let mut us = full.u.columns(0, keep).into_owned();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= full.s[j];
    }
    (us * full.v.columns(0, keep).transpose(), keep)
}

impl AdvDiffProblem {
    pub fn new(n: usize, nu: f64) -> Self {
        let dx = 1.0 / n as f64;
        let coord = |i: usize| i as f64 * dx;
        let cx_raw = Mat::from_fn(n, n, |i, j| velocity(coord(i), coord(j)).0);
        let cy_raw = Mat::from_fn(n, n, |i, j| velocity(coord(i), coord(j)).1);
        let (cx, rx) = truncate_field(&cx_raw);
        let (cy, ry) = truncate_field(&cy_raw);
        let u0 = Mat::from_fn(n, n, |i, j| initial_value(coord(i), coord(j)));
        Self { n, dx, nu, cx, cy, velocity_ranks: (rx, ry), u0 }
    }

    /// Δt·max(|c_x| + |c_y|)/Δx over the grid (computed on the truncated
    /// fields actually used in the simulation).
    pub fn cfl(&self, dt: f64) -> f64 {
        let mut speed: f64 = 0.0;
        for (cx, cy) in self.cx.iter().zip(self.cy.iter()) {
            speed = speed.max(cx.abs() + cy.abs());
        }
        dt * speed / self.dx
    }
}

/// L(u) = −(c_x ∘ D_x u + c_y ∘ D_y u) + ν Δu with periodic wrap-around,
/// written as stencil sweeps.
impl RhsOracle for AdvDiffProblem {
    fn shape(&self) -> (usize, usize) {
        (self.n, self.n)
    }

    fn eval_dense(&self, u: &Mat, _t: f64) -> Mat {
        let n = self.n;
        let inv2dx = 1.0 / (2.0 * self.dx);
        let invdx2 = 1.0 / (self.dx * self.dx);
        let mut out = Mat::zeros(n, n);
        for j in 0..n {
            let jm = (j + n - 1) % n;
            let jp = (j + 1) % n;
            for i in 0..n {
                let im = (i + n - 1) % n;
                let ip = (i + 1) % n;
                let ux = (u[(ip, j)] - u[(im, j)]) * inv2dx;
                let uy = (u[(i, jp)] - u[(i, jm)]) * inv2dx;
                let lap = (u[(ip, j)] + u[(im, j)] + u[(i, jp)] + u[(i, jm)]
                    - 4.0 * u[(i, j)])
                    * invdx2;
                out[(i, j)] = -(self.cx[(i, j)] * ux + self.cy[(i, j)] * uy) + self.nu * lap;
            }
        }
        out
    }

    fn is_linear(&self) -> bool {
        true
    }
}

fn initial_value(x: f64, y: f64) -> f64 {
    let mut u = 0.0;
    for k in 0..7 {
        let sigma_sq = GAUSS_SIGMA_SQ[k] / (256.0 * 256.0);
        let dx = x - GAUSS_MU_X[k];
        let dy = y - GAUSS_MU_Y[k];
        u += GAUSS_A[k] * (-(dx * dx + dy * dy) / (2.0 * sigma_sq)).exp();
    }
    u
}

#[derive(Clone)]
enum RunKind {
    Fixed { rank: usize },
    Adaptive { r0: usize, policy: RankPolicy },
}

struct RunResult {
    scheme: String,
    label: String,
    mean_err: Option<f64>,
    dnc: bool,
    rank_path: Vec<usize>,
    path: std::path::PathBuf,
}

#[allow(clippy::too_many_arguments)]
fn one_run(
    prob: &AdvDiffProblem,
    scheme_name: &str,
    order: usize,
    robust: RobustMode,
    kind: &RunKind,
    dt: f64,
    t1: f64,
    out_dir: &std::path::Path,
    seed: u64,
    timing: bool,
) -> Result<RunResult> {
    let (r0, rank_spec, label) = match kind {
        RunKind::Fixed { rank } => (*rank, None, format!("rank{rank}")),
        RunKind::Adaptive { r0, policy } => {
            let descent = DescentConfig::fixed(
                1,
                RetractionConfig::of_order(order).with_robust(RobustMode::pseudoinverse()),
            );
            (*r0, Some(RankAdaptation { policy: *policy, descent }), "adaptive".to_string())
        }
    };
    let x0 = manifold_project(&prob.u0, r0);
    let spec = IntegratorSpec {
        scheme: scheme_by_name(scheme_name, order, robust)?,
        dt,
        t_span: (0.0, t1),
        rank: rank_spec,
        record_timing: timing,
    };
    let u0_norm = prob.u0.norm();
    let mut u_ref = prob.u0.clone();
    let mut t_ref = 0.0;
    let (_, report) = integrate(&spec, prob, &x0, |obs| {
        while t_ref + 0.5 * dt < obs.t_new {
            u_ref = full_rank_step(prob, &u_ref, t_ref, dt, 2);
            t_ref += dt;
        }
        let err = (&u_ref - obs.after.reconstruct()).norm() / u0_norm;
        if obs.step == 0 {
            return StepRecord {
                t: obs.t_new,
                rank: obs.after.rank(),
                eps_tot: Some(err),
                ..Default::default()
            };
        }
        let m = error_metrics(obs.after, obs.target, None);
        StepRecord {
            t: obs.t_new,
            rank: obs.after.rank(),
            eps_pr: Some(m.eps_pr / u0_norm),
            eps_l: Some(m.eps_l / u0_norm),
            eps_n: Some(m.eps_n / u0_norm),
            eps_d: None,
            eps_tot: Some(err),
            wall_s: 0.0,
        }
    })?;
    let stem = format!("advdiff_{scheme_name}_{label}");
    let header = header_kv(&[
        ("experiment", "advdiff".into()),
        ("scheme", scheme_name.into()),
        ("order", order.to_string()),
        ("mode", label.clone()),
        ("grid", prob.n.to_string()),
        ("nu", prob.nu.to_string()),
        ("dt", dt.to_string()),
        ("t1", t1.to_string()),
        ("seed", seed.to_string()),
    ]);
    let path = write_report(out_dir, &stem, &report, &header)?;
    Ok(RunResult {
        scheme: scheme_name.to_string(),
        label,
        mean_err: report.mean_of(|r| r.eps_tot),
        dnc: report.is_dnc(),
        rank_path: report.records.iter().map(|r| r.rank).collect(),
        path,
    })
}

/// Scheme columns of the fixed-rank comparison table.
pub const TABLE_SCHEMES: &[&str] =
    &["prk", "projector-splitting", "classic-exact-inverse", "so-dork", "gd-dork"];

/// Run the benchmark: fixed-rank table rows (default ranks 5 and 15, all
/// table schemes) plus one adaptive so-DORK run, against a dense Heun
/// reference.
pub fn run_advdiff(cfg: &RunConfig) -> Result<ExperimentOutput> {
    let seed = cfg.seed_or(29);
    let paper = cfg.paper_scale();
    let n = cfg.grid.unwrap_or(if paper { 256 } else { 128 });
    let dt = cfg.dt.unwrap_or(if paper { 1e-3 } else { 2e-3 });
    let t1 = cfg.t1.unwrap_or(if paper { 5.0 } else { 1.0 });
    let t1_adaptive = cfg.t1.unwrap_or(ADAPTIVE_T1);
    let nu = cfg.nu.unwrap_or(1e-3);
    let order = cfg.order.unwrap_or(2);
    let rel_cut = cfg.rel_cut.unwrap_or(1e-9);
    let robust = robust_by_name(cfg.robust_mode.as_deref(), rel_cut)?;
    let out_dir = cfg.out_dir_or("runs/advdiff");

    let prob = AdvDiffProblem::new(n, nu);
    let cfl = prob.cfl(dt);
    if cfl > CFL_LIMIT {
        return Err(Error::InvalidConfig(format!(
            "advective CFL {cfl:.3} exceeds the {CFL_LIMIT} limit; reduce dt or coarsen the grid"
        )));
    }

    let policy = RankPolicy {
        theta_star: cfg.theta_star.unwrap_or(0.1),
        sigma_star: cfg.sigma_star.unwrap_or(2e-3),
        r_inc: cfg.r_inc.unwrap_or(1),
        r_max: cfg.r_max.unwrap_or(20),
        seed: split_seed(seed, 2),
    };

    let table_schemes: Vec<String> = match &cfg.schemes {
        Some(list) => list.clone(),
        None => TABLE_SCHEMES.iter().map(|s| s.to_string()).collect(),
    };
    let mut jobs: Vec<(String, RunKind)> = Vec::new();
    match cfg.rank_mode.as_deref() {
        Some("fixed") => {
            for s in &table_schemes {
                jobs.push((s.clone(), RunKind::Fixed { rank: cfg.rank.unwrap_or(5) }));
            }
        }
        Some("adaptive") => {
            jobs.push((
                "so-dork".into(),
                RunKind::Adaptive { r0: cfg.rank.unwrap_or(5), policy },
            ));
        }
        _ => {
            if let Some(rank) = cfg.rank {
                // An explicit rank without a mode means a fixed-rank run.
                for s in &table_schemes {
                    jobs.push((s.clone(), RunKind::Fixed { rank }));
                }
            } else {
                for rank in [5usize, 15] {
                    for s in &table_schemes {
                        jobs.push((s.clone(), RunKind::Fixed { rank }));
                    }
                }
                jobs.push(("so-dork".into(), RunKind::Adaptive { r0: 5, policy }));
            }
        }
    }

    let results: Vec<Result<RunResult>> = jobs
        .par_iter()
        .map(|(scheme, kind)| {
            let t_end = match kind {
                RunKind::Adaptive { .. } => t1_adaptive,
                RunKind::Fixed { .. } => t1,
            };
            one_run(&prob, scheme, order, robust, kind, dt, t_end, &out_dir, seed, cfg.timing())
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }

    let mut files: Vec<std::path::PathBuf> = runs.iter().map(|r| r.path.clone()).collect();

    // Comparison table: rows = fixed ranks, columns = schemes.
    let ranks: Vec<usize> = {
        let mut rs: Vec<usize> = runs
            .iter()
            .filter_map(|r| r.label.strip_prefix("rank").and_then(|v| v.parse().ok()))
            .collect();
        rs.sort_unstable();
        rs.dedup();
        rs
    };
    let mut table = format!(
        "# {}\nr",
        header_kv(&[
            ("experiment", "advdiff-summary".into()),
            ("grid", n.to_string()),
            ("dt", dt.to_string()),
            ("t1", t1.to_string()),
            ("nu", nu.to_string()),
            ("seed", seed.to_string()),
        ])
    );
    for s in &table_schemes {
        table.push_str(&format!(",{s}"));
    }
    table.push('\n');
    for &rank in &ranks {
        table.push_str(&rank.to_string());
        let label = format!("rank{rank}");
        for s in &table_schemes {
            let cell = runs
                .iter()
                .find(|r| r.scheme == *s && r.label == label)
                .map(|r| match (r.dnc, r.mean_err) {
                    (true, _) => "DNC".to_string(),
                    (false, Some(e)) => format!("{e:.12e}"),
                    (false, None) => String::new(),
                })
                .unwrap_or_default();
            table.push_str(&format!(",{cell}"));
        }
        table.push('\n');
    }
    files.push(write_text(&out_dir, "advdiff_summary.csv", &table)?);

    let mut summary = format!(
        "advdiff: {n}x{n} grid, nu {nu}, dt {dt}, t in [0,{t1}], CFL {cfl:.3}, \
         velocity ranks {:?}, seed {seed}\n",
        prob.velocity_ranks
    );
    for &rank in &ranks {
        summary.push_str(&format!("  rank {rank:2}:"));
        let label = format!("rank{rank}");
        for s in &table_schemes {
            if let Some(r) = runs.iter().find(|r| r.scheme == *s && r.label == label) {
                match (r.dnc, r.mean_err) {
                    (true, _) => summary.push_str(&format!("  {s}=DNC")),
                    (false, Some(e)) => summary.push_str(&format!("  {s}={e:.3e}")),
                    _ => {}
                }
            }
        }
        summary.push('\n');
    }
    if let Some(ad) = runs.iter().find(|r| r.label == "adaptive") {
        let r0 = ad.rank_path.first().copied().unwrap_or(0);
        let rmax = ad.rank_path.iter().copied().max().unwrap_or(0);
        let rfin = ad.rank_path.last().copied().unwrap_or(0);
        summary.push_str(&format!(
            "  adaptive ({}, t in [0,{t1_adaptive}]): mean err {}, \
             rank {r0} -> peak {rmax} -> final {rfin}{}\n",
            ad.scheme,
            ad.mean_err.map_or("n/a".into(), |e| format!("{e:.3e}")),
            if ad.dnc { " [DNC]" } else { "" },
        ));
    }

    // In the default comparison table the exact-inverse column is expected
    // to fail at rank 15; that run flags DNC inside its own CSV without
    // marking the whole experiment. A run the user asked for explicitly
    // reports its failure at the top level.
    let expected_dnc =
        |r: &RunResult| r.scheme == "classic-exact-inverse" && r.label == "rank15";
    let default_table =
        cfg.schemes.is_none() && cfg.rank_mode.is_none() && cfg.rank.is_none();
    let dnc = runs.iter().any(|r| r.dnc && !(default_table && expected_dnc(r)));
    Ok(ExperimentOutput { files, summary, dnc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_condition_matches_direct_evaluation() {
        let prob = AdvDiffProblem::new(64, 1e-3);
        // Spot-check against an independent scalar evaluation.
        let (i, j) = (32, 32);
        let (x, y) = (i as f64 / 64.0, j as f64 / 64.0);
        let mut expect = 0.0;
        for k in 0..7 {
            let s2 = GAUSS_SIGMA_SQ[k] / 65536.0;
            expect += GAUSS_A[k]
                * (-((x - GAUSS_MU_X[k]).powi(2) + (y - GAUSS_MU_Y[k]).powi(2)) / (2.0 * s2))
                    .exp();
        }
        assert!((prob.u0[(i, j)] - expect).abs() < 1e-14);
        // The central Gaussian peaks at 1 there; neighbors contribute little.
        assert!(prob.u0[(i, j)] > 1.0);
    }

    #[test]
    fn velocity_fields_truncate_to_low_rank() {
        let prob = AdvDiffProblem::new(128, 1e-3);
        // The vortex spectrum decays fast once the uniform background and
        // the leading swirl mode are captured, so the rank floor is what
        // holds each component at four modes here.
        assert_eq!(prob.velocity_ranks, (4, 4));
        // The uniform background appears only in c_x: the swirl has zero
        // mean over the square, so the domain means isolate it.
        let n = 128;
        let (mut mx, mut my) = (0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let (cx, cy) = velocity(i as f64 / n as f64, j as f64 / n as f64);
                mx += cx;
                my += cy;
            }
        }
        mx /= (n * n) as f64;
        my /= (n * n) as f64;
        assert!((mx - 4.0 / 3.0).abs() < 0.02, "mean c_x {mx}");
        assert!(my.abs() < 0.02, "mean c_y {my}");
    }

    #[test]
    fn cfl_sits_below_the_guard_at_benchmark_settings() {
        let prob = AdvDiffProblem::new(128, 1e-3);
        let cfl = prob.cfl(2e-3);
        assert!(cfl > 1.0 && cfl < CFL_LIMIT, "CFL {cfl}");
        assert!(prob.cfl(4e-3) > CFL_LIMIT);
    }

    #[test]
    fn stencil_matches_spectral_identity_on_plane_waves() {
        // For u = cos(2πk x_i) constant in y, the stencil reduces to the
        // exact 1-D finite-difference symbol.
        let n = 32;
        let prob = AdvDiffProblem::new(n, 2e-2);
        let k = 3.0;
        let u = Mat::from_fn(n, n, |i, _| (2.0 * std::f64::consts::PI * k * i as f64 / n as f64).cos());
        let out = prob.eval_dense(&u, 0.0);
        let dx = prob.dx;
        let w = 2.0 * std::f64::consts::PI * k;
        for j in [0usize, 7, 19] {
            for i in [0usize, 5, 21] {
                let x = i as f64 * dx;
                let ux = -(w * x).sin() * (w * dx).sin() / dx;
                let lap = (w * x).cos() * 2.0 * ((w * dx).cos() - 1.0) / (dx * dx);
                let expect = -prob.cx[(i, j)] * ux + prob.nu * lap;
                assert!(
                    (out[(i, j)] - expect).abs() < 1e-10,
                    "stencil mismatch at ({i},{j}): {} vs {expect}",
                    out[(i, j)]
                );
            }
        }
    }

    #[test]
    fn mass_is_conserved_by_advection_and_diffusion() {
        // Periodic conservative dynamics: ∫u is invariant for the dense rhs
        // only when the velocity field is divergence-free; the truncated
        // field is not exactly so, but diffusion alone must conserve mass.
        let n = 48;
        let prob = AdvDiffProblem::new(n, 5e-3);
        let zero_adv = AdvDiffProblem { cx: Mat::zeros(n, n), cy: Mat::zeros(n, n), ..prob };
        let rate = zero_adv.eval_dense(&zero_adv.u0, 0.0);
        assert!(rate.sum().abs() < 1e-9 * zero_adv.u0.sum().abs());
    }
}
