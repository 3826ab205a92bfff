//! Time integrators on the low-rank manifold.
//!
//! The right-hand side of dX/dt = 𝓛(X, t) is expanded per step as a short
//! series Δt·L̄⁽ᵏ⁾ = Σ_{j≤k} Δtʲ·𝓛_j built from Runge-Kutta stages, where
//! each partial sum L̄⁽ʲ⁾ is a j-th-order direction. Order-k integration then
//! reduces to retracting toward χ⁽ᵏ⁾ = X + Δt·L̄⁽ᵏ⁾ with order-matched
//! accuracy, either through series-aware basis corrections (so-DORK) or by a
//! cascade of cheap first-order retractions through the partial-sum targets
//! (gd-DORK).
//!
//! Two standard second-order baselines, the symmetrized projector-splitting
//! sweep and the projected Runge-Kutta scheme, are included for comparisons,
//! plus a dense fixed-step reference integrator.

use std::time::Instant;

use crate::descent::{descend_fixed, DescentConfig};
use crate::manifold::{
    AffineTarget, Direction, ErrorReport, LowRankState, RunOutcome, StepRecord,
};
use crate::matcore::Mat;
use crate::rank_adapt::{rank_adaptive_retract, RankPolicy};
use crate::retraction::{
    optimal_retract, retract_series, robust_first_order, RetractionConfig, RobustMode,
};
use crate::{Error, Result};

/// Right-hand side 𝓛(X, t) of the matrix ODE.
///
/// Implementors should override [`RhsOracle::eval`] when 𝓛 of a factored
/// state has a cheap factored form; the default materializes the state.
pub trait RhsOracle {
    /// (m, n) of the states this oracle accepts.
    fn shape(&self) -> (usize, usize);

    /// 𝓛 evaluated on a dense state.
    fn eval_dense(&self, x: &Mat, t: f64) -> Mat;

    /// 𝓛 evaluated on a factored state.
    fn eval(&self, x: &LowRankState, t: f64) -> Direction {
        Direction::dense(self.eval_dense(&x.reconstruct(), t))
    }

    /// 𝓛 evaluated at an affine combination of factored terms (a point that
    /// need not lie on the manifold). Used for the stage states of linear
    /// right-hand sides, where off-manifold evaluation is exact and cheap.
    fn eval_affine(&self, x: &Direction, t: f64) -> Direction {
        Direction::dense(self.eval_dense(&x.materialize(), t))
    }

    /// True when 𝓛 is linear in X. Linear oracles get exact stage values
    /// (no stage retraction), which preserves convergence orders above two.
    fn is_linear(&self) -> bool {
        false
    }

    /// True when columns are independent stochastic realizations rather than
    /// spatial coordinates (affects how callers aggregate errors, not the
    /// integration itself).
    fn columns_are_samples(&self) -> bool {
        false
    }
}

/// The per-step direction increments 𝓛₁..𝓛_k, scaled so that partial sums
/// telescope exactly: Σ_{j≤p} Δtʲ·𝓛_j = Δt·L̄⁽ᵖ⁾ for every p ≤ k.
#[derive(Debug, Clone)]
pub struct DirectionSeries {
    increments: Vec<Direction>,
    dt: f64,
}

impl DirectionSeries {
    pub fn order(&self) -> usize {
        self.increments.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The increments 𝓛₁..𝓛_k.
    pub fn increments(&self) -> &[Direction] {
        &self.increments
    }

    /// L̄⁽ᵖ⁾ = Σ_{j≤p} Δt^{j−1}·𝓛_j, the order-p direction.
    pub fn partial_sum(&self, p: usize) -> Direction {
        assert!(p >= 1 && p <= self.increments.len());
        let mut out = self.increments[0].clone();
        for j in 2..=p {
            out.push_scaled(self.dt.powi(j as i32 - 1), &self.increments[j - 1]);
        }
        out
    }
}

/// Build the increment series at (x, t) for one step of size dt.
///
/// L̄⁽¹⁾ is the Euler stage, L̄⁽²⁾ the Heun average reusing stage one, L̄⁽³⁾
/// and L̄⁽⁴⁾ the third-order Kutta and classical fourth-order combinations
/// (sharing the half-step stage). For linear right-hand sides each stage is
/// evaluated exactly at its affine target; otherwise stage states are first
/// brought back to the manifold with the span-only first-order retraction,
/// whose O(Δt²) stage perturbation caps the realizable order at two.
pub fn build_series(
    rhs: &(impl RhsOracle + ?Sized),
    x: &LowRankState,
    t: f64,
    dt: f64,
    order: usize,
) -> Result<DirectionSeries> {
    if !(1..=4).contains(&order) {
        return Err(Error::InvalidConfig(format!("series order must be 1..=4, got {order}")));
    }
    let at = |dir: &Direction, h: f64, tau: f64| -> Direction {
        if rhs.is_linear() {
            let mut chi = x.as_direction();
            chi.push_scaled(h, dir);
            rhs.eval_affine(&chi, tau)
        } else {
            rhs.eval(&robust_first_order(x, dir, h).state, tau)
        }
    };

    let k1 = rhs.eval(x, t);
    let mut increments = vec![k1.clone()];

    if order >= 2 {
        // Heun end stage.
        let ke = at(&k1, dt, t + dt);
        // 𝓛₂ = (L̄⁽²⁾ − L̄⁽¹⁾)/Δt = (Ke − K1)/(2Δt).
        let mut l2 = ke.clone().scaled(1.0 / (2.0 * dt));
        l2.push_scaled(-1.0 / (2.0 * dt), &k1);
        increments.push(l2);

        if order >= 3 {
            // Shared half stage, then the Kutta end stage.
            let km = at(&k1, dt / 2.0, t + dt / 2.0);
            let mut kutta_dir = km.clone().scaled(2.0);
            kutta_dir.push_scaled(-1.0, &k1);
            let k3k = at(&kutta_dir, dt, t + dt);
            // 𝓛₃ = (L̄⁽³⁾ − L̄⁽²⁾)/Δt² = (−2K1 + 4Km + K3 − 3Ke)/(6Δt²).
            let c3 = 1.0 / (6.0 * dt * dt);
            let mut l3 = k1.clone().scaled(-2.0 * c3);
            l3.push_scaled(4.0 * c3, &km);
            l3.push_scaled(c3, &k3k);
            l3.push_scaled(-3.0 * c3, &ke);
            increments.push(l3);

            if order == 4 {
                // Second half stage and the end stage of classical RK4.
                let k3c = at(&km, dt / 2.0, t + dt / 2.0);
                let k4 = at(&k3c, dt, t + dt);
                // 𝓛₄ = (L̄⁽⁴⁾ − L̄⁽³⁾)/Δt³ = (−2Km + 2K3c + K4 − K3)/(6Δt³).
                let c4 = 1.0 / (6.0 * dt * dt * dt);
                let mut l4 = km.clone().scaled(-2.0 * c4);
                l4.push_scaled(2.0 * c4, &k3c);
                l4.push_scaled(c4, &k4);
                l4.push_scaled(-c4, &k3k);
                increments.push(l4);
            }
        }
    }
    Ok(DirectionSeries { increments, dt })
}

/// One so-DORK step: series-aware basis corrections up to `order`, then the
/// Z update against the full χ⁽ᵒʳᵈᵉʳ⁾. Satisfies ‖X₊‖ ≤ ‖χ⁽ᵒʳᵈᵉʳ⁾‖.
pub fn step_so_dork(
    x: &LowRankState,
    rhs: &(impl RhsOracle + ?Sized),
    t: f64,
    dt: f64,
    order: usize,
    robust: RobustMode,
) -> Result<LowRankState> {
    let series = build_series(rhs, x, t, dt, order)?;
    let cfg = RetractionConfig { order, robust, adapt_tol: None };
    Ok(retract_series(x, series.increments(), dt, &cfg)?.state)
}

/// The default gd-DORK sub-retraction: one span-only first-order retraction
/// per sub-iteration.
pub fn gd_default_base() -> DescentConfig {
    DescentConfig::fixed(1, RetractionConfig::of_order(1).with_robust(RobustMode::SpanOnly))
}

/// One gd-DORK step of the given order.
///
/// Orders 1 and 2 walk through the partial-sum targets as they become
/// available; orders 3 and 4 precompute the most accurate direction L̄⁽ᵏ⁾ and
/// run all k sub-iterations against it. Each sub-iteration is one retraction
/// with `base.base` (the remaining descent fields are not consulted).
pub fn step_gd_dork(
    x: &LowRankState,
    rhs: &(impl RhsOracle + ?Sized),
    t: f64,
    dt: f64,
    order: usize,
    base: &DescentConfig,
) -> Result<LowRankState> {
    let series = build_series(rhs, x, t, dt, order)?;
    step_gd_dork_on(x, &series, base)
}

fn step_gd_dork_on(
    x: &LowRankState,
    series: &DirectionSeries,
    base: &DescentConfig,
) -> Result<LowRankState> {
    let order = series.order();
    let dt = series.dt();
    if order >= 3 {
        let target = AffineTarget::new(x.clone(), series.partial_sum(order), dt);
        return descend_fixed(x, &target, &DescentConfig { n_iters: order, ..*base });
    }
    let mut cur = x.clone();
    for j in 1..=order {
        let dir_j = series.partial_sum(j);
        if j == 1 {
            cur = optimal_retract(&cur, &dir_j, dt, &base.base)?.state;
        } else {
            let target = AffineTarget::new(x.clone(), dir_j, dt);
            let resid = target.residual_direction(&cur);
            cur = optimal_retract(&cur, &resid, dt, &base.base)?.state;
        }
    }
    Ok(cur)
}

/// Factored state in U·S·Vᵀ form for the projector-splitting sweep.
#[derive(Debug, Clone)]
pub struct UsvState {
    pub u: Mat,
    pub s: Mat,
    pub v: Mat,
}

impl UsvState {
    pub fn from_low_rank(x: &LowRankState) -> Self {
        let qr = x.z().clone().qr();
        Self { u: x.u().clone(), s: qr.r().transpose(), v: qr.q() }
    }

    pub fn to_low_rank(&self) -> LowRankState {
        LowRankState::from_factors(self.u.clone(), &self.v * self.s.transpose())
    }

    pub fn reconstruct(&self) -> Mat {
        &self.u * &self.s * self.v.transpose()
    }
}

fn heun(y0: &Mat, t0: f64, h: f64, f: impl Fn(&Mat, f64) -> Mat) -> Mat {
    let k1 = f(y0, t0);
    let pred = y0 + k1.scale(h);
    let k2 = f(&pred, t0 + h);
    y0 + (k1 + k2).scale(h / 2.0)
}

/// One step of the symmetrized (Strang) projector-splitting sweep:
/// K(h/2), S(−h/2), L(h), S(−h/2), K(h/2), each substep ODE advanced with a
/// single Heun step. Second-order accurate; exact when the dynamics stay in
/// the tangent space.
pub fn step_projector_splitting(
    x: &UsvState,
    rhs: &(impl RhsOracle + ?Sized),
    t: f64,
    dt: f64,
) -> UsvState {
    let h = dt;
    let k_flow = |u_fixed: Option<()>, v: &Mat, k0: &Mat, t0: f64, span: f64| -> Mat {
        let _ = u_fixed;
        heun(k0, t0, span, |k, tau| rhs.eval_dense(&(k * v.transpose()), tau) * v)
    };
    let s_flow = |u: &Mat, v: &Mat, s0: &Mat, t0: f64, span: f64| -> Mat {
        // Backward substep: Ṡ = −Uᵀ𝓛(USVᵀ)V.
        heun(s0, t0, span, |s, tau| {
            -(u.transpose() * rhs.eval_dense(&(u * s * v.transpose()), tau) * v)
        })
    };

    // K half-step.
    let k_half = k_flow(None, &x.v, &(&x.u * &x.s), t, h / 2.0);
    let qr = k_half.clone().qr();
    let (u1, s1) = (qr.q(), qr.r());
    // S backward half-step.
    let s2 = s_flow(&u1, &x.v, &s1, t, h / 2.0);
    // L full step.
    let l_full = heun(&(&x.v * s2.transpose()), t, h, |l, tau| {
        rhs.eval_dense(&(&u1 * l.transpose()), tau).transpose() * &u1
    });
    let qr = l_full.clone().qr();
    let (v1, sl) = (qr.q(), qr.r());
    // S backward half-step.
    let s3 = s_flow(&u1, &v1, &sl.transpose(), t + h / 2.0, h / 2.0);
    // K half-step.
    let k_final = k_flow(None, &v1, &(&u1 * &s3), t + h / 2.0, h / 2.0);
    let qr = k_final.clone().qr();
    UsvState { u: qr.q(), s: qr.r(), v: v1 }
}

/// One projected Runge-Kutta step of order 2: Heun stages with a truncated
/// SVD projection after each stage combination.
pub fn step_projected_rk(
    x: &LowRankState,
    rhs: &(impl RhsOracle + ?Sized),
    t: f64,
    dt: f64,
) -> LowRankState {
    let r = x.rank();
    let k1 = rhs.eval(x, t);
    let mut stage = x.as_direction();
    stage.push_scaled(dt, &k1);
    let y1 = crate::manifold::manifold_project_direction(&stage, r);
    let k2 = rhs.eval(&y1, t + dt);
    let mut combo = x.as_direction();
    combo.push_scaled(dt / 2.0, &k1);
    combo.push_scaled(dt / 2.0, &k2);
    crate::manifold::manifold_project_direction(&combo, r)
}

/// One dense fixed-step Runge-Kutta step (orders 1, 2, 4) for full-rank
/// reference solutions.
pub fn full_rank_step(
    rhs: &(impl RhsOracle + ?Sized),
    x: &Mat,
    t: f64,
    dt: f64,
    order: usize,
) -> Mat {
    match order {
        1 => x + rhs.eval_dense(x, t).scale(dt),
        2 => heun(x, t, dt, |y, tau| rhs.eval_dense(y, tau)),
        4 => {
            let k1 = rhs.eval_dense(x, t);
            let k2 = rhs.eval_dense(&(x + k1.scale(dt / 2.0)), t + dt / 2.0);
            let k3 = rhs.eval_dense(&(x + k2.scale(dt / 2.0)), t + dt / 2.0);
            let k4 = rhs.eval_dense(&(x + k3.scale(dt)), t + dt);
            x + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(dt / 6.0)
        }
        _ => panic!("full-rank reference supports orders 1, 2, 4"),
    }
}

/// Integration scheme selector.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    SoDork { order: usize, robust: RobustMode, adapt_tol: Option<f64> },
    GdDork { order: usize, base: DescentConfig },
    ProjectorSplitting,
    ProjectedRk,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::SoDork { .. } => "so-dork",
            Scheme::GdDork { .. } => "gd-dork",
            Scheme::ProjectorSplitting => "projector-splitting",
            Scheme::ProjectedRk => "projected-rk",
        }
    }

    /// Nominal convergence order (the two baselines are second order).
    pub fn order(&self) -> usize {
        match self {
            Scheme::SoDork { order, .. } | Scheme::GdDork { order, .. } => *order,
            Scheme::ProjectorSplitting | Scheme::ProjectedRk => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Scheme::SoDork { order, robust, adapt_tol } => RetractionConfig {
                order: *order,
                robust: *robust,
                adapt_tol: *adapt_tol,
            }
            .validate(),
            Scheme::GdDork { order, base } => {
                if !(1..=4).contains(order) {
                    return Err(Error::InvalidConfig(format!(
                        "gd-DORK order must be 1..=4, got {order}"
                    )));
                }
                base.validate()
            }
            Scheme::ProjectorSplitting | Scheme::ProjectedRk => Ok(()),
        }
    }
}

/// Per-step rank adaptation wrapped around the integrator's final retraction.
#[derive(Debug, Clone, PartialEq)]
pub struct RankAdaptation {
    pub policy: RankPolicy,
    pub descent: DescentConfig,
}

/// A fixed-step integration job.
#[derive(Debug, Clone)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_span: (f64, f64),
    /// When set, each step retracts through the rank-adaptive path on the
    /// step's total direction L̄⁽ᵏ⁾ (so-DORK / gd-DORK only). The policy seed
    /// is advanced by the step index so augmentations stay decorrelated but
    /// reproducible.
    pub rank: Option<RankAdaptation>,
    /// Measure wall time per step; off by default so runs are byte-stable.
    pub record_timing: bool,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, dt: f64, t_span: (f64, f64)) -> Self {
        Self { scheme, dt, t_span, rank: None, record_timing: false }
    }

    pub fn n_steps(&self) -> usize {
        ((self.t_span.1 - self.t_span.0) / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        let span = self.t_span.1 - self.t_span.0;
        if span < 0.0 {
            return Err(Error::InvalidConfig("t_span end precedes start".into()));
        }
        let n = self.n_steps();
        if span > 0.0 && ((n as f64 * self.dt) - span).abs() > 1e-8 * span.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "t_span length {span} is not an integer multiple of dt {}",
                self.dt
            )));
        }
        if let Some(ra) = &self.rank {
            ra.policy.validate()?;
            ra.descent.validate()?;
            if !matches!(self.scheme, Scheme::SoDork { .. } | Scheme::GdDork { .. }) {
                return Err(Error::InvalidConfig(
                    "rank adaptation is only supported for so-DORK and gd-DORK".into(),
                ));
            }
        }
        Ok(())
    }
}

/// What an observer sees after each completed step (and once at step 0 with
/// `before == after` and a zero target).
pub struct StepObservation<'a> {
    pub step: usize,
    pub t_new: f64,
    pub before: &'a LowRankState,
    pub after: &'a LowRankState,
    /// The affine target χ the step retracted toward. For the splitting and
    /// projected-RK baselines this is the first-order (Euler) target.
    pub target: &'a AffineTarget,
}

/// Run the fixed-step time loop, emitting one [`StepRecord`] per observer
/// call. Numerical failures (ill-conditioning, non-finite states or metrics,
/// norm blow-up) terminate the run with a did-not-converge outcome carrying
/// the partial records rather than an error.
pub fn integrate(
    spec: &IntegratorSpec,
    rhs: &(impl RhsOracle + ?Sized),
    x0: &LowRankState,
    mut observe: impl FnMut(&StepObservation) -> StepRecord,
) -> Result<(LowRankState, ErrorReport)> {
    spec.validate()?;
    let (m, n) = x0.shape();
    if rhs.shape() != (m, n) {
        return Err(Error::InvalidConfig(format!(
            "rhs shape {:?} does not match state shape {:?}",
            rhs.shape(),
            (m, n)
        )));
    }
    let (t0, _) = spec.t_span;
    let n_steps = spec.n_steps();
    let blowup_scale = 1e12 * x0.norm().max(1.0);

    let mut report = ErrorReport::new();
    let mut state = x0.clone();

    let zero_target = AffineTarget::new(state.clone(), Direction::zeros(m, n), spec.dt);
    report.records.push(observe(&StepObservation {
        step: 0,
        t_new: t0,
        before: &state,
        after: &state,
        target: &zero_target,
    }));

    for step in 1..=n_steps {
        let t = t0 + (step - 1) as f64 * spec.dt;
        let started = Instant::now();
        let outcome = step_once(spec, rhs, &state, t, step);
        let (next, target) = match outcome {
            Ok(pair) => pair,
            Err(e) => {
                report.outcome = RunOutcome::DidNotConverge { step, detail: e.to_string() };
                break;
            }
        };
        if !next.is_finite() || next.norm() > blowup_scale {
            report.outcome = RunOutcome::DidNotConverge {
                step,
                detail: format!("state norm {:.3e} no longer finite/bounded", next.norm()),
            };
            break;
        }
        let mut rec = observe(&StepObservation {
            step,
            t_new: t + spec.dt,
            before: &state,
            after: &next,
            target: &target,
        });
        if spec.record_timing {
            rec.wall_s = started.elapsed().as_secs_f64();
        }
        let metrics_finite = [rec.eps_pr, rec.eps_l, rec.eps_n, rec.eps_d, rec.eps_tot]
            .iter()
            .flatten()
            .all(|v| v.is_finite());
        if !metrics_finite {
            report.outcome = RunOutcome::DidNotConverge {
                step,
                detail: "error metric became non-finite".into(),
            };
            break;
        }
        report.records.push(rec);
        state = next;
    }
    Ok((state, report))
}

fn step_once(
    spec: &IntegratorSpec,
    rhs: &(impl RhsOracle + ?Sized),
    x: &LowRankState,
    t: f64,
    step: usize,
) -> Result<(LowRankState, AffineTarget)> {
    let dt = spec.dt;
    match &spec.scheme {
        Scheme::SoDork { order, robust, adapt_tol } => {
            let series = build_series(rhs, x, t, dt, *order)?;
            let target_dir = series.partial_sum(*order);
            let next = match &spec.rank {
                None => {
                    let cfg = RetractionConfig {
                        order: *order,
                        robust: *robust,
                        adapt_tol: *adapt_tol,
                    };
                    retract_series(x, series.increments(), dt, &cfg)?.state
                }
                Some(ra) => adapt_step(x, &target_dir, dt, ra, step)?,
            };
            Ok((next, AffineTarget::new(x.clone(), target_dir, dt)))
        }
        Scheme::GdDork { order, base } => {
            let series = build_series(rhs, x, t, dt, *order)?;
            let target_dir = series.partial_sum(*order);
            let next = match &spec.rank {
                None => step_gd_dork_on(x, &series, base)?,
                Some(ra) => adapt_step(x, &target_dir, dt, ra, step)?,
            };
            Ok((next, AffineTarget::new(x.clone(), target_dir, dt)))
        }
        Scheme::ProjectorSplitting => {
            let euler = rhs.eval(x, t);
            let next = step_projector_splitting(&UsvState::from_low_rank(x), rhs, t, dt);
            Ok((next.to_low_rank(), AffineTarget::new(x.clone(), euler, dt)))
        }
        Scheme::ProjectedRk => {
            let euler = rhs.eval(x, t);
            let next = step_projected_rk(x, rhs, t, dt);
            Ok((next, AffineTarget::new(x.clone(), euler, dt)))
        }
    }
}

fn adapt_step(
    x: &LowRankState,
    target_dir: &Direction,
    dt: f64,
    ra: &RankAdaptation,
    step: usize,
) -> Result<LowRankState> {
    let policy = RankPolicy {
        seed: ra.policy.seed.wrapping_add(step as u64),
        ..ra.policy
    };
    rank_adaptive_retract(x, target_dir, dt, &policy, &ra.descent)
}
