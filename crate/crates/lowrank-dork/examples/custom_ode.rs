//! Integrating a user-defined matrix ODE with the so-DORK and gd-DORK
//! schemes: implement [`RhsOracle`], pick a scheme and an order, and call
//! [`integrate`].
//!
//! The system here is the Sylvester flow dX/dt = A·X + X·B with A, B skew;
//! the flow is norm-preserving but constantly rotates the row and column
//! spaces, so a fixed-rank integrator has to keep updating its bases.
//!
//! Run with `cargo run --release --example custom_ode`.

use lowrank_dork::dork::{full_rank_step, integrate, IntegratorSpec, RhsOracle, Scheme};
use lowrank_dork::experiments::fit_slope;
use lowrank_dork::manifold::{Direction, LowRankState, StepRecord};
use lowrank_dork::matcore::{orth, Mat};
use lowrank_dork::retraction::RobustMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct SylvesterFlow {
    a: Mat,
    b: Mat,
}

impl RhsOracle for SylvesterFlow {
    fn shape(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.nrows())
    }

    fn eval_dense(&self, x: &Mat, _t: f64) -> Mat {
        &self.a * x + x * &self.b
    }

    /// Factored form: A·(UZ^T) + (UZ^T)·B = (AU)·Z^T + U·(B^T Z)^T, so the
    /// integrator never materializes an m x n matrix for stage evaluations.
    fn eval(&self, x: &LowRankState, _t: f64) -> Direction {
        let mut d = Direction::outer_scaled(1.0, &self.a * x.u(), x.z().clone());
        d.push_outer_scaled(1.0, x.u().clone(), self.b.transpose() * x.z());
        d
    }

    fn is_linear(&self) -> bool {
        true
    }
}

fn main() -> lowrank_dork::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut draw = |m: usize, n: usize| Mat::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let skew = |raw: Mat| (raw.clone() - raw.transpose()).scale(0.5);

    let (m, n, r) = (30, 24, 4);
    let rhs = SylvesterFlow { a: skew(draw(m, m)), b: skew(draw(n, n)) };
    let x0 = LowRankState::new(orth(&draw(m, r))?.q, draw(n, r))?;

    // Dense reference on the same grid refinement limit.
    let t_end = 2.0;
    let mut reference = x0.reconstruct();
    let n_ref = 4000;
    for i in 0..n_ref {
        let h = t_end / n_ref as f64;
        reference = full_rank_step(&rhs, &reference, i as f64 * h, h, 4);
    }

    for (label, scheme) in [
        (
            "so-DORK order 2",
            Scheme::SoDork { order: 2, robust: RobustMode::pseudoinverse(), adapt_tol: None },
        ),
        (
            "so-DORK order 3",
            Scheme::SoDork { order: 3, robust: RobustMode::pseudoinverse(), adapt_tol: None },
        ),
        ("gd-DORK order 2", Scheme::GdDork { order: 2, base: lowrank_dork::dork::gd_default_base() }),
        ("projector-splitting", Scheme::ProjectorSplitting),
        ("projected RK2", Scheme::ProjectedRk),
    ] {
        let mut lns = Vec::new();
        let mut lne = Vec::new();
        print!("{label:<20}");
        for n_steps in [25usize, 50, 100] {
            let spec = IntegratorSpec::new(scheme.clone(), t_end / n_steps as f64, (0.0, t_end));
            let (end, report) = integrate(&spec, &rhs, &x0, |obs| StepRecord {
                t: obs.t_new,
                rank: obs.after.rank(),
                ..Default::default()
            })?;
            assert!(!report.is_dnc());
            let err = (end.reconstruct() - &reference).norm() / reference.norm();
            print!("  nt={n_steps}: {err:.3e}");
            lns.push((t_end / n_steps as f64).ln());
            lne.push(err.ln());
        }
        println!("  (slope {:.2})", fit_slope(&lns, &lne));
    }

    println!(
        "\nBoth DORK families hit their nominal orders; the two baselines are\n\
         second order. Factored stage evaluations keep every step at\n\
         O((m+n)r^2) rather than O(mn)."
    );
    Ok(())
}
