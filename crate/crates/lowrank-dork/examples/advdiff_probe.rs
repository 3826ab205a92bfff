//! Temporary diagnostic: replay the adaptive advection-diffusion run step by
//! step and log every augmentation event (angle at birth, newborn energy
//! fraction after descent, reduce_rank's cull decision).

use lowrank_dork::descent::{descend_fixed, DescentConfig};
use lowrank_dork::dork::build_series;
use lowrank_dork::experiments::advdiff::AdvDiffProblem;
use lowrank_dork::manifold::{manifold_project, AffineTarget};
use lowrank_dork::matcore::sym_eig_asc;
use lowrank_dork::rank_adapt::{augment, departure_angle, reduce_rank, RankPolicy};
use lowrank_dork::retraction::{RetractionConfig, RobustMode};

fn tails(z: &lowrank_dork::matcore::Mat) -> Vec<f64> {
    let gram = z.transpose() * z;
    let (lam, _) = sym_eig_asc(&gram);
    let tot: f64 = lam.iter().map(|v| v.max(0.0)).sum();
    let mut cum = 0.0;
    lam.iter().map(|v| { cum += v.max(0.0); (cum / tot).sqrt() }).collect()
}

fn main() {
    let nu: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let r0: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let prob = AdvDiffProblem::new(128, nu);
    let dt = 2e-3;
    let base_policy =
        RankPolicy { theta_star: 0.1, sigma_star: 2e-3, r_inc: 1, r_max: 20, seed: 1 };
    let descent = DescentConfig::fixed(
        1,
        RetractionConfig::of_order(2).with_robust(RobustMode::pseudoinverse()),
    );
    let mut x = manifold_project(&prob.u0, r0);
    println!("nu={nu} r0={r0}");
    for step in 0..500usize {
        let t = step as f64 * dt;
        let policy = RankPolicy { seed: base_policy.seed.wrapping_add(step as u64), ..base_policy };
        let series = build_series(&prob, &x, t, dt, 2).expect("series");
        let dir = series.partial_sum(2);
        let theta = departure_angle(&x, &dir).expect("angle");
        let fired = x.rank() < policy.r_max && theta > policy.theta_star;
        let (work, wdir) = if fired {
            let aug = augment(&x, &dir, dt, &policy);
            (aug.state, aug.direction)
        } else {
            (x.clone(), dir)
        };
        let target = AffineTarget::new(work.clone(), wdir, dt);
        let stepped = descend_fixed(&work, &target, &descent).expect("descent");
        let pre = tails(stepped.z());
        let reduced = reduce_rank(&stepped, &policy);
        if fired || reduced.rank() != x.rank() {
            println!(
                "step {:>3} t {:.3}: rank {:>2} sin(th) {:.3e} {} newborn_frac {:.3e} -> rank {:>2}",
                step,
                t,
                x.rank(),
                theta.sin(),
                if fired { "AUG" } else { "   " },
                pre[0],
                reduced.rank()
            );
        }
        x = reduced;
    }
}
