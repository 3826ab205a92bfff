//! Reproducible experiment drivers: a retraction-convergence study, a linear
//! oscillator benchmark, an advection-diffusion PDE, a stochastic
//! Fisher-KPP PDE, and a rank-discovery study. Each driver reads a
//! [`RunConfig`](crate::config::RunConfig), writes self-describing CSVs, and
//! returns a text summary.
//!
//! All randomness flows from a master seed through fixed stream offsets, so
//! identical (config, seed) pairs produce byte-identical outputs.

pub mod advdiff;
pub mod convergence;
pub mod fisher_kpp;
pub mod oscillator;
pub mod rank_discovery;

use std::fs;
use std::path::{Path, PathBuf};

use crate::manifold::ErrorReport;
use crate::Result;

/// What a driver produced: the CSV files it wrote, a human-readable summary,
/// and whether any run ended in a did-not-converge outcome.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub dnc: bool,
}

/// Deterministic per-purpose seed derivation from the master seed.
/// Streams: 0 = problem draw, 1 = Monte Carlo columns, 2 = range finder,
/// 3+ = driver-specific.
pub fn split_seed(master: u64, stream: u64) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .rotate_left(17)
}

/// n log-spaced values from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Least-squares slope of y against x.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Log-log slope of errors against spacings, ignoring points at or below the
/// floor where the fit would only see roundoff.
pub fn fit_loglog_slope(spacings: &[f64], errors: &[f64], floor: f64) -> f64 {
    let pts: (Vec<f64>, Vec<f64>) = spacings
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > floor)
        .map(|(&h, &e)| (h.ln(), e.ln()))
        .unzip();
    assert!(pts.0.len() >= 2, "too few points above the noise floor for a slope fit");
    fit_slope(&pts.0, &pts.1)
}

pub(crate) fn write_report(dir: &Path, stem: &str, report: &ErrorReport, header: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.csv"));
    let mut file = fs::File::create(&path)?;
    report.write_csv(&mut file, header)?;
    Ok(path)
}

pub(crate) fn write_text(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}
