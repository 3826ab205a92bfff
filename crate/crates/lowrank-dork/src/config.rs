//! Flat key=value run configuration shared by the CLI, the examples, and the
//! experiment drivers.
//!
//! Every field is optional; unset fields fall back to per-experiment
//! defaults at resolution time. `dump` emits exactly the keys that were set,
//! in canonical order, so `dump(load(f))` is a canonicalized `f`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// All tunables understood by the experiment drivers. `None` means "use the
/// experiment's default for the active scale".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    /// Set by the CLI subcommand, not by file keys.
    pub experiment: String,
    pub schemes: Option<Vec<String>>,
    pub order: Option<usize>,
    pub rank_mode: Option<String>,
    pub rank: Option<usize>,
    pub theta_star: Option<f64>,
    pub sigma_star: Option<f64>,
    pub r_inc: Option<usize>,
    pub r_max: Option<usize>,
    pub n_iters: Option<usize>,
    pub n_max: Option<usize>,
    pub delta_star: Option<f64>,
    pub robust_mode: Option<String>,
    pub rel_cut: Option<f64>,
    pub dt: Option<f64>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub grid: Option<usize>,
    pub mc: Option<usize>,
    pub nt: Option<usize>,
    pub nu: Option<f64>,
    pub eps_l_star: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub paper_scale: Option<bool>,
    pub timing: Option<bool>,
}

/// Canonical key order used by `dump` and the parser's key table.
const KEYS: &[&str] = &[
    "schemes",
    "order",
    "rank_mode",
    "rank",
    "theta_star",
    "sigma_star",
    "r_inc",
    "r_max",
    "n_iters",
    "n_max",
    "delta_star",
    "robust_mode",
    "rel_cut",
    "dt",
    "t0",
    "t1",
    "grid",
    "mc",
    "nt",
    "nu",
    "eps_l_star",
    "seed",
    "out_dir",
    "paper_scale",
    "timing",
];

impl RunConfig {
    /// Parse a flat `key = value` file. Lines may be blank; `#` starts a
    /// comment (full-line or trailing). Unknown keys and malformed values are
    /// reported with their line number.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {line_no}: expected `key = value`, got {raw:?}"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .map_err(|e| Error::InvalidConfig(format!("line {line_no}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Set one field from its textual form. Errors name the offending key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.parse::<T>().map_err(|_| format!("key `{key}`: cannot parse {value:?}"))
        }
        match key {
            "schemes" => {
                let list: Vec<String> =
                    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                if list.is_empty() {
                    return Err(format!("key `schemes`: empty list in {value:?}"));
                }
                self.schemes = Some(list);
            }
            "order" => self.order = Some(num(key, value)?),
            "rank_mode" => {
                if !matches!(value, "fixed" | "adaptive") {
                    return Err(format!("key `rank_mode`: expected fixed|adaptive, got {value:?}"));
                }
                self.rank_mode = Some(value.to_string());
            }
            "rank" => self.rank = Some(num(key, value)?),
            "theta_star" => self.theta_star = Some(num(key, value)?),
            "sigma_star" => self.sigma_star = Some(num(key, value)?),
            "r_inc" => self.r_inc = Some(num(key, value)?),
            "r_max" => self.r_max = Some(num(key, value)?),
            "n_iters" => self.n_iters = Some(num(key, value)?),
            "n_max" => self.n_max = Some(num(key, value)?),
            "delta_star" => self.delta_star = Some(num(key, value)?),
            "robust_mode" => {
                if !matches!(value, "none" | "pseudoinverse" | "span-only") {
                    return Err(format!(
                        "key `robust_mode`: expected none|pseudoinverse|span-only, got {value:?}"
                    ));
                }
                self.robust_mode = Some(value.to_string());
            }
            "rel_cut" => self.rel_cut = Some(num(key, value)?),
            "dt" => self.dt = Some(num(key, value)?),
            "t0" => self.t0 = Some(num(key, value)?),
            "t1" => self.t1 = Some(num(key, value)?),
            "grid" => self.grid = Some(num(key, value)?),
            "mc" => self.mc = Some(num(key, value)?),
            "nt" => self.nt = Some(num(key, value)?),
            "nu" => self.nu = Some(num(key, value)?),
            "eps_l_star" => self.eps_l_star = Some(num(key, value)?),
            "seed" => self.seed = Some(num(key, value)?),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "paper_scale" => self.paper_scale = Some(num(key, value)?),
            "timing" => self.timing = Some(num(key, value)?),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<String> {
        match key {
            "schemes" => self.schemes.as_ref().map(|v| v.join(",")),
            "order" => self.order.map(|v| v.to_string()),
            "rank_mode" => self.rank_mode.clone(),
            "rank" => self.rank.map(|v| v.to_string()),
            "theta_star" => self.theta_star.map(fmt_f64),
            "sigma_star" => self.sigma_star.map(fmt_f64),
            "r_inc" => self.r_inc.map(|v| v.to_string()),
            "r_max" => self.r_max.map(|v| v.to_string()),
            "n_iters" => self.n_iters.map(|v| v.to_string()),
            "n_max" => self.n_max.map(|v| v.to_string()),
            "delta_star" => self.delta_star.map(fmt_f64),
            "robust_mode" => self.robust_mode.clone(),
            "rel_cut" => self.rel_cut.map(fmt_f64),
            "dt" => self.dt.map(fmt_f64),
            "t0" => self.t0.map(fmt_f64),
            "t1" => self.t1.map(fmt_f64),
            "grid" => self.grid.map(|v| v.to_string()),
            "mc" => self.mc.map(|v| v.to_string()),
            "nt" => self.nt.map(|v| v.to_string()),
            "nu" => self.nu.map(fmt_f64),
            "eps_l_star" => self.eps_l_star.map(fmt_f64),
            "seed" => self.seed.map(|v| v.to_string()),
            "out_dir" => self.out_dir.as_ref().map(|v| v.display().to_string()),
            "paper_scale" => self.paper_scale.map(|v| v.to_string()),
            "timing" => self.timing.map(|v| v.to_string()),
            _ => None,
        }
    }

    /// Canonical text form: every explicitly-set key, one per line, in the
    /// fixed key order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = self.get(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }

    /// Overlay: any field set in `over` replaces the value in `self`.
    /// Used to apply CLI flags on top of a config file.
    pub fn merged_with(mut self, over: &RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        take!(
            schemes, order, rank_mode, rank, theta_star, sigma_star, r_inc, r_max, n_iters,
            n_max, delta_star, robust_mode, rel_cut, dt, t0, t1, grid, mc, nt, nu, eps_l_star,
            seed, out_dir, paper_scale, timing
        );
        if !over.experiment.is_empty() {
            self.experiment = over.experiment.clone();
        }
        self
    }

    // Resolved accessors used across experiments.

    pub fn seed_or(&self, default: u64) -> u64 {
        self.seed.unwrap_or(default)
    }

    pub fn out_dir_or(&self, default: &str) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn paper_scale(&self) -> bool {
        self.paper_scale.unwrap_or(false)
    }

    pub fn timing(&self) -> bool {
        self.timing.unwrap_or(false)
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip form keeps dumps readable and stable.
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(v));
    s
}

/// `key=value key=value ...` on one line, for CSV header comments.
pub fn header_kv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.dump(), "");
    }

    #[test]
    fn parses_values_comments_and_whitespace() {
        let cfg = RunConfig::parse(
            "# run setup\n\
             theta_star = 0.1\n\
             schemes = so-dork, gd-dork  # trailing comment\n\
             \n\
             seed=42\n\
             out_dir = runs/osc\n",
        )
        .unwrap();
        assert_eq!(cfg.theta_star, Some(0.1));
        assert_eq!(cfg.schemes.as_deref(), Some(&["so-dork".to_string(), "gd-dork".to_string()][..]));
        assert_eq!(cfg.seed, Some(42));
        assert_eq!(cfg.out_dir.as_deref(), Some(Path::new("runs/osc")));
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let err = RunConfig::parse("dt = 0.1\nbogus = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn malformed_value_is_rejected_with_line_number() {
        let err = RunConfig::parse("dt = fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("dt"), "{msg}");
        let err = RunConfig::parse("rank_mode = sometimes\n").unwrap_err();
        assert!(err.to_string().contains("fixed|adaptive"));
        let err = RunConfig::parse("just a line\n").unwrap_err();
        assert!(err.to_string().contains("key = value"));
    }

    #[test]
    fn dump_load_round_trip_is_canonical() {
        let text = "seed = 7\ndt = 0.002\n# note\nschemes = prk\n";
        let cfg = RunConfig::parse(text).unwrap();
        let dumped = cfg.dump();
        // Canonical order puts schemes before dt before seed.
        assert_eq!(dumped, "schemes = prk\ndt = 0.002\nseed = 7\n");
        let reparsed = RunConfig::parse(&dumped).unwrap();
        assert_eq!(reparsed, cfg);
        assert_eq!(reparsed.dump(), dumped);
    }

    #[test]
    fn cli_overlay_wins() {
        let file = RunConfig::parse("seed = 1\ndt = 0.1\n").unwrap();
        let cli = RunConfig { seed: Some(9), ..Default::default() };
        let merged = file.merged_with(&cli);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.dt, Some(0.1));
    }

    #[test]
    fn duplicate_keys_last_one_wins() {
        let cfg = RunConfig::parse("seed = 1\nseed = 2\n").unwrap();
        assert_eq!(cfg.seed, Some(2));
    }
}
