//! Experiment configuration: defaults, flat-file loading, flag overrides.
//!
//! Every field is a scalar (or a flat list), so the on-disk format is a flat
//! TOML file with optional keys. Precedence is command-line flag over file
//! over built-in default. All domain constraints from the statistics and
//! quadrature layers are re-checked here at load time so a bad value fails
//! before any trial runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_trial_seed;
use crate::{EnsembleConfig64, ModelParams64};

/// A fully resolved experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Matrix dimension (even, positive).
    pub n: usize,
    /// Strength of the external source.
    pub rho: f64,
    /// Number of Monte Carlo trials.
    pub trials: usize,
    /// Master seed; per-trial seeds are derived from it.
    pub master_seed: u64,
    /// Band widening epsilon for the rigidity guides.
    pub epsilon: f64,
    /// Left edge of the counting sup window (must exceed 1).
    pub s: f64,
    /// Right edge of the counting sup window and of the figure tables.
    pub x_max: f64,
    /// First index of the point sup window (at least 2).
    pub k0: usize,
    /// Exponential-moment parameter.
    pub gamma: f64,
    /// Abscissas for the exponential-moment ratio.
    pub s_grid: Vec<f64>,
    /// Index standardized by the point CLT; the counting CLT uses the
    /// matching abscissa `mu_inv(clt_k)`.
    pub clt_k: usize,
    /// Directory all reports and tables are written into.
    pub output_dir: PathBuf,
    /// Worker thread count. Not echoed into reports: results are identical
    /// for any value.
    pub threads: usize,
}

/// The same fields, all optional: what a config file may specify.
/// Unknown keys are an error so a typo cannot silently revert a field to
/// its default.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub trials: Option<usize>,
    pub master_seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub s: Option<f64>,
    pub x_max: Option<f64>,
    pub k0: Option<usize>,
    pub gamma: Option<f64>,
    pub s_grid: Option<Vec<f64>>,
    pub clt_k: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Command-line overrides; `None` means the flag was not given.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub trials: Option<usize>,
    pub master_seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let n = 400;
        ExperimentConfig {
            n,
            rho: 0.0,
            trials: 200,
            master_seed: 42,
            epsilon: 0.05,
            s: 5.0,
            x_max: default_x_max(n),
            k0: 2,
            gamma: 0.5,
            s_grid: vec![8.0, 12.0, 16.0, 20.0],
            clt_k: 25,
            output_dir: PathBuf::from("out"),
            threads: 1,
        }
    }
}

/// Default sup-window edge: a tenth of the rescaled spectral span `n^(3/4)`.
fn default_x_max(n: usize) -> f64 {
    let nf = n as f64;
    (nf * nf.sqrt()).sqrt() / 10.0
}

impl ExperimentConfig {
    /// Loads a file (if given), applies overrides, fills defaults, validates.
    ///
    /// `x_max` defaults from the *resolved* `n`, so overriding `n` on the
    /// command line moves the default window with it.
    pub fn resolve(file: Option<&Path>, over: &Overrides) -> Result<Self> {
        let file_cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str::<FileConfig>(&text)?
            }
            None => FileConfig::default(),
        };
        let defaults = ExperimentConfig::default();
        let n = over.n.or(file_cfg.n).unwrap_or(defaults.n);
        let config = ExperimentConfig {
            n,
            rho: over.rho.or(file_cfg.rho).unwrap_or(defaults.rho),
            trials: over.trials.or(file_cfg.trials).unwrap_or(defaults.trials),
            master_seed: over
                .master_seed
                .or(file_cfg.master_seed)
                .unwrap_or(defaults.master_seed),
            epsilon: over.epsilon.or(file_cfg.epsilon).unwrap_or(defaults.epsilon),
            s: file_cfg.s.unwrap_or(defaults.s),
            x_max: file_cfg.x_max.unwrap_or_else(|| default_x_max(n)),
            k0: file_cfg.k0.unwrap_or(defaults.k0),
            gamma: file_cfg.gamma.unwrap_or(defaults.gamma),
            s_grid: file_cfg.s_grid.unwrap_or(defaults.s_grid),
            clt_k: file_cfg.clt_k.unwrap_or(defaults.clt_k),
            output_dir: over
                .output_dir
                .clone()
                .or(file_cfg.output_dir)
                .unwrap_or(defaults.output_dir),
            threads: over.threads.or(file_cfg.threads).unwrap_or(defaults.threads),
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks every downstream domain constraint with a message naming the
    /// offending field.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % 2 != 0 {
            return Err(Error::config(format!(
                "n must be a positive even integer (the spectrum splits into \
                 symmetric halves), got {}",
                self.n
            )));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1".to_string()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!(
                "epsilon must be finite and positive, got {}",
                self.epsilon
            )));
        }
        if !(self.s > 1.0) || !self.s.is_finite() {
            return Err(Error::config(format!(
                "s must be finite and > 1 (ln s must be positive), got {}",
                self.s
            )));
        }
        if !(self.x_max > self.s) || !self.x_max.is_finite() {
            return Err(Error::config(format!(
                "x_max must be finite and exceed s = {}, got {}",
                self.s, self.x_max
            )));
        }
        if self.k0 < 2 {
            return Err(Error::config(format!(
                "k0 must be at least 2 (ln 1 = 0), got {}",
                self.k0
            )));
        }
        if !self.gamma.is_finite() || self.gamma.abs() > 2.0 {
            return Err(Error::config(format!(
                "gamma must lie in [-2, 2], got {}",
                self.gamma
            )));
        }
        if self.s_grid.is_empty() {
            return Err(Error::config("s_grid must be non-empty".to_string()));
        }
        for &s in &self.s_grid {
            if !(s > 1.0) || !s.is_finite() {
                return Err(Error::config(format!(
                    "s_grid entries must be finite and > 1, got {s}"
                )));
            }
        }
        for w in self.s_grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::config(
                    "s_grid must be strictly increasing".to_string(),
                ));
            }
        }
        if self.clt_k < 2 {
            return Err(Error::config(format!(
                "clt_k must be at least 2, got {}",
                self.clt_k
            )));
        }
        if self.clt_k > self.n {
            return Err(Error::config(format!(
                "clt_k = {} exceeds the {} points a trial produces; raise n",
                self.clt_k, self.n
            )));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1".to_string()));
        }
        let params = self.params()?;
        let k_max = self.k_max()?;
        if k_max < self.k0 {
            return Err(Error::config(format!(
                "x_max = {} maps to a top index floor(mu(x_max)) = {k_max} below \
                 k0 = {}; widen the window or lower k0",
                self.x_max, self.k0
            )));
        }
        if k_max > self.n {
            return Err(Error::config(format!(
                "x_max = {} maps to a top index {k_max} beyond the {} points a \
                 trial produces; shrink the window or raise n",
                self.x_max, self.n
            )));
        }
        // The CLT abscissa must be resolvable for the configured model.
        params.mu_inv(self.clt_k as f64)?;
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams64> {
        ModelParams64::new(self.rho)
    }

    /// Top index of the point sup window: `floor(mu(x_max))`, the truncation
    /// of the unbounded supremum to the window the trials can support.
    pub fn k_max(&self) -> Result<usize> {
        let mu = self.params()?.mu(self.x_max)?;
        Ok(mu.floor() as usize)
    }

    /// Per-trial ensemble description with the derived seed.
    pub fn ensemble_config(&self, trial: usize) -> Result<EnsembleConfig64> {
        let seed = derive_trial_seed(self.master_seed, trial as u64);
        EnsembleConfig64::new(self.n, self.params()?, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n, 400);
        // n^(3/4)/10 at n = 400.
        assert!((cfg.x_max - 8.944271909999159).abs() < 1e-12);
        assert_eq!(cfg.k_max().unwrap(), 7);
    }

    #[test]
    fn file_and_overrides_compose_with_flag_precedence() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            "n = 100\nrho = 1.0\ntrials = 7\ns_grid = [3.0, 4.0]\nx_max = 6.5"
        )
        .unwrap();
        let over = Overrides {
            rho: Some(-1.31),
            trials: None,
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(Some(file.path()), &over).unwrap();
        assert_eq!(cfg.n, 100);
        assert_eq!(cfg.rho, -1.31); // flag beats file
        assert_eq!(cfg.trials, 7); // file beats default
        assert_eq!(cfg.s_grid, vec![3.0, 4.0]);
        assert_eq!(cfg.x_max, 6.5);
        assert_eq!(cfg.master_seed, 42); // default
    }

    #[test]
    fn x_max_default_follows_overridden_n() {
        let over = Overrides {
            n: Some(10_000),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(None, &over).unwrap();
        assert!((cfg.x_max - 100.0).abs() < 1e-9);
    }

    #[test]
    fn validation_rejects_each_bad_field() {
        let base = ExperimentConfig::default;
        let mut c = base();
        c.n = 401;
        assert!(c.validate().is_err());
        let mut c = base();
        c.n = 0;
        assert!(c.validate().is_err());
        let mut c = base();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = base();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let mut c = base();
        c.s = 1.0;
        assert!(c.validate().is_err());
        let mut c = base();
        c.x_max = 4.0; // below s = 5
        assert!(c.validate().is_err());
        let mut c = base();
        c.k0 = 1;
        assert!(c.validate().is_err());
        let mut c = base();
        c.gamma = 2.5;
        assert!(c.validate().is_err());
        let mut c = base();
        c.s_grid = vec![8.0, 8.0];
        assert!(c.validate().is_err());
        let mut c = base();
        c.s_grid.clear();
        assert!(c.validate().is_err());
        let mut c = base();
        c.clt_k = 1;
        assert!(c.validate().is_err());
        let mut c = base();
        c.threads = 0;
        assert!(c.validate().is_err());
        // A window too narrow to hold any point index.
        let mut c = base();
        c.s = 1.5;
        c.x_max = 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn trial_seeds_match_the_derivation() {
        let cfg = ExperimentConfig::default();
        let e0 = cfg.ensemble_config(0).unwrap();
        let e1 = cfg.ensemble_config(1).unwrap();
        assert_eq!(e0.trial_seed(), derive_trial_seed(42, 0));
        assert_eq!(e1.trial_seed(), derive_trial_seed(42, 1));
        assert_ne!(e0.trial_seed(), e1.trial_seed());
    }

    #[test]
    fn unknown_file_keys_are_rejected_by_strict_parsing() {
        // A typo in a key name must not silently fall back to the default.
        let parsed: std::result::Result<FileConfig, _> = toml::from_str("trils = 5");
        assert!(parsed.is_err());
    }
}
