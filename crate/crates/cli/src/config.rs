//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are skipped.
//! Every key has a default, unknown keys are rejected, and values are parsed
//! when a command asks for them, so a bad value names its key.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown configuration key `{key}`")]
    UnknownKey { key: String, line: usize },

    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("line {line}: key `{key}` given twice")]
    Duplicate { key: String, line: usize },

    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },

    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("dgp.kind", "circle", "generator: `circle` (instrumented shift on the circle) or `npr` (Z = X regression)"),
    ("dgp.k", "1", "circle: number of uniforms in W = 0.1·ΣU_i"),
    ("dgp.m", "3", "target frequency"),
    ("dgp.a", "0.5", "covariate amplitude in 1 + a·cos(2πo)"),
    ("dgp.c_e", "0.5", "circle: endogeneity strength"),
    ("dgp.sigma", "0.2", "noise scale"),
    ("dgp.amp", "1", "target amplitude (0 gives a pure-noise problem)"),
    ("dgp.covariate", "true", "circle: include the covariate O"),
    ("dgp.d_x", "1", "npr: treatment dimension"),
    ("dgp.d_o", "1", "npr: covariate dimension"),
    ("dgp.n", "512", "stage-2 sample size"),
    ("dgp.n_tilde", "auto", "stage-1 sample size; `auto` uses n"),
    ("dgp.seed", "0", "master seed"),
    ("dgp.replicate", "0", "replicate index under the master seed"),
    ("schedule.mode", "theory", "`theory`, `cv` (leave-one-out around the theory values) or `fixed` (fit.* values)"),
    ("schedule.s_x", "2", "treatment smoothness"),
    ("schedule.s_o", "2", "covariate smoothness"),
    ("schedule.eta0", "1", "ill-posedness, lower exponent"),
    ("schedule.eta1", "1", "ill-posedness, upper exponent"),
    ("schedule.zeta", "0.05", "slack in the stage-1 ridge exponent"),
    ("schedule.xi_form", "theorem", "stage-1 ridge exponent: `theorem` or `half-dim`"),
    ("schedule.scale_x", "0.25", "constant factor on the scheduled treatment lengthscale"),
    ("schedule.scale_o", "1", "constant factor on the scheduled covariate lengthscale"),
    ("fit.variant", "kivo", "`kivo` or `naive` (naive augmentation baseline)"),
    ("fit.nu", "1.5", "stage-1 Matérn smoothness: 0.5, 1.5 or 2.5"),
    ("fit.ls_z", "0.1", "stage-1 instrument lengthscale"),
    ("fit.ls_o", "0.5", "stage-1 covariate lengthscale"),
    ("fit.gamma_x", "0.1", "fixed mode: treatment lengthscale"),
    ("fit.gamma_o", "0.5", "fixed mode: covariate lengthscale"),
    ("fit.lambda", "auto", "fixed mode: stage-2 ridge; `auto` uses 1/n"),
    ("fit.xi", "auto", "stage-1 ridge; `auto` uses the schedule (1/n in fixed mode)"),
    ("bench.n_list", "128,512,2048", "sample sizes of a sweep"),
    ("bench.replicates", "20", "replicates per sample size (seeds 0..replicates)"),
    ("bench.eval_points", "20000", "evaluation draws per replicate"),
    ("bench.tilde_ratio", "1", "stage-1 size as a multiple of n"),
    ("diag.k", "1", "contractivity probe: number of uniforms"),
    ("diag.freqs", "5,15,25,35", "contractivity probe: frequencies"),
    ("diag.grid", "512", "operator grid size"),
    ("diag.mc_samples", "0", "Monte-Carlo samples per frequency; 0 skips the MC table"),
    ("hard.resolution", "2", "hard instance: resolution level"),
    ("hard.m_order", "2", "hard instance: spline order (even)"),
    ("hard.s_x", "1", "hard instance: treatment smoothness"),
    ("hard.s_o", "1", "hard instance: covariate smoothness"),
    ("hard.d_x", "1", "hard instance: treatment dimension"),
    ("hard.d_o", "1", "hard instance: covariate dimension"),
    ("hard.zeta", "3", "hard instance: mask spacing"),
    ("hard.v", "ones", "bits: `ones`, `zeros`, `codeword:I` (random codebook entry) or `bits:0110..`"),
    ("hard.eps0", "auto", "amplitude; `auto` scales the all-ones instance to sup 0.1"),
    ("hard.grid", "64", "evaluation points per axis"),
    ("io.data", "", "dataset CSV (overridden by --data)"),
    ("io.model", "", "model file (overridden by --model)"),
    ("io.query", "", "predict: CSV of query points with columns x1..,o1.."),
];

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d)
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            if default_of(key).is_none() {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line,
                });
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line,
                });
            }
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: &Path) -> std::io::Result<String> {
        std::fs::read_to_string(path)
    }

    /// Sets a known key, as command-line overrides do.
    pub fn set(&mut self, key: &str, value: String) {
        debug_assert!(default_of(key).is_some(), "unknown key {key}");
        self.values.insert(key.to_string(), value);
    }

    pub fn raw(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some(v) => v,
            None => default_of(key).unwrap_or_else(|| panic!("unknown configuration key {key}")),
        }
    }

    fn parse_as<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<T, ConfigError> {
        let v = self.raw(key);
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            expected,
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.parse_as(key, "a number")?;
        if !v.is_finite() {
            return Err(ConfigError::BadValue {
                key: key.to_string(),
                value: self.raw(key).to_string(),
                expected: "a finite number",
            });
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse_as(key, "a non-negative integer")
    }

    pub fn u32(&self, key: &str) -> Result<u32, ConfigError> {
        self.parse_as(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.parse_as(key, "a non-negative integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        self.parse_as(key, "`true` or `false`")
    }

    /// `None` for `auto`.
    pub fn auto_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    pub fn auto_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.usize(key).map(Some)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: self.raw(key).to_string(),
                    expected: "a comma-separated list of integers",
                })
            })
            .collect()
    }

    /// One of `choices`.
    pub fn choice(&self, key: &str, choices: &[&'static str]) -> Result<&'static str, ConfigError> {
        let v = self.raw(key);
        choices.iter().copied().find(|c| *c == v).ok_or_else(|| ConfigError::Invalid {
            key: key.to_string(),
            reason: format!("`{v}` is not one of {}", choices.join(", ")),
        })
    }

    /// Empty means unset.
    pub fn path(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_to_their_types() {
        let c = RunConfig::default();
        assert_eq!(c.raw("dgp.kind"), "circle");
        assert_eq!(c.usize("dgp.n").unwrap(), 512);
        assert_eq!(c.auto_usize("dgp.n_tilde").unwrap(), None);
        assert!(c.bool("dgp.covariate").unwrap());
        assert_eq!(c.list::<usize>("bench.n_list").unwrap(), vec![128, 512, 2048]);
        assert_eq!(c.auto_f64("fit.xi").unwrap(), None);
        assert_eq!(c.path("io.data"), None);
        for (k, _, _) in KEYS {
            // Every key can be read.
            let _ = c.raw(k);
        }
    }

    #[test]
    fn parses_comments_and_overrides() {
        let c = RunConfig::parse("# header\ndgp.kind = npr  # trailing\n\n dgp.n=64\n").unwrap();
        assert_eq!(c.raw("dgp.kind"), "npr");
        assert_eq!(c.usize("dgp.n").unwrap(), 64);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let e = RunConfig::parse("dgp.kind = circle\ndgp.kk = 1\n").unwrap_err();
        assert!(matches!(&e, ConfigError::UnknownKey { key, line: 2 } if key == "dgp.kk"));
        assert!(e.to_string().contains("dgp.kk"));
        assert!(matches!(RunConfig::parse("dgp.n 5"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::parse("dgp.n=1\ndgp.n=2"), Err(ConfigError::Duplicate { .. })));
        let c = RunConfig::parse("dgp.n = many").unwrap();
        assert!(c.usize("dgp.n").unwrap_err().to_string().contains("dgp.n"));
        let c = RunConfig::parse("dgp.sigma = inf").unwrap();
        assert!(c.f64("dgp.sigma").is_err());
        let c = RunConfig::parse("dgp.kind = square").unwrap();
        assert!(c.choice("dgp.kind", &["circle", "npr"]).is_err());
    }
}
