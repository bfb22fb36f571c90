//! Run configuration shared by the library pipeline and the CLI.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exemplar::{ApParams, ExemplarParams, Preference, ScoreScope};
use crate::kernels::{auto_kernel_size, FloorMode, KernelConfig};
use crate::matchgraph::SimilarityMode;
use crate::mspcluster::MspConfig;
use crate::rac::RacConfig;
use crate::reconsim::{RansacParams, SimParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Minimum kernel size, either fixed or derived from the image count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SizeRepr", into = "SizeRepr")]
pub enum KernelSize {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SizeRepr {
    Num(usize),
    Text(String),
}

impl TryFrom<SizeRepr> for KernelSize {
    type Error = String;
    fn try_from(r: SizeRepr) -> Result<Self, String> {
        match r {
            SizeRepr::Num(n) => Ok(KernelSize::Fixed(n)),
            SizeRepr::Text(t) => t.parse(),
        }
    }
}

impl From<KernelSize> for SizeRepr {
    fn from(k: KernelSize) -> Self {
        match k {
            KernelSize::Auto => SizeRepr::Text("auto".into()),
            KernelSize::Fixed(n) => SizeRepr::Num(n),
        }
    }
}

impl FromStr for KernelSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KernelSize::Auto);
        }
        s.parse::<usize>()
            .map(KernelSize::Fixed)
            .map_err(|_| format!("expected 'auto' or a positive integer, got '{s}'"))
    }
}

impl fmt::Display for KernelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSize::Auto => f.write_str("auto"),
            KernelSize::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl KernelSize {
    pub fn resolve(self, num_images: usize) -> usize {
        match self {
            KernelSize::Auto => auto_kernel_size(num_images),
            KernelSize::Fixed(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub m: KernelSize,
    pub alpha: f64,
    /// Kernel search layers.
    pub k: usize,
    pub epsilon: f64,
    pub floor: FloorMode,
    pub similarity: SimilarityMode,
    pub beta1: f64,
    pub beta2: f64,
    pub score_scope: ScoreScope,
    pub ap_damping: f64,
    pub ap_iterations: usize,
    pub ap_window: usize,
    /// MSP layers.
    pub l: usize,
    pub r: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub sigma4: f64,
    pub rac_raw_terms: bool,
    pub tau: usize,
    pub seed: u64,
    /// Worker cap; unset means one per available core for execution and
    /// unlimited for the schedule model.
    pub workers: Option<usize>,
    pub merge_cost: f64,
    pub ransac_iterations: usize,
    pub ransac_confidence: f64,
    /// Inlier threshold as a fraction of the base model's bounding-box diagonal.
    pub ransac_threshold: f64,
    /// Geometric noise as a fraction of the scene bounding-box diagonal.
    pub geom_noise: f64,
    pub corrupt_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: KernelSize::Auto,
            alpha: 1.5,
            k: 15,
            epsilon: 0.1,
            floor: FloorMode::Relative,
            similarity: SimilarityMode::Union,
            beta1: 100.0,
            beta2: 1.0,
            score_scope: ScoreScope::KernelSubgraph,
            ap_damping: 0.9,
            ap_iterations: 500,
            ap_window: 50,
            l: 15,
            r: 3,
            sigma1: 1.0,
            sigma2: 1.0,
            sigma3: 3.0,
            sigma4: 1.0,
            rac_raw_terms: false,
            tau: 12,
            seed: 0,
            workers: None,
            merge_cost: 0.0,
            ransac_iterations: 2000,
            ransac_confidence: 0.999,
            ransac_threshold: 0.01,
            geom_noise: 0.005,
            corrupt_fraction: 0.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if let KernelSize::Fixed(m) = self.m {
            if m < 2 {
                return bad(format!("m = {m} < 2"));
            }
        }
        if !(self.alpha >= 1.0) {
            return bad(format!("alpha = {} < 1", self.alpha));
        }
        if self.k < 1 || self.l < 1 || self.r < 1 {
            return bad("k, l and r must be >= 1".into());
        }
        if [self.sigma1, self.sigma2, self.sigma3, self.sigma4].iter().any(|s| !(*s > 0.0)) {
            return bad("sigmas must be > 0".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        if !(self.merge_cost >= 0.0) {
            return bad("merge_cost must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return bad("corrupt_fraction must lie in [0, 1]".into());
        }
        if !(self.geom_noise >= 0.0) || !(self.ransac_threshold > 0.0) {
            return bad("geom_noise must be >= 0 and ransac_threshold > 0".into());
        }
        Ok(())
    }

    pub fn kernel_config(&self, num_images: usize) -> KernelConfig {
        KernelConfig {
            m: self.m.resolve(num_images),
            alpha: self.alpha,
            layers: self.k,
            epsilon: self.epsilon,
            floor: self.floor,
        }
    }

    pub fn exemplar_params(&self) -> ExemplarParams {
        ExemplarParams {
            ap: ApParams {
                damping: self.ap_damping,
                max_iterations: self.ap_iterations,
                convergence_window: self.ap_window,
                preference: Preference::Median,
            },
            beta1: self.beta1,
            beta2: self.beta2,
            scope: self.score_scope,
        }
    }

    pub fn msp_config(&self) -> MspConfig {
        MspConfig {
            layers: self.l,
            range: None,
        }
    }

    pub fn rac_config(&self) -> RacConfig {
        RacConfig {
            r: self.r,
            sigma: [self.sigma1, self.sigma2, self.sigma3, self.sigma4],
            normalize_terms: !self.rac_raw_terms,
        }
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            geom_noise: self.geom_noise,
            tau: self.tau,
            corrupt_fraction: self.corrupt_fraction,
            ransac: RansacParams {
                max_iterations: self.ransac_iterations,
                confidence: self.ransac_confidence,
                threshold: self.ransac_threshold,
            },
            seed: self.seed,
        }
    }

    /// Named parameter values with their defaults, for display and checks.
    pub fn table(&self) -> Vec<(&'static str, String)> {
        vec![
            ("m", self.m.to_string()),
            ("alpha", self.alpha.to_string()),
            ("k", self.k.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("l", self.l.to_string()),
            ("r", self.r.to_string()),
            ("sigma1", self.sigma1.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("sigma3", self.sigma3.to_string()),
            ("sigma4", self.sigma4.to_string()),
            ("tau", self.tau.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXPECTED: &[(&str, &str)] = &[
        ("m", "auto"),
        ("alpha", "1.5"),
        ("k", "15"),
        ("epsilon", "0.1"),
        ("beta1", "100"),
        ("beta2", "1"),
        ("l", "15"),
        ("r", "3"),
        ("sigma1", "1"),
        ("sigma2", "1"),
        ("sigma3", "3"),
        ("sigma4", "1"),
        ("tau", "12"),
    ];

    #[test]
    fn defaults_table() {
        let table = RunConfig::default().table();
        assert_eq!(table.len(), EXPECTED.len());
        for ((name, value), (en, ev)) in table.iter().zip(EXPECTED) {
            assert_eq!((*name, value.as_str()), (*en, *ev));
        }
        assert_eq!(RunConfig::default().m.resolve(1000), 70);
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let cfg = RunConfig::from_toml_str("m = 20\nalpha = 2.0\n").unwrap();
        assert_eq!(cfg.m, KernelSize::Fixed(20));
        assert_eq!(cfg.alpha, 2.0);
        assert_eq!(cfg.tau, 12);
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_toml_str("m = \"auto\"").unwrap().m, KernelSize::Auto);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("m = 1").is_err());
        assert!(RunConfig::from_toml_str("sigma3 = 0.0").is_err());
        assert!(RunConfig::from_toml_str("unknown = 3").is_err());
        assert!(RunConfig::from_toml_str("workers = 0").is_err());
        assert!("x".parse::<KernelSize>().is_err());
    }
}
