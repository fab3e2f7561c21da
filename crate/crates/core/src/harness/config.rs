//! Experiment configuration, read from TOML (`key = value` under
//! `[section]` headers). Every field has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covkit::SpdRegularizer;
use crate::diagnose::{SamplingStrategy, StrategyName, Window};
use crate::error::{Error, Result};
use crate::swmodel::{ObsNoiseSpec, SwConfig, TwinSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: SwConfig,
    pub background: BackgroundSpec,
    pub observation: ObsNoiseSpec,
    pub ensemble: EnsembleSpec,
    pub assimilation: AssimilationSpec,
    pub estimation: EstimationSpec,
    pub strategy: Strategies,
    pub misspec: MisspecSpec,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 2021,
            model: SwConfig::default(),
            background: BackgroundSpec::default(),
            observation: ObsNoiseSpec::default(),
            ensemble: EnsembleSpec::default(),
            assimilation: AssimilationSpec::default(),
            estimation: EstimationSpec::default(),
            strategy: Strategies::default(),
            misspec: MisspecSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundSpec {
    pub sigma_b: f64,
    pub length_b: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            sigma_b: 0.2,
            length_b: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_large: usize,
    pub n_small: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_large: 1000,
            n_small: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HbhtEstimator {
    /// Second moment of background innovations minus the known `R`.
    Omb,
    /// Analysis-increment / innovation cross moment.
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionAverage {
    /// Norms summed over times and members, then divided.
    RatioOfMeans,
    /// Ratio per `(time, member)`, then averaged.
    MeanOfRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssimilationSpec {
    pub times: Vec<f64>,
    pub q_values: Vec<usize>,
    pub table_q: usize,
    pub hbht_estimator: HbhtEstimator,
    pub oc_window: StrategyName,
    pub correction: CorrectionAverage,
}

impl Default for AssimilationSpec {
    fn default() -> Self {
        Self {
            times: vec![0.16, 0.165, 0.17, 0.175],
            q_values: vec![
                1, 2, 3, 5, 10, 15, 20, 25, 29, 35, 40, 50, 60, 70, 80, 100, 120, 150, 175, 199, 200,
            ],
            table_q: 29,
            hbht_estimator: HbhtEstimator::Omb,
            oc_window: StrategyName::Medium,
            correction: CorrectionAverage::RatioOfMeans,
        }
    }
}

/// Optional blend of the estimated `HBHᵀ` towards a scaled identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSpec {
    pub mu: f64,
    pub regularizer: SpdRegularizer,
}

impl Default for EstimationSpec {
    fn default() -> Self {
        Self {
            mu: 0.0,
            regularizer: SpdRegularizer::TraceNormalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub t_s: f64,
    pub t_f: f64,
    pub dt: f64,
    pub n_members: usize,
}

impl WindowSpec {
    fn from_strategy(s: SamplingStrategy) -> Self {
        Self {
            t_s: s.window.t_s,
            t_f: s.window.t_f,
            dt: s.window.dt,
            n_members: s.n_members,
        }
    }

    pub fn to_strategy(self, name: StrategyName) -> Result<SamplingStrategy> {
        SamplingStrategy::new(name, Window::new(self.t_s, self.t_f, self.dt)?, self.n_members)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Strategies {
    pub small: WindowSpec,
    pub medium: WindowSpec,
    pub large: WindowSpec,
}

impl Default for Strategies {
    fn default() -> Self {
        Self {
            small: WindowSpec::from_strategy(SamplingStrategy::small()),
            medium: WindowSpec::from_strategy(SamplingStrategy::medium()),
            large: WindowSpec::from_strategy(SamplingStrategy::large()),
        }
    }
}

impl Strategies {
    pub fn get(&self, name: StrategyName) -> Result<SamplingStrategy> {
        let spec = match name {
            StrategyName::Small => self.small,
            StrategyName::Medium => self.medium,
            StrategyName::Large => self.large,
            StrategyName::Custom => {
                return Err(Error::Parameter("custom strategies are not configured by name".into()))
            }
        };
        spec.to_strategy(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisspecSpec {
    /// Marginal variance of the homogeneous assumed `R`.
    pub homogeneous_variance: f64,
    /// Correlation length of the assumed `R` in the length-scale case.
    pub wrong_length: f64,
    /// Window whose residuals feed the misspecified IC estimate.
    pub ic_window: StrategyName,
}

impl Default for MisspecSpec {
    fn default() -> Self {
        Self {
            homogeneous_variance: 0.04,
            wrong_length: 5.0,
            ic_window: StrategyName::Medium,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for name in [StrategyName::Small, StrategyName::Medium, StrategyName::Large] {
            let s = self.strategy.get(name)?;
            if s.n_members > self.ensemble.n_small {
                return Err(Error::Parameter(format!(
                    "strategy {name} uses {} members, the small ensemble has {}",
                    s.n_members, self.ensemble.n_small
                )));
            }
        }
        if self.assimilation.times.is_empty() {
            return Err(Error::Parameter("no assimilation times".into()));
        }
        if self.assimilation.q_values.contains(&0) || self.assimilation.table_q == 0 {
            return Err(Error::Parameter("truncation rank must be at least 1".into()));
        }
        Ok(())
    }

    /// Every time the experiments read: strategy windows and assimilation times.
    pub fn save_times(&self) -> Result<Vec<f64>> {
        let mut steps = std::collections::BTreeSet::new();
        for name in [StrategyName::Small, StrategyName::Medium, StrategyName::Large] {
            for t in self.strategy.get(name)?.window.times() {
                steps.insert(self.model.step_index(t)?);
            }
        }
        for &t in &self.assimilation.times {
            steps.insert(self.model.step_index(t)?);
        }
        Ok(steps.into_iter().map(|k| self.model.time_of(k)).collect())
    }

    pub fn twin_spec(&self) -> Result<TwinSpec> {
        Ok(TwinSpec {
            n_large: self.ensemble.n_large,
            n_small: self.ensemble.n_small,
            save_times: self.save_times()?,
            cov_times: self.assimilation.times.clone(),
            sigma_b: self.background.sigma_b,
            length_b: self.background.length_b,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let c = Config::default();
        let text = c.to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml("seed = 7\n[model]\nnx = 10\nny = 10\n[strategy.small]\nt_s = 0.1\nt_f = 0.12\ndt = 0.001\nn_members = 5\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.nx, 10);
        assert_eq!(c.model.dt, 1e-4);
        assert_eq!(c.strategy.small.n_members, 5);
        assert_eq!(c.strategy.medium, Strategies::default().medium);
    }

    #[test]
    fn bad_files_rejected() {
        assert!(Config::from_toml("sed = 1").is_err());
        assert!(Config::from_toml("[assimilation]\ntable_q = 0").is_err());
        assert!(Config::from_toml("[strategy.medium]\nt_s = 0.1\nt_f = 0.3\ndt = 0.03\nn_members = 10").is_err());
    }
}
