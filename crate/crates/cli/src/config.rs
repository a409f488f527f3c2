use std::path::{Path, PathBuf};

use datasp::synthetic::SyntheticConfig;
use datasp::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a command needs, as written to `config.json` next to its outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the generator and training seeds.
    pub seed: u64,
    pub inputs: Inputs,
    pub generator: SyntheticConfig,
    pub training: TrainConfig,
    pub inference: InferenceConfig,
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Dataset manifest.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
    /// Graph document, when no manifest is given.
    pub graph: Option<PathBuf>,
    /// Cost matrix tensor (`n × n`); takes precedence over graph and model.
    pub costs: Option<PathBuf>,
    /// Dataset record whose context feeds the model.
    pub record: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSpec {
    Uniform,
    ExpNegativeDistance,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub beta: f64,
    pub source: usize,
    /// Defaults to the highest node id.
    pub target: Option<usize>,
    pub num_samples: usize,
    pub reject_cycles: bool,
    /// Observed prefix for destination prediction.
    pub partial: Vec<usize>,
    pub prior: PriorSpec,
    /// Context features for the model; defaults to the selected record's.
    pub context: Option<Vec<f64>>,
    /// Also write `P` and `M` as tensor files.
    pub save_tensors: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            source: 0,
            target: None,
            num_samples: 1000,
            reject_cycles: false,
            partial: Vec::new(),
            prior: PriorSpec::Uniform,
            context: None,
            save_tensors: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub beta: f64,
    pub source: usize,
    pub target: Option<usize>,
    /// Draws for the total-variation check.
    pub tv_samples: usize,
    /// Draws for the per-walk frequency listing.
    pub listing_samples: usize,
    pub theorem_tolerance: f64,
    pub tv_tolerance: f64,
    pub smooth_gradient_tolerance: f64,
    pub engine_gradient_tolerance: f64,
    pub fd_step: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            source: 0,
            target: None,
            tv_samples: 100_000,
            listing_samples: 10_000,
            theorem_tolerance: 1e-9,
            tv_tolerance: 0.01,
            smooth_gradient_tolerance: 1e-6,
            engine_gradient_tolerance: 1e-4,
            fd_step: 1e-5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> datasp::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Applies the seed precedence `flag > DATASP_SEED > file` and pushes the
    /// result into the sub-configs.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> datasp::Result<()> {
        if let Some(s) = flag {
            self.seed = s;
        } else if let Some(s) = env {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| datasp::Error::Validation(format!("DATASP_SEED is not an integer: {s:?}")))?;
        }
        self.generator.seed = self.seed;
        self.training.seed = self.seed;
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> datasp::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(serde_json::from_str::<RunConfig>("{}").unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"training": {"lr": 1}}"#).is_err());
    }

    #[test]
    fn seed_precedence() {
        let mut c = RunConfig { seed: 1, ..Default::default() };
        c.resolve_seed(None, None).unwrap();
        assert_eq!((c.seed, c.generator.seed, c.training.seed), (1, 1, 1));
        c.resolve_seed(None, Some("7")).unwrap();
        assert_eq!(c.training.seed, 7);
        c.resolve_seed(Some(9), Some("7")).unwrap();
        assert_eq!(c.generator.seed, 9);
        assert!(c.resolve_seed(None, Some("x")).is_err());
    }

    #[test]
    fn prior_spec_forms() {
        let c: InferenceConfig = serde_json::from_str(r#"{"prior": {"custom": [1, 2]}}"#).unwrap();
        assert_eq!(c.prior, PriorSpec::Custom(vec![1.0, 2.0]));
        let c: InferenceConfig = serde_json::from_str(r#"{"prior": "exp_negative_distance"}"#).unwrap();
        assert_eq!(c.prior, PriorSpec::ExpNegativeDistance);
    }
}
