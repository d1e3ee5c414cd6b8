//! The TOML pipeline configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{PoseRefineConfig, TrainConfig};

/// Every tunable of the command-line pipeline. Missing keys take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed, copied into the training and re-initialization seeds.
    pub seed: u64,
    pub train: TrainConfig,
    pub pose: PoseRefineConfig,
}

impl PipelineConfig {
    /// Applies a command-line seed override and propagates the master seed.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.train.reinit.seed = self.seed;
        self.train.validate()?;
        self.pose.validate()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::State(e.to_string()))
    }
}

pub fn parse_config(text: &str, path: &Path) -> Result<PipelineConfig> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(0, |s| super::line_of(text, s.start)),
        message: e.message().to_string(),
    })
}

/// Reads `path`, or returns the defaults when no file is given.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text, p)
        }
        None => Ok(PipelineConfig::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dumped_config_parses_back() {
        let cfg = PipelineConfig::default().resolve(Some(9)).unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&text, Path::new("c.toml")).unwrap(), cfg);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = parse_config("[train]\nsteps = 40\n[pose]\nlambda1 = 2.0\n", Path::new("c.toml")).unwrap();
        assert_eq!(cfg.train.steps, 40);
        assert_eq!(cfg.pose.lambda1, 2.0);
        assert_eq!(cfg.train.lambda3, TrainConfig::default().lambda3);
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let err = parse_config("[train]\nstepz = 40\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn invalid_values_fail_resolution() {
        let cfg = parse_config("[train]\nsteps = 0\n", Path::new("c.toml")).unwrap();
        assert!(cfg.resolve(None).unwrap_err().is_validation());
    }
}
