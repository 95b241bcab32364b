//! Run configuration file (TOML). Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classes::ClassMap;
use crate::clustering::ClusterParams;
use crate::error::{Error, Result};
use crate::tracking::PipelineConfig;
use crate::volume4d::VolumeConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoPaths {
    /// Dataset root holding `<seq>/` or `sequences/<seq>/` directories.
    pub data: Option<PathBuf>,
    /// Output root; predictions go to `<out>/<seq>/predictions/`.
    pub out: Option<PathBuf>,
    pub sequences: Vec<String>,
    /// Label subdirectory supplying per-point semantic predictions.
    pub semantics: Option<String>,
    /// Class map file; SemanticKITTI when absent.
    pub classes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub volume: VolumeConfig,
    pub cluster: ClusterParams,
    pub iou_threshold: f64,
    pub associate: bool,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub io: IoPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            volume: p.volume,
            cluster: p.cluster,
            iou_threshold: p.iou_threshold,
            associate: p.associate,
            seed: p.seed,
            threads: 0,
            io: IoPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            volume: self.volume.clone(),
            cluster: self.cluster,
            iou_threshold: self.iou_threshold,
            associate: self.associate,
            seed: self.seed,
        }
    }

    pub fn class_map(&self) -> Result<ClassMap> {
        match &self.io.classes {
            None => Ok(ClassMap::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let spec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                ClassMap::from_spec(spec)
            }
        }
    }

    /// Checks everything a run needs before any file is touched.
    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if self.io.data.is_none() {
            return Err(Error::Config("no dataset root given".into()));
        }
        if self.io.out.is_none() {
            return Err(Error::Config("no output directory given".into()));
        }
        if self.io.sequences.is_empty() {
            return Err(Error::Config("no sequences selected".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume4d::Strategy;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml_str("seed = 9\n[volume]\nstrategy = \"decay\"\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.volume.strategy, Strategy::Decay);
        assert_eq!(c.volume.tau, 4);
        assert_eq!(c.cluster, ClusterParams::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("sede = 9").is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.io.sequences = vec!["00".into()];
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn missing_paths_fail_validation() {
        assert!(RunConfig::default().validate().is_err());
    }
}
