//! TOML run configuration. Every key is optional; keys that are present
//! take precedence over the corresponding command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::inference::VarianceMode;
use crate::kernel::{BandwidthSample, Transform};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema: Option<Schema>,
    pub t0: Option<f64>,
    pub t: Option<f64>,
    pub transform: Option<Transform>,
    pub c0: Option<f64>,
    pub bandwidth: Option<f64>,
    pub bandwidth_sample: Option<BandwidthSample>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub variance: Option<VarianceMode>,
    /// Comma-separated interval types, e.g. `"normal,fieller"`.
    pub ci: Option<String>,
    pub augment: Option<Vec<String>>,
    pub ratio_floor: Option<f64>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_config() {
        let cfg = FileConfig::parse(
            r#"
            t0 = 0.5
            t = 1.0
            transform = "reciprocal"
            variance = "robust-median"
            augment = ["z1"]
            bandwidth_sample = "full-arm"

            [schema]
            surrogate = "marker"
            exp_surrogate = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.t0, Some(0.5));
        assert_eq!(cfg.transform, Some(Transform::Reciprocal));
        assert_eq!(cfg.variance, Some(VarianceMode::RobustMedian));
        assert_eq!(cfg.bandwidth_sample, Some(BandwidthSample::FullArm));
        let schema = cfg.schema.unwrap();
        assert_eq!(schema.surrogate, "marker");
        assert_eq!(schema.group, "group");
        assert!(schema.exp_surrogate);
        assert!(cfg.seed.is_none());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(matches!(FileConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(FileConfig::parse("t0 = \"x\""), Err(Error::Config(_))));
    }
}
