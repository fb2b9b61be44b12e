//! Configurations shipped with the binary, addressed as `bundled:NAME`.

use crate::config::{ConfigError, ExperimentConfig};

/// Sorted by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("density-jacobian", include_str!("../configs/density-jacobian.toml")),
    ("exchange-flat", include_str!("../configs/exchange-flat.toml")),
    ("flrw-theorem", include_str!("../configs/flrw-theorem.toml")),
    ("flrw-volume", include_str!("../configs/flrw-volume.toml")),
    ("lemma-pairing", include_str!("../configs/lemma-pairing.toml")),
    ("minkowski-doppler", include_str!("../configs/minkowski-doppler.toml")),
    ("minkowski-trace", include_str!("../configs/minkowski-trace.toml")),
];

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Reads `bundled:NAME` from the registry and anything else from disk.
pub fn load(location: &str) -> Result<ExperimentConfig, ConfigError> {
    let src = match location.strip_prefix("bundled:") {
        Some(name) => bundled_source(name)
            .ok_or_else(|| ConfigError {
                field: "--config".into(),
                line: None,
                message: format!("no bundled config `{name}`"),
            })?
            .to_string(),
        None => std::fs::read_to_string(location).map_err(|e| ConfigError {
            field: "--config".into(),
            line: None,
            message: format!("{location}: {e}"),
        })?,
    };
    ExperimentConfig::parse(&src)
}
