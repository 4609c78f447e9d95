//! Bundled experiment configurations.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const PRESETS: [(&str, &str); 4] = [
    ("two_node", include_str!("../presets/two_node.toml")),
    ("ring10_ddo", include_str!("../presets/ring10_ddo.toml")),
    ("braess_line", include_str!("../presets/braess_line.toml")),
    ("er30_fig1", include_str!("../presets/er30_fig1.toml")),
];

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ExperimentConfig> {
    let text = source(name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        Error::config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
    })?;
    ExperimentConfig::from_toml_str(text)
}
