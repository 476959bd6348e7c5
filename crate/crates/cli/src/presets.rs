//! Built-in experiment configs, one per reproduced figure.

use crate::config::ExperimentConfig;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig3a", include_str!("../presets/fig3a.toml")),
    ("fig3b", include_str!("../presets/fig3b.toml")),
    ("fig3c", include_str!("../presets/fig3c.toml")),
    ("fig4a", include_str!("../presets/fig4a.toml")),
    ("fig4b", include_str!("../presets/fig4b.toml")),
    ("fig4c", include_str!("../presets/fig4c.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
    ("fig8", include_str!("../presets/fig8.toml")),
    ("fig9", include_str!("../presets/fig9.toml")),
];

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    preset_source(name).map(|src| ExperimentConfig::from_toml(src).expect("built-in presets parse"))
}

/// `(name, description)` for every preset.
pub fn list() -> Vec<(&'static str, String)> {
    PRESETS
        .iter()
        .map(|(name, _)| {
            (
                *name,
                preset(name).and_then(|c| c.description).unwrap_or_default(),
            )
        })
        .collect()
}
