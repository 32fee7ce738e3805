//! Built-in scenario files.

use crate::error::{Error, Result};
use crate::harness::config::{parse_config, Experiment};

const ENTRIES: &[(&str, &str)] = &[
    ("fig2_posteriors", include_str!("../../scenarios/fig2_posteriors.toml")),
    ("fig3_regrets", include_str!("../../scenarios/fig3_regrets.toml")),
    ("fig4_posteriors", include_str!("../../scenarios/fig4_posteriors.toml")),
    ("fig5_transfer", include_str!("../../scenarios/fig5_transfer.toml")),
    ("fig5_positive", include_str!("../../scenarios/fig5_positive.toml")),
    ("fig5_negative", include_str!("../../scenarios/fig5_negative.toml")),
    ("fig6_empu", include_str!("../../scenarios/fig6_empu.toml")),
    ("fig6_empu_negative", include_str!("../../scenarios/fig6_empu_negative.toml")),
    ("fig7_sensitivity", include_str!("../../scenarios/fig7_sensitivity.toml")),
    ("fig8_homotl_mistakes", include_str!("../../scenarios/fig8_homotl_mistakes.toml")),
    ("fig8_homotl_mistakes_large", include_str!("../../scenarios/fig8_homotl_mistakes_large.toml")),
    ("fig9_homotl_regret", include_str!("../../scenarios/fig9_homotl_regret.toml")),
    ("fig9_homotl_regret_large", include_str!("../../scenarios/fig9_homotl_regret_large.toml")),
    ("fig10_dpm", include_str!("../../scenarios/fig10_dpm.toml")),
    ("fig10_dpm_large", include_str!("../../scenarios/fig10_dpm_large.toml")),
];

pub fn names() -> Vec<&'static str> {
    ENTRIES.iter().map(|(n, _)| *n).collect()
}

pub fn source(name: &str) -> Option<&'static str> {
    ENTRIES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<Experiment> {
    let text = source(name).ok_or_else(|| Error::Invalid(format!("no catalog scenario named {name:?}")))?;
    parse_config(text, None)
}
