use std::path::{Path, PathBuf};

use anchorlens_core::assignment::{MatchStrategy, SoftThresholdParams, PRESET_NAMES};
use anchorlens_core::mmd::MmdThresholds;
use anchorlens_core::probe::DEFAULT_SWITCH_WINDOW;
use anchorlens_core::PyramidConfig;
use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    pyramid: Option<PathBuf>,
    strategy: Option<String>,
    #[serde(default)]
    mmd: RawMmd,
    #[serde(default)]
    soft: RawSoft,
    #[serde(default)]
    probe: RawProbe,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMmd {
    gamma_min: Option<f64>,
    gamma_ratio: Option<f64>,
    gamma_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSoft {
    alpha: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    switch_window: Option<u32>,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub gamma_min: Option<f64>,
    pub gamma_ratio: Option<f64>,
    pub gamma_max: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub switch_window: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// `None` means the built-in SSD300-like pyramid.
    pub pyramid_path: Option<PathBuf>,
    pub pyramid: PyramidConfig,
    pub strategy: String,
    pub mmd: MmdThresholds,
    pub soft: SoftThresholdParams,
    pub switch_window: u32,
}

impl RunConfig {
    /// Load from an optional TOML file. A relative `pyramid` path resolves
    /// against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let (raw, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let raw: RawConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                (raw, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RawConfig::default(), PathBuf::new()),
        };

        let pyramid_path = raw.pyramid.map(|p| base.join(p));
        let pyramid = match &pyramid_path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading pyramid config {}", p.display()))?;
                PyramidConfig::from_toml_str(&text)
                    .with_context(|| format!("in pyramid config {}", p.display()))?
            }
            None => PyramidConfig::ssd300_like(),
        };

        let strategy = raw.strategy.unwrap_or_else(|| "ssd".to_string());
        if !PRESET_NAMES.contains(&strategy.as_str()) {
            bail!(
                "unknown strategy `{strategy}` (expected one of {})",
                PRESET_NAMES.join(", ")
            );
        }

        let defaults = MmdThresholds::default();
        let mmd = MmdThresholds::new(
            overrides.gamma_min.or(raw.mmd.gamma_min).unwrap_or(defaults.gamma_min()),
            overrides.gamma_ratio.or(raw.mmd.gamma_ratio).unwrap_or(defaults.gamma_ratio()),
            overrides.gamma_max.or(raw.mmd.gamma_max).unwrap_or(defaults.gamma_max()),
        )
        .context("mmd thresholds")?;
        let soft = SoftThresholdParams::new(
            overrides
                .alpha
                .or(raw.soft.alpha)
                .unwrap_or(SoftThresholdParams::DEFAULT_ALPHA),
            overrides
                .beta
                .or(raw.soft.beta)
                .unwrap_or(SoftThresholdParams::DEFAULT_BETA),
        )
        .context("soft threshold parameters")?;
        let switch_window = overrides
            .switch_window
            .or(raw.probe.switch_window)
            .unwrap_or(DEFAULT_SWITCH_WINDOW);

        Ok(Self {
            pyramid_path,
            pyramid,
            strategy,
            mmd,
            soft,
            switch_window,
        })
    }

    pub fn strategy(&self, name_override: Option<&str>) -> Result<MatchStrategy> {
        Ok(MatchStrategy::preset(
            name_override.unwrap_or(&self.strategy),
            self.soft,
        )?)
    }

    /// Everything except the pyramid, as config-file TOML.
    pub fn settings_toml(&self) -> String {
        format!(
            "strategy = \"{}\"\n\n[mmd]\ngamma_min = {:?}\ngamma_ratio = {:?}\ngamma_max = {:?}\n\n\
             [soft]\nalpha = {:?}\nbeta = {:?}\n\n[probe]\nswitch_window = {}\n",
            self.strategy,
            self.mmd.gamma_min(),
            self.mmd.gamma_ratio(),
            self.mmd.gamma_max(),
            self.soft.alpha(),
            self.soft.beta(),
            self.switch_window,
        )
    }

    /// Resolved settings with the pyramid inlined; independent of file paths.
    pub fn canonical(&self) -> String {
        format!("{}\n# pyramid\n{}", self.settings_toml(), self.pyramid.to_toml_string())
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
