//! TOML experiment files.
//!
//! ```toml
//! seed = 1
//! horizon_slots = 2000000
//! csi_mode = "perfect"          # or "imperfect"
//!
//! [radio]                        # every key optional
//! bandwidth_slots = 10.0
//! max_power = 10.0
//! interference_cap = 5.0
//! csi_backoff = 1.0
//! csi_error_bound = 0.0
//!
//! [control]
//! v = 1000.0
//! tolerance = 0.01
//! solver = "auto"               # or "golden_section"
//!
//! [options]
//! warmup_fraction = 0.1
//! max_frame_slots = 100000
//! service_model = "floor"       # or "fractional"
//! zero_rate_policy = "hold"     # or "skip_to_next"
//! service_rate_mode = "offline" # or "per_frame"
//! service_rate_samples = 1000000
//! stability_threshold = 0.01
//!
//! [[users]]
//! mean_direct_gain = 1.0
//! mean_interference_gain = 4.0
//! direct_gain_floor = 0.001     # optional
//! fading = "exponential"        # optional, or "constant"
//! arrival_rate = 0.5
//! delay_bound = 1.25
//! cost = { kind = "quadratic_half" }  # optional
//!
//! [sweep]                        # optional, used by the custom preset
//! axis = "lambda"               # or "v"
//! values = [0.1, 0.2]
//! replicates = 5
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::fs;
use std::path::Path;

use doic_core::engine::DEFAULT_HORIZON;
use doic_core::{ControlParams, CsiMode, RadioParams, Scenario, SimOptions, SweepAxis, UserConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_seed() -> u64 {
    1
}

fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}

fn default_replicates() -> usize {
    5
}

/// Parameter sweep attached to a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

/// On-disk experiment description. Serializing it back gives the fully
/// resolved configuration, defaults included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon_slots: u64,
    #[serde(default)]
    pub csi_mode: CsiMode,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub options: SimOptions,
    pub users: Vec<UserConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ConfigFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            seed: s.seed,
            horizon_slots: s.horizon_slots,
            csi_mode: s.mode,
            radio: s.radio,
            control: s.control,
            options: s.options,
            users: s.users.clone(),
            sweep: None,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            users: self.users.clone(),
            radio: self.radio,
            control: self.control,
            horizon_slots: self.horizon_slots,
            seed: self.seed,
            mode: self.csi_mode,
            options: self.options,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.scenario().validate()?;
        if let Some(sweep) = &cfg.sweep {
            if sweep.values.is_empty() || sweep.replicates == 0 {
                return Err(CliError::Config(
                    "sweep needs at least one value and one replicate".into(),
                ));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// The resolved configuration as TOML, for logs and headers.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

/// Reads, validates and resolves a config file into a scenario.
pub fn load_config(path: &Path) -> Result<Scenario, CliError> {
    let cfg = ConfigFile::load(path)?;
    log::info!("resolved configuration:\n{}", cfg.to_toml());
    Ok(cfg.scenario())
}

#[cfg(test)]
mod tests {
    use super::*;
    use doic_core::channel::DEFAULT_DIRECT_GAIN_FLOOR;

    const MINIMAL: &str = r#"
        [[users]]
        mean_direct_gain = 1.0
        mean_interference_gain = 4.0
        arrival_rate = 0.5
        delay_bound = 1.25
    "#;

    #[test]
    fn defaults_fill_in_and_are_echoed() {
        let cfg = ConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(cfg.users[0].direct_gain_floor, DEFAULT_DIRECT_GAIN_FLOOR);
        assert_eq!(cfg.horizon_slots, DEFAULT_HORIZON);
        let echoed = cfg.to_toml();
        assert!(echoed.contains("direct_gain_floor = 0.001"), "{echoed}");
        assert!(echoed.contains("v = 1000.0"));
        assert_eq!(ConfigFile::parse(&echoed).unwrap(), cfg);
    }

    #[test]
    fn zero_v_is_rejected_by_name() {
        let text = format!("{MINIMAL}\n[control]\nv = 0.0\n");
        let err = ConfigFile::parse(&text).unwrap_err();
        assert!(err.to_string().contains("v must be positive"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[radio]\nbandwidth = 3.0\n");
        assert!(matches!(ConfigFile::parse(&text), Err(CliError::Parse(_))));
        let text = format!("colour = 1\n{MINIMAL}");
        assert!(ConfigFile::parse(&text).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ConfigFile::parse("seed = 1\nhorizon_slots = \n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn round_trips_through_scenario() {
        let s = Scenario::table_one();
        assert_eq!(ConfigFile::from_scenario(&s).scenario(), s);
    }
}
