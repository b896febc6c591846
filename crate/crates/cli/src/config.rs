//! Experiment configuration: TOML schema and validation.

use cohsim::linkmodel::Scheme;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    AnliVsDistance,
    SnrVsDistance,
    GmiCurve,
    Backtoback,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::AnliVsDistance => "anli_vs_distance",
            ScenarioKind::SnrVsDistance => "snr_vs_distance",
            ScenarioKind::GmiCurve => "gmi_curve",
            ScenarioKind::Backtoback => "backtoback",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingSection {
    pub order: usize,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemesSection {
    /// "SC" or "MC<m>" entries.
    pub list: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSection {
    pub aggregate_baud_hz: f64,
    #[serde(default = "default_rolloff")]
    pub rolloff: f64,
    #[serde(default = "default_pilot_rate")]
    pub pilot_rate: f64,
    /// Total symbols per frame at the aggregate rate; each of the M
    /// subcarriers carries frame_symbols/M symbols over the same duration.
    pub frame_symbols: usize,
    /// Channel-rate samples per aggregate symbol (integer).
    #[serde(default = "default_channel_sps")]
    pub channel_sps: usize,
    #[serde(default)]
    pub impairments: ImpairmentsSection,
}

fn default_rolloff() -> f64 {
    0.05
}

fn default_pilot_rate() -> f64 {
    0.02
}

fn default_channel_sps() -> usize {
    3
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentsSection {
    #[serde(default)]
    pub laser_linewidth_hz: f64,
    #[serde(default)]
    pub iq_skew_s: f64,
    #[serde(default)]
    pub quant_bits: u32,
    #[serde(default = "default_clip_ratio")]
    pub clip_ratio: f64,
}

fn default_clip_ratio() -> f64 {
    3.0
}

impl Default for ImpairmentsSection {
    fn default() -> Self {
        Self { laser_linewidth_hz: 0.0, iq_skew_s: 0.0, quant_bits: 0, clip_ratio: 3.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WdmSection {
    #[serde(default = "default_n_channels")]
    pub n_channels: usize,
    pub slot_hz: f64,
    #[serde(default = "default_center_freq")]
    pub center_freq_hz: f64,
    pub band_sample_rate_hz: f64,
}

fn default_n_channels() -> usize {
    3
}

fn default_center_freq() -> f64 {
    193.775e12
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSection {
    #[serde(default = "default_alpha")]
    pub alpha_db_per_km: f64,
    #[serde(default = "default_dispersion")]
    pub dispersion_ps_nm_km: f64,
    #[serde(default = "default_gamma")]
    pub gamma_per_w_km: f64,
}

fn default_alpha() -> f64 {
    0.157
}

fn default_dispersion() -> f64 {
    20.8
}

fn default_gamma() -> f64 {
    0.8
}

impl Default for FiberSection {
    fn default() -> Self {
        Self {
            alpha_db_per_km: default_alpha(),
            dispersion_ps_nm_km: default_dispersion(),
            gamma_per_w_km: default_gamma(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    #[serde(default = "default_span_km")]
    pub span_km: f64,
    pub n_spans: usize,
    #[serde(default = "default_loops")]
    pub loops: usize,
    #[serde(default)]
    pub snapshot_every_spans: usize,
    #[serde(default = "default_nf")]
    pub edfa_nf_db: f64,
    #[serde(default)]
    pub ase: bool,
    #[serde(default)]
    pub scramble_per_loop: bool,
}

fn default_span_km() -> f64 {
    55.0
}

fn default_loops() -> usize {
    1
}

fn default_nf() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchSection {
    pub power_dbm_per_channel: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RxSection {
    #[serde(default = "default_lms_step")]
    pub lms_step: f64,
    #[serde(default = "default_pol_taps")]
    pub pol_taps: usize,
    #[serde(default = "default_mimo_taps")]
    pub mimo_taps: usize,
    #[serde(default = "default_cpe_smooth")]
    pub cpe_smooth_pilots: usize,
    /// true: SC uses the 4x4 structure, MC the mirror-pair 8x8.
    #[serde(default = "default_true")]
    pub mimo_enabled: bool,
}

fn default_lms_step() -> f64 {
    1e-3
}

fn default_pol_taps() -> usize {
    31
}

fn default_mimo_taps() -> usize {
    51
}

fn default_cpe_smooth() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl Default for RxSection {
    fn default() -> Self {
        Self {
            lms_step: default_lms_step(),
            pol_taps: default_pol_taps(),
            mimo_taps: default_mimo_taps(),
            cpe_smooth_pilots: default_cpe_smooth(),
            mimo_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsfmSection {
    #[serde(default = "default_nl_phase")]
    pub max_nl_phase_rad: f64,
    #[serde(default = "default_min_steps")]
    pub min_steps_per_span: usize,
}

fn default_nl_phase() -> f64 {
    1e-3
}

fn default_min_steps() -> usize {
    50
}

impl Default for SsfmSection {
    fn default() -> Self {
        Self { max_nl_phase_rad: default_nl_phase(), min_steps_per_span: default_min_steps() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// LO linewidths emulated at the receiver (snr_vs_distance).
    #[serde(default)]
    pub lo_linewidths_hz: Vec<f64>,
    /// SNR axis for gmi_curve.
    #[serde(default)]
    pub snr_db_start: f64,
    #[serde(default)]
    pub snr_db_stop: f64,
    #[serde(default)]
    pub snr_db_step: f64,
    #[serde(default = "default_gmi_samples")]
    pub gmi_samples: usize,
}

fn default_gmi_samples() -> usize {
    200_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub s0_db: f64,
    #[serde(default)]
    pub eta_db: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    pub delta_theta_hz: f64,
    pub distances_km: Vec<f64>,
    /// CSV with distance_km, scheme, a_nli_per_mw2 columns (as produced by
    /// the anli_vs_distance scenario); relative to the config file.
    #[serde(default)]
    pub anli_csv: Option<String>,
    /// Inline fallback: [[distance_km, a_nli_per_mw2], ...] for all schemes.
    #[serde(default)]
    pub anli_table: Vec<(f64, f64)>,
}

fn default_zeta() -> f64 {
    3.0
}

/// The whole experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub shaping: Option<ShapingSection>,
    #[serde(default)]
    pub schemes: Option<SchemesSection>,
    #[serde(default)]
    pub tx: Option<TxSection>,
    #[serde(default)]
    pub wdm: Option<WdmSection>,
    #[serde(default)]
    pub fiber: FiberSection,
    #[serde(default)]
    pub link: Option<LinkSection>,
    #[serde(default)]
    pub launch: Option<LaunchSection>,
    #[serde(default)]
    pub rx: RxSection,
    #[serde(default)]
    pub ssfm: SsfmSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub model: Option<ModelSection>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), source: e })?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        Ok(cfg)
    }

    pub fn parse_schemes(&self) -> Result<Vec<Scheme>, ConfigError> {
        let section = self
            .schemes
            .as_ref()
            .ok_or_else(|| invalid("schemes", "section required for this scenario"))?;
        if section.list.is_empty() {
            return Err(invalid("schemes.list", "must not be empty"));
        }
        section
            .list
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse::<Scheme>()
                    .map_err(|e| invalid(&format!("schemes.list[{i}]"), e.to_string()))
            })
            .collect()
    }

    fn require_shaping(&self) -> Result<&ShapingSection, ConfigError> {
        let s = self
            .shaping
            .as_ref()
            .ok_or_else(|| invalid("shaping", "section required for this scenario"))?;
        if !matches!(s.order, 4 | 16 | 64 | 256) {
            return Err(invalid("shaping.order", format!("unsupported QAM order {}", s.order)));
        }
        let max = (s.order as f64).log2();
        if !(s.entropy_bits > 0.0 && s.entropy_bits <= max) {
            return Err(invalid(
                "shaping.entropy_bits",
                format!("must lie in (0, {max}] for order {}", s.order),
            ));
        }
        Ok(s)
    }

    fn require_tx(&self) -> Result<&TxSection, ConfigError> {
        let tx =
            self.tx.as_ref().ok_or_else(|| invalid("tx", "section required for this scenario"))?;
        if tx.aggregate_baud_hz <= 0.0 {
            return Err(invalid("tx.aggregate_baud_hz", "must be positive"));
        }
        if !(0.0..=1.0).contains(&tx.rolloff) {
            return Err(invalid("tx.rolloff", "must lie in [0, 1]"));
        }
        if !(0.0..=0.1).contains(&tx.pilot_rate) {
            return Err(invalid("tx.pilot_rate", "must lie in [0, 0.1]"));
        }
        if tx.frame_symbols == 0 {
            return Err(invalid("tx.frame_symbols", "must be positive"));
        }
        let min_sps = 2.0 * (1.0 + tx.rolloff);
        if (tx.channel_sps as f64) < min_sps {
            return Err(invalid(
                "tx.channel_sps",
                format!("must be at least {min_sps} for rolloff {}", tx.rolloff),
            ));
        }
        Ok(tx)
    }

    fn validate_schemes_against_tx(&self) -> Result<(), ConfigError> {
        let tx = self.require_tx()?;
        for scheme in self.parse_schemes()? {
            let m = scheme.subcarriers();
            if tx.frame_symbols % m != 0 {
                return Err(invalid(
                    "tx.frame_symbols",
                    format!("must be divisible by the subcarrier count {m} of {scheme}"),
                ));
            }
        }
        Ok(())
    }

    fn require_link(&self) -> Result<&LinkSection, ConfigError> {
        let l = self
            .link
            .as_ref()
            .ok_or_else(|| invalid("link", "section required for this scenario"))?;
        if l.span_km <= 0.0 {
            return Err(invalid("link.span_km", "must be positive"));
        }
        if l.n_spans == 0 {
            return Err(invalid("link.n_spans", "must be positive"));
        }
        if l.loops == 0 {
            return Err(invalid("link.loops", "must be positive"));
        }
        if l.ase && l.edfa_nf_db < 3.0 {
            return Err(invalid("link.edfa_nf_db", "below the 3 dB quantum limit"));
        }
        Ok(l)
    }

    fn require_wdm(&self) -> Result<&WdmSection, ConfigError> {
        let w = self
            .wdm
            .as_ref()
            .ok_or_else(|| invalid("wdm", "section required for this scenario"))?;
        let tx = self.require_tx()?;
        if w.n_channels == 0 {
            return Err(invalid("wdm.n_channels", "must be positive"));
        }
        let occupied = tx.aggregate_baud_hz * (1.0 + tx.rolloff);
        if w.slot_hz < occupied {
            return Err(invalid(
                "wdm.slot_hz",
                format!("slot narrower than the {occupied} Hz channel"),
            ));
        }
        let band_edge =
            (w.n_channels as f64 - 1.0) / 2.0 * w.slot_hz + occupied / 2.0;
        if w.band_sample_rate_hz / 2.0 < band_edge {
            return Err(invalid(
                "wdm.band_sample_rate_hz",
                format!("Nyquist below the outermost channel edge {band_edge} Hz"),
            ));
        }
        Ok(w)
    }

    fn require_launch(&self) -> Result<&LaunchSection, ConfigError> {
        self.launch.as_ref().ok_or_else(|| invalid("launch", "section required for this scenario"))
    }

    fn require_model(&self) -> Result<&ModelSection, ConfigError> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| invalid("model", "section required for the model command"))?;
        if m.distances_km.is_empty() {
            return Err(invalid("model.distances_km", "must not be empty"));
        }
        if m.zeta <= 0.0 {
            return Err(invalid("model.zeta", "must be positive"));
        }
        if m.anli_csv.is_none() && m.anli_table.is_empty() {
            return Err(invalid("model", "needs anli_csv or anli_table"));
        }
        Ok(m)
    }

    /// Scenario-specific validation with field-level messages.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.scenario {
            ScenarioKind::GmiCurve => {
                self.require_shaping()?;
                if self.sweep.snr_db_step <= 0.0 || self.sweep.snr_db_stop < self.sweep.snr_db_start
                {
                    return Err(invalid(
                        "sweep.snr_db_*",
                        "need snr_db_start <= snr_db_stop and snr_db_step > 0",
                    ));
                }
                if self.sweep.gmi_samples < 10_000 {
                    return Err(invalid("sweep.gmi_samples", "need at least 10000 samples"));
                }
            }
            ScenarioKind::Backtoback => {
                self.require_shaping()?;
                self.validate_schemes_against_tx()?;
            }
            ScenarioKind::AnliVsDistance | ScenarioKind::SnrVsDistance => {
                self.require_shaping()?;
                self.validate_schemes_against_tx()?;
                self.require_wdm()?;
                self.require_link()?;
                self.require_launch()?;
            }
        }
        Ok(())
    }

    /// Validation for the `model` command (shares the snr_vs_distance
    /// scenario kind).
    pub fn validate_model(&self) -> Result<(), ConfigError> {
        if self.scenario != ScenarioKind::SnrVsDistance {
            return Err(invalid("scenario", "model command needs scenario = \"snr_vs_distance\""));
        }
        self.parse_schemes()?;
        self.require_tx()?;
        self.require_link()?;
        self.require_model()?;
        Ok(())
    }

    pub fn shaping_section(&self) -> &ShapingSection {
        self.shaping.as_ref().expect("validated")
    }

    pub fn tx_section(&self) -> &TxSection {
        self.tx.as_ref().expect("validated")
    }

    pub fn wdm_section(&self) -> &WdmSection {
        self.wdm.as_ref().expect("validated")
    }

    pub fn link_section(&self) -> &LinkSection {
        self.link.as_ref().expect("validated")
    }

    pub fn launch_section(&self) -> &LaunchSection {
        self.launch.as_ref().expect("validated")
    }

    pub fn model_section(&self) -> &ModelSection {
        self.model.as_ref().expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GMI_TOML: &str = r#"
scenario = "gmi_curve"
master_seed = 1
[shaping]
order = 16
entropy_bits = 3.0
[sweep]
snr_db_start = 0.0
snr_db_stop = 20.0
snr_db_step = 1.0
"#;

    #[test]
    fn gmi_config_parses_and_validates() {
        let cfg: ExperimentConfig = toml::from_str(GMI_TOML).unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_scheme_is_field_level_error() {
        let toml_text = r#"
scenario = "backtoback"
[shaping]
order = 16
entropy_bits = 3.0
[schemes]
list = ["SC", "XC9"]
[tx]
aggregate_baud_hz = 32e9
frame_symbols = 4096
"#;
        let cfg: ExperimentConfig = toml::from_str(toml_text).unwrap();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("schemes.list[1]"), "got: {msg}");
    }

    #[test]
    fn frame_divisibility_checked() {
        let toml_text = r#"
scenario = "backtoback"
[shaping]
order = 16
entropy_bits = 3.0
[schemes]
list = ["MC8"]
[tx]
aggregate_baud_hz = 32e9
frame_symbols = 4095
"#;
        let cfg: ExperimentConfig = toml::from_str(toml_text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let toml_text = "scenario = \"gmi_curve\"\nbogus = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(toml_text).is_err());
    }
}
