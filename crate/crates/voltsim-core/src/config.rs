//! Experiment configuration: a single nested key-value tree that fully
//! determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dram::{Geometry, TimingParams};
use crate::energy::PowerProfile;
use crate::fault::BitErrorModel;
use crate::policy::PolicyKind;
use crate::sim::{RowPolicy, SimConfig, DEFAULT_CLOCK_NS};
use crate::voltage::VoltageProfile;
use crate::workload::{load_trace, synthesize_trace, SynthParams, Trace};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot load workload: {0}")]
    Workload(#[from] crate::workload::TraceError),
}

fn invalid(key: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.to_string() }
}

/// Voltage profile selection: a named preset or a full inline profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VoltageProfileConfig {
    Preset { preset: String },
    Inline(Box<VoltageProfile>),
}

impl Default for VoltageProfileConfig {
    fn default() -> Self {
        VoltageProfileConfig::Preset { preset: "generic".into() }
    }
}

impl VoltageProfileConfig {
    pub fn resolve(&self) -> Result<VoltageProfile, ConfigError> {
        match self {
            VoltageProfileConfig::Preset { preset } => VoltageProfile::preset(preset)
                .ok_or_else(|| {
                    invalid(
                        "voltage_profile.preset",
                        format!("unknown preset {preset:?}; expected generic, vendor_a, vendor_b, or vendor_c"),
                    )
                }),
            VoltageProfileConfig::Inline(p) => Ok((**p).clone()),
        }
    }
}

/// One per-core workload: a trace file or synthesis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadSpec {
    TraceFile { trace: PathBuf },
    Synth { synth: SynthParams },
}

/// A named multiprogrammed mix, one workload per core. The compare and
/// fit-loss-model commands run every mix in the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub name: String,
    pub cores: Vec<WorkloadSpec>,
}

/// The full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: Geometry,
    pub timing: TimingParams,
    pub voltage_profile: VoltageProfileConfig,
    pub power_profile: PowerProfile,
    pub policy: PolicyKind,
    pub workloads: Vec<WorkloadSpec>,
    pub suite: Vec<MixSpec>,
    pub epoch_cycles: u64,
    pub target_loss: f64,
    /// Operating temperature in degrees C.
    pub temperature: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub clock_ns: f64,
    pub max_outstanding_reads: usize,
    pub write_buffer_capacity: usize,
    pub row_policy: RowPolicy,
    pub bit_error_model: BitErrorModel,
    pub refresh_enabled: bool,
    pub horizon_cycles: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: Geometry::default(),
            timing: TimingParams::default(),
            voltage_profile: VoltageProfileConfig::default(),
            power_profile: PowerProfile::default(),
            policy: PolicyKind::Nominal,
            workloads: Vec::new(),
            suite: Vec::new(),
            epoch_cycles: 4_000_000,
            target_loss: 0.05,
            temperature: 20.0,
            seed: 0,
            output_dir: PathBuf::from("out"),
            clock_ns: DEFAULT_CLOCK_NS,
            max_outstanding_reads: 4,
            write_buffer_capacity: 32,
            row_policy: RowPolicy::Open,
            bit_error_model: BitErrorModel::SingleFlip,
            refresh_enabled: true,
            horizon_cycles: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| invalid("<config>", e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Structural validation with key-qualified diagnostics.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry.validate().map_err(|e| invalid("geometry", e))?;
        self.timing.validate().map_err(|e| invalid("timing", e))?;
        let profile = self.resolved_profile()?;
        profile.validate().map_err(|e| invalid("voltage_profile", e))?;
        self.power_profile.validate().map_err(|e| invalid("power_profile", e))?;
        if self.geometry.channels != 1 {
            return Err(invalid("geometry.channels", "only a single shared channel is modeled"));
        }
        if !(0.0..=1.0).contains(&self.target_loss) {
            return Err(invalid("target_loss", "must be in [0, 1]"));
        }
        if self.epoch_cycles == 0 {
            return Err(invalid("epoch_cycles", "must be >= 1"));
        }
        if !(self.clock_ns > 0.0) {
            return Err(invalid("clock_ns", "must be > 0"));
        }
        let nominal = profile.nominal_timings();
        for (key, got, want) in [
            ("timing.t_rcd", self.timing.t_rcd, nominal.t_rcd),
            ("timing.t_ras", self.timing.t_ras, nominal.t_ras),
            ("timing.t_rp", self.timing.t_rp, nominal.t_rp),
        ] {
            if (got - want).abs() > 1e-9 {
                return Err(invalid(
                    key,
                    format!("({got}) must equal the voltage profile's nominal anchor ({want})"),
                ));
            }
        }
        for (i, r) in profile.weak_regions.iter().enumerate() {
            if r.bank >= self.geometry.banks_per_rank {
                return Err(invalid(
                    &format!("voltage_profile.weak_regions[{i}].bank"),
                    "outside geometry",
                ));
            }
            if r.row_end >= self.geometry.rows_per_bank {
                return Err(invalid(
                    &format!("voltage_profile.weak_regions[{i}].row_end"),
                    "outside geometry",
                ));
            }
        }
        match &self.policy {
            PolicyKind::StaticV { voltage, .. } => {
                if *voltage < profile.v_floor - 1e-9 || *voltage > profile.v_nominal + 1e-9 {
                    return Err(invalid(
                        "policy.voltage",
                        format!(
                            "must be within [{}, {}]",
                            profile.v_floor, profile.v_nominal
                        ),
                    ));
                }
            }
            PolicyKind::MemDvfs { utilization_threshold, ladder } => {
                if !(0.0..=1.0).contains(utilization_threshold) {
                    return Err(invalid("policy.utilization_threshold", "must be in [0, 1]"));
                }
                for (i, w) in ladder.windows(2).enumerate() {
                    if w[1].data_rate_mts >= w[0].data_rate_mts {
                        return Err(invalid(
                            &format!("policy.ladder[{}]", i + 1),
                            "data rates must be strictly decreasing",
                        ));
                    }
                }
            }
            _ => {}
        }
        for (i, w) in self.workloads.iter().enumerate() {
            if let WorkloadSpec::Synth { synth } = w {
                synth
                    .validate()
                    .map_err(|e| invalid(&format!("workloads[{i}].synth"), e))?;
            }
        }
        for (i, mix) in self.suite.iter().enumerate() {
            if mix.cores.is_empty() {
                return Err(invalid(&format!("suite[{i}].cores"), "must not be empty"));
            }
            for (j, w) in mix.cores.iter().enumerate() {
                if let WorkloadSpec::Synth { synth } = w {
                    synth
                        .validate()
                        .map_err(|e| invalid(&format!("suite[{i}].cores[{j}].synth"), e))?;
                }
            }
        }
        Ok(())
    }

    /// Loads one suite mix.
    pub fn load_mix(&self, mix: &MixSpec, base_dir: &Path) -> Result<Vec<Trace>, ConfigError> {
        mix.cores
            .iter()
            .map(|w| match w {
                WorkloadSpec::TraceFile { trace } => {
                    let path =
                        if trace.is_absolute() { trace.clone() } else { base_dir.join(trace) };
                    Ok(load_trace(&path)?)
                }
                WorkloadSpec::Synth { synth } => Ok(synthesize_trace(synth, &self.geometry)?),
            })
            .collect()
    }

    /// The voltage profile with peripheral timing fields rebased onto this
    /// config's nominal timing parameters.
    pub fn resolved_profile(&self) -> Result<VoltageProfile, ConfigError> {
        let mut profile = self.voltage_profile.resolve()?;
        for anchor in &mut profile.timing_anchors {
            anchor.timings.t_rfc = self.timing.t_rfc;
            anchor.timings.t_refi = self.timing.t_refi;
            anchor.timings.t_cl = self.timing.t_cl;
            anchor.timings.t_burst = self.timing.t_burst;
        }
        Ok(profile)
    }

    /// Loads or synthesizes the per-core traces, in workload order.
    pub fn load_workloads(&self, base_dir: &Path) -> Result<Vec<Trace>, ConfigError> {
        self.workloads
            .iter()
            .map(|w| match w {
                WorkloadSpec::TraceFile { trace } => {
                    let path =
                        if trace.is_absolute() { trace.clone() } else { base_dir.join(trace) };
                    Ok(load_trace(&path)?)
                }
                WorkloadSpec::Synth { synth } => Ok(synthesize_trace(synth, &self.geometry)?),
            })
            .collect()
    }

    /// Builds the simulator configuration.
    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        self.validate()?;
        Ok(SimConfig {
            geometry: self.geometry,
            timing: self.timing,
            clock_ns: self.clock_ns,
            profile: self.resolved_profile()?,
            power: self.power_profile.clone(),
            policy: self.policy.clone(),
            target_loss: self.target_loss,
            epoch_cycles: self.epoch_cycles,
            temperature: self.temperature,
            seed: self.seed,
            max_outstanding_reads: self.max_outstanding_reads,
            write_buffer_capacity: self.write_buffer_capacity,
            row_policy: self.row_policy,
            bit_error_model: self.bit_error_model,
            refresh_enabled: self.refresh_enabled,
            horizon_cycles: self.horizon_cycles,
            energy_audit: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.policy = PolicyKind::Voltron { loss_models: None };
        cfg.workloads = vec![
            WorkloadSpec::Synth { synth: SynthParams::default() },
            WorkloadSpec::TraceFile { trace: PathBuf::from("traces/a.trace") },
        ];
        cfg.voltage_profile = VoltageProfileConfig::Preset { preset: "vendor_b".into() };
        let text = cfg.to_toml_string();
        let parsed = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_toml_string(), text);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 7\n[policy]\nkind = \"static_v\"\nvoltage = 1.15\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.policy, PolicyKind::StaticV { voltage: 1.15, region_aware: false });
        cfg.validate().unwrap();
    }

    #[test]
    fn diagnostics_name_the_offending_key() {
        let mut cfg = ExperimentConfig::default();
        cfg.policy = PolicyKind::StaticV { voltage: 0.9, region_aware: false };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("policy.voltage"), "{err}");

        let mut cfg = ExperimentConfig::default();
        cfg.timing.t_rcd = 11.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("timing.t_rcd"), "{err}");

        let mut cfg = ExperimentConfig::default();
        cfg.geometry.channels = 2;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("geometry.channels"), "{err}");
    }

    #[test]
    fn presets_resolve_and_rebase_onto_config_timing() {
        let mut cfg = ExperimentConfig::default();
        cfg.voltage_profile = VoltageProfileConfig::Preset { preset: "vendor_c".into() };
        cfg.timing.t_rfc = 350.0;
        let profile = cfg.resolved_profile().unwrap();
        assert!(profile.timing_anchors.iter().all(|a| a.timings.t_rfc == 350.0));
        assert_eq!(profile.vendor_label, "vendor_c");
        let err = ExperimentConfig {
            voltage_profile: VoltageProfileConfig::Preset { preset: "vendor_x".into() },
            ..Default::default()
        }
        .resolved_profile()
        .unwrap_err();
        assert!(err.to_string().contains("voltage_profile.preset"));
    }

    #[test]
    fn synthetic_workloads_load() {
        let mut cfg = ExperimentConfig::default();
        cfg.workloads = vec![WorkloadSpec::Synth {
            synth: SynthParams { target_mpki: 5.0, instruction_count: 10_000, ..Default::default() },
        }];
        let traces = cfg.load_workloads(Path::new(".")).unwrap();
        assert_eq!(traces.len(), 1);
        assert!(!traces[0].requests.is_empty());
    }
}
