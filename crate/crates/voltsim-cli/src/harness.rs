//! Shared machinery for multi-run experiments: suite resolution, baseline
//! runs, and per-policy metrics.

use std::path::Path;

use anyhow::anyhow;
use rayon::prelude::*;

use voltsim_core::config::{ExperimentConfig, MixSpec};
use voltsim_core::policy::PolicyKind;
use voltsim_core::sim::{alone_ipcs, simulate, weighted_speedup, SimStats};
use voltsim_core::workload::{classify, Trace, WorkloadClass};

use crate::CliError;

/// One suite entry with its loaded traces.
pub struct Mix {
    pub name: String,
    pub traces: Vec<Trace>,
}

/// A mix plus its nominal-baseline measurements.
pub struct BaselineRun {
    pub mix: Mix,
    pub nominal: SimStats,
    pub alone: Vec<f64>,
    pub ws_nominal: f64,
    pub class: WorkloadClass,
}

/// Resolves the run list: the named suite when present, otherwise the
/// top-level workload mix as a single entry.
pub fn resolve_suite(config: &ExperimentConfig, base_dir: &Path) -> Result<Vec<Mix>, CliError> {
    if !config.suite.is_empty() {
        return config
            .suite
            .iter()
            .map(|m: &MixSpec| {
                Ok(Mix { name: m.name.clone(), traces: config.load_mix(m, base_dir)? })
            })
            .collect();
    }
    if config.workloads.is_empty() {
        return Err(CliError::Usage(anyhow!(
            "config defines no workloads: populate `workloads` or `suite`"
        )));
    }
    Ok(vec![Mix { name: "workload".into(), traces: config.load_workloads(base_dir)? }])
}

/// Runs a mix under one policy with the config's remaining parameters.
pub fn run_policy(
    config: &ExperimentConfig,
    traces: &[Trace],
    policy: PolicyKind,
) -> Result<SimStats, CliError> {
    let mut sim_cfg = config.sim_config()?;
    sim_cfg.policy = policy;
    Ok(simulate(traces, &sim_cfg)?)
}

/// Runs the nominal baseline (shared and per-core alone) for every mix, in
/// parallel, preserving suite order.
pub fn run_baselines(
    config: &ExperimentConfig,
    mixes: Vec<Mix>,
) -> Result<Vec<BaselineRun>, CliError> {
    let results: Vec<Result<BaselineRun, CliError>> = mixes
        .into_par_iter()
        .map(|mix| {
            let nominal = run_policy(config, &mix.traces, PolicyKind::Nominal)?;
            let sim_cfg = config.sim_config()?;
            let alone = alone_ipcs(&mix.traces, &sim_cfg)?;
            let shared_ipc: Vec<f64> = nominal.cores.iter().map(|c| c.ipc).collect();
            let ws_nominal = weighted_speedup(&shared_ipc, &alone)?;
            let class = classify(nominal.aggregate_mpki());
            Ok(BaselineRun { mix, nominal, alone, ws_nominal, class })
        })
        .collect();
    results.into_iter().collect()
}

/// Weighted speedup of `stats` against the baseline's alone-run IPCs.
pub fn speedup_vs_alone(stats: &SimStats, baseline: &BaselineRun) -> Result<f64, CliError> {
    let shared: Vec<f64> = stats.cores.iter().map(|c| c.ipc).collect();
    Ok(weighted_speedup(&shared, &baseline.alone)?)
}

/// Fractional weighted-speedup loss vs the nominal baseline.
pub fn loss_vs_nominal(ws: f64, baseline: &BaselineRun) -> f64 {
    (1.0 - ws / baseline.ws_nominal).max(-1.0)
}

/// Parses a policy list like `nominal,voltron,static_v:1.15`.
pub fn parse_policies(text: &str) -> Result<Vec<PolicyKind>, CliError> {
    text.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            if let Some(v) = p.strip_prefix("static_v:") {
                let voltage: f64 = v
                    .parse()
                    .map_err(|e| CliError::Usage(anyhow!("bad static_v voltage {v:?}: {e}")))?;
                return Ok(PolicyKind::StaticV { voltage, region_aware: false });
            }
            if let Some(t) = p.strip_prefix("memdvfs:") {
                let threshold: f64 = t
                    .parse()
                    .map_err(|e| CliError::Usage(anyhow!("bad memdvfs threshold {t:?}: {e}")))?;
                return Ok(PolicyKind::MemDvfs {
                    utilization_threshold: threshold,
                    ladder: default_ladder(),
                });
            }
            match p {
                "nominal" => Ok(PolicyKind::Nominal),
                "voltron" => Ok(PolicyKind::Voltron { loss_models: None }),
                "voltron_region_aware" => Ok(PolicyKind::VoltronRegionAware { loss_models: None }),
                "memdvfs" => Ok(PolicyKind::MemDvfs {
                    utilization_threshold: 0.5,
                    ladder: default_ladder(),
                }),
                other => Err(CliError::Usage(anyhow!(
                    "unknown policy {other:?}; expected nominal, voltron, \
                     voltron_region_aware, memdvfs, or static_v:<volts>"
                ))),
            }
        })
        .collect()
}

fn default_ladder() -> Vec<voltsim_core::policy::LadderRung> {
    use voltsim_core::policy::LadderRung;
    vec![
        LadderRung { data_rate_mts: 1333.0, voltage: 1.35 },
        LadderRung { data_rate_mts: 1066.0, voltage: 1.25 },
        LadderRung { data_rate_mts: 800.0, voltage: 1.15 },
    ]
}

/// Parses a voltage list: comma-separated values or `start:stop:step`.
pub fn parse_voltages(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Usage(anyhow!(m));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("range syntax is start:stop:step, got {text:?}")));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("bad voltage in {text:?}: {e}")))?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) {
            return Err(bad("step must be > 0".into()));
        }
        let mut out = Vec::new();
        let n = ((start - stop) / step).round() as i64;
        for k in 0..=n.max(0) {
            out.push(((start - k as f64 * step) * 1e9).round() / 1e9);
        }
        Ok(out)
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("bad voltage list {text:?}: {e}")))
    }
}
