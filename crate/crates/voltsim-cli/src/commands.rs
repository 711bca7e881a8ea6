//! Subcommand implementations.

use std::path::Path;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::Serialize;

use voltsim_core::config::ExperimentConfig;
use voltsim_core::dram::{CommandKind, TimingParams};
use voltsim_core::ecc::{clustering_stats, ecc_coverage, expected_coverage, EccCoverage};
use voltsim_core::energy::command_energy;
use voltsim_core::fault::{generate_error_map_at, mc_error_fraction};
use voltsim_core::policy::{added_latency_cycles, LossFit, LossSample, PolicyKind};
use voltsim_core::seed::child_seed;
use voltsim_core::sim::SimStats;
use voltsim_core::workload::WorkloadClass;

use crate::harness::{
    loss_vs_nominal, parse_policies, parse_voltages, resolve_suite, run_baselines, run_policy,
    speedup_vs_alone,
};
use crate::output;
use crate::CliError;

/// Optional per-field overrides of the sweep/errmap operating timings.
#[derive(Clone, Copy, Default)]
pub struct FixedTimings {
    pub t_rcd: Option<f64>,
    pub t_rp: Option<f64>,
    pub t_ras: Option<f64>,
}

impl FixedTimings {
    fn apply(&self, base: &TimingParams) -> TimingParams {
        TimingParams {
            t_rcd: self.t_rcd.unwrap_or(base.t_rcd),
            t_rp: self.t_rp.unwrap_or(base.t_rp),
            t_ras: self.t_ras.unwrap_or(base.t_ras),
            ..*base
        }
    }
}

pub fn simulate(config: &ExperimentConfig, base_dir: &Path) -> Result<(), CliError> {
    let traces = config.load_workloads(base_dir)?;
    if traces.is_empty() {
        return Err(CliError::Usage(anyhow!(
            "config key `workloads`: at least one workload is required"
        )));
    }
    let stats = run_policy(config, &traces, config.policy.clone())?;
    write_run_outputs(config, &stats)?;
    println!(
        "simulate: {} cycles, ipc {:.4}, mpki {:.2}, bw {:.3}, dram {:.4} J, total {:.4} J, uncorrected {}",
        stats.total_cycles,
        stats.aggregate_ipc(),
        stats.aggregate_mpki(),
        stats.bandwidth_utilization,
        stats.energy.dram_total(),
        stats.energy.total,
        stats.uncorrected_errors
    );
    Ok(())
}

fn write_run_outputs(config: &ExperimentConfig, stats: &SimStats) -> Result<(), CliError> {
    let out = &config.output_dir;
    output::write_stats_json(&out.join("stats.json"), stats)?;
    output::write_energy_csv(&out.join("energy.csv"), &stats.energy)?;
    output::write_policy_log_csv(&out.join("policy_log.csv"), stats)?;
    Ok(())
}

pub fn sweep_voltage(
    config: &ExperimentConfig,
    voltages: Option<&str>,
    fixed: FixedTimings,
    compensated: bool,
    mc_lines: u64,
    ecc_trials: u64,
) -> Result<(), CliError> {
    let profile = config.resolved_profile()?;
    let voltages: Vec<f64> = match voltages {
        Some(text) => parse_voltages(text)?,
        None => {
            // Profile grid from nominal downward, extended one step below the
            // floor where the error model still applies.
            let mut grid = profile.voltage_grid();
            grid.reverse();
            if !compensated {
                grid.push(((profile.v_floor - profile.v_step) * 1e9).round() / 1e9);
            }
            grid
        }
    };
    for &v in &voltages {
        if v > profile.v_nominal + 1e-9 {
            return Err(CliError::Usage(anyhow!("sweep voltage {v} above nominal")));
        }
        if compensated && v < profile.v_floor - 1e-9 {
            return Err(CliError::Usage(anyhow!(
                "compensated sweep voltage {v} below the profile floor"
            )));
        }
    }
    let fixed_t = fixed.apply(&config.timing);

    struct Point {
        voltage: f64,
        analytic: f64,
        mc: f64,
        energy_nj: f64,
        ecc: EccCoverage,
        ecc_expected: EccCoverage,
    }

    let points: Vec<Result<Point, CliError>> = voltages
        .par_iter()
        .enumerate()
        .map(|(idx, &v)| {
            let t = if compensated {
                profile
                    .scaled_timings_at(v, config.temperature)
                    .map_err(|e| CliError::Usage(e.into()))?
            } else {
                fixed_t
            };
            let map = generate_error_map_at(v, &t, &profile, &config.geometry, config.temperature);
            let analytic = map.mean_probability();
            let mc = mc_error_fraction(
                v,
                &t,
                &profile,
                &config.geometry,
                mc_lines,
                child_seed(config.seed, idx as u64),
            );
            let ecc = ecc_coverage(
                &map,
                config.bit_error_model,
                ecc_trials,
                child_seed(config.seed, (1 << 32) | idx as u64),
            )
            .map_err(|e| CliError::Usage(e.into()))?;
            let ecc_expected =
                expected_coverage(&map, config.bit_error_model).map_err(|e| CliError::Usage(e.into()))?;
            // Reference access energy: one activate-read-precharge round trip
            // plus the line transfer.
            let energy_nj = [CommandKind::Act, CommandKind::Rd, CommandKind::Pre]
                .into_iter()
                .map(|k| {
                    let (a, p) = command_energy(k, v, profile.v_nominal, &config.power_profile);
                    a + p
                })
                .sum::<f64>()
                + config.power_profile.io_energy_per_line;
            Ok(Point { voltage: v, analytic, mc, energy_nj, ecc, ecc_expected })
        })
        .collect();
    let points: Vec<Point> = points.into_iter().collect::<Result<_, _>>()?;

    let out = &config.output_dir;
    let error_rows: Vec<String> = points
        .iter()
        .map(|p| format!("{},{},{},{}", p.voltage, p.analytic, p.mc, p.energy_nj))
        .collect();
    output::write_lines(
        &out.join("error_curve.csv"),
        "voltage,analytic_error_fraction,monte_carlo_error_fraction,dram_energy_nj_per_access",
        &error_rows,
    )?;
    let ecc_rows: Vec<String> = points
        .iter()
        .map(|p| {
            format!(
                "{},{},{},{},{},{}",
                p.voltage,
                p.ecc.clean,
                p.ecc.corrected,
                p.ecc.detected_uncorrectable,
                p.ecc.silent_or_miscorrected,
                p.ecc_expected.silent_or_miscorrected
            )
        })
        .collect();
    output::write_lines(
        &out.join("ecc_curve.csv"),
        "voltage,clean,corrected,detected_uncorrectable,silent_or_miscorrected,silent_expected",
        &ecc_rows,
    )?;
    println!(
        "sweep-voltage: {} points ({}), error_curve.csv + ecc_curve.csv written to {}",
        points.len(),
        if compensated { "compensated timings" } else { "fixed timings" },
        out.display()
    );
    Ok(())
}

pub fn errmap(
    config: &ExperimentConfig,
    voltage: f64,
    fixed: FixedTimings,
    trials: u64,
) -> Result<(), CliError> {
    let profile = config.resolved_profile()?;
    if voltage > profile.v_nominal + 1e-9 {
        return Err(CliError::Usage(anyhow!("errmap voltage {voltage} above nominal")));
    }
    let t = fixed.apply(&config.timing);
    let map = generate_error_map_at(voltage, &t, &profile, &config.geometry, config.temperature);
    let clustering = clustering_stats(&map).map_err(|e| CliError::Usage(e.into()))?;
    let ecc = ecc_coverage(&map, config.bit_error_model, trials, child_seed(config.seed, 0))
        .map_err(|e| CliError::Usage(e.into()))?;
    let ecc_expected =
        expected_coverage(&map, config.bit_error_model).map_err(|e| CliError::Usage(e.into()))?;

    #[derive(Serialize)]
    struct Report {
        voltage: f64,
        timings: TimingParams,
        mean_probability: f64,
        total_mass: f64,
        concentration_index: f64,
        top_percent_share: f64,
        ecc: EccCoverage,
        ecc_expected: EccCoverage,
    }

    let out = &config.output_dir;
    output::write_errmap_csv(&out.join("errmap.csv"), &map)?;
    output::write_errmap_bin(&out.join("errmap.bin"), &map)?;
    output::write_json(
        &out.join("errmap_report.json"),
        &Report {
            voltage,
            timings: t,
            mean_probability: map.mean_probability(),
            total_mass: map.total_mass(),
            concentration_index: clustering.concentration_index,
            top_percent_share: clustering.top_percent_share,
            ecc,
            ecc_expected,
        },
    )?;
    println!(
        "errmap: {}x{} cells at {voltage} V, mean p {:.3e}, concentration {:.3}, written to {}",
        map.banks(),
        map.rows(),
        map.mean_probability(),
        clustering.concentration_index,
        out.display()
    );
    Ok(())
}

fn class_label(class: WorkloadClass) -> &'static str {
    match class {
        WorkloadClass::MemoryIntensive => "memory_intensive",
        WorkloadClass::NonMemoryIntensive => "non_memory_intensive",
    }
}

pub fn compare(
    config: &ExperimentConfig,
    base_dir: &Path,
    policies_text: &str,
) -> Result<(), CliError> {
    let policies = parse_policies(policies_text)?;
    if policies.len() < 2 {
        return Err(CliError::Usage(anyhow!("compare needs at least two policies")));
    }
    let mixes = resolve_suite(config, base_dir)?;
    let baselines = run_baselines(config, mixes)?;

    struct Row {
        workload: String,
        class: WorkloadClass,
        policy: String,
        ws: f64,
        loss_pct: f64,
        dram_j: f64,
        system_j: f64,
        dram_savings_pct: f64,
        system_savings_pct: f64,
        uncorrected: u64,
    }

    let pairs: Vec<(usize, usize)> = (0..baselines.len())
        .flat_map(|m| (0..policies.len()).map(move |p| (m, p)))
        .collect();
    let rows: Vec<Result<Row, CliError>> = pairs
        .par_iter()
        .map(|&(m, p)| {
            let baseline = &baselines[m];
            let policy = policies[p].clone();
            let stats = if matches!(policy, PolicyKind::Nominal) {
                baseline.nominal.clone()
            } else {
                run_policy(config, &baseline.mix.traces, policy.clone())?
            };
            let ws = speedup_vs_alone(&stats, baseline)?;
            let loss = loss_vs_nominal(ws, baseline);
            let dram = stats.energy.dram_total();
            let dram_base = baseline.nominal.energy.dram_total();
            let system = stats.energy.total;
            let system_base = baseline.nominal.energy.total;
            Ok(Row {
                workload: baseline.mix.name.clone(),
                class: baseline.class,
                policy: policy.descriptor(),
                ws,
                loss_pct: 100.0 * loss,
                dram_j: dram,
                system_j: system,
                dram_savings_pct: 100.0 * (1.0 - dram / dram_base),
                system_savings_pct: 100.0 * (1.0 - system / system_base),
                uncorrected: stats.uncorrected_errors,
            })
        })
        .collect();
    let rows: Vec<Row> = rows.into_iter().collect::<Result<_, _>>()?;

    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.workload,
                class_label(r.class),
                r.policy,
                r.ws,
                r.loss_pct,
                r.dram_j,
                r.system_j,
                r.dram_savings_pct,
                r.system_savings_pct,
                r.uncorrected
            )
        })
        .collect();
    let out = &config.output_dir;
    output::write_lines(
        &out.join("comparison.csv"),
        "workload,class,policy,weighted_speedup,perf_loss_pct,dram_energy_j,system_energy_j,\
         dram_savings_pct,system_savings_pct,uncorrected_errors",
        &csv_rows,
    )?;

    // Per-class aggregates in (class, policy) order.
    let mut summary_rows = Vec::new();
    for class in [WorkloadClass::NonMemoryIntensive, WorkloadClass::MemoryIntensive] {
        for policy in &policies {
            let label = policy.descriptor();
            let subset: Vec<&Row> =
                rows.iter().filter(|r| r.class == class && r.policy == label).collect();
            if subset.is_empty() {
                continue;
            }
            let n = subset.len() as f64;
            let mean = |f: fn(&Row) -> f64| subset.iter().map(|r| f(r)).sum::<f64>() / n;
            let max_loss =
                subset.iter().map(|r| r.loss_pct).fold(f64::NEG_INFINITY, f64::max);
            summary_rows.push(format!(
                "{},{},{},{},{},{},{}",
                class_label(class),
                label,
                subset.len(),
                mean(|r| r.loss_pct),
                max_loss,
                mean(|r| r.dram_savings_pct),
                mean(|r| r.system_savings_pct)
            ));
        }
    }
    output::write_lines(
        &out.join("comparison_summary.csv"),
        "class,policy,workloads,mean_perf_loss_pct,max_perf_loss_pct,mean_dram_savings_pct,\
         mean_system_savings_pct",
        &summary_rows,
    )?;
    println!("compare: {} workloads x {} policies written to {}", baselines.len(), policies.len(), out.display());
    for line in &summary_rows {
        println!("  {line}");
    }
    Ok(())
}

pub fn fit_loss_model(
    config: &ExperimentConfig,
    base_dir: &Path,
    voltages: Option<&str>,
) -> Result<(), CliError> {
    let profile = config.resolved_profile()?;
    let voltages: Vec<f64> = match voltages {
        Some(text) => parse_voltages(text)?,
        None => profile
            .voltage_grid()
            .into_iter()
            .filter(|v| *v < profile.v_nominal - 1e-9)
            .collect(),
    };
    if voltages.is_empty() {
        return Err(CliError::Usage(anyhow!("no candidate voltages to fit against")));
    }
    let mixes = resolve_suite(config, base_dir)?;
    let baselines = run_baselines(config, mixes)?;

    struct SampleRow {
        workload: String,
        class: WorkloadClass,
        voltage: f64,
        sample: LossSample,
    }

    let pairs: Vec<(usize, usize)> = (0..baselines.len())
        .flat_map(|m| (0..voltages.len()).map(move |v| (m, v)))
        .collect();
    let samples: Vec<Result<SampleRow, CliError>> = pairs
        .par_iter()
        .map(|&(m, vi)| {
            let baseline = &baselines[m];
            let v = voltages[vi];
            let stats = run_policy(
                config,
                &baseline.mix.traces,
                PolicyKind::StaticV { voltage: v, region_aware: false },
            )?;
            let ws = speedup_vs_alone(&stats, baseline)?;
            let measured_loss = loss_vs_nominal(ws, baseline);
            let nominal = &baseline.nominal;
            let col = nominal.row_hits + nominal.row_misses;
            let hit_rate =
                if col == 0 { 0.0 } else { nominal.row_hits as f64 / col as f64 };
            let delta_l = added_latency_cycles(
                v,
                &profile,
                &config.timing,
                config.clock_ns,
                config.temperature,
                hit_rate,
            )
            .map_err(|e| CliError::Usage(e.into()))?;
            let cpi = nominal.cores.len() as f64 * nominal.total_cycles as f64
                / nominal.total_instructions.max(1) as f64;
            Ok(SampleRow {
                workload: baseline.mix.name.clone(),
                class: baseline.class,
                voltage: v,
                sample: LossSample {
                    delta_l,
                    apki: nominal.aggregate_mpki(),
                    cpi,
                    measured_loss,
                },
            })
        })
        .collect();
    let samples: Vec<SampleRow> = samples.into_iter().collect::<Result<_, _>>()?;

    let fit_class = |class: WorkloadClass| -> Option<LossFit> {
        let subset: Vec<LossSample> =
            samples.iter().filter(|s| s.class == class).map(|s| s.sample).collect();
        fit_loss_model_checked(&subset)
    };

    #[derive(Serialize)]
    struct FitReport {
        memory_intensive: Option<LossFit>,
        non_memory_intensive: Option<LossFit>,
    }

    let report = FitReport {
        memory_intensive: fit_class(WorkloadClass::MemoryIntensive),
        non_memory_intensive: fit_class(WorkloadClass::NonMemoryIntensive),
    };
    let out = &config.output_dir;
    output::write_json(&out.join("loss_models.json"), &report)?;
    let rows: Vec<String> = samples
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{},{},{}",
                s.workload,
                class_label(s.class),
                s.voltage,
                s.sample.delta_l,
                s.sample.apki,
                s.sample.cpi,
                s.sample.measured_loss
            )
        })
        .collect();
    output::write_lines(
        &out.join("loss_samples.csv"),
        "workload,class,voltage,delta_l,apki,cpi,measured_loss",
        &rows,
    )?;
    let show = |name: &str, fit: &Option<LossFit>| match fit {
        Some(f) => println!(
            "fit-loss-model: {name} beta {:.4} (sse {:.3e}, {} samples)",
            f.model.beta, f.residual_sse, f.samples
        ),
        None => println!("fit-loss-model: {name} had too few distinct samples"),
    };
    show("memory_intensive", &report.memory_intensive);
    show("non_memory_intensive", &report.non_memory_intensive);
    Ok(())
}

fn fit_loss_model_checked(samples: &[LossSample]) -> Option<LossFit> {
    voltsim_core::policy::fit_loss_model(samples).ok()
}
