//! DRAM and CPU energy accounting.
//!
//! DRAM energy is split into array, peripheral, and IO components. Array
//! energy scales with the square of the array voltage; peripheral energy
//! follows the peripheral voltage, which stays at nominal unless a policy
//! scales the channel. The CPU model is two parameters: static power per core
//! and dynamic energy per instruction.

use serde::{Deserialize, Serialize};

use crate::dram::CommandKind;

/// Per-command energies in nanojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandEnergies {
    pub act: f64,
    pub rd: f64,
    pub wr: f64,
    pub pre: f64,
    pub refresh: f64,
}

impl CommandEnergies {
    pub fn get(&self, kind: CommandKind) -> f64 {
        match kind {
            CommandKind::Act => self.act,
            CommandKind::Rd => self.rd,
            CommandKind::Wr => self.wr,
            CommandKind::Pre => self.pre,
            CommandKind::Ref => self.refresh,
        }
    }
}

/// How background (leakage + standby) power scales with the array voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackgroundScaling {
    VSquared,
    Linear,
}

/// Energy calibration for one memory channel plus the CPU model.
///
/// The shipped values are illustrative placeholders at memory-system scale,
/// not measurements; every field is config-overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerProfile {
    /// Array energy per command at nominal voltage, nJ.
    pub array: CommandEnergies,
    /// Peripheral energy per command at nominal voltage, nJ.
    pub peripheral: CommandEnergies,
    /// Array background power with every bank's row open, mW.
    pub bg_array_open_mw: f64,
    /// Array background power with every bank precharged, mW.
    pub bg_array_closed_mw: f64,
    /// Peripheral background power, mW.
    pub bg_peripheral_mw: f64,
    /// IO energy per transferred cache line, nJ.
    pub io_energy_per_line: f64,
    /// CPU static power per core, W.
    pub cpu_static_power: f64,
    /// CPU dynamic energy per retired instruction, nJ.
    pub cpu_energy_per_instruction: f64,
    /// Reference (nominal) voltage for the V^2 scaling.
    pub v_ref: f64,
    #[serde(default = "default_bg_scaling")]
    pub background_scaling: BackgroundScaling,
}

fn default_bg_scaling() -> BackgroundScaling {
    BackgroundScaling::VSquared
}

impl Default for PowerProfile {
    /// Memory-system-scale placeholders calibrated so the DRAM side carries
    /// roughly the server-class share of system energy under a
    /// memory-intensive quad-core load. Not measurements.
    fn default() -> Self {
        PowerProfile {
            array: CommandEnergies { act: 200.0, rd: 110.0, wr: 120.0, pre: 80.0, refresh: 1500.0 },
            peripheral: CommandEnergies { act: 40.0, rd: 90.0, wr: 90.0, pre: 20.0, refresh: 200.0 },
            bg_array_open_mw: 9500.0,
            bg_array_closed_mw: 7000.0,
            bg_peripheral_mw: 3500.0,
            io_energy_per_line: 100.0,
            cpu_static_power: 10.0,
            cpu_energy_per_instruction: 0.4,
            v_ref: 1.35,
            background_scaling: BackgroundScaling::VSquared,
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            self.array.act,
            self.array.rd,
            self.array.wr,
            self.array.pre,
            self.array.refresh,
            self.peripheral.act,
            self.peripheral.rd,
            self.peripheral.wr,
            self.peripheral.pre,
            self.peripheral.refresh,
            self.bg_array_open_mw,
            self.bg_array_closed_mw,
            self.bg_peripheral_mw,
            self.io_energy_per_line,
            self.cpu_static_power,
            self.cpu_energy_per_instruction,
        ];
        if fields.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err("power profile entries must be non-negative".into());
        }
        if !(self.v_ref > 0.0) {
            return Err("v_ref must be > 0".into());
        }
        Ok(())
    }

    fn array_scale(&self, v_array: f64) -> f64 {
        let r = v_array / self.v_ref;
        r * r
    }

    fn periph_scale(&self, v_periph: f64) -> f64 {
        let r = v_periph / self.v_ref;
        r * r
    }

    fn bg_scale(&self, v_array: f64) -> f64 {
        let r = v_array / self.v_ref;
        match self.background_scaling {
            BackgroundScaling::VSquared => r * r,
            BackgroundScaling::Linear => r,
        }
    }
}

/// Energy of one command as (array nJ, peripheral nJ).
///
/// Array energy scales as (v_array / v_ref)^2. Peripheral energy scales with
/// the peripheral voltage, which array-only scaling leaves at nominal and a
/// frequency/voltage ladder moves in lockstep with its paired frequency.
pub fn command_energy(
    kind: CommandKind,
    v_array: f64,
    v_periph: f64,
    prof: &PowerProfile,
) -> (f64, f64) {
    (
        prof.array.get(kind) * prof.array_scale(v_array),
        prof.peripheral.get(kind) * prof.periph_scale(v_periph),
    )
}

/// Background energy over `elapsed_ns` as (array nJ, peripheral nJ).
///
/// The array rate blends the closed- and open-row powers by the fraction of
/// banks with an open row.
pub fn background_energy(
    elapsed_ns: f64,
    open_banks: usize,
    total_banks: usize,
    v_array: f64,
    v_periph: f64,
    prof: &PowerProfile,
) -> (f64, f64) {
    debug_assert!(open_banks <= total_banks);
    let open_frac = if total_banks == 0 { 0.0 } else { open_banks as f64 / total_banks as f64 };
    let array_mw = prof.bg_array_closed_mw
        + (prof.bg_array_open_mw - prof.bg_array_closed_mw) * open_frac;
    // mW * ns = 1e-3 nJ.
    let array_nj = array_mw * prof.bg_scale(v_array) * elapsed_ns * 1e-3;
    let periph_nj = prof.bg_peripheral_mw * prof.periph_scale(v_periph) * elapsed_ns * 1e-3;
    (array_nj, periph_nj)
}

/// Energy totals of a finished run, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dram_array: f64,
    pub dram_peripheral: f64,
    pub dram_io: f64,
    pub cpu: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn dram_total(&self) -> f64 {
        self.dram_array + self.dram_peripheral + self.dram_io
    }
}

/// One entry of the energy audit log; replaying the log reproduces the
/// accumulated totals exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyEvent {
    Command { kind: CommandKind, v_array: f64, v_periph: f64 },
    Background {
        elapsed_ns: f64,
        open_banks: usize,
        total_banks: usize,
        v_array: f64,
        v_periph: f64,
    },
    IoLine,
}

/// Streaming energy accumulator owned by one simulation.
#[derive(Debug, Clone)]
pub struct EnergyAccumulator {
    prof: PowerProfile,
    array_nj: f64,
    periph_nj: f64,
    io_nj: f64,
    audit: Option<Vec<EnergyEvent>>,
}

impl EnergyAccumulator {
    pub fn new(prof: PowerProfile, audit: bool) -> Self {
        EnergyAccumulator {
            prof,
            array_nj: 0.0,
            periph_nj: 0.0,
            io_nj: 0.0,
            audit: audit.then(Vec::new),
        }
    }

    pub fn record_command(&mut self, kind: CommandKind, v_array: f64, v_periph: f64) {
        let (a, p) = command_energy(kind, v_array, v_periph, &self.prof);
        self.array_nj += a;
        self.periph_nj += p;
        if let Some(log) = &mut self.audit {
            log.push(EnergyEvent::Command { kind, v_array, v_periph });
        }
    }

    pub fn record_background(
        &mut self,
        elapsed_ns: f64,
        open_banks: usize,
        total_banks: usize,
        v_array: f64,
        v_periph: f64,
    ) {
        if elapsed_ns <= 0.0 {
            return;
        }
        let (a, p) =
            background_energy(elapsed_ns, open_banks, total_banks, v_array, v_periph, &self.prof);
        self.array_nj += a;
        self.periph_nj += p;
        if let Some(log) = &mut self.audit {
            log.push(EnergyEvent::Background {
                elapsed_ns,
                open_banks,
                total_banks,
                v_array,
                v_periph,
            });
        }
    }

    pub fn record_io_line(&mut self) {
        self.io_nj += self.prof.io_energy_per_line;
        if let Some(log) = &mut self.audit {
            log.push(EnergyEvent::IoLine);
        }
    }

    pub fn audit_log(&self) -> Option<&[EnergyEvent]> {
        self.audit.as_deref()
    }

    /// Closes the books: adds the CPU terms and produces the breakdown.
    pub fn finalize(&self, wall_ns: f64, cores: usize, instructions: u64) -> EnergyBreakdown {
        let cpu = self.prof.cpu_static_power * cores as f64 * wall_ns * 1e-9
            + self.prof.cpu_energy_per_instruction * instructions as f64 * 1e-9;
        let dram_array = self.array_nj * 1e-9;
        let dram_peripheral = self.periph_nj * 1e-9;
        let dram_io = self.io_nj * 1e-9;
        EnergyBreakdown {
            dram_array,
            dram_peripheral,
            dram_io,
            cpu,
            total: dram_array + dram_peripheral + dram_io + cpu,
        }
    }
}

/// Recomputes the breakdown from an audit log, summing in log order so the
/// result is bit-identical to the streamed accumulation.
pub fn recompute_from_log(
    log: &[EnergyEvent],
    prof: &PowerProfile,
    wall_ns: f64,
    cores: usize,
    instructions: u64,
) -> EnergyBreakdown {
    let mut acc = EnergyAccumulator::new(prof.clone(), false);
    for event in log {
        match *event {
            EnergyEvent::Command { kind, v_array, v_periph } => {
                acc.record_command(kind, v_array, v_periph)
            }
            EnergyEvent::Background { elapsed_ns, open_banks, total_banks, v_array, v_periph } => {
                acc.record_background(elapsed_ns, open_banks, total_banks, v_array, v_periph)
            }
            EnergyEvent::IoLine => acc.record_io_line(),
        }
    }
    acc.finalize(wall_ns, cores, instructions)
}
