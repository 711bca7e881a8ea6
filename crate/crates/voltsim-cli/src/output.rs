//! Report-file writers. Every file is UTF-8 with LF line endings and a
//! documented, stable column set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use voltsim_core::energy::EnergyBreakdown;
use voltsim_core::fault::ErrorMap;
use voltsim_core::sim::SimStats;

pub fn write_stats_json(path: &Path, stats: &SimStats) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, stats)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn write_energy_csv(path: &Path, energy: &EnergyBreakdown) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "component,joules")?;
    writeln!(w, "dram_array,{}", energy.dram_array)?;
    writeln!(w, "dram_peripheral,{}", energy.dram_peripheral)?;
    writeln!(w, "dram_io,{}", energy.dram_io)?;
    writeln!(w, "cpu,{}", energy.cpu)?;
    writeln!(w, "total,{}", energy.total)?;
    w.flush()
}

pub fn write_policy_log_csv(path: &Path, stats: &SimStats) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,voltage,tRCD,tRAS,tRP,predicted_loss,mpki,bw_util")?;
    for d in &stats.decisions {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            d.epoch,
            d.voltage,
            d.timings.t_rcd,
            d.timings.t_ras,
            d.timings.t_rp,
            d.predicted_loss,
            d.mpki,
            d.bw_util
        )?;
    }
    w.flush()
}

pub fn write_errmap_csv(path: &Path, map: &ErrorMap) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bank,row,probability")?;
    for (bank, rows) in map.grid.iter().enumerate() {
        for (row, p) in rows.iter().enumerate() {
            writeln!(w, "{bank},{row},{p}")?;
        }
    }
    w.flush()
}

/// Dense plot-ready grid: little-endian f64, row-major over banks then rows.
pub fn write_errmap_bin(path: &Path, map: &ErrorMap) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rows in &map.grid {
        for p in rows {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn write_lines(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}
