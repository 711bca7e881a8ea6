//! Trace ingestion, synthetic trace generation, and workload classification.
//!
//! Trace text format, one record per line: `<insn_gap> <R|W> <hex address>`.
//! Gzip-compressed trace files are accepted transparently.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dram::Geometry;
use crate::seed::child_rng;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed trace record: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("invalid synthesis parameters: {0}")]
    InvalidSynthParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReqKind {
    Read,
    Write,
}

/// One post-LLC memory request: the number of instructions retired since the
/// previous request on the same core, the kind, and the byte address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRequest {
    pub insn_gap: u64,
    pub kind: ReqKind,
    pub addr: u64,
}

/// One core's ordered request stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub requests: Vec<MemRequest>,
}

impl Trace {
    /// Instructions implied by the trace (sum of gaps).
    pub fn instructions(&self) -> u64 {
        self.requests.iter().map(|r| r.insn_gap).sum()
    }

    /// Memory requests per kilo-instruction; 0 for an instruction-free trace.
    pub fn mpki(&self) -> f64 {
        let insns = self.instructions();
        if insns == 0 {
            return 0.0;
        }
        1000.0 * self.requests.len() as f64 / insns as f64
    }

    /// Fraction of requests that reuse the previous row on their bank.
    pub fn row_hit_rate(&self, geo: &Geometry) -> f64 {
        if self.requests.is_empty() {
            return 0.0;
        }
        let mut last_row = vec![None; geo.total_banks()];
        let mut hits = 0usize;
        for req in &self.requests {
            if let Ok((rank, bank, row, _)) = crate::dram::decode_address(req.addr, geo) {
                let idx = rank * geo.banks_per_rank + bank;
                if last_row[idx] == Some(row) {
                    hits += 1;
                }
                last_row[idx] = Some(row);
            }
        }
        hits as f64 / self.requests.len() as f64
    }
}

/// Loads a trace file, transparently decompressing gzip input.
pub fn load_trace(path: &Path) -> Result<Trace, TraceError> {
    let display = path.display().to_string();
    let io_err = |source| TraceError::Io { path: display.clone(), source };
    let mut file = File::open(path).map_err(io_err)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| TraceError::Io { path: display.clone(), source: e })?;
    let file = File::open(path).map_err(|e| TraceError::Io { path: display.clone(), source: e })?;
    let reader: Box<dyn Read> = if n == 2 && magic == [0x1f, 0x8b] {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_trace(BufReader::new(reader), &display)
}

fn parse_trace<R: BufRead>(reader: R, path: &str) -> Result<Trace, TraceError> {
    let mut requests = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| TraceError::Io { path: path.into(), source: e })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let parse_err = |reason: String| TraceError::Parse {
            path: path.into(),
            line: line_no,
            reason,
        };
        let gap = fields
            .next()
            .ok_or_else(|| parse_err("missing instruction gap".into()))?
            .parse::<u64>()
            .map_err(|e| parse_err(format!("bad instruction gap: {e}")))?;
        let kind = match fields.next() {
            Some("R") => ReqKind::Read,
            Some("W") => ReqKind::Write,
            Some(other) => return Err(parse_err(format!("bad kind {other:?}, expected R or W"))),
            None => return Err(parse_err("missing request kind".into())),
        };
        let addr_text = fields.next().ok_or_else(|| parse_err("missing address".into()))?;
        let addr_text = addr_text.strip_prefix("0x").unwrap_or(addr_text);
        let addr = u64::from_str_radix(addr_text, 16)
            .map_err(|e| parse_err(format!("bad hex address: {e}")))?;
        if let Some(extra) = fields.next() {
            return Err(parse_err(format!("unexpected trailing field {extra:?}")));
        }
        requests.push(MemRequest { insn_gap: gap, kind, addr });
    }
    Ok(Trace { requests })
}

/// Writes a trace in the text format.
pub fn write_trace<W: std::io::Write>(trace: &Trace, mut out: W) -> std::io::Result<()> {
    for r in &trace.requests {
        let kind = match r.kind {
            ReqKind::Read => 'R',
            ReqKind::Write => 'W',
        };
        writeln!(out, "{} {} {:x}", r.insn_gap, kind, r.addr)?;
    }
    Ok(())
}

/// Parameters for synthetic trace generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    /// Target memory requests per kilo-instruction.
    pub target_mpki: f64,
    /// Target fraction of requests reusing the previous row on their bank.
    pub row_buffer_hit_rate: f64,
    /// Number of banks the stream touches.
    pub bank_spread: usize,
    /// Fraction of requests that are reads.
    pub read_fraction: f64,
    pub instruction_count: u64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            target_mpki: 10.0,
            row_buffer_hit_rate: 0.5,
            bank_spread: 8,
            read_fraction: 0.7,
            instruction_count: 1_000_000,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidSynthParams(m));
        if !(0.0..=1.0).contains(&self.row_buffer_hit_rate) {
            return bad("row_buffer_hit_rate must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return bad("read_fraction must be in [0, 1]".into());
        }
        if self.target_mpki < 0.0 {
            return bad("target_mpki must be >= 0".into());
        }
        if self.bank_spread < 1 {
            return bad("bank_spread must be >= 1".into());
        }
        if self.instruction_count < 1 {
            return bad("instruction_count must be >= 1".into());
        }
        Ok(())
    }
}

/// Generates a deterministic synthetic trace hitting the target request rate
/// and row-buffer locality.
///
/// The gap sum equals `instruction_count` exactly, so the realized MPKI is the
/// target up to request-count rounding. Per request: with probability
/// `row_buffer_hit_rate` the stream reuses the last row opened on a uniformly
/// chosen bank, otherwise it opens a fresh uniformly random row.
pub fn synthesize_trace(p: &SynthParams, geo: &Geometry) -> Result<Trace, TraceError> {
    p.validate()?;
    let n_req = ((p.target_mpki * p.instruction_count as f64) / 1000.0).round() as usize;
    if n_req == 0 {
        return Ok(Trace::default());
    }

    // Gap schedule: jittered shares normalized to the exact instruction count.
    let mut rng = child_rng(p.seed, 0);
    let weights: Vec<f64> = (0..n_req).map(|_| rng.gen_range(0.5..1.5)).collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut gaps: Vec<u64> = weights
        .iter()
        .map(|w| (p.instruction_count as f64 * w / weight_sum).floor() as u64)
        .collect();
    let assigned: u64 = gaps.iter().sum();
    let mut remainder = p.instruction_count - assigned;
    let mut i = 0;
    while remainder > 0 {
        gaps[i % n_req] += 1;
        remainder -= 1;
        i += 1;
    }

    let spread = p.bank_spread.min(geo.total_banks());
    let mut addr_rng = child_rng(p.seed, 1);
    let mut last_row: Vec<Option<usize>> = vec![None; spread];
    let mut requests = Vec::with_capacity(n_req);
    for gap in gaps {
        let bank = addr_rng.gen_range(0..spread);
        let hit = addr_rng.gen_bool(p.row_buffer_hit_rate);
        let row = match (hit, last_row[bank]) {
            (true, Some(row)) => row,
            _ => addr_rng.gen_range(0..geo.rows_per_bank),
        };
        last_row[bank] = Some(row);
        let column = addr_rng.gen_range(0..geo.columns_per_row);
        let kind = if addr_rng.gen_bool(p.read_fraction) { ReqKind::Read } else { ReqKind::Write };
        let rank = bank / geo.banks_per_rank;
        let addr =
            crate::dram::encode_address(rank, bank % geo.banks_per_rank, row, column, geo);
        requests.push(MemRequest { insn_gap: gap, kind, addr });
    }
    Ok(Trace { requests })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadClass {
    MemoryIntensive,
    NonMemoryIntensive,
}

/// MPKI threshold above which a workload counts as memory intensive.
pub const MEMORY_INTENSIVE_MPKI: f64 = 15.0;

/// Classifies a workload by its MPKI: memory intensive iff MPKI >= 15.
pub fn classify(mpki: f64) -> WorkloadClass {
    if mpki >= MEMORY_INTENSIVE_MPKI {
        WorkloadClass::MemoryIntensive
    } else {
        WorkloadClass::NonMemoryIntensive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn empty_file_is_an_empty_trace_with_zero_mpki() {
        let trace = parse_trace(Cursor::new(""), "t").unwrap();
        assert!(trace.requests.is_empty());
        assert_eq!(trace.mpki(), 0.0);
    }

    #[test]
    fn single_request_per_kiloinstruction_is_mpki_one() {
        let trace = parse_trace(Cursor::new("1000 R 1f40\n"), "t").unwrap();
        assert_eq!(trace.requests.len(), 1);
        assert_eq!(trace.mpki(), 1.0);
    }

    #[test]
    fn ten_line_fixture_parses_to_the_expected_requests() {
        let text = "\
100 R 0
20 W 40
0 R 80
5 R 0x1000
9 W 2000
1 R 204000
300 R 7c0
4 W 1f400
2 R 10
50 R ffff40
";
        let trace = parse_trace(Cursor::new(text), "t").unwrap();
        assert_eq!(trace.requests.len(), 10);
        assert_eq!(
            trace.requests[0],
            MemRequest { insn_gap: 100, kind: ReqKind::Read, addr: 0 }
        );
        assert_eq!(
            trace.requests[1],
            MemRequest { insn_gap: 20, kind: ReqKind::Write, addr: 0x40 }
        );
        assert_eq!(
            trace.requests[3],
            MemRequest { insn_gap: 5, kind: ReqKind::Read, addr: 0x1000 }
        );
        assert_eq!(
            trace.requests[9],
            MemRequest { insn_gap: 50, kind: ReqKind::Read, addr: 0xffff40 }
        );
        assert_eq!(trace.instructions(), 491);
    }

    #[test]
    fn parse_errors_carry_the_line_number() {
        let err = parse_trace(Cursor::new("10 R 40\nbogus\n"), "t").unwrap_err();
        match err {
            TraceError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_trace(Cursor::new("10 X 40\n"), "t").unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
    }

    #[test]
    fn round_trip_through_the_text_format() {
        let geo = Geometry::default();
        let p = SynthParams { target_mpki: 5.0, instruction_count: 100_000, ..Default::default() };
        let trace = synthesize_trace(&p, &geo).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let parsed = parse_trace(Cursor::new(buf), "t").unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn gzip_traces_load_transparently() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        use std::io::Write;

        let dir = std::env::temp_dir().join(format!("voltsim-trace-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::default());
        enc.write_all(b"10 R 40\n20 W 80\n").unwrap();
        enc.finish().unwrap();
        let trace = load_trace(&path).unwrap();
        assert_eq!(trace.requests.len(), 2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn zero_target_mpki_synthesizes_zero_requests() {
        let p = SynthParams { target_mpki: 0.0, ..Default::default() };
        let trace = synthesize_trace(&p, &Geometry::default()).unwrap();
        assert!(trace.requests.is_empty());
    }

    #[test]
    fn synthesis_hits_the_mpki_target() {
        let geo = Geometry::default();
        let p = SynthParams {
            target_mpki: 20.0,
            instruction_count: 1_000_000,
            ..Default::default()
        };
        let trace = synthesize_trace(&p, &geo).unwrap();
        let n = trace.requests.len() as f64;
        assert!((n - 20_000.0).abs() / 20_000.0 < 0.05, "{n} requests");
        assert!((trace.mpki() - 20.0).abs() / 20.0 < 0.05);
        assert_eq!(trace.instructions(), 1_000_000);
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let geo = Geometry::default();
        let p = SynthParams { target_mpki: 8.0, instruction_count: 200_000, ..Default::default() };
        assert_eq!(synthesize_trace(&p, &geo).unwrap(), synthesize_trace(&p, &geo).unwrap());
        let other = SynthParams { seed: 1, ..p };
        assert_ne!(synthesize_trace(&p, &geo).unwrap(), synthesize_trace(&other, &geo).unwrap());
    }

    #[test]
    fn synthesis_hits_the_row_hit_rate_target() {
        let geo = Geometry::default();
        for target in [0.0, 0.3, 0.8] {
            let p = SynthParams {
                target_mpki: 20.0,
                row_buffer_hit_rate: target,
                instruction_count: 1_000_000,
                ..Default::default()
            };
            let trace = synthesize_trace(&p, &geo).unwrap();
            let realized = trace.row_hit_rate(&geo);
            assert!(
                (realized - target).abs() < 0.05,
                "target {target}, realized {realized}"
            );
        }
    }

    #[test]
    fn synthesis_calibration_over_random_draws() {
        use rand::Rng;
        let geo = Geometry::default();
        let mut rng = crate::seed::child_rng(99, 0);
        for i in 0..100 {
            let p = SynthParams {
                target_mpki: rng.gen_range(1.0..40.0),
                row_buffer_hit_rate: rng.gen_range(0.0..1.0),
                bank_spread: rng.gen_range(1..=8),
                read_fraction: rng.gen_range(0.0..1.0),
                instruction_count: 150_000,
                seed: i,
            };
            let trace = synthesize_trace(&p, &geo).unwrap();
            assert!((trace.mpki() - p.target_mpki).abs() / p.target_mpki < 0.05);
            let realized = trace.row_hit_rate(&geo);
            assert!(
                (realized - p.row_buffer_hit_rate).abs() < 0.05,
                "draw {i}: target {}, realized {realized}",
                p.row_buffer_hit_rate
            );
        }
    }

    #[test]
    fn classification_boundary_is_closed_at_fifteen() {
        assert_eq!(classify(15.0), WorkloadClass::MemoryIntensive);
        assert_eq!(classify(14.999), WorkloadClass::NonMemoryIntensive);
        assert_eq!(classify(0.0), WorkloadClass::NonMemoryIntensive);
        assert_eq!(classify(40.0), WorkloadClass::MemoryIntensive);
    }
}
