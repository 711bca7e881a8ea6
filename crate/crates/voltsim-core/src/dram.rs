//! DRAM device geometry, command set, per-bank state machine, and
//! timing-constraint enforcement.
//!
//! The controller model is deliberately small: five commands (ACT, RD, WR,
//! PRE, REF) and the four constraints that govern them — tRP before a new
//! activation, tRCD before column access, tRAS before precharge, and tRFC
//! after refresh. Restoration is modeled as the tRAS window after ACT.
//! Nanosecond parameters convert to bus cycles by ceiling division so a
//! command is never issued earlier than the analog timing allows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in memory-bus cycles.
pub type Cycle = u64;

#[derive(Debug, Error, PartialEq)]
pub enum DramError {
    #[error("address {addr:#x} out of range (capacity {capacity:#x})")]
    AddressOutOfRange { addr: u64, capacity: u64 },
    #[error("command {cmd:?} illegal for bank status {status:?}")]
    Protocol { cmd: CommandKind, status: BankStatus },
    #[error("command {cmd:?} at cycle {cycle} violates timing (earliest legal {earliest})")]
    TimingViolation { cmd: CommandKind, cycle: Cycle, earliest: Cycle },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid timing parameters: {0}")]
    InvalidTiming(String),
}

/// Device geometry. Address decoding and the fault model index banks and rows
/// through this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub channels: usize,
    pub ranks_per_channel: usize,
    pub banks_per_rank: usize,
    pub rows_per_bank: usize,
    pub columns_per_row: usize,
    pub cache_line_bytes: usize,
}

impl Default for Geometry {
    /// 2GB module: 8 banks x 32K rows x 128 columns x 64B lines.
    fn default() -> Self {
        Geometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 8,
            rows_per_bank: 32768,
            columns_per_row: 128,
            cache_line_bytes: 64,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<(), DramError> {
        let counts = [
            ("channels", self.channels),
            ("ranks_per_channel", self.ranks_per_channel),
            ("banks_per_rank", self.banks_per_rank),
            ("rows_per_bank", self.rows_per_bank),
            ("columns_per_row", self.columns_per_row),
            ("cache_line_bytes", self.cache_line_bytes),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(DramError::InvalidGeometry(format!("{name} must be >= 1")));
            }
        }
        if !self.banks_per_rank.is_power_of_two() {
            return Err(DramError::InvalidGeometry(
                "banks_per_rank must be a power of two".into(),
            ));
        }
        if !self.rows_per_bank.is_power_of_two() {
            return Err(DramError::InvalidGeometry(
                "rows_per_bank must be a power of two".into(),
            ));
        }
        Ok(())
    }

    /// Addressable bytes on one channel.
    pub fn capacity_bytes(&self) -> u64 {
        self.ranks_per_channel as u64
            * self.banks_per_rank as u64
            * self.rows_per_bank as u64
            * self.columns_per_row as u64
            * self.cache_line_bytes as u64
    }

    /// Total banks on one channel (all ranks).
    pub fn total_banks(&self) -> usize {
        self.ranks_per_channel * self.banks_per_rank
    }

    pub fn line_bits(&self) -> usize {
        self.cache_line_bytes * 8
    }
}

/// DRAM timing constraints in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    /// Activation: row open to column access.
    pub t_rcd: f64,
    /// Restoration window: activate to precharge.
    pub t_ras: f64,
    /// Precharge.
    pub t_rp: f64,
    /// Refresh cycle duration.
    pub t_rfc: f64,
    /// Refresh command interval.
    pub t_refi: f64,
    /// Column access (read latency).
    pub t_cl: f64,
    /// Data burst occupancy per cache line.
    pub t_burst: f64,
}

impl Default for TimingParams {
    /// DDR3L-class values at the nominal 1333 MT/s data rate.
    fn default() -> Self {
        TimingParams {
            t_rcd: 13.75,
            t_ras: 35.0,
            t_rp: 13.75,
            t_rfc: 260.0,
            t_refi: 7812.5,
            t_cl: 13.75,
            t_burst: 4.0,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), DramError> {
        let fields = [
            ("t_rcd", self.t_rcd),
            ("t_ras", self.t_ras),
            ("t_rp", self.t_rp),
            ("t_rfc", self.t_rfc),
            ("t_refi", self.t_refi),
            ("t_cl", self.t_cl),
            ("t_burst", self.t_burst),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DramError::InvalidTiming(format!("{name} must be > 0")));
            }
        }
        if self.t_ras < self.t_rcd {
            return Err(DramError::InvalidTiming("t_ras must be >= t_rcd".into()));
        }
        if self.t_refi <= self.t_rfc {
            return Err(DramError::InvalidTiming("t_refi must be > t_rfc".into()));
        }
        Ok(())
    }
}

/// Converts a nanosecond interval to bus cycles, rounding up so converted
/// timings never undercut the analog constraint.
pub fn ns_to_cycles(ns: f64, clock_ns: f64) -> Cycle {
    debug_assert!(clock_ns > 0.0);
    (ns / clock_ns).ceil() as Cycle
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandKind {
    Act,
    Rd,
    Wr,
    Pre,
    Ref,
}

/// A controller command addressed to one bank. ACT carries the row, RD/WR
/// carry the column, PRE/REF carry neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Command {
    pub bank: usize,
    pub op: CommandOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandOp {
    Act { row: usize },
    Rd { column: usize },
    Wr { column: usize },
    Pre,
    Ref,
}

impl Command {
    pub fn act(bank: usize, row: usize) -> Self {
        Command { bank, op: CommandOp::Act { row } }
    }
    pub fn rd(bank: usize, column: usize) -> Self {
        Command { bank, op: CommandOp::Rd { column } }
    }
    pub fn wr(bank: usize, column: usize) -> Self {
        Command { bank, op: CommandOp::Wr { column } }
    }
    pub fn pre(bank: usize) -> Self {
        Command { bank, op: CommandOp::Pre }
    }
    pub fn refresh(bank: usize) -> Self {
        Command { bank, op: CommandOp::Ref }
    }

    pub fn kind(&self) -> CommandKind {
        match self.op {
            CommandOp::Act { .. } => CommandKind::Act,
            CommandOp::Rd { .. } => CommandKind::Rd,
            CommandOp::Wr { .. } => CommandKind::Wr,
            CommandOp::Pre => CommandKind::Pre,
            CommandOp::Ref => CommandKind::Ref,
        }
    }
}

/// Decodes a byte address into (rank, bank, row, column).
///
/// Bit layout, high to low: row : rank : bank : column : line-offset. The
/// mapping is a mixed-radix decomposition, bijective over one channel's
/// address space.
pub fn decode_address(addr: u64, geo: &Geometry) -> Result<(usize, usize, usize, usize), DramError> {
    let capacity = geo.capacity_bytes();
    if addr >= capacity {
        return Err(DramError::AddressOutOfRange { addr, capacity });
    }
    let line = addr / geo.cache_line_bytes as u64;
    let column = (line % geo.columns_per_row as u64) as usize;
    let rest = line / geo.columns_per_row as u64;
    let bank = (rest % geo.banks_per_rank as u64) as usize;
    let rest = rest / geo.banks_per_rank as u64;
    let rank = (rest % geo.ranks_per_channel as u64) as usize;
    let row = (rest / geo.ranks_per_channel as u64) as usize;
    Ok((rank, bank, row, column))
}

/// Inverse of [`decode_address`] (line-offset zero).
pub fn encode_address(rank: usize, bank: usize, row: usize, column: usize, geo: &Geometry) -> u64 {
    let line = ((row as u64 * geo.ranks_per_channel as u64 + rank as u64)
        * geo.banks_per_rank as u64
        + bank as u64)
        * geo.columns_per_row as u64
        + column as u64;
    line * geo.cache_line_bytes as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BankStatus {
    Precharged,
    Activating,
    RowOpen,
    Precharging,
    Refreshing,
}

/// Per-bank state. `status` holds the settled target of the last command;
/// [`BankState::status_at`] reports the transient phase (Activating,
/// Precharging) while `busy_until` has not yet passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankState {
    status: BankStatus,
    open_row: Option<usize>,
    busy_until: Cycle,
    last_activate: Cycle,
}

impl Default for BankState {
    fn default() -> Self {
        BankState {
            status: BankStatus::Precharged,
            open_row: None,
            busy_until: 0,
            last_activate: 0,
        }
    }
}

impl BankState {
    pub fn open_row(&self) -> Option<usize> {
        self.open_row
    }

    pub fn busy_until(&self) -> Cycle {
        self.busy_until
    }

    pub fn last_activate(&self) -> Cycle {
        self.last_activate
    }

    /// Settled status: Refreshing resolves to Precharged once tRFC has
    /// elapsed.
    pub fn status(&self) -> BankStatus {
        self.status
    }

    /// Status as observed at `cycle`, including transient phases.
    pub fn status_at(&self, cycle: Cycle) -> BankStatus {
        match self.status {
            BankStatus::RowOpen if cycle < self.busy_until => BankStatus::Activating,
            BankStatus::Precharged if cycle < self.busy_until => BankStatus::Precharging,
            BankStatus::Refreshing if cycle >= self.busy_until => BankStatus::Precharged,
            s => s,
        }
    }

    fn is_openable(&self) -> bool {
        matches!(self.status, BankStatus::Precharged | BankStatus::Refreshing)
    }

    /// Earliest cycle >= `now` at which `cmd` may legally be issued.
    ///
    /// Constraints enforced: ACT waits for tRP/tRFC via `busy_until`; RD/WR
    /// wait tRCD after the activation; PRE waits tRAS after the activation;
    /// REF waits for all prior bank activity.
    pub fn min_issue_cycle(
        &self,
        cmd: &Command,
        t: &TimingParams,
        clock_ns: f64,
        now: Cycle,
    ) -> Result<Cycle, DramError> {
        let earliest = match cmd.op {
            CommandOp::Act { .. } => {
                if !self.is_openable() {
                    return Err(DramError::Protocol { cmd: cmd.kind(), status: self.status });
                }
                self.busy_until
            }
            CommandOp::Rd { .. } | CommandOp::Wr { .. } => {
                if self.status != BankStatus::RowOpen {
                    return Err(DramError::Protocol { cmd: cmd.kind(), status: self.status });
                }
                self.last_activate + ns_to_cycles(t.t_rcd, clock_ns)
            }
            CommandOp::Pre => {
                if self.status != BankStatus::RowOpen {
                    return Err(DramError::Protocol { cmd: cmd.kind(), status: self.status });
                }
                self.last_activate + ns_to_cycles(t.t_ras, clock_ns)
            }
            CommandOp::Ref => {
                if !self.is_openable() {
                    return Err(DramError::Protocol { cmd: cmd.kind(), status: self.status });
                }
                self.busy_until
            }
        };
        Ok(earliest.max(now))
    }

    /// Applies `cmd` at `cycle`, returning the successor state.
    ///
    /// A `cycle` earlier than [`Self::min_issue_cycle`] is a timing violation
    /// and is rejected, never silently accepted.
    pub fn apply_command(
        &self,
        cmd: &Command,
        cycle: Cycle,
        t: &TimingParams,
        clock_ns: f64,
    ) -> Result<BankState, DramError> {
        let earliest = self.min_issue_cycle(cmd, t, clock_ns, 0)?;
        if cycle < earliest {
            return Err(DramError::TimingViolation { cmd: cmd.kind(), cycle, earliest });
        }
        let mut next = *self;
        match cmd.op {
            CommandOp::Act { row } => {
                next.status = BankStatus::RowOpen;
                next.open_row = Some(row);
                next.last_activate = cycle;
                next.busy_until = cycle + ns_to_cycles(t.t_rcd, clock_ns);
            }
            CommandOp::Rd { .. } | CommandOp::Wr { .. } => {
                // Column commands leave the row open under the open-page
                // policy; bus occupancy is tracked by the controller.
            }
            CommandOp::Pre => {
                next.status = BankStatus::Precharged;
                next.open_row = None;
                next.busy_until = cycle + ns_to_cycles(t.t_rp, clock_ns);
            }
            CommandOp::Ref => {
                next.status = BankStatus::Refreshing;
                next.open_row = None;
                next.busy_until = cycle + ns_to_cycles(t.t_rfc, clock_ns);
            }
        }
        debug_assert!(next.busy_until >= self.busy_until);
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLOCK: f64 = 0.625;

    fn default_timing() -> TimingParams {
        TimingParams::default()
    }

    #[test]
    fn decode_zero_maps_to_origin() {
        let geo = Geometry::default();
        assert_eq!(decode_address(0, &geo).unwrap(), (0, 0, 0, 0));
    }

    #[test]
    fn decode_next_line_is_next_column() {
        let geo = Geometry::default();
        let addr = geo.cache_line_bytes as u64;
        assert_eq!(decode_address(addr, &geo).unwrap(), (0, 0, 0, 1));
    }

    #[test]
    fn decode_one_full_row_rolls_into_next_bank() {
        // One full row of columns times the line size lands at the next bank
        // under the row:rank:bank:column:offset layout.
        let geo = Geometry::default();
        let addr = (geo.columns_per_row * geo.cache_line_bytes) as u64;
        assert_eq!(decode_address(addr, &geo).unwrap(), (0, 1, 0, 0));
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let geo = Geometry::default();
        let cap = geo.capacity_bytes();
        assert!(matches!(
            decode_address(cap, &geo),
            Err(DramError::AddressOutOfRange { .. })
        ));
        assert!(decode_address(cap - 1, &geo).is_ok());
    }

    #[test]
    fn decode_is_bijective_on_tiny_geometry() {
        // Full enumeration over 2 banks x 4 rows x 4 columns.
        let geo = Geometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 2,
            rows_per_bank: 4,
            columns_per_row: 4,
            cache_line_bytes: 8,
        };
        let mut seen = std::collections::HashSet::new();
        for line in 0..(geo.capacity_bytes() / geo.cache_line_bytes as u64) {
            let addr = line * geo.cache_line_bytes as u64;
            let tuple = decode_address(addr, &geo).unwrap();
            assert!(seen.insert(tuple), "duplicate mapping for {tuple:?}");
            let (rank, bank, row, col) = tuple;
            assert_eq!(encode_address(rank, bank, row, col, &geo), addr);
        }
        assert_eq!(seen.len(), 32);
    }

    #[test]
    fn act_on_idle_precharged_bank_issues_now() {
        let bank = BankState::default();
        let t = default_timing();
        let cmd = Command::act(0, 5);
        assert_eq!(bank.min_issue_cycle(&cmd, &t, CLOCK, 100).unwrap(), 100);
    }

    #[test]
    fn rd_on_open_row_with_past_busy_issues_now() {
        let t = default_timing();
        let bank = BankState::default()
            .apply_command(&Command::act(0, 5), 10, &t, CLOCK)
            .unwrap();
        // tRCD = ceil(13.75/0.625) = 22 cycles; well past it.
        let now = 10 + 500;
        let cmd = Command::rd(0, 3);
        assert_eq!(bank.min_issue_cycle(&cmd, &t, CLOCK, now).unwrap(), now);
    }

    #[test]
    fn pre_after_act_waits_t_ras() {
        // tRAS = 35ns at 0.625 ns/cycle -> 56 cycles after the activation.
        let t = default_timing();
        let c = 40;
        let bank = BankState::default()
            .apply_command(&Command::act(0, 7), c, &t, CLOCK)
            .unwrap();
        let cmd = Command::pre(0);
        assert_eq!(ns_to_cycles(35.0, CLOCK), 56);
        assert_eq!(bank.min_issue_cycle(&cmd, &t, CLOCK, c).unwrap(), c + 56);
        // If `now` already exceeds the constraint the answer is `now`.
        assert_eq!(
            bank.min_issue_cycle(&cmd, &t, CLOCK, c + 100).unwrap(),
            c + 100
        );
    }

    #[test]
    fn transitions_follow_the_state_machine() {
        let t = default_timing();
        let bank = BankState::default();

        let opened = bank.apply_command(&Command::act(0, 5), 0, &t, CLOCK).unwrap();
        assert_eq!(opened.status(), BankStatus::RowOpen);
        assert_eq!(opened.open_row(), Some(5));
        // Transiently activating until tRCD has elapsed.
        assert_eq!(opened.status_at(10), BankStatus::Activating);
        assert_eq!(opened.status_at(22), BankStatus::RowOpen);

        let read = opened.apply_command(&Command::rd(0, 1), 22, &t, CLOCK).unwrap();
        assert_eq!(read.open_row(), Some(5));

        let closed = read.apply_command(&Command::pre(0), 56, &t, CLOCK).unwrap();
        assert_eq!(closed.status(), BankStatus::Precharged);
        assert_eq!(closed.open_row(), None);

        let refreshed = closed
            .apply_command(&Command::refresh(0), 56 + 22, &t, CLOCK)
            .unwrap();
        assert_eq!(refreshed.status(), BankStatus::Refreshing);
        let done = refreshed.busy_until();
        assert_eq!(refreshed.status_at(done - 1), BankStatus::Refreshing);
        assert_eq!(refreshed.status_at(done), BankStatus::Precharged);
    }

    #[test]
    fn early_command_is_a_timing_violation() {
        let t = default_timing();
        let bank = BankState::default()
            .apply_command(&Command::act(0, 5), 0, &t, CLOCK)
            .unwrap();
        let err = bank.apply_command(&Command::rd(0, 0), 1, &t, CLOCK).unwrap_err();
        assert!(matches!(err, DramError::TimingViolation { earliest: 22, .. }));
    }

    #[test]
    fn illegal_commands_are_protocol_errors() {
        let t = default_timing();
        let bank = BankState::default();
        assert!(matches!(
            bank.min_issue_cycle(&Command::rd(0, 0), &t, CLOCK, 0),
            Err(DramError::Protocol { .. })
        ));
        let open = bank.apply_command(&Command::act(0, 1), 0, &t, CLOCK).unwrap();
        assert!(matches!(
            open.min_issue_cycle(&Command::act(0, 2), &t, CLOCK, 0),
            Err(DramError::Protocol { .. })
        ));
        assert!(matches!(
            open.min_issue_cycle(&Command::refresh(0), &t, CLOCK, 0),
            Err(DramError::Protocol { .. })
        ));
    }

    #[test]
    fn timing_validation_rejects_inverted_windows() {
        let mut t = default_timing();
        t.t_ras = 10.0;
        assert!(t.validate().is_err());
        let mut t = default_timing();
        t.t_refi = t.t_rfc;
        assert!(t.validate().is_err());
        let mut t = default_timing();
        t.t_rcd = 0.0;
        assert!(t.validate().is_err());
        assert!(default_timing().validate().is_ok());
    }

    #[test]
    fn geometry_validation() {
        assert!(Geometry::default().validate().is_ok());
        let mut g = Geometry::default();
        g.banks_per_rank = 6;
        assert!(g.validate().is_err());
        let mut g = Geometry::default();
        g.rows_per_bank = 0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn ceiling_conversion_is_conservative() {
        assert_eq!(ns_to_cycles(13.75, 0.625), 22);
        assert_eq!(ns_to_cycles(4.0, 0.625), 7);
        assert_eq!(ns_to_cycles(0.1, 0.625), 1);
        assert_eq!(ns_to_cycles(7812.5, 0.625), 12500);
    }

    // Randomized legal command sequences never observe an applied cycle below
    // min_issue_cycle (apply_command re-checks and would error).
    #[test]
    fn random_legal_sequences_never_violate_timing() {
        use rand::{Rng, SeedableRng};
        let t = default_timing();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xd5a);
        for _ in 0..200 {
            let mut bank = BankState::default();
            let mut now: Cycle = 0;
            for _ in 0..64 {
                let cmd = match bank.status() {
                    BankStatus::RowOpen => match rng.gen_range(0..3) {
                        0 => Command::rd(0, rng.gen_range(0..128)),
                        1 => Command::wr(0, rng.gen_range(0..128)),
                        _ => Command::pre(0),
                    },
                    _ => {
                        if rng.gen_bool(0.2) {
                            Command::refresh(0)
                        } else {
                            Command::act(0, rng.gen_range(0..1024))
                        }
                    }
                };
                let earliest = bank.min_issue_cycle(&cmd, &t, CLOCK, now).unwrap();
                let issue = earliest + rng.gen_range(0..4);
                bank = bank.apply_command(&cmd, issue, &t, CLOCK).unwrap();
                now = issue;
            }
        }
    }
}
