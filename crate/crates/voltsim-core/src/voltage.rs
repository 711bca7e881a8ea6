//! Array-voltage to timing mapping.
//!
//! A [`VoltageProfile`] is the per-device calibration: an anchor table mapping
//! array voltage to the timing parameters required for reliable operation,
//! error-onset parameters for operation outside that envelope, a weak-region
//! map, and a temperature latency factor. Required tRCD/tRAS/tRP interpolate
//! piecewise-linearly between anchors; refresh and peripheral timings (tRFC,
//! tREFI, tCL, tBURST) never change with array voltage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dram::TimingParams;
use crate::fault::WeakRegion;

/// Array voltage in volts.
pub type Volts = f64;

#[derive(Debug, Error, PartialEq)]
pub enum VoltageError {
    #[error("voltage {v} outside modeled range [{lo}, {hi}]")]
    OutOfRange { v: Volts, lo: Volts, hi: Volts },
    #[error("invalid voltage profile: {0}")]
    InvalidProfile(String),
}

/// Shape of the error-probability growth below the onset voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnsetShape {
    Exponential,
    Linear,
}

/// Parameters of the error-onset curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorOnsetParams {
    /// Probability of >=1 bit error per cache line at the onset voltage.
    pub p0: f64,
    /// Growth slope in 1/volts.
    pub k: f64,
    #[serde(default = "default_shape")]
    pub shape: OnsetShape,
    /// Scalar on `p0` for data-pattern sensitivity.
    #[serde(default = "default_pattern_multiplier")]
    pub pattern_multiplier: f64,
}

fn default_shape() -> OnsetShape {
    OnsetShape::Exponential
}

fn default_pattern_multiplier() -> f64 {
    1.0
}

impl ErrorOnsetParams {
    /// Probability at `delta_v` volts below the onset (0 at or above it).
    pub fn base_probability(&self, delta_v: f64) -> f64 {
        if delta_v <= 0.0 {
            return 0.0;
        }
        let p = match self.shape {
            OnsetShape::Exponential => self.p0 * (self.k * delta_v).exp(),
            OnsetShape::Linear => self.p0 * (1.0 + self.k * delta_v),
        };
        (p * self.pattern_multiplier).clamp(0.0, 1.0)
    }
}

/// One point of the voltage-to-required-timing table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageAnchor {
    pub voltage: Volts,
    pub timings: TimingParams,
}

/// Per-device calibration of voltage, timing, and error behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageProfile {
    pub vendor_label: String,
    pub v_nominal: Volts,
    /// Lowest voltage with zero errors at the device's characterization
    /// timings. Under the conservative shipped anchor tables (required
    /// timings grow strictly below nominal) this coincides with `v_nominal`;
    /// calibrated profiles may place it lower.
    pub v_min: Volts,
    /// Lowest modeled voltage; no extrapolation below it.
    pub v_floor: Volts,
    /// Candidate-grid step.
    pub v_step: Volts,
    /// Sorted ascending by voltage; required timings are component-wise
    /// non-increasing as voltage increases.
    pub timing_anchors: Vec<VoltageAnchor>,
    pub error_onset: ErrorOnsetParams,
    #[serde(default)]
    pub weak_regions: Vec<WeakRegion>,
    /// Extra voltage margin enjoyed by rows outside every weak region: their
    /// error onset sits this many volts below the profile-wide onset.
    #[serde(default)]
    pub strong_region_margin: Volts,
    /// Multiplicative latency factor on tRCD/tRP per degree C above the
    /// reference temperature.
    #[serde(default = "default_temp_factor")]
    pub temp_latency_factor: f64,
    #[serde(default = "default_temp_reference")]
    pub temp_reference: f64,
}

fn default_temp_factor() -> f64 {
    1.0
}

fn default_temp_reference() -> f64 {
    20.0
}

impl Default for VoltageProfile {
    fn default() -> Self {
        VoltageProfile {
            vendor_label: "generic".into(),
            v_nominal: 1.35,
            v_min: 1.35,
            v_floor: 1.05,
            v_step: 0.05,
            timing_anchors: default_anchor_table(),
            error_onset: ErrorOnsetParams {
                p0: 1e-4,
                k: 12.0,
                shape: OnsetShape::Exponential,
                pattern_multiplier: 1.0,
            },
            weak_regions: Vec::new(),
            strong_region_margin: 0.0,
            temp_latency_factor: 1.0,
            temp_reference: 20.0,
        }
    }
}

/// Shared default anchor table: nominal timings at 1.35V relaxing toward the
/// floor. Illustrative, not measured; calibration inputs in real use.
fn default_anchor_table() -> Vec<VoltageAnchor> {
    let nominal = TimingParams::default();
    vec![
        VoltageAnchor {
            voltage: 1.05,
            timings: TimingParams { t_rcd: 17.5, t_ras: 40.0, t_rp: 17.5, ..nominal },
        },
        VoltageAnchor {
            voltage: 1.15,
            timings: TimingParams { t_rcd: 15.0, t_ras: 37.5, t_rp: 15.0, ..nominal },
        },
        VoltageAnchor { voltage: 1.35, timings: nominal },
    ]
}

impl VoltageProfile {
    /// Vendor archetype with the steepest error growth below onset and no
    /// spatial clustering.
    pub fn vendor_a() -> Self {
        VoltageProfile {
            vendor_label: "vendor_a".into(),
            error_onset: ErrorOnsetParams {
                p0: 1e-4,
                k: 18.0,
                shape: OnsetShape::Exponential,
                pattern_multiplier: 1.0,
            },
            ..Default::default()
        }
    }

    /// Vendor archetype with errors clustered in weak row regions and a
    /// temperature-sensitive latency requirement.
    pub fn vendor_b() -> Self {
        VoltageProfile {
            vendor_label: "vendor_b".into(),
            error_onset: ErrorOnsetParams {
                p0: 1e-4,
                k: 10.0,
                shape: OnsetShape::Exponential,
                pattern_multiplier: 1.0,
            },
            weak_regions: vec![
                WeakRegion { bank: 0, row_start: 1024, row_end: 2047, weight: 8.0 },
                WeakRegion { bank: 2, row_start: 16384, row_end: 17407, weight: 8.0 },
                WeakRegion { bank: 5, row_start: 30720, row_end: 31231, weight: 6.0 },
            ],
            strong_region_margin: 0.30,
            temp_latency_factor: 1.002,
            ..Default::default()
        }
    }

    /// Vendor archetype with tighter clustering and a shallower growth slope.
    pub fn vendor_c() -> Self {
        VoltageProfile {
            vendor_label: "vendor_c".into(),
            error_onset: ErrorOnsetParams {
                p0: 1e-4,
                k: 6.0,
                shape: OnsetShape::Exponential,
                pattern_multiplier: 1.0,
            },
            weak_regions: vec![
                WeakRegion { bank: 1, row_start: 256, row_end: 1023, weight: 12.0 },
                WeakRegion { bank: 6, row_start: 8192, row_end: 8703, weight: 12.0 },
            ],
            strong_region_margin: 0.30,
            temp_latency_factor: 1.002,
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "generic" => Some(Self::default()),
            "vendor_a" => Some(Self::vendor_a()),
            "vendor_b" => Some(Self::vendor_b()),
            "vendor_c" => Some(Self::vendor_c()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), VoltageError> {
        let bad = |msg: String| Err(VoltageError::InvalidProfile(msg));
        if !(self.v_floor <= self.v_min && self.v_min <= self.v_nominal) {
            return bad(format!(
                "expected v_floor <= v_min <= v_nominal, got {} / {} / {}",
                self.v_floor, self.v_min, self.v_nominal
            ));
        }
        if !(self.v_step > 0.0) {
            return bad("v_step must be > 0".into());
        }
        if self.timing_anchors.is_empty() {
            return bad("timing_anchors must not be empty".into());
        }
        for w in self.timing_anchors.windows(2) {
            if w[1].voltage <= w[0].voltage {
                return bad("timing_anchors must be sorted by strictly increasing voltage".into());
            }
            let (lo, hi) = (&w[0].timings, &w[1].timings);
            if hi.t_rcd > lo.t_rcd || hi.t_ras > lo.t_ras || hi.t_rp > lo.t_rp {
                return bad(
                    "anchor timings must be component-wise non-increasing as voltage increases"
                        .into(),
                );
            }
        }
        for a in &self.timing_anchors {
            a.timings.validate().map_err(|e| VoltageError::InvalidProfile(e.to_string()))?;
        }
        if self.timing_anchors[0].voltage > self.v_floor + EPS {
            return bad("lowest anchor must cover v_floor".into());
        }
        if !self.has_anchor_at(self.v_nominal) {
            return bad("an anchor at v_nominal is required".into());
        }
        if !(self.error_onset.p0 > 0.0 && self.error_onset.p0 <= 1.0) {
            return bad("error_onset.p0 must be in (0, 1]".into());
        }
        if !(self.error_onset.k > 0.0) {
            return bad("error_onset.k must be > 0".into());
        }
        if self.error_onset.pattern_multiplier < 0.0 {
            return bad("error_onset.pattern_multiplier must be >= 0".into());
        }
        if self.strong_region_margin < 0.0 {
            return bad("strong_region_margin must be >= 0".into());
        }
        if self.temp_latency_factor < 1.0 {
            return bad("temp_latency_factor must be >= 1".into());
        }
        for r in &self.weak_regions {
            r.validate().map_err(VoltageError::InvalidProfile)?;
        }
        Ok(())
    }

    fn has_anchor_at(&self, v: Volts) -> bool {
        self.timing_anchors.iter().any(|a| (a.voltage - v).abs() < EPS)
    }

    /// The timings of the anchor at `v_nominal`.
    pub fn nominal_timings(&self) -> TimingParams {
        self.timing_anchors
            .iter()
            .find(|a| (a.voltage - self.v_nominal).abs() < EPS)
            .map(|a| a.timings)
            .expect("validated profile has a nominal anchor")
    }

    /// Candidate voltages from `v_floor` up to `v_nominal` in `v_step`
    /// increments, ascending, with `v_nominal` always the last element.
    pub fn voltage_grid(&self) -> Vec<Volts> {
        let mut grid = Vec::new();
        let mut k = 0u32;
        loop {
            // Snap accumulated steps onto a nanovolt lattice so grid points
            // print cleanly and compare exactly across code paths.
            let v = ((self.v_floor + f64::from(k) * self.v_step) * 1e9).round() / 1e9;
            if v >= self.v_nominal - 0.5 * self.v_step {
                break;
            }
            grid.push(v);
            k += 1;
        }
        grid.push(self.v_nominal);
        grid
    }

    /// Required timing parameters for reliable operation at voltage `v` and
    /// the reference temperature.
    pub fn scaled_timings(&self, v: Volts) -> Result<TimingParams, VoltageError> {
        self.scaled_timings_at(v, self.temp_reference)
    }

    /// Required timings at voltage `v` and temperature `temp_c`.
    ///
    /// tRCD/tRAS/tRP interpolate linearly between the surrounding anchors;
    /// all other parameters come from the nominal anchor unchanged. Above the
    /// reference temperature, tRCD and tRP are additionally multiplied by
    /// `temp_latency_factor^(temp_c - temp_reference)`.
    pub fn scaled_timings_at(&self, v: Volts, temp_c: f64) -> Result<TimingParams, VoltageError> {
        if v < self.v_floor - EPS || v > self.v_nominal + EPS {
            return Err(VoltageError::OutOfRange { v, lo: self.v_floor, hi: self.v_nominal });
        }
        let anchors = &self.timing_anchors;
        let mut t = self.nominal_timings();
        // Exact hit on an anchor returns it bit-exactly.
        if let Some(a) = anchors.iter().find(|a| (a.voltage - v).abs() < EPS) {
            t.t_rcd = a.timings.t_rcd;
            t.t_ras = a.timings.t_ras;
            t.t_rp = a.timings.t_rp;
        } else {
            let hi = anchors
                .iter()
                .position(|a| a.voltage > v)
                .unwrap_or(anchors.len() - 1)
                .max(1);
            let (a, b) = (&anchors[hi - 1], &anchors[hi]);
            let frac = (v - a.voltage) / (b.voltage - a.voltage);
            t.t_rcd = a.timings.t_rcd + frac * (b.timings.t_rcd - a.timings.t_rcd);
            t.t_ras = a.timings.t_ras + frac * (b.timings.t_ras - a.timings.t_ras);
            t.t_rp = a.timings.t_rp + frac * (b.timings.t_rp - a.timings.t_rp);
        }
        if temp_c > self.temp_reference && self.temp_latency_factor > 1.0 {
            let factor = self.temp_latency_factor.powf(temp_c - self.temp_reference);
            t.t_rcd *= factor;
            t.t_rp *= factor;
        }
        Ok(t)
    }

    /// Minimum grid voltage whose required timings fit within `t`
    /// (component-wise on tRCD/tRAS/tRP); `v_nominal` if none lower
    /// qualifies.
    pub fn safe_voltage_for_timings(&self, t: &TimingParams) -> Volts {
        self.safe_voltage_for_timings_at(t, self.temp_reference)
    }

    pub fn safe_voltage_for_timings_at(&self, t: &TimingParams, temp_c: f64) -> Volts {
        for v in self.voltage_grid() {
            let req = self
                .scaled_timings_at(v, temp_c)
                .expect("grid voltages are in range");
            if fits(t, &req) {
                return v;
            }
        }
        self.v_nominal
    }

    /// True iff `t` allocates at least the required time for every
    /// voltage-sensitive operation at voltage `v`.
    pub fn is_reliable(&self, v: Volts, t: &TimingParams) -> Result<bool, VoltageError> {
        self.is_reliable_at(v, t, self.temp_reference)
    }

    pub fn is_reliable_at(&self, v: Volts, t: &TimingParams, temp_c: f64) -> Result<bool, VoltageError> {
        let req = self.scaled_timings_at(v, temp_c)?;
        Ok(fits(t, &req))
    }
}

fn fits(t: &TimingParams, required: &TimingParams) -> bool {
    // Sub-picosecond slack: keeps exact-boundary points reliable regardless
    // of how the voltage they came from was rounded.
    t.t_rcd >= required.t_rcd - EPS
        && t.t_ras >= required.t_ras - EPS
        && t.t_rp >= required.t_rp - EPS
}

const EPS: f64 = 1e-9;
