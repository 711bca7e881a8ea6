//! Stochastic error injection and error-map generation for operation below
//! the reliable voltage envelope.
//!
//! The per-cache-line error probability is zero whenever the applied timings
//! cover the requirement at the operating voltage; below the onset voltage it
//! grows per the profile's [`crate::voltage::ErrorOnsetParams`], multiplied by
//! the covering weak region's weight. Rows outside every weak region get the
//! profile's `strong_region_margin` of extra voltage headroom before their
//! onset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dram::{Geometry, TimingParams};
use crate::seed::child_rng;
use crate::voltage::{VoltageProfile, Volts};

/// A contiguous range of rows in one bank with elevated error susceptibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakRegion {
    pub bank: usize,
    pub row_start: usize,
    pub row_end: usize,
    /// Probability multiplier, >= 1.
    pub weight: f64,
}

impl WeakRegion {
    pub fn contains(&self, bank: usize, row: usize) -> bool {
        bank == self.bank && (self.row_start..=self.row_end).contains(&row)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.row_start > self.row_end {
            return Err(format!(
                "weak region rows inverted: {} > {}",
                self.row_start, self.row_end
            ));
        }
        if self.weight < 1.0 {
            return Err("weak region weight must be >= 1".into());
        }
        Ok(())
    }
}

/// Weight of the first weak region covering (bank, row); 1 outside all
/// regions.
pub fn region_weight(profile: &VoltageProfile, bank: usize, row: usize) -> f64 {
    profile
        .weak_regions
        .iter()
        .find(|r| r.contains(bank, row))
        .map(|r| r.weight)
        .unwrap_or(1.0)
}

fn in_weak_region(profile: &VoltageProfile, bank: usize, row: usize) -> bool {
    profile.weak_regions.iter().any(|r| r.contains(bank, row))
}

/// Probability of >=1 bit error per cache-line access at (voltage, timings)
/// for the given bank/row, at the reference temperature.
pub fn cell_error_probability(
    v: Volts,
    t: &TimingParams,
    bank: usize,
    row: usize,
    profile: &VoltageProfile,
) -> f64 {
    cell_error_probability_at(v, t, bank, row, profile, profile.temp_reference)
}

pub fn cell_error_probability_at(
    v: Volts,
    t: &TimingParams,
    bank: usize,
    row: usize,
    profile: &VoltageProfile,
    temp_c: f64,
) -> f64 {
    if profile.is_reliable_at(v, t, temp_c).unwrap_or(false) {
        return 0.0;
    }
    let v_onset = profile.safe_voltage_for_timings_at(t, temp_c);
    let margin = if in_weak_region(profile, bank, row) { 0.0 } else { profile.strong_region_margin };
    let delta = (v_onset - margin) - v;
    if delta <= 0.0 {
        return 0.0;
    }
    let base = profile.error_onset.base_probability(delta);
    (base * region_weight(profile, bank, row)).clamp(0.0, 1.0)
}

/// Per-(bank, row) error probabilities at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMap {
    /// `grid[bank][row]`, probabilities in [0, 1].
    pub grid: Vec<Vec<f64>>,
    pub voltage: Volts,
    pub timings: TimingParams,
}

impl ErrorMap {
    pub fn banks(&self) -> usize {
        self.grid.len()
    }

    pub fn rows(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    pub fn total_mass(&self) -> f64 {
        self.grid.iter().map(|b| b.iter().sum::<f64>()).sum()
    }

    /// Mean probability over all (bank, row) cells. Every line in a row
    /// shares its row's probability, so this is also the expected fraction of
    /// erroneous lines.
    pub fn mean_probability(&self) -> f64 {
        let cells = (self.banks() * self.rows()) as f64;
        if cells == 0.0 {
            return 0.0;
        }
        self.total_mass() / cells
    }

    pub fn is_all_zero(&self) -> bool {
        self.grid.iter().all(|b| b.iter().all(|&p| p == 0.0))
    }
}

/// Deterministically evaluates the error probability on every (bank, row)
/// cell of the geometry.
pub fn generate_error_map(
    v: Volts,
    t: &TimingParams,
    profile: &VoltageProfile,
    geo: &Geometry,
) -> ErrorMap {
    generate_error_map_at(v, t, profile, geo, profile.temp_reference)
}

pub fn generate_error_map_at(
    v: Volts,
    t: &TimingParams,
    profile: &VoltageProfile,
    geo: &Geometry,
    temp_c: f64,
) -> ErrorMap {
    let grid = (0..geo.banks_per_rank)
        .map(|bank| {
            (0..geo.rows_per_bank)
                .map(|row| cell_error_probability_at(v, t, bank, row, profile, temp_c))
                .collect()
        })
        .collect();
    ErrorMap { grid, voltage: v, timings: *t }
}

/// Bit-level model of how an erroneous cache line is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BitErrorModel {
    /// Exactly one uniformly chosen bit flips.
    SingleFlip,
    /// Each bit flips independently with `p_bit`, conditioned on >=1 flip.
    Binomial { p_bit: f64 },
}

/// Flips bits in a copy of `line` with line-error probability `p_line`.
///
/// Returns the (possibly modified) payload and the flipped bit positions.
/// Deterministic for a fixed seed; the Binomial model resamples until at
/// least one bit flips.
pub fn inject_errors(
    line: &[u8],
    p_line: f64,
    model: BitErrorModel,
    seed: u64,
) -> (Vec<u8>, Vec<usize>) {
    let mut payload = line.to_vec();
    let mut rng = child_rng(seed, 0);
    let bits = line.len() * 8;
    if bits == 0 || !rng.gen_bool(p_line.clamp(0.0, 1.0)) {
        return (payload, Vec::new());
    }
    let mut flipped = Vec::new();
    match model {
        BitErrorModel::SingleFlip => flipped.push(rng.gen_range(0..bits)),
        BitErrorModel::Binomial { p_bit } => {
            let p_bit = p_bit.clamp(0.0, 1.0);
            loop {
                flipped.clear();
                if p_bit > 0.0 {
                    for pos in 0..bits {
                        if rng.gen_bool(p_bit) {
                            flipped.push(pos);
                        }
                    }
                }
                if !flipped.is_empty() {
                    break;
                }
                if p_bit == 0.0 {
                    // Degenerate: fall back to a single flip so the line is
                    // erroneous as promised.
                    flipped.push(rng.gen_range(0..bits));
                    break;
                }
            }
        }
    }
    for &pos in &flipped {
        payload[pos / 8] ^= 1 << (pos % 8);
    }
    (payload, flipped)
}

/// Analytic expected fraction of erroneous cache lines at each voltage with
/// fixed timings.
pub fn error_fraction_curve(
    voltages: &[Volts],
    t: &TimingParams,
    profile: &VoltageProfile,
    geo: &Geometry,
) -> Vec<(Volts, f64)> {
    voltages
        .iter()
        .map(|&v| (v, generate_error_map(v, t, profile, geo).mean_probability()))
        .collect()
}

/// Monte-Carlo estimate of the erroneous-line fraction: samples `lines`
/// uniformly random (bank, row) cells and draws each line's error Bernoulli.
pub fn mc_error_fraction(
    v: Volts,
    t: &TimingParams,
    profile: &VoltageProfile,
    geo: &Geometry,
    lines: u64,
    seed: u64,
) -> f64 {
    let map = generate_error_map(v, t, profile, geo);
    let mut rng = child_rng(seed, 0);
    let banks = map.banks();
    let rows = map.rows();
    let mut errors = 0u64;
    for _ in 0..lines {
        let bank = rng.gen_range(0..banks);
        let row = rng.gen_range(0..rows);
        let p = map.grid[bank][row];
        if p > 0.0 && rng.gen_bool(p) {
            errors += 1;
        }
    }
    errors as f64 / lines as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voltage::{ErrorOnsetParams, OnsetShape};

    fn small_geo() -> Geometry {
        Geometry { rows_per_bank: 64, banks_per_rank: 4, ..Geometry::default() }
    }

    fn uniform_profile(p0: f64, k: f64) -> VoltageProfile {
        VoltageProfile {
            error_onset: ErrorOnsetParams {
                p0,
                k,
                shape: OnsetShape::Exponential,
                pattern_multiplier: 1.0,
            },
            ..Default::default()
        }
    }

    #[test]
    fn reliable_operating_points_have_zero_probability() {
        let p = uniform_profile(1e-4, 50.0);
        for v in p.voltage_grid() {
            let t = p.scaled_timings(v).unwrap();
            assert_eq!(cell_error_probability(v, &t, 0, 0, &p), 0.0);
            assert!(generate_error_map(v, &t, &p, &small_geo()).is_all_zero());
        }
    }

    #[test]
    fn at_or_above_onset_is_zero() {
        let p = uniform_profile(1e-4, 50.0);
        let t = p.nominal_timings();
        let onset = p.safe_voltage_for_timings(&t);
        assert_eq!(cell_error_probability(onset, &t, 0, 0, &p), 0.0);
    }

    #[test]
    fn exponential_growth_matches_hand_arithmetic() {
        // p0 = 1e-4, k = 50/V, 0.10V below onset: 1e-4 * e^5 ~= 1.484e-2.
        let p = uniform_profile(1e-4, 50.0);
        let t = p.nominal_timings();
        let onset = p.safe_voltage_for_timings(&t);
        let got = cell_error_probability(onset - 0.10, &t, 0, 0, &p);
        let want = 1e-4 * 5.0f64.exp();
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        assert!((want - 1.484e-2).abs() < 1e-5);
    }

    #[test]
    fn weak_region_weight_scales_probability_exactly() {
        let mut p = uniform_profile(1e-4, 20.0);
        p.weak_regions = vec![WeakRegion { bank: 1, row_start: 8, row_end: 15, weight: 10.0 }];
        let t = p.nominal_timings();
        let v = p.safe_voltage_for_timings(&t) - 0.10;
        let inside = cell_error_probability(v, &t, 1, 10, &p);
        let outside = cell_error_probability(v, &t, 0, 10, &p);
        assert!(outside > 0.0);
        assert!((inside / outside - 10.0).abs() < 1e-9);
    }

    #[test]
    fn strong_region_margin_confines_errors_to_weak_rows() {
        let mut p = uniform_profile(1e-4, 10.0);
        p.weak_regions = vec![WeakRegion { bank: 0, row_start: 0, row_end: 7, weight: 8.0 }];
        p.strong_region_margin = 0.30;
        let t = p.nominal_timings();
        let v = p.safe_voltage_for_timings(&t) - 0.05;
        assert!(cell_error_probability(v, &t, 0, 3, &p) > 0.0);
        assert_eq!(cell_error_probability(v, &t, 0, 20, &p), 0.0);
        assert_eq!(cell_error_probability(v, &t, 2, 3, &p), 0.0);
    }

    #[test]
    fn map_mass_strictly_increases_as_voltage_drops() {
        let p = VoltageProfile::vendor_a();
        let geo = small_geo();
        let t = p.nominal_timings();
        let grid = p.voltage_grid();
        let masses: Vec<f64> = grid
            .iter()
            .map(|&v| generate_error_map(v, &t, &p, &geo).total_mass())
            .collect();
        // Ascending voltages -> descending mass, strictly below the onset.
        for w in masses.windows(2) {
            assert!(w[0] > w[1] || (w[0] == 0.0 && w[1] == 0.0));
        }
        assert_eq!(*masses.last().unwrap(), 0.0);
        assert!(masses[0] > 0.0);
    }

    #[test]
    fn injection_no_error_cases() {
        let line = [0xabu8; 64];
        let (payload, flips) = inject_errors(&line, 0.0, BitErrorModel::SingleFlip, 7);
        assert_eq!(payload, line);
        assert!(flips.is_empty());
    }

    #[test]
    fn injection_single_flip_changes_exactly_one_bit() {
        let line = [0u8; 64];
        let (payload, flips) = inject_errors(&line, 1.0, BitErrorModel::SingleFlip, 9);
        assert_eq!(flips.len(), 1);
        let ones: u32 = payload.iter().map(|b| b.count_ones()).sum();
        assert_eq!(ones, 1);
    }

    #[test]
    fn injection_is_deterministic_per_seed() {
        let line = [0x5au8; 64];
        let model = BitErrorModel::Binomial { p_bit: 0.02 };
        let a = inject_errors(&line, 0.8, model, 1234);
        let b = inject_errors(&line, 0.8, model, 1234);
        assert_eq!(a, b);
        let c = inject_errors(&line, 0.8, model, 1235);
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn binomial_injection_always_flips_at_least_one_bit() {
        let line = [0u8; 64];
        for seed in 0..64 {
            let (_, flips) =
                inject_errors(&line, 1.0, BitErrorModel::Binomial { p_bit: 1e-4 }, seed);
            assert!(!flips.is_empty());
        }
    }

    #[test]
    fn curve_is_zero_above_onset_and_non_increasing_in_voltage() {
        let p = uniform_profile(1e-4, 30.0);
        let geo = small_geo();
        let t = p.nominal_timings();
        let grid = p.voltage_grid();
        let curve = error_fraction_curve(&grid, &t, &p, &geo);
        assert_eq!(curve.last().unwrap().1, 0.0);
        for w in curve.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        // Same arithmetic as the single-cell case: uniform profile fraction
        // 0.10V below onset is p0 * e^(k * 0.10).
        let onset = p.safe_voltage_for_timings(&t);
        let map = generate_error_map(onset - 0.10, &t, &p, &geo);
        assert!((map.mean_probability() - 1e-4 * 3.0f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_matches_analytic_within_three_standard_errors() {
        let p = VoltageProfile::vendor_a();
        let geo = small_geo();
        let t = p.nominal_timings();
        let v = p.v_nominal - 0.15;
        let lines = 200_000u64;
        let analytic = generate_error_map(v, &t, &p, &geo).mean_probability();
        let mc = mc_error_fraction(v, &t, &p, &geo, lines, 42);
        let se = (analytic * (1.0 - analytic) / lines as f64).sqrt();
        assert!(
            (mc - analytic).abs() <= 3.0 * se,
            "mc {mc} vs analytic {analytic} (se {se})"
        );
    }

    #[test]
    fn clustered_mass_share_exceeds_row_share() {
        // Weak regions hold a share of the error mass strictly above their
        // share of the rows.
        let p = VoltageProfile::vendor_b();
        let geo = Geometry::default();
        let t = p.nominal_timings();
        let v = p.v_nominal - 0.05;
        let map = generate_error_map(v, &t, &p, &geo);
        let mut in_mass = 0.0;
        let mut in_cells = 0usize;
        for (bank, rows) in map.grid.iter().enumerate() {
            for (row, &prob) in rows.iter().enumerate() {
                if in_weak_region(&p, bank, row) {
                    in_mass += prob;
                    in_cells += 1;
                }
            }
        }
        let total_cells = (map.banks() * map.rows()) as f64;
        let mass_share = in_mass / map.total_mass();
        let cell_share = in_cells as f64 / total_cells;
        assert!(mass_share > cell_share, "mass {mass_share} vs cells {cell_share}");
    }
}
