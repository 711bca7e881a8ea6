//! SECDED outcome classification and spatial statistics over error maps.
//!
//! ECC is modeled combinatorially over (72, 64) words: the outcome of a word
//! depends only on how many of its bits are in error, not on which ones. That
//! is exactly the granularity needed to ask whether single-error correction
//! keeps up as the per-line error probability grows.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{BitErrorModel, ErrorMap};
use crate::seed::child_rng;

/// Bits per ECC word: 64 data + 8 check.
pub const ECC_WORD_BITS: u32 = 72;

#[derive(Debug, Error, PartialEq)]
pub enum EccError {
    #[error("bit-error count {0} exceeds the {ECC_WORD_BITS}-bit word")]
    CountOutOfRange(u32),
    #[error("ecc_coverage requires at least one trial")]
    NoTrials,
    #[error("clustering_stats requires a nonempty map")]
    EmptyMap,
}

/// Outcome of decoding one SECDED word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EccOutcome {
    Clean,
    Corrected,
    DetectedUncorrectable,
    SilentOrMiscorrected,
}

/// Classifies a word by its bit-error count: 0 clean, 1 corrected, 2 detected
/// but uncorrectable, 3+ beyond the code's detection guarantee.
pub fn secded_classify(bit_errors_in_word: u32) -> Result<EccOutcome, EccError> {
    if bit_errors_in_word > ECC_WORD_BITS {
        return Err(EccError::CountOutOfRange(bit_errors_in_word));
    }
    Ok(match bit_errors_in_word {
        0 => EccOutcome::Clean,
        1 => EccOutcome::Corrected,
        2 => EccOutcome::DetectedUncorrectable,
        _ => EccOutcome::SilentOrMiscorrected,
    })
}

/// Fractions of words per ECC outcome; they sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EccCoverage {
    pub clean: f64,
    pub corrected: f64,
    pub detected_uncorrectable: f64,
    pub silent_or_miscorrected: f64,
}

impl EccCoverage {
    pub fn uncorrected(&self) -> f64 {
        self.detected_uncorrectable + self.silent_or_miscorrected
    }
}

/// Monte-Carlo ECC coverage over words drawn from the error map.
///
/// Each trial samples a (bank, row) cell uniformly and errs the line with the
/// cell's probability. An erroneous line corrupts the observed word per the
/// bit model: `SingleFlip` puts exactly one error in the word; `Binomial`
/// flips each of the 72 bits independently with `p_bit`, so a uniform map of
/// probability 1 reproduces the plain binomial word distribution.
pub fn ecc_coverage(
    map: &ErrorMap,
    model: BitErrorModel,
    trials: u64,
    seed: u64,
) -> Result<EccCoverage, EccError> {
    if trials == 0 {
        return Err(EccError::NoTrials);
    }
    if map.banks() == 0 || map.rows() == 0 {
        return Err(EccError::EmptyMap);
    }
    let mut rng = child_rng(seed, 0);
    let mut counts = [0u64; 4];
    for _ in 0..trials {
        let bank = rng.gen_range(0..map.banks());
        let row = rng.gen_range(0..map.rows());
        let p_line = map.grid[bank][row];
        let erroneous = p_line > 0.0 && rng.gen_bool(p_line.min(1.0));
        let bit_errors = if !erroneous {
            0
        } else {
            match model {
                BitErrorModel::SingleFlip => 1,
                BitErrorModel::Binomial { p_bit } => {
                    let p_bit = p_bit.clamp(0.0, 1.0);
                    let mut k = 0u32;
                    for _ in 0..ECC_WORD_BITS {
                        if rng.gen_bool(p_bit) {
                            k += 1;
                        }
                    }
                    k
                }
            }
        };
        let outcome = secded_classify(bit_errors).expect("count bounded by word size");
        counts[outcome_index(outcome)] += 1;
    }
    let n = trials as f64;
    Ok(EccCoverage {
        clean: counts[0] as f64 / n,
        corrected: counts[1] as f64 / n,
        detected_uncorrectable: counts[2] as f64 / n,
        silent_or_miscorrected: counts[3] as f64 / n,
    })
}

fn outcome_index(o: EccOutcome) -> usize {
    match o {
        EccOutcome::Clean => 0,
        EccOutcome::Corrected => 1,
        EccOutcome::DetectedUncorrectable => 2,
        EccOutcome::SilentOrMiscorrected => 3,
    }
}

/// Analytic expectation of [`ecc_coverage`]: the outcome distribution of a
/// word drawn from a uniformly sampled cell, without Monte-Carlo noise.
pub fn expected_coverage(map: &ErrorMap, model: BitErrorModel) -> Result<EccCoverage, EccError> {
    if map.banks() == 0 || map.rows() == 0 {
        return Err(EccError::EmptyMap);
    }
    let p_line = map.mean_probability().min(1.0);
    Ok(match model {
        BitErrorModel::SingleFlip => EccCoverage {
            clean: 1.0 - p_line,
            corrected: p_line,
            detected_uncorrectable: 0.0,
            silent_or_miscorrected: 0.0,
        },
        BitErrorModel::Binomial { p_bit } => {
            let word = binomial_word_distribution(p_bit.clamp(0.0, 1.0));
            EccCoverage {
                clean: (1.0 - p_line) + p_line * word.clean,
                corrected: p_line * word.corrected,
                detected_uncorrectable: p_line * word.detected_uncorrectable,
                silent_or_miscorrected: p_line * word.silent_or_miscorrected,
            }
        }
    })
}

/// Exact binomial word-outcome distribution for an independent per-bit error
/// probability. Serves as the analytic reference for [`ecc_coverage`].
pub fn binomial_word_distribution(p_bit: f64) -> EccCoverage {
    let n = ECC_WORD_BITS as i32;
    let pmf = |k: i32| -> f64 {
        let mut log_c = 0.0f64;
        for i in 0..k {
            log_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        (log_c + k as f64 * p_bit.ln() + (n - k) as f64 * (1.0 - p_bit).ln()).exp()
    };
    let p0 = pmf(0);
    let p1 = pmf(1);
    let p2 = pmf(2);
    EccCoverage {
        clean: p0,
        corrected: p1,
        detected_uncorrectable: p2,
        silent_or_miscorrected: 1.0 - p0 - p1 - p2,
    }
}

/// Concentration statistics of an error map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringStats {
    /// Gini-style index in [0, 1]: 0 for uniform maps, approaching 1 as the
    /// mass concentrates in few rows. Defined as 0 for all-zero maps.
    pub concentration_index: f64,
    /// Share of the total error mass held by the top 1% of (bank, row) cells.
    pub top_percent_share: f64,
}

/// Computes concentration statistics over all (bank, row) cells of the map.
pub fn clustering_stats(map: &ErrorMap) -> Result<ClusteringStats, EccError> {
    let mut masses: Vec<f64> = map.grid.iter().flat_map(|b| b.iter().copied()).collect();
    if masses.is_empty() {
        return Err(EccError::EmptyMap);
    }
    let total: f64 = masses.iter().sum();
    if total == 0.0 {
        return Ok(ClusteringStats { concentration_index: 0.0, top_percent_share: 0.0 });
    }
    masses.sort_by(|a, b| a.partial_cmp(b).expect("probabilities are comparable"));
    let n = masses.len() as f64;
    // Gini over the sorted masses.
    let weighted: f64 = masses
        .iter()
        .enumerate()
        .map(|(i, &x)| (i as f64 + 1.0) * x)
        .sum();
    let gini = (2.0 * weighted / (n * total) - (n + 1.0) / n).max(0.0);

    let top_k = ((masses.len() + 99) / 100).max(1);
    let top_mass: f64 = masses.iter().rev().take(top_k).sum();
    Ok(ClusteringStats { concentration_index: gini, top_percent_share: top_mass / total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::TimingParams;

    fn map_from(grid: Vec<Vec<f64>>) -> ErrorMap {
        ErrorMap { grid, voltage: 1.35, timings: TimingParams::default() }
    }

    #[test]
    fn classification_table_is_exhaustive() {
        assert_eq!(secded_classify(0).unwrap(), EccOutcome::Clean);
        assert_eq!(secded_classify(1).unwrap(), EccOutcome::Corrected);
        assert_eq!(secded_classify(2).unwrap(), EccOutcome::DetectedUncorrectable);
        for k in 3..=ECC_WORD_BITS {
            assert_eq!(secded_classify(k).unwrap(), EccOutcome::SilentOrMiscorrected);
        }
        assert_eq!(
            secded_classify(ECC_WORD_BITS + 1),
            Err(EccError::CountOutOfRange(ECC_WORD_BITS + 1))
        );
    }

    #[test]
    fn all_zero_map_is_all_clean() {
        let map = map_from(vec![vec![0.0; 32]; 4]);
        let cov = ecc_coverage(&map, BitErrorModel::SingleFlip, 10_000, 1).unwrap();
        assert_eq!(cov.clean, 1.0);
    }

    #[test]
    fn forced_single_flip_is_always_corrected() {
        let map = map_from(vec![vec![1.0; 8]; 2]);
        let cov = ecc_coverage(&map, BitErrorModel::SingleFlip, 10_000, 2).unwrap();
        assert_eq!(cov.corrected, 1.0);
    }

    #[test]
    fn coverage_matches_binomial_brute_force() {
        // Uniform per-bit p over the 72-bit word. Expected values computed by
        // the analytic binomial (brute-force over counts): at p = 0.01,
        // P(0) ~= 0.485, P(1) ~= 0.353, P(2) ~= 0.127, P(>=3) ~= 0.035.
        let p_bit = 0.01;
        let expect = binomial_word_distribution(p_bit);
        assert!((expect.clean - 0.485).abs() < 2e-3);
        assert!((expect.corrected - 0.353).abs() < 2e-3);
        assert!((expect.detected_uncorrectable - 0.127).abs() < 2e-3);
        assert!((expect.silent_or_miscorrected - 0.035).abs() < 2e-3);

        let map = map_from(vec![vec![1.0; 16]; 4]);
        let trials = 200_000u64;
        let got = ecc_coverage(&map, BitErrorModel::Binomial { p_bit }, trials, 3).unwrap();
        for (g, e) in [
            (got.clean, expect.clean),
            (got.corrected, expect.corrected),
            (got.detected_uncorrectable, expect.detected_uncorrectable),
            (got.silent_or_miscorrected, expect.silent_or_miscorrected),
        ] {
            let se = (e * (1.0 - e) / trials as f64).sqrt();
            assert!((g - e).abs() <= 3.0 * se, "got {g}, expected {e} (se {se})");
        }
        let sum = got.clean + got.corrected + got.detected_uncorrectable + got.silent_or_miscorrected;
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_coverage_converges_to_the_expectation() {
        let map = map_from(vec![vec![0.2; 16], vec![0.6; 16]]);
        let model = BitErrorModel::Binomial { p_bit: 0.03 };
        let expect = expected_coverage(&map, model).unwrap();
        let trials = 200_000u64;
        let got = ecc_coverage(&map, model, trials, 8).unwrap();
        for (g, e) in [
            (got.clean, expect.clean),
            (got.corrected, expect.corrected),
            (got.detected_uncorrectable, expect.detected_uncorrectable),
            (got.silent_or_miscorrected, expect.silent_or_miscorrected),
        ] {
            let se = (e * (1.0 - e) / trials as f64).sqrt().max(1e-9);
            assert!((g - e).abs() <= 3.0 * se, "got {g}, expected {e}");
        }
    }

    #[test]
    fn coverage_is_deterministic_per_seed() {
        let map = map_from(vec![vec![0.3; 16]; 4]);
        let model = BitErrorModel::Binomial { p_bit: 0.02 };
        let a = ecc_coverage(&map, model, 50_000, 11).unwrap();
        let b = ecc_coverage(&map, model, 50_000, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_map_has_zero_concentration() {
        let map = map_from(vec![vec![0.25; 100]; 2]);
        let stats = clustering_stats(&map).unwrap();
        assert!(stats.concentration_index.abs() < 1e-12);
    }

    #[test]
    fn single_hot_row_concentrates_everything() {
        let mut grid = vec![vec![0.0; 50]; 2];
        grid[1][17] = 0.9;
        let stats = clustering_stats(&map_from(grid)).unwrap();
        assert!(stats.concentration_index > 0.98);
        assert_eq!(stats.top_percent_share, 1.0);
    }

    #[test]
    fn two_equal_rows_of_one_hundred_split_the_top_share() {
        let mut grid = vec![vec![0.0; 100]];
        grid[0][3] = 0.4;
        grid[0][77] = 0.4;
        let stats = clustering_stats(&map_from(grid)).unwrap();
        assert!((stats.top_percent_share - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_zero_map_has_index_zero_by_convention() {
        let stats = clustering_stats(&map_from(vec![vec![0.0; 10]; 2])).unwrap();
        assert_eq!(stats.concentration_index, 0.0);
        assert_eq!(stats.top_percent_share, 0.0);
    }

    #[test]
    fn concentration_invariant_under_permutation_and_scaling() {
        let grid = vec![vec![0.1, 0.0, 0.4, 0.2, 0.0, 0.05, 0.25, 0.0]];
        let base = clustering_stats(&map_from(grid.clone())).unwrap();

        let mut permuted = grid[0].clone();
        permuted.reverse();
        permuted.swap(1, 4);
        let perm = clustering_stats(&map_from(vec![permuted])).unwrap();
        assert!((base.concentration_index - perm.concentration_index).abs() < 1e-12);

        let diluted: Vec<f64> = grid[0].iter().map(|x| x * 0.125).collect();
        let dil = clustering_stats(&map_from(vec![diluted])).unwrap();
        assert!((base.concentration_index - dil.concentration_index).abs() < 1e-12);
        assert!((base.top_percent_share - dil.top_percent_share).abs() < 1e-12);
    }
}
