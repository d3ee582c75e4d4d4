//! Posterior distribution of mutual information, to leading order in `1/N`.
//!
//! The mean is the plug-in value `I(π̂)` at the posterior mode. The variance is
//! the quadratic form `lᵀ Cov l` with `l_ij = log(π̂_ij / (π̂_i+ π̂_+j))`. Without
//! class-missing data it collapses to
//!
//! ```text
//! Var[I] = (K̃ - J̃²/Q̃ - P̃) / N
//! K̃ = Σ_ij ρ_ij l_ij²        J̃_i+ = Σ_j ρ_ij l_ij
//! J̃ = Σ_i J̃_i+ Q̃_i?         Q̃ = Σ_i ρ_i+ Q̃_i?
//! P̃ = Σ_i J̃_i+² Q̃_i? / ρ_i?
//! ```
//!
//! which costs one pass over the cells. The general case goes through the
//! factored kernel inverse. All logarithms are natural.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::counts::{ChanceMatrix, EffectiveCounts};
use crate::covariance::{kernel_inverse_general, precision_field, PrecisionField};
use crate::error::{Error, Result};
use crate::mode::{fit_mode, ModeOptions, ModeResult};

/// `min(log r, log s)`, the sharp upper bound of the mutual information.
pub fn i_max(r: usize, s: usize) -> f64 {
    (r.min(s) as f64).ln()
}

/// `Σ π_ij log(π_ij / (π_i+ π_+j))`, clipped to `[0, i_max]`.
pub fn plugin_mi(pi: &ChanceMatrix) -> f64 {
    let rows = pi.row_marginals();
    let cols = pi.col_marginals();
    let s = pi.s();
    let raw: f64 = pi
        .cells()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(k, &p)| p * (p / (rows[k / s] * cols[k % s])).ln())
        .sum();
    raw.clamp(0.0, i_max(pi.r(), s))
}

/// Leading-order posterior mean; biased by `O(1/N)`.
pub fn mi_mean(mode: &ModeResult) -> f64 {
    plugin_mi(&mode.pi_hat)
}

/// `l_ij = log(π_ij / (π_i+ π_+j))`, zero on empty cells.
pub fn log_ratio(pi: &ChanceMatrix) -> Vec<f64> {
    let rows = pi.row_marginals();
    let cols = pi.col_marginals();
    let s = pi.s();
    pi.cells()
        .iter()
        .enumerate()
        .map(|(k, &p)| if p > 0.0 { (p / (rows[k / s] * cols[k % s])).ln() } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiPath {
    Complete,
    MissingFeaturesOnly,
    General,
}

/// Intermediate sums of the missing-features-only variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MiVarianceTerms {
    pub k: f64,
    pub j: f64,
    pub p: f64,
    pub q: f64,
    pub j_row: Vec<f64>,
    pub q_row: Vec<f64>,
    pub log_ratio: Vec<f64>,
}

impl MiVarianceTerms {
    /// Unclamped `(K̃ - J̃²/Q̃ - P̃) / N`.
    pub fn raw_variance(&self, total: f64) -> f64 {
        (self.k - self.j * self.j / self.q - self.p) / total
    }
}

/// Variance with the diagnostics of its evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub variance: f64,
    /// Value before clamping at zero.
    pub raw: f64,
    pub clamped: bool,
}

impl VarianceEstimate {
    fn from_raw(raw: f64) -> Self {
        Self {
            variance: raw.max(0.0),
            raw,
            clamped: raw < 0.0,
        }
    }
}

/// Missing-features-only variance in `O(rs)`.
pub fn mi_variance_mfo(field: &PrecisionField, mode: &ModeResult) -> Result<(MiVarianceTerms, VarianceEstimate)> {
    if !field.is_missing_features_only() {
        return Err(Error::InvalidArgument(
            "missing-features-only variance requires no class-missing counts".into(),
        ));
    }
    let (r, s) = (field.r(), field.s());
    let pi = &mode.pi_hat;
    let rows = pi.row_marginals();
    let cols = pi.col_marginals();
    let rho = field.rho_cells();
    let w_row = field.w_feature_missing();
    let mut log_ratio = vec![0.0; r * s];
    let mut j_row = vec![0.0; r];
    let mut q_row = vec![0.0; r];
    let (mut k, mut j, mut p, mut q) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..r {
        let (mut ji, mut rho_i) = (0.0, 0.0);
        for c in i * s..(i + 1) * s {
            let prob = pi.cells()[c];
            let l = if prob > 0.0 { (prob / (rows[i] * cols[c - i * s])).ln() } else { 0.0 };
            log_ratio[c] = l;
            let rl = rho[c] * l;
            ji += rl;
            k += rl * l;
            rho_i += rho[c];
        }
        let qi = 1.0 / (1.0 + rho_i * w_row[i]);
        j_row[i] = ji;
        q_row[i] = qi;
        j += ji * qi;
        q += rho_i * qi;
        p += ji * ji * qi * w_row[i];
    }
    if !(q > 0.0) {
        return Err(Error::Internal(format!("Q̃ = {q} is not positive")));
    }
    let terms = MiVarianceTerms {
        k,
        j,
        p,
        q,
        j_row,
        q_row,
        log_ratio,
    };
    let estimate = VarianceEstimate::from_raw(terms.raw_variance(field.total()));
    Ok((terms, estimate))
}

/// General-case variance `lᵀA⁻¹l - (lᵀA⁻¹e)² / (eᵀA⁻¹e)` through the Woodbury
/// factors, without forming the covariance.
pub fn mi_variance_general(field: &PrecisionField, mode: &ModeResult) -> Result<VarianceEstimate> {
    let factors = kernel_inverse_general(field)?;
    let l = log_ratio(&mode.pi_hat);
    let al = factors.apply_inverse(&l);
    let ae = factors.apply_inverse(&vec![1.0; l.len()]);
    let lal: f64 = l.iter().zip(&al).map(|(a, b)| a * b).sum();
    let lae: f64 = l.iter().zip(&ae).map(|(a, b)| a * b).sum();
    let eae: f64 = ae.iter().sum();
    if !(eae > 0.0) {
        return Err(Error::Internal(format!("eᵀA⁻¹e = {eae} is not positive")));
    }
    Ok(VarianceEstimate::from_raw(lal - lae * lae / eae))
}

/// Leading-order mean and variance of the mutual information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiSummary {
    pub mean: f64,
    pub variance: f64,
    pub i_max: f64,
    pub path: MiPath,
    /// `N`; the mean is accurate to `O(1/N)`.
    pub total: f64,
    /// The log-ratio field vanishes (independence), so the Gaussian
    /// approximation degenerates to a point mass.
    pub degenerate: bool,
    /// A slightly negative round-off variance was clamped to zero.
    pub variance_clamped: bool,
}

impl MiSummary {
    /// Summary from given moments, e.g. for filter experiments.
    pub fn from_moments(mean: f64, variance: f64, i_max: f64) -> Self {
        Self {
            mean,
            variance,
            i_max,
            path: MiPath::Complete,
            total: f64::INFINITY,
            degenerate: variance == 0.0,
            variance_clamped: false,
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Order of the neglected bias of the mean, `1/N`.
    pub fn bias_scale(&self) -> f64 {
        1.0 / self.total
    }
}

/// Which variance formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VariancePath {
    /// Closed forms when one margin is complete, Woodbury otherwise.
    #[default]
    Auto,
    /// Always go through the factored kernel inverse.
    General,
}

/// Regularizes the exponents, fits the mode and evaluates the MI moments.
pub fn summarize(counts: &EffectiveCounts, options: ModeOptions, path: VariancePath) -> Result<MiSummary> {
    let counts = counts.regularized();
    let mode = fit_mode(&counts, options)?;
    summarize_at_mode(&counts, &mode, path)
}

/// MI moments at an already fitted mode of regularized exponents.
pub fn summarize_at_mode(counts: &EffectiveCounts, mode: &ModeResult, path: VariancePath) -> Result<MiSummary> {
    let mean = mi_mean(mode);
    let (r, s) = (counts.r(), counts.s());
    let (estimate, mi_path) = if path == VariancePath::General {
        let field = precision_field(counts, &mode.pi_hat)?;
        (mi_variance_general(&field, mode)?, MiPath::General)
    } else if counts.is_missing_features_only() {
        let field = precision_field(counts, &mode.pi_hat)?;
        let mi_path = if counts.is_complete() {
            MiPath::Complete
        } else {
            MiPath::MissingFeaturesOnly
        };
        (mi_variance_mfo(&field, mode)?.1, mi_path)
    } else if counts.is_missing_classes_only() {
        let counts_t = counts.transpose();
        let mode_t = mode.transpose();
        let field = precision_field(&counts_t, &mode_t.pi_hat)?;
        (mi_variance_mfo(&field, &mode_t)?.1, MiPath::MissingFeaturesOnly)
    } else {
        let field = precision_field(counts, &mode.pi_hat)?;
        (mi_variance_general(&field, mode)?, MiPath::General)
    };
    let degenerate = estimate.variance == 0.0;
    Ok(MiSummary {
        mean,
        variance: estimate.variance,
        i_max: i_max(r, s),
        path: mi_path,
        total: counts.total(),
        degenerate,
        variance_clamped: estimate.clamped,
    })
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Upper standard-normal quantile `z` with `Φ(z) = p`.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// `p(I > ε | N)` under the untruncated Gaussian; a zero variance gives the
/// step indicator `mean > ε`.
pub fn tail_probability(summary: &MiSummary, epsilon: f64) -> f64 {
    if summary.variance <= 0.0 {
        return if summary.mean > epsilon { 1.0 } else { 0.0 };
    }
    let x = (epsilon - summary.mean) / summary.sd();
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `p(I <= ε | N)`, evaluated directly rather than as `1 - tail`.
pub fn lower_probability(summary: &MiSummary, epsilon: f64) -> f64 {
    if summary.variance <= 0.0 {
        return if summary.mean <= epsilon { 1.0 } else { 0.0 };
    }
    let x = (epsilon - summary.mean) / summary.sd();
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Central Gaussian interval at `level`, endpoints clipped to `[0, i_max]`.
pub fn credible_interval(summary: &MiSummary, level: f64) -> Result<(f64, f64)> {
    let (lo, hi) = credible_interval_unclipped(summary, level)?;
    Ok((lo.clamp(0.0, summary.i_max), hi.clamp(0.0, summary.i_max)))
}

pub fn credible_interval_unclipped(summary: &MiSummary, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("credible level {level} not in (0, 1)")));
    }
    let half = normal_quantile(0.5 + level / 2.0) * summary.sd();
    Ok((summary.mean - half, summary.mean + half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::ContingencyTable;
    use crate::covariance::{covariance_general, covariance_mfo};

    fn counts(joint: &[f64], fm: &[f64], cm: &[f64]) -> EffectiveCounts {
        EffectiveCounts::from_exponents(
            ContingencyTable::new(fm.len(), cm.len(), joint.to_vec(), fm.to_vec(), cm.to_vec()).unwrap(),
        )
    }

    fn tight() -> ModeOptions {
        ModeOptions {
            tol: 1e-14,
            max_iter: 100_000,
        }
    }

    #[test]
    fn product_measure_has_zero_mi() {
        let rows = [0.3, 0.7];
        let cols = [0.1, 0.5, 0.4];
        let cells: Vec<f64> = rows.iter().flat_map(|a| cols.iter().map(move |b| a * b)).collect();
        let pi = ChanceMatrix::new(2, 3, cells).unwrap();
        assert!(plugin_mi(&pi) < 1e-15);
    }

    #[test]
    fn perfect_dependence_is_log_two() {
        let pi = ChanceMatrix::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((plugin_mi(&pi) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn plugin_mi_longhand() {
        // 2 * 0.4 log(0.4/0.25) + 2 * 0.1 log(0.1/0.25)
        let pi = ChanceMatrix::new(2, 2, vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        let want = 0.8 * (1.6f64).ln() + 0.2 * (0.4f64).ln();
        assert!((plugin_mi(&pi) - want).abs() < 1e-15);
        assert!((want - 0.19274475702175753).abs() < 1e-15);
    }

    #[test]
    fn uniform_mode_has_zero_mean_and_degenerate_variance() {
        let c = counts(&[5.0; 4], &[0.0; 2], &[0.0; 2]);
        let s = summarize(&c, tight(), VariancePath::Auto).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn complete_case_reduces_to_k_minus_j_squared() {
        let c = counts(&[40.0, 10.0, 10.0, 40.0], &[0.0; 2], &[0.0; 2]);
        let mode = fit_mode(&c, tight()).unwrap();
        let field = precision_field(&c, &mode.pi_hat).unwrap();
        let (terms, v) = mi_variance_mfo(&field, &mode).unwrap();
        assert_eq!(terms.q_row, vec![1.0, 1.0]);
        assert_eq!(terms.p, 0.0);
        assert!((terms.q - 1.0).abs() < 1e-15);
        // K = Σ (n_ij/n) l², J = Σ (n_ij/n) l
        let l = [(0.4f64 / 0.25).ln(), (0.1f64 / 0.25).ln(), (0.1f64 / 0.25).ln(), (0.4f64 / 0.25).ln()];
        let w = [0.4, 0.1, 0.1, 0.4];
        let k: f64 = l.iter().zip(w).map(|(a, b)| b * a * a).sum();
        let j: f64 = l.iter().zip(w).map(|(a, b)| b * a).sum();
        assert!((v.variance - (k - j * j) / 100.0).abs() < 1e-15);
        let g = mi_variance_general(&field, &mode).unwrap();
        assert!((g.variance - v.variance).abs() < 1e-12);
    }

    #[test]
    fn mfo_variance_equals_quadratic_form() {
        let c = counts(&[3.0, 1.0, 1.0, 3.0], &[2.0, 1.0], &[0.0; 2]);
        let mode = fit_mode(&c, tight()).unwrap();
        let field = precision_field(&c, &mode.pi_hat).unwrap();
        let (terms, v) = mi_variance_mfo(&field, &mode).unwrap();
        let cov = covariance_mfo(&field).unwrap();
        assert!((cov.quadratic_form(&terms.log_ratio) - v.variance).abs() < 1e-12);
        let g = mi_variance_general(&field, &mode).unwrap();
        assert!((g.variance - v.variance).abs() < 1e-12);
    }

    #[test]
    fn general_variance_equals_quadratic_form() {
        let c = counts(&[6.0, 2.0, 1.0, 1.0, 3.0, 5.0], &[2.0, 1.0], &[1.0, 2.0, 1.0]);
        let mode = fit_mode(&c, tight()).unwrap();
        let field = precision_field(&c, &mode.pi_hat).unwrap();
        let v = mi_variance_general(&field, &mode).unwrap();
        let cov = covariance_general(&field).unwrap();
        let l = log_ratio(&mode.pi_hat);
        assert!((cov.quadratic_form(&l) - v.variance).abs() < 1e-12);
    }

    #[test]
    fn missing_classes_only_path_matches_general() {
        let c = counts(&[6.0, 2.0, 1.0, 1.0, 3.0, 5.0], &[0.0, 0.0], &[1.0, 2.0, 1.0]);
        let auto = summarize(&c, tight(), VariancePath::Auto).unwrap();
        let general = summarize(&c, tight(), VariancePath::General).unwrap();
        assert_eq!(auto.path, MiPath::MissingFeaturesOnly);
        assert_eq!(general.path, MiPath::General);
        assert!((auto.variance - general.variance).abs() < 1e-12);
        assert_eq!(auto.mean, general.mean);
    }

    #[test]
    fn tail_probability_cases() {
        let s = MiSummary::from_moments(0.003, 1e-4, 2f64.ln());
        assert!((tail_probability(&s, 0.003) - 0.5).abs() < 1e-15);

        let s = MiSummary::from_moments(0.01, 0.0, 2f64.ln());
        assert_eq!(tail_probability(&s, 0.003), 1.0);
        assert_eq!(tail_probability(&s, 0.02), 0.0);

        let sd: f64 = 0.01;
        let s = MiSummary::from_moments(0.003 + 2.0 * sd, sd * sd, 2f64.ln());
        assert!((tail_probability(&s, 0.003) - 0.9772498680518208).abs() < 1e-10);
        assert!((tail_probability(&s, 0.003) + lower_probability(&s, 0.003) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn credible_interval_cases() {
        let s = MiSummary::from_moments(0.2, 0.0, 2f64.ln());
        assert_eq!(credible_interval(&s, 0.95).unwrap(), (0.2, 0.2));

        let s = MiSummary::from_moments(0.1, 1e-4, 2f64.ln());
        let (lo, hi) = credible_interval_unclipped(&s, 0.95).unwrap();
        // z = 1.959963984540054
        assert!((lo - (0.1 - 0.01959963984540054)).abs() < 1e-9);
        assert!((hi - (0.1 + 0.01959963984540054)).abs() < 1e-9);
        assert!((lo - 0.0804).abs() < 1e-4 && (hi - 0.1196).abs() < 1e-4);

        let s = MiSummary::from_moments(0.01, 0.05 * 0.05, 2f64.ln());
        assert_eq!(credible_interval(&s, 0.95).unwrap().0, 0.0);
        assert!(credible_interval(&s, 1.0).is_err());
    }
}
