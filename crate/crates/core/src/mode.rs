//! Posterior mode of the chances.
//!
//! The mode solves the self-consistency equation
//!
//! ```text
//! π_ij = (1/N) (n_ij + n_i? π_ij / π_i+ + n_?j π_ij / π_+j)
//! ```
//!
//! which is exactly one EM update. The posterior is log-concave, so the EM
//! iteration reaches the global maximum from any interior start. When only
//! one side has missing values the fixed point has a closed form.

use serde::{Deserialize, Serialize};

use crate::counts::{ChanceMatrix, EffectiveCounts};
use crate::error::{Axis, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModePath {
    /// Closed form with missing features only.
    ClosedFormRows,
    /// Closed form with missing classes only, via transposition.
    ClosedFormCols,
    EmIterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOptions {
    /// Stop when the max-norm change of one EM step is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub pi_hat: ChanceMatrix,
    pub iterations: usize,
    /// Max-norm defect of the fixed-point equation at `pi_hat`.
    pub residual: f64,
    pub path: ModePath,
}

impl ModeResult {
    pub fn transpose(&self) -> Self {
        Self {
            pi_hat: self.pi_hat.transpose(),
            ..self.clone()
        }
    }
}

/// One application of the fixed-point map.
pub fn em_step(counts: &EffectiveCounts, pi: &ChanceMatrix) -> Result<ChanceMatrix> {
    let (r, s) = (counts.r(), counts.s());
    if pi.r() != r || pi.s() != s {
        return Err(Error::InvalidArgument(format!(
            "chance matrix is {}x{}, counts are {r}x{s}",
            pi.r(),
            pi.s()
        )));
    }
    let total = counts.total();
    if total <= 0.0 {
        return Err(Error::EmptyTable);
    }
    let rows = pi.row_marginals();
    let cols = pi.col_marginals();
    let fm = counts.feature_missing();
    let cm = counts.class_missing();
    // Per-margin multipliers n_i?/π_i+ and n_?j/π_+j.
    let mut row_factor = vec![0.0; r];
    for i in 0..r {
        if fm[i] > 0.0 {
            if rows[i] <= 0.0 {
                return Err(Error::ZeroMarginal {
                    axis: Axis::Row,
                    index: i,
                });
            }
            row_factor[i] = fm[i] / rows[i];
        }
    }
    let mut col_factor = vec![0.0; s];
    for j in 0..s {
        if cm[j] > 0.0 {
            if cols[j] <= 0.0 {
                return Err(Error::ZeroMarginal {
                    axis: Axis::Column,
                    index: j,
                });
            }
            col_factor[j] = cm[j] / cols[j];
        }
    }
    let joint = counts.joint_cells();
    let cells = pi
        .cells()
        .iter()
        .enumerate()
        .map(|(k, &p)| (joint[k] + p * (row_factor[k / s] + col_factor[k % s])) / total)
        .collect();
    Ok(ChanceMatrix::from_cells_unchecked(r, s, cells))
}

/// Max-norm defect of the fixed-point equation at `pi`.
pub fn fixed_point_defect(counts: &EffectiveCounts, pi: &ChanceMatrix) -> Result<f64> {
    Ok(em_step(counts, pi)?.max_abs_diff(pi))
}

/// Interior starting point `π⁰_ij ∝ n_ij + 1/(rs)`.
pub fn em_start(counts: &EffectiveCounts) -> ChanceMatrix {
    let c = 1.0 / (counts.r() * counts.s()) as f64;
    let cells: Vec<f64> = counts.joint_cells().iter().map(|n| n + c).collect();
    let total: f64 = cells.iter().sum();
    let cells = cells.into_iter().map(|v| v / total).collect();
    ChanceMatrix::from_cells_unchecked(counts.r(), counts.s(), cells)
}

/// Posterior mode, dispatching to a closed form when one margin has no
/// missing values.
pub fn fit_mode(counts: &EffectiveCounts, options: ModeOptions) -> Result<ModeResult> {
    check_options(options)?;
    if counts.total() <= 0.0 {
        return Err(Error::EmptyTable);
    }
    if counts.is_missing_features_only() {
        closed_form_mode_mfo(counts)
    } else if counts.is_missing_classes_only() {
        let mut res = closed_form_mode_mfo(&counts.transpose())?.transpose();
        res.path = ModePath::ClosedFormCols;
        Ok(res)
    } else {
        fit_mode_em(counts, &em_start(counts), options)
    }
}

fn check_options(options: ModeOptions) -> Result<()> {
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "tol must be > 0 and max_iter >= 1 (got {:e}, {})",
            options.tol, options.max_iter
        )));
    }
    Ok(())
}

/// Plain EM iteration from a given start, regardless of missingness pattern.
pub fn fit_mode_em(counts: &EffectiveCounts, start: &ChanceMatrix, options: ModeOptions) -> Result<ModeResult> {
    check_options(options)?;
    if counts.total() <= 0.0 {
        return Err(Error::EmptyTable);
    }
    let mut current = start.clone();
    let mut residual = f64::INFINITY;
    for iteration in 0..options.max_iter {
        let next = em_step(counts, &current)?;
        residual = next.max_abs_diff(&current);
        if residual <= options.tol {
            return Ok(ModeResult {
                pi_hat: current,
                iterations: iteration + 1,
                residual,
                path: ModePath::EmIterative,
            });
        }
        current = next;
    }
    Err(Error::NotConverged {
        iterations: options.max_iter,
        residual,
        last: Box::new(current),
    })
}

/// Closed-form mode when no class labels are missing:
/// `π_ij = (N_i+ / N) (n_ij / n_i+)` with `N_i+ = n_i+ + n_i?`.
pub fn closed_form_mode_mfo(counts: &EffectiveCounts) -> Result<ModeResult> {
    if !counts.is_missing_features_only() {
        return Err(Error::InvalidArgument(
            "closed-form row mode requires no class-missing counts".into(),
        ));
    }
    let total = counts.total();
    if total <= 0.0 {
        return Err(Error::EmptyTable);
    }
    let (r, s) = (counts.r(), counts.s());
    let joint = counts.joint_cells();
    let fm = counts.feature_missing();
    let mut cells = vec![0.0; r * s];
    for i in 0..r {
        let row = &joint[i * s..(i + 1) * s];
        let observed: f64 = row.iter().sum();
        let row_mass = observed + fm[i];
        if row_mass == 0.0 {
            continue;
        }
        if observed == 0.0 {
            return Err(Error::UnapportionableRow { row: i });
        }
        let scale = row_mass / (total * observed);
        for (dst, n) in cells[i * s..(i + 1) * s].iter_mut().zip(row) {
            *dst = scale * n;
        }
    }
    let pi_hat = ChanceMatrix::from_cells_unchecked(r, s, cells);
    let residual = fixed_point_defect(counts, &pi_hat)?;
    Ok(ModeResult {
        pi_hat,
        iterations: 0,
        residual,
        path: ModePath::ClosedFormRows,
    })
}

/// `Σ n_ij log π_ij + Σ n_i? log π_i+ + Σ n_?j log π_+j`, with `0 log 0 = 0`.
/// A positive count on a zero chance gives `-∞`.
pub fn log_posterior_unnormalized(counts: &EffectiveCounts, pi: &ChanceMatrix) -> f64 {
    fn term(n: f64, p: f64) -> f64 {
        if n == 0.0 {
            0.0
        } else if p <= 0.0 {
            f64::NEG_INFINITY
        } else {
            n * p.ln()
        }
    }
    let joint: f64 = counts
        .joint_cells()
        .iter()
        .zip(pi.cells())
        .map(|(&n, &p)| term(n, p))
        .sum();
    let rows: f64 = counts
        .feature_missing()
        .iter()
        .zip(pi.row_marginals())
        .map(|(&n, &p)| term(n, p))
        .sum();
    let cols: f64 = counts
        .class_missing()
        .iter()
        .zip(pi.col_marginals())
        .map(|(&n, &p)| term(n, p))
        .sum();
    joint + rows + cols
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::ContingencyTable;

    fn counts(joint: &[f64], fm: &[f64], cm: &[f64]) -> EffectiveCounts {
        let r = fm.len();
        let s = cm.len();
        EffectiveCounts::from_exponents(ContingencyTable::new(r, s, joint.to_vec(), fm.to_vec(), cm.to_vec()).unwrap())
    }

    #[test]
    fn em_step_complete_data_is_one_shot() {
        let c = counts(&[3.0, 1.0, 2.0, 4.0], &[0.0, 0.0], &[0.0, 0.0]);
        let start = ChanceMatrix::new(2, 2, vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let next = em_step(&c, &start).unwrap();
        for (got, n) in next.cells().iter().zip([3.0, 1.0, 2.0, 4.0]) {
            assert!((got - n / 10.0).abs() < 1e-15);
        }
    }

    #[test]
    fn em_step_longhand() {
        // n = [[2,1],[1,2]], n_i? = [1,1], n_?j = [1,1], N = 10, uniform start:
        // π_i+ = π_+j = 1/2, so every missing term adds 1 * (1/4)/(1/2) = 1/2.
        let c = counts(&[2.0, 1.0, 1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0]);
        let next = em_step(&c, &ChanceMatrix::uniform(2, 2)).unwrap();
        let expected = [3.0 / 10.0, 2.0 / 10.0, 2.0 / 10.0, 3.0 / 10.0];
        for (got, want) in next.cells().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn em_step_zero_marginal_is_reported() {
        let c = counts(&[2.0, 1.0, 1.0, 2.0], &[1.0, 1.0], &[0.0, 0.0]);
        let pi = ChanceMatrix::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        match em_step(&c, &pi) {
            Err(Error::ZeroMarginal { axis: Axis::Row, index: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        let c = counts(&[2.0, 1.0, 1.0, 2.0], &[1.0, 2.0], &[1.0, 3.0]);
        let m = fit_mode(&c, ModeOptions { tol: 1e-14, max_iter: 100_000 }).unwrap();
        let again = em_step(&c, &m.pi_hat).unwrap();
        assert!(again.max_abs_diff(&m.pi_hat) <= 1e-14);
    }

    #[test]
    fn uniform_complete_counts() {
        let c = counts(&[1.0; 4], &[0.0; 2], &[0.0; 2]);
        let m = fit_mode(&c, ModeOptions::default()).unwrap();
        assert_eq!(m.path, ModePath::ClosedFormRows);
        for p in m.pi_hat.cells() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn worked_missing_features_case() {
        let c = counts(&[3.0, 1.0, 1.0, 3.0], &[2.0, 1.0], &[0.0, 0.0]);
        let m = fit_mode(&c, ModeOptions::default()).unwrap();
        let expected = [9.0 / 22.0, 3.0 / 22.0, 5.0 / 44.0, 15.0 / 44.0];
        for (got, want) in m.pi_hat.cells().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(m.residual < 1e-12);
        // π̂_i+ = N_i+ / N
        assert!((m.pi_hat.row_marginals()[0] - 6.0 / 11.0).abs() < 1e-15);
        let em = fit_mode_em(&c, &em_start(&c), ModeOptions { tol: 1e-14, max_iter: 100_000 }).unwrap();
        assert!(em.pi_hat.max_abs_diff(&m.pi_hat) < 1e-12);
    }

    #[test]
    fn symmetric_general_case_is_uniform() {
        let c = counts(&[2.0; 4], &[3.0, 3.0], &[3.0, 3.0]);
        let m = fit_mode(&c, ModeOptions::default()).unwrap();
        assert_eq!(m.path, ModePath::EmIterative);
        for p in m.pi_hat.cells() {
            assert!((p - 0.25).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_classes_only_uses_transposed_closed_form() {
        let c = counts(&[3.0, 1.0, 1.0, 3.0], &[0.0, 0.0], &[2.0, 1.0]);
        let m = fit_mode(&c, ModeOptions::default()).unwrap();
        assert_eq!(m.path, ModePath::ClosedFormCols);
        let expected = [9.0 / 22.0, 5.0 / 44.0, 3.0 / 22.0, 15.0 / 44.0];
        for (got, want) in m.pi_hat.cells().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_single_row_pattern() {
        // complete data: π̂_ij = n_ij / n
        let c = counts(&[5.0, 0.0, 3.0, 2.0, 0.0, 0.0], &[0.0, 0.0], &[0.0; 3]);
        let m = closed_form_mode_mfo(&c).unwrap();
        for (got, want) in m.pi_hat.cells().iter().zip([0.5, 0.0, 0.3, 0.2, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_rejects_unapportionable_row() {
        let c = counts(&[3.0, 1.0, 0.0, 0.0], &[0.0, 2.0], &[0.0, 0.0]);
        assert!(matches!(closed_form_mode_mfo(&c), Err(Error::UnapportionableRow { row: 1 })));
    }

    #[test]
    fn closed_form_zero_mass_row() {
        let c = counts(&[3.0, 1.0, 0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]);
        let m = closed_form_mode_mfo(&c).unwrap();
        assert_eq!(&m.pi_hat.cells()[2..], &[0.0, 0.0]);
        assert!(m.residual < 1e-15);
    }

    #[test]
    fn empty_table_is_rejected() {
        let c = counts(&[0.0; 4], &[0.0; 2], &[0.0; 2]);
        assert!(matches!(fit_mode(&c, ModeOptions::default()), Err(Error::EmptyTable)));
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let c = counts(&[2.0, 1.0, 1.0, 2.0], &[5.0, 1.0], &[1.0, 4.0]);
        match fit_mode(&c, ModeOptions { tol: 1e-15, max_iter: 2 }) {
            Err(Error::NotConverged { iterations: 2, residual, last }) => {
                assert!(residual > 1e-15);
                assert_eq!(last.r(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_posterior_values() {
        let c = counts(&[1.0, 0.0, 0.0, 1.0], &[0.0; 2], &[0.0; 2]);
        let pi = ChanceMatrix::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((log_posterior_unnormalized(&c, &pi) - 2.0 * 0.5f64.ln()).abs() < 1e-15);

        let c = counts(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], &[2.0, 0.0]);
        let l = log_posterior_unnormalized(&c, &ChanceMatrix::uniform(2, 2));
        // 10 log(1/4) + 2 log(1/2) + 2 log(1/2)
        assert!((l - (10.0 * 0.25f64.ln() + 4.0 * 0.5f64.ln())).abs() < 1e-12);

        let pi = ChanceMatrix::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(log_posterior_unnormalized(&c, &pi), f64::NEG_INFINITY);
    }
}
