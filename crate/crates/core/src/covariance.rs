//! Leading-order Gaussian approximation of the posterior over the chances.
//!
//! The Hessian of the negative log-posterior at the mode is
//!
//! ```text
//! A_(ij)(kl) = N [ δ_ik δ_jl / ρ_ij + δ_ik / ρ_i? + δ_jl / ρ_?j ]
//! ρ_ij = N π̂_ij² / n_ij,  ρ_i? = N π̂_i+² / n_i?,  ρ_?j = N π̂_+j² / n_?j
//! ```
//!
//! and the covariance on the simplex is the Sherman-Morrison projection
//! `A⁻¹ - (A⁻¹e)(A⁻¹e)ᵀ / (eᵀA⁻¹e)`. Margin precisions are stored as inverse
//! weights `w = 1/ρ` so that an absent margin (`ρ = ∞`) is simply `w = 0`.
//!
//! With no class-missing data each row block of `A` is diagonal plus rank
//! one and inverts in closed form. In general the class-missing term is a
//! rank-`s` update handled with Woodbury's identity, which needs a single
//! `s x s` solve.

use crate::counts::{ChanceMatrix, EffectiveCounts};
use crate::error::{Error, Result};
use crate::linalg;

/// Threshold on the 1-norm condition estimate of the capacitance matrix.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionField {
    r: usize,
    s: usize,
    total: f64,
    rho: Vec<f64>,
    rho_row: Vec<f64>,
    w_row: Vec<f64>,
    w_col: Vec<f64>,
}

impl PrecisionField {
    /// Builds a field directly from `ρ_ij`, `w_i?` and `w_?j`.
    pub fn from_parts(r: usize, s: usize, total: f64, rho: Vec<f64>, w_row: Vec<f64>, w_col: Vec<f64>) -> Result<Self> {
        if rho.len() != r * s || w_row.len() != r || w_col.len() != s {
            return Err(Error::InvalidArgument("precision field shape mismatch".into()));
        }
        if !(total > 0.0) || rho.iter().chain(&w_row).chain(&w_col).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "precision field entries must be finite and nonnegative with N > 0".into(),
            ));
        }
        let rho_row = rho.chunks(s).map(|row| row.iter().sum()).collect();
        Ok(Self {
            r,
            s,
            total,
            rho,
            rho_row,
            w_row,
            w_col,
        })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// `N`
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.rho[i * self.s + j]
    }

    pub fn rho_cells(&self) -> &[f64] {
        &self.rho
    }

    /// `ρ_i+ = Σ_j ρ_ij`
    pub fn rho_row_sum(&self, i: usize) -> f64 {
        self.rho_row[i]
    }

    /// `1/ρ_ij`; infinite for a cell with zero count and zero chance.
    pub fn w_joint(&self, i: usize, j: usize) -> f64 {
        1.0 / self.rho(i, j)
    }

    /// `w_i? = 1/ρ_i?`
    pub fn w_feature_missing(&self) -> &[f64] {
        &self.w_row
    }

    /// `w_?j = 1/ρ_?j`
    pub fn w_class_missing(&self) -> &[f64] {
        &self.w_col
    }

    /// `ρ_i?`, infinite when the row has no feature-missing count.
    pub fn rho_feature_missing(&self, i: usize) -> f64 {
        1.0 / self.w_row[i]
    }

    /// `ρ_?j`, infinite when the column has no class-missing count.
    pub fn rho_class_missing(&self, j: usize) -> f64 {
        1.0 / self.w_col[j]
    }

    /// `Q̃_i? = ρ_i? / (ρ_i? + ρ_i+)`, evaluated as `1 / (1 + ρ_i+ w_i?)`.
    pub fn q_tilde_row(&self, i: usize) -> f64 {
        1.0 / (1.0 + self.rho_row[i] * self.w_row[i])
    }

    /// `1 / (ρ_i? + ρ_i+)`, the rank-one coupling inside row block `i`.
    pub fn row_coupling(&self, i: usize) -> f64 {
        self.w_row[i] / (1.0 + self.rho_row[i] * self.w_row[i])
    }

    pub fn is_missing_features_only(&self) -> bool {
        self.w_col.iter().all(|&w| w == 0.0)
    }

    pub fn transpose(&self) -> Self {
        let mut rho = vec![0.0; self.r * self.s];
        for i in 0..self.r {
            for j in 0..self.s {
                rho[j * self.r + i] = self.rho(i, j);
            }
        }
        let rho_row = rho.chunks(self.r).map(|row| row.iter().sum()).collect();
        Self {
            r: self.s,
            s: self.r,
            total: self.total,
            rho,
            rho_row,
            w_row: self.w_col.clone(),
            w_col: self.w_row.clone(),
        }
    }
}

/// Evaluates the precision quantities at the fitted mode.
///
/// Joint exponents should already be regularized; a zero count is accepted
/// only together with a zero chance (`ρ_ij = 0` in the limit).
pub fn precision_field(counts: &EffectiveCounts, pi_hat: &ChanceMatrix) -> Result<PrecisionField> {
    let (r, s) = (counts.r(), counts.s());
    if pi_hat.r() != r || pi_hat.s() != s {
        return Err(Error::InvalidArgument("mode and counts have different shapes".into()));
    }
    let total = counts.total();
    if total <= 0.0 {
        return Err(Error::EmptyTable);
    }
    let mut rho = vec![0.0; r * s];
    for i in 0..r {
        for j in 0..s {
            let n = counts.joint(i, j);
            let p = pi_hat.get(i, j);
            rho[i * s + j] = match (n > 0.0, p > 0.0) {
                (true, true) => total * p * p / n,
                (false, false) => 0.0,
                _ => return Err(Error::InconsistentField { row: i, col: j }),
            };
        }
    }
    let margin = |counts: &[f64], marg: &[f64], axis_row: bool| -> Result<Vec<f64>> {
        counts
            .iter()
            .zip(marg)
            .enumerate()
            .map(|(k, (&n, &p))| {
                if n == 0.0 {
                    Ok(0.0)
                } else if p > 0.0 {
                    Ok(n / (total * p * p))
                } else if axis_row {
                    Err(Error::InconsistentField { row: k, col: usize::MAX })
                } else {
                    Err(Error::InconsistentField { row: usize::MAX, col: k })
                }
            })
            .collect()
    };
    let w_row = margin(counts.feature_missing(), pi_hat.row_marginals(), true)?;
    let w_col = margin(counts.class_missing(), pi_hat.col_marginals(), false)?;
    PrecisionField::from_parts(r, s, total, rho, w_row, w_col)
}

/// Dense symmetric `(rs) x (rs)` covariance indexed by cell pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    r: usize,
    s: usize,
    data: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Side length `rs`.
    pub fn dim(&self) -> usize {
        self.r * self.s
    }

    /// `Cov[π_ij, π_kl]`
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[(i * self.s + j) * self.dim() + k * self.s + l]
    }

    /// Row-major dense storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `xᵀ Cov x` for a cell-indexed vector.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        self.data
            .chunks(n)
            .zip(x)
            .map(|(row, xi)| xi * row.iter().zip(x).map(|(c, xj)| c * xj).sum::<f64>())
            .sum()
    }

    /// Largest `|Σ_(kl) Cov_(ij)(kl)|` over rows.
    pub fn max_row_sum(&self) -> f64 {
        self.data
            .chunks(self.dim())
            .map(|row| row.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|Cov_ab - Cov_ba|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                worst = worst.max((self.data[a * n + b] - self.data[b * n + a]).abs());
            }
        }
        worst
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim()).map(<[f64]>::to_vec).collect()
    }
}

/// Closed-form covariance when no class labels are missing.
pub fn covariance_mfo(field: &PrecisionField) -> Result<CovarianceMatrix> {
    if !field.is_missing_features_only() {
        return Err(Error::InvalidArgument(
            "closed-form covariance requires no class-missing counts".into(),
        ));
    }
    let (r, s) = (field.r, field.s);
    let n = r * s;
    let q_row: Vec<f64> = (0..r).map(|i| field.q_tilde_row(i)).collect();
    let q: f64 = (0..r).map(|i| field.rho_row_sum(i) * q_row[i]).sum();
    if !(q > 0.0) {
        return Err(Error::Internal(format!("Q̃ = {q} is not positive")));
    }
    let mut data = vec![0.0; n * n];
    for i in 0..r {
        let coupling = field.row_coupling(i);
        for j in 0..s {
            let a = i * s + j;
            let rho_a = field.rho(i, j);
            for k in 0..r {
                for l in 0..s {
                    let b = k * s + l;
                    let rho_b = field.rho(k, l);
                    let mut v = -rho_a * q_row[i] * rho_b * q_row[k] / q;
                    if i == k {
                        v -= rho_a * rho_b * coupling;
                        if j == l {
                            v += rho_a;
                        }
                    }
                    data[a * n + b] = v / field.total;
                }
            }
        }
    }
    Ok(CovarianceMatrix { r, s, data })
}

/// Factored kernel inverse
/// `[A⁻¹]_(ij)(kl) = (1/N) [F_ijl δ_ik - Σ_mn F_ijm C_mn F_kln]`.
///
/// `F_ijl = ρ_ij δ_jl - ρ_ij ρ_il / (ρ_i? + ρ_i+)` is the inverse of one row
/// block of the class-missing-free kernel. The correction `C` is kept as
/// `D^{1/2} S⁻¹ D^{1/2}` with `D = diag(w_?j)` and
/// `S = I + D^{1/2} F_+ D^{1/2}`, which stays finite when some `ρ_?j = ∞`;
/// where all `w_?j > 0` this equals `G⁻¹` for `G = diag(ρ_?j) + F_+`.
///
/// The factors are built with the smaller dimension as columns; `f`, `g` and
/// `g_inverse` refer to that internal orientation (see [`Self::transposed`]),
/// while [`Self::apply_inverse`] works in the caller's orientation.
#[derive(Debug, Clone)]
pub struct WoodburyFactors {
    r: usize,
    s: usize,
    total: f64,
    transposed: bool,
    rho: Vec<f64>,
    coupling: Vec<f64>,
    sqrt_w: Vec<f64>,
    g: Vec<f64>,
    g_inverse: Vec<f64>,
    condition: f64,
}

impl WoodburyFactors {
    /// True when the factors were built on the transposed field.
    pub fn transposed(&self) -> bool {
        self.transposed
    }

    /// Internal `(rows, cols)` with `cols <= rows`.
    pub fn internal_dims(&self) -> (usize, usize) {
        (self.r, self.s)
    }

    /// `F_ijl` in the internal orientation.
    pub fn f(&self, i: usize, j: usize, l: usize) -> f64 {
        let s = self.s;
        let diag = if j == l { self.rho[i * s + j] } else { 0.0 };
        diag - self.rho[i * s + j] * self.rho[i * s + l] * self.coupling[i]
    }

    /// The scaled capacitance matrix `S` (row-major `s x s`).
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn g_inverse(&self) -> &[f64] {
        &self.g_inverse
    }

    /// 1-norm condition estimate of `S`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `y = F x` blockwise: `y_ij = ρ_ij x_ij - ρ_ij c_i Σ_l ρ_il x_il`.
    fn apply_blocks(&self, x: &[f64], out: &mut [f64]) {
        let s = self.s;
        for i in 0..self.r {
            let rho = &self.rho[i * s..(i + 1) * s];
            let xs = &x[i * s..(i + 1) * s];
            let dot: f64 = rho.iter().zip(xs).map(|(a, b)| a * b).sum();
            let c = self.coupling[i] * dot;
            for ((o, &p), &v) in out[i * s..(i + 1) * s].iter_mut().zip(rho).zip(xs) {
                *o = p * (v - c);
            }
        }
    }

    fn apply_internal(&self, x: &[f64]) -> Vec<f64> {
        let (r, s) = (self.r, self.s);
        let mut fx = vec![0.0; r * s];
        self.apply_blocks(x, &mut fx);
        if self.sqrt_w.iter().any(|&w| w > 0.0) {
            let mut t = vec![0.0; s];
            for row in fx.chunks(s) {
                for (acc, v) in t.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            for (v, w) in t.iter_mut().zip(&self.sqrt_w) {
                *v *= w;
            }
            let mut u = linalg::mat_vec(&self.g_inverse, s, &t);
            for (v, w) in u.iter_mut().zip(&self.sqrt_w) {
                *v *= w;
            }
            let broadcast: Vec<f64> = (0..r).flat_map(|_| u.iter().copied()).collect();
            let mut fu = vec![0.0; r * s];
            self.apply_blocks(&broadcast, &mut fu);
            for (a, b) in fx.iter_mut().zip(fu) {
                *a -= b;
            }
        }
        for v in &mut fx {
            *v /= self.total;
        }
        fx
    }

    /// `A⁻¹ x` for a cell-indexed vector in the caller's orientation.
    pub fn apply_inverse(&self, x: &[f64]) -> Vec<f64> {
        if !self.transposed {
            return self.apply_internal(x);
        }
        // caller is s x r (internal r x s): caller (a, b) <-> internal (b, a)
        let (r, s) = (self.r, self.s);
        let mut xt = vec![0.0; r * s];
        for a in 0..s {
            for b in 0..r {
                xt[b * s + a] = x[a * r + b];
            }
        }
        let yt = self.apply_internal(&xt);
        let mut y = vec![0.0; r * s];
        for a in 0..s {
            for b in 0..r {
                y[a * r + b] = yt[b * s + a];
            }
        }
        y
    }

    /// Materialized `A⁻¹` (row-major, caller's orientation).
    pub fn dense_inverse(&self) -> Vec<f64> {
        let n = self.r * self.s;
        let mut out = vec![0.0; n * n];
        let mut unit = vec![0.0; n];
        for b in 0..n {
            unit[b] = 1.0;
            let col = self.apply_inverse(&unit);
            unit[b] = 0.0;
            for (a, v) in col.into_iter().enumerate() {
                out[a * n + b] = v;
            }
        }
        out
    }
}

/// Builds the Woodbury factors of the kernel inverse.
pub fn kernel_inverse_general(field: &PrecisionField) -> Result<WoodburyFactors> {
    let transposed = field.s > field.r;
    let owned;
    let f = if transposed {
        owned = field.transpose();
        &owned
    } else {
        field
    };
    let (r, s) = (f.r, f.s);
    let coupling: Vec<f64> = (0..r).map(|i| f.row_coupling(i)).collect();
    let sqrt_w: Vec<f64> = f.w_col.iter().map(|w| w.sqrt()).collect();

    // S = I + D^{1/2} F_+ D^{1/2},  (F_+)_mn = Σ_i ρ_im δ_mn - Σ_i c_i ρ_im ρ_in
    let mut g = vec![0.0; s * s];
    for i in 0..r {
        let rho = &f.rho[i * s..(i + 1) * s];
        for m in 0..s {
            g[m * s + m] += rho[m];
            let cm = coupling[i] * rho[m];
            if cm == 0.0 {
                continue;
            }
            for n in 0..s {
                g[m * s + n] -= cm * rho[n];
            }
        }
    }
    for m in 0..s {
        for n in 0..s {
            g[m * s + n] *= sqrt_w[m] * sqrt_w[n];
        }
        g[m * s + m] += 1.0;
    }
    let g_inverse = linalg::invert(&g, s).ok_or(Error::SingularKernel {
        condition: f64::INFINITY,
    })?;
    let condition = linalg::norm1(&g, s) * linalg::norm1(&g_inverse, s);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularKernel { condition });
    }
    Ok(WoodburyFactors {
        r,
        s,
        total: f.total,
        transposed,
        rho: f.rho.clone(),
        coupling,
        sqrt_w,
        g,
        g_inverse,
        condition,
    })
}

/// Sherman-Morrison projection of `A⁻¹` onto the simplex tangent space.
pub fn covariance_general(field: &PrecisionField) -> Result<CovarianceMatrix> {
    let factors = kernel_inverse_general(field)?;
    let n = field.r * field.s;
    let mut data = factors.dense_inverse();
    let u: Vec<f64> = data.chunks(n).map(|row| row.iter().sum()).collect();
    let eae: f64 = u.iter().sum();
    if !(eae > 0.0) {
        return Err(Error::Internal(format!("eᵀA⁻¹e = {eae} is not positive")));
    }
    for a in 0..n {
        for b in 0..n {
            data[a * n + b] -= u[a] * u[b] / eae;
        }
    }
    Ok(CovarianceMatrix {
        r: field.r,
        s: field.s,
        data,
    })
}

/// Covariance through the cheapest applicable path.
pub fn covariance(field: &PrecisionField) -> Result<CovarianceMatrix> {
    if field.is_missing_features_only() {
        covariance_mfo(field)
    } else {
        covariance_general(field)
    }
}
