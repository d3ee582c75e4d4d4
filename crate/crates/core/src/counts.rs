//! Count model for a class/feature pair with margin-only observations.
//!
//! A [`ContingencyTable`] holds the joint counts `n_ij` of instances where both
//! class `i` and feature value `j` were seen, plus two margin vectors:
//! `feature_missing[i]` counts `(i, ?)` instances and `class_missing[j]` counts
//! `(?, j)` instances. Indices are zero-based.
//!
//! Priors turn raw counts into Dirichlet exponents ([`EffectiveCounts`]); the
//! posterior over the chances is proportional to
//! `Π π_ij^{n_ij} · Π π_i+^{n_i?} · Π π_+j^{n_?j}` on the simplex.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest joint exponent allowed when a covariance is requested.
pub const EXPONENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    r: usize,
    s: usize,
    joint: Vec<f64>,
    feature_missing: Vec<f64>,
    class_missing: Vec<f64>,
}

fn check_counts(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        Some(k) => Err(Error::InvalidTable(format!(
            "{name}[{k}] = {} is not a finite nonnegative count",
            values[k]
        ))),
        None => Ok(()),
    }
}

impl ContingencyTable {
    /// Builds a table from row-major joint counts and the two margin vectors.
    pub fn new(
        r: usize,
        s: usize,
        joint: Vec<f64>,
        feature_missing: Vec<f64>,
        class_missing: Vec<f64>,
    ) -> Result<Self> {
        if r < 2 || s < 2 {
            return Err(Error::InvalidTable(format!(
                "dimensions must be at least 2x2, got {r}x{s}"
            )));
        }
        if joint.len() != r * s || feature_missing.len() != r || class_missing.len() != s {
            return Err(Error::InvalidTable(format!(
                "shape mismatch: joint {} (want {}), feature_missing {} (want {r}), class_missing {} (want {s})",
                joint.len(),
                r * s,
                feature_missing.len(),
                class_missing.len()
            )));
        }
        check_counts("joint", &joint)?;
        check_counts("feature_missing", &feature_missing)?;
        check_counts("class_missing", &class_missing)?;
        Ok(Self {
            r,
            s,
            joint,
            feature_missing,
            class_missing,
        })
    }

    /// Complete-data table from nested rows.
    pub fn complete(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let s = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != s) {
            return Err(Error::InvalidTable("ragged joint rows".into()));
        }
        Self::new(r, s, rows.concat(), vec![0.0; r], vec![0.0; s])
    }

    pub fn zeros(r: usize, s: usize) -> Result<Self> {
        Self::new(r, s, vec![0.0; r * s], vec![0.0; r], vec![0.0; s])
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn joint(&self, i: usize, j: usize) -> f64 {
        self.joint[i * self.s + j]
    }

    /// Row-major joint counts.
    pub fn joint_cells(&self) -> &[f64] {
        &self.joint
    }

    /// `n_i?`: class observed, feature missing.
    pub fn feature_missing(&self) -> &[f64] {
        &self.feature_missing
    }

    /// `n_?j`: feature observed, class missing.
    pub fn class_missing(&self) -> &[f64] {
        &self.class_missing
    }

    /// `n`, the number of complete observations.
    pub fn complete_total(&self) -> f64 {
        self.joint.iter().sum()
    }

    /// `N = n + Σ n_i? + Σ n_?j`.
    pub fn total(&self) -> f64 {
        self.complete_total()
            + self.feature_missing.iter().sum::<f64>()
            + self.class_missing.iter().sum::<f64>()
    }

    /// `n_i+`
    pub fn row_total(&self, i: usize) -> f64 {
        self.joint[i * self.s..(i + 1) * self.s].iter().sum()
    }

    /// `n_+j`
    pub fn col_total(&self, j: usize) -> f64 {
        (0..self.r).map(|i| self.joint(i, j)).sum()
    }

    /// No class-missing observations: the closed-form row path applies.
    pub fn is_missing_features_only(&self) -> bool {
        self.class_missing.iter().all(|&v| v == 0.0)
    }

    /// No feature-missing observations: the closed-form column path applies.
    pub fn is_missing_classes_only(&self) -> bool {
        self.feature_missing.iter().all(|&v| v == 0.0)
    }

    pub fn is_complete(&self) -> bool {
        self.is_missing_features_only() && self.is_missing_classes_only()
    }

    /// Adds one observation. `None` marks a missing component; a fully missing
    /// pair is ignored and reported as `false`.
    pub fn record(&mut self, class: Option<usize>, feature: Option<usize>) -> Result<bool> {
        if let Some(i) = class {
            if i >= self.r {
                return Err(Error::CategoryOutOfRange {
                    what: "class",
                    index: i,
                    bound: self.r,
                });
            }
        }
        if let Some(j) = feature {
            if j >= self.s {
                return Err(Error::CategoryOutOfRange {
                    what: "feature",
                    index: j,
                    bound: self.s,
                });
            }
        }
        match (class, feature) {
            (Some(i), Some(j)) => self.joint[i * self.s + j] += 1.0,
            (Some(i), None) => self.feature_missing[i] += 1.0,
            (None, Some(j)) => self.class_missing[j] += 1.0,
            (None, None) => return Ok(false),
        }
        Ok(true)
    }

    /// Swaps the roles of class and feature.
    pub fn transpose(&self) -> Self {
        let mut joint = vec![0.0; self.r * self.s];
        for i in 0..self.r {
            for j in 0..self.s {
                joint[j * self.r + i] = self.joint(i, j);
            }
        }
        Self {
            r: self.s,
            s: self.r,
            joint,
            feature_missing: self.class_missing.clone(),
            class_missing: self.feature_missing.clone(),
        }
    }

    /// Copy of the table with the class-missing margin dropped.
    pub fn without_class_missing(&self) -> Self {
        Self {
            class_missing: vec![0.0; self.s],
            ..self.clone()
        }
    }
}

/// Result of [`tabulate`]: the table plus the number of doubly-missing pairs dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulation {
    pub table: ContingencyTable,
    pub dropped: usize,
}

/// Counts `(class, feature)` observations into an `r x s` table.
pub fn tabulate<I>(r: usize, s: usize, instances: I) -> Result<Tabulation>
where
    I: IntoIterator<Item = (Option<usize>, Option<usize>)>,
{
    let mut table = ContingencyTable::zeros(r, s)?;
    let mut dropped = 0;
    for (class, feature) in instances {
        if !table.record(class, feature)? {
            dropped += 1;
        }
    }
    Ok(Tabulation { table, dropped })
}

/// Dirichlet prior, expressed through the pseudo-count `n''` added per joint cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSpec {
    Uniform,
    Jeffreys,
    Haldane,
    Perks,
    /// Same pseudo-count on every cell.
    Custom(f64),
    /// Row-major pseudo-count per joint cell.
    PerCell(Vec<f64>),
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Uniform
    }
}

impl std::str::FromStr for PriorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(PriorSpec::Uniform),
            "jeffreys" => Ok(PriorSpec::Jeffreys),
            "haldane" => Ok(PriorSpec::Haldane),
            "perks" => Ok(PriorSpec::Perks),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .map(PriorSpec::Custom)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown prior '{s}' (uniform, jeffreys, haldane, perks or a nonnegative pseudo-count)"
                    ))
                }),
        }
    }
}

impl PriorSpec {
    fn pseudo_count(&self, cell: usize, r: usize, s: usize) -> f64 {
        match self {
            PriorSpec::Uniform => 1.0,
            PriorSpec::Jeffreys => 0.5,
            PriorSpec::Haldane => 0.0,
            PriorSpec::Perks => 1.0 / (r * s) as f64,
            PriorSpec::Custom(v) => *v,
            PriorSpec::PerCell(v) => v[cell],
        }
    }
}

/// Posterior exponents: joint cells carry `n' + n'' - 1`, margins pass through.
///
/// Dereferences to a [`ContingencyTable`] whose entries are exponents rather
/// than raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCounts {
    table: ContingencyTable,
    floored: usize,
}

impl Deref for EffectiveCounts {
    type Target = ContingencyTable;

    fn deref(&self) -> &ContingencyTable {
        &self.table
    }
}

impl EffectiveCounts {
    /// Uses the table entries directly as exponents.
    pub fn from_exponents(table: ContingencyTable) -> Self {
        Self { table, floored: 0 }
    }

    pub fn table(&self) -> &ContingencyTable {
        &self.table
    }

    pub fn into_table(self) -> ContingencyTable {
        self.table
    }

    /// Number of joint exponents that were raised to [`EXPONENT_FLOOR`].
    pub fn floored(&self) -> usize {
        self.floored
    }

    /// Raises every joint exponent below [`EXPONENT_FLOOR`] to the floor, so the
    /// precision kernel stays invertible.
    pub fn regularized(&self) -> Self {
        let mut table = self.table.clone();
        let mut floored = self.floored;
        for v in &mut table.joint {
            if *v < EXPONENT_FLOOR {
                *v = EXPONENT_FLOOR;
                floored += 1;
            }
        }
        Self { table, floored }
    }

    pub fn transpose(&self) -> Self {
        Self {
            table: self.table.transpose(),
            floored: self.floored,
        }
    }

    pub fn without_class_missing(&self) -> Self {
        Self {
            table: self.table.without_class_missing(),
            floored: self.floored,
        }
    }
}

/// Applies a Dirichlet prior to raw counts. Negative exponents (Haldane or
/// Perks on empty cells) are raised to [`EXPONENT_FLOOR`].
pub fn apply_prior(table: &ContingencyTable, prior: &PriorSpec) -> Result<EffectiveCounts> {
    let (r, s) = (table.r, table.s);
    match prior {
        PriorSpec::Custom(v) if !v.is_finite() || *v < 0.0 => {
            return Err(Error::InvalidArgument(format!("pseudo-count {v} must be finite and >= 0")))
        }
        PriorSpec::PerCell(v) if v.len() != r * s => {
            return Err(Error::InvalidArgument(format!(
                "per-cell prior has {} entries, table has {}",
                v.len(),
                r * s
            )))
        }
        PriorSpec::PerCell(v) => check_counts("prior", v)?,
        _ => {}
    }
    let mut out = table.clone();
    let mut floored = 0;
    for (cell, v) in out.joint.iter_mut().enumerate() {
        let e = *v + prior.pseudo_count(cell, r, s) - 1.0;
        *v = if e < 0.0 {
            floored += 1;
            EXPONENT_FLOOR
        } else {
            e
        };
    }
    Ok(EffectiveCounts { table: out, floored })
}

/// A point on the `rs`-simplex with its marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceMatrix {
    r: usize,
    s: usize,
    cells: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl ChanceMatrix {
    /// Validates nonnegativity and normalization (within `1e-9`).
    pub fn new(r: usize, s: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != r * s || r == 0 || s == 0 {
            return Err(Error::InvalidArgument(format!(
                "chance matrix of {} cells cannot be {r}x{s}",
                cells.len()
            )));
        }
        if cells.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("chances must be finite and nonnegative".into()));
        }
        let total: f64 = cells.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("chances sum to {total}, not 1")));
        }
        Ok(Self::from_cells_unchecked(r, s, cells))
    }

    pub(crate) fn from_cells_unchecked(r: usize, s: usize, cells: Vec<f64>) -> Self {
        let mut rows = vec![0.0; r];
        let mut cols = vec![0.0; s];
        for i in 0..r {
            for j in 0..s {
                let p = cells[i * s + j];
                rows[i] += p;
                cols[j] += p;
            }
        }
        Self { r, s, cells, rows, cols }
    }

    pub fn uniform(r: usize, s: usize) -> Self {
        Self::from_cells_unchecked(r, s, vec![1.0 / (r * s) as f64; r * s])
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.s + j]
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// `π_i+`
    pub fn row_marginals(&self) -> &[f64] {
        &self.rows
    }

    /// `π_+j`
    pub fn col_marginals(&self) -> &[f64] {
        &self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut cells = vec![0.0; self.r * self.s];
        for i in 0..self.r {
            for j in 0..self.s {
                cells[j * self.r + i] = self.get(i, j);
            }
        }
        Self {
            r: self.s,
            s: self.r,
            cells,
            rows: self.cols.clone(),
            cols: self.rows.clone(),
        }
    }

    /// Largest absolute cellwise difference.
    pub fn max_abs_diff(&self, other: &ChanceMatrix) -> f64 {
        self.cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Nested rows, for reporting.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.cells.chunks(self.s).map(<[f64]>::to_vec).collect()
    }
}
