//! Brute-force reference values for the leading-order formulas.
//!
//! * Complete data: the posterior is Dirichlet with parameters
//!   `exponent + 1`; draws are normalized independent gammas.
//! * Incomplete data: importance sampling from that Dirichlet (joint
//!   exponents only) reweighted by the margin factors
//!   `Π π_i+^{n_i?} Π π_+j^{n_?j}`, or a barycentric lattice over the simplex
//!   for very small tables.
//! * The kernel: dense assembly and elimination with nalgebra.
//!
//! Sampling is split over a fixed number of workers, each with its own
//! ChaCha stream, so results depend only on the seed.

use std::thread;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::counts::{apply_prior, ContingencyTable, EffectiveCounts, PriorSpec};
use crate::covariance::{covariance, kernel_inverse_general, precision_field, PrecisionField};
use crate::error::{Error, Result};
use crate::mi::{summarize, VariancePath};
use crate::mode::{fit_mode, ModeOptions};

const WORKERS: usize = 8;

/// Importance-sampling results below this effective sample size are flagged.
pub const MIN_ESS: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum OracleMethod {
    /// Lattice with `resolution` steps per unit along each coordinate.
    Grid { resolution: usize },
    Importance { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleMoments {
    pub r: usize,
    pub s: usize,
    pub mean_pi: Vec<f64>,
    /// Row-major `rs x rs`.
    pub cov_pi: Vec<f64>,
    pub mean_mi: f64,
    pub var_mi: f64,
    /// Error estimates: Monte-Carlo standard errors for sampling, the change
    /// under halving the resolution for the grid.
    pub err_mean_pi: Vec<f64>,
    pub err_mean_mi: f64,
    pub err_var_mi: f64,
    pub samples: usize,
    pub ess: Option<f64>,
    pub reliable: bool,
}

fn mutual_information(pi: &[f64], r: usize, s: usize) -> f64 {
    let mut rows = vec![0.0; r];
    let mut cols = vec![0.0; s];
    for i in 0..r {
        for j in 0..s {
            rows[i] += pi[i * s + j];
            cols[j] += pi[i * s + j];
        }
    }
    let mut mi = 0.0;
    for i in 0..r {
        for j in 0..s {
            let p = pi[i * s + j];
            if p > 0.0 {
                mi += p * (p / (rows[i] * cols[j])).ln();
            }
        }
    }
    mi
}

/// Weighted moment sums kept relative to the largest log-weight seen.
#[derive(Debug, Clone)]
struct Accumulator {
    shift_pi: Vec<f64>,
    shift_mi: f64,
    log_scale: f64,
    count: usize,
    sw: f64,
    sw2: f64,
    s_pi: Vec<f64>,
    s_pipi: Vec<f64>,
    s_mi: [f64; 4],
}

impl Accumulator {
    fn new(shift_pi: Vec<f64>, shift_mi: f64) -> Self {
        let d = shift_pi.len();
        Self {
            shift_pi,
            shift_mi,
            log_scale: f64::NEG_INFINITY,
            count: 0,
            sw: 0.0,
            sw2: 0.0,
            s_pi: vec![0.0; d],
            s_pipi: vec![0.0; d * d],
            s_mi: [0.0; 4],
        }
    }

    fn rescale(&mut self, log_scale: f64) {
        if log_scale <= self.log_scale {
            return;
        }
        let f = if self.log_scale == f64::NEG_INFINITY {
            0.0
        } else {
            (self.log_scale - log_scale).exp()
        };
        self.sw *= f;
        self.sw2 *= f * f;
        self.s_pi.iter_mut().chain(&mut self.s_pipi).chain(&mut self.s_mi).for_each(|v| *v *= f);
        self.log_scale = log_scale;
    }

    fn push(&mut self, log_w: f64, pi: &[f64], mi: f64) {
        self.count += 1;
        if log_w == f64::NEG_INFINITY {
            return;
        }
        self.rescale(log_w);
        let w = (log_w - self.log_scale).exp();
        self.sw += w;
        self.sw2 += w * w;
        let d = pi.len();
        for a in 0..d {
            let x = pi[a] - self.shift_pi[a];
            self.s_pi[a] += w * x;
            for b in 0..d {
                self.s_pipi[a * d + b] += w * x * (pi[b] - self.shift_pi[b]);
            }
        }
        let y = mi - self.shift_mi;
        let mut p = w;
        for m in &mut self.s_mi {
            p *= y;
            *m += p;
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        let scale = self.log_scale.max(other.log_scale);
        self.rescale(scale);
        self.count += other.count;
        if other.log_scale == f64::NEG_INFINITY {
            return;
        }
        let f = (other.log_scale - scale).exp();
        self.sw += f * other.sw;
        self.sw2 += f * f * other.sw2;
        for (a, b) in self.s_pi.iter_mut().zip(&other.s_pi) {
            *a += f * b;
        }
        for (a, b) in self.s_pipi.iter_mut().zip(&other.s_pipi) {
            *a += f * b;
        }
        for (a, b) in self.s_mi.iter_mut().zip(&other.s_mi) {
            *a += f * b;
        }
    }

    fn finish(&self, r: usize, s: usize) -> Result<OracleMoments> {
        if !(self.sw > 0.0) {
            return Err(Error::Internal("oracle has no support points with positive weight".into()));
        }
        let d = r * s;
        let ess = self.sw * self.sw / self.sw2;
        let m: Vec<f64> = self.s_pi.iter().map(|v| v / self.sw).collect();
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] = self.s_pipi[a * d + b] / self.sw - m[a] * m[b];
            }
        }
        let [e1, e2, e3, e4] = self.s_mi.map(|v| v / self.sw);
        let var = e2 - e1 * e1;
        let m4 = e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1.powi(4);
        Ok(OracleMoments {
            r,
            s,
            mean_pi: m.iter().zip(&self.shift_pi).map(|(x, c)| x + c).collect(),
            err_mean_pi: (0..d).map(|a| (cov[a * d + a].max(0.0) / ess).sqrt()).collect(),
            cov_pi: cov,
            mean_mi: e1 + self.shift_mi,
            var_mi: var,
            err_mean_mi: (var.max(0.0) / ess).sqrt(),
            err_var_mi: ((m4 - var * var).max(0.0) / ess).sqrt(),
            samples: self.count,
            ess: Some(ess),
            reliable: ess >= MIN_ESS,
        })
    }
}

/// Margin factors of the posterior, as exponents.
#[derive(Debug, Clone)]
struct Target {
    r: usize,
    s: usize,
    joint: Vec<f64>,
    row: Vec<f64>,
    col: Vec<f64>,
}

impl Target {
    fn from_counts(counts: &EffectiveCounts) -> Self {
        Self {
            r: counts.r(),
            s: counts.s(),
            joint: counts.joint_cells().to_vec(),
            row: counts.feature_missing().to_vec(),
            col: counts.class_missing().to_vec(),
        }
    }

    fn log_margin_factor(&self, pi: &[f64]) -> f64 {
        let (r, s) = (self.r, self.s);
        let mut lw = 0.0;
        for i in 0..r {
            if self.row[i] > 0.0 {
                lw += self.row[i] * pi[i * s..(i + 1) * s].iter().sum::<f64>().ln();
            }
        }
        for j in 0..s {
            if self.col[j] > 0.0 {
                lw += self.col[j] * (0..r).map(|i| pi[i * s + j]).sum::<f64>().ln();
            }
        }
        lw
    }

    fn log_density(&self, pi: &[f64]) -> f64 {
        let mut ld = self.log_margin_factor(pi);
        for (&e, &p) in self.joint.iter().zip(pi) {
            if e != 0.0 {
                ld += e * p.ln();
            }
        }
        if ld.is_nan() {
            f64::NEG_INFINITY
        } else {
            ld
        }
    }

    fn dirichlet_mean(&self) -> Vec<f64> {
        let total: f64 = self.joint.iter().map(|e| e + 1.0).sum();
        self.joint.iter().map(|e| (e + 1.0) / total).collect()
    }
}

fn sample(target: &Target, draws: usize, seed: u64, weighted: bool) -> Result<OracleMoments> {
    let gammas = target
        .joint
        .iter()
        .map(|&e| Gamma::new(e + 1.0, 1.0).map_err(|err| Error::InvalidArgument(format!("exponent {e}: {err}"))))
        .collect::<Result<Vec<_>>>()?;
    let shift = target.dirichlet_mean();
    let shift_mi = mutual_information(&shift, target.r, target.s);
    let partials: Vec<Accumulator> = thread::scope(|scope| {
        let handles: Vec<_> = (0..WORKERS)
            .map(|w| {
                let n = draws / WORKERS + usize::from(w < draws % WORKERS);
                let (gammas, shift) = (&gammas, &shift);
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(w as u64);
                    let mut acc = Accumulator::new(shift.clone(), shift_mi);
                    let mut pi = vec![0.0; gammas.len()];
                    for _ in 0..n {
                        draw_dirichlet(gammas, &mut rng, &mut pi);
                        let lw = if weighted { target.log_margin_factor(&pi) } else { 0.0 };
                        acc.push(lw, &pi, mutual_information(&pi, target.r, target.s));
                    }
                    acc
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampling worker panicked")).collect()
    });
    let mut total = Accumulator::new(shift, shift_mi);
    for p in &partials {
        total.merge(p);
    }
    total.finish(target.r, target.s)
}

fn draw_dirichlet<R: Rng>(gammas: &[Gamma<f64>], rng: &mut R, out: &mut [f64]) {
    let mut sum = 0.0;
    for (o, g) in out.iter_mut().zip(gammas) {
        *o = g.sample(rng);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Dirichlet posterior moments for a table without missing margins.
pub fn dirichlet_moments_mc(counts: &EffectiveCounts, draws: usize, seed: u64) -> Result<OracleMoments> {
    if !counts.is_complete() {
        return Err(Error::InvalidArgument(
            "Dirichlet sampling needs a table without missing margins".into(),
        ));
    }
    sample(&Target::from_counts(counts), draws, seed, false)
}

fn visit_lattice(k: &mut Vec<usize>, remaining: usize, d: usize, f: &mut impl FnMut(&[usize])) {
    if k.len() + 1 == d {
        k.push(remaining);
        f(k);
        k.pop();
        return;
    }
    for v in 0..=remaining {
        k.push(v);
        visit_lattice(k, remaining - v, d, f);
        k.pop();
    }
}

fn grid_moments(target: &Target, resolution: usize) -> Result<OracleMoments> {
    let d = target.r * target.s;
    let m = resolution as f64;
    let mut pi = vec![0.0; d];
    let point_log_weight = |k: &[usize], pi: &mut [f64]| {
        for (p, &v) in pi.iter_mut().zip(k) {
            *p = v as f64 / m;
        }
        // half weight per vanishing coordinate on the boundary
        let zeros = k.iter().filter(|&&v| v == 0).count();
        target.log_density(pi) - zeros as f64 * std::f64::consts::LN_2
    };
    let shift = target.dirichlet_mean();
    let mut acc = Accumulator::new(shift.clone(), mutual_information(&shift, target.r, target.s));
    visit_lattice(&mut Vec::with_capacity(d), resolution, d, &mut |k| {
        let lw = point_log_weight(k, &mut pi);
        let mi = mutual_information(&pi, target.r, target.s);
        acc.push(lw, &pi, mi);
    });
    let mut out = acc.finish(target.r, target.s)?;
    out.ess = None;
    out.reliable = true;
    Ok(out)
}

/// Moments of the exact posterior of a table with missing margins.
pub fn incomplete_posterior_moments(counts: &EffectiveCounts, method: OracleMethod, seed: u64) -> Result<OracleMoments> {
    let target = Target::from_counts(counts);
    match method {
        OracleMethod::Importance { draws } => sample(&target, draws, seed, true),
        OracleMethod::Grid { resolution } => {
            if target.r * target.s > 6 {
                return Err(Error::InvalidArgument(format!(
                    "grid integration supports at most 6 cells, table has {}",
                    target.r * target.s
                )));
            }
            if resolution < 4 {
                return Err(Error::InvalidArgument("grid resolution must be >= 4".into()));
            }
            let fine = grid_moments(&target, resolution)?;
            let coarse = grid_moments(&target, resolution / 2)?;
            Ok(OracleMoments {
                err_mean_pi: fine.mean_pi.iter().zip(&coarse.mean_pi).map(|(a, b)| (a - b).abs()).collect(),
                err_mean_mi: (fine.mean_mi - coarse.mean_mi).abs(),
                err_var_mi: (fine.var_mi - coarse.var_mi).abs(),
                reliable: (fine.var_mi - coarse.var_mi).abs() <= 0.01 * fine.var_mi
                    && (fine.mean_mi - coarse.mean_mi).abs() <= 0.01 * fine.mean_mi,
                ..fine
            })
        }
    }
}

/// Dense `rs x rs` kernel `A`, row-major.
pub fn dense_kernel(field: &PrecisionField) -> Result<Vec<f64>> {
    let (r, s) = (field.r(), field.s());
    let n = r * s;
    if n > 200 {
        return Err(Error::InvalidArgument(format!("dense kernel limited to 200 cells, got {n}")));
    }
    let total = field.total();
    let (w_row, w_col) = (field.w_feature_missing(), field.w_class_missing());
    let mut a = vec![0.0; n * n];
    for i in 0..r {
        for j in 0..s {
            let rho = field.rho(i, j);
            if rho == 0.0 {
                return Err(Error::SingularKernel { condition: f64::INFINITY });
            }
            let row = i * s + j;
            a[row * n + row] += total / rho;
            for l in 0..s {
                a[row * n + i * s + l] += total * w_row[i];
            }
            for k in 0..r {
                a[row * n + k * s + j] += total * w_col[j];
            }
        }
    }
    Ok(a)
}

/// Direct inverse of the dense kernel.
pub fn dense_kernel_inverse(field: &PrecisionField) -> Result<Vec<f64>> {
    let n = field.r() * field.s();
    let a = DMatrix::from_row_slice(n, n, &dense_kernel(field)?);
    let inv = a.try_inverse().ok_or(Error::SingularKernel { condition: f64::INFINITY })?;
    Ok(inv.transpose().as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub analytic: f64,
    pub oracle: f64,
    pub oracle_error: f64,
    /// Allowed discrepancy; relative when `relative` is set.
    pub tolerance: f64,
    pub relative: bool,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, analytic: f64, oracle: f64, oracle_error: f64, tolerance: f64, relative: bool) -> Self {
        let gap = (analytic - oracle).abs();
        let pass = if relative {
            gap <= tolerance * oracle.abs()
        } else {
            gap <= tolerance
        };
        Self {
            name: name.into(),
            analytic,
            oracle,
            oracle_error,
            tolerance,
            relative,
            pass,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub draws: usize,
    pub grid_resolution: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            draws: 1_000_000,
            grid_resolution: 200,
            seed: 20_240_601,
        }
    }
}

/// Fixed 2x2 tables with both margins partly missing: `(joint, n_i?, n_?j)`.
pub const INCOMPLETE_CASES: [([f64; 4], [f64; 2], [f64; 2]); 5] = [
    ([20.0, 8.0, 6.0, 18.0], [4.0, 3.0], [2.0, 3.0]),
    ([30.0, 10.0, 12.0, 28.0], [6.0, 2.0], [5.0, 7.0]),
    ([15.0, 15.0, 10.0, 20.0], [10.0, 5.0], [3.0, 12.0]),
    ([45.0, 20.0, 15.0, 50.0], [8.0, 12.0], [10.0, 5.0]),
    ([60.0, 25.0, 30.0, 55.0], [10.0, 4.0], [6.0, 10.0]),
];

pub fn incomplete_case(index: usize) -> Result<ContingencyTable> {
    let (joint, rows, cols) = INCOMPLETE_CASES[index];
    ContingencyTable::new(2, 2, joint.to_vec(), rows.to_vec(), cols.to_vec())
}

fn random_general_field(rng: &mut ChaCha8Rng, r: usize, s: usize) -> Result<PrecisionField> {
    let joint = (0..r * s).map(|_| f64::from(rng.random_range(1u32..30))).collect();
    let rows = (0..r).map(|_| f64::from(rng.random_range(0u32..10))).collect();
    let cols = (0..s).map(|_| f64::from(rng.random_range(0u32..10))).collect();
    let table = ContingencyTable::new(r, s, joint, rows, cols)?;
    let counts = apply_prior(&table, &PriorSpec::Uniform)?.regularized();
    let mode = fit_mode(&counts, ModeOptions::default())?;
    precision_field(&counts, &mode.pi_hat)
}

/// Compares analytic values with the oracles.
pub fn validation_suite(config: SuiteConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for (r, s) in [(2, 2), (3, 4), (5, 3)] {
        let field = random_general_field(&mut rng, r, s)?;
        let dense = dense_kernel_inverse(&field)?;
        let wood = kernel_inverse_general(&field)?.dense_inverse();
        let scale = dense.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = dense.iter().zip(&wood).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        checks.push(Check::new(format!("kernel inverse {r}x{s}: factored vs dense"), gap / scale, 0.0, 0.0, 1e-9, false));
    }

    let complete = ContingencyTable::complete(&[vec![40.0, 10.0], vec![10.0, 40.0]])?;
    let counts = apply_prior(&complete, &PriorSpec::Uniform)?;
    let summary = summarize(&counts, ModeOptions::default(), VariancePath::Auto)?;
    let mc = dirichlet_moments_mc(&counts, config.draws, config.seed)?;
    let n = complete.total();
    checks.push(Check::new("complete 2x2 N=100: mean", summary.mean, mc.mean_mi, mc.err_mean_mi, 3.0 / n, false));
    checks.push(Check::new("complete 2x2 N=100: variance", summary.variance, mc.var_mi, mc.err_var_mi, 0.25, true));
    let field = precision_field(&counts.regularized(), &fit_mode(&counts.regularized(), ModeOptions::default())?.pi_hat)?;
    let cov = covariance(&field)?;
    let d = cov.dim();
    let cov_gap = (0..d * d).fold(0.0f64, |m, a| m.max((cov.as_slice()[a] - mc.cov_pi[a]).abs()));
    let cov_scale = mc.cov_pi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    checks.push(Check::new("complete 2x2 N=100: covariance", cov_gap / cov_scale, 0.0, 0.0, 0.25, false));

    for idx in 0..INCOMPLETE_CASES.len() {
        let table = incomplete_case(idx)?;
        let counts = apply_prior(&table, &PriorSpec::Uniform)?;
        let summary = summarize(&counts, ModeOptions::default(), VariancePath::Auto)?;
        let is = incomplete_posterior_moments(&counts, OracleMethod::Importance { draws: config.draws }, config.seed)?;
        let n = table.total();
        checks.push(Check::new(format!("incomplete case {idx}: mean"), summary.mean, is.mean_mi, is.err_mean_mi, 3.0 / n, false));
        checks.push(Check::new(format!("incomplete case {idx}: variance"), summary.variance, is.var_mi, is.err_var_mi, 0.3, true));
        checks.push(Check::new(
            format!("incomplete case {idx}: effective sample size"),
            MIN_ESS,
            is.ess.unwrap_or(0.0),
            0.0,
            f64::INFINITY,
            false,
        ));
        if let Some(last) = checks.last_mut() {
            last.pass = is.reliable;
        }
        if idx == 0 {
            let grid = incomplete_posterior_moments(&counts, OracleMethod::Grid { resolution: config.grid_resolution }, 0)?;
            let err = 4.0 * (is.err_mean_mi + grid.err_mean_mi);
            checks.push(Check::new("incomplete case 0: grid vs importance mean", grid.mean_mi, is.mean_mi, err, err, false));
            let err = 4.0 * (is.err_var_mi + grid.err_var_mi);
            checks.push(Check::new("incomplete case 0: grid vs importance variance", grid.var_mi, is.var_mi, err, err, false));
        }
    }
    Ok(checks)
}
