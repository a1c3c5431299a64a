//! Second-order structure of `X`: covariance matrices, pair statistics and the
//! diagnostic functionals built on them.

use std::cell::Cell;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid_hilbert::{self, Quadrature, TimeGrid};
use crate::kernels::{self, KernelSpec};
use crate::linalg;
use crate::quad::{self, Tolerance, GL4_NODES, GL4_WEIGHTS};
use crate::rng::Seed;

/// Number of halvings used to grade the first cell `[0, t_1]` toward zero.
const GRADED_LEVELS: usize = 15;
/// Grading toward each time for kernels singular on the diagonal.
const DIAGONAL_LEVELS: usize = 14;

/// Inner quadrature on `[0, max(times)]`: four Gauss–Legendre points per
/// outer cell, and a geometrically graded first cell so that kernels singular
/// at the origin and very short first cells (geometric grids) are resolved.
fn inner_rule(times: &[f64], right_levels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cuts: Vec<f64> = Vec::with_capacity(times.len() + 1);
    cuts.push(0.0);
    cuts.extend(times.iter().copied().filter(|&t| t > 0.0));
    let mut cells: Vec<(f64, f64)> = Vec::new();
    if cuts.len() >= 2 {
        let t1 = cuts[1];
        let mut hi = t1;
        for _ in 0..GRADED_LEVELS {
            cells.push((0.5 * hi, hi));
            hi *= 0.5;
        }
        cells.push((0.0, hi));
        cells.reverse();
        for w in cuts[1..].windows(2) {
            cells.push((w[0], w[1]));
        }
    }
    if right_levels > 0 {
        // cells ending at a time carry the diagonal singularity of that row
        cells = cells
            .into_iter()
            .flat_map(|(a, b)| {
                let mut parts = Vec::with_capacity(right_levels + 1);
                if cuts.binary_search_by(|c| c.total_cmp(&b)).is_err() {
                    parts.push((a, b));
                    return parts;
                }
                let mut lo = a;
                let mut gap = 0.5 * (b - a);
                for _ in 0..right_levels {
                    parts.push((lo, b - gap));
                    lo = b - gap;
                    gap *= 0.5;
                }
                parts.push((lo, b));
                parts
            })
            .collect();
    }
    let mut points = Vec::with_capacity(4 * cells.len());
    let mut weights = Vec::with_capacity(4 * cells.len());
    for (a, b) in cells {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
            points.push(c + h * x);
            weights.push(h * w);
        }
    }
    (points, weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub lower: DMatrix<f64>,
    /// Diagonal jitter that was added before factorization, absolute units.
    pub jitter: f64,
    pub clamped: Vec<usize>,
}

#[derive(Debug)]
pub struct CovarianceMatrix {
    times: Vec<f64>,
    values: DMatrix<f64>,
    kernel: Option<KernelSpec>,
    grid: Option<Arc<TimeGrid>>,
    factor: OnceLock<Result<Factor>>,
}

impl Clone for CovarianceMatrix {
    fn clone(&self) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.clone(),
            kernel: self.kernel.clone(),
            grid: self.grid.clone(),
            factor: OnceLock::new(),
        }
    }
}

impl CovarianceMatrix {
    pub fn from_values(times: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        let n = times.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::InvalidParameter(format!(
                "covariance must be {n}x{n}, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self {
            times,
            values,
            kernel: None,
            grid: None,
            factor: OnceLock::new(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn grid(&self) -> Option<&Arc<TimeGrid>> {
        self.grid.as_ref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_diagonal(&self) -> f64 {
        self.values.diagonal().iter().fold(0.0_f64, |m, &v| m.max(v))
    }

    /// Lower factor, computed once. Jitter escalates from `1e-12` to `1e-10`
    /// times the largest diagonal entry; zero pivots are clamped.
    pub fn factor(&self) -> Result<&Factor> {
        self.factor
            .get_or_init(|| factorize(&self.values))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// CSV with a header row of grid times followed by one row per time.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.times.iter().map(|t| format!("{t:.16e}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len())
                .map(|j| format!("{:.16e}", self.values[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.times {
            h.update(t.to_le_bytes());
        }
        for i in 0..self.len() {
            for j in 0..self.len() {
                h.update(self.values[(i, j)].to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn factorize(values: &DMatrix<f64>) -> Result<Factor> {
    let scale = values.diagonal().iter().fold(0.0_f64, |m, &v| m.max(v));
    if scale == 0.0 {
        let n = values.nrows();
        return Ok(Factor {
            lower: DMatrix::zeros(n, n),
            jitter: 0.0,
            clamped: (0..n).collect(),
        });
    }
    let mut last = None;
    for rel in [0.0, 1e-12, 1e-11, 1e-10] {
        let jitter = rel * scale;
        let mut a = values.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        match linalg::cholesky_psd(&a, 1e-14 * scale) {
            Ok(f) => {
                return Ok(Factor {
                    lower: f.lower,
                    jitter,
                    clamped: f.clamped,
                })
            }
            Err(Error::Factorization { index, pivot, .. }) => {
                last = Some(Error::Factorization { index, pivot, jitter })
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// `R(t_i, t_j)` on arbitrary increasing times in `[0, 1]`.
pub fn cov_matrix_at(spec: &KernelSpec, times: &[f64]) -> Result<CovarianceMatrix> {
    spec.check()?;
    if times.is_empty() {
        return Err(Error::Empty("time list"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 || times[times.len() - 1] > 1.0 {
        return Err(Error::InvalidParameter(
            "times must increase strictly within [0,1]".into(),
        ));
    }
    let right_levels = if spec.exponents().1 < 0.0 { DIAGONAL_LEVELS } else { 0 };
    let (points, weights) = inner_rule(times, right_levels);
    let q = points.len();
    let n = times.len();
    let rows: Vec<Vec<f64>> = times
        .par_iter()
        .map(|&t| {
            points
                .iter()
                .zip(&weights)
                .map(|(&r, &w)| if r < t { spec.eval(t, r) * w.sqrt() } else { 0.0 })
                .collect()
        })
        .collect();
    let table = DMatrix::from_fn(n, q, |i, j| rows[i][j]);
    let mut values = &table * table.transpose();
    // exact symmetry regardless of the product kernel's summation order
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (values[(i, j)] + values[(j, i)]);
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("kernel produced non-finite covariance".into()));
    }
    Ok(CovarianceMatrix {
        times: times.to_vec(),
        values,
        kernel: Some(spec.clone()),
        grid: None,
        factor: OnceLock::new(),
    })
}

pub fn cov_matrix(spec: &KernelSpec, grid: &Arc<TimeGrid>) -> Result<CovarianceMatrix> {
    let mut cov = cov_matrix_at(spec, grid.nodes())?;
    cov.grid = Some(grid.clone());
    Ok(cov)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub var_s: f64,
    pub var_t: f64,
    pub cov: f64,
    pub inc_var: f64,
    pub det2: f64,
}

const PAIR_TOL: Tolerance = Tolerance::new(1e-15, 1e-11);

fn singular(e: f64) -> Option<f64> {
    (e < 0.0).then_some(e)
}

/// `∫_lo^hi f(r) dr` where `f` inherits the kernel's endpoint behaviour.
fn kernel_integral(spec: &KernelSpec, f: impl Fn(f64) -> f64, lo: f64, hi: f64, right: bool) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (l, r) = spec.exponents();
    let left = if lo == 0.0 { singular(2.0 * l) } else { None };
    let right = if right { singular(2.0 * r) } else { None };
    quad::integrate_algebraic(f, lo, hi, left, right, PAIR_TOL).value
}

/// Second moments of `(X(s), X(t))` for `s < t`.
///
/// The determinant is assembled as `Var X(s) · IncVar − d²` with
/// `d = ∫_0^s K(s,r)(K(t,r) − K(s,r)) dr`, which avoids cancellation when the
/// two times are close.
pub fn pair_stats(spec: &KernelSpec, s: f64, t: f64) -> Result<PairStats> {
    spec.check()?;
    if !(0.0 <= s && s < t && t <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pair_stats needs 0 ≤ s < t ≤ 1, got ({s}, {t})"
        )));
    }
    Ok(pair_stats_unchecked(spec, s, t))
}

pub(crate) fn pair_stats_unchecked(spec: &KernelSpec, s: f64, t: f64) -> PairStats {
    let var_s = kernel_integral(spec, |r| spec.eval(s, r).powi(2), 0.0, s, true);
    let head = kernel_integral(spec, |r| spec.eval(t, r).powi(2), s, t, true);
    let diff_sq = kernel_integral(spec, |r| (spec.eval(t, r) - spec.eval(s, r)).powi(2), 0.0, s, true);
    let d = kernel_integral(
        spec,
        |r| {
            let ks = spec.eval(s, r);
            ks * (spec.eval(t, r) - ks)
        },
        0.0,
        s,
        true,
    );
    let inc_var = head + diff_sq;
    let cov = var_s + d;
    let var_t = inc_var + var_s + 2.0 * d;
    let det2 = var_s * inc_var - d * d;
    PairStats {
        var_s,
        var_t,
        cov,
        inc_var,
        det2,
    }
}

/// `E(X(t) − X(s))²` for `s < t`.
pub(crate) fn inc_var(spec: &KernelSpec, s: f64, t: f64) -> f64 {
    let head = kernel_integral(spec, |r| spec.eval(t, r).powi(2), s, t, true);
    let diff_sq = kernel_integral(spec, |r| (spec.eval(t, r) - spec.eval(s, r)).powi(2), 0.0, s, true);
    head + diff_sq
}

/// Smallest `|K(t_i, s_j)|` over grid pairs `0 < s_j ≤ t_i`.
pub(crate) fn min_abs_kernel(spec: &KernelSpec, grid: &TimeGrid) -> f64 {
    let t = grid.nodes();
    let mut m = f64::INFINITY;
    for i in 1..t.len() {
        for &s in &t[..=i] {
            m = m.min(spec.eval(t[i], s).abs());
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct RudenkoEstimate {
    /// Integral of `det Cov(X(s), X(t))^{-1/2}` over the square minus the band.
    pub estimate: f64,
    /// Upper bound for the excluded band from `det ≥ c s (t − s)`.
    pub band_bound: f64,
    /// Width of the excluded band around the diagonal and the axes.
    pub band: f64,
    pub minorant_c: f64,
    pub warnings: Vec<String>,
}

/// `∫∫_{[0,1]²} det Cov(X(s), X(t))^{-1/2} ds dt`, split into a computed part and
/// a bounded band of one grid cell along the diagonal and the axes.
pub fn rudenko_integral(spec: &KernelSpec, grid: &TimeGrid) -> Result<RudenkoEstimate> {
    spec.check()?;
    let h = grid.nodes()[1..]
        .iter()
        .zip(grid.nodes())
        .map(|(b, a)| b - a)
        .fold(0.0_f64, f64::max);
    if h >= 0.5 {
        return Err(Error::InvalidParameter("grid too coarse for the band split".into()));
    }
    let failure: Cell<Option<(f64, f64, f64)>> = Cell::new(None);
    let tol = Tolerance::new(1e-10, 1e-7);
    let inner = |s: f64| {
        quad::integrate(
            |t| {
                let det = pair_stats_unchecked(spec, s, t).det2;
                if det > 0.0 {
                    det.sqrt().recip()
                } else {
                    if failure.get().is_none() {
                        failure.set(Some((s, t, det)));
                    }
                    0.0
                }
            },
            s + h,
            1.0,
            tol,
        )
        .value
    };
    let kept = quad::integrate(inner, h, 1.0 - h, tol).value;
    if let Some((s, t, det)) = failure.get() {
        return Err(Error::Degenerate(format!(
            "det Cov(X(s),X(t)) = {det:.3e} at (s, t) = ({s:.6}, {t:.6})"
        )));
    }
    let mut warnings = Vec::new();
    let m = min_abs_kernel(spec, grid);
    let c = m.powi(4);
    let band_bound = if c > 0.0 {
        // minorant integral over the band: π minus its integral over the kept triangle
        let minorant_kept = quad::integrate(
            |s| 2.0 * s.powf(-0.5) * ((1.0 - s).sqrt() - h.sqrt()),
            h,
            1.0 - h,
            Tolerance::new(1e-14, 1e-12),
        )
        .value;
        2.0 * (std::f64::consts::PI - minorant_kept) / c.sqrt()
    } else {
        warnings.push("min |K| vanishes on the grid; band bound is infinite".into());
        f64::INFINITY
    };
    Ok(RudenkoEstimate {
        estimate: 2.0 * kept,
        band_bound,
        band: h,
        minorant_c: c,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BermanRow {
    pub window: f64,
    /// `+∞` when the denominator vanishes (independent increments).
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaRow {
    pub t: f64,
    /// Infimum over gaps `t·2^{-m}`, `m = 0..=30`.
    pub infimum: f64,
    /// Value at the smallest gap, which shows the small-gap trend.
    pub smallest_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongLndRow {
    pub k: usize,
    pub window: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LndReport {
    pub berman: Vec<BermanRow>,
    pub zeta_liminf: Vec<ZetaRow>,
    pub strong: Vec<StrongLndRow>,
    pub warnings: Vec<String>,
}

/// Anchor of the first point in strong-LND configurations.
pub const STRONG_LND_ANCHOR: f64 = 0.25;

/// Local-nondeterminism tables over windows `2^{-j}`, `j ≥ 2`.
///
/// The strong ratio is evaluated on the midpoint version of `grid`, where slice
/// increments of disjoint windows have disjoint support exactly.
pub fn lnd_diagnostics(spec: &KernelSpec, grid: &TimeGrid, zeta: f64) -> Result<LndReport> {
    spec.check()?;
    if !(zeta > 0.0 && zeta < 2.0) {
        return Err(Error::InvalidParameter(format!("zeta must lie in (0,2), got {zeta}")));
    }
    let mut warnings = Vec::new();
    let min_cell = (0..grid.cells()).map(|c| grid.step(c)).fold(0.0_f64, f64::max);
    let mut windows = Vec::new();
    for j in 2..=40 {
        let w = 0.5_f64.powi(j);
        if w < 4.0 * min_cell {
            warnings.push(format!("window 2^-{j} is below four grid cells; skipped"));
            break;
        }
        windows.push(w);
    }

    let berman = windows
        .par_iter()
        .map(|&c| {
            let mut best = f64::INFINITY;
            for m in 0..=8 {
                let gap = c * 0.5_f64.powi(m);
                for &s in grid.nodes() {
                    let t = s + gap;
                    if s <= 0.0 || t > 1.0 {
                        continue;
                    }
                    let num = kernel_integral(spec, |r| spec.eval(t, r).powi(2), s, t, true);
                    let den = kernel_integral(spec, |r| (spec.eval(t, r) - spec.eval(s, r)).powi(2), 0.0, s, true);
                    let ratio = if den <= 1e-14 * num { f64::INFINITY } else { num / den };
                    best = best.min(ratio);
                }
            }
            BermanRow { window: c, ratio: best }
        })
        .collect();

    let zeta_liminf = [0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&t| {
            let values: Vec<f64> = (0..=30)
                .map(|m| {
                    let gap = t * 0.5_f64.powi(m);
                    let head = kernel_integral(spec, |r| spec.eval(t, r).powi(2), t - gap, t, true);
                    head / gap.powf(zeta)
                })
                .collect();
            ZetaRow {
                t,
                infimum: values.iter().copied().fold(f64::INFINITY, f64::min),
                smallest_gap: *values.last().expect("nonempty"),
            }
        })
        .collect();

    let mid = Arc::new(grid.with_rule(Quadrature::Midpoint));
    let mut strong = Vec::new();
    for k in [3, 4] {
        for &w in &windows {
            let last = STRONG_LND_ANCHOR + (k - 1) as f64 * w;
            if last > 1.0 + 1e-12 {
                continue;
            }
            let slices = (0..k)
                .map(|i| kernels::slice(spec, (STRONG_LND_ANCHOR + i as f64 * w).min(1.0), &mid))
                .collect::<Result<Vec<_>>>()?;
            let incs = slices.windows(2).map(|p| p[1].sub(&p[0])).collect::<Result<Vec<_>>>()?;
            let g = grid_hilbert::gram(&incs)?;
            let prod: f64 = incs.iter().map(|f| f.norm_sq()).product();
            let ratio = if prod > 0.0 { g.determinant / prod } else { 0.0 };
            strong.push(StrongLndRow { k, window: w, ratio });
        }
    }
    Ok(LndReport {
        berman,
        zeta_liminf,
        strong,
        warnings,
    })
}

/// Largest observed `E(Σ a_k ΔX_k)² / Σ a_k² Δt_k` over random partitions.
pub fn integrator_constant(spec: &KernelSpec, grid: &Arc<TimeGrid>, trials: usize, seed: Seed) -> Result<f64> {
    let cov = cov_matrix(spec, grid)?;
    integrator_constant_from(&cov, trials, seed)
}

/// As [`integrator_constant`], reusing a covariance matrix.
///
/// Trial `i` draws from stream `i`, so the result for `n` trials is the running
/// maximum of a fixed sequence and never decreases with `n`.
pub fn integrator_constant_from(cov: &CovarianceMatrix, trials: usize, seed: Seed) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let times = cov.times();
    let m = times.len() - 1;
    if m < 2 {
        return Err(Error::InvalidParameter(
            "integrator constant needs at least two cells".into(),
        ));
    }
    let r = cov.values();
    let ratios: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = seed.stream(trial);
            let intervals = rng.random_range(2..=m.min(32));
            let mut cuts: Vec<usize> = index::sample(&mut rng, m - 1, intervals - 1)
                .into_iter()
                .map(|i| i + 1)
                .collect();
            cuts.push(0);
            cuts.push(m);
            cuts.sort_unstable();
            let a: Vec<f64> = (0..intervals).map(|_| rng.sample(StandardNormal)).collect();
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..intervals {
                let (ak, bk) = (cuts[k], cuts[k + 1]);
                den += a[k] * a[k] * (times[bk] - times[ak]);
                for l in 0..intervals {
                    let (al, bl) = (cuts[l], cuts[l + 1]);
                    let c = r[(bk, bl)] - r[(bk, al)] - r[(ak, bl)] + r[(ak, al)];
                    num += a[k] * a[l] * c;
                }
            }
            num / den
        })
        .collect();
    Ok(ratios.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// CSV of an LND report, one section per table.
pub fn lnd_to_csv(report: &LndReport) -> String {
    let mut out = String::from("table,key,window,value\n");
    for r in &report.berman {
        let _ = writeln!(out, "berman,,{:.16e},{:.16e}", r.window, r.ratio);
    }
    for r in &report.zeta_liminf {
        let _ = writeln!(out, "zeta_inf,{:.16e},,{:.16e}", r.t, r.infimum);
        let _ = writeln!(out, "zeta_smallest_gap,{:.16e},,{:.16e}", r.t, r.smallest_gap);
    }
    for r in &report.strong {
        let _ = writeln!(out, "strong,{},{:.16e},{:.16e}", r.k, r.window, r.ratio);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> KernelSpec {
        KernelSpec::ornstein_uhlenbeck(1.0).unwrap()
    }

    #[test]
    fn inner_rule_integrates_polynomials() {
        let (p, w) = inner_rule(&[0.0, 0.1, 0.5, 1.0], 0);
        assert!(p.len() >= 64);
        let v: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(5)).sum();
        assert!((v - 1.0 / 6.0).abs() < 1e-14);
        let v: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powf(-0.3)).sum();
        assert!((v - 1.0 / 0.7).abs() < 1e-3);
    }

    #[test]
    fn wiener_is_min() {
        let g = TimeGrid::uniform(64).unwrap().shared();
        let c = cov_matrix(&KernelSpec::wiener(), &g).unwrap();
        let t = g.nodes();
        for i in 0..t.len() {
            for j in 0..t.len() {
                assert!((c.values()[(i, j)] - t[i].min(t[j])).abs() < 1e-12);
            }
        }
        assert_eq!(c.values()[(0, 0)], 0.0);
    }

    #[test]
    fn factor_is_cached_and_reconstructs() {
        let g = TimeGrid::uniform(32).unwrap().shared();
        let c = cov_matrix(&ou(), &g).unwrap();
        let f = c.factor().unwrap();
        assert!(std::ptr::eq(f, c.factor().unwrap()));
        let rec = &f.lower * f.lower.transpose();
        assert!((rec - c.values()).abs().max() <= 1e-10 * c.max_diagonal() + f.jitter);
    }

    #[test]
    fn zero_covariance_factors_to_zero() {
        let c = CovarianceMatrix::from_values(vec![0.0, 0.5, 1.0], DMatrix::zeros(3, 3)).unwrap();
        assert!(c.factor().unwrap().lower.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut v = DMatrix::identity(2, 2);
        v[(0, 1)] = 2.0;
        v[(1, 0)] = 2.0;
        let c = CovarianceMatrix::from_values(vec![0.5, 1.0], v).unwrap();
        assert!(matches!(c.factor(), Err(Error::Factorization { .. })));
    }

    #[test]
    fn wiener_pair() {
        let p = pair_stats(&KernelSpec::wiener(), 0.3, 0.7).unwrap();
        assert!((p.inc_var - 0.4).abs() < 1e-14);
        assert!((p.det2 - 0.12).abs() < 1e-14);
        assert!(pair_stats(&KernelSpec::wiener(), 0.7, 0.3).is_err());
    }

    #[test]
    fn wiener_lnd() {
        let g = TimeGrid::uniform(256).unwrap();
        let r = lnd_diagnostics(&KernelSpec::wiener(), &g, 1.0).unwrap();
        assert!(r.berman.iter().all(|b| b.ratio == f64::INFINITY));
        assert!(r.zeta_liminf.iter().all(|z| (z.infimum - 1.0).abs() < 1e-12));
        assert!(r.strong.iter().all(|s| (s.ratio - 1.0).abs() < 1e-12));
        assert!(!r.strong.is_empty());
        assert!(lnd_diagnostics(&KernelSpec::wiener(), &g, 2.0).is_err());
    }

    #[test]
    fn zeta_trend_for_ou() {
        let g = TimeGrid::uniform(64).unwrap();
        let above = lnd_diagnostics(&ou(), &g, 1.5).unwrap();
        let below = lnd_diagnostics(&ou(), &g, 0.5).unwrap();
        for (a, b) in above.zeta_liminf.iter().zip(&below.zeta_liminf) {
            assert!(a.smallest_gap > 1e3);
            assert!(b.smallest_gap < 1e-3);
        }
    }

    #[test]
    fn wiener_integrator_constant_is_one() {
        let g = TimeGrid::uniform(64).unwrap().shared();
        let c = integrator_constant(&KernelSpec::wiener(), &g, 500, Seed::new(3)).unwrap();
        assert!((c - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_kernel_rudenko_fails() {
        let g = TimeGrid::uniform(16).unwrap();
        let table = kernels::TabulatedKernel::from_fn(&g, kernels::Interpolation::Bilinear, |_, _| 0.0);
        let k = KernelSpec::tabulated(table, true);
        assert!(matches!(rudenko_integral(&k, &g), Err(Error::Degenerate(_))));
    }

    #[test]
    fn csv_and_hash() {
        let g = TimeGrid::uniform(4).unwrap().shared();
        let c = cov_matrix(&KernelSpec::wiener(), &g).unwrap();
        assert_eq!(c.to_csv().lines().count(), 6);
        assert_eq!(c.content_hash(), c.clone().content_hash());
        assert_eq!(c.content_hash().len(), 64);
    }
}
