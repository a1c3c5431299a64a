//! Self-intersection local times of the planar process, plain and Rosen
//! renormalized, and their Fourier–Wiener transforms.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::covariance;
use crate::error::{Error, Result};
use crate::grid_hilbert::{self, GridFunction, Quadrature, TimeGrid};
use crate::io;
use crate::kernels::{self, KernelSpec};
use crate::quad::{self, Tolerance};
use crate::rng::Seed;
use crate::simulate::{self, PlanarEnsemble};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimplexMode {
    /// Nested sums over grid nodes; `k ∈ {2, 3}`.
    GridNested,
    /// Sorted uniforms snapped to grid nodes; the points are shared by all paths.
    MonteCarlo { samples: usize, seed: Seed },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexConfig {
    pub k: usize,
    pub mode: SimplexMode,
    /// Minimum gap between consecutive simplex times.
    pub diagonal_cutoff: f64,
}

impl SimplexConfig {
    pub fn nested(k: usize) -> Self {
        Self {
            k,
            mode: SimplexMode::GridNested,
            diagonal_cutoff: 0.0,
        }
    }

    pub fn monte_carlo(k: usize, samples: usize, seed: Seed) -> Self {
        Self {
            k,
            mode: SimplexMode::MonteCarlo { samples, seed },
            diagonal_cutoff: 0.0,
        }
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.diagonal_cutoff = cutoff;
        self
    }

    fn check(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!(
                "multiplicity must be ≥ 2, got {}",
                self.k
            )));
        }
        if !(self.diagonal_cutoff >= 0.0) {
            return Err(Error::InvalidParameter("diagonal cutoff must be nonnegative".into()));
        }
        match self.mode {
            SimplexMode::GridNested if self.k > 3 => Err(Error::InvalidParameter(
                "nested grid sums support k = 2 and k = 3".into(),
            )),
            SimplexMode::MonteCarlo { samples, .. } if samples < 1000 => Err(Error::InvalidParameter(format!(
                "Monte Carlo simplex needs at least 1000 samples, got {samples}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiltEstimate {
    pub per_path: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub std_err: f64,
    pub epsilon: f64,
    pub k: usize,
    pub renormalized: bool,
}

impl SiltEstimate {
    fn from_values(per_path: Vec<f64>, epsilon: f64, k: usize, renormalized: bool) -> Self {
        let n = per_path.len() as f64;
        let mean = per_path.iter().sum::<f64>() / n;
        let variance = if per_path.len() > 1 {
            per_path.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            per_path,
            mean,
            variance,
            std_err: (variance / n).sqrt(),
            epsilon,
            k,
            renormalized,
        }
    }
}

/// Planar mollifier `f_ε(z) = (2πε)^{-1} exp(-|z|²/(2ε))`.
fn f_eps(dx: f64, dy: f64, eps: f64) -> f64 {
    (-(dx * dx + dy * dy) / (2.0 * eps)).exp() / (2.0 * PI * eps)
}

fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for j in 0..n - 1 {
        let h = times[j + 1] - times[j];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    w
}

/// Analytic `E(X(t_j) − X(t_i))²` for all node pairs, row-major upper triangle.
fn increment_variances(spec: &KernelSpec, times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j > i {
                        covariance::inc_var(spec, times[i], times[j])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    rows.concat()
}

fn stationary_kernel(ens: &PlanarEnsemble) -> Result<&KernelSpec> {
    let spec = ens
        .kernel()
        .ok_or_else(|| Error::InvalidParameter("ensemble has no kernel".into()))?;
    if !spec.stationary {
        return Err(Error::NonStationary);
    }
    Ok(spec)
}

/// Simplex points drawn once: `k` sorted uniforms snapped to the nearest node.
fn simplex_points(times: &[f64], k: usize, samples: usize, seed: Seed) -> Vec<Vec<usize>> {
    let grid_last = *times.last().expect("nonempty");
    (0..samples as u64)
        .map(|s| {
            let mut rng = seed.stream(s);
            let mut u: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * grid_last).collect();
            u.sort_by(f64::total_cmp);
            u.iter().map(|&x| nearest(times, x)).collect()
        })
        .collect()
}

fn nearest(times: &[f64], x: f64) -> usize {
    match times.binary_search_by(|t| t.total_cmp(&x)) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i >= times.len() => times.len() - 1,
        Err(i) => {
            if x - times[i - 1] <= times[i] - x {
                i - 1
            } else {
                i
            }
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Plain and Rosen estimates from one pass over the ensemble.
pub fn silt_both(ens: &PlanarEnsemble, eps: f64, cfg: &SimplexConfig) -> Result<(SiltEstimate, SiltEstimate)> {
    let spec = stationary_kernel(ens)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    cfg.check()?;
    let times = ens.times();
    let n = times.len();
    let v = increment_variances(spec, times);
    let center = |i: usize, j: usize| -> f64 {
        if i == j {
            1.0 / (2.0 * PI * eps)
        } else {
            1.0 / (2.0 * PI * (v[i * n + j] + eps))
        }
    };
    let cut = cfg.diagonal_cutoff;
    let k = cfg.k;
    let points = match cfg.mode {
        SimplexMode::MonteCarlo { samples, seed } => Some(simplex_points(times, k, samples, seed)),
        SimplexMode::GridNested => None,
    };
    let w = trapezoid_weights(times);
    let [a, b] = &ens.components;
    let pairs: Vec<(f64, f64)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let (x, y) = (a.path(p), b.path(p));
            let f = |i: usize, j: usize| f_eps(x[j] - x[i], y[j] - y[i], eps);
            match &points {
                Some(points) => {
                    let mut plain = 0.0;
                    let mut rosen = 0.0;
                    for idx in points {
                        if idx.windows(2).any(|g| times[g[1]] - times[g[0]] < cut) {
                            continue;
                        }
                        let mut pp = 1.0;
                        let mut pr = 1.0;
                        for g in idx.windows(2) {
                            let fv = f(g[0], g[1]);
                            pp *= fv;
                            pr *= fv - center(g[0], g[1]);
                        }
                        plain += pp;
                        rosen += pr;
                    }
                    let scale = 1.0 / (points.len() as f64 * factorial(k));
                    (plain * scale, rosen * scale)
                }
                None if k == 2 => {
                    let mut plain = 0.0;
                    let mut rosen = 0.0;
                    for i in 0..n {
                        if cut == 0.0 {
                            // diagonal: f(0) equals its own mean, so only the plain sum moves
                            plain += 0.5 * w[i] * w[i] / (2.0 * PI * eps);
                        }
                        for j in (i + 1)..n {
                            if times[j] - times[i] < cut {
                                continue;
                            }
                            let fv = f(i, j);
                            plain += w[i] * w[j] * fv;
                            rosen += w[i] * w[j] * (fv - center(i, j));
                        }
                    }
                    (plain, rosen)
                }
                None => {
                    // strictly ordered triples; the diagonal faces carry O(h) mass
                    let mut plain = 0.0;
                    let mut rosen = 0.0;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            if times[j] - times[i] < cut {
                                continue;
                            }
                            let f1 = f(i, j);
                            let c1 = f1 - center(i, j);
                            for l in (j + 1)..n {
                                if times[l] - times[j] < cut {
                                    continue;
                                }
                                let f2 = f(j, l);
                                let wt = w[i] * w[j] * w[l];
                                plain += wt * f1 * f2;
                                rosen += wt * c1 * (f2 - center(j, l));
                            }
                        }
                    }
                    (plain, rosen)
                }
            }
        })
        .collect();
    let (plain, rosen): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok((
        SiltEstimate::from_values(plain, eps, k, false),
        SiltEstimate::from_values(rosen, eps, k, true),
    ))
}

/// `T_{ε,k} = ∫_{Δ_k} Π f_ε(Y(t_{i+1}) − Y(t_i)) dt` per path.
pub fn silt_plain(ens: &PlanarEnsemble, eps: f64, cfg: &SimplexConfig) -> Result<SiltEstimate> {
    silt_both(ens, eps, cfg).map(|(p, _)| p)
}

/// `L_{ε,k}`: as [`silt_plain`] with each factor centered by its analytic mean
/// `1/(2π(v(t_i, t_{i+1}) + ε))`.
pub fn silt_rosen(ens: &PlanarEnsemble, eps: f64, cfg: &SimplexConfig) -> Result<SiltEstimate> {
    silt_both(ens, eps, cfg).map(|(_, r)| r)
}

/// `∫_{Δ₂} (2π(v(s,t) + ε))^{-1} ds dt`.
pub fn expected_silt2(spec: &KernelSpec, eps: f64) -> Result<f64> {
    spec.check()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let tol = Tolerance::new(1e-12, 1e-10);
    let value = quad::integrate(
        |s| {
            quad::integrate(
                |t| 1.0 / (2.0 * PI * (covariance::inc_var(spec, s, t) + eps)),
                s,
                1.0,
                tol,
            )
            .value
        },
        0.0,
        1.0,
        tol,
    )
    .value;
    Ok(value)
}

/// Exact mean of the nested `k = 2` plain estimator under the Volterra
/// sampler on `grid`: the same trapezoid sum with the scheme's own increment
/// variances in place of the paths.
pub fn silt2_discrete_mean(spec: &KernelSpec, grid: &TimeGrid, eps: f64) -> Result<f64> {
    spec.check()?;
    let table = simulate::volterra_table(spec, grid);
    let times = grid.nodes();
    let steps: Vec<f64> = (0..grid.cells()).map(|c| grid.step(c)).collect();
    let w = trapezoid_weights(times);
    let n = times.len();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.5 * w[i] * w[i] / (2.0 * PI * eps);
            for j in (i + 1)..n {
                let mut v = 0.0;
                for (c, h) in steps.iter().enumerate().take(j) {
                    let d = table[j][c] - table[i].get(c).copied().unwrap_or(0.0);
                    v += d * d * h;
                }
                acc += w[i] * w[j] / (2.0 * PI * (v + eps));
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total)
}

/// Discretization bias of the nested `k = 2` plain mean measured by doubling
/// the grid: `(4/3)|D(M) − D(2M)|`, the second-order extrapolated error.
pub fn silt2_doubling_bias(spec: &KernelSpec, cells: usize, eps: f64) -> Result<f64> {
    let coarse = silt2_discrete_mean(spec, &TimeGrid::uniform(cells)?, eps)?;
    let fine = silt2_discrete_mean(spec, &TimeGrid::uniform(2 * cells)?, eps)?;
    Ok(4.0 / 3.0 * (coarse - fine).abs())
}

pub fn silt_csv(rows: &[(SiltEstimate, usize, f64)]) -> String {
    io::csv(
        &[
            "epsilon",
            "k",
            "renormalized",
            "mean",
            "variance",
            "stderr",
            "n_paths",
            "grid_M",
            "cutoff",
        ],
        rows.iter().map(|(e, m, cutoff)| {
            vec![
                io::fmt_f64(e.epsilon),
                e.k.to_string(),
                e.renormalized.to_string(),
                io::fmt_f64(e.mean),
                io::fmt_f64(e.variance),
                io::fmt_f64(e.std_err),
                e.per_path.len().to_string(),
                m.to_string(),
                io::fmt_f64(*cutoff),
            ]
        }),
    )
}

/// Re-expresses `h` on the midpoint grid `mid` (same nodes).
fn to_midpoint(h: &GridFunction, mid: &Arc<TimeGrid>) -> Result<GridFunction> {
    if h.grid().nodes() != mid.nodes() {
        return Err(Error::GridMismatch);
    }
    match h.grid().rule() {
        Quadrature::Midpoint => GridFunction::new(mid.clone(), h.values().to_vec()),
        Quadrature::Trapezoid => GridFunction::new(
            mid.clone(),
            h.values().windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        ),
    }
}

/// Slice increments `Δg(t_i) = g(t_{i+1}) − g(t_i)` on a midpoint grid.
fn slice_increments(spec: &KernelSpec, times: &[f64], mid: &Arc<TimeGrid>) -> Result<Vec<GridFunction>> {
    let slices = times
        .iter()
        .map(|&t| kernels::slice(spec, t, mid))
        .collect::<Result<Vec<_>>>()?;
    slices.windows(2).map(|p| p[1].sub(&p[0])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedFw {
    pub cutoff: f64,
    pub estimate: f64,
    pub std_err: f64,
    /// Same samples with the cutoff halved.
    pub estimate_half: f64,
    pub std_err_half: f64,
    pub cutoff_sensitivity: f64,
}

/// Monte Carlo value of
/// `∫_{Δ_k} Π_i (exp(-½(⟨h₁,ẽ_i⟩² + ⟨h₂,ẽ_i⟩²)/‖ẽ_i‖²) − 1)/‖ẽ_i‖²`
/// where `ẽ_i` is the Gram–Schmidt system of the slice increments, restricted
/// to consecutive gaps of at least the cutoff.
pub fn regularized_fw_integral(
    spec: &KernelSpec,
    grid: &TimeGrid,
    h1: &GridFunction,
    h2: &GridFunction,
    cfg: &SimplexConfig,
) -> Result<RegularizedFw> {
    spec.check()?;
    if !spec.stationary {
        return Err(Error::NonStationary);
    }
    if spec.eval(0.0, 0.0) == 0.0 {
        return Err(Error::InvalidParameter("regularized integral needs K(0) ≠ 0".into()));
    }
    cfg.check()?;
    let SimplexMode::MonteCarlo { samples, seed } = cfg.mode else {
        return Err(Error::InvalidParameter(
            "regularized integral uses Monte Carlo simplex sampling".into(),
        ));
    };
    let cut = cfg.diagonal_cutoff;
    if !(cut > 0.0) {
        return Err(Error::InvalidParameter(
            "regularized integral needs a positive cutoff".into(),
        ));
    }
    let mid = Arc::new(grid.with_rule(Quadrature::Midpoint));
    let h1 = to_midpoint(h1, &mid)?;
    let h2 = to_midpoint(h2, &mid)?;
    let times = grid.nodes();
    let k = cfg.k;
    let points = simplex_points(times, k, samples, seed);
    let values = points
        .par_iter()
        .map(|idx| -> Result<(f64, bool)> {
            let gap = idx
                .windows(2)
                .map(|g| times[g[1]] - times[g[0]])
                .fold(f64::INFINITY, f64::min);
            if gap < 0.5 * cut {
                return Ok((0.0, false));
            }
            let ts: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
            let incs = slice_increments(spec, &ts, &mid)?;
            let basis = grid_hilbert::gram_schmidt(&incs)?;
            let mut prod = 1.0;
            for e in &basis {
                let n2 = e.norm_sq();
                let a = grid_hilbert::inner_product(&h1, e)?;
                let b = grid_hilbert::inner_product(&h2, e)?;
                prod *= ((-0.5 * (a * a + b * b) / n2).exp() - 1.0) / n2;
            }
            Ok((prod, gap >= cut))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / factorial(k);
    let stats = |pick: &dyn Fn(&(f64, bool)) -> f64| {
        let xs: Vec<f64> = values.iter().map(pick).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (scale * mean, scale * (var / n).sqrt())
    };
    let (estimate, std_err) = stats(&|&(v, full)| if full { v } else { 0.0 });
    let (estimate_half, std_err_half) = stats(&|&(v, _)| v);
    Ok(RegularizedFw {
        cutoff: cut,
        estimate,
        std_err,
        estimate_half,
        std_err_half,
        cutoff_sensitivity: (estimate - estimate_half).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwTransform {
    /// Fixed times after snapping to the ensemble grid.
    pub times: Vec<f64>,
    pub epsilon: f64,
    pub estimate: f64,
    pub std_err: f64,
    pub analytic: f64,
    pub exponential_mean: f64,
    pub exponential_std_err: f64,
}

/// `E[α ℰ(h₁,h₂)]` with `α = Π f_ε(Y(t_{i+1}) − Y(t_i))`, estimated from the
/// stored noise, next to its Gaussian closed form.
pub fn fw_transform_mc(
    ens: &PlanarEnsemble,
    fixed_times: &[f64],
    eps: f64,
    h1: &GridFunction,
    h2: &GridFunction,
) -> Result<FwTransform> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    if fixed_times.len() < 2 || fixed_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "need at least two increasing fixed times".into(),
        ));
    }
    let [a, b] = &ens.components;
    if !a.has_noise() || !b.has_noise() {
        return Err(Error::MissingNoise);
    }
    let spec = ens
        .kernel()
        .ok_or_else(|| Error::InvalidParameter("ensemble has no kernel".into()))?;
    let grid = a
        .grid()
        .ok_or_else(|| Error::InvalidParameter("ensemble has no grid".into()))?;
    let mid = Arc::new(grid.with_rule(Quadrature::Midpoint));
    let h1 = to_midpoint(h1, &mid)?;
    let h2 = to_midpoint(h2, &mid)?;
    let times = grid.nodes();
    let idx: Vec<usize> = fixed_times.iter().map(|&t| nearest(times, t)).collect();
    if idx.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "fixed times collapse onto one grid node".into(),
        ));
    }
    let snapped: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    let half_norms = 0.5 * (h1.norm_sq() + h2.norm_sq());

    let rows: Vec<(f64, f64)> = (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let (x, y) = (a.path(p), b.path(p));
            let mut alpha = 1.0;
            for w in idx.windows(2) {
                alpha *= f_eps(x[w[1]] - x[w[0]], y[w[1]] - y[w[0]], eps);
            }
            let (dw1, dw2) = (a.noise(p).expect("checked"), b.noise(p).expect("checked"));
            let mut expo = -half_norms;
            for j in 0..dw1.len() {
                expo += h1.values()[j] * dw1[j] + h2.values()[j] * dw2[j];
            }
            let e = expo.exp();
            (alpha * e, e)
        })
        .collect();
    let mean_se = |xs: &mut dyn Iterator<Item = f64>| {
        let xs: Vec<f64> = xs.collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    };
    let (estimate, std_err) = mean_se(&mut rows.iter().map(|r| r.0));
    let (exponential_mean, exponential_std_err) = mean_se(&mut rows.iter().map(|r| r.1));

    let incs = slice_increments(spec, &snapped, &mid)?;
    let kk = incs.len();
    let gram = grid_hilbert::gram(&incs)?.matrix + DMatrix::identity(kk, kk) * eps;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("A + εI is not positive definite".into()))?;
    let det = chol.determinant();
    let mut quad_form = 0.0;
    for h in [&h1, &h2] {
        let u = DVector::from_iterator(
            kk,
            incs.iter()
                .map(|f| grid_hilbert::inner_product(f, h).expect("same grid")),
        );
        quad_form += chol.solve(&u).dot(&u);
    }
    let analytic = (2.0 * PI).powi(-(kk as i32)) / det * (-0.5 * quad_form).exp();
    Ok(FwTransform {
        times: snapped,
        epsilon: eps,
        estimate,
        std_err,
        analytic,
        exponential_mean,
        exponential_std_err,
    })
}

pub fn fw_csv(rows: &[FwTransform]) -> String {
    io::csv(
        &["k", "epsilon", "estimate", "stderr", "analytic"],
        rows.iter().map(|r| {
            vec![
                r.times.len().to_string(),
                io::fmt_f64(r.epsilon),
                io::fmt_f64(r.estimate),
                io::fmt_f64(r.std_err),
                io::fmt_f64(r.analytic),
            ]
        }),
    )
}
