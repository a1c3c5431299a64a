//! Mollified local times, their Gaussian oracles, the second-moment formula and
//! the kernel-continuity experiment.

use std::cell::Cell;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::covariance;
use crate::error::{Error, Result};
use crate::grid_hilbert::TimeGrid;
use crate::io;
use crate::kernels::{self, BumpShape, KernelSpec};
use crate::quad::{self, Tolerance};
use crate::rng::Seed;
use crate::simulate::{self, PathEnsemble};

/// Gaussian bump `f_{ε,y}(z) = (2πε)^{-1/2} exp(-(z - y)²/(2ε))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub epsilon: f64,
    pub y: f64,
}

impl Mollifier {
    pub fn new(epsilon: f64, y: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { epsilon, y })
    }

    pub fn peak(&self) -> f64 {
        (2.0 * PI * self.epsilon).sqrt().recip()
    }

    pub fn eval(&self, z: f64) -> f64 {
        let d = z - self.y;
        self.peak() * (-0.5 * d * d / self.epsilon).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub y: f64,
}

/// `l_ε(t, y) = ∫_0^t f_{ε,y}(X(s)) ds` by the cumulative trapezoid rule.
pub fn mollified_local_time(times: &[f64], path: &[f64], eps: f64, y: f64) -> Result<LocalTimeCurve> {
    let m = Mollifier::new(eps, y)?;
    if times.len() != path.len() || times.is_empty() {
        return Err(Error::InvalidParameter("path and time grid differ in length".into()));
    }
    let f: Vec<f64> = path.iter().map(|&x| m.eval(x)).collect();
    let mut values = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    values.push(0.0);
    for i in 1..times.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (f[i] + f[i - 1]);
        values.push(acc);
    }
    Ok(LocalTimeCurve {
        times: times.to_vec(),
        values,
        epsilon: eps,
        y,
    })
}

/// `∫ l_ε(T, y) dy` over a level grid covering the path range `± 8√ε` with
/// spacing `√ε/8`; equals `T` up to the truncated Gaussian tails.
pub fn occupation_mass(times: &[f64], path: &[f64], eps: f64) -> Result<f64> {
    Mollifier::new(eps, 0.0)?;
    let root = eps.sqrt();
    let lo = path.iter().copied().fold(f64::INFINITY, f64::min) - 8.0 * root;
    let hi = path.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 8.0 * root;
    let dy = root / 8.0;
    let n = ((hi - lo) / dy).ceil() as usize;
    let dy = (hi - lo) / n as f64;
    let mut total = 0.0;
    for k in 0..=n {
        let y = lo + k as f64 * dy;
        let w = if k == 0 || k == n { 0.5 * dy } else { dy };
        let curve = mollified_local_time(times, path, eps, y)?;
        total += w * curve.values.last().expect("nonempty");
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeSummary {
    pub epsilon: f64,
    pub y: f64,
    pub t: f64,
    pub mean: f64,
    pub std_err: f64,
}

/// Ensemble mean and standard error of `l_ε(t_i, y)` for each grid time.
pub fn ensemble_local_time(ens: &PathEnsemble, eps: f64, y: f64) -> Result<Vec<LocalTimeSummary>> {
    let n = ens.n_paths();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two paths".into()));
    }
    let curves = (0..n)
        .into_par_iter()
        .map(|p| mollified_local_time(ens.times(), ens.path(p), eps, y).map(|c| c.values))
        .collect::<Result<Vec<_>>>()?;
    let m = ens.times().len();
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for c in &curves {
        for i in 0..m {
            sum[i] += c[i];
            sum_sq[i] += c[i] * c[i];
        }
    }
    let nf = n as f64;
    Ok((0..m)
        .map(|i| {
            let mean = sum[i] / nf;
            let var = ((sum_sq[i] - nf * mean * mean) / (nf - 1.0)).max(0.0);
            LocalTimeSummary {
                epsilon: eps,
                y,
                t: ens.times()[i],
                mean,
                std_err: (var / nf).sqrt(),
            }
        })
        .collect())
}

pub fn local_time_csv(rows: &[LocalTimeSummary]) -> String {
    io::csv(
        &["epsilon", "y", "t", "mean", "stderr"],
        rows.iter().map(|r| {
            [r.epsilon, r.y, r.t, r.mean, r.std_err]
                .iter()
                .map(|&v| io::fmt_f64(v))
                .collect()
        }),
    )
}

/// `E l_ε(t, y) = ∫_0^t (2π(σ²(s)+ε))^{-1/2} exp(-y²/(2(σ²(s)+ε))) ds`.
///
/// The substitution `s = u²` absorbs the `s^{-1/2}` behaviour at `ε = 0`.
pub fn expected_local_time(spec: &KernelSpec, t: f64, y: f64, eps: f64) -> Result<f64> {
    spec.check()?;
    if !(eps >= 0.0) || !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "need eps ≥ 0 and t ∈ [0,1], got ({eps}, {t})"
        )));
    }
    let degenerate = Cell::new(false);
    let value = quad::integrate(
        |u| {
            let s = u * u;
            let v = kernels::kernel_l2_sq(spec, s) + eps;
            if v <= 0.0 {
                degenerate.set(true);
                return 0.0;
            }
            2.0 * u * (2.0 * PI * v).sqrt().recip() * (-0.5 * y * y / v).exp()
        },
        0.0,
        t.sqrt(),
        Tolerance::new(1e-12, 1e-9),
    )
    .value;
    if degenerate.get() {
        return Err(Error::Degenerate("σ²(s) vanishes on (0, t] and eps = 0".into()));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct L2Moment {
    /// `(1/π) ∫∫_{t − s ≥ h} IncVar(s,t)^{-1/2}` over the ordered simplex.
    pub estimate: f64,
    /// Bound for the excluded diagonal band `t − s < h`.
    pub band_bound: f64,
    pub band: f64,
    /// Lower bound `c` in `IncVar(s,t) ≥ c (t − s)` used for the band.
    pub minorant_c: f64,
}

impl L2Moment {
    /// Factor turning the `1/π` prefactor into the Gaussian density
    /// normalization `(2π IncVar)^{-1/2}` over the full square.
    pub const GAUSSIAN_FACTOR: f64 = 2.5066282746310002;

    pub fn total(&self) -> f64 {
        self.estimate + self.band_bound
    }
}

/// `(1/π) ∫_{Δ₂} IncVar(s,t)^{-1/2} ds dt` with a band of one grid cell at the
/// diagonal excluded and bounded through `IncVar ≥ c (t − s)`.
pub fn l2_moment_formula(spec: &KernelSpec, grid: &TimeGrid) -> Result<L2Moment> {
    spec.check()?;
    let h = (0..grid.cells()).map(|c| grid.step(c)).fold(0.0_f64, f64::max);
    if h >= 1.0 {
        return Err(Error::InvalidParameter("grid needs at least two cells".into()));
    }
    let failure: Cell<Option<(f64, f64)>> = Cell::new(None);
    let tol = Tolerance::new(1e-12, 1e-9);
    let kept = quad::integrate(
        |s| {
            // t = s + h + u² removes the steep (t − s)^{-1/2} profile
            let top = (1.0 - s - h).max(0.0).sqrt();
            quad::integrate(
                |u| {
                    let t = s + h + u * u;
                    let v = covariance::inc_var(spec, s, t);
                    if v > 0.0 {
                        2.0 * u / v.sqrt()
                    } else {
                        failure.set(Some((s, t)));
                        0.0
                    }
                },
                0.0,
                top,
                tol,
            )
            .value
        },
        0.0,
        1.0 - h,
        tol,
    )
    .value;
    if let Some((s, t)) = failure.get() {
        return Err(Error::Degenerate(format!(
            "increment variance vanishes at (s, t) = ({s:.6}, {t:.6})"
        )));
    }
    let c = near_diagonal_min_sq(spec, grid, h) * (1.0 - 1e-6);
    let band_bound = if c > 0.0 {
        (4.0 / 3.0 * h.powf(1.5) + 2.0 * h.sqrt() * (1.0 - h)) / (PI * c.sqrt())
    } else {
        f64::INFINITY
    };
    Ok(L2Moment {
        estimate: kept / PI,
        band_bound,
        band: h,
        minorant_c: c,
    })
}

/// Smallest `K(t, r)²` with `t` on the grid and `t − h ≤ r ≤ t`.
fn near_diagonal_min_sq(spec: &KernelSpec, grid: &TimeGrid, h: f64) -> f64 {
    let mut m = f64::INFINITY;
    for &t in &grid.nodes()[1..] {
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let r = (t - frac * h).max(0.0);
            m = m.min(spec.eval(t, r).powi(2));
        }
    }
    m
}

/// `Var(X_a(t) − X_b(s))` for `s ≤ t`, where both processes share one Wiener
/// process: `∫_s^t K_a(t,r)² dr + ∫_0^s (K_a(t,r) − K_b(s,r))² dr`.
pub fn joint_increment_variance(a: &KernelSpec, b: &KernelSpec, s: f64, t: f64) -> f64 {
    let tol = Tolerance::new(1e-15, 1e-11);
    let sing = |e: f64| (e < 0.0).then_some(2.0 * e);
    let (la, ra) = a.exponents();
    let (lb, rb) = b.exponents();
    let head = if t > s {
        quad::integrate_algebraic(|r| a.eval(t, r).powi(2), s, t, None, sing(ra), tol).value
    } else {
        0.0
    };
    let body = if s > 0.0 {
        quad::integrate_algebraic(
            |r| (a.eval(t, r) - b.eval(s, r)).powi(2),
            0.0,
            s,
            sing(la.min(lb)),
            sing(rb),
            tol,
        )
        .value
    } else {
        0.0
    };
    head + body
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityRow {
    pub amplitude: f64,
    pub sup_diff: f64,
    pub max_var_gap: f64,
    /// `E ∫ (l_a(1,y) − l(1,y))² dy` with the Gaussian density normalization.
    pub l2_gap: f64,
    /// Shared-noise Monte Carlo estimate of `max_t E(X_a(t) − X(t))²` (NaN when `n = 0`).
    pub mc_var_gap: f64,
}

/// Perturbs `base` by `a·b(t,s)` for each amplitude and measures how far the
/// kernel, the process and the local time move.
pub fn kernel_continuity_experiment(
    base: &KernelSpec,
    amplitudes: &[f64],
    shape: BumpShape,
    grid: &TimeGrid,
    n: usize,
    seed: Seed,
) -> Result<Vec<ContinuityRow>> {
    base.check()?;
    if amplitudes.iter().any(|&a| !(a >= 0.0)) {
        return Err(Error::InvalidParameter("amplitudes must be nonnegative".into()));
    }
    if amplitudes.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter("amplitudes must be decreasing".into()));
    }
    let nodes = grid.nodes();
    let base_paths = if n > 0 {
        Some(simulate::map_volterra_paths(base, grid, n, seed, |x, _| x.to_vec())?)
    } else {
        None
    };
    amplitudes
        .iter()
        .map(|&a| {
            let pert = KernelSpec::perturbed(base.clone(), a, shape)?;
            let mut sup_diff: f64 = 0.0;
            for (i, &t) in nodes.iter().enumerate() {
                for &s in &nodes[..=i] {
                    sup_diff = sup_diff.max((pert.eval(t, s) - base.eval(t, s)).abs());
                }
            }
            let max_var_gap = nodes
                .iter()
                .map(|&t| {
                    quad::integrate(
                        |r| (pert.eval(t, r) - base.eval(t, r)).powi(2),
                        0.0,
                        t,
                        Tolerance::new(1e-15, 1e-11),
                    )
                    .value
                })
                .fold(0.0_f64, f64::max);
            let l2_gap = continuity_l2_gap(base, &pert)?;
            let mc_var_gap = match &base_paths {
                Some(paths) => {
                    let pert_paths = simulate::map_volterra_paths(&pert, grid, n, seed, |x, _| x.to_vec())?;
                    (0..nodes.len())
                        .map(|i| {
                            paths
                                .iter()
                                .zip(&pert_paths)
                                .map(|(x, y)| (y[i] - x[i]).powi(2))
                                .sum::<f64>()
                                / n as f64
                        })
                        .fold(0.0_f64, f64::max)
                }
                None => f64::NAN,
            };
            Ok(ContinuityRow {
                amplitude: a,
                sup_diff,
                max_var_gap,
                l2_gap,
                mc_var_gap,
            })
        })
        .collect()
}

/// `E ∫ (l_a − l)² dy` over `[0,1]²` as twice the ordered-simplex integral of
/// `p(V_aa) + p(V_00) − p(Var(X_a(t) − X(s))) − p(Var(X_a(s) − X(t)))`,
/// `p(V) = (2πV)^{-1/2}`, with `t = s + u²` inside.
fn continuity_l2_gap(base: &KernelSpec, pert: &KernelSpec) -> Result<f64> {
    let failure = Cell::new(false);
    let tol = Tolerance::new(1e-11, 1e-8);
    // `t = s + u²` with the Jacobian `2u` folded into each Gaussian term
    let term = |a: &KernelSpec, b: &KernelSpec, s: f64, u: f64| -> f64 {
        let t = s + u * u;
        if t > s {
            let v = joint_increment_variance(a, b, s, t);
            if v > 0.0 {
                return 2.0 * u / (2.0 * PI * v).sqrt();
            }
        } else {
            // `t` rounds onto `s`; the head is `u² K_a(s,s)²` to leading order
            let body = joint_increment_variance(a, b, s, s);
            let kd = a.eval(s, s);
            if u > 0.0 && body + (u * kd).powi(2) > 0.0 {
                return 2.0 * u / (2.0 * PI * (body + (u * kd).powi(2))).sqrt();
            }
            if u == 0.0 && body > 0.0 {
                return 0.0;
            }
            if u == 0.0 && kd != 0.0 {
                return 2.0 / (2.0 * PI * kd * kd).sqrt();
            }
        }
        failure.set(true);
        0.0
    };
    let integrand = |s: f64, u: f64| {
        term(pert, pert, s, u) + term(base, base, s, u) - term(pert, base, s, u) - term(base, pert, s, u)
    };
    let value = quad::integrate(
        |s| quad::integrate(|u| integrand(s, u), 0.0, (1.0 - s).sqrt(), tol).value,
        0.0,
        1.0,
        tol,
    )
    .value;
    if failure.get() {
        return Err(Error::Degenerate("joint increment variance vanishes".into()));
    }
    Ok(2.0 * value)
}

pub fn continuity_csv(rows: &[ContinuityRow]) -> String {
    io::csv(
        &["amplitude", "supDiff", "maxVarGap", "L2gap", "mcVarGap"],
        rows.iter().map(|r| {
            [r.amplitude, r.sup_diff, r.max_var_gap, r.l2_gap, r.mc_var_gap]
                .iter()
                .map(|&v| io::fmt_f64(v))
                .collect()
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_path_local_time_is_linear() {
        let g = TimeGrid::uniform(10).unwrap();
        let path = vec![0.0; 11];
        let c = mollified_local_time(g.nodes(), &path, 0.01, 0.0).unwrap();
        let peak = (2.0 * PI * 0.01f64).sqrt().recip();
        for (t, v) in c.times.iter().zip(&c.values) {
            assert!((v - t * peak).abs() < 1e-14);
        }
        assert!(mollified_local_time(g.nodes(), &path, 0.0, 0.0).is_err());
    }

    #[test]
    fn occupation_identity_on_a_rough_path() {
        let g = TimeGrid::uniform(64).unwrap();
        let path: Vec<f64> = g.nodes().iter().map(|t| (20.0 * t).sin() * t).collect();
        let mass = occupation_mass(g.nodes(), &path, 0.01).unwrap();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn wiener_expected_local_time() {
        let w = KernelSpec::wiener();
        let r = (2.0 / PI).sqrt();
        assert!((expected_local_time(&w, 1.0, 0.0, 0.0).unwrap() - r).abs() < 1e-8);
        let v = expected_local_time(&w, 1.0, 0.0, 0.04).unwrap();
        assert!((v - r * (1.04f64.sqrt() - 0.2)).abs() < 1e-8);
        let far = expected_local_time(&w, 1.0, 5.0, 0.04).unwrap();
        let farther = expected_local_time(&w, 1.0, 6.0, 0.04).unwrap();
        assert!(far > farther && farther > 0.0);
    }

    #[test]
    fn zero_kernel_with_zero_eps_is_degenerate() {
        let w = KernelSpec::scaled(KernelSpec::wiener(), 0.0).unwrap();
        assert!(matches!(
            expected_local_time(&w, 1.0, 0.0, 0.0),
            Err(Error::Degenerate(_))
        ));
        assert!(expected_local_time(&w, 1.0, 0.0, 0.1).is_ok());
    }

    #[test]
    fn zero_amplitude_has_no_gap() {
        let g = TimeGrid::uniform(16).unwrap();
        let rows = kernel_continuity_experiment(&KernelSpec::wiener(), &[0.0], BumpShape::Smooth, &g, 50, Seed::new(1))
            .unwrap();
        let r = rows[0];
        assert_eq!((r.sup_diff, r.max_var_gap, r.mc_var_gap), (0.0, 0.0, 0.0));
        assert!(r.l2_gap.abs() < 1e-10);
    }
}
