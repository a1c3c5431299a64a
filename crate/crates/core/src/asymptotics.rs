//! Iterated-logarithm ratios on geometric times and the tail decay of Gaussian
//! suprema.

use std::f64::consts::E;

use crate::covariance::{self, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::grid_hilbert::TimeGrid;
use crate::io;
use crate::kernels::{self, KernelSpec};
use crate::rng::Seed;
use crate::simulate;

/// `h(t) = √(2 σ²(t) log log(1/t))` for `0 < t < e^{-1}`.
pub fn h_envelope(spec: &KernelSpec, t: f64) -> Result<f64> {
    spec.check()?;
    if !(t > 0.0 && t < E.recip()) {
        return Err(Error::InvalidParameter(format!(
            "envelope needs 0 < t < 1/e so that log log(1/t) > 0, got {t}"
        )));
    }
    let var = kernels::kernel_l2_sq(spec, t);
    Ok((2.0 * var * t.recip().ln().ln()).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LilConfig {
    pub q: f64,
    pub n_min: u32,
    pub n_max: u32,
    pub n_paths: usize,
    pub seed: Seed,
    /// Levels `ε` for the exceedance frequencies of `X(q^n) > (1+ε) h(q^n)`.
    pub epsilons: Vec<f64>,
}

impl LilConfig {
    pub fn new(q: f64, n_min: u32, n_max: u32, n_paths: usize, seed: Seed) -> Self {
        Self {
            q,
            n_min,
            n_max,
            n_paths,
            seed,
            epsilons: vec![0.1, 0.5],
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidParameter(format!("q must lie in (0,1), got {}", self.q)));
        }
        if self.n_min > self.n_max {
            return Err(Error::InvalidParameter("empty n range".into()));
        }
        if self.q.powi(self.n_min as i32) >= E.recip() {
            return Err(Error::InvalidParameter(format!(
                "q^n_min = {} must be below 1/e",
                self.q.powi(self.n_min as i32)
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("need at least one path".into()));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidParameter("exceedance levels must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LilResult {
    /// `n` in the order of `times`, which ascend.
    pub n: Vec<u32>,
    pub times: Vec<f64>,
    pub envelope: Vec<f64>,
    pub per_path_max_ratio: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// `exceedance_freq[e][i]`: fraction of paths with `X(t_i) > (1+ε_e) h(t_i)`.
    pub exceedance_freq: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl LilResult {
    pub fn quantile(&self, p: f64) -> f64 {
        let mut v = self.per_path_max_ratio.clone();
        v.sort_by(f64::total_cmp);
        let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn fraction_above(&self, level: f64) -> f64 {
        let hits = self.per_path_max_ratio.iter().filter(|&&r| r > level).count();
        hits as f64 / self.per_path_max_ratio.len() as f64
    }
}

/// Exact samples at the times `q^n`, `n ∈ [n_min, n_max]`, and their ratios
/// to the envelope.
pub fn lil_ratios(spec: &KernelSpec, cfg: &LilConfig) -> Result<LilResult> {
    spec.check()?;
    cfg.check()?;
    let mut warnings = Vec::new();
    if spec.eval(0.0, 0.0).abs() < 1e-9 {
        warnings.push("K(0,0) ≈ 0: the iterated-logarithm envelope does not apply".to_string());
    }
    let n: Vec<u32> = (cfg.n_min..=cfg.n_max).rev().collect();
    let times: Vec<f64> = n.iter().map(|&k| cfg.q.powi(k as i32)).collect();
    let envelope = times.iter().map(|&t| h_envelope(spec, t)).collect::<Result<Vec<_>>>()?;
    if envelope.contains(&0.0) {
        warnings.push("zero envelope at some times; those ratios are set to 0".to_string());
    }
    let cov = covariance::cov_matrix_at(spec, &times)?;
    let eps = &cfg.epsilons;
    let rows = simulate::map_exact_paths(&cov, cfg.n_paths, cfg.seed, |x| {
        let max_ratio = x
            .iter()
            .zip(&envelope)
            .map(|(&v, &h)| if h > 0.0 { v / h } else { 0.0 })
            .fold(f64::NEG_INFINITY, f64::max);
        let exceed: Vec<Vec<bool>> = eps
            .iter()
            .map(|e| x.iter().zip(&envelope).map(|(&v, &h)| v > (1.0 + e) * h).collect())
            .collect();
        (max_ratio, exceed)
    })?;
    let paths = cfg.n_paths as f64;
    let exceedance_freq = (0..eps.len())
        .map(|e| {
            (0..times.len())
                .map(|i| rows.iter().filter(|r| r.1[e][i]).count() as f64 / paths)
                .collect()
        })
        .collect();
    Ok(LilResult {
        n,
        times,
        envelope,
        per_path_max_ratio: rows.iter().map(|r| r.0).collect(),
        epsilons: eps.clone(),
        exceedance_freq,
        warnings,
    })
}

/// `n,t,h,exceed_freq_eps…`
pub fn lil_csv(result: &LilResult) -> String {
    let mut header = vec!["n".to_string(), "t".to_string(), "h".to_string()];
    header.extend(result.epsilons.iter().map(|e| format!("exceed_freq_{e}")));
    io::csv(
        &header,
        (0..result.times.len()).map(|i| {
            let mut row = vec![
                result.n[i].to_string(),
                io::fmt_f64(result.times[i]),
                io::fmt_f64(result.envelope[i]),
            ];
            row.extend(result.exceedance_freq.iter().map(|f| io::fmt_f64(f[i])));
            row
        }),
    )
}

pub fn max_ratio_csv(result: &LilResult) -> String {
    io::csv(
        &["path_id", "max_ratio"],
        result
            .per_path_max_ratio
            .iter()
            .enumerate()
            .map(|(p, r)| vec![p.to_string(), io::fmt_f64(*r)]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRow {
    pub lambda: f64,
    pub probability: f64,
    pub std_err: f64,
    pub exceedances: usize,
    pub in_fit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailDecay {
    pub rows: Vec<TailRow>,
    pub sigma2: f64,
    /// Least-squares slope of `ln P` against `λ²`.
    pub slope: f64,
    /// `-(1 − δ)/(2σ̂²)` with `δ = 0.2`.
    pub bound: f64,
    pub passes: bool,
    pub warnings: Vec<String>,
}

pub const TAIL_DELTA: f64 = 0.2;
pub const MIN_EXCEEDANCES: usize = 10;

/// Empirical `P(sup_t X(t) ≥ λ)` over the grid nodes and the decay rate of
/// its logarithm. The supremum includes `X(0) = 0`.
pub fn tail_decay_check(
    spec: &KernelSpec,
    grid: &TimeGrid,
    lambdas: &[f64],
    n: usize,
    seed: Seed,
) -> Result<TailDecay> {
    if lambdas.len() < 2 || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("need at least two increasing levels".into()));
    }
    if n < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "tail check needs at least 10⁴ paths, got {n}"
        )));
    }
    let cov = covariance::cov_matrix(spec, &grid.clone().shared())?;
    tail_decay_from(&cov, lambdas, n, seed)
}

pub fn tail_decay_from(cov: &CovarianceMatrix, lambdas: &[f64], n: usize, seed: Seed) -> Result<TailDecay> {
    let mut sups = simulate::map_exact_paths(cov, n, seed, |x| x.iter().fold(0.0f64, |m, &v| m.max(v)))?;
    sups.sort_by(f64::total_cmp);
    let total = n as f64;
    let mut warnings = Vec::new();
    let rows: Vec<TailRow> = lambdas
        .iter()
        .map(|&lambda| {
            let below = sups.partition_point(|&s| s < lambda);
            let exceedances = n - below;
            let p = exceedances as f64 / total;
            let in_fit = exceedances >= MIN_EXCEEDANCES && lambda > 0.0;
            if exceedances < MIN_EXCEEDANCES {
                warnings.push(format!("λ = {lambda}: {exceedances} exceedances, dropped from the fit"));
            }
            TailRow {
                lambda,
                probability: p,
                std_err: (p * (1.0 - p) / total).sqrt(),
                exceedances,
                in_fit,
            }
        })
        .collect();
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.in_fit)
        .map(|r| (r.lambda * r.lambda, r.probability.ln()))
        .collect();
    if fit.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} levels with at least {MIN_EXCEEDANCES} exceedances",
            fit.len()
        )));
    }
    let k = fit.len() as f64;
    let mx = fit.iter().map(|p| p.0).sum::<f64>() / k;
    let my = fit.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let sigma2 = cov.max_diagonal();
    let bound = -(1.0 - TAIL_DELTA) / (2.0 * sigma2);
    Ok(TailDecay {
        rows,
        sigma2,
        slope,
        bound,
        passes: slope <= bound,
        warnings,
    })
}

pub fn tail_csv(report: &TailDecay) -> String {
    io::csv(
        &["lambda", "probability", "stderr", "exceedances", "in_fit"],
        report.rows.iter().map(|r| {
            vec![
                io::fmt_f64(r.lambda),
                io::fmt_f64(r.probability),
                io::fmt_f64(r.std_err),
                r.exceedances.to_string(),
                r.in_fit.to_string(),
            ]
        }),
    )
}
