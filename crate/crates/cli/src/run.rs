//! Command dispatch. Every command returns its artifacts in memory so that
//! runs and replays share one code path.

use std::collections::BTreeMap;
use std::sync::Arc;

use volterra_core::asymptotics::{self, LilConfig};
use volterra_core::covariance::{self, CovarianceMatrix};
use volterra_core::grid_hilbert::{GridFunction, Quadrature, TimeGrid};
use volterra_core::kernels::{self, BumpShape, KernelSpec};
use volterra_core::localtime;
use volterra_core::silt::{self, SimplexConfig};
use volterra_core::simulate::{self, PathEnsemble};
use volterra_core::{io, Seed};

use crate::config::{Format, RunConfig, SamplerChoice, SimplexChoice};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(name: &str, text: String) -> Self {
        Self {
            name: name.to_string(),
            bytes: text.into_bytes(),
        }
    }

    pub fn sha256(&self) -> String {
        io::sha256_hex(&self.bytes)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub summary: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    fn put(&mut self, key: impl Into<String>, value: f64) {
        self.summary.insert(key.into(), value);
    }
}

/// Validates `cfg` and runs its command on the current rayon pool.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let spec = cfg.kernel_spec()?;
    let seed = Seed::new(cfg.seed);
    let mut out = RunOutput::default();
    use crate::config::Command::*;
    match cfg.command {
        Validate => validate(cfg, &spec, &mut out)?,
        Cov => cov(cfg, &spec, &mut out)?,
        Simulate => simulate_cmd(cfg, &spec, seed, &mut out)?,
        Lil => lil(cfg, &spec, seed, &mut out)?,
        Localtime => local_time(cfg, &spec, seed, &mut out)?,
        Silt => silt_cmd(cfg, &spec, seed, &mut out)?,
        Fw => fw(cfg, &spec, seed, &mut out)?,
        Diagnose => diagnose(cfg, &spec, seed, &mut out)?,
    }
    Ok(out)
}

fn validate(cfg: &RunConfig, spec: &KernelSpec, out: &mut RunOutput) -> Result<(), CliError> {
    let report = kernels::validate_kernel(spec, &*cfg.grid()?);
    let rows = [
        ("volterra_ok", if report.volterra_ok { 1.0 } else { 0.0 }),
        ("sup_l2", report.sup_l2),
        ("kernel_at_origin", report.kernel_at_origin),
        ("lipschitz_l", report.lipschitz_l),
        ("derivative_sup", report.derivative_sup),
    ];
    for (k, v) in rows {
        out.put(k, v);
    }
    out.artifacts.push(Artifact::text(
        "validation.csv",
        io::csv(
            &["key", "value"],
            rows.iter().map(|(k, v)| vec![k.to_string(), io::fmt_f64(*v)]),
        ),
    ));
    out.warnings.extend(report.warnings);
    Ok(())
}

fn cov_artifact(cfg: &RunConfig, cov: &CovarianceMatrix) -> Result<Artifact, CliError> {
    Ok(match cfg.output.format {
        Format::Csv => Artifact::text("cov.csv", cov.to_csv()),
        Format::Binary => {
            let mut cols = vec![("t".to_string(), cov.times().to_vec())];
            for j in 0..cov.len() {
                cols.push((format!("c{j}"), cov.values().column(j).iter().copied().collect()));
            }
            Artifact {
                name: "cov.bin".into(),
                bytes: io::column_store(&cols)?,
            }
        }
    })
}

fn cov(cfg: &RunConfig, spec: &KernelSpec, out: &mut RunOutput) -> Result<(), CliError> {
    let cov = covariance::cov_matrix(spec, &cfg.grid()?)?;
    out.put("max_diagonal", cov.max_diagonal());
    let f = cov.factor()?;
    out.put("factor_jitter", f.jitter);
    out.put("factor_clamped", f.clamped.len() as f64);
    out.artifacts.push(cov_artifact(cfg, &cov)?);
    Ok(())
}

fn ensemble(
    spec: &KernelSpec,
    grid: &Arc<TimeGrid>,
    sampler: SamplerChoice,
    n: usize,
    seed: Seed,
) -> Result<PathEnsemble, CliError> {
    Ok(match sampler {
        SamplerChoice::Exact => simulate::sample_exact(&covariance::cov_matrix(spec, grid)?, n, seed)?,
        SamplerChoice::Volterra => simulate::sample_volterra(spec, grid, n, seed)?,
    })
}

fn simulate_cmd(cfg: &RunConfig, spec: &KernelSpec, seed: Seed, out: &mut RunOutput) -> Result<(), CliError> {
    let p = cfg.simulate.as_ref().expect("validated");
    let ens = ensemble(spec, &cfg.grid()?, p.sampler, p.n_paths, seed)?;
    let last: Vec<f64> = ens.paths().map(|x| *x.last().expect("nonempty")).collect();
    let n = last.len() as f64;
    let mean = last.iter().sum::<f64>() / n;
    out.put("n_paths", n);
    out.put("mean_x1", mean);
    out.put(
        "var_x1",
        last.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0),
    );
    out.artifacts.push(match cfg.output.format {
        Format::Csv => Artifact::text("paths.csv", ens.paths_csv()),
        Format::Binary => Artifact {
            name: "paths.bin".into(),
            bytes: ens.column_store()?,
        },
    });
    Ok(())
}

fn lil(cfg: &RunConfig, spec: &KernelSpec, seed: Seed, out: &mut RunOutput) -> Result<(), CliError> {
    let p = cfg.lil.as_ref().expect("validated");
    let g = &cfg.grid;
    let mut lc = LilConfig::new(
        g.q.expect("validated"),
        g.n_min.expect("validated"),
        g.n_max.expect("validated"),
        p.n_paths,
        seed,
    );
    lc.epsilons = p.epsilons.clone();
    let r = asymptotics::lil_ratios(spec, &lc)?;
    out.put("median_max_ratio", r.median());
    out.put("q05_max_ratio", r.quantile(0.05));
    out.put("q95_max_ratio", r.quantile(0.95));
    out.put("fraction_above_1.3", r.fraction_above(1.3));
    out.warnings.extend(r.warnings.iter().cloned());
    out.artifacts.push(Artifact::text("lil.csv", asymptotics::lil_csv(&r)));
    out.artifacts
        .push(Artifact::text("max_ratio.csv", asymptotics::max_ratio_csv(&r)));
    if let Some(lambdas) = &p.tail_lambdas {
        let grid = TimeGrid::uniform(p.tail_points.expect("validated"))?;
        let t = asymptotics::tail_decay_check(
            spec,
            &grid,
            lambdas,
            p.tail_paths.expect("validated"),
            seed.component(0),
        )?;
        out.put("tail_slope", t.slope);
        out.put("tail_bound", t.bound);
        out.put("tail_sigma2", t.sigma2);
        out.put("tail_pass", if t.passes { 1.0 } else { 0.0 });
        out.warnings.extend(t.warnings.iter().cloned());
        out.artifacts
            .push(Artifact::text("tail.csv", asymptotics::tail_csv(&t)));
    }
    Ok(())
}

fn local_time(cfg: &RunConfig, spec: &KernelSpec, seed: Seed, out: &mut RunOutput) -> Result<(), CliError> {
    let p = cfg.localtime.as_ref().expect("validated");
    let grid = cfg.grid()?;
    let ens = ensemble(spec, &grid, p.sampler, p.n_paths, seed)?;
    let mut rows = Vec::new();
    for &eps in &p.epsilons {
        for &y in &p.levels {
            let summary = localtime::ensemble_local_time(&ens, eps, y)?;
            let end = summary.last().expect("nonempty");
            out.put(format!("mean_l(1,{y})_eps{eps}"), end.mean);
            out.put(format!("stderr_l(1,{y})_eps{eps}"), end.std_err);
            out.put(
                format!("expected_l(1,{y})_eps{eps}"),
                localtime::expected_local_time(spec, 1.0, y, eps)?,
            );
            rows.extend(summary);
        }
    }
    out.artifacts
        .push(Artifact::text("local_time.csv", localtime::local_time_csv(&rows)));
    let l2 = localtime::l2_moment_formula(spec, &grid)?;
    out.put("l2_moment_estimate", l2.estimate);
    out.put("l2_moment_band_bound", l2.band_bound);
    if !p.continuity_amplitudes.is_empty() {
        let shape = BumpShape::parse(&p.continuity_shape)?;
        let rows = localtime::kernel_continuity_experiment(
            spec,
            &p.continuity_amplitudes,
            shape,
            &grid,
            p.n_paths,
            seed.component(0),
        )?;
        out.artifacts
            .push(Artifact::text("continuity.csv", localtime::continuity_csv(&rows)));
    }
    Ok(())
}

fn simplex(k: usize, choice: SimplexChoice, samples: usize, cutoff: f64, seed: Seed) -> SimplexConfig {
    match choice {
        SimplexChoice::Nested => SimplexConfig::nested(k),
        SimplexChoice::MonteCarlo => SimplexConfig::monte_carlo(k, samples, seed),
    }
    .with_cutoff(cutoff)
}

fn silt_cmd(cfg: &RunConfig, spec: &KernelSpec, seed: Seed, out: &mut RunOutput) -> Result<(), CliError> {
    let p = cfg.silt.as_ref().expect("validated");
    if !spec.stationary {
        return Err(volterra_core::Error::NonStationary.into());
    }
    let grid = cfg.grid()?;
    let ens = simulate::sample_planar(spec, &grid, p.n_paths, seed)?;
    let sc = simplex(p.k, p.simplex, p.samples, p.cutoff, seed.component(2));
    let m = grid.cells();
    let mut rows = Vec::new();
    for &eps in &p.epsilons {
        let (plain, rosen) = silt::silt_both(&ens, eps, &sc)?;
        out.put(format!("plain_mean_eps{eps}"), plain.mean);
        out.put(format!("rosen_mean_eps{eps}"), rosen.mean);
        out.put(format!("rosen_var_eps{eps}"), rosen.variance);
        if p.k == 2 && p.cutoff == 0.0 {
            out.put(format!("expected_plain_eps{eps}"), silt::expected_silt2(spec, eps)?);
        }
        rows.push((plain, m, p.cutoff));
        rows.push((rosen, m, p.cutoff));
    }
    out.artifacts.push(Artifact::text("silt.csv", silt::silt_csv(&rows)));
    Ok(())
}

fn fw(cfg: &RunConfig, spec: &KernelSpec, seed: Seed, out: &mut RunOutput) -> Result<(), CliError> {
    let p = cfg.fw.as_ref().expect("validated");
    let grid = cfg.grid()?;
    let mid = Arc::new(grid.with_rule(Quadrature::Midpoint));
    let h1 = GridFunction::constant(mid.clone(), p.h1);
    let h2 = GridFunction::constant(mid, p.h2);
    let ens = simulate::sample_planar(spec, &grid, p.n_paths, seed)?;
    let r = silt::fw_transform_mc(&ens, &p.times, p.epsilon, &h1, &h2)?;
    out.put("fw_estimate", r.estimate);
    out.put("fw_stderr", r.std_err);
    out.put("fw_analytic", r.analytic);
    out.put("exponential_mean", r.exponential_mean);
    out.put("exponential_stderr", r.exponential_std_err);
    out.artifacts.push(Artifact::text("fw.csv", silt::fw_csv(&[r])));
    if !p.regularized_k.is_empty() {
        let mut rows = Vec::new();
        for &k in &p.regularized_k {
            let sc = simplex(k, SimplexChoice::MonteCarlo, p.samples, p.cutoff, seed.component(3));
            let r = silt::regularized_fw_integral(spec, &grid, &h1, &h2, &sc)?;
            out.put(format!("regularized_k{k}"), r.estimate);
            rows.push(vec![
                k.to_string(),
                io::fmt_f64(r.cutoff),
                io::fmt_f64(r.estimate),
                io::fmt_f64(r.std_err),
                io::fmt_f64(r.estimate_half),
                io::fmt_f64(r.std_err_half),
            ]);
        }
        out.artifacts.push(Artifact::text(
            "regularized.csv",
            io::csv(
                &["k", "cutoff", "estimate", "stderr", "estimate_half", "stderr_half"],
                rows,
            ),
        ));
    }
    Ok(())
}

fn diagnose(cfg: &RunConfig, spec: &KernelSpec, seed: Seed, out: &mut RunOutput) -> Result<(), CliError> {
    let p = cfg.diagnose.clone().unwrap_or_default();
    let grid = cfg.grid()?;
    let lnd = covariance::lnd_diagnostics(spec, &grid, p.zeta)?;
    out.warnings.extend(lnd.warnings.iter().cloned());
    out.artifacts
        .push(Artifact::text("lnd.csv", covariance::lnd_to_csv(&lnd)));
    let rud = covariance::rudenko_integral(spec, &grid)?;
    out.put("rudenko_estimate", rud.estimate);
    out.put("rudenko_band_bound", rud.band_bound);
    out.warnings.extend(rud.warnings);
    if p.integrator_trials > 0 {
        out.put(
            "integrator_constant",
            covariance::integrator_constant(spec, &grid, p.integrator_trials, seed)?,
        );
    }
    Ok(())
}
