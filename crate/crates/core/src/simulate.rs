//! Seeded path ensembles for `X` and the planar process `Y = (Y_1, Y_2)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::covariance::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::grid_hilbert::TimeGrid;
use crate::io;
use crate::kernels::KernelSpec;
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sampler {
    Exact,
    VolterraDiscrete,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::VolterraDiscrete => "volterra",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMeta {
    pub kernel_id: String,
    pub kernel: Option<KernelSpec>,
    pub seed: Seed,
    pub sampler: Sampler,
}

/// `N` paths on a common set of times, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    times: Vec<f64>,
    grid: Option<Arc<TimeGrid>>,
    n_paths: usize,
    paths: Vec<f64>,
    /// Wiener increments per cell; absent for the exact sampler.
    noise: Option<Vec<f64>>,
    pub meta: EnsembleMeta,
}

impl PathEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn grid(&self) -> Option<&Arc<TimeGrid>> {
        self.grid.as_ref()
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let m = self.times.len();
        &self.paths[p * m..(p + 1) * m]
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.paths.chunks_exact(self.times.len().max(1))
    }

    pub fn has_noise(&self) -> bool {
        self.noise.is_some()
    }

    pub fn noise(&self, p: usize) -> Result<&[f64]> {
        let cells = self.times.len() - 1;
        let noise = self.noise.as_ref().ok_or(Error::MissingNoise)?;
        Ok(&noise[p * cells..(p + 1) * cells])
    }

    /// Hash of the raw path and noise bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.times {
            h.update(t.to_le_bytes());
        }
        for v in &self.paths {
            h.update(v.to_le_bytes());
        }
        if let Some(noise) = &self.noise {
            for v in noise {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// One row per path: `path,x(t_0),...,x(t_M)`, header carrying the times.
    pub fn paths_csv(&self) -> String {
        let mut header = vec!["path".to_string()];
        header.extend(self.times.iter().map(|&t| io::fmt_f64(t)));
        io::csv(
            &header,
            self.paths().enumerate().map(|(p, row)| {
                let mut cells = vec![p.to_string()];
                cells.extend(row.iter().map(|&v| io::fmt_f64(v)));
                cells
            }),
        )
    }

    /// Column store with one column per time (named by its index) and, when
    /// present, one column per noise cell.
    pub fn column_store(&self) -> Result<Vec<u8>> {
        let m = self.times.len();
        let mut cols: Vec<(String, Vec<f64>)> = (0..m)
            .map(|i| (format!("x{i}"), self.paths().map(|row| row[i]).collect()))
            .collect();
        if let Some(noise) = &self.noise {
            let cells = m - 1;
            for j in 0..cells {
                cols.push((format!("dw{j}"), noise.chunks_exact(cells).map(|row| row[j]).collect()));
            }
        }
        io::column_store(&cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarEnsemble {
    pub components: [PathEnsemble; 2],
}

impl PlanarEnsemble {
    pub fn times(&self) -> &[f64] {
        self.components[0].times()
    }

    pub fn n_paths(&self) -> usize {
        self.components[0].n_paths()
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.components[0].meta.kernel.as_ref()
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.components {
            h.update(c.content_hash().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn standard_normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Lower factor rows, copied row-major for cache-friendly products.
fn factor_rows(cov: &CovarianceMatrix) -> Result<Vec<Vec<f64>>> {
    let f = cov.factor()?;
    let n = cov.len();
    Ok((0..n).map(|i| (0..=i).map(|j| f.lower[(i, j)]).collect()).collect())
}

/// Applies `f` to each exact path without storing the ensemble.
pub fn map_exact_paths<T: Send>(
    cov: &CovarianceMatrix,
    n: usize,
    seed: Seed,
    f: impl Fn(&[f64]) -> T + Sync,
) -> Result<Vec<T>> {
    let rows = factor_rows(cov)?;
    let m = cov.len();
    Ok((0..n as u64)
        .into_par_iter()
        .map(|p| {
            let z = standard_normals(&mut seed.stream(p), m);
            let x: Vec<f64> = rows
                .iter()
                .map(|row| row.iter().zip(&z).map(|(l, z)| l * z).sum())
                .collect();
            f(&x)
        })
        .collect())
}

/// Paths `L z` with `L` the (possibly jittered) factor of `cov`.
pub fn sample_exact(cov: &CovarianceMatrix, n: usize, seed: Seed) -> Result<PathEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let rows = map_exact_paths(cov, n, seed, <[f64]>::to_vec)?;
    let kernel = cov.kernel().cloned();
    Ok(PathEnsemble {
        times: cov.times().to_vec(),
        grid: cov.grid().cloned(),
        n_paths: n,
        paths: rows.concat(),
        noise: None,
        meta: EnsembleMeta {
            kernel_id: kernel.as_ref().map_or_else(|| "matrix".to_string(), KernelSpec::id),
            kernel,
            seed,
            sampler: Sampler::Exact,
        },
    })
}

/// Lower-triangular table `K(t_i, midpoint_j)` for `j < i`, rows by `i`.
pub(crate) fn volterra_table(spec: &KernelSpec, grid: &TimeGrid) -> Vec<Vec<f64>> {
    let t = grid.nodes();
    t.par_iter()
        .enumerate()
        .map(|(i, &ti)| (0..i).map(|j| spec.eval(ti, 0.5 * (t[j] + t[j + 1]))).collect())
        .collect()
}

/// One Volterra path and its noise; sums run over ascending cells so that the
/// Wiener kernel reproduces the cumulative sum of the noise bit for bit.
fn volterra_path(table: &[Vec<f64>], steps: &[f64], seed: Seed, p: u64) -> (Vec<f64>, Vec<f64>) {
    let z = standard_normals(&mut seed.stream(p), steps.len());
    let dw: Vec<f64> = z.iter().zip(steps).map(|(z, h)| z * h.sqrt()).collect();
    let x = table
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            for (k, w) in row.iter().zip(&dw) {
                acc += k * w;
            }
            acc
        })
        .collect();
    (x, dw)
}

fn grid_steps(grid: &TimeGrid) -> Vec<f64> {
    (0..grid.cells()).map(|c| grid.step(c)).collect()
}

/// Applies `f` to each Volterra path and its noise without storing the ensemble.
pub fn map_volterra_paths<T: Send>(
    spec: &KernelSpec,
    grid: &TimeGrid,
    n: usize,
    seed: Seed,
    f: impl Fn(&[f64], &[f64]) -> T + Sync,
) -> Result<Vec<T>> {
    spec.check()?;
    let table = volterra_table(spec, grid);
    let steps = grid_steps(grid);
    Ok((0..n as u64)
        .into_par_iter()
        .map(|p| {
            let (x, dw) = volterra_path(&table, &steps, seed, p);
            f(&x, &dw)
        })
        .collect())
}

/// `X(t_i) = Σ_{j<i} K(t_i, s_j) ΔW_j` with `s_j` the cell midpoints.
pub fn sample_volterra(spec: &KernelSpec, grid: &Arc<TimeGrid>, n: usize, seed: Seed) -> Result<PathEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let pairs = map_volterra_paths(spec, grid, n, seed, |x, dw| (x.to_vec(), dw.to_vec()))?;
    let mut paths = Vec::with_capacity(n * grid.nodes().len());
    let mut noise = Vec::with_capacity(n * grid.cells());
    for (x, dw) in pairs {
        paths.extend(x);
        noise.extend(dw);
    }
    Ok(PathEnsemble {
        times: grid.nodes().to_vec(),
        grid: Some(grid.clone()),
        n_paths: n,
        paths,
        noise: Some(noise),
        meta: EnsembleMeta {
            kernel_id: spec.id(),
            kernel: Some(spec.clone()),
            seed,
            sampler: Sampler::VolterraDiscrete,
        },
    })
}

/// Two independent Volterra components on disjoint stream families.
pub fn sample_planar(spec: &KernelSpec, grid: &Arc<TimeGrid>, n: usize, seed: Seed) -> Result<PlanarEnsemble> {
    Ok(PlanarEnsemble {
        components: [
            sample_volterra(spec, grid, n, seed.component(0))?,
            sample_volterra(spec, grid, n, seed.component(1))?,
        ],
    })
}

/// Unbiased sample covariance and its normal-approximation standard error
/// `√((R_ii R_jj + R_ij²)/N)`.
pub fn empirical_cov(ens: &PathEnsemble) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = ens.n_paths();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "empirical covariance needs at least two paths".into(),
        ));
    }
    let m = ens.times().len();
    let mut mean = vec![0.0; m];
    for row in ens.paths() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for row in ens.paths() {
        for i in 0..m {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let se = DMatrix::from_fn(m, m, |i, j| {
        ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt()
    });
    Ok((cov, se))
}
