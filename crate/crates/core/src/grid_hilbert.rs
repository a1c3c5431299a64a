//! A grid model of `L2([0,1])`.
//!
//! A [`TimeGrid`] fixes nodes `0 = t_0 < ... < t_M = 1` and a quadrature rule.
//! With [`Quadrature::Trapezoid`] functions are sampled at the nodes; with
//! [`Quadrature::Midpoint`] they are sampled at cell midpoints, which is the
//! representation the Volterra sampler uses for its driving noise.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quadrature {
    Trapezoid,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    rule: Quadrature,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(cells: usize) -> Result<Self> {
        Self::uniform_with(cells, Quadrature::Trapezoid)
    }

    pub fn uniform_with(cells: usize, rule: Quadrature) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        let m = cells as f64;
        let nodes = (0..=cells).map(|i| i as f64 / m).collect();
        Self::from_nodes(nodes, rule)
    }

    pub fn from_nodes(nodes: Vec<f64>, rule: Quadrature) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidParameter("grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter("grid must start at 0 and end at 1".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("grid nodes must be strictly increasing".into()));
        }
        let (points, weights) = match rule {
            Quadrature::Trapezoid => {
                let n = nodes.len();
                let mut w = vec![0.0; n];
                for j in 0..n - 1 {
                    let h = nodes[j + 1] - nodes[j];
                    w[j] += 0.5 * h;
                    w[j + 1] += 0.5 * h;
                }
                (nodes.clone(), w)
            }
            Quadrature::Midpoint => nodes.windows(2).map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0])).unzip(),
        };
        Ok(Self {
            nodes,
            rule,
            points,
            weights,
        })
    }

    /// Same nodes, different quadrature rule.
    pub fn with_rule(&self, rule: Quadrature) -> Self {
        Self::from_nodes(self.nodes.clone(), rule).expect("nodes already validated")
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Sample points of grid functions: nodes or cell midpoints.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rule(&self) -> Quadrature {
        self.rule
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step(&self, cell: usize) -> f64 {
        self.nodes[cell + 1] - self.nodes[cell]
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.step(0);
        self.nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.max(1e-300))
    }

    /// Index of the node closest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        match self.nodes.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.nodes.len() => self.nodes.len() - 1,
            Err(i) => {
                if t - self.nodes[i - 1] <= self.nodes[i] - t {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Fraction of the quadrature cell attached to sample point `j` covered by `[a, b]`.
    fn coverage(&self, j: usize, a: f64, b: f64) -> f64 {
        let (lo, hi) = match self.rule {
            Quadrature::Midpoint => (self.nodes[j], self.nodes[j + 1]),
            Quadrature::Trapezoid => {
                let n = self.nodes.len();
                let lo = if j == 0 {
                    self.nodes[0]
                } else {
                    0.5 * (self.nodes[j - 1] + self.nodes[j])
                };
                let hi = if j + 1 == n {
                    self.nodes[n - 1]
                } else {
                    0.5 * (self.nodes[j] + self.nodes[j + 1])
                };
                (lo, hi)
            }
        };
        let overlap = (hi.min(b) - lo.max(a)).max(0.0);
        if hi > lo {
            overlap / (hi - lo)
        } else {
            0.0
        }
    }
}

/// An element of `L2([0,1])` sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("grid function values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Arc<TimeGrid>, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn zero(grid: Arc<TimeGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// `1_[a,b]`, with each sample weighted by the covered share of its quadrature
    /// cell. Edges that fall on trapezoid nodes get the value 1/2.
    pub fn indicator(grid: Arc<TimeGrid>, a: f64, b: f64) -> Self {
        let values = (0..grid.len()).map(|j| grid.coverage(j, a, b)).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| w * v * v)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        same_grid(self, other)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// CSV with header `t,value`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (t, v) in self.grid.points().iter().zip(&self.values) {
            let _ = writeln!(out, "{t:.16e},{v:.16e}");
        }
        out
    }
}

fn same_grid(f: &GridFunction, g: &GridFunction) -> Result<()> {
    if Arc::ptr_eq(&f.grid, &g.grid) || f.grid == g.grid {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    same_grid(f, g)?;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(f.grid.weights())
        .map(|((a, b), w)| w * a * b)
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramResult {
    pub matrix: DMatrix<f64>,
    /// Determinant from the clamped factorization, never negative.
    pub determinant: f64,
    /// Set when some pivot fell below `1e-14 * trace`.
    pub singular: bool,
}

fn check_family(fs: &[GridFunction]) -> Result<()> {
    let first = fs.first().ok_or(Error::Empty("function list"))?;
    for f in &fs[1..] {
        same_grid(first, f)?;
    }
    Ok(())
}

fn gram_matrix(fs: &[GridFunction]) -> DMatrix<f64> {
    let n = fs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = inner_product(&fs[i], &fs[j]).expect("grids checked");
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

pub fn gram(fs: &[GridFunction]) -> Result<GramResult> {
    check_family(fs)?;
    let matrix = gram_matrix(fs);
    let clamp = 1e-14 * matrix.trace().max(f64::MIN_POSITIVE);
    // pivots below the clamp are zeroed, so only a grossly indefinite input can fail here
    let factor = linalg::cholesky_psd(&matrix, clamp).map_err(|e| match e {
        Error::Factorization { index, pivot, .. } => {
            Error::Degenerate(format!("Gram matrix has negative pivot {pivot:.3e} at {index}"))
        }
        other => other,
    })?;
    let singular = !factor.clamped.is_empty();
    Ok(GramResult {
        determinant: factor.determinant().max(0.0),
        matrix,
        singular,
    })
}

/// Modified Gram–Schmidt with one re-orthogonalization pass; the output is not normalized.
pub fn gram_schmidt(fs: &[GridFunction]) -> Result<Vec<GridFunction>> {
    check_family(fs)?;
    let trace: f64 = fs.iter().map(GridFunction::norm_sq).sum();
    let tol = 1e-12 * trace;
    let mut basis: Vec<GridFunction> = Vec::with_capacity(fs.len());
    let mut norms: Vec<f64> = Vec::with_capacity(fs.len());
    for (index, f) in fs.iter().enumerate() {
        let mut v = f.clone();
        for _ in 0..2 {
            for (e, &n) in basis.iter().zip(&norms) {
                let c = inner_product(&v, e)? / n;
                v = v.axpy(-c, e)?;
            }
        }
        let residual = v.norm_sq();
        if residual <= tol {
            return Err(Error::NearlyDependent { index, residual });
        }
        norms.push(residual);
        basis.push(v);
    }
    Ok(basis)
}

/// Orthogonal projection of `h` onto `span(fs)` and its squared norm.
pub fn project(h: &GridFunction, fs: &[GridFunction]) -> Result<(GridFunction, f64)> {
    check_family(fs)?;
    same_grid(h, &fs[0])?;
    let basis = gram_schmidt(fs)?;
    let mut p = GridFunction::zero(h.grid.clone());
    let mut norm_sq = 0.0;
    for e in &basis {
        let n = e.norm_sq();
        let c = inner_product(h, e)?;
        p = p.axpy(c / n, e)?;
        norm_sq += c * c / n;
    }
    Ok((p, norm_sq))
}

/// `<A^{-1} u, u>` with `A` the Gram matrix of `fs` and `u_i = <f_i, h>`.
///
/// Equals the squared norm of the projection of `h` onto `span(fs)`; computed here
/// through a linear solve rather than through an orthogonal basis.
pub fn gram_quadratic_form(h: &GridFunction, fs: &[GridFunction]) -> Result<f64> {
    check_family(fs)?;
    same_grid(h, &fs[0])?;
    let a = gram_matrix(fs);
    let u = DVector::from_iterator(fs.len(), fs.iter().map(|f| inner_product(f, h).expect("grids checked")));
    let x = linalg::spd_solve(&a, &u)?;
    Ok(x.dot(&u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurBound {
    pub alpha: f64,
    pub beta: f64,
    pub norm_bound_sq: f64,
    pub direct_norm_sq: f64,
}

/// Schur test for the integral operator `(A f)(s1) = ∫ kernel(s1, s2) f(s2) ds2`
/// discretized with the grid weights.
///
/// `kernel[(i, j)]` holds the value at `(points[i], points[j])`. Rows or columns
/// with zero weight are ignored.
pub fn schur_operator_bound(kernel: &DMatrix<f64>, p: &GridFunction, q: &GridFunction) -> Result<SchurBound> {
    same_grid(p, q)?;
    let grid = p.grid();
    let n = grid.len();
    if kernel.nrows() != n || kernel.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "kernel must be {n}x{n}, got {}x{}",
            kernel.nrows(),
            kernel.ncols()
        )));
    }
    if kernel.iter().any(|&k| k < 0.0 || !k.is_finite()) {
        return Err(Error::InvalidParameter(
            "kernel entries must be finite and nonnegative".into(),
        ));
    }
    let w = grid.weights();
    for (j, &wj) in w.iter().enumerate() {
        if wj > 0.0 && (p.values[j] <= 0.0 || q.values[j] <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "test functions must be positive (index {j})"
            )));
        }
    }
    let mut alpha: f64 = 0.0;
    let mut beta: f64 = 0.0;
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let row: f64 = (0..n).map(|j| w[j] * kernel[(i, j)] * q.values[j]).sum();
        alpha = alpha.max(row / p.values[i]);
        let col: f64 = (0..n).map(|j| w[j] * kernel[(j, i)] * p.values[j]).sum();
        beta = beta.max(col / q.values[i]);
    }
    let direct_norm_sq = top_singular_value_sq(kernel, w);
    Ok(SchurBound {
        alpha,
        beta,
        norm_bound_sq: alpha * beta,
        direct_norm_sq,
    })
}

/// Largest squared singular value of `W^{1/2} K W^{1/2}` by power iteration on `B^T B`.
fn top_singular_value_sq(kernel: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let b = DMatrix::from_fn(n, n, |i, j| sw[i] * kernel[(i, j)] * sw[j]);
    if b.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let btb = b.transpose() * &b;
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let next = &btb * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let estimate = v.dot(&next);
        v = next / norm;
        if (estimate - lambda).abs() <= 1e-8 * estimate.abs() {
            lambda = estimate;
            break;
        }
        lambda = estimate;
    }
    // final Rayleigh quotient on the normalized iterate
    v.dot(&(&btb * &v)).max(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize) -> Arc<TimeGrid> {
        TimeGrid::uniform(m).unwrap().shared()
    }

    #[test]
    fn weights_sum_to_one() {
        for rule in [Quadrature::Trapezoid, Quadrature::Midpoint] {
            let g = TimeGrid::uniform_with(37, rule).unwrap();
            let s: f64 = g.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(g.weights().iter().all(|&w| w >= 0.0));
        }
        let g = TimeGrid::from_nodes(vec![0.0, 0.1, 0.5, 1.0], Quadrature::Trapezoid).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bad_nodes_are_rejected() {
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5, 1.0], Quadrature::Trapezoid).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 1.0], Quadrature::Trapezoid).is_err());
        assert!(TimeGrid::uniform(0).is_err());
    }

    #[test]
    fn constant_and_indicators() {
        let g = grid(100);
        let one = GridFunction::constant(g.clone(), 1.0);
        assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        let a = GridFunction::indicator(g.clone(), 0.0, 0.3);
        let b = GridFunction::indicator(g.clone(), 0.0, 0.7);
        assert!((inner_product(&a, &b).unwrap() - 0.3).abs() < 1.0 / 100.0);
        // edges on nodes carry half values under the trapezoid rule
        assert_eq!(a.values()[30], 0.5);
    }

    #[test]
    fn mismatched_grids_error() {
        let f = GridFunction::constant(grid(10), 1.0);
        let g = GridFunction::constant(grid(11), 1.0);
        assert_eq!(inner_product(&f, &g), Err(Error::GridMismatch));
        assert!(matches!(gram(&[]), Err(Error::Empty(_))));
        assert_eq!(gram(&[f, g]).unwrap_err(), Error::GridMismatch);
    }

    #[test]
    fn ou_slices_match_closed_form() {
        let g = TimeGrid::uniform_with(2000, Quadrature::Midpoint).unwrap().shared();
        let slice = |t: f64| GridFunction::from_fn(g.clone(), move |s| if s < t { (-(t - s)).exp() } else { 0.0 });
        let v = inner_product(&slice(0.8), &slice(0.5)).unwrap();
        let exact = ((-0.3f64).exp() - (-1.3f64).exp()) / 2.0;
        assert!((v - exact).abs() < 1e-7, "{v} vs {exact}");
    }

    #[test]
    fn gram_of_orthonormal_steps_is_identity() {
        let g = TimeGrid::uniform_with(64, Quadrature::Midpoint).unwrap().shared();
        let f1 = GridFunction::from_fn(g.clone(), |t| if t < 0.5 { 2f64.sqrt() } else { 0.0 });
        let f2 = GridFunction::from_fn(g.clone(), |t| if t >= 0.5 { 2f64.sqrt() } else { 0.0 });
        let r = gram(&[f1, f2]).unwrap();
        assert!((r.matrix.clone() - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        assert!((r.determinant - 1.0).abs() < 1e-14);
    }

    #[test]
    fn wiener_increments_are_diagonal() {
        let g = TimeGrid::uniform_with(100, Quadrature::Midpoint).unwrap().shared();
        let cuts = [0.0, 0.2, 0.45, 0.7, 1.0];
        let fs: Vec<_> = cuts
            .windows(2)
            .map(|w| GridFunction::indicator(g.clone(), w[0], w[1]))
            .collect();
        let r = gram(&fs).unwrap();
        let mut prod = 1.0;
        for i in 0..4 {
            let dt = cuts[i + 1] - cuts[i];
            prod *= dt;
            assert!((r.matrix[(i, i)] - dt).abs() < 1e-14);
            for j in 0..4 {
                if i != j {
                    assert_eq!(r.matrix[(i, j)], 0.0);
                }
            }
        }
        assert!((r.determinant - prod).abs() < 1e-15);
    }

    #[test]
    fn dependent_pair_has_zero_determinant() {
        let g = grid(50);
        let f = GridFunction::from_fn(g, |t| 1.0 + t * t);
        let r = gram(&[f.clone(), f.scaled(2.0)]).unwrap();
        assert!(r.determinant <= 1e-10 * f.norm_sq().powi(2));
        assert!(r.singular);
        let err = gram_schmidt(&[f.clone(), f.scaled(2.0)]).unwrap_err();
        assert!(matches!(err, Error::NearlyDependent { index: 1, .. }));
    }

    #[test]
    fn gram_schmidt_centers_identity() {
        let g = grid(400);
        let one = GridFunction::constant(g.clone(), 1.0);
        let id = GridFunction::from_fn(g.clone(), |t| t);
        let out = gram_schmidt(&[one.clone(), id]).unwrap();
        assert_eq!(out[0], one);
        for (v, t) in out[1].values().iter().zip(g.points()) {
            assert!((v - (t - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_schmidt_keeps_orthogonal_input() {
        let g = grid(64);
        let f1 = GridFunction::indicator(g.clone(), 0.0, 0.25);
        let f2 = GridFunction::indicator(g.clone(), 0.5, 1.0);
        let out = gram_schmidt(&[f1.clone(), f2.clone()]).unwrap();
        for (a, b) in out[1].values().iter().zip(f2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_edge_cases() {
        let g = grid(128);
        let f1 = GridFunction::from_fn(g.clone(), |t| t);
        let f2 = GridFunction::from_fn(g.clone(), |t| t * t);
        let h = f1.axpy(3.0, &f2).unwrap();
        let (p, n) = project(&h, &[f1.clone(), f2.clone()]).unwrap();
        assert!((n - h.norm_sq()).abs() < 1e-10 * h.norm_sq());
        for (a, b) in p.values().iter().zip(h.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let e = GridFunction::indicator(g.clone(), 0.0, 0.5);
        let perp = GridFunction::indicator(g.clone(), 0.75, 1.0);
        let (p, n) = project(&perp, &[e]).unwrap();
        assert_eq!(n, 0.0);
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn schur_zero_kernel() {
        let g = grid(16);
        let one = GridFunction::constant(g.clone(), 1.0);
        let k = DMatrix::zeros(17, 17);
        let r = schur_operator_bound(&k, &one, &one).unwrap();
        assert_eq!(
            (r.alpha, r.beta, r.norm_bound_sq, r.direct_norm_sq),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn schur_rejects_bad_input() {
        let g = grid(4);
        let one = GridFunction::constant(g.clone(), 1.0);
        let mut k = DMatrix::from_element(5, 5, 1.0);
        let zero = GridFunction::zero(g.clone());
        assert!(schur_operator_bound(&k, &zero, &one).is_err());
        k[(1, 2)] = -1.0;
        assert!(schur_operator_bound(&k, &one, &one).is_err());
    }

    #[test]
    fn csv_has_seventeen_digits() {
        let g = grid(2);
        let f = GridFunction::from_fn(g, |t| t / 3.0);
        let csv = f.to_csv();
        assert!(csv.starts_with("t,value\n"));
        let last = csv.lines().nth(2).unwrap();
        let v: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.5 / 3.0);
    }
}
