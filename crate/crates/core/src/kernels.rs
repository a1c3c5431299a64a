//! Volterra kernels `K(t, s)` on `[0,1]²`, vanishing for `s > t`.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid_hilbert::{GridFunction, Quadrature, TimeGrid};
use crate::quad::{self, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DerivativeMode {
    #[default]
    Analytic,
    FiniteDifference {
        step: f64,
    },
}

impl DerivativeMode {
    pub const DEFAULT_STEP: f64 = 1e-5;
}

/// Bounded perturbation shapes `b(t, s)` with `|b| ≤ 1` on `s ≤ t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BumpShape {
    /// `sin(πt)·cos(πs/2)`; vanishes at `t = 0` so `K(0,0)` is untouched.
    Smooth,
    /// `exp(-(t - s))`; keeps a stationary base stationary.
    Lag,
}

impl BumpShape {
    pub fn name(self) -> &'static str {
        match self {
            Self::Smooth => "smooth",
            Self::Lag => "lag",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "smooth" => Ok(Self::Smooth),
            "lag" => Ok(Self::Lag),
            other => Err(Error::InvalidParameter(format!("unknown bump shape `{other}`"))),
        }
    }

    fn value(self, t: f64, s: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            Self::Smooth => (PI * t).sin() * (0.5 * PI * s).cos(),
            Self::Lag => (-(t - s)).exp(),
        }
    }

    fn dt(self, t: f64, s: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            Self::Smooth => PI * (PI * t).cos() * (0.5 * PI * s).cos(),
            Self::Lag => -(-(t - s)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interpolation {
    Bilinear,
    /// Piecewise constant from the lower-left table entry.
    Step,
}

/// Kernel values on a square node grid; `values[i * n + j] = K(t_i, s_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    nodes: Vec<f64>,
    values: Vec<f64>,
    interpolation: Interpolation,
}

impl TabulatedKernel {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        let n = nodes.len();
        if n < 2 {
            return Err(Error::InvalidParameter(
                "tabulated kernel needs at least two nodes".into(),
            ));
        }
        if nodes[0] != 0.0 || nodes[n - 1] != 1.0 || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "tabulated nodes must increase strictly from 0 to 1".into(),
            ));
        }
        if values.len() != n * n {
            return Err(Error::InvalidParameter(format!(
                "tabulated kernel needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("tabulated values must be finite".into()));
        }
        Ok(Self {
            nodes,
            values,
            interpolation,
        })
    }

    /// Samples `f` on `grid` nodes (upper triangle set to zero).
    pub fn from_fn(grid: &TimeGrid, interpolation: Interpolation, f: impl Fn(f64, f64) -> f64) -> Self {
        let nodes = grid.nodes().to_vec();
        let n = nodes.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                values[i * n + j] = f(nodes[i], nodes[j]);
            }
        }
        Self {
            nodes,
            values,
            interpolation,
        }
    }

    /// Parses CSV rows `t,s,value` covering every pair of one node set.
    pub fn from_csv(text: &str, interpolation: Interpolation) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('t')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected `t,s,value`", lineno + 1)));
            }
            let mut parsed = [0.0; 3];
            for (slot, field) in parsed.iter_mut().zip(&fields) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad number `{field}`", lineno + 1)))?;
            }
            rows.push(parsed);
        }
        let mut nodes: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        let mut s_nodes: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        s_nodes.sort_by(f64::total_cmp);
        s_nodes.dedup();
        let n = nodes.len();
        if s_nodes != nodes || rows.len() != n * n {
            return Err(Error::InvalidParameter(
                "tabulated kernel rows must cover a full square grid".into(),
            ));
        }
        let mut values = vec![f64::NAN; n * n];
        for [t, s, v] in rows {
            let i = nodes.binary_search_by(|x| x.total_cmp(&t)).expect("node present");
            let j = nodes.binary_search_by(|x| x.total_cmp(&s)).expect("node present");
            values[i * n + j] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter(
                "duplicate (t,s) pair in tabulated kernel".into(),
            ));
        }
        Self::new(nodes, values, interpolation)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Table entry with the upper triangle replaced by the diagonal, so that
    /// interpolation next to the diagonal sees a continuous extension.
    fn at(&self, i: usize, j: usize) -> f64 {
        let n = self.nodes.len();
        self.values[i * n + j.min(i)]
    }

    fn cell(&self, x: f64) -> (usize, f64) {
        let n = self.nodes.len();
        let k = match self.nodes.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        };
        let frac = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        (k, frac.clamp(0.0, 1.0))
    }

    fn eval(&self, t: f64, s: f64) -> f64 {
        let (i, a) = self.cell(t);
        let (j, b) = self.cell(s);
        match self.interpolation {
            Interpolation::Step => {
                let i = if a >= 1.0 { i + 1 } else { i };
                let j = if b >= 1.0 { j + 1 } else { j };
                self.at(i, j)
            }
            Interpolation::Bilinear => {
                let v00 = self.at(i, j);
                let v01 = self.at(i, j + 1);
                let v10 = self.at(i + 1, j);
                let v11 = self.at(i + 1, j + 1);
                (1.0 - a) * ((1.0 - b) * v00 + b * v01) + a * ((1.0 - b) * v10 + b * v11)
            }
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        for v in self.nodes.iter().chain(&self.values) {
            h.update(v.to_le_bytes());
        }
        h.update([self.interpolation as u8]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    Wiener,
    BrownianBridge,
    OrnsteinUhlenbeck {
        rate: f64,
    },
    /// Molchan–Golosov kernel; `scale` is the constant in front of the bracket.
    FractionalBm {
        hurst: f64,
        scale: f64,
    },
    Tabulated(Arc<TabulatedKernel>),
    Perturbed {
        base: Box<KernelSpec>,
        amplitude: f64,
        shape: BumpShape,
    },
    /// `factor · K_base`.
    Scaled {
        base: Box<KernelSpec>,
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub derivative: DerivativeMode,
    /// True iff `K(t, s)` depends on `t - s` only.
    pub stationary: bool,
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            KernelFamily::Wiener => write!(f, "wiener"),
            KernelFamily::BrownianBridge => write!(f, "bridge"),
            KernelFamily::OrnsteinUhlenbeck { rate } => write!(f, "ou(rate={rate})"),
            KernelFamily::FractionalBm { hurst, scale } => write!(f, "fbm(hurst={hurst},scale={scale})"),
            KernelFamily::Tabulated(t) => write!(f, "tabulated(n={})", t.nodes.len()),
            KernelFamily::Perturbed { base, amplitude, shape } => {
                write!(f, "perturbed({base},amplitude={amplitude},shape={})", shape.name())
            }
            KernelFamily::Scaled { base, factor } => write!(f, "scaled({base},factor={factor})"),
        }
    }
}

const QUAD_TOL: Tolerance = Tolerance::new(1e-14, 1e-10);

impl KernelSpec {
    fn builtin(family: KernelFamily, stationary: bool) -> Self {
        Self {
            family,
            derivative: DerivativeMode::Analytic,
            stationary,
        }
    }

    pub fn wiener() -> Self {
        Self::builtin(KernelFamily::Wiener, true)
    }

    /// Canonical Volterra form of the bridge, `K(t, s) = (1 - t)/(1 - s)`.
    pub fn brownian_bridge() -> Self {
        Self::builtin(KernelFamily::BrownianBridge, false)
    }

    pub fn ornstein_uhlenbeck(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("OU rate must be positive, got {rate}")));
        }
        Ok(Self::builtin(KernelFamily::OrnsteinUhlenbeck { rate }, true))
    }

    /// fBm kernel with the scale calibrated so that `Var X(1) = 1`.
    pub fn fractional_bm(hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        let scale = calibrate_fbm_scale(hurst);
        Ok(Self::builtin(KernelFamily::FractionalBm { hurst, scale }, false))
    }

    pub fn fractional_bm_with_scale(hurst: f64, scale: f64) -> Result<Self> {
        check_hurst(hurst)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fBm scale must be positive, got {scale}"
            )));
        }
        Ok(Self::builtin(KernelFamily::FractionalBm { hurst, scale }, false))
    }

    pub fn tabulated(table: TabulatedKernel, stationary: bool) -> Self {
        Self::builtin(KernelFamily::Tabulated(Arc::new(table)), stationary)
    }

    pub fn perturbed(base: KernelSpec, amplitude: f64, shape: BumpShape) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bump amplitude must be nonnegative, got {amplitude}"
            )));
        }
        let stationary = base.stationary && (shape == BumpShape::Lag || amplitude == 0.0);
        Ok(Self::builtin(
            KernelFamily::Perturbed {
                base: Box::new(base),
                amplitude,
                shape,
            },
            stationary,
        ))
    }

    pub fn scaled(base: KernelSpec, factor: f64) -> Result<Self> {
        if !factor.is_finite() {
            return Err(Error::InvalidParameter("scale factor must be finite".into()));
        }
        let stationary = base.stationary;
        Ok(Self::builtin(
            KernelFamily::Scaled {
                base: Box::new(base),
                factor,
            },
            stationary,
        ))
    }

    pub fn with_derivative(mut self, mode: DerivativeMode) -> Self {
        self.derivative = mode;
        self
    }

    /// Checks family parameters; builders already enforce these, but the
    /// fields are public.
    pub fn check(&self) -> Result<()> {
        match &self.family {
            KernelFamily::OrnsteinUhlenbeck { rate } if !(*rate > 0.0) => {
                Err(Error::InvalidParameter(format!("OU rate must be positive, got {rate}")))
            }
            KernelFamily::FractionalBm { hurst, scale } => {
                check_hurst(*hurst)?;
                if *scale > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("fBm scale must be positive".into()))
                }
            }
            KernelFamily::Perturbed { base, .. } | KernelFamily::Scaled { base, .. } => base.check(),
            _ => Ok(()),
        }?;
        if let DerivativeMode::FiniteDifference { step } = self.derivative {
            if !(step > 0.0 && step < 0.5) {
                return Err(Error::InvalidParameter(format!("bad finite-difference step {step}")));
            }
        }
        Ok(())
    }

    /// `K(t, s)` without domain checks; zero when `s > t`.
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        if s > t {
            return 0.0;
        }
        match &self.family {
            KernelFamily::Wiener => 1.0,
            KernelFamily::BrownianBridge => {
                if t >= 1.0 {
                    0.0
                } else {
                    (1.0 - t) / (1.0 - s)
                }
            }
            KernelFamily::OrnsteinUhlenbeck { rate } => (-rate * (t - s)).exp(),
            KernelFamily::FractionalBm { hurst, scale } => scale * fbm_unscaled(*hurst, t, s),
            KernelFamily::Tabulated(table) => table.eval(t, s),
            KernelFamily::Perturbed { base, amplitude, shape } => base.eval(t, s) + amplitude * shape.value(t, s),
            KernelFamily::Scaled { base, factor } => factor * base.eval(t, s),
        }
    }

    /// `∂K/∂t (t, s)` for `s < t`.
    pub fn eval_dt(&self, t: f64, s: f64) -> f64 {
        if s > t {
            return 0.0;
        }
        match self.derivative {
            DerivativeMode::FiniteDifference { step } => self.finite_difference(t, s, step),
            DerivativeMode::Analytic => self.analytic_dt(t, s),
        }
    }

    fn analytic_dt(&self, t: f64, s: f64) -> f64 {
        match &self.family {
            KernelFamily::Wiener => 0.0,
            KernelFamily::BrownianBridge => -1.0 / (1.0 - s),
            KernelFamily::OrnsteinUhlenbeck { rate } => -rate * (-rate * (t - s)).exp(),
            KernelFamily::Perturbed { base, amplitude, shape } => base.analytic_dt(t, s) + amplitude * shape.dt(t, s),
            KernelFamily::Scaled { base, factor } => factor * base.analytic_dt(t, s),
            KernelFamily::FractionalBm { .. } | KernelFamily::Tabulated(_) => {
                self.finite_difference(t, s, DerivativeMode::DEFAULT_STEP)
            }
        }
    }

    /// Central difference; second-order one-sided stencils where the central
    /// one would leave `[s, 1]`.
    fn finite_difference(&self, t: f64, s: f64, step: f64) -> f64 {
        let f = |x: f64| self.eval(x, s);
        if t - step >= s && t + step <= 1.0 {
            (f(t + step) - f(t - step)) / (2.0 * step)
        } else if t - 2.0 * step >= s {
            (3.0 * f(t) - 4.0 * f(t - step) + f(t - 2.0 * step)) / (2.0 * step)
        } else if t + 2.0 * step <= 1.0 {
            (-3.0 * f(t) + 4.0 * f(t + step) - f(t + 2.0 * step)) / (2.0 * step)
        } else {
            0.0
        }
    }

    /// Algebraic exponents of `r ↦ K(t, r)` at `r = 0` and `r = t`.
    pub(crate) fn exponents(&self) -> (f64, f64) {
        match &self.family {
            KernelFamily::FractionalBm { hurst, .. } => (-(hurst - 0.5).abs(), hurst - 0.5),
            KernelFamily::Perturbed { base, .. } | KernelFamily::Scaled { base, .. } => base.exponents(),
            _ => (0.0, 0.0),
        }
    }

    pub fn is_fbm_rough(&self) -> bool {
        match &self.family {
            KernelFamily::FractionalBm { hurst, .. } => *hurst < 0.5,
            KernelFamily::Perturbed { base, .. } | KernelFamily::Scaled { base, .. } => base.is_fbm_rough(),
            _ => false,
        }
    }

    /// Stable identifier; tabulated kernels are keyed by a hash of their table.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        let digest = hex::encode(h.finalize());
        format!("{self}#{}", &digest[..16])
    }

    fn hash_into(&self, h: &mut Sha256) {
        h.update(self.to_string().as_bytes());
        h.update([self.stationary as u8]);
        match &self.family {
            KernelFamily::Tabulated(t) => t.hash_into(h),
            KernelFamily::Perturbed { base, .. } | KernelFamily::Scaled { base, .. } => base.hash_into(h),
            _ => {}
        }
    }
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "Hurst index must lie in (0,1), got {hurst}"
        )))
    }
}

/// Bracketed Molchan–Golosov expression without the scale constant.
///
/// Both inner integrals carry an algebraic singularity at `u = s`; a power
/// substitution turns them into smooth integrals before adaptive quadrature.
fn fbm_unscaled(hurst: f64, t: f64, s: f64) -> f64 {
    if s <= 0.0 {
        // measure-zero endpoint where the kernel blows up or vanishes
        return 0.0;
    }
    if t == s {
        // diagonal convention: the limit for H > 1/2, a measure-zero blow-up otherwise
        return 0.0;
    }
    let d = hurst - 0.5;
    if d.abs() < 1e-12 {
        return 1.0;
    }
    let tol = Tolerance::new(0.0, 1e-10);
    if d > 0.0 {
        // ∫_s^t (u-s)^{d-1} u^d du with v = (u-s)^d
        let top = (t - s).powf(d);
        let inner = quad::integrate(|v| (s + v.powf(1.0 / d)).powf(d), 0.0, top, tol).value / d;
        s.powf(-d) * inner
    } else {
        // ∫_s^t (u-s)^d u^{d-1} du with w = (u-s)^{d+1}
        let b = d + 1.0;
        let top = (t - s).powf(b);
        let inner = quad::integrate(|w| (s + w.powf(1.0 / b)).powf(d - 1.0), 0.0, top, tol).value / b;
        (t / s).powf(d) * (t - s).powf(d) - d * s.powf(-d) * inner
    }
}

/// Scale that makes `∫_0^1 K(1, s)^2 ds = 1`.
pub fn calibrate_fbm_scale(hurst: f64) -> f64 {
    let d = hurst - 0.5;
    if d.abs() < 1e-12 {
        return 1.0;
    }
    let v = quad::integrate_algebraic(
        |s| fbm_unscaled(hurst, 1.0, s).powi(2),
        0.0,
        1.0,
        Some(-2.0 * d.abs()),
        Some(2.0 * d),
        Tolerance::new(1e-13, 1e-10),
    )
    .value;
    v.sqrt().recip()
}

/// Domain-checked `K(t, s)`.
pub fn eval_kernel(spec: &KernelSpec, t: f64, s: f64) -> Result<f64> {
    spec.check()?;
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParameter(format!("(t, s) = ({t}, {s}) outside [0,1]²")));
    }
    Ok(spec.eval(t, s))
}

/// `∫_0^{min(t,s)} K_a(t, r) K_b(s, r) dr` by adaptive quadrature.
pub fn cross_moment(a: &KernelSpec, t: f64, b: &KernelSpec, s: f64) -> f64 {
    let upper = t.min(s);
    if upper <= 0.0 {
        return 0.0;
    }
    let (la, ra) = a.exponents();
    let (lb, rb) = b.exponents();
    let right = if t == s {
        ra + rb
    } else if s < t {
        rb
    } else {
        ra
    };
    let opt = |e: f64| (e != 0.0).then_some(e);
    quad::integrate_algebraic(
        |r| a.eval(t, r) * b.eval(s, r),
        0.0,
        upper,
        opt(la + lb),
        opt(right),
        QUAD_TOL,
    )
    .value
}

/// `σ²(t) = ∫_0^t K(t, r)^2 dr`.
pub fn kernel_l2_sq(spec: &KernelSpec, t: f64) -> f64 {
    cross_moment(spec, t, spec, t)
}

/// The slice `g(t) = K(t, ·) 1_{[0,t]}` on `grid`.
///
/// Trapezoid grids weight each node by the share of its dual cell inside
/// `[0, t]`, which gives the node nearest `t` half its value when `t` sits on
/// a node. Midpoint grids keep cells whose midpoint lies before `t`.
pub fn slice(spec: &KernelSpec, t: f64, grid: &Arc<TimeGrid>) -> Result<GridFunction> {
    spec.check()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("slice time {t} outside [0,1]")));
    }
    let cover = GridFunction::indicator(grid.clone(), 0.0, t);
    let values = grid
        .points()
        .iter()
        .zip(cover.values())
        .map(|(&s, &c)| match grid.rule() {
            Quadrature::Trapezoid => c * spec.eval(t, s.min(t)),
            Quadrature::Midpoint if s < t => c * spec.eval(t, s),
            Quadrature::Midpoint => 0.0,
        })
        .collect();
    GridFunction::new(grid.clone(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub volterra_ok: bool,
    pub sup_l2: f64,
    pub kernel_at_origin: f64,
    pub lipschitz_l: f64,
    /// Largest `|∂K/∂t|` over grid pairs below the diagonal.
    pub derivative_sup: f64,
    pub warnings: Vec<String>,
}

pub fn validate_kernel(spec: &KernelSpec, grid: &TimeGrid) -> ValidationReport {
    let mut warnings = Vec::new();
    if let Err(e) = spec.check() {
        warnings.push(format!("invalid parameters: {e}"));
        return ValidationReport {
            volterra_ok: false,
            sup_l2: f64::NAN,
            kernel_at_origin: f64::NAN,
            lipschitz_l: f64::NAN,
            derivative_sup: f64::NAN,
            warnings,
        };
    }
    let t = grid.nodes();
    let n = t.len();
    let mut volterra_ok = true;
    let mut lipschitz_l: f64 = 0.0;
    let mut derivative_sup: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if spec.eval(t[i], t[j]) != 0.0 {
                volterra_ok = false;
            }
        }
        for j in 0..i {
            derivative_sup = derivative_sup.max(spec.eval_dt(t[i], t[j]).abs());
        }
        if i + 1 < n {
            let dt = t[i + 1] - t[i];
            // s = t_i itself is skipped: the jump of an indicator kernel sits there
            for &s in &t[..i] {
                let diff = (spec.eval(t[i + 1], s) - spec.eval(t[i], s)).abs();
                lipschitz_l = lipschitz_l.max(diff / dt);
            }
        }
    }
    let sup_l2 = t.iter().map(|&ti| kernel_l2_sq(spec, ti)).fold(0.0_f64, f64::max);
    let kernel_at_origin = spec.eval(0.0, 0.0);
    if !volterra_ok {
        warnings.push("kernel is nonzero above the diagonal".into());
    }
    if kernel_at_origin.abs() < 1e-9 {
        warnings.push("K(0,0) vanishes: the iterated-logarithm and local-time results do not apply".into());
    }
    if spec.is_fbm_rough() {
        warnings.push("fBm with H < 1/2 is singular at the diagonal: not Lipschitz, reduced accuracy".into());
    }
    if matches!(spec.family, KernelFamily::BrownianBridge) {
        warnings.push("bridge kernel vanishes at t = 1, so min |K| = 0".into());
    }
    ValidationReport {
        volterra_ok,
        sup_l2,
        kernel_at_origin,
        lipschitz_l,
        derivative_sup,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_values() {
        let w = KernelSpec::wiener();
        assert_eq!(w.eval(0.7, 0.3), 1.0);
        assert_eq!(w.eval(0.3, 0.7), 0.0);
        let ou = KernelSpec::ornstein_uhlenbeck(1.0).unwrap();
        assert!((ou.eval(0.7, 0.3) - (-0.4f64).exp()).abs() < 1e-15);
        let b = KernelSpec::brownian_bridge();
        assert!((b.eval(0.7, 0.3) - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(KernelSpec::ornstein_uhlenbeck(0.0).is_err());
        assert!(KernelSpec::fractional_bm(1.0).is_err());
        assert!(eval_kernel(&KernelSpec::wiener(), 1.5, 0.0).is_err());
        let bad = KernelSpec {
            family: KernelFamily::OrnsteinUhlenbeck { rate: -1.0 },
            derivative: DerivativeMode::Analytic,
            stationary: true,
        };
        assert!(eval_kernel(&bad, 0.5, 0.1).is_err());
    }

    #[test]
    fn bridge_covariance() {
        let b = KernelSpec::brownian_bridge();
        for (s, t) in [(0.2, 0.6), (0.5, 0.9), (0.1, 0.1)] {
            let r = cross_moment(&b, t, &b, s);
            assert!((r - s * (1.0 - t)).abs() < 1e-10, "{s} {t} {r}");
        }
    }

    #[test]
    fn slices() {
        let g = TimeGrid::uniform(512).unwrap().shared();
        let w = slice(&KernelSpec::wiener(), 1.0, &g).unwrap();
        assert!(w.values().iter().all(|&v| v == 1.0));
        let half = slice(&KernelSpec::wiener(), 0.5, &g).unwrap();
        assert!((half.norm_sq() - 0.5).abs() < 1.0 / 512.0);
        let ou = slice(&KernelSpec::ornstein_uhlenbeck(1.0).unwrap(), 1.0, &g).unwrap();
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((ou.norm_sq() - exact).abs() < 1e-6);
    }

    #[test]
    fn validation_reports() {
        let g = TimeGrid::uniform(64).unwrap();
        let w = validate_kernel(&KernelSpec::wiener(), &g);
        assert!(w.volterra_ok);
        assert_eq!((w.sup_l2, w.kernel_at_origin, w.lipschitz_l), (1.0, 1.0, 0.0));
        assert!(w.warnings.is_empty());
        let ou = validate_kernel(&KernelSpec::ornstein_uhlenbeck(1.0).unwrap(), &g);
        assert!((ou.sup_l2 - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-10);
        assert!(ou.lipschitz_l <= 1.0 + 1.0 / 64.0);
        assert!(ou.derivative_sup <= 1.0 && ou.derivative_sup >= (-1.0f64 / 64.0).exp() - 1e-12);
        let fbm = validate_kernel(&KernelSpec::fractional_bm(0.3).unwrap(), &g);
        assert!(fbm.volterra_ok);
        assert!(fbm.warnings.iter().any(|m| m.contains("H < 1/2")));
    }

    #[test]
    fn finite_difference_matches_analytic() {
        let ou = KernelSpec::ornstein_uhlenbeck(2.0).unwrap();
        let fd = ou.clone().with_derivative(DerivativeMode::FiniteDifference {
            step: DerivativeMode::DEFAULT_STEP,
        });
        for (t, s) in [(0.5, 0.1), (0.9, 0.4), (1.0, 0.2)] {
            assert!((ou.eval_dt(t, s) - fd.eval_dt(t, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn fbm_calibrated_variance() {
        for h in [0.3, 0.7] {
            let k = KernelSpec::fractional_bm(h).unwrap();
            assert!((kernel_l2_sq(&k, 1.0) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tabulated_interpolation() {
        let g = TimeGrid::uniform(8).unwrap();
        let table = TabulatedKernel::from_fn(&g, Interpolation::Bilinear, |t, s| 1.0 + t - s);
        let k = KernelSpec::tabulated(table, true);
        // affine functions are reproduced exactly away from the diagonal cells
        for (t, s) in [(0.33, 0.1), (0.9, 0.6), (0.5, 0.5)] {
            assert!((k.eval(t, s) - (1.0 + t - s)).abs() < 1e-12);
        }
        assert_eq!(k.eval(0.2, 0.3), 0.0);
    }

    #[test]
    fn tabulated_csv_roundtrip() {
        let mut csv = String::from("t,s,value\n");
        for t in [0.0, 0.5, 1.0] {
            for s in [0.0, 0.5, 1.0] {
                csv.push_str(&format!("{t},{s},{}\n", if s <= t { 2.0 } else { 0.0 }));
            }
        }
        let table = TabulatedKernel::from_csv(&csv, Interpolation::Step).unwrap();
        assert_eq!(KernelSpec::tabulated(table, true).eval(0.7, 0.2), 2.0);
        let missing: String = csv.lines().take(9).collect::<Vec<_>>().join("\n");
        assert!(TabulatedKernel::from_csv(&missing, Interpolation::Step).is_err());
    }

    #[test]
    fn ids_are_stable_and_distinct() {
        let a = KernelSpec::ornstein_uhlenbeck(1.0).unwrap();
        let b = KernelSpec::ornstein_uhlenbeck(2.0).unwrap();
        assert_eq!(a.id(), a.clone().id());
        assert_ne!(a.id(), b.id());
    }
}
