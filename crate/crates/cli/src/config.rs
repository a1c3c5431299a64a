//! Run configuration: a TOML file parsed strictly, then validated into the
//! core types.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use volterra_core::grid_hilbert::TimeGrid;
use volterra_core::kernels::{BumpShape, DerivativeMode, Interpolation, KernelSpec, TabulatedKernel};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Validate,
    Cov,
    Simulate,
    Lil,
    Localtime,
    Silt,
    Fw,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Validate => "validate",
            Self::Cov => "cov",
            Self::Simulate => "simulate",
            Self::Lil => "lil",
            Self::Localtime => "localtime",
            Self::Silt => "silt",
            Self::Fw => "fw",
            Self::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lil: Option<LilParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localtime: Option<LocaltimeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silt: Option<SiltParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fw: Option<FwParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Wiener,
    #[serde(alias = "bridge")]
    BrownianBridge,
    #[serde(alias = "ornstein_uhlenbeck")]
    Ou,
    #[serde(alias = "fractional_bm")]
    Fbm,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    /// fBm normalization; calibrated to `Var X(1) = 1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// CSV `t,s,value`, resolved against the config directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    /// Multiplies the whole kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub amplitude: f64,
    #[serde(default = "default_shape")]
    pub shape: String,
}

fn default_shape() -> String {
    BumpShape::Smooth.name().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Number of cells `M` of the uniform grid `t_i = i/M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
}

fn default_scheme() -> Scheme {
    Scheme::Uniform
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerChoice {
    Exact,
    Volterra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub n_paths: usize,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerChoice,
}

fn default_sampler() -> SamplerChoice {
    SamplerChoice::Volterra
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LilParams {
    pub n_paths: usize,
    #[serde(default = "default_lil_eps")]
    pub epsilons: Vec<f64>,
    /// Optional tail-decay check on a uniform grid of `tail_points` cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_points: Option<usize>,
}

fn default_lil_eps() -> Vec<f64> {
    vec![0.1, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocaltimeParams {
    pub n_paths: usize,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerChoice,
    /// Amplitudes for the kernel-continuity sweep; skipped when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub continuity_amplitudes: Vec<f64>,
    #[serde(default = "default_shape")]
    pub continuity_shape: String,
}

fn default_levels() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexChoice {
    Nested,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiltParams {
    pub n_paths: usize,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_simplex")]
    pub simplex: SimplexChoice,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub cutoff: f64,
}

fn default_k() -> usize {
    2
}

fn default_simplex() -> SimplexChoice {
    SimplexChoice::Nested
}

fn default_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwParams {
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub epsilon: f64,
    /// `h₁ = c₁ 1_{[0,1]}`, `h₂ = c₂ 1_{[0,1]}`.
    #[serde(default)]
    pub h1: f64,
    #[serde(default)]
    pub h2: f64,
    /// Multiplicities for the regularized integral; skipped when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regularized_k: Vec<usize>,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_cutoff() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseParams {
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default = "default_trials")]
    pub integrator_trials: usize,
}

fn default_zeta() -> f64 {
    1.0
}

fn default_trials() -> usize {
    1000
}

impl Default for DiagnoseParams {
    fn default() -> Self {
        Self {
            zeta: default_zeta(),
            integrator_trials: default_trials(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    /// Reads a config file; a relative kernel table is resolved against the
    /// file's directory so the echoed config stays self-contained.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(table) = &cfg.kernel.table {
            let p = Path::new(table);
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.kernel.table = Some(base.join(p).to_string_lossy().into_owned());
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks cross-field rules before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let blocks = [
            (Command::Simulate, self.simulate.is_some()),
            (Command::Lil, self.lil.is_some()),
            (Command::Localtime, self.localtime.is_some()),
            (Command::Silt, self.silt.is_some()),
            (Command::Fw, self.fw.is_some()),
            (Command::Diagnose, self.diagnose.is_some()),
        ];
        for (cmd, present) in blocks {
            if present && cmd != self.command {
                return Err(invalid(format!(
                    "[{}] block given for command {}",
                    cmd.name(),
                    self.command.name()
                )));
            }
        }
        let needs_block = |present: bool| {
            if present {
                Ok(())
            } else {
                Err(invalid(format!("command {} needs a [{0}] block", self.command.name())))
            }
        };
        match self.command {
            Command::Simulate => needs_block(self.simulate.is_some())?,
            Command::Lil => needs_block(self.lil.is_some())?,
            Command::Localtime => needs_block(self.localtime.is_some())?,
            Command::Silt => needs_block(self.silt.is_some())?,
            Command::Fw => needs_block(self.fw.is_some())?,
            _ => {}
        }
        self.validate_grid()?;
        self.kernel_spec()?;
        let positive_paths = |n: usize| {
            if n == 0 {
                Err(invalid("n_paths must be positive"))
            } else {
                Ok(())
            }
        };
        let positive_eps = |eps: &[f64]| {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                Err(invalid("epsilons must be a nonempty list of positive numbers"))
            } else {
                Ok(())
            }
        };
        if let Some(p) = &self.simulate {
            positive_paths(p.n_paths)?;
        }
        if let Some(p) = &self.lil {
            positive_paths(p.n_paths)?;
            if let Some(l) = &p.tail_lambdas {
                if p.tail_paths.is_none() || p.tail_points.is_none() {
                    return Err(invalid("tail_lambdas needs tail_paths and tail_points"));
                }
                if l.len() < 2 || l.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("tail_lambdas must be increasing with at least two values"));
                }
                if p.tail_paths.unwrap_or(0) < 10_000 {
                    return Err(invalid("tail_paths must be at least 10000"));
                }
            }
        }
        if let Some(p) = &self.localtime {
            positive_paths(p.n_paths)?;
            positive_eps(&p.epsilons)?;
            BumpShape::parse(&p.continuity_shape).map_err(|e| invalid(e.to_string()))?;
        }
        if let Some(p) = &self.silt {
            positive_paths(p.n_paths)?;
            positive_eps(&p.epsilons)?;
            if p.k < 2 || (p.simplex == SimplexChoice::Nested && p.k > 3) {
                return Err(invalid("silt k must be 2 or 3 for nested sums, ≥ 2 otherwise"));
            }
            if !(p.cutoff >= 0.0) {
                return Err(invalid("cutoff must be nonnegative"));
            }
        }
        if let Some(p) = &self.fw {
            positive_paths(p.n_paths)?;
            positive_eps(&[p.epsilon])?;
            if p.times.len() < 2 || p.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(invalid("fw times must be at least two values in [0,1]"));
            }
            if p.regularized_k.iter().any(|&k| k < 2) || (!p.regularized_k.is_empty() && !(p.cutoff > 0.0)) {
                return Err(invalid("regularized_k entries must be ≥ 2 with a positive cutoff"));
            }
        }
        if let Some(p) = &self.diagnose {
            if !(p.zeta > 0.0 && p.zeta < 2.0) {
                return Err(invalid("zeta must lie in (0,2)"));
            }
        }
        Ok(())
    }

    fn validate_grid(&self) -> Result<(), CliError> {
        let g = &self.grid;
        match g.scheme {
            Scheme::Uniform => {
                if self.command == Command::Lil {
                    return Err(invalid("lil runs on a geometric grid"));
                }
                if g.q.is_some() || g.n_min.is_some() || g.n_max.is_some() {
                    return Err(invalid("q, n_min and n_max belong to the geometric scheme"));
                }
                match g.points {
                    Some(m) if (2..=1 << 16).contains(&m) => Ok(()),
                    _ => Err(invalid("grid.points must be an integer in [2, 65536]")),
                }
            }
            Scheme::Geometric => {
                if self.command != Command::Lil {
                    return Err(invalid("the geometric scheme is only used by lil"));
                }
                let (Some(q), Some(lo), Some(hi)) = (g.q, g.n_min, g.n_max) else {
                    return Err(invalid("geometric grid needs q, n_min and n_max"));
                };
                if !(q > 0.0 && q < 1.0) || lo > hi || q.powi(lo as i32) >= (-1.0f64).exp() {
                    return Err(invalid(
                        "geometric grid needs 0 < q < 1, n_min ≤ n_max and q^n_min < 1/e",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn grid(&self) -> Result<Arc<TimeGrid>, CliError> {
        let m = self.grid.points.ok_or_else(|| invalid("grid.points is required"))?;
        Ok(TimeGrid::uniform(m)?.shared())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, CliError> {
        let k = &self.kernel;
        let only = |allowed: &[&str]| -> Result<(), CliError> {
            let given = [
                ("rate", k.rate.is_some()),
                ("hurst", k.hurst.is_some()),
                ("scale", k.scale.is_some()),
                ("table", k.table.is_some()),
                ("interpolation", k.interpolation.is_some()),
                ("stationary", k.stationary.is_some()),
            ];
            for (name, present) in given {
                if present && !allowed.contains(&name) {
                    return Err(invalid(format!("kernel key `{name}` does not apply to this family")));
                }
            }
            Ok(())
        };
        let mut spec = match k.family {
            Family::Wiener => {
                only(&[])?;
                KernelSpec::wiener()
            }
            Family::BrownianBridge => {
                only(&[])?;
                KernelSpec::brownian_bridge()
            }
            Family::Ou => {
                only(&["rate"])?;
                KernelSpec::ornstein_uhlenbeck(k.rate.ok_or_else(|| invalid("ou needs rate"))?)?
            }
            Family::Fbm => {
                only(&["hurst", "scale"])?;
                let h = k.hurst.ok_or_else(|| invalid("fbm needs hurst"))?;
                match k.scale {
                    Some(c) => KernelSpec::fractional_bm_with_scale(h, c)?,
                    None => KernelSpec::fractional_bm(h)?,
                }
            }
            Family::Tabulated => {
                only(&["table", "interpolation", "stationary"])?;
                let path = k
                    .table
                    .as_ref()
                    .ok_or_else(|| invalid("tabulated kernel needs table"))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| invalid(format!("cannot read kernel table {path}: {e}")))?;
                let interp = match k.interpolation.as_deref().unwrap_or("bilinear") {
                    "bilinear" => Interpolation::Bilinear,
                    "step" => Interpolation::Step,
                    other => return Err(invalid(format!("unknown interpolation `{other}`"))),
                };
                let table = TabulatedKernel::from_csv(&text, interp)?;
                KernelSpec::tabulated(table, k.stationary.unwrap_or(false))
            }
        };
        if let Some(p) = &k.perturbation {
            spec = KernelSpec::perturbed(spec, p.amplitude, BumpShape::parse(&p.shape)?)?;
        }
        if let Some(f) = k.factor {
            spec = KernelSpec::scaled(spec, f)?;
        }
        let mode = match (k.derivative.as_deref(), k.fd_step) {
            (None | Some("analytic"), None) => DerivativeMode::Analytic,
            (Some("fd" | "finite_difference"), step) => DerivativeMode::FiniteDifference {
                step: step.unwrap_or(DerivativeMode::DEFAULT_STEP),
            },
            (None | Some("analytic"), Some(_)) => return Err(invalid("fd_step needs derivative = \"fd\"")),
            (Some(other), _) => return Err(invalid(format!("unknown derivative mode `{other}`"))),
        };
        spec = spec.with_derivative(mode);
        spec.check()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COV: &str = r#"
command = "cov"
seed = 7
[kernel]
family = "wiener"
[grid]
points = 64
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse(COV).unwrap();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_fail_to_parse() {
        let text = COV.replace("points = 64", "points = 64\nbogus = 1");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Parse(_))));
        let text = COV.replace("seed = 7", "seed = 7\ncolour = \"red\"");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Parse(_))));
    }

    #[test]
    fn misplaced_blocks_fail_validation() {
        let text = format!("{COV}[silt]\nn_paths = 4\nepsilons = [0.1]\n");
        let cfg = RunConfig::parse(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Validation(_))));
        let text = COV.replace("\"wiener\"", "\"wiener\"\nrate = 1.0");
        assert!(matches!(
            RunConfig::parse(&text).unwrap().validate(),
            Err(CliError::Validation(_))
        ));
    }
}
