//! Run configuration: a single JSON document, unknown keys rejected.

use crate::error::{CliError, Result};
use disparity_core::disparity::EpsilonGrid;
use disparity_core::exact::PriorSpec;
use disparity_core::mcmc::KernelVariant;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub prior: PriorBlock,
    #[serde(default)]
    pub sampler: SamplerBlock,
    #[serde(default)]
    pub decision: DecisionBlock,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Edge-list CSV. For `simulate` with a lattice block this is written, not read.
    pub adjacency: PathBuf,
    pub data: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `draws.csv` or `draws.bin` in the output directory.
    #[serde(default)]
    pub draws: Option<PathBuf>,
    /// Truth CSV (`region_i,region_j,std_diff`) for classification metrics.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalingFactor {
    Value(f64),
    Keyword(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Fixed(f64),
    Keyword(PcKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcKeyword {
    #[serde(rename = "pc-prior")]
    PcPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub alpha: f64,
    pub c: ScalingFactor,
    pub rho: RhoSpec,
    /// PC calibration: `Pr(ρ < bound) = mass`.
    pub pc_bound: f64,
    pub pc_mass: f64,
    /// Overrides the calibrated rate.
    pub pc_lambda: Option<f64>,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            c: ScalingFactor::Keyword(Auto::Auto),
            rho: RhoSpec::Keyword(PcKeyword::PcPrior),
            pc_bound: 0.5,
            pc_mass: 2.0 / 3.0,
            pc_lambda: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaPrior {
    Flat,
    Ridge(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorBlock {
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub beta: BetaPrior,
}

impl Default for PriorBlock {
    fn default() -> Self {
        Self { a_sigma: 0.1, b_sigma: 0.1, beta: BetaPrior::Flat }
    }
}

impl PriorBlock {
    pub fn spec(&self, p: usize) -> PriorSpec {
        match self.beta {
            BetaPrior::Flat => PriorSpec::flat(p, self.a_sigma, self.b_sigma),
            BetaPrior::Ridge(v) => PriorSpec::ridge(p, v, self.a_sigma, self.b_sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawsFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerBlock {
    /// Total sweeps per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub kernel: KernelVariant,
    pub draws_format: DrawsFormat,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        Self {
            iterations: 40_000,
            burn_in: 10_000,
            thin: 1,
            seed: 1,
            chains: 1,
            kernel: KernelVariant::default(),
            draws_format: DrawsFormat::Csv,
        }
    }
}

impl SamplerBlock {
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Value(f64),
    Keyword(EntropyKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyKeyword {
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionBlock {
    pub epsilon: EpsilonSpec,
    pub delta: f64,
    pub grid: EpsilonGrid,
}

impl Default for DecisionBlock {
    fn default() -> Self {
        Self { epsilon: EpsilonSpec::Keyword(EntropyKeyword::Entropy), delta: 0.05, grid: EpsilonGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateBlock {
    /// Generate a lattice and write it to `paths.adjacency` instead of reading one.
    pub lattice: Option<LatticeSpec>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        use disparity_core::simulate::{DEFAULT_BETA, DEFAULT_RHO, DEFAULT_SIGMA2};
        Self { lattice: None, beta: DEFAULT_BETA.to_vec(), sigma2: DEFAULT_SIGMA2, rho: DEFAULT_RHO, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsBlock {
    pub rho_grid: Vec<f64>,
    /// Monte Carlo draws of σ² per lppd evaluation.
    pub lppd_draws: usize,
    /// Moran's I / Geary's C on OLS residuals; `None` skips them.
    pub permutations: Option<usize>,
    /// Compare decisions with `paths.truth`.
    pub classification: bool,
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self { rho_grid: vec![0.5, 0.9, 0.99, 0.999], lppd_draws: 4_000, permutations: None, classification: false }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks on every numeric field.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.alpha > 0.0 && m.alpha < 1.0) {
            return Err(bad(format!("model.alpha must lie in (0,1), got {}", m.alpha)));
        }
        if let ScalingFactor::Value(c) = m.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(bad(format!("model.c must be positive, got {c}")));
            }
        }
        if let RhoSpec::Fixed(r) = m.rho {
            if !(r > 0.0 && r < 1.0) {
                return Err(bad(format!("model.rho must lie in (0,1), got {r}")));
            }
        }
        if !(m.pc_bound > 0.0 && m.pc_bound < 1.0 && m.pc_mass > 0.0 && m.pc_mass < 1.0) {
            return Err(bad("model.pc_bound and model.pc_mass must lie in (0,1)"));
        }
        if let Some(l) = m.pc_lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(bad(format!("model.pc_lambda must be positive, got {l}")));
            }
        }
        let p = &self.prior;
        if !(p.a_sigma > 0.0 && p.b_sigma > 0.0) {
            return Err(bad("prior.a_sigma and prior.b_sigma must be positive"));
        }
        if let BetaPrior::Ridge(v) = p.beta {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(format!("prior.beta ridge variance must be positive, got {v}")));
            }
            if matches!(m.rho, RhoSpec::Keyword(_)) {
                return Err(bad("the pc-prior sampler supports only a flat beta prior"));
            }
        }
        let s = &self.sampler;
        if s.iterations <= s.burn_in || s.thin == 0 || s.chains == 0 {
            return Err(bad("sampler needs iterations > burn_in, thin >= 1 and chains >= 1"));
        }
        let d = &self.decision;
        if !(d.delta > 0.0 && d.delta < 1.0) {
            return Err(bad(format!("decision.delta must lie in (0,1), got {}", d.delta)));
        }
        if let EpsilonSpec::Value(e) = d.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(bad(format!("decision.epsilon must be positive, got {e}")));
            }
        }
        d.grid.values().map_err(|e| bad(e.to_string()))?;
        if let Some(sim) = &self.simulate {
            if sim.beta.is_empty() || !(sim.sigma2 > 0.0) || !(0.0..=1.0).contains(&sim.rho) {
                return Err(bad("simulate needs a nonempty beta, sigma2 > 0 and rho in [0,1]"));
            }
            if let Some(l) = &sim.lattice {
                if l.rows * l.cols < 2 {
                    return Err(bad("simulate.lattice needs at least two cells"));
                }
            }
        }
        let g = &self.diagnostics;
        if g.rho_grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(bad("diagnostics.rho_grid values must lie in (0,1)"));
        }
        if g.lppd_draws == 0 || g.permutations == Some(0) {
            return Err(bad("diagnostics.lppd_draws and diagnostics.permutations must be positive"));
        }
        Ok(())
    }

    pub fn draws_path(&self) -> PathBuf {
        self.paths.draws.clone().unwrap_or_else(|| {
            self.paths.output_dir.join(match self.sampler.draws_format {
                DrawsFormat::Csv => "draws.csv",
                DrawsFormat::Binary => "draws.bin",
            })
        })
    }
}

/// Fails with a config error when an input file is missing.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(bad(format!("{what} file {} does not exist", path.display())))
    }
}
