//! Metropolis-within-Gibbs sampler for `(β, γ, σ², ρ)` under a flat β prior
//! and a penalized-complexity prior on ρ.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::exact::{BymModel, DrawMeta, DrawMethod, PosteriorDraws, PriorSpec};
use crate::graph::CarStructure;
use crate::linalg::{cholesky_spd, triangular_solve, Side, SpectralBasis};

/// Cap on proposal redraws inside one ρ update.
pub const MAX_PROPOSAL_REDRAWS: usize = 1_000_000;

/// Hard bounds applied to ρ after every update.
pub const RHO_FLOOR: f64 = 1e-12;
pub const RHO_CEIL: f64 = 1.0 - 1e-12;

/// `d(ρ) = √(Σᵢ(ρ/λᵢ − log(ρ/λᵢ + 1 − ρ)) − nρ)` for the eigenvalues `λᵢ` of `V_φ⁻¹`.
pub fn pc_distance(rho: f64, lambda: &[f64]) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(param(format!("pc distance needs rho in [0,1), got {rho}")));
    }
    let mut total = 0.0;
    for &l in lambda {
        if !(l > 0.0) {
            return Err(param(format!("eigenvalue {l} is not positive")));
        }
        let t = rho / l;
        let arg = t + 1.0 - rho;
        if !(arg > 0.0) {
            return Err(Error::Numeric(format!("pc distance log argument {arg}")));
        }
        total += t - arg.ln();
    }
    let kld = total - lambda.len() as f64 * rho;
    // Rounding can push an exact zero slightly negative.
    Ok(kld.max(0.0).sqrt())
}

/// PC prior `π(ρ) ∝ λ exp(−λ d(ρ))` on (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcPrior {
    pub lambda_rho: f64,
    pub calibration_bound: f64,
    pub calibration_mass: f64,
    /// `d(ρ) ≡ 0`: the prior is uniform and λ is not identified.
    pub degenerate: bool,
}

impl PcPrior {
    pub fn new(lambda_rho: f64) -> Result<Self> {
        if !(lambda_rho > 0.0) {
            return Err(param(format!("lambda_rho must be positive, got {lambda_rho}")));
        }
        Ok(Self { lambda_rho, calibration_bound: f64::NAN, calibration_mass: f64::NAN, degenerate: false })
    }
}

fn integrate_prior(lambda_rho: f64, lambda: &[f64], upper: f64) -> f64 {
    quadrature::double_exponential::integrate(
        |r: f64| {
            let r = r.clamp(0.0, 1.0 - 1e-15);
            (-lambda_rho * pc_distance(r, lambda).unwrap_or(f64::INFINITY)).exp()
        },
        0.0,
        upper,
        1e-12,
    )
    .integral
}

/// `P(ρ ≤ bound)` under the PC prior with rate `lambda_rho`.
pub fn pc_prior_cdf(lambda_rho: f64, lambda: &[f64], bound: f64) -> f64 {
    integrate_prior(lambda_rho, lambda, bound) / integrate_prior(lambda_rho, lambda, 1.0)
}

/// Solves `P(ρ ≤ bound) = mass` for the PC-prior rate.
pub fn pc_prior_calibrate(lambda: &[f64], bound: f64, mass: f64) -> Result<PcPrior> {
    if !(bound > 0.0 && bound < 1.0 && mass > 0.0 && mass < 1.0) {
        return Err(param(format!("calibration bound {bound} and mass {mass} must lie in (0,1)")));
    }
    let d_max = (1..100)
        .map(|k| pc_distance(k as f64 / 100.0, lambda))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0_f64, f64::max);
    if d_max <= 1e-6 {
        if (bound - mass).abs() <= 1e-4 {
            return Ok(PcPrior { lambda_rho: 1.0, calibration_bound: bound, calibration_mass: mass, degenerate: true });
        }
        return Err(Error::Calibration(format!(
            "pc distance vanishes identically; P(rho <= {bound}) = {bound} for every rate, not {mass}"
        )));
    }
    let f = |lr: f64| pc_prior_cdf(lr, lambda, bound) - mass;
    let (lo_limit, hi_limit) = (1e-6, 1e6);
    let (mut lo, mut hi) = (1e-2, 1e-1);
    let (mut flo, mut fhi) = (f(lo), f(hi));
    while flo * fhi > 0.0 {
        if flo > 0.0 {
            // mass already exceeded at the lower end: move down
            if lo <= lo_limit {
                break;
            }
            hi = lo;
            fhi = flo;
            lo = (lo / 10.0).max(lo_limit);
            flo = f(lo);
        } else {
            if hi >= hi_limit {
                break;
            }
            lo = hi;
            flo = fhi;
            hi = (hi * 10.0).min(hi_limit);
            fhi = f(hi);
        }
    }
    if flo * fhi > 0.0 {
        return Err(Error::Calibration(format!(
            "no sign change of P(rho <= {bound}) - {mass} for lambda in [{lo_limit:e}, {hi_limit:e}]"
        )));
    }
    let mut conv = roots::SimpleConvergency { eps: 1e-12, max_iter: 200 };
    let root = roots::find_root_brent(lo, hi, f, &mut conv)
        .map_err(|e| Error::Calibration(format!("root search failed: {e:?}")))?;
    Ok(PcPrior { lambda_rho: root, calibration_bound: bound, calibration_mass: mass, degenerate: false })
}

/// Which form of the σ² and ρ kernels to use.
///
/// `Verbatim` uses the printed updates: σ² shape `a + n/2` with rate
/// `b + r²/(2(1−ρ))`, and the ρ log-acceptance without the proposal
/// Jacobian. `Corrected` targets the joint posterior exactly: σ² shape
/// `a + n + p/2`, rate `b + r²/(2(1−ρ)) + γᵀV_φ⁻¹γ/(2ρ)`, and the ρ
/// acceptance gains `log((1−ρ⋆)/(1−ρ))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    Verbatim,
    #[default]
    Corrected,
}

/// Sparse symmetric matrix in coordinate form, used for `γᵀV_φ⁻¹γ`.
#[derive(Debug, Clone)]
struct SparseSym {
    diag: Vec<f64>,
    upper: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let diag = (0..n).map(|i| m[(i, i)]).collect();
        let mut upper = Vec::new();
        for j in 0..n {
            for i in 0..j {
                let v = m[(i, j)];
                if v != 0.0 {
                    upper.push((i, j, v));
                }
            }
        }
        Self { diag, upper }
    }

    fn quad(&self, x: &DVector<f64>) -> f64 {
        let mut s: f64 = self.diag.iter().zip(x.iter()).map(|(d, v)| d * v * v).sum();
        for &(i, j, v) in &self.upper {
            s += 2.0 * v * x[i] * x[j];
        }
        s
    }
}

/// Quantities precomputed once per dataset.
#[derive(Debug, Clone)]
pub struct GibbsCache {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub basis: SpectralBasis,
    /// `M₁ = XᵀX`.
    pub m1: DMatrix<f64>,
    /// `R = chol(XᵀX)`, upper triangular.
    pub r: DMatrix<f64>,
    /// `M₂ = UᵀX`.
    pub m2: DMatrix<f64>,
    /// `m₁ = Xᵀy`.
    pub m1_vec: DVector<f64>,
    /// `m₂ = Uᵀy`.
    pub m2_vec: DVector<f64>,
    precision: SparseSym,
}

impl GibbsCache {
    pub fn new(model: &BymModel) -> Result<Self> {
        let basis = model
            .basis()
            .cloned()
            .ok_or_else(|| param("the sampler requires the flat beta prior"))?;
        Ok(Self {
            m2: basis.u.tr_mul(&model.x),
            m2_vec: basis.u.tr_mul(&model.y),
            m1: model.xtx.clone(),
            r: model.xtx_chol.clone(),
            m1_vec: model.x.tr_mul(&model.y),
            precision: SparseSym::from_dense(&model.precision),
            x: model.x.clone(),
            y: model.y.clone(),
            basis,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `γᵀV_φ⁻¹γ`.
    pub fn gamma_quad(&self, gamma: &DVector<f64>) -> f64 {
        self.precision.quad(gamma)
    }

    /// `‖y − Xβ − γ‖²`.
    pub fn residual_sq(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> f64 {
        (&self.y - &self.x * beta - gamma).norm_squared()
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Draws β from `N((XᵀX)⁻¹Xᵀ(y−γ), σ²(1−ρ)(XᵀX)⁻¹)`.
pub fn update_beta<R: Rng + ?Sized>(
    cache: &GibbsCache,
    gamma: &DVector<f64>,
    sigma2: f64,
    rho: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let z = normal_vec(rng, cache.p(), (sigma2 * (1.0 - rho)).sqrt());
    let rhs = &cache.m1_vec - cache.x.tr_mul(gamma);
    let vp = triangular_solve(&cache.r, &rhs, Side::Forward)?;
    triangular_solve(&cache.r, &(vp + z), Side::Backward)
}

/// Draws γ from `N(μ_γ, σ²(I/(1−ρ) + V_φ⁻¹/ρ)⁻¹)` in the reduced basis.
pub fn update_gamma<R: Rng + ?Sized>(
    cache: &GibbsCache,
    beta: &DVector<f64>,
    sigma2: f64,
    rho: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let basis = &cache.basis;
    let n = cache.n();
    // ρ/(1 + ρ(d − 1)) = 1/(d + κ)
    let s = basis.d.map(|d| rho / (1.0 + rho * (d - 1.0)));
    let scaled_m2 = DMatrix::from_fn(n, cache.p(), |i, k| s[i] * cache.m2[(i, k)]);
    let mut vp = &cache.m1 * beta + scaled_m2.tr_mul(&cache.m2_vec);
    let w = cholesky_spd(&(&cache.m1 + cache.m2.tr_mul(&scaled_m2)))?;
    vp = triangular_solve(&w, &vp, Side::Forward)?;
    vp = triangular_solve(&w, &vp, Side::Backward)?;
    let inner = (&cache.m2_vec - &cache.m2 * vp).component_mul(&s);
    let z = normal_vec(rng, n, sigma2.sqrt());
    let noise_scale =
        basis.lambda.map(|l| (rho * (1.0 - rho) / (rho + l * (1.0 - rho))).sqrt());
    Ok(&basis.u * inner + &basis.p * z.component_mul(&noise_scale))
}

/// Draws σ² given the current residual and spatial effects.
/// `ig` holds the prior `(a_σ², b_σ²)`.
#[allow(clippy::too_many_arguments)]
pub fn update_sigma_sq<R: Rng + ?Sized>(
    cache: &GibbsCache,
    ig: (f64, f64),
    rho: f64,
    r2: f64,
    gamma_quad: f64,
    variant: KernelVariant,
    rng: &mut R,
) -> f64 {
    let (n, p) = (cache.n() as f64, cache.p() as f64);
    let (shape, rate) = match variant {
        KernelVariant::Verbatim => (ig.0 + n / 2.0, ig.1 + r2 / (2.0 * (1.0 - rho))),
        KernelVariant::Corrected => (
            ig.0 + n + p / 2.0,
            ig.1 + r2 / (2.0 * (1.0 - rho)) + gamma_quad / (2.0 * rho),
        ),
    };
    let tau2 = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng);
    1.0 / tau2
}

/// Log acceptance ratio of a move `ρ → ρ⋆`.
#[allow(clippy::too_many_arguments)]
pub fn mh_log_acceptance(
    n: usize,
    rho: f64,
    rho_star: f64,
    pc_current: f64,
    pc_star: f64,
    lambda_rho: f64,
    gamma_quad: f64,
    sigma2: f64,
    variant: KernelVariant,
) -> f64 {
    let base = n as f64 / 2.0 * (rho / rho_star).ln()
        + lambda_rho * (pc_current - pc_star)
        + gamma_quad / (2.0 * sigma2) * (1.0 / rho - 1.0 / rho_star);
    match variant {
        KernelVariant::Verbatim => base,
        KernelVariant::Corrected => base + ((1.0 - rho_star) / (1.0 - rho)).ln(),
    }
}

/// Proposes `1 − ρ⋆ ~ IG(n/2, r²/(2σ²))` restricted to `ρ⋆ ∈ (0, 1)`.
pub fn propose_rho<R: Rng + ?Sized>(n: usize, r2: f64, sigma2: f64, rng: &mut R) -> Result<f64> {
    let rate = r2 / (2.0 * sigma2);
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Numeric(format!("rho proposal rate {rate}")));
    }
    let g = Gamma::new(n as f64 / 2.0, 1.0 / rate).map_err(|e| Error::Numeric(e.to_string()))?;
    for _ in 0..MAX_PROPOSAL_REDRAWS {
        let tau2 = g.sample(rng);
        let rho_star = 1.0 - 1.0 / tau2;
        if rho_star > 0.0 && rho_star < 1.0 {
            return Ok(rho_star);
        }
    }
    Err(Error::Numeric(format!("rho proposal exceeded {MAX_PROPOSAL_REDRAWS} redraws")))
}

/// Current sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub sigma2: f64,
    pub rho: f64,
    /// `‖y − Xβ − γ‖²` for the current `(β, γ)`.
    pub r2: f64,
    pub iteration: usize,
    pub accept_count: usize,
}

impl ChainState {
    pub fn r2_consistent(&self, cache: &GibbsCache, rel_tol: f64) -> bool {
        let fresh = cache.residual_sq(&self.beta, &self.gamma);
        (fresh - self.r2).abs() <= rel_tol * fresh.max(f64::MIN_POSITIVE)
    }
}

/// One ρ update; returns the new ρ and whether the proposal was accepted.
pub fn mh_update_rho<R: Rng + ?Sized>(
    cache: &GibbsCache,
    state: &ChainState,
    gamma_quad: f64,
    prior: &PcPrior,
    variant: KernelVariant,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let n = cache.n();
    let lambda = cache.basis.lambda.as_slice();
    let rho_star = propose_rho(n, state.r2, state.sigma2, rng)?;
    let c1 = pc_distance(state.rho, lambda)?;
    let c2 = pc_distance(rho_star, lambda)?;
    let log_alpha =
        mh_log_acceptance(n, state.rho, rho_star, c1, c2, prior.lambda_rho, gamma_quad, state.sigma2, variant);
    let u: f64 = rng.random();
    if u.ln() <= log_alpha {
        Ok((rho_star.clamp(RHO_FLOOR, RHO_CEIL), true))
    } else {
        Ok((state.rho, false))
    }
}

/// Starting values; `None` fields default to OLS β and γ = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub beta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub sigma2: f64,
    pub rho: f64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self { beta: None, gamma: None, sigma2: 1.0, rho: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    /// Total sweeps, including burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain_id: u64,
    pub initial: InitialState,
    pub pc_prior: PcPrior,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub variant: KernelVariant,
    /// Store γ and φ draws (off keeps only β, σ², ρ).
    pub keep_effects: bool,
}

impl McmcConfig {
    pub fn new(pc_prior: PcPrior, seed: u64) -> Self {
        Self {
            iterations: 40_000,
            burn_in: 10_000,
            thin: 1,
            seed,
            chain_id: 0,
            initial: InitialState::default(),
            pc_prior,
            a_sigma: 0.1,
            b_sigma: 0.1,
            variant: KernelVariant::default(),
            keep_effects: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(param(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(param("thin must be at least 1"));
        }
        if !(self.initial.rho > 0.0 && self.initial.rho < 1.0 && self.initial.sigma2 > 0.0) {
            return Err(param("initial rho must lie in (0,1) and sigma2 be positive"));
        }
        if !(self.a_sigma > 0.0 && self.b_sigma > 0.0) {
            return Err(param("inverse-gamma parameters must be positive"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// One full sweep: β, γ, r², σ², ρ.
pub fn sweep<R: Rng + ?Sized>(
    cache: &GibbsCache,
    state: &mut ChainState,
    config: &McmcConfig,
    rng: &mut R,
) -> Result<()> {
    let variant = config.variant;
    state.beta = update_beta(cache, &state.gamma, state.sigma2, state.rho, rng)?;
    state.gamma = update_gamma(cache, &state.beta, state.sigma2, state.rho, rng)?;
    state.r2 = cache.residual_sq(&state.beta, &state.gamma);
    let q = cache.gamma_quad(&state.gamma);
    state.sigma2 = update_sigma_sq(cache, (config.a_sigma, config.b_sigma), state.rho, state.r2, q, variant, rng);
    let (rho, accepted) = mh_update_rho(cache, state, q, &config.pc_prior, variant, rng)?;
    state.rho = rho;
    state.accept_count += accepted as usize;
    state.iteration += 1;
    Ok(())
}

fn initial_state(cache: &GibbsCache, init: &InitialState) -> Result<ChainState> {
    let (n, p) = (cache.n(), cache.p());
    let gamma = match &init.gamma {
        Some(g) if g.len() == n => DVector::from_column_slice(g),
        Some(g) => return Err(Error::Dimension(format!("initial gamma has {} entries, need {n}", g.len()))),
        None => DVector::zeros(n),
    };
    let beta = match &init.beta {
        Some(b) if b.len() == p => DVector::from_column_slice(b),
        Some(b) => return Err(Error::Dimension(format!("initial beta has {} entries, need {p}", b.len()))),
        None => {
            let w = triangular_solve(&cache.r, &cache.m1_vec, Side::Forward)?;
            triangular_solve(&cache.r, &w, Side::Backward)?
        }
    };
    let r2 = cache.residual_sq(&beta, &gamma);
    Ok(ChainState { beta, gamma, sigma2: init.sigma2, rho: init.rho, r2, iteration: 0, accept_count: 0 })
}

/// Runs one chain from a prepared cache.
pub fn run_chain_cached(cache: &GibbsCache, config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let (n, p) = (cache.n(), cache.p());
    let keep = config.retained();
    let effect_rows = if config.keep_effects { keep } else { 0 };
    let mut beta = DMatrix::zeros(keep, p);
    let mut gamma = DMatrix::zeros(effect_rows, n);
    let mut sigma2 = Vec::with_capacity(keep);
    let mut rho = Vec::with_capacity(keep);
    let mut rng: ChaCha8Rng = crate::special::indexed_substream(config.seed, "sampler", config.chain_id);
    let mut state = initial_state(cache, &config.initial)?;
    let mut stored = 0;
    for t in 0..config.iterations {
        sweep(cache, &mut state, config, &mut rng)
            .map_err(|e| Error::Sampler { iteration: t, message: e.to_string() })?;
        if !(state.sigma2.is_finite() && state.r2.is_finite()) {
            return Err(Error::Sampler { iteration: t, message: "non-finite state".into() });
        }
        if t >= config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            beta.set_row(stored, &state.beta.transpose());
            if config.keep_effects {
                gamma.set_row(stored, &state.gamma.transpose());
            }
            sigma2.push(state.sigma2);
            rho.push(state.rho);
            stored += 1;
        }
    }
    let meta = DrawMeta {
        seed: config.seed,
        method: DrawMethod::Mcmc,
        burn_in: config.burn_in,
        thin: config.thin,
        chains: 1,
        acceptance_rate: Some(state.accept_count as f64 / config.iterations as f64),
    };
    if config.keep_effects {
        PosteriorDraws::from_parts(beta, gamma, sigma2, rho, meta)
    } else {
        Ok(PosteriorDraws { beta, gamma: DMatrix::zeros(0, n), phi: DMatrix::zeros(0, n), sigma2, rho, meta })
    }
}

/// Runs one chain on `(X, y)` with the CAR structure `car`.
pub fn run_chain(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    car: &CarStructure,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    let model: Arc<BymModel> =
        BymModel::new(x.clone(), y.clone(), car, PriorSpec::flat(x.ncols(), config.a_sigma, config.b_sigma))?;
    run_chain_cached(&GibbsCache::new(&model)?, config)
}
