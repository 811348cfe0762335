//! Fixed-ρ conjugate posterior of the BYM2 model.
//!
//! With `γ⋆ = (βᵀ, γᵀ)ᵀ` the posterior is
//! `N(γ⋆ | M⋆m⋆, σ²M⋆) × IG(σ² | a_n, b_n)`, where, writing `κ = (1−ρ)/ρ`,
//!
//! ```text
//! A  = XᵀX + (1−ρ)M₀⁻¹
//! B  = κV_φ⁻¹ + I − XA⁻¹Xᵀ
//! M⋆ = (1−ρ) [ A⁻¹ + A⁻¹XᵀB⁻¹XA⁻¹   −A⁻¹XᵀB⁻¹ ]
//!            [ −B⁻¹XA⁻¹              B⁻¹       ]
//! ```
//!
//! Under the flat β prior (`M₀⁻¹ = 0`) the simultaneous reduction of
//! `(V_φ⁻¹, I − H)` diagonalises `B`, and every ρ-dependent quantity becomes
//! a diagonal scaling in the reduced basis.
//!
//! Inverse-gamma laws use the shape–rate convention
//! `π(σ²) ∝ (σ²)^{−a−1} exp(−b/σ²)`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::CarStructure;
use crate::linalg::{cholesky_solve, cholesky_spd, simul_reduce, spd_inverse, symmetrize, SpectralBasis};
use crate::special::substream;

/// Normal–inverse-gamma prior on `(β, σ²)`; `γ | σ², ρ ~ N(0, σ²ρV_φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// `M₀⁻¹`; the zero matrix encodes the flat prior.
    pub m0_inverse: DMatrix<f64>,
    /// `m₀`, so that the prior mean of β is `M₀m₀`.
    pub m0: DVector<f64>,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl PriorSpec {
    pub fn flat(p: usize, a_sigma: f64, b_sigma: f64) -> Self {
        Self { m0_inverse: DMatrix::zeros(p, p), m0: DVector::zeros(p), a_sigma, b_sigma }
    }

    /// `M₀⁻¹ = ridge · I`, `m₀ = 0`.
    pub fn ridge(p: usize, ridge: f64, a_sigma: f64, b_sigma: f64) -> Self {
        Self { m0_inverse: DMatrix::identity(p, p) * ridge, m0: DVector::zeros(p), a_sigma, b_sigma }
    }

    pub fn is_flat(&self) -> bool {
        self.m0_inverse.iter().all(|&x| x == 0.0)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.a_sigma > 0.0 && self.b_sigma > 0.0) {
            return Err(param(format!(
                "inverse-gamma parameters must be positive (a={}, b={})",
                self.a_sigma, self.b_sigma
            )));
        }
        if self.m0_inverse.shape() != (p, p) || self.m0.len() != p {
            return Err(Error::Dimension(format!(
                "prior has M0^-1 {:?} and m0 of length {} for p = {p}",
                self.m0_inverse.shape(),
                self.m0.len()
            )));
        }
        if crate::linalg::relative_asymmetry(&self.m0_inverse) > 1e-12 {
            return Err(param("M0^-1 must be symmetric"));
        }
        if self.is_flat() && self.m0.iter().any(|&x| x != 0.0) {
            return Err(param("m0 must be zero under the flat beta prior"));
        }
        Ok(())
    }

    /// `M₀m₀` (the prior mean of β), zero when `m₀ = 0`.
    pub fn prior_mean(&self) -> Result<DVector<f64>> {
        if self.m0.iter().all(|&x| x == 0.0) {
            return Ok(DVector::zeros(self.m0.len()));
        }
        let r = cholesky_spd(&self.m0_inverse)?;
        cholesky_solve(&r, &self.m0)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(param(format!("rho must lie in (0,1), got {rho}")));
    }
    Ok(())
}

/// Reduced-basis quantities shared by every ρ under the flat prior.
#[derive(Debug, Clone)]
pub struct FlatCache {
    /// Simultaneous reduction of `(V_φ⁻¹, I − H)`.
    pub basis: SpectralBasis,
    /// OLS residual `e = (I − H)y`.
    pub e: DVector<f64>,
    /// `v = U⁻¹e`.
    pub v: DVector<f64>,
}

/// Data, prior, and ρ-independent factorizations of one BYM2 model.
#[derive(Debug, Clone)]
pub struct BymModel {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `V_φ⁻¹`.
    pub precision: DMatrix<f64>,
    pub prior: PriorSpec,
    pub xtx: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    /// Upper Cholesky factor of `XᵀX`.
    pub xtx_chol: DMatrix<f64>,
    pub flat: Option<FlatCache>,
}

impl BymModel {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, car: &CarStructure, prior: PriorSpec) -> Result<Arc<Self>> {
        let (n, p) = x.shape();
        if y.len() != n || car.n() != n {
            return Err(Error::Dimension(format!(
                "X is {n}x{p}, y has {} entries, CAR precision is {}x{}",
                y.len(),
                car.n(),
                car.n()
            )));
        }
        if p == 0 || p >= n {
            return Err(Error::Dimension(format!("need 0 < p < n, got p={p}, n={n}")));
        }
        prior.validate(p)?;
        let xtx = x.tr_mul(&x);
        let xtx_chol = cholesky_spd(&xtx).map_err(|_| Error::RankDeficient)?;
        let xtx_inv = spd_inverse(&xtx).map_err(|_| Error::RankDeficient)?;
        let flat = if prior.is_flat() {
            let mut proj = &x * &xtx_inv * x.transpose();
            proj.neg_mut();
            for i in 0..n {
                proj[(i, i)] += 1.0;
            }
            symmetrize(&mut proj);
            let mut precision = car.precision.clone();
            symmetrize(&mut precision);
            let basis = simul_reduce(&precision, &proj)?;
            if basis.zero_count() != p {
                log::warn!(
                    "reduced spectrum has {} zero eigenvalues, expected {p}",
                    basis.zero_count()
                );
            }
            let e = &y - &x * (&xtx_inv * x.tr_mul(&y));
            let v = basis.u_inverse_apply(&car.precision, &e);
            Some(FlatCache { basis, e, v })
        } else {
            None
        };
        Ok(Arc::new(Self { x, y, precision: car.precision.clone(), prior, xtx, xtx_inv, xtx_chol, flat }))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn a_n(&self) -> f64 {
        self.prior.a_sigma + self.n() as f64 / 2.0
    }

    pub fn basis(&self) -> Option<&SpectralBasis> {
        self.flat.as_ref().map(|f| &f.basis)
    }

    fn require_flat(&self) -> Result<&FlatCache> {
        self.flat
            .as_ref()
            .ok_or_else(|| param("operation requires the flat beta prior (M0^-1 = 0)"))
    }

    /// Fixed-ρ posterior.
    pub fn posterior(self: &Arc<Self>, rho: f64) -> Result<AugmentedPosterior> {
        check_rho(rho)?;
        let (n, p) = (self.n(), self.p());
        let kappa = (1.0 - rho) / rho;
        let m0 = &self.prior.m0;
        let mut m_star = DVector::zeros(n + p);
        m_star.rows_mut(0, p).copy_from(&(self.x.tr_mul(&self.y) / (1.0 - rho) + m0));
        m_star.rows_mut(p, n).copy_from(&(&self.y / (1.0 - rho)));

        if let Some(flat) = &self.flat {
            let d = &flat.basis.d;
            let g = DVector::from_fn(n, |j, _| if d[j] > 0.0 { d[j] / (d[j] + kappa) * flat.v[j] } else { 0.0 });
            let gamma_mean = &flat.basis.u * g;
            let beta_mean = &self.xtx_inv * self.x.tr_mul(&(&self.y - &gamma_mean));
            let quad: f64 = (0..n)
                .filter(|&j| d[j] > 0.0)
                .map(|j| flat.v[j] * flat.v[j] * d[j] / (rho * d[j] + 1.0 - rho))
                .sum();
            let b_n = self.prior.b_sigma + 0.5 * quad;
            return Ok(AugmentedPosterior {
                model: Arc::clone(self),
                rho,
                a_n: self.a_n(),
                b_n,
                m_star,
                beta_mean,
                gamma_mean,
                blocks: OnceLock::new(),
            });
        }

        // General prior: dense block formulas.
        let a = &self.xtx + &self.prior.m0_inverse * (1.0 - rho);
        let a_inv = spd_inverse(&a)?;
        let xa_inv = &self.x * &a_inv;
        let mut b = &self.precision * kappa - &xa_inv * self.x.transpose();
        for i in 0..n {
            b[(i, i)] += 1.0;
        }
        symmetrize(&mut b);
        let b_inv = spd_inverse(&b)?;
        let rhs = &self.y - &xa_inv * self.x.tr_mul(&self.y) - &xa_inv * m0 * (1.0 - rho);
        let gamma_mean = &b_inv * rhs;
        let beta_mean = &a_inv * (self.x.tr_mul(&(&self.y - &gamma_mean)) + m0 * (1.0 - rho));

        let prior_mean = self.prior.prior_mean()?;
        let resid = &self.y - &self.x * &beta_mean - &gamma_mean;
        let db = &beta_mean - prior_mean;
        let quad = resid.norm_squared() / (1.0 - rho)
            + db.dot(&(&self.prior.m0_inverse * &db))
            + gamma_mean.dot(&(&self.precision * &gamma_mean)) / rho;
        let b_n = self.prior.b_sigma + 0.5 * quad;

        let blocks = OnceLock::new();
        let _ = blocks.set(assemble_m_star(&a_inv, &xa_inv, &b_inv, rho));
        Ok(AugmentedPosterior {
            model: Arc::clone(self),
            rho,
            a_n: self.a_n(),
            b_n,
            m_star,
            beta_mean,
            gamma_mean,
            blocks,
        })
    }

    /// Log marginal likelihood `log p(y | ρ)` up to a ρ-free constant.
    ///
    /// Integrates γ, β (flat prior with the `(σ²)^{-p/2}` convention), and σ²
    /// in closed form; used as an independent oracle for the sampler.
    pub fn log_marginal_rho(&self, rho: f64) -> Result<f64> {
        check_rho(rho)?;
        self.require_flat()?;
        let n = self.n();
        let cov = spd_inverse(&self.precision)? * rho + DMatrix::identity(n, n) * (1.0 - rho);
        let r = cholesky_spd(&cov)?;
        let log_det_cov: f64 = 2.0 * (0..n).map(|i| r[(i, i)].ln()).sum::<f64>();
        let cov_inv = spd_inverse(&cov)?;
        let xt_ci = self.x.transpose() * &cov_inv;
        let info = &xt_ci * &self.x;
        let ri = cholesky_spd(&info)?;
        let log_det_info: f64 = 2.0 * (0..self.p()).map(|i| ri[(i, i)].ln()).sum::<f64>();
        let beta_gls = cholesky_solve(&ri, &(&xt_ci * &self.y))?;
        let resid = &self.y - &self.x * beta_gls;
        let q = resid.dot(&(&cov_inv * &resid));
        let b_n = self.prior.b_sigma + 0.5 * q;
        Ok(-0.5 * log_det_cov - 0.5 * log_det_info - self.a_n() * b_n.ln())
    }
}

fn assemble_m_star(a_inv: &DMatrix<f64>, xa_inv: &DMatrix<f64>, b_inv: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let p = a_inv.nrows();
    let n = b_inv.nrows();
    let z = b_inv * xa_inv; // B⁻¹XA⁻¹
    let bb = a_inv + xa_inv.tr_mul(&z);
    let mut m = DMatrix::zeros(n + p, n + p);
    m.view_mut((0, 0), (p, p)).copy_from(&bb);
    m.view_mut((p, 0), (n, p)).copy_from(&(-&z));
    m.view_mut((0, p), (p, n)).copy_from(&(-z.transpose()));
    m.view_mut((p, p), (n, n)).copy_from(b_inv);
    m *= 1.0 - rho;
    symmetrize(&mut m);
    m
}

/// Fixed-ρ conjugate posterior `N(M⋆m⋆, σ²M⋆) × IG(a_n, b_n)`.
///
/// Coordinates are ordered `(β, γ)`: the first `p` entries are β.
#[derive(Debug)]
pub struct AugmentedPosterior {
    pub model: Arc<BymModel>,
    pub rho: f64,
    pub a_n: f64,
    pub b_n: f64,
    /// `m⋆ = (Xᵀy/(1−ρ) + m₀, y/(1−ρ))`.
    pub m_star: DVector<f64>,
    pub beta_mean: DVector<f64>,
    pub gamma_mean: DVector<f64>,
    blocks: OnceLock<DMatrix<f64>>,
}

impl AugmentedPosterior {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn p(&self) -> usize {
        self.model.p()
    }

    pub fn kappa(&self) -> f64 {
        (1.0 - self.rho) / self.rho
    }

    pub fn basis(&self) -> Option<&SpectralBasis> {
        self.model.basis()
    }

    /// `M⋆m⋆`.
    pub fn mean(&self) -> DVector<f64> {
        let (n, p) = (self.n(), self.p());
        let mut out = DVector::zeros(n + p);
        out.rows_mut(0, p).copy_from(&self.beta_mean);
        out.rows_mut(p, n).copy_from(&self.gamma_mean);
        out
    }

    /// `M⋆`, formed on first use under the flat prior.
    pub fn m_star_matrix(&self) -> &DMatrix<f64> {
        self.blocks.get_or_init(|| {
            let model = &self.model;
            let flat = model.flat.as_ref().expect("general-prior blocks are formed eagerly");
            let kappa = self.kappa();
            let w = flat.basis.d.map(|d| 1.0 / (d + kappa));
            let b_inv = flat.basis.congruence(&w);
            let xa_inv = &model.x * &model.xtx_inv;
            assemble_m_star(&model.xtx_inv, &xa_inv, &b_inv, self.rho)
        })
    }

    /// `c_kᵀM⋆m⋆` and `c_kᵀM⋆c_k` for a contrast on `(β, γ)`.
    pub fn contrast_moments(&self, contrast: &DVector<f64>) -> Result<(f64, f64)> {
        if contrast.len() != self.n() + self.p() {
            return Err(Error::Dimension(format!(
                "contrast of length {} for a system of size {}",
                contrast.len(),
                self.n() + self.p()
            )));
        }
        let m = self.m_star_matrix();
        Ok((contrast.dot(&self.mean()), contrast.dot(&(m * contrast))))
    }

    /// Mean and variance scale of `γ_i − γ_j`, i.e. the contrast `(0_p, e_i − e_j)`.
    pub fn gamma_difference_moments(&self, i: usize, j: usize) -> (f64, f64) {
        let mean = self.gamma_mean[i] - self.gamma_mean[j];
        if let Some(basis) = self.basis() {
            let kappa = self.kappa();
            let var: f64 = (0..self.n())
                .map(|m| {
                    let diff = basis.u[(i, m)] - basis.u[(j, m)];
                    diff * diff * (1.0 - self.rho) / (basis.d[m] + kappa)
                })
                .sum();
            (mean, var)
        } else {
            let p = self.p();
            let m = self.m_star_matrix();
            let (a, b) = (p + i, p + j);
            (mean, m[(a, a)] + m[(b, b)] - 2.0 * m[(a, b)])
        }
    }
}

/// Mean and covariance blocks of `(β, γ) | y, σ², ρ`.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub beta_mean: DVector<f64>,
    pub gamma_mean: DVector<f64>,
    pub beta_cov: DMatrix<f64>,
    pub gamma_cov: DMatrix<f64>,
    /// `Cov(β, γ)`, `p × n`.
    pub cross_cov: DMatrix<f64>,
}

pub fn augmented_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    car: &CarStructure,
    rho: f64,
    prior: &PriorSpec,
) -> Result<AugmentedPosterior> {
    BymModel::new(x.clone(), y.clone(), car, prior.clone())?.posterior(rho)
}

pub fn conditional_moments(ap: &AugmentedPosterior, sigma2: f64) -> ConditionalMoments {
    let (n, p) = (ap.n(), ap.p());
    let m = ap.m_star_matrix();
    ConditionalMoments {
        beta_mean: ap.beta_mean.clone(),
        gamma_mean: ap.gamma_mean.clone(),
        beta_cov: m.view((0, 0), (p, p)) * sigma2,
        gamma_cov: m.view((p, p), (n, n)) * sigma2,
        cross_cov: m.view((0, p), (p, n)) * sigma2,
    }
}

/// `Var(φ | y, σ², ρ)`, which does not depend on σ².
pub fn phi_conditional_variance(ap: &AugmentedPosterior) -> DMatrix<f64> {
    if let Some(basis) = ap.basis() {
        let r = ap.rho / (1.0 - ap.rho);
        basis.congruence(&basis.d.map(|d| 1.0 / (1.0 + r * d)))
    } else {
        let (n, p) = (ap.n(), ap.p());
        ap.m_star_matrix().view((p, p), (n, n)) / ap.rho
    }
}

/// Endpoint at which [`limit_moments`] evaluates the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoLimit {
    RhoToZero,
    RhoToOne,
}

/// Limiting conditional moments and the limiting `IG(a_n, b_n)` law of σ².
#[derive(Debug, Clone)]
pub struct LimitMoments {
    pub moments: ConditionalMoments,
    pub a_n: f64,
    pub b_n: f64,
}

/// Closed-form limits of the flat-prior posterior as ρ → 0⁺ or ρ → 1⁻.
pub fn limit_moments(model: &BymModel, which: RhoLimit, sigma2: f64) -> Result<LimitMoments> {
    let flat = model.require_flat()?;
    let (n, p) = (model.n(), model.p());
    let basis = &flat.basis;
    let b = model.prior.b_sigma;
    let a_n = model.a_n();
    match which {
        RhoLimit::RhoToZero => Ok(LimitMoments {
            moments: ConditionalMoments {
                beta_mean: &model.xtx_inv * model.x.tr_mul(&model.y),
                gamma_mean: DVector::zeros(n),
                beta_cov: &model.xtx_inv * sigma2,
                gamma_cov: DMatrix::zeros(n, n),
                cross_cov: DMatrix::zeros(p, n),
            },
            a_n,
            b_n: b + 0.5 * flat.e.norm_squared(),
        }),
        RhoLimit::RhoToOne => {
            let star = basis.positive_indicator();
            let gamma_mean = &basis.u * flat.v.component_mul(&star);
            let beta_mean = &model.xtx_inv * model.x.tr_mul(&(&model.y - &gamma_mean));
            let v_lim = basis.congruence(&star.map(|s| 1.0 - s));
            let proj = &model.xtx_inv * model.x.transpose(); // (XᵀX)⁻¹Xᵀ
            let cross = -(&proj * &v_lim);
            let mut beta_cov = -(&cross * proj.transpose());
            symmetrize(&mut beta_cov);
            let quad: f64 = (0..n).map(|j| star[j] * flat.v[j] * flat.v[j]).sum();
            Ok(LimitMoments {
                moments: ConditionalMoments {
                    beta_mean,
                    gamma_mean,
                    beta_cov: beta_cov * sigma2,
                    gamma_cov: v_lim * sigma2,
                    cross_cov: cross * sigma2,
                },
                a_n,
                b_n: b + 0.5 * quad,
            })
        }
    }
}

/// How a set of posterior draws was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMethod {
    Exact,
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawMeta {
    pub seed: u64,
    pub method: DrawMethod,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Metropolis acceptance rate for ρ (MCMC only).
    pub acceptance_rate: Option<f64>,
}

/// Aligned posterior draws; row `t` of every array is draw `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    pub rho: Vec<f64>,
    pub meta: DrawMeta,
}

impl PosteriorDraws {
    /// Builds draws from `(β, γ, σ², ρ)`, deriving `φ = γ/(σ√ρ)`.
    pub fn from_parts(
        beta: DMatrix<f64>,
        gamma: DMatrix<f64>,
        sigma2: Vec<f64>,
        rho: Vec<f64>,
        meta: DrawMeta,
    ) -> Result<Self> {
        let len = sigma2.len();
        if beta.nrows() != len || gamma.nrows() != len || rho.len() != len {
            return Err(Error::Dimension("misaligned posterior draw arrays".into()));
        }
        let mut phi = gamma.clone();
        for t in 0..len {
            let scale = 1.0 / (sigma2[t].sqrt() * rho[t].sqrt());
            for mut col in phi.column_iter_mut() {
                col[t] *= scale;
            }
        }
        Ok(Self { beta, gamma, phi, sigma2, rho, meta })
    }

    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    pub fn n(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }

    /// Stacks draws from several chains in order.
    pub fn concat(parts: &[PosteriorDraws]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| param("no draws to concatenate"))?;
        let (n, p) = (first.n(), first.p());
        if parts.iter().any(|d| d.n() != n || d.p() != p) {
            return Err(Error::Dimension("chains disagree on dimensions".into()));
        }
        let total: usize = parts.iter().map(|d| d.len()).sum();
        let stack = |get: &dyn Fn(&PosteriorDraws) -> &DMatrix<f64>, cols: usize| {
            let mut out = DMatrix::zeros(total, cols);
            let mut row = 0;
            for part in parts {
                let m = get(part);
                out.view_mut((row, 0), (m.nrows(), cols)).copy_from(m);
                row += m.nrows();
            }
            out
        };
        let accepted: Option<f64> = parts
            .iter()
            .map(|d| d.meta.acceptance_rate.map(|r| r * d.len() as f64))
            .sum::<Option<f64>>()
            .map(|s| s / total as f64);
        Ok(Self {
            beta: stack(&|d| &d.beta, p),
            gamma: stack(&|d| &d.gamma, n),
            phi: stack(&|d| &d.phi, n),
            sigma2: parts.iter().flat_map(|d| d.sigma2.iter().cloned()).collect(),
            rho: parts.iter().flat_map(|d| d.rho.iter().cloned()).collect(),
            meta: DrawMeta {
                chains: parts.iter().map(|d| d.meta.chains).sum(),
                acceptance_rate: accepted,
                ..first.meta.clone()
            },
        })
    }
}

/// Draws `σ² ~ IG(a, b)` as the reciprocal of a `Gamma(a, rate b)` draw.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let g = Gamma::new(a, 1.0 / b).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

/// Exact joint draws from the fixed-ρ posterior.
pub fn exact_sample(ap: &AugmentedPosterior, draws: usize, seed: u64) -> Result<PosteriorDraws> {
    if draws == 0 {
        return Err(param("number of draws must be positive"));
    }
    let (n, p) = (ap.n(), ap.p());
    let r = cholesky_spd(ap.m_star_matrix())?;
    let mean = ap.mean();
    let mut rng = substream(seed, "exact");
    let mut beta = DMatrix::zeros(draws, p);
    let mut gamma = DMatrix::zeros(draws, n);
    let mut sigma2 = Vec::with_capacity(draws);
    let mut z = DVector::zeros(n + p);
    for t in 0..draws {
        let s2 = sample_inverse_gamma(&mut rng, ap.a_n, ap.b_n);
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let draw = &mean + r.tr_mul(&z) * s2.sqrt();
        for k in 0..p {
            beta[(t, k)] = draw[k];
        }
        for i in 0..n {
            gamma[(t, i)] = draw[p + i];
        }
        sigma2.push(s2);
    }
    let meta = DrawMeta {
        seed,
        method: DrawMethod::Exact,
        burn_in: 0,
        thin: 1,
        chains: 1,
        acceptance_rate: None,
    };
    PosteriorDraws::from_parts(beta, gamma, sigma2, vec![ap.rho; draws], meta)
}

/// Conjugate normal–inverse-gamma posterior of `y ~ N(Xβ, σ²V_y)`.
#[derive(Debug, Clone)]
pub struct LinearPosterior {
    /// Posterior scale matrix `M = (XᵀV_y⁻¹X + M₀⁻¹)⁻¹`.
    pub m: DMatrix<f64>,
    /// Posterior mean of β.
    pub mean: DVector<f64>,
    pub a_n: f64,
    pub b_n: f64,
}

pub fn linear_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    v_y: &DMatrix<f64>,
    prior: &PriorSpec,
) -> Result<LinearPosterior> {
    let (n, p) = x.shape();
    if y.len() != n || v_y.shape() != (n, n) {
        return Err(Error::Dimension("linear model inputs disagree".into()));
    }
    prior.validate(p)?;
    let v_inv = spd_inverse(v_y)?;
    let xt_vi = x.transpose() * &v_inv;
    let info = &xt_vi * x + &prior.m0_inverse;
    let m = spd_inverse(&info).map_err(|_| Error::RankDeficient)?;
    let mean = &m * (&xt_vi * y + &prior.m0);
    let resid = y - x * &mean;
    let db = &mean - prior.prior_mean()?;
    let quad = resid.dot(&(&v_inv * &resid)) + db.dot(&(&prior.m0_inverse * &db));
    Ok(LinearPosterior { m, mean, a_n: prior.a_sigma + n as f64 / 2.0, b_n: prior.b_sigma + 0.5 * quad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_car_precision, load_adjacency_reader};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cycle_instance(seed: u64) -> (DMatrix<f64>, DVector<f64>, CarStructure) {
        let g = load_adjacency_reader("a,b\nb,c\nc,d\nd,a\n".as_bytes()).unwrap().graph;
        let car = build_car_precision(&g, 0.9, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(4, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        (x, y, car)
    }

    #[test]
    fn a_n_for_single_observation_prior() {
        let prior = PriorSpec::ridge(1, 1.0, 0.3, 0.2);
        let g = load_adjacency_reader("a,b\n".as_bytes()).unwrap().graph;
        let car = build_car_precision(&g, 0.5, 1.0).unwrap();
        let x = DMatrix::from_element(2, 1, 1.0);
        let ap = augmented_posterior(&x, &DVector::from_vec(vec![1.0, 2.0]), &car, 0.4, &prior).unwrap();
        assert_eq!(ap.a_n, 0.3 + 1.0);
    }

    #[test]
    fn rejects_bad_rho_and_rank_deficiency() {
        let (x, y, car) = cycle_instance(1);
        let prior = PriorSpec::flat(2, 0.1, 0.1);
        assert!(augmented_posterior(&x, &y, &car, 1.0, &prior).is_err());
        assert!(augmented_posterior(&x, &y, &car, 0.0, &prior).is_err());
        let mut xd = x.clone();
        let c0 = xd.column(0).into_owned();
        xd.set_column(1, &(c0 * 2.0));
        assert!(matches!(augmented_posterior(&xd, &y, &car, 0.5, &prior), Err(Error::RankDeficient)));
    }

    #[test]
    fn flat_path_matches_general_path() {
        let (x, y, car) = cycle_instance(2);
        let flat = augmented_posterior(&x, &y, &car, 0.5, &PriorSpec::flat(2, 0.1, 0.1)).unwrap();
        // a vanishing ridge exercises the dense path at effectively the same prior
        let general = augmented_posterior(&x, &y, &car, 0.5, &PriorSpec::ridge(2, 1e-13, 0.1, 0.1)).unwrap();
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() / b.norm();
        assert!(rel(flat.m_star_matrix(), general.m_star_matrix()) < 1e-8);
        assert!((flat.mean() - general.mean()).norm() / general.mean().norm() < 1e-8);
        assert!((flat.b_n - general.b_n).abs() / general.b_n < 1e-8);
    }

    #[test]
    fn sigma_scaling_is_homogeneous() {
        let (x, y, car) = cycle_instance(3);
        let ap = augmented_posterior(&x, &y, &car, 0.6, &PriorSpec::flat(2, 0.1, 0.1)).unwrap();
        let m1 = conditional_moments(&ap, 1.5);
        let m2 = conditional_moments(&ap, 3.0);
        assert!((m1.gamma_cov * 2.0 - m2.gamma_cov).norm() < 1e-12);
        assert!((m1.beta_cov * 2.0 - m2.beta_cov).norm() < 1e-12);
        assert!((m1.cross_cov * 2.0 - m2.cross_cov).norm() < 1e-12);
        assert_eq!(m1.gamma_mean, m2.gamma_mean);
    }

    #[test]
    fn phi_variance_at_small_rho_is_prior() {
        let (x, y, car) = cycle_instance(4);
        let ap = augmented_posterior(&x, &y, &car, 1e-10, &PriorSpec::flat(2, 0.1, 0.1)).unwrap();
        let v = car.covariance().unwrap();
        assert!((phi_conditional_variance(&ap) - &v).norm() / v.norm() < 1e-6);
    }

    #[test]
    fn phi_identity_on_every_draw() {
        let (x, y, car) = cycle_instance(5);
        let ap = augmented_posterior(&x, &y, &car, 0.7, &PriorSpec::flat(2, 0.1, 0.1)).unwrap();
        let d = exact_sample(&ap, 200, 9).unwrap();
        for t in 0..d.len() {
            let s = (d.sigma2[t] * d.rho[t]).sqrt();
            for i in 0..d.n() {
                assert!((d.phi[(t, i)] * s - d.gamma[(t, i)]).abs() < 1e-12 * (1.0 + d.gamma[(t, i)].abs()));
            }
        }
        let again = exact_sample(&ap, 200, 9).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn gamma_difference_matches_m_star() {
        let (x, y, car) = cycle_instance(6);
        let ap = augmented_posterior(&x, &y, &car, 0.3, &PriorSpec::flat(2, 0.1, 0.1)).unwrap();
        let mut c = DVector::zeros(6);
        c[2 + 1] = 1.0;
        c[2 + 3] = -1.0;
        let (m, v) = ap.contrast_moments(&c).unwrap();
        let (m2, v2) = ap.gamma_difference_moments(1, 3);
        assert!((m - m2).abs() < 1e-12 && (v - v2).abs() < 1e-12 * v.abs().max(1.0));
    }

    #[test]
    fn rho_to_zero_limit_has_zero_gamma() {
        let (x, y, car) = cycle_instance(7);
        let model = BymModel::new(x, y, &car, PriorSpec::flat(2, 0.1, 0.1)).unwrap();
        let lim = limit_moments(&model, RhoLimit::RhoToZero, 1.0).unwrap();
        assert_eq!(lim.moments.gamma_mean.norm(), 0.0);
    }

    #[test]
    fn concat_stacks_rows() {
        let (x, y, car) = cycle_instance(8);
        let ap = augmented_posterior(&x, &y, &car, 0.5, &PriorSpec::flat(2, 0.1, 0.1)).unwrap();
        let a = exact_sample(&ap, 3, 1).unwrap();
        let b = exact_sample(&ap, 2, 2).unwrap();
        let c = PosteriorDraws::concat(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.gamma.row(3), b.gamma.row(0));
        assert_eq!(c.meta.chains, 2);
    }
}
