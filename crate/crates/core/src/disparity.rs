//! ε-difference probabilities, entropy-based ε selection, and the Bayesian
//! FDR decision rule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{param, Error, Result};
use crate::exact::{AugmentedPosterior, PosteriorDraws};
use crate::linalg::SpectralBasis;
use crate::special::{golden_section, norm_cdf, CompositeRule};

/// Cutoff reported when no threshold satisfies the FDR bound.
pub const NO_THRESHOLD: f64 = 1.0 + f64::EPSILON;

/// How a set of probabilities was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    MonteCarlo,
    Quadrature,
}

/// Per-pair ε-difference probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsDiffEstimate {
    pub pairs: Vec<(usize, usize)>,
    pub epsilon: f64,
    pub v: Vec<f64>,
    pub method: EstimateMethod,
    pub mc_draws: usize,
    /// Set when every draw shares one ρ, so the values are `h(ε; ρ)`.
    pub conditioned_rho: Option<f64>,
}

/// Per-pair variance `a_ijᵀ Var(φ | y, σ², ρ) a_ij` as a function of ρ.
#[derive(Debug, Clone)]
pub enum Standardizer {
    /// `Σ_m (U_im − U_jm)² / (1 + d_m ρ/(1−ρ))` from the flat-prior reduction.
    Spectral { g: DMatrix<f64>, d: DVector<f64> },
    /// Values precomputed at a single ρ.
    Fixed { rho: f64, values: Vec<f64> },
}

impl Standardizer {
    pub fn spectral(basis: &SpectralBasis, pairs: &[(usize, usize)]) -> Result<Self> {
        let n = basis.dim();
        check_pairs(pairs, n)?;
        let g = DMatrix::from_fn(pairs.len(), n, |k, m| {
            let (i, j) = pairs[k];
            let diff = basis.u[(i, m)] - basis.u[(j, m)];
            diff * diff
        });
        Ok(Standardizer::Spectral { g, d: basis.d.clone() })
    }

    /// Uses the spectral form when available, otherwise the dense `Var(φ)` at the posterior's ρ.
    pub fn from_posterior(ap: &AugmentedPosterior, pairs: &[(usize, usize)]) -> Result<Self> {
        if let Some(basis) = ap.basis() {
            return Self::spectral(basis, pairs);
        }
        check_pairs(pairs, ap.n())?;
        let var = crate::exact::phi_conditional_variance(ap);
        let values = pairs.iter().map(|&(i, j)| var[(i, i)] + var[(j, j)] - 2.0 * var[(i, j)]).collect();
        Ok(Standardizer::Fixed { rho: ap.rho, values })
    }

    pub fn len(&self) -> usize {
        match self {
            Standardizer::Spectral { g, .. } => g.nrows(),
            Standardizer::Fixed { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-pair variances for each ρ in `rhos` (`K × rhos.len()`).
    pub fn values(&self, rhos: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            Standardizer::Spectral { g, d } => {
                let w = DMatrix::from_fn(d.len(), rhos.len(), |m, t| {
                    let r = rhos[t] / (1.0 - rhos[t]);
                    1.0 / (1.0 + r * d[m])
                });
                Ok(g * w)
            }
            Standardizer::Fixed { rho, values } => {
                if let Some(bad) = rhos.iter().find(|&&r| r != *rho) {
                    return Err(param(format!(
                        "fixed standardizer built at rho={rho} cannot be evaluated at rho={bad}"
                    )));
                }
                Ok(DMatrix::from_fn(values.len(), rhos.len(), |k, _| values[k]))
            }
        }
    }
}

fn check_pairs(pairs: &[(usize, usize)], n: usize) -> Result<()> {
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n || i == j) {
        return Err(param(format!("pair ({i}, {j}) is invalid for {n} regions")));
    }
    Ok(())
}

/// Sorted standardized differences `|φ_i − φ_j| / √s_ij(ρ)` per pair, shared
/// across every ε (common random numbers).
#[derive(Debug, Clone)]
pub struct StandardizedDifferences {
    pub pairs: Vec<(usize, usize)>,
    /// One ascending vector per pair.
    sorted: Vec<Vec<f64>>,
    draws: usize,
    conditioned_rho: Option<f64>,
}

const RHO_CHUNK: usize = 1024;

impl StandardizedDifferences {
    pub fn new(draws: &PosteriorDraws, pairs: &[(usize, usize)], standardizer: &Standardizer) -> Result<Self> {
        if draws.is_empty() || draws.phi.nrows() != draws.len() {
            return Err(param("posterior draws with phi are required"));
        }
        check_pairs(pairs, draws.n())?;
        if standardizer.len() != pairs.len() {
            return Err(Error::Dimension(format!(
                "standardizer covers {} pairs, {} requested",
                standardizer.len(),
                pairs.len()
            )));
        }
        let total = draws.len();
        // Draw t uses column index[t] of the distinct-ρ table.
        let mut distinct: Vec<f64> = Vec::new();
        let mut index = Vec::with_capacity(total);
        for &r in &draws.rho {
            if distinct.last() != Some(&r) {
                distinct.push(r);
            }
            index.push(distinct.len() - 1);
        }
        let k_pairs = pairs.len();
        let mut inv_sd: Vec<Vec<f64>> = vec![Vec::with_capacity(distinct.len()); k_pairs];
        for chunk in distinct.chunks(RHO_CHUNK) {
            let s = standardizer.values(chunk)?;
            for (k, row) in inv_sd.iter_mut().enumerate() {
                row.extend((0..chunk.len()).map(|c| 1.0 / s[(k, c)].sqrt()));
            }
        }
        let sorted: Vec<Vec<f64>> = pairs
            .par_iter()
            .zip(inv_sd.par_iter())
            .map(|(&(i, j), inv)| {
                let (ci, cj) = (draws.phi.column(i), draws.phi.column(j));
                let mut z: Vec<f64> = (0..total).map(|t| (ci[t] - cj[t]).abs() * inv[index[t]]).collect();
                z.sort_by(f64::total_cmp);
                z
            })
            .collect();
        let conditioned_rho = if distinct.iter().all(|&r| r == distinct[0]) { Some(distinct[0]) } else { None };
        Ok(Self { pairs: pairs.to_vec(), sorted, draws: total, conditioned_rho })
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// `v̂_k(ε)`: fraction of draws whose standardized difference exceeds ε.
    pub fn probabilities(&self, epsilon: f64) -> Vec<f64> {
        let n = self.draws as f64;
        self.sorted
            .iter()
            .map(|z| {
                let at_most = z.partition_point(|&x| x <= epsilon);
                (z.len() - at_most) as f64 / n
            })
            .collect()
    }

    pub fn estimate(&self, epsilon: f64) -> Result<EpsDiffEstimate> {
        if !(epsilon > 0.0) {
            return Err(param(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(EpsDiffEstimate {
            pairs: self.pairs.clone(),
            epsilon,
            v: self.probabilities(epsilon),
            method: EstimateMethod::MonteCarlo,
            mc_draws: self.draws,
            conditioned_rho: self.conditioned_rho,
        })
    }
}

/// Monte Carlo ε-difference probabilities for the given pairs.
pub fn estimate_diff_probs(
    draws: &PosteriorDraws,
    pairs: &[(usize, usize)],
    epsilon: f64,
    standardizer: &Standardizer,
) -> Result<EpsDiffEstimate> {
    StandardizedDifferences::new(draws, pairs, standardizer)?.estimate(epsilon)
}

/// Fixed quadrature rule for `E_τ[g(√τ)]` with `τ = 1/σ² ~ Gamma(a_n, rate b_n)`,
/// integrated in `u = log τ`.
#[derive(Debug, Clone)]
pub struct PrecisionQuadrature {
    /// `√τ` at each node.
    pub sqrt_tau: Vec<f64>,
    /// Node weights including the density; they sum to one.
    pub weights: Vec<f64>,
}

const H_TOL: f64 = 1e-10;

impl PrecisionQuadrature {
    pub fn new(a_n: f64, b_n: f64) -> Result<Self> {
        if !(a_n > 0.0 && b_n > 0.0) {
            return Err(param(format!("gamma parameters must be positive (a={a_n}, b={b_n})")));
        }
        let mode = (a_n / b_n).ln();
        let lo = mode - 40.0 / a_n - 10.0 / a_n.sqrt();
        let hi = mode + (8.0 / a_n.sqrt()).max((1.0 + 40.0 / a_n).ln() + 1.0);
        let log_norm = a_n * b_n.ln() - ln_gamma(a_n);
        let build = |panels: usize| {
            let rule = CompositeRule::new(lo, hi, panels, 20);
            let weights: Vec<f64> = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&u, &w)| w * (log_norm + a_n * u - b_n * u.exp()).exp())
                .collect();
            let sqrt_tau: Vec<f64> = rule.nodes.iter().map(|&u| (0.5 * u).exp()).collect();
            Self { sqrt_tau, weights }
        };
        let probe = |q: &Self| -> Vec<f64> {
            let mut out = vec![q.weights.iter().sum::<f64>()];
            let scale = (b_n / a_n).sqrt();
            for alpha in [0.3, 1.0, 3.0, 10.0] {
                out.push(q.h(alpha * scale, 1.0));
            }
            out
        };
        let mut panels = 4;
        let mut current = build(panels);
        let mut values = probe(&current);
        while panels < 1 << 14 {
            panels *= 2;
            let next = build(panels);
            let next_values = probe(&next);
            let change = values.iter().zip(&next_values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            current = next;
            values = next_values;
            if change < H_TOL {
                return Ok(current);
            }
        }
        Err(Error::Numeric("precision quadrature did not converge".into()))
    }

    /// `E[Φ(−ε + α√τ) + Φ(−ε − α√τ)]`.
    pub fn h(&self, alpha: f64, epsilon: f64) -> f64 {
        let s: f64 = self
            .sqrt_tau
            .iter()
            .zip(&self.weights)
            .map(|(&st, &w)| w * (norm_cdf(-epsilon + alpha * st) + norm_cdf(-epsilon - alpha * st)))
            .sum();
        s.clamp(0.0, 1.0)
    }
}

/// `h_k(ε; ρ) = P(|c_kᵀγ⋆| / (σ√(c_kᵀM⋆c_k)) > ε | y, ρ)`.
pub fn closed_form_h(ap: &AugmentedPosterior, contrast: &DVector<f64>, epsilon: f64) -> Result<f64> {
    if contrast.norm() == 0.0 {
        return Err(param("contrast must be nonzero"));
    }
    let (mean, var) = ap.contrast_moments(contrast)?;
    let q = PrecisionQuadrature::new(ap.a_n, ap.b_n)?;
    Ok(q.h(mean / var.sqrt(), epsilon))
}

/// Quadrature `h_ij(ε; ρ)` for many neighbour pairs sharing one rule.
#[derive(Debug, Clone)]
pub struct QuadratureH {
    pub pairs: Vec<(usize, usize)>,
    /// `α_k = c_kᵀM⋆m⋆ / √(c_kᵀM⋆c_k)`.
    pub alpha: Vec<f64>,
    pub rho: f64,
    rule: PrecisionQuadrature,
}

impl QuadratureH {
    pub fn new(ap: &AugmentedPosterior, pairs: &[(usize, usize)]) -> Result<Self> {
        check_pairs(pairs, ap.n())?;
        let alpha = pairs
            .iter()
            .map(|&(i, j)| {
                let (m, v) = ap.gamma_difference_moments(i, j);
                m / v.sqrt()
            })
            .collect();
        Ok(Self { pairs: pairs.to_vec(), alpha, rho: ap.rho, rule: PrecisionQuadrature::new(ap.a_n, ap.b_n)? })
    }

    pub fn probabilities(&self, epsilon: f64) -> Vec<f64> {
        self.alpha.par_iter().map(|&a| self.rule.h(a, epsilon)).collect()
    }

    pub fn estimate(&self, epsilon: f64) -> EpsDiffEstimate {
        EpsDiffEstimate {
            pairs: self.pairs.clone(),
            epsilon,
            v: self.probabilities(epsilon),
            method: EstimateMethod::Quadrature,
            mc_draws: 0,
            conditioned_rho: Some(self.rho),
        }
    }
}

/// `Σ v log v + (1 − v) log(1 − v)` with `0 log 0 = 0`.
pub fn entropy_loss(v: &[f64]) -> f64 {
    let xlogx = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    v.iter().map(|&p| xlogx(p) + xlogx(1.0 - p)).sum()
}

/// ε grid specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default = "default_log_spaced")]
    pub log_spaced: bool,
}

fn default_log_spaced() -> bool {
    true
}

impl Default for EpsilonGrid {
    fn default() -> Self {
        Self { min: 1e-2, max: 10.0, points: 200, log_spaced: true }
    }
}

impl EpsilonGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2 {
            return Err(param("epsilon grid needs at least two points"));
        }
        if !(self.min > 0.0 && self.max > self.min) {
            return Err(param(format!("epsilon grid bounds [{}, {}] are invalid", self.min, self.max)));
        }
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|k| {
                let f = k as f64 / last;
                if self.log_spaced {
                    (self.min.ln() + f * (self.max.ln() - self.min.ln())).exp()
                } else {
                    self.min + f * (self.max - self.min)
                }
            })
            .collect())
    }
}

/// Entropy-loss scan over ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyScan {
    pub epsilon_grid: Vec<f64>,
    pub loss: Vec<f64>,
    pub epsilon_ce: f64,
    pub loss_ce: f64,
    /// The loss did not vary over the grid; `epsilon_ce` is the grid midpoint.
    pub flat: bool,
}

/// Minimises the conditional entropy loss over ε: grid scan, then golden-section refinement.
pub fn select_epsilon_ce(prob_fn: &(dyn Fn(f64) -> Vec<f64> + Sync), grid: &EpsilonGrid) -> Result<EntropyScan> {
    let eps = grid.values()?;
    let loss: Vec<f64> = eps.par_iter().map(|&e| entropy_loss(&prob_fn(e))).collect();
    let (k_min, &l_min) = loss
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty");
    let l_max = loss.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if l_max - l_min <= 1e-12 * (1.0 + l_min.abs()) {
        let mid = (eps.len() - 1) / 2;
        return Ok(EntropyScan {
            epsilon_ce: eps[mid],
            loss_ce: loss[mid],
            epsilon_grid: eps,
            loss,
            flat: true,
        });
    }
    let lo = eps[k_min.saturating_sub(1)];
    let hi = eps[(k_min + 1).min(eps.len() - 1)];
    let refined = golden_section(|e| entropy_loss(&prob_fn(e)), lo, hi, 1e-3);
    let (epsilon_ce, loss_ce) =
        if refined.value <= l_min { (refined.x, refined.value) } else { (eps[k_min], l_min) };
    Ok(EntropyScan { epsilon_grid: eps, loss, epsilon_ce, loss_ce, flat: false })
}

/// Bayesian FDR of declaring every pair with `v ≥ t`; zero when nothing is declared.
pub fn bayes_fdr(v: &[f64], t: f64) -> f64 {
    let (num, count) = v
        .iter()
        .filter(|&&p| p >= t)
        .fold((0.0, 0usize), |(s, c), &p| (s + (1.0 - p), c + 1));
    if count == 0 {
        0.0
    } else {
        num / count as f64
    }
}

/// Bayesian FNR of leaving every pair with `v < t` undeclared; zero when all are declared.
pub fn bayes_fnr(v: &[f64], t: f64) -> f64 {
    let (num, count) = v.iter().filter(|&&p| p < t).fold((0.0, 0usize), |(s, c), &p| (s + p, c + 1));
    if count == 0 {
        0.0
    } else {
        num / count as f64
    }
}

/// Declarations `d_k = I(v_k ≥ t*)` at the FDR-controlling cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSet {
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub t_star: f64,
    pub decisions: Vec<bool>,
    pub fdr_at_cutoff: f64,
    pub fnr_at_cutoff: f64,
    pub declared_count: usize,
    /// No cutoff in [0, 1] achieves FDR ≤ δ.
    pub no_threshold: bool,
}

/// Smallest cutoff among the distinct values of `v` with `FDR ≤ δ`.
pub fn select_threshold(v: &[f64], delta: f64) -> Result<DecisionSet> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(param(format!("delta must lie in (0,1), got {delta}")));
    }
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // Walk cutoffs from high to low; FDR is nonincreasing in t, so the last
    // admissible cutoff seen is the smallest one.
    let mut best: Option<(f64, f64)> = None;
    let mut sum_miss = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k];
        while k < sorted.len() && sorted[k] == t {
            sum_miss += 1.0 - sorted[k];
            k += 1;
        }
        let fdr = sum_miss / k as f64;
        if fdr <= delta {
            best = Some((t, fdr));
        }
    }
    let (t_star, fdr_at_cutoff, no_threshold) = match best {
        Some((t, fdr)) => (t, fdr, false),
        None => (NO_THRESHOLD, 0.0, true),
    };
    let decisions: Vec<bool> = v.iter().map(|&p| p >= t_star).collect();
    Ok(DecisionSet {
        epsilon: None,
        delta,
        t_star,
        declared_count: decisions.iter().filter(|&&d| d).count(),
        decisions,
        fdr_at_cutoff,
        fnr_at_cutoff: bayes_fnr(v, t_star),
        no_threshold,
    })
}

/// `(t, FDR(t), FNR(t))` at every distinct value of `v`, ascending in t.
pub fn fdr_fnr_curve(v: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = v.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter().map(|t| (t, bayes_fdr(v, t), bayes_fnr(v, t))).collect()
}

/// Kendall rank agreement between the rankings at two ε values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEntry {
    pub epsilon_a: f64,
    pub epsilon_b: f64,
    pub tau: f64,
    pub discordant: usize,
    pub tied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStabilityReport {
    pub epsilons: Vec<f64>,
    pub taus: Vec<TauEntry>,
    /// Discordant pair-of-pairs `(ε_a, ε_b, k, k')`, truncated to the first 1000.
    pub discordant_pairs: Vec<(f64, f64, usize, usize)>,
    /// Monte Carlo estimates resolve too few exceedances to rank reliably.
    pub low_precision: bool,
}

impl RankStabilityReport {
    pub fn all_concordant(&self) -> bool {
        self.taus.iter().all(|t| t.discordant == 0)
    }
}

const MAX_DISCORDANT_LISTED: usize = 1000;

/// Compares per-ε rankings of `prob_fn(ε)`.
///
/// Pairs whose `tie_keys` differ by at most `1e-10` (relative to the largest
/// key) are treated as ties, as are exactly equal probabilities. `mc_draws`
/// marks the values as Monte Carlo estimates for the precision check.
pub fn rank_stability_check(
    prob_fn: &(dyn Fn(f64) -> Vec<f64> + Sync),
    epsilons: &[f64],
    tie_keys: Option<&[f64]>,
    mc_draws: Option<usize>,
) -> Result<RankStabilityReport> {
    if epsilons.len() < 2 {
        return Err(param("rank stability needs at least two epsilon values"));
    }
    let values: Vec<Vec<f64>> = epsilons.iter().map(|&e| prob_fn(e)).collect();
    let k = values[0].len();
    if values.iter().any(|v| v.len() != k) || tie_keys.is_some_and(|t| t.len() != k) {
        return Err(Error::Dimension("probability vectors disagree in length".into()));
    }
    let key_scale = tie_keys.map(|t| t.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    let keyed_tie = |a: usize, b: usize| match (tie_keys, key_scale) {
        (Some(t), Some(s)) => (t[a].abs() - t[b].abs()).abs() <= 1e-10 * s.max(f64::MIN_POSITIVE),
        _ => false,
    };
    let mut taus = Vec::new();
    let mut listed = Vec::new();
    for a in 0..epsilons.len() {
        for b in (a + 1)..epsilons.len() {
            let (va, vb) = (&values[a], &values[b]);
            let (mut conc, mut disc, mut tied) = (0usize, 0usize, 0usize);
            for p in 0..k {
                for q in (p + 1)..k {
                    let da = va[p] - va[q];
                    let db = vb[p] - vb[q];
                    if keyed_tie(p, q) || da == 0.0 || db == 0.0 {
                        tied += 1;
                    } else if (da > 0.0) == (db > 0.0) {
                        conc += 1;
                    } else {
                        disc += 1;
                        if listed.len() < MAX_DISCORDANT_LISTED {
                            listed.push((epsilons[a], epsilons[b], p, q));
                        }
                    }
                }
            }
            let tau = if conc + disc == 0 { 1.0 } else { (conc as f64 - disc as f64) / (conc + disc) as f64 };
            taus.push(TauEntry { epsilon_a: epsilons[a], epsilon_b: epsilons[b], tau, discordant: disc, tied });
        }
    }
    let low_precision = mc_draws.is_some_and(|n| {
        values.iter().any(|v| {
            let sparse = v.iter().filter(|&&p| p * (n as f64) < 5.0).count();
            sparse * 10 > v.len()
        })
    });
    Ok(RankStabilityReport { epsilons: epsilons.to_vec(), taus, discordant_pairs: listed, low_precision })
}

/// One row of the (ε, δ, |S|) trade-off table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub epsilon: f64,
    pub t_star: f64,
    pub fdr: f64,
    pub fnr: f64,
    pub declared: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub delta: f64,
    pub min_declared: usize,
    pub rows: Vec<TradeoffRow>,
    /// Smallest and largest grid ε with `FDR(t*(ε)) ≤ δ` and at least `min_declared` declarations.
    pub admissible_range: Option<(f64, f64)>,
}

/// Tabulates the FDR rule across an ε grid.
pub fn tradeoff_report(
    prob_fn: &(dyn Fn(f64) -> Vec<f64> + Sync),
    grid: &[f64],
    delta: f64,
    min_declared: usize,
) -> Result<TradeoffReport> {
    let rows = grid
        .iter()
        .map(|&e| {
            let ds = select_threshold(&prob_fn(e), delta)?;
            Ok(TradeoffRow {
                epsilon: e,
                t_star: ds.t_star,
                fdr: ds.fdr_at_cutoff,
                fnr: ds.fnr_at_cutoff,
                declared: ds.declared_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let admissible: Vec<f64> = rows
        .iter()
        .filter(|r| r.declared >= min_declared && r.declared > 0 && r.fdr <= delta)
        .map(|r| r.epsilon)
        .collect();
    let admissible_range = match (admissible.first(), admissible.last()) {
        (Some(&a), Some(&b)) => Some((a, b)),
        _ => None,
    };
    Ok(TradeoffReport { delta, min_declared, rows, admissible_range })
}
