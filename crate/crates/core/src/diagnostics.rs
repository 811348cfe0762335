//! Classical tests, DIC and lppd along ρ, posterior predictive draws,
//! spatial autocorrelation tests, and truth-based classification metrics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::disparity::DecisionSet;
use crate::error::{param, Error, Result};
use crate::exact::{sample_inverse_gamma, BymModel, PosteriorDraws};
use crate::graph::AdjacencyGraph;
use crate::linalg::{cholesky_solve, cholesky_spd, spd_inverse, symmetrize};
use crate::special::{digamma, indexed_substream, log_mean_exp, substream};

/// GLS fit with per-contrast t statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalTests {
    pub beta_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub df: usize,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
}

/// Two-sided t tests of `c_kᵀβ = 0` under `y ~ N(Xβ, σ²V_y)`.
pub fn classical_p_values(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    v_y: &DMatrix<f64>,
    contrasts: &[DVector<f64>],
) -> Result<ClassicalTests> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(Error::Dimension(format!("need n > p, got n={n}, p={p}")));
    }
    if y.len() != n || v_y.shape() != (n, n) || contrasts.iter().any(|c| c.len() != p) {
        return Err(Error::Dimension("classical test inputs disagree".into()));
    }
    let v_inv = spd_inverse(v_y)?;
    let xt_vi = x.transpose() * &v_inv;
    let info = &xt_vi * x;
    let r = cholesky_spd(&info).map_err(|_| Error::RankDeficient)?;
    let beta = cholesky_solve(&r, &(&xt_vi * y))?;
    let resid = y - x * &beta;
    let df = n - p;
    let sigma2 = resid.dot(&(&v_inv * &resid)) / df as f64;
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut t_stats = Vec::with_capacity(contrasts.len());
    let mut p_values = Vec::with_capacity(contrasts.len());
    for c in contrasts {
        let scale = c.dot(&cholesky_solve(&r, c)?);
        let t = c.dot(&beta) / (sigma2 * scale).sqrt();
        t_stats.push(t);
        p_values.push((2.0 * dist.sf(t.abs())).min(1.0));
    }
    Ok(ClassicalTests { beta_hat: beta.iter().cloned().collect(), sigma2_hat: sigma2, df, t_stats, p_values })
}

/// Closed-form deviance information criterion at fixed ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub rho: f64,
    pub log_lik_at_mean: f64,
    pub p_dic: f64,
    pub dic: f64,
    /// `n + n(log(a_n − 1) − ψ(a_n))`, the value approached as ρ → 1.
    pub p_dic_limit: f64,
}

/// DIC under the flat β prior, with `θ̂` the posterior mean of `(β, γ, σ²)`.
pub fn dic_exact(model: &Arc<BymModel>, rho: f64) -> Result<DicResult> {
    let basis = model.basis().ok_or_else(|| param("DIC requires the flat beta prior"))?;
    let ap = model.posterior(rho)?;
    let n = model.n() as f64;
    let (a_n, b_n) = (ap.a_n, ap.b_n);
    if a_n <= 1.0 {
        return Err(param(format!("DIC needs a_n > 1, got {a_n}")));
    }
    let kappa = ap.kappa();
    let trace = model.p() as f64 + basis.d.iter().map(|&d| d / (d + kappa)).sum::<f64>();
    let resid = &model.y - &model.x * &ap.beta_mean - &ap.gamma_mean;
    let rss = resid.norm_squared() / (1.0 - rho);
    let log_lik_at_mean = -0.5 * n * (2.0 * std::f64::consts::PI * (1.0 - rho)).ln()
        - 0.5 * n * (b_n / (a_n - 1.0)).ln()
        - (a_n - 1.0) * rss / (2.0 * b_n);
    let gap = (a_n - 1.0).ln() - digamma(a_n);
    let p_dic = n * gap + trace + rss / b_n;
    Ok(DicResult {
        rho,
        log_lik_at_mean,
        p_dic,
        dic: -2.0 * log_lik_at_mean + 2.0 * p_dic,
        p_dic_limit: n + n * gap,
    })
}

/// One replicated response per posterior draw: `y_rep ~ N(Xβ + γ, σ²(1−ρ)I)`.
pub fn posterior_predictive(draws: &PosteriorDraws, x: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let (len, n) = (draws.len(), draws.n());
    if draws.gamma.nrows() != len || x.shape() != (n, draws.p()) {
        return Err(Error::Dimension("draws and design disagree".into()));
    }
    let mut rng = substream(seed, "predictive");
    let fitted = &draws.beta * x.transpose() + &draws.gamma;
    let mut out = DMatrix::zeros(len, n);
    for t in 0..len {
        let sd = (draws.sigma2[t] * (1.0 - draws.rho[t])).sqrt();
        for i in 0..n {
            out[(t, i)] = fitted[(t, i)] + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

/// `Y | y, σ², ρ ~ N(μ, σ²(1−ρ)C)` for a replicated response.
#[derive(Debug, Clone)]
pub struct PredictiveLaw {
    /// `S = WV₁⁻¹Wᵀ = ½H + (I−H)(B + I − H)⁻¹(I−H)`.
    pub s: DMatrix<f64>,
    /// `μ = (I − S)⁻¹Sy`.
    pub mean: DVector<f64>,
    /// `C = (I − S)⁻¹`.
    pub scale: DMatrix<f64>,
    pub a_n: f64,
    pub b_n: f64,
    pub rho: f64,
}

pub fn predictive_law(model: &Arc<BymModel>, rho: f64) -> Result<PredictiveLaw> {
    let basis = model.basis().ok_or_else(|| param("the predictive law requires the flat beta prior"))?;
    let ap = model.posterior(rho)?;
    let n = model.n();
    let kappa = ap.kappa();
    let h = &model.x * &model.xtx_inv * model.x.transpose();
    // (I−H)U = V_φ⁻¹UD, so the second term is V_φ⁻¹U diag(d²/(2d+κ)) UᵀV_φ⁻¹.
    let vu = &model.precision * &basis.u;
    let w = basis.d.map(|d| d * d / (2.0 * d + kappa));
    let mut scaled = vu.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[j];
    }
    let mut s = h * 0.5 + scaled * vu.transpose();
    symmetrize(&mut s);
    let i_minus_s = DMatrix::identity(n, n) - &s;
    let scale = spd_inverse(&i_minus_s)?;
    let mean = &scale * (&s * &model.y);
    Ok(PredictiveLaw { s, mean, scale, a_n: ap.a_n, b_n: ap.b_n, rho })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LppdResult {
    pub rho: f64,
    pub lppd: f64,
    pub pointwise: Vec<f64>,
    pub mc_draws: usize,
}

/// Log pointwise predictive density, averaging the predictive normal over
/// `mc_draws` draws of `σ² ~ IG(a_n, b_n)`.
pub fn waic_lppd_mc(model: &Arc<BymModel>, rho: f64, mc_draws: usize, seed: u64) -> Result<LppdResult> {
    if mc_draws == 0 {
        return Err(param("mc_draws must be positive"));
    }
    let law = predictive_law(model, rho)?;
    let mut rng = substream(seed, "lppd");
    let sigma2: Vec<f64> = (0..mc_draws).map(|_| sample_inverse_gamma(&mut rng, law.a_n, law.b_n)).collect();
    let n = model.n();
    let pointwise: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dev = model.y[i] - law.mean[i];
            let base = law.scale[(i, i)] * (1.0 - rho);
            let logs: Vec<f64> = sigma2
                .iter()
                .map(|&s2| {
                    let var = s2 * base;
                    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - dev * dev / (2.0 * var)
                })
                .collect();
            log_mean_exp(&logs)
        })
        .collect();
    Ok(LppdResult { rho, lppd: pointwise.iter().sum(), pointwise, mc_draws })
}

/// Moran's I and Geary's C with permutation p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialAutocorrelation {
    pub moran_i: f64,
    pub geary_c: f64,
    pub moran_p: f64,
    pub geary_p: f64,
    pub permutations: usize,
}

fn moran_geary_stats(x: &[f64], edges: &[(usize, usize)]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let w_total = 2.0 * edges.len() as f64;
    let (mut cross, mut sq) = (0.0, 0.0);
    for &(i, j) in edges {
        cross += 2.0 * (x[i] - mean) * (x[j] - mean);
        sq += 2.0 * (x[i] - x[j]) * (x[i] - x[j]);
    }
    (n / w_total * cross / ss, (n - 1.0) / (2.0 * w_total) * sq / ss)
}

const PERMUTATION_BATCH: usize = 256;

pub fn moran_geary(
    residuals: &[f64],
    g: &AdjacencyGraph,
    permutations: usize,
    seed: u64,
) -> Result<SpatialAutocorrelation> {
    if residuals.len() != g.n() {
        return Err(Error::Dimension(format!("{} residuals for {} regions", residuals.len(), g.n())));
    }
    if permutations == 0 {
        return Err(param("permutations must be at least 1"));
    }
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let scale = residuals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if residuals.iter().all(|v| (v - mean).abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroVariance("residuals are constant".into()));
    }
    let edges = g.edges();
    let (moran_i, geary_c) = moran_geary_stats(residuals, edges);
    let batches = permutations.div_ceil(PERMUTATION_BATCH);
    let (hi_i, lo_c) = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = indexed_substream(seed, "permutations", b as u64);
            let count = PERMUTATION_BATCH.min(permutations - b * PERMUTATION_BATCH);
            let mut x = residuals.to_vec();
            let (mut hi, mut lo) = (0usize, 0usize);
            for _ in 0..count {
                x.shuffle(&mut rng);
                let (i, c) = moran_geary_stats(&x, edges);
                hi += (i >= moran_i) as usize;
                lo += (c <= geary_c) as usize;
            }
            (hi, lo)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let denom = (permutations + 1) as f64;
    Ok(SpatialAutocorrelation {
        moran_i,
        geary_c,
        moran_p: (1 + hi_i) as f64 / denom,
        geary_p: (1 + lo_c) as f64 / denom,
        permutations,
    })
}

/// Truth-based performance of a set of declarations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    /// Fraction of declared pairs that are not true disparities.
    pub true_fdr: f64,
    /// Fraction of undeclared pairs that are true disparities.
    pub true_fnr: f64,
    /// `(fpr, tpr)` from (0, 0) to (1, 1); empty when the truth is degenerate.
    pub roc: Vec<(f64, f64)>,
    pub auc: Option<f64>,
    /// The truth contains only one class, so one of the rates is undefined (reported as 0).
    pub degenerate_truth: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(decisions: &DecisionSet, truth: &[bool], prob: &[f64]) -> Result<ClassificationReport> {
    let k = truth.len();
    if decisions.decisions.len() != k || prob.len() != k {
        return Err(Error::Dimension(format!(
            "{} decisions, {} truth labels, {} probabilities",
            decisions.decisions.len(),
            k,
            prob.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&d, &t) in decisions.decisions.iter().zip(truth) {
        match (d, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let positives = tp + fn_;
    let negatives = fp + tn;
    let degenerate_truth = positives == 0 || negatives == 0;
    let (roc, auc) = if degenerate_truth {
        (Vec::new(), None)
    } else {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| prob[b].total_cmp(&prob[a]));
        let mut roc = vec![(0.0, 0.0)];
        let (mut cum_tp, mut cum_fp) = (0usize, 0usize);
        let mut idx = 0;
        while idx < k {
            let cut = prob[order[idx]];
            while idx < k && prob[order[idx]] == cut {
                if truth[order[idx]] {
                    cum_tp += 1;
                } else {
                    cum_fp += 1;
                }
                idx += 1;
            }
            roc.push((cum_fp as f64 / negatives as f64, cum_tp as f64 / positives as f64));
        }
        let auc = roc.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        (roc, Some(auc))
    };
    Ok(ClassificationReport {
        sensitivity: ratio(tp, positives),
        specificity: ratio(tn, negatives),
        accuracy: ratio(tp + tn, k),
        true_fdr: ratio(fp, tp + fp),
        true_fnr: ratio(fn_, fn_ + tn),
        roc,
        auc,
        degenerate_truth,
    })
}
