#![allow(dead_code)]

use disparity_core::exact::PriorSpec;
use disparity_core::graph::AdjacencyGraph;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected random graph: a random spanning tree plus extra edges.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra_prob: f64) -> AdjacencyGraph {
    let labels: Vec<String> = (0..n).map(|i| format!("g{i:03}")).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !edges.contains(&(i, j)) && rng.random::<f64>() < extra_prob {
                edges.push((i, j));
            }
        }
    }
    AdjacencyGraph::from_edges(labels, &edges).unwrap()
}

/// Intercept plus `p − 1` standard-normal columns.
pub fn design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) })
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Posterior of the stacked system `ỹ = Wγ⋆ + η`, `η ~ N(0, σ²V_y)`, with
/// `W = [[X, I], [I_p, 0], [0, I_n]]`, `ỹ = [y; μ₀; 0]` and
/// `V_y = diag((1−ρ)I, M₀, ρV_φ)`, assembled densely. The prior rows are
/// omitted for a flat β prior.
pub struct DenseOracle {
    pub m_star: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub a_n: f64,
    pub b_n: f64,
}

pub fn dense_augmented(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    precision: &DMatrix<f64>,
    prior: &PriorSpec,
    rho: f64,
) -> DenseOracle {
    let (n, p) = x.shape();
    let prior_rows = if prior.is_flat() { 0 } else { p };
    let rows = n + prior_rows + n;
    let mut w = DMatrix::zeros(rows, p + n);
    let mut y_aug = DVector::zeros(rows);
    let mut v_inv = DMatrix::zeros(rows, rows);
    w.view_mut((0, 0), (n, p)).copy_from(x);
    w.view_mut((0, p), (n, n)).fill_with_identity();
    y_aug.rows_mut(0, n).copy_from(y);
    v_inv.view_mut((0, 0), (n, n)).fill_with_identity();
    v_inv.view_mut((0, 0), (n, n)).scale_mut(1.0 / (1.0 - rho));
    if prior_rows > 0 {
        w.view_mut((n, 0), (p, p)).fill_with_identity();
        y_aug.rows_mut(n, p).copy_from(&prior.prior_mean().unwrap());
        v_inv.view_mut((n, n), (p, p)).copy_from(&prior.m0_inverse);
    }
    let off = n + prior_rows;
    w.view_mut((off, p), (n, n)).fill_with_identity();
    v_inv.view_mut((off, off), (n, n)).copy_from(&(precision / rho));
    let q = w.transpose() * &v_inv * &w;
    let m_star = q.clone().try_inverse().unwrap();
    let mean = &m_star * (w.transpose() * &v_inv * &y_aug);
    let resid = &y_aug - &w * &mean;
    DenseOracle {
        m_star,
        mean,
        a_n: prior.a_sigma + n as f64 / 2.0,
        b_n: prior.b_sigma + 0.5 * resid.dot(&(&v_inv * &resid)),
    }
}

/// Generalized eigenpairs `(I−H)u = d V_φ⁻¹ u` with `UᵀV_φ⁻¹U = I`, via the
/// Cholesky factor of `V_φ⁻¹`.
pub fn reference_reduction(x: &DMatrix<f64>, precision: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.nrows();
    let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
    let i_minus_h = DMatrix::identity(n, n) - x * xtx_inv * x.transpose();
    let l = precision.clone().cholesky().unwrap().l();
    let l_inv = l.clone().try_inverse().unwrap();
    let c = &l_inv * i_minus_h * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let u = l_inv.transpose() * eig.eigenvectors;
    (u, eig.eigenvalues)
}

/// Sample moments against an analytic mean and covariance; returns the
/// largest |z|-score over every mean component and covariance entry.
pub fn moment_zscore(samples: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = samples.len() as f64;
    let d = mean.len();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let xbar = samples.iter().map(|s| s[i]).sum::<f64>() / n;
        worst = worst.max((xbar - mean[i]).abs() / (cov[(i, i)] / n).sqrt());
        for j in i..d {
            let prods: Vec<f64> = samples.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).collect();
            let m = prods.iter().sum::<f64>() / n;
            let var = prods.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / (n - 1.0);
            worst = worst.max((m - cov[(i, j)]).abs() / (var / n).sqrt());
        }
    }
    worst
}

/// Two-sided Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
