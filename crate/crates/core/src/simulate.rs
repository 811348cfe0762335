//! Synthetic BYM2 datasets and their ground-truth disparity labels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::disparity::Standardizer;
use crate::error::{param, Result};
use crate::exact::{BymModel, PriorSpec};
use crate::graph::{build_car_precision, AdjacencyGraph, CarStructure};
use crate::linalg::cholesky_spd;
use crate::special::substream;

pub const DEFAULT_BETA: [f64; 2] = [2.0, 5.0];
pub const DEFAULT_SIGMA2: f64 = 4.0;
pub const DEFAULT_RHO: f64 = 0.93;
pub const DEFAULT_ALPHA: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    /// Intercept column followed by standard-normal covariates.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub phi_true: DVector<f64>,
    pub beta_true: DVector<f64>,
    pub sigma2_true: f64,
    pub rho_true: f64,
    pub seed: u64,
}

/// Reusable generator holding the Cholesky factor of `V_φ` for one graph.
#[derive(Debug, Clone)]
pub struct Generator {
    pub car: CarStructure,
    /// Upper factor `R` with `RᵀR = V_φ`.
    chol: DMatrix<f64>,
}

impl Generator {
    pub fn new(g: &AdjacencyGraph, alpha: f64, c: f64) -> Result<Self> {
        Self::from_car(build_car_precision(g, alpha, c)?)
    }

    pub fn from_car(car: CarStructure) -> Result<Self> {
        let chol = cholesky_spd(&car.covariance()?)?;
        Ok(Self { car, chol })
    }

    pub fn n(&self) -> usize {
        self.car.n()
    }

    pub fn generate(&self, beta_true: &[f64], sigma2_true: f64, rho_true: f64, seed: u64) -> Result<SimulatedDataset> {
        if beta_true.is_empty() {
            return Err(param("beta_true must have at least the intercept"));
        }
        if !(sigma2_true > 0.0) || !sigma2_true.is_finite() {
            return Err(param(format!("sigma2_true must be positive, got {sigma2_true}")));
        }
        if !(0.0..=1.0).contains(&rho_true) {
            return Err(param(format!("rho_true must lie in [0, 1], got {rho_true}")));
        }
        let n = self.n();
        let p = beta_true.len();
        let mut rng = substream(seed, "simulate");
        let mut x = DMatrix::from_element(n, p, 1.0);
        for i in 0..n {
            for j in 1..p {
                x[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phi = self.chol.tr_mul(&z);
        let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_column_slice(beta_true);
        let sigma = sigma2_true.sqrt();
        let y = &x * &beta + &phi * (sigma * rho_true.sqrt()) + noise * (sigma * (1.0 - rho_true).sqrt());
        Ok(SimulatedDataset { x, y, phi_true: phi, beta_true: beta, sigma2_true, rho_true, seed })
    }

    /// One dataset per seed, generated in parallel.
    pub fn replicate(&self, beta_true: &[f64], sigma2_true: f64, rho_true: f64, seeds: &[u64]) -> Result<Vec<SimulatedDataset>> {
        seeds.par_iter().map(|&s| self.generate(beta_true, sigma2_true, rho_true, s)).collect()
    }
}

pub fn generate_dataset(
    g: &AdjacencyGraph,
    alpha: f64,
    c: f64,
    beta_true: &[f64],
    sigma2_true: f64,
    rho_true: f64,
    seed: u64,
) -> Result<SimulatedDataset> {
    Generator::new(g, alpha, c)?.generate(beta_true, sigma2_true, rho_true, seed)
}

/// `|φ_i − φ_j| / √(a_ijᵀ Var(φ | y, σ², ρ) a_ij)` at the true φ and ρ.
pub fn true_std_differences(
    sim: &SimulatedDataset,
    car: &CarStructure,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let rho = sim.rho_true.clamp(1e-12, 1.0 - 1e-12);
    let model = BymModel::new(sim.x.clone(), sim.y.clone(), car, PriorSpec::flat(sim.x.ncols(), 0.1, 0.1))?;
    let ap = model.posterior(rho)?;
    let var = Standardizer::from_posterior(&ap, pairs)?.values(&[rho])?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| (sim.phi_true[i] - sim.phi_true[j]).abs() / var[(k, 0)].sqrt())
        .collect())
}

/// `r_ij(ε)`: whether each pair is a true ε-level disparity.
pub fn true_disparities(
    sim: &SimulatedDataset,
    car: &CarStructure,
    pairs: &[(usize, usize)],
    epsilon: f64,
) -> Result<Vec<bool>> {
    if !(epsilon > 0.0) {
        return Err(param(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(true_std_differences(sim, car, pairs)?.into_iter().map(|s| s > epsilon).collect())
}
