mod common;

use common::*;
use disparity_core::exact::{BymModel, PriorSpec};
use disparity_core::graph::{build_car_precision, compute_scaling_factor, lattice, load_adjacency_reader};
use disparity_core::mcmc::{
    pc_distance, pc_prior_calibrate, run_chain, run_chain_cached, sweep, ChainState, GibbsCache, KernelVariant,
    McmcConfig, PcPrior,
};
use disparity_core::simulate::Generator;
use disparity_core::special::substream;
use nalgebra::DVector;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Gamma};

/// Posterior CDFs of ρ and σ² on a 2-region instance, from the collapsed
/// marginal likelihood on a 2001-point midpoint grid.
struct GridPosterior {
    rho: Vec<f64>,
    weights: Vec<f64>,
    b_n: Vec<f64>,
    a_n: f64,
}

impl GridPosterior {
    fn new(model: &std::sync::Arc<BymModel>, prior: &PcPrior) -> Self {
        let lambda = model.basis().unwrap().lambda.clone();
        let m = 2001;
        let rho: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
        let logs: Vec<f64> = rho
            .iter()
            .map(|&r| model.log_marginal_rho(r).unwrap() - prior.lambda_rho * pc_distance(r, lambda.as_slice()).unwrap())
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        let b_n = rho.iter().map(|&r| model.posterior(r).unwrap().b_n).collect();
        Self { rho, weights: raw.iter().map(|w| w / total).collect(), b_n, a_n: model.a_n() }
    }

    fn rho_cdf(&self, x: f64) -> f64 {
        // Mass is spread uniformly over each grid cell.
        let m = self.rho.len() as f64;
        let mut acc = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            let lo = k as f64 / m;
            let hi = (k as f64 + 1.0) / m;
            if x >= hi {
                acc += w;
            } else if x > lo {
                acc += w * (x - lo) * m;
            }
        }
        acc
    }

    fn sigma2_cdf(&self, x: f64) -> f64 {
        // P(σ² ≤ x) = P(τ ≥ 1/x), τ ~ Gamma(a_n, b_n).
        self.weights
            .iter()
            .zip(&self.b_n)
            .map(|(&w, &b)| w * Gamma::new(self.a_n, b).unwrap().sf(1.0 / x))
            .sum()
    }
}

fn two_region_chain(variant: KernelVariant) -> (f64, f64) {
    let g = load_adjacency_reader("a,b\n".as_bytes()).unwrap().graph;
    let car = build_car_precision(&g, 0.9, 1.0).unwrap();
    let x = nalgebra::DMatrix::from_element(2, 1, 1.0);
    let y = DVector::from_vec(vec![0.3, 1.9]);
    let model = BymModel::new(x, y, &car, PriorSpec::flat(1, 1.0, 1.0)).unwrap();
    let prior = PcPrior::new(1.0).unwrap();
    let cache = GibbsCache::new(&model).unwrap();
    let chains: Vec<_> = (0..8u64)
        .into_par_iter()
        .map(|id| {
            let mut cfg = McmcConfig::new(prior.clone(), 31);
            cfg.chain_id = id;
            cfg.iterations = 202_000;
            cfg.burn_in = 2_000;
            cfg.thin = 20;
            cfg.a_sigma = 1.0;
            cfg.b_sigma = 1.0;
            cfg.variant = variant;
            cfg.keep_effects = false;
            run_chain_cached(&cache, &cfg).unwrap()
        })
        .collect();
    let mut rho: Vec<f64> = chains.iter().flat_map(|c| c.rho.iter().cloned()).collect();
    let mut sigma2: Vec<f64> = chains.iter().flat_map(|c| c.sigma2.iter().cloned()).collect();
    let oracle = GridPosterior::new(&model, &prior);
    (ks_distance(&mut rho, |x| oracle.rho_cdf(x)), ks_distance(&mut sigma2, |x| oracle.sigma2_cdf(x)))
}

#[test]
fn corrected_kernels_sample_the_joint_posterior() {
    let (ks_rho, ks_sigma2) = two_region_chain(KernelVariant::Corrected);
    assert!(ks_rho <= 0.02, "KS(rho) = {ks_rho}");
    assert!(ks_sigma2 <= 0.02, "KS(sigma2) = {ks_sigma2}");
}

#[test]
fn verbatim_kernels_miss_the_joint_posterior() {
    let (ks_rho, ks_sigma2) = two_region_chain(KernelVariant::Verbatim);
    assert!(ks_rho.max(ks_sigma2) > 0.02, "KS(rho) = {ks_rho}, KS(sigma2) = {ks_sigma2}");
}

#[test]
fn null_spatial_data_pulls_rho_down() {
    let g = lattice(10, 10).unwrap();
    let c = compute_scaling_factor(&g, 0.99).unwrap();
    let gen = Generator::new(&g, 0.99, c).unwrap();
    let sim = gen.generate(&[1.0, 2.0], 1.0, 0.0, 3).unwrap();
    let model = BymModel::new(sim.x.clone(), sim.y.clone(), &gen.car, PriorSpec::flat(2, 0.1, 0.1)).unwrap();
    let lambda = model.basis().unwrap().lambda.clone();
    let prior = pc_prior_calibrate(lambda.as_slice(), 0.5, 2.0 / 3.0).unwrap();
    let mut cfg = McmcConfig::new(prior, 8);
    cfg.iterations = 9_000;
    cfg.burn_in = 3_000;
    cfg.keep_effects = false;
    let draws = run_chain(&sim.x, &sim.y, &gen.car, &cfg).unwrap();
    let mut rho = draws.rho.clone();
    rho.sort_by(f64::total_cmp);
    assert!(quantile(&rho, 0.5) < 0.5, "median {}", quantile(&rho, 0.5));
}

#[test]
fn cached_residual_stays_consistent() {
    let g = lattice(4, 4).unwrap();
    let car = build_car_precision(&g, 0.95, 1.0).unwrap();
    let mut r = rng(2);
    let x = design(&mut r, 16, 2);
    let y = normal_vector(&mut r, 16, 2.0);
    let model = BymModel::new(x, y, &car, PriorSpec::flat(2, 0.1, 0.1)).unwrap();
    let cache = GibbsCache::new(&model).unwrap();
    let cfg = McmcConfig::new(PcPrior::new(0.5).unwrap(), 4);
    let beta = DVector::from_vec(vec![0.1, 0.2]);
    let gamma = DVector::zeros(16);
    let mut state = ChainState {
        r2: cache.residual_sq(&beta, &gamma),
        beta,
        gamma,
        sigma2: 1.0,
        rho: 0.5,
        iteration: 0,
        accept_count: 0,
    };
    let mut kr = substream(4, "test");
    for _ in 0..500 {
        sweep(&cache, &mut state, &cfg, &mut kr).unwrap();
        assert!(state.r2_consistent(&cache, 1e-9));
        assert!(state.rho > 0.0 && state.rho < 1.0 && state.sigma2 > 0.0);
    }
    assert_eq!(state.iteration, 500);
    assert!(state.accept_count > 0);
}

#[test]
fn chains_are_reproducible_and_distinct() {
    let g = lattice(3, 3).unwrap();
    let car = build_car_precision(&g, 0.9, 1.0).unwrap();
    let mut r = rng(6);
    let x = design(&mut r, 9, 2);
    let y = normal_vector(&mut r, 9, 1.0);
    let mut cfg = McmcConfig::new(PcPrior::new(0.3).unwrap(), 12);
    cfg.iterations = 300;
    cfg.burn_in = 100;
    cfg.thin = 4;
    let a = run_chain(&x, &y, &car, &cfg).unwrap();
    let b = run_chain(&x, &y, &car, &cfg).unwrap();
    assert_eq!(a.rho, b.rho);
    assert_eq!(a.gamma, b.gamma);
    assert_eq!(a.len(), 50);
    assert!(a.meta.acceptance_rate.is_some());
    cfg.chain_id = 1;
    assert_ne!(run_chain(&x, &y, &car, &cfg).unwrap().rho, a.rho);
}

#[test]
fn invalid_configs_are_rejected() {
    let g = lattice(2, 2).unwrap();
    let car = build_car_precision(&g, 0.9, 1.0).unwrap();
    let x = nalgebra::DMatrix::from_element(4, 1, 1.0);
    let y = DVector::from_vec(vec![1.0, 2.0, 0.5, 0.1]);
    let mut cfg = McmcConfig::new(PcPrior::new(1.0).unwrap(), 1);
    cfg.iterations = 10;
    cfg.burn_in = 10;
    assert!(run_chain(&x, &y, &car, &cfg).is_err());
    cfg.burn_in = 2;
    cfg.thin = 0;
    assert!(run_chain(&x, &y, &car, &cfg).is_err());
    assert!(PcPrior::new(-1.0).is_err());
}
