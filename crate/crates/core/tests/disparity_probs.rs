mod common;

use common::*;
use disparity_core::disparity::{
    closed_form_h, estimate_diff_probs, rank_stability_check, select_epsilon_ce, tradeoff_report, EpsilonGrid,
    EstimateMethod, PrecisionQuadrature, QuadratureH, Standardizer, StandardizedDifferences,
};
use disparity_core::exact::{exact_sample, BymModel, PriorSpec};
use disparity_core::graph::{build_car_precision, compute_scaling_factor, lattice, neighbor_pairs};
use disparity_core::mcmc::{run_chain, McmcConfig, PcPrior};
use disparity_core::special::norm_cdf;
use nalgebra::DVector;
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

fn lattice_posterior(rows: usize, cols: usize, seed: u64) -> (std::sync::Arc<BymModel>, Vec<(usize, usize)>) {
    let g = lattice(rows, cols).unwrap();
    let c = compute_scaling_factor(&g, 0.99).unwrap();
    let car = build_car_precision(&g, 0.99, c).unwrap();
    let n = g.n();
    let mut r = rng(seed);
    let x = design(&mut r, n, 2);
    let y = &x * DVector::from_vec(vec![2.0, 5.0]) + normal_vector(&mut r, n, 2.0);
    let model = BymModel::new(x, y, &car, PriorSpec::flat(2, 0.1, 0.1)).unwrap();
    (model, neighbor_pairs(&g))
}

/// `E[Φ(−ε + α/σ) + Φ(−ε − α/σ)]` over `σ² ~ IG(a, b)`, integrated in σ² with
/// tanh-sinh quadrature after the substitution `σ² = s/(1−s)`.
fn reference_h(alpha: f64, eps: f64, a: f64, b: f64) -> f64 {
    let log_norm = a * b.ln() - ln_gamma(a);
    let f = |s: f64| {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        let x = s / (1.0 - s);
        let jac = 1.0 / ((1.0 - s) * (1.0 - s));
        let dens = (log_norm - (a + 1.0) * x.ln() - b / x).exp();
        let sd = x.sqrt();
        dens * jac * (norm_cdf(-eps + alpha / sd) + norm_cdf(-eps - alpha / sd))
    };
    quadrature::double_exponential::integrate(f, 0.0, 1.0, 1e-12).integral
}

#[test]
fn quadrature_matches_independent_integral() {
    for (a, b) in [(1.1, 0.4), (5.0, 3.0), (112.6, 230.0)] {
        let q = PrecisionQuadrature::new(a, b).unwrap();
        for alpha in [0.0, 0.3, 1.0, 2.5, 7.0] {
            for eps in [0.1, 1.0, 2.5] {
                let got = q.h(alpha, eps);
                let want = reference_h(alpha, eps, a, b);
                assert!((got - want).abs() < 1e-8, "a={a} b={b} alpha={alpha} eps={eps}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn monte_carlo_agrees_with_quadrature_at_fixed_rho() {
    let (model, pairs) = lattice_posterior(5, 5, 3);
    let ap = model.posterior(0.8).unwrap();
    let draws = exact_sample(&ap, 40_000, 17).unwrap();
    let standardizer = Standardizer::from_posterior(&ap, &pairs).unwrap();
    let qh = QuadratureH::new(&ap, &pairs).unwrap();
    for eps in [0.5, 1.0, 2.0] {
        let mc = estimate_diff_probs(&draws, &pairs, eps, &standardizer).unwrap();
        assert_eq!(mc.method, EstimateMethod::MonteCarlo);
        assert_eq!(mc.conditioned_rho, Some(0.8));
        let exact = qh.estimate(eps);
        for (k, (&m, &e)) in mc.v.iter().zip(&exact.v).enumerate() {
            let se = (e * (1.0 - e) / 40_000.0).sqrt().max(1e-4);
            assert!((m - e).abs() < 5.0 * se, "pair {k} eps {eps}: {m} vs {e}");
        }
    }
}

#[test]
fn closed_form_h_uses_the_contrast_moments() {
    let (model, pairs) = lattice_posterior(3, 4, 5);
    let ap = model.posterior(0.5).unwrap();
    let qh = QuadratureH::new(&ap, &pairs).unwrap();
    let (n, p) = (ap.n(), ap.p());
    let (i, j) = pairs[3];
    let mut c = DVector::zeros(n + p);
    c[p + i] = 1.0;
    c[p + j] = -1.0;
    let direct = closed_form_h(&ap, &c, 1.1).unwrap();
    assert!((direct - qh.probabilities(1.1)[3]).abs() < 1e-12);
    assert!(closed_form_h(&ap, &DVector::zeros(n + p), 1.0).is_err());
}

#[test]
fn common_random_numbers_make_probabilities_monotone_in_epsilon() {
    let (model, pairs) = lattice_posterior(4, 4, 8);
    let ap = model.posterior(0.9).unwrap();
    let draws = exact_sample(&ap, 3_000, 1).unwrap();
    let sd = StandardizedDifferences::new(&draws, &pairs, &Standardizer::from_posterior(&ap, &pairs).unwrap()).unwrap();
    let grid = EpsilonGrid::default().values().unwrap();
    let mut prev = vec![1.0; pairs.len()];
    for e in grid {
        let v = sd.probabilities(e);
        assert!(v.iter().zip(&prev).all(|(a, b)| a <= b));
        prev = v;
    }
}

#[test]
fn varying_rho_draws_use_per_draw_standardizers() {
    let (model, pairs) = lattice_posterior(4, 4, 2);
    let cfg = {
        let mut c = McmcConfig::new(PcPrior::new(0.2).unwrap(), 3);
        c.iterations = 1_500;
        c.burn_in = 500;
        c
    };
    let car = disparity_core::graph::CarStructure { alpha: 0.99, c: 1.0, precision: model.precision.clone() };
    let draws = run_chain(&model.x, &model.y, &car, &cfg).unwrap();
    let st = Standardizer::spectral(model.basis().unwrap(), &pairs).unwrap();
    let est = estimate_diff_probs(&draws, &pairs, 1.0, &st).unwrap();
    assert_eq!(est.conditioned_rho, None);
    assert_eq!(est.mc_draws, 1_000);
    // Brute force for one pair.
    let (i, j) = pairs[5];
    let basis = model.basis().unwrap();
    let mut hits = 0;
    for t in 0..draws.len() {
        let r = draws.rho[t] / (1.0 - draws.rho[t]);
        let var: f64 = (0..basis.dim())
            .map(|m| (basis.u[(i, m)] - basis.u[(j, m)]).powi(2) / (1.0 + r * basis.d[m]))
            .sum();
        if (draws.phi[(t, i)] - draws.phi[(t, j)]).abs() / var.sqrt() > 1.0 {
            hits += 1;
        }
    }
    assert_eq!(est.v[5], hits as f64 / draws.len() as f64);
}

#[test]
fn entropy_scan_and_tradeoff_table() {
    let (model, pairs) = lattice_posterior(6, 6, 4);
    let qh = QuadratureH::new(&model.posterior(0.93).unwrap(), &pairs).unwrap();
    let grid = EpsilonGrid::default();
    let scan = select_epsilon_ce(&|e| qh.probabilities(e), &grid).unwrap();
    assert!(!scan.flat);
    assert!(scan.loss_ce <= scan.loss.iter().cloned().fold(f64::INFINITY, f64::min) + 1e-12);
    assert!(scan.epsilon_ce > grid.min && scan.epsilon_ce < grid.max);
    let eps: Vec<f64> = (1..=8).map(|k| k as f64 * 0.4).collect();
    let report = tradeoff_report(&|e| qh.probabilities(e), &eps, 0.1, 1).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert!(report.rows.iter().all(|r| r.fdr <= 0.1));
    if let Some((lo, hi)) = report.admissible_range {
        assert!(lo <= hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn h_is_increasing_in_standardized_mean(
        a in 0.6f64..200.0, b in 0.05f64..300.0, x1 in 0.0f64..6.0, x2 in 0.0f64..6.0, eps in 0.05f64..4.0
    ) {
        let q = PrecisionQuadrature::new(a, b).unwrap();
        let scale = (b / a).sqrt();
        let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        prop_assert!(q.h(lo * scale, eps) <= q.h(hi * scale, eps) + 1e-12);
        prop_assert!((q.h(-hi * scale, eps) - q.h(hi * scale, eps)).abs() < 1e-14);
    }

    #[test]
    fn quadrature_rankings_never_cross(seed in 0u64..500) {
        let (model, pairs) = lattice_posterior(4, 5, seed);
        let qh = QuadratureH::new(&model.posterior(0.7).unwrap(), &pairs).unwrap();
        let report = rank_stability_check(&|e| qh.probabilities(e), &[0.3, 1.0, 2.2], Some(&qh.alpha), None).unwrap();
        prop_assert!(report.all_concordant());
    }
}
