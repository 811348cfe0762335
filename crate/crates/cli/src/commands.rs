use crate::config::{
    require_file, DrawsFormat, EpsilonSpec, RhoSpec, RunConfig, ScalingFactor,
};
use crate::error::{CliError, Result};
use crate::io::{self, DisparityRow};
use disparity_core::diagnostics::{
    classical_p_values, classification_metrics, dic_exact, moran_geary, waic_lppd_mc, ClassicalTests,
    ClassificationReport, DicResult, SpatialAutocorrelation,
};
use disparity_core::disparity::{
    fdr_fnr_curve, select_epsilon_ce, select_threshold, DecisionSet, EntropyScan, Standardizer,
    StandardizedDifferences,
};
use disparity_core::exact::{exact_sample, BymModel, DrawMeta, PosteriorDraws};
use disparity_core::graph::{
    build_car_precision, compute_scaling_factor, lattice, load_adjacency, neighbor_pairs, AdjacencyGraph,
    CarStructure,
};
use disparity_core::mcmc::{pc_prior_calibrate, run_chain_cached, GibbsCache, McmcConfig, PcPrior};
use disparity_core::simulate::{true_std_differences, Generator};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

/// Graph, CAR structure and fitted model shared by the commands.
pub struct Setup {
    pub graph: AdjacencyGraph,
    pub car: CarStructure,
    pub model: Arc<BymModel>,
    pub pairs: Vec<(usize, usize)>,
}

fn load_graph(cfg: &RunConfig) -> Result<AdjacencyGraph> {
    require_file(&cfg.paths.adjacency, "adjacency")?;
    let loaded = load_adjacency(&cfg.paths.adjacency)?;
    if loaded.duplicate_rows > 0 {
        log::warn!("{}: ignored {} duplicate rows", cfg.paths.adjacency.display(), loaded.duplicate_rows);
    }
    Ok(loaded.graph)
}

fn scaling_factor(cfg: &RunConfig, g: &AdjacencyGraph) -> Result<f64> {
    match cfg.model.c {
        ScalingFactor::Value(c) => Ok(c),
        ScalingFactor::Keyword(_) => Ok(compute_scaling_factor(g, cfg.model.alpha)?),
    }
}

pub fn setup(cfg: &RunConfig) -> Result<Setup> {
    let graph = load_graph(cfg)?;
    require_file(&cfg.paths.data, "data")?;
    let data = io::read_data(&cfg.paths.data, &graph)?;
    let c = scaling_factor(cfg, &graph)?;
    let car = build_car_precision(&graph, cfg.model.alpha, c)?;
    let prior = cfg.prior.spec(data.x.ncols());
    let model = BymModel::new(data.x, data.y, &car, prior)?;
    let pairs = neighbor_pairs(&graph);
    Ok(Setup { graph, car, model, pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub regions: usize,
    pub pairs: usize,
    pub alpha: f64,
    pub c: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub seed: u64,
    pub data: PathBuf,
    pub truth: PathBuf,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateReport> {
    let sim_cfg = cfg.simulate.clone().unwrap_or_default();
    let graph = match &sim_cfg.lattice {
        Some(l) => {
            let g = lattice(l.rows, l.cols)?;
            io::write_edges(&cfg.paths.adjacency, &g)?;
            g
        }
        None => load_graph(cfg)?,
    };
    let c = scaling_factor(cfg, &graph)?;
    let gen = Generator::new(&graph, cfg.model.alpha, c)?;
    let sim = gen.generate(&sim_cfg.beta, sim_cfg.sigma2, sim_cfg.rho, sim_cfg.seed)?;
    let pairs = neighbor_pairs(&graph);
    let std_diff = true_std_differences(&sim, &gen.car, &pairs)?;
    let truth = cfg.paths.truth.clone().unwrap_or_else(|| cfg.paths.output_dir.join("truth.csv"));
    io::write_data(&cfg.paths.data, &graph, &sim.y, &sim.x)?;
    io::write_truth(&truth, &graph, &pairs, &std_diff)?;
    let report = SimulateReport {
        regions: graph.n(),
        pairs: pairs.len(),
        alpha: cfg.model.alpha,
        c,
        beta: sim_cfg.beta,
        sigma2: sim_cfg.sigma2,
        rho: sim_cfg.rho,
        seed: sim_cfg.seed,
        data: cfg.paths.data.clone(),
        truth,
    };
    io::write_json(&cfg.paths.output_dir.join("simulate.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub description: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub draws: DrawMeta,
    pub draws_path: PathBuf,
    pub retained: usize,
    pub c: f64,
    pub fixed_rho: Option<f64>,
    pub pc_prior: Option<PcPrior>,
    pub summary: Vec<SummaryRow>,
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(parameter: String, description: String, values: impl Iterator<Item = f64>) -> SummaryRow {
    let mut v: Vec<f64> = values.collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(f64::total_cmp);
    SummaryRow { parameter, description, mean, lower: quantile(&v, 0.025), upper: quantile(&v, 0.975) }
}

pub fn posterior_summary(d: &PosteriorDraws) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = (0..d.p())
        .map(|k| {
            let desc = if k == 0 { "Coefficient of x1 (intercept if constant)".into() } else { format!("Coefficient of x{}", k + 1) };
            summarize(format!("beta{}", k + 1), desc, d.beta.column(k).iter().cloned())
        })
        .collect();
    rows.push(summarize("sigma2".into(), "Total variance".into(), d.sigma2.iter().cloned()));
    rows.push(summarize("rho".into(), "Spatial proportion of variance".into(), d.rho.iter().cloned()));
    rows
}

fn pc_prior_for(cfg: &RunConfig, model: &BymModel) -> Result<PcPrior> {
    if let Some(l) = cfg.model.pc_lambda {
        return Ok(PcPrior::new(l)?);
    }
    let basis = model
        .basis()
        .ok_or_else(|| CliError::Config("the pc-prior sampler supports only a flat beta prior".into()))?;
    Ok(pc_prior_calibrate(basis.lambda.as_slice(), cfg.model.pc_bound, cfg.model.pc_mass)?)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<FitReport> {
    let s = setup(cfg)?;
    let sc = &cfg.sampler;
    let retained = sc.retained();
    let (draws, fixed_rho, pc) = match cfg.model.rho {
        RhoSpec::Fixed(rho) => {
            let ap = s.model.posterior(rho)?;
            let mut d = exact_sample(&ap, retained * sc.chains, sc.seed)?;
            d.meta.chains = sc.chains;
            (d, Some(rho), None)
        }
        RhoSpec::Keyword(_) => {
            let prior = pc_prior_for(cfg, &s.model)?;
            let cache = GibbsCache::new(&s.model)?;
            let chains: Vec<PosteriorDraws> = (0..sc.chains as u64)
                .into_par_iter()
                .map(|id| {
                    let mut mc = McmcConfig::new(prior.clone(), sc.seed);
                    mc.chain_id = id;
                    mc.iterations = sc.iterations;
                    mc.burn_in = sc.burn_in;
                    mc.thin = sc.thin;
                    mc.a_sigma = cfg.prior.a_sigma;
                    mc.b_sigma = cfg.prior.b_sigma;
                    mc.variant = sc.kernel;
                    run_chain_cached(&cache, &mc)
                })
                .collect::<std::result::Result<_, _>>()?;
            (PosteriorDraws::concat(&chains)?, None, Some(prior))
        }
    };
    let path = cfg.draws_path();
    match sc.draws_format {
        DrawsFormat::Csv => io::write_draws_csv(&path, &draws, &s.graph)?,
        DrawsFormat::Binary => io::write_draws_binary(&path, &draws)?,
    }
    let summary = posterior_summary(&draws);
    let out = &cfg.paths.output_dir;
    write_summary(&out.join("summary.csv"), &summary)?;
    let report = FitReport {
        draws: draws.meta.clone(),
        draws_path: path,
        retained: draws.len(),
        c: s.car.c,
        fixed_rho,
        pc_prior: pc,
        summary,
    };
    io::write_json(&out.join("fit.json"), &report)?;
    Ok(report)
}

fn write_summary(path: &std::path::Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(["parameter", "description", "mean", "lower", "upper"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            r.description.clone(),
            io::fmt6(r.mean),
            io::fmt6(r.lower),
            io::fmt6(r.upper),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// ε-difference probabilities and decisions for every neighbouring pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub epsilon: f64,
    pub scan: EntropyScan,
    /// Quantized to 6 significant digits, aligned with `neighbor_pairs`.
    pub v: Vec<f64>,
    pub decisions: DecisionSet,
}

fn standardizer(s: &Setup, draws: &PosteriorDraws) -> Result<Standardizer> {
    if let Some(basis) = s.model.basis() {
        return Ok(Standardizer::spectral(basis, &s.pairs)?);
    }
    let rho = draws.rho[0];
    if draws.rho.iter().any(|&r| r != rho) {
        return Err(CliError::Config("varying-rho draws need a flat beta prior".into()));
    }
    Ok(Standardizer::from_posterior(&s.model.posterior(rho)?, &s.pairs)?)
}

pub fn detect(cfg: &RunConfig, s: &Setup, draws: &PosteriorDraws) -> Result<Detection> {
    if draws.n() != s.graph.n() || draws.p() != s.model.p() {
        return Err(CliError::Data(format!(
            "draws have {} regions and {} coefficients, the data {} and {}",
            draws.n(),
            draws.p(),
            s.graph.n(),
            s.model.p()
        )));
    }
    let st = standardizer(s, draws)?;
    let sd = StandardizedDifferences::new(draws, &s.pairs, &st)?;
    let scan = select_epsilon_ce(&|e| sd.probabilities(e), &cfg.decision.grid)?;
    let epsilon = match cfg.decision.epsilon {
        EpsilonSpec::Value(e) => e,
        EpsilonSpec::Keyword(_) => scan.epsilon_ce,
    };
    let v: Vec<f64> = sd.probabilities(epsilon).into_iter().map(io::quantize6).collect();
    let mut decisions = select_threshold(&v, cfg.decision.delta)?;
    decisions.epsilon = Some(epsilon);
    Ok(Detection { epsilon, scan, v, decisions })
}

fn load_draws(cfg: &RunConfig, g: &AdjacencyGraph) -> Result<PosteriorDraws> {
    let path = cfg.draws_path();
    require_file(&path, "draws")?;
    let fit = cfg.paths.output_dir.join("fit.json");
    let meta = if fit.is_file() { io::read_json::<FitReport>(&fit).ok().map(|r| r.draws) } else { None };
    io::read_draws(&path, g, meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub epsilon: f64,
    pub epsilon_ce: f64,
    pub loss_ce: f64,
    pub delta: f64,
    pub t_star: f64,
    pub no_threshold: bool,
    pub declared_count: usize,
    pub pairs: usize,
    pub fdr_at_cutoff: f64,
    pub fnr_at_cutoff: f64,
}

pub fn disparity_rows(g: &AdjacencyGraph, pairs: &[(usize, usize)], det: &Detection) -> Vec<DisparityRow> {
    let mut rows: Vec<DisparityRow> = pairs
        .iter()
        .zip(&det.v)
        .zip(&det.decisions.decisions)
        .map(|((&(i, j), &v), &d)| DisparityRow {
            region_i: g.labels()[i].clone(),
            region_j: g.labels()[j].clone(),
            v,
            decision: d,
        })
        .collect();
    io::rank_rows(&mut rows);
    rows
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<DetectReport> {
    let s = setup(cfg)?;
    let draws = load_draws(cfg, &s.graph)?;
    let det = detect(cfg, &s, &draws)?;
    let out = &cfg.paths.output_dir;
    io::write_disparities(&out.join("disparities.csv"), &disparity_rows(&s.graph, &s.pairs, &det))?;
    io::write_table(
        &out.join("fdr_fnr.csv"),
        &["t", "fdr", "fnr"],
        fdr_fnr_curve(&det.v).into_iter().map(|(t, f, n)| vec![t, f, n]),
    )?;
    io::write_table(
        &out.join("entropy_scan.csv"),
        &["epsilon", "loss"],
        det.scan.epsilon_grid.iter().zip(&det.scan.loss).map(|(&e, &l)| vec![e, l]),
    )?;
    let d = &det.decisions;
    let report = DetectReport {
        epsilon: det.epsilon,
        epsilon_ce: det.scan.epsilon_ce,
        loss_ce: det.scan.loss_ce,
        delta: d.delta,
        t_star: d.t_star,
        no_threshold: d.no_threshold,
        declared_count: d.declared_count,
        pairs: s.pairs.len(),
        fdr_at_cutoff: d.fdr_at_cutoff,
        fnr_at_cutoff: d.fnr_at_cutoff,
    };
    io::write_json(&out.join("detect.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LppdPoint {
    pub rho: f64,
    pub lppd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSection {
    pub epsilon: f64,
    pub true_disparities: usize,
    pub declared: usize,
    pub metrics: ClassificationReport,
}

/// JSON document written by `diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub seed: u64,
    pub dic: Vec<DicResult>,
    pub lppd: Vec<LppdPoint>,
    pub lppd_draws: usize,
    /// OLS fit of `y` on `X`, one test per coefficient.
    pub classical: ClassicalTests,
    pub spatial_autocorrelation: Option<SpatialAutocorrelation>,
    pub classification: Option<ClassificationSection>,
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<DiagnosticsReport> {
    let dg = &cfg.diagnostics;
    let truth_path = if dg.classification {
        let p = cfg
            .paths
            .truth
            .clone()
            .ok_or_else(|| CliError::Config("classification requested but paths.truth is not set".into()))?;
        require_file(&p, "truth")?;
        Some(p)
    } else {
        None
    };
    let s = setup(cfg)?;
    let seed = cfg.sampler.seed;
    let dic = dg.rho_grid.iter().map(|&r| dic_exact(&s.model, r)).collect::<std::result::Result<Vec<_>, _>>()?;
    let lppd = dg
        .rho_grid
        .iter()
        .map(|&r| waic_lppd_mc(&s.model, r, dg.lppd_draws, seed).map(|l| LppdPoint { rho: r, lppd: l.lppd }))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (n, p) = (s.model.n(), s.model.p());
    let contrasts: Vec<DVector<f64>> = (0..p).map(|k| DVector::from_fn(p, |j, _| if j == k { 1.0 } else { 0.0 })).collect();
    let classical = classical_p_values(&s.model.x, &s.model.y, &DMatrix::identity(n, n), &contrasts)?;
    let spatial_autocorrelation = match dg.permutations {
        Some(perms) => {
            let resid = &s.model.y - &s.model.x * DVector::from_column_slice(&classical.beta_hat);
            Some(moran_geary(resid.as_slice(), &s.graph, perms, seed)?)
        }
        None => None,
    };
    let classification = match truth_path {
        Some(path) => {
            let draws = load_draws(cfg, &s.graph)?;
            let det = detect(cfg, &s, &draws)?;
            let std_diff = io::read_truth(&path, &s.graph, &s.pairs)?;
            let truth: Vec<bool> = std_diff.iter().map(|&d| d > det.epsilon).collect();
            let metrics = classification_metrics(&det.decisions, &truth, &det.v)?;
            Some(ClassificationSection {
                epsilon: det.epsilon,
                true_disparities: truth.iter().filter(|&&t| t).count(),
                declared: det.decisions.declared_count,
                metrics,
            })
        }
        None => None,
    };
    let report = DiagnosticsReport {
        seed,
        dic,
        lppd,
        lppd_draws: dg.lppd_draws,
        classical,
        spatial_autocorrelation,
        classification,
    };
    io::write_json(&cfg.paths.output_dir.join("diagnostics.json"), &report)?;
    Ok(report)
}
