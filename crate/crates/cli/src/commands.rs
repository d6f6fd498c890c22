//! The `barron-sweep`, `estimate` and `certify` pipelines. Each noise level
//! is independent; rows come back in grid order whatever the thread count.

use log::{debug, info};
use mmse_bounds::barron::{bound_numeric_route, exact_benchmark, randomization_report, truncation_report, BarronBoundReport};
use mmse_bounds::bounds::{certify, exact_mmse, BoundPath};
use mmse_bounds::estimator::{mmse_star_estimate_with, perturb_ties, Method, MmseEstimate};
use mmse_bounds::mechanism::{apply_mechanism, PostProcessing, Target};
use mmse_bounds::rng::derive_seed;
use mmse_bounds::scenario::{sample_raw, Scenario};
use mmse_bounds::special::QuadratureSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ScenarioSpec};
use crate::error::{at, CliError, Result};
use crate::output::{Cell, Table};

/// Seed of the `index`-th grid point.
pub fn sigma_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

fn over_grid<T: Send>(cfg: &ExperimentConfig, f: impl Fn(usize, f64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    let sigmas = cfg.sigmas();
    pool.install(|| sigmas.par_iter().enumerate().map(|(i, &s)| f(i, s)).collect())
}

pub fn barron_sweep(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let sc = cfg.scenario()?;
    let source = cfg.moment_source(&sc)?;
    let spec = QuadratureSpec::default();
    let identity = matches!(cfg.scenario, ScenarioSpec::Identity);
    let rows = over_grid(cfg, |_, sigma| {
        let trunc = cfg.mechanism_at(sigma, PostProcessing::Truncate)?;
        let rand = cfg.mechanism_at(sigma, PostProcessing::Randomize)?;
        let bench = if identity { Cell::num_or_na(exact_benchmark(sigma).map(|b| trunc.r * b)) } else { Cell::Na };
        let (t5, v5) = bound_cells(truncation_report(&sc, &trunc, source, &spec));
        let (t6, v6) = bound_cells(randomization_report(&sc, &rand));
        let eta = Cell::num_or_na(bound_numeric_route(Target::Eta, &sc, &trunc, &spec).map(|r| r.scaled_bound));
        let theta = Cell::num_or_na(bound_numeric_route(Target::Theta, &sc, &rand, &spec).map(|r| r.scaled_bound));
        debug!("barron sweep sigma = {sigma} done");
        Ok(vec![Cell::Num(sigma), bench, t5, v5, t6, v6, eta, theta])
    })?;
    Ok(Table {
        header: vec!["sigma", "prop2_benchmark", "thm5_bound", "thm5_valid", "thm6_bound", "thm6_valid", "numeric_eta", "numeric_theta"],
        rows,
    })
}

/// Scaled bound if the report is in its large-σ regime, with the validity flag.
fn bound_cells(report: mmse_bounds::Result<BarronBoundReport>) -> (Cell, Cell) {
    match report {
        Ok(r) if r.valid => (Cell::Num(r.scaled_bound), Cell::Bool(true)),
        _ => (Cell::Na, Cell::Bool(false)),
    }
}

/// One pass of sampling, release and estimation at a grid point.
#[derive(Debug, Clone, Serialize)]
pub struct GridEstimate {
    pub sigma: f64,
    pub seed: u64,
    pub n_effective: usize,
    pub estimate: MmseEstimate,
}

pub fn estimate_at(cfg: &ExperimentConfig, sc: &Scenario, mode: PostProcessing, index: usize, sigma: f64) -> Result<GridEstimate> {
    let seed = sigma_seed(cfg.seed, index);
    let mech = cfg.mechanism_at(sigma, mode)?;
    let raw = sample_raw(sc, cfg.estimator.n, seed).map_err(at(sigma))?;
    let mut released = apply_mechanism(&raw, &mech, seed).map_err(at(sigma))?;
    if cfg.estimator.perturb_ties {
        released = perturb_ties(&released, seed);
    }
    let estimate =
        mmse_star_estimate_with(&released, cfg.k(), &cfg.estimator.protocol, seed, cfg.estimator.minimizers).map_err(at(sigma))?;
    info!("sigma = {sigma}: n_effective = {}, estimate = {} ({:?})", released.len(), estimate.value, estimate.method);
    Ok(GridEstimate { sigma, seed, n_effective: released.len(), estimate })
}

fn method_cell(m: Method) -> Cell {
    Cell::Text(match m {
        Method::Gd => "gd".into(),
        Method::Dp => "dp".into(),
    })
}

pub fn estimate(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let sc = cfg.scenario()?;
    let rows = over_grid(cfg, |i, sigma| {
        let g = estimate_at(cfg, &sc, cfg.mechanism.mode, i, sigma)?;
        let e = &g.estimate;
        Ok(vec![
            Cell::Num(sigma),
            Cell::Int(g.n_effective),
            Cell::Num(e.dp_loss),
            e.gd_loss.map_or(Cell::Na, Cell::Num),
            Cell::Num(e.value),
            method_cell(e.method),
        ])
    })?;
    Ok(Table { header: vec!["sigma", "n_effective", "dp_loss", "gd_loss", "estimate", "method"], rows })
}

/// A certificate row before formatting. Bound fields are `None` below the
/// validity threshold unless the unconditional form is allowed.
#[derive(Debug, Clone, Serialize)]
pub struct CertifyRow {
    pub sigma: f64,
    pub estimate: f64,
    pub barron_bound: Option<f64>,
    pub epsilon: Option<f64>,
    pub lower_bound: Option<f64>,
    pub oracle_mmse: f64,
}

pub fn certify_at(cfg: &ExperimentConfig, sc: &Scenario, index: usize, sigma: f64) -> Result<CertifyRow> {
    let path = cfg.bound.path;
    let mode = path.mode();
    let spec = QuadratureSpec::default();
    let g = estimate_at(cfg, sc, mode, index, sigma)?;
    let mech = cfg.mechanism_at(sigma, mode)?;
    let report = match path {
        BoundPath::TanhTheta => randomization_report(sc, &mech),
        BoundPath::IdentityEta => truncation_report(sc, &mech, cfg.moment_source(sc)?, &spec),
    }
    .map_err(at(sigma))?;
    let oracle_mmse = exact_mmse(sc, &mech, &spec).map_err(at(sigma))?;
    let cert = if report.valid || cfg.bound.allow_unconditional {
        let cert = certify(g.estimate.value, g.estimate.method, cfg.k(), g.n_effective, cfg.bound.delta, &report, path, cfg.bound.allow_unconditional)
            .map_err(at(sigma))?;
        Some(cert)
    } else {
        None
    };
    Ok(CertifyRow {
        sigma,
        estimate: g.estimate.value,
        barron_bound: cert.as_ref().map(|c| c.barron_bound_used),
        epsilon: cert.as_ref().map(|c| c.epsilon),
        lower_bound: cert.as_ref().map(|c| c.lower_bound),
        oracle_mmse,
    })
}

pub fn certify_rows(cfg: &ExperimentConfig) -> Result<Vec<CertifyRow>> {
    cfg.validate_certify()?;
    let sc = cfg.scenario()?;
    over_grid(cfg, |i, sigma| certify_at(cfg, &sc, i, sigma))
}

pub fn certify_table(cfg: &ExperimentConfig) -> Result<Table> {
    let opt = |v: Option<f64>| v.map_or(Cell::Na, Cell::Num);
    let rows = certify_rows(cfg)?
        .into_iter()
        .map(|r| vec![Cell::Num(r.sigma), Cell::Num(r.estimate), opt(r.barron_bound), opt(r.epsilon), opt(r.lower_bound), Cell::Num(r.oracle_mmse)])
        .collect();
    Ok(Table { header: vec!["sigma", "estimate", "barron_bound", "epsilon", "lower_bound", "oracle_mmse"], rows })
}

/// Config echo plus the seed of every grid point.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub sigma_seeds: Vec<(f64, u64)>,
    pub config: &'a ExperimentConfig,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, cfg: &'a ExperimentConfig) -> Self {
        let sigma_seeds = cfg.sigmas().iter().enumerate().map(|(i, &s)| (s, sigma_seed(cfg.seed, i))).collect();
        Self { command, version: env!("CARGO_PKG_VERSION"), seed: cfg.seed, threads: cfg.threads, sigma_seeds, config: cfg }
    }
}
