//! The experiments behind each subcommand.

use nalgebra::DMatrix;
use serde_json::{json, Value};

use scatterlab::diffusion::{chain_vs_sde_compare, simulate_ensemble, simulate_path, CompareConfig, EulerConfig, SdeModel};
use scatterlab::family::ProfileFamily;
use scatterlab::geometry::{Profile, Surface};
use scatterlab::operators::{
    compute_a_adaptive, generator_convergence, ConvergenceConfig, LimitOperator, ScatterMatrices,
};
use scatterlab::rng::stream_rng;
use scatterlab::scattering::{run_chain, ChainConfig, HiddenKind, HiddenLaw, Sampling, StationaryLaw};
use scatterlab::stats::{autocorrelation_time, exit_angle, histogram, ks_test, ks_test_effective, GofReport, ReferenceLaw};
use scatterlab::testfn::RadialBump;

use crate::config::{require, ConfigError, Experiment, Marginal, ModelSpec, OperatorKind, RunConfig, SamplingKind};
use crate::output::{indexed, Cell, RunCounters, Table};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Runtime(scatterlab::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<scatterlab::Error> for RunError {
    fn from(e: scatterlab::Error) -> Self {
        RunError::Runtime(e)
    }
}

/// Tables, an optional report and the counters of one run.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub report: Option<Value>,
    pub counters: RunCounters,
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    match cfg.experiment {
        Experiment::SimulateChain => simulate_chain(cfg),
        Experiment::SimulateSde => simulate_sde(cfg),
        Experiment::ComputeMatrices => compute_matrices(cfg),
        Experiment::VerifyGenerator => verify_generator(cfg),
        Experiment::StationaryTest => stationary_test(cfg),
        Experiment::ChainVsSde => chain_vs_sde(cfg),
    }
}

/// Stream reserved for drawing a default initial velocity.
const INITIAL_STREAM: u64 = u64::MAX;

fn chain_setup(cfg: &RunConfig) -> Result<(Profile, ChainConfig), RunError> {
    let profile = cfg.build_profile()?;
    let hidden = cfg.build_hidden(Some(&profile))?;
    let m = RunConfig::observed_dim(profile.dim(), &hidden)?;
    let section = require(&cfg.chain, "chain")?;
    if section.record_every == 0 {
        return Err(ConfigError::new("chain.record_every", "must be at least 1").into());
    }
    let initial_v = match &section.initial {
        Some(v) => v.clone(),
        None => StationaryLaw::for_hidden(&hidden, m, 1.0)
            .map_err(|e| ConfigError::from_core("chain.initial", e))?
            .sample(&mut stream_rng(cfg.seed, INITIAL_STREAM)),
    };
    if initial_v.len() != m || !(initial_v[m - 1] < 0.0) || initial_v.iter().any(|x| !x.is_finite()) {
        return Err(ConfigError::new(
            "chain.initial",
            format!("must be a finite {m}-vector with negative last component"),
        )
        .into());
    }
    let chain = ChainConfig {
        hidden,
        initial_v,
        steps: section.steps,
        seed: cfg.seed,
        max_resamples: section.max_resamples,
    };
    Ok((profile, chain))
}

fn simulate_chain(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let (profile, chain_cfg) = chain_setup(cfg)?;
    let every = require(&cfg.chain, "chain")?.record_every;
    let m = chain_cfg.initial_v.len();
    let mut header = vec!["step".to_string()];
    header.extend(indexed("v", m));
    header.extend(["collisions".to_string(), "resamples".to_string()]);
    let mut table = Table::new("data", header);
    let mut chain = run_chain(&profile, &chain_cfg)?;
    let mut sum = vec![0.0; m];
    let mut last = chain_cfg.initial_v.clone();
    for sample in chain.by_ref() {
        let s = sample?;
        if s.step > 0 {
            for (a, x) in sum.iter_mut().zip(&s.v) {
                *a += x;
            }
        }
        if s.step % every == 0 || s.step == chain_cfg.steps {
            let mut row = vec![Cell::Int(s.step)];
            row.extend(s.v.iter().map(|&x| Cell::Float(x)));
            row.extend([Cell::Int(s.collisions), Cell::Int(u64::from(s.resamples))]);
            table.push(row);
        }
        last = s.v;
    }
    let mut counters = RunCounters::default();
    counters.add_events(chain.counters());
    let steps = chain_cfg.steps.max(1) as f64;
    let report = json!({
        "steps": chain_cfg.steps,
        "initial_velocity": chain_cfg.initial_v,
        "final_velocity": last,
        "mean_velocity": sum.iter().map(|x| x / steps).collect::<Vec<_>>(),
        "mean_collisions_per_event": counters.collisions as f64 / steps,
    });
    Ok(Outcome {
        tables: vec![table],
        report: Some(report),
        counters,
    })
}

/// How a diffusion is judged against its stationary law: a scalar statistic
/// of the state and its stationary CDF.
enum StationaryMarginal {
    /// `|v|` under `|v_m| exp(-|v|^2 / 2 sigma2)` in `m` dimensions.
    Speed { m: usize, sigma2: f64 },
    /// `V` with density `(v / sigma2) exp(-v^2 / 2 sigma2)`.
    Rayleigh { sigma2: f64 },
    /// `|v|` under the uniform law on the unit ball of `R^d`.
    BallRadius { d: usize },
}

impl StationaryMarginal {
    fn name(&self) -> &'static str {
        match self {
            StationaryMarginal::Speed { .. } => "speed",
            StationaryMarginal::Rayleigh { .. } => "speed",
            StationaryMarginal::BallRadius { .. } => "radius",
        }
    }

    fn statistic(&self, v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn cdf(&self, x: f64) -> f64 {
        match *self {
            StationaryMarginal::Speed { m, sigma2 } => ReferenceLaw::MbSpeed { m, sigma2 }.cdf(x),
            StationaryMarginal::Rayleigh { sigma2 } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x * x / (2.0 * sigma2)).exp_m1()
                }
            }
            StationaryMarginal::BallRadius { d } => x.clamp(0.0, 1.0).powi(d as i32),
        }
    }
}

fn family_matrices(cfg: &RunConfig, hidden: &HiddenLaw) -> Result<(ProfileFamily, ScatterMatrices), ConfigError> {
    let fam = cfg.validate_family()?.clone();
    let mats = fam
        .scatter_matrices(hidden)
        .map_err(|e| ConfigError::from_core("family", e))?;
    Ok((fam, mats))
}

fn mb_model(mats: ScatterMatrices) -> Result<(SdeModel, Option<StationaryMarginal>), ConfigError> {
    let m = mats.observed_dim();
    let sigma2 = mats.sigma2;
    let model = SdeModel::mb(mats).map_err(|e| ConfigError::from_core("model", e))?;
    Ok((model, sigma2.map(|sigma2| StationaryMarginal::Speed { m, sigma2 })))
}

fn build_model(cfg: &RunConfig, spec: &ModelSpec) -> Result<(SdeModel, Option<StationaryMarginal>), ConfigError> {
    let wrap = |e| ConfigError::from_core("model", e);
    match spec {
        ModelSpec::Mb { lambda } => {
            let n = lambda.len();
            if n == 0 || lambda.iter().any(|row| row.len() != n) {
                return Err(ConfigError::new("model.lambda", "must be a nonempty square matrix"));
            }
            let l = DMatrix::from_fn(n, n, |i, j| lambda[i][j]);
            let hidden = cfg.build_hidden(None)?;
            mb_model(ScatterMatrices::new(l, &hidden).map_err(wrap)?)
        }
        ModelSpec::Legendre { lambdas } => {
            let d = lambdas.len();
            Ok((SdeModel::legendre(lambdas.clone()).map_err(wrap)?, Some(StationaryMarginal::BallRadius { d })))
        }
        ModelSpec::Laguerre { k, v0, sigma2 } => Ok((
            SdeModel::laguerre(*k, *v0, *sigma2).map_err(wrap)?,
            Some(StationaryMarginal::Rayleigh { sigma2: *sigma2 }),
        )),
        ModelSpec::NormalizedLaguerre => Ok((SdeModel::normalized_laguerre(), Some(StationaryMarginal::Rayleigh { sigma2: 1.0 }))),
        ModelSpec::Family => {
            let hidden = cfg.build_hidden(None)?;
            let (_, mats) = family_matrices(cfg, &hidden)?;
            if mats.trace_lambda() == 0.0 {
                return Ok((SdeModel::frozen(mats.observed_dim()), None));
            }
            mb_model(mats)
        }
    }
}

fn euler_config(cfg: &RunConfig) -> Result<EulerConfig, ConfigError> {
    let s = require(&cfg.sde, "sde")?;
    if !(s.dt.is_finite() && s.dt > 0.0) {
        return Err(ConfigError::new("sde.dt", "must be positive"));
    }
    if s.record_every == 0 {
        return Err(ConfigError::new("sde.record_every", "must be at least 1"));
    }
    if s.paths == 0 {
        return Err(ConfigError::new("sde.paths", "must be at least 1"));
    }
    let mut e = EulerConfig::new(s.dt, s.steps, s.initial.clone(), cfg.seed);
    e.record_every = s.record_every;
    if let Some(r) = s.max_retries {
        e.max_retries = r;
    }
    if let Some(h) = s.max_halvings {
        e.max_halvings = h;
    }
    Ok(e)
}

fn simulate_sde(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let spec = require(&cfg.model, "model")?;
    let (model, marginal) = build_model(cfg, spec)?;
    let euler = euler_config(cfg)?;
    let d = model.dim();
    if euler.initial.len() != d || !model.domain().contains(&euler.initial) {
        return Err(ConfigError::new("sde.initial", format!("must be a {d}-vector strictly inside the state domain")).into());
    }
    let paths = require(&cfg.sde, "sde")?.paths;
    let mut counters = RunCounters::default();
    if paths == 1 {
        let path = simulate_path(&model, &euler)?;
        counters.add_boundary(&path.counts);
        let mut header = vec!["t".to_string()];
        header.extend(indexed("v", d));
        header.push("retries".into());
        let mut table = Table::new("data", header);
        let mut mean = vec![0.0; d];
        for ((t, v), r) in path.times.iter().zip(&path.states).zip(&path.retries) {
            let mut row = vec![Cell::Float(*t)];
            row.extend(v.iter().map(|&x| Cell::Float(x)));
            row.push(Cell::Int(u64::from(*r)));
            table.push(row);
        }
        let recorded = path.states.len().saturating_sub(1).max(1) as f64;
        for v in path.states.iter().skip(1) {
            for (a, x) in mean.iter_mut().zip(v) {
                *a += x / recorded;
            }
        }
        let report = json!({
            "model": model.name(),
            "steps": euler.steps,
            "dt": euler.dt,
            "time_average_of_recorded_states": mean,
            "boundary": path.counts,
        });
        return Ok(Outcome {
            tables: vec![table],
            report: Some(report),
            counters,
        });
    }
    let (finals, counts) = simulate_ensemble(&model, &euler, paths)?;
    counters.add_boundary(&counts);
    let mut header = vec!["path".to_string()];
    header.extend(indexed("v", d));
    let mut table = Table::new("data", header);
    for (i, v) in finals.iter().enumerate() {
        let mut row = vec![Cell::Int(i as u64)];
        row.extend(v.iter().map(|&x| Cell::Float(x)));
        table.push(row);
    }
    let n = finals.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| finals.iter().map(|v| v[i]).sum::<f64>() / n).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| finals.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect();
    let ks = match &marginal {
        Some(mg) if finals.len() >= 100 => {
            let xs: Vec<f64> = finals.iter().map(|v| mg.statistic(v)).collect();
            let rep = ks_test(&xs, |x| mg.cdf(x))?;
            json!({ "marginal": mg.name(), "report": rep })
        }
        _ => Value::Null,
    };
    let report = json!({
        "model": model.name(),
        "paths": paths,
        "t_end": euler.dt * euler.steps as f64,
        "mean": mean,
        "covariance": cov,
        "ks_vs_stationary": ks,
        "boundary": counts,
    });
    Ok(Outcome {
        tables: vec![table],
        report: Some(report),
        counters,
    })
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn scalars_json(mats: &ScatterMatrices) -> Value {
    json!({
        "c": matrix_json(&mats.c),
        "lambda": matrix_json(&mats.lambda),
        "trace_c_lambda": mats.trace_c_lambda,
        "trace_lambda": mats.trace_lambda(),
        "trace_lambda_hidden": mats.trace_lambda_wedge,
        "sigma2": mats.sigma2,
        "adapted": mats.adapted,
    })
}

fn matrix_table(entries: &[(&str, &DMatrix<f64>)]) -> Table {
    let mut header = vec!["row".to_string(), "col".to_string()];
    header.extend(entries.iter().map(|(name, _)| name.to_string()));
    let mut table = Table::new("data", header);
    let n = entries[0].1.nrows();
    for i in 0..n {
        for j in 0..n {
            let mut row = vec![Cell::Int(i as u64), Cell::Int(j as u64)];
            row.extend(entries.iter().map(|(_, m)| Cell::Float(m[(i, j)])));
            table.push(row);
        }
    }
    table
}

fn compute_matrices(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let section = cfg.matrices.clone().unwrap_or_default();
    if section.points_per_dim == 0 || section.max_points_per_dim < section.points_per_dim {
        return Err(ConfigError::new("matrices.points_per_dim", "must be positive and at most max_points_per_dim").into());
    }
    match (&cfg.profile, &cfg.family) {
        (Some(_), Some(_)) => Err(ConfigError::general("give either [profile] or [family], not both").into()),
        (None, None) => Err(ConfigError::new("profile", "compute-matrices needs a [profile] or a [family]").into()),
        (Some(_), None) => {
            let profile = cfg.build_profile()?;
            let hidden = cfg.build_hidden(Some(&profile))?;
            RunConfig::observed_dim(profile.dim(), &hidden)?;
            let adaptive = compute_a_adaptive(&profile, section.points_per_dim, section.tolerance, section.max_points_per_dim)?;
            let h = profile.flatness();
            // First-order estimate of the limit matrix from a single floor.
            let lambda = &adaptive.a / h;
            let mats = ScatterMatrices::new(lambda.clone(), &hidden)?;
            let report = json!({
                "flatness": h,
                "a": matrix_json(&adaptive.a),
                "points_per_dim": adaptive.points_per_dim,
                "last_change": adaptive.change,
                "converged": adaptive.converged,
                "lambda_estimate": "A / h",
                "derived": scalars_json(&mats),
            });
            Ok(Outcome {
                tables: vec![matrix_table(&[("a", &adaptive.a), ("lambda", &lambda), ("c", &mats.c)])],
                report: Some(report),
                counters: RunCounters::default(),
            })
        }
        (None, Some(_)) => {
            let hidden = cfg.build_hidden(None)?;
            let (fam, mats) = family_matrices(cfg, &hidden)?;
            let (fit, dev) = fam.cross_check(&section.h_sequence, section.points_per_dim)?;
            let report = json!({
                "family": fam,
                "h_sequence": section.h_sequence,
                "points_per_dim": section.points_per_dim,
                "lambda_fit": matrix_json(&fit.lambda),
                "fit_residual": fit.residual,
                "max_deviation_from_closed_form": dev,
                "derived": scalars_json(&mats),
            });
            Ok(Outcome {
                tables: vec![matrix_table(&[("lambda", &mats.lambda), ("lambda_fit", &fit.lambda), ("c", &mats.c)])],
                report: Some(report),
                counters: RunCounters::default(),
            })
        }
    }
}

fn limit_operator(kind: OperatorKind, mats: ScatterMatrices) -> Result<LimitOperator, ConfigError> {
    match kind {
        OperatorKind::Mb => Ok(LimitOperator::Mb(mats)),
        OperatorKind::Legendre => {
            if mats.hidden_dim != 0 {
                return Err(ConfigError::new("generator.operator", "the constant-speed form needs nothing hidden"));
            }
            let obs = mats.observed_lambda();
            let m = obs.nrows();
            let block = obs.view((0, 0), (m - 1, m - 1));
            let off = (0..m - 1)
                .flat_map(|i| (0..m - 1).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| block[(i, j)].abs())
                .fold(0.0, f64::max);
            if off > 0.0 {
                return Err(ConfigError::new("generator.operator", "the constant-speed form needs a diagonal matrix"));
            }
            Ok(LimitOperator::Legendre((0..m - 1).map(|i| block[(i, i)]).collect()))
        }
        OperatorKind::Laguerre => {
            if mats.observed_dim() != 1 {
                return Err(ConfigError::new("generator.operator", "the speed form needs exactly one observed coordinate"));
            }
            let sigma2 = mats
                .sigma2
                .ok_or_else(|| ConfigError::new("generator.operator", "the speed form needs a Gaussian hidden law"))?;
            Ok(LimitOperator::Laguerre {
                lambda: mats.trace_lambda(),
                sigma2,
            })
        }
    }
}

fn verify_generator(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let g = require(&cfg.generator, "generator")?;
    let hidden = cfg.build_hidden(None)?;
    let (fam, mats) = family_matrices(cfg, &hidden)?;
    let m = mats.observed_dim();
    if g.v.len() != m || !(g.v[m - 1] < 0.0) {
        return Err(ConfigError::new("generator.v", format!("must be a {m}-vector with negative last component")).into());
    }
    let op = limit_operator(g.operator, mats)?;
    let phi = RadialBump::new(g.center.clone(), g.radius).map_err(|e| ConfigError::from_core("generator", e))?;
    if g.center.len() != op.project(&g.v).len() {
        return Err(ConfigError::new("generator.center", "dimension does not match the operator's coordinates").into());
    }
    if !(g.n0.is_finite() && g.n0 > 0.0) {
        return Err(ConfigError::new("generator.n0", "must be positive").into());
    }
    let sampling = match g.sampling {
        SamplingKind::Iid => Sampling::Iid,
        SamplingKind::Lattice => Sampling::ShiftedLattice { replicates: g.replicates },
    };
    let conv = ConvergenceConfig {
        h_sequence: g.h_sequence.clone(),
        n0: g.n0,
        max_samples: g.max_samples,
        seed: cfg.seed,
        sampling,
        denominator: g.denominator,
    };
    let rows = generator_convergence(|h| fam.profile(h), &hidden, &op, &phi, &g.v, &conv).map_err(|e| match e {
        scatterlab::Error::InvalidParameter { name, reason } => RunError::Config(ConfigError::new(format!("generator.{name}"), reason)),
        other => RunError::Runtime(other),
    })?;
    let header = ["h", "estimate", "analytic", "abs_error", "std_error"].map(String::from).to_vec();
    let mut table = Table::new("data", header);
    for r in &rows {
        table.push(vec![r.h.into(), r.estimate.into(), r.analytic.into(), r.abs_error.into(), r.std_error.into()]);
    }
    let monotone = rows.windows(2).all(|w| w[1].abs_error < w[0].abs_error);
    let report = json!({ "rows": rows, "strictly_decreasing": monotone });
    Ok(Outcome {
        tables: vec![table],
        report: Some(report),
        counters: RunCounters::default(),
    })
}

/// Largest integrated autocorrelation time of the series and its median indicator.
fn correlation_time(series: &[f64]) -> f64 {
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let ind: Vec<f64> = series.iter().map(|&x| if x < median { 1.0 } else { 0.0 }).collect();
    autocorrelation_time(series).tau.max(autocorrelation_time(&ind).tau).max(1.0)
}

fn stationary_test(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let (profile, chain_cfg) = chain_setup(cfg)?;
    let section = cfg.stationary.clone().unwrap_or_default();
    if section.marginals.is_empty() {
        return Err(ConfigError::new("stationary.marginals", "list at least one marginal").into());
    }
    if section.bins == 0 {
        return Err(ConfigError::new("stationary.bins", "must be positive").into());
    }
    let m = chain_cfg.initial_v.len();
    let sigma2 = match chain_cfg.hidden.kind() {
        HiddenKind::Gaussian { sigma2 } => Some(sigma2),
        _ => None,
    };
    for mg in &section.marginals {
        match mg {
            Marginal::Angle if m != 2 => {
                return Err(ConfigError::new("stationary.marginals", "the angle marginal needs two observed coordinates").into())
            }
            Marginal::Speed if sigma2.is_none() => {
                return Err(ConfigError::new("stationary.marginals", "the speed marginal needs a Gaussian hidden law").into())
            }
            _ => {}
        }
    }
    if chain_cfg.steps < 100 {
        return Err(ConfigError::new("chain.steps", "need at least 100 steps").into());
    }
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(chain_cfg.steps as usize); section.marginals.len()];
    let mut chain = run_chain(&profile, &chain_cfg)?;
    for sample in chain.by_ref().skip(1) {
        let v = sample?.v;
        for (mg, out) in section.marginals.iter().zip(series.iter_mut()) {
            out.push(match mg {
                Marginal::Angle => exit_angle(&v),
                Marginal::Speed => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            });
        }
    }
    let mut counters = RunCounters::default();
    counters.add_events(chain.counters());
    let mut tables = Vec::new();
    let mut reports: Vec<(Marginal, f64, GofReport)> = Vec::new();
    for (mg, xs) in section.marginals.iter().zip(&series) {
        let law = match mg {
            Marginal::Angle => ReferenceLaw::CosineAngle,
            Marginal::Speed => ReferenceLaw::MbSpeed { m, sigma2: sigma2.unwrap_or(1.0) },
        };
        let (lo, hi) = match mg {
            Marginal::Angle => (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            Marginal::Speed => (0.0, 6.0 * sigma2.unwrap_or(1.0).sqrt()),
        };
        let tau = correlation_time(xs);
        let rep = ks_test_effective(xs, |x| law.cdf(x), xs.len() as f64 / tau)?;
        let bins = histogram(xs, section.bins, lo, hi, |x| law.cdf(x))?;
        let name = if tables.is_empty() { "data".to_string() } else { mg.name().to_string() };
        let mut table = Table::new(&name, ["bin_left", "bin_right", "count", "expected"].map(String::from).to_vec());
        for b in bins {
            table.push(vec![b.left.into(), b.right.into(), b.count.into(), b.expected.into()]);
        }
        tables.push(table);
        reports.push((*mg, tau, rep));
    }
    let pass = reports.iter().all(|(_, _, r)| r.passes(section.significance));
    let report = json!({
        "steps": chain_cfg.steps,
        "significance": section.significance,
        "pass": pass,
        "marginals": reports.iter().enumerate().map(|(i, (mg, tau, r))| json!({
            "marginal": mg.name(),
            "histogram_file": if i == 0 { "data.csv".to_string() } else { format!("data_{}.csv", mg.name()) },
            "autocorrelation_time": tau,
            "gof": r,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        tables,
        report: Some(report),
        counters,
    })
}

fn chain_vs_sde(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let c = require(&cfg.compare, "compare")?;
    let hidden = cfg.build_hidden(None)?;
    let fam = cfg.validate_family()?.clone();
    let spec = cfg.model.clone().unwrap_or(ModelSpec::Family);
    let (model, _) = build_model(cfg, &spec)?;
    let compare = CompareConfig {
        h_sequence: c.h_sequence.clone(),
        t_end: c.t_end,
        n_paths: c.paths,
        initial: c.initial.clone(),
        sde_dt: c.sde_dt,
        seed: cfg.seed,
    };
    if !(c.sde_dt.is_finite() && c.sde_dt > 0.0) {
        return Err(ConfigError::new("compare.sde_dt", "must be positive").into());
    }
    let report = chain_vs_sde_compare(|h| fam.profile(h), &hidden, &model, &compare).map_err(|e| match e {
        scatterlab::Error::InvalidParameter { name, reason } => RunError::Config(ConfigError::new(format!("compare.{name}"), reason)),
        other => RunError::Runtime(other),
    })?;
    let mut counters = RunCounters::default();
    counters.add_boundary(&report.boundary);
    let header = ["h", "chain_steps", "coordinate", "ks", "ks_p_value", "mean_diff", "cov_diff"].map(String::from).to_vec();
    let mut table = Table::new("data", header);
    for row in &report.rows {
        counters.add_events(&row.counters);
        for i in 0..row.ks.len() {
            table.push(vec![
                row.h.into(),
                row.chain_steps.into(),
                Cell::Int(i as u64 + 1),
                row.ks[i].into(),
                row.ks_p_value[i].into(),
                row.mean_diff[i].into(),
                row.cov_diff.into(),
            ]);
        }
    }
    let mut value = serde_json::to_value(&report).map_err(|e| scatterlab::Error::Domain(e.to_string()))?;
    value["model"] = json!(model.name());
    Ok(Outcome {
        tables: vec![table],
        report: Some(value),
        counters,
    })
}
