use std::path::{Path, PathBuf};
use std::time::Instant;

use gridopt::analytics::{self, RegressionData, RegressionFit};
use gridopt::forecast::{self, ErrorMetrics, Forecaster, TimeSeries};
use gridopt::grid::{parse_feeder, Network};
use gridopt::opf3::{self, OPF3Result, Opf3Settings, PhaseLoads};
use gridopt::reconfig::{self, BusLoads, ReconfigReport};
use gridopt::rng::SeedTree;
use gridopt::scheduler::{self, ForecastInputs, MarketPrices, Schedule, ValidationReport};
use gridopt::uncertainty::{self, GMMModel};
use gridopt::workers::WorkerPool;
use serde::Serialize;
use serde_json::json;

use crate::config::{BenchTarget, RunConfig};
use crate::error::CliError;

/// State shared by one run: resolved config, root seed, the worker pool and
/// the list of artifacts written so far.
pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub pool: WorkerPool,
    pub out: PathBuf,
    pub outputs: Vec<String>,
}

type CsvWriter<'a> = dyn FnOnce(&mut Vec<u8>) -> Result<(), Box<dyn std::error::Error>> + 'a;

impl Ctx {
    fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    /// Seed for a named module, derived from the root.
    fn module_seed(&self, name: &str) -> u64 {
        self.seeds().child(name).root()
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_csv(&mut self, name: &str, f: Box<CsvWriter<'_>>) -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::io(&self.out.join(name), e))?;
        self.write(name, &buf)?;
        Ok(buf)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::input(format!("config is missing inputs.{what}")))
}

fn network(cfg: &RunConfig) -> Result<Network, CliError> {
    let buses = required(&cfg.inputs.buses, "buses")?;
    let branches = required(&cfg.inputs.branches, "branches")?;
    Ok(parse_feeder(buses, branches)?)
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::input(format!("{name} must be positive, got {v}")))
    }
}

fn load_series(ctx: &Ctx) -> Result<TimeSeries, CliError> {
    let f = &ctx.cfg.forecast;
    match &ctx.cfg.inputs.series {
        Some(p) => Ok(forecast::read_series(p)?),
        None => Ok(forecast::synthetic_load(f.synthetic_hours, f.synthetic_noise, ctx.module_seed("load"))),
    }
}

/// Index of the first held-out sample.
fn split_point(ctx: &Ctx, series: &TimeSeries) -> Result<usize, CliError> {
    let f = &ctx.cfg.forecast;
    if !(f.test_fraction > 0.0 && f.test_fraction < 1.0) {
        return Err(CliError::input(format!("forecast.test_fraction must lie in (0, 1), got {}", f.test_fraction)));
    }
    let n = series.len();
    let split = n - ((n as f64 * f.test_fraction).round() as usize).max(1);
    if split <= f.window {
        return Err(CliError::input(format!(
            "series of {n} samples leaves {split} for training, window is {}",
            f.window
        )));
    }
    Ok(split)
}

#[derive(Serialize)]
struct ForecastSummary {
    window: usize,
    horizon: usize,
    train_samples: usize,
    test_samples: usize,
    hyper: forecast::HyperParams,
    /// one-step-ahead errors
    step1: ErrorMetrics,
    /// all horizon steps pooled
    all_steps: ErrorMetrics,
}

fn report_forecast(ctx: &mut Ctx, f: &Forecaster, series: &TimeSeries, split: usize) -> Result<(), CliError> {
    let horizon = ctx.cfg.forecast.horizon;
    let points = forecast::forecast_sliding(f, series, horizon, split)?;
    if points.is_empty() {
        return Err(CliError::input(format!("no forecast origins: horizon {horizon} exceeds the held-out part")));
    }
    let metrics = |pts: Vec<&forecast::ForecastPoint>| {
        let p: Vec<f64> = pts.iter().map(|p| p.predicted).collect();
        let a: Vec<f64> = pts.iter().map(|p| p.actual).collect();
        forecast::error_metrics(&p, &a)
    };
    let step1 = metrics(points.iter().filter(|p| p.horizon_step == 1).collect())?;
    let all_steps = metrics(points.iter().collect())?;
    ctx.write_csv("forecast.csv", Box::new(|w| Ok(forecast::write_forecast_csv(&points, w)?)))?;
    let summary = ForecastSummary {
        window: f.window,
        horizon,
        train_samples: split,
        test_samples: series.len() - split,
        hyper: f.model.hyper,
        step1,
        all_steps,
    };
    ctx.write_json("metrics.json", &summary)
}

pub fn forecast(ctx: &mut Ctx) -> Result<(), CliError> {
    let series = load_series(ctx)?;
    let split = split_point(ctx, &series)?;
    let fc = ctx.cfg.forecast;
    let f = forecast::train_forecaster(&series.head(split), fc.window, fc.hyper)?;
    report_forecast(ctx, &f, &series, split)
}

fn tune_on(
    ctx: &Ctx,
    series: &TimeSeries,
    split: usize,
    pool: &WorkerPool,
) -> Result<(Forecaster, forecast::TuneOutcome), CliError> {
    let fc = ctx.cfg.forecast;
    let mut tune = fc.tune;
    tune.pso.seed = ctx.module_seed("pso");
    Ok(forecast::tune_forecaster(&series.head(split), fc.window, &fc.grid, &tune, pool)?)
}

pub fn tune(ctx: &mut Ctx) -> Result<(), CliError> {
    let series = load_series(ctx)?;
    let split = split_point(ctx, &series)?;
    let (f, outcome) = tune_on(ctx, &series, split, &ctx.pool)?;
    ctx.write_json("tune.json", &outcome)?;
    report_forecast(ctx, &f, &series, split)
}

fn run_reconfig(ctx: &Ctx, net: &Network, pool: &WorkerPool) -> Result<ReconfigReport, CliError> {
    positive("reconfig.load_scale", ctx.cfg.reconfig.load_scale)?;
    let loads = BusLoads::from_network(net).scaled(ctx.cfg.reconfig.load_scale);
    let params = ctx.cfg.admm.apply(reconfig::opf_params());
    Ok(reconfig::reconfigure(net, &loads, &params, pool)?)
}

fn reconfig_csv(r: &ReconfigReport) -> Box<CsvWriter<'_>> {
    Box::new(move |w| Ok(r.write_csv(w)?))
}

pub fn reconfig(ctx: &mut Ctx) -> Result<(), CliError> {
    let net = network(&ctx.cfg)?;
    let report = run_reconfig(ctx, &net, &ctx.pool)?;
    ctx.write_csv("reconfig.csv", reconfig_csv(&report))?;
    // timing and worker count live in the manifest so this file stays worker-invariant
    let best = report.best();
    let summary = json!({
        "configurations": report.evaluations.len(),
        "feasible": report.evaluations.iter().filter(|e| e.feasible()).count(),
        "baseline_id": report.baseline_id,
        "baseline_loss_kw": report.baseline_loss_kw,
        "best_id": report.best_id,
        "best_open_switches": best.open_switches,
        "best_loss_kw": report.best_loss_kw,
        "reduction_pct": report.reduction_pct,
        "ranking": report.ranking(),
    });
    ctx.write_json("reconfig.json", &summary)
}

fn solve_opf3(ctx: &Ctx, net: &Network, loads: &PhaseLoads, settings: &Opf3Settings) -> Result<OPF3Result, CliError> {
    let bfm = opf3::build_unbalanced_bfm(net, loads, settings)?;
    let res = opf3::solve_unbalanced_opf(&bfm, &ctx.cfg.admm.apply(reconfig::opf_params()))?;
    if !res.converged {
        return Err(CliError::numerical(format!(
            "three-phase OPF did not converge in {} iterations (headroom {} kW)",
            res.iterations, settings.headroom_kw
        )));
    }
    Ok(res)
}

pub fn opf3(ctx: &mut Ctx) -> Result<(), CliError> {
    let net = network(&ctx.cfg)?;
    let sec = ctx.cfg.opf3;
    positive("opf3.load_scale", sec.load_scale)?;
    let loads = PhaseLoads::from_network(&net).scaled(sec.load_scale);
    let mut settings = sec.settings;
    if let Some(kw) = sec.renewable_kw {
        settings.headroom_kw = opf3::default_headroom(kw);
    }
    let with = solve_opf3(ctx, &net, &loads, &settings)?;
    let without = solve_opf3(ctx, &net, &loads, &Opf3Settings { headroom_kw: 0.0, ..settings })?;
    ctx.write_csv("opf3.csv", Box::new(|w| Ok(opf3::write_result_csv(&with, w)?)))?;
    let summary = json!({
        "headroom_kw": settings.headroom_kw,
        "line_loss_kwh": opf3::line_loss(&with),
        "line_loss_kwh_without_opf": opf3::line_loss(&without),
        "fee_cost": with.fee_cost,
        "iterations": with.iterations,
        "max_balance_residual": with.max_balance_residual,
        "exactness": opf3::exactness_report(&with),
        "controls": with.controls,
    });
    ctx.write_json("opf3.json", &summary)
}

#[derive(Serialize)]
struct FitSummary {
    k: usize,
    mdl: f64,
    log_likelihood: f64,
    eta: f64,
    model: GMMModel,
}

fn fit_summary(model: GMMModel, data: &[Vec<f64>], flat: &[f64], bins: usize) -> Result<FitSummary, CliError> {
    Ok(FitSummary {
        k: model.k,
        mdl: uncertainty::mdl_score(&model, data)?,
        log_likelihood: uncertainty::log_likelihood(data, &model)?,
        eta: uncertainty::eta_ratio(&model, flat, bins)?,
        model,
    })
}

pub fn fit_errors(ctx: &mut Ctx) -> Result<(), CliError> {
    let sec = ctx.cfg.errors;
    let flat: Vec<f64> = match &ctx.cfg.inputs.errors {
        Some(p) => forecast::read_series(p)?.values,
        None => uncertainty::sample(&scheduler::default_renewable_error(), 1_000, ctx.module_seed("errors"))?
            .into_iter()
            .map(|v| v[0])
            .collect(),
    };
    let data = uncertainty::as_samples(&flat);
    let em = uncertainty::EMConfig { seed: ctx.module_seed("em"), ..sec.em };
    let gaem_cfg = uncertainty::GAEMConfig { seed: ctx.module_seed("gaem"), ..sec.gaem };
    let (gsm, _) = uncertainty::em_fit(&data, 1, &em)?;
    let (gmm, _) = uncertainty::em_fit(&data, sec.fixed_k, &em)?;
    let gaem = uncertainty::gaem_fit(&data, &gaem_cfg)?;
    let trace = gaem.trace.clone();
    let fits = [
        ("gsm", fit_summary(gsm, &data, &flat, sec.bins)?),
        ("gmm", fit_summary(gmm, &data, &flat, sec.bins)?),
        ("gaem", fit_summary(gaem.model.clone(), &data, &flat, sec.bins)?),
    ];
    ctx.write("error_model.json", gaem.model.to_json().as_bytes())?;
    ctx.write_csv("fit_report.csv", Box::new(|w| Ok(uncertainty::write_fit_report(&trace, w)?)))?;
    let mut eta_csv = String::from("model,k,mdl,eta\n");
    for (name, f) in &fits {
        eta_csv.push_str(&format!("{name},{},{:.6},{:.6}\n", f.k, f.mdl, f.eta));
    }
    ctx.write("eta.csv", eta_csv.as_bytes())?;
    let [(_, gsm), (_, gmm), (_, gaem)] = fits;
    ctx.write_json("eta.json", &json!({ "samples": flat.len(), "gsm": gsm, "gmm": gmm, "gaem": gaem }))
}

struct Day {
    prices: MarketPrices,
    inputs: ForecastInputs,
}

fn load_day(ctx: &Ctx) -> Result<Day, CliError> {
    let inp = &ctx.cfg.inputs;
    let (syn_prices, syn_inputs) = scheduler::windy_night_sunny_day();
    let prices = match &inp.prices {
        Some(p) => scheduler::read_prices(p)?,
        None => syn_prices,
    };
    let (g_r, g_dl) = match &inp.forecasts {
        Some(p) => scheduler::read_forecasts(p)?,
        None => (syn_inputs.g_r, syn_inputs.g_dl),
    };
    let error_model_r = match &inp.error_model {
        Some(p) => GMMModel::load(p)?,
        None => scheduler::default_renewable_error(),
    };
    let inputs = ForecastInputs { g_r, g_dl, error_model_r, error_model_l: ctx.cfg.schedule.load_error };
    inputs.validate()?;
    Ok(Day { prices, inputs })
}

fn build_schedule(ctx: &Ctx, day: &Day) -> Result<Schedule, CliError> {
    let sec = &ctx.cfg.schedule;
    let opts = scheduler::SolveOptions { seed: ctx.module_seed("schedule"), ..sec.solve };
    Ok(scheduler::schedule_day(&day.inputs, &day.prices, &sec.chance, &opts, &ctx.pool)?)
}

fn validate_schedule(ctx: &Ctx, day: &Day, s: &Schedule) -> Result<serde_json::Value, CliError> {
    let sec = &ctx.cfg.schedule;
    let n = sec.validation_samples;
    let rep: ValidationReport =
        scheduler::monte_carlo_validate(s, &day.inputs, &sec.chance, n, ctx.module_seed("validate"), &ctx.pool)?;
    let margin = |p: f64| p - 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let (g, a) = (sec.chance.gamma, sec.chance.alpha);
    Ok(json!({
        "samples": n,
        "gamma_target": g,
        "alpha_target": a,
        "gamma": rep.gamma,
        "alpha": rep.alpha,
        "gamma_satisfied": rep.gamma >= margin(g),
        "alpha_satisfied": rep.alpha >= margin(a),
        "per_hour": rep.per_hour,
    }))
}

fn infeasible_hours(s: &Schedule) -> Vec<usize> {
    s.hours
        .iter()
        .filter_map(|h| match h {
            scheduler::HourStatus::Infeasible { hour, .. } => Some(*hour),
            scheduler::HourStatus::Solved(_) => None,
        })
        .collect()
}

pub fn schedule(ctx: &mut Ctx) -> Result<(), CliError> {
    let day = load_day(ctx)?;
    let s = build_schedule(ctx, &day)?;
    ctx.write_csv("schedule.csv", Box::new(|w| Ok(scheduler::write_schedule_csv(&s, w)?)))?;
    let sec = &ctx.cfg.schedule;
    let total = scheduler::total_cost(&s, sec.fee_cost, sec.beta)?;
    let validation = validate_schedule(ctx, &day, &s)?;
    let bad = infeasible_hours(&s);
    let summary = json!({
        "f_sub": s.f_sub,
        "total_cost": total,
        "feasible": bad.is_empty(),
        "infeasible_hours": bad,
        "use_ca": sec.solve.use_ca,
        "validation": validation,
        "hours": s.hours,
    });
    ctx.write_json("summary.json", &summary)?;
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::numerical(format!("schedule infeasible at hours {bad:?}")))
    }
}

pub fn validate(ctx: &mut Ctx) -> Result<(), CliError> {
    let day = load_day(ctx)?;
    let s = build_schedule(ctx, &day)?;
    let v = validate_schedule(ctx, &day, &s)?;
    let mut csv = String::from("hour,gamma,alpha\n");
    for h in v["per_hour"].as_array().into_iter().flatten() {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            h["hour"],
            h["gamma"].as_f64().unwrap_or(f64::NAN),
            h["alpha"].as_f64().unwrap_or(f64::NAN)
        ));
    }
    ctx.write("validation.csv", csv.as_bytes())?;
    ctx.write_json("validation.json", &v)
}

pub fn regress(ctx: &mut Ctx) -> Result<(), CliError> {
    let mut data: RegressionData = match &ctx.cfg.inputs.regression {
        Some(p) => analytics::read_regression_csv(p)?,
        None => analytics::hvac_fixture(ctx.module_seed("hvac")),
    };
    if ctx.cfg.regress.normalize {
        data = analytics::normalize_minmax(&data);
    }
    let ols = analytics::ols_fit(&data)?;
    let fgls = analytics::fgls_fit(&data)?;
    let mut csv = String::from("term,ols,fgls\n");
    csv.push_str(&format!("intercept,{},{}\n", ols.intercept, fgls.intercept));
    for (j, l) in ols.labels.iter().enumerate() {
        csv.push_str(&format!("{l},{},{}\n", ols.coefficients[j], fgls.coefficients[j]));
    }
    ctx.write("coefficients.csv", csv.as_bytes())?;
    let strip = |mut f: RegressionFit| {
        f.weights = None;
        f
    };
    let summary = json!({
        "rows": data.rows(),
        "normalized": ctx.cfg.regress.normalize,
        "dominant": fgls.dominant(),
        "ols": strip(ols),
        "fgls": strip(fgls),
    });
    ctx.write_json("regress.json", &summary)
}

fn bench_counts(ctx: &Ctx) -> Result<Vec<usize>, CliError> {
    let mut counts = ctx.cfg.benchmark.workers.clone();
    if counts.is_empty() {
        let max = std::thread::available_parallelism().map(usize::from).unwrap_or(1);
        counts = vec![1, 2, 4, max];
    }
    if counts.contains(&0) {
        return Err(CliError::usage("benchmark worker counts must be at least 1"));
    }
    counts.sort_unstable();
    counts.dedup();
    Ok(counts)
}

pub fn benchmark(ctx: &mut Ctx, target: Option<BenchTarget>) -> Result<(), CliError> {
    let target = target.unwrap_or(ctx.cfg.benchmark.target);
    let counts = bench_counts(ctx)?;
    enum Job {
        Reconfig(Network),
        Tune(TimeSeries, usize),
    }
    let job = match target {
        BenchTarget::Reconfig => Job::Reconfig(network(&ctx.cfg)?),
        BenchTarget::Tune => {
            let series = load_series(ctx)?;
            let split = split_point(ctx, &series)?;
            Job::Tune(series, split)
        }
    };
    let mut rows = Vec::with_capacity(counts.len());
    let mut reference: Option<(f64, Vec<u8>)> = None;
    for &n in &counts {
        let pool = WorkerPool::new(n)?;
        let t = Instant::now();
        let bytes = match &job {
            Job::Reconfig(net) => {
                let mut buf = Vec::new();
                run_reconfig(ctx, net, &pool)?.write_csv(&mut buf).map_err(|e| CliError::input(e.to_string()))?;
                buf
            }
            Job::Tune(series, split) => {
                serde_json::to_vec(&tune_on(ctx, series, *split, &pool)?.1).expect("outcome serializes")
            }
        };
        let secs = t.elapsed().as_secs_f64();
        let (base, same) = match &reference {
            Some((b, r)) => (*b, *r == bytes),
            None => (secs, true),
        };
        log::info!("benchmark {target:?}: {n} workers in {secs:.3} s");
        rows.push(json!({ "workers": n, "wall_s": secs, "speedup": base / secs, "identical": same }));
        reference.get_or_insert((secs, bytes));
    }
    let mut csv = String::from("workers,wall_s,speedup,identical\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.4},{}\n",
            r["workers"],
            r["wall_s"].as_f64().unwrap_or(0.0),
            r["speedup"].as_f64().unwrap_or(0.0),
            r["identical"]
        ));
    }
    ctx.write("benchmark.csv", csv.as_bytes())?;
    ctx.write_json("benchmark.json", &json!({ "target": target, "runs": rows }))?;
    if rows.iter().all(|r| r["identical"] == true) {
        Ok(())
    } else {
        Err(CliError::numerical("outputs differ across worker counts"))
    }
}
