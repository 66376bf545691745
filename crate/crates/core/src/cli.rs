//! Command implementations behind the `fairbary` binary.
//!
//! Every command resolves a [`RunConfig`] (built-in defaults, then the
//! `FAIRBARY_SEED` environment variable, then the `--config` file, then
//! flags), writes the resolved snapshot next to its outputs, and runs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{map_error, SolverConfig};
use crate::maps::LipschitzBound;
use crate::measures::{oracle_family, DomainInterval, EmpiricalMeasure, Weights, DEFAULT_ORACLE_GRID};
use crate::metrics::{
    check_fairness_bound, decomposition_check, unfairness, unfairness_of_measures, write_table, EvalSpec,
    FeatureSamples,
};
use crate::regression::{fit_fair, BaseSpec, Bundle, Dataset, FairConfig, MAPS_FILE};
use crate::synth::{base_error, dataset, sample_groups, truth_error, GroundTruth, ScenarioKind, ScenarioSpec};

pub const SEED_ENV: &str = "FAIRBARY_SEED";
pub const SNAPSHOT_FILE: &str = "resolved_config.json";

#[derive(Debug, Parser)]
#[command(name = "fairbary", version, about = "Demographic-parity fair regression through barycenter transport maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic data set and its truth sidecar.
    Simulate(Flags),
    /// Fit a fair regressor and write a model bundle.
    Fit(Flags),
    /// Apply a bundle to a data file.
    Transform(Flags),
    /// Held-out error and unfairness of a bundle.
    Evaluate(Flags),
    /// Rate sweep over sample sizes and replicates.
    Sweep(Flags),
}

/// Flags shared by all commands; each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file with any subset of the configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (simulate, fit, evaluate, sweep) or predictions file (transform).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// translation, gaussian or nonlinear-monotone.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Rows per group, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Outcome domain as `lo,hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub omega: Option<Vec<f64>>,
    #[arg(long)]
    pub lipschitz: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Fixed sieve level instead of the sample-size rule.
    #[arg(long)]
    pub level: Option<u32>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Worker threads for the sweep (default: available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A scenario given by name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioChoice {
    Named(ScenarioKind),
    Full(ScenarioSpec),
}

impl ScenarioChoice {
    pub fn resolve(&self, seed: u64) -> ScenarioSpec {
        match self {
            ScenarioChoice::Named(k) => ScenarioSpec::by_name(*k, seed),
            ScenarioChoice::Full(s) => ScenarioSpec { seed, ..s.clone() },
        }
    }
}

/// All configuration keys. Unset keys fall back to per-command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub scenario: Option<ScenarioChoice>,
    pub n: Option<Vec<usize>>,
    pub weights: Option<Vec<f64>>,
    pub omega: Option<DomainInterval>,
    pub lipschitz: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub level: Option<u32>,
    pub base: Option<BaseSpec>,
    pub solver: Option<SolverConfig>,
    pub n_values: Option<Vec<usize>>,
    pub replicates: Option<usize>,
    pub threads: Option<usize>,
    /// Quadrature resolution for population quantities in sweeps and evaluation.
    pub eval_resolution: Option<usize>,
}

impl RunConfig {
    /// Layers the environment seed, the config file and the flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = Some(v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an integer")))?);
        }
        if let Some(path) = &flags.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
            let file: RunConfig = serde_json::from_str(&text)?;
            cfg.overlay(file);
        }
        cfg.overlay(flags.to_config()?);
        Ok(cfg)
    }

    fn overlay(&mut self, o: RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { self.$f = o.$f; } )* };
        }
        take!(
            seed, out, data, bundle, truth, scenario, n, weights, omega, lipschitz, alpha, beta, level, base, solver,
            n_values, replicates, threads, eval_resolution
        );
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn require<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
        v.as_ref().ok_or_else(|| Error::Config(format!("missing required setting '{key}'")))
    }

    fn out_dir(&self) -> Result<&Path> {
        Ok(Self::require(&self.out, "out")?.as_path())
    }

    fn scenario_spec(&self) -> ScenarioSpec {
        self.scenario.clone().unwrap_or(ScenarioChoice::Named(ScenarioKind::Translation)).resolve(self.seed())
    }

    fn eval_resolution(&self) -> usize {
        self.eval_resolution.unwrap_or(1 << 14)
    }

    fn fair_config(&self, omega: DomainInterval) -> Result<FairConfig> {
        let l = self.lipschitz.unwrap_or(2.0);
        if !(l > 1.0) {
            return Err(Error::Infeasible(format!("no sieve with slope box [1/{l}, {l}]: the bound must exceed 1")));
        }
        let mut cfg = FairConfig::new(omega, self.seed());
        cfg.lipschitz = LipschitzBound::new(l)?;
        cfg.alpha = self.alpha.unwrap_or(2.0);
        cfg.beta = self.beta.unwrap_or(1.0);
        cfg.level = self.level;
        cfg.base = self.base.unwrap_or_default();
        cfg.solver = self.solver.clone().unwrap_or_default();
        cfg.solver.validate()?;
        Ok(cfg)
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SNAPSHOT_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

impl Flags {
    fn to_config(&self) -> Result<RunConfig> {
        let omega = match &self.omega {
            None => None,
            Some(v) if v.len() == 2 => Some(DomainInterval::new(v[0], v[1])?),
            Some(v) => return Err(Error::Config(format!("--omega takes lo,hi; got {} values", v.len()))),
        };
        let scenario = match &self.scenario {
            None => None,
            Some(s) => Some(ScenarioChoice::Named(
                serde_json::from_value(serde_json::Value::String(s.clone()))
                    .map_err(|_| Error::Config(format!("unknown scenario '{s}'")))?,
            )),
        };
        let solver = self.max_iters.map(|m| SolverConfig { max_iters: m, ..SolverConfig::default() });
        Ok(RunConfig {
            seed: self.seed,
            out: self.out.clone(),
            data: self.data.clone(),
            bundle: self.bundle.clone(),
            truth: self.truth.clone(),
            scenario,
            n: self.n.clone(),
            weights: self.weights.clone(),
            omega,
            lipschitz: self.lipschitz,
            alpha: self.alpha,
            beta: self.beta,
            level: self.level,
            base: None,
            solver,
            n_values: self.n_values.clone(),
            replicates: self.replicates,
            threads: self.threads,
            eval_resolution: None,
        })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(f) => cmd_simulate(&RunConfig::resolve(&f)?),
        Command::Fit(f) => cmd_fit(&RunConfig::resolve(&f)?),
        Command::Transform(f) => cmd_transform(&RunConfig::resolve(&f)?),
        Command::Evaluate(f) => cmd_evaluate(&RunConfig::resolve(&f)?),
        Command::Sweep(f) => cmd_sweep(&RunConfig::resolve(&f)?).map(|_| ()),
    }
}

/// Writes `data.csv` and `truth.json` into `out`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.scenario_spec();
    let out = cfg.out_dir()?;
    let n = cfg.n.clone().unwrap_or_else(|| vec![1000; spec.groups()]);
    let mut resolved = cfg.clone();
    resolved.seed = Some(cfg.seed());
    resolved.n = Some(n.clone());
    resolved.scenario = Some(ScenarioChoice::Full(spec.clone()));
    resolved.write_snapshot(out)?;
    let truth = GroundTruth::for_scenario(&spec)?;
    let samples = sample_groups(&spec, &n, spec.seed)?;
    dataset(samples).write(std::fs::File::create(out.join("data.csv"))?)?;
    truth.write(&out.join("truth.json"))
}

/// Fits on `data` and writes the bundle plus `fit_report.json` into `out`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let data = Dataset::read_path(RunConfig::require(&cfg.data, "data")?, None)?;
    if data.labels.len() < 2 {
        return Err(Error::Input(format!("need at least 2 groups, found {}", data.labels.len())));
    }
    let w = match &cfg.weights {
        Some(w) => Weights::new(w.clone())?,
        None => Weights::proportions(&data.sizes())?,
    };
    if w.len() != data.labels.len() {
        return Err(Error::Input(format!("{} weights for {} groups", w.len(), data.labels.len())));
    }
    let omega = match cfg.omega {
        Some(o) => o,
        None => padded_range(&data)?,
    };
    let fair_cfg = cfg.fair_config(omega)?;
    let out = cfg.out_dir()?;
    let mut resolved = cfg.clone();
    resolved.seed = Some(cfg.seed());
    resolved.weights = Some(w.as_slice().to_vec());
    resolved.omega = Some(omega);
    resolved.lipschitz = Some(fair_cfg.lipschitz.value());
    resolved.alpha = Some(fair_cfg.alpha);
    resolved.beta = Some(fair_cfg.beta);
    resolved.base = Some(fair_cfg.base);
    resolved.solver = Some(fair_cfg.solver.clone());
    resolved.write_snapshot(out)?;
    let fit = fit_fair(&data.samples, &w, &fair_cfg)?;
    if !fit.report.converged {
        log::warn!("solver stopped after {} iterations without meeting the tolerance", fit.report.iterations_used);
    }
    Bundle::from_fit(&fit, &data, &w, &fair_cfg).save(out)?;
    fit.report.write(&out.join("fit_report.json"))?;
    Ok(())
}

/// Outcome range padded by 5% on each side.
fn padded_range(data: &Dataset) -> Result<DomainInterval> {
    let ys = data.samples.iter().flat_map(|g| g.ys.iter().copied());
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let pad = 0.05 * (hi - lo).max(1e-6);
    DomainInterval::new(lo - pad, hi + pad)
}

/// Writes `row_id,group,base_prediction,fair_prediction` to `out`.
pub fn cmd_transform(cfg: &RunConfig) -> Result<()> {
    let bundle = Bundle::load(RunConfig::require(&cfg.bundle, "bundle")?)?;
    let data = Dataset::read_path(RunConfig::require(&cfg.data, "data")?, Some(&bundle.manifest.labels))?;
    check_dim(&data, &bundle)?;
    let out = cfg.out_dir()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = &bundle.regressor;
    let mut wtr = csv::Writer::from_path(out)?;
    wtr.write_record(["row_id", "group", "base_prediction", "fair_prediction"])?;
    for (row, &(s, i)) in data.rows.iter().enumerate() {
        let x = &data.samples[s].xs[i];
        wtr.write_record([
            row.to_string(),
            data.labels[s].clone(),
            format!("{:.16e}", f.base_predict(s, x)),
            format!("{:.16e}", f.predict(s, x)),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn check_dim(data: &Dataset, bundle: &Bundle) -> Result<()> {
    if data.samples.iter().any(|g| !g.is_empty() && g.dim() != bundle.manifest.feature_dim) {
        return Err(Error::Schema(format!("model expects {} features", bundle.manifest.feature_dim)));
    }
    Ok(())
}

/// Writes `metrics.csv` (`metric,group,value`) and its metadata into `out`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let bundle = Bundle::load(RunConfig::require(&cfg.bundle, "bundle")?)?;
    let data = Dataset::read_path(RunConfig::require(&cfg.data, "data")?, Some(&bundle.manifest.labels))?;
    check_dim(&data, &bundle)?;
    let truth = cfg.truth.as_deref().map(GroundTruth::read).transpose()?;
    let out = cfg.out_dir()?;
    cfg.write_snapshot(out)?;
    let f = &bundle.regressor;
    let w = &bundle.manifest.weights;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |metric: &str, group: &str, v: f64| rows.push(vec![metric.into(), group.into(), format!("{v:.10e}")]);
    for (s, g) in data.samples.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        let n = g.len() as f64;
        let mse = |pred: &dyn Fn(&[f64]) -> f64| g.xs.iter().zip(&g.ys).map(|(x, y)| (pred(x) - y).powi(2)).sum::<f64>() / n;
        push("mse_fair", &data.labels[s], mse(&|x| f.predict(s, x)));
        push("mse_base", &data.labels[s], mse(&|x| f.base_predict(s, x)));
    }
    if data.samples.iter().all(|g| !g.is_empty()) {
        let feats: FeatureSamples = data.samples.iter().map(|g| g.xs.clone()).collect();
        let fair = unfairness(f, &feats, w)?;
        let base_outputs = feats
            .iter()
            .enumerate()
            .map(|(s, xs)| EmpiricalMeasure::new(xs.iter().map(|x| f.base_predict(s, x)).collect()))
            .collect::<Result<Vec<_>>>()?;
        let base = unfairness_of_measures(&base_outputs, w)?;
        for (prefix, r) in [("fair", fair), ("base", base)] {
            push(&format!("unfairness_upper_bound_{prefix}"), "all", r.upper_bound);
            push(&format!("pairwise_max_w2_{prefix}"), "all", r.pairwise_max_w2);
            push(&format!("ks_max_{prefix}"), "all", r.ks_max);
        }
    } else {
        log::warn!("some groups have no rows; unfairness not reported");
    }
    if let Some(t) = &truth {
        if t.scenario.groups() != f.groups() {
            return Err(Error::Sidecar(format!("truth has {} groups, model {}", t.scenario.groups(), f.groups())));
        }
        let eval = EvalSpec { resolution: cfg.eval_resolution(), ..EvalSpec::quadrature(f.groups()) };
        push("truth_error", "all", truth_error(f, t, &eval)?.value);
    }
    let meta = serde_json::json!({
        "w2_convention": crate::measures::W2Convention::Half.label(),
        "bundle": cfg.bundle,
        "data": cfg.data,
        "truth": cfg.truth,
        "eval_resolution": cfg.eval_resolution(),
    });
    write_table(&out.join("metrics.csv"), &["metric", "group", "value"], &rows, &meta)?;
    Ok(())
}

/// One (n, replicate) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMetrics {
    pub map_error: f64,
    pub truth_error: f64,
    pub unfairness_ub: f64,
    pub base_error: f64,
    pub level: u32,
    pub fairness_lhs: f64,
    pub fairness_rhs: f64,
    pub fairness_holds: bool,
    pub decomposition_rhs: f64,
    pub decomposition_holds: bool,
    pub converged: bool,
    pub congruency_residual: f64,
    pub dense_residual: f64,
}

/// Sweep outcome: every cell in key order plus the fitted slope.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub cells: Vec<CellResult>,
    pub medians: Vec<MedianRow>,
    pub fitted_slope: Option<f64>,
    pub theoretical_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MedianRow {
    pub n: usize,
    pub map_error: f64,
    pub truth_error: f64,
    pub unfairness_ub: f64,
    pub ok_cells: usize,
}

impl SweepSummary {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

/// Seed of cell `(n, replicate)` derived from the master seed.
pub fn cell_seed(master: u64, n: usize, replicate: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((n as u64).to_le_bytes());
    h.update((replicate as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Fits one cell: `n` rows per group, half for the base regressors and half
/// for the maps. Population quantities use the feature-law quadrature, shared
/// across groups.
pub fn run_cell(spec: &ScenarioSpec, truth: &GroundTruth, fair_cfg: &FairConfig, n: usize, resolution: usize) -> Result<CellMetrics> {
    let samples = sample_groups(spec, &vec![n; spec.groups()], fair_cfg.seed)?;
    let w = &spec.weights;
    let fit = fit_fair(&samples, w, fair_cfg)?;
    let f = &fit.regressor;
    let eval = EvalSpec { resolution, ..EvalSpec::quadrature(spec.groups()) };
    let feats = eval.feature_points(&vec![spec.x_law.clone(); spec.groups()])?;
    // law of the base predictions, one measure per group on common features
    let pred_laws = (0..spec.groups())
        .map(|s| EmpiricalMeasure::new(feats[s].iter().map(|x| f.base_predict(s, x)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let oracle = oracle_family(&pred_laws, w, DEFAULT_ORACLE_GRID)?;
    let m_err = map_error(f.maps(), &oracle, &pred_laws, w);
    let t_err = truth_error(f, truth, &eval)?;
    let b_err = base_error(f, truth, &eval)?;
    let unf = unfairness(f, &feats, w)?;
    let slack = fair_cfg.omega.width() / DEFAULT_ORACLE_GRID as f64;
    let fb = check_fairness_bound(f, &oracle, &pred_laws, w, slack)?;
    let dc = decomposition_check(t_err, m_err, b_err.value, fair_cfg.lipschitz.value());
    Ok(CellMetrics {
        map_error: m_err,
        truth_error: t_err.value,
        unfairness_ub: unf.upper_bound,
        base_error: b_err.value,
        level: fit.report.level,
        fairness_lhs: fb.lhs,
        fairness_rhs: fb.rhs,
        fairness_holds: fb.holds,
        decomposition_rhs: dc.rhs,
        decomposition_holds: dc.holds,
        converged: fit.report.converged,
        congruency_residual: f.maps().congruency_residual(),
        dense_residual: f.maps().dense_residual(16),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs every cell of the grid (in parallel) without writing files.
pub fn sweep(cfg: &RunConfig) -> Result<SweepSummary> {
    let spec = cfg.scenario_spec();
    let truth = GroundTruth::for_scenario(&spec)?;
    let n_values = cfg.n_values.clone().unwrap_or_else(|| (8..=14).map(|k| 1usize << k).collect());
    let replicates = cfg.replicates.unwrap_or(20);
    if n_values.is_empty() || n_values.windows(2).any(|p| p[1] <= p[0]) || replicates < 1 {
        return Err(Error::Config("n_values must be strictly increasing and replicates ≥ 1".into()));
    }
    let base_cfg = cfg.fair_config(spec.omega)?;
    let resolution = cfg.eval_resolution();
    let keys: Vec<(usize, usize)> = n_values.iter().flat_map(|&n| (0..replicates).map(move |r| (n, r))).collect();
    let threads = cfg.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let master = cfg.seed();
    let mut cells: Vec<CellResult> = pool.install(|| {
        keys.par_iter()
            .map(|&(n, replicate)| {
                let seed = cell_seed(master, n, replicate);
                let fair_cfg = FairConfig { seed, ..base_cfg.clone() };
                let outcome = run_cell(&spec, &truth, &fair_cfg, n, resolution).map_err(|e| e.to_string());
                CellResult { n, replicate, seed, outcome }
            })
            .collect()
    });
    cells.sort_by_key(|c| (c.n, c.replicate));
    let medians: Vec<MedianRow> = n_values
        .iter()
        .map(|&n| {
            let ok: Vec<CellMetrics> =
                cells.iter().filter(|c| c.n == n).filter_map(|c| c.outcome.as_ref().ok().copied()).collect();
            MedianRow {
                n,
                map_error: median(ok.iter().map(|m| m.map_error).collect()),
                truth_error: median(ok.iter().map(|m| m.truth_error).collect()),
                unfairness_ub: median(ok.iter().map(|m| m.unfairness_ub).collect()),
                ok_cells: ok.len(),
            }
        })
        .collect();
    let fitted_slope = loglog_slope(&medians.iter().map(|m| (m.n as f64, m.map_error)).collect::<Vec<_>>());
    let (alpha, beta) = (base_cfg.alpha, base_cfg.beta);
    Ok(SweepSummary { cells, medians, fitted_slope, theoretical_slope: -alpha / (alpha + beta) })
}

/// Runs the sweep and writes `rates.csv`, `summary.csv`, their metadata and `plot.svg`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepSummary> {
    let out = cfg.out_dir()?.to_path_buf();
    let mut resolved = cfg.clone();
    resolved.seed = Some(cfg.seed());
    resolved.scenario = Some(ScenarioChoice::Full(cfg.scenario_spec()));
    resolved.write_snapshot(&out)?;
    let summary = sweep(cfg)?;
    let fmt = |v: f64| format!("{v:.10e}");
    let rows: Vec<Vec<String>> = summary
        .cells
        .iter()
        .map(|c| {
            let (a, b, u) = match &c.outcome {
                Ok(m) => (fmt(m.map_error), fmt(m.truth_error), fmt(m.unfairness_ub)),
                Err(_) => ("error".into(), "error".into(), "error".into()),
            };
            vec![c.n.to_string(), c.replicate.to_string(), a, b, u, c.seed.to_string()]
        })
        .collect();
    let failures: Vec<serde_json::Value> = summary
        .cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().err().map(|e| serde_json::json!({"n": c.n, "replicate": c.replicate, "error": e})))
        .collect();
    let meta = serde_json::json!({
        "w2_convention": crate::measures::W2Convention::Half.label(),
        "map_error": "weighted squared L2 distance to the oracle maps of the base-prediction laws",
        "master_seed": cfg.seed(),
        "eval_resolution": cfg.eval_resolution(),
        "oracle_grid": DEFAULT_ORACLE_GRID,
        "failures": failures,
    });
    write_table(
        &out.join("rates.csv"),
        &["n", "replicate", "map_error", "truth_error", "unfairness_ub", "seed"],
        &rows,
        &meta,
    )?;
    let med_rows: Vec<Vec<String>> = summary
        .medians
        .iter()
        .map(|m| vec![m.n.to_string(), fmt(m.map_error), fmt(m.truth_error), fmt(m.unfairness_ub), m.ok_cells.to_string()])
        .collect();
    let meta = serde_json::json!({
        "fitted_slope": summary.fitted_slope,
        "theoretical_slope": summary.theoretical_slope,
        "alpha": cfg.alpha.unwrap_or(2.0),
        "beta": cfg.beta.unwrap_or(1.0),
    });
    write_table(
        &out.join("summary.csv"),
        &["n", "median_map_error", "median_truth_error", "median_unfairness_ub", "ok_cells"],
        &med_rows,
        &meta,
    )?;
    std::fs::write(out.join("plot.svg"), rate_plot(&summary))?;
    let failed = summary.failures();
    if failed * 10 > summary.cells.len() {
        return Err(Error::SweepBudget { failed, total: summary.cells.len() });
    }
    Ok(summary)
}

/// Log-log plot of the median map error with the fitted and theoretical slopes.
pub fn rate_plot(summary: &SweepSummary) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let pts: Vec<(f64, f64)> = summary
        .medians
        .iter()
        .filter(|m| m.map_error > 0.0)
        .map(|m| ((m.n as f64).log2(), m.map_error.log10()))
        .collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if pts.is_empty() {
        svg.push_str("<text x=\"20\" y=\"40\">no successful cells</text>\n</svg>\n");
        return svg;
    }
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    y0 -= 0.5;
    y1 += 0.5;
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    svg.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad,
        h - pad,
        h - pad
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log2 n</text>\n<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 median map error</text>\n",
        w / 2.0,
        h - 15.0,
        h / 2.0,
        h / 2.0
    ));
    for p in &pts {
        svg.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"black\"/>\n", px(p.0), py(p.1)));
    }
    // slopes are per unit ln n; in (log2 n, log10 err) coordinates scale by log10(2)
    let (ax, ay) = pts[0];
    let mut line = |slope: f64, color: &str, label: &str, row: f64| {
        let s = slope * 2f64.log10();
        let (ya, yb) = (ay, ay + s * (x1 - ax));
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-dasharray=\"6 3\"/>\n",
            px(ax),
            py(ya),
            px(x1),
            py(yb)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label} slope {slope:.3}</text>\n",
            w - pad - 200.0,
            pad + row
        ));
    };
    if let Some(sl) = summary.fitted_slope {
        line(sl, "blue", "fitted", 0.0);
    }
    line(summary.theoretical_slope, "red", "theoretical", 18.0);
    svg.push_str("</svg>\n");
    svg
}

/// Bytes of a bundle's `maps.json`.
pub fn maps_json(bundle_dir: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(bundle_dir.join(MAPS_FILE))?)
}
