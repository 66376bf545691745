//! Weighted L2 distances, unfairness, and Monte-Carlo checks of the
//! concentration and fairness inequalities.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::CongruentFamily;
use crate::measures::{
    ks_statistic, minimax_center_upper_bound, w2, EmpiricalMeasure, Law, QuadratureSpec, W2Convention, Weights,
    DEFAULT_QUADRATURE_RESOLUTION, MIN_QUADRATURE_RESOLUTION,
};
use crate::potentials::PotentialPair;
use crate::regression::FairRegressor;

/// Feature rows per group.
pub type FeatureSamples = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Empirical,
    Quadrature,
}

/// How population expectations over features are approximated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub mode: EvalMode,
    pub resolution: usize,
    pub fresh_sample_sizes: Vec<usize>,
    pub seed: u64,
}

impl EvalSpec {
    pub fn quadrature(m: usize) -> Self {
        Self { mode: EvalMode::Quadrature, resolution: DEFAULT_QUADRATURE_RESOLUTION, fresh_sample_sizes: vec![0; m], seed: 0 }
    }

    pub fn empirical(sizes: Vec<usize>, seed: u64) -> Self {
        Self { mode: EvalMode::Empirical, resolution: 0, fresh_sample_sizes: sizes, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            EvalMode::Quadrature if self.resolution < MIN_QUADRATURE_RESOLUTION => Err(Error::Config(format!(
                "quadrature resolution {} is below {MIN_QUADRATURE_RESOLUTION}",
                self.resolution
            ))),
            EvalMode::Empirical if self.fresh_sample_sizes.contains(&0) => {
                Err(Error::Config("fresh sample sizes must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// One-dimensional feature points per group drawn from (or placed on) `laws`.
    pub fn feature_points(&self, laws: &[Law]) -> Result<FeatureSamples> {
        self.validate()?;
        Ok(match self.mode {
            EvalMode::Quadrature => laws
                .iter()
                .map(|l| l.quadrature_nodes(self.resolution).into_iter().map(|x| vec![x]).collect())
                .collect(),
            EvalMode::Empirical => {
                if self.fresh_sample_sizes.len() != laws.len() {
                    return Err(Error::Config(format!(
                        "{} fresh sample sizes for {} groups",
                        self.fresh_sample_sizes.len(),
                        laws.len()
                    )));
                }
                laws.iter()
                    .zip(&self.fresh_sample_sizes)
                    .enumerate()
                    .map(|(s, (law, &n))| {
                        let mut rng = stream_rng(self.seed, s as u64);
                        (0..n).map(|_| vec![law.sample(&mut rng)]).collect()
                    })
                    .collect()
            }
        })
    }
}

/// Independent stream `stream` of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Distance value with its Monte-Carlo standard error (zero under quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

/// `Σ_s w_s · mean_i (f_s(x_i) − g_s(x_i))²` over the given feature points.
pub fn weighted_sq_distance(
    f: impl Fn(usize, &[f64]) -> f64 + Sync,
    g: impl Fn(usize, &[f64]) -> f64 + Sync,
    points: &[Vec<Vec<f64>>],
    w: &Weights,
) -> Result<Estimate> {
    if points.len() != w.len() {
        return Err(Error::Domain(format!("{} point sets for {} weights", points.len(), w.len())));
    }
    let (mut value, mut var) = (0.0, 0.0);
    for (s, pts) in points.iter().enumerate() {
        if pts.is_empty() {
            return Err(Error::Domain(format!("empty evaluation sample for group {s}")));
        }
        let n = pts.len() as f64;
        let sq: Vec<f64> = pts.iter().map(|x| (f(s, x) - g(s, x)).powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / n;
        let v = if pts.len() > 1 { sq.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        value += w.get(s) * mean;
        var += w.get(s).powi(2) * v / n;
    }
    Ok(Estimate { value, std_err: var.sqrt() })
}

/// Demographic-parity violation of a set of output measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnfairnessReport {
    /// Upper bound on `inf_ν max_s W₂(·, ν)`.
    pub upper_bound: f64,
    pub pairwise_max_w2: f64,
    pub ks_max: f64,
    pub convention: W2Convention,
}

pub fn unfairness_of_measures(ms: &[EmpiricalMeasure], w: &Weights) -> Result<UnfairnessReport> {
    let upper_bound = minimax_center_upper_bound(ms, w)?;
    let (mut pw, mut ks) = (0.0f64, 0.0f64);
    for a in 0..ms.len() {
        for b in a + 1..ms.len() {
            pw = pw.max(w2(&ms[a], &ms[b]));
            ks = ks.max(ks_statistic(&ms[a], &ms[b]));
        }
    }
    Ok(UnfairnessReport { upper_bound, pairwise_max_w2: pw, ks_max: ks, convention: W2Convention::Half })
}

/// Pushes each group's features through the fair regressor and measures
/// the disagreement between the resulting output laws.
pub fn unfairness(fair: &FairRegressor, feature_samples: &[Vec<Vec<f64>>], w: &Weights) -> Result<UnfairnessReport> {
    unfairness_of_measures(&fair_outputs(fair, feature_samples)?, w)
}

pub fn fair_outputs(fair: &FairRegressor, feature_samples: &[Vec<Vec<f64>>]) -> Result<Vec<EmpiricalMeasure>> {
    if feature_samples.len() != fair.groups() {
        return Err(Error::Domain(format!("{} feature samples for {} groups", feature_samples.len(), fair.groups())));
    }
    feature_samples
        .iter()
        .enumerate()
        .map(|(s, xs)| EmpiricalMeasure::new(xs.iter().map(|x| fair.predict(s, x)).collect()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FairnessCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `UB(ϑ_s♯m_s) ≤ √(1/(M·w_min))·d_m(ϑ, ϑ*) + slack` for the fitted maps
/// against an oracle family of the measures `ms`.
pub fn check_fairness_bound(
    fair: &FairRegressor,
    oracle: &CongruentFamily,
    ms: &[EmpiricalMeasure],
    w: &Weights,
    slack: f64,
) -> Result<FairnessCheck> {
    check_fairness_bound_maps(fair.maps(), oracle, ms, w, slack)
}

pub fn check_fairness_bound_maps(
    maps: &CongruentFamily,
    oracle: &CongruentFamily,
    ms: &[EmpiricalMeasure],
    w: &Weights,
    slack: f64,
) -> Result<FairnessCheck> {
    if ms.len() != maps.len() || oracle.len() != maps.len() {
        return Err(Error::Domain("maps, oracle and measures disagree on M".into()));
    }
    let pushed = ms
        .iter()
        .enumerate()
        .map(|(s, m)| m.pushforward(|z| maps.eval(s, z)))
        .collect::<Result<Vec<_>>>()?;
    let lhs = minimax_center_upper_bound(&pushed, w)?;
    let d2 = crate::estimator::map_error(maps, oracle, ms, w);
    let factor = (1.0 / (w.len() as f64 * w.min())).sqrt();
    let rhs = factor * d2.sqrt() + slack;
    Ok(FairnessCheck { lhs, rhs, slack, holds: lhs <= rhs })
}

/// Inputs of the concentration check for fixed potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinCase {
    /// Bound on `Σ_s w_s Var(u_s)`.
    pub sigma2: f64,
    /// Bound on `max_s |u_s − E u_s|`.
    pub b: f64,
    pub t_grid: Vec<f64>,
    pub n_reps: usize,
    pub n_tilde: f64,
}

impl BernsteinCase {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.b > 0.0 && self.n_tilde >= 1.0 && self.n_reps >= 1) {
            return Err(Error::Config(format!("invalid Bernstein case {self:?}")));
        }
        Ok(())
    }

    /// Fills `σ²` and `b` with their quadrature values, the support endpoints
    /// included in the range bound.
    pub fn measured(pots: &[PotentialPair], laws: &[Law], w: &Weights, t_grid: Vec<f64>, n_reps: usize, n_tilde: f64) -> Self {
        let moments = moments(pots, laws);
        let sigma2 = moments.iter().zip(w.as_slice()).map(|(m, ws)| ws * m.var).sum();
        let b = moments.iter().map(|m| m.range).fold(0.0, f64::max);
        Self { sigma2, b, t_grid, n_reps, n_tilde }
    }

    pub fn bound(&self, t: f64) -> f64 {
        (-0.5 * self.n_tilde * t * t / (self.sigma2 + t * self.b)).exp().min(1.0)
    }
}

struct Moments {
    mean: f64,
    var: f64,
    range: f64,
}

fn moments(pots: &[PotentialPair], laws: &[Law]) -> Vec<Moments> {
    pots.iter()
        .zip(laws)
        .map(|(p, law)| {
            let nodes = law.quadrature_nodes(DEFAULT_QUADRATURE_RESOLUTION);
            let n = nodes.len() as f64;
            let vals: Vec<f64> = nodes.iter().map(|&z| p.u(z)).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let (lo, hi) = law.support();
            let range = vals
                .iter()
                .copied()
                .chain([p.u(lo), p.u(hi)])
                .map(|v| (v - mean).abs())
                .fold(0.0, f64::max);
            Moments { mean, var, range }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernsteinRow {
    pub t: f64,
    pub empirical_freq: f64,
    pub bound: f64,
    /// Binomial standard error of the frequency under the bound.
    pub std_err: f64,
    pub holds: bool,
}

/// Monte-Carlo tail frequencies of `(E_n − E)u` against the analytic bound,
/// with `n_s = ⌈ñ·w_s⌉` draws per group and per-replicate seeds derived by counter.
pub fn bernstein_check(
    pots: &[PotentialPair],
    laws: &[Law],
    w: &Weights,
    case: &BernsteinCase,
    seed: u64,
) -> Result<Vec<BernsteinRow>> {
    case.validate()?;
    if pots.len() != w.len() || laws.len() != w.len() {
        return Err(Error::Domain("potentials, laws and weights disagree on M".into()));
    }
    let mom = moments(pots, laws);
    let sigma2_true: f64 = mom.iter().zip(w.as_slice()).map(|(m, ws)| ws * m.var).sum();
    let b_true = mom.iter().map(|m| m.range).fold(0.0, f64::max);
    if sigma2_true > case.sigma2 * (1.0 + 1e-9) || b_true > case.b * (1.0 + 1e-9) {
        log::warn!(
            "Bernstein constants below measured values: sigma2 {} < {sigma2_true} or b {} < {b_true}",
            case.sigma2,
            case.b
        );
    }
    let sizes: Vec<usize> = w.as_slice().iter().map(|ws| (case.n_tilde * ws).ceil() as usize).collect();
    let deviations: Vec<f64> = (0..case.n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, rep as u64);
            (0..w.len())
                .map(|s| {
                    let n = sizes[s];
                    let sum: f64 = (0..n).map(|_| pots[s].u(laws[s].sample(&mut rng))).sum();
                    w.get(s) * (sum / n as f64 - mom[s].mean)
                })
                .sum()
        })
        .collect();
    let reps = case.n_reps as f64;
    Ok(case
        .t_grid
        .iter()
        .map(|&t| {
            let freq = deviations.iter().filter(|&&d| d > t).count() as f64 / reps;
            let bound = case.bound(t);
            let std_err = (bound * (1.0 - bound) / reps).sqrt();
            BernsteinRow { t, empirical_freq: freq, bound, std_err, holds: freq <= bound + 3.0 * std_err }
        })
        .collect())
}

/// Error decomposition: `truth ≤ 3·map + 9L²·Σ w_s base_s + 3·se`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionCheck {
    pub truth_error: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn decomposition_check(truth_error: Estimate, map_error: f64, base_error: f64, lipschitz: f64) -> DecompositionCheck {
    let rhs = 3.0 * map_error + 9.0 * lipschitz * lipschitz * base_error + 3.0 * truth_error.std_err;
    DecompositionCheck { truth_error: truth_error.value, rhs, holds: truth_error.value <= rhs }
}

/// Writes a CSV table and a `<stem>.meta.json` sidecar next to it.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>], meta: &serde_json::Value) -> Result<PathBuf> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(r)?;
    }
    wtr.flush()?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let meta_path = path.with_file_name(format!("{stem}.meta.json"));
    std::fs::write(&meta_path, serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(meta_path)
}

/// Quadrature-mode expectation of the potentials of a family: `Σ_s w_s ∫u_s dν_s`.
pub fn population_correlation(pots: &[PotentialPair], q: &QuadratureSpec, w: &Weights) -> f64 {
    (0..w.len()).map(|s| w.get(s) * q.mean(s, |z| pots[s].u(z))).sum()
}
