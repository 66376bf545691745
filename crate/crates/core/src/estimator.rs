//! Sieved minimization of the empirical multiple correlation over congruent
//! piecewise-linear families.
//!
//! Each group's inverse map is parameterized by its value at the first knot
//! (offset) and its increments over the grid intervals. Congruency becomes one
//! linear equality for the offsets and one per interval for the increments;
//! the slope box bounds each increment. The feasible set is therefore a
//! product of "box ∩ hyperplane" blocks with an exact Euclidean projection.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{sieve_level, CongruentFamily, KnotGrid, LipschitzBound, MonotoneMap};
use crate::measures::{DomainInterval, EmpiricalMeasure, QuadratureSpec, Weights};
use crate::potentials::{base_point, DaggerGradient, PotentialPair};

/// A sieve level together with its grid and smoothness exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveSpec {
    pub j: u32,
    pub grid: KnotGrid,
    pub lipschitz: LipschitzBound,
    pub alpha: f64,
    pub beta: f64,
}

impl SieveSpec {
    pub fn new(omega: &DomainInterval, j: u32, lipschitz: LipschitzBound, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta >= 0.0) {
            return Err(Error::Config(format!("need alpha > 0 and beta >= 0, got ({alpha}, {beta})")));
        }
        Ok(Self { j, grid: KnotGrid::equispaced(omega, j), lipschitz, alpha, beta })
    }

    /// Sieve with the level chosen from the sample sizes.
    pub fn for_sample(
        omega: &DomainInterval,
        ms: &[EmpiricalMeasure],
        w: &Weights,
        lipschitz: LipschitzBound,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let j = select_level(ms, w, alpha, beta)?;
        Self::new(omega, j, lipschitz, alpha, beta)
    }

    pub fn omega(&self) -> DomainInterval {
        DomainInterval { lo: self.grid.first(), hi: self.grid.last() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Projected gradient with Nesterov momentum, backtracking and restarts.
    Accelerated,
    Constant,
    InverseSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_rel_obj: f64,
    pub step_rule: StepRule,
    /// Initial step for `Accelerated`; the fixed or leading step otherwise.
    /// Plain rules stall in a neighbourhood of the optimum when it is too large.
    pub step_scale: f64,
    /// Length of the improvement window used for the stopping rule.
    pub window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iters: 5000, tol_rel_obj: 1e-7, step_rule: StepRule::Accelerated, step_scale: 1.0, window: 50 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 || !(self.tol_rel_obj > 0.0) || !(self.step_scale > 0.0) || self.window < 1 {
            return Err(Error::Config(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub family: CongruentFamily,
    pub level: u32,
    pub objective: f64,
    /// Running-best objective after each iteration.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub congruency_residual: f64,
}

#[derive(Serialize)]
struct ReportOut<'a> {
    #[serde(flatten)]
    report: &'a FitReport,
    trace_file: String,
}

impl FitReport {
    /// Writes the report as JSON and the trace as `<stem>.trace.csv` beside it.
    pub fn write(&self, json_path: &Path) -> Result<PathBuf> {
        let stem = json_path.file_stem().and_then(|s| s.to_str()).unwrap_or("fit_report");
        let trace_path = json_path.with_file_name(format!("{stem}.trace.csv"));
        let trace_name = trace_path.file_name().unwrap().to_string_lossy().into_owned();
        let out = ReportOut { report: self, trace_file: trace_name };
        std::fs::write(json_path, serde_json::to_string_pretty(&out)?)?;
        self.write_trace(std::fs::File::create(&trace_path)?)?;
        Ok(trace_path)
    }

    /// Trace CSV with columns `iteration,value`.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["iteration", "value"])?;
        for (i, v) in self.objective_trace.iter().enumerate() {
            wtr.write_record([(i + 1).to_string(), format!("{v:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `ñ = min_s n_s / w_s`.
pub fn effective_size(sizes: &[usize], w: &Weights) -> Result<f64> {
    if sizes.len() != w.len() || sizes.contains(&0) {
        return Err(Error::Domain(format!("{} group sizes for {} weights (all must be positive)", sizes.len(), w.len())));
    }
    Ok(sizes.iter().zip(w.as_slice()).map(|(&n, &ws)| n as f64 / ws).fold(f64::INFINITY, f64::min))
}

pub fn select_level(ms: &[EmpiricalMeasure], w: &Weights, alpha: f64, beta: f64) -> Result<u32> {
    let sizes: Vec<usize> = ms.iter().map(EmpiricalMeasure::len).collect();
    sieve_level(effective_size(&sizes, w)?, alpha, beta)
}

/// `d²(ϑ, ϑ*) = Σ_s w_s · mean_i (ϑ_s(z_i) − ϑ*_s(z_i))²` over empirical measures.
pub fn map_error(family: &CongruentFamily, oracle: &CongruentFamily, ms: &[EmpiricalMeasure], w: &Weights) -> f64 {
    (0..w.len())
        .map(|s| {
            let (f, o) = (family.forward(s), oracle.forward(s));
            let pts = ms[s].points();
            w.get(s) * pts.iter().map(|&z| (f.eval(z) - o.eval(z)).powi(2)).sum::<f64>() / pts.len() as f64
        })
        .sum()
}

/// Same distance against quadrature nodes.
pub fn map_error_quadrature(family: &CongruentFamily, oracle: &CongruentFamily, q: &QuadratureSpec) -> f64 {
    let w = family.weights();
    (0..w.len())
        .map(|s| {
            let (f, o) = (family.forward(s), oracle.forward(s));
            w.get(s) * q.mean(s, |z| (f.eval(z) - o.eval(z)).powi(2))
        })
        .sum()
}

/// The empirical objective on a fixed sieve, in offset/increment coordinates.
///
/// Parameters are laid out per group as `[v_{s,0}, δ_{s,0}, …, δ_{s,K−1}]`.
pub(crate) struct Problem<'a> {
    ms: &'a [EmpiricalMeasure],
    w: Vec<f64>,
    knots: Vec<f64>,
    h: Vec<f64>,
    lip: f64,
    base: f64,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(ms: &'a [EmpiricalMeasure], w: &Weights, grid: &KnotGrid, lip: LipschitzBound) -> Self {
        let knots = grid.knots().to_vec();
        let h = knots.windows(2).map(|p| p[1] - p[0]).collect();
        let base = base_point(&DomainInterval { lo: grid.first(), hi: grid.last() });
        Self { ms, w: w.as_slice().to_vec(), knots, h, lip: lip.value(), base }
    }

    fn m(&self) -> usize {
        self.w.len()
    }

    fn stride(&self) -> usize {
        self.knots.len()
    }

    pub(crate) fn dim(&self) -> usize {
        self.m() * self.stride()
    }

    pub(crate) fn identity(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.dim());
        for _ in 0..self.m() {
            p.push(self.knots[0]);
            p.extend_from_slice(&self.h);
        }
        p
    }

    fn values(&self, block: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(block.len());
        let mut acc = block[0];
        v.push(acc);
        for d in &block[1..] {
            acc += d;
            v.push(acc);
        }
        v
    }

    pub(crate) fn family(&self, p: &[f64], w: &Weights) -> Result<CongruentFamily> {
        let grid = KnotGrid::new(self.knots.clone())?;
        let lip = LipschitzBound::new(self.lip)?;
        let inverses = p
            .chunks(self.stride())
            .map(|b| MonotoneMap::new(grid.clone(), self.values(b), lip))
            .collect::<Result<Vec<_>>>()?;
        CongruentFamily::from_inverses(inverses, w.clone())
    }

    /// Objective value; fills `grad` (same layout as `p`) when given.
    pub(crate) fn eval(&self, p: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let k1 = self.stride();
        let mut total = 0.0;
        let mut gv = vec![0.0; k1];
        let mut gb = vec![0.0; k1];
        for (s, block) in p.chunks(k1).enumerate() {
            let v = self.values(block);
            let pair = PotentialPair::from_inverse_parts(self.knots.clone(), v, self.base);
            let pts = self.ms[s].points();
            let n = pts.len() as f64;
            let scale = self.w[s] / n;
            let mut sum = 0.0;
            match grad.as_deref_mut() {
                None => {
                    for &x in pts {
                        sum += pair.u(x);
                    }
                }
                Some(g) => {
                    let mut acc = DaggerGradient::new(&self.knots);
                    for &x in pts {
                        let z = pair.theta(x);
                        sum += x * z - pair.u_dagger(z);
                        acc.add(z, 1.0);
                    }
                    acc.finish(&mut gv);
                    let mut base_acc = DaggerGradient::new(&self.knots);
                    base_acc.add(self.base, n);
                    base_acc.finish(&mut gb);
                    // ∂/∂v_m, then chain to offset (all m) and increment k (m > k)
                    let out = &mut g[s * k1..(s + 1) * k1];
                    let mut suffix = 0.0;
                    for m in (0..k1).rev() {
                        let d = -scale * (gv[m] - gb[m]);
                        if m >= 1 {
                            suffix += d;
                            out[m] = suffix;
                        } else {
                            out[0] = suffix + d;
                        }
                    }
                }
            }
            total += scale * sum;
        }
        total
    }

    /// Euclidean projection onto the feasible polytope, in place.
    pub(crate) fn project(&self, p: &mut [f64]) {
        let (m, k1) = (self.m(), self.stride());
        let ww: f64 = self.w.iter().map(|w| w * w).sum();
        let excess = (0..m).map(|s| self.w[s] * p[s * k1]).sum::<f64>() - self.knots[0];
        for s in 0..m {
            p[s * k1] -= excess * self.w[s] / ww;
        }
        let mut y = vec![0.0; m];
        for k in 0..self.h.len() {
            for s in 0..m {
                y[s] = p[s * k1 + 1 + k];
            }
            let d = project_box_hyperplane(&y, &self.w, self.h[k], self.h[k] / self.lip, self.h[k] * self.lip);
            for s in 0..m {
                p[s * k1 + 1 + k] = d[s];
            }
        }
    }
}

/// Projection of `y` onto `{x : Σ w_s x_s = target, lo ≤ x_s ≤ hi}`.
///
/// The solution is `clip(y − λw)` with `λ` a root of a nonincreasing piecewise
/// linear function, located exactly between sorted breakpoints.
pub(crate) fn project_box_hyperplane(y: &[f64], w: &[f64], target: f64, lo: f64, hi: f64) -> Vec<f64> {
    let at = |lam: f64| -> f64 { y.iter().zip(w).map(|(&yi, &wi)| wi * (yi - lam * wi).clamp(lo, hi)).sum() };
    let mut bps: Vec<f64> = y.iter().zip(w).flat_map(|(&yi, &wi)| [(yi - hi) / wi, (yi - lo) / wi]).collect();
    bps.sort_by(f64::total_cmp);
    // g(λ) decreases from Σw·hi (λ ≤ first) to Σw·lo (λ ≥ last)
    let mut lam = bps[0];
    let mut g_prev = at(lam);
    if g_prev > target {
        let mut found = false;
        for &b in &bps[1..] {
            let g = at(b);
            if g <= target {
                lam = if g_prev > g { lam + (b - lam) * (g_prev - target) / (g_prev - g) } else { b };
                found = true;
                break;
            }
            lam = b;
            g_prev = g;
        }
        if !found {
            lam = *bps.last().unwrap();
        }
    }
    let mut x: Vec<f64> = y.iter().zip(w).map(|(&yi, &wi)| (yi - lam * wi).clamp(lo, hi)).collect();
    // restore the equality exactly up to rounding using free coordinates
    let free: Vec<usize> = (0..x.len()).filter(|&s| x[s] > lo && x[s] < hi).collect();
    if !free.is_empty() {
        let r = target - x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let fw: f64 = free.iter().map(|&s| w[s] * w[s]).sum();
        for &s in &free {
            x[s] = (x[s] + r * w[s] / fw).clamp(lo, hi);
        }
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes the empirical multiple correlation over the sieve.
pub fn fit_maps(ms: &[EmpiricalMeasure], w: &Weights, spec: &SieveSpec, cfg: &SolverConfig) -> Result<FitReport> {
    cfg.validate()?;
    if ms.len() != w.len() {
        return Err(Error::Domain(format!("{} measures for {} weights", ms.len(), w.len())));
    }
    if let Some(s) = ms.iter().position(|m| m.len() < 2) {
        return Err(Error::Domain(format!("group {s} has fewer than 2 points")));
    }
    let problem = Problem::new(ms, w, &spec.grid, spec.lipschitz);
    let start = problem.identity();
    // feasibility of the starting family doubles as the non-emptiness check
    problem.family(&start, w).map_err(|e| Error::Infeasible(format!("identity family rejected: {e}")))?;

    let run = match cfg.step_rule {
        StepRule::Accelerated => accelerated(&problem, start, cfg),
        StepRule::Constant | StepRule::InverseSqrt => plain(&problem, start, cfg),
    };
    let family = problem.family(&run.best, w)?;
    let residual = family.congruency_residual();
    Ok(FitReport {
        family,
        level: spec.j,
        objective: run.best_value,
        objective_trace: run.trace,
        iterations_used: run.iterations,
        converged: run.converged,
        congruency_residual: residual,
    })
}

struct Run {
    best: Vec<f64>,
    best_value: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn window_converged(trace: &[f64], cfg: &SolverConfig) -> bool {
    let n = trace.len();
    n > cfg.window && trace[n - 1 - cfg.window] - trace[n - 1] < cfg.tol_rel_obj * trace[n - 1].abs().max(1.0)
}

fn accelerated(problem: &Problem, start: Vec<f64>, cfg: &SolverConfig) -> Run {
    let dim = problem.dim();
    let mut x = start;
    let mut fx = problem.eval(&x, None);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut step = cfg.step_scale;
    let mut g = vec![0.0; dim];
    let mut cand = vec![0.0; dim];
    let (mut best, mut best_value) = (x.clone(), fx);
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let fy = problem.eval(&y, Some(&mut g));
        let mut fc;
        loop {
            for i in 0..dim {
                cand[i] = y[i] - step * g[i];
            }
            problem.project(&mut cand);
            fc = problem.eval(&cand, None);
            let d: Vec<f64> = cand.iter().zip(&y).map(|(a, b)| a - b).collect();
            let model = fy + dot(&g, &d) + dot(&d, &d) / (2.0 * step);
            if fc <= model + 1e-14 * fy.abs().max(1.0) || step < 1e-16 {
                break;
            }
            step *= 0.5;
        }
        if fc > fx {
            // function-value restart: drop the momentum and retry from x
            y.copy_from_slice(&x);
            t = 1.0;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for i in 0..dim {
                y[i] = cand[i] + beta * (cand[i] - x[i]);
            }
            problem.project(&mut y);
            x.copy_from_slice(&cand);
            fx = fc;
            t = t_next;
            step *= 1.5;
        }
        if fx <= best_value {
            best_value = fx;
            best.copy_from_slice(&x);
        }
        trace.push(best_value);
        if window_converged(&trace, cfg) {
            converged = true;
            break;
        }
    }
    Run { best, best_value, iterations: trace.len(), trace, converged }
}

fn plain(problem: &Problem, start: Vec<f64>, cfg: &SolverConfig) -> Run {
    let mut x = start;
    let mut g = vec![0.0; problem.dim()];
    let mut fx = problem.eval(&x, Some(&mut g));
    let (mut best, mut best_value) = (x.clone(), fx);
    let mut trace = Vec::new();
    let mut converged = false;
    for it in 0..cfg.max_iters {
        let eta = match cfg.step_rule {
            StepRule::InverseSqrt => cfg.step_scale / ((it + 1) as f64).sqrt(),
            _ => cfg.step_scale,
        };
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= eta * gi;
        }
        problem.project(&mut x);
        fx = problem.eval(&x, Some(&mut g));
        if fx <= best_value {
            best_value = fx;
            best.copy_from_slice(&x);
        }
        trace.push(best_value);
        if window_converged(&trace, cfg) {
            converged = true;
            break;
        }
    }
    let _ = fx;
    Run { best, best_value, iterations: trace.len(), trace, converged }
}

/// Draws a random member of the sieve: log-uniform slope proposals and
/// Gaussian offset jitter of size `spread`, projected onto the feasible set.
pub fn random_feasible_family<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &KnotGrid,
    w: &Weights,
    lipschitz: LipschitzBound,
    spread: f64,
) -> Result<CongruentFamily> {
    let dummy: Vec<EmpiricalMeasure> = Vec::new();
    let problem = Problem::new(&dummy, w, grid, lipschitz);
    let ln_l = lipschitz.value().ln();
    let mut p = problem.identity();
    for block in p.chunks_mut(problem.stride()) {
        block[0] += spread * (2.0 * rng.random::<f64>() - 1.0);
        for d in &mut block[1..] {
            *d *= (ln_l * (2.0 * rng.random::<f64>() - 1.0)).exp();
        }
    }
    problem.project(&mut p);
    problem.family(&p, w)
}
