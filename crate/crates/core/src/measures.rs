//! One-dimensional empirical measures, quantile functions and the
//! half-quadratic Wasserstein cost.
//!
//! All costs use the convention `W₂²(a, b) = ∫ ½ (Qa(t) − Qb(t))² dt` unless a
//! [`W2Convention`] is passed explicitly. In one dimension the barycenter of a
//! family of measures has the weighted average of their quantile functions as
//! its quantile function; [`barycenter_oracle`] and [`oracle_family`] use that
//! fact as ground truth for the estimator.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};
use crate::maps::{CongruentFamily, MonotoneMap};

/// Default number of probability levels of the barycenter oracle grid.
pub const DEFAULT_ORACLE_GRID: usize = 1 << 12;

/// The bounded outcome domain Ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct DomainInterval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Deserialize)]
struct RawInterval {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawInterval> for DomainInterval {
    type Error = Error;
    fn try_from(r: RawInterval) -> Result<Self> {
        Self::new(r.lo, r.hi)
    }
}

impl DomainInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Config(format!("invalid domain [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.lo, self.hi)
    }
}

/// Group weights on the probability simplex, `M ≥ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    /// Validates positivity and `Σ w = 1` (to 1e-9), then renormalizes exactly.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::Config(format!("need at least 2 groups, got {}", w.len())));
        }
        if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Config(format!("weights must be positive: {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self(w.into_iter().map(|x| x / total).collect()))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m])
    }

    /// Empirical proportions `n_s / n`.
    pub fn proportions(counts: &[usize]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::Config("no samples".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / n as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Applies a relabeling: group `s` of the result is group `perm[s]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(perm.iter().map(|&p| self.0[p]).collect())
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

/// Sorted one-dimensional sample with equal atom masses.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("empirical measure needs at least one point".into()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("empirical measure has non-finite points".into()));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().sum::<f64>() / self.len() as f64
    }

    /// Checks every atom lies in `[lo − slack, hi + slack]`.
    pub fn check_within(&self, omega: &DomainInterval, slack: f64) -> Result<()> {
        let (first, last) = (self.points[0], self.points[self.len() - 1]);
        if first < omega.lo - slack || last > omega.hi + slack {
            return Err(Error::Domain(format!(
                "sample range [{first}, {last}] leaves [{}, {}] by more than {slack}",
                omega.lo, omega.hi
            )));
        }
        Ok(())
    }

    /// Left-continuous inverse CDF: the order statistic of rank `⌈t·n⌉`.
    pub fn quantile(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!("quantile level {t} outside (0,1)")));
        }
        Ok(self.quantile_unchecked(t))
    }

    fn quantile_unchecked(&self, t: f64) -> f64 {
        let n = self.len();
        let rank = ((t * n as f64).ceil() as usize).clamp(1, n);
        self.points[rank - 1]
    }

    /// Continuous quantile: linear interpolation through `((i + ½)/n, x₍ᵢ₎)`,
    /// constant beyond the outer midpoints.
    pub fn interpolated_quantile(&self, t: f64) -> f64 {
        let n = self.len();
        let pos = t * n as f64 - 0.5;
        if pos <= 0.0 {
            return self.points[0];
        }
        let i = pos.floor() as usize;
        if i + 1 >= n {
            return self.points[n - 1];
        }
        let frac = pos - i as f64;
        self.points[i] + frac * (self.points[i + 1] - self.points[i])
    }

    /// Right-continuous empirical CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        self.points.partition_point(|&p| p <= x) as f64 / self.len() as f64
    }

    /// Image of the measure under a map.
    pub fn pushforward(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.points.iter().map(|&x| f(x)).collect())
    }
}

/// Quantile function sampled on a strictly increasing grid of levels in (0,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::Domain("quantile grid and values differ in length".into()));
        }
        if grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Domain("quantile grid must lie in (0,1)".into()));
        }
        if grid.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Domain("quantile grid must be strictly increasing".into()));
        }
        if values.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Domain("quantile values must be nondecreasing".into()));
        }
        Ok(Self { grid, values })
    }

    /// Midpoint grid `(i + ½)/size`, `i = 0..size`.
    pub fn midpoint_grid(size: usize) -> Vec<f64> {
        (0..size).map(|i| (i as f64 + 0.5) / size as f64).collect()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Linear interpolation in the level, constant outside the grid.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g < t);
        if k == 0 {
            return self.values[0];
        }
        if k == self.len() {
            return self.values[k - 1];
        }
        let (t0, t1) = (self.grid[k - 1], self.grid[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (t - t0) / (t1 - t0) * (v1 - v0)
    }

    /// Equal-mass atoms at the grid values (exact for a midpoint grid).
    pub fn to_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(self.values.clone())
    }

    /// CSV with columns `t,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value"])?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            w.write_record([format!("{t:.17e}"), format!("{v:.17e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let (mut grid, mut values) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Input(format!("bad quantile CSV row {rec:?}")))
            };
            grid.push(parse(0)?);
            values.push(parse(1)?);
        }
        Self::new(grid, values)
    }
}

/// Which squared-distance convention a reported W₂² uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum W2Convention {
    /// `∫ ½ (z − ϑ(z))² dν`, used everywhere internally.
    Half,
    /// `∫ (z − ϑ(z))² dν`, the convention of most external tools.
    Full,
}

impl W2Convention {
    pub fn label(self) -> &'static str {
        match self {
            W2Convention::Half => "half-quadratic (W2^2 = int 1/2 |x-y|^2)",
            W2Convention::Full => "quadratic (W2^2 = int |x-y|^2)",
        }
    }
}

/// Walks the merged probability grid of several measures. On each cell
/// `(p_prev, p]` every quantile function is constant; `visit` receives the cell
/// mass and the current order statistics. Breakpoints `i/n` are compared
/// exactly: correctly rounded division maps equal rationals to equal floats.
fn merged_grid_walk(ms: &[&EmpiricalMeasure], mut visit: impl FnMut(f64, &[f64])) {
    let mut idx = vec![0usize; ms.len()];
    let mut current: Vec<f64> = ms.iter().map(|m| m.points[0]).collect();
    let mut prev = 0.0;
    loop {
        let next = ms
            .iter()
            .zip(&idx)
            .map(|(m, &i)| (i + 1) as f64 / m.len() as f64)
            .fold(f64::INFINITY, f64::min);
        visit(next - prev, &current);
        if next >= 1.0 {
            break;
        }
        prev = next;
        for (s, m) in ms.iter().enumerate() {
            if (idx[s] + 1) as f64 / m.len() as f64 == next {
                idx[s] += 1;
                current[s] = m.points[idx[s]];
            }
        }
    }
}

/// Half-convention squared Wasserstein distance between two empirical measures.
pub fn transport_cost(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    if a.len() == b.len() {
        let n = a.len() as f64;
        return a
            .points
            .iter()
            .zip(&b.points)
            .map(|(x, y)| 0.5 * (x - y) * (x - y))
            .sum::<f64>()
            / n;
    }
    let mut total = 0.0;
    merged_grid_walk(&[a, b], |mass, q| {
        total += mass * 0.5 * (q[0] - q[1]) * (q[0] - q[1]);
    });
    total
}

/// [`transport_cost`] under an explicit convention.
pub fn transport_cost_with(a: &EmpiricalMeasure, b: &EmpiricalMeasure, conv: W2Convention) -> f64 {
    match conv {
        W2Convention::Half => transport_cost(a, b),
        W2Convention::Full => 2.0 * transport_cost(a, b),
    }
}

/// `W₂ = √(transport_cost)` in the half convention.
pub fn w2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    transport_cost(a, b).sqrt()
}

fn check_family_size(ms: &[EmpiricalMeasure], w: &Weights) -> Result<()> {
    if ms.len() != w.len() {
        return Err(Error::Domain(format!(
            "{} measures but {} weights",
            ms.len(),
            w.len()
        )));
    }
    Ok(())
}

/// Quantile-averaging barycenter on the default grid.
pub fn barycenter_oracle(ms: &[EmpiricalMeasure], w: &Weights) -> Result<QuantileFunction> {
    barycenter_oracle_on(ms, w, DEFAULT_ORACLE_GRID)
}

/// `Q̄(t) = Σ_s w_s Q_s(t)` on the midpoint grid of the given size.
pub fn barycenter_oracle_on(
    ms: &[EmpiricalMeasure],
    w: &Weights,
    grid_size: usize,
) -> Result<QuantileFunction> {
    check_family_size(ms, w)?;
    if grid_size == 0 {
        return Err(Error::Config("oracle grid must be nonempty".into()));
    }
    let grid = QuantileFunction::midpoint_grid(grid_size);
    let values = grid
        .iter()
        .map(|&t| {
            ms.iter()
                .zip(w.as_slice())
                .map(|(m, &ws)| ws * m.quantile_unchecked(t))
                .sum::<f64>()
        })
        .collect::<Vec<_>>();
    // sums of nondecreasing sequences are nondecreasing up to rounding
    let mut values = values;
    for k in 1..values.len() {
        if values[k] < values[k - 1] {
            values[k] = values[k - 1];
        }
    }
    QuantileFunction::new(grid, values)
}

/// Keeps the subsequence of pairs that is strictly increasing in both coordinates.
fn strictly_increasing_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> (Vec<f64>, Vec<f64>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (x, y) in pairs {
        match (xs.last(), ys.last()) {
            (Some(&px), Some(&py)) if !(x > px && y > py) => continue,
            _ => {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    (xs, ys)
}

/// Monotone rearrangement `z ↦ Q̄(F_source(z))` as a piecewise-linear map
/// through `(Q_source(t), Q̄(t))` at the barycenter grid levels.
pub fn oracle_map(source: &EmpiricalMeasure, bary: &QuantileFunction) -> Result<MonotoneMap> {
    let (xs, ys) = strictly_increasing_pairs(
        bary.grid()
            .iter()
            .zip(bary.values())
            .map(|(&t, &v)| (source.interpolated_quantile(t), v)),
    );
    if xs.len() < 2 {
        return Err(Error::Config(
            "barycenter grid too coarse to interpolate the oracle map".into(),
        ));
    }
    MonotoneMap::through_points(xs, ys)
}

/// Oracle congruent family of the barycenter problem for `ms`: inverses are
/// the interpolated group quantiles, evaluated on the barycenter quantiles.
/// Congruency holds exactly at the knots because the grid is their weighted mean.
pub fn oracle_family(
    ms: &[EmpiricalMeasure],
    w: &Weights,
    grid_size: usize,
) -> Result<CongruentFamily> {
    check_family_size(ms, w)?;
    let grid = QuantileFunction::midpoint_grid(grid_size);
    oracle_family_from_quantiles(
        |s, t| ms[s].interpolated_quantile(t),
        ms.len(),
        w,
        &grid,
    )
}

/// Builds the oracle family from arbitrary group quantile functions evaluated
/// on `levels` (levels may include 0 and 1 for bounded laws).
pub fn oracle_family_from_quantiles(
    quantile: impl Fn(usize, f64) -> f64,
    m: usize,
    w: &Weights,
    levels: &[f64],
) -> Result<CongruentFamily> {
    if m != w.len() {
        return Err(Error::Domain(format!("{m} groups but {} weights", w.len())));
    }
    let mut knots: Vec<f64> = Vec::with_capacity(levels.len());
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(levels.len()); m];
    for &t in levels {
        let q: Vec<f64> = (0..m).map(|s| quantile(s, t)).collect();
        let z: f64 = q.iter().zip(w.as_slice()).map(|(qs, ws)| ws * qs).sum();
        let keep = match knots.last() {
            None => true,
            Some(&pz) => z > pz && (0..m).all(|s| q[s] > *cols[s].last().unwrap()),
        };
        if keep {
            knots.push(z);
            for s in 0..m {
                cols[s].push(q[s]);
            }
        }
    }
    if knots.len() < 2 {
        return Err(Error::Config(
            "oracle grid too coarse: fewer than two distinct barycenter levels".into(),
        ));
    }
    let inverses = cols
        .into_iter()
        .map(|values| MonotoneMap::through_points(knots.clone(), values))
        .collect::<Result<Vec<_>>>()?;
    CongruentFamily::from_inverses(inverses, w.clone())
}

/// Upper bound on `inf_ν max_s W₂(m_s, ν)`.
///
/// Exact for `M = 2` (half the pairwise distance, attained at the quantile
/// midpoint). For `M > 2` the value at the weighted barycenter is returned,
/// which is feasible and therefore an upper bound only.
pub fn minimax_center_upper_bound(ms: &[EmpiricalMeasure], w: &Weights) -> Result<f64> {
    check_family_size(ms, w)?;
    if ms.len() == 2 {
        return Ok(0.5 * w2(&ms[0], &ms[1]));
    }
    let refs: Vec<&EmpiricalMeasure> = ms.iter().collect();
    let mut cost = vec![0.0; ms.len()];
    merged_grid_walk(&refs, |mass, q| {
        let bar: f64 = q.iter().zip(w.as_slice()).map(|(x, ws)| ws * x).sum();
        for (c, x) in cost.iter_mut().zip(q) {
            *c += mass * 0.5 * (x - bar) * (x - bar);
        }
    });
    Ok(cost.into_iter().fold(0.0, f64::max).sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let (pa, pb) = (a.points(), b.points());
    let (na, nb) = (pa.len() as f64, pb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < pa.len() && j < pb.len() {
        let x = pa[i].min(pb[j]);
        while i < pa.len() && pa[i] <= x {
            i += 1;
        }
        while j < pb.len() && pb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Population laws with closed-form quantile functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    Uniform { lo: f64, hi: f64 },
    /// Normal(mean, sd) conditioned on `[lo, hi]`.
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
    PointMass { at: f64 },
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Law::TruncatedNormal { mean, sd, lo, hi } => {
                mean.is_finite() && sd > 0.0 && lo.is_finite() && hi.is_finite() && lo < hi
            }
            Law::PointMass { at } => at.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid law {self:?}")))
        }
    }

    /// Quantile at level `t ∈ [0, 1]` (support endpoints at 0 and 1).
    pub fn quantile(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            Law::Uniform { lo, hi } => lo + t * (hi - lo),
            Law::TruncatedNormal { mean, sd, lo, hi } => {
                if t <= 0.0 {
                    return lo;
                }
                if t >= 1.0 {
                    return hi;
                }
                let (a, b) = (std_normal_cdf((lo - mean) / sd), std_normal_cdf((hi - mean) / sd));
                (mean + sd * std_normal_quantile(a + t * (b - a))).clamp(lo, hi)
            }
            Law::PointMass { at } => at,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::PointMass { at } => at,
            Law::Uniform { lo, hi } => lo + rng.random::<f64>() * (hi - lo),
            _ => {
                // open unit interval keeps the normal quantile finite
                let u: f64 = loop {
                    let u = rng.random::<f64>();
                    if u > 0.0 {
                        break u;
                    }
                };
                self.quantile(u)
            }
        }
    }

    /// Midpoint-rule nodes in probability space, `Q((i + ½)/n)`; equal weights.
    pub fn quadrature_nodes(&self, resolution: usize) -> Vec<f64> {
        QuantileFunction::midpoint_grid(resolution)
            .into_iter()
            .map(|t| self.quantile(t))
            .collect()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.quantile(0.0), self.quantile(1.0))
    }
}

/// Smallest quadrature resolution accepted for population quantities.
pub const MIN_QUADRATURE_RESOLUTION: usize = 1 << 10;
/// Default composite-midpoint resolution.
pub const DEFAULT_QUADRATURE_RESOLUTION: usize = 1 << 14;

/// Equal-weight quadrature nodes per group (probability-space midpoint rule
/// or a large sample standing in for a population law).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    nodes: Vec<Vec<f64>>,
}

impl QuadratureSpec {
    pub fn new(nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config("quadrature spec without groups".into()));
        }
        for (s, g) in nodes.iter().enumerate() {
            if g.len() < MIN_QUADRATURE_RESOLUTION {
                return Err(Error::Config(format!(
                    "quadrature resolution {} for group {s} is below {MIN_QUADRATURE_RESOLUTION}",
                    g.len()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("non-finite quadrature node in group {s}")));
            }
        }
        Ok(Self { nodes })
    }

    /// Midpoint rule in probability space for each law.
    pub fn from_laws(laws: &[Law], resolution: usize) -> Result<Self> {
        Self::new(laws.iter().map(|l| l.quadrature_nodes(resolution)).collect())
    }

    /// Midpoint rule for quantile functions given as closures `(s, t) ↦ Q_s(t)`.
    pub fn from_quantiles(m: usize, resolution: usize, q: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let grid = QuantileFunction::midpoint_grid(resolution);
        Self::new((0..m).map(|s| grid.iter().map(|&t| q(s, t)).collect()).collect())
    }

    pub fn groups(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self, s: usize) -> &[f64] {
        &self.nodes[s]
    }

    /// `∫ f dν_s`.
    pub fn mean(&self, s: usize, f: impl Fn(f64) -> f64) -> f64 {
        let g = &self.nodes[s];
        g.iter().map(|&x| f(x)).sum::<f64>() / g.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn em(v: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::new(v.to_vec()).unwrap()
    }

    fn uniform_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// Brute-force W₂² for equal sizes: minimum over all matchings (n ≤ 7).
    fn brute_force_cost(a: &[f64], b: &[f64]) -> f64 {
        fn permute(k: usize, idx: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
            if k == idx.len() {
                let c: f64 = idx.iter().enumerate().map(|(i, &j)| 0.5 * (a[i] - b[j]).powi(2)).sum();
                *best = best.min(c / a.len() as f64);
                return;
            }
            for i in k..idx.len() {
                idx.swap(k, i);
                permute(k + 1, idx, a, b, best);
                idx.swap(k, i);
            }
        }
        let mut idx: Vec<usize> = (0..a.len()).collect();
        let mut best = f64::INFINITY;
        permute(0, &mut idx, a, b, &mut best);
        best
    }

    #[test]
    fn quantile_small_cases() {
        assert_eq!(em(&[3.0, 1.0, 2.0]).quantile(0.5).unwrap(), 2.0);
        for t in [0.01, 0.5, 0.99] {
            assert_eq!(em(&[5.0]).quantile(t).unwrap(), 5.0);
        }
        assert!(em(&[1.0]).quantile(0.0).is_err());
        assert!(em(&[1.0]).quantile(1.0).is_err());
        assert!(EmpiricalMeasure::new(vec![]).is_err());
    }

    #[test]
    fn quantile_of_uniform_sample() {
        let m = em(&uniform_sample(100_000, 1));
        assert!((m.quantile(0.25).unwrap() - 0.25).abs() < 0.01);
    }

    #[test]
    fn transport_cost_small_cases() {
        assert_eq!(transport_cost(&em(&[0.0]), &em(&[1.0])), 0.5);
        let a = em(&uniform_sample(500, 2));
        assert_eq!(transport_cost(&a, &a), 0.0);
        let shifted = a.pushforward(|x| x + 0.3).unwrap();
        assert!((transport_cost(&a, &shifted) - 0.045).abs() < 0.002);
        assert!((transport_cost_with(&a, &shifted, W2Convention::Full) - 0.09).abs() < 0.004);
    }

    #[test]
    fn transport_cost_matches_brute_force_matching() {
        for seed in 0..20 {
            let a = uniform_sample(6, seed);
            let b: Vec<f64> = uniform_sample(6, seed + 100).iter().map(|x| 2.0 * x - 0.3).collect();
            let fast = transport_cost(&em(&a), &em(&b));
            assert!((fast - brute_force_cost(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn unequal_sizes_use_merged_grid() {
        // a = {0, 1}; b = {0, 0.5, 1}: cells (0,1/3]:0-0, (1/3,1/2]:0-0.5, (1/2,2/3]:1-0.5, (2/3,1]:1-1
        let c = transport_cost(&em(&[0.0, 1.0]), &em(&[0.0, 0.5, 1.0]));
        let expect = (1.0 / 6.0) * 0.5 * 0.25 * 2.0;
        assert!((c - expect).abs() < 1e-15);
        // replicating atoms does not change the measure
        let a = em(&[0.2, 0.7, 0.9]);
        let a2 = em(&[0.2, 0.2, 0.7, 0.7, 0.9, 0.9]);
        let b = em(&[0.1, 0.5]);
        assert!((transport_cost(&a, &b) - transport_cost(&a2, &b)).abs() < 1e-15);
    }

    #[test]
    fn barycenter_of_translates() {
        let base = uniform_sample(20_000, 3);
        let a = em(&base);
        let b = a.pushforward(|x| x + 0.4).unwrap();
        let w = Weights::uniform(2).unwrap();
        let q = barycenter_oracle(&[a.clone(), b], &w).unwrap();
        for (&t, &v) in q.grid().iter().zip(q.values()) {
            assert!((v - (a.quantile(t).unwrap() + 0.2)).abs() < 1e-12);
            assert!((v - (t + 0.2)).abs() < 0.02);
        }
        let same = barycenter_oracle(&[a.clone(), a.clone()], &w).unwrap();
        for (&t, &v) in same.grid().iter().zip(same.values()) {
            assert!((v - a.quantile(t).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_barycenter_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let a: Vec<f64> = (0..n).map(|_| std_normal_quantile(rng.random::<f64>().max(1e-300))).collect();
        let b: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * std_normal_quantile(rng.random::<f64>().max(1e-300))).collect();
        let w = Weights::uniform(2).unwrap();
        let q = barycenter_oracle(&[em(&a), em(&b)], &w).unwrap();
        for t in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let exact = 0.5 + 1.5 * std_normal_quantile(t);
            assert!((q.eval(t) - exact).abs() < 0.03, "t={t}");
        }
    }

    #[test]
    fn oracle_map_cases() {
        let a = em(&uniform_sample(20_000, 4));
        let w = Weights::uniform(2).unwrap();
        // source equals barycenter sample -> identity
        let q = barycenter_oracle(&[a.clone(), a.clone()], &w).unwrap();
        let id = oracle_map(&a, &q).unwrap();
        for z in [0.05, 0.3, 0.6, 0.95] {
            assert!((id.eval(z) - z).abs() < 2e-3);
        }
        let b = a.pushforward(|x| x + 0.4).unwrap();
        let q = barycenter_oracle(&[a.clone(), b], &w).unwrap();
        let shift = oracle_map(&a, &q).unwrap();
        for z in [0.05, 0.3, 0.6, 0.95] {
            assert!((shift.eval(z) - (z + 0.2)).abs() < 2e-3);
        }
        // pushforward of the source reaches the barycenter
        let pushed = a.pushforward(|x| shift.eval(x)).unwrap();
        assert!(transport_cost(&pushed, &q.to_measure().unwrap()) < 1e-5);
    }

    #[test]
    fn oracle_map_gaussian_is_affine() {
        let law_a = Law::TruncatedNormal { mean: 0.0, sd: 1.0, lo: -6.0, hi: 6.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..100_000).map(|_| law_a.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..100_000).map(|_| 1.0 + 2.0 * law_a.sample(&mut rng)).collect();
        let w = Weights::uniform(2).unwrap();
        let (a, b) = (em(&a), em(&b));
        let q = barycenter_oracle(&[a.clone(), b], &w).unwrap();
        let map = oracle_map(&a, &q).unwrap();
        for z in [-1.5, -0.5, 0.0, 0.7, 1.5] {
            assert!((map.eval(z) - (0.5 + 1.5 * z)).abs() < 0.05, "z={z}");
        }
    }

    #[test]
    fn minimax_center_cases() {
        let w = Weights::uniform(2).unwrap();
        let a = em(&uniform_sample(1000, 5));
        assert_eq!(minimax_center_upper_bound(&[a.clone(), a.clone()], &w).unwrap(), 0.0);
        let b = a.pushforward(|x| x + 0.4).unwrap();
        let v = minimax_center_upper_bound(&[a.clone(), b.clone()], &w).unwrap();
        assert!((v - (0.5f64 * 0.2 * 0.2).sqrt()).abs() < 1e-12);

        let w4 = Weights::uniform(4).unwrap();
        let four = [a.clone(), a.clone(), a.clone(), b.clone()];
        let v4 = minimax_center_upper_bound(&four, &w4).unwrap();
        assert!(v4 > 0.0 && v4 <= w2(&a, &b) + 1e-12);
        assert!(minimax_center_upper_bound(&four, &w).is_err());
    }

    #[test]
    fn ks_statistic_cases() {
        let a = em(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &em(&[10.0, 11.0])), 1.0);
        assert!((ks_statistic(&a, &em(&[0.5, 1.5, 2.5, 3.5])) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn quantile_csv_round_trip() {
        let a = em(&uniform_sample(300, 6));
        let q = barycenter_oracle_on(&[a.clone(), a], &Weights::uniform(2).unwrap(), 64).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        assert_eq!(QuantileFunction::read_csv(buf.as_slice()).unwrap(), q);
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::new(vec![1.0]).is_err());
        assert!(Weights::new(vec![0.5, 0.6]).is_err());
        assert!(Weights::new(vec![0.0, 1.0]).is_err());
        assert_eq!(Weights::proportions(&[100, 300]).unwrap().as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn truncated_normal_quantiles() {
        let law = Law::TruncatedNormal { mean: 0.0, sd: 1.0, lo: -2.0, hi: 2.0 };
        assert_eq!(law.quantile(0.0), -2.0);
        assert_eq!(law.quantile(1.0), 2.0);
        assert!(law.quantile(0.5).abs() < 1e-12);
        let nodes = law.quadrature_nodes(1024);
        assert!(nodes.windows(2).all(|p| p[1] > p[0]));
    }
}
