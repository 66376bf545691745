//! Bi-Lipschitz increasing piecewise-linear maps and congruent families.
//!
//! A [`MonotoneMap`] is linear between its knots and continues with slope one
//! outside them, `θ(z) = z + c_inf` to the left and `θ(z) = z + c_sup` to the
//! right. Families are parameterized through their inverses on one shared
//! grid, where the congruency constraint `Σ_s w_s θ_s⁻¹(z) = z` is linear.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::measures::{DomainInterval, Weights};

/// Relative slack on slope checks, absorbing rounding of inverted maps.
const SLOPE_RTOL: f64 = 1e-9;

/// Congruency residual allowed at the knots.
pub const CONGRUENCY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LipschitzBound(f64);

impl LipschitzBound {
    pub fn new(l: f64) -> Result<Self> {
        if !(l.is_finite() && l > 1.0) {
            return Err(Error::Config(format!("Lipschitz bound must exceed 1, got {l}")));
        }
        Ok(Self(l))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    fn admits(self, slope: f64) -> bool {
        slope >= (1.0 - SLOPE_RTOL) / self.0 && slope <= self.0 * (1.0 + SLOPE_RTOL)
    }
}

impl TryFrom<f64> for LipschitzBound {
    type Error = Error;
    fn try_from(l: f64) -> Result<Self> {
        Self::new(l)
    }
}

impl From<LipschitzBound> for f64 {
    fn from(l: LipschitzBound) -> f64 {
        l.0
    }
}

/// Strictly increasing knot locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KnotGrid {
    knots: Vec<f64>,
}

impl TryFrom<Vec<f64>> for KnotGrid {
    type Error = Error;
    fn try_from(knots: Vec<f64>) -> Result<Self> {
        Self::new(knots)
    }
}

impl From<KnotGrid> for Vec<f64> {
    fn from(g: KnotGrid) -> Self {
        g.knots
    }
}

impl KnotGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("a knot grid needs at least two knots".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config("knots must be finite and strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    /// Sieve grid of level `j`: `2^j` equal intervals spanning Ω.
    pub fn equispaced(omega: &DomainInterval, level: u32) -> Self {
        let k = 1usize << level;
        let h = omega.width() / k as f64;
        let mut knots: Vec<f64> = (0..=k).map(|i| omega.lo + i as f64 * h).collect();
        knots[k] = omega.hi;
        Self { knots }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of intervals `K`.
    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Interval index `k` with `knots[k] ≤ z < knots[k+1]`, or `None` outside.
    pub fn locate(&self, z: f64) -> Option<usize> {
        if z < self.first() || z > self.last() {
            return None;
        }
        let k = self.knots.partition_point(|&x| x <= z);
        Some(k.saturating_sub(1).min(self.intervals() - 1))
    }
}

/// Evaluates the piecewise-linear interpolant through `(xs, ys)` with slope-one
/// extensions.
pub(crate) fn eval_piecewise(xs: &[f64], ys: &[f64], z: f64) -> f64 {
    let last = xs.len() - 1;
    if z <= xs[0] {
        return z + (ys[0] - xs[0]);
    }
    if z >= xs[last] {
        return z + (ys[last] - xs[last]);
    }
    let k = xs.partition_point(|&x| x <= z) - 1;
    let t = (z - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

/// Member of `M_L`: strictly increasing, slopes in `[1/L, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    grid: KnotGrid,
    values: Vec<f64>,
    lipschitz: LipschitzBound,
}

impl MonotoneMap {
    pub fn new(grid: KnotGrid, values: Vec<f64>, lipschitz: LipschitzBound) -> Result<Self> {
        if values.len() != grid.knots.len() {
            return Err(Error::Config(format!(
                "{} values for {} knots",
                values.len(),
                grid.knots.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("map values must be finite".into()));
        }
        for k in 0..grid.intervals() {
            let slope = (values[k + 1] - values[k]) / (grid.knots[k + 1] - grid.knots[k]);
            if !lipschitz.admits(slope) {
                return Err(Error::Infeasible(format!(
                    "slope {slope} on [{}, {}] outside [1/L, L] with L = {}",
                    grid.knots[k],
                    grid.knots[k + 1],
                    lipschitz.0
                )));
            }
        }
        Ok(Self { grid, values, lipschitz })
    }

    pub fn identity(grid: KnotGrid, lipschitz: LipschitzBound) -> Self {
        let values = grid.knots.clone();
        Self { grid, values, lipschitz }
    }

    /// Interpolant through strictly increasing points, with the smallest
    /// Lipschitz bound that admits it (at least `1 + 1e-9`).
    pub fn through_points(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let grid = KnotGrid::new(knots)?;
        if values.len() != grid.knots.len() || values.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config("values must be strictly increasing".into()));
        }
        let mut l: f64 = 1.0 + 1e-9;
        for k in 0..grid.intervals() {
            let slope = (values[k + 1] - values[k]) / (grid.knots[k + 1] - grid.knots[k]);
            l = l.max(slope).max(1.0 / slope);
        }
        let lipschitz = LipschitzBound::new(l)?;
        Self::new(grid, values, lipschitz)
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.grid
    }

    pub fn knots(&self) -> &[f64] {
        &self.grid.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lipschitz(&self) -> LipschitzBound {
        self.lipschitz
    }

    pub fn c_inf(&self) -> f64 {
        self.values[0] - self.grid.knots[0]
    }

    pub fn c_sup(&self) -> f64 {
        let k = self.values.len() - 1;
        self.values[k] - self.grid.knots[k]
    }

    pub fn eval(&self, z: f64) -> f64 {
        eval_piecewise(&self.grid.knots, &self.values, z)
    }

    /// `θ⁻¹` on the image grid. Exact: knots and values swap roles.
    pub fn invert(&self) -> Result<Self> {
        let grid = KnotGrid::new(self.values.clone())
            .map_err(|_| Error::Internal("zero-length segment in monotone map".into()))?;
        Ok(Self { grid, values: self.grid.knots.clone(), lipschitz: self.lipschitz })
    }

    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.grid.intervals()).map(move |k| {
            (self.values[k + 1] - self.values[k]) / (self.grid.knots[k + 1] - self.grid.knots[k])
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn raw17(x: f64) -> std::result::Result<Box<serde_json::value::RawValue>, serde_json::Error> {
    serde_json::value::RawValue::from_string(fmt17(x))
}

pub(crate) mod f64_17 {
    use serde::ser::Error as _;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        let raw = super::raw17(*x).map_err(S::Error::custom)?;
        serde::Serialize::serialize(&raw, s)
    }
}

pub(crate) mod vec_f64_17 {
    use serde::ser::Error as _;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let raws = xs
            .iter()
            .map(|&x| super::raw17(x))
            .collect::<Result<Vec<_>, _>>()
            .map_err(S::Error::custom)?;
        serde::Serialize::serialize(&raws, s)
    }
}

#[derive(Serialize)]
struct MapRecordOut<'a> {
    #[serde(with = "vec_f64_17")]
    knots: &'a [f64],
    #[serde(with = "vec_f64_17")]
    values: &'a [f64],
    #[serde(with = "f64_17")]
    c_inf: f64,
    #[serde(with = "f64_17")]
    c_sup: f64,
    #[serde(rename = "L", with = "f64_17")]
    lipschitz: f64,
}

#[derive(Deserialize)]
struct MapRecordIn {
    knots: Vec<f64>,
    values: Vec<f64>,
    c_inf: f64,
    c_sup: f64,
    #[serde(rename = "L")]
    lipschitz: f64,
}

impl Serialize for MonotoneMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MapRecordOut {
            knots: &self.grid.knots,
            values: &self.values,
            c_inf: self.c_inf(),
            c_sup: self.c_sup(),
            lipschitz: self.lipschitz.0,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MonotoneMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = MapRecordIn::deserialize(d)?;
        let l = LipschitzBound::new(rec.lipschitz).map_err(D::Error::custom)?;
        let grid = KnotGrid::new(rec.knots).map_err(D::Error::custom)?;
        let map = MonotoneMap::new(grid, rec.values, l).map_err(D::Error::custom)?;
        if map.c_inf() != rec.c_inf || map.c_sup() != rec.c_sup {
            return Err(D::Error::custom("c_inf/c_sup inconsistent with the end knots"));
        }
        Ok(map)
    }
}

/// `M` maps whose inverses share one knot grid and average to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CongruentFamily {
    weights: Weights,
    inverses: Vec<MonotoneMap>,
    forwards: Vec<MonotoneMap>,
}

impl CongruentFamily {
    /// Validates a shared grid and the knot-wise congruency residual.
    pub fn from_inverses(inverses: Vec<MonotoneMap>, weights: Weights) -> Result<Self> {
        if inverses.len() != weights.len() {
            return Err(Error::Domain(format!(
                "{} maps but {} weights",
                inverses.len(),
                weights.len()
            )));
        }
        let grid = inverses[0].grid.clone();
        if inverses.iter().any(|m| m.grid != grid) {
            return Err(Error::Config("inverse maps must share one knot grid".into()));
        }
        let forwards = inverses.iter().map(MonotoneMap::invert).collect::<Result<Vec<_>>>()?;
        let family = Self { weights, inverses, forwards };
        let r = family.congruency_residual();
        if r > CONGRUENCY_TOL {
            return Err(Error::Infeasible(format!("congruency residual {r:e} at the knots")));
        }
        Ok(family)
    }

    pub fn identity(grid: KnotGrid, weights: Weights, lipschitz: LipschitzBound) -> Self {
        let id = MonotoneMap::identity(grid, lipschitz);
        let m = weights.len();
        Self { weights, inverses: vec![id.clone(); m], forwards: vec![id; m] }
    }

    pub fn len(&self) -> usize {
        self.inverses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverses.is_empty()
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.inverses[0].grid
    }

    /// `θ_s⁻¹`, defined on the shared grid.
    pub fn inverse(&self, s: usize) -> &MonotoneMap {
        &self.inverses[s]
    }

    /// `θ_s`.
    pub fn forward(&self, s: usize) -> &MonotoneMap {
        &self.forwards[s]
    }

    pub fn forwards(&self) -> &[MonotoneMap] {
        &self.forwards
    }

    pub fn inverses(&self) -> &[MonotoneMap] {
        &self.inverses
    }

    pub fn eval(&self, s: usize, z: f64) -> f64 {
        self.forwards[s].eval(z)
    }

    /// Largest Lipschitz bound among the members.
    pub fn lipschitz(&self) -> f64 {
        self.inverses.iter().map(|m| m.lipschitz.0).fold(1.0, f64::max)
    }

    /// `max_k |Σ_s w_s θ_s⁻¹(z_k) − z_k|`.
    pub fn congruency_residual(&self) -> f64 {
        let knots = self.grid().knots();
        (0..knots.len())
            .map(|k| {
                let avg: f64 = self
                    .inverses
                    .iter()
                    .zip(self.weights.as_slice())
                    .map(|(m, w)| w * m.values[k])
                    .sum();
                (avg - knots[k]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Congruency residual at arbitrary points (inside or outside the grid).
    pub fn residual_at(&self, points: impl IntoIterator<Item = f64>) -> f64 {
        points
            .into_iter()
            .map(|z| {
                let avg: f64 = self
                    .inverses
                    .iter()
                    .zip(self.weights.as_slice())
                    .map(|(m, w)| w * m.eval(z))
                    .sum();
                (avg - z).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Residual on `per_interval` evenly spaced points inside each grid interval
    /// plus a margin outside the grid.
    pub fn dense_residual(&self, per_interval: usize) -> f64 {
        let knots = self.grid().knots();
        let width = knots[knots.len() - 1] - knots[0];
        let mut pts = vec![knots[0] - 0.5 * width, knots[knots.len() - 1] + 0.5 * width];
        for p in knots.windows(2) {
            for i in 0..per_interval {
                pts.push(p[0] + (p[1] - p[0]) * (i as f64 + 0.5) / per_interval as f64);
            }
        }
        self.residual_at(pts)
    }

    /// Applies a relabeling: group `s` of the result is group `perm[s]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let inverses = perm.iter().map(|&p| self.inverses[p].clone()).collect();
        Self::from_inverses(inverses, self.weights.permuted(perm)?)
    }
}

#[derive(Serialize)]
struct FamilyOut<'a> {
    #[serde(with = "vec_f64_17")]
    weights: &'a [f64],
    inverses: &'a [MonotoneMap],
}

#[derive(Deserialize)]
struct FamilyIn {
    weights: Vec<f64>,
    inverses: Vec<MonotoneMap>,
}

impl Serialize for CongruentFamily {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FamilyOut { weights: self.weights.as_slice(), inverses: &self.inverses }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CongruentFamily {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = FamilyIn::deserialize(d)?;
        let w = Weights::new(rec.weights).map_err(D::Error::custom)?;
        CongruentFamily::from_inverses(rec.inverses, w).map_err(D::Error::custom)
    }
}

/// Completes `M − 1` inverse maps (values on `grid`) with the inverse forced by
/// congruency, `v_M = (z − Σ_{s<M} w_s v_s) / w_M`.
pub fn make_congruent(
    inverse_values: &[Vec<f64>],
    grid: &KnotGrid,
    w: &Weights,
    lipschitz: LipschitzBound,
) -> Result<CongruentFamily> {
    let m = w.len();
    if inverse_values.len() + 1 != m {
        return Err(Error::Domain(format!(
            "expected {} inverse rows for {m} groups, got {}",
            m - 1,
            inverse_values.len()
        )));
    }
    let knots = grid.knots();
    let w_last = w.get(m - 1);
    let last: Vec<f64> = (0..knots.len())
        .map(|k| {
            let partial: f64 = inverse_values.iter().zip(w.as_slice()).map(|(v, ws)| ws * v[k]).sum();
            (knots[k] - partial) / w_last
        })
        .collect();
    let mut inverses = Vec::with_capacity(m);
    for (s, values) in inverse_values.iter().chain(std::iter::once(&last)).enumerate() {
        if values.len() != knots.len() {
            return Err(Error::Domain(format!("inverse row {s} has wrong length")));
        }
        let map = MonotoneMap::new(grid.clone(), values.clone(), lipschitz).map_err(|e| match e {
            Error::Infeasible(msg) if s + 1 == m => {
                Error::Infeasible(format!("induced inverse of group {s}: {msg}"))
            }
            Error::Infeasible(msg) => Error::Infeasible(format!("inverse of group {s}: {msg}")),
            other => other,
        })?;
        inverses.push(map);
    }
    CongruentFamily::from_inverses(inverses, w.clone())
}

/// Sieve level `j` with `2^j ≤ (ñ / ln ñ)^{1/(α+β)} < 2^{j+1}`, clamped at 0.
pub fn sieve_level(n_tilde: f64, alpha: f64, beta: f64) -> Result<u32> {
    if !(alpha > 0.0) || !(beta >= 0.0) {
        return Err(Error::Config(format!("need alpha > 0 and beta >= 0, got ({alpha}, {beta})")));
    }
    if !(n_tilde > std::f64::consts::E) {
        log::warn!("effective sample size {n_tilde} too small for the sieve rule; using level 0");
        return Ok(0);
    }
    let target = (n_tilde / n_tilde.ln()).powf(1.0 / (alpha + beta));
    if target < 2.0 {
        return Ok(0);
    }
    let mut j = target.log2().floor() as u32;
    // guard against log2 rounding at exact powers of two
    while (1u64 << (j + 1)) as f64 <= target {
        j += 1;
    }
    while j > 0 && (1u64 << j) as f64 > target {
        j -= 1;
    }
    Ok(j)
}
