//! Synthetic scenarios with known regression functions and oracle transport maps.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{CongruentFamily, LipschitzBound};
use crate::measures::{oracle_family_from_quantiles, std_normal_cdf, DomainInterval, Law, Weights, DEFAULT_ORACLE_GRID};
use crate::metrics::{stream_rng, weighted_sq_distance, EvalSpec, Estimate};
use crate::regression::{Dataset, FairRegressor, GroupSample};

/// Largest tolerated fraction of outcome mass outside Ω before truncation.
const MAX_OUTSIDE_MASS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Translation,
    Gaussian,
    NonlinearMonotone,
}

/// Increasing regression function of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
pub enum Link {
    /// `slope·x + intercept`
    Affine { slope: f64, intercept: f64 },
    /// `intercept + scale·x^exponent` for `x ≥ 0`
    Power { intercept: f64, scale: f64, exponent: f64 },
}

impl Link {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Link::Affine { slope, intercept } => slope * x + intercept,
            Link::Power { intercept, scale, exponent } => intercept + scale * x.max(0.0).powf(exponent),
        }
    }

    fn validate(&self, x_law: &Law) -> Result<()> {
        let ok = match *self {
            Link::Affine { slope, intercept } => slope > 0.0 && intercept.is_finite(),
            Link::Power { intercept, scale, exponent } => {
                intercept.is_finite() && scale > 0.0 && exponent > 0.0 && x_law.support().0 >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("link {self:?} is not increasing on the feature support")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioKind,
    pub weights: Weights,
    /// Feature law, shared by every group.
    pub x_law: Law,
    pub links: Vec<Link>,
    pub noise_sd: f64,
    pub omega: DomainInterval,
    pub lipschitz: LipschitzBound,
    pub seed: u64,
}

impl ScenarioSpec {
    /// `f*_s(x) = x + c_s`, `X ~ U[0.3, 1.3]`, Ω = [0, 2].
    pub fn translation(shifts: &[f64], weights: Weights, seed: u64) -> Self {
        Self {
            name: ScenarioKind::Translation,
            weights,
            x_law: Law::Uniform { lo: 0.3, hi: 1.3 },
            links: shifts.iter().map(|&c| Link::Affine { slope: 1.0, intercept: c }).collect(),
            noise_sd: 0.05,
            omega: DomainInterval { lo: 0.0, hi: 2.0 },
            lipschitz: LipschitzBound::new(2.0).expect("2 > 1"),
            seed,
        }
    }

    /// The two-group translation scenario with shifts `(0, 0.4)`.
    pub fn default_translation(seed: u64) -> Self {
        Self::translation(&[0.0, 0.4], Weights::uniform(2).expect("two groups"), seed)
    }

    /// `M` groups sharing one regression function.
    pub fn identical(m: usize, seed: u64) -> Result<Self> {
        Ok(Self::translation(&vec![0.2; m], Weights::uniform(m)?, seed))
    }

    /// `f*_1(x) = x`, `f*_2(x) = 2x + 1`, `X ~ N(0, 1)` truncated to ±2.4, Ω = [−4, 6].
    pub fn gaussian(seed: u64) -> Self {
        Self {
            name: ScenarioKind::Gaussian,
            weights: Weights::uniform(2).expect("two groups"),
            x_law: Law::TruncatedNormal { mean: 0.0, sd: 1.0, lo: -2.4, hi: 2.4 },
            links: vec![Link::Affine { slope: 1.0, intercept: 0.0 }, Link::Affine { slope: 2.0, intercept: 1.0 }],
            noise_sd: 0.1,
            omega: DomainInterval { lo: -4.0, hi: 6.0 },
            lipschitz: LipschitzBound::new(2.0).expect("2 > 1"),
            seed,
        }
    }

    /// `f*_1(x) = 0.3 + x`, `f*_2(x) = 0.4 + 0.8·x^1.5`, `X ~ U[0.2, 1.2]`, Ω = [0, 2].
    pub fn nonlinear(seed: u64) -> Self {
        Self {
            name: ScenarioKind::NonlinearMonotone,
            weights: Weights::uniform(2).expect("two groups"),
            x_law: Law::Uniform { lo: 0.2, hi: 1.2 },
            links: vec![
                Link::Affine { slope: 1.0, intercept: 0.3 },
                Link::Power { intercept: 0.4, scale: 0.8, exponent: 1.5 },
            ],
            noise_sd: 0.05,
            omega: DomainInterval { lo: 0.0, hi: 2.0 },
            lipschitz: LipschitzBound::new(2.0).expect("2 > 1"),
            seed,
        }
    }

    pub fn by_name(name: ScenarioKind, seed: u64) -> Self {
        match name {
            ScenarioKind::Translation => Self::default_translation(seed),
            ScenarioKind::Gaussian => Self::gaussian(seed),
            ScenarioKind::NonlinearMonotone => Self::nonlinear(seed),
        }
    }

    pub fn groups(&self) -> usize {
        self.weights.len()
    }

    /// Law of `f*_s(X)` through its quantile function.
    pub fn prediction_quantile(&self, s: usize, t: f64) -> f64 {
        self.links[s].eval(self.x_law.quantile(t))
    }

    pub fn validate(&self) -> Result<()> {
        self.x_law.validate()?;
        if self.links.len() != self.weights.len() {
            return Err(Error::Config(format!("{} links for {} weights", self.links.len(), self.weights.len())));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be nonnegative, got {}", self.noise_sd)));
        }
        for (s, link) in self.links.iter().enumerate() {
            link.validate(&self.x_law)?;
            let mass = self.outside_mass(s);
            if mass > MAX_OUTSIDE_MASS {
                return Err(Error::Config(format!(
                    "group {s}: {:.3}% of outcome mass lies outside [{}, {}]",
                    100.0 * mass,
                    self.omega.lo,
                    self.omega.hi
                )));
            }
        }
        Ok(())
    }

    /// `P(f*_s(X) + ε ∉ Ω)` by quadrature over the feature law.
    pub fn outside_mass(&self, s: usize) -> f64 {
        let nodes = self.x_law.quadrature_nodes(DEFAULT_ORACLE_GRID);
        let (lo, hi) = (self.omega.lo, self.omega.hi);
        nodes
            .iter()
            .map(|&x| {
                let f = self.links[s].eval(x);
                if self.noise_sd == 0.0 {
                    f64::from(u8::from(!(lo..=hi).contains(&f)))
                } else {
                    std_normal_cdf((lo - f) / self.noise_sd) + std_normal_cdf((f - hi) / self.noise_sd)
                }
            })
            .sum::<f64>()
            / nodes.len() as f64
    }
}

/// Known regression functions, oracle maps, and the fair Bayes-optimal regressor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: ScenarioSpec,
    pub theta_star: CongruentFamily,
    /// Estimated Poincaré constant of each prediction law.
    pub poincare: Vec<f64>,
}

impl GroundTruth {
    /// Builds `ϑ*` from the exact prediction quantiles and checks it lies in `M_L`.
    pub fn for_scenario(spec: &ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let levels: Vec<f64> = (0..=DEFAULT_ORACLE_GRID).map(|i| i as f64 / DEFAULT_ORACLE_GRID as f64).collect();
        let theta_star =
            oracle_family_from_quantiles(|s, t| spec.prediction_quantile(s, t), spec.groups(), &spec.weights, &levels)?;
        let l = spec.lipschitz.value();
        for (s, inv) in theta_star.inverses().iter().enumerate() {
            if let Some(bad) = inv.slopes().find(|&k| k > l * (1.0 + 1e-9) || k * l < 1.0 - 1e-9) {
                return Err(Error::Config(format!("oracle map of group {s} has slope {bad} outside [1/{l}, {l}]")));
            }
        }
        let poincare = (0..spec.groups()).map(|s| poincare_estimate(|t| spec.prediction_quantile(s, t))).collect();
        Ok(Self { scenario: spec.clone(), theta_star, poincare })
    }

    pub fn f_star(&self, s: usize, x: &[f64]) -> f64 {
        self.scenario.links[s].eval(x[0])
    }

    pub fn fair_bayes(&self, s: usize, x: &[f64]) -> f64 {
        self.theta_star.eval(s, self.f_star(s, x))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Reads a truth sidecar; any parse or consistency failure is a sidecar error.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Sidecar(format!("{}: {e}", path.display())))?;
        let truth: Self = serde_json::from_str(&text).map_err(|e| Error::Sidecar(e.to_string()))?;
        truth.scenario.validate().map_err(|e| Error::Sidecar(e.to_string()))?;
        if truth.theta_star.len() != truth.scenario.groups() || truth.poincare.len() != truth.scenario.groups() {
            return Err(Error::Sidecar("group count differs between scenario and maps".into()));
        }
        Ok(truth)
    }
}

/// `sup_g Var(g) / E[g'²]` over sines, cosines and low-order monomials on the
/// support, with expectations by midpoint quadrature of the quantile function.
pub fn poincare_estimate(quantile: impl Fn(f64) -> f64) -> f64 {
    let n = 1 << 12;
    let z: Vec<f64> = (0..n).map(|i| quantile((i as f64 + 0.5) / n as f64)).collect();
    let (a, b) = (quantile(0.0), quantile(1.0));
    let width = (b - a).max(f64::MIN_POSITIVE);
    let mut tests: Vec<Box<dyn Fn(f64) -> (f64, f64)>> = vec![
        Box::new(|x| (x, 1.0)),
        Box::new(|x| (x * x, 2.0 * x)),
        Box::new(|x| (x * x * x, 3.0 * x * x)),
    ];
    for k in 1..=8 {
        let om = k as f64 * std::f64::consts::PI / width;
        tests.push(Box::new(move |x| ((om * (x - a)).sin(), om * (om * (x - a)).cos())));
        tests.push(Box::new(move |x| ((om * (x - a)).cos(), -om * (om * (x - a)).sin())));
    }
    tests
        .iter()
        .map(|g| {
            let vals: Vec<(f64, f64)> = z.iter().map(|&x| g(x)).collect();
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / n as f64;
            let grad = vals.iter().map(|v| v.1 * v.1).sum::<f64>() / n as f64;
            if grad > 0.0 {
                var / grad
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Draws `n_per_group[s]` rows for each group. Outcomes outside Ω are
/// redrawn (noise only), never clipped.
pub fn generate(spec: &ScenarioSpec, n_per_group: &[usize]) -> Result<(Vec<GroupSample>, GroundTruth)> {
    let truth = GroundTruth::for_scenario(spec)?;
    Ok((sample_groups(spec, n_per_group, spec.seed)?, truth))
}

/// Data only, from an explicit seed (truth is seed independent).
pub fn sample_groups(spec: &ScenarioSpec, n_per_group: &[usize], seed: u64) -> Result<Vec<GroupSample>> {
    if n_per_group.len() != spec.groups() || n_per_group.contains(&0) {
        return Err(Error::Config(format!("need {} positive group sizes", spec.groups())));
    }
    (0..spec.groups())
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64);
            let mut xs = Vec::with_capacity(n_per_group[s]);
            let mut ys = Vec::with_capacity(n_per_group[s]);
            for _ in 0..n_per_group[s] {
                let x = spec.x_law.sample(&mut rng);
                let f = spec.links[s].eval(x);
                let mut tries = 0;
                let y = loop {
                    let eps: f64 = rng.sample(StandardNormal);
                    let y = f + spec.noise_sd * eps;
                    if spec.omega.contains(y) {
                        break y;
                    }
                    tries += 1;
                    if tries > 10_000 {
                        return Err(Error::Config(format!("cannot draw an outcome inside Ω at x = {x}")));
                    }
                };
                xs.push(vec![x]);
                ys.push(y);
            }
            GroupSample::new(s, xs, ys)
        })
        .collect()
}

pub fn dataset(samples: Vec<GroupSample>) -> Dataset {
    let labels = (0..samples.len()).map(|s| format!("g{s}")).collect();
    Dataset::from_samples(labels, samples)
}

/// `d²_{μ_X}(f̄_n, f̄*)` on fresh or quadrature features.
pub fn truth_error(candidate: &FairRegressor, truth: &GroundTruth, eval: &EvalSpec) -> Result<Estimate> {
    let pts = eval.feature_points(&vec![truth.scenario.x_law.clone(); truth.scenario.groups()])?;
    weighted_sq_distance(|s, x| candidate.predict(s, x), |s, x| truth.fair_bayes(s, x), &pts, &truth.scenario.weights)
}

/// `Σ_s w_s ∫ (f_{n,s} − f*_s)² dμ_X`: the base-regressor error.
pub fn base_error(candidate: &FairRegressor, truth: &GroundTruth, eval: &EvalSpec) -> Result<Estimate> {
    let pts = eval.feature_points(&vec![truth.scenario.x_law.clone(); truth.scenario.groups()])?;
    weighted_sq_distance(|s, x| candidate.base_predict(s, x), |s, x| truth.f_star(s, x), &pts, &truth.scenario.weights)
}
