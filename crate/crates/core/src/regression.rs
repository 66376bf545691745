//! Base regressors, sample splitting and the fair composition `ϑ_s ∘ f_s`.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{fit_maps, select_level, FitReport, SieveSpec, SolverConfig};
use crate::maps::{CongruentFamily, LipschitzBound};
use crate::measures::{DomainInterval, EmpiricalMeasure, Weights};

/// Observations of one group: feature rows and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub group: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl GroupSample {
    pub fn new(group: usize, xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Input(format!("group {group}: {} feature rows, {} outcomes", xs.len(), ys.len())));
        }
        if xs.is_empty() {
            return Err(Error::Input(format!("group {group} is empty")));
        }
        let d = xs[0].len();
        if d == 0 || xs.iter().any(|r| r.len() != d) {
            return Err(Error::Input(format!("group {group}: ragged or empty feature rows")));
        }
        if xs.iter().flatten().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("group {group}: non-finite value")));
        }
        Ok(Self { group, xs, ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }

    pub fn check_outcomes(&self, omega: &DomainInterval) -> Result<()> {
        match self.ys.iter().find(|&&y| !(y >= omega.lo && y <= omega.hi)) {
            Some(y) => Err(Error::Domain(format!(
                "group {}: outcome {y} outside [{}, {}]",
                self.group, omega.lo, omega.hi
            ))),
            None => Ok(()),
        }
    }

    /// SHA-256 of the rows (little-endian bits of y then x), hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (x, y) in self.xs.iter().zip(&self.ys) {
            h.update(y.to_le_bytes());
            for v in x {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            group: self.group,
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Knn,
    Kernel,
}

/// Hyperparameter choice: the default rate-based rule or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperRule {
    /// `k = ⌈n^{2/(2+d)}⌉`, or bandwidth `sd(x)·n^{−1/(2+d)}`.
    Default,
    Neighbors(usize),
    Bandwidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub kind: BaseKind,
    pub hyper: HyperRule,
}

impl Default for BaseSpec {
    fn default() -> Self {
        Self { kind: BaseKind::Kernel, hyper: HyperRule::Default }
    }
}

/// Kernel weights vanish beyond this many bandwidths.
const KERNEL_CUTOFF: f64 = 6.0;

/// k-NN or Nadaraya–Watson regressor with predictions clipped to Ω.
#[derive(Debug, Clone)]
pub struct BaseRegressor {
    kind: BaseKind,
    /// `k` for k-NN, the bandwidth for the kernel.
    hyper: f64,
    train: GroupSample,
    omega: DomainInterval,
    /// For one-dimensional features: training indices sorted by `(x, index)`.
    order: Option<Vec<usize>>,
}

pub fn fit_base(sample: &GroupSample, spec: BaseSpec, omega: &DomainInterval) -> Result<BaseRegressor> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::Domain(format!("group {} needs at least 2 points to fit", sample.group)));
    }
    let d = sample.dim() as f64;
    let hyper = match (spec.kind, spec.hyper) {
        (BaseKind::Knn, HyperRule::Default) => (n as f64).powf(2.0 / (2.0 + d)).ceil().min(n as f64),
        (BaseKind::Knn, HyperRule::Neighbors(k)) => {
            if k == 0 {
                return Err(Error::Config("k must be positive".into()));
            }
            if k > n {
                log::warn!("k = {k} exceeds group size {n}; clamped");
            }
            k.min(n) as f64
        }
        (BaseKind::Kernel, HyperRule::Default) => {
            let sd = feature_sd(sample);
            let sd = if sd > 0.0 { sd } else { 1.0 };
            sd * (n as f64).powf(-1.0 / (2.0 + d))
        }
        (BaseKind::Kernel, HyperRule::Bandwidth(h)) if h > 0.0 && h.is_finite() => h,
        (kind, rule) => return Err(Error::Config(format!("hyper rule {rule:?} does not apply to {kind:?}"))),
    };
    let order = (sample.dim() == 1).then(|| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| sample.xs[a][0].total_cmp(&sample.xs[b][0]).then(a.cmp(&b)));
        idx
    });
    Ok(BaseRegressor { kind: spec.kind, hyper, train: sample.clone(), omega: *omega, order })
}

/// Average over coordinates of the per-coordinate standard deviation.
fn feature_sd(sample: &GroupSample) -> f64 {
    let (n, d) = (sample.len() as f64, sample.dim());
    (0..d)
        .map(|j| {
            let mean = sample.xs.iter().map(|r| r[j]).sum::<f64>() / n;
            (sample.xs.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .sum::<f64>()
        / d as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

impl BaseRegressor {
    pub fn kind(&self) -> BaseKind {
        self.kind
    }

    pub fn hyper(&self) -> f64 {
        self.hyper
    }

    pub fn training(&self) -> &GroupSample {
        &self.train
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let raw = match self.kind {
            BaseKind::Knn => self.knn(x),
            BaseKind::Kernel => self.kernel(x),
        };
        self.omega.clamp(raw)
    }

    fn knn(&self, x: &[f64]) -> f64 {
        let k = self.hyper as usize;
        let t = &self.train;
        let mut cand: Vec<(f64, usize)> = match &self.order {
            Some(order) => {
                // expand a window around x until it holds k points, then pull in
                // every point tied with the farthest one
                let key = |i: usize| t.xs[order[i]][0];
                let n = order.len();
                let pos = order.partition_point(|&i| t.xs[i][0] < x[0]);
                let (mut lo, mut hi) = (pos, pos);
                while hi - lo < k {
                    let left = (lo > 0).then(|| x[0] - key(lo - 1));
                    let right = (hi < n).then(|| key(hi) - x[0]);
                    match (left, right) {
                        (Some(l), Some(r)) if l <= r => lo -= 1,
                        (Some(_), None) => lo -= 1,
                        _ => hi += 1,
                    }
                }
                let far = (x[0] - key(lo)).abs().max((key(hi - 1) - x[0]).abs());
                while lo > 0 && x[0] - key(lo - 1) <= far {
                    lo -= 1;
                }
                while hi < n && key(hi) - x[0] <= far {
                    hi += 1;
                }
                (lo..hi).map(|i| ((key(i) - x[0]).abs(), order[i])).collect()
            }
            None => t.xs.iter().enumerate().map(|(i, r)| (sq_dist(r, x), i)).collect(),
        };
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if cand.len() > k {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.iter().map(|&(_, i)| t.ys[i]).sum::<f64>() / k as f64
    }

    fn kernel(&self, x: &[f64]) -> f64 {
        let h = self.hyper;
        let t = &self.train;
        let inv = -0.5 / (h * h);
        let (mut num, mut den) = (0.0, 0.0);
        match &self.order {
            Some(order) => {
                let lo = order.partition_point(|&i| t.xs[i][0] < x[0] - KERNEL_CUTOFF * h);
                let hi = order.partition_point(|&i| t.xs[i][0] <= x[0] + KERNEL_CUTOFF * h);
                for &i in &order[lo..hi] {
                    let k = ((t.xs[i][0] - x[0]).powi(2) * inv).exp();
                    num += k * t.ys[i];
                    den += k;
                }
            }
            None => {
                let cut = (KERNEL_CUTOFF * h).powi(2);
                for (r, &y) in t.xs.iter().zip(&t.ys) {
                    let d2 = sq_dist(r, x);
                    if d2 <= cut {
                        let k = (d2 * inv).exp();
                        num += k * y;
                        den += k;
                    }
                }
            }
        }
        if den > 0.0 {
            num / den
        } else {
            // no training point within the cutoff: nearest neighbour
            let i = (0..t.len()).min_by(|&a, &b| sq_dist(&t.xs[a], x).total_cmp(&sq_dist(&t.xs[b], x))).unwrap();
            t.ys[i]
        }
    }
}

/// Settings for the full fair pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairConfig {
    pub omega: DomainInterval,
    pub base: BaseSpec,
    pub lipschitz: LipschitzBound,
    pub alpha: f64,
    pub beta: f64,
    /// Fixed sieve level; chosen from ñ when absent.
    pub level: Option<u32>,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl FairConfig {
    pub fn new(omega: DomainInterval, seed: u64) -> Self {
        Self {
            omega,
            base: BaseSpec::default(),
            lipschitz: LipschitzBound::new(2.0).expect("2 > 1"),
            alpha: 2.0,
            beta: 1.0,
            level: None,
            solver: SolverConfig::default(),
            seed,
        }
    }
}

/// Per-group composition of a base regressor with a transport map.
#[derive(Debug, Clone)]
pub struct FairRegressor {
    bases: Vec<BaseRegressor>,
    maps: CongruentFamily,
}

impl FairRegressor {
    pub fn new(bases: Vec<BaseRegressor>, maps: CongruentFamily) -> Result<Self> {
        if bases.len() != maps.len() {
            return Err(Error::Internal(format!("{} base regressors for {} maps", bases.len(), maps.len())));
        }
        if bases.iter().any(|b| b.dim() != bases[0].dim()) {
            return Err(Error::Input("base regressors disagree on feature dimension".into()));
        }
        Ok(Self { bases, maps })
    }

    pub fn groups(&self) -> usize {
        self.bases.len()
    }

    pub fn dim(&self) -> usize {
        self.bases[0].dim()
    }

    pub fn maps(&self) -> &CongruentFamily {
        &self.maps
    }

    pub fn bases(&self) -> &[BaseRegressor] {
        &self.bases
    }

    pub fn base_predict(&self, s: usize, x: &[f64]) -> f64 {
        self.bases[s].predict(x)
    }

    pub fn predict(&self, s: usize, x: &[f64]) -> f64 {
        self.maps.eval(s, self.bases[s].predict(x))
    }

    /// The same regressor with groups relabeled: new group `s` is old `perm[s]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(perm.iter().map(|&p| self.bases[p].clone()).collect(), self.maps.permuted(perm)?)
    }
}

/// Index split of one group: regression half first, map half second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub regression: Vec<usize>,
    pub maps: Vec<usize>,
}

/// Seeded half split. The permutation depends on the master seed and the
/// group's content only, so relabeling groups leaves every split unchanged.
pub fn split_group(sample: &GroupSample, seed: u64) -> Split {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample.fingerprint().as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    idx.shuffle(&mut rng);
    let first = sample.len().div_ceil(2);
    let maps = idx.split_off(first);
    Split { regression: idx, maps }
}

/// Everything produced by [`fit_fair`].
#[derive(Debug, Clone)]
pub struct FairFit {
    pub regressor: FairRegressor,
    pub report: FitReport,
    pub splits: Vec<Split>,
    /// Base predictions on the map half, one measure per group.
    pub pushforwards: Vec<EmpiricalMeasure>,
}

pub fn fit_fair(samples: &[GroupSample], w: &Weights, cfg: &FairConfig) -> Result<FairFit> {
    if samples.len() != w.len() {
        return Err(Error::Input(format!("{} groups for {} weights", samples.len(), w.len())));
    }
    let dim = samples[0].dim();
    let mut bases = Vec::with_capacity(samples.len());
    let mut pushforwards = Vec::with_capacity(samples.len());
    let mut splits = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.len() < 4 {
            return Err(Error::Input(format!("group {} has {} rows; at least 4 needed", sample.group, sample.len())));
        }
        if sample.dim() != dim {
            return Err(Error::Input("groups disagree on feature dimension".into()));
        }
        sample.check_outcomes(&cfg.omega)?;
        let split = split_group(sample, cfg.seed);
        let base = fit_base(&sample.subset(&split.regression), cfg.base, &cfg.omega)?;
        let preds = split.maps.iter().map(|&i| base.predict(&sample.xs[i])).collect();
        pushforwards.push(EmpiricalMeasure::new(preds)?);
        bases.push(base);
        splits.push(split);
    }
    let j = match cfg.level {
        Some(j) => j,
        None => select_level(&pushforwards, w, cfg.alpha, cfg.beta)?,
    };
    let spec = SieveSpec::new(&cfg.omega, j, cfg.lipschitz, cfg.alpha, cfg.beta)?;
    let report = fit_maps(&pushforwards, w, &spec, &cfg.solver)?;
    let regressor = FairRegressor::new(bases, report.family.clone())?;
    Ok(FairFit { regressor, report, splits, pushforwards })
}

/// `x ↦ Σ_s w_s f̄_s(x)`.
pub fn averaged_reduction<'a>(fair: &'a FairRegressor, w: &'a Weights) -> impl Fn(&[f64]) -> f64 + 'a {
    move |x| (0..fair.groups()).map(|s| w.get(s) * fair.predict(s, x)).sum()
}

/// Tabular data set `group,y,x1,…,xd` with labels indexed by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub samples: Vec<GroupSample>,
    /// `(group index, position within group)` of every input row, in file order.
    pub rows: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn from_samples(labels: Vec<String>, samples: Vec<GroupSample>) -> Self {
        let rows = samples.iter().enumerate().flat_map(|(s, g)| (0..g.len()).map(move |i| (s, i))).collect();
        Self { labels, samples, rows }
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.samples.iter().map(GroupSample::len).collect()
    }

    /// Parses CSV data. With `known` labels, unknown groups are a schema error
    /// and group indices follow `known`.
    pub fn read<R: std::io::Read>(input: R, known: Option<&[String]>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "group" || &header[1] != "y" {
            return Err(Error::Input("expected header group,y,x1,...,xd".into()));
        }
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("x{}", j + 1) {
                return Err(Error::Input(format!("feature column {} should be named x{}", j + 3, j + 1)));
            }
        }
        let d = header.len() - 2;
        let mut labels: Vec<String> = known.map(<[String]>::to_vec).unwrap_or_default();
        let mut index: HashMap<String, usize> = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        let mut xs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); labels.len()];
        let mut ys: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let label = rec[0].to_string();
            let s = match index.get(&label) {
                Some(&s) => s,
                None if known.is_some() => {
                    return Err(Error::Schema(format!("unknown group label '{label}' on data row {}", line + 1)))
                }
                None => {
                    labels.push(label.clone());
                    index.insert(label, labels.len() - 1);
                    xs.push(Vec::new());
                    ys.push(Vec::new());
                    labels.len() - 1
                }
            };
            let parse = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| Error::Input(format!("row {}: cannot parse '{}'", line + 1, &rec[i])))
            };
            ys[s].push(parse(1)?);
            xs[s].push((2..2 + d).map(parse).collect::<Result<_>>()?);
            rows.push((s, ys[s].len() - 1));
        }
        let mut samples = Vec::with_capacity(labels.len());
        for (s, (x, y)) in xs.into_iter().zip(ys).enumerate() {
            if y.is_empty() {
                if known.is_some() {
                    samples.push(GroupSample { group: s, xs: Vec::new(), ys: Vec::new() });
                    continue;
                }
                return Err(Error::Input(format!("group '{}' has no rows", labels[s])));
            }
            samples.push(GroupSample::new(s, x, y)?);
        }
        Ok(Self { labels, samples, rows })
    }

    pub fn read_path(path: &Path, known: Option<&[String]>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?, known)
    }

    /// Writes rows in `rows` order with 17 significant digits.
    pub fn write<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let d = self.dim();
        let mut header = vec!["group".to_string(), "y".to_string()];
        header.extend((1..=d).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for &(s, i) in &self.rows {
            let g = &self.samples[s];
            let mut rec = vec![self.labels[s].clone(), format!("{:.16e}", g.ys[i])];
            rec.extend(g.xs[i].iter().map(|v| format!("{v:.16e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// SHA-256 of the sorted points of a measure, hex encoded.
pub fn measure_fingerprint(m: &EmpiricalMeasure) -> String {
    let mut h = Sha256::new();
    for x in m.points() {
        h.update(x.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Manifest of a saved model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub labels: Vec<String>,
    pub weights: Weights,
    pub config: FairConfig,
    pub level: u32,
    pub feature_dim: usize,
    /// Resolved base hyperparameter per group (k or bandwidth).
    pub base_hyper: Vec<f64>,
    pub fingerprints: Vec<GroupFingerprint>,
    /// Hash of each group's sorted base predictions on its map half.
    pub pushforward_sha256: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFingerprint {
    pub label: String,
    pub rows: usize,
    pub regression_rows: usize,
    pub sha256: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MAPS_FILE: &str = "maps.json";
pub const BASE_TRAIN_FILE: &str = "base_train.csv";

/// A fitted model together with what is needed to reload it.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub regressor: FairRegressor,
}

impl Bundle {
    pub fn from_fit(fit: &FairFit, data: &Dataset, w: &Weights, cfg: &FairConfig) -> Self {
        let fingerprints = data
            .samples
            .iter()
            .zip(&fit.splits)
            .zip(&data.labels)
            .map(|((g, sp), label)| GroupFingerprint {
                label: label.clone(),
                rows: g.len(),
                regression_rows: sp.regression.len(),
                sha256: g.fingerprint(),
            })
            .collect();
        let manifest = Manifest {
            labels: data.labels.clone(),
            weights: w.clone(),
            config: cfg.clone(),
            level: fit.report.level,
            feature_dim: fit.regressor.dim(),
            base_hyper: fit.regressor.bases.iter().map(BaseRegressor::hyper).collect(),
            fingerprints,
            pushforward_sha256: fit.pushforwards.iter().map(measure_fingerprint).collect(),
        };
        Self { manifest, regressor: fit.regressor.clone() }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        std::fs::write(dir.join(MAPS_FILE), serde_json::to_string_pretty(self.regressor.maps())? + "\n")?;
        let train = Dataset::from_samples(
            self.manifest.labels.clone(),
            self.regressor.bases.iter().map(|b| b.training().clone()).collect(),
        );
        train.write(std::fs::File::create(dir.join(BASE_TRAIN_FILE))?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let maps: CongruentFamily = serde_json::from_str(&std::fs::read_to_string(dir.join(MAPS_FILE))?)?;
        let train = Dataset::read_path(&dir.join(BASE_TRAIN_FILE), Some(&manifest.labels))?;
        let cfg = &manifest.config;
        let bases = train
            .samples
            .iter()
            .zip(&manifest.base_hyper)
            .map(|(g, &hyper)| {
                let spec = BaseSpec {
                    kind: cfg.base.kind,
                    hyper: match cfg.base.kind {
                        BaseKind::Knn => HyperRule::Neighbors(hyper as usize),
                        BaseKind::Kernel => HyperRule::Bandwidth(hyper),
                    },
                };
                fit_base(g, spec, &cfg.omega)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { regressor: FairRegressor::new(bases, maps)?, manifest })
    }
}
