//! Convex potentials attached to monotone maps and the multiple correlation.
//!
//! For a map `θ` with inverse `v = θ⁻¹`, the conjugate potential is
//! `u†(z) = ∫_b^z v(t) dt` (piecewise quadratic, evaluated exactly from prefix
//! integrals) and the potential is its convex conjugate. The supremum in
//! `u(x) = sup_z (xz − u†(z))` is attained where `v(z) = x`, i.e. `z = θ(x)`,
//! so `u(x) = x·θ(x) − u†(θ(x))` in closed form.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::{eval_piecewise, CongruentFamily, MonotoneMap};
use crate::measures::{DomainInterval, EmpiricalMeasure, QuadratureSpec, Weights};

/// Lower integration limit of `u†`: 0 when it lies in Ω, else `Ω.lo`.
///
/// Moving the base shifts every `u†_s` by `∫` of its inverse over the gap;
/// under congruency the weighted shifts sum to a constant, so correlation
/// differences are unaffected.
pub fn base_point(omega: &DomainInterval) -> f64 {
    if omega.lo <= 0.0 && 0.0 <= omega.hi {
        0.0
    } else {
        omega.lo
    }
}

/// The pair `(u†, u)` of a monotone map.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    /// Knots of the inverse map (image grid of `θ`).
    knots: Vec<f64>,
    /// `θ⁻¹` at those knots.
    values: Vec<f64>,
    /// `∫_{knots[0]}^{knots[k]} θ⁻¹`.
    prefix: Vec<f64>,
    base: f64,
    base_integral: f64,
}

impl PotentialPair {
    /// Potentials of the forward map `theta`.
    pub fn new(theta: &MonotoneMap, base: f64) -> Self {
        Self::from_inverse_parts(theta.values().to_vec(), theta.knots().to_vec(), base)
    }

    /// Potentials from the inverse `θ⁻¹` directly.
    pub fn from_inverse(inverse: &MonotoneMap, base: f64) -> Self {
        Self::from_inverse_parts(inverse.knots().to_vec(), inverse.values().to_vec(), base)
    }

    pub(crate) fn from_inverse_parts(knots: Vec<f64>, values: Vec<f64>, base: f64) -> Self {
        let mut prefix = Vec::with_capacity(knots.len());
        prefix.push(0.0);
        for k in 1..knots.len() {
            let h = knots[k] - knots[k - 1];
            prefix.push(prefix[k - 1] + 0.5 * h * (values[k - 1] + values[k]));
        }
        let mut pair = Self { knots, values, prefix, base, base_integral: 0.0 };
        pair.base_integral = pair.integral_from_first(base);
        pair
    }

    /// `∫_{knots[0]}^z θ⁻¹(t) dt`, including the slope-one extensions.
    fn integral_from_first(&self, z: f64) -> f64 {
        let (kn, v, p) = (&self.knots, &self.values, &self.prefix);
        let last = kn.len() - 1;
        if z <= kn[0] {
            let d = z - kn[0];
            return v[0] * d + 0.5 * d * d;
        }
        if z >= kn[last] {
            let d = z - kn[last];
            return p[last] + v[last] * d + 0.5 * d * d;
        }
        let k = kn.partition_point(|&x| x <= z) - 1;
        let h = kn[k + 1] - kn[k];
        let tau = z - kn[k];
        p[k] + tau * v[k] + 0.5 * tau * tau * (v[k + 1] - v[k]) / h
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// `θ(x)`.
    pub fn theta(&self, x: f64) -> f64 {
        eval_piecewise(&self.values, &self.knots, x)
    }

    /// `θ⁻¹(z)`.
    pub fn theta_inv(&self, z: f64) -> f64 {
        eval_piecewise(&self.knots, &self.values, z)
    }

    /// `u†(z) = ∫_b^z θ⁻¹`.
    pub fn u_dagger(&self, z: f64) -> f64 {
        self.integral_from_first(z) - self.base_integral
    }

    /// `u(x) = x·θ(x) − u†(θ(x))`.
    pub fn u(&self, x: f64) -> f64 {
        let z = self.theta(x);
        x * z - self.u_dagger(z)
    }
}

/// Accumulates `Σ_i ∂/∂v_m ∫_{knots[0]}^{z_i} v` over points `z_i` for every
/// knot value `v_m` of a piecewise-linear function on `knots`.
#[derive(Debug, Clone)]
pub(crate) struct DaggerGradient {
    knots: Vec<f64>,
    /// points with interval index ≥ k; index `K` means beyond the last knot
    count_in: Vec<f64>,
    a_sum: Vec<f64>,
    b_sum: Vec<f64>,
    below: f64,
    above: f64,
}

impl DaggerGradient {
    pub(crate) fn new(knots: &[f64]) -> Self {
        let n = knots.len();
        Self {
            knots: knots.to_vec(),
            count_in: vec![0.0; n],
            a_sum: vec![0.0; n],
            b_sum: vec![0.0; n],
            below: 0.0,
            above: 0.0,
        }
    }

    pub(crate) fn add(&mut self, z: f64, weight: f64) {
        let kn = &self.knots;
        let last = kn.len() - 1;
        if z < kn[0] {
            self.below += weight * (z - kn[0]);
            return;
        }
        if z >= kn[last] {
            self.count_in[last] += weight;
            self.above += weight * (z - kn[last]);
            return;
        }
        let k = kn.partition_point(|&x| x <= z) - 1;
        let h = kn[k + 1] - kn[k];
        let tau = z - kn[k];
        let b = 0.5 * tau * tau / h;
        self.count_in[k] += weight;
        self.a_sum[k] += weight * (tau - b);
        self.b_sum[k] += weight * b;
    }

    /// Writes the gradient into `out` (length = number of knots).
    pub(crate) fn finish(&self, out: &mut [f64]) {
        let kn = &self.knots;
        let last = kn.len() - 1;
        // suffix counts: points with interval index ≥ m
        let mut ge = vec![0.0; kn.len() + 1];
        for m in (0..=last).rev() {
            ge[m] = ge[m + 1] + self.count_in[m];
        }
        for m in 0..=last {
            let mut g = self.a_sum[m];
            if m >= 1 {
                g += 0.5 * (kn[m] - kn[m - 1]) * ge[m] + self.b_sum[m - 1];
            }
            if m < last {
                g += 0.5 * (kn[m + 1] - kn[m]) * ge[m + 1];
            }
            out[m] = g;
        }
        // a_sum/b_sum at index `last` are never filled; the beyond-range part:
        out[last] += self.above;
        out[0] += self.below;
    }
}

/// Multiple correlation with its per-group terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationValue {
    pub value: f64,
    pub per_group: Vec<f64>,
}

/// Potentials of every member of a family.
pub fn family_potentials(family: &CongruentFamily, base: f64) -> Vec<PotentialPair> {
    family.inverses().iter().map(|inv| PotentialPair::from_inverse(inv, base)).collect()
}

/// `C(u; ν) = Σ_s w_s · mean_i u_s(z_i^{(s)})` over empirical measures.
pub fn multiple_correlation(
    family: &CongruentFamily,
    ms: &[EmpiricalMeasure],
    w: &Weights,
    base: f64,
) -> Result<CorrelationValue> {
    if ms.len() != family.len() || w.len() != family.len() {
        return Err(Error::Domain(format!(
            "family of {} maps, {} measures, {} weights",
            family.len(),
            ms.len(),
            w.len()
        )));
    }
    let pots = family_potentials(family, base);
    let per_group: Vec<f64> = pots
        .iter()
        .zip(ms)
        .map(|(p, m)| m.points().iter().map(|&x| p.u(x)).sum::<f64>() / m.len() as f64)
        .collect();
    let value = per_group.iter().zip(w.as_slice()).map(|(c, ws)| ws * c).sum();
    Ok(CorrelationValue { value, per_group })
}

/// `E_ν(u_ϑ − u_ϑ*)` by quadrature over the group laws.
pub fn correlation_gap(
    family: &CongruentFamily,
    oracle: &CongruentFamily,
    population: &QuadratureSpec,
    base: f64,
) -> Result<f64> {
    let m = family.len();
    if oracle.len() != m || population.groups() != m {
        return Err(Error::Domain("families and quadrature disagree on M".into()));
    }
    let w = family.weights();
    let (pf, po) = (family_potentials(family, base), family_potentials(oracle, base));
    Ok((0..m)
        .map(|s| w.get(s) * population.mean(s, |x| pf[s].u(x) - po[s].u(x)))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{make_congruent, KnotGrid, LipschitzBound};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lip(x: f64) -> LipschitzBound {
        LipschitzBound::new(x).unwrap()
    }

    fn grid(lo: f64, hi: f64, k: usize) -> KnotGrid {
        KnotGrid::new((0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect()).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, k: usize, l: f64) -> MonotoneMap {
        let g = grid(0.0, 2.0, k);
        let mut v = vec![rng.random::<f64>() - 0.5];
        for i in 0..k {
            let slope = 1.0 / l + rng.random::<f64>() * (l - 1.0 / l);
            v.push(v[i] + slope * 2.0 / k as f64);
        }
        MonotoneMap::new(g, v, lip(l)).unwrap()
    }

    /// Adaptive Simpson quadrature, independent of the prefix-integral path.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b));
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let c = 0.5 * (a + b);
            let (l, r) = (0.5 * (a + c), 0.5 * (c + b));
            let left = (c - a) / 6.0 * (f(a) + 4.0 * f(l) + f(c));
            let right = (b - c) / 6.0 * (f(c) + 4.0 * f(r) + f(b));
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, c, left, tol / 2.0, depth - 1) + rec(f, c, b, right, tol / 2.0, depth - 1)
        }
        rec(f, a, b, whole, tol, depth)
    }

    #[test]
    fn u_dagger_closed_forms() {
        let id = MonotoneMap::identity(grid(-1.0, 2.0, 4), lip(2.0));
        let p = PotentialPair::new(&id, 0.0);
        assert!((p.u_dagger(1.0) - 0.5).abs() < 1e-15);
        let c = 0.3;
        let g = grid(-1.0, 2.0, 4);
        let shift = MonotoneMap::new(g.clone(), g.knots().iter().map(|k| k + c).collect(), lip(2.0)).unwrap();
        let p = PotentialPair::new(&shift, 0.0);
        for z in [-3.0, -0.4, 0.0, 0.9, 2.5, 4.0] {
            assert!((p.u_dagger(z) - (z * z / 2.0 - c * z)).abs() < 1e-12, "z={z}");
        }
    }

    #[test]
    fn u_dagger_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let map = random_map(&mut rng, 8, 3.0);
            let p = PotentialPair::new(&map, 0.0);
            let inv = map.invert().unwrap();
            for _ in 0..10 {
                let z = rng.random::<f64>() * 5.0 - 1.5;
                let kinks: Vec<f64> = std::iter::once(0.0)
                    .chain(inv.knots().iter().copied().filter(|&k| k.min(z) <= k && k <= k.max(z)))
                    .chain(std::iter::once(z))
                    .collect();
                let mut pts: Vec<f64> = kinks
                    .into_iter()
                    .filter(|&k| k >= 0f64.min(z) && k <= 0f64.max(z))
                    .collect();
                pts.sort_by(f64::total_cmp);
                let sign = if z >= 0.0 { 1.0 } else { -1.0 };
                let quad: f64 = pts
                    .windows(2)
                    .map(|w| simpson(&|t| inv.eval(t), w[0], w[1], 1e-14, 30))
                    .sum();
                assert!((p.u_dagger(z) - sign * quad).abs() < 1e-10, "z={z}");
            }
        }
    }

    #[test]
    fn u_closed_forms_and_conjugacy() {
        let id = MonotoneMap::identity(grid(-1.0, 2.0, 4), lip(2.0));
        let p = PotentialPair::new(&id, 0.0);
        for x in [-2.0, 0.3, 1.7, 3.0] {
            assert!((p.u(x) - x * x / 2.0).abs() < 1e-12);
        }
        // grid-search conjugate oracle: u(x) = sup_z (xz − u†(z))
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = random_map(&mut rng, 6, 2.0);
        let p = PotentialPair::new(&map, 0.0);
        for x in [-0.8, 0.2, 0.9, 1.6, 2.8] {
            let z0 = p.theta(x);
            let mut best = f64::NEG_INFINITY;
            let steps = 200_000;
            for i in 0..=steps {
                let z = z0 - 0.5 + i as f64 / steps as f64;
                best = best.max(x * z - p.u_dagger(z));
            }
            assert!((p.u(x) - best).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn young_fenchel_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = random_map(&mut rng, 16, 4.0);
        let p = PotentialPair::new(&map, 0.0);
        for _ in 0..1000 {
            let x = rng.random::<f64>() * 6.0 - 2.0;
            let r = p.u(x) + p.u_dagger(map.eval(x)) - x * map.eval(x);
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn u_is_convex_with_derivative_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = random_map(&mut rng, 8, 3.0);
        let p = PotentialPair::new(&map, 0.0);
        for _ in 0..1000 {
            let (a, b, t) = (rng.random::<f64>() * 4.0 - 1.0, rng.random::<f64>() * 4.0 - 1.0, rng.random::<f64>());
            assert!(p.u(t * a + (1.0 - t) * b) <= t * p.u(a) + (1.0 - t) * p.u(b) + 1e-10);
        }
        for &x in &[-0.5, 0.33, 0.81, 1.27, 2.6] {
            for h in [1e-3, 1e-4] {
                let fd = (p.u(x + h) - p.u(x - h)) / (2.0 * h);
                // Du = θ, θ is L-Lipschitz so the central difference is O(L·h)
                assert!((fd - map.eval(x)).abs() <= 3.0 * h, "x={x} h={h}");
            }
        }
    }

    #[test]
    fn potential_difference_is_integral_of_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_map(&mut rng, 8, 2.5);
        let p = PotentialPair::new(&map, 0.0);
        for _ in 0..50 {
            let (x, y) = (rng.random::<f64>() * 4.0 - 1.0, rng.random::<f64>() * 4.0 - 1.0);
            let (lo, hi) = (x.min(y), x.max(y));
            let mut pts = vec![lo, hi];
            pts.extend(map.knots().iter().copied().filter(|&k| k > lo && k < hi));
            pts.sort_by(f64::total_cmp);
            let integral: f64 = pts.windows(2).map(|w| simpson(&|z| map.eval(z), w[0], w[1], 1e-13, 30)).sum();
            let signed = if x >= y { integral } else { -integral };
            assert!((p.u(x) - p.u(y) - signed).abs() < 1e-9);
        }
    }

    #[test]
    fn dagger_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let knots = grid(0.0, 2.0, 5).knots().to_vec();
        let values: Vec<f64> = knots.iter().map(|k| 0.9 * k + 0.1 * rng.random::<f64>()).collect();
        let zs: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 3.0 - 0.5).collect();
        let mut acc = DaggerGradient::new(&knots);
        for &z in &zs {
            acc.add(z, 1.0);
        }
        let mut g = vec![0.0; knots.len()];
        acc.finish(&mut g);
        let total = |vals: &[f64]| -> f64 {
            let p = PotentialPair::from_inverse_parts(knots.clone(), vals.to_vec(), knots[0]);
            zs.iter().map(|&z| p.integral_from_first(z)).sum()
        };
        for m in 0..knots.len() {
            let h = 1e-6;
            let (mut up, mut dn) = (values.clone(), values.clone());
            up[m] += h;
            dn[m] -= h;
            let fd = (total(&up) - total(&dn)) / (2.0 * h);
            assert!((fd - g[m]).abs() < 1e-6, "m={m}: {fd} vs {}", g[m]);
        }
    }

    #[test]
    fn multiple_correlation_cases() {
        let g = grid(0.0, 2.0, 4);
        let w = Weights::uniform(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.4).collect();
        let ms = vec![EmpiricalMeasure::new(a.clone()).unwrap(), EmpiricalMeasure::new(b.clone()).unwrap()];

        let id = CongruentFamily::identity(g.clone(), w.clone(), lip(2.0));
        let c = multiple_correlation(&id, &ms, &w, 0.0).unwrap();
        let expect = 0.5 * a.iter().map(|x| x * x / 2.0).sum::<f64>() / 500.0
            + 0.5 * b.iter().map(|x| x * x / 2.0).sum::<f64>() / 500.0;
        assert!((c.value - expect).abs() < 1e-12);

        let fam = make_congruent(&[g.knots().iter().map(|z| z - 0.2).collect()], &g, &w, lip(2.0)).unwrap();
        let c = multiple_correlation(&fam, &ms, &w, 0.0).unwrap();
        let pots = family_potentials(&fam, 0.0);
        let brute = 0.5 * a.iter().map(|&x| pots[0].u(x)).sum::<f64>() / 500.0
            + 0.5 * b.iter().map(|&x| pots[1].u(x)).sum::<f64>() / 500.0;
        assert!((c.value - brute).abs() < 1e-12);
        assert!((c.value - c.per_group.iter().zip(w.as_slice()).map(|(p, w)| p * w).sum::<f64>()).abs() < 1e-15);

        let mut shuffled = a.clone();
        shuffled.reverse();
        let ms2 = vec![EmpiricalMeasure::new(shuffled).unwrap(), ms[1].clone()];
        assert_eq!(multiple_correlation(&fam, &ms2, &w, 0.0).unwrap(), c);
        // translation family beats the identity on translated data
        assert!(c.value < multiple_correlation(&id, &ms, &w, 0.0).unwrap().value);
    }

    #[test]
    fn base_point_rule() {
        assert_eq!(base_point(&DomainInterval::new(-4.0, 6.0).unwrap()), 0.0);
        assert_eq!(base_point(&DomainInterval::new(1.0, 3.0).unwrap()), 1.0);
    }
}
