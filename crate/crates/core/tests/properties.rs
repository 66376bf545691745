//! Randomized invariants across the public API.

use fairbary::estimator::random_feasible_family;
use fairbary::maps::{CongruentFamily, KnotGrid, LipschitzBound, MonotoneMap};
use fairbary::measures::{
    barycenter_oracle_on, oracle_map, transport_cost, DomainInterval, EmpiricalMeasure, QuantileFunction, Weights,
};
use fairbary::metrics::{stream_rng, unfairness, weighted_sq_distance};
use fairbary::potentials::{family_potentials, multiple_correlation, PotentialPair};
use fairbary::regression::{fit_base, split_group, BaseSpec, FairRegressor, GroupSample};
use fairbary::synth::{GroundTruth, ScenarioKind, ScenarioSpec};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.random::<f64>() - 0.5)).collect()
}

fn measure(rng: &mut ChaCha8Rng, n: usize) -> EmpiricalMeasure {
    EmpiricalMeasure::new(points(rng, n, 4.0)).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, m: usize) -> Weights {
    let raw: Vec<f64> = (0..m).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    Weights::new(raw.iter().map(|r| r / total).collect()).unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, k: usize, lip: f64) -> MonotoneMap {
    let mut knots = vec![-2.0 + rng.random::<f64>()];
    let mut values = vec![rng.random::<f64>() - 0.5];
    for _ in 0..k {
        let h = 0.05 + rng.random::<f64>();
        let slope = lip.powf(2.0 * rng.random::<f64>() - 1.0);
        knots.push(knots.last().unwrap() + h);
        values.push(values.last().unwrap() + slope * h);
    }
    MonotoneMap::new(KnotGrid::new(knots).unwrap(), values, LipschitzBound::new(lip).unwrap()).unwrap()
}

fn omega02() -> DomainInterval {
    DomainInterval::new(0.0, 2.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transport_cost_is_symmetric_and_nonnegative(seed in 0u64..10_000, na in 1usize..60, nb in 1usize..60) {
        let mut rng = stream_rng(seed, 0);
        let (a, b) = (measure(&mut rng, na), measure(&mut rng, nb));
        let (ab, ba) = (transport_cost(&a, &b), transport_cost(&b, &a));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert_eq!(transport_cost(&a, &a.clone()), 0.0);
        if ab == 0.0 {
            prop_assert_eq!(a.points(), b.points());
        }
    }

    #[test]
    fn transport_distance_triangle(seed in 0u64..10_000, n in 1usize..=50) {
        let mut rng = stream_rng(seed, 1);
        let (a, b, c) = (measure(&mut rng, n), measure(&mut rng, n), measure(&mut rng, n));
        let d = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| (2.0 * transport_cost(x, y)).sqrt();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn barycenter_of_translates_is_shifted(seed in 0u64..10_000, m in 2usize..5, n in 5usize..200) {
        let mut rng = stream_rng(seed, 2);
        let common = points(&mut rng, n, 2.0);
        let shifts: Vec<f64> = points(&mut rng, m, 3.0);
        let w = weights(&mut rng, m);
        let ms: Vec<EmpiricalMeasure> =
            shifts.iter().map(|c| EmpiricalMeasure::new(common.iter().map(|x| x + c).collect()).unwrap()).collect();
        let base = EmpiricalMeasure::new(common).unwrap();
        let mean_shift: f64 = shifts.iter().zip(w.as_slice()).map(|(c, ws)| c * ws).sum();
        let q = barycenter_oracle_on(&ms, &w, 512).unwrap();
        for (&t, &v) in q.grid().iter().zip(q.values()) {
            prop_assert!((v - base.quantile(t).unwrap() - mean_shift).abs() <= 1e-9);
        }
    }

    #[test]
    fn barycenter_is_first_order_optimal(seed in 0u64..10_000, m in 2usize..4) {
        let mut rng = stream_rng(seed, 3);
        let ms: Vec<EmpiricalMeasure> = (0..m)
            .map(|_| {
                let n = rng.random_range(10..80);
                measure(&mut rng, n)
            })
            .collect();
        let w = weights(&mut rng, m);
        let q = barycenter_oracle_on(&ms, &w, 256).unwrap();
        let objective = |vals: &[f64]| -> f64 {
            q.grid()
                .iter()
                .zip(vals)
                .map(|(&t, v)| {
                    ms.iter().zip(w.as_slice()).map(|(ms_, ws)| ws * 0.5 * (ms_.quantile(t).unwrap() - v).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / vals.len() as f64
        };
        let base = objective(q.values());
        for _ in 0..100 {
            let i = rng.random_range(0..q.len());
            for eps in [-1e-4, 1e-4] {
                let mut vals = q.values().to_vec();
                vals[i] += eps;
                prop_assert!(objective(&vals) >= base - 1e-15);
            }
        }
    }

    #[test]
    fn oracle_map_pushes_onto_barycenter(seed in 0u64..10_000, n in 50usize..400) {
        let mut rng = stream_rng(seed, 4);
        let ms = vec![measure(&mut rng, n), EmpiricalMeasure::new(points(&mut rng, n, 2.0).iter().map(|x| x * x).collect()).unwrap()];
        let w = weights(&mut rng, 2);
        let grid = 1 << 12;
        let bary = barycenter_oracle_on(&ms, &w, grid).unwrap();
        let target = bary.to_measure().unwrap();
        for m in &ms {
            let theta = oracle_map(m, &bary).unwrap();
            let pushed = m.pushforward(|z| theta.eval(z)).unwrap();
            let range = target.points().last().unwrap() - target.points()[0];
            prop_assert!(transport_cost(&pushed, &target) <= (range / n as f64).powi(2) + 1e-12);
        }
    }

    #[test]
    fn identity_families_are_congruent_for_any_weights(seed in 0u64..10_000, m in 2usize..6, j in 0u32..6) {
        let mut rng = stream_rng(seed, 5);
        let w = weights(&mut rng, m);
        let fam = CongruentFamily::identity(KnotGrid::equispaced(&omega02(), j), w, LipschitzBound::new(2.0).unwrap());
        prop_assert!(fam.congruency_residual() <= 1e-15);
        prop_assert!(fam.dense_residual(16) <= 1e-15);
    }

    #[test]
    fn invert_is_an_involution_on_knots(seed in 0u64..10_000, k in 1usize..30) {
        let mut rng = stream_rng(seed, 6);
        let map = random_map(&mut rng, k, 3.0);
        let back = map.invert().unwrap().invert().unwrap();
        for (a, b) in map.knots().iter().zip(back.knots()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        for (a, b) in map.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn potentials_are_convex_with_derivative_theta(seed in 0u64..10_000, k in 1usize..15) {
        let mut rng = stream_rng(seed, 7);
        let map = random_map(&mut rng, k, 2.5);
        let pot = PotentialPair::new(&map, 0.0);
        for _ in 0..50 {
            let (x1, x2, t) = (6.0 * rng.random::<f64>() - 3.0, 6.0 * rng.random::<f64>() - 3.0, rng.random::<f64>());
            prop_assert!(pot.u(t * x1 + (1.0 - t) * x2) <= t * pot.u(x1) + (1.0 - t) * pot.u(x2) + 1e-10);
            // one-sided slopes bracket theta even at kinks
            let h = 1e-4;
            let fd = (pot.u(x1 + h) - pot.u(x1 - h)) / (2.0 * h);
            prop_assert!((fd - map.eval(x1)).abs() <= 2.5 * h + 1e-8);
        }
    }

    #[test]
    fn potential_differences_integrate_theta(seed in 0u64..10_000, k in 1usize..15) {
        let mut rng = stream_rng(seed, 8);
        let map = random_map(&mut rng, k, 2.5);
        let pot = PotentialPair::new(&map, 0.0);
        let (y, x) = (-3.0 + rng.random::<f64>(), 1.0 + 2.0 * rng.random::<f64>());
        let steps = 20_000;
        let h = (x - y) / steps as f64;
        let integral: f64 = (0..steps).map(|i| map.eval(y + (i as f64 + 0.5) * h)).sum::<f64>() * h;
        prop_assert!((pot.u(x) - pot.u(y) - integral).abs() <= 1e-6);
    }

    #[test]
    fn split_halves_are_disjoint_and_exhaustive(seed in 0u64..10_000, n in 2usize..300) {
        let mut rng = stream_rng(seed, 9);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let g = GroupSample::new(0, xs, ys).unwrap();
        let split = split_group(&g, seed);
        prop_assert_eq!(split.regression.len(), n.div_ceil(2));
        let mut all: Vec<usize> = split.regression.iter().chain(&split.maps).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn fair_predictions_compose_and_stay_in_extended_range(seed in 0u64..10_000) {
        let mut rng = stream_rng(seed, 10);
        let omega = omega02();
        let w = weights(&mut rng, 2);
        let bases = (0..2)
            .map(|s| {
                let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>()]).collect();
                let ys = xs.iter().map(|x| 2.0 * x[0] + 0.3 * rng.random::<f64>()).collect();
                fit_base(&GroupSample::new(s, xs, ys).unwrap(), BaseSpec::default(), &omega).unwrap()
            })
            .collect();
        let maps = random_feasible_family(&mut rng, &KnotGrid::equispaced(&omega, 3), &w, LipschitzBound::new(2.0).unwrap(), 0.2).unwrap();
        let f = FairRegressor::new(bases, maps).unwrap();
        for _ in 0..50 {
            let x = [3.0 * rng.random::<f64>() - 1.0];
            for s in 0..2 {
                let fair = f.predict(s, &x);
                prop_assert_eq!(fair.to_bits(), f.maps().eval(s, f.base_predict(s, &x)).to_bits());
                // forward knots are images of Ω under the inverse, so the image of the knot span is Ω itself
                let m = f.maps().forward(s);
                let (lo, hi) = (omega.lo + m.c_inf().min(0.0), omega.hi + m.c_sup().max(0.0));
                prop_assert!(fair >= lo - 1e-12 && fair <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn weighted_distance_is_a_squared_pseudometric(seed in 0u64..10_000) {
        let mut rng = stream_rng(seed, 11);
        let w = weights(&mut rng, 2);
        let pts: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..30).map(|_| vec![rng.random::<f64>()]).collect()).collect();
        let coef: Vec<f64> = points(&mut rng, 12, 4.0);
        let coef = &coef;
        let func = |k: usize| move |s: usize, x: &[f64]| coef[4 * k + 2 * s] * x[0] + coef[4 * k + 2 * s + 1];
        let d = |a: usize, b: usize| weighted_sq_distance(func(a), func(b), &pts, &w).unwrap().value;
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!((d(0, 1) - d(1, 0)).abs() <= 1e-12);
        prop_assert!(d(0, 2).sqrt() <= d(0, 1).sqrt() + d(1, 2).sqrt() + 1e-12);
    }

    #[test]
    fn multiple_correlation_is_minimized_by_the_oracle(seed in 0u64..10_000) {
        let mut rng = stream_rng(seed, 12);
        let w = weights(&mut rng, 2);
        let grid = KnotGrid::equispaced(&omega02(), 2);
        let lip = LipschitzBound::new(2.0).unwrap();
        let oracle = random_feasible_family(&mut rng, &grid, &w, lip, 0.2).unwrap();
        // samples of the populations whose barycenter maps are the oracle family
        let ms: Vec<EmpiricalMeasure> = (0..2)
            .map(|s| EmpiricalMeasure::new((0..4000).map(|_| oracle.inverse(s).eval(0.2 + 1.6 * rng.random::<f64>())).collect()).unwrap())
            .collect();
        let other = random_feasible_family(&mut rng, &grid, &w, lip, 0.2).unwrap();
        let c_oracle = multiple_correlation(&oracle, &ms, &w, 0.0).unwrap().value;
        let c_other = multiple_correlation(&other, &ms, &w, 0.0).unwrap().value;
        prop_assert!(c_oracle <= c_other + 1e-12, "{} > {}", c_oracle, c_other);
        prop_assert_eq!(family_potentials(&oracle, 0.0).len(), 2);
    }
}

#[test]
fn unfairness_vanishes_for_coinciding_groups() {
    let omega = omega02();
    let mut rng = stream_rng(1, 13);
    let xs: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random::<f64>()]).collect();
    let ys = xs.iter().map(|x| 0.5 + x[0]).collect();
    let base = fit_base(&GroupSample::new(0, xs.clone(), ys).unwrap(), BaseSpec::default(), &omega).unwrap();
    let w = Weights::uniform(3).unwrap();
    let maps = CongruentFamily::identity(KnotGrid::equispaced(&omega, 2), w.clone(), LipschitzBound::new(2.0).unwrap());
    let f = FairRegressor::new(vec![base.clone(), base.clone(), base], maps).unwrap();
    let r = unfairness(&f, &vec![xs; 3], &w).unwrap();
    assert!(r.upper_bound <= 1e-14, "{}", r.upper_bound);
    assert_eq!(r.pairwise_max_w2, 0.0);
}

#[test]
fn ground_truth_maps_are_congruent_and_equalize_groups() {
    for kind in [ScenarioKind::Translation, ScenarioKind::Gaussian, ScenarioKind::NonlinearMonotone] {
        let spec = ScenarioSpec::by_name(kind, 3);
        let truth = GroundTruth::for_scenario(&spec).unwrap();
        assert!(truth.theta_star.dense_residual(16) <= 1e-9, "{kind:?}");
        let grid = QuantileFunction::midpoint_grid(4096);
        let pushed: Vec<EmpiricalMeasure> = (0..spec.groups())
            .map(|s| {
                EmpiricalMeasure::new(grid.iter().map(|&t| truth.theta_star.eval(s, spec.prediction_quantile(s, t))).collect())
                    .unwrap()
            })
            .collect();
        for a in 0..pushed.len() {
            for b in 0..a {
                assert!(transport_cost(&pushed[a], &pushed[b]) <= 1e-6, "{kind:?}");
            }
        }
        for inv in truth.theta_star.forwards() {
            let l = spec.lipschitz.value();
            assert!(inv.slopes().all(|s| s >= 1.0 / l && s <= l), "{kind:?}");
        }
    }
}
