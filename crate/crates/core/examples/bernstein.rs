//! Monte-Carlo tail frequencies of the empirical multiple correlation against the Bernstein bound.

use fairbary::maps::{KnotGrid, LipschitzBound};
use fairbary::measures::{DomainInterval, Law, Weights};
use fairbary::metrics::{bernstein_check, stream_rng, BernsteinCase};
use fairbary::potentials::family_potentials;

fn main() -> fairbary::Result<()> {
    let omega = DomainInterval::new(0.0, 2.0)?;
    let w = Weights::new(vec![0.4, 0.6])?;
    let grid = KnotGrid::equispaced(&omega, 3);
    let mut rng = stream_rng(5, 0);
    let family = fairbary::estimator::random_feasible_family(&mut rng, &grid, &w, LipschitzBound::new(2.0)?, 0.2)?;
    let pots = family_potentials(&family, 0.0);
    let laws = vec![Law::Uniform { lo: 0.2, hi: 1.2 }, Law::Uniform { lo: 0.6, hi: 1.8 }];

    let t_grid: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64).collect();
    let case = BernsteinCase::measured(&pots, &laws, &w, t_grid, 10_000, 1000.0);
    println!("sigma^2 = {:.4e}, b = {:.4}", case.sigma2, case.b);
    println!("{:>6} {:>10} {:>10} {:>6}", "t", "freq", "bound", "ok");
    for row in bernstein_check(&pots, &laws, &w, &case, 11)? {
        println!("{:>6.3} {:>10.5} {:>10.5} {:>6}", row.t, row.empirical_freq, row.bound, row.holds);
    }
    Ok(())
}
