//! Convex potentials of a map, the Young–Fenchel identity and the multiple correlation.

use fairbary::maps::{CongruentFamily, KnotGrid, LipschitzBound, MonotoneMap};
use fairbary::measures::{DomainInterval, EmpiricalMeasure, Weights};
use fairbary::potentials::{base_point, multiple_correlation, PotentialPair};

fn main() -> fairbary::Result<()> {
    let omega = DomainInterval::new(0.0, 2.0)?;
    let grid = KnotGrid::equispaced(&omega, 2);
    let lip = LipschitzBound::new(2.0)?;
    let theta = MonotoneMap::new(grid.clone(), vec![0.1, 0.4, 1.1, 1.5, 2.2], lip)?;
    let pot = PotentialPair::new(&theta, base_point(&omega));

    println!("{:>6} {:>10} {:>10} {:>12}", "x", "u(x)", "theta(x)", "YF residual");
    for x in [0.0, 0.3, 0.9, 1.4, 2.0] {
        let z = pot.theta(x);
        // u(x) + u†(θ(x)) = x θ(x) at the attained supremum
        let yf = pot.u(x) + pot.u_dagger(z) - x * z;
        println!("{x:>6.2} {:>10.5} {:>10.5} {yf:>12.1e}", pot.u(x), z);
    }

    let w = Weights::uniform(2)?;
    let ms = vec![
        EmpiricalMeasure::new((0..200).map(|i| i as f64 / 200.0).collect())?,
        EmpiricalMeasure::new((0..200).map(|i| 0.4 + i as f64 / 200.0).collect())?,
    ];
    let identity = CongruentFamily::identity(grid.clone(), w.clone(), lip);
    let shift = |c: f64| MonotoneMap::new(grid.clone(), grid.knots().iter().map(|k| k - c).collect(), lip);
    let shifted = CongruentFamily::from_inverses(vec![shift(0.2)?, shift(-0.2)?], w.clone())?;
    let c_id = multiple_correlation(&identity, &ms, &w, 0.0)?;
    let c_sh = multiple_correlation(&shifted, &ms, &w, 0.0)?;
    println!("multiple correlation: identity {:.6}, barycenter shifts {:.6}", c_id.value, c_sh.value);
    Ok(())
}
