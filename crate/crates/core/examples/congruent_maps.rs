//! Congruent families: inverse maps on a shared knot grid that average to the identity.

use fairbary::maps::{make_congruent, CongruentFamily, KnotGrid, LipschitzBound};
use fairbary::measures::{DomainInterval, Weights};

fn main() -> fairbary::Result<()> {
    let omega = DomainInterval::new(0.0, 2.0)?;
    let grid = KnotGrid::equispaced(&omega, 3);
    let lip = LipschitzBound::new(2.0)?;
    let w = Weights::new(vec![0.25, 0.75])?;

    // a shift for the first group; the second inverse is forced by congruency
    let shift: Vec<f64> = grid.knots().iter().map(|k| k - 0.3).collect();
    let family: CongruentFamily = make_congruent(&[shift], &grid, &w, lip)?;
    for s in 0..family.len() {
        let inv = family.inverse(s);
        println!("group {s}: inverse values {:?}", inv.values().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        println!("         forward at 1.0 = {:.4}, c_inf {:.3}, c_sup {:.3}", family.eval(s, 1.0), inv.c_inf(), inv.c_sup());
    }
    println!("knot residual  {:.2e}", family.congruency_residual());
    println!("dense residual {:.2e}", family.dense_residual(64));

    let json = serde_json::to_string(&family)?;
    let back: CongruentFamily = serde_json::from_str(&json)?;
    println!("JSON round trip exact: {}", back.inverses() == family.inverses());
    Ok(())
}
