//! Quantile-averaging barycenter of two samples and the transport maps onto it.

use fairbary::measures::{barycenter_oracle, oracle_map, transport_cost, w2, EmpiricalMeasure, Weights};
use fairbary::metrics::stream_rng;
use rand::Rng;

fn main() -> fairbary::Result<()> {
    let mut rng = stream_rng(1, 0);
    let a = EmpiricalMeasure::new((0..2000).map(|_| rng.random::<f64>()).collect())?;
    let b = EmpiricalMeasure::new((0..3000).map(|_| 1.0 + 2.0 * rng.random::<f64>().powi(2)).collect())?;
    let w = Weights::new(vec![0.3, 0.7])?;

    println!("half-quadratic cost a->b: {:.5}", transport_cost(&a, &b));
    println!("W2(a, b):                 {:.5}", w2(&a, &b));

    let bary = barycenter_oracle(&[a.clone(), b.clone()], &w)?;
    let target = bary.to_measure()?;
    for (name, m) in [("a", &a), ("b", &b)] {
        let theta = oracle_map(m, &bary)?;
        let pushed = m.pushforward(|z| theta.eval(z))?;
        println!(
            "group {name}: median {:.4} -> {:.4}, residual cost to barycenter {:.2e}",
            m.quantile(0.5)?,
            pushed.quantile(0.5)?,
            transport_cost(&pushed, &target)
        );
    }
    println!("barycenter median {:.4}", bary.eval(0.5));
    Ok(())
}
