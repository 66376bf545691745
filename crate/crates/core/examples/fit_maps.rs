//! Sieved estimation of barycenter maps from two samples, compared with the quantile oracle.

use fairbary::estimator::{fit_maps, map_error, select_level, SieveSpec, SolverConfig, StepRule};
use fairbary::maps::LipschitzBound;
use fairbary::measures::{oracle_family, DomainInterval, EmpiricalMeasure, Weights, DEFAULT_ORACLE_GRID};
use fairbary::metrics::stream_rng;
use rand::Rng;

fn main() -> fairbary::Result<()> {
    let omega = DomainInterval::new(0.0, 2.0)?;
    let mut rng = stream_rng(3, 0);
    let ms = vec![
        EmpiricalMeasure::new((0..5000).map(|_| 0.3 + rng.random::<f64>()).collect())?,
        EmpiricalMeasure::new((0..5000).map(|_| 0.2 + 1.5 * rng.random::<f64>().sqrt()).collect())?,
    ];
    let w = Weights::uniform(2)?;
    let oracle = oracle_family(&ms, &w, DEFAULT_ORACLE_GRID)?;
    println!("sieve level chosen from the sample size: {}", select_level(&ms, &w, 2.0, 1.0)?);

    for (rule, scale) in [(StepRule::Accelerated, 1.0), (StepRule::Constant, 1.0), (StepRule::Constant, 0.3), (StepRule::InverseSqrt, 1.0)] {
        let spec = SieveSpec::for_sample(&omega, &ms, &w, LipschitzBound::new(3.0)?, 2.0, 1.0)?;
        let cfg = SolverConfig { step_rule: rule, step_scale: scale, ..SolverConfig::default() };
        let rep = fit_maps(&ms, &w, &spec, &cfg)?;
        println!(
            "{rule:?} (step {scale}): objective {:.6}, {} iterations, converged {}, map error vs oracle {:.2e}, residual {:.1e}",
            rep.objective,
            rep.iterations_used,
            rep.converged,
            map_error(&rep.family, &oracle, &ms, &w),
            rep.congruency_residual
        );
    }
    Ok(())
}
