//! Full pipeline on a synthetic scenario: base regressors, fitted maps, unfairness and accuracy.

use fairbary::metrics::{unfairness, unfairness_of_measures, EvalSpec};
use fairbary::measures::EmpiricalMeasure;
use fairbary::regression::{averaged_reduction, fit_fair, Bundle, FairConfig};
use fairbary::synth::{base_error, dataset, generate, truth_error, ScenarioSpec};

fn main() -> fairbary::Result<()> {
    let spec = ScenarioSpec::nonlinear(7);
    let (samples, truth) = generate(&spec, &[6000, 6000])?;
    let cfg = FairConfig::new(spec.omega, 7);
    let fit = fit_fair(&samples, &spec.weights, &cfg)?;
    let f = &fit.regressor;
    println!("sieve level {}, solver converged {}", fit.report.level, fit.report.converged);

    let eval = EvalSpec::quadrature(spec.groups());
    let feats = eval.feature_points(&vec![spec.x_law.clone(); spec.groups()])?;
    let fair = unfairness(f, &feats, &spec.weights)?;
    let base_out = (0..spec.groups())
        .map(|s| EmpiricalMeasure::new(feats[s].iter().map(|x| f.base_predict(s, x)).collect()))
        .collect::<fairbary::Result<Vec<_>>>()?;
    let base = unfairness_of_measures(&base_out, &spec.weights)?;
    println!("unfairness bound: base {:.4e} -> fair {:.4e} ({})", base.upper_bound, fair.upper_bound, fair.convention.label());
    println!("error to the fair Bayes regressor: {:.3e}", truth_error(f, &truth, &eval)?.value);
    println!("base error to the Bayes regressor: {:.3e}", base_error(f, &truth, &eval)?.value);

    let red = averaged_reduction(f, &spec.weights);
    println!("averaged reduction at x = 0.7: {:.4}", red(&[0.7]));

    let dir = std::env::temp_dir().join("fairbary-example-bundle");
    let data = dataset(samples);
    Bundle::from_fit(&fit, &data, &spec.weights, &cfg).save(&dir)?;
    let loaded = Bundle::load(&dir)?;
    println!("bundle saved to {} ({} groups: {:?})", dir.display(), loaded.regressor.groups(), loaded.manifest.labels);
    Ok(())
}
