//! Small rate sweep on the translation scenario; writes rates, medians and an SVG plot.

use fairbary::cli::{cmd_sweep, RunConfig, ScenarioChoice};
use fairbary::synth::ScenarioKind;

fn main() -> fairbary::Result<()> {
    let out = std::env::temp_dir().join("fairbary-example-sweep");
    let cfg = RunConfig {
        seed: Some(2024),
        out: Some(out.clone()),
        scenario: Some(ScenarioChoice::Named(ScenarioKind::Translation)),
        n_values: Some(vec![256, 1024, 4096]),
        replicates: Some(4),
        ..RunConfig::default()
    };
    let summary = cmd_sweep(&cfg)?;
    println!("{:>6} {:>14} {:>14} {:>14}", "n", "map error", "truth error", "unfairness");
    for m in &summary.medians {
        println!("{:>6} {:>14.4e} {:>14.4e} {:>14.4e}", m.n, m.map_error, m.truth_error, m.unfairness_ub);
    }
    println!("fitted slope {:?}, theoretical {:.3}", summary.fitted_slope, summary.theoretical_slope);
    println!("outputs in {}", out.display());
    Ok(())
}
