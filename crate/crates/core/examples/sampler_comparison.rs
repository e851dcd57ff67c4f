//! Reconstructs the same black box with every query sampler at an equal
//! query budget and prints the final alignment error of each.
//!
//! `cargo run --release --example sampler_comparison [outer-iterations]`

use neurome::align::evaluate_against_oracle;
use neurome::nn::{Activation, MlpSpec};
use neurome::optim::OptimizerKind;
use neurome::oracle::{normalize, synth_dataset, train_network, QueryOracle, TrainConfig};
use neurome::reconstruct::{
    reconstruct, PopulationInit, ReconstructConfig, SamplePools, SamplerKind,
};
use neurome::sampling::sample_gaussian;

fn main() -> neurome::Result<()> {
    let outer = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let spec = MlpSpec::new(vec![16, 12, 4], Activation::default())?;
    let data = normalize(&synth_dataset(16, 4, 2000, 7)?)?;
    let expanded = normalize(&synth_dataset(16, 4, 4000, 8)?)?;
    let hidden = train_network(&spec, &data, &TrainConfig::new(OptimizerKind::Adam, 5, 11))?;
    let pools = SamplePools {
        dataset: Some(data.inputs.clone()),
        expanded: Some(expanded.inputs),
    };
    let probes = sample_gaussian(10_000, 16, 5).inputs;

    println!("sampler,queries,status,min_loss,max_eps,max_eps_pct,agreement");
    for kind in SamplerKind::ALL {
        let cfg = ReconstructConfig {
            outer_iterations: outer,
            stop_on_convergence: false,
            ..ReconstructConfig::desk_scale(kind)
        };
        let oracle = QueryOracle::new(hidden.clone());
        let (best, report) = reconstruct(&oracle, &cfg, &PopulationInit::Glorot, &pools, 1)?;
        let eval = evaluate_against_oracle(&oracle, &best, probes.view())?;
        println!(
            "{kind:?},{},{:?},{:.3e},{:.3e},{:.3e},{:.4}",
            report.total_queries,
            report.status,
            report.best_loss,
            eval.max_eps,
            eval.max_eps_pct,
            eval.agreement_rate
        );
    }
    Ok(())
}
