//! Compares three starting populations when the black box's initial weights
//! are known: plain Glorot draws, one member seeded with the initial weights,
//! and every member seeded with them plus small Gaussian noise.
//!
//! `cargo run --release --example known_init_ablation [noise-std]`

use neurome::align::evaluate_against_oracle;
use neurome::nn::{init_glorot, Activation, MlpSpec};
use neurome::optim::OptimizerKind;
use neurome::oracle::{normalize, synth_dataset, train_network, QueryOracle, TrainConfig};
use neurome::reconstruct::{
    reconstruct, PopulationInit, ReconstructConfig, SamplePools, SamplerKind,
};
use neurome::sampling::sample_gaussian;

fn main() -> neurome::Result<()> {
    let noise_std = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);
    let spec = MlpSpec::new(vec![16, 12, 4], Activation::default())?;
    let data = normalize(&synth_dataset(16, 4, 2000, 7)?)?;
    let training = TrainConfig::new(OptimizerKind::Adam, 5, 11);
    let hidden = train_network(&spec, &data, &training)?;
    let initial = init_glorot(&spec, training.seed);
    let probes = sample_gaussian(10_000, 16, 5).inputs;

    let modes = [
        ("glorot", PopulationInit::Glorot),
        ("seed-one", PopulationInit::SeedOne(initial.clone())),
        (
            "seed-all-noisy",
            PopulationInit::SeedAllNoisy {
                params: initial,
                noise_std,
            },
        ),
    ];
    let cfg = ReconstructConfig::desk_scale(SamplerKind::Committee);
    for (name, init) in modes {
        let oracle = QueryOracle::new(hidden.clone());
        let (best, report) = reconstruct(&oracle, &cfg, &init, &SamplePools::default(), 1)?;
        let eval = evaluate_against_oracle(&oracle, &best, probes.view())?;
        println!(
            "{name:15} {:?} at iteration {:?}, best member {}, max eps {:.3e}",
            report.status, report.converged_at, report.best_member, eval.max_eps
        );
    }
    Ok(())
}
