//! Reconstructs a trained 16x12x4 LeakyReLU black box from queries alone,
//! using committee-disagreement sampling, then aligns the best surrogate onto
//! the hidden weights and reports the parameter error.
//!
//! `cargo run --release --example reconstruct_committee [seed]`

use std::time::Instant;

use neurome::align::evaluate_against_oracle;
use neurome::nn::{Activation, MlpSpec};
use neurome::optim::OptimizerKind;
use neurome::oracle::{normalize, synth_dataset, train_blackbox, TrainConfig};
use neurome::reconstruct::{
    reconstruct, PopulationInit, ReconstructConfig, SamplePools, SamplerKind,
};
use neurome::sampling::sample_gaussian;

fn main() -> neurome::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let spec = MlpSpec::new(vec![16, 12, 4], Activation::default())?;
    let data = normalize(&synth_dataset(16, 4, 2000, 7)?)?;
    let oracle = train_blackbox(&spec, &data, &TrainConfig::new(OptimizerKind::Adam, 5, 11))?;

    let cfg = ReconstructConfig::desk_scale(SamplerKind::Committee);
    let start = Instant::now();
    let (best, report) = reconstruct(
        &oracle,
        &cfg,
        &PopulationInit::Glorot,
        &SamplePools::default(),
        seed,
    )?;
    for it in &report.iterations {
        println!(
            "iter {:3}  queries {:6}  min loss {:.3e}  mean loss {:.3e}  lr {:.0e}  {:?}",
            it.iteration, it.query_count, it.min_loss, it.mean_loss, it.lr, it.status
        );
    }

    let probes = sample_gaussian(10_000, spec.input_dim(), seed + 1).inputs;
    let eval = evaluate_against_oracle(&oracle, &best, probes.view())?;
    println!(
        "{:?} in {:.1}s after {} queries: max eps {:.3e} ({:.4}%), argmax agreement {:.4}",
        report.status,
        start.elapsed().as_secs_f64(),
        oracle.query_count(),
        eval.max_eps,
        eval.max_eps_pct,
        eval.agreement_rate
    );
    Ok(())
}
