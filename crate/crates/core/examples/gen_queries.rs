//! Synthesizes one batch of committee-disagreement queries for a random
//! population and shows how far input optimization pushed the disagreement.
//!
//! `cargo run --release --example gen_queries [out-stem]`

use neurome::nn::{init_glorot, Activation, MlpParams, MlpSpec};
use neurome::sampling::{
    disagreement_loss, generate_committee_queries, sample_gaussian, CommitteeConfig,
};

fn main() -> neurome::Result<()> {
    let stem = std::env::args().nth(1).unwrap_or_else(|| "queries".into());
    let spec = MlpSpec::new(vec![16, 12, 4], Activation::default())?;
    let committee: Vec<MlpParams> = (0..8).map(|s| init_glorot(&spec, s)).collect();
    let cfg = CommitteeConfig {
        epochs: 50,
        ..CommitteeConfig::default()
    };

    let batch = generate_committee_queries(&committee, 256, &cfg, 42)?;
    for (step, loss) in batch.history.iter().enumerate().step_by(10) {
        println!("step {step:3}: disagreement loss {loss:.5}");
    }

    let outputs = |x: &ndarray::Array2<f32>| -> neurome::Result<Vec<_>> {
        committee
            .iter()
            .map(|p| neurome::forward(p, x.view()))
            .collect()
    };
    let random = sample_gaussian(256, 16, 42).inputs;
    println!(
        "random Gaussian batch:    {:.5}",
        disagreement_loss(&outputs(&random)?)?
    );
    println!(
        "synthesized batch:        {:.5}",
        disagreement_loss(&outputs(&batch.inputs)?)?
    );

    batch.dump(&stem)?;
    println!("wrote {stem}.bin and {stem}.json");
    Ok(())
}
