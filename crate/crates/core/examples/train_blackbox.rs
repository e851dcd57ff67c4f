//! Trains a small classifier on synthetic clustered data with each optimizer
//! and saves the Adam-trained one as an NRM1 file.
//!
//! `cargo run --release --example train_blackbox [out.nrm1]`

use neurome::nn::{Activation, MlpSpec};
use neurome::optim::OptimizerKind;
use neurome::oracle::{accuracy, normalize, synth_dataset, train_network, TrainConfig};
use neurome::persist::save_nrm1;

fn main() -> neurome::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "blackbox.nrm1".into());
    let spec = MlpSpec::new(vec![16, 12, 4], Activation::default())?;
    let data = normalize(&synth_dataset(16, 4, 2000, 7)?)?;

    for kind in OptimizerKind::ALL {
        let cfg = TrainConfig::new(kind, 5, 11);
        let params = train_network(&spec, &data, &cfg)?;
        println!(
            "{kind:?}: lr {:.0e}, train accuracy {:.3}",
            kind.default_lr(),
            accuracy(&params, &data)?
        );
        if kind == OptimizerKind::Adam {
            save_nrm1(&params, &out)?;
        }
    }
    println!("saved the Adam network to {out}");
    Ok(())
}
