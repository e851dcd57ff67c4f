//! Loads an IDX image/label pair (the MNIST file format), normalizes it and
//! trains a classifier on it. Without arguments a small synthetic IDX pair is
//! written to a temporary directory first.
//!
//! `cargo run --release --example idx_dataset [images.idx labels.idx]`

use std::path::PathBuf;

use neurome::nn::{Activation, MlpSpec};
use neurome::optim::OptimizerKind;
use neurome::oracle::{accuracy, load_idx, normalize, synth_dataset, train_network, TrainConfig};

/// Writes `dataset` as unsigned-byte IDX files, quantizing inputs to 0..=255.
fn write_idx(dir: &std::path::Path) -> std::io::Result<(PathBuf, PathBuf)> {
    let data = synth_dataset(64, 10, 1000, 3).expect("valid synthetic shape");
    let (lo, hi) = data
        .inputs
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let mut images = vec![0, 0, 0x08, 3];
    for d in [data.len() as u32, 8, 8] {
        images.extend(d.to_be_bytes());
    }
    images.extend(
        data.inputs
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8),
    );
    let mut labels = vec![0, 0, 0x08, 1];
    labels.extend((data.len() as u32).to_be_bytes());
    labels.extend(
        data.labels
            .as_ref()
            .expect("labelled")
            .iter()
            .map(|l| *l as u8),
    );
    let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
    std::fs::write(&ip, images)?;
    std::fs::write(&lp, labels)?;
    Ok((ip, lp))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, labels) = if args.len() == 2 {
        (PathBuf::from(&args[0]), PathBuf::from(&args[1]))
    } else {
        write_idx(&std::env::temp_dir())?
    };
    let raw = load_idx(&images, Some(labels.as_path()))?;
    let data = normalize(&raw)?;
    let classes = data
        .labels
        .as_ref()
        .map_or(10, |l| l.iter().max().map_or(1, |m| m + 1));
    println!(
        "loaded {} samples of dimension {}",
        data.len(),
        data.input_dim()
    );

    let spec = MlpSpec::new(vec![data.input_dim(), 32, classes], Activation::default())?;
    let params = train_network(&spec, &data, &TrainConfig::new(OptimizerKind::Adam, 3, 1))?;
    println!(
        "train accuracy after 3 epochs: {:.3}",
        accuracy(&params, &data)?
    );
    Ok(())
}
