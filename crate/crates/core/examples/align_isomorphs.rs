//! Hides a network behind random permutations, positive rescalings and
//! polarity flips, then recovers it with canonical forms and greedy alignment.
//!
//! `cargo run --release --example align_isomorphs`

use neurome::align::{
    apply_all, canonical_distance, canonicalize, greedy_align_detailed, IsoTransform,
};
use neurome::nn::{forward, init_glorot, Activation, MlpSpec};
use neurome::sampling::sample_gaussian;

fn main() -> neurome::Result<()> {
    for act in [Activation::default(), Activation::Tanh] {
        let spec = MlpSpec::new(vec![6, 5, 4, 3], act)?;
        let reference = init_glorot(&spec, 3);

        let mut transforms = vec![
            IsoTransform::Permute {
                layer: 0,
                permutation: vec![4, 2, 0, 1, 3],
            },
            IsoTransform::Permute {
                layer: 1,
                permutation: vec![3, 1, 0, 2],
            },
        ];
        if act.is_piecewise_linear() {
            transforms.push(IsoTransform::Scale {
                layer: 0,
                neuron: 1,
                factor: 2.5,
            });
            transforms.push(IsoTransform::Scale {
                layer: 1,
                neuron: 3,
                factor: 0.4,
            });
        }
        if act.is_odd() {
            transforms.push(IsoTransform::Polarity {
                layer: 0,
                neuron: 2,
            });
            transforms.push(IsoTransform::Polarity {
                layer: 1,
                neuron: 0,
            });
        }
        let disguised = apply_all(&reference, &transforms)?;

        let x = sample_gaussian(1000, 6, 1).inputs;
        let output_gap = (&forward(&disguised, x.view())? - &forward(&reference, x.view())?)
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()));
        let raw_gap = disguised.max_abs_diff(&reference)?;
        let canonical_gap = canonicalize(&disguised)?.max_abs_diff(&canonicalize(&reference)?)?;
        let alignment = greedy_align_detailed(&disguised, &reference)?;

        println!("{act:?}");
        println!("  raw parameter gap        {raw_gap:.3e}");
        println!("  output gap               {output_gap:.3e}");
        println!("  canonical-form gap       {canonical_gap:.3e}");
        println!(
            "  canonical distance       {:.3e}",
            canonical_distance(&disguised, &reference)?
        );
        println!(
            "  greedy-aligned gap       {:.3e}",
            alignment.aligned.max_abs_diff(&reference)?
        );
        println!("  recovered permutations   {:?}", alignment.permutations);
    }
    Ok(())
}
