//! Trains simplexes with a growing number of endpoints under label noise
//! and compares the center of the simplex (a weight-space ensemble) with
//! its endpoints and with standard training — accuracy, calibration (ECE),
//! and the random output-space ensemble drawn from the simplex.
//!
//! Run with: `cargo run --release --example simplex_midpoint`

use nn_subspaces::data::{inject_label_noise, synth_blobs_split};
use nn_subspaces::evaluation::{accuracy, dataset_probs, ece, random_simplex_ensemble};
use nn_subspaces::net::{recompute_bn_stats, NetworkSpec};
use nn_subspaces::rng;
use nn_subspaces::subspace::{Coord, SampleCoord, SubspaceKind};
use nn_subspaces::trainer::{train_run, TrainConfig};

fn main() -> nn_subspaces::Result<()> {
    let noise = 0.25;
    let (clean_train, test) = synth_blobs_split(201, 512, 2048, 2, 3, 0.12)?;
    let train = inject_label_noise(&clean_train, noise, 201)?;
    let spec = NetworkSpec::mlp(2, &[32], 3, true)?;

    println!("label noise {noise}; test accuracy / ECE");
    println!(
        "{:>12} {:>10} {:>10} {:>10} {:>12}",
        "subspace", "center", "endpoints", "ece", "rand ens"
    );
    for m in [1usize, 2, 4, 6] {
        let config = TrainConfig {
            epochs: 40,
            batch_size: 64,
            warmup_epochs: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let (simplex, _) = train_run(&spec, &train, SubspaceKind::Simplex { m }, &config)?;

        let center = simplex.eval_point(&simplex.center_coord())?;
        let stats = recompute_bn_stats(&spec, &center, &train, 256)?;
        let center_acc = accuracy(&spec, &center, &stats, &test)?;
        let probs = dataset_probs(&spec, &center, &stats, &test)?;
        let center_ece = ece(&probs, test.labels(), 3, 15)?;

        let mut endpoint_mean = 0.0;
        for i in 0..m {
            let mut w = vec![0.0; m];
            w[i] = 1.0;
            let p = simplex.eval_point(&SampleCoord::Global(Coord::Weights(w)))?;
            let s = recompute_bn_stats(&spec, &p, &train, 256)?;
            endpoint_mean += accuracy(&spec, &p, &s, &test)? / m as f64;
        }

        let rand_ens = if m >= 2 {
            let mut ens_rng = rng::stream(3, "ensemble");
            random_simplex_ensemble(&spec, &simplex, &train, &test, m, &mut ens_rng)?
        } else {
            center_acc
        };

        println!(
            "{:>12} {:>10.4} {:>10.4} {:>10.4} {:>12.4}",
            format!("simplex({m})"),
            center_acc,
            endpoint_mean,
            center_ece,
            rand_ens
        );
    }
    Ok(())
}
