//! Multi-sample training and feature-similarity regularization: the batch
//! is split into `s` groups with independent coordinates, and an optional
//! term `lambda * |a_j - a_k| * cos^2(features_j, features_k)` pushes models
//! from distant parts of the line toward orthogonal features.
//!
//! Run with: `cargo run --release --example multi_sample_feature_reg`

use nn_subspaces::data::synth_blobs_split;
use nn_subspaces::evaluation::sweep_with_ensembles;
use nn_subspaces::net::NetworkSpec;
use nn_subspaces::subspace::SubspaceKind;
use nn_subspaces::trainer::{train_run, TrainConfig};

fn main() -> nn_subspaces::Result<()> {
    let (train, test) = synth_blobs_split(101, 1024, 4096, 3, 3, 0.14)?;
    let spec = NetworkSpec::mlp(3, &[32], 3, true)?;

    println!(
        "{:>10} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "samples", "lambda", "acc @0", "acc @.5", "acc @1", "ens @0"
    );
    for (samples, lambda) in [(1usize, 0.0), (2, 0.0), (4, 0.0), (4, 0.5), (4, 1.0)] {
        let config = TrainConfig {
            epochs: 60,
            batch_size: 64,
            warmup_epochs: 5,
            samples,
            lambda,
            seed: 1,
            ..TrainConfig::default()
        };
        let (line, log) = train_run(&spec, &train, SubspaceKind::Line, &config)?;
        let rows = sweep_with_ensembles(
            &spec,
            &line,
            &[0.0, 0.5, 1.0],
            &train,
            &test,
            config.loss,
        )?;
        println!(
            "{:>10} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            samples, lambda, rows[0].accuracy, rows[1].accuracy, rows[2].accuracy,
            rows[0].ensemble_accuracy
        );
        if lambda > 0.0 {
            let last = log.epochs.last().unwrap();
            println!("{:>19} feature term at the last epoch: {:.6}", "", last.feature_value);
        }
    }
    Ok(())
}
