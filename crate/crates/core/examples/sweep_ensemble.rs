//! Accuracy along a trained line and the output-space ensemble of mirrored
//! positions: each grid point is ensembled with its reflection about the
//! center, so the ensemble column is symmetric and meets the single-model
//! curve at 0.5.
//!
//! Run with: `cargo run --release --example sweep_ensemble`

use nn_subspaces::data::synth_blobs_split;
use nn_subspaces::evaluation::sweep_with_ensembles;
use nn_subspaces::net::NetworkSpec;
use nn_subspaces::subspace::SubspaceKind;
use nn_subspaces::trainer::{train_run, TrainConfig};

fn main() -> nn_subspaces::Result<()> {
    let (train, test) = synth_blobs_split(101, 1024, 4096, 3, 3, 0.14)?;
    let spec = NetworkSpec::mlp(3, &[32], 3, true)?;

    for (label, layerwise) in [("global", false), ("layerwise", true)] {
        let config = TrainConfig {
            epochs: 60,
            batch_size: 64,
            warmup_epochs: 5,
            layerwise,
            seed: 1,
            ..TrainConfig::default()
        };
        let (line, _) = train_run(&spec, &train, SubspaceKind::Line, &config)?;

        let alphas: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let rows = sweep_with_ensembles(&spec, &line, &alphas, &train, &test, config.loss)?;

        println!("{label} coordinate sampling");
        println!("{:>8} {:>10} {:>10} {:>10}", "alpha", "accuracy", "loss", "ensemble");
        for row in &rows {
            println!(
                "{:>8.2} {:>10.4} {:>10.4} {:>10.4}",
                row.alpha, row.accuracy, row.loss, row.ensemble_accuracy
            );
        }
        let endpoint_mean = (rows[0].accuracy + rows[20].accuracy) / 2.0;
        let center = rows[10].accuracy;
        println!(
            "endpoint mean {endpoint_mean:.4}, center {center:.4}, ensemble at the ends {:.4}\n",
            rows[0].ensemble_accuracy
        );
    }
    Ok(())
}
