//! Instability analysis: two runs share the first `k` epochs of their
//! trajectory, then fork with different data orders. For small `k` the
//! linear path between the forks dips (a barrier); once enough of the
//! trajectory is shared the path flattens and the weight average works.
//! Random mixtures at global, layerwise, and per-weight granularity probe
//! the region between the forks.
//!
//! Run with: `cargo run --release --example instability_analysis`

use nn_subspaces::data::synth_blobs_split;
use nn_subspaces::experiments::{instability_run, ForkMode, InstabilitySetup};
use nn_subspaces::net::NetworkSpec;
use nn_subspaces::trainer::TrainConfig;

fn main() -> nn_subspaces::Result<()> {
    let (train, test) = synth_blobs_split(300, 1000, 2000, 4, 10, 0.08)?;
    let spec = NetworkSpec::mlp(4, &[32], 10, false)?;
    let config = TrainConfig {
        epochs: 30,
        batch_size: 50,
        warmup_epochs: 3,
        beta: 0.0,
        seed: 9,
        ..TrainConfig::default()
    };

    println!(
        "{:>14} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "mode", "endpoints", "path min", "wt avg", "ensemble", "mix glob", "mix perwt"
    );
    let runs = [
        (ForkMode::DifferentInit, 0usize),
        (ForkMode::SharedInit, 0),
        (ForkMode::SharedInit, 5),
        (ForkMode::SharedInit, 15),
        (ForkMode::SharedInit, 30),
    ];
    for (mode, k) in runs {
        let setup = InstabilitySetup {
            k,
            fork_seeds: vec![11, 22],
            mode,
            alpha_points: 11,
            mixture_samples: 8,
        };
        let result = instability_run(&spec, &train, &test, &setup, &config)?;
        let endpoint_mean: f64 = result.endpoint_accuracies.iter().sum::<f64>()
            / result.endpoint_accuracies.len() as f64;
        let path_min = result
            .path
            .iter()
            .map(|(_, a)| *a)
            .fold(f64::INFINITY, f64::min);
        let mixtures = result.mixtures.as_ref().unwrap();
        let label = match mode {
            ForkMode::DifferentInit => "diff init".to_string(),
            ForkMode::SharedInit => format!("shared k={k}"),
        };
        println!(
            "{:>14} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            label,
            endpoint_mean,
            path_min,
            result.weight_average_accuracy,
            result.output_ensemble_accuracy,
            mixtures.global,
            mixtures.per_weight
        );
    }

    // the same harness generalizes past two forks
    let setup = InstabilitySetup {
        k: 15,
        fork_seeds: vec![11, 22, 33, 44, 55],
        mode: ForkMode::SharedInit,
        alpha_points: 11,
        mixture_samples: 0,
    };
    let result = instability_run(&spec, &train, &test, &setup, &config)?;
    println!(
        "\n5 forks at k=15: weight average {:.4}, output ensemble {:.4}",
        result.weight_average_accuracy, result.output_ensemble_accuracy
    );
    Ok(())
}
