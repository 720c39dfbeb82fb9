//! Relative accuracy change under input corruption: how much does each
//! model lose, relative to its own clean accuracy, when Gaussian noise is
//! added to the test inputs? Compares the midpoint of a trained line, its
//! endpoints, and standard training across severities.
//!
//! Run with: `cargo run --release --example corruption_robustness`

use nn_subspaces::data::{corrupt_gaussian, synth_blobs_split, Dataset};
use nn_subspaces::evaluation::{accuracy, relative_change};
use nn_subspaces::net::{recompute_bn_stats, NetworkSpec};
use nn_subspaces::params::ParamVector;
use nn_subspaces::subspace::SubspaceKind;
use nn_subspaces::trainer::{train_run, TrainConfig};

fn eval(
    spec: &NetworkSpec,
    params: &ParamVector,
    train: &Dataset,
    data: &Dataset,
) -> nn_subspaces::Result<f64> {
    let stats = recompute_bn_stats(spec, params, train, 256)?;
    accuracy(spec, params, &stats, data)
}

fn main() -> nn_subspaces::Result<()> {
    let (train, test) = synth_blobs_split(11, 1024, 4096, 3, 3, 0.12)?;
    let spec = NetworkSpec::mlp(3, &[32], 3, true)?;
    let config = TrainConfig {
        epochs: 40,
        batch_size: 64,
        warmup_epochs: 5,
        seed: 4,
        ..TrainConfig::default()
    };
    let (line, _) = train_run(&spec, &train, SubspaceKind::Line, &config)?;
    let (standard, _) = train_run(&spec, &train, SubspaceKind::Simplex { m: 1 }, &config)?;

    let midpoint = line.eval_point(&line.center_coord())?;
    let models: Vec<(&str, &ParamVector)> = vec![
        ("midpoint", &midpoint),
        ("endpoint 0", &line.endpoints()[0]),
        ("endpoint 1", &line.endpoints()[1]),
        ("standard", &standard.endpoints()[0]),
    ];

    let severities = [0.05, 0.1, 0.2];
    print!("{:>12} {:>8}", "model", "clean");
    for s in severities {
        print!(" {:>16}", format!("rel change @{s}"));
    }
    println!();
    for (name, params) in models {
        let clean = eval(&spec, params, &train, &test)?;
        print!("{name:>12} {clean:>8.4}");
        for severity in severities {
            let corrupted = corrupt_gaussian(&test, severity, 123)?;
            let acc = eval(&spec, params, &train, &corrupted)?;
            print!(" {:>16.4}", relative_change(clean, acc)?);
        }
        println!();
    }
    Ok(())
}
