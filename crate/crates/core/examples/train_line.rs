//! Trains a line of networks twice, with and without the orthogonality
//! regularizer, and prints how the endpoint geometry (L2 distance and
//! squared cosine similarity) evolves over training.
//!
//! The regularized line keeps its endpoints nearly orthogonal; without the
//! regularizer the endpoints drift toward each other as the line settles
//! into one minimum.
//!
//! Run with: `cargo run --release --example train_line`

use nn_subspaces::data::synth_blobs_split;
use nn_subspaces::net::NetworkSpec;
use nn_subspaces::subspace::SubspaceKind;
use nn_subspaces::trainer::{train_run, TrainConfig};

fn main() -> nn_subspaces::Result<()> {
    let (train, _test) = synth_blobs_split(42, 512, 512, 2, 3, 0.12)?;
    let spec = NetworkSpec::mlp(2, &[32], 3, true)?;

    for beta in [1.0, 0.0] {
        let config = TrainConfig {
            epochs: 40,
            batch_size: 64,
            warmup_epochs: 5,
            beta,
            seed: 1,
            ..TrainConfig::default()
        };
        let (subspace, log) = train_run(&spec, &train, SubspaceKind::Line, &config)?;

        println!("beta = {beta}");
        println!("{:>6} {:>10} {:>12} {:>10}", "epoch", "loss", "l2", "cos2");
        for record in log.epochs.iter().step_by(5) {
            let g = record.geometry.as_ref().unwrap();
            println!(
                "{:>6} {:>10.4} {:>12.4} {:>10.6}",
                record.epoch, record.train_loss, g.pairs[0].l2, g.pairs[0].cos2
            );
        }
        let g = subspace.geometry_stats()?;
        println!(
            "final: l2 {:.4}, cos2 {:.6}\n",
            g.pairs[0].l2, g.pairs[0].cos2
        );
    }
    Ok(())
}
