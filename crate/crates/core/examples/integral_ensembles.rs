//! The integral ensembling model: the network output is the composite
//! `f(x, P(a)) = g(x, P(0)) + (g(x, P(a + eps)) - g(x, P(a))) / eps`, so the
//! ensemble over every `a` in [0, 1] collapses to the single forward pass
//! `g(x, P(1))`. The first table demonstrates the telescoping identity; the
//! second compares the closed-form ensemble against standard training
//! across label-noise levels (swap in IDX data to rerun the comparison at
//! image scale).
//!
//! Run with: `cargo run --release --example integral_ensembles`

use nn_subspaces::data::{inject_label_noise, synth_blobs_split};
use nn_subspaces::evaluation::accuracy;
use nn_subspaces::experiments::{integral_train, integral_training_form, IntegralModelState};
use nn_subspaces::net::{self, NetworkSpec};
use nn_subspaces::rng;
use nn_subspaces::subspace::{Subspace, SubspaceKind};
use nn_subspaces::trainer::{train_run, TrainConfig};

fn main() -> nn_subspaces::Result<()> {
    // telescoping: mean of f over an alpha grid with eps = 1/n equals g(P(1))
    let spec = NetworkSpec::mlp(2, &[8], 3, false)?;
    let mut init_rng = rng::stream(1, "init");
    let line = Subspace::init(SubspaceKind::Line, &spec, &mut init_rng, false)?;
    let n = 256;
    let state = IntegralModelState {
        line,
        epsilon: 1.0 / n as f64,
    };
    let x = [0.3, 0.7];
    let stats = Default::default();
    let mut mean = vec![0.0f64; 3];
    for i in 0..n {
        let f = integral_training_form(&spec, &state, &stats, &x, i as f64 / n as f64)?;
        for (m, v) in mean.iter_mut().zip(&f) {
            *m += v / n as f64;
        }
    }
    let theta1 = state.line.eval_point_unclamped(1.0)?;
    let g1 = net::forward(&spec, &theta1, &stats, &x, nn_subspaces::Mode::Eval)?.logits;
    println!("telescoping check (eps = 1/{n}):");
    println!("  mean over grid  {mean:?}");
    println!("  g(x, P(1))      {g1:?}\n");

    // closed-form ensemble vs standard training under label noise
    println!(
        "{:>8} {:>12} {:>12} {:>10}",
        "noise", "standard", "integral", "margin"
    );
    for noise in [0.0, 0.25, 0.5] {
        let mut std_mean = 0.0;
        let mut int_mean = 0.0;
        let seeds = [1u64, 2, 3];
        for &seed in &seeds {
            let (train, test) = synth_blobs_split(500, 256, 2048, 2, 4, 0.06)?;
            let train = if noise > 0.0 {
                inject_label_noise(&train, noise, 99)?
            } else {
                train
            };
            let spec = NetworkSpec::mlp(2, &[64], 4, false)?;
            let config = TrainConfig {
                epochs: 60,
                batch_size: 32,
                warmup_epochs: 5,
                beta: 0.0,
                seed,
                ..TrainConfig::default()
            };
            let (single, _) = train_run(&spec, &train, SubspaceKind::Simplex { m: 1 }, &config)?;
            let p = &single.endpoints()[0];
            let s = net::recompute_bn_stats(&spec, p, &train, 256)?;
            std_mean += accuracy(&spec, p, &s, &test)? / seeds.len() as f64;

            let state = integral_train(&spec, &train, &config, 0.1)?;
            let theta1 = state.line.eval_point_unclamped(1.0)?;
            let s1 = net::recompute_bn_stats(&spec, &theta1, &train, 256)?;
            int_mean += accuracy(&spec, &theta1, &s1, &test)? / seeds.len() as f64;
        }
        println!(
            "{:>8.2} {:>12.4} {:>12.4} {:>+10.4}",
            noise,
            std_mean,
            int_mean,
            int_mean - std_mean
        );
    }
    Ok(())
}
