//! Evaluates the network over the two-dimensional plane spanned by the
//! three parameter sets of a trained Bezier curve (the first endpoint at
//! the origin) and renders the test-error field as an ASCII heat map with
//! the projected anchors marked.
//!
//! Run with: `cargo run --release --example plane_visualization`

use nn_subspaces::data::synth_blobs_split;
use nn_subspaces::evaluation::plane_grid;
use nn_subspaces::net::NetworkSpec;
use nn_subspaces::subspace::SubspaceKind;
use nn_subspaces::trainer::{train_run, TrainConfig};

fn main() -> nn_subspaces::Result<()> {
    let (train, test) = synth_blobs_split(7, 512, 1024, 2, 3, 0.12)?;
    let spec = NetworkSpec::mlp(2, &[24], 3, true)?;
    let config = TrainConfig {
        epochs: 40,
        batch_size: 64,
        warmup_epochs: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    let (bezier, _) = train_run(&spec, &train, SubspaceKind::Bezier1, &config)?;

    let endpoints = bezier.endpoints();
    let grid = plane_grid(
        &spec,
        &endpoints[0],
        &endpoints[1],
        &endpoints[2],
        &train,
        &test,
        config.loss,
        25,
        0.2,
    )?;

    // error quantized into shade bands, anchors overlaid
    let shades = [' ', '.', ':', '+', '*', '#', '@'];
    let lo = grid.error.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.error.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nx = grid.xs.len();
    println!("test error over the plane (rows top-down = decreasing y)");
    println!("low {lo:.3} '{}' ... high {hi:.3} '{}'", shades[0], shades[6]);
    for (yi, &y) in grid.ys.iter().enumerate().rev() {
        let mut row = String::new();
        for (xi, &x) in grid.xs.iter().enumerate() {
            let e = grid.error[yi * nx + xi];
            let t = if hi > lo { (e - lo) / (hi - lo) } else { 0.0 };
            let mut ch = shades[((t * 6.0).round() as usize).min(6)];
            for (name, p) in ['1', '2', '3'].iter().zip(&grid.projected) {
                let dx = grid.xs[1] - grid.xs[0];
                let dy = grid.ys[1] - grid.ys[0];
                if (x - p[0]).abs() <= dx / 2.0 && (y - p[1]).abs() <= dy / 2.0 {
                    ch = *name;
                }
            }
            row.push(ch);
            row.push(' ');
        }
        println!("{row}");
    }
    println!("anchors projected: w1 {:?}, w2 {:?}, w3 {:?}", grid.projected[0], grid.projected[1], grid.projected[2]);
    Ok(())
}
