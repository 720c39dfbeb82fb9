//! Appendix-grade procedures: instability analysis with a shared trajectory
//! prefix, random weight mixtures at three granularities, the integral
//! ensembling model, and the analytic convex-case oracle.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::evaluation;
use crate::loss::{self, LossKind};
use crate::net::{self, NetworkSpec};
use crate::params::ParamVector;
use crate::rng;
use crate::subspace::{Subspace, SubspaceKind};
use crate::trainer::{OptimizerState, Schedule, TrainConfig, Trainer, TrainState};
use crate::{Error, Result};

const STATS_BATCH: usize = 256;

/// How instability forks branch: sharing the prefix initialization and
/// diverging by data order only, or starting from independent
/// initializations (which requires `k = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForkMode {
    SharedInit,
    DifferentInit,
}

#[derive(Debug, Clone)]
pub struct InstabilitySetup {
    /// Epochs of shared trajectory before forking.
    pub k: usize,
    /// One data-order seed per fork (also the init seed under
    /// `DifferentInit`). At least two.
    pub fork_seeds: Vec<u64>,
    pub mode: ForkMode,
    /// Points on the linear path between the first two forks, endpoints
    /// included.
    pub alpha_points: usize,
    /// Random-mixture draws per granularity; 0 skips mixtures.
    pub mixture_samples: usize,
}

impl Default for InstabilitySetup {
    fn default() -> Self {
        InstabilitySetup {
            k: 0,
            fork_seeds: vec![1, 2],
            mode: ForkMode::SharedInit,
            alpha_points: 21,
            mixture_samples: 8,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MixtureAccuracies {
    pub global: f64,
    pub layerwise: f64,
    pub per_weight: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct InstabilityResult {
    pub k: usize,
    pub num_models: usize,
    /// Accuracy along the linear path between the first two forks.
    pub path: Vec<(f64, f64)>,
    pub endpoint_accuracies: Vec<f64>,
    /// Accuracy of the single network at the mean of all fork weights.
    pub weight_average_accuracy: f64,
    /// Accuracy of the averaged output probabilities of all forks.
    pub output_ensemble_accuracy: f64,
    /// Mean accuracy of random mixtures of the first two forks.
    pub mixtures: Option<MixtureAccuracies>,
}

/// Trains a shared prefix for `k` epochs, forks into one run per seed for
/// the remaining `config.epochs - k` epochs (the learning-rate schedule
/// continues across the fork), then evaluates the linear path, the weight
/// average, the output ensemble, and random mixtures. Batch-norm statistics
/// are recomputed from `train_data` for every evaluated point.
pub fn instability_run(
    spec: &NetworkSpec,
    train_data: &Dataset,
    eval_data: &Dataset,
    setup: &InstabilitySetup,
    config: &TrainConfig,
) -> Result<InstabilityResult> {
    if setup.k > config.epochs {
        return Err(Error::Input(format!(
            "shared prefix k={} exceeds total epochs {}",
            setup.k, config.epochs
        )));
    }
    if setup.fork_seeds.len() < 2 {
        return Err(Error::Input(
            "instability analysis needs at least two forks".into(),
        ));
    }
    if setup.mode == ForkMode::DifferentInit && setup.k != 0 {
        return Err(Error::Input(
            "different-initialization forks branch at the start (k = 0)".into(),
        ));
    }
    if setup.alpha_points < 2 {
        return Err(Error::Input("the path grid needs at least its endpoints".into()));
    }

    let kind = SubspaceKind::Simplex { m: 1 };
    let prefix_state = match setup.mode {
        ForkMode::SharedInit => {
            let mut trainer = Trainer::new(spec, train_data, kind, config)?;
            let mut log = Default::default();
            trainer.run_until(setup.k, &mut log, |_, _, _| Ok(()))?;
            Some(trainer.into_state())
        }
        ForkMode::DifferentInit => None,
    };

    let mut forks: Vec<ParamVector> = Vec::with_capacity(setup.fork_seeds.len());
    for &fork_seed in &setup.fork_seeds {
        let state = match (&prefix_state, setup.mode) {
            (Some(state), ForkMode::SharedInit) => state.clone(),
            _ => {
                let mut init_rng = rng::stream(fork_seed, "init");
                let subspace = Subspace::init(kind, spec, &mut init_rng, false)?;
                let opt = OptimizerState::new(&subspace);
                TrainState {
                    subspace,
                    opt,
                    next_epoch: 0,
                }
            }
        };
        let mut trainer = Trainer::from_state(spec, train_data, config, state, fork_seed)?;
        let mut log = Default::default();
        trainer.run_until(config.epochs, &mut log, |_, _, _| Ok(()))?;
        forks.push(trainer.into_state().subspace.endpoints()[0].clone());
    }

    let eval_at = |params: &ParamVector| -> Result<f64> {
        let stats = net::recompute_bn_stats(spec, params, train_data, STATS_BATCH)?;
        evaluation::accuracy(spec, params, &stats, eval_data)
    };

    let endpoint_accuracies: Vec<f64> = forks.iter().map(&eval_at).collect::<Result<_>>()?;

    let mut path = Vec::with_capacity(setup.alpha_points);
    for i in 0..setup.alpha_points {
        let alpha = i as f64 / (setup.alpha_points - 1) as f64;
        let mut point = ParamVector::zeros(Arc::clone(forks[0].table()));
        point.add_scaled(&forks[0], 1.0 - alpha);
        point.add_scaled(&forks[1], alpha);
        path.push((alpha, eval_at(&point)?));
    }

    let weights = vec![1.0 / forks.len() as f64; forks.len()];
    let refs: Vec<&ParamVector> = forks.iter().collect();
    let average = ParamVector::linear_combination(&weights, &refs);
    let weight_average_accuracy = eval_at(&average)?;

    let mut prob_tables = Vec::with_capacity(forks.len());
    for params in &forks {
        let stats = net::recompute_bn_stats(spec, params, train_data, STATS_BATCH)?;
        prob_tables.push(evaluation::dataset_probs(spec, params, &stats, eval_data)?);
    }
    let output_ensemble_accuracy = evaluation::ensemble_accuracy_from_probs(
        &prob_tables,
        eval_data.labels(),
        spec.num_classes(),
    )?;

    let mixtures = if setup.mixture_samples > 0 {
        let mut mix_rng = rng::stream(config.seed, "mixture");
        let pair = [&forks[0], &forks[1]];
        let mut means = [0.0; 3];
        for (slot, granularity) in [
            MixtureGranularity::Global,
            MixtureGranularity::Layerwise,
            MixtureGranularity::PerWeight,
        ]
        .into_iter()
        .enumerate()
        {
            for _ in 0..setup.mixture_samples {
                let (point, _) = random_mixture(&pair, granularity, &mut mix_rng)?;
                means[slot] += eval_at(&point)?;
            }
            means[slot] /= setup.mixture_samples as f64;
        }
        Some(MixtureAccuracies {
            global: means[0],
            layerwise: means[1],
            per_weight: means[2],
        })
    } else {
        None
    };

    Ok(InstabilityResult {
        k: setup.k,
        num_models: forks.len(),
        path,
        endpoint_accuracies,
        weight_average_accuracy,
        output_ensemble_accuracy,
        mixtures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureGranularity {
    Global,
    Layerwise,
    PerWeight,
}

impl std::fmt::Display for MixtureGranularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MixtureGranularity::Global => write!(f, "global"),
            MixtureGranularity::Layerwise => write!(f, "layerwise"),
            MixtureGranularity::PerWeight => write!(f, "per_weight"),
        }
    }
}

/// The simplex weights used by a mixture draw (omitted at per-weight
/// granularity, where there is one draw per coordinate).
#[derive(Debug, Clone)]
pub enum MixtureCoords {
    Global(Vec<f64>),
    Layerwise(Vec<Vec<f64>>),
    PerWeight,
}

fn draw_weights<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    let mut draws: Vec<f64> = (0..m)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

/// A convex mixture of parameter vectors from explicit weights.
pub fn mixture_from_coords(params: &[&ParamVector], coords: &MixtureCoords) -> Result<ParamVector> {
    let first = params
        .first()
        .ok_or_else(|| Error::Config("mixture needs at least one vector".into()))?;
    match coords {
        MixtureCoords::Global(w) => {
            if w.len() != params.len() {
                return Err(Error::Config("weight/vector count mismatch".into()));
            }
            Ok(ParamVector::linear_combination(w, params))
        }
        MixtureCoords::Layerwise(per_group) => {
            let groups: Vec<_> = first.table().groups().to_vec();
            if per_group.len() != groups.len() {
                return Err(Error::Config(format!(
                    "{} weight rows for {} layer groups",
                    per_group.len(),
                    groups.len()
                )));
            }
            let mut out = ParamVector::zeros(Arc::clone(first.table()));
            for (group, w) in groups.iter().zip(per_group) {
                if w.len() != params.len() {
                    return Err(Error::Config("weight/vector count mismatch".into()));
                }
                let range = group.offset..group.offset + group.length;
                for (coef, p) in w.iter().zip(params) {
                    out.add_scaled_range(p, *coef, range.clone());
                }
            }
            Ok(out)
        }
        MixtureCoords::PerWeight => Err(Error::Config(
            "per-weight mixtures carry no replayable coordinates".into(),
        )),
    }
}

/// Random convex mixture of two or more weight vectors: one draw for the
/// whole vector, one per layer group, or one per coordinate (the
/// hyper-rectangle spanned by the inputs).
pub fn random_mixture<R: Rng + ?Sized>(
    params: &[&ParamVector],
    granularity: MixtureGranularity,
    rng: &mut R,
) -> Result<(ParamVector, MixtureCoords)> {
    if params.len() < 2 {
        return Err(Error::Config("mixtures need at least two vectors".into()));
    }
    let first = params[0];
    if !params.iter().all(|p| p.same_table(first)) {
        return Err(Error::Config(
            "mixture inputs have differing segment tables".into(),
        ));
    }
    let m = params.len();
    match granularity {
        MixtureGranularity::Global => {
            let w = draw_weights(m, rng);
            let out = mixture_from_coords(params, &MixtureCoords::Global(w.clone()))?;
            Ok((out, MixtureCoords::Global(w)))
        }
        MixtureGranularity::Layerwise => {
            let per_group: Vec<Vec<f64>> = (0..first.table().groups().len())
                .map(|_| draw_weights(m, rng))
                .collect();
            let out = mixture_from_coords(params, &MixtureCoords::Layerwise(per_group.clone()))?;
            Ok((out, MixtureCoords::Layerwise(per_group)))
        }
        MixtureGranularity::PerWeight => {
            let mut out = ParamVector::zeros(Arc::clone(first.table()));
            for l in 0..first.len() {
                let w = draw_weights(m, rng);
                out.values_mut()[l] = w
                    .iter()
                    .zip(params)
                    .map(|(coef, p)| coef * p.values()[l])
                    .sum();
            }
            Ok((out, MixtureCoords::PerWeight))
        }
    }
}

/// State of the integral ensembling model: the underlying network `g`
/// parameterized along a line (extended linearly beyond `[0, 1]` for the
/// forward difference), plus the finite-difference step.
#[derive(Debug, Clone)]
pub struct IntegralModelState {
    pub line: Subspace,
    pub epsilon: f64,
}

fn line_coeffs(alpha: f64) -> [f64; 2] {
    [1.0 - alpha, alpha]
}

/// Training-form composite output
/// `f(x, P(a)) = g(x, P(0)) + (g(x, P(a + eps)) - g(x, P(a))) / eps`
/// in eval mode (statistics shared across the three evaluation points;
/// exact for batch-norm-free networks).
pub fn integral_training_form(
    spec: &NetworkSpec,
    state: &IntegralModelState,
    stats: &crate::net::BNStats,
    x: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    let theta0 = state.line.eval_point_unclamped(0.0)?;
    let theta_hi = state.line.eval_point_unclamped(alpha + state.epsilon)?;
    let theta_lo = state.line.eval_point_unclamped(alpha)?;
    let base = net::forward(spec, &theta0, stats, x, crate::net::Mode::Eval)?.logits;
    let hi = net::forward(spec, &theta_hi, stats, x, crate::net::Mode::Eval)?.logits;
    let lo = net::forward(spec, &theta_lo, stats, x, crate::net::Mode::Eval)?.logits;
    Ok(base
        .iter()
        .zip(hi.iter().zip(&lo))
        .map(|(b, (h, l))| b + (h - l) / state.epsilon)
        .collect())
}

/// Loss of the training-form composite on one batch (train-mode forward),
/// with exact gradients for both line endpoints. The chain rule routes each
/// of the three `g` evaluations with its own (possibly extrapolated) line
/// coefficients.
pub fn integral_batch_grads(
    spec: &NetworkSpec,
    state: &IntegralModelState,
    alpha: f64,
    x: &[f64],
    y: &[usize],
    kind: LossKind,
) -> Result<(f64, Vec<ParamVector>)> {
    let eps = state.epsilon;
    let theta0 = state.line.eval_point_unclamped(0.0)?;
    let theta_hi = state.line.eval_point_unclamped(alpha + eps)?;
    let theta_lo = state.line.eval_point_unclamped(alpha)?;
    let trace0 = net::forward_traced(spec, &theta0, x)?;
    let trace_hi = net::forward_traced(spec, &theta_hi, x)?;
    let trace_lo = net::forward_traced(spec, &theta_lo, x)?;

    let mut f_logits = trace0.logits.clone();
    for (f, (hi, lo)) in f_logits
        .iter_mut()
        .zip(trace_hi.logits.iter().zip(&trace_lo.logits))
    {
        *f += (hi - lo) / eps;
    }
    let (value, dlogits) = loss::loss_and_grad(&f_logits, y, spec.num_classes(), kind)?;

    let scaled = |s: f64| -> Vec<f64> { dlogits.iter().map(|v| v * s).collect() };
    let g0 = net::backprop(spec, &theta0, &trace0, &dlogits, None)?;
    let g_hi = net::backprop(spec, &theta_hi, &trace_hi, &scaled(1.0 / eps), None)?;
    let g_lo = net::backprop(spec, &theta_lo, &trace_lo, &scaled(-1.0 / eps), None)?;

    let table = Arc::clone(state.line.endpoints()[0].table());
    let mut grads = vec![
        ParamVector::zeros(Arc::clone(&table)),
        ParamVector::zeros(table),
    ];
    for (g, a) in [(&g0, 0.0), (&g_hi, alpha + eps), (&g_lo, alpha)] {
        let c = line_coeffs(a);
        grads[0].add_scaled(g, c[0]);
        grads[1].add_scaled(g, c[1]);
    }
    Ok((value, grads))
}

/// Trains the integral model: per batch, sample `alpha ~ U[0, 1]`, run the
/// three forward passes of the training form, and backpropagate the task
/// loss through all of them to the line endpoints. SGD with momentum,
/// coupled weight decay, and the usual warmup/cosine schedule.
pub fn integral_train(
    spec: &NetworkSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    epsilon: f64,
) -> Result<IntegralModelState> {
    config.validate()?;
    if epsilon <= 0.0 {
        return Err(Error::Input(format!(
            "finite-difference step must be positive, got {epsilon}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    let mut init_rng = rng::stream(config.seed, "init");
    let line = Subspace::init(SubspaceKind::Line, spec, &mut init_rng, config.point_init)?;
    let mut state = IntegralModelState {
        line,
        epsilon,
    };

    let batch = config.batch_size.min(dataset.len());
    let steps_per_epoch = dataset.len() / batch;
    let schedule = Schedule::new(config, steps_per_epoch);
    let mut buffers = vec![
        ParamVector::zeros(Arc::clone(state.line.endpoints()[0].table())),
        ParamVector::zeros(Arc::clone(state.line.endpoints()[0].table())),
    ];
    let mut coord_rng = rng::stream(config.seed, "coord");
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng = rng::stream(config.seed, &format!("data_order.{epoch}"));
        order.shuffle(&mut shuffle_rng);
        for b in 0..steps_per_epoch {
            let (x, y) = dataset.gather(&order[b * batch..(b + 1) * batch]);
            let alpha: f64 = coord_rng.random();
            let (value, mut grads) =
                integral_batch_grads(spec, &state, alpha, &x, &y, config.loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    coord: format!("{alpha}"),
                });
            }
            let lr = schedule.lr_at(step);
            for ((w, buf), d) in state
                .line
                .endpoints_mut()
                .iter_mut()
                .zip(&mut buffers)
                .zip(&mut grads)
            {
                if config.weight_decay != 0.0 {
                    d.add_scaled(w, config.weight_decay);
                }
                buf.scale(config.momentum);
                buf.add_scaled(d, 1.0);
                w.add_scaled(buf, -lr);
            }
            step += 1;
        }
    }
    Ok(state)
}

/// Closed-form continuous ensemble of the trained integral model:
/// `integral of f(x, P(a)) da over [0, 1] = g(x, P(1))`, returned as
/// probabilities.
pub fn integral_predict(
    spec: &NetworkSpec,
    state: &IntegralModelState,
    stats: &crate::net::BNStats,
    x: &[f64],
) -> Result<Vec<f64>> {
    let theta1 = state.line.eval_point_unclamped(1.0)?;
    let out = net::forward(spec, &theta1, stats, x, crate::net::Mode::Eval)?;
    Ok(loss::softmax_rows(&out.logits, spec.num_classes()))
}

/// Expected quadratic loss over a uniformly sampled line:
/// `E_a || (1-a) w1 + a w2 - target ||^2 = (|a|^2 + |b|^2 + <a, b>) / 3`
/// with `a = w1 - target`, `b = w2 - target`. Analytic oracle for the
/// convex-setting tests; convex in `(w1, w2)` jointly.
pub fn convex_expected_line_loss(w1: &[f64], w2: &[f64], target: &[f64]) -> Result<f64> {
    if w1.len() != w2.len() || w1.len() != target.len() {
        return Err(Error::Input(format!(
            "dimension mismatch: {} / {} / {}",
            w1.len(),
            w2.len(),
            target.len()
        )));
    }
    let mut na = 0.0;
    let mut nb = 0.0;
    let mut ab = 0.0;
    for ((x, y), t) in w1.iter().zip(w2).zip(target) {
        let a = x - t;
        let b = y - t;
        na += a * a;
        nb += b * b;
        ab += a * b;
    }
    Ok((na + nb + ab) / 3.0)
}
