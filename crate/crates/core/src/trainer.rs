//! Single-run subspace training: per-batch coordinate sampling, gradient
//! routing to every endpoint, the squared-cosine orthogonality regularizer,
//! SGD with momentum and coupled weight decay, and a cosine-annealed
//! learning rate with linear warmup.
//!
//! Every endpoint is an optimizer parameter in its own right: weight decay
//! and the momentum buffer apply per endpoint, not to the sampled point.
//! With a single-endpoint simplex the loop reduces exactly (bit for bit)
//! to plain SGD over one network.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::loss::{self, LossKind};
use crate::net::{self, NetworkSpec};
use crate::params::ParamVector;
use crate::rng;
use crate::subspace::{
    cosine_reg, pair_sample, Coord, GeometryStats, SampleCoord, Subspace, SubspaceKind,
};
use crate::{Error, Result};

/// Hyperparameters of one training run. Field names double as the config
/// file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub beta: f64,
    pub lambda: f64,
    pub samples: usize,
    pub layerwise: bool,
    pub seed: u64,
    pub loss: LossKind,
    pub point_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 160,
            batch_size: 128,
            lr_max: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_epochs: 5,
            beta: 1.0,
            lambda: 0.0,
            samples: 1,
            layerwise: false,
            seed: 0,
            loss: LossKind::CrossEntropy { smoothing: 0.0 },
            point_init: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        if self.samples > 1 && !self.batch_size.is_multiple_of(self.samples) {
            return Err(Error::Config(format!(
                "samples ({}) must divide batch_size ({})",
                self.samples, self.batch_size
            )));
        }
        if self.lambda > 0.0 && self.samples < 2 {
            return Err(Error::Config(
                "feature-similarity regularization (lambda > 0) needs samples >= 2".into(),
            ));
        }
        if self.lambda > 0.0 && self.layerwise {
            return Err(Error::Config(
                "feature-similarity regularization needs global coordinate sampling".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        for (name, v) in [
            ("lr_max", self.lr_max),
            ("weight_decay", self.weight_decay),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Linear warmup to `lr_max`, then cosine annealing over the remaining steps.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(config: &TrainConfig, steps_per_epoch: usize) -> Self {
        Schedule {
            lr_max: config.lr_max,
            warmup_steps: config.warmup_epochs * steps_per_epoch,
            total_steps: config.epochs * steps_per_epoch,
        }
    }

    /// Learning rate at a global step index.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr_max * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.lr_max;
        }
        let t = (step - self.warmup_steps).min(span) as f64;
        self.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * t / span as f64).cos())
    }
}

/// Per-endpoint momentum buffers plus the global step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    buffers: Vec<ParamVector>,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(subspace: &Subspace) -> Self {
        let buffers = subspace
            .endpoints()
            .iter()
            .map(|e| ParamVector::zeros(Arc::clone(e.table())))
            .collect();
        OptimizerState { buffers, step: 0 }
    }
}

/// SGD with momentum and coupled weight decay, applied endpoint by endpoint:
/// `d = g + wd * w; buf = momentum * buf + d; w -= lr * buf`.
fn apply_update(
    subspace: &mut Subspace,
    opt: &mut OptimizerState,
    config: &TrainConfig,
    lr: f64,
    mut grads: Vec<ParamVector>,
) {
    for ((w, buf), d) in subspace
        .endpoints_mut()
        .iter_mut()
        .zip(&mut opt.buffers)
        .zip(&mut grads)
    {
        if config.weight_decay != 0.0 {
            d.add_scaled(w, config.weight_decay);
        }
        buf.scale(config.momentum);
        buf.add_scaled(d, 1.0);
        w.add_scaled(buf, -lr);
    }
    opt.step += 1;
}

/// The scaled feature-similarity term `lambda * |a_j - a_k| * cos^2(f_j, f_k)`
/// over flattened batch features, with its gradients w.r.t. both feature
/// buffers. Returns `None` (and logs a warning) when either feature buffer
/// has zero norm.
pub fn feature_reg(
    phi_j: &[f64],
    phi_k: &[f64],
    alpha_j: f64,
    alpha_k: f64,
    lambda: f64,
) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let dot: f64 = phi_j.iter().zip(phi_k).map(|(a, b)| a * b).sum();
    let na: f64 = phi_j.iter().map(|a| a * a).sum();
    let nb: f64 = phi_k.iter().map(|b| b * b).sum();
    if na == 0.0 || nb == 0.0 {
        log::warn!("feature regularizer skipped: zero-norm feature buffer");
        return None;
    }
    let gap = (alpha_j - alpha_k).abs();
    let scale = lambda * gap;
    let value = scale * dot * dot / (na * nb);
    let cj = scale * 2.0 * dot / (na * nb);
    let cjj = scale * 2.0 * dot * dot / (na * na * nb);
    let ck = scale * 2.0 * dot / (na * nb);
    let ckk = scale * 2.0 * dot * dot / (na * nb * nb);
    let grad_j: Vec<f64> = phi_j
        .iter()
        .zip(phi_k)
        .map(|(a, b)| cj * b - cjj * a)
        .collect();
    let grad_k: Vec<f64> = phi_j
        .iter()
        .zip(phi_k)
        .map(|(a, b)| ck * a - ckk * b)
        .collect();
    Some((value, grad_j, grad_k))
}

/// Metrics of one optimizer step.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    /// Mean data loss over the batch.
    pub data_loss: f64,
    /// Raw squared-cosine value of the sampled endpoint pair, when computed.
    pub reg_cos2: Option<f64>,
    /// Scaled feature-similarity term, when computed.
    pub feature_value: Option<f64>,
    /// The sampled coordinate(s): one entry per sub-batch.
    pub coords: Vec<SampleCoord>,
}

/// One line of the per-epoch metric log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub reg_value: f64,
    pub feature_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryStats>,
}

/// Wall-clock timings, kept apart from [`EpochRecord`] so metric files stay
/// byte-identical across reruns.
#[derive(Debug, Clone, Serialize)]
pub struct TimingRecord {
    pub epoch: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub timings: Vec<TimingRecord>,
}

/// Resumable training state — everything a fork needs to continue a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub subspace: Subspace,
    pub opt: OptimizerState,
    pub next_epoch: usize,
}

pub struct Trainer<'a> {
    spec: &'a NetworkSpec,
    dataset: &'a Dataset,
    config: &'a TrainConfig,
    schedule: Schedule,
    state: TrainState,
    coord_rng: ChaCha8Rng,
    pair_rng: ChaCha8Rng,
    feature_rng: ChaCha8Rng,
    /// Root seed for the per-epoch shuffle streams (`data_order.<epoch>`);
    /// forks diverge by swapping this.
    data_seed: u64,
    batch: usize,
    steps_per_epoch: usize,
}

impl<'a> Trainer<'a> {
    /// Initializes a fresh subspace (independent endpoint draws, or one
    /// shared draw under `point_init`) and prepares the named RNG streams.
    pub fn new(
        spec: &'a NetworkSpec,
        dataset: &'a Dataset,
        kind: SubspaceKind,
        config: &'a TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.lambda > 0.0 && matches!(kind, SubspaceKind::Simplex { .. }) {
            return Err(Error::Config(
                "feature-similarity regularization needs a scalar coordinate (line or bezier1)"
                    .into(),
            ));
        }
        let mut init_rng = rng::stream(config.seed, "init");
        let subspace = Subspace::init(kind, spec, &mut init_rng, config.point_init)?;
        let opt = OptimizerState::new(&subspace);
        let state = TrainState {
            subspace,
            opt,
            next_epoch: 0,
        };
        Self::from_state(spec, dataset, config, state, config.seed)
    }

    /// Resumes from a state, shuffling data with streams derived from
    /// `data_seed`. The schedule horizon stays `config.epochs`.
    pub fn from_state(
        spec: &'a NetworkSpec,
        dataset: &'a Dataset,
        config: &'a TrainConfig,
        state: TrainState,
        data_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Input("cannot train on an empty dataset".into()));
        }
        if dataset.dim() != spec.input_dim() || dataset.num_classes() != spec.num_classes() {
            return Err(Error::Config(format!(
                "dataset ({}d, {} classes) does not match network ({}d, {} classes)",
                dataset.dim(),
                dataset.num_classes(),
                spec.input_dim(),
                spec.num_classes()
            )));
        }
        let batch = config.batch_size.min(dataset.len());
        if config.samples > 1 && !batch.is_multiple_of(config.samples) {
            return Err(Error::Config(format!(
                "effective batch size {batch} is not divisible into {} sample groups",
                config.samples
            )));
        }
        let steps_per_epoch = dataset.len() / batch;
        Ok(Trainer {
            spec,
            dataset,
            config,
            schedule: Schedule::new(config, steps_per_epoch),
            state,
            coord_rng: rng::stream(config.seed, "coord"),
            pair_rng: rng::stream(config.seed, "pair"),
            feature_rng: rng::stream(config.seed, "feature_pair"),
            data_seed,
            batch,
            steps_per_epoch,
        })
    }

    pub fn subspace(&self) -> &Subspace {
        &self.state.subspace
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    /// One full Algorithm-1 step on a gathered batch.
    pub fn train_step(&mut self, batch_indices: &[usize]) -> Result<StepMetrics> {
        if batch_indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let (x, y) = self.dataset.gather(batch_indices);
        let lr = self.schedule.lr_at(self.state.opt.step);
        let s = self.config.samples;
        let m = self.state.subspace.num_endpoints();

        let mut endpoint_grads: Vec<ParamVector> = self
            .state
            .subspace
            .endpoints()
            .iter()
            .map(|e| ParamVector::zeros(Arc::clone(e.table())))
            .collect();
        let mut coords = Vec::with_capacity(s);
        let mut data_loss = 0.0;
        let mut feature_value = None;

        if s == 1 {
            let coord = self
                .state
                .subspace
                .sample_coord(self.config.layerwise, &mut self.coord_rng);
            let theta = self.state.subspace.eval_point(&coord)?;
            let trace = net::forward_traced(self.spec, &theta, &x)
                .map_err(|e| self.diagnose(e, &coord))?;
            let (value, dlogits) =
                loss::loss_and_grad(&trace.logits, &y, self.spec.num_classes(), self.config.loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.state.opt.step,
                    coord: coord.describe(),
                });
            }
            let grad_theta = net::backprop(self.spec, &theta, &trace, &dlogits, None)?;
            let routed = self.state.subspace.route_gradient(&coord, &grad_theta)?;
            for (acc, g) in endpoint_grads.iter_mut().zip(&routed) {
                acc.add_scaled(g, 1.0);
            }
            data_loss = value;
            coords.push(coord);
        } else {
            // Split the batch into s equal groups, each with its own
            // coordinate; the data loss is the mean of the group losses.
            let group = batch_indices.len() / s;
            let dim = self.spec.input_dim();
            let inv_s = 1.0 / s as f64;

            let mut traces = Vec::with_capacity(s);
            let mut dlogit_groups = Vec::with_capacity(s);
            let mut thetas = Vec::with_capacity(s);
            for g in 0..s {
                let coord = self
                    .state
                    .subspace
                    .sample_coord(self.config.layerwise, &mut self.coord_rng);
                let theta = self.state.subspace.eval_point(&coord)?;
                let xg = &x[g * group * dim..(g + 1) * group * dim];
                let yg = &y[g * group..(g + 1) * group];
                let trace = net::forward_traced(self.spec, &theta, xg)
                    .map_err(|e| self.diagnose(e, &coord))?;
                let (value, mut dlogits) =
                    loss::loss_and_grad(&trace.logits, yg, self.spec.num_classes(), self.config.loss)?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: self.state.opt.step,
                        coord: coord.describe(),
                    });
                }
                for d in &mut dlogits {
                    *d *= inv_s;
                }
                data_loss += value * inv_s;
                coords.push(coord);
                traces.push(trace);
                dlogit_groups.push(dlogits);
                thetas.push(theta);
            }

            // Feature-similarity term between one random pair of sub-batches.
            let mut feature_grads: Vec<Option<Vec<f64>>> = vec![None; s];
            if self.config.lambda > 0.0 {
                if let Some((j, k)) = pair_sample(s, &mut self.feature_rng) {
                    let (aj, ak) = match (&coords[j], &coords[k]) {
                        (SampleCoord::Global(Coord::Alpha(a)), SampleCoord::Global(Coord::Alpha(b))) => {
                            (*a, *b)
                        }
                        _ => unreachable!("validated: scalar global coordinates"),
                    };
                    if let Some((value, gj, gk)) = feature_reg(
                        &traces[j].features,
                        &traces[k].features,
                        aj,
                        ak,
                        self.config.lambda,
                    ) {
                        feature_value = Some(value);
                        feature_grads[j] = Some(gj);
                        feature_grads[k] = Some(gk);
                    }
                }
            }

            for g in 0..s {
                let grad_theta = net::backprop(
                    self.spec,
                    &thetas[g],
                    &traces[g],
                    &dlogit_groups[g],
                    feature_grads[g].as_deref(),
                )?;
                let routed = self.state.subspace.route_gradient(&coords[g], &grad_theta)?;
                for (acc, rg) in endpoint_grads.iter_mut().zip(&routed) {
                    acc.add_scaled(rg, 1.0);
                }
            }
        }

        // Orthogonality regularizer on one sampled endpoint pair; gradients
        // flow to both endpoints.
        let mut reg_cos2 = None;
        if self.config.beta > 0.0 && m >= 2 {
            if let Some((j, k)) = pair_sample(m, &mut self.pair_rng) {
                let endpoints = self.state.subspace.endpoints();
                let (value, gj, gk) =
                    cosine_reg(&endpoints[j], &endpoints[k]).map_err(|e| match e {
                        Error::Numeric(msg) => Error::Numeric(format!(
                            "{msg} (endpoint pair {j}, {k})"
                        )),
                        other => other,
                    })?;
                reg_cos2 = Some(value);
                endpoint_grads[j].add_scaled(&gj, self.config.beta);
                endpoint_grads[k].add_scaled(&gk, self.config.beta);
            }
        }

        apply_update(
            &mut self.state.subspace,
            &mut self.state.opt,
            self.config,
            lr,
            endpoint_grads,
        );

        Ok(StepMetrics {
            data_loss,
            reg_cos2,
            feature_value,
            coords,
        })
    }

    fn diagnose(&self, e: Error, coord: &SampleCoord) -> Error {
        match e {
            Error::Numeric(msg) => Error::NonFiniteLoss {
                step: self.state.opt.step,
                coord: format!("{} ({msg})", coord.describe()),
            },
            other => other,
        }
    }

    /// Runs one epoch: shuffles the example order (stream
    /// `data_order.<epoch>` of the data seed), then steps over complete
    /// batches. A trailing partial batch is dropped.
    pub fn run_epoch(&mut self) -> Result<(EpochRecord, TimingRecord)> {
        let epoch = self.state.next_epoch;
        let started = Instant::now();
        let lr = self.schedule.lr_at(self.state.opt.step);

        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        let mut shuffle_rng = rng::stream(self.data_seed, &format!("data_order.{epoch}"));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut reg_sum = 0.0;
        let mut reg_n = 0usize;
        let mut feat_sum = 0.0;
        let mut feat_n = 0usize;
        for b in 0..self.steps_per_epoch {
            let metrics = self.train_step(&order[b * self.batch..(b + 1) * self.batch])?;
            loss_sum += metrics.data_loss;
            if let Some(v) = metrics.reg_cos2 {
                reg_sum += v;
                reg_n += 1;
            }
            if let Some(v) = metrics.feature_value {
                feat_sum += v;
                feat_n += 1;
            }
        }
        self.state.next_epoch += 1;

        let geometry = if self.state.subspace.num_endpoints() >= 2 {
            Some(self.state.subspace.geometry_stats()?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / self.steps_per_epoch as f64,
            reg_value: if reg_n > 0 { reg_sum / reg_n as f64 } else { 0.0 },
            feature_value: if feat_n > 0 { feat_sum / feat_n as f64 } else { 0.0 },
            geometry,
        };
        let timing = TimingRecord {
            epoch,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        Ok((record, timing))
    }

    /// Runs epochs `next_epoch..until`, invoking `on_epoch` after each.
    pub fn run_until(
        &mut self,
        until: usize,
        log: &mut TrainLog,
        mut on_epoch: impl FnMut(usize, &Subspace, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.state.next_epoch < until {
            let (record, timing) = self.run_epoch()?;
            on_epoch(record.epoch, &self.state.subspace, &record)?;
            log.epochs.push(record);
            log.timings.push(timing);
        }
        Ok(())
    }
}

/// Fits a subspace in a single training run. Deterministic given the config
/// seed; returns the trained subspace and the per-epoch metric log.
pub fn train_run(
    spec: &NetworkSpec,
    dataset: &Dataset,
    kind: SubspaceKind,
    config: &TrainConfig,
) -> Result<(Subspace, TrainLog)> {
    train_run_with(spec, dataset, kind, config, |_, _, _| Ok(()))
}

/// [`train_run`] with a per-epoch callback (checkpointing, progress output).
pub fn train_run_with(
    spec: &NetworkSpec,
    dataset: &Dataset,
    kind: SubspaceKind,
    config: &TrainConfig,
    on_epoch: impl FnMut(usize, &Subspace, &EpochRecord) -> Result<()>,
) -> Result<(Subspace, TrainLog)> {
    let mut trainer = Trainer::new(spec, dataset, kind, config)?;
    let mut log = TrainLog::default();
    trainer.run_until(config.epochs, &mut log, on_epoch)?;
    Ok((trainer.into_state().subspace, log))
}

/// Drives a subspace toward a parameter-space target under the quadratic
/// loss `l(theta) = ||theta - target||^2`, using the same coordinate
/// sampling, routing, regularization, and optimizer as data training.
/// `config.warmup_epochs` counts warmup steps here.
pub fn train_quadratic(
    subspace: &mut Subspace,
    target: &ParamVector,
    steps: usize,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    if !target.same_table(&subspace.endpoints()[0]) {
        return Err(Error::Config(
            "target segment table does not match subspace endpoints".into(),
        ));
    }
    let schedule = Schedule {
        lr_max: config.lr_max,
        warmup_steps: config.warmup_epochs,
        total_steps: steps,
    };
    let mut opt = OptimizerState::new(subspace);
    let mut coord_rng = rng::stream(config.seed, "coord");
    let mut pair_rng = rng::stream(config.seed, "pair");
    let m = subspace.num_endpoints();

    for step in 0..steps {
        let coord = subspace.sample_coord(config.layerwise, &mut coord_rng);
        let theta = subspace.eval_point(&coord)?;
        // grad of ||theta - target||^2
        let mut grad_theta = ParamVector::zeros(Arc::clone(theta.table()));
        grad_theta.add_scaled(&theta, 2.0);
        grad_theta.add_scaled(target, -2.0);

        let mut grads = subspace.route_gradient(&coord, &grad_theta)?;
        if config.beta > 0.0 && m >= 2 {
            if let Some((j, k)) = pair_sample(m, &mut pair_rng) {
                let endpoints = subspace.endpoints();
                let (_, gj, gk) = cosine_reg(&endpoints[j], &endpoints[k])?;
                grads[j].add_scaled(&gj, config.beta);
                grads[k].add_scaled(&gk, config.beta);
            }
        }
        let lr = schedule.lr_at(step);
        apply_update(subspace, &mut opt, config, lr, grads);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::params;

    fn small_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr_max: 0.05,
            warmup_epochs: 1,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let config = TrainConfig {
            epochs: 10,
            warmup_epochs: 2,
            lr_max: 0.4,
            ..TrainConfig::default()
        };
        let s = Schedule::new(&config, 5);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(5), 0.4 * 0.5);
        // midpoint of the cosine phase
        assert!((s.lr_at(10 + 20) - 0.2).abs() < 1e-12);
        // final step tends to zero but stays positive
        let last = s.lr_at(49);
        assert!(last > 0.0 && last < 0.4 * (1.0 - (std::f64::consts::PI * 39.0 / 40.0).cos()) / 2.0 + 1e-12);
    }

    #[test]
    fn invalid_sample_split_is_rejected() {
        let config = TrainConfig {
            samples: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn epochs_zero_returns_initialized_subspace() {
        let data = synth_blobs(1, 48, 2, 3, 0.2).unwrap();
        let spec = NetworkSpec::mlp(2, &[8], 3, false).unwrap();
        let config = small_config(0, 9);
        let (trained, log) = train_run(&spec, &data, SubspaceKind::Line, &config).unwrap();
        assert!(log.epochs.is_empty());
        let mut init_rng = rng::stream(9, "init");
        let fresh = Subspace::init(SubspaceKind::Line, &spec, &mut init_rng, false).unwrap();
        for (a, b) in trained.endpoints().iter().zip(fresh.endpoints()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn same_seed_runs_are_bit_identical() {
        let data = synth_blobs(2, 64, 2, 3, 0.2).unwrap();
        let spec = NetworkSpec::mlp(2, &[6], 3, true).unwrap();
        let config = small_config(3, 4);
        let (s1, log1) = train_run(&spec, &data, SubspaceKind::Bezier1, &config).unwrap();
        let (s2, log2) = train_run(&spec, &data, SubspaceKind::Bezier1, &config).unwrap();
        for (a, b) in s1.endpoints().iter().zip(s2.endpoints()) {
            assert_eq!(a.values(), b.values());
        }
        let l1 = serde_json::to_string(&log1.epochs).unwrap();
        let l2 = serde_json::to_string(&log2.epochs).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn one_step_update_reconstructs_algebraically() {
        // 10-parameter net: dense(2,2) with bias, dense(2,2) head = 4+2+... pick dense(2,2)+head
        let spec = NetworkSpec::new(
            vec![
                crate::net::LayerSpec::Dense { inputs: 2, outputs: 2 },
                crate::net::LayerSpec::Relu,
                crate::net::LayerSpec::SoftmaxHead,
            ],
            2,
            2,
        )
        .unwrap();
        assert_eq!(spec.param_count(), 6);
        let data = synth_blobs(3, 16, 2, 2, 0.3).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 16,
            lr_max: 0.1,
            warmup_epochs: 0,
            momentum: 0.0,
            weight_decay: 0.0,
            beta: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&spec, &data, SubspaceKind::Line, &config).unwrap();
        let before: Vec<Vec<f64>> = trainer
            .subspace()
            .endpoints()
            .iter()
            .map(|e| e.values().to_vec())
            .collect();

        // replicate the coordinate the step will draw
        let mut coord_probe = rng::stream(5, "coord");
        let coord = trainer.subspace().sample_coord(false, &mut coord_probe);
        let theta = trainer.subspace().eval_point(&coord).unwrap();
        let indices: Vec<usize> = (0..16).collect();
        let (x, y) = data.gather(&indices);
        let (_, grad) = net::backward(&spec, &theta, &x, &y, config.loss).unwrap();
        let c = match &coord {
            SampleCoord::Global(c) => crate::subspace::coefficients(SubspaceKind::Line, c).unwrap(),
            _ => unreachable!(),
        };

        trainer.train_step(&indices).unwrap();
        let lr = 0.1; // warmup 0, first cosine step => lr_max
        for i in 0..2 {
            for l in 0..6 {
                let expect = before[i][l] - lr * c[i] * grad.values()[l];
                let got = trainer.subspace().endpoints()[i].values()[l];
                assert!(
                    (expect - got).abs() <= 1e-12 * expect.abs().max(1.0),
                    "endpoint {i} param {l}: {expect} vs {got}"
                );
            }
        }
    }

    #[test]
    fn endpoint_arithmetic_is_independent_of_batch_size() {
        let spec = NetworkSpec::mlp(2, &[8], 3, false).unwrap();
        let ops_for = |batch: usize, m: usize| {
            let data = synth_blobs(4, 128, 2, 3, 0.2).unwrap();
            let config = TrainConfig {
                epochs: 1,
                batch_size: batch,
                warmup_epochs: 0,
                beta: 1.0,
                seed: 6,
                ..TrainConfig::default()
            };
            let mut trainer =
                Trainer::new(&spec, &data, SubspaceKind::Simplex { m }, &config).unwrap();
            let indices: Vec<usize> = (0..batch).collect();
            params::reset_arith_ops();
            trainer.train_step(&indices).unwrap();
            params::arith_ops()
        };
        let small = ops_for(8, 3);
        let large = ops_for(64, 3);
        assert_eq!(small, large, "endpoint arithmetic must not scale with batch size");

        // affine growth in the endpoint count: equal increments per endpoint
        let m2 = ops_for(16, 2);
        let m4 = ops_for(16, 4);
        let m6 = ops_for(16, 6);
        assert_eq!(m6 - m4, m4 - m2);
    }

    #[test]
    fn coefficient_conservation_along_training() {
        let data = synth_blobs(8, 32, 2, 3, 0.2).unwrap();
        let spec = NetworkSpec::mlp(2, &[5], 3, false).unwrap();
        let config = small_config(1, 3);
        let trainer = Trainer::new(&spec, &data, SubspaceKind::Simplex { m: 4 }, &config).unwrap();
        let mut coord_rng = rng::stream(99, "coord");
        let coord = trainer.subspace().sample_coord(false, &mut coord_rng);
        let theta = trainer.subspace().eval_point(&coord).unwrap();
        let indices: Vec<usize> = (0..16).collect();
        let (x, y) = data.gather(&indices);
        let (_, grad) = net::backward(&spec, &theta, &x, &y, config.loss).unwrap();
        let routed = trainer.subspace().route_gradient(&coord, &grad).unwrap();
        for l in 0..grad.len() {
            let total: f64 = routed.iter().map(|r| r.values()[l]).sum();
            assert!(
                (total - grad.values()[l]).abs() <= 1e-12 * grad.values()[l].abs().max(1.0),
                "coordinate {l}"
            );
        }
    }

    #[test]
    fn feature_reg_matches_hand_value_and_finite_differences() {
        // zero separation: value is 0 no matter the features
        assert_eq!(feature_reg(&[1.0, 2.0], &[3.0, 4.0], 0.4, 0.4, 2.0).unwrap().0, 0.0);
        // orthogonal features: 0
        assert_eq!(feature_reg(&[1.0, 0.0], &[0.0, 1.0], 0.0, 1.0, 2.0).unwrap().0, 0.0);
        let (v, gj, gk) = feature_reg(&[1.0, 0.0], &[1.0, 1.0], 0.75, 0.25, 2.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let h = 1e-6;
        let eval = |pj: &[f64], pk: &[f64]| feature_reg(pj, pk, 0.75, 0.25, 2.0).unwrap().0;
        for l in 0..2 {
            let mut p = [1.0, 0.0];
            p[l] += h;
            let plus = eval(&p, &[1.0, 1.0]);
            p[l] -= 2.0 * h;
            let minus = eval(&p, &[1.0, 1.0]);
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - gj[l]).abs() < 1e-8, "j[{l}]: {fd} vs {}", gj[l]);

            let mut q = [1.0, 1.0];
            q[l] += h;
            let plus = eval(&[1.0, 0.0], &q);
            q[l] -= 2.0 * h;
            let minus = eval(&[1.0, 0.0], &q);
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - gk[l]).abs() < 1e-8, "k[{l}]: {fd} vs {}", gk[l]);
        }
        // zero-norm features: skipped
        assert!(feature_reg(&[0.0, 0.0], &[1.0, 1.0], 0.0, 1.0, 1.0).is_none());
    }

    #[test]
    fn multi_sample_training_runs_and_differs_from_single() {
        let data = synth_blobs(6, 64, 2, 3, 0.2).unwrap();
        let spec = NetworkSpec::mlp(2, &[6], 3, false).unwrap();
        let mut config = small_config(2, 11);
        config.batch_size = 16;
        let (s1, _) = train_run(&spec, &data, SubspaceKind::Line, &config).unwrap();
        config.samples = 4;
        config.lambda = 0.5;
        let (s2, log2) = train_run(&spec, &data, SubspaceKind::Line, &config).unwrap();
        assert_ne!(s1.endpoints()[0].values(), s2.endpoints()[0].values());
        assert!(log2.epochs.iter().all(|e| e.feature_value >= 0.0));
    }

    #[test]
    fn diverging_run_aborts_with_step_and_coordinate() {
        let data = synth_blobs(5, 64, 2, 3, 0.2).unwrap();
        let spec = NetworkSpec::mlp(2, &[8], 3, false).unwrap();
        let config = TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr_max: 1e12,
            warmup_epochs: 0,
            weight_decay: 0.0,
            seed: 8,
            loss: LossKind::Mse,
            ..TrainConfig::default()
        };
        match train_run(&spec, &data, SubspaceKind::Line, &config) {
            Err(crate::Error::NonFiniteLoss { step, coord }) => {
                assert!(step > 0);
                assert!(!coord.is_empty());
            }
            other => panic!("expected a non-finite-loss abort, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_line_training_reaches_the_target() {
        let table = crate::net::NetworkSpec::mlp(2, &[2], 2, false)
            .unwrap()
            .segment_table();
        let mut r = rng::stream(7, "init");
        let mut make = || {
            let mut p = ParamVector::zeros(Arc::clone(&table));
            for v in p.values_mut() {
                *v = rng::standard_normal(&mut r);
            }
            p
        };
        let target = make();
        let w1 = make();
        let w2 = make();
        let mut line = Subspace::from_endpoints(SubspaceKind::Line, vec![w1, w2]).unwrap();
        let config = TrainConfig {
            lr_max: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            beta: 0.0,
            warmup_epochs: 10,
            seed: 3,
            ..TrainConfig::default()
        };
        train_quadratic(&mut line, &target, 4000, &config).unwrap();
        for e in line.endpoints() {
            let dist: f64 = e
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dist <= 1e-3, "endpoint distance {dist}");
        }
    }
}
