//! Minimal feed-forward network engine over a flat parameter vector.
//!
//! Layers are dense affine maps, batch normalization, ReLU, and a softmax
//! head marker; `forward` always returns pre-softmax logits plus the
//! penultimate features (the post-activation input of the final dense
//! layer). Gradients are exact reverse-mode derivatives of the batch loss,
//! computed in 64-bit precision.
//!
//! Batch norm follows the usual convention: train mode normalizes with the
//! current batch's statistics (epsilon 1e-5), eval mode with statistics
//! recomputed over training data by [`recompute_bn_stats`]. Recomputation
//! aggregates exact per-feature dataset moments, so the result is
//! independent of the batch size used for the pass.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::loss::{self, LossKind};
use crate::params::{ParamVector, Segment, SegmentKind, SegmentTable};
use crate::rng::standard_normal;
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    BatchNorm { width: usize },
    Relu,
    SoftmaxHead,
}

/// Validated network description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    num_classes: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, input_dim: usize, num_classes: usize) -> Result<Self> {
        let spec = NetworkSpec {
            layers,
            input_dim,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks layer compatibility; must hold for every constructed spec and
    /// is re-run after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("input_dim and num_classes must be > 0".into()));
        }
        let mut width = self.input_dim;
        let mut saw_dense = false;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    if inputs != width || outputs == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: dense({inputs}, {outputs}) does not accept width {width}"
                        )));
                    }
                    width = outputs;
                    saw_dense = true;
                }
                LayerSpec::BatchNorm { width: w } => {
                    if w != width {
                        return Err(Error::Config(format!(
                            "layer {i}: batch_norm({w}) does not accept width {width}"
                        )));
                    }
                }
                LayerSpec::Relu => {}
                LayerSpec::SoftmaxHead => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::Config(format!(
                            "layer {i}: softmax_head must be the final layer"
                        )));
                    }
                }
            }
        }
        if !saw_dense {
            return Err(Error::Config("network needs at least one dense layer".into()));
        }
        if width != self.num_classes {
            return Err(Error::Config(format!(
                "final width {width} does not match num_classes {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Standard MLP: `dense -> [batch_norm] -> relu` per hidden width, then a
    /// dense classifier head with a softmax marker.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        batch_norm: bool,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                inputs: width,
                outputs: h,
            });
            if batch_norm {
                layers.push(LayerSpec::BatchNorm { width: h });
            }
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs: num_classes,
        });
        layers.push(LayerSpec::SoftmaxHead);
        NetworkSpec::new(layers, input_dim, num_classes)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
                LayerSpec::BatchNorm { width } => 2 * width,
                _ => 0,
            })
            .sum()
    }

    /// Segment table covering this network's flat parameter vector.
    pub fn segment_table(&self) -> Arc<SegmentTable> {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (layer_index, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    segments.push(Segment {
                        layer_index,
                        kind: SegmentKind::DenseWeight,
                        offset,
                        length: inputs * outputs,
                    });
                    offset += inputs * outputs;
                    segments.push(Segment {
                        layer_index,
                        kind: SegmentKind::DenseBias,
                        offset,
                        length: outputs,
                    });
                    offset += outputs;
                }
                LayerSpec::BatchNorm { width } => {
                    segments.push(Segment {
                        layer_index,
                        kind: SegmentKind::BnGain,
                        offset,
                        length: width,
                    });
                    offset += width;
                    segments.push(Segment {
                        layer_index,
                        kind: SegmentKind::BnShift,
                        offset,
                        length: width,
                    });
                    offset += width;
                }
                _ => {}
            }
        }
        SegmentTable::new(segments).expect("spec-derived segments are contiguous")
    }

    fn last_dense_index(&self) -> usize {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }))
            .expect("validated spec has a dense layer")
    }

    /// Width of the penultimate features (input of the final dense layer).
    pub fn feature_width(&self) -> usize {
        match self.layers[self.last_dense_index()] {
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => unreachable!(),
        }
    }
}

/// Kaiming-normal initialization: dense weights ~ N(0, 2 / fan_in),
/// biases 0, batch-norm gain 1, shift 0.
pub fn init_params<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> ParamVector {
    let table = spec.segment_table();
    let mut params = ParamVector::zeros(Arc::clone(&table));
    for seg in table.segments() {
        let LayerSpec::Dense { inputs, .. } = spec.layers[seg.layer_index] else {
            if seg.kind == SegmentKind::BnGain {
                params.values_mut()[seg.offset..seg.offset + seg.length].fill(1.0);
            }
            continue;
        };
        if seg.kind == SegmentKind::DenseWeight {
            let std = (2.0 / inputs as f64).sqrt();
            for v in &mut params.values_mut()[seg.offset..seg.offset + seg.length] {
                *v = std * standard_normal(rng);
            }
        }
    }
    params
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics for one batch-norm layer, keyed by its layer index.
#[derive(Debug, Clone, PartialEq)]
pub struct BnLayerStats {
    pub layer_index: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub sample_count: usize,
}

/// Recomputed batch-norm statistics; empty for networks without batch norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BNStats {
    pub layers: Vec<BnLayerStats>,
}

impl BNStats {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn for_layer(&self, layer_index: usize) -> Option<&BnLayerStats> {
        self.layers.iter().find(|l| l.layer_index == layer_index)
    }
}

pub struct ForwardOutput {
    /// Pre-softmax outputs, batch x num_classes.
    pub logits: Vec<f64>,
    /// Post-activation input of the final dense layer, batch x feature_width.
    pub features: Vec<f64>,
}

fn check_batch(spec: &NetworkSpec, params: &ParamVector, x: &[f64]) -> Result<usize> {
    if params.len() != spec.param_count() {
        return Err(Error::Config(format!(
            "parameter vector of length {} does not match spec ({} params)",
            params.len(),
            spec.param_count()
        )));
    }
    if x.is_empty() || !x.len().is_multiple_of(spec.input_dim) {
        return Err(Error::Config(format!(
            "input buffer of {} values is not a multiple of input_dim {}",
            x.len(),
            spec.input_dim
        )));
    }
    Ok(x.len() / spec.input_dim)
}

fn dense_apply(w: &[f64], b: &[f64], x: &[f64], n: usize, inputs: usize, outputs: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * outputs];
    for row in 0..n {
        let xin = &x[row * inputs..(row + 1) * inputs];
        let yout = &mut out[row * outputs..(row + 1) * outputs];
        for (o, y) in yout.iter_mut().enumerate() {
            let mut acc = b[o];
            let wrow = &w[o * inputs..(o + 1) * inputs];
            for (wi, xi) in wrow.iter().zip(xin) {
                acc += wi * xi;
            }
            *y = acc;
        }
    }
    out
}

/// Per-feature batch mean and biased variance of an `n x width` buffer.
fn batch_moments(x: &[f64], n: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; width];
    let mut var = vec![0.0; width];
    for row in x.chunks(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    for m in &mut mean {
        *m *= inv_n;
    }
    for row in x.chunks(width) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s *= inv_n;
    }
    (mean, var)
}

fn bn_apply(
    x: &[f64],
    width: usize,
    mean: &[f64],
    var: &[f64],
    gain: &[f64],
    shift: &[f64],
) -> Vec<f64> {
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut out = vec![0.0; x.len()];
    for (orow, xrow) in out.chunks_mut(width).zip(x.chunks(width)) {
        for j in 0..width {
            out_set(orow, j, gain[j] * (xrow[j] - mean[j]) * inv_std[j] + shift[j]);
        }
    }
    out
}

#[inline]
fn out_set(row: &mut [f64], j: usize, v: f64) {
    row[j] = v;
}

struct BnTrace {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct TraceLayer {
    input: Vec<f64>,
    bn: Option<BnTrace>,
}

pub(crate) struct TracedForward {
    layers: Vec<TraceLayer>,
    widths: Vec<usize>,
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
    pub n: usize,
}

/// Train-mode forward that records everything the reverse pass needs.
/// Activations are checked for finiteness layer by layer.
pub(crate) fn forward_traced(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
) -> Result<TracedForward> {
    let n = check_batch(spec, params, x)?;
    let table = params.table();
    let values = params.values();
    let last_dense = spec.last_dense_index();

    let mut cur = x.to_vec();
    let mut width = spec.input_dim;
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut widths = Vec::with_capacity(spec.layers.len());
    let mut features = Vec::new();
    let mut seg_iter = table.segments().iter();

    for (i, layer) in spec.layers.iter().enumerate() {
        widths.push(width);
        if i == last_dense {
            features = cur.clone();
        }
        let (next, bn) = match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let wseg = seg_iter.next().expect("dense weight segment");
                let bseg = seg_iter.next().expect("dense bias segment");
                let w = &values[wseg.offset..wseg.offset + wseg.length];
                let b = &values[bseg.offset..bseg.offset + bseg.length];
                width = outputs;
                (dense_apply(w, b, &cur, n, inputs, outputs), None)
            }
            LayerSpec::BatchNorm { width: wd } => {
                let gseg = seg_iter.next().expect("bn gain segment");
                let sseg = seg_iter.next().expect("bn shift segment");
                let gain = &values[gseg.offset..gseg.offset + gseg.length];
                let shift = &values[sseg.offset..sseg.offset + sseg.length];
                let (mean, var) = batch_moments(&cur, n, wd);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = vec![0.0; cur.len()];
                for (hrow, xrow) in xhat.chunks_mut(wd).zip(cur.chunks(wd)) {
                    for j in 0..wd {
                        hrow[j] = (xrow[j] - mean[j]) * inv_std[j];
                    }
                }
                let mut out = vec![0.0; cur.len()];
                for (orow, hrow) in out.chunks_mut(wd).zip(xhat.chunks(wd)) {
                    for j in 0..wd {
                        orow[j] = gain[j] * hrow[j] + shift[j];
                    }
                }
                (out, Some(BnTrace { xhat, inv_std }))
            }
            LayerSpec::Relu => (cur.iter().map(|v| v.max(0.0)).collect(), None),
            LayerSpec::SoftmaxHead => (cur.clone(), None),
        };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite activation after layer {i}"
            )));
        }
        layers.push(TraceLayer { input: cur, bn });
        cur = next;
    }

    Ok(TracedForward {
        layers,
        widths,
        logits: cur,
        features,
        n,
    })
}

/// Reverse pass from an output-side gradient, with an optional extra gradient
/// injected at the penultimate features.
pub(crate) fn backprop(
    spec: &NetworkSpec,
    params: &ParamVector,
    trace: &TracedForward,
    dlogits: &[f64],
    dfeatures: Option<&[f64]>,
) -> Result<ParamVector> {
    let values = params.values();
    let table = params.table();
    let last_dense = spec.last_dense_index();
    let mut grad = ParamVector::zeros(Arc::clone(table));
    let n = trace.n;

    let mut dcur = dlogits.to_vec();
    let mut seg_idx = table.segments().len();

    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let tl = &trace.layers[i];
        let width = trace.widths[i];
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                seg_idx -= 2;
                let wseg = table.segments()[seg_idx];
                let bseg = table.segments()[seg_idx + 1];
                let w = &values[wseg.offset..wseg.offset + wseg.length];
                let mut dinput = vec![0.0; n * inputs];
                {
                    let gvals = grad.values_mut();
                    for row in 0..n {
                        let xin = &tl.input[row * inputs..(row + 1) * inputs];
                        let dy = &dcur[row * outputs..(row + 1) * outputs];
                        for (o, &dyo) in dy.iter().enumerate() {
                            gvals[bseg.offset + o] += dyo;
                            let gw = &mut gvals
                                [wseg.offset + o * inputs..wseg.offset + (o + 1) * inputs];
                            let wrow = &w[o * inputs..(o + 1) * inputs];
                            let dx = &mut dinput[row * inputs..(row + 1) * inputs];
                            for ((g, &xi), (&wi, d)) in
                                gw.iter_mut().zip(xin).zip(wrow.iter().zip(dx.iter_mut()))
                            {
                                *g += dyo * xi;
                                *d += dyo * wi;
                            }
                        }
                    }
                }
                dcur = dinput;
            }
            LayerSpec::BatchNorm { width: wd } => {
                seg_idx -= 2;
                let gseg = table.segments()[seg_idx];
                let sseg = table.segments()[seg_idx + 1];
                let gain = &values[gseg.offset..gseg.offset + gseg.length];
                let bn = tl.bn.as_ref().expect("bn trace");
                // Accumulate per-feature sums needed by the train-mode formula.
                let mut sum_dy = vec![0.0; wd];
                let mut sum_dy_xhat = vec![0.0; wd];
                for (dyrow, hrow) in dcur.chunks(wd).zip(bn.xhat.chunks(wd)) {
                    for j in 0..wd {
                        sum_dy[j] += dyrow[j];
                        sum_dy_xhat[j] += dyrow[j] * hrow[j];
                    }
                }
                {
                    let gvals = grad.values_mut();
                    for j in 0..wd {
                        gvals[gseg.offset + j] += sum_dy_xhat[j];
                        gvals[sseg.offset + j] += sum_dy[j];
                    }
                }
                let inv_n = 1.0 / n as f64;
                let mut dinput = vec![0.0; dcur.len()];
                for ((drow, dyrow), hrow) in dinput
                    .chunks_mut(wd)
                    .zip(dcur.chunks(wd))
                    .zip(bn.xhat.chunks(wd))
                {
                    for j in 0..wd {
                        let dxhat = dyrow[j] * gain[j];
                        drow[j] = bn.inv_std[j]
                            * (dxhat
                                - inv_n * gain[j] * sum_dy[j]
                                - inv_n * gain[j] * hrow[j] * sum_dy_xhat[j]);
                    }
                }
                dcur = dinput;
            }
            LayerSpec::Relu => {
                for (d, &x) in dcur.iter_mut().zip(&tl.input) {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            LayerSpec::SoftmaxHead => {}
        }
        let _ = width;
        if i == last_dense {
            if let Some(df) = dfeatures {
                if df.len() != dcur.len() {
                    return Err(Error::Config(format!(
                        "feature gradient of {} values does not match features ({})",
                        df.len(),
                        dcur.len()
                    )));
                }
                for (d, &f) in dcur.iter_mut().zip(df) {
                    *d += f;
                }
            }
        }
    }

    Ok(grad)
}

/// Forward pass. Train mode normalizes batch-norm layers with the batch's
/// own statistics; eval mode requires `stats` populated for every
/// batch-norm layer.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamVector,
    stats: &BNStats,
    x: &[f64],
    mode: Mode,
) -> Result<ForwardOutput> {
    let n = check_batch(spec, params, x)?;
    let values = params.values();
    let table = params.table();
    let last_dense = spec.last_dense_index();

    let mut cur = x.to_vec();
    let mut features = Vec::new();
    let mut seg_iter = table.segments().iter();

    for (i, layer) in spec.layers.iter().enumerate() {
        if i == last_dense {
            features = cur.clone();
        }
        cur = match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let wseg = seg_iter.next().expect("dense weight segment");
                let bseg = seg_iter.next().expect("dense bias segment");
                dense_apply(
                    &values[wseg.offset..wseg.offset + wseg.length],
                    &values[bseg.offset..bseg.offset + bseg.length],
                    &cur,
                    n,
                    inputs,
                    outputs,
                )
            }
            LayerSpec::BatchNorm { width } => {
                let gseg = seg_iter.next().expect("bn gain segment");
                let sseg = seg_iter.next().expect("bn shift segment");
                let gain = &values[gseg.offset..gseg.offset + gseg.length];
                let shift = &values[sseg.offset..sseg.offset + sseg.length];
                match mode {
                    Mode::Train => {
                        let (mean, var) = batch_moments(&cur, n, width);
                        bn_apply(&cur, width, &mean, &var, gain, shift)
                    }
                    Mode::Eval => {
                        let layer_stats = stats.for_layer(i).ok_or_else(|| {
                            Error::State(format!(
                                "eval-mode forward needs recomputed statistics for batch-norm layer {i}"
                            ))
                        })?;
                        bn_apply(&cur, width, &layer_stats.mean, &layer_stats.var, gain, shift)
                    }
                }
            }
            LayerSpec::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::SoftmaxHead => cur,
        };
    }

    Ok(ForwardOutput {
        logits: cur,
        features,
    })
}

/// Batch loss and its exact gradient with respect to the parameters
/// (train-mode forward).
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: &[f64],
    labels: &[usize],
    kind: LossKind,
) -> Result<(f64, ParamVector)> {
    let trace = forward_traced(spec, params, x)?;
    let (value, dlogits) = loss::loss_and_grad(&trace.logits, labels, spec.num_classes, kind)?;
    let grad = backprop(spec, params, &trace, &dlogits, None)?;
    Ok((value, grad))
}

/// One deterministic pass over `dataset` that aggregates the exact
/// per-feature mean and variance of every batch-norm layer's inputs.
/// Must run before any eval-mode forward of freshly sampled weights.
pub fn recompute_bn_stats(
    spec: &NetworkSpec,
    params: &ParamVector,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<BNStats> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot recompute batch-norm statistics on an empty dataset".into()));
    }
    let bn_layers: Vec<(usize, usize)> = spec
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match *l {
            LayerSpec::BatchNorm { width } => Some((i, width)),
            _ => None,
        })
        .collect();
    if bn_layers.is_empty() {
        return Ok(BNStats::default());
    }
    check_batch(spec, params, &dataset.inputs()[..spec.input_dim])?;

    // Chan's parallel-merge form keeps the aggregate exact regardless of
    // how the dataset is batched.
    struct Acc {
        count: f64,
        mean: Vec<f64>,
        m2: Vec<f64>,
    }
    let mut accs: Vec<Acc> = bn_layers
        .iter()
        .map(|&(_, w)| Acc {
            count: 0.0,
            mean: vec![0.0; w],
            m2: vec![0.0; w],
        })
        .collect();

    let values = params.values();
    let table = params.table();
    let batch = batch_size.max(1);
    for chunk_start in (0..dataset.len()).step_by(batch) {
        let chunk_end = (chunk_start + batch).min(dataset.len());
        let n = chunk_end - chunk_start;
        let x = &dataset.inputs()[chunk_start * spec.input_dim..chunk_end * spec.input_dim];

        let mut cur = x.to_vec();
        let mut seg_iter = table.segments().iter();
        let mut bn_slot = 0usize;
        for layer in &spec.layers {
            cur = match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let wseg = seg_iter.next().expect("dense weight segment");
                    let bseg = seg_iter.next().expect("dense bias segment");
                    dense_apply(
                        &values[wseg.offset..wseg.offset + wseg.length],
                        &values[bseg.offset..bseg.offset + bseg.length],
                        &cur,
                        n,
                        inputs,
                        outputs,
                    )
                }
                LayerSpec::BatchNorm { width } => {
                    let gseg = seg_iter.next().expect("bn gain segment");
                    let sseg = seg_iter.next().expect("bn shift segment");
                    let (mean, var) = batch_moments(&cur, n, width);

                    let acc = &mut accs[bn_slot];
                    bn_slot += 1;
                    let nb = n as f64;
                    if acc.count == 0.0 {
                        acc.count = nb;
                        acc.mean.copy_from_slice(&mean);
                        for (m2, &v) in acc.m2.iter_mut().zip(&var) {
                            *m2 = v * nb;
                        }
                    } else {
                        let total = acc.count + nb;
                        for j in 0..width {
                            let delta = mean[j] - acc.mean[j];
                            acc.m2[j] += var[j] * nb + delta * delta * acc.count * nb / total;
                            acc.mean[j] += delta * nb / total;
                        }
                        acc.count = total;
                    }

                    bn_apply(
                        &cur,
                        width,
                        &mean,
                        &var,
                        &values[gseg.offset..gseg.offset + gseg.length],
                        &values[sseg.offset..sseg.offset + sseg.length],
                    )
                }
                LayerSpec::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
                LayerSpec::SoftmaxHead => cur,
            };
        }
    }

    let layers = bn_layers
        .iter()
        .zip(accs)
        .map(|(&(layer_index, _), acc)| BnLayerStats {
            layer_index,
            mean: acc.mean,
            var: acc.m2.iter().map(|m2| m2 / acc.count).collect(),
            sample_count: acc.count as usize,
        })
        .collect();
    Ok(BNStats { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn single_dense(inputs: usize, outputs: usize) -> NetworkSpec {
        NetworkSpec::new(
            vec![
                LayerSpec::Dense { inputs, outputs },
                LayerSpec::SoftmaxHead,
            ],
            inputs,
            outputs,
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_dense_gives_zero_logits() {
        let spec = single_dense(3, 2);
        let params = ParamVector::zeros(spec.segment_table());
        let out = forward(&spec, &params, &BNStats::default(), &[0.5, -1.0, 2.0], Mode::Eval)
            .unwrap();
        assert_eq!(out.logits, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let spec = single_dense(3, 3);
        let mut params = ParamVector::zeros(spec.segment_table());
        for i in 0..3 {
            params.values_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.25, -0.75, 4.0, 1.0, 2.0, 3.0];
        let out = forward(&spec, &params, &BNStats::default(), &x, Mode::Eval).unwrap();
        assert_eq!(out.logits, x.to_vec());
        // features of a single-dense net are the raw inputs
        assert_eq!(out.features, x.to_vec());
    }

    #[test]
    fn forward_matches_hand_rolled_two_layer_oracle() {
        let spec = NetworkSpec::mlp(3, &[4], 2, false).unwrap();
        let mut r = rng::stream(11, "init");
        let params = init_params(&spec, &mut r);
        let x: Vec<f64> = (0..12).map(|i| (i as f64) * 0.17 - 1.0).collect();
        let out = forward(&spec, &params, &BNStats::default(), &x, Mode::Eval).unwrap();

        // straight-line arithmetic oracle
        let v = params.values();
        let (w1, b1, w2, b2) = (&v[0..12], &v[12..16], &v[16..24], &v[24..26]);
        for row in 0..4 {
            let xin = &x[row * 3..row * 3 + 3];
            let mut h = [0.0; 4];
            for o in 0..4 {
                h[o] = b1[o] + (0..3).map(|i| w1[o * 3 + i] * xin[i]).sum::<f64>();
                h[o] = h[o].max(0.0);
            }
            for o in 0..2 {
                let expect = b2[o] + (0..4).map(|i| w2[o * 4 + i] * h[i]).sum::<f64>();
                let got = out.logits[row * 2 + o];
                assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
            }
            for (a, b) in out.features[row * 4..row * 4 + 4].iter().zip(h) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let spec = NetworkSpec::mlp(2, &[5], 3, true).unwrap();
        let mut r = rng::stream(3, "init");
        let params = init_params(&spec, &mut r);
        let x = [0.1, 0.9, 0.4, 0.2, 0.6, 0.6];
        let a = forward(&spec, &params, &BNStats::default(), &x, Mode::Train).unwrap();
        let b = forward(&spec, &params, &BNStats::default(), &x, Mode::Train).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn eval_mode_without_stats_is_a_state_error() {
        let spec = NetworkSpec::mlp(2, &[4], 2, true).unwrap();
        let mut r = rng::stream(5, "init");
        let params = init_params(&spec, &mut r);
        let err = forward(&spec, &params, &BNStats::default(), &[0.0, 1.0], Mode::Eval);
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn bias_only_gradient_when_inputs_are_zero() {
        let spec = single_dense(3, 2);
        let params = ParamVector::zeros(spec.segment_table());
        let (_, grad) = backward(&spec, &params, &[0.0; 6], &[0, 0], LossKind::default()).unwrap();
        // weight segment is 0..6, bias 6..8
        assert!(grad.values()[..6].iter().all(|&g| g == 0.0));
        assert!(grad.values()[6..].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duplicated_batch_leaves_gradient_unchanged() {
        let spec = NetworkSpec::mlp(2, &[4], 3, false).unwrap();
        let mut r = rng::stream(7, "init");
        let params = init_params(&spec, &mut r);
        let x = vec![0.3, -0.4, 0.8, 0.1];
        let y = vec![2usize, 0];
        let (_, g1) = backward(&spec, &params, &x, &y, LossKind::default()).unwrap();
        let x2 = [x.clone(), x.clone()].concat();
        let y2 = [y.clone(), y.clone()].concat();
        let (_, g2) = backward(&spec, &params, &x2, &y2, LossKind::default()).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    fn fd_check(spec: &NetworkSpec, params: &ParamVector, x: &[f64], y: &[usize], kind: LossKind) {
        let (_, grad) = backward(spec, params, x, y, kind).unwrap();
        let mut probe = params.clone();
        let h = 1e-5;
        for i in 0..params.len() {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + h;
            let plus = backward(spec, &probe, x, y, kind).unwrap().0;
            probe.values_mut()[i] = orig - h;
            let minus = backward(spec, &probe, x, y, kind).unwrap().0;
            probe.values_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let g = grad.values()[i];
            let denom = g.abs().max(fd.abs()).max(1.0);
            assert!(
                (g - fd).abs() / denom <= 1e-6 || (g - fd).abs() <= 1e-8,
                "param {i}: analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_with_batch_norm() {
        let spec = NetworkSpec::mlp(3, &[6], 4, true).unwrap();
        let mut r = rng::stream(21, "init");
        let params = init_params(&spec, &mut r);
        let x: Vec<f64> = (0..15).map(|i| ((i * 7 % 11) as f64) / 11.0 - 0.3).collect();
        let y = vec![0usize, 3, 1, 2, 0];
        fd_check(&spec, &params, &x, &y, LossKind::CrossEntropy { smoothing: 0.1 });
    }

    #[test]
    fn gradient_matches_finite_differences_mse() {
        let spec = NetworkSpec::mlp(2, &[5], 3, false).unwrap();
        let mut r = rng::stream(22, "init");
        let params = init_params(&spec, &mut r);
        let x = vec![0.2, 0.9, -0.5, 0.3, 0.7, -0.1];
        let y = vec![1usize, 0, 2];
        fd_check(&spec, &params, &x, &y, LossKind::Mse);
    }

    #[test]
    fn recompute_stats_on_constant_dataset_has_zero_variance() {
        let spec = NetworkSpec::mlp(2, &[4], 2, true).unwrap();
        let mut r = rng::stream(9, "init");
        let params = init_params(&spec, &mut r);
        let row = [0.25, 0.5];
        let data = Dataset::from_parts(
            "const",
            row.repeat(16),
            vec![0; 16],
            2,
            2,
        )
        .unwrap();
        let stats = recompute_bn_stats(&spec, &params, &data, 4).unwrap();
        assert_eq!(stats.layers.len(), 1);
        assert_eq!(stats.layers[0].sample_count, 16);
        for &v in &stats.layers[0].var {
            assert!(v.abs() < 1e-24);
        }
        // mean equals that example's pre-normalization activation
        let single = forward(&spec, &params, &BNStats::default(), &row, Mode::Train).unwrap();
        let _ = single;
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let spec = single_dense(3, 2);
        let params = ParamVector::zeros(spec.segment_table());
        // 4 values cannot form rows of width 3
        let err = forward(&spec, &params, &BNStats::default(), &[0.0; 4], Mode::Eval);
        assert!(matches!(err, Err(Error::Config(_))));
        let short = ParamVector::zeros(single_dense(2, 2).segment_table());
        let err = forward(&spec, &short, &BNStats::default(), &[0.0; 3], Mode::Eval);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_intermediate_is_a_numeric_error_naming_the_layer() {
        let spec = NetworkSpec::mlp(2, &[3], 2, false).unwrap();
        let mut params = ParamVector::zeros(spec.segment_table());
        params.values_mut()[0] = 1e308;
        params.values_mut()[9] = 1e308; // second dense layer blows up to inf
        match backward(&spec, &params, &[1e3, 1e3], &[0], LossKind::default()) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("layer"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn recompute_stats_on_empty_dataset_is_an_input_error() {
        let spec = NetworkSpec::mlp(2, &[4], 2, true).unwrap();
        let params = ParamVector::zeros(spec.segment_table());
        let empty = Dataset::from_parts("e", vec![], vec![], 2, 2).unwrap();
        assert!(matches!(
            recompute_bn_stats(&spec, &params, &empty, 4),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn recompute_stats_without_bn_is_a_noop() {
        let spec = NetworkSpec::mlp(2, &[4], 2, false).unwrap();
        let params = ParamVector::zeros(spec.segment_table());
        let data = Dataset::from_parts("d", vec![0.0; 8], vec![0; 4], 2, 2).unwrap();
        let stats = recompute_bn_stats(&spec, &params, &data, 2).unwrap();
        assert!(stats.is_empty());
    }

    #[test]
    fn recompute_stats_matches_single_pass_oracle() {
        // stats over a 256-example set equal the directly computed
        // activation mean/variance regardless of batch size
        let spec = NetworkSpec::mlp(3, &[5], 2, true).unwrap();
        let mut r = rng::stream(33, "init");
        let params = init_params(&spec, &mut r);
        let mut gen = rng::stream(33, "blobs.train");
        use rand::Rng;
        let inputs: Vec<f64> = (0..256 * 3).map(|_| gen.random::<f64>()).collect();
        let data = Dataset::from_parts("r", inputs.clone(), vec![0; 256], 3, 2).unwrap();

        let stats = recompute_bn_stats(&spec, &params, &data, 17).unwrap();

        // oracle: first-layer dense outputs over the whole set at once
        let v = params.values();
        let (w1, b1) = (&v[0..15], &v[15..20]);
        let mut acts = vec![0.0; 256 * 5];
        for row in 0..256 {
            for o in 0..5 {
                acts[row * 5 + o] =
                    b1[o] + (0..3).map(|i| w1[o * 3 + i] * inputs[row * 3 + i]).sum::<f64>();
            }
        }
        for j in 0..5 {
            let col: Vec<f64> = (0..256).map(|r| acts[r * 5 + j]).collect();
            let mean = col.iter().sum::<f64>() / 256.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 256.0;
            assert!((stats.layers[0].mean[j] - mean).abs() < 1e-10);
            assert!((stats.layers[0].var[j] - var).abs() < 1e-10);
        }
    }
}
