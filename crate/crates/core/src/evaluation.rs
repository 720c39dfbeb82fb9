//! Evaluation along learned subspaces: accuracy sweeps, output-space
//! ensembles, calibration (ECE), total-variation distance, relative change
//! under corruption, and two-dimensional plane grids.
//!
//! Batch-norm statistics are recomputed per evaluated point from training
//! data (never shared across points or ensemble members); eval-mode forward
//! passes are row-independent, so results do not depend on evaluation batch
//! size.

use serde::Serialize;

use crate::data::Dataset;
use crate::loss::{self, LossKind};
use crate::net::{self, BNStats, Mode, NetworkSpec};
use crate::params::ParamVector;
use crate::subspace::{Coord, GeometryStats, SampleCoord, Subspace};
use crate::{Error, Result};

const EVAL_BATCH: usize = 256;

/// Eval-mode logits over a whole dataset, in dataset order.
pub fn dataset_logits(
    spec: &NetworkSpec,
    params: &ParamVector,
    stats: &BNStats,
    dataset: &Dataset,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let mut logits = Vec::with_capacity(dataset.len() * spec.num_classes());
    for start in (0..dataset.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(dataset.len());
        let x = &dataset.inputs()[start * spec.input_dim()..end * spec.input_dim()];
        let out = net::forward(spec, params, stats, x, Mode::Eval)?;
        logits.extend_from_slice(&out.logits);
    }
    Ok(logits)
}

/// Row-wise softmax probabilities over a whole dataset.
pub fn dataset_probs(
    spec: &NetworkSpec,
    params: &ParamVector,
    stats: &BNStats,
    dataset: &Dataset,
) -> Result<Vec<f64>> {
    Ok(loss::softmax_rows(
        &dataset_logits(spec, params, stats, dataset)?,
        spec.num_classes(),
    ))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of score rows against labels (ties resolve to the lowest
/// class index).
pub fn accuracy_from_scores(scores: &[f64], labels: &[usize], classes: usize) -> f64 {
    let correct = scores
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Top-1 accuracy; batch-norm statistics must already be recomputed for
/// these parameters.
pub fn accuracy(
    spec: &NetworkSpec,
    params: &ParamVector,
    stats: &BNStats,
    dataset: &Dataset,
) -> Result<f64> {
    let logits = dataset_logits(spec, params, stats, dataset)?;
    Ok(accuracy_from_scores(
        &logits,
        dataset.labels(),
        spec.num_classes(),
    ))
}

/// Mean loss and accuracy in one pass.
pub fn accuracy_and_loss(
    spec: &NetworkSpec,
    params: &ParamVector,
    stats: &BNStats,
    dataset: &Dataset,
    kind: LossKind,
) -> Result<(f64, f64)> {
    let logits = dataset_logits(spec, params, stats, dataset)?;
    let acc = accuracy_from_scores(&logits, dataset.labels(), spec.num_classes());
    let mean_loss = loss::loss(&logits, dataset.labels(), spec.num_classes(), kind)?;
    Ok((acc, mean_loss))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub coord: String,
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Evaluates the subspace at each grid coordinate: sample the point,
/// recompute batch-norm statistics on `stats_data`, then measure on
/// `eval_data`.
pub fn alpha_sweep(
    spec: &NetworkSpec,
    subspace: &Subspace,
    grid: &[SampleCoord],
    stats_data: &Dataset,
    eval_data: &Dataset,
    kind: LossKind,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::with_capacity(grid.len());
    for coord in grid {
        let params = subspace.eval_point(coord)?;
        let stats = net::recompute_bn_stats(spec, &params, stats_data, EVAL_BATCH)?;
        let (acc, mean_loss) = accuracy_and_loss(spec, &params, &stats, eval_data, kind)?;
        points.push(SweepPoint {
            coord: coord.describe(),
            accuracy: acc,
            mean_loss,
        });
    }
    Ok(points)
}

/// Output-space ensemble of two models: probabilities are averaged, then the
/// argmax is scored. Statistics must be recomputed per member beforehand.
pub fn ensemble_accuracy(
    spec: &NetworkSpec,
    params_a: &ParamVector,
    stats_a: &BNStats,
    params_b: &ParamVector,
    stats_b: &BNStats,
    dataset: &Dataset,
) -> Result<f64> {
    let pa = dataset_probs(spec, params_a, stats_a, dataset)?;
    let pb = dataset_probs(spec, params_b, stats_b, dataset)?;
    let avg: Vec<f64> = pa.iter().zip(&pb).map(|(a, b)| (a + b) / 2.0).collect();
    Ok(accuracy_from_scores(
        &avg,
        dataset.labels(),
        spec.num_classes(),
    ))
}

/// Accuracy of the mean of several probability tables.
pub fn ensemble_accuracy_from_probs(
    prob_tables: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
) -> Result<f64> {
    let first = prob_tables
        .first()
        .ok_or_else(|| Error::Input("ensemble needs at least one member".into()))?;
    let mut avg = vec![0.0; first.len()];
    for table in prob_tables {
        if table.len() != avg.len() {
            return Err(Error::Config("ensemble member shapes differ".into()));
        }
        for (a, p) in avg.iter_mut().zip(table) {
            *a += p;
        }
    }
    let inv = 1.0 / prob_tables.len() as f64;
    for a in &mut avg {
        *a *= inv;
    }
    Ok(accuracy_from_scores(&avg, labels, classes))
}

/// One row of the standard one-dimensional sweep: the model at grid index
/// `i` ensembled with the model at the mirrored index `n-1-i` (positions
/// `alpha` and `1-alpha` on a uniform grid).
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub ensemble_accuracy: f64,
}

/// Single-model and mirrored-pair ensemble accuracy across an alpha grid.
/// Pairing by grid index makes the ensemble column exactly symmetric, and at
/// the central point of an odd grid it coincides with the single model.
pub fn sweep_with_ensembles(
    spec: &NetworkSpec,
    subspace: &Subspace,
    alphas: &[f64],
    stats_data: &Dataset,
    eval_data: &Dataset,
    kind: LossKind,
) -> Result<Vec<SweepRow>> {
    let mut probs = Vec::with_capacity(alphas.len());
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let coord = SampleCoord::Global(Coord::Alpha(alpha));
        let params = subspace.eval_point(&coord)?;
        let stats = net::recompute_bn_stats(spec, &params, stats_data, EVAL_BATCH)?;
        let logits = dataset_logits(spec, &params, &stats, eval_data)?;
        let acc = accuracy_from_scores(&logits, eval_data.labels(), spec.num_classes());
        let mean_loss = loss::loss(&logits, eval_data.labels(), spec.num_classes(), kind)?;
        probs.push(loss::softmax_rows(&logits, spec.num_classes()));
        rows.push(SweepRow {
            alpha,
            accuracy: acc,
            loss: mean_loss,
            ensemble_accuracy: 0.0,
        });
    }
    let n = alphas.len();
    for i in 0..n {
        let j = n - 1 - i;
        let avg: Vec<f64> = probs[i]
            .iter()
            .zip(&probs[j])
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        rows[i].ensemble_accuracy =
            accuracy_from_scores(&avg, eval_data.labels(), spec.num_classes());
    }
    Ok(rows)
}

/// Ensemble of `n_members` models drawn with the training-time sampling
/// strategy (uniform over the simplex).
pub fn random_simplex_ensemble<R: rand::Rng + ?Sized>(
    spec: &NetworkSpec,
    subspace: &Subspace,
    stats_data: &Dataset,
    eval_data: &Dataset,
    n_members: usize,
    rng: &mut R,
) -> Result<f64> {
    if !matches!(subspace.kind(), crate::subspace::SubspaceKind::Simplex { .. }) {
        return Err(Error::Input(
            "random ensembles are drawn from simplex subspaces".into(),
        ));
    }
    if n_members == 0 {
        return Err(Error::Input("ensemble needs at least one member".into()));
    }
    let mut tables = Vec::with_capacity(n_members);
    for _ in 0..n_members {
        let coord = subspace.sample_coord(false, rng);
        let params = subspace.eval_point(&coord)?;
        let stats = net::recompute_bn_stats(spec, &params, stats_data, EVAL_BATCH)?;
        tables.push(dataset_probs(spec, &params, &stats, eval_data)?);
    }
    ensemble_accuracy_from_probs(&tables, eval_data.labels(), spec.num_classes())
}

fn check_prob_rows(probs: &[f64], classes: usize, tol: f64) -> Result<usize> {
    if classes == 0 || probs.is_empty() || !probs.len().is_multiple_of(classes) {
        return Err(Error::Input(format!(
            "{} values do not form rows of {classes} probabilities",
            probs.len()
        )));
    }
    for (r, row) in probs.chunks(classes).enumerate() {
        if row.iter().any(|&p| !(0.0..=1.0 + tol).contains(&p)) {
            return Err(Error::Input(format!("row {r} has entries outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::Input(format!(
                "row {r} sums to {sum}, expected 1 within {tol}"
            )));
        }
    }
    Ok(probs.len() / classes)
}

/// Expected calibration error over equal-width confidence bins (confidence
/// is the max predicted probability). Empty bins are skipped; bin members
/// are summed in a canonical order, so the result is exactly invariant to
/// sample order.
pub fn ece(probs: &[f64], labels: &[usize], classes: usize, n_bins: usize) -> Result<f64> {
    let n = check_prob_rows(probs, classes, 1e-9)?;
    if labels.len() != n {
        return Err(Error::Input(format!(
            "{} labels for {n} probability rows",
            labels.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::Input("ece needs at least one bin".into()));
    }
    let mut bins: Vec<Vec<(f64, bool)>> = vec![Vec::new(); n_bins];
    for (row, &y) in probs.chunks(classes).zip(labels) {
        let pred = argmax(row);
        let conf = row[pred];
        let idx = ((conf * n_bins as f64) as usize).min(n_bins - 1);
        bins[idx].push((conf, pred == y));
    }
    let mut total = 0.0;
    for members in &mut bins {
        if members.is_empty() {
            continue;
        }
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let count = members.len() as f64;
        let conf_sum: f64 = members.iter().map(|(c, _)| c).sum();
        let correct = members.iter().filter(|(_, ok)| *ok).count() as f64;
        total += (count / n as f64) * ((correct / count) - (conf_sum / count)).abs();
    }
    Ok(total)
}

/// Mean over examples of half the L1 distance between two probability rows.
pub fn tv_distance(p1: &[f64], p2: &[f64], classes: usize) -> Result<f64> {
    let n = check_prob_rows(p1, classes, 1e-9)?;
    if p2.len() != p1.len() {
        return Err(Error::Input(format!(
            "probability tables differ in shape: {} vs {}",
            p1.len(),
            p2.len()
        )));
    }
    check_prob_rows(p2, classes, 1e-9)?;
    let total: f64 = p1
        .chunks(classes)
        .zip(p2.chunks(classes))
        .map(|(a, b)| {
            0.5 * a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(total / n as f64)
}

/// Relative change in accuracy from a clean value `a` to a corrupted value
/// `b`: `(b - a) / a`.
pub fn relative_change(clean_acc: f64, corrupted_acc: f64) -> Result<f64> {
    if clean_acc <= 0.0 {
        return Err(Error::Input(format!(
            "relative change is undefined for clean accuracy {clean_acc}"
        )));
    }
    Ok((corrupted_acc - clean_acc) / clean_acc)
}

/// A rectangular grid in the plane spanned by three parameter vectors, with
/// mean loss and top-1 error per grid point.
#[derive(Debug, Clone, Serialize)]
pub struct PlaneGrid {
    /// Grid coordinates along the first basis direction.
    pub xs: Vec<f64>,
    /// Grid coordinates along the second basis direction.
    pub ys: Vec<f64>,
    /// Row-major `ys.len() x xs.len()` mean losses.
    pub loss: Vec<f64>,
    /// Row-major `ys.len() x xs.len()` top-1 errors.
    pub error: Vec<f64>,
    /// The three anchor vectors projected into the plane (the first at the
    /// origin, the second on the positive x axis).
    pub projected: [[f64; 2]; 3],
}

/// Evaluates the network over the plane through `w1`, `w2`, `w3`: an
/// orthonormal basis is built with `w1` at the origin and `u` along
/// `w2 - w1`, and the grid covers the projected triangle plus a margin
/// (fraction of the bounding box per side). Batch-norm statistics are
/// recomputed per grid point.
#[allow(clippy::too_many_arguments)]
pub fn plane_grid(
    spec: &NetworkSpec,
    w1: &ParamVector,
    w2: &ParamVector,
    w3: &ParamVector,
    stats_data: &Dataset,
    eval_data: &Dataset,
    kind: LossKind,
    resolution: usize,
    margin: f64,
) -> Result<PlaneGrid> {
    if !(w1.same_table(w2) && w1.same_table(w3)) {
        return Err(Error::Config("plane anchors have differing segment tables".into()));
    }
    if resolution < 2 {
        return Err(Error::Input("plane resolution must be at least 2".into()));
    }
    let d1: Vec<f64> = w2.values().iter().zip(w1.values()).map(|(a, b)| a - b).collect();
    let d1_norm = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
    if d1_norm < 1e-12 {
        return Err(Error::Numeric("plane anchors w1 and w2 coincide".into()));
    }
    let u: Vec<f64> = d1.iter().map(|v| v / d1_norm).collect();
    let d2: Vec<f64> = w3.values().iter().zip(w1.values()).map(|(a, b)| a - b).collect();
    let proj: f64 = d2.iter().zip(&u).map(|(a, b)| a * b).sum();
    let resid: Vec<f64> = d2.iter().zip(&u).map(|(a, b)| a - proj * b).collect();
    let resid_norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
    if resid_norm < 1e-12 {
        return Err(Error::Numeric(
            "plane anchors are collinear; the in-plane basis is degenerate".into(),
        ));
    }
    let v: Vec<f64> = resid.iter().map(|r| r / resid_norm).collect();

    let projected = [[0.0, 0.0], [d1_norm, 0.0], [proj, resid_norm]];
    let (mut xmin, mut xmax) = (0.0f64, 0.0f64);
    let (mut ymin, mut ymax) = (0.0f64, 0.0f64);
    for p in &projected {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let xpad = margin * (xmax - xmin);
    let ypad = margin * (ymax - ymin);
    let (xmin, xmax) = (xmin - xpad, xmax + xpad);
    let (ymin, ymax) = (ymin - ypad, ymax + ypad);

    let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let xs: Vec<f64> = (0..resolution).map(|i| lin(xmin, xmax, i)).collect();
    let ys: Vec<f64> = (0..resolution).map(|i| lin(ymin, ymax, i)).collect();

    let mut losses = Vec::with_capacity(resolution * resolution);
    let mut errors = Vec::with_capacity(resolution * resolution);
    let mut point = w1.clone();
    for &y in &ys {
        for &x in &xs {
            for ((p, base), (du, dv)) in point
                .values_mut()
                .iter_mut()
                .zip(w1.values())
                .zip(u.iter().zip(&v))
            {
                *p = base + x * du + y * dv;
            }
            let stats = net::recompute_bn_stats(spec, &point, stats_data, EVAL_BATCH)?;
            let (acc, mean_loss) = accuracy_and_loss(spec, &point, &stats, eval_data, kind)?;
            losses.push(mean_loss);
            errors.push(1.0 - acc);
        }
    }
    Ok(PlaneGrid {
        xs,
        ys,
        loss: losses,
        error: errors,
        projected,
    })
}

/// Summary evaluation of a trained subspace: endpoint and center accuracy,
/// the endpoint output ensemble, center calibration, endpoint output
/// distance, and endpoint geometry.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub grid: Vec<SweepPoint>,
    pub ensemble_grid: Vec<(f64, f64)>,
    pub midpoint_accuracy: f64,
    pub ece: f64,
    pub endpoint_tv: Option<f64>,
    pub geometry: Option<GeometryStats>,
    pub notes: String,
}

/// Builds an [`EvalReport`] for a subspace: the grid holds one row per
/// endpoint plus the center; the ensemble row pairs the first two endpoints.
pub fn evaluate_subspace(
    spec: &NetworkSpec,
    subspace: &Subspace,
    stats_data: &Dataset,
    eval_data: &Dataset,
    kind: LossKind,
    ece_bins: usize,
) -> Result<EvalReport> {
    let m = subspace.num_endpoints();
    let mut grid_coords = Vec::new();
    for i in 0..m {
        let coord = match subspace.kind() {
            crate::subspace::SubspaceKind::Simplex { m } => {
                let mut w = vec![0.0; m];
                w[i] = 1.0;
                SampleCoord::Global(Coord::Weights(w))
            }
            _ => {
                if i >= 2 {
                    continue; // the Bezier control point is not on the curve
                }
                SampleCoord::Global(Coord::Alpha(i as f64))
            }
        };
        grid_coords.push(coord);
    }
    grid_coords.push(subspace.center_coord());
    let grid = alpha_sweep(spec, subspace, &grid_coords, stats_data, eval_data, kind)?;

    let center = subspace.eval_point(&subspace.center_coord())?;
    let center_stats = net::recompute_bn_stats(spec, &center, stats_data, EVAL_BATCH)?;
    let midpoint_accuracy = *grid
        .last()
        .map(|p| &p.accuracy)
        .expect("grid includes the center");
    let center_probs = dataset_probs(spec, &center, &center_stats, eval_data)?;
    let ece_value = ece(&center_probs, eval_data.labels(), spec.num_classes(), ece_bins)?;

    let (ensemble_grid, endpoint_tv) = if m >= 2 {
        let ea = subspace.endpoints()[0].clone();
        let eb = subspace.endpoints()[1].clone();
        let sa = net::recompute_bn_stats(spec, &ea, stats_data, EVAL_BATCH)?;
        let sb = net::recompute_bn_stats(spec, &eb, stats_data, EVAL_BATCH)?;
        let ens = ensemble_accuracy(spec, &ea, &sa, &eb, &sb, eval_data)?;
        let pa = dataset_probs(spec, &ea, &sa, eval_data)?;
        let pb = dataset_probs(spec, &eb, &sb, eval_data)?;
        let tv = tv_distance(&pa, &pb, spec.num_classes())?;
        (vec![(0.0, ens)], Some(tv))
    } else {
        (Vec::new(), None)
    };

    let geometry = if m >= 2 {
        Some(subspace.geometry_stats()?)
    } else {
        None
    };

    Ok(EvalReport {
        grid,
        ensemble_grid,
        midpoint_accuracy,
        ece: ece_value,
        endpoint_tv,
        geometry,
        notes: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::net::LayerSpec;
    use crate::rng;
    use crate::subspace::SubspaceKind;

    fn constant_classifier(classes: usize, dim: usize, favored: usize) -> (NetworkSpec, ParamVector) {
        // zero weights, bias picks the favored class
        let spec = NetworkSpec::new(
            vec![
                LayerSpec::Dense {
                    inputs: dim,
                    outputs: classes,
                },
                LayerSpec::SoftmaxHead,
            ],
            dim,
            classes,
        )
        .unwrap();
        let mut params = ParamVector::zeros(spec.segment_table());
        let bias_offset = dim * classes;
        params.values_mut()[bias_offset + favored] = 5.0;
        (spec, params)
    }

    #[test]
    fn constant_classifier_scores_chance_on_balanced_data() {
        let data = synth_blobs(3, 1000, 2, 10, 0.1).unwrap();
        let (spec, params) = constant_classifier(10, 2, 0);
        let acc = accuracy(&spec, &params, &BNStats::default(), &data).unwrap();
        assert!((acc - 0.1).abs() < 1e-12);
    }

    #[test]
    fn perfect_memorizer_scores_one() {
        // label the dataset with the model's own predictions
        let inputs = synth_blobs(4, 80, 2, 4, 0.2).unwrap();
        let spec = NetworkSpec::mlp(2, &[6], 4, false).unwrap();
        let mut r = rng::stream(19, "init");
        let params = net::init_params(&spec, &mut r);
        let logits = dataset_logits(&spec, &params, &BNStats::default(), &inputs).unwrap();
        let labels: Vec<usize> = logits.chunks(4).map(argmax).collect();
        let relabeled =
            Dataset::from_parts("self", inputs.inputs().to_vec(), labels, 2, 4).unwrap();
        let acc = accuracy(&spec, &params, &BNStats::default(), &relabeled).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn accuracy_matches_manual_count_on_fixed_set() {
        let data = synth_blobs(5, 64, 2, 4, 0.05).unwrap();
        let spec = NetworkSpec::mlp(2, &[8], 4, false).unwrap();
        let mut r = rng::stream(17, "init");
        let params = net::init_params(&spec, &mut r);
        let logits = dataset_logits(&spec, &params, &BNStats::default(), &data).unwrap();
        let mut manual = 0usize;
        for (i, row) in logits.chunks(4).enumerate() {
            let mut best = 0;
            for c in 1..4 {
                if row[c] > row[best] {
                    best = c;
                }
            }
            if best == data.labels()[i] {
                manual += 1;
            }
        }
        let acc = accuracy(&spec, &params, &BNStats::default(), &data).unwrap();
        assert_eq!(acc, manual as f64 / 64.0);
    }

    #[test]
    fn untrained_sweep_sits_at_chance_level() {
        let (train, test) = crate::data::synth_blobs_split(7, 200, 4000, 2, 4, 0.1).unwrap();
        let spec = NetworkSpec::mlp(2, &[6], 4, false).unwrap();
        let mut r = rng::stream(23, "init");
        let line = Subspace::init(SubspaceKind::Line, &spec, &mut r, false).unwrap();
        let grid: Vec<SampleCoord> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&a| SampleCoord::Global(Coord::Alpha(a)))
            .collect();
        let points = alpha_sweep(&spec, &line, &grid, &train, &test, LossKind::default()).unwrap();
        let sigma = (0.25 * 0.75 / 4000.0f64).sqrt();
        for p in points {
            assert!(
                (p.accuracy - 0.25).abs() < 3.0 * sigma + 0.1,
                "untrained accuracy {} strays far from chance",
                p.accuracy
            );
        }
    }

    #[test]
    fn sweep_endpoints_match_direct_accuracy() {
        let (train, test) = crate::data::synth_blobs_split(9, 120, 120, 2, 3, 0.1).unwrap();
        let spec = NetworkSpec::mlp(2, &[5], 3, true).unwrap();
        let mut r = rng::stream(29, "init");
        let line = Subspace::init(SubspaceKind::Line, &spec, &mut r, false).unwrap();
        let rows =
            sweep_with_ensembles(&spec, &line, &[0.0, 1.0], &train, &test, LossKind::default())
                .unwrap();
        for (i, row) in rows.iter().enumerate() {
            let params = line.endpoints()[i].clone();
            let stats = net::recompute_bn_stats(&spec, &params, &train, EVAL_BATCH).unwrap();
            let direct = accuracy(&spec, &params, &stats, &test).unwrap();
            assert_eq!(row.accuracy, direct);
        }
    }

    #[test]
    fn self_ensemble_equals_single_accuracy() {
        let data = synth_blobs(11, 100, 2, 3, 0.2).unwrap();
        let spec = NetworkSpec::mlp(2, &[4], 3, false).unwrap();
        let mut r = rng::stream(31, "init");
        let params = net::init_params(&spec, &mut r);
        let stats = BNStats::default();
        let single = accuracy(&spec, &params, &stats, &data).unwrap();
        let ens = ensemble_accuracy(&spec, &params, &stats, &params, &stats, &data).unwrap();
        assert_eq!(single, ens);
    }

    #[test]
    fn ensemble_sweep_is_exactly_symmetric_and_intersects_at_center() {
        let (train, test) = crate::data::synth_blobs_split(13, 90, 150, 2, 3, 0.15).unwrap();
        let spec = NetworkSpec::mlp(2, &[5], 3, true).unwrap();
        let mut r = rng::stream(37, "init");
        let line = Subspace::init(SubspaceKind::Line, &spec, &mut r, false).unwrap();
        let alphas: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let rows =
            sweep_with_ensembles(&spec, &line, &alphas, &train, &test, LossKind::default())
                .unwrap();
        for i in 0..rows.len() {
            assert_eq!(
                rows[i].ensemble_accuracy,
                rows[rows.len() - 1 - i].ensemble_accuracy
            );
        }
        assert_eq!(rows[5].ensemble_accuracy, rows[5].accuracy);
    }

    #[test]
    fn ensemble_of_constant_classifiers_matches_enumeration() {
        // two constant classifiers with known probability tables
        let (spec, pa) = constant_classifier(3, 2, 0);
        let (_, pb) = constant_classifier(3, 2, 1);
        let data = synth_blobs(15, 90, 2, 3, 0.1).unwrap();
        let ens =
            ensemble_accuracy(&spec, &pa, &BNStats::default(), &pb, &BNStats::default(), &data)
                .unwrap();
        // brute-force oracle: average the two known softmax rows
        let row = |favored: usize| {
            let mut logits = [0.0; 3];
            logits[favored] = 5.0;
            let exps: Vec<f64> = logits.iter().map(|l: &f64| l.exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| e / z).collect::<Vec<f64>>()
        };
        let (ra, rb) = (row(0), row(1));
        let avg: Vec<f64> = ra.iter().zip(&rb).map(|(a, b)| (a + b) / 2.0).collect();
        let mut best = 0;
        for c in 1..3 {
            if avg[c] > avg[best] {
                best = c;
            }
        }
        let expected = data.labels().iter().filter(|&&y| y == best).count() as f64
            / data.len() as f64;
        assert_eq!(ens, expected);
    }

    #[test]
    fn ece_trivial_cases() {
        // always confident and correct
        let probs = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let labels = vec![0, 0, 0];
        assert_eq!(ece(&probs, &labels, 2, 15).unwrap(), 0.0);
        // single sample, confidence 0.8, incorrect
        let probs = vec![0.8, 0.2];
        assert_eq!(ece(&probs, &[1], 2, 15).unwrap(), 0.8);
    }

    #[test]
    fn ece_matches_hand_binning() {
        // 4 samples in 2 bins: confidences .6/.7 (bin 1) correct/incorrect,
        // .2/.4 impossible for 2 classes, use 3 classes for low conf rows
        let probs = vec![
            0.6, 0.3, 0.1, // conf .6, pred 0
            0.7, 0.2, 0.1, // conf .7, pred 0
            0.4, 0.35, 0.25, // conf .4, pred 0
            0.45, 0.3, 0.25, // conf .45, pred 0
        ];
        let labels = vec![0, 1, 0, 2];
        // bins of width .5: low bin holds {.4 correct, .45 incorrect},
        // high bin {.6 correct, .7 incorrect}
        let low = (0.5f64 - 0.85 / 2.0).abs() * 0.5;
        let high = (0.5f64 - 1.3 / 2.0).abs() * 0.5;
        let expected = low + high;
        let got = ece(&probs, &labels, 3, 2).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn ece_is_order_invariant() {
        let probs = vec![
            0.9, 0.1, //
            0.55, 0.45, //
            0.7, 0.3, //
            0.62, 0.38, //
        ];
        let labels = vec![0, 1, 0, 1];
        let fwd = ece(&probs, &labels, 2, 5).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut probs2 = Vec::new();
        let mut labels2 = Vec::new();
        for &i in &perm {
            probs2.extend_from_slice(&probs[i * 2..(i + 1) * 2]);
            labels2.push(labels[i]);
        }
        let rev = ece(&probs2, &labels2, 2, 5).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn malformed_probability_rows_are_rejected() {
        assert!(ece(&[0.5, 0.4], &[0], 2, 10).is_err());
        assert!(tv_distance(&[0.5, 0.6], &[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn tv_distance_arithmetic() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7], 2).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0], 2).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.75, 0.25], 2).unwrap(), 0.25);
    }

    #[test]
    fn tv_distance_is_a_metric_on_random_triples() {
        let mut r = rng::stream(41, "coord");
        use rand::Rng;
        for _ in 0..50 {
            let mut row = |_: usize| {
                let a: f64 = r.random();
                let b: f64 = r.random();
                let c: f64 = r.random();
                let z = a + b + c;
                vec![a / z, b / z, c / z]
            };
            let (p, q, s) = (row(0), row(1), row(2));
            let d_pq = tv_distance(&p, &q, 3).unwrap();
            let d_qp = tv_distance(&q, &p, 3).unwrap();
            assert!((d_pq - d_qp).abs() <= 1e-12);
            let d_ps = tv_distance(&p, &s, 3).unwrap();
            let d_sq = tv_distance(&s, &q, 3).unwrap();
            assert!(d_pq <= d_ps + d_sq + 1e-12);
        }
    }

    #[test]
    fn relative_change_arithmetic() {
        assert_eq!(relative_change(0.5, 0.5).unwrap(), 0.0);
        assert!((relative_change(0.8, 0.6).unwrap() + 0.25).abs() < 1e-12);
        assert!((relative_change(0.5, 0.55).unwrap() - 0.1).abs() < 1e-12);
        assert!(relative_change(0.0, 0.5).is_err());
    }

    #[test]
    fn plane_grid_geometry() {
        let (train, test) = crate::data::synth_blobs_split(17, 60, 60, 2, 3, 0.15).unwrap();
        let spec = NetworkSpec::mlp(2, &[4], 3, false).unwrap();
        let mut r = rng::stream(43, "init");
        let w1 = net::init_params(&spec, &mut r);
        let w2 = net::init_params(&spec, &mut r);
        let w3 = net::init_params(&spec, &mut r);
        let grid = plane_grid(
            &spec,
            &w1,
            &w2,
            &w3,
            &train,
            &test,
            LossKind::default(),
            5,
            0.2,
        )
        .unwrap();

        // projection contract
        let d1: Vec<f64> = w2.values().iter().zip(w1.values()).map(|(a, b)| a - b).collect();
        let norm = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((grid.projected[1][0] - norm).abs() < 1e-10);
        assert_eq!(grid.projected[1][1], 0.0);
        assert!(grid.projected[2][1] > 0.0);

        // direct inner-product oracle for the third anchor
        let u: Vec<f64> = d1.iter().map(|v| v / norm).collect();
        let d2: Vec<f64> = w3.values().iter().zip(w1.values()).map(|(a, b)| a - b).collect();
        let proj: f64 = d2.iter().zip(&u).map(|(a, b)| a * b).sum();
        let resid: f64 = d2
            .iter()
            .zip(&u)
            .map(|(a, b)| a - proj * b)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((grid.projected[2][0] - proj).abs() < 1e-10);
        assert!((grid.projected[2][1] - resid).abs() < 1e-10);

        // basis orthonormality
        let vvec: Vec<f64> = d2
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - proj * b) / resid)
            .collect();
        let uu: f64 = u.iter().map(|a| a * a).sum();
        let vv: f64 = vvec.iter().map(|a| a * a).sum();
        let uv: f64 = u.iter().zip(&vvec).map(|(a, b)| a * b).sum();
        assert!((uu - 1.0).abs() < 1e-10 && (vv - 1.0).abs() < 1e-10 && uv.abs() < 1e-10);
        assert_eq!(grid.loss.len(), 25);
    }

    #[test]
    fn plane_grid_origin_matches_direct_evaluation() {
        let (train, test) = crate::data::synth_blobs_split(19, 60, 60, 2, 3, 0.15).unwrap();
        let spec = NetworkSpec::mlp(2, &[4], 3, false).unwrap();
        let mut r = rng::stream(47, "init");
        let w1 = net::init_params(&spec, &mut r);
        let w2 = net::init_params(&spec, &mut r);
        let w3 = net::init_params(&spec, &mut r);
        // zero margin leaves w1's projection exactly on a grid corner
        let grid = plane_grid(
            &spec,
            &w1,
            &w2,
            &w3,
            &train,
            &test,
            LossKind::default(),
            3,
            0.0,
        )
        .unwrap();
        // w1 sits at (0, 0); find that grid point
        let xi = grid.xs.iter().position(|&x| x == 0.0).unwrap();
        let yi = grid.ys.iter().position(|&y| y == 0.0).unwrap();
        let (acc, mean_loss) =
            accuracy_and_loss(&spec, &w1, &BNStats::default(), &test, LossKind::default())
                .unwrap();
        let idx = yi * grid.xs.len() + xi;
        assert_eq!(grid.loss[idx], mean_loss);
        assert_eq!(grid.error[idx], 1.0 - acc);
    }

    #[test]
    fn collinear_plane_anchors_are_rejected() {
        let spec = NetworkSpec::mlp(2, &[3], 2, false).unwrap();
        let mut r = rng::stream(53, "init");
        let w1 = net::init_params(&spec, &mut r);
        let w2 = net::init_params(&spec, &mut r);
        let mut w3 = w1.clone();
        w3.add_scaled(&w2, 1.0);
        w3.scale(0.5); // midpoint of w1 and w2: collinear
        let data = synth_blobs(21, 30, 2, 2, 0.1).unwrap();
        let err = plane_grid(
            &spec,
            &w1,
            &w2,
            &w3,
            &data,
            &data,
            LossKind::default(),
            3,
            0.2,
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn random_simplex_ensemble_on_degenerate_simplex_equals_endpoint() {
        let (train, test) = crate::data::synth_blobs_split(23, 80, 80, 2, 3, 0.15).unwrap();
        let spec = NetworkSpec::mlp(2, &[4], 3, true).unwrap();
        let mut r = rng::stream(59, "init");
        let s = Subspace::init(SubspaceKind::Simplex { m: 1 }, &spec, &mut r, false).unwrap();
        let mut ens_rng = rng::stream(59, "ensemble");
        let ens = random_simplex_ensemble(&spec, &s, &train, &test, 4, &mut ens_rng).unwrap();
        let stats = net::recompute_bn_stats(&spec, &s.endpoints()[0], &train, EVAL_BATCH).unwrap();
        let direct = accuracy(&spec, &s.endpoints()[0], &stats, &test).unwrap();
        assert_eq!(ens, direct);
    }
}
