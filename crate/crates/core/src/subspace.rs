//! Subspace parameterizations over flat weight vectors: lines, quadratic
//! Bezier curves with one bend, and simplexes with `m` endpoints.
//!
//! All three are convex combinations `P(coord) = sum_i c_i(coord) w_i`, so a
//! sampled point, its gradient routing, and the layerwise variant share one
//! coefficient computation. The Bezier control point is stored as the third
//! endpoint and participates in regularizer pair sampling like any other.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::net::NetworkSpec;
use crate::params::ParamVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubspaceKind {
    Line,
    Bezier1,
    Simplex { m: usize },
}

impl SubspaceKind {
    pub fn num_endpoints(self) -> usize {
        match self {
            SubspaceKind::Line => 2,
            SubspaceKind::Bezier1 => 3,
            SubspaceKind::Simplex { m } => m,
        }
    }

    pub fn validate(self) -> Result<()> {
        if let SubspaceKind::Simplex { m } = self {
            if m == 0 {
                return Err(Error::Config("simplex needs at least one endpoint".into()));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for SubspaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubspaceKind::Line => write!(f, "line"),
            SubspaceKind::Bezier1 => write!(f, "bezier1"),
            SubspaceKind::Simplex { m } => write!(f, "simplex({m})"),
        }
    }
}

/// One point of the sampling domain: a scalar position for lines and Bezier
/// curves, or a weight vector on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub enum Coord {
    Alpha(f64),
    Weights(Vec<f64>),
}

impl Coord {
    pub fn describe(&self) -> String {
        match self {
            Coord::Alpha(a) => format!("{a}"),
            Coord::Weights(w) => format!(
                "({})",
                w.iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        }
    }
}

/// A sampled coordinate: one global value, or one value per layer group.
/// Layerwise entries follow the segment table's group order and cover every
/// group exactly once.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleCoord {
    Global(Coord),
    Layerwise(Vec<Coord>),
}

impl SampleCoord {
    pub fn describe(&self) -> String {
        match self {
            SampleCoord::Global(c) => c.describe(),
            SampleCoord::Layerwise(cs) => format!(
                "layerwise[{}]",
                cs.iter().map(Coord::describe).collect::<Vec<_>>().join("; ")
            ),
        }
    }
}

/// Per-endpoint convex-combination coefficients at `coord`. Coefficients are
/// non-negative and sum to one; ordering matches the endpoint order (for a
/// Bezier curve: the two endpoints, then the control point).
pub fn coefficients(kind: SubspaceKind, coord: &Coord) -> Result<Vec<f64>> {
    match (kind, coord) {
        (SubspaceKind::Line, Coord::Alpha(a)) => {
            check_unit_interval(*a)?;
            Ok(vec![1.0 - a, *a])
        }
        (SubspaceKind::Bezier1, Coord::Alpha(a)) => {
            check_unit_interval(*a)?;
            Ok(bezier_coeffs(*a))
        }
        (SubspaceKind::Simplex { m }, Coord::Weights(w)) => {
            if w.len() != m {
                return Err(Error::Input(format!(
                    "simplex weight vector has {} entries, expected {m}",
                    w.len()
                )));
            }
            if w.iter().any(|&v| v < 0.0) {
                return Err(Error::Input(format!(
                    "simplex weights must be non-negative, got {w:?}"
                )));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Input(format!(
                    "simplex weights sum to {sum}, expected 1 within 1e-12"
                )));
            }
            Ok(w.clone())
        }
        _ => Err(Error::Input(format!(
            "coordinate {coord:?} does not match subspace kind {kind}"
        ))),
    }
}

fn check_unit_interval(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Input(format!("coordinate {a} outside [0, 1]")));
    }
    Ok(())
}

fn bezier_coeffs(a: f64) -> Vec<f64> {
    vec![(1.0 - a) * (1.0 - a), a * a, 2.0 * a * (1.0 - a)]
}

/// Coefficients without the domain check, used for off-domain extrapolation
/// of one-dimensional subspaces (they stop being convex combinations there).
fn coefficients_unclamped(kind: SubspaceKind, a: f64) -> Result<Vec<f64>> {
    match kind {
        SubspaceKind::Line => Ok(vec![1.0 - a, a]),
        SubspaceKind::Bezier1 => Ok(bezier_coeffs(a)),
        SubspaceKind::Simplex { .. } => Err(Error::Input(
            "extrapolation is only defined for one-dimensional subspaces".into(),
        )),
    }
}

/// Samples a coordinate uniformly from the kind's domain: `U[0, 1]` for lines
/// and Bezier curves, uniform on the probability simplex (normalized
/// unit-rate exponentials) for simplexes.
pub fn sample_global<R: Rng + ?Sized>(kind: SubspaceKind, rng: &mut R) -> Coord {
    match kind {
        SubspaceKind::Line | SubspaceKind::Bezier1 => Coord::Alpha(rng.random()),
        SubspaceKind::Simplex { m } => {
            if m == 1 {
                // degenerate simplex: no randomness to consume
                return Coord::Weights(vec![1.0]);
            }
            let mut draws: Vec<f64> = (0..m)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let sum: f64 = draws.iter().sum();
            for d in &mut draws {
                *d /= sum;
            }
            Coord::Weights(draws)
        }
    }
}

/// Uniform draw over unordered distinct endpoint pairs; `None` when fewer
/// than two endpoints exist (the regularizer is skipped).
pub fn pair_sample<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Option<(usize, usize)> {
    if m < 2 {
        return None;
    }
    let j = rng.random_range(0..m);
    let mut k = rng.random_range(0..m - 1);
    if k >= j {
        k += 1;
    }
    Some((j, k))
}

/// Squared cosine similarity between two parameter vectors over the
/// non-batch-norm mask, with its exact gradients (zero on batch-norm
/// coordinates).
pub fn cosine_reg(wj: &ParamVector, wk: &ParamVector) -> Result<(f64, ParamVector, ParamVector)> {
    if !wj.same_table(wk) {
        return Err(Error::Config(
            "cosine regularizer: segment tables differ".into(),
        ));
    }
    let dot = wj.masked_dot(wk);
    let na = wj.masked_norm_sq();
    let nb = wk.masked_norm_sq();
    if na == 0.0 || nb == 0.0 {
        let side = if na == 0.0 { "first" } else { "second" };
        return Err(Error::Numeric(format!(
            "cosine regularizer: {side} operand has zero norm on the non-batch-norm mask"
        )));
    }
    let value = dot * dot / (na * nb);
    let mut grad_j = ParamVector::zeros(Arc::clone(wj.table()));
    let mut grad_k = ParamVector::zeros(Arc::clone(wk.table()));
    let cj = 2.0 * dot / (na * nb);
    let cjj = 2.0 * dot * dot / (na * na * nb);
    let ck = 2.0 * dot / (na * nb);
    let ckk = 2.0 * dot * dot / (na * nb * nb);
    for r in wj.table().non_bn_ranges() {
        for l in r {
            grad_j.values_mut()[l] = cj * wk.values()[l] - cjj * wj.values()[l];
            grad_k.values_mut()[l] = ck * wj.values()[l] - ckk * wk.values()[l];
        }
    }
    Ok((value, grad_j, grad_k))
}

#[derive(Debug, Clone, Serialize)]
pub struct PairStat {
    pub i: usize,
    pub j: usize,
    pub l2: f64,
    pub cos2: f64,
}

/// Pairwise endpoint geometry over the non-batch-norm mask, plus averages.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryStats {
    pub pairs: Vec<PairStat>,
    pub avg_l2: f64,
    pub avg_cos2: f64,
}

/// A subspace: kind plus its endpoint parameter vectors (all sharing one
/// segment table).
#[derive(Debug, Clone)]
pub struct Subspace {
    kind: SubspaceKind,
    endpoints: Vec<ParamVector>,
}

impl Subspace {
    pub fn from_endpoints(kind: SubspaceKind, endpoints: Vec<ParamVector>) -> Result<Self> {
        kind.validate()?;
        if endpoints.len() != kind.num_endpoints() {
            return Err(Error::Config(format!(
                "{kind} needs {} endpoints, got {}",
                kind.num_endpoints(),
                endpoints.len()
            )));
        }
        if let Some(first) = endpoints.first() {
            if !endpoints.iter().all(|e| e.same_table(first)) {
                return Err(Error::Config(
                    "subspace endpoints have differing segment tables".into(),
                ));
            }
        }
        Ok(Subspace { kind, endpoints })
    }

    /// Initializes endpoints with Kaiming-normal draws: independent per
    /// endpoint by default, or one shared draw when `point_init` is set.
    pub fn init<R: Rng + ?Sized>(
        kind: SubspaceKind,
        spec: &NetworkSpec,
        rng: &mut R,
        point_init: bool,
    ) -> Result<Self> {
        kind.validate()?;
        let m = kind.num_endpoints();
        let endpoints = if point_init {
            let shared = crate::net::init_params(spec, rng);
            vec![shared; m]
        } else {
            (0..m).map(|_| crate::net::init_params(spec, rng)).collect()
        };
        Subspace::from_endpoints(kind, endpoints)
    }

    pub fn kind(&self) -> SubspaceKind {
        self.kind
    }

    pub fn num_endpoints(&self) -> usize {
        self.endpoints.len()
    }

    pub fn endpoints(&self) -> &[ParamVector] {
        &self.endpoints
    }

    pub fn endpoints_mut(&mut self) -> &mut [ParamVector] {
        &mut self.endpoints
    }

    /// The coordinate of the subspace center: position 0.5 for lines and
    /// Bezier curves, uniform weights for simplexes.
    pub fn center_coord(&self) -> SampleCoord {
        let coord = match self.kind {
            SubspaceKind::Line | SubspaceKind::Bezier1 => Coord::Alpha(0.5),
            SubspaceKind::Simplex { m } => Coord::Weights(vec![1.0 / m as f64; m]),
        };
        SampleCoord::Global(coord)
    }

    /// Samples a training coordinate: one global draw, or one independent
    /// draw per layer group in layerwise mode.
    pub fn sample_coord<R: Rng + ?Sized>(&self, layerwise: bool, rng: &mut R) -> SampleCoord {
        if layerwise {
            let groups = self.endpoints[0].table().groups().len();
            SampleCoord::Layerwise(
                (0..groups)
                    .map(|_| sample_global(self.kind, rng))
                    .collect(),
            )
        } else {
            SampleCoord::Global(sample_global(self.kind, rng))
        }
    }

    fn check_layerwise(&self, coords: &[Coord]) -> Result<()> {
        let groups = self.endpoints[0].table().groups().len();
        if coords.len() != groups {
            return Err(Error::Input(format!(
                "layerwise coordinate has {} entries, expected one per layer group ({groups})",
                coords.len()
            )));
        }
        Ok(())
    }

    /// Evaluates `P(coord)`: the convex combination of the endpoints, applied
    /// per layer group in layerwise mode. The segment table is preserved.
    pub fn eval_point(&self, coord: &SampleCoord) -> Result<ParamVector> {
        match coord {
            SampleCoord::Global(c) => {
                let coeffs = coefficients(self.kind, c)?;
                let refs: Vec<&ParamVector> = self.endpoints.iter().collect();
                Ok(ParamVector::linear_combination(&coeffs, &refs))
            }
            SampleCoord::Layerwise(cs) => {
                self.check_layerwise(cs)?;
                let mut out = ParamVector::zeros(Arc::clone(self.endpoints[0].table()));
                let groups: Vec<_> = self.endpoints[0].table().groups().to_vec();
                for (group, c) in groups.iter().zip(cs) {
                    let coeffs = coefficients(self.kind, c)?;
                    let range = group.offset..group.offset + group.length;
                    for (coef, endpoint) in coeffs.iter().zip(&self.endpoints) {
                        out.add_scaled_range(endpoint, *coef, range.clone());
                    }
                }
                Ok(out)
            }
        }
    }

    /// Evaluates the one-dimensional parameterization at an arbitrary real
    /// position, extending linearly beyond `[0, 1]`.
    pub fn eval_point_unclamped(&self, alpha: f64) -> Result<ParamVector> {
        let coeffs = coefficients_unclamped(self.kind, alpha)?;
        let refs: Vec<&ParamVector> = self.endpoints.iter().collect();
        Ok(ParamVector::linear_combination(&coeffs, &refs))
    }

    /// Routes a gradient w.r.t. the sampled point back to the endpoints:
    /// endpoint `i` receives `c_i * grad` with the same coefficients as
    /// `eval_point`.
    pub fn route_gradient(
        &self,
        coord: &SampleCoord,
        grad_theta: &ParamVector,
    ) -> Result<Vec<ParamVector>> {
        if !grad_theta.same_table(&self.endpoints[0]) {
            return Err(Error::Config(
                "gradient segment table does not match subspace endpoints".into(),
            ));
        }
        match coord {
            SampleCoord::Global(c) => {
                let coeffs = coefficients(self.kind, c)?;
                Ok(coeffs
                    .iter()
                    .map(|&coef| {
                        let mut g = ParamVector::zeros(Arc::clone(grad_theta.table()));
                        g.add_scaled(grad_theta, coef);
                        g
                    })
                    .collect())
            }
            SampleCoord::Layerwise(cs) => {
                self.check_layerwise(cs)?;
                let groups: Vec<_> = grad_theta.table().groups().to_vec();
                let mut grads: Vec<ParamVector> = (0..self.num_endpoints())
                    .map(|_| ParamVector::zeros(Arc::clone(grad_theta.table())))
                    .collect();
                for (group, c) in groups.iter().zip(cs) {
                    let coeffs = coefficients(self.kind, c)?;
                    let range = group.offset..group.offset + group.length;
                    for (coef, g) in coeffs.iter().zip(&mut grads) {
                        g.add_scaled_range(grad_theta, *coef, range.clone());
                    }
                }
                Ok(grads)
            }
        }
    }

    /// Pairwise L2 distance and squared cosine similarity between endpoints,
    /// over the non-batch-norm mask.
    pub fn geometry_stats(&self) -> Result<GeometryStats> {
        let m = self.num_endpoints();
        if m < 2 {
            return Err(Error::Input(
                "geometry stats need at least two endpoints".into(),
            ));
        }
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                let a = &self.endpoints[i];
                let b = &self.endpoints[j];
                let l2 = a.masked_l2_distance(b);
                let dot = a.masked_dot(b);
                let cos2 = dot * dot / (a.masked_norm_sq() * b.masked_norm_sq());
                pairs.push(PairStat { i, j, l2, cos2 });
            }
        }
        let n = pairs.len() as f64;
        let avg_l2 = pairs.iter().map(|p| p.l2).sum::<f64>() / n;
        let avg_cos2 = pairs.iter().map(|p| p.cos2).sum::<f64>() / n;
        Ok(GeometryStats {
            pairs,
            avg_l2,
            avg_cos2,
        })
    }
}
