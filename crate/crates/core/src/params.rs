//! Flat parameter vectors with layer segmentation.
//!
//! Every network's weights live in one `Vec<f64>` described by a
//! [`SegmentTable`]: a sorted, contiguous, non-overlapping list of segments
//! that exactly covers the vector. All subspace endpoints for a given network
//! share the same table, which makes interpolation, gradient routing, and the
//! batch-norm mask cheap slice arithmetic.
//!
//! Arithmetic helpers treat table mismatches as programmer error and panic;
//! the public operations in `subspace`/`trainer` validate tables at their
//! boundaries and return `Result`.

use std::cell::Cell;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// What a segment of the flat vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    DenseWeight,
    DenseBias,
    BnGain,
    BnShift,
}

impl SegmentKind {
    /// True for batch-norm gain/shift segments, which are excluded from the
    /// regularizer and from endpoint distance metrics.
    pub fn is_batch_norm(self) -> bool {
        matches!(self, SegmentKind::BnGain | SegmentKind::BnShift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer_index: usize,
    pub kind: SegmentKind,
    pub offset: usize,
    pub length: usize,
}

/// One layerwise-sampling group: a dense layer with its bias, or one
/// batch-norm layer. Groups are contiguous in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGroup {
    pub layer_index: usize,
    pub offset: usize,
    pub length: usize,
}

/// Validated segment layout shared by all parameter vectors of one network.
#[derive(Debug, PartialEq, Eq)]
pub struct SegmentTable {
    segments: Vec<Segment>,
    groups: Vec<LayerGroup>,
    total_len: usize,
}

impl SegmentTable {
    /// Builds a table from segments, enforcing the layout invariants:
    /// sorted by offset, non-overlapping, contiguous, exact cover.
    pub fn new(segments: Vec<Segment>) -> crate::Result<Arc<Self>> {
        let mut expected = 0usize;
        for seg in &segments {
            if seg.offset != expected {
                return Err(crate::Error::Config(format!(
                    "segment at offset {} is not contiguous (expected offset {})",
                    seg.offset, expected
                )));
            }
            if seg.length == 0 {
                return Err(crate::Error::Config(format!(
                    "zero-length segment at offset {}",
                    seg.offset
                )));
            }
            expected += seg.length;
        }

        let mut groups: Vec<LayerGroup> = Vec::new();
        for seg in &segments {
            match groups.last_mut() {
                Some(g) if g.layer_index == seg.layer_index => g.length += seg.length,
                _ => groups.push(LayerGroup {
                    layer_index: seg.layer_index,
                    offset: seg.offset,
                    length: seg.length,
                }),
            }
        }

        Ok(Arc::new(SegmentTable {
            segments,
            groups,
            total_len: expected,
        }))
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Layerwise sampling groups, in layer order.
    pub fn groups(&self) -> &[LayerGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.total_len
    }

    pub fn is_empty(&self) -> bool {
        self.total_len == 0
    }

    /// Ranges of coordinates that are *not* batch-norm parameters, derived
    /// purely from the segment kinds.
    pub fn non_bn_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.segments
            .iter()
            .filter(|s| !s.kind.is_batch_norm())
            .map(|s| s.offset..s.offset + s.length)
    }

    /// Boolean batch-norm mask (true on bn_gain/bn_shift coordinates).
    pub fn bn_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total_len];
        for seg in self.segments.iter().filter(|s| s.kind.is_batch_norm()) {
            mask[seg.offset..seg.offset + seg.length].fill(true);
        }
        mask
    }

    pub fn has_batch_norm(&self) -> bool {
        self.segments.iter().any(|s| s.kind.is_batch_norm())
    }
}

thread_local! {
    static ARITH_OPS: Cell<u64> = const { Cell::new(0) };
}

fn count_ops(n: usize) {
    ARITH_OPS.with(|c| c.set(c.get() + n as u64));
}

/// Resets this thread's parameter-arithmetic element counter.
///
/// The counter tallies how many vector elements the `ParamVector` arithmetic
/// helpers touch; the trainer's per-step overhead contract (element work
/// proportional to the parameter count times the endpoint count, independent
/// of batch size) is asserted against it.
pub fn reset_arith_ops() {
    ARITH_OPS.with(|c| c.set(0));
}

/// Elements touched by parameter arithmetic on this thread since the last reset.
pub fn arith_ops() -> u64 {
    ARITH_OPS.with(|c| c.get())
}

/// A flat weight vector plus its shared segment table.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    table: Arc<SegmentTable>,
}

impl ParamVector {
    pub fn zeros(table: Arc<SegmentTable>) -> Self {
        let values = vec![0.0; table.len()];
        ParamVector { values, table }
    }

    pub fn from_values(table: Arc<SegmentTable>, values: Vec<f64>) -> crate::Result<Self> {
        if values.len() != table.len() {
            return Err(crate::Error::Config(format!(
                "value count {} does not match segment table length {}",
                values.len(),
                table.len()
            )));
        }
        Ok(ParamVector { values, table })
    }

    pub fn table(&self) -> &Arc<SegmentTable> {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// True when both vectors share one segment table (pointer or content).
    pub fn same_table(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.table, &other.table) || self.table == other.table
    }

    fn assert_same_table(&self, other: &ParamVector) {
        assert!(
            self.same_table(other),
            "parameter vectors have different segment tables"
        );
    }

    /// `self += s * other` over the full vector.
    pub fn add_scaled(&mut self, other: &ParamVector, s: f64) {
        self.assert_same_table(other);
        count_ops(self.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    /// `self += s * other` on one coordinate range.
    pub fn add_scaled_range(&mut self, other: &ParamVector, s: f64, range: std::ops::Range<usize>) {
        self.assert_same_table(other);
        count_ops(range.len());
        for (a, b) in self.values[range.clone()]
            .iter_mut()
            .zip(&other.values[range])
        {
            *a += s * b;
        }
    }

    /// `self *= s`.
    pub fn scale(&mut self, s: f64) {
        count_ops(self.values.len());
        for a in &mut self.values {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        count_ops(self.values.len());
        self.values.fill(v);
    }

    /// Returns `sum_i coeffs[i] * vecs[i]`. All inputs must share a table.
    pub fn linear_combination(coeffs: &[f64], vecs: &[&ParamVector]) -> ParamVector {
        assert_eq!(coeffs.len(), vecs.len(), "coefficient/vector count mismatch");
        assert!(!vecs.is_empty(), "empty linear combination");
        let mut out = ParamVector::zeros(Arc::clone(&vecs[0].table));
        for (&c, v) in coeffs.iter().zip(vecs) {
            out.add_scaled(v, c);
        }
        out
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.assert_same_table(other);
        count_ops(self.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Dot product restricted to non-batch-norm coordinates.
    pub fn masked_dot(&self, other: &ParamVector) -> f64 {
        self.assert_same_table(other);
        let mut acc = 0.0;
        for r in self.table.non_bn_ranges() {
            count_ops(r.len());
            acc += self.values[r.clone()]
                .iter()
                .zip(&other.values[r])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        acc
    }

    /// Squared L2 norm over non-batch-norm coordinates.
    pub fn masked_norm_sq(&self) -> f64 {
        self.masked_dot(self)
    }

    /// Euclidean distance to `other` over non-batch-norm coordinates.
    pub fn masked_l2_distance(&self, other: &ParamVector) -> f64 {
        self.assert_same_table(other);
        let mut acc = 0.0;
        for r in self.table.non_bn_ranges() {
            count_ops(r.len());
            acc += self.values[r.clone()]
                .iter()
                .zip(&other.values[r])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_table() -> Arc<SegmentTable> {
        SegmentTable::new(vec![
            Segment {
                layer_index: 0,
                kind: SegmentKind::DenseWeight,
                offset: 0,
                length: 4,
            },
            Segment {
                layer_index: 0,
                kind: SegmentKind::DenseBias,
                offset: 4,
                length: 2,
            },
            Segment {
                layer_index: 1,
                kind: SegmentKind::BnGain,
                offset: 6,
                length: 2,
            },
            Segment {
                layer_index: 1,
                kind: SegmentKind::BnShift,
                offset: 8,
                length: 2,
            },
        ])
        .unwrap()
    }

    #[test]
    fn rejects_non_contiguous_segments() {
        let err = SegmentTable::new(vec![Segment {
            layer_index: 0,
            kind: SegmentKind::DenseWeight,
            offset: 1,
            length: 3,
        }]);
        assert!(err.is_err());
    }

    #[test]
    fn groups_merge_dense_weight_and_bias() {
        let table = toy_table();
        let groups = table.groups();
        assert_eq!(groups.len(), 2);
        assert_eq!((groups[0].offset, groups[0].length), (0, 6));
        assert_eq!((groups[1].offset, groups[1].length), (6, 4));
    }

    #[test]
    fn bn_mask_follows_segment_kinds() {
        let table = toy_table();
        let mask = table.bn_mask();
        assert_eq!(&mask[..6], &[false; 6]);
        assert_eq!(&mask[6..], &[true; 4]);
    }

    #[test]
    fn arithmetic_preserves_table() {
        let table = toy_table();
        let mut a = ParamVector::zeros(Arc::clone(&table));
        let b = ParamVector::from_values(Arc::clone(&table), (0..10).map(|i| i as f64).collect())
            .unwrap();
        a.add_scaled(&b, 2.0);
        a.scale(0.5);
        let c = ParamVector::linear_combination(&[0.25, 0.75], &[&a, &b]);
        assert!(c.same_table(&b));
        assert_eq!(c.values()[3], 3.0);
    }

    #[test]
    fn masked_ops_skip_batch_norm_coordinates() {
        let table = toy_table();
        let mut a = ParamVector::zeros(Arc::clone(&table));
        let mut b = ParamVector::zeros(Arc::clone(&table));
        a.values_mut()[0] = 3.0;
        b.values_mut()[0] = 2.0;
        // Values on bn coordinates must not contribute.
        a.values_mut()[7] = 100.0;
        b.values_mut()[7] = 100.0;
        assert_eq!(a.masked_dot(&b), 6.0);
        assert_eq!(a.masked_norm_sq(), 9.0);
        assert_eq!(a.masked_l2_distance(&b), 1.0);
    }

    #[test]
    fn op_counter_tracks_touched_elements() {
        let table = toy_table();
        let mut a = ParamVector::zeros(Arc::clone(&table));
        let b = ParamVector::zeros(Arc::clone(&table));
        reset_arith_ops();
        a.add_scaled(&b, 1.0);
        assert_eq!(arith_ops(), 10);
    }
}
