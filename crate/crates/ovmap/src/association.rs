//! Matching frame segments and frame instances to persistent map labels.
//!
//! Segments are matched geometrically: each segment's 3D points are
//! looked up in the map, and a persistent label whose voxels collect
//! strictly more than `tau_pi` of a segment's points claims that
//! segment. Frame instances are then matched through the Φ table, which
//! remembers how often each persistent segment was seen under each
//! persistent instance. Everything here is deterministic: segments are
//! always processed largest-first (ties by region id), and label/count
//! ties always break toward the smaller id.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::RigidPose;
use crate::labels::{InstanceLabel, SegmentLabel};
use crate::map::{CountTables, VoxelGrid};
use crate::segmentation::FrameSegment;

/// Monotone counters for persistent labels. Labels start at 1 and are
/// never reused; 0 stays reserved for "unlabeled".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersistentLabels {
    next_segment: u32,
    next_instance: u32,
}

impl Default for PersistentLabels {
    fn default() -> Self {
        Self::new()
    }
}

impl PersistentLabels {
    pub fn new() -> Self {
        Self {
            next_segment: 1,
            next_instance: 1,
        }
    }

    /// Restores counters from a saved session. Counters below 1 would
    /// hand out the reserved label and are rejected.
    pub fn from_counters(next_segment: u32, next_instance: u32) -> Option<Self> {
        if next_segment == 0 || next_instance == 0 {
            return None;
        }
        Some(Self {
            next_segment,
            next_instance,
        })
    }

    pub fn fresh_segment(&mut self) -> SegmentLabel {
        let label = SegmentLabel(self.next_segment);
        self.next_segment += 1;
        label
    }

    pub fn fresh_instance(&mut self) -> InstanceLabel {
        let label = InstanceLabel(self.next_instance);
        self.next_instance += 1;
        label
    }

    pub fn next_segment(&self) -> u32 {
        self.next_segment
    }

    pub fn next_instance(&self) -> u32 {
        self.next_instance
    }
}

/// Sparse point-in-voxel overlap counts between frame segments and
/// persistent labels.
#[derive(Debug, Clone, Default)]
pub struct OverlapCounts {
    /// (frame segment index, persistent label) -> point count.
    counts: BTreeMap<(usize, SegmentLabel), u64>,
}

impl OverlapCounts {
    pub fn count(&self, segment: usize, label: SegmentLabel) -> u64 {
        self.counts.get(&(segment, label)).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, SegmentLabel, u64)> + '_ {
        self.counts.iter().map(|(&(i, l), &c)| (i, l, c))
    }
}

/// Counts, per frame segment, how many of its points land in voxels
/// carrying each persistent label. Points count individually even when
/// they share a voxel. Only labels actually hit appear, which makes map
/// segments outside the current view invisible to matching.
pub fn compute_3d_overlaps(
    segments: &[FrameSegment],
    grid: &VoxelGrid,
    pose: &RigidPose,
) -> OverlapCounts {
    let mut overlaps = OverlapCounts::default();
    for (i, segment) in segments.iter().enumerate() {
        for point in &segment.points {
            let world = pose.transform_point(point);
            if let Some(label) = grid.lookup_voxel_label(&world) {
                *overlaps.counts.entry((i, label)).or_insert(0) += 1;
            }
        }
    }
    overlaps
}

/// Overlap threshold adjusted for point subsampling: `tau_pi` is an
/// absolute point count at full resolution, and a stride-s grid keeps
/// roughly 1/s^2 of a segment's points.
pub fn effective_tau_pi(tau_pi: f64, point_stride: u32) -> f64 {
    tau_pi / (point_stride.max(1) as f64).powi(2)
}

/// Fixed processing order for all association decisions: descending
/// pixel count, ties by ascending region id.
pub fn processing_order(segments: &[FrameSegment]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| {
        segments[b]
            .region
            .pixel_count()
            .cmp(&segments[a].region.pixel_count())
            .then(segments[a].region.id.cmp(&segments[b].region.id))
    });
    order
}

/// Persistent segment labels assigned to one frame.
#[derive(Debug, Clone)]
pub struct SegmentAssociation {
    /// Label per frame segment, parallel to the segment slice.
    pub labels: Vec<SegmentLabel>,
    /// Matched labels with their winning overlap count; fresh labels
    /// are absent.
    pub matched: BTreeMap<SegmentLabel, u64>,
}

/// Matches frame segments to persistent labels.
///
/// Every persistent label hit by the frame nominates its maximally
/// overlapping frame segment; nominations at or below `tau_pi` are
/// dropped. When several labels nominate the same segment the largest
/// overlap wins (ties to the smaller label), the losing labels lapse
/// for this frame, and every segment left unmatched draws a fresh
/// label in processing order.
pub fn associate_segments(
    overlaps: &OverlapCounts,
    segments: &[FrameSegment],
    labels: &mut PersistentLabels,
    tau_pi: f64,
) -> SegmentAssociation {
    let order = processing_order(segments);
    let mut rank = vec![0usize; segments.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    // Per persistent label: its maximally overlapping frame segment.
    let mut nominations: BTreeMap<SegmentLabel, (usize, u64)> = BTreeMap::new();
    for (&(i, label), &count) in &overlaps.counts {
        let entry = nominations.entry(label).or_insert((i, count));
        if count > entry.1 || (count == entry.1 && rank[i] < rank[entry.0]) {
            *entry = (i, count);
        }
    }

    // Per frame segment: the winning nomination above the threshold.
    // Ascending label iteration plus strict improvement gives smaller
    // labels the tie.
    let mut winner: BTreeMap<usize, (SegmentLabel, u64)> = BTreeMap::new();
    for (&label, &(i, count)) in &nominations {
        if count as f64 <= tau_pi {
            continue;
        }
        let entry = winner.entry(i).or_insert((label, count));
        if count > entry.1 {
            *entry = (label, count);
        }
    }

    let mut assigned = vec![SegmentLabel::NONE; segments.len()];
    let mut matched = BTreeMap::new();
    for (&i, &(label, count)) in &winner {
        assigned[i] = label;
        matched.insert(label, count);
    }
    for &i in &order {
        if assigned[i].is_none() {
            assigned[i] = labels.fresh_segment();
        }
    }
    SegmentAssociation {
        labels: assigned,
        matched,
    }
}

/// Matches frame instances to persistent instance labels through Φ.
///
/// Segments are visited in processing order; the first segment of a
/// still-unmapped frame instance whose Φ row has a positive count for
/// an unclaimed persistent instance claims the argmax of that row.
/// Frame instances that never find a match draw fresh labels, in the
/// order their first segment appears. The result maps every frame
/// instance id exactly once and never maps two to the same persistent
/// label.
pub fn associate_instances(
    segments: &[FrameSegment],
    segment_labels: &[SegmentLabel],
    counts: &CountTables,
    labels: &mut PersistentLabels,
) -> BTreeMap<u16, InstanceLabel> {
    assert_eq!(segments.len(), segment_labels.len());
    let order = processing_order(segments);
    let mut mapping: BTreeMap<u16, InstanceLabel> = BTreeMap::new();
    let mut claimed: BTreeSet<InstanceLabel> = BTreeSet::new();
    for &i in &order {
        let o_i = segments[i].instance;
        if o_i == 0 || mapping.contains_key(&o_i) {
            continue;
        }
        if let Some((best, _)) = counts.best_unclaimed_instance(segment_labels[i], &claimed) {
            mapping.insert(o_i, best);
            claimed.insert(best);
        }
    }
    for &i in &order {
        let o_i = segments[i].instance;
        if o_i != 0 && !mapping.contains_key(&o_i) {
            let fresh = labels.fresh_instance();
            mapping.insert(o_i, fresh);
            claimed.insert(fresh);
        }
    }
    mapping
}
