//! Voxel-hashed TSDF volume with per-voxel segment labels and the
//! global co-observation count tables.
//!
//! Geometry and labels are fused per ray: every valid depth pixel casts
//! a ray that carves free space up to the truncation band and blends a
//! projective signed distance inside it. Voxels inside the band also
//! collect label votes, so a voxel's label converges to the segment
//! that most often explains it. The map additionally owns two sparse
//! tables: Φ counts how often persistent segment l was observed under
//! persistent instance o, Ψ how often under class c. Integration is
//! strictly single-writer; all read paths take `&self`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{BuildHasherDefault, Hasher};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, RigidPose};
use crate::labels::{ClassId, InstanceLabel, SegmentLabel};

pub mod io;
mod mc_tables;
pub mod mesh;

/// Voxels per block edge.
pub const BLOCK_SIZE: i32 = 16;
/// Voxels per block.
pub const BLOCK_VOLUME: usize = (BLOCK_SIZE * BLOCK_SIZE * BLOCK_SIZE) as usize;

/// One cell of the TSDF volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsdfVoxel {
    /// Truncated signed distance in meters, positive on the observed
    /// (camera) side of the surface.
    pub sdf: f32,
    /// Fusion weight; 0 means the voxel was never observed.
    pub weight: f32,
    /// Persistent segment label, 0 while unlabeled.
    pub label: SegmentLabel,
    /// Majority-vote counter backing `label`.
    pub label_confidence: u32,
}

impl Default for TsdfVoxel {
    fn default() -> Self {
        Self {
            sdf: 0.0,
            weight: 0.0,
            label: SegmentLabel::NONE,
            label_confidence: 0,
        }
    }
}

impl TsdfVoxel {
    pub fn is_observed(&self) -> bool {
        self.weight > 0.0
    }

    /// Majority-vote label update: a repeated label strengthens the
    /// voxel's belief, a conflicting one weakens it, and the label flips
    /// only when the confidence would pass through zero.
    fn vote(&mut self, label: SegmentLabel) {
        if self.label == label {
            self.label_confidence += 1;
        } else if self.label_confidence <= 1 {
            self.label = label;
            self.label_confidence = 1;
        } else {
            self.label_confidence -= 1;
        }
    }
}

/// Integer coordinates of a block (voxel index divided by block size,
/// floored).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockIndex {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

/// Multiplicative hasher for block keys. Deterministic across runs;
/// quality is adequate because keys are small dense integers.
#[derive(Default, Clone)]
pub struct IndexHasher {
    state: u64,
}

impl Hasher for IndexHasher {
    fn write(&mut self, bytes: &[u8]) {
        for chunk in bytes.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            self.state = (self.state.rotate_left(5) ^ u64::from_le_bytes(buf))
                .wrapping_mul(0x517c_c1b7_2722_0a95);
        }
    }

    fn finish(&self) -> u64 {
        self.state
    }
}

type IndexBuild = BuildHasherDefault<IndexHasher>;

/// A dense cube of `BLOCK_VOLUME` voxels. Offsets are linearized as
/// `(z * BLOCK_SIZE + y) * BLOCK_SIZE + x`.
#[derive(Debug, Clone)]
pub struct VoxelBlock {
    voxels: Box<[TsdfVoxel]>,
}

impl Default for VoxelBlock {
    fn default() -> Self {
        Self {
            voxels: vec![TsdfVoxel::default(); BLOCK_VOLUME].into_boxed_slice(),
        }
    }
}

impl VoxelBlock {
    pub fn voxels(&self) -> &[TsdfVoxel] {
        &self.voxels
    }

    pub fn voxel(&self, offset: usize) -> &TsdfVoxel {
        &self.voxels[offset]
    }

    pub fn voxel_mut(&mut self, offset: usize) -> &mut TsdfVoxel {
        &mut self.voxels[offset]
    }
}

/// Linear offset of local voxel coordinates within a block.
pub fn offset_index(x: i32, y: i32, z: i32) -> usize {
    ((z * BLOCK_SIZE + y) * BLOCK_SIZE + x) as usize
}

/// Inverse of [`offset_index`], as local (x, y, z).
pub fn offset_coords(offset: usize) -> (i32, i32, i32) {
    let o = offset as i32;
    (
        o % BLOCK_SIZE,
        (o / BLOCK_SIZE) % BLOCK_SIZE,
        o / (BLOCK_SIZE * BLOCK_SIZE),
    )
}

/// Splits a global voxel index into its block index and local offset.
/// Shifts implement floored division, so a voxel on a block boundary
/// belongs to the higher block.
pub fn split_voxel_index(vi: [i32; 3]) -> (BlockIndex, usize) {
    let block = BlockIndex {
        x: vi[0] >> 4,
        y: vi[1] >> 4,
        z: vi[2] >> 4,
    };
    let offset = offset_index(vi[0] & 15, vi[1] & 15, vi[2] & 15);
    (block, offset)
}

/// Sparse pairwise co-observation counts: Φ over (segment label,
/// instance label), Ψ over (segment label, class).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountTables {
    phi: BTreeMap<(SegmentLabel, InstanceLabel), u64>,
    psi: BTreeMap<(SegmentLabel, ClassId), u64>,
}

impl CountTables {
    /// Records one frame observation of segment `l` under instance `o`
    /// with class `c`.
    pub fn increment(&mut self, l: SegmentLabel, o: InstanceLabel, c: ClassId) {
        debug_assert!(!l.is_none() && !o.is_none() && !c.is_none());
        *self.phi.entry((l, o)).or_insert(0) += 1;
        *self.psi.entry((l, c)).or_insert(0) += 1;
    }

    pub fn phi(&self, l: SegmentLabel, o: InstanceLabel) -> u64 {
        self.phi.get(&(l, o)).copied().unwrap_or(0)
    }

    pub fn psi(&self, l: SegmentLabel, c: ClassId) -> u64 {
        self.psi.get(&(l, c)).copied().unwrap_or(0)
    }

    fn phi_row(&self, l: SegmentLabel) -> impl Iterator<Item = (InstanceLabel, u64)> + '_ {
        self.phi
            .range((l, InstanceLabel(0))..=(l, InstanceLabel(u32::MAX)))
            .map(|(&(_, o), &c)| (o, c))
    }

    /// Instance with the highest Φ count for `l`; ties break to the
    /// smaller label.
    pub fn best_instance(&self, l: SegmentLabel) -> Option<(InstanceLabel, u64)> {
        let mut best: Option<(InstanceLabel, u64)> = None;
        for (o, count) in self.phi_row(l) {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((o, count));
            }
        }
        best
    }

    /// Like [`CountTables::best_instance`] but skipping instances in
    /// `claimed`.
    pub fn best_unclaimed_instance(
        &self,
        l: SegmentLabel,
        claimed: &BTreeSet<InstanceLabel>,
    ) -> Option<(InstanceLabel, u64)> {
        let mut best: Option<(InstanceLabel, u64)> = None;
        for (o, count) in self.phi_row(l) {
            if !claimed.contains(&o) && best.is_none_or(|(_, c)| count > c) {
                best = Some((o, count));
            }
        }
        best
    }

    /// Class with the highest Ψ count for `l`; ties break to the
    /// smaller id.
    pub fn best_class(&self, l: SegmentLabel) -> Option<(ClassId, u64)> {
        let mut best: Option<(ClassId, u64)> = None;
        for (&(_, c), &count) in self.psi.range((l, ClassId(0))..=(l, ClassId(u32::MAX))) {
            if best.is_none_or(|(_, n)| count > n) {
                best = Some((c, count));
            }
        }
        best
    }

    pub fn phi_entries(&self) -> impl Iterator<Item = (SegmentLabel, InstanceLabel, u64)> + '_ {
        self.phi.iter().map(|(&(l, o), &c)| (l, o, c))
    }

    pub fn psi_entries(&self) -> impl Iterator<Item = (SegmentLabel, ClassId, u64)> + '_ {
        self.psi.iter().map(|(&(l, cl), &c)| (l, cl, c))
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty() && self.psi.is_empty()
    }
}

/// A persistent-labeled segment reconstructed from the volume.
#[derive(Debug, Clone)]
pub struct GlobalSegment {
    pub label: SegmentLabel,
    /// Global voxel indices, sorted lexicographically.
    pub voxels: Vec<[i32; 3]>,
    /// argmax of the Φ row, or 0 when the row is empty.
    pub instance: InstanceLabel,
    /// argmax of the Ψ row, or 0 when no instance is defined.
    pub class: ClassId,
}

/// The TSDF volume: hashed voxel blocks plus the count tables.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    truncation: f64,
    w_max: f32,
    /// Block storage; stable slots so ray casting can cache a slot id.
    slots: Vec<VoxelBlock>,
    index: HashMap<BlockIndex, u32, IndexBuild>,
    counts: CountTables,
}

impl VoxelGrid {
    pub fn new(voxel_size: f64, truncation: f64, w_max: f32) -> Result<Self> {
        if voxel_size <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if truncation < voxel_size {
            return Err(Error::InvalidConfig(format!(
                "truncation {truncation} smaller than voxel size {voxel_size}"
            )));
        }
        if w_max < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "weight cap must be at least 1, got {w_max}"
            )));
        }
        Ok(Self {
            voxel_size,
            truncation,
            w_max,
            slots: Vec::new(),
            index: HashMap::default(),
            counts: CountTables::default(),
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn w_max(&self) -> f32 {
        self.w_max
    }

    pub fn block_count(&self) -> usize {
        self.slots.len()
    }

    pub fn counts(&self) -> &CountTables {
        &self.counts
    }

    /// Global voxel index containing a world point (floored).
    pub fn voxel_index(&self, p: &Vector3<f64>) -> [i32; 3] {
        [
            (p.x / self.voxel_size).floor() as i32,
            (p.y / self.voxel_size).floor() as i32,
            (p.z / self.voxel_size).floor() as i32,
        ]
    }

    /// World position of a voxel's center.
    pub fn voxel_center(&self, vi: [i32; 3]) -> Vector3<f64> {
        Vector3::new(
            (vi[0] as f64 + 0.5) * self.voxel_size,
            (vi[1] as f64 + 0.5) * self.voxel_size,
            (vi[2] as f64 + 0.5) * self.voxel_size,
        )
    }

    pub fn voxel(&self, vi: [i32; 3]) -> Option<&TsdfVoxel> {
        let (block, offset) = split_voxel_index(vi);
        let slot = *self.index.get(&block)?;
        Some(self.slots[slot as usize].voxel(offset))
    }

    pub fn voxel_at(&self, p: &Vector3<f64>) -> Option<&TsdfVoxel> {
        self.voxel(self.voxel_index(p))
    }

    /// Persistent segment label of the voxel containing `p`, if the
    /// voxel is allocated and labeled.
    pub fn lookup_voxel_label(&self, p: &Vector3<f64>) -> Option<SegmentLabel> {
        let voxel = self.voxel_at(p)?;
        if voxel.label.is_none() {
            None
        } else {
            Some(voxel.label)
        }
    }

    /// Block indices in ascending (x, y, z) order.
    pub fn sorted_block_indices(&self) -> Vec<BlockIndex> {
        let mut keys: Vec<BlockIndex> = self.index.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn block(&self, bi: &BlockIndex) -> Option<&VoxelBlock> {
        self.index.get(bi).map(|&s| &self.slots[s as usize])
    }

    fn slot_of_or_alloc(&mut self, bi: BlockIndex) -> u32 {
        if let Some(&slot) = self.index.get(&bi) {
            return slot;
        }
        let slot = self.slots.len() as u32;
        self.slots.push(VoxelBlock::default());
        self.index.insert(bi, slot);
        slot
    }

    /// Fuses one posed depth frame. `labels`, when present, maps every
    /// pixel to the persistent segment label of its frame region (0
    /// where unlabeled); label votes are cast only inside the
    /// truncation band around each surface point.
    ///
    /// Pixels are processed in row-major order; because label voting is
    /// order-sensitive, this order is part of the contract.
    pub fn integrate_frame(
        &mut self,
        depth: &DepthFrame,
        pose: &RigidPose,
        intr: &CameraIntrinsics,
        labels: Option<&[SegmentLabel]>,
        max_range_m: f64,
    ) -> Result<()> {
        if depth.width() != intr.width() || depth.height() != intr.height() {
            return Err(Error::DimensionMismatch {
                expected_width: intr.width(),
                expected_height: intr.height(),
                width: depth.width(),
                height: depth.height(),
            });
        }
        if let Some(ls) = labels {
            if ls.len() != depth.data().len() {
                return Err(Error::Dataset(format!(
                    "label raster has {} entries for {} pixels",
                    ls.len(),
                    depth.data().len()
                )));
            }
        }
        let origin = pose.translation();
        let w = depth.width();
        for v in 0..depth.height() {
            for u in 0..w {
                let z = depth.get(u, v) as f64;
                if z <= 0.0 || z > max_range_m {
                    continue;
                }
                let label = labels
                    .map(|ls| ls[v as usize * w as usize + u as usize])
                    .unwrap_or(SegmentLabel::NONE);
                let p_cam = intr.ray_direction(u as f64, v as f64) * z;
                let p_world = pose.transform_point(&p_cam);
                let delta = p_world - origin;
                let dist = delta.norm();
                if dist < self.voxel_size {
                    continue;
                }
                self.integrate_ray(&origin, &(delta / dist), dist, label);
            }
        }
        Ok(())
    }

    /// Marches one ray from `origin` to `surface_t + truncation` along
    /// `dir` (unit), updating every traversed voxel.
    fn integrate_ray(
        &mut self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        surface_t: f64,
        label: SegmentLabel,
    ) {
        let vs = self.voxel_size;
        let truncation = self.truncation;
        let w_max = self.w_max;
        let t_end = surface_t + truncation;

        let mut vi = self.voxel_index(origin);
        let mut step = [0i32; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let d = dir[a];
            if d > 1e-12 {
                step[a] = 1;
                t_max[a] = ((vi[a] + 1) as f64 * vs - origin[a]) / d;
                t_delta[a] = vs / d;
            } else if d < -1e-12 {
                step[a] = -1;
                t_max[a] = (vi[a] as f64 * vs - origin[a]) / d;
                t_delta[a] = vs / -d;
            }
        }

        let mut cached: Option<(BlockIndex, u32)> = None;
        loop {
            let center = self.voxel_center(vi);
            let sdf_raw = surface_t - (center - origin).dot(dir);
            let (block, offset) = split_voxel_index(vi);
            let slot = match cached {
                Some((bi, slot)) if bi == block => slot,
                _ => {
                    let slot = self.slot_of_or_alloc(block);
                    cached = Some((block, slot));
                    slot
                }
            };
            let voxel = self.slots[slot as usize].voxel_mut(offset);
            let sdf = sdf_raw.clamp(-truncation, truncation) as f32;
            voxel.sdf = (voxel.weight * voxel.sdf + sdf) / (voxel.weight + 1.0);
            voxel.weight = (voxel.weight + 1.0).min(w_max);
            if !label.is_none() && sdf_raw.abs() <= truncation {
                voxel.vote(label);
            }

            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[axis] > t_end {
                break;
            }
            vi[axis] += step[axis];
            t_max[axis] += t_delta[axis];
        }
    }

    /// Test support: marks the voxel containing `p` observed with the
    /// given label.
    #[cfg(test)]
    pub(crate) fn paint_label(&mut self, p: &Vector3<f64>, label: SegmentLabel) {
        let (block, offset) = split_voxel_index(self.voxel_index(p));
        let slot = self.slot_of_or_alloc(block);
        let voxel = self.slots[slot as usize].voxel_mut(offset);
        voxel.weight = 1.0;
        voxel.label = label;
        voxel.label_confidence = 1;
    }

    /// Applies the per-frame count updates: one Φ and one Ψ increment
    /// per observed (segment label, instance label, class) triple.
    pub fn update_counts(&mut self, observations: &[(SegmentLabel, InstanceLabel, ClassId)]) {
        for &(l, o, c) in observations {
            self.counts.increment(l, o, c);
        }
    }

    /// Groups labeled observed voxels into global segments, attaching
    /// the argmax instance and class of each label's count rows.
    /// Returns segments in ascending label order.
    pub fn extract_segments(&self) -> Vec<GlobalSegment> {
        let mut by_label: BTreeMap<SegmentLabel, Vec<[i32; 3]>> = BTreeMap::new();
        for bi in self.sorted_block_indices() {
            let block = self.block(&bi).expect("listed block exists");
            for (offset, voxel) in block.voxels().iter().enumerate() {
                if !voxel.is_observed() || voxel.label.is_none() {
                    continue;
                }
                let (lx, ly, lz) = offset_coords(offset);
                by_label.entry(voxel.label).or_default().push([
                    bi.x * BLOCK_SIZE + lx,
                    bi.y * BLOCK_SIZE + ly,
                    bi.z * BLOCK_SIZE + lz,
                ]);
            }
        }
        by_label
            .into_iter()
            .map(|(label, mut voxels)| {
                voxels.sort_unstable();
                let instance = self
                    .counts
                    .best_instance(label)
                    .map(|(o, _)| o)
                    .unwrap_or(InstanceLabel::NONE);
                let class = if instance.is_none() {
                    ClassId::NONE
                } else {
                    self.counts
                        .best_class(label)
                        .map(|(c, _)| c)
                        .unwrap_or(ClassId::NONE)
                };
                GlobalSegment {
                    label,
                    voxels,
                    instance,
                    class,
                }
            })
            .collect()
    }
}
