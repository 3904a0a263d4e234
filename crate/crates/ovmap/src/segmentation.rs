//! Convexity-based decomposition of depth frames into 2D regions and
//! 3D segments.
//!
//! Objects are split along concave creases and depth discontinuities:
//! two adjacent pixels stay in one region only while the surface between
//! them is smooth or convex. Convex surface patches are the unit of all
//! later label bookkeeping, so this module is deliberately conservative:
//! over-segmenting an object is recoverable (several segments may later
//! share an instance), merging two objects is not.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::VertexMap;
use crate::labels::ClassId;

/// Thresholds controlling region splitting.
#[derive(Debug, Clone)]
pub struct SegmentParams {
    /// Adjacent normals diverging by more than this angle mark a crease.
    pub theta_concave_deg: f64,
    /// Lower bound of the depth-discontinuity threshold in meters.
    pub depth_gap_floor_m: f64,
    /// Growth of the discontinuity threshold per meter of depth.
    pub depth_gap_per_meter: f64,
    /// Regions below this pixel count are dropped as speckle.
    pub min_region_size: usize,
    /// Grid stride for sampling segment points (1 = every pixel).
    pub point_stride: u32,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            theta_concave_deg: 10.0,
            depth_gap_floor_m: 0.03,
            depth_gap_per_meter: 0.05,
            min_region_size: 100,
            point_stride: 1,
        }
    }
}

impl SegmentParams {
    pub fn theta_concave_rad(&self) -> f64 {
        self.theta_concave_deg.to_radians()
    }

    /// Distance threshold for a depth discontinuity at depth `z`.
    pub fn depth_gap_at(&self, z: f64) -> f64 {
        self.depth_gap_floor_m.max(self.depth_gap_per_meter * z)
    }
}

/// Per-pixel unit surface normals in the camera frame, oriented toward
/// the camera (n . v < 0 for the vertex v they belong to).
#[derive(Debug, Clone)]
pub struct NormalMap {
    width: u32,
    height: u32,
    normals: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl NormalMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn idx(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        self.valid[self.idx(u, v)]
    }

    /// Normal at a valid pixel; unspecified at invalid pixels.
    pub fn normal(&self, u: u32, v: u32) -> Vector3<f64> {
        self.normals[self.idx(u, v)]
    }
}

/// Estimates normals from central differences of the vertex map.
///
/// A pixel needs itself and its four axis neighbors valid; image border
/// pixels are always invalid. Normals are flipped to face the camera.
pub fn estimate_normals(vmap: &VertexMap) -> NormalMap {
    let w = vmap.width();
    let h = vmap.height();
    let size = w as usize * h as usize;
    let mut normals = vec![Vector3::zeros(); size];
    let mut valid = vec![false; size];
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            if !(vmap.is_valid(u, v)
                && vmap.is_valid(u - 1, v)
                && vmap.is_valid(u + 1, v)
                && vmap.is_valid(u, v - 1)
                && vmap.is_valid(u, v + 1))
            {
                continue;
            }
            let du = vmap.point(u + 1, v) - vmap.point(u - 1, v);
            let dv = vmap.point(u, v + 1) - vmap.point(u, v - 1);
            let mut n = du.cross(&dv);
            let norm = n.norm();
            if norm < 1e-12 {
                continue;
            }
            n /= norm;
            if n.dot(&vmap.point(u, v)) > 0.0 {
                n = -n;
            }
            let i = v as usize * w as usize + u as usize;
            normals[i] = n;
            valid[i] = true;
        }
    }
    NormalMap {
        width: w,
        height: h,
        normals,
        valid,
    }
}

/// Classification of the edge between two adjacent pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    Connected,
    Boundary,
}

/// Classifies the directed edge from pixel `p` to adjacent pixel `q`.
///
/// The edge is a boundary when either pixel is invalid, when the 3D
/// distance between the vertices exceeds the depth-scaled gap threshold,
/// or when the normals diverge by more than `theta_concave` with `q`
/// stepping away from the surface at `p` (a concave junction). Convex
/// junctions of any angle stay connected.
pub fn edge_classify(
    vmap: &VertexMap,
    nmap: &NormalMap,
    p: (u32, u32),
    q: (u32, u32),
    params: &SegmentParams,
) -> EdgeClass {
    if !vmap.is_valid(p.0, p.1)
        || !vmap.is_valid(q.0, q.1)
        || !nmap.is_valid(p.0, p.1)
        || !nmap.is_valid(q.0, q.1)
    {
        return EdgeClass::Boundary;
    }
    let vp = vmap.point(p.0, p.1);
    let vq = vmap.point(q.0, q.1);
    let step = vq - vp;
    if step.norm() > params.depth_gap_at(vp.z) {
        return EdgeClass::Boundary;
    }
    let np = nmap.normal(p.0, p.1);
    let nq = nmap.normal(q.0, q.1);
    let angle = np.dot(&nq).clamp(-1.0, 1.0).acos();
    if angle > params.theta_concave_rad() && step.dot(&np) > 0.0 {
        return EdgeClass::Boundary;
    }
    EdgeClass::Connected
}

/// A 4-connected pixel region of one frame.
#[derive(Debug, Clone)]
pub struct Region2D {
    /// Frame-local id, 1-based, assigned in row-major order of each
    /// region's first pixel.
    pub id: u32,
    /// Flattened pixel indices (v * width + u), ascending.
    pub pixels: Vec<u32>,
}

impl Region2D {
    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }
}

/// A region with its 3D points and (once refined) semantic labels.
#[derive(Debug, Clone)]
pub struct FrameSegment {
    pub region: Region2D,
    /// Points in the camera frame, sampled on a `point_stride` grid.
    pub points: Vec<Vector3<f64>>,
    pub point_stride: u32,
    /// Frame-local mask instance id, 0 until refinement assigns one.
    pub instance: u16,
    /// Category id, 0 until refinement assigns one.
    pub class: ClassId,
}

/// Partition of a frame into regions plus the derived segments.
#[derive(Debug, Clone)]
pub struct FrameSegmentation {
    width: u32,
    height: u32,
    /// Region id per pixel, 0 where no region claimed the pixel.
    raster: Vec<u32>,
    segments: Vec<FrameSegment>,
}

impl FrameSegmentation {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn region_raster(&self) -> &[u32] {
        &self.raster
    }

    pub fn region_id(&self, u: u32, v: u32) -> u32 {
        self.raster[v as usize * self.width as usize + u as usize]
    }

    pub fn segments(&self) -> &[FrameSegment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [FrameSegment] {
        &mut self.segments
    }

    /// Segment whose region has the given id.
    pub fn segment(&self, region_id: u32) -> Option<&FrameSegment> {
        // ids are 1..=len in order.
        self.segments.get(region_id.checked_sub(1)? as usize)
    }

    /// Builds a segmentation from an externally produced region raster.
    ///
    /// Nonzero ids must form the dense set 1..=K. The segments carry no
    /// 3D points, so this form supports label bookkeeping (overlap and
    /// refinement) but not map association.
    pub fn from_raster(width: u32, height: u32, raster: Vec<u32>) -> Result<Self> {
        if raster.len() != width as usize * height as usize {
            return Err(Error::Dataset(format!(
                "region raster has {} pixels for a {width}x{height} frame",
                raster.len()
            )));
        }
        let count = raster.iter().copied().max().unwrap_or(0) as usize;
        let mut pixels: Vec<Vec<u32>> = vec![Vec::new(); count];
        for (i, &id) in raster.iter().enumerate() {
            if id != 0 {
                pixels[id as usize - 1].push(i as u32);
            }
        }
        let segments = pixels
            .into_iter()
            .enumerate()
            .map(|(k, pixels)| {
                if pixels.is_empty() {
                    return Err(Error::Dataset(format!(
                        "region ids are not dense: id {} is unused",
                        k + 1
                    )));
                }
                Ok(FrameSegment {
                    region: Region2D {
                        id: k as u32 + 1,
                        pixels,
                    },
                    points: Vec::new(),
                    point_stride: 1,
                    instance: 0,
                    class: ClassId::NONE,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameSegmentation {
            width,
            height,
            raster,
            segments,
        })
    }
}

/// Splits a frame into connected components of the symmetric relation
/// "edge_classify reports connected in both directions", dropping
/// components below `min_region_size`.
pub fn segment_frame(
    vmap: &VertexMap,
    nmap: &NormalMap,
    params: &SegmentParams,
) -> Result<FrameSegmentation> {
    if vmap.width() != nmap.width() || vmap.height() != nmap.height() {
        return Err(Error::DimensionMismatch {
            expected_width: vmap.width(),
            expected_height: vmap.height(),
            width: nmap.width(),
            height: nmap.height(),
        });
    }
    let w = vmap.width();
    let h = vmap.height();
    let size = w as usize * h as usize;

    let joined = |p: (u32, u32), q: (u32, u32)| {
        edge_classify(vmap, nmap, p, q, params) == EdgeClass::Connected
            && edge_classify(vmap, nmap, q, p, params) == EdgeClass::Connected
    };

    // Provisional component ids, assigned by row-major BFS. The seed of
    // each component is its smallest pixel index, so discovery order is
    // already row-major order of first pixel.
    let mut provisional = vec![0u32; size];
    let mut component_pixels: Vec<Vec<u32>> = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for v in 0..h {
        for u in 0..w {
            let i = v as usize * w as usize + u as usize;
            if provisional[i] != 0 || !vmap.is_valid(u, v) || !nmap.is_valid(u, v) {
                continue;
            }
            let comp_id = component_pixels.len() as u32 + 1;
            provisional[i] = comp_id;
            let mut pixels = vec![i as u32];
            queue.push_back((u, v));
            while let Some((pu, pv)) = queue.pop_front() {
                let mut neighbors = [(0u32, 0u32); 4];
                let mut count = 0;
                if pu > 0 {
                    neighbors[count] = (pu - 1, pv);
                    count += 1;
                }
                if pu + 1 < w {
                    neighbors[count] = (pu + 1, pv);
                    count += 1;
                }
                if pv > 0 {
                    neighbors[count] = (pu, pv - 1);
                    count += 1;
                }
                if pv + 1 < h {
                    neighbors[count] = (pu, pv + 1);
                    count += 1;
                }
                for &(qu, qv) in &neighbors[..count] {
                    let qi = qv as usize * w as usize + qu as usize;
                    if provisional[qi] != 0 {
                        continue;
                    }
                    if joined((pu, pv), (qu, qv)) {
                        provisional[qi] = comp_id;
                        pixels.push(qi as u32);
                        queue.push_back((qu, qv));
                    }
                }
            }
            pixels.sort_unstable();
            component_pixels.push(pixels);
        }
    }

    // Drop speckle components and renumber survivors consecutively.
    let mut raster = vec![0u32; size];
    let mut segments = Vec::new();
    for pixels in component_pixels {
        if pixels.len() < params.min_region_size {
            continue;
        }
        let id = segments.len() as u32 + 1;
        for &pi in &pixels {
            raster[pi as usize] = id;
        }
        let stride = params.point_stride.max(1);
        let mut points = Vec::new();
        for &pi in &pixels {
            let u = pi % w;
            let v = pi / w;
            if u.is_multiple_of(stride) && v.is_multiple_of(stride) {
                points.push(vmap.point(u, v));
            }
        }
        if points.is_empty() {
            // A thin region can miss the stride grid entirely; keep it
            // visible to association with a single representative point.
            let u = pixels[0] % w;
            let v = pixels[0] / w;
            points.push(vmap.point(u, v));
        }
        segments.push(FrameSegment {
            region: Region2D { id, pixels },
            points,
            point_stride: stride,
            instance: 0,
            class: ClassId::NONE,
        });
    }

    Ok(FrameSegmentation {
        width: w,
        height: h,
        raster,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{unproject, CameraIntrinsics, DepthFrame, DEFAULT_MAX_RANGE_M};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const W: u32 = 160;
    const H: u32 = 120;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(120.0, 120.0, 79.5, 59.5, W, H).unwrap()
    }

    /// Depth of the plane n.p = d along the ray of pixel (u, v), or 0
    /// if the ray is parallel.
    fn plane_depth(intr: &CameraIntrinsics, u: u32, v: u32, n: Vector3<f64>, d: f64) -> f32 {
        let dir = intr.ray_direction(u as f64, v as f64);
        let denom = n.dot(&dir);
        if denom.abs() < 1e-9 {
            return 0.0;
        }
        let z = d / denom;
        if z > 0.0 {
            z as f32
        } else {
            0.0
        }
    }

    fn render_plane(n: Vector3<f64>, d: f64) -> DepthFrame {
        let intr = intr();
        let mut depth = DepthFrame::zeros(W, H);
        for v in 0..H {
            for u in 0..W {
                depth.set(u, v, plane_depth(&intr, u, v, n, d));
            }
        }
        depth
    }

    fn maps_of(depth: &DepthFrame) -> (VertexMap, NormalMap) {
        let vmap = unproject(depth, &intr(), DEFAULT_MAX_RANGE_M).unwrap();
        let nmap = estimate_normals(&vmap);
        (vmap, nmap)
    }

    #[test]
    fn flat_plane_normals_face_camera() {
        let depth = render_plane(Vector3::new(0.0, 0.0, 1.0), 1.0);
        let (_, nmap) = maps_of(&depth);
        for v in 1..H - 1 {
            for u in 1..W - 1 {
                assert!(nmap.is_valid(u, v));
                let n = nmap.normal(u, v);
                assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-4);
                assert_relative_eq!(n.x, 0.0, epsilon = 1e-9);
                assert_relative_eq!(n.y, 0.0, epsilon = 1e-9);
                assert_relative_eq!(n.z, -1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn tilted_plane_normals_match_analytic_normal() {
        // Plane tilted 45 degrees about the u-axis.
        let n = Vector3::new(0.0, 1.0, 1.0).normalize();
        let depth = render_plane(n, 1.5);
        let (_, nmap) = maps_of(&depth);
        let expected = -n; // flipped toward the camera
        let mut checked = 0;
        for v in (1..H - 1).step_by(7) {
            for u in (1..W - 1).step_by(7) {
                if !nmap.is_valid(u, v) {
                    continue;
                }
                let got = nmap.normal(u, v);
                let angle = got.dot(&expected).clamp(-1.0, 1.0).acos().to_degrees();
                assert!(angle < 1.0, "normal off by {angle} deg at ({u}, {v})");
                let axis_angle = got
                    .dot(&Vector3::new(0.0, 0.0, -1.0))
                    .clamp(-1.0, 1.0)
                    .acos()
                    .to_degrees();
                assert!((axis_angle - 45.0).abs() < 1.0);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn invalid_neighbor_invalidates_normal() {
        let mut depth = render_plane(Vector3::new(0.0, 0.0, 1.0), 1.0);
        depth.set(40, 40, 0.0);
        let (_, nmap) = maps_of(&depth);
        assert!(!nmap.is_valid(40, 40));
        assert!(!nmap.is_valid(39, 40));
        assert!(!nmap.is_valid(41, 40));
        assert!(!nmap.is_valid(40, 39));
        assert!(!nmap.is_valid(40, 41));
        assert!(nmap.is_valid(42, 42));
        // Image border never has full neighborhoods.
        assert!(!nmap.is_valid(0, 0));
        assert!(!nmap.is_valid(W - 1, H - 1));
    }

    #[test]
    fn coplanar_neighbors_connect() {
        let depth = render_plane(Vector3::new(0.0, 0.0, 1.0), 1.0);
        let (vmap, nmap) = maps_of(&depth);
        let params = SegmentParams::default();
        assert_eq!(
            edge_classify(&vmap, &nmap, (50, 50), (51, 50), &params),
            EdgeClass::Connected
        );
        assert_eq!(
            edge_classify(&vmap, &nmap, (50, 50), (50, 51), &params),
            EdgeClass::Connected
        );
    }

    /// Two planes meeting along the vertical centerline, both passing
    /// through (0, y, z_mid) in camera coordinates. `slope` is |dz/dx|;
    /// positive slope pushes the flanks away from the camera (ridge
    /// nearest: a convex tent), negative slope pulls them closer (ridge
    /// farthest: a concave valley).
    fn render_roof(z_mid: f64, slope: f64) -> DepthFrame {
        let intr = intr();
        let left = Vector3::new(slope, 0.0, 1.0);
        let right = Vector3::new(-slope, 0.0, 1.0);
        let mut depth = DepthFrame::zeros(W, H);
        for v in 0..H {
            for u in 0..W {
                let dir = intr.ray_direction(u as f64, v as f64);
                let n = if dir.x < 0.0 { left } else { right };
                depth.set(u, v, plane_depth(&intr, u, v, n, z_mid));
            }
        }
        depth
    }

    #[test]
    fn concave_junction_is_boundary_convex_is_not() {
        let params = SegmentParams::default();
        // cx = 79.5, so the crease falls between columns 79 and 80. Those
        // two columns carry normals blended across the crease by the
        // central difference; flanking columns see one plane only.
        let (cl, cr) = ((79, 60), (80, 60));

        // Steep 90-degree junctions, checked at the crease edge itself.
        let (vmap, nmap) = maps_of(&render_roof(1.2, -1.0));
        assert_eq!(
            edge_classify(&vmap, &nmap, cl, cr, &params),
            EdgeClass::Boundary
        );
        assert_eq!(
            edge_classify(&vmap, &nmap, cr, cl, &params),
            EdgeClass::Boundary
        );
        let (vmap, nmap) = maps_of(&render_roof(0.8, 1.0));
        assert_eq!(
            edge_classify(&vmap, &nmap, cl, cr, &params),
            EdgeClass::Connected
        );
        assert_eq!(
            edge_classify(&vmap, &nmap, cr, cl, &params),
            EdgeClass::Connected
        );

        // A gentle valley (28 degree dihedral) keeps the blended normals
        // within theta of their flanks, so the only boundary is the
        // crease itself and the split is exact.
        let concave = render_roof(1.2, -0.25);
        let (vmap, nmap) = maps_of(&concave);
        let p = (77, 60);
        let q = (82, 60);
        assert_eq!(
            edge_classify(&vmap, &nmap, p, (p.0 + 1, p.1), &params),
            EdgeClass::Connected
        );
        let seg = segment_frame(&vmap, &nmap, &params).unwrap();
        assert_eq!(seg.segments().len(), 2);
        assert_eq!(seg.region_id(p.0, p.1), 1);
        assert_eq!(seg.region_id(q.0, q.1), 2);

        // The same dihedral bent toward the camera stays one region.
        let convex = render_roof(0.8, 0.25);
        let (vmap, nmap) = maps_of(&convex);
        let seg = segment_frame(&vmap, &nmap, &params).unwrap();
        assert_eq!(seg.segments().len(), 1);
        assert_eq!(seg.region_id(p.0, p.1), seg.region_id(q.0, q.1));
    }

    #[test]
    fn depth_gap_splits_regions() {
        let intr = intr();
        let mut depth = DepthFrame::zeros(W, H);
        for v in 0..H {
            for u in 0..W {
                let z = if u < W / 2 { 1.0 } else { 2.0 };
                depth.set(
                    u,
                    v,
                    plane_depth(&intr, u, v, Vector3::new(0.0, 0.0, 1.0), z),
                );
            }
        }
        let (vmap, nmap) = maps_of(&depth);
        // Columns 79 and 80 straddle the jump, so their central-difference
        // normals are meaningless; depending on rounding they join their
        // plane or split off. A raised speckle threshold makes the outcome
        // independent of that: two half-frame regions either way.
        let params = SegmentParams {
            min_region_size: 300,
            ..SegmentParams::default()
        };
        let gap = edge_classify(&vmap, &nmap, (79, 60), (80, 60), &params);
        assert_eq!(gap, EdgeClass::Boundary);
        let seg = segment_frame(&vmap, &nmap, &params).unwrap();
        assert_eq!(seg.segments().len(), 2);
        // Ids follow row-major order of first pixel: left region first.
        assert_eq!(seg.region_id(10, 10), 1);
        assert_eq!(seg.region_id(W - 10, 10), 2);
    }

    #[test]
    fn single_plane_is_single_region_covering_valid_pixels() {
        let depth = render_plane(Vector3::new(0.0, 0.0, 1.0), 1.0);
        let (vmap, nmap) = maps_of(&depth);
        let seg = segment_frame(&vmap, &nmap, &SegmentParams::default()).unwrap();
        assert_eq!(seg.segments().len(), 1);
        let region = &seg.segments()[0].region;
        assert_eq!(region.id, 1);
        // Every normal-valid pixel is claimed (border pixels lack
        // normals and stay outside).
        let valid = (1..H - 1)
            .flat_map(|v| (1..W - 1).map(move |u| (u, v)))
            .filter(|&(u, v)| nmap.is_valid(u, v))
            .count();
        assert_eq!(region.pixel_count(), valid);
        assert_eq!(seg.segments()[0].points.len(), valid);
    }

    #[test]
    fn all_invalid_frame_yields_no_regions() {
        let depth = DepthFrame::zeros(W, H);
        let (vmap, nmap) = maps_of(&depth);
        let seg = segment_frame(&vmap, &nmap, &SegmentParams::default()).unwrap();
        assert!(seg.segments().is_empty());
        assert!(seg.region_raster().iter().all(|&r| r == 0));
    }

    #[test]
    fn small_regions_are_discarded() {
        let intr = intr();
        let mut depth = DepthFrame::zeros(W, H);
        // An 8x8 island (64 px < 100) far in front of a large plane.
        for v in 0..H {
            for u in 0..W {
                let z = if (40..48).contains(&u) && (40..48).contains(&v) {
                    0.5
                } else {
                    2.0
                };
                depth.set(
                    u,
                    v,
                    plane_depth(&intr, u, v, Vector3::new(0.0, 0.0, 1.0), z),
                );
            }
        }
        let (vmap, nmap) = maps_of(&depth);
        let seg = segment_frame(&vmap, &nmap, &SegmentParams::default()).unwrap();
        assert_eq!(seg.segments().len(), 1);
        assert_eq!(seg.region_id(44, 44), 0);
        assert_ne!(seg.region_id(20, 20), 0);
    }

    #[test]
    fn point_stride_subsamples_grid() {
        let depth = render_plane(Vector3::new(0.0, 0.0, 1.0), 1.0);
        let (vmap, nmap) = maps_of(&depth);
        let params = SegmentParams {
            point_stride: 4,
            ..SegmentParams::default()
        };
        let seg = segment_frame(&vmap, &nmap, &params).unwrap();
        let s = &seg.segments()[0];
        assert_eq!(s.point_stride, 4);
        let expected = s
            .region
            .pixels
            .iter()
            .filter(|&&pi| (pi % W).is_multiple_of(4) && (pi / W).is_multiple_of(4))
            .count();
        assert_eq!(s.points.len(), expected);
        assert!(s.points.len() < s.region.pixel_count() / 8);
    }

    /// Label-propagation reference segmentation: same edge relation,
    /// different algorithm.
    fn naive_segment(vmap: &VertexMap, nmap: &NormalMap, params: &SegmentParams) -> Vec<Vec<u32>> {
        let w = vmap.width();
        let h = vmap.height();
        let size = w as usize * h as usize;
        let mut label: Vec<usize> = (0..size).collect();
        let usable: Vec<bool> = (0..size)
            .map(|i| {
                let (u, v) = (i as u32 % w, i as u32 / w);
                vmap.is_valid(u, v) && nmap.is_valid(u, v)
            })
            .collect();
        let joined = |p: (u32, u32), q: (u32, u32)| {
            edge_classify(vmap, nmap, p, q, params) == EdgeClass::Connected
                && edge_classify(vmap, nmap, q, p, params) == EdgeClass::Connected
        };
        // Propagate minimum labels until fixpoint.
        loop {
            let mut changed = false;
            for v in 0..h {
                for u in 0..w {
                    let i = (v * w + u) as usize;
                    if !usable[i] {
                        continue;
                    }
                    for (qu, qv) in [
                        (u.wrapping_sub(1), v),
                        (u + 1, v),
                        (u, v.wrapping_sub(1)),
                        (u, v + 1),
                    ] {
                        if qu >= w || qv >= h {
                            continue;
                        }
                        let j = (qv * w + qu) as usize;
                        if usable[j] && joined((u, v), (qu, qv)) && label[j] < label[i] {
                            label[i] = label[j];
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<u32>> = Default::default();
        for i in 0..size {
            if usable[i] {
                groups.entry(label[i]).or_default().push(i as u32);
            }
        }
        groups
            .into_values()
            .filter(|g| g.len() >= params.min_region_size)
            .collect()
    }

    fn arb_depth_frame() -> impl Strategy<Value = DepthFrame> {
        // Piecewise-constant depth tiles produce a mix of connected
        // areas, gaps, and invalid pixels.
        prop::collection::vec(prop_oneof![Just(0.0f32), 0.5f32..3.0], 24).prop_map(|tiles| {
            let mut depth = DepthFrame::zeros(W, H);
            let (tw, th) = (W / 6, H / 4);
            for v in 0..H {
                for u in 0..W {
                    let t = ((v / th).min(3) * 6 + (u / tw).min(5)) as usize;
                    depth.set(u, v, tiles[t]);
                }
            }
            depth
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn matches_naive_flood_fill(depth in arb_depth_frame()) {
            let (vmap, nmap) = maps_of(&depth);
            let params = SegmentParams { min_region_size: 20, ..SegmentParams::default() };
            let seg = segment_frame(&vmap, &nmap, &params).unwrap();
            let mut got: Vec<Vec<u32>> =
                seg.segments().iter().map(|s| s.region.pixels.clone()).collect();
            let mut want = naive_segment(&vmap, &nmap, &params);
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn regions_partition_their_pixels(depth in arb_depth_frame()) {
            let (vmap, nmap) = maps_of(&depth);
            let params = SegmentParams { min_region_size: 20, ..SegmentParams::default() };
            let seg = segment_frame(&vmap, &nmap, &params).unwrap();
            let mut seen = vec![false; (W * H) as usize];
            for s in seg.segments() {
                prop_assert!(s.region.pixel_count() >= params.min_region_size);
                for &pi in &s.region.pixels {
                    prop_assert!(!seen[pi as usize], "pixel {} in two regions", pi);
                    seen[pi as usize] = true;
                    prop_assert_eq!(seg.region_raster()[pi as usize], s.region.id);
                }
            }
            // Raster and region lists agree exactly.
            let claimed = seg.region_raster().iter().filter(|&&r| r != 0).count();
            prop_assert_eq!(claimed, seen.iter().filter(|&&s| s).count());
        }
    }
}
