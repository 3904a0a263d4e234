//! Analytic test scenes with exact depth rendering and ground truth.
//!
//! A [`SceneSpec`] places closed-form primitives (spheres, boxes, finite
//! rectangles, L-shaped prisms) in world space and pairs them with a camera
//! trajectory. Scenes render to depth images by exact ray casting, so every
//! valid pixel lies on a primitive surface up to floating-point rounding.
//! The same signed-distance functions label a voxel volume that serves as
//! evaluation ground truth, and [`write_dataset`] materializes the whole
//! scene in the on-disk dataset layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, RigidPose};
use crate::labels::ClassId;
use crate::masks::{write_masks, MaskEntry, MaskFrame};

/// Ray parameter below which an intersection counts as behind the camera.
const RAY_EPS: f64 = 1e-9;

/// Closed-form solid in its local frame.
///
/// Each shape supports exact ray intersection and an exact distance field.
/// For solids the distance is signed (negative inside); the rectangle is a
/// two-sided surface patch and reports unsigned distance.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Sphere of the given radius centered at the origin.
    Sphere { radius: f64 },
    /// Axis-aligned box spanning `[-half_extents, half_extents]`.
    Cuboid { half_extents: Vector3<f64> },
    /// Finite rectangle in the local `z = 0` plane.
    Rect { half_x: f64, half_y: f64 },
    /// Box with a rectangular notch cut from its `+x, +y` corner, extruded
    /// along `z`. `cut` gives the notch widths measured from the `+x` and
    /// `+y` faces and must be smaller than the full extents.
    LPrism {
        half_extents: Vector3<f64>,
        cut: (f64, f64),
    },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        match *self {
            Shape::Sphere { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("sphere radius {radius} must be positive"));
                }
            }
            Shape::Cuboid { half_extents } => {
                if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
                    return bad(format!(
                        "box half extents {half_extents:?} must be positive"
                    ));
                }
            }
            Shape::Rect { half_x, half_y } => {
                if !(half_x > 0.0 && half_y > 0.0 && half_x.is_finite() && half_y.is_finite()) {
                    return bad(format!(
                        "rect half extents ({half_x}, {half_y}) must be positive"
                    ));
                }
            }
            Shape::LPrism { half_extents, cut } => {
                if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
                    return bad(format!(
                        "prism half extents {half_extents:?} must be positive"
                    ));
                }
                let (cx, cy) = cut;
                if !(cx > 0.0 && cx < 2.0 * half_extents.x && cy > 0.0 && cy < 2.0 * half_extents.y)
                {
                    return bad(format!(
                        "prism cut ({cx}, {cy}) must be positive and smaller than the extents"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Nearest intersection parameter `t > 0` of the local ray `o + t d`,
    /// if any. `d` need not be normalized; `t` is in units of `d`.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Sphere { radius } => {
                let a = dir.dot(dir);
                let b = 2.0 * origin.dot(dir);
                let c = origin.dot(origin) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / (2.0 * a);
                let t1 = (-b + sq) / (2.0 * a);
                if t0 > RAY_EPS {
                    Some(t0)
                } else if t1 > RAY_EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Cuboid { half_extents } => {
                raycast_box(origin, dir, &Vector3::zeros(), &half_extents)
            }
            Shape::Rect { half_x, half_y } => {
                if dir.z.abs() < 1e-12 {
                    return None;
                }
                let t = -origin.z / dir.z;
                if t <= RAY_EPS {
                    return None;
                }
                let x = origin.x + t * dir.x;
                let y = origin.y + t * dir.y;
                (x.abs() <= half_x && y.abs() <= half_y).then_some(t)
            }
            Shape::LPrism { half_extents, cut } => {
                let (a_center, a_half, b_center, b_half) = lprism_boxes(&half_extents, cut);
                let ta = raycast_box(origin, dir, &a_center, &a_half);
                let tb = raycast_box(origin, dir, &b_center, &b_half);
                match (ta, tb) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }

    /// Exact distance from a local point to the surface. Signed for solids
    /// (negative inside), unsigned for the rectangle patch.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Cuboid { half_extents } => {
                let q = p.abs() - half_extents;
                let outside = q.map(|c| c.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Shape::Rect { half_x, half_y } => {
                let dx = (p.x.abs() - half_x).max(0.0);
                let dy = (p.y.abs() - half_y).max(0.0);
                (dx * dx + dy * dy + p.z * p.z).sqrt()
            }
            Shape::LPrism { half_extents, cut } => {
                let d2 = polygon_distance(
                    Vector2::new(p.x, p.y),
                    &lprism_cross_section(&half_extents, cut),
                );
                let dz = p.z.abs() - half_extents.z;
                let outside = (d2.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + d2.max(dz).min(0.0)
            }
        }
    }

    /// Tight local-frame bounding box as `(min, max)` corners.
    pub fn local_aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let half = match *self {
            Shape::Sphere { radius } => Vector3::repeat(radius),
            Shape::Cuboid { half_extents } => half_extents,
            Shape::Rect { half_x, half_y } => Vector3::new(half_x, half_y, 0.0),
            Shape::LPrism { half_extents, .. } => half_extents,
        };
        (-half, half)
    }
}

/// Slab-method intersection with an axis-aligned box. Returns the nearest
/// boundary crossing with `t > 0` (the exit when the ray starts inside).
fn raycast_box(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    center: &Vector3<f64>,
    half: &Vector3<f64>,
) -> Option<f64> {
    let o = origin - center;
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-12 {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let t0 = (-half[axis] - o[axis]) * inv;
        let t1 = (half[axis] - o[axis]) * inv;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        t_min = t_min.max(lo);
        t_max = t_max.min(hi);
        if t_min > t_max {
            return None;
        }
    }
    if t_min > RAY_EPS {
        Some(t_min)
    } else if t_max > RAY_EPS {
        Some(t_max)
    } else {
        None
    }
}

/// The L cross-section as the union of two axis-aligned boxes:
/// full-width slab below the notch plus full-height slab left of it.
fn lprism_boxes(
    half: &Vector3<f64>,
    (cx, cy): (f64, f64),
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let a_center = Vector3::new(0.0, -cy / 2.0, 0.0);
    let a_half = Vector3::new(half.x, half.y - cy / 2.0, half.z);
    let b_center = Vector3::new(-cx / 2.0, 0.0, 0.0);
    let b_half = Vector3::new(half.x - cx / 2.0, half.y, half.z);
    (a_center, a_half, b_center, b_half)
}

/// Corners of the L cross-section, walked counterclockwise.
fn lprism_cross_section(half: &Vector3<f64>, (cx, cy): (f64, f64)) -> [Vector2<f64>; 6] {
    let (hx, hy) = (half.x, half.y);
    [
        Vector2::new(-hx, -hy),
        Vector2::new(hx, -hy),
        Vector2::new(hx, hy - cy),
        Vector2::new(hx - cx, hy - cy),
        Vector2::new(hx - cx, hy),
        Vector2::new(-hx, hy),
    ]
}

/// Exact signed distance from a point to a simple polygon, negative inside.
fn polygon_distance(p: Vector2<f64>, verts: &[Vector2<f64>]) -> f64 {
    let n = verts.len();
    let mut d = (p - verts[0]).norm_squared();
    let mut sign = 1.0f64;
    let mut j = n - 1;
    for i in 0..n {
        let e = verts[j] - verts[i];
        let w = p - verts[i];
        let t = (w.dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
        d = d.min((w - e * t).norm_squared());
        // Crossing-parity test: flips once per edge the upward ray crosses.
        let c0 = p.y >= verts[i].y;
        let c1 = p.y < verts[j].y;
        let c2 = e.x * w.y > e.y * w.x;
        if (c0 && c1 && c2) || (!c0 && !c1 && !c2) {
            sign = -sign;
        }
        j = i;
    }
    sign * d.sqrt()
}

/// One placed object: a shape, its pose, and its identity.
///
/// `instance` is the ground-truth instance id (nonzero, unique per scene)
/// and doubles as the mask id in emitted datasets. `class` 0 means the
/// object is present in geometry but never annotated.
#[derive(Debug, Clone)]
pub struct Primitive {
    pub shape: Shape,
    pub pose: RigidPose,
    pub instance: u16,
    pub class: ClassId,
    pub class_name: String,
}

impl Primitive {
    /// Unsigned distance from a world point to this primitive's surface.
    pub fn surface_distance(&self, world: &Vector3<f64>) -> f64 {
        let local = self.pose.inverse().transform_point(world);
        self.shape.distance(&local).abs()
    }

    /// World-frame bounding box as `(min, max)` corners.
    pub fn world_aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let (mn, mx) = self.shape.local_aabb();
        let center_l = (mn + mx) / 2.0;
        let half_l = (mx - mn) / 2.0;
        let rot = self.pose.isometry().rotation.to_rotation_matrix();
        let half_w = rot.matrix().abs() * half_l;
        let center_w = self.pose.transform_point(&center_l);
        (center_w - half_w, center_w + half_w)
    }
}

/// Depth-dependent Gaussian noise: a pixel at depth `z` receives additive
/// noise with standard deviation `sigma_per_m2 * z^2` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthNoise {
    pub sigma_per_m2: f64,
    pub seed: u64,
}

/// A complete synthetic scene: camera, objects, trajectory, optional noise.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    pub primitives: Vec<Primitive>,
    pub trajectory: Vec<RigidPose>,
    pub noise: Option<DepthNoise>,
}

impl SceneSpec {
    pub fn new(
        intrinsics: CameraIntrinsics,
        primitives: Vec<Primitive>,
        trajectory: Vec<RigidPose>,
    ) -> Self {
        Self {
            intrinsics,
            primitives,
            trajectory,
            noise: None,
        }
    }

    /// Checks structural invariants: nonempty trajectory, valid shapes,
    /// nonzero instance ids, and no duplicate instance ids.
    pub fn validate(&self) -> Result<()> {
        if self.trajectory.is_empty() {
            return Err(Error::InvalidScene("trajectory must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        for prim in &self.primitives {
            prim.shape.validate()?;
            if prim.instance == 0 {
                return Err(Error::InvalidScene(
                    "instance id 0 is reserved for background".into(),
                ));
            }
            if !seen.insert(prim.instance) {
                return Err(Error::InvalidScene(format!(
                    "duplicate instance id {}",
                    prim.instance
                )));
            }
        }
        if let Some(noise) = &self.noise {
            if !(noise.sigma_per_m2 >= 0.0 && noise.sigma_per_m2.is_finite()) {
                return Err(Error::InvalidScene(format!(
                    "noise sigma {} must be finite and non-negative",
                    noise.sigma_per_m2
                )));
            }
        }
        Ok(())
    }

    /// Parses a scene from TOML and validates it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SceneFile = toml::from_str(text)?;
        let scene = file.into_scene()?;
        scene.validate()?;
        Ok(scene)
    }

    /// Serializes the scene back to TOML with the trajectory written out
    /// as an explicit pose list.
    pub fn to_toml_string(&self) -> Result<String> {
        let file = SceneFile::from_scene(self);
        toml::to_string_pretty(&file)
            .map_err(|e| Error::InvalidScene(format!("scene not serializable: {e}")))
    }
}

/// Loads and validates a scene description from a TOML file.
pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path)?;
    SceneSpec::from_toml_str(&text)
}

/// Camera poses evenly spaced on a circle of `radius` around `center`,
/// raised by `height`, all looking at `center`. Angles cover the full turn
/// with the endpoint excluded, so frame 0 and frame `count` never coincide.
pub fn orbit_trajectory(
    center: [f64; 3],
    radius: f64,
    height: f64,
    count: u32,
) -> Result<Vec<RigidPose>> {
    if count == 0 {
        return Err(Error::InvalidScene("orbit needs at least one frame".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidScene(format!(
            "orbit radius {radius} must be positive"
        )));
    }
    let mut poses = Vec::with_capacity(count as usize);
    for k in 0..count {
        let angle = 2.0 * std::f64::consts::PI * f64::from(k) / f64::from(count);
        let eye = [
            center[0] + radius * angle.cos(),
            center[1] + height,
            center[2] + radius * angle.sin(),
        ];
        poses.push(RigidPose::looking_at(eye, center, [0.0, 1.0, 0.0])?);
    }
    Ok(poses)
}

/// Renders exact depth and the instance-id raster for one camera pose.
///
/// Depth is the camera-frame `z` of the nearest surface along each pixel
/// ray; pixels that hit nothing stay invalid. Ties between primitives at
/// identical depth keep the earlier one in the scene list.
pub fn render_exact(scene: &SceneSpec, pose: &RigidPose) -> (DepthFrame, Vec<u16>) {
    let intr = &scene.intrinsics;
    let mut depth = DepthFrame::zeros(intr.width(), intr.height());
    let mut ids = vec![0u16; intr.pixel_count()];
    let origin = pose.translation();
    // Per-primitive ray data in local frames, precomputed once per frame.
    let locals: Vec<(RigidPose, Vector3<f64>)> = scene
        .primitives
        .iter()
        .map(|p| {
            let inv = p.pose.inverse();
            let local_origin = inv.transform_point(&origin);
            (inv, local_origin)
        })
        .collect();
    for v in 0..intr.height() {
        for u in 0..intr.width() {
            // The ray direction has camera z = 1, so t equals z-depth.
            let dir_world = pose.rotate_vector(&intr.ray_direction(f64::from(u), f64::from(v)));
            let mut best: Option<(f64, u16)> = None;
            for (prim, (inv, local_origin)) in scene.primitives.iter().zip(&locals) {
                let local_dir = inv.rotate_vector(&dir_world);
                if let Some(t) = prim.shape.raycast(local_origin, &local_dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, prim.instance));
                    }
                }
            }
            if let Some((t, id)) = best {
                depth.set(u, v, t as f32);
                ids[(v * intr.width() + u) as usize] = id;
            }
        }
    }
    (depth, ids)
}

/// Renders trajectory frame `frame`, applying the scene's noise model if
/// configured. The noise stream is seeded per frame, so re-rendering the
/// same frame is reproducible. The id raster is always noise-free.
pub fn render_frame(scene: &SceneSpec, frame: usize) -> Result<(DepthFrame, Vec<u16>)> {
    let pose = scene.trajectory.get(frame).ok_or_else(|| {
        Error::InvalidScene(format!(
            "frame {frame} outside trajectory of length {}",
            scene.trajectory.len()
        ))
    })?;
    let (mut depth, ids) = render_exact(scene, pose);
    if let Some(noise) = &scene.noise {
        if noise.sigma_per_m2 > 0.0 {
            let stream = noise.seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for z in depth.data_mut() {
                if *z > 0.0 {
                    let exact = f64::from(*z);
                    let noisy =
                        exact + normal.sample(&mut rng) * noise.sigma_per_m2 * exact * exact;
                    *z = if noisy > 0.0 { noisy as f32 } else { 0.0 };
                }
            }
        }
    }
    Ok((depth, ids))
}

/// One ground-truth object as a set of voxels in map index space.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub instance: u16,
    pub class: ClassId,
    pub class_name: String,
    /// Sorted, deduplicated voxel indices.
    pub voxels: Vec<[i32; 3]>,
}

/// Voxelized ground truth for a scene at a given map resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthVolume {
    pub voxel_size: f64,
    pub truncation: f64,
    /// Instances sorted by id; every scene primitive appears exactly once.
    pub instances: Vec<GtInstance>,
}

/// Labels every voxel whose center lies within `truncation` of a primitive
/// surface. A voxel near several surfaces goes to the closest one; exact
/// distance ties prefer the lower instance id.
pub fn ground_truth_volume(
    scene: &SceneSpec,
    voxel_size: f64,
    truncation: f64,
) -> Result<GroundTruthVolume> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::InvalidScene(format!(
            "voxel size {voxel_size} must be positive"
        )));
    }
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(Error::InvalidScene(format!(
            "truncation {truncation} must be positive"
        )));
    }
    for prim in &scene.primitives {
        prim.shape.validate()?;
    }

    // Candidate voxels: every index whose center could be within truncation
    // of some primitive, taken from inflated world bounding boxes.
    let mut candidates: BTreeSet<[i32; 3]> = BTreeSet::new();
    for prim in &scene.primitives {
        let (mn, mx) = prim.world_aabb();
        let lo = (mn.map(|c| c - truncation) / voxel_size).map(|c| c.floor() as i32 - 1);
        let hi = (mx.map(|c| c + truncation) / voxel_size).map(|c| c.floor() as i32 + 1);
        for x in lo.x..=hi.x {
            for y in lo.y..=hi.y {
                for z in lo.z..=hi.z {
                    candidates.insert([x, y, z]);
                }
            }
        }
    }

    let mut by_instance: BTreeMap<u16, Vec<[i32; 3]>> = BTreeMap::new();
    for index in candidates {
        let center = Vector3::new(
            (f64::from(index[0]) + 0.5) * voxel_size,
            (f64::from(index[1]) + 0.5) * voxel_size,
            (f64::from(index[2]) + 0.5) * voxel_size,
        );
        let mut best: Option<(f64, u16)> = None;
        for prim in &scene.primitives {
            let d = prim.surface_distance(&center);
            if d > truncation {
                continue;
            }
            let closer = match best {
                None => true,
                Some((bd, bi)) => d < bd || (d == bd && prim.instance < bi),
            };
            if closer {
                best = Some((d, prim.instance));
            }
        }
        if let Some((_, instance)) = best {
            by_instance.entry(instance).or_default().push(index);
        }
    }

    let instances = scene
        .primitives
        .iter()
        .map(|p| GtInstance {
            instance: p.instance,
            class: p.class,
            class_name: p.class_name.clone(),
            voxels: by_instance.remove(&p.instance).unwrap_or_default(),
        })
        .collect::<Vec<_>>();
    let mut instances = instances;
    instances.sort_by_key(|i| i.instance);
    Ok(GroundTruthVolume {
        voxel_size,
        truncation,
        instances,
    })
}

const GT_MAGIC: &[u8; 4] = b"OVGT";
const GT_VERSION: u32 = 1;

/// Writes a ground-truth volume in its binary format (magic `OVGT`,
/// little-endian, instances and voxels in sorted order).
pub fn save_ground_truth(path: &Path, gt: &GroundTruthVolume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GT_MAGIC)?;
    w.write_u32::<LittleEndian>(GT_VERSION)?;
    w.write_f64::<LittleEndian>(gt.voxel_size)?;
    w.write_f64::<LittleEndian>(gt.truncation)?;
    w.write_u32::<LittleEndian>(gt.instances.len() as u32)?;
    for inst in &gt.instances {
        w.write_u32::<LittleEndian>(u32::from(inst.instance))?;
        w.write_u32::<LittleEndian>(inst.class.0)?;
        let name = inst.class_name.as_bytes();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name)?;
        w.write_u64::<LittleEndian>(inst.voxels.len() as u64)?;
        for v in &inst.voxels {
            for c in v {
                w.write_i32::<LittleEndian>(*c)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a ground-truth volume written by [`save_ground_truth`].
pub fn load_ground_truth(path: &Path) -> Result<GroundTruthVolume> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: String| Error::Dataset(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GT_MAGIC {
        return Err(bad("not a ground-truth volume file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != GT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let voxel_size = r.read_f64::<LittleEndian>()?;
    let truncation = r.read_f64::<LittleEndian>()?;
    if !(voxel_size > 0.0 && voxel_size.is_finite() && truncation > 0.0 && truncation.is_finite()) {
        return Err(bad(format!(
            "invalid parameters: voxel size {voxel_size}, truncation {truncation}"
        )));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut instances = Vec::with_capacity(count as usize);
    let mut last_id: Option<u16> = None;
    for _ in 0..count {
        let id = r.read_u32::<LittleEndian>()?;
        let id = u16::try_from(id).map_err(|_| bad(format!("instance id {id} out of range")))?;
        if id == 0 {
            return Err(bad("instance id 0 is reserved".into()));
        }
        if let Some(prev) = last_id {
            if id <= prev {
                return Err(bad(format!("instance ids not strictly increasing at {id}")));
            }
        }
        last_id = Some(id);
        let class = ClassId(r.read_u32::<LittleEndian>()?);
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let class_name = String::from_utf8(name)
            .map_err(|_| bad(format!("instance {id} class name is not UTF-8")))?;
        let voxel_count = r.read_u64::<LittleEndian>()?;
        let mut voxels = Vec::with_capacity(voxel_count as usize);
        for _ in 0..voxel_count {
            let x = r.read_i32::<LittleEndian>()?;
            let y = r.read_i32::<LittleEndian>()?;
            let z = r.read_i32::<LittleEndian>()?;
            voxels.push([x, y, z]);
        }
        instances.push(GtInstance {
            instance: id,
            class,
            class_name,
            voxels,
        });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(bad("trailing bytes after instance table".into()));
    }
    Ok(GroundTruthVolume {
        voxel_size,
        truncation,
        instances,
    })
}

/// Renders the full trajectory into the on-disk dataset layout: intrinsics,
/// `poses.txt`, depth images, instance masks for annotated primitives, the
/// voxelized ground truth, and a normalized copy of the scene description.
pub fn write_dataset(
    scene: &SceneSpec,
    dir: &Path,
    voxel_size: f64,
    truncation: f64,
) -> Result<()> {
    scene.validate()?;
    fs::create_dir_all(dir.join(dataset::DEPTH_DIR))?;
    dataset::write_intrinsics(&dir.join(dataset::INTRINSICS_FILE), &scene.intrinsics)?;
    let poses: Vec<(u64, RigidPose)> = scene
        .trajectory
        .iter()
        .enumerate()
        .map(|(i, p)| (i as u64, *p))
        .collect();
    dataset::write_poses(&dir.join(dataset::POSES_FILE), &poses)?;

    let annotated: BTreeMap<u16, &Primitive> = scene
        .primitives
        .iter()
        .filter(|p| !p.class.is_none())
        .map(|p| (p.instance, p))
        .collect();
    if !annotated.is_empty() {
        fs::create_dir_all(dir.join(dataset::MASKS_DIR))?;
    }

    for frame in 0..scene.trajectory.len() {
        let (depth, ids) = render_frame(scene, frame)?;
        let depth_path = dir
            .join(dataset::DEPTH_DIR)
            .join(dataset::depth_file_name(frame as u64));
        dataset::write_depth_png(&depth_path, &depth)?;
        if annotated.is_empty() {
            continue;
        }
        let mut pixels: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
        for (pi, &id) in ids.iter().enumerate() {
            if id != 0 && annotated.contains_key(&id) {
                pixels.entry(id).or_default().push(pi as u32);
            }
        }
        if pixels.is_empty() {
            continue;
        }
        let masks: Vec<(u16, MaskEntry, Vec<u32>)> = pixels
            .into_iter()
            .map(|(id, px)| {
                let prim = annotated[&id];
                let entry = MaskEntry {
                    class: prim.class,
                    class_name: prim.class_name.clone(),
                    score: 1.0,
                };
                (id, entry, px)
            })
            .collect();
        let frame_masks = MaskFrame::from_binary_masks(
            scene.intrinsics.width(),
            scene.intrinsics.height(),
            &masks,
        )?;
        let mask_path = dir
            .join(dataset::MASKS_DIR)
            .join(dataset::mask_file_name(frame as u64));
        write_masks(&mask_path, &frame_masks)?;
    }

    let gt = ground_truth_volume(scene, voxel_size, truncation)?;
    save_ground_truth(&dir.join(dataset::GROUND_TRUTH_FILE), &gt)?;
    fs::write(dir.join(dataset::SCENE_FILE), scene.to_toml_string()?)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    camera: CameraConfig,
    #[serde(default, rename = "primitive")]
    primitives: Vec<PrimitiveConfig>,
    #[serde(default, rename = "pose", skip_serializing_if = "Vec::is_empty")]
    poses: Vec<PoseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orbit: Option<OrbitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraConfig {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct PrimitiveConfig {
    kind: String,
    instance: u16,
    #[serde(default)]
    class: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    translation: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation_wxyz: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    half_extents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cut: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseConfig {
    translation: [f64; 3],
    rotation_wxyz: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct OrbitConfig {
    center: [f64; 3],
    radius: f64,
    #[serde(default)]
    height: f64,
    frames: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct NoiseConfig {
    sigma_per_m2: f64,
    #[serde(default)]
    seed: u64,
}

impl SceneFile {
    fn into_scene(self) -> Result<SceneSpec> {
        let cam = &self.camera;
        let intrinsics =
            CameraIntrinsics::new(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)?;
        let mut primitives = Vec::with_capacity(self.primitives.len());
        for p in &self.primitives {
            primitives.push(p.to_primitive()?);
        }
        let trajectory = match (&self.orbit, self.poses.is_empty()) {
            (Some(_), false) => {
                return Err(Error::InvalidScene(
                    "give either explicit poses or an orbit, not both".into(),
                ))
            }
            (Some(orbit), true) => {
                orbit_trajectory(orbit.center, orbit.radius, orbit.height, orbit.frames)?
            }
            (None, false) => {
                let mut poses = Vec::with_capacity(self.poses.len());
                for p in &self.poses {
                    poses.push(RigidPose::from_parts(p.translation, p.rotation_wxyz)?);
                }
                poses
            }
            (None, true) => {
                return Err(Error::InvalidScene(
                    "scene has no trajectory: add [[pose]] entries or an [orbit]".into(),
                ))
            }
        };
        let noise = self.noise.as_ref().map(|n| DepthNoise {
            sigma_per_m2: n.sigma_per_m2,
            seed: n.seed,
        });
        Ok(SceneSpec {
            intrinsics,
            primitives,
            trajectory,
            noise,
        })
    }

    fn from_scene(scene: &SceneSpec) -> Self {
        let intr = &scene.intrinsics;
        Self {
            camera: CameraConfig {
                fx: intr.fx(),
                fy: intr.fy(),
                cx: intr.cx(),
                cy: intr.cy(),
                width: intr.width(),
                height: intr.height(),
            },
            primitives: scene
                .primitives
                .iter()
                .map(PrimitiveConfig::from_primitive)
                .collect(),
            poses: scene
                .trajectory
                .iter()
                .map(|p| PoseConfig {
                    translation: p.translation().into(),
                    rotation_wxyz: p.rotation_wxyz(),
                })
                .collect(),
            orbit: None,
            noise: scene.noise.as_ref().map(|n| NoiseConfig {
                sigma_per_m2: n.sigma_per_m2,
                seed: n.seed,
            }),
        }
    }
}

impl PrimitiveConfig {
    fn to_primitive(&self) -> Result<Primitive> {
        let need = |opt: Option<f64>, what: &str| {
            opt.ok_or_else(|| {
                Error::InvalidScene(format!("{} primitive needs `{what}`", self.kind))
            })
        };
        let extents = |n: usize| -> Result<Vec<f64>> {
            match &self.half_extents {
                Some(h) if h.len() == n => Ok(h.clone()),
                Some(h) => Err(Error::InvalidScene(format!(
                    "{} primitive needs {n} half extents, got {}",
                    self.kind,
                    h.len()
                ))),
                None => Err(Error::InvalidScene(format!(
                    "{} primitive needs `half_extents`",
                    self.kind
                ))),
            }
        };
        let shape = match self.kind.as_str() {
            "sphere" => Shape::Sphere {
                radius: need(self.radius, "radius")?,
            },
            "box" => {
                let h = extents(3)?;
                Shape::Cuboid {
                    half_extents: Vector3::new(h[0], h[1], h[2]),
                }
            }
            "rect" => {
                let h = extents(2)?;
                Shape::Rect {
                    half_x: h[0],
                    half_y: h[1],
                }
            }
            "lprism" => {
                let h = extents(3)?;
                let cut = self
                    .cut
                    .ok_or_else(|| Error::InvalidScene("lprism primitive needs `cut`".into()))?;
                Shape::LPrism {
                    half_extents: Vector3::new(h[0], h[1], h[2]),
                    cut: (cut[0], cut[1]),
                }
            }
            other => {
                return Err(Error::InvalidScene(format!(
                    "unknown primitive kind `{other}` (expected sphere, box, rect, or lprism)"
                )))
            }
        };
        let pose = RigidPose::from_parts(
            self.translation.unwrap_or([0.0; 3]),
            self.rotation_wxyz.unwrap_or([1.0, 0.0, 0.0, 0.0]),
        )?;
        Ok(Primitive {
            shape,
            pose,
            instance: self.instance,
            class: ClassId(self.class),
            class_name: self.class_name.clone().unwrap_or_default(),
        })
    }

    fn from_primitive(prim: &Primitive) -> Self {
        let (kind, radius, half_extents, cut) = match &prim.shape {
            Shape::Sphere { radius } => ("sphere", Some(*radius), None, None),
            Shape::Cuboid { half_extents } => (
                "box",
                None,
                Some(vec![half_extents.x, half_extents.y, half_extents.z]),
                None,
            ),
            Shape::Rect { half_x, half_y } => ("rect", None, Some(vec![*half_x, *half_y]), None),
            Shape::LPrism { half_extents, cut } => (
                "lprism",
                None,
                Some(vec![half_extents.x, half_extents.y, half_extents.z]),
                Some([cut.0, cut.1]),
            ),
        };
        Self {
            kind: kind.to_string(),
            instance: prim.instance,
            class: prim.class.0,
            class_name: (!prim.class_name.is_empty()).then(|| prim.class_name.clone()),
            translation: Some(prim.pose.translation().into()),
            rotation_wxyz: Some(prim.pose.rotation_wxyz()),
            radius,
            half_extents,
            cut,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unproject;
    use approx::assert_relative_eq;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).unwrap()
    }

    fn sphere(instance: u16, center: [f64; 3], radius: f64) -> Primitive {
        Primitive {
            shape: Shape::Sphere { radius },
            pose: RigidPose::from_parts(center, [1.0, 0.0, 0.0, 0.0]).unwrap(),
            instance,
            class: ClassId::NONE,
            class_name: String::new(),
        }
    }

    #[test]
    fn empty_scene_renders_all_invalid() {
        let scene = SceneSpec::new(test_intrinsics(), vec![], vec![RigidPose::identity()]);
        let (depth, ids) = render_exact(&scene, &scene.trajectory[0]);
        assert!(depth.data().iter().all(|&z| z == 0.0));
        assert!(ids.iter().all(|&id| id == 0));
    }

    #[test]
    fn sphere_center_pixel_depth_is_exact() {
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![sphere(3, [0.0, 0.0, 2.0], 1.0)],
            vec![RigidPose::identity()],
        );
        let (depth, ids) = render_exact(&scene, &scene.trajectory[0]);
        // The center-pixel ray runs straight down the optical axis.
        assert_eq!(depth.get(80, 60), 1.0);
        assert_eq!(ids[60 * 160 + 80], 3);
        // Off-sphere pixels stay invalid.
        assert_eq!(depth.get(0, 0), 0.0);
        assert_eq!(ids[0], 0);
    }

    #[test]
    fn nearest_primitive_wins_occlusion() {
        let near_box = Primitive {
            shape: Shape::Cuboid {
                half_extents: Vector3::new(0.3, 0.3, 0.1),
            },
            pose: RigidPose::from_parts([0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0]).unwrap(),
            instance: 7,
            class: ClassId::NONE,
            class_name: String::new(),
        };
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![sphere(2, [0.0, 0.0, 3.0], 1.0), near_box],
            vec![RigidPose::identity()],
        );
        let (depth, ids) = render_exact(&scene, &scene.trajectory[0]);
        assert_relative_eq!(f64::from(depth.get(80, 60)), 0.9, epsilon = 1e-6);
        assert_eq!(ids[60 * 160 + 80], 7);
    }

    #[test]
    fn lprism_notch_lets_rays_through() {
        let prism = Primitive {
            shape: Shape::LPrism {
                half_extents: Vector3::new(0.4, 0.4, 0.2),
                cut: (0.4, 0.4),
            },
            pose: RigidPose::from_parts([0.0, 0.0, 1.5], [1.0, 0.0, 0.0, 0.0]).unwrap(),
            instance: 1,
            class: ClassId::NONE,
            class_name: String::new(),
        };
        let scene = SceneSpec::new(test_intrinsics(), vec![prism], vec![RigidPose::identity()]);
        let (depth, _) = render_exact(&scene, &scene.trajectory[0]);
        // Pixel offset +20 maps through the notch quadrant (+x, +y): no hit.
        assert_eq!(depth.get(100, 80), 0.0);
        // The mirrored pixel hits the solid quadrant on the front face.
        assert_relative_eq!(f64::from(depth.get(60, 40)), 1.3, epsilon = 1e-6);
    }

    #[test]
    fn rendered_points_lie_on_primitive_surfaces() {
        let tilted = RigidPose::from_parts(
            [0.3, -0.2, 1.8],
            [
                0.9238795325112867,
                0.2209424046852679,
                0.2209424046852679,
                0.2209424046852679,
            ],
        )
        .unwrap();
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![
                sphere(1, [-0.5, 0.1, 2.2], 0.45),
                Primitive {
                    shape: Shape::Cuboid {
                        half_extents: Vector3::new(0.25, 0.35, 0.2),
                    },
                    pose: tilted,
                    instance: 2,
                    class: ClassId::NONE,
                    class_name: String::new(),
                },
                Primitive {
                    shape: Shape::Rect {
                        half_x: 2.0,
                        half_y: 2.0,
                    },
                    pose: RigidPose::from_parts([0.0, 0.0, 3.5], [1.0, 0.0, 0.0, 0.0]).unwrap(),
                    instance: 3,
                    class: ClassId::NONE,
                    class_name: String::new(),
                },
                Primitive {
                    shape: Shape::LPrism {
                        half_extents: Vector3::new(0.3, 0.3, 0.15),
                        cut: (0.3, 0.3),
                    },
                    pose: RigidPose::from_parts([0.7, 0.3, 2.0], [1.0, 0.0, 0.0, 0.0]).unwrap(),
                    instance: 4,
                    class: ClassId::NONE,
                    class_name: String::new(),
                },
            ],
            vec![
                RigidPose::looking_at([0.1, 0.2, -0.1], [0.0, 0.0, 2.0], [0.0, 1.0, 0.0]).unwrap(),
            ],
        );
        let pose = &scene.trajectory[0];
        let (depth, ids) = render_exact(&scene, pose);
        let vmap = unproject(&depth, &scene.intrinsics, 10.0).unwrap();
        assert!(
            vmap.valid_count() > 5000,
            "scene barely visible: {}",
            vmap.valid_count()
        );
        for v in 0..depth.height() {
            for u in 0..depth.width() {
                if !vmap.is_valid(u, v) {
                    continue;
                }
                let world = pose.transform_point(&vmap.point(u, v));
                let dist = scene
                    .primitives
                    .iter()
                    .map(|p| p.surface_distance(&world))
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    dist < 1e-4,
                    "pixel ({u}, {v}) id {} is {dist} off the nearest surface",
                    ids[(v * depth.width() + u) as usize]
                );
            }
        }
    }

    #[test]
    fn gt_volume_wraps_sphere_shell() {
        let radius = 0.5;
        let truncation = 0.08;
        let voxel_size = 0.02;
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![sphere(1, [0.0, 0.0, 0.0], radius)],
            vec![RigidPose::identity()],
        );
        let gt = ground_truth_volume(&scene, voxel_size, truncation).unwrap();
        assert_eq!(gt.instances.len(), 1);
        let voxels = &gt.instances[0].voxels;
        assert!(voxels.len() > 1000);
        for v in voxels {
            let center = Vector3::new(
                (f64::from(v[0]) + 0.5) * voxel_size,
                (f64::from(v[1]) + 0.5) * voxel_size,
                (f64::from(v[2]) + 0.5) * voxel_size,
            );
            assert!((center.norm() - radius).abs() <= truncation + 1e-12);
        }
        // Every surface point's containing voxel is labeled.
        let set: BTreeSet<_> = voxels.iter().collect();
        for i in 0..200 {
            let theta = std::f64::consts::PI * f64::from(i) / 200.0;
            for j in 0..40 {
                let phi = 2.0 * std::f64::consts::PI * f64::from(j) / 40.0;
                let p = Vector3::new(
                    radius * theta.sin() * phi.cos(),
                    radius * theta.sin() * phi.sin(),
                    radius * theta.cos(),
                );
                let idx = [
                    (p.x / voxel_size).floor() as i32,
                    (p.y / voxel_size).floor() as i32,
                    (p.z / voxel_size).floor() as i32,
                ];
                assert!(set.contains(&idx), "surface voxel {idx:?} missing");
            }
        }
    }

    #[test]
    fn gt_volume_tie_prefers_lower_instance() {
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![
                sphere(4, [0.0, 0.0, 0.0], 0.3),
                sphere(2, [0.0, 0.0, 0.0], 0.3),
            ],
            vec![RigidPose::identity()],
        );
        let gt = ground_truth_volume(&scene, 0.05, 0.1).unwrap();
        let by_id: BTreeMap<u16, usize> = gt
            .instances
            .iter()
            .map(|i| (i.instance, i.voxels.len()))
            .collect();
        assert!(by_id[&2] > 0);
        assert_eq!(by_id[&4], 0);
    }

    #[test]
    fn gt_volume_lprism_is_one_instance_across_arms() {
        let prism = Primitive {
            shape: Shape::LPrism {
                half_extents: Vector3::new(0.4, 0.4, 0.2),
                cut: (0.4, 0.4),
            },
            pose: RigidPose::identity(),
            instance: 9,
            class: ClassId(5),
            class_name: "bracket".into(),
        };
        let scene = SceneSpec::new(test_intrinsics(), vec![prism], vec![RigidPose::identity()]);
        let voxel_size = 0.02;
        let gt = ground_truth_volume(&scene, voxel_size, 0.06).unwrap();
        assert_eq!(gt.instances.len(), 1);
        let set: BTreeSet<_> = gt.instances[0].voxels.iter().collect();
        let index_of = |p: [f64; 3]| {
            [
                (p[0] / voxel_size).floor() as i32,
                (p[1] / voxel_size).floor() as i32,
                (p[2] / voxel_size).floor() as i32,
            ]
        };
        // One probe on each arm's outer surface, one deep inside the notch.
        assert!(set.contains(&index_of([0.3, -0.4, 0.0])));
        assert!(set.contains(&index_of([-0.4, 0.3, 0.0])));
        assert!(!set.contains(&index_of([0.3, 0.3, 0.0])));
    }

    #[test]
    fn disjoint_primitives_get_disjoint_voxels() {
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![
                sphere(1, [0.0, 0.0, 0.0], 0.2),
                sphere(2, [1.0, 0.0, 0.0], 0.2),
            ],
            vec![RigidPose::identity()],
        );
        let gt = ground_truth_volume(&scene, 0.02, 0.08).unwrap();
        let a: BTreeSet<_> = gt.instances[0].voxels.iter().collect();
        let b: BTreeSet<_> = gt.instances[1].voxels.iter().collect();
        assert!(!a.is_empty() && !b.is_empty());
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn noise_is_seeded_and_scales_with_depth() {
        let mut scene = SceneSpec::new(
            test_intrinsics(),
            vec![Primitive {
                shape: Shape::Rect {
                    half_x: 4.0,
                    half_y: 4.0,
                },
                pose: RigidPose::from_parts([0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0]).unwrap(),
                instance: 1,
                class: ClassId::NONE,
                class_name: String::new(),
            }],
            vec![RigidPose::identity(), RigidPose::identity()],
        );
        scene.noise = Some(DepthNoise {
            sigma_per_m2: 0.005,
            seed: 11,
        });
        let (noisy_a, _) = render_frame(&scene, 0).unwrap();
        let (noisy_b, _) = render_frame(&scene, 0).unwrap();
        assert_eq!(noisy_a.data(), noisy_b.data());
        let (other_frame, _) = render_frame(&scene, 1).unwrap();
        assert_ne!(noisy_a.data(), other_frame.data());

        let (exact, _) = render_exact(&scene, &scene.trajectory[0]);
        let mut residuals = Vec::new();
        for (n, e) in noisy_a.data().iter().zip(exact.data()) {
            if *e > 0.0 {
                residuals.push(f64::from(n - e));
            }
        }
        assert!(residuals.len() > 10_000);
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals
            .iter()
            .map(|r| (r - mean) * (r - mean))
            .sum::<f64>()
            / residuals.len() as f64;
        // Center pixel depth is 2 m, so sigma there is 0.005 * 4 = 0.02 m.
        // Oblique rays are deeper, which only raises the expected spread.
        let sigma = var.sqrt();
        assert!(
            (0.014..0.04).contains(&sigma),
            "noise sigma {sigma} outside expected band"
        );
        assert!(mean.abs() < 0.005);
    }

    #[test]
    fn scene_toml_round_trip() {
        let text = r#"
            [camera]
            fx = 100.0
            fy = 100.0
            cx = 80.0
            cy = 60.0
            width = 160
            height = 120

            [[primitive]]
            kind = "sphere"
            instance = 1
            class = 3
            class_name = "ball"
            translation = [0.0, 0.0, 2.0]
            radius = 0.5

            [[primitive]]
            kind = "lprism"
            instance = 2
            translation = [1.0, 0.0, 2.0]
            half_extents = [0.3, 0.3, 0.2]
            cut = [0.3, 0.3]

            [orbit]
            center = [0.0, 0.0, 2.0]
            radius = 1.5
            height = 0.5
            frames = 8

            [noise]
            sigma_per_m2 = 0.005
            seed = 4
        "#;
        let scene = SceneSpec::from_toml_str(text).unwrap();
        assert_eq!(scene.primitives.len(), 2);
        assert_eq!(scene.trajectory.len(), 8);
        assert_eq!(scene.primitives[0].class, ClassId(3));
        assert_eq!(scene.noise.as_ref().unwrap().seed, 4);

        let round = SceneSpec::from_toml_str(&scene.to_toml_string().unwrap()).unwrap();
        assert_eq!(round.primitives.len(), 2);
        assert_eq!(round.trajectory.len(), 8);
        for (a, b) in scene.trajectory.iter().zip(&round.trajectory) {
            assert!((a.translation() - b.translation()).norm() < 1e-12);
        }
    }

    #[test]
    fn scene_validation_rejects_bad_input() {
        let base = |body: &str| {
            format!(
                "[camera]\nfx = 100.0\nfy = 100.0\ncx = 80.0\ncy = 60.0\nwidth = 160\nheight = 120\n{body}"
            )
        };
        let pose =
            "[[pose]]\ntranslation = [0.0, 0.0, 0.0]\nrotation_wxyz = [1.0, 0.0, 0.0, 0.0]\n";

        // No trajectory at all.
        assert!(SceneSpec::from_toml_str(&base("")).is_err());
        // Both explicit poses and an orbit.
        assert!(SceneSpec::from_toml_str(&base(
            "[[pose]]\ntranslation = [0.0, 0.0, 0.0]\nrotation_wxyz = [1.0, 0.0, 0.0, 0.0]\n[orbit]\ncenter = [0.0, 0.0, 2.0]\nradius = 1.0\nframes = 4\n"
        ))
        .is_err());
        // Reserved instance id.
        assert!(SceneSpec::from_toml_str(&base(&format!(
            "{pose}[[primitive]]\nkind = \"sphere\"\ninstance = 0\nradius = 0.5\n"
        )))
        .is_err());
        // Duplicate instance ids.
        assert!(SceneSpec::from_toml_str(&base(&format!(
            "{pose}[[primitive]]\nkind = \"sphere\"\ninstance = 1\nradius = 0.5\n[[primitive]]\nkind = \"sphere\"\ninstance = 1\nradius = 0.4\n"
        )))
        .is_err());
        // Unknown kind.
        assert!(SceneSpec::from_toml_str(&base(&format!(
            "{pose}[[primitive]]\nkind = \"torus\"\ninstance = 1\nradius = 0.5\n"
        )))
        .is_err());
        // Cut as large as the extents.
        assert!(SceneSpec::from_toml_str(&base(&format!(
            "{pose}[[primitive]]\nkind = \"lprism\"\ninstance = 1\nhalf_extents = [0.3, 0.3, 0.2]\ncut = [0.6, 0.3]\n"
        )))
        .is_err());
        // Wrong extent arity.
        assert!(SceneSpec::from_toml_str(&base(&format!(
            "{pose}[[primitive]]\nkind = \"box\"\ninstance = 1\nhalf_extents = [0.3, 0.3]\n"
        )))
        .is_err());
    }

    #[test]
    fn orbit_poses_all_look_at_center() {
        let center = [0.2, -0.1, 1.7];
        let poses = orbit_trajectory(center, 1.4, 0.6, 12).unwrap();
        assert_eq!(poses.len(), 12);
        let intr = test_intrinsics();
        let target = Vector3::new(center[0], center[1], center[2]);
        for pose in &poses {
            let (u, v, depth) = crate::geometry::project(&target, pose, &intr)
                .pixel()
                .expect("center must project");
            assert_relative_eq!(u, 80.0, epsilon = 1e-9);
            assert_relative_eq!(v, 60.0, epsilon = 1e-9);
            assert!(depth > 0.0);
        }
    }

    #[test]
    fn ground_truth_file_round_trips() {
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![
                sphere(1, [0.0, 0.0, 2.0], 0.4),
                Primitive {
                    shape: Shape::Cuboid {
                        half_extents: Vector3::new(0.2, 0.2, 0.2),
                    },
                    pose: RigidPose::from_parts([1.2, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0]).unwrap(),
                    instance: 5,
                    class: ClassId(7),
                    class_name: "crate".into(),
                },
            ],
            vec![RigidPose::identity()],
        );
        let gt = ground_truth_volume(&scene, 0.04, 0.16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ground_truth.bin");
        save_ground_truth(&path, &gt).unwrap();
        let loaded = load_ground_truth(&path).unwrap();
        assert_eq!(gt, loaded);

        // Same content written twice is byte-identical.
        let path2 = dir.path().join("again.bin");
        save_ground_truth(&path2, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn ground_truth_loader_rejects_malformed_files() {
        let scene = SceneSpec::new(
            test_intrinsics(),
            vec![sphere(1, [0.0, 0.0, 0.0], 0.3)],
            vec![RigidPose::identity()],
        );
        let gt = ground_truth_volume(&scene, 0.05, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.bin");
        save_ground_truth(&path, &gt).unwrap();
        let bytes = fs::read(&path).unwrap();

        let bad_magic = {
            let mut b = bytes.clone();
            b[0] = b'X';
            b
        };
        let truncated = bytes[..bytes.len() / 2].to_vec();
        let trailing = {
            let mut b = bytes.clone();
            b.push(0);
            b
        };
        for (name, content) in [
            ("magic", bad_magic),
            ("truncated", truncated),
            ("trailing", trailing),
        ] {
            let p = dir.path().join(format!("{name}.bin"));
            fs::write(&p, content).unwrap();
            assert!(load_ground_truth(&p).is_err(), "{name} must be rejected");
        }
    }
}
