//! Pinhole camera model and rigid-body poses.
//!
//! Conventions used throughout the crate:
//! - camera frame: x right, y down, z forward (optical axis);
//! - a [`RigidPose`] attached to a frame is the camera-to-world transform;
//! - pixel `(u, v)` samples the image at integer coordinates, `u` along
//!   the row (width), `v` along the column (height);
//! - depth is the z-coordinate of the surface point in the camera frame,
//!   in meters, with 0 marking an invalid measurement.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Depth readings beyond this distance are treated as invalid unless the
/// caller overrides the range. Structured-light sensors are unreliable
/// further out.
pub const DEFAULT_MAX_RANGE_M: f64 = 5.0;

/// Pinhole intrinsics of a calibrated depth camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0 <= cx && cx < width as f64) || !(0.0 <= cy && cy < height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Ray direction through pixel `(u, v)`, unnormalized with z = 1.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Rigid-body transform stored as a unit quaternion plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    iso: Isometry3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            iso: Isometry3::identity(),
        }
    }

    /// Builds a pose from a translation in meters and a `(w, x, y, z)`
    /// quaternion. The quaternion is renormalized; a near-zero norm is
    /// rejected.
    pub fn from_parts(translation: [f64; 3], quat_wxyz: [f64; 4]) -> Result<Self> {
        let [w, x, y, z] = quat_wxyz;
        let q = Quaternion::new(w, x, y, z);
        if q.norm() < 1e-6 {
            return Err(Error::InvalidPose(format!(
                "quaternion norm {} too small to normalize",
                q.norm()
            )));
        }
        let rot = UnitQuaternion::from_quaternion(q);
        let tr = Translation3::new(translation[0], translation[1], translation[2]);
        Ok(Self {
            iso: Isometry3::from_parts(tr, rot),
        })
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self { iso }
    }

    /// Camera at `eye` looking at `target`, with `up` fixing the roll.
    /// Follows the camera convention above (z forward, y down).
    pub fn looking_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Self> {
        let eye = Vector3::from(eye);
        let target = Vector3::from(target);
        let up = Vector3::from(up);
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidPose("eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidPose(
                "up is parallel to view direction".into(),
            ));
        }
        let x = x.normalize();
        // y = z cross x is the projection of -up: the image-v axis points
        // down, keeping rendered frames upright.
        let y = z.cross(&x);
        let rot = nalgebra::Rotation3::from_basis_unchecked(&[x, y, z]);
        let rot = UnitQuaternion::from_rotation_matrix(&rot);
        Ok(Self {
            iso: Isometry3::from_parts(Translation3::from(eye), rot),
        })
    }

    pub fn inverse(&self) -> Self {
        Self {
            iso: self.iso.inverse(),
        }
    }

    pub fn compose(&self, other: &RigidPose) -> Self {
        Self {
            iso: self.iso * other.iso,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.iso.transform_point(&(*p).into()).coords
    }

    /// Applies only the rotation part.
    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation.transform_vector(v)
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn rotation_wxyz(&self) -> [f64; 4] {
        let q = self.iso.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        self.iso.to_homogeneous()
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }
}

impl std::ops::Mul for RigidPose {
    type Output = RigidPose;

    fn mul(self, rhs: RigidPose) -> RigidPose {
        self.compose(&rhs)
    }
}

/// Per-pixel depth raster in meters. 0 marks an invalid pixel.
#[derive(Debug, Clone)]
pub struct DepthFrame {
    width: u32,
    height: u32,
    depth_m: Vec<f32>,
}

impl DepthFrame {
    pub fn new(width: u32, height: u32, depth_m: Vec<f32>) -> Result<Self> {
        if depth_m.len() != width as usize * height as usize {
            return Err(Error::Dataset(format!(
                "depth buffer of {} values does not fill a {width}x{height} frame",
                depth_m.len()
            )));
        }
        Ok(Self {
            width,
            height,
            depth_m,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth_m: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.depth_m[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, meters: f32) {
        self.depth_m[v as usize * self.width as usize + u as usize] = meters;
    }

    pub fn data(&self) -> &[f32] {
        &self.depth_m
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.depth_m
    }
}

/// Per-pixel 3D points in the camera frame, produced by [`unproject`].
#[derive(Debug, Clone)]
pub struct VertexMap {
    width: u32,
    height: u32,
    points: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl VertexMap {
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

    /// Vertex at a valid pixel. The value at an invalid pixel is
    /// unspecified; check [`VertexMap::is_valid`] first.
    pub fn point(&self, u: u32, v: u32) -> Vector3<f64> {
        self.points[self.idx(u, v)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Back-projects one continuous pixel coordinate to the camera frame.
pub fn unproject_pixel(depth_m: f64, u: f64, v: f64, intr: &CameraIntrinsics) -> Vector3<f64> {
    intr.ray_direction(u, v) * depth_m
}

/// Back-projects a depth frame into a vertex map.
///
/// Pixels with depth 0 or beyond `max_range_m` are invalid.
pub fn unproject(
    depth: &DepthFrame,
    intr: &CameraIntrinsics,
    max_range_m: f64,
) -> Result<VertexMap> {
    if depth.width() != intr.width() || depth.height() != intr.height() {
        return Err(Error::DimensionMismatch {
            expected_width: intr.width(),
            expected_height: intr.height(),
            width: depth.width(),
            height: depth.height(),
        });
    }
    let w = depth.width() as usize;
    let h = depth.height() as usize;
    let mut points = vec![Vector3::zeros(); w * h];
    let mut valid = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let z = depth.data()[i] as f64;
            if z > 0.0 && z <= max_range_m {
                points[i] = unproject_pixel(z, u as f64, v as f64, intr);
                valid[i] = true;
            }
        }
    }
    Ok(VertexMap {
        width: depth.width(),
        height: depth.height(),
        points,
        valid,
    })
}

/// Outcome of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Continuous pixel coordinates and camera-frame depth.
    Pixel { u: f64, v: f64, depth: f64 },
    /// The point is at or behind the camera plane (z <= 0).
    BehindCamera,
    /// In front of the camera but outside the image bounds.
    OutOfView,
}

impl Projection {
    pub fn pixel(&self) -> Option<(f64, f64, f64)> {
        match *self {
            Projection::Pixel { u, v, depth } => Some((u, v, depth)),
            _ => None,
        }
    }
}

/// Projects a world point through `pose` (camera-to-world) into pixel
/// coordinates. Total function: out-of-frustum and behind-camera cases
/// are reported as distinct variants.
pub fn project(
    point_world: &Vector3<f64>,
    pose: &RigidPose,
    intr: &CameraIntrinsics,
) -> Projection {
    let p_cam = pose.inverse().transform_point(point_world);
    if p_cam.z <= 0.0 {
        return Projection::BehindCamera;
    }
    let u = intr.fx() * p_cam.x / p_cam.z + intr.cx();
    let v = intr.fy() * p_cam.y / p_cam.z + intr.cy();
    // A continuous coordinate is in view when it rounds to a raster pixel.
    let in_view =
        u >= -0.5 && u < intr.width() as f64 - 0.5 && v >= -0.5 && v < intr.height() as f64 - 0.5;
    if in_view {
        Projection::Pixel {
            u,
            v,
            depth: p_cam.z,
        }
    } else {
        Projection::OutOfView
    }
}
