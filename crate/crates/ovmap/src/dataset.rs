//! On-disk dataset layout and readers.
//!
//! A dataset directory holds one camera's recording:
//!
//! ```text
//! dataset/
//!   intrinsics            pinhole parameters, one line
//!   poses.txt             frame id + camera-to-world pose per line
//!   depth/000000.png      16-bit grayscale, millimeters, 0 = invalid
//!   masks/000000.masks.png   optional instance-id rasters + JSON tables
//! ```
//!
//! Frame files are named by zero-padded decimal id; `poses.txt` refers to
//! the same ids unpadded. Every depth frame must have a pose; masks are
//! optional per frame. Synthetic datasets add `scene.toml` and
//! `ground_truth.bin` next to these.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, RigidPose};
use crate::masks::{load_masks, MaskFrame};

pub const INTRINSICS_FILE: &str = "intrinsics";
pub const POSES_FILE: &str = "poses.txt";
pub const DEPTH_DIR: &str = "depth";
pub const MASKS_DIR: &str = "masks";
pub const SCENE_FILE: &str = "scene.toml";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.bin";

/// Depth image file name for a frame id.
pub fn depth_file_name(frame: u64) -> String {
    format!("{frame:06}.png")
}

/// Mask raster file name for a frame id (its JSON table sits next to it).
pub fn mask_file_name(frame: u64) -> String {
    format!("{frame:06}.masks.png")
}

/// Writes the intrinsics file: `fx fy cx cy width height` on one line.
pub fn write_intrinsics(path: &Path, intr: &CameraIntrinsics) -> Result<()> {
    let text = format!(
        "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
        intr.fx(),
        intr.fy(),
        intr.cx(),
        intr.cy(),
        intr.width(),
        intr.height()
    );
    fs::write(path, text)?;
    Ok(())
}

/// Reads an intrinsics file; `#` lines and blank lines are comments.
pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: String| Error::Dataset(format!("{}: {msg}", path.display()));
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(format!(
                "expected 6 intrinsics fields, got {}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| bad(format!("bad number `{}`", fields[i])))
        };
        let dim = |i: usize| -> Result<u32> {
            fields[i]
                .parse()
                .map_err(|_| bad(format!("bad dimension `{}`", fields[i])))
        };
        return CameraIntrinsics::new(num(0)?, num(1)?, num(2)?, num(3)?, dim(4)?, dim(5)?);
    }
    Err(bad("no intrinsics line found".into()))
}

/// Writes `poses.txt`: `frame tx ty tz qw qx qy qz` per line. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_poses(path: &Path, poses: &[(u64, RigidPose)]) -> Result<()> {
    let mut text = String::from("# frame tx ty tz qw qx qy qz\n");
    for (frame, pose) in poses {
        let t = pose.translation();
        let [qw, qx, qy, qz] = pose.rotation_wxyz();
        text.push_str(&format!(
            "{frame} {} {} {} {qw} {qx} {qy} {qz}\n",
            t.x, t.y, t.z
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads `poses.txt` into a frame-id-to-pose map.
pub fn read_poses(path: &Path) -> Result<BTreeMap<u64, RigidPose>> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: String| Error::Dataset(format!("{}: {msg}", path.display()));
    let mut poses = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(bad(format!(
                "line {}: expected 8 pose fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let frame: u64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("line {}: bad frame id `{}`", lineno + 1, fields[0])))?;
        let mut nums = [0.0f64; 7];
        for (i, field) in fields[1..].iter().enumerate() {
            nums[i] = field
                .parse()
                .map_err(|_| bad(format!("line {}: bad number `{field}`", lineno + 1)))?;
        }
        let pose = RigidPose::from_parts(
            [nums[0], nums[1], nums[2]],
            [nums[3], nums[4], nums[5], nums[6]],
        )?;
        if poses.insert(frame, pose).is_some() {
            return Err(bad(format!("duplicate pose for frame {frame}")));
        }
    }
    Ok(poses)
}

/// Writes a depth frame as 16-bit grayscale PNG in millimeters, rounding
/// to the nearest millimeter and clamping to the u16 range. Depths that
/// round to zero become invalid pixels.
pub fn write_depth_png(path: &Path, depth: &DepthFrame) -> Result<()> {
    let raster: Vec<u16> = depth
        .data()
        .iter()
        .map(|&z| (f64::from(z) * 1000.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let img =
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width(), depth.height(), raster)
            .expect("raster length matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Reads a 16-bit grayscale depth PNG back into meters.
pub fn read_depth_png(path: &Path, width: u32, height: u32) -> Result<DepthFrame> {
    let img = image::open(path)?;
    let img = match img {
        image::DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::Dataset(format!(
                "{}: depth must be 16-bit grayscale, got {other:?}",
                path.display()
            )))
        }
    };
    if img.width() != width || img.height() != height {
        return Err(Error::DimensionMismatch {
            expected_width: width,
            expected_height: height,
            width: img.width(),
            height: img.height(),
        });
    }
    let meters: Vec<f32> = img
        .as_raw()
        .iter()
        .map(|&mm| f32::from(mm) / 1000.0)
        .collect();
    DepthFrame::new(width, height, meters)
}

/// An opened dataset directory: intrinsics, poses, and the sorted list of
/// depth frames. Frame images load lazily so corrupt files surface as
/// per-frame errors, but a depth frame without a pose fails right here.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    intrinsics: CameraIntrinsics,
    poses: BTreeMap<u64, RigidPose>,
    frames: Vec<u64>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Dataset(format!("{}: {msg}", root.display()));
        let intrinsics = read_intrinsics(&root.join(INTRINSICS_FILE))?;
        let poses = read_poses(&root.join(POSES_FILE))?;
        let depth_dir = root.join(DEPTH_DIR);
        let mut frames = Vec::new();
        for entry in fs::read_dir(&depth_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let frame: u64 = stem.parse().map_err(|_| {
                bad(format!(
                    "depth file `{}` is not named by a frame id",
                    path.display()
                ))
            })?;
            if !poses.contains_key(&frame) {
                return Err(bad(format!("depth frame {frame} has no pose")));
            }
            frames.push(frame);
        }
        frames.sort_unstable();
        Ok(Self {
            root: root.to_path_buf(),
            intrinsics,
            poses,
            frames,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    /// Frame ids in ascending (timestamp) order.
    pub fn frames(&self) -> &[u64] {
        &self.frames
    }

    pub fn pose(&self, frame: u64) -> Option<&RigidPose> {
        self.poses.get(&frame)
    }

    pub fn depth_path(&self, frame: u64) -> PathBuf {
        self.root.join(DEPTH_DIR).join(depth_file_name(frame))
    }

    pub fn masks_path(&self, frame: u64) -> PathBuf {
        self.root.join(MASKS_DIR).join(mask_file_name(frame))
    }

    pub fn load_depth(&self, frame: u64) -> Result<DepthFrame> {
        read_depth_png(
            &self.depth_path(frame),
            self.intrinsics.width(),
            self.intrinsics.height(),
        )
    }

    /// Loads the frame's masks; a frame with no mask files is an empty
    /// prediction, not an error.
    pub fn load_masks(&self, frame: u64) -> Result<MaskFrame> {
        load_masks(
            &self.masks_path(frame),
            self.intrinsics.width(),
            self.intrinsics.height(),
        )
    }
}
