//! Pipeline configuration with TOML loading and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::SegmentParams;

/// Every tunable of the mapping pipeline. All fields have defaults, so a
/// config file only needs the values it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// Truncation band as a multiple of the voxel size.
    pub truncation_factor: f64,
    /// Weight cap for the running depth average per voxel.
    pub w_max: f32,
    /// Minimum fraction of a region's pixels a mask must cover to hand the
    /// region its instance and class (strict).
    pub tau_p: f64,
    /// Minimum projected-point overlap for reusing a persistent segment
    /// label (strict), at point stride 1.
    pub tau_pi: f64,
    /// Adjacent normals diverging by more than this angle mark a crease.
    pub theta_concave_deg: f64,
    /// Lower bound of the depth-discontinuity threshold in meters.
    pub depth_gap_floor_m: f64,
    /// Growth of the discontinuity threshold per meter of depth.
    pub depth_gap_per_meter: f64,
    /// Regions below this pixel count are dropped as speckle.
    pub min_region_size: usize,
    /// Process every n-th frame of the dataset.
    pub frame_stride: u32,
    /// Grid stride for sampling segment points (1 = every pixel).
    pub point_stride: u32,
    /// Depth readings beyond this range are treated as invalid.
    pub max_range_m: f64,
    /// Worker threads for frame preprocessing; 0 runs everything inline on
    /// the integration thread.
    pub preprocess_threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.01,
            truncation_factor: 4.0,
            w_max: 10_000.0,
            tau_p: 0.5,
            tau_pi: 20.0,
            theta_concave_deg: 10.0,
            depth_gap_floor_m: 0.03,
            depth_gap_per_meter: 0.05,
            min_region_size: 100,
            frame_stride: 1,
            point_stride: 1,
            max_range_m: 5.0,
            preprocess_threads: 2,
        }
    }
}

impl PipelineConfig {
    /// Truncation distance in meters.
    pub fn truncation(&self) -> f64 {
        self.truncation_factor * self.voxel_size
    }

    /// The segmentation-stage slice of this config.
    pub fn segment_params(&self) -> SegmentParams {
        SegmentParams {
            theta_concave_deg: self.theta_concave_deg,
            depth_gap_floor_m: self.depth_gap_floor_m,
            depth_gap_per_meter: self.depth_gap_per_meter,
            min_region_size: self.min_region_size,
            point_stride: self.point_stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad(format!("voxel_size {} must be positive", self.voxel_size));
        }
        if !(self.truncation_factor >= 1.0 && self.truncation_factor.is_finite()) {
            return bad(format!(
                "truncation_factor {} must be at least 1",
                self.truncation_factor
            ));
        }
        if !(self.w_max >= 1.0 && self.w_max.is_finite()) {
            return bad(format!("w_max {} must be at least 1", self.w_max));
        }
        if !(0.0..=1.0).contains(&self.tau_p) {
            return bad(format!("tau_p {} must lie in [0, 1]", self.tau_p));
        }
        if !(self.tau_pi >= 0.0 && self.tau_pi.is_finite()) {
            return bad(format!("tau_pi {} must be non-negative", self.tau_pi));
        }
        if !(0.0 < self.theta_concave_deg && self.theta_concave_deg < 90.0) {
            return bad(format!(
                "theta_concave_deg {} must lie in (0, 90)",
                self.theta_concave_deg
            ));
        }
        if !(self.depth_gap_floor_m > 0.0 && self.depth_gap_per_meter >= 0.0) {
            return bad(format!(
                "depth gap thresholds ({}, {}) must be positive",
                self.depth_gap_floor_m, self.depth_gap_per_meter
            ));
        }
        if self.min_region_size == 0 {
            return bad("min_region_size must be at least 1".into());
        }
        if self.frame_stride == 0 || self.point_stride == 0 {
            return bad("frame_stride and point_stride must be at least 1".into());
        }
        if !(self.max_range_m > 0.0 && self.max_range_m.is_finite()) {
            return bad(format!("max_range_m {} must be positive", self.max_range_m));
        }
        Ok(())
    }

    /// Parses a config from TOML; unknown keys are rejected so typos in a
    /// config file fail loudly.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
