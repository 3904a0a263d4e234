//! Instance mask ingest and semantic refinement of frame segments.
//!
//! Masks come from an external predictor and are stored per frame as a
//! 16-bit id raster (`<frame>.masks.png`, 0 = background) plus a JSON
//! sidecar (`<frame>.masks.json`) listing `{id, class_id, class_name,
//! score}` per instance. Refinement transfers those labels onto the
//! geometric regions: a region adopts the mask it overlaps most, but
//! only when the overlap fraction clears `tau_p`. Several regions may
//! adopt the same mask, which is how over-segmented non-convex objects
//! are regrouped.

use std::collections::BTreeMap;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassId;
use crate::segmentation::FrameSegmentation;

/// Class and confidence of one predicted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub class: ClassId,
    pub class_name: String,
    pub score: f32,
}

/// All instance predictions of one frame, fused into an id raster.
///
/// Pixel exclusivity is by construction: the raster stores at most one
/// instance id per pixel, so intersections with regions are countable.
#[derive(Debug, Clone)]
pub struct MaskFrame {
    width: u32,
    height: u32,
    raster: Vec<u16>,
    table: BTreeMap<u16, MaskEntry>,
}

impl MaskFrame {
    /// Frame with no predictions at all.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            raster: vec![0; width as usize * height as usize],
            table: BTreeMap::new(),
        }
    }

    /// Fuses per-instance binary masks into one id raster. On contested
    /// pixels the higher-score instance wins; ties go to the smaller id.
    pub fn from_binary_masks(
        width: u32,
        height: u32,
        masks: &[(u16, MaskEntry, Vec<u32>)],
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..masks.len()).collect();
        order.sort_by(|&a, &b| {
            masks[b]
                .1
                .score
                .total_cmp(&masks[a].1.score)
                .then(masks[a].0.cmp(&masks[b].0))
        });
        let mut raster = vec![0u16; width as usize * height as usize];
        let mut table = BTreeMap::new();
        for i in order {
            let (id, entry, pixels) = &masks[i];
            if *id == 0 {
                return Err(Error::MalformedMasks {
                    path: "<memory>".into(),
                    reason: "instance id 0 is reserved for background".into(),
                });
            }
            if table.insert(*id, entry.clone()).is_some() {
                return Err(Error::MalformedMasks {
                    path: "<memory>".into(),
                    reason: format!("duplicate instance id {id}"),
                });
            }
            for &pi in pixels {
                let slot = &mut raster[pi as usize];
                if *slot == 0 {
                    *slot = *id;
                }
            }
        }
        let frame = Self {
            width,
            height,
            raster,
            table,
        };
        frame.check_invariants("<memory>")?;
        Ok(frame)
    }

    fn check_invariants(&self, path: &str) -> Result<()> {
        let malformed = |reason: String| Error::MalformedMasks {
            path: path.to_string(),
            reason,
        };
        for (&id, entry) in &self.table {
            if id == 0 {
                return Err(malformed("instance id 0 is reserved for background".into()));
            }
            if entry.class.is_none() {
                return Err(malformed(format!(
                    "instance {id} has class id 0 (reserved)"
                )));
            }
            if !(0.0..=1.0).contains(&entry.score) {
                return Err(malformed(format!(
                    "instance {id} score {} outside [0, 1]",
                    entry.score
                )));
            }
        }
        for &id in &self.raster {
            if id != 0 && !self.table.contains_key(&id) {
                return Err(malformed(format!("raster id {id} missing from table")));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn raster(&self) -> &[u16] {
        &self.raster
    }

    pub fn instance_id(&self, u: u32, v: u32) -> u16 {
        self.raster[v as usize * self.width as usize + u as usize]
    }

    pub fn entry(&self, id: u16) -> Option<&MaskEntry> {
        self.table.get(&id)
    }

    pub fn instance_count(&self) -> usize {
        self.table.len()
    }

    pub fn instances(&self) -> impl Iterator<Item = (u16, &MaskEntry)> {
        self.table.iter().map(|(&id, e)| (id, e))
    }
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    id: u16,
    class_id: u32,
    #[serde(default)]
    class_name: String,
    score: f32,
}

/// Loads the mask frame stored at `<stem>.masks.png` / `<stem>.masks.json`.
///
/// An absent PNG means the predictor produced nothing for this frame and
/// yields an empty frame. A PNG without its sidecar, or any invariant
/// violation, is an error.
pub fn load_masks(png_path: &Path, width: u32, height: u32) -> Result<MaskFrame> {
    if !png_path.exists() {
        return Ok(MaskFrame::empty(width, height));
    }
    let shown = png_path.display().to_string();
    let img = image::open(png_path)?.into_luma16();
    if img.width() != width || img.height() != height {
        return Err(Error::DimensionMismatch {
            expected_width: width,
            expected_height: height,
            width: img.width(),
            height: img.height(),
        });
    }
    let json_path = png_path.with_extension("json");
    if !json_path.exists() {
        return Err(Error::MalformedMasks {
            path: shown,
            reason: format!("sidecar {} is missing", json_path.display()),
        });
    }
    let rows: Vec<TableRow> = serde_json::from_reader(std::fs::File::open(&json_path)?)?;
    let mut table = BTreeMap::new();
    for row in rows {
        if table
            .insert(
                row.id,
                MaskEntry {
                    class: ClassId(row.class_id),
                    class_name: row.class_name,
                    score: row.score,
                },
            )
            .is_some()
        {
            return Err(Error::MalformedMasks {
                path: shown,
                reason: format!("duplicate instance id {} in table", row.id),
            });
        }
    }
    let frame = MaskFrame {
        width,
        height,
        raster: img.into_raw(),
        table,
    };
    frame.check_invariants(&shown)?;
    Ok(frame)
}

/// Writes `<stem>.masks.png` / `<stem>.masks.json` for a frame. Frames
/// without instances are skipped entirely (their absence means "no
/// predictions").
pub fn write_masks(png_path: &Path, frame: &MaskFrame) -> Result<()> {
    if frame.instance_count() == 0 {
        return Ok(());
    }
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        frame.width,
        frame.height,
        frame.raster.clone(),
    )
    .expect("raster length matches dimensions");
    img.save_with_format(png_path, image::ImageFormat::Png)?;
    let rows: Vec<TableRow> = frame
        .instances()
        .map(|(id, e)| TableRow {
            id,
            class_id: e.class.0,
            class_name: e.class_name.clone(),
            score: e.score,
        })
        .collect();
    let file = BufWriter::new(std::fs::File::create(png_path.with_extension("json"))?);
    serde_json::to_writer_pretty(file, &rows)?;
    Ok(())
}

/// Exact pixel overlap counts between frame regions and mask instances.
#[derive(Debug, Clone, Default)]
pub struct OverlapTable {
    /// (region id, mask id) -> shared pixel count; zero entries absent.
    counts: BTreeMap<(u32, u16), u64>,
    region_area: BTreeMap<u32, u64>,
}

impl OverlapTable {
    pub fn count(&self, region: u32, mask: u16) -> u64 {
        self.counts.get(&(region, mask)).copied().unwrap_or(0)
    }

    /// Overlap normalized by region area, in [0, 1].
    pub fn fraction(&self, region: u32, mask: u16) -> f64 {
        let area = self.region_area.get(&region).copied().unwrap_or(0);
        if area == 0 {
            return 0.0;
        }
        self.count(region, mask) as f64 / area as f64
    }

    /// Mask with the largest overlap for a region, with its fraction.
    /// Ties break toward the lowest mask id.
    pub fn best_mask(&self, region: u32) -> Option<(u16, f64)> {
        let mut best: Option<(u16, u64)> = None;
        for (&(_, mask), &count) in self.counts.range((region, 0)..=(region, u16::MAX)) {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((mask, count));
            }
        }
        best.map(|(mask, _)| (mask, self.fraction(region, mask)))
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, u16, u64)> + '_ {
        self.counts.iter().map(|(&(r, m), &c)| (r, m, c))
    }
}

/// Counts region/mask intersections over the whole frame.
pub fn compute_overlaps(region_raster: &[u32], masks: &MaskFrame) -> Result<OverlapTable> {
    if region_raster.len() != masks.raster().len() {
        return Err(Error::Dataset(format!(
            "region raster has {} pixels, mask raster {}",
            region_raster.len(),
            masks.raster().len()
        )));
    }
    let mut table = OverlapTable::default();
    for (&region, &mask) in region_raster.iter().zip(masks.raster()) {
        if region == 0 {
            continue;
        }
        *table.region_area.entry(region).or_insert(0) += 1;
        if mask != 0 {
            *table.counts.entry((region, mask)).or_insert(0) += 1;
        }
    }
    Ok(table)
}

/// Assigns instance and class labels to segments whose dominant mask
/// overlap exceeds `tau_p` (strictly). Returns the sorted set of
/// distinct instance ids that were assigned.
pub fn refine_segments(
    seg: &mut FrameSegmentation,
    overlaps: &OverlapTable,
    masks: &MaskFrame,
    tau_p: f64,
) -> Vec<u16> {
    let mut assigned = std::collections::BTreeSet::new();
    for segment in seg.segments_mut() {
        let best = overlaps.best_mask(segment.region.id);
        if let Some((mask_id, fraction)) = best {
            if fraction > tau_p {
                let entry = masks.entry(mask_id).expect("overlap references known mask");
                segment.instance = mask_id;
                segment.class = entry.class;
                assigned.insert(mask_id);
                continue;
            }
        }
        segment.instance = 0;
        segment.class = ClassId::NONE;
    }
    assigned.into_iter().collect()
}
