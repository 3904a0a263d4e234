//! The incremental mapping loop over a dataset.
//!
//! Each frame passes through four stages: load (depth and masks from disk),
//! preprocess (unproject, normals, segmentation, mask refinement),
//! associate (persistent segment and instance labels), and integrate
//! (TSDF fusion plus count-table updates). Load and preprocess touch only
//! frame-local data, so they run on worker threads feeding a bounded
//! channel; association and integration mutate the map and stay strictly
//! sequential in frame order. Results are identical for any thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use crossbeam::channel;

use crate::association::{
    associate_instances, associate_segments, compute_3d_overlaps, effective_tau_pi,
    PersistentLabels,
};
use crate::config::PipelineConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::EvalInstance;
use crate::geometry::{unproject, CameraIntrinsics, DepthFrame, RigidPose};
use crate::labels::{ClassId, InstanceLabel, SegmentLabel};
use crate::map::io::save_map;
use crate::map::mesh::{extract_mesh, save_ply};
use crate::map::{CountTables, VoxelGrid};
use crate::masks::{compute_overlaps, refine_segments, MaskFrame};
use crate::segmentation::{estimate_normals, segment_frame, FrameSegmentation};
use crate::synth::GroundTruthVolume;

pub const MAP_FILE: &str = "map.ovmap";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const FRAME_LOG_FILE: &str = "frame_log.csv";

/// Per-stage wall time of one frame, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub load_s: f64,
    pub preprocess_s: f64,
    pub associate_s: f64,
    pub integrate_s: f64,
    /// End-to-end time of this frame's work, excluding queue wait.
    pub wall_s: f64,
}

impl StageTimings {
    /// Sum of the four stage times.
    pub fn total(&self) -> f64 {
        self.load_s + self.preprocess_s + self.associate_s + self.integrate_s
    }
}

/// Final labeling of one frame segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentRecord {
    pub segment: SegmentLabel,
    pub instance: InstanceLabel,
    pub class: ClassId,
    pub pixels: usize,
}

/// Everything the pipeline decided about one integrated frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame: u64,
    pub segments: Vec<SegmentRecord>,
    pub timings: StageTimings,
}

/// Outcome lists of a dataset run, each in processing order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub processed: Vec<u64>,
    /// Frames that failed to load and were skipped with a warning.
    pub skipped: Vec<u64>,
    /// Frames dropped for falling behind the real-time clock.
    pub dropped: Vec<u64>,
}

/// Switches that vary per run rather than per config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Read mask files when present. Off, the run is geometry-only.
    pub use_masks: bool,
    /// Emulate a live sensor at this rate: a frame whose slot has already
    /// passed when it reaches integration is dropped.
    pub realtime_fps: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            use_masks: true,
            realtime_fps: None,
        }
    }
}

/// A frame after the parallel stages, ready for sequential integration.
#[derive(Debug)]
pub struct PreparedFrame {
    pub frame: u64,
    pub pose: RigidPose,
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthFrame,
    pub segmentation: FrameSegmentation,
    load_s: f64,
    preprocess_s: f64,
    wall_s: f64,
}

/// Runs the frame-local stages: load depth and masks, unproject, estimate
/// normals, segment, and hand out mask instances to segments.
pub fn prepare_frame(
    dataset: &Dataset,
    frame: u64,
    config: &PipelineConfig,
    use_masks: bool,
) -> Result<PreparedFrame> {
    let start = Instant::now();
    let intrinsics = *dataset.intrinsics();
    let pose = dataset
        .pose(frame)
        .cloned()
        .ok_or_else(|| Error::Dataset(format!("frame {frame} has no pose")))?;
    let depth = dataset.load_depth(frame)?;
    let masks = if use_masks {
        dataset.load_masks(frame)?
    } else {
        MaskFrame::empty(intrinsics.width(), intrinsics.height())
    };
    let load_s = start.elapsed().as_secs_f64();

    let compute = Instant::now();
    let vmap = unproject(&depth, &intrinsics, config.max_range_m)?;
    let nmap = estimate_normals(&vmap);
    let mut segmentation = segment_frame(&vmap, &nmap, &config.segment_params())?;
    let overlaps = compute_overlaps(segmentation.region_raster(), &masks)?;
    refine_segments(&mut segmentation, &overlaps, &masks, config.tau_p);
    let preprocess_s = compute.elapsed().as_secs_f64();

    Ok(PreparedFrame {
        frame,
        pose,
        intrinsics,
        depth,
        segmentation,
        load_s,
        preprocess_s,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Deadline bookkeeping for `--realtime` style runs.
struct FrameClock {
    start: Instant,
    period_s: Option<f64>,
}

impl FrameClock {
    fn new(fps: Option<f64>) -> Self {
        Self {
            start: Instant::now(),
            period_s: fps.map(|f| 1.0 / f),
        }
    }

    /// True when frame slot `index` has already elapsed.
    fn is_late(&self, index: usize) -> bool {
        match self.period_s {
            None => false,
            Some(p) => self.start.elapsed().as_secs_f64() > (index as f64 + 1.0) * p,
        }
    }
}

/// The incremental mapper: a TSDF grid, persistent label counters, and the
/// per-frame decision log.
#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    grid: VoxelGrid,
    labels: PersistentLabels,
    records: Vec<FrameRecord>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let grid = VoxelGrid::new(config.voxel_size, config.truncation(), config.w_max)?;
        Ok(Self {
            config,
            grid,
            labels: PersistentLabels::new(),
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn labels(&self) -> &PersistentLabels {
        &self.labels
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    /// Runs association and integration for one prepared frame. This is the
    /// sequential heart of the pipeline; calling it out of frame order
    /// changes the labeling.
    pub fn integrate_prepared(&mut self, prepared: PreparedFrame) -> Result<()> {
        let seq_start = Instant::now();
        let segments = prepared.segmentation.segments();

        let assoc_start = Instant::now();
        let overlaps = compute_3d_overlaps(segments, &self.grid, &prepared.pose);
        let tau = effective_tau_pi(self.config.tau_pi, self.config.point_stride);
        let assoc = associate_segments(&overlaps, segments, &mut self.labels, tau);
        let instances = associate_instances(
            segments,
            &assoc.labels,
            self.grid.counts(),
            &mut self.labels,
        );
        // Per-pixel persistent labels: region ids are 1-based segment
        // indices, pixels outside every region carry no label.
        let label_raster: Vec<SegmentLabel> = prepared
            .segmentation
            .region_raster()
            .iter()
            .map(|&region| {
                if region == 0 {
                    SegmentLabel::NONE
                } else {
                    assoc.labels[(region - 1) as usize]
                }
            })
            .collect();
        let associate_s = assoc_start.elapsed().as_secs_f64();

        let integrate_start = Instant::now();
        self.grid.integrate_frame(
            &prepared.depth,
            &prepared.pose,
            &prepared.intrinsics,
            Some(&label_raster),
            self.config.max_range_m,
        )?;
        let mut observations = Vec::new();
        let mut segment_records = Vec::with_capacity(segments.len());
        for (i, segment) in segments.iter().enumerate() {
            let instance = if segment.instance == 0 {
                InstanceLabel::NONE
            } else {
                instances[&segment.instance]
            };
            if !instance.is_none() {
                observations.push((assoc.labels[i], instance, segment.class));
            }
            segment_records.push(SegmentRecord {
                segment: assoc.labels[i],
                instance,
                class: segment.class,
                pixels: segment.region.pixel_count(),
            });
        }
        self.grid.update_counts(&observations);
        let integrate_s = integrate_start.elapsed().as_secs_f64();

        self.records.push(FrameRecord {
            frame: prepared.frame,
            segments: segment_records,
            timings: StageTimings {
                load_s: prepared.load_s,
                preprocess_s: prepared.preprocess_s,
                associate_s,
                integrate_s,
                wall_s: prepared.wall_s + seq_start.elapsed().as_secs_f64(),
            },
        });
        Ok(())
    }

    /// Processes the dataset's frames in ascending id order, honoring the
    /// configured frame stride. Frames that fail to load are skipped with
    /// a warning; under a real-time clock, late frames are dropped before
    /// integration.
    pub fn run_dataset(&mut self, dataset: &Dataset, options: &RunOptions) -> Result<RunSummary> {
        let selected: Vec<u64> = dataset
            .frames()
            .iter()
            .copied()
            .step_by(self.config.frame_stride as usize)
            .collect();
        let mut summary = RunSummary::default();
        let clock = FrameClock::new(options.realtime_fps);

        if self.config.preprocess_threads == 0 {
            for (index, &frame) in selected.iter().enumerate() {
                match prepare_frame(dataset, frame, &self.config, options.use_masks) {
                    Ok(prepared) => self.consume(prepared, index, &clock, &mut summary)?,
                    Err(err) => {
                        log::warn!("skipping frame {frame}: {err}");
                        summary.skipped.push(frame);
                    }
                }
            }
            return Ok(summary);
        }

        let threads = self.config.preprocess_threads;
        let queue = threads * 2;
        let config = self.config.clone();
        let use_masks = options.use_masks;
        let (task_tx, task_rx) = channel::bounded::<(usize, u64)>(queue);
        let (done_tx, done_rx) = channel::bounded::<(usize, u64, Result<PreparedFrame>)>(queue);
        let selected_ref = &selected;

        std::thread::scope(|scope| -> Result<()> {
            scope.spawn(move || {
                for (index, &frame) in selected_ref.iter().enumerate() {
                    if task_tx.send((index, frame)).is_err() {
                        break;
                    }
                }
            });
            for _ in 0..threads {
                let task_rx = task_rx.clone();
                let done_tx = done_tx.clone();
                let config = &config;
                scope.spawn(move || {
                    while let Ok((index, frame)) = task_rx.recv() {
                        let result = prepare_frame(dataset, frame, config, use_masks);
                        if done_tx.send((index, frame, result)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(task_rx);
            drop(done_tx);

            // Workers finish out of order; integration must not. Buffer
            // until the next frame in sequence arrives.
            let mut pending: BTreeMap<usize, (u64, Result<PreparedFrame>)> = BTreeMap::new();
            let mut next = 0usize;
            let mut failure: Option<Error> = None;
            while let Ok((index, frame, result)) = done_rx.recv() {
                pending.insert(index, (frame, result));
                while let Some((frame, result)) = pending.remove(&next) {
                    let index = next;
                    next += 1;
                    if failure.is_some() {
                        continue;
                    }
                    match result {
                        Ok(prepared) => {
                            if let Err(err) = self.consume(prepared, index, &clock, &mut summary) {
                                failure = Some(err);
                            }
                        }
                        Err(err) => {
                            log::warn!("skipping frame {frame}: {err}");
                            summary.skipped.push(frame);
                        }
                    }
                }
            }
            match failure {
                Some(err) => Err(err),
                None => Ok(()),
            }
        })?;
        Ok(summary)
    }

    fn consume(
        &mut self,
        prepared: PreparedFrame,
        index: usize,
        clock: &FrameClock,
        summary: &mut RunSummary,
    ) -> Result<()> {
        let frame = prepared.frame;
        if clock.is_late(index) {
            log::info!("dropping frame {frame}: behind the real-time clock");
            summary.dropped.push(frame);
            return Ok(());
        }
        self.integrate_prepared(prepared)?;
        summary.processed.push(frame);
        Ok(())
    }

    /// Writes the map file, stage timing log, and frame decision log.
    pub fn save_outputs(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        save_map(&out_dir.join(MAP_FILE), &self.grid, &self.labels)?;
        write_timings_csv(&out_dir.join(TIMINGS_FILE), &self.records)?;
        write_frame_log_csv(&out_dir.join(FRAME_LOG_FILE), &self.records)?;
        Ok(())
    }
}

/// Opens, runs, and saves in one call. Returns the pipeline for callers
/// that keep working with the map in memory.
pub fn run_and_save(
    dataset: &Dataset,
    config: &PipelineConfig,
    options: &RunOptions,
    out_dir: &Path,
) -> Result<(Pipeline, RunSummary)> {
    let mut pipeline = Pipeline::new(config.clone())?;
    let summary = pipeline.run_dataset(dataset, options)?;
    pipeline.save_outputs(out_dir)?;
    Ok((pipeline, summary))
}

/// Stage timing log: one row per integrated frame.
pub fn write_timings_csv(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut text =
        String::from("frame,load_s,preprocess_s,associate_s,integrate_s,total_s,wall_s\n");
    for r in records {
        let t = &r.timings;
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.frame,
            t.load_s,
            t.preprocess_s,
            t.associate_s,
            t.integrate_s,
            t.total(),
            t.wall_s
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Frame decision log: one row per frame segment with its final labels.
/// Replaying the rows with nonzero instances reproduces the count tables.
pub fn write_frame_log_csv(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut text = String::from("frame,segment,instance,class,pixels\n");
    for r in records {
        for s in &r.segments {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.frame, s.segment.0, s.instance.0, s.class.0, s.pixels
            ));
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Rebuilds count tables from a frame decision log, independently of the
/// map: one increment per row with a nonzero instance.
pub fn replay_frame_log(path: &Path) -> Result<CountTables> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: String| {
        Error::Dataset(format!("{}: line {}: {msg}", path.display(), line + 1))
    };
    let mut counts = CountTables::default();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(
                lineno,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let parse = |i: usize| -> Result<u32> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| bad(lineno, format!("bad number `{}`", fields[i])))
        };
        let segment = SegmentLabel(parse(1)?);
        let instance = InstanceLabel(parse(2)?);
        let class = ClassId(parse(3)?);
        if instance.is_none() {
            continue;
        }
        if segment.is_none() || class.is_none() {
            return Err(bad(lineno, "instance without segment or class".into()));
        }
        counts.increment(segment, instance, class);
    }
    Ok(counts)
}

/// Export summary: what was written where.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub global_vertices: usize,
    pub instance_meshes: Vec<(InstanceLabel, usize)>,
}

/// Writes the mesh and table exports for a map: `global.ply`, one
/// `instance_NNNNNN.ply` per persistent instance, `segments.csv`, and the
/// two count-table CSVs. An empty map produces valid empty files.
pub fn export_map(grid: &VoxelGrid, out_dir: &Path) -> Result<ExportSummary> {
    fs::create_dir_all(out_dir)?;
    let global = extract_mesh(grid, None);
    save_ply(&global, &out_dir.join("global.ply"))?;

    let segments = grid.extract_segments();
    let mut text = String::from("segment,instance,class,voxels\n");
    for s in &segments {
        text.push_str(&format!(
            "{},{},{},{}\n",
            s.label.0,
            s.instance.0,
            s.class.0,
            s.voxels.len()
        ));
    }
    fs::write(out_dir.join("segments.csv"), text)?;

    let mut phi = String::from("segment,instance,count\n");
    for (l, o, n) in grid.counts().phi_entries() {
        phi.push_str(&format!("{},{},{n}\n", l.0, o.0));
    }
    fs::write(out_dir.join("counts_phi.csv"), phi)?;
    let mut psi = String::from("segment,class,count\n");
    for (l, c, n) in grid.counts().psi_entries() {
        psi.push_str(&format!("{},{},{n}\n", l.0, c.0));
    }
    fs::write(out_dir.join("counts_psi.csv"), psi)?;

    let mut by_instance: BTreeMap<InstanceLabel, BTreeSet<SegmentLabel>> = BTreeMap::new();
    for s in &segments {
        if !s.instance.is_none() {
            by_instance.entry(s.instance).or_default().insert(s.label);
        }
    }
    let mut instance_meshes = Vec::with_capacity(by_instance.len());
    for (instance, labels) in by_instance {
        let mesh = extract_mesh(grid, Some(&labels));
        save_ply(
            &mesh,
            &out_dir.join(format!("instance_{:06}.ply", instance.0)),
        )?;
        instance_meshes.push((instance, mesh.vertex_count()));
    }
    Ok(ExportSummary {
        global_vertices: global.vertex_count(),
        instance_meshes,
    })
}

/// Class voxel tallies and pooled voxels of one reconstructed instance.
type InstancePool = (BTreeMap<ClassId, usize>, Vec<[i32; 3]>);

/// Map content as ranked detections: labeled segments grouped by persistent
/// instance, scored by voxel count. The instance class is the class with
/// the most voxels across its segments (ties to the smaller id).
pub fn map_predictions(grid: &VoxelGrid) -> Vec<EvalInstance> {
    let mut grouped: BTreeMap<InstanceLabel, InstancePool> = BTreeMap::new();
    for segment in grid.extract_segments() {
        if segment.instance.is_none() || segment.class.is_none() {
            continue;
        }
        let entry = grouped.entry(segment.instance).or_default();
        *entry.0.entry(segment.class).or_insert(0) += segment.voxels.len();
        entry.1.extend(segment.voxels);
    }
    grouped
        .into_values()
        .map(|(class_votes, voxels)| {
            let class = class_votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&c, _)| c)
                .expect("grouped instances have at least one class");
            let score = voxels.len() as f64;
            EvalInstance::new(class, voxels, score)
        })
        .collect()
}

/// Ground-truth volume as evaluation instances; unannotated (class 0)
/// objects are excluded.
pub fn gt_eval_instances(gt: &GroundTruthVolume) -> Vec<EvalInstance> {
    gt.instances
        .iter()
        .filter(|i| !i.class.is_none())
        .map(|i| EvalInstance::new(i.class, i.voxels.clone(), i.voxels.len() as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::io::write_map;
    use crate::synth;

    fn ball_scene(frames: u32) -> synth::SceneSpec {
        let intr = CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).unwrap();
        let ball = synth::Primitive {
            shape: synth::Shape::Sphere { radius: 0.5 },
            pose: RigidPose::from_parts([0.0, 0.0, 2.0], [1.0, 0.0, 0.0, 0.0]).unwrap(),
            instance: 1,
            class: ClassId(3),
            class_name: "ball".into(),
        };
        let backdrop = synth::Primitive {
            shape: synth::Shape::Rect {
                half_x: 3.0,
                half_y: 3.0,
            },
            pose: RigidPose::from_parts([0.0, 0.0, 3.5], [1.0, 0.0, 0.0, 0.0]).unwrap(),
            instance: 2,
            class: ClassId::NONE,
            class_name: String::new(),
        };
        synth::SceneSpec::new(
            intr,
            vec![ball, backdrop],
            synth::orbit_trajectory([0.0, 0.0, 2.0], 1.2, 0.2, frames).unwrap(),
        )
    }

    fn test_config() -> PipelineConfig {
        PipelineConfig {
            voxel_size: 0.02,
            preprocess_threads: 0,
            ..PipelineConfig::default()
        }
    }

    fn write_ball_dataset(dir: &Path, frames: u32) {
        let config = test_config();
        synth::write_dataset(
            &ball_scene(frames),
            dir,
            config.voxel_size,
            config.truncation(),
        )
        .unwrap();
    }

    fn map_bytes(pipeline: &Pipeline) -> Vec<u8> {
        let mut bytes = Vec::new();
        write_map(&mut bytes, pipeline.grid(), pipeline.labels()).unwrap();
        bytes
    }

    #[test]
    fn run_builds_labeled_map_and_logs() {
        let dir = tempfile::tempdir().unwrap();
        write_ball_dataset(dir.path(), 3);
        let dataset = Dataset::open(dir.path()).unwrap();
        let out = dir.path().join("out");
        let (pipeline, summary) =
            run_and_save(&dataset, &test_config(), &RunOptions::default(), &out).unwrap();

        assert_eq!(summary.processed, vec![0, 1, 2]);
        assert!(summary.skipped.is_empty() && summary.dropped.is_empty());
        assert_eq!(pipeline.records().len(), 3);
        assert!(pipeline.grid().block_count() > 0);
        for record in pipeline.records() {
            assert!(!record.segments.is_empty());
            let t = record.timings;
            assert!(t.total() > 0.0);
            assert!(t.total() <= t.wall_s * 1.05 + 1e-6);
        }

        // The annotated ball becomes exactly one persistent instance.
        let predictions = map_predictions(pipeline.grid());
        assert_eq!(predictions.len(), 1);
        assert_eq!(predictions[0].class, ClassId(3));
        assert!(!predictions[0].voxels.is_empty());

        // The frame log replays to the exact count tables.
        let replayed = replay_frame_log(&out.join(FRAME_LOG_FILE)).unwrap();
        assert!(!replayed.is_empty());
        assert_eq!(&replayed, pipeline.grid().counts());

        // All artifacts exist and the map round-trips.
        let (grid, labels) = crate::map::io::load_map(&out.join(MAP_FILE)).unwrap();
        assert_eq!(grid.block_count(), pipeline.grid().block_count());
        assert_eq!(&labels, pipeline.labels());
        assert!(out.join(TIMINGS_FILE).exists());
    }

    #[test]
    fn threaded_run_is_bit_identical_to_inline() {
        let dir = tempfile::tempdir().unwrap();
        write_ball_dataset(dir.path(), 4);
        let dataset = Dataset::open(dir.path()).unwrap();

        let mut inline = Pipeline::new(test_config()).unwrap();
        inline
            .run_dataset(&dataset, &RunOptions::default())
            .unwrap();

        let mut threaded_config = test_config();
        threaded_config.preprocess_threads = 3;
        let mut threaded = Pipeline::new(threaded_config).unwrap();
        threaded
            .run_dataset(&dataset, &RunOptions::default())
            .unwrap();

        assert_eq!(map_bytes(&inline), map_bytes(&threaded));
        let labels = |p: &Pipeline| -> Vec<Vec<SegmentRecord>> {
            p.records().iter().map(|r| r.segments.clone()).collect()
        };
        assert_eq!(labels(&inline), labels(&threaded));
    }

    #[test]
    fn frame_stride_selects_every_nth_frame() {
        let dir = tempfile::tempdir().unwrap();
        write_ball_dataset(dir.path(), 5);
        let dataset = Dataset::open(dir.path()).unwrap();
        let mut config = test_config();
        config.frame_stride = 2;
        let mut pipeline = Pipeline::new(config).unwrap();
        let summary = pipeline
            .run_dataset(&dataset, &RunOptions::default())
            .unwrap();
        assert_eq!(summary.processed, vec![0, 2, 4]);
    }

    #[test]
    fn unreadable_frame_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_ball_dataset(dir.path(), 3);
        std::fs::write(
            dir.path()
                .join(crate::dataset::DEPTH_DIR)
                .join(crate::dataset::depth_file_name(1)),
            b"junk",
        )
        .unwrap();
        let dataset = Dataset::open(dir.path()).unwrap();
        let mut pipeline = Pipeline::new(test_config()).unwrap();
        let summary = pipeline
            .run_dataset(&dataset, &RunOptions::default())
            .unwrap();
        assert_eq!(summary.processed, vec![0, 2]);
        assert_eq!(summary.skipped, vec![1]);
        assert!(pipeline.grid().block_count() > 0);
    }

    #[test]
    fn masks_off_leaves_instances_unassigned() {
        let dir = tempfile::tempdir().unwrap();
        write_ball_dataset(dir.path(), 2);
        let dataset = Dataset::open(dir.path()).unwrap();
        let mut pipeline = Pipeline::new(test_config()).unwrap();
        let options = RunOptions {
            use_masks: false,
            ..RunOptions::default()
        };
        pipeline.run_dataset(&dataset, &options).unwrap();
        assert!(pipeline.grid().counts().is_empty());
        assert!(map_predictions(pipeline.grid()).is_empty());
        for record in pipeline.records() {
            assert!(record.segments.iter().all(|s| s.instance.is_none()));
        }
    }

    #[test]
    fn realtime_clock_drops_late_frames() {
        let dir = tempfile::tempdir().unwrap();
        write_ball_dataset(dir.path(), 3);
        let dataset = Dataset::open(dir.path()).unwrap();

        // Impossibly fast clock: every frame misses its slot.
        let mut pipeline = Pipeline::new(test_config()).unwrap();
        let options = RunOptions {
            realtime_fps: Some(1e9),
            ..RunOptions::default()
        };
        let summary = pipeline.run_dataset(&dataset, &options).unwrap();
        assert_eq!(summary.dropped, vec![0, 1, 2]);
        assert!(summary.processed.is_empty());
        assert_eq!(pipeline.grid().block_count(), 0);

        // Glacial clock: nothing is late.
        let mut pipeline = Pipeline::new(test_config()).unwrap();
        let options = RunOptions {
            realtime_fps: Some(1e-6),
            ..RunOptions::default()
        };
        let summary = pipeline.run_dataset(&dataset, &options).unwrap();
        assert_eq!(summary.processed, vec![0, 1, 2]);
        assert!(summary.dropped.is_empty());
    }

    #[test]
    fn export_writes_meshes_and_tables() {
        let dir = tempfile::tempdir().unwrap();
        write_ball_dataset(dir.path(), 3);
        let dataset = Dataset::open(dir.path()).unwrap();
        let mut pipeline = Pipeline::new(test_config()).unwrap();
        pipeline
            .run_dataset(&dataset, &RunOptions::default())
            .unwrap();

        let out = dir.path().join("export");
        let summary = export_map(pipeline.grid(), &out).unwrap();
        assert!(summary.global_vertices > 0);
        assert_eq!(summary.instance_meshes.len(), 1);
        assert!(summary.instance_meshes[0].1 > 0);
        assert!(out.join("global.ply").exists());
        assert!(out
            .join(format!(
                "instance_{:06}.ply",
                summary.instance_meshes[0].0 .0
            ))
            .exists());
        let segments_csv = std::fs::read_to_string(out.join("segments.csv")).unwrap();
        assert!(segments_csv.lines().count() > 1);
        assert!(out.join("counts_phi.csv").exists());
        assert!(out.join("counts_psi.csv").exists());
    }

    #[test]
    fn empty_map_exports_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(test_config()).unwrap();
        let out = dir.path().join("export");
        let summary = export_map(pipeline.grid(), &out).unwrap();
        assert_eq!(summary.global_vertices, 0);
        assert!(summary.instance_meshes.is_empty());
        let ply = std::fs::read_to_string(out.join("global.ply")).unwrap();
        assert!(ply.contains("element vertex 0"));
        let segments_csv = std::fs::read_to_string(out.join("segments.csv")).unwrap();
        assert_eq!(segments_csv.lines().count(), 1);
    }
}
