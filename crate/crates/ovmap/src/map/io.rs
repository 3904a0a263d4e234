//! Versioned binary serialization of the volumetric map.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            4 bytes   "OVMP"
//! version          u32       1
//! voxel_size       f64       meters
//! truncation       f64       meters
//! w_max            f32       fusion weight cap
//! next_segment     u32       persistent segment label counter
//! next_instance    u32       persistent instance label counter
//! block_count      u64
//! blocks, ascending (x, y, z):
//!   x, y, z        i32 each
//!   4096 voxels in offset order (x fastest, then y, then z):
//!     sdf          f32
//!     weight       f32
//!     label        u32
//!     confidence   u32
//! phi_count        u64
//! phi entries, ascending (segment, instance):
//!   segment        u32
//!   instance       u32
//!   count          u64
//! psi_count        u64
//! psi entries, ascending (segment, class):
//!   segment        u32
//!   class          u32
//!   count          u64
//! ```
//!
//! Block and table iteration is sorted, so saving the same map twice
//! produces byte-identical files.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::association::PersistentLabels;
use crate::error::{Error, Result};
use crate::labels::{ClassId, InstanceLabel, SegmentLabel};
use crate::map::{BlockIndex, VoxelGrid, BLOCK_VOLUME};

const MAGIC: &[u8; 4] = b"OVMP";
const VERSION: u32 = 1;

pub fn save_map(path: &Path, grid: &VoxelGrid, labels: &PersistentLabels) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write_map(&mut out, grid, labels)
}

pub fn write_map<W: Write>(out: &mut W, grid: &VoxelGrid, labels: &PersistentLabels) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_f64::<LittleEndian>(grid.voxel_size())?;
    out.write_f64::<LittleEndian>(grid.truncation())?;
    out.write_f32::<LittleEndian>(grid.w_max())?;
    out.write_u32::<LittleEndian>(labels.next_segment())?;
    out.write_u32::<LittleEndian>(labels.next_instance())?;

    let indices = grid.sorted_block_indices();
    out.write_u64::<LittleEndian>(indices.len() as u64)?;
    for bi in indices {
        out.write_i32::<LittleEndian>(bi.x)?;
        out.write_i32::<LittleEndian>(bi.y)?;
        out.write_i32::<LittleEndian>(bi.z)?;
        let block = grid.block(&bi).expect("listed block exists");
        for voxel in block.voxels() {
            out.write_f32::<LittleEndian>(voxel.sdf)?;
            out.write_f32::<LittleEndian>(voxel.weight)?;
            out.write_u32::<LittleEndian>(voxel.label.0)?;
            out.write_u32::<LittleEndian>(voxel.label_confidence)?;
        }
    }

    let phi: Vec<_> = grid.counts().phi_entries().collect();
    out.write_u64::<LittleEndian>(phi.len() as u64)?;
    for (l, o, count) in phi {
        out.write_u32::<LittleEndian>(l.0)?;
        out.write_u32::<LittleEndian>(o.0)?;
        out.write_u64::<LittleEndian>(count)?;
    }
    let psi: Vec<_> = grid.counts().psi_entries().collect();
    out.write_u64::<LittleEndian>(psi.len() as u64)?;
    for (l, c, count) in psi {
        out.write_u32::<LittleEndian>(l.0)?;
        out.write_u32::<LittleEndian>(c.0)?;
        out.write_u64::<LittleEndian>(count)?;
    }
    Ok(())
}

pub fn load_map(path: &Path) -> Result<(VoxelGrid, PersistentLabels)> {
    let mut file = BufReader::new(std::fs::File::open(path)?);
    read_map(&mut file)
}

pub fn read_map<R: Read>(input: &mut R) -> Result<(VoxelGrid, PersistentLabels)> {
    let bad = |reason: String| Error::MapFormat(reason);

    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:02x?}")));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!(
            "unsupported version {version}, this build reads {VERSION}"
        )));
    }
    let voxel_size = input.read_f64::<LittleEndian>()?;
    let truncation = input.read_f64::<LittleEndian>()?;
    let w_max = input.read_f32::<LittleEndian>()?;
    if !voxel_size.is_finite() || !truncation.is_finite() || !w_max.is_finite() {
        return Err(bad("non-finite grid parameters".into()));
    }
    let mut grid = VoxelGrid::new(voxel_size, truncation, w_max)
        .map_err(|e| bad(format!("invalid grid parameters: {e}")))?;

    let next_segment = input.read_u32::<LittleEndian>()?;
    let next_instance = input.read_u32::<LittleEndian>()?;
    let labels = PersistentLabels::from_counters(next_segment, next_instance)
        .ok_or_else(|| bad("label counters must be at least 1".into()))?;

    let block_count = input.read_u64::<LittleEndian>()?;
    for _ in 0..block_count {
        let bi = BlockIndex {
            x: input.read_i32::<LittleEndian>()?,
            y: input.read_i32::<LittleEndian>()?,
            z: input.read_i32::<LittleEndian>()?,
        };
        if grid.index.contains_key(&bi) {
            return Err(bad(format!("duplicate block {bi:?}")));
        }
        let slot = grid.slot_of_or_alloc(bi);
        let block = &mut grid.slots[slot as usize];
        for offset in 0..BLOCK_VOLUME {
            let voxel = block.voxel_mut(offset);
            voxel.sdf = input.read_f32::<LittleEndian>()?;
            voxel.weight = input.read_f32::<LittleEndian>()?;
            voxel.label = SegmentLabel(input.read_u32::<LittleEndian>()?);
            voxel.label_confidence = input.read_u32::<LittleEndian>()?;
            if !voxel.sdf.is_finite() || !voxel.weight.is_finite() || voxel.weight < 0.0 {
                return Err(bad(format!("corrupt voxel record in block {bi:?}")));
            }
        }
    }

    let phi_count = input.read_u64::<LittleEndian>()?;
    for _ in 0..phi_count {
        let l = SegmentLabel(input.read_u32::<LittleEndian>()?);
        let o = InstanceLabel(input.read_u32::<LittleEndian>()?);
        let count = input.read_u64::<LittleEndian>()?;
        if count == 0 {
            return Err(bad("zero count in stored phi table".into()));
        }
        grid.counts.phi.insert((l, o), count);
    }
    let psi_count = input.read_u64::<LittleEndian>()?;
    for _ in 0..psi_count {
        let l = SegmentLabel(input.read_u32::<LittleEndian>()?);
        let c = ClassId(input.read_u32::<LittleEndian>()?);
        let count = input.read_u64::<LittleEndian>()?;
        if count == 0 {
            return Err(bad("zero count in stored psi table".into()));
        }
        grid.counts.psi.insert((l, c), count);
    }

    let mut probe = [0u8; 1];
    match input.read(&mut probe)? {
        0 => Ok((grid, labels)),
        _ => Err(bad("trailing bytes after map data".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, DepthFrame, RigidPose};

    fn populated_map() -> (VoxelGrid, PersistentLabels) {
        let mut grid = VoxelGrid::new(0.01, 0.04, 10_000.0).unwrap();
        let intr = CameraIntrinsics::new(140.0, 140.0, 79.5, 59.5, 160, 120).unwrap();
        let mut depth = DepthFrame::zeros(160, 120);
        let mut labels = vec![SegmentLabel::NONE; 160 * 120];
        for v in 0..120u32 {
            for u in 0..160u32 {
                depth.set(u, v, if u < 80 { 1.0 } else { 1.5 });
                labels[(v * 160 + u) as usize] = SegmentLabel(if u < 80 { 1 } else { 2 });
            }
        }
        grid.integrate_frame(&depth, &RigidPose::identity(), &intr, Some(&labels), 5.0)
            .unwrap();
        grid.update_counts(&[
            (SegmentLabel(1), InstanceLabel(1), ClassId(10)),
            (SegmentLabel(2), InstanceLabel(2), ClassId(20)),
        ]);
        let mut counters = PersistentLabels::new();
        counters.fresh_segment();
        counters.fresh_segment();
        counters.fresh_instance();
        counters.fresh_instance();
        (grid, counters)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let (grid, counters) = populated_map();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.ovmap");
        save_map(&path, &grid, &counters).unwrap();
        let (loaded, loaded_counters) = load_map(&path).unwrap();

        assert_eq!(loaded_counters, counters);
        assert_eq!(loaded.voxel_size(), grid.voxel_size());
        assert_eq!(loaded.truncation(), grid.truncation());
        assert_eq!(loaded.w_max(), grid.w_max());
        assert_eq!(loaded.sorted_block_indices(), grid.sorted_block_indices());
        for bi in grid.sorted_block_indices() {
            let a = grid.block(&bi).unwrap();
            let b = loaded.block(&bi).unwrap();
            assert_eq!(a.voxels(), b.voxels(), "block {bi:?} differs");
        }
        assert_eq!(loaded.counts(), grid.counts());
    }

    #[test]
    fn serialization_is_byte_identical() {
        let (grid, counters) = populated_map();
        let mut a = Vec::new();
        write_map(&mut a, &grid, &counters).unwrap();
        let mut b = Vec::new();
        write_map(&mut b, &grid, &counters).unwrap();
        assert_eq!(a, b);

        // Load then re-save: still the same bytes.
        let (loaded, loaded_counters) = read_map(&mut a.as_slice()).unwrap();
        let mut c = Vec::new();
        write_map(&mut c, &loaded, &loaded_counters).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let (grid, counters) = populated_map();
        let mut bytes = Vec::new();
        write_map(&mut bytes, &grid, &counters).unwrap();

        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_map(&mut bad.as_slice()),
            Err(Error::MapFormat(_))
        ));

        // Unsupported version.
        let mut bad = bytes.clone();
        bad[4] = 99;
        assert!(matches!(
            read_map(&mut bad.as_slice()),
            Err(Error::MapFormat(_))
        ));

        // Truncated in the middle of a block.
        let cut = bytes.len() / 2;
        assert!(read_map(&mut bytes[..cut].to_vec().as_slice()).is_err());

        // Trailing garbage.
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(
            read_map(&mut bad.as_slice()),
            Err(Error::MapFormat(_))
        ));
    }

    #[test]
    fn zero_label_counters_are_rejected() {
        let (grid, counters) = populated_map();
        let mut bytes = Vec::new();
        write_map(&mut bytes, &grid, &counters).unwrap();
        // next_segment lives at offset 28.
        bytes[28..32].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_map(&mut bytes.as_slice()),
            Err(Error::MapFormat(_))
        ));
    }
}
