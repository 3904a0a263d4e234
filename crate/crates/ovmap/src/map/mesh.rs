//! Triangle mesh extraction at the TSDF zero crossing, with per-vertex
//! label colors and ASCII PLY export.
//!
//! Cells are cubes spanned by 2x2x2 voxel centers; a cell is meshed only
//! when all eight corners are observed, so the mesh never extends into
//! unknown space. Vertex positions are interpolated along crossed cell
//! edges and shared between adjacent cells, which keeps closed surfaces
//! watertight.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::mc_tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};
use super::{TsdfVoxel, VoxelGrid, BLOCK_SIZE};
use crate::error::Result;
use crate::labels::SegmentLabel;

/// An indexed triangle mesh with one segment label per vertex.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub labels: Vec<SegmentLabel>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }
}

/// Deterministic label color: a fixed integer mix of the label value,
/// spread over a mid-brightness range so neighboring labels contrast.
/// Label 0 renders gray.
pub fn label_color(label: SegmentLabel) -> [u8; 3] {
    if label.is_none() {
        return [128, 128, 128];
    }
    // splitmix64 finalizer.
    let mut h = label.0 as u64;
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    [
        40 + (h & 0xff) as u8 % 176,
        40 + ((h >> 8) & 0xff) as u8 % 176,
        40 + ((h >> 16) & 0xff) as u8 % 176,
    ]
}

/// Canonical identity of a cell edge: the lower of the two voxels it
/// connects plus the axis along which it runs.
fn edge_key(cell: [i32; 3], edge: usize) -> ([i32; 3], u8) {
    let (ca, cb) = EDGE_CORNERS[edge];
    let a = CORNER_OFFSETS[ca];
    let b = CORNER_OFFSETS[cb];
    let lower = (a.0.min(b.0), a.1.min(b.1), a.2.min(b.2));
    let axis = if a.0 != b.0 {
        0
    } else if a.1 != b.1 {
        1
    } else {
        2
    };
    (
        [cell[0] + lower.0, cell[1] + lower.1, cell[2] + lower.2],
        axis,
    )
}

/// Extracts the zero-crossing mesh. `keep`, when given, restricts the
/// output to triangles touching at least one vertex whose label is in
/// the set (used for per-segment and per-instance exports).
pub fn extract_mesh(grid: &VoxelGrid, keep: Option<&BTreeSet<SegmentLabel>>) -> Mesh {
    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<([i32; 3], u8), u32> = HashMap::new();

    let corner_voxel = |cell: [i32; 3], corner: usize| -> Option<&TsdfVoxel> {
        let o = CORNER_OFFSETS[corner];
        grid.voxel([cell[0] + o.0, cell[1] + o.1, cell[2] + o.2])
    };

    // The vertex on a crossed edge, with its interpolated position and
    // the label of the endpoint closer to the surface.
    let edge_data = |cell: [i32; 3], edge: usize| -> (Vector3<f64>, SegmentLabel) {
        let (lower, axis) = edge_key(cell, edge);
        let mut upper = lower;
        upper[axis as usize] += 1;
        let a = grid.voxel(lower).expect("meshed cell corner allocated");
        let b = grid.voxel(upper).expect("meshed cell corner allocated");
        let (sa, sb) = (a.sdf as f64, b.sdf as f64);
        let t = sa / (sa - sb);
        let pa = grid.voxel_center(lower);
        let pb = grid.voxel_center(upper);
        let label = if sa.abs() <= sb.abs() {
            a.label
        } else {
            b.label
        };
        (pa + (pb - pa) * t, label)
    };

    for bi in grid.sorted_block_indices() {
        for lz in 0..BLOCK_SIZE {
            for ly in 0..BLOCK_SIZE {
                for lx in 0..BLOCK_SIZE {
                    let cell = [
                        bi.x * BLOCK_SIZE + lx,
                        bi.y * BLOCK_SIZE + ly,
                        bi.z * BLOCK_SIZE + lz,
                    ];
                    let mut case = 0usize;
                    let mut complete = true;
                    for corner in 0..8 {
                        match corner_voxel(cell, corner) {
                            Some(v) if v.is_observed() => {
                                if v.sdf < 0.0 {
                                    case |= 1 << corner;
                                }
                            }
                            _ => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if !complete || EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let row = &TRI_TABLE[case];
                    let mut k = 0;
                    while row[k] >= 0 {
                        // Table order winds inward for this corner layout;
                        // swapping two vertices makes normals face outward.
                        let edges = [row[k] as usize, row[k + 2] as usize, row[k + 1] as usize];
                        k += 3;
                        if let Some(keep) = keep {
                            let touches =
                                edges.iter().any(|&e| keep.contains(&edge_data(cell, e).1));
                            if !touches {
                                continue;
                            }
                        }
                        let mut tri = [0u32; 3];
                        for (slot, &e) in tri.iter_mut().zip(&edges) {
                            let key = edge_key(cell, e);
                            *slot = *edge_vertex.entry(key).or_insert_with(|| {
                                let (pos, label) = edge_data(cell, e);
                                mesh.vertices.push(pos);
                                mesh.labels.push(label);
                                (mesh.vertices.len() - 1) as u32
                            });
                        }
                        mesh.triangles.push(tri);
                    }
                }
            }
        }
    }
    if keep.is_some() {
        compact(&mut mesh);
    }
    mesh
}

/// Drops vertices not referenced by any triangle, preserving order.
fn compact(mesh: &mut Mesh) {
    let mut used = vec![false; mesh.vertices.len()];
    for tri in &mesh.triangles {
        for &i in tri {
            used[i as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut next = 0u32;
    for (i, &u) in used.iter().enumerate() {
        if u {
            remap[i] = next;
            next += 1;
        }
    }
    let mut vertices = Vec::with_capacity(next as usize);
    let mut labels = Vec::with_capacity(next as usize);
    for (i, &u) in used.iter().enumerate() {
        if u {
            vertices.push(mesh.vertices[i]);
            labels.push(mesh.labels[i]);
        }
    }
    for tri in &mut mesh.triangles {
        for i in tri.iter_mut() {
            *i = remap[*i as usize];
        }
    }
    mesh.vertices = vertices;
    mesh.labels = labels;
}

/// Writes the mesh as ASCII PLY with per-vertex label colors. Output is
/// byte-stable for a given mesh.
pub fn write_ply<W: Write>(mesh: &Mesh, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "comment segment-labeled TSDF surface")?;
    writeln!(out, "element vertex {}", mesh.vertex_count())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "property uchar red")?;
    writeln!(out, "property uchar green")?;
    writeln!(out, "property uchar blue")?;
    writeln!(out, "element face {}", mesh.triangle_count())?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;
    for (v, &label) in mesh.vertices.iter().zip(&mesh.labels) {
        let [r, g, b] = label_color(label);
        writeln!(out, "{:.6} {:.6} {:.6} {r} {g} {b}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn save_ply(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(mesh, &mut file)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, DepthFrame, RigidPose};
    use std::collections::BTreeMap;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(140.0, 140.0, 79.5, 59.5, 160, 120).unwrap()
    }

    fn render_sphere(intr: &CameraIntrinsics, pose: &RigidPose, radius: f64) -> DepthFrame {
        let mut depth = DepthFrame::zeros(intr.width(), intr.height());
        let origin = pose.translation();
        for v in 0..intr.height() {
            for u in 0..intr.width() {
                let d = pose.rotate_vector(&intr.ray_direction(u as f64, v as f64));
                let a = d.dot(&d);
                let b = 2.0 * origin.dot(&d);
                let c = origin.dot(&origin) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    continue;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                if t > 0.0 {
                    depth.set(u, v, t as f32);
                }
            }
        }
        depth
    }

    fn sphere_grid(radius: f64, label: u32) -> VoxelGrid {
        let mut grid = VoxelGrid::new(0.02, 0.08, 10_000.0).unwrap();
        let intr = intr();
        let labels = vec![SegmentLabel(label); 160 * 120];
        // Three elevation rings so the poles are seen head-on too.
        for elevation in [-0.7f64, 0.0, 0.7] {
            for k in 0..8 {
                let angle = k as f64 / 8.0 * std::f64::consts::TAU;
                let eye = [
                    1.1 * elevation.cos() * angle.cos(),
                    1.1 * elevation.sin(),
                    1.1 * elevation.cos() * angle.sin(),
                ];
                let pose = RigidPose::looking_at(eye, [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
                let depth = render_sphere(&intr, &pose, radius);
                grid.integrate_frame(&depth, &pose, &intr, Some(&labels), 5.0)
                    .unwrap();
            }
        }
        grid
    }

    #[test]
    fn empty_map_yields_empty_mesh() {
        let grid = VoxelGrid::new(0.01, 0.04, 10_000.0).unwrap();
        let mesh = extract_mesh(&grid, None);
        assert!(mesh.is_empty());
        assert_eq!(mesh.vertex_count(), 0);
    }

    #[test]
    fn sphere_mesh_hugs_the_analytic_surface() {
        let radius = 0.3;
        let grid = sphere_grid(radius, 4);
        let mesh = extract_mesh(&grid, None);
        assert!(mesh.triangle_count() > 500);
        for v in &mesh.vertices {
            let err = (v.norm() - radius).abs();
            assert!(err < grid.voxel_size(), "vertex off surface by {err}");
        }
        // Most vertices sit on labeled band voxels.
        let labeled = mesh.labels.iter().filter(|l| !l.is_none()).count();
        assert!(labeled * 10 > mesh.labels.len() * 9);
    }

    #[test]
    fn sphere_mesh_is_watertight_and_outward_oriented() {
        let radius = 0.3;
        let grid = sphere_grid(radius, 4);
        let mesh = extract_mesh(&grid, None);

        // Closed 2-manifold: every undirected edge borders exactly two
        // triangles, and opposite directions (consistent orientation).
        let mut edge_usage: BTreeMap<(u32, u32), (u32, u32)> = BTreeMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let entry = edge_usage.entry((a.min(b), a.max(b))).or_insert((0, 0));
                if a < b {
                    entry.0 += 1;
                } else {
                    entry.1 += 1;
                }
            }
        }
        for (edge, &(fwd, rev)) in &edge_usage {
            assert_eq!(
                (fwd, rev),
                (1, 1),
                "edge {edge:?} used {fwd} forward / {rev} reverse times"
            );
        }

        // Signed volume close to the analytic ball, positive sign for
        // outward-facing triangles.
        let volume: f64 = mesh
            .triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (
                    mesh.vertices[t[0] as usize],
                    mesh.vertices[t[1] as usize],
                    mesh.vertices[t[2] as usize],
                );
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        let want = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
        assert!(
            (volume - want).abs() < 0.15 * want,
            "signed volume {volume} vs analytic {want}"
        );
    }

    #[test]
    fn label_filter_restricts_triangles() {
        // Two fronto-parallel patches with different labels.
        let mut grid = VoxelGrid::new(0.01, 0.04, 10_000.0).unwrap();
        let intr = intr();
        let mut depth = DepthFrame::zeros(160, 120);
        let mut labels = vec![SegmentLabel::NONE; 160 * 120];
        for v in 30..90u32 {
            for u in 10..70u32 {
                depth.set(u, v, 1.0);
                labels[(v * 160 + u) as usize] = SegmentLabel(1);
            }
            for u in 90..150u32 {
                depth.set(u, v, 1.4);
                labels[(v * 160 + u) as usize] = SegmentLabel(2);
            }
        }
        grid.integrate_frame(&depth, &RigidPose::identity(), &intr, Some(&labels), 5.0)
            .unwrap();

        let full = extract_mesh(&grid, None);
        let only1: BTreeSet<SegmentLabel> = [SegmentLabel(1)].into();
        let filtered = extract_mesh(&grid, Some(&only1));
        assert!(!filtered.is_empty());
        assert!(filtered.triangle_count() < full.triangle_count());
        // Patch 1 sits near z=1.0; nothing from the z=1.4 patch leaks in.
        for v in &filtered.vertices {
            assert!(v.z < 1.2, "vertex at z={} leaked into filtered mesh", v.z);
        }
        // No orphan vertices remain after filtering.
        let mut used = vec![false; filtered.vertex_count()];
        for t in &filtered.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        assert!(used.iter().all(|&u| u));
    }

    #[test]
    fn ply_output_is_byte_stable_and_well_formed() {
        let grid = sphere_grid(0.25, 3);
        let mesh = extract_mesh(&grid, None);
        let mut a = Vec::new();
        write_ply(&mesh, &mut a).unwrap();
        let mut b = Vec::new();
        write_ply(&mesh, &mut b).unwrap();
        assert_eq!(a, b);

        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("ply"));
        assert_eq!(lines.next(), Some("format ascii 1.0"));
        let vertex_line = text
            .lines()
            .find(|l| l.starts_with("element vertex"))
            .unwrap();
        let face_line = text
            .lines()
            .find(|l| l.starts_with("element face"))
            .unwrap();
        let nv: usize = vertex_line.rsplit(' ').next().unwrap().parse().unwrap();
        let nf: usize = face_line.rsplit(' ').next().unwrap().parse().unwrap();
        assert_eq!(nv, mesh.vertex_count());
        assert_eq!(nf, mesh.triangle_count());
        let header_end = text.lines().position(|l| l == "end_header").unwrap();
        assert_eq!(text.lines().count(), header_end + 1 + nv + nf);
        // Face indices are in range.
        for line in text.lines().skip(header_end + 1 + nv) {
            let mut parts = line.split(' ');
            assert_eq!(parts.next(), Some("3"));
            for p in parts {
                assert!(p.parse::<usize>().unwrap() < nv);
            }
        }
    }

    #[test]
    fn label_colors_are_stable_and_distinct() {
        assert_eq!(label_color(SegmentLabel::NONE), [128, 128, 128]);
        let c1 = label_color(SegmentLabel(1));
        assert_eq!(c1, label_color(SegmentLabel(1)));
        let distinct: BTreeSet<[u8; 3]> = (1..=64).map(|l| label_color(SegmentLabel(l))).collect();
        assert!(
            distinct.len() > 56,
            "only {} distinct colors",
            distinct.len()
        );
        for c in distinct {
            for channel in c {
                assert!((40..=215).contains(&channel));
            }
        }
    }
}
