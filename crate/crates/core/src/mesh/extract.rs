//! Zero-level-set extraction from a TSDF volume via marching cubes.

use nalgebra::Vector3;
use rayon::prelude::*;
use std::collections::HashMap;

use super::tables::{CORNER_OFFSETS, EDGE_ENDPOINTS, TRIANGLE_TABLE};
use super::triangle::TriangleMesh;
use super::volume::TsdfVolume;

/// One interpolated vertex on a cube edge, keyed so that cells sharing the
/// edge agree on a single mesh vertex.
struct EdgeVertex {
    key: u64,
    position: Vector3<f64>,
    normal: Vector3<f64>,
}

/// Triangulate the tsdf zero level set.
///
/// Runs marching cubes over every cell whose eight corners are all observed
/// (weight > 0); cells touching unobserved samples are skipped so the mesh
/// never extends into unseen space. Vertex normals come from the
/// interpolated tsdf gradient and point from the inside (negative) toward
/// the outside (positive). Without any sign change the result is empty.
pub fn extract_mesh(volume: &TsdfVolume) -> TriangleMesh {
    let dims = volume.dims();
    let cells = [dims[0] - 1, dims[1] - 1, dims[2] - 1];

    // Phase one: per z-slab of cells, emit triangles as keyed edge vertices.
    // Each cell's output depends only on the volume, so the parallel map is
    // deterministic; the serial assembly below fixes the global order.
    let slabs: Vec<Vec<[EdgeVertex; 3]>> = (0..cells[2])
        .into_par_iter()
        .map(|ck| {
            let mut out = Vec::new();
            for cj in 0..cells[1] {
                for ci in 0..cells[0] {
                    emit_cell(volume, dims, [ci, cj, ck], &mut out);
                }
            }
            out
        })
        .collect();

    // Phase two: deduplicate edge vertices in first-encounter order.
    let mut index_of: HashMap<u64, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    for slab in slabs {
        for tri in slab {
            let mut face = [0usize; 3];
            for (slot, ev) in tri.into_iter().enumerate() {
                let next = vertices.len();
                let idx = *index_of.entry(ev.key).or_insert(next);
                if idx == next {
                    vertices.push(ev.position);
                    normals.push(ev.normal);
                }
                face[slot] = idx;
            }
            faces.push(face);
        }
    }
    TriangleMesh {
        vertices,
        normals,
        faces,
    }
}

fn emit_cell(
    volume: &TsdfVolume,
    dims: [usize; 3],
    cell: [usize; 3],
    out: &mut Vec<[EdgeVertex; 3]>,
) {
    let mut values = [0.0f64; 8];
    for (c, off) in CORNER_OFFSETS.iter().enumerate() {
        let (i, j, k) = (cell[0] + off[0], cell[1] + off[1], cell[2] + off[2]);
        if volume.weight(i, j, k) <= 0.0 {
            return;
        }
        values[c] = volume.tsdf(i, j, k);
    }

    let mut case = 0usize;
    for (c, v) in values.iter().enumerate() {
        if *v < 0.0 {
            case |= 1 << c;
        }
    }
    if case == 0 || case == 255 {
        return;
    }

    let tri_edges = &TRIANGLE_TABLE[case];
    let mut t = 0;
    while t + 2 < tri_edges.len() && tri_edges[t] >= 0 {
        // The table winds triangles with right-hand normals toward the
        // negative side; swap two vertices so they face outward instead,
        // agreeing with the gradient normals.
        let tri = [
            edge_vertex(volume, dims, cell, &values, tri_edges[t] as usize),
            edge_vertex(volume, dims, cell, &values, tri_edges[t + 2] as usize),
            edge_vertex(volume, dims, cell, &values, tri_edges[t + 1] as usize),
        ];
        out.push(tri);
        t += 3;
    }
}

fn edge_vertex(
    volume: &TsdfVolume,
    dims: [usize; 3],
    cell: [usize; 3],
    values: &[f64; 8],
    edge: usize,
) -> EdgeVertex {
    let [ca, cb] = EDGE_ENDPOINTS[edge];
    let (va, vb) = (values[ca], values[cb]);
    let a = [
        cell[0] + CORNER_OFFSETS[ca][0],
        cell[1] + CORNER_OFFSETS[ca][1],
        cell[2] + CORNER_OFFSETS[ca][2],
    ];
    let b = [
        cell[0] + CORNER_OFFSETS[cb][0],
        cell[1] + CORNER_OFFSETS[cb][1],
        cell[2] + CORNER_OFFSETS[cb][2],
    ];

    // The table only references sign-crossing edges, so va != vb; cells on
    // either side derive the same t from the same corner values.
    let t = (va / (va - vb)).clamp(0.0, 1.0);
    let pa = volume.voxel_center(a[0], a[1], a[2]);
    let pb = volume.voxel_center(b[0], b[1], b[2]);
    let position = pa + (pb - pa) * t;

    let ga = lattice_gradient(volume, dims, a);
    let gb = lattice_gradient(volume, dims, b);
    let gradient = ga + (gb - ga) * t;
    let normal = if gradient.norm() > 1e-12 {
        gradient.normalize()
    } else {
        // Degenerate gradient: fall back to the edge direction oriented from
        // the negative (inside) endpoint toward the positive one.
        let dir = if va < 0.0 { pb - pa } else { pa - pb };
        dir.normalize()
    };

    EdgeVertex {
        key: edge_key(dims, a, b),
        position,
        normal,
    }
}

/// Canonical edge id: the lattice index of the lower endpoint plus the axis.
fn edge_key(dims: [usize; 3], a: [usize; 3], b: [usize; 3]) -> u64 {
    let axis = (0..3).find(|&ax| a[ax] != b[ax]).expect("degenerate edge");
    let low = if a[axis] < b[axis] { a } else { b };
    let flat = (low[2] * dims[1] + low[1]) * dims[0] + low[0];
    (flat as u64) * 3 + axis as u64
}

/// Tsdf gradient at a lattice sample: central difference where both
/// neighbours are observed, one-sided toward the observed side otherwise.
fn lattice_gradient(volume: &TsdfVolume, dims: [usize; 3], p: [usize; 3]) -> Vector3<f64> {
    let h = volume.voxel_size();
    let mut g = Vector3::zeros();
    for axis in 0..3 {
        let mut lo = p;
        let mut hi = p;
        let has_lo = p[axis] > 0;
        let has_hi = p[axis] + 1 < dims[axis];
        if has_lo {
            lo[axis] -= 1;
        }
        if has_hi {
            hi[axis] += 1;
        }
        let lo_ok = has_lo && volume.weight(lo[0], lo[1], lo[2]) > 0.0;
        let hi_ok = has_hi && volume.weight(hi[0], hi[1], hi[2]) > 0.0;
        let center = volume.tsdf(p[0], p[1], p[2]);
        g[axis] = match (lo_ok, hi_ok) {
            (true, true) => {
                (volume.tsdf(hi[0], hi[1], hi[2]) - volume.tsdf(lo[0], lo[1], lo[2])) / (2.0 * h)
            }
            (false, true) => (volume.tsdf(hi[0], hi[1], hi[2]) - center) / h,
            (true, false) => (center - volume.tsdf(lo[0], lo[1], lo[2])) / h,
            (false, false) => 0.0,
        };
    }
    g
}

#[cfg(test)]
mod tests {
    use super::super::tables::EDGE_TABLE;
    use super::super::volume::{default_truncation, integrate, TsdfVolume};
    use super::*;
    use crate::io::synthetic::{generate_scene, SurfaceKind, SyntheticSceneSpec};

    /// Fill every sample from a world-space signed-distance function,
    /// normalized by the truncation band.
    fn analytic_volume(
        min: Vector3<f64>,
        max: Vector3<f64>,
        voxel: f64,
        sdf: impl Fn(&Vector3<f64>) -> f64,
    ) -> TsdfVolume {
        let mut vol = TsdfVolume::from_bounds(min, max, voxel).unwrap();
        let trunc = default_truncation(voxel);
        let dims = vol.dims();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = vol.voxel_center(i, j, k);
                    let t = (sdf(&p) / trunc).clamp(-1.0, 1.0);
                    vol.set_sample(i, j, k, t, 1.0);
                }
            }
        }
        vol
    }

    #[test]
    fn tables_agree_with_corner_sign_topology() {
        for case in 0..256usize {
            let inside = |corner: usize| (case >> corner) & 1 == 1;
            let mut crossing = 0u16;
            for (e, [a, b]) in EDGE_ENDPOINTS.iter().enumerate() {
                if inside(*a) != inside(*b) {
                    crossing |= 1 << e;
                }
            }
            assert_eq!(
                EDGE_TABLE[case], crossing,
                "edge mask mismatch for case {case}"
            );

            let row = &TRIANGLE_TABLE[case];
            let used = row.iter().take_while(|&&e| e >= 0).count();
            assert_eq!(used % 3, 0, "case {case} has a partial triangle");
            for &e in row.iter().take(used) {
                assert!(
                    crossing & (1 << e) != 0,
                    "case {case} references non-crossing edge {e}"
                );
            }
            for &e in row.iter().skip(used) {
                assert_eq!(e, -1, "case {case} resumes after the terminator");
            }
        }
        assert_eq!(TRIANGLE_TABLE[0][0], -1);
        assert_eq!(TRIANGLE_TABLE[255][0], -1);
    }

    #[test]
    fn analytic_sphere_extracts_to_the_unit_surface() {
        let voxel = 0.055;
        let vol = analytic_volume(
            Vector3::repeat(-1.303),
            Vector3::repeat(1.303),
            voxel,
            |p| p.norm() - 1.0,
        );
        let mesh = extract_mesh(&vol);
        assert!(mesh.faces.len() > 500, "only {} faces", mesh.faces.len());
        assert_eq!(mesh.normals.len(), mesh.vertices.len());

        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            assert!(
                (v.norm() - 1.0).abs() < voxel,
                "vertex {v:?} off the sphere"
            );
            assert!((n.norm() - 1.0).abs() < 1e-12);
            // Gradient of ||p|| - 1 is the outward radial direction.
            assert!(n.dot(&v.normalize()) > 0.99, "normal {n:?} at {v:?}");
        }

        // Faces reference valid vertices and wind counterclockwise seen from
        // outside, matching the outward normals.
        for f in &mesh.faces {
            assert!(f.iter().all(|&i| i < mesh.vertices.len()));
            let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
            let geometric = (b - a).cross(&(c - a));
            if geometric.norm() > 1e-12 {
                let centroid = (a + b + c) / 3.0;
                assert!(
                    geometric.dot(&centroid) > 0.0,
                    "face {f:?} winds inward"
                );
            }
        }

        // Area close to 4*pi for a unit sphere.
        assert!((mesh.area() - 4.0 * std::f64::consts::PI).abs() < 0.3);
    }

    #[test]
    fn analytic_plane_is_recovered_exactly() {
        let voxel = 0.1;
        let vol = analytic_volume(
            Vector3::zeros(),
            Vector3::new(0.7, 0.7, 0.7),
            voxel,
            |p| 0.37 - p.z,
        );
        let mesh = extract_mesh(&vol);
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            // Linear tsdf in z puts the interpolated crossing exactly on the
            // plane, far below the one-voxel bound.
            assert!((v.z - 0.37).abs() < 1e-9, "vertex {v:?}");
            assert!((v.z - 0.37).abs() < voxel);
        }
        for n in &mesh.normals {
            assert!(n.z.abs() > 0.999, "normal {n:?} not along the plane axis");
        }
    }

    #[test]
    fn all_positive_volumes_give_an_empty_mesh() {
        let mut vol = TsdfVolume::new(Vector3::zeros(), 0.1, [5, 5, 5]).unwrap();
        for k in 0..5 {
            for j in 0..5 {
                for i in 0..5 {
                    vol.set_sample(i, j, k, 1.0, 1.0);
                }
            }
        }
        let mesh = extract_mesh(&vol);
        assert!(mesh.is_empty());
        assert!(mesh.vertices.is_empty());

        // A fully unobserved volume is empty too.
        let blank = TsdfVolume::new(Vector3::zeros(), 0.1, [5, 5, 5]).unwrap();
        assert!(extract_mesh(&blank).is_empty());
    }

    #[test]
    fn unobserved_corners_mask_out_cells() {
        let voxel = 0.1;
        let full = analytic_volume(
            Vector3::zeros(),
            Vector3::repeat(1.0),
            voxel,
            |p| 0.52 - p.z,
        );
        let full_mesh = extract_mesh(&full);

        // Same field, but the low-x half is never observed.
        let mut half = full.clone();
        let dims = half.dims();
        let cut = dims[0] / 2;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..cut {
                    half.set_sample(i, j, k, 1.0, 0.0);
                }
            }
        }
        let half_mesh = extract_mesh(&half);
        assert!(!half_mesh.is_empty());
        assert!(half_mesh.vertices.len() < full_mesh.vertices.len());
        let x_min = half.voxel_center(cut, 0, 0).x;
        for v in &half_mesh.vertices {
            assert!(v.x >= x_min - 1e-12, "vertex {v:?} in unobserved space");
        }
    }

    #[test]
    fn fused_synthetic_sphere_matches_the_oracle_radius() {
        let spec = SyntheticSceneSpec {
            views: 20,
            width: 128,
            height: 96,
            focal: 140.0,
            ..SyntheticSceneSpec::preset(SurfaceKind::Sphere)
        };
        let (_bundle, gt) = generate_scene(&spec).unwrap();

        let voxel = 0.02;
        let trunc = default_truncation(voxel);
        let mut vol =
            TsdfVolume::from_bounds(Vector3::repeat(-1.2), Vector3::repeat(1.2), voxel).unwrap();
        for v in 0..spec.views {
            integrate(&mut vol, &gt.depths[v], &gt.intrinsics[v], &gt.poses[v], None, trunc)
                .unwrap();
        }

        let mesh = extract_mesh(&vol);
        assert!(mesh.faces.len() > 1000, "only {} faces", mesh.faces.len());
        let mean_radial = mesh
            .vertices
            .iter()
            .map(|v| (v.norm() - 1.0).abs())
            .sum::<f64>()
            / mesh.vertices.len() as f64;
        assert!(mean_radial < voxel, "mean radial error {mean_radial}");

        // Normals point outward on a sphere.
        let outward = mesh
            .vertices
            .iter()
            .zip(&mesh.normals)
            .filter(|(v, n)| n.dot(&v.normalize()) > 0.9)
            .count();
        assert!(outward as f64 > 0.98 * mesh.vertices.len() as f64);
    }
}
