//! Indexed triangle mesh with optional per-vertex normals.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GbrError, Result};
use crate::io::ply::{read_ply, write_mesh_ply};

/// Indexed triangle mesh. `normals` is either empty or parallel to
/// `vertices`; normals are unit length where present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
    ) -> Result<TriangleMesh> {
        if !normals.is_empty() && normals.len() != vertices.len() {
            return Err(GbrError::Dimension(format!(
                "{} normals for {} vertices",
                normals.len(),
                vertices.len()
            )));
        }
        for f in &faces {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(GbrError::Invalid(format!(
                    "face {f:?} references a vertex beyond {}",
                    vertices.len()
                )));
            }
        }
        Ok(TriangleMesh {
            vertices,
            normals,
            faces,
        })
    }

    pub fn empty() -> TriangleMesh {
        TriangleMesh::default()
    }

    /// True when the mesh carries no triangles.
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        let ab = self.vertices[b] - self.vertices[a];
        let ac = self.vertices[c] - self.vertices[a];
        0.5 * ab.cross(&ac).norm()
    }

    /// Total surface area.
    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Draw `count` points uniformly by surface area.
    ///
    /// Triangles are chosen proportionally to their area and points placed
    /// with the square-root barycentric trick, so the density is uniform
    /// across the whole surface regardless of triangulation.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if self.faces.is_empty() {
            return Err(GbrError::Empty("cannot sample an empty mesh".into()));
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.face_area(f);
            cumulative.push(total);
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(GbrError::Empty(format!(
                "mesh has no sampleable area (total {total})"
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let target = rng.random::<f64>() * total;
            let f = cumulative
                .partition_point(|&c| c <= target)
                .min(self.faces.len() - 1);
            let [a, b, c] = self.faces[f];
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            out.push(self.vertices[a] * wa + self.vertices[b] * wb + self.vertices[c] * wc);
        }
        Ok(out)
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        let normals = (!self.normals.is_empty()).then_some(self.normals.as_slice());
        write_mesh_ply(path, &self.vertices, normals, &self.faces)
    }

    pub fn load_ply(path: &Path) -> Result<TriangleMesh> {
        let data = read_ply(path)?;
        TriangleMesh::new(data.vertices, data.normals.unwrap_or_default(), data.faces)
    }
}
