//! Exact nearest-neighbour queries over 3D point sets.
//!
//! Points are bucketed into a uniform voxel grid and queries expand over
//! Chebyshev shells of cells until no unscanned cell can contain a closer
//! point. All queries are exact; the cell size only affects speed. Ties are
//! broken deterministically toward the lowest point index.

use nalgebra::Vector3;

/// Uniform-grid spatial index over a fixed set of points.
#[derive(Clone, Debug)]
pub struct PointGrid {
    points: Vec<Vector3<f64>>,
    origin: Vector3<f64>,
    cell_size: f64,
    dims: [i64; 3],
    /// CSR cell layout: `cell_start[c]..cell_start[c + 1]` indexes `cell_points`.
    cell_start: Vec<u32>,
    cell_points: Vec<u32>,
}

/// Soft cap on total grid cells; exceeding it coarsens the cell size.
const MAX_CELLS: usize = 4_000_000;

impl PointGrid {
    /// Build with an explicit cell size (must be positive and finite).
    pub fn build(points: Vec<Vector3<f64>>, cell_size: f64) -> PointGrid {
        assert!(
            cell_size.is_finite() && cell_size > 0.0,
            "cell size must be positive"
        );
        if points.is_empty() {
            return PointGrid {
                points,
                origin: Vector3::zeros(),
                cell_size,
                dims: [1, 1, 1],
                cell_start: vec![0, 0],
                cell_points: Vec::new(),
            };
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in &points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let extent = max - min;
        let mut cell_size = cell_size;
        let dims_for = |s: f64| -> [i64; 3] {
            [
                (extent.x / s).floor() as i64 + 1,
                (extent.y / s).floor() as i64 + 1,
                (extent.z / s).floor() as i64 + 1,
            ]
        };
        let mut dims = dims_for(cell_size);
        let total = |d: [i64; 3]| d[0] as usize * d[1] as usize * d[2] as usize;
        if total(dims) > MAX_CELLS {
            let grow = (total(dims) as f64 / MAX_CELLS as f64).cbrt();
            cell_size *= grow * 1.01;
            dims = dims_for(cell_size);
        }

        let n_cells = total(dims);
        let cell_of = |p: &Vector3<f64>| -> usize {
            let cx = (((p.x - min.x) / cell_size).floor() as i64).clamp(0, dims[0] - 1);
            let cy = (((p.y - min.y) / cell_size).floor() as i64).clamp(0, dims[1] - 1);
            let cz = (((p.z - min.z) / cell_size).floor() as i64).clamp(0, dims[2] - 1);
            ((cz * dims[1] + cy) * dims[0] + cx) as usize
        };

        // Counting sort keeps per-cell point order ascending by index.
        let mut counts = vec![0u32; n_cells + 1];
        for p in &points {
            counts[cell_of(p) + 1] += 1;
        }
        for c in 1..counts.len() {
            counts[c] += counts[c - 1];
        }
        let cell_start = counts.clone();
        let mut cursor = counts;
        let mut cell_points = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            cell_points[cursor[c] as usize] = i as u32;
            cursor[c] += 1;
        }

        PointGrid {
            points,
            origin: min,
            cell_size,
            dims,
            cell_start,
            cell_points,
        }
    }

    /// Build with a cell size targeting about one point per cell.
    pub fn with_auto_cell(points: Vec<Vector3<f64>>) -> PointGrid {
        let cell = if points.len() < 2 {
            1.0
        } else {
            let mut min = points[0];
            let mut max = points[0];
            for p in &points {
                min = min.inf(p);
                max = max.sup(p);
            }
            let diag = (max - min).norm();
            if diag > 0.0 {
                diag / (points.len() as f64).cbrt()
            } else {
                1.0
            }
        };
        PointGrid::build(points, cell)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn query_cell(&self, q: &Vector3<f64>) -> [i64; 3] {
        [
            ((q.x - self.origin.x) / self.cell_size).floor() as i64,
            ((q.y - self.origin.y) / self.cell_size).floor() as i64,
            ((q.z - self.origin.z) / self.cell_size).floor() as i64,
        ]
    }

    #[inline]
    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize
    }

    fn scan_cell(
        &self,
        c: [i64; 3],
        q: &Vector3<f64>,
        skip: &dyn Fn(usize) -> bool,
        best: &mut Option<(usize, f64)>,
    ) {
        let f = self.flat(c);
        let lo = self.cell_start[f] as usize;
        let hi = self.cell_start[f + 1] as usize;
        for &pi in &self.cell_points[lo..hi] {
            let i = pi as usize;
            if skip(i) {
                continue;
            }
            let d2 = (self.points[i] - q).norm_squared();
            let better = match *best {
                None => true,
                Some((bi, bd2)) => d2 < bd2 || (d2 == bd2 && i < bi),
            };
            if better {
                *best = Some((i, d2));
            }
        }
    }

    /// Index and distance of the nearest stored point, skipping indices for
    /// which `skip` returns true. Exact; ties go to the lowest index.
    pub fn nearest_filtered(
        &self,
        q: &Vector3<f64>,
        skip: &dyn Fn(usize) -> bool,
    ) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let qc = self.query_cell(q);
        // Farthest shell that still intersects the grid.
        let r_max = (0..3)
            .map(|a| qc[a].abs().max((self.dims[a] - 1 - qc[a]).abs()))
            .max()
            .unwrap();
        let mut best: Option<(usize, f64)> = None;
        for r in 0..=r_max {
            // Cells at exactly Chebyshev distance r from qc, clipped to grid.
            self.for_shell(qc, r, &mut |c| self.scan_cell(c, q, skip, &mut best));
            if let Some((_, bd2)) = best {
                // Unscanned cells are at Chebyshev distance > r so their
                // points lie at Euclidean distance >= r * cell_size.
                let horizon = r as f64 * self.cell_size;
                if bd2 < horizon * horizon {
                    break;
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    /// Nearest stored point to `q`.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        self.nearest_filtered(q, &|_| false)
    }

    /// Nearest stored point to the stored point `idx`, excluding itself.
    pub fn nearest_excluding(&self, idx: usize) -> Option<(usize, f64)> {
        let q = self.points[idx];
        self.nearest_filtered(&q, &|i| i == idx)
    }

    /// Indices of all points with `|p - q| <= radius`, ascending.
    pub fn within_radius(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        assert!(radius >= 0.0 && radius.is_finite());
        if self.points.is_empty() {
            return Vec::new();
        }
        let r2 = radius * radius;
        let lo = self.query_cell(&(q - Vector3::repeat(radius)));
        let hi = self.query_cell(&(q + Vector3::repeat(radius)));
        let mut out = Vec::new();
        for cz in lo[2].max(0)..=hi[2].min(self.dims[2] - 1) {
            for cy in lo[1].max(0)..=hi[1].min(self.dims[1] - 1) {
                for cx in lo[0].max(0)..=hi[0].min(self.dims[0] - 1) {
                    let f = self.flat([cx, cy, cz]);
                    let s = self.cell_start[f] as usize;
                    let e = self.cell_start[f + 1] as usize;
                    for &pi in &self.cell_points[s..e] {
                        let i = pi as usize;
                        if (self.points[i] - q).norm_squared() <= r2 {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Visit every in-grid cell at exactly Chebyshev distance `r` from `qc`.
    fn for_shell(&self, qc: [i64; 3], r: i64, visit: &mut dyn FnMut([i64; 3])) {
        let clip = |a: usize, v: i64| v >= 0 && v < self.dims[a];
        if r == 0 {
            if (0..3).all(|a| clip(a, qc[a])) {
                visit(qc);
            }
            return;
        }
        for dz in -r..=r {
            let z = qc[2] + dz;
            if !clip(2, z) {
                continue;
            }
            let face_z = dz.abs() == r;
            for dy in -r..=r {
                let y = qc[1] + dy;
                if !clip(1, y) {
                    continue;
                }
                let face_y = dy.abs() == r;
                if face_z || face_y {
                    for dx in -r..=r {
                        let x = qc[0] + dx;
                        if clip(0, x) {
                            visit([x, y, z]);
                        }
                    }
                } else {
                    for dx in [-r, r] {
                        let x = qc[0] + dx;
                        if clip(0, x) {
                            visit([x, y, z]);
                        }
                    }
                }
            }
        }
    }
}

/// Median over all points of the distance to their nearest other point.
/// `None` for sets with fewer than two points. Even-sized medians average
/// the two central values.
pub fn median_nn_spacing(points: &[Vector3<f64>]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let grid = PointGrid::with_auto_cell(points.to_vec());
    let mut spacings: Vec<f64> = (0..points.len())
        .map(|i| grid.nearest_excluding(i).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        .collect();
    spacings.sort_by(|a, b| a.total_cmp(b));
    let n = spacings.len();
    Some(if n % 2 == 1 {
        spacings[n / 2]
    } else {
        0.5 * (spacings[n / 2 - 1] + spacings[n / 2])
    })
}
