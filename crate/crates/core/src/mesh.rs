//! Axisymmetric sample/electrode geometry and its structured triangulation.
//!
//! Coordinates are `(r, z)` with the sample centred at the origin: the
//! sample occupies `0 <= r <= R`, `-h/2 <= z <= h/2`, and the optional plate
//! electrodes sit directly above and below it.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of the sample and plate electrodes, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxiGeometry {
    pub sample_radius: f64,
    pub sample_height: f64,
    pub electrode_radius: f64,
    pub electrode_thickness: f64,
    pub include_electrodes: bool,
}

impl Default for AxiGeometry {
    fn default() -> Self {
        Self {
            sample_radius: 9.25e-3,
            sample_height: 5e-3,
            electrode_radius: 15e-3,
            electrode_thickness: 1e-3,
            include_electrodes: false,
        }
    }
}

impl AxiGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sample_radius", self.sample_radius),
            ("sample_height", self.sample_height),
            ("electrode_radius", self.electrode_radius),
            ("electrode_thickness", self.electrode_thickness),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        if self.electrode_radius < self.sample_radius {
            return Err(Error::Geometry(format!(
                "electrode radius {} is smaller than the sample radius {}",
                self.electrode_radius, self.sample_radius
            )));
        }
        Ok(())
    }

    /// Cross-section area of the sample, m².
    pub fn sample_area(&self) -> f64 {
        std::f64::consts::PI * self.sample_radius * self.sample_radius
    }

    pub fn sample_volume(&self) -> f64 {
        self.sample_area() * self.sample_height
    }
}

/// Mesh resolution controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshOptions {
    /// Approximate number of triangles in the sample at refinement 1.
    pub target_elements: usize,
    /// Each refinement level splits every cell edge into this many parts.
    pub refinement: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            target_elements: 736,
            refinement: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Sample,
    Electrode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Terminal,
    Ground,
    Axis,
    Insulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    /// Counter-clockwise node indices in the `(r, z)` plane.
    pub nodes: [usize; 3],
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mesh {
    /// `(r, z)` coordinates, m.
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<Triangle>,
    pub boundary: Vec<BoundaryEdge>,
    /// Node at the sample centre `(0, 0)`.
    pub center_node: usize,
}

impl Mesh {
    /// Triangle area in the `(r, z)` plane (signed, positive for CCW).
    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e].nodes.map(|i| self.nodes[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e].nodes.map(|i| self.nodes[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// `∫ 2πr dA` over the element: its volume of revolution, m³.
    pub fn revolved_volume(&self, e: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.centroid(e)[0] * self.area(e)
    }

    /// Total revolved volume of elements in `region`.
    pub fn region_volume(&self, region: Region) -> f64 {
        (0..self.elements.len())
            .filter(|&e| self.elements[e].region == region)
            .map(|e| self.revolved_volume(e))
            .sum()
    }

    pub fn count_region(&self, region: Region) -> usize {
        self.elements.iter().filter(|t| t.region == region).count()
    }

    /// Sorted, de-duplicated nodes on boundary edges carrying `tag`.
    pub fn tagged_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .boundary
            .iter()
            .filter(|b| b.tag == tag)
            .flat_map(|b| b.nodes)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Elements that contain `node`.
    pub fn elements_around(&self, node: usize) -> Vec<usize> {
        (0..self.elements.len())
            .filter(|&e| self.elements[e].nodes.contains(&node))
            .collect()
    }

    /// Largest `|i - j|` over element node pairs.
    pub fn bandwidth(&self) -> usize {
        self.elements
            .iter()
            .map(|t| {
                let [a, b, c] = t.nodes;
                a.abs_diff(b).max(a.abs_diff(c)).max(b.abs_diff(c))
            })
            .max()
            .unwrap_or(0)
    }

    /// Exterior edges: edges used by exactly one element, as sorted pairs.
    pub fn exterior_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<[usize; 2], usize> = HashMap::new();
        for t in &self.elements {
            let [a, b, c] = t.nodes;
            for (i, j) in [(a, b), (b, c), (c, a)] {
                *count.entry([i.min(j), i.max(j)]).or_default() += 1;
            }
        }
        let mut v: Vec<[usize; 2]> = count
            .into_iter()
            .filter(|(_, n)| *n == 1)
            .map(|(e, _)| e)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Lays out `n` cells over `[a, b]`.
fn grid_line(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 })
        .collect()
}

/// Sample cell counts `(n_r, n_z)` giving roughly square cells and about
/// `target` triangles. `n_z` is even so that a node sits at `z = 0`.
fn sample_cells(g: &AxiGeometry, target: usize) -> (usize, usize) {
    let cells = (target.max(8) as f64) / 2.0;
    let aspect = g.sample_radius / g.sample_height;
    let n_r = (cells * aspect).sqrt().round().max(1.0) as usize;
    let mut n_z = (cells / n_r as f64).round().max(2.0) as usize;
    if n_z % 2 == 1 {
        n_z += 1;
    }
    (n_r, n_z)
}

/// Builds the structured, conforming triangulation of the geometry.
pub fn build_geometry(g: &AxiGeometry, opts: &MeshOptions) -> Result<Mesh> {
    g.validate()?;
    if opts.refinement == 0 {
        return Err(Error::Geometry("refinement must be at least 1".into()));
    }
    let (n_r, n_z) = sample_cells(g, opts.target_elements);
    let (n_r, n_z) = (n_r * opts.refinement, n_z * opts.refinement);
    let half = 0.5 * g.sample_height;

    let mut rs = grid_line(0.0, g.sample_radius, n_r);
    let mut zs = grid_line(-half, half, n_z);
    let mut n_el = 0;
    if g.include_electrodes {
        let dr = g.sample_radius / n_r as f64;
        let dz = g.sample_height / n_z as f64;
        let over = g.electrode_radius - g.sample_radius;
        if over > 1e-12 * g.electrode_radius {
            let n_over = (over / dr).round().max(1.0) as usize;
            rs.extend(grid_line(g.sample_radius, g.electrode_radius, n_over).into_iter().skip(1));
        }
        n_el = (g.electrode_thickness / dz).round().max(1.0) as usize;
        let below = grid_line(-half - g.electrode_thickness, -half, n_el);
        let above = grid_line(half, half + g.electrode_thickness, n_el);
        zs = below[..n_el]
            .iter()
            .chain(zs.iter())
            .chain(above[1..].iter())
            .copied()
            .collect();
    }
    let cols = rs.len() - 1;
    let rows = zs.len() - 1;

    // Region of each grid cell; None for air.
    let cell_region = |i: usize, j: usize| -> Option<Region> {
        let in_sample_z = j >= n_el && j < n_el + n_z;
        if in_sample_z {
            (i < n_r).then_some(Region::Sample)
        } else {
            Some(Region::Electrode)
        }
    };

    // Number nodes row by row, only those touched by an active cell.
    let mut index = vec![usize::MAX; (rows + 1) * (cols + 1)];
    let mut nodes = Vec::new();
    let grid = |i: usize, j: usize| j * (cols + 1) + i;
    for j in 0..=rows {
        for i in 0..=cols {
            let touched = [(i.wrapping_sub(1), j.wrapping_sub(1)), (i, j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j)]
                .into_iter()
                .any(|(ci, cj)| ci < cols && cj < rows && cell_region(ci, cj).is_some());
            if touched {
                index[grid(i, j)] = nodes.len();
                nodes.push([rs[i], zs[j]]);
            }
        }
    }

    let mut elements = Vec::with_capacity(2 * cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            let Some(region) = cell_region(i, j) else { continue };
            let a = index[grid(i, j)];
            let b = index[grid(i + 1, j)];
            let c = index[grid(i + 1, j + 1)];
            let d = index[grid(i, j + 1)];
            elements.push(Triangle { nodes: [a, b, c], region });
            elements.push(Triangle { nodes: [a, c, d], region });
        }
    }

    let z_top = *zs.last().unwrap();
    let z_bottom = zs[0];
    let mut mesh = Mesh {
        nodes,
        elements,
        boundary: Vec::new(),
        center_node: index[grid(0, n_el + n_z / 2)],
    };
    let tol = 1e-9 * g.sample_height;
    mesh.boundary = mesh
        .exterior_edges()
        .into_iter()
        .map(|[a, b]| {
            let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
            let tag = if pa[0].abs() < tol && pb[0].abs() < tol {
                BoundaryTag::Axis
            } else if (pa[1] - z_top).abs() < tol && (pb[1] - z_top).abs() < tol {
                BoundaryTag::Terminal
            } else if (pa[1] - z_bottom).abs() < tol && (pb[1] - z_bottom).abs() < tol {
                BoundaryTag::Ground
            } else {
                BoundaryTag::Insulation
            };
            BoundaryEdge { nodes: [a, b], tag }
        })
        .collect();
    Ok(mesh)
}

/// Element-quality summary.
#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub min_angle_deg: f64,
    pub max_aspect_ratio: f64,
    /// Elements violating the thresholds, with a reason.
    pub failures: Vec<(usize, String)>,
}

impl QualityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const MIN_ANGLE_DEG: f64 = 20.0;
pub const MAX_ASPECT_RATIO: f64 = 5.0;

/// Interior angles of a triangle in degrees.
pub fn triangle_angles(p: [[f64; 2]; 3]) -> [f64; 3] {
    let ang = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        let cos = (u[0] * v[0] + u[1] * v[1]) / ((u[0].hypot(u[1])) * (v[0].hypot(v[1])));
        cos.clamp(-1.0, 1.0).acos().to_degrees()
    };
    [ang(p[0], p[1], p[2]), ang(p[1], p[2], p[0]), ang(p[2], p[0], p[1])]
}

/// Longest edge over shortest altitude, scaled so an equilateral triangle
/// scores 1.
pub fn aspect_ratio(p: [[f64; 2]; 3]) -> f64 {
    let len = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]).hypot(b[1] - a[1]);
    let longest = len(p[0], p[1]).max(len(p[1], p[2])).max(len(p[2], p[0]));
    let area = 0.5
        * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
            .abs();
    if area == 0.0 {
        return f64::INFINITY;
    }
    let min_altitude = 2.0 * area / longest;
    longest / min_altitude * (3f64.sqrt() / 2.0)
}

pub fn mesh_quality(mesh: &Mesh) -> QualityReport {
    let mut min_angle = f64::INFINITY;
    let mut max_aspect: f64 = 0.0;
    let mut failures = Vec::new();
    for (e, t) in mesh.elements.iter().enumerate() {
        let p = t.nodes.map(|i| mesh.nodes[i]);
        let a = triangle_angles(p).into_iter().fold(f64::INFINITY, f64::min);
        let ar = aspect_ratio(p);
        min_angle = min_angle.min(a);
        max_aspect = max_aspect.max(ar);
        if mesh.area(e) <= 0.0 {
            failures.push((e, "non-positive area".to_string()));
        } else if a < MIN_ANGLE_DEG {
            failures.push((e, format!("min angle {a:.2} deg")));
        } else if ar > MAX_ASPECT_RATIO {
            failures.push((e, format!("aspect ratio {ar:.2}")));
        }
    }
    QualityReport {
        min_angle_deg: min_angle,
        max_aspect_ratio: max_aspect,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_mesh_matches_reference_scale() {
        let m = build_geometry(&AxiGeometry::default(), &MeshOptions::default()).unwrap();
        assert!((600..=900).contains(&m.elements.len()), "{}", m.elements.len());
        assert!(mesh_quality(&m).passed());
        assert_eq!(m.nodes[m.center_node], [0.0, 0.0]);
    }

    #[test]
    fn refinement_quadruples_elements() {
        let g = AxiGeometry::default();
        let m1 = build_geometry(&g, &MeshOptions::default()).unwrap();
        let m2 = build_geometry(&g, &MeshOptions { refinement: 2, ..Default::default() }).unwrap();
        assert_eq!(m2.elements.len(), 4 * m1.elements.len());
        assert!(mesh_quality(&m2).passed());
    }

    #[test]
    fn revolved_volume_recovers_cylinder() {
        let g = AxiGeometry::default();
        let m = build_geometry(&g, &MeshOptions::default()).unwrap();
        let v = m.region_volume(Region::Sample);
        assert!(((v - 1.344e-6) / 1.344e-6).abs() < 1e-3);
        assert!(((v - g.sample_volume()) / g.sample_volume()).abs() < 1e-6);
    }

    #[test]
    fn every_exterior_edge_is_tagged_once() {
        for include in [false, true] {
            let g = AxiGeometry { include_electrodes: include, ..Default::default() };
            let m = build_geometry(&g, &MeshOptions::default()).unwrap();
            let mut tagged: Vec<[usize; 2]> = m
                .boundary
                .iter()
                .map(|b| [b.nodes[0].min(b.nodes[1]), b.nodes[0].max(b.nodes[1])])
                .collect();
            tagged.sort_unstable();
            let before = tagged.len();
            tagged.dedup();
            assert_eq!(before, tagged.len());
            assert_eq!(tagged, m.exterior_edges());
            for b in &m.boundary {
                if b.tag == BoundaryTag::Axis {
                    assert!(b.nodes.iter().all(|&n| m.nodes[n][0] == 0.0));
                }
            }
            assert!(m.nodes.iter().all(|p| p[0] >= 0.0));
            assert!((0..m.elements.len()).all(|e| m.area(e) > 0.0));
        }
    }

    #[test]
    fn terminal_and_ground_faces() {
        let g = AxiGeometry::default();
        let m = build_geometry(&g, &MeshOptions::default()).unwrap();
        for n in m.tagged_nodes(BoundaryTag::Terminal) {
            assert_eq!(m.nodes[n][1], 2.5e-3);
        }
        for n in m.tagged_nodes(BoundaryTag::Ground) {
            assert_eq!(m.nodes[n][1], -2.5e-3);
        }
        assert_eq!(m.count_region(Region::Electrode), 0);
    }

    #[test]
    fn electrodes_extend_the_mesh() {
        let g = AxiGeometry { include_electrodes: true, ..Default::default() };
        let m = build_geometry(&g, &MeshOptions::default()).unwrap();
        assert!(m.count_region(Region::Electrode) > 0);
        let top = m.tagged_nodes(BoundaryTag::Terminal);
        assert!(top.iter().all(|&n| (m.nodes[n][1] - 3.5e-3).abs() < 1e-15));
        assert!(top.iter().any(|&n| (m.nodes[n][0] - 15e-3).abs() < 1e-12));
        let ev = m.region_volume(Region::Electrode);
        // two discs of radius 15 mm, 1 mm thick
        let want = 2.0 * std::f64::consts::PI * 15e-3f64.powi(2) * 1e-3;
        assert!(((ev - want) / want).abs() < 1e-9);
        assert!(mesh_quality(&m).passed());
    }

    #[test]
    fn structured_square_cells_have_right_isoceles_angles() {
        let g = AxiGeometry {
            sample_radius: 4e-3,
            sample_height: 4e-3,
            ..Default::default()
        };
        let m = build_geometry(&g, &MeshOptions { target_elements: 32, refinement: 1 }).unwrap();
        for t in &m.elements {
            for a in triangle_angles(t.nodes.map(|i| m.nodes[i])) {
                assert!((a - 45.0).abs() < 1e-9 || (a - 90.0).abs() < 1e-9, "{a}");
            }
        }
    }

    #[test]
    fn slivers_are_flagged() {
        let mut m = build_geometry(&AxiGeometry::default(), &MeshOptions::default()).unwrap();
        let t = m.elements[10].nodes;
        // squash the third vertex onto the opposite edge
        let (a, b) = (m.nodes[t[0]], m.nodes[t[1]]);
        m.nodes.push([0.5 * (a[0] + b[0]) + 1e-7, 0.5 * (a[1] + b[1]) + 1e-7]);
        let sliver = m.nodes.len() - 1;
        m.elements[10].nodes[2] = sliver;
        let q = mesh_quality(&m);
        assert!(!q.passed());
        assert!(q.failures.iter().any(|(e, _)| *e == 10));
    }

    #[test]
    fn degenerate_dimensions_are_rejected() {
        let g = AxiGeometry { sample_height: 0.0, ..Default::default() };
        assert!(matches!(build_geometry(&g, &MeshOptions::default()), Err(Error::Geometry(_))));
        let g = AxiGeometry { electrode_radius: 5e-3, ..Default::default() };
        assert!(build_geometry(&g, &MeshOptions::default()).is_err());
    }
}
