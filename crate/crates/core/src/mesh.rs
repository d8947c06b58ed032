//! Oriented watertight triangle meshes and their motion along the normal flow.
//!
//! A mesh remembers the vertex positions it was created with (`ref_vertices`),
//! which identifies material points across time levels: advection integrates
//! every vertex along `dx/dt = V_N ν` with classical RK4 and re-projects onto
//! the level set, so coefficient vectors can be reused across time levels as
//! the discrete normal-pushforward identification.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{EvolvingSurface, GeometryError};
use crate::quadrature::tri_area;

static MESH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("icosphere level {0} outside [0, 7]")]
    LevelOutOfRange(usize),
    #[error("mesh quality degraded: minimum triangle angle {min_deg:.3}° < 5°")]
    MeshQualityDegraded { min_deg: f64 },
    #[error("vertex projection failed: {0}")]
    ProjectionFailed(#[from] GeometryError),
    #[error("mesh is not watertight/oriented: edge ({0}, {1}) seen {2} times")]
    NotWatertight(usize, usize, usize),
    #[error("vertex {index} off the level set: |phi| = {level:.3e}")]
    VertexOffSurface { index: usize, level: f64 },
    #[error("degenerate element {0}: reference area below 1e-14")]
    DegenerateElement(usize),
    #[error("OFF parse error at line {line}: {msg}")]
    OffFormat { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Oriented watertight triangulation of `Γ(t)` with material identification.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Time level the vertex positions correspond to.
    pub t: f64,
    /// Vertex positions at `t = 0` under the normal-flow identification.
    pub ref_vertices: Vec<Vector3<f64>>,
    /// Identity token used to detect space/mesh mismatches.
    pub id: u64,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>, t: f64) -> Self {
        let ref_vertices = vertices.clone();
        SurfaceMesh {
            vertices,
            triangles,
            t,
            ref_vertices,
            id: MESH_ID.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                seen.insert((a.min(b), a.max(b)));
            }
        }
        seen.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.triangles.len() as i64
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut min = f64::INFINITY;
        for tri in &self.triangles {
            let v = [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]];
            for k in 0..3 {
                let a = (v[(k + 1) % 3] - v[k]).normalize();
                let b = (v[(k + 2) % 3] - v[k]).normalize();
                min = min.min(a.dot(&b).clamp(-1.0, 1.0).acos());
            }
        }
        min.to_degrees()
    }

    /// Mean edge length; the mesh-size parameter used by stabilized pairs.
    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut seen = std::collections::HashSet::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if seen.insert((a.min(b), a.max(b))) {
                    sum += (self.vertices[a] - self.vertices[b]).norm();
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    /// Sum of flat-triangle areas.
    pub fn flat_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| tri_area(self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]))
            .sum()
    }

    /// Checks watertightness and consistent orientation: every undirected edge
    /// must be shared by exactly two triangles traversing it in opposite
    /// directions.
    pub fn check_watertight(&self) -> Result<(), MeshError> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            let opposite = directed.get(&(b, a)).copied().unwrap_or(0);
            if n != 1 || opposite != 1 {
                return Err(MeshError::NotWatertight(a, b, n + opposite));
            }
        }
        Ok(())
    }

    /// Full invariant gate: watertight, quality, vertices on the level set.
    pub fn check_invariants(
        &self,
        surface: &EvolvingSurface,
        level_tol: f64,
    ) -> Result<(), MeshError> {
        self.check_watertight()?;
        let min_deg = self.min_angle_deg();
        if min_deg < 5.0 {
            return Err(MeshError::MeshQualityDegraded { min_deg });
        }
        let data = surface.at(self.t);
        for (index, v) in self.vertices.iter().enumerate() {
            let level = data.level(*v);
            if level.abs() > level_tol {
                return Err(MeshError::VertexOffSurface { index, level });
            }
        }
        Ok(())
    }
}

/// Subdivided icosahedron projected onto the unit sphere;
/// `V = 10·4^level + 2`.
pub fn icosphere(level: usize) -> Result<SurfaceMesh, MeshError> {
    if level > 7 {
        return Err(MeshError::LevelOutOfRange(level));
    }
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut new_tris = Vec::with_capacity(4 * triangles.len());
        for tri in &triangles {
            let mut mids = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[a] + vertices[b]).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            new_tris.push([tri[0], mids[0], mids[2]]);
            new_tris.push([tri[1], mids[1], mids[0]]);
            new_tris.push([tri[2], mids[2], mids[1]]);
            new_tris.push([mids[0], mids[1], mids[2]]);
        }
        triangles = new_tris;
    }
    Ok(SurfaceMesh::new(vertices, triangles, 0.0))
}

/// Structured torus triangulation (genus 1), `nu × nv` grid of vertices.
pub fn torus_mesh(nu: usize, nv: usize, major: f64, minor: f64) -> SurfaceMesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            vertices.push(Vector3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    for i in 0..nu {
        for j in 0..nv {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    SurfaceMesh::new(vertices, triangles, 0.0)
}

/// Icosphere mapped onto `Γ(0)` of the given surface by closest-point
/// projection of each vertex.
pub fn mesh_on_surface(surface: &EvolvingSurface, level: usize) -> Result<SurfaceMesh, MeshError> {
    let base = icosphere(level)?;
    let data = surface.at(0.0);
    let vertices = base
        .vertices
        .iter()
        .map(|v| {
            // Scale spheres/ellipsoids first so projection is well seeded.
            let seed = match surface {
                EvolvingSurface::Sphere { radius } => radius * v,
                EvolvingSurface::DilatingSphere { r0, .. } => *r0 * v,
                EvolvingSurface::Ellipsoid { a, b, c } => Vector3::new(a * v.x, b * v.y, c * v.z),
                EvolvingSurface::AreaPreservingEllipsoid { .. } => *v,
                EvolvingSurface::Torus { .. } => *v,
            };
            data.closest_point(seed).map_err(MeshError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SurfaceMesh::new(vertices, base.triangles, 0.0))
}

/// Integrates every vertex along `dx/dt = V_N ν` from `mesh.t` to `t_new`
/// with `substeps` classical RK4 steps, then projects onto the level set and
/// re-checks the mesh invariants. The material identification (`ref_vertices`)
/// and the connectivity are carried over unchanged.
pub fn advect(
    mesh: &SurfaceMesh,
    surface: &EvolvingSurface,
    t_new: f64,
    substeps: usize,
) -> Result<SurfaceMesh, MeshError> {
    let substeps = substeps.max(1);
    let dt = (t_new - mesh.t) / substeps as f64;
    let mut positions = mesh.vertices.clone();
    for s in 0..substeps {
        let t0 = mesh.t + s as f64 * dt;
        let d0 = surface.at(t0);
        let d1 = surface.at(t0 + 0.5 * dt);
        let d2 = surface.at(t0 + dt);
        let moved: Vec<Result<Vector3<f64>, GeometryError>> =
            crate::exec::map_indexed(positions.len(), |i| {
                let x = positions[i];
                let k1 = d0.normal_velocity(x)?;
                let k2 = d1.normal_velocity(x + 0.5 * dt * k1)?;
                let k3 = d1.normal_velocity(x + 0.5 * dt * k2)?;
                let k4 = d2.normal_velocity(x + dt * k3)?;
                Ok(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            });
        for (i, r) in moved.into_iter().enumerate() {
            positions[i] = r?;
        }
    }
    let data = surface.at(t_new);
    let projected: Vec<Result<Vector3<f64>, GeometryError>> =
        crate::exec::map_indexed(positions.len(), |i| data.closest_point(positions[i]));
    let mut vertices = Vec::with_capacity(positions.len());
    for r in projected {
        vertices.push(r?);
    }
    let out = SurfaceMesh {
        vertices,
        triangles: mesh.triangles.clone(),
        t: t_new,
        ref_vertices: mesh.ref_vertices.clone(),
        id: MESH_ID.fetch_add(1, Ordering::Relaxed),
    };
    out.check_invariants(surface, 1e-8)?;
    Ok(out)
}

/// Reads an ASCII OFF file (counts line, vertex lines, triangular face lines).
pub fn read_off(path: &Path) -> Result<SurfaceMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_off(&text)
}

pub fn parse_off(text: &str) -> Result<SurfaceMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line, header) = lines
        .next()
        .ok_or(MeshError::OffFormat { line: 0, msg: "empty file".into() })?;
    if header != "OFF" {
        return Err(MeshError::OffFormat { line, msg: format!("expected OFF header, got {header:?}") });
    }
    let (line, counts) = lines
        .next()
        .ok_or(MeshError::OffFormat { line, msg: "missing counts line".into() })?;
    let mut it = counts.split_whitespace();
    let nv: usize = parse_field(&mut it, line, "vertex count")?;
    let nf: usize = parse_field(&mut it, line, "face count")?;
    let _ne: usize = parse_field(&mut it, line, "edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines
            .next()
            .ok_or(MeshError::OffFormat { line, msg: "truncated vertex list".into() })?;
        let mut it = l.split_whitespace();
        let x: f64 = parse_field(&mut it, line, "x")?;
        let y: f64 = parse_field(&mut it, line, "y")?;
        let z: f64 = parse_field(&mut it, line, "z")?;
        vertices.push(Vector3::new(x, y, z));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, l) = lines
            .next()
            .ok_or(MeshError::OffFormat { line, msg: "truncated face list".into() })?;
        let mut it = l.split_whitespace();
        let n: usize = parse_field(&mut it, line, "face arity")?;
        if n != 3 {
            return Err(MeshError::OffFormat { line, msg: format!("only triangles supported, got {n}-gon") });
        }
        let a: usize = parse_field(&mut it, line, "index")?;
        let b: usize = parse_field(&mut it, line, "index")?;
        let c: usize = parse_field(&mut it, line, "index")?;
        triangles.push([a, b, c]);
    }
    Ok(SurfaceMesh::new(vertices, triangles, 0.0))
}

fn parse_field<T: std::str::FromStr>(
    it: &mut std::str::SplitWhitespace,
    line: usize,
    what: &str,
) -> Result<T, MeshError> {
    it.next()
        .ok_or_else(|| MeshError::OffFormat { line, msg: format!("missing {what}") })?
        .parse()
        .map_err(|_| MeshError::OffFormat { line, msg: format!("bad {what}") })
}

pub fn write_off(mesh: &SurfaceMesh, path: &Path) -> Result<(), MeshError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "OFF")?;
    writeln!(f, "{} {} {}", mesh.n_vertices(), mesh.triangles.len(), mesh.n_edges())?;
    for v in &mesh.vertices {
        writeln!(f, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(f, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let m0 = icosphere(0).unwrap();
        assert_eq!(m0.n_vertices(), 12);
        assert_eq!(m0.triangles.len(), 20);
        let m2 = icosphere(2).unwrap();
        assert_eq!(m2.n_vertices(), 162);
        let m4 = icosphere(4).unwrap();
        assert_eq!(m4.n_vertices(), 2562);
        assert_eq!(m4.euler_characteristic(), 2);
        assert!(matches!(icosphere(8), Err(MeshError::LevelOutOfRange(8))));
        m4.check_watertight().unwrap();
        assert!(m4.min_angle_deg() > 30.0);
    }

    #[test]
    fn torus_counts() {
        let m = torus_mesh(24, 12, 1.0, 0.3);
        assert_eq!(m.euler_characteristic(), 0);
        m.check_watertight().unwrap();
    }

    #[test]
    fn advect_static_is_identity() {
        let surf = EvolvingSurface::Sphere { radius: 1.0 };
        let mesh = icosphere(2).unwrap();
        let moved = advect(&mesh, &surf, 0.5, 4).unwrap();
        let max: f64 = mesh
            .vertices
            .iter()
            .zip(&moved.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max < 1e-14);
    }

    #[test]
    fn advect_tracks_ellipsoid_area() {
        let surf = EvolvingSurface::AreaPreservingEllipsoid { amplitude: 0.2, t_end: 1.0 };
        let mesh = mesh_on_surface(&surf, 3).unwrap();
        let moved = advect(&mesh, &surf, 0.1, 10).unwrap();
        let area = crate::geometry::surface_area(&surf, &moved, 0.1);
        let area0 = 4.0 * std::f64::consts::PI;
        assert!((area - area0).abs() / area0 < 1e-4, "area {area}");
    }

    #[test]
    fn advect_reverses_to_reference() {
        let surf = EvolvingSurface::AreaPreservingEllipsoid { amplitude: 0.2, t_end: 1.0 };
        let mesh = mesh_on_surface(&surf, 2).unwrap();
        let fwd = advect(&mesh, &surf, 0.3, 48).unwrap();
        let back = advect(&fwd, &surf, 0.0, 48).unwrap();
        let max: f64 = back
            .vertices
            .iter()
            .zip(&back.ref_vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max < 1e-6, "round trip error {max}");
    }

    #[test]
    fn advect_rk4_order() {
        let surf = EvolvingSurface::AreaPreservingEllipsoid { amplitude: 0.2, t_end: 1.0 };
        let mesh = mesh_on_surface(&surf, 1).unwrap();
        let reference = advect_unprojected(&mesh, &surf, 0.25, 64);
        let err = |k: usize| -> f64 {
            let m = advect_unprojected(&mesh, &surf, 0.25, k);
            m.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
        };
        let e2 = err(2);
        let e4 = err(4);
        let e8 = err(8);
        let order1 = (e2 / e4).log2();
        let order2 = (e4 / e8).log2();
        assert!(order1 > 3.5 && order2 > 3.5, "orders {order1:.2} {order2:.2}");
    }

    // RK4 integration without the final projection, for the order study.
    fn advect_unprojected(
        mesh: &SurfaceMesh,
        surface: &EvolvingSurface,
        t_new: f64,
        substeps: usize,
    ) -> Vec<Vector3<f64>> {
        let dt = (t_new - mesh.t) / substeps as f64;
        let mut positions = mesh.vertices.clone();
        for s in 0..substeps {
            let t0 = mesh.t + s as f64 * dt;
            let d0 = surface.at(t0);
            let d1 = surface.at(t0 + 0.5 * dt);
            let d2 = surface.at(t0 + dt);
            for x in positions.iter_mut() {
                let k1 = d0.normal_velocity(*x).unwrap();
                let k2 = d1.normal_velocity(*x + 0.5 * dt * k1).unwrap();
                let k3 = d1.normal_velocity(*x + 0.5 * dt * k2).unwrap();
                let k4 = d2.normal_velocity(*x + dt * k3).unwrap();
                *x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        positions
    }

    #[test]
    fn off_round_trip() {
        let mesh = icosphere(1).unwrap();
        let dir = std::env::temp_dir().join("nschsurf_off_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ico1.off");
        write_off(&mesh, &path).unwrap();
        let back = read_off(&path).unwrap();
        assert_eq!(back.n_vertices(), mesh.n_vertices());
        assert_eq!(back.triangles, mesh.triangles);
        let max: f64 = back
            .vertices
            .iter()
            .zip(&mesh.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert_eq!(max, 0.0, "17-significant-digit serialization round-trips exactly");
    }

    #[test]
    fn off_rejects_malformed() {
        assert!(matches!(parse_off("OFF\n3 1"), Err(MeshError::OffFormat { .. })));
        assert!(matches!(parse_off("PLY\n"), Err(MeshError::OffFormat { .. })));
    }
}
