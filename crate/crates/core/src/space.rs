//! P1/P2 scalar and tangential-vector finite element spaces.
//!
//! Vector spaces store three components per geometric node; tangentiality is a
//! nodal constraint `v(node)·ν(node) = 0` against the analytic normal at the
//! lifted node, imposed through the projector machinery in [`crate::forms`]
//! and re-applied after every solve.

use std::sync::Arc;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::EvolvingSurface;
use crate::mesh::SurfaceMesh;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("spaces live on different meshes (ids {0} and {1})")]
    MeshMismatch(u64, u64),
    #[error("coefficient length {got} does not match dof count {want}")]
    DofMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    P1Scalar,
    P2Scalar,
    P1Vector,
    P2Vector,
}

impl Family {
    pub fn is_vector(self) -> bool {
        matches!(self, Family::P1Vector | Family::P2Vector)
    }

    pub fn is_quadratic(self) -> bool {
        matches!(self, Family::P2Scalar | Family::P2Vector)
    }
}

/// Finite element space over one mesh snapshot.
#[derive(Debug)]
pub struct FeSpace {
    pub family: Family,
    pub mesh: Arc<SurfaceMesh>,
    /// Geometric node positions: vertices, then edge midpoints for P2.
    pub nodes: Vec<Vector3<f64>>,
    /// Analytic outer normal at the lift of each node.
    pub node_normals: Vec<Vector3<f64>>,
    /// Global edge list (P2 only; empty for P1).
    pub edges: Vec<[usize; 2]>,
    /// Per-triangle edge-node indices into `nodes` (local nodes 3, 4, 5 =
    /// midpoints of edges (1,2), (2,0), (0,1)).
    pub tri_edge_nodes: Vec<[usize; 3]>,
}

impl FeSpace {
    pub fn new(mesh: Arc<SurfaceMesh>, surface: &EvolvingSurface, family: Family) -> Self {
        let data = surface.at(mesh.t);
        let mut nodes = mesh.vertices.clone();
        let mut edges = Vec::new();
        let mut tri_edge_nodes = Vec::new();
        if family.is_quadratic() {
            let mut edge_map = std::collections::HashMap::new();
            for tri in &mesh.triangles {
                let mut locals = [0usize; 3];
                for (k, (a, b)) in [(tri[1], tri[2]), (tri[2], tri[0]), (tri[0], tri[1])]
                    .into_iter()
                    .enumerate()
                {
                    let key = (a.min(b), a.max(b));
                    let idx = *edge_map.entry(key).or_insert_with(|| {
                        edges.push([key.0, key.1]);
                        nodes.push(0.5 * (mesh.vertices[a] + mesh.vertices[b]));
                        nodes.len() - 1
                    });
                    locals[k] = idx;
                }
                tri_edge_nodes.push(locals);
            }
        }
        let node_normals = crate::exec::map_indexed(nodes.len(), |i| {
            let lifted = data
                .closest_point(nodes[i])
                .expect("node lift failed while building space");
            data.sample(lifted).expect("degenerate node normal").nu
        });
        FeSpace { family, mesh, nodes, node_normals, edges, tri_edge_nodes }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn ndof(&self) -> usize {
        if self.family.is_vector() { 3 * self.n_nodes() } else { self.n_nodes() }
    }

    pub fn nodes_per_elem(&self) -> usize {
        if self.family.is_quadratic() { 6 } else { 3 }
    }

    /// Global node indices of element `e`.
    pub fn elem_nodes(&self, e: usize) -> [usize; 6] {
        let tri = self.mesh.triangles[e];
        let mut out = [tri[0], tri[1], tri[2], usize::MAX, usize::MAX, usize::MAX];
        if self.family.is_quadratic() {
            let en = self.tri_edge_nodes[e];
            out[3] = en[0];
            out[4] = en[1];
            out[5] = en[2];
        }
        out
    }

    /// Shape function values at a barycentric point.
    pub fn shape_values(&self, l: [f64; 3]) -> [f64; 6] {
        if self.family.is_quadratic() {
            [
                l[0] * (2.0 * l[0] - 1.0),
                l[1] * (2.0 * l[1] - 1.0),
                l[2] * (2.0 * l[2] - 1.0),
                4.0 * l[1] * l[2],
                4.0 * l[2] * l[0],
                4.0 * l[0] * l[1],
            ]
        } else {
            [l[0], l[1], l[2], 0.0, 0.0, 0.0]
        }
    }

    /// In-plane shape gradients at a barycentric point given the element's
    /// barycentric gradients.
    pub fn shape_gradients(&self, l: [f64; 3], gl: &[Vector3<f64>; 3]) -> [Vector3<f64>; 6] {
        if self.family.is_quadratic() {
            [
                (4.0 * l[0] - 1.0) * gl[0],
                (4.0 * l[1] - 1.0) * gl[1],
                (4.0 * l[2] - 1.0) * gl[2],
                4.0 * (l[1] * gl[2] + l[2] * gl[1]),
                4.0 * (l[2] * gl[0] + l[0] * gl[2]),
                4.0 * (l[0] * gl[1] + l[1] * gl[0]),
            ]
        } else {
            [gl[0], gl[1], gl[2], Vector3::zeros(), Vector3::zeros(), Vector3::zeros()]
        }
    }

    pub fn check_same_mesh(&self, other: &FeSpace) -> Result<(), SpaceError> {
        if self.mesh.id != other.mesh.id {
            return Err(SpaceError::MeshMismatch(self.mesh.id, other.mesh.id));
        }
        Ok(())
    }
}

/// Coefficient vector over an [`FeSpace`].
#[derive(Debug, Clone)]
pub struct FeFunction {
    pub space: Arc<FeSpace>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn zero(space: Arc<FeSpace>) -> Self {
        let n = space.ndof();
        FeFunction { space, coeffs: vec![0.0; n] }
    }

    pub fn from_coeffs(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self, SpaceError> {
        if coeffs.len() != space.ndof() {
            return Err(SpaceError::DofMismatch { got: coeffs.len(), want: space.ndof() });
        }
        Ok(FeFunction { space, coeffs })
    }

    /// Nodal interpolation of a scalar function evaluated at the node lifts.
    pub fn interpolate_scalar<F: Fn(Vector3<f64>) -> f64>(space: Arc<FeSpace>, f: F) -> Self {
        assert!(!space.family.is_vector());
        let coeffs = space.nodes.iter().map(|p| f(*p)).collect();
        FeFunction { space, coeffs }
    }

    /// Nodal interpolation of a vector function with tangential projection
    /// at every node.
    pub fn interpolate_vector<F: Fn(Vector3<f64>) -> Vector3<f64>>(
        space: Arc<FeSpace>,
        f: F,
    ) -> Self {
        assert!(space.family.is_vector());
        let mut coeffs = vec![0.0; space.ndof()];
        for (i, p) in space.nodes.iter().enumerate() {
            let nu = space.node_normals[i];
            let v = f(*p);
            let vt = v - nu.dot(&v) * nu;
            coeffs[3 * i] = vt.x;
            coeffs[3 * i + 1] = vt.y;
            coeffs[3 * i + 2] = vt.z;
        }
        FeFunction { space, coeffs }
    }

    pub fn node_value(&self, node: usize) -> Vector3<f64> {
        Vector3::new(self.coeffs[3 * node], self.coeffs[3 * node + 1], self.coeffs[3 * node + 2])
    }

    /// Removes nodal normal components in place.
    pub fn project_tangential(&mut self) {
        assert!(self.space.family.is_vector());
        for i in 0..self.space.n_nodes() {
            let nu = self.space.node_normals[i];
            let v = self.node_value(i);
            let vt = v - nu.dot(&v) * nu;
            self.coeffs[3 * i] = vt.x;
            self.coeffs[3 * i + 1] = vt.y;
            self.coeffs[3 * i + 2] = vt.z;
        }
    }

    /// Largest |v(node)·ν(node)| over the nodes.
    pub fn max_normal_component(&self) -> f64 {
        (0..self.space.n_nodes())
            .map(|i| self.space.node_normals[i].dot(&self.node_value(i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn p2_dof_count_is_vertices_plus_edges() {
        let mesh = Arc::new(icosphere(2).unwrap());
        let surf = EvolvingSurface::Sphere { radius: 1.0 };
        let s1 = FeSpace::new(mesh.clone(), &surf, Family::P1Scalar);
        let s2 = FeSpace::new(mesh.clone(), &surf, Family::P2Scalar);
        assert_eq!(s1.ndof(), mesh.n_vertices());
        assert_eq!(s2.ndof(), mesh.n_vertices() + mesh.n_edges());
        let v2 = FeSpace::new(mesh.clone(), &surf, Family::P2Vector);
        assert_eq!(v2.ndof(), 3 * (mesh.n_vertices() + mesh.n_edges()));
    }

    #[test]
    fn shape_functions_partition_unity() {
        let mesh = Arc::new(icosphere(0).unwrap());
        let surf = EvolvingSurface::Sphere { radius: 1.0 };
        for fam in [Family::P1Scalar, Family::P2Scalar] {
            let s = FeSpace::new(mesh.clone(), &surf, fam);
            let vals = s.shape_values([0.3, 0.5, 0.2]);
            let sum: f64 = vals.iter().take(s.nodes_per_elem()).sum();
            assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolated_vector_is_nodally_tangential() {
        let mesh = Arc::new(icosphere(2).unwrap());
        let surf = EvolvingSurface::Sphere { radius: 1.0 };
        let v = FeSpace::new(mesh, &surf, Family::P1Vector);
        let f = FeFunction::interpolate_vector(Arc::new(v), |p| {
            Vector3::new(1.0, p.z, -p.x)
        });
        assert!(f.max_normal_component() < 1e-12);
    }
}
