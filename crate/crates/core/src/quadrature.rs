//! Triangle quadrature rules and cached per-quadrature-point geometry.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{EvolvingSurface, GeomSample};
use crate::mesh::SurfaceMesh;

/// One barycentric quadrature point; weights sum to 1 over the rule.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub w: f64,
}

const fn qp(l0: f64, l1: f64, l2: f64, w: f64) -> QuadPoint {
    QuadPoint { l0, l1, l2, w }
}

/// Dunavant degree-4 rule, 6 points.
pub const DUNAVANT_4: [QuadPoint; 6] = {
    const A1: f64 = 0.108103018168070;
    const B1: f64 = 0.445948490915965;
    const W1: f64 = 0.223381589678011;
    const A2: f64 = 0.816847572980459;
    const B2: f64 = 0.091576213509771;
    const W2: f64 = 0.109951743655322;
    [
        qp(A1, B1, B1, W1),
        qp(B1, A1, B1, W1),
        qp(B1, B1, A1, W1),
        qp(A2, B2, B2, W2),
        qp(B2, A2, B2, W2),
        qp(B2, B2, A2, W2),
    ]
};

/// Dunavant degree-8 rule, 16 points; used for quadrature-saturation checks.
pub const DUNAVANT_8: [QuadPoint; 16] = {
    const W0: f64 = 0.144315607677787;
    const A1: f64 = 0.081414823414554;
    const B1: f64 = 0.459292588292723;
    const W1: f64 = 0.095091634413923;
    const A2: f64 = 0.658861384496480;
    const B2: f64 = 0.170569307751760;
    const W2: f64 = 0.103217370534718;
    const A3: f64 = 0.898905543365938;
    const B3: f64 = 0.050547228317031;
    const W3: f64 = 0.032458497623198;
    const A4: f64 = 0.008394777409958;
    const B4: f64 = 0.263112829634638;
    const C4: f64 = 0.728492392955404;
    const W4: f64 = 0.027230314174435;
    [
        qp(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, W0),
        qp(A1, B1, B1, W1),
        qp(B1, A1, B1, W1),
        qp(B1, B1, A1, W1),
        qp(A2, B2, B2, W2),
        qp(B2, A2, B2, W2),
        qp(B2, B2, A2, W2),
        qp(A3, B3, B3, W3),
        qp(B3, A3, B3, W3),
        qp(B3, B3, A3, W3),
        qp(A4, B4, C4, W4),
        qp(A4, C4, B4, W4),
        qp(B4, A4, C4, W4),
        qp(B4, C4, A4, W4),
        qp(C4, A4, B4, W4),
        qp(C4, B4, A4, W4),
    ]
};

pub fn tri_area(v0: Vector3<f64>, v1: Vector3<f64>, v2: Vector3<f64>) -> f64 {
    0.5 * (v1 - v0).cross(&(v2 - v0)).norm()
}

pub fn tri_normal(v0: Vector3<f64>, v1: Vector3<f64>, v2: Vector3<f64>) -> Vector3<f64> {
    let n = (v1 - v0).cross(&(v2 - v0));
    n / n.norm()
}

/// Geometry cached at one quadrature point of one element.
#[derive(Debug, Clone)]
pub struct QpGeom {
    /// Point on the flat triangle.
    pub x_flat: Vector3<f64>,
    /// Closest-point lift onto `Γ(t)`.
    pub x_lift: Vector3<f64>,
    /// Analytic sample at the lifted point.
    pub sample: GeomSample,
    /// Quadrature weight already scaled by the flat-element area.
    pub weight: f64,
    /// dA_Γ / dA_h at this point.
    pub lift_jacobian: f64,
}

/// Per-element flat geometry plus lifted samples at each quadrature point.
#[derive(Debug, Clone)]
pub struct ElemGeom {
    pub area: f64,
    pub normal: Vector3<f64>,
    /// In-plane gradients of the three barycentric coordinates.
    pub grad_lambda: [Vector3<f64>; 3],
    pub qps: Vec<QpGeom>,
}

/// Cached geometric tables for one `(mesh, surface, t)` triple.
#[derive(Debug)]
pub struct GeomTables {
    pub t: f64,
    pub mesh_id: u64,
    pub elems: Vec<ElemGeom>,
    /// Analytic V_N at each quadrature point (elements × rule length),
    /// overridable for synthetic-coefficient experiments.
    pub vn: Vec<f64>,
}

impl GeomTables {
    pub fn build(mesh: &SurfaceMesh, surface: &EvolvingSurface, t: f64) -> Self {
        let data = surface.at(t);
        let elems = crate::exec::map_indexed(mesh.triangles.len(), |e| {
            let [i, j, k] = mesh.triangles[e];
            build_elem(mesh.vertices[i], mesh.vertices[j], mesh.vertices[k], &data)
        });
        let vn = elems
            .iter()
            .flat_map(|el| el.qps.iter().map(|q| q.sample.normal_speed))
            .collect();
        GeomTables { t, mesh_id: mesh.id, elems, vn }
    }

    /// Replaces the cached V_N samples by a synthetic field of the lifted point.
    pub fn override_vn<F: Fn(Vector3<f64>) -> f64>(&mut self, f: F) {
        let mut idx = 0;
        for el in &self.elems {
            for q in &el.qps {
                self.vn[idx] = f(q.x_lift);
                idx += 1;
            }
        }
    }

    pub fn nq(&self) -> usize {
        DUNAVANT_4.len()
    }

    pub fn vn_at(&self, elem: usize, q: usize) -> f64 {
        self.vn[elem * self.nq() + q]
    }
}

fn build_elem(
    v0: Vector3<f64>,
    v1: Vector3<f64>,
    v2: Vector3<f64>,
    data: &crate::geometry::SurfaceData,
) -> ElemGeom {
    let area = tri_area(v0, v1, v2);
    let normal = tri_normal(v0, v1, v2);
    let grad_lambda = barycentric_gradients(v0, v1, v2, normal, area);
    let qps = DUNAVANT_4
        .iter()
        .map(|qp| {
            let x = qp.l0 * v0 + qp.l1 * v1 + qp.l2 * v2;
            let y = data.closest_point(x).expect("quadrature point outside tube");
            let sample = data.sample(y).expect("degenerate sample at lifted point");
            let d = (x - y).dot(&sample.nu);
            let lift_jacobian = sample.nu.dot(&normal)
                / (1.0 + d * sample.mean_curv + d * d * sample.gauss_curv);
            QpGeom { x_flat: x, x_lift: y, sample, weight: qp.w * area, lift_jacobian }
        })
        .collect();
    ElemGeom { area, normal, grad_lambda, qps }
}

/// In-plane gradients of the barycentric coordinates of a flat triangle.
pub fn barycentric_gradients(
    v0: Vector3<f64>,
    v1: Vector3<f64>,
    v2: Vector3<f64>,
    normal: Vector3<f64>,
    area: f64,
) -> [Vector3<f64>; 3] {
    // ∇λ_i is perpendicular to the opposite edge, points toward vertex i, and
    // has magnitude 1/height.
    let g0 = normal.cross(&(v2 - v1)) / (2.0 * area);
    let g1 = normal.cross(&(v0 - v2)) / (2.0 * area);
    let g2 = normal.cross(&(v1 - v0)) / (2.0 * area);
    [g0, g1, g2]
}

/// Tangential projector of the flat element.
pub fn elem_projector(normal: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - normal * normal.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_are_normalized_and_exact() {
        let sum4: f64 = DUNAVANT_4.iter().map(|q| q.w).sum();
        assert!((sum4 - 1.0).abs() < 1e-14);
        // The published degree-8 constants are rounded to 15 digits.
        let sum8: f64 = DUNAVANT_8.iter().map(|q| q.w).sum();
        assert!((sum8 - 1.0).abs() < 1e-9);
        // Degree-4 exactness on λ0^4 over the reference triangle:
        // ∫ λ0^4 = 2A · 4!·0!·0!/(4+0+0+2)! = A/15 with A the area.
        let v0 = Vector3::new(0.0, 0.0, 0.0);
        let v1 = Vector3::new(1.0, 0.0, 0.0);
        let v2 = Vector3::new(0.0, 1.0, 0.0);
        let area = tri_area(v0, v1, v2);
        let quad: f64 = DUNAVANT_4.iter().map(|q| q.w * area * q.l0.powi(4)).sum();
        assert!((quad - area / 15.0).abs() < 1e-14);
    }

    #[test]
    fn barycentric_gradients_interpolate_linears() {
        let v0 = Vector3::new(0.1, -0.2, 0.3);
        let v1 = Vector3::new(1.0, 0.1, 0.4);
        let v2 = Vector3::new(0.2, 0.9, -0.1);
        let n = tri_normal(v0, v1, v2);
        let a = tri_area(v0, v1, v2);
        let g = barycentric_gradients(v0, v1, v2, n, a);
        // ∇λ_i · (v_j − v_0) must reproduce the Kronecker pattern.
        for (i, gi) in g.iter().enumerate() {
            for (j, vj) in [v0, v1, v2].iter().enumerate() {
                let val = gi.dot(&(*vj - v0)) + if i == 0 { 1.0 } else { 0.0 };
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((val - expect).abs() < 1e-12, "i={i} j={j}");
            }
        }
        assert!((g[0] + g[1] + g[2]).norm() < 1e-12);
    }
}
