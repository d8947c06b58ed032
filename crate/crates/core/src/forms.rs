//! Assembly of the mass, stiffness, strain, transport and coupling forms.
//!
//! Integration runs over the flat triangles with the degree-4 Dunavant rule;
//! differential operators are intrinsic to the polyhedral surface (flat
//! element projectors), while coefficient functions (V_N, H, ℍ, ν) are
//! evaluated analytically at the lifted quadrature points. Local element
//! matrices are computed in parallel and scattered serially in element order,
//! so assembly is deterministic independent of thread count.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::quadrature::{GeomTables, DUNAVANT_4};
use crate::space::{FeFunction, FeSpace};
use crate::sparse::{Coo, Csr};

#[derive(Debug, Error)]
pub enum FormsError {
    #[error("space and tables live on different meshes")]
    MeshMismatch,
    #[error("viscosity coefficient is not uniformly positive (min nodal value {0:.3e})")]
    ViscosityNonPositive(f64),
}

/// Tags naming the assembled bilinear forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormTag {
    Mass,
    Stiffness,
    VecMass,
    VecStrain,
    WeightedStrain,
    Convection,
    SkewConvection,
    CurvatureDrag,
    CorrectionDrag,
    CorrectionStrain,
    TransportB,
    Divergence,
    DivTransport,
    ScalarTransport,
    WeightedMass,
}

impl FormTag {
    fn symmetric(self) -> bool {
        matches!(
            self,
            FormTag::Mass
                | FormTag::Stiffness
                | FormTag::VecMass
                | FormTag::VecStrain
                | FormTag::WeightedStrain
                | FormTag::TransportB
                | FormTag::WeightedMass
        )
    }
}

/// Sparse matrix with its form tag and assembly time.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub matrix: Csr,
    pub tag: FormTag,
    pub t: f64,
}

impl AssembledForm {
    fn new(matrix: Csr, tag: FormTag, t: f64) -> Self {
        if tag.symmetric() {
            debug_assert!(matrix.max_asymmetry() <= 1e-13, "asymmetric {tag:?}");
        }
        AssembledForm { matrix, tag, t }
    }
}

fn check_mesh(space: &FeSpace, tables: &GeomTables) -> Result<(), FormsError> {
    if space.mesh.id != tables.mesh_id {
        return Err(FormsError::MeshMismatch);
    }
    Ok(())
}

// ------------------------------------------------------------------
// local-to-global scatter
// ------------------------------------------------------------------

struct LocalBlock {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Row-major rows×cols values.
    vals: Vec<f64>,
}

fn scatter(nrows: usize, ncols: usize, blocks: Vec<LocalBlock>) -> Csr {
    let mut coo = Coo::new(nrows, ncols);
    for b in blocks {
        for (r, &i) in b.rows.iter().enumerate() {
            for (c, &j) in b.cols.iter().enumerate() {
                coo.add(i, j, b.vals[r * b.cols.len() + c]);
            }
        }
    }
    coo.to_csr()
}

fn scalar_dofs(space: &FeSpace, e: usize) -> Vec<usize> {
    let nodes = space.elem_nodes(e);
    nodes[..space.nodes_per_elem()].to_vec()
}

fn vector_dofs(space: &FeSpace, e: usize) -> Vec<usize> {
    let nodes = space.elem_nodes(e);
    let mut out = Vec::with_capacity(3 * space.nodes_per_elem());
    for &n in &nodes[..space.nodes_per_elem()] {
        out.extend_from_slice(&[3 * n, 3 * n + 1, 3 * n + 2]);
    }
    out
}

// ------------------------------------------------------------------
// field samples at quadrature points
// ------------------------------------------------------------------

/// Scalar FE field cached at every quadrature point.
pub struct ScalarSamples {
    pub value: Vec<f64>,
    pub grad: Vec<Vector3<f64>>,
}

pub fn sample_scalar(f: &FeFunction, tables: &GeomTables) -> ScalarSamples {
    let space = &f.space;
    let nq = tables.nq();
    let per_elem = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let nodes = space.elem_nodes(e);
        let np = space.nodes_per_elem();
        let mut vals = Vec::with_capacity(nq);
        let mut grads = Vec::with_capacity(nq);
        for qp in DUNAVANT_4 {
            let l = [qp.l0, qp.l1, qp.l2];
            let sv = space.shape_values(l);
            let sg = space.shape_gradients(l, &el.grad_lambda);
            let mut v = 0.0;
            let mut g = Vector3::zeros();
            for k in 0..np {
                v += f.coeffs[nodes[k]] * sv[k];
                g += f.coeffs[nodes[k]] * sg[k];
            }
            vals.push(v);
            grads.push(g);
        }
        (vals, grads)
    });
    let mut value = Vec::with_capacity(tables.elems.len() * nq);
    let mut grad = Vec::with_capacity(tables.elems.len() * nq);
    for (v, g) in per_elem {
        value.extend(v);
        grad.extend(g);
    }
    ScalarSamples { value, grad }
}

/// Vector FE field cached at every quadrature point; the gradient is the
/// two-side projected surface gradient `P ∇u P` of the flat element.
pub struct VectorSamples {
    pub value: Vec<Vector3<f64>>,
    pub grad: Vec<Matrix3<f64>>,
}

pub fn sample_vector(f: &FeFunction, tables: &GeomTables) -> VectorSamples {
    let space = &f.space;
    let nq = tables.nq();
    let per_elem = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let proj = crate::quadrature::elem_projector(el.normal);
        let nodes = space.elem_nodes(e);
        let np = space.nodes_per_elem();
        let mut vals = Vec::with_capacity(nq);
        let mut grads = Vec::with_capacity(nq);
        for qp in DUNAVANT_4 {
            let l = [qp.l0, qp.l1, qp.l2];
            let sv = space.shape_values(l);
            let sg = space.shape_gradients(l, &el.grad_lambda);
            let mut v = Vector3::zeros();
            let mut g = Matrix3::zeros();
            for k in 0..np {
                let vn = f.node_value(nodes[k]);
                v += sv[k] * vn;
                g += vn * sg[k].transpose();
            }
            vals.push(v);
            grads.push(proj * g * proj);
        }
        (vals, grads)
    });
    let mut value = Vec::with_capacity(tables.elems.len() * nq);
    let mut grad = Vec::with_capacity(tables.elems.len() * nq);
    for (v, g) in per_elem {
        value.extend(v);
        grad.extend(g);
    }
    VectorSamples { value, grad }
}

/// Symmetrized surface rate-of-strain of a sampled gradient.
pub fn strain_of(grad: &Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (grad + grad.transpose())
}

// ------------------------------------------------------------------
// scalar forms
// ------------------------------------------------------------------

/// m(φ, ψ) = ∫ φψ.
pub fn assemble_m(space: &FeSpace, tables: &GeomTables) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np * np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            for i in 0..np {
                for j in 0..np {
                    vals[i * np + j] += w * sv[i] * sv[j];
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::Mass, tables.t))
}

/// a(φ, ψ) = ∫ ∇_Γφ·∇_Γψ.
pub fn assemble_a(space: &FeSpace, tables: &GeomTables) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np * np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let sg = space.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            for i in 0..np {
                for j in 0..np {
                    vals[i * np + j] += w * sg[i].dot(&sg[j]);
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::Stiffness, tables.t))
}

/// Mass matrix weighted by a per-quadrature-point coefficient,
/// `∫ c(x) φψ`; used for `m(φ, ψ H V_N)` and the potential Jacobian.
pub fn assemble_weighted_m(
    space: &FeSpace,
    tables: &GeomTables,
    coeff: &[f64],
) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let nq = tables.nq();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np * np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight * coeff[e * nq + q];
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            for i in 0..np {
                for j in 0..np {
                    vals[i * np + j] += w * sv[i] * sv[j];
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::WeightedMass, tables.t))
}

/// b(φ, ψ) = ∫ V_N (H·I − 2ℍ) ∇_Γφ · ∇_Γψ (transport-theorem form for `a`).
pub fn assemble_b(space: &FeSpace, tables: &GeomTables) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np * np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let g = &el.qps[q];
            let vn = tables.vn_at(e, q);
            if vn == 0.0 {
                continue;
            }
            let coeff = vn
                * (g.sample.mean_curv * Matrix3::identity() - 2.0 * g.sample.shape_op);
            let sg = space.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            for i in 0..np {
                let ci = coeff * sg[i];
                for j in 0..np {
                    // symmetrized: the analytic integrand is symmetric
                    vals[i * np + j] += 0.5 * g.weight * (ci.dot(&sg[j]) + (coeff * sg[j]).dot(&sg[i]));
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::TransportB, tables.t))
}

/// Load vector `∫ f φ_i` for a pointwise source evaluated at the lifted
/// quadrature points.
pub fn assemble_scalar_source<F: Fn(Vector3<f64>) -> f64 + Sync>(
    space: &FeSpace,
    tables: &GeomTables,
    f: F,
) -> Vec<f64> {
    let mut out = vec![0.0; space.ndof()];
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight * f(el.qps[q].x_lift);
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            for i in 0..np {
                vals[i] += w * sv[i];
            }
        }
        (dofs, vals)
    });
    for (dofs, vals) in blocks {
        for (d, v) in dofs.iter().zip(vals) {
            out[*d] += v;
        }
    }
    out
}

/// Load vector from per-quadrature-point values (already including any
/// coefficient fields).
pub fn assemble_scalar_source_qp(space: &FeSpace, tables: &GeomTables, qp_vals: &[f64]) -> Vec<f64> {
    let nq = tables.nq();
    let mut out = vec![0.0; space.ndof()];
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight * qp_vals[e * nq + q];
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            for i in 0..np {
                vals[i] += w * sv[i];
            }
        }
        (dofs, vals)
    });
    for (dofs, vals) in blocks {
        for (d, v) in dofs.iter().zip(vals) {
            out[*d] += v;
        }
    }
    out
}

// ------------------------------------------------------------------
// vector forms
// ------------------------------------------------------------------

/// 𝐦(φ, ψ) = ∫ φ·ψ.
pub fn assemble_vec_m(space: &FeSpace, tables: &GeomTables) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = vector_dofs(space, e);
        let np = space.nodes_per_elem();
        let nd = dofs.len();
        let mut vals = vec![0.0; nd * nd];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            for i in 0..np {
                for j in 0..np {
                    let m = w * sv[i] * sv[j];
                    for a in 0..3 {
                        vals[(3 * i + a) * nd + 3 * j + a] += m;
                    }
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::VecMass, tables.t))
}

/// 𝐚(φ, ψ) = 2∫ E(φ):E(ψ) with the flat-element strain operator.
pub fn assemble_vec_a(space: &FeSpace, tables: &GeomTables) -> Result<AssembledForm, FormsError> {
    assemble_strain_weighted(space, tables, None)
}

/// â(η; φ, ψ) = 2∫ η E(φ):E(ψ) with the coefficient frozen at quadrature points.
pub fn assemble_a_hat(
    eta: &FeFunction,
    space: &FeSpace,
    tables: &GeomTables,
) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let min = eta.coeffs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(FormsError::ViscosityNonPositive(min));
    }
    let samples = sample_scalar(eta, tables);
    assemble_strain_weighted(space, tables, Some(&samples.value))
}

fn assemble_strain_weighted(
    space: &FeSpace,
    tables: &GeomTables,
    weight_qp: Option<&[f64]>,
) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let nq = tables.nq();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let proj = crate::quadrature::elem_projector(el.normal);
        let dofs = vector_dofs(space, e);
        let np = space.nodes_per_elem();
        let nd = dofs.len();
        let mut vals = vec![0.0; nd * nd];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let mut w = el.qps[q].weight;
            if let Some(c) = weight_qp {
                w *= c[e * nq + q];
            }
            let sg = space.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            // For basis e_a N_i: 2 E_i:E_j = P_ab (g_i·g_j) + g_j[a] g_i[b].
            for i in 0..np {
                for j in 0..np {
                    let gg = sg[i].dot(&sg[j]);
                    for a in 0..3 {
                        for b in 0..3 {
                            vals[(3 * i + a) * nd + 3 * j + b] +=
                                w * (proj[(a, b)] * gg + sg[j][a] * sg[i][b]);
                        }
                    }
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    let tag = if weight_qp.is_some() { FormTag::WeightedStrain } else { FormTag::VecStrain };
    Ok(AssembledForm::new(scatter(n, n, blocks), tag, tables.t))
}

/// Which argument of 𝐜₁(φ, ψ, χ) = ∫ (∇_Γφ)ψ·χ is frozen to a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrozenSlot {
    /// Field in the first (differentiated) slot; unknown in the second.
    First,
    /// Field in the second (advecting) slot; unknown in the first.
    Second,
}

/// Matrix of 𝐜₁ with one slot frozen; rows test χ, columns the unknown.
pub fn assemble_c1_matrix(
    space: &FeSpace,
    tables: &GeomTables,
    field: &FeFunction,
    frozen: FrozenSlot,
) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    space.check_same_mesh(&field.space).map_err(|_| FormsError::MeshMismatch)?;
    let n = space.ndof();
    let nq = tables.nq();
    let samples = sample_vector(field, tables);
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let proj = crate::quadrature::elem_projector(el.normal);
        let dofs = vector_dofs(space, e);
        let np = space.nodes_per_elem();
        let nd = dofs.len();
        let mut vals = vec![0.0; nd * nd];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            let sg = space.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            match frozen {
                FrozenSlot::Second => {
                    // (∇basis_j) w · basis_i = P_ab (g_j·w) N_i
                    let wq = proj * samples.value[e * nq + q];
                    for i in 0..np {
                        for j in 0..np {
                            let c = w * sv[i] * sg[j].dot(&wq);
                            for a in 0..3 {
                                for b in 0..3 {
                                    vals[(3 * i + a) * nd + 3 * j + b] += c * proj[(a, b)];
                                }
                            }
                        }
                    }
                }
                FrozenSlot::First => {
                    // (∇w) basis_j · basis_i = N_i N_j (∇w)[a, b]
                    let gw = samples.grad[e * nq + q];
                    for i in 0..np {
                        for j in 0..np {
                            let c = w * sv[i] * sv[j];
                            for a in 0..3 {
                                for b in 0..3 {
                                    vals[(3 * i + a) * nd + 3 * j + b] += c * gw[(a, b)];
                                }
                            }
                        }
                    }
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::Convection, tables.t))
}

/// Skew-symmetrized convection with the divergence-constraint correction:
/// ½[𝐜₁(·, w, χ) − 𝐜₁(χ, w, ·)] − ½ m((·)·χ, H V_N).
/// Vanishes identically on the diagonal when V_N ≡ 0, which is what the
/// discrete kinetic-energy budget requires.
pub fn assemble_c1_skew(
    space: &FeSpace,
    tables: &GeomTables,
    field: &FeFunction,
) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let nq = tables.nq();
    let samples = sample_vector(field, tables);
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let proj = crate::quadrature::elem_projector(el.normal);
        let dofs = vector_dofs(space, e);
        let np = space.nodes_per_elem();
        let nd = dofs.len();
        let mut vals = vec![0.0; nd * nd];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            let sg = space.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            let wq = proj * samples.value[e * nq + q];
            let hvn = el.qps[q].sample.mean_curv * tables.vn_at(e, q);
            for i in 0..np {
                for j in 0..np {
                    let skew = 0.5 * w * (sv[i] * sg[j].dot(&wq) - sv[j] * sg[i].dot(&wq));
                    let dil = -0.5 * w * hvn * sv[i] * sv[j];
                    for a in 0..3 {
                        vals[(3 * i + a) * nd + 3 * j + a] += dil;
                        for b in 0..3 {
                            vals[(3 * i + a) * nd + 3 * j + b] += skew * proj[(a, b)];
                        }
                    }
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::SkewConvection, tables.t))
}

/// 𝐥(φ, ψ) = 𝐦(V_N ℍ φ, ψ).
pub fn assemble_l(space: &FeSpace, tables: &GeomTables) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let n = space.ndof();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = vector_dofs(space, e);
        let np = space.nodes_per_elem();
        let nd = dofs.len();
        let mut vals = vec![0.0; nd * nd];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let vn = tables.vn_at(e, q);
            if vn == 0.0 {
                continue;
            }
            let w = el.qps[q].weight * vn;
            let shape_op = el.qps[q].sample.shape_op;
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            for i in 0..np {
                for j in 0..np {
                    let c = w * sv[i] * sv[j];
                    for a in 0..3 {
                        for b in 0..3 {
                            vals[(3 * i + a) * nd + 3 * j + b] += c * shape_op[(a, b)];
                        }
                    }
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::CurvatureDrag, tables.t))
}

/// 𝐝₁(φ, ψ) = 𝐜₁(φ, ũ_T, ψ) + 𝐜₁(ũ_T, φ, ψ).
pub fn assemble_d1(
    space: &FeSpace,
    tables: &GeomTables,
    utilde: &FeFunction,
) -> Result<AssembledForm, FormsError> {
    let first = assemble_c1_matrix(space, tables, utilde, FrozenSlot::Second)?;
    let second = assemble_c1_matrix(space, tables, utilde, FrozenSlot::First)?;
    Ok(AssembledForm {
        matrix: first.matrix.add_scaled(&second.matrix, 1.0),
        tag: FormTag::CorrectionDrag,
        t: tables.t,
    })
}

/// 𝐝₂(φ, ψ) = â(φ, ũ_T, ψ): rows test the vector slot ψ, columns the scalar
/// coefficient slot φ.
pub fn assemble_d2(
    vspace: &FeSpace,
    sspace: &FeSpace,
    tables: &GeomTables,
    utilde: &FeFunction,
) -> Result<Csr, FormsError> {
    check_mesh(vspace, tables)?;
    vspace.check_same_mesh(sspace).map_err(|_| FormsError::MeshMismatch)?;
    let samples = sample_vector(utilde, tables);
    let nq = tables.nq();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let proj = crate::quadrature::elem_projector(el.normal);
        let vdofs = vector_dofs(vspace, e);
        let sdofs = scalar_dofs(sspace, e);
        let npv = vspace.nodes_per_elem();
        let nps = sdofs.len();
        let mut vals = vec![0.0; vdofs.len() * nps];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let e_u = strain_of(&samples.grad[e * nq + q]);
            let svv = vspace.shape_values([qp.l0, qp.l1, qp.l2]);
            let _ = svv;
            let sgv = vspace.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            let svs = sspace.shape_values([qp.l0, qp.l1, qp.l2]);
            for i in 0..npv {
                let eg = e_u * sgv[i];
                let peg = proj * eg;
                for j in 0..nps {
                    let c = 2.0 * w * svs[j];
                    for a in 0..3 {
                        vals[(3 * i + a) * nps + j] += c * peg[a];
                    }
                }
            }
        }
        LocalBlock { rows: vdofs, cols: sdofs, vals }
    });
    Ok(scatter(vspace.ndof(), sspace.ndof(), blocks))
}

/// Divergence coupling: B[q, u] = ∫ q ∇_Γ·u.
pub fn assemble_divergence(
    vspace: &FeSpace,
    qspace: &FeSpace,
    tables: &GeomTables,
) -> Result<AssembledForm, FormsError> {
    check_mesh(vspace, tables)?;
    vspace.check_same_mesh(qspace).map_err(|_| FormsError::MeshMismatch)?;
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let proj = crate::quadrature::elem_projector(el.normal);
        let vdofs = vector_dofs(vspace, e);
        let qdofs = scalar_dofs(qspace, e);
        let npv = vspace.nodes_per_elem();
        let npq = qdofs.len();
        let mut vals = vec![0.0; npq * vdofs.len()];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let svq = qspace.shape_values([qp.l0, qp.l1, qp.l2]);
            let sgv = vspace.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            for i in 0..npq {
                for j in 0..npv {
                    // div(e_b N_j) = ∇N_j · (P e_b)
                    let pg = proj * sgv[j];
                    let c = w * svq[i];
                    for b in 0..3 {
                        vals[i * vdofs.len() + 3 * j + b] += c * pg[b];
                    }
                }
            }
        }
        LocalBlock { rows: qdofs, cols: vdofs, vals }
    });
    Ok(AssembledForm::new(
        scatter(qspace.ndof(), vspace.ndof(), blocks),
        FormTag::Divergence,
        tables.t,
    ))
}

/// Conservative transport matrix for the phase equation:
/// D[χ, φ] = −∫ φ u·∇_Γχ. Annihilates constant test functions exactly,
/// which is what makes the scheme conserve mass to machine precision.
pub fn assemble_div_transport(
    space: &FeSpace,
    tables: &GeomTables,
    velocity: &FeFunction,
) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let samples = sample_vector(velocity, tables);
    let nq = tables.nq();
    let n = space.ndof();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np * np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let u = samples.value[e * nq + q];
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            let sg = space.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            for i in 0..np {
                let adv = sg[i].dot(&u);
                for j in 0..np {
                    vals[i * np + j] -= w * sv[j] * adv;
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::DivTransport, tables.t))
}

/// 𝐜₂ matrix for the phase equation: K[χ, φ] = ∫ χ ∇_Γφ · u.
pub fn assemble_c2_matrix(
    space: &FeSpace,
    tables: &GeomTables,
    velocity: &FeFunction,
) -> Result<AssembledForm, FormsError> {
    check_mesh(space, tables)?;
    let samples = sample_vector(velocity, tables);
    let nq = tables.nq();
    let n = space.ndof();
    let blocks = crate::exec::map_indexed(tables.elems.len(), |e| {
        let el = &tables.elems[e];
        let dofs = scalar_dofs(space, e);
        let np = dofs.len();
        let mut vals = vec![0.0; np * np];
        for (q, qp) in DUNAVANT_4.iter().enumerate() {
            let w = el.qps[q].weight;
            let u = samples.value[e * nq + q];
            let sv = space.shape_values([qp.l0, qp.l1, qp.l2]);
            let sg = space.shape_gradients([qp.l0, qp.l1, qp.l2], &el.grad_lambda);
            for i in 0..np {
                for j in 0..np {
                    vals[i * np + j] += w * sv[i] * sg[j].dot(&u);
                }
            }
        }
        LocalBlock { rows: dofs.clone(), cols: dofs, vals }
    });
    Ok(AssembledForm::new(scatter(n, n, blocks), FormTag::ScalarTransport, tables.t))
}

// ------------------------------------------------------------------
// trilinear form evaluations
// ------------------------------------------------------------------

/// 𝐜₁(u, v, w) = ∫ (∇_Γu) v · w.
pub fn apply_c1(
    u: &FeFunction,
    v: &FeFunction,
    w: &FeFunction,
    tables: &GeomTables,
) -> f64 {
    let su = sample_vector(u, tables);
    let sv = sample_vector(v, tables);
    let sw = sample_vector(w, tables);
    quad_sum(tables, |idx, g| {
        let gv = su.grad[idx] * sv.value[idx];
        g.weight / g.weight * g.weight * gv.dot(&sw.value[idx])
    })
}

/// 𝐜₂(φ, ψ, χ) = ∫ φ ∇_Γψ · χ.
pub fn apply_c2(
    phi: &FeFunction,
    psi: &FeFunction,
    chi: &FeFunction,
    tables: &GeomTables,
) -> f64 {
    let sp = sample_scalar(phi, tables);
    let ss = sample_scalar(psi, tables);
    let sc = sample_vector(chi, tables);
    quad_sum(tables, |idx, g| g.weight * sp.value[idx] * ss.grad[idx].dot(&sc.value[idx]))
}

/// 𝐜₃(φ, ψ, χ) = ∫ (∇_Γφ ⊗ ∇_Γψ) : ∇_Γχ.
pub fn apply_c3(
    phi: &FeFunction,
    psi: &FeFunction,
    chi: &FeFunction,
    tables: &GeomTables,
) -> f64 {
    let sp = sample_scalar(phi, tables);
    let ss = sample_scalar(psi, tables);
    let sc = sample_vector(chi, tables);
    quad_sum(tables, |idx, g| {
        g.weight * sp.grad[idx].dot(&(sc.grad[idx] * ss.grad[idx]))
    })
}

fn quad_sum<F: Fn(usize, &crate::quadrature::QpGeom) -> f64>(
    tables: &GeomTables,
    f: F,
) -> f64 {
    let nq = tables.nq();
    let mut total = 0.0;
    for (e, el) in tables.elems.iter().enumerate() {
        for (q, g) in el.qps.iter().enumerate() {
            total += f(e * nq + q, g);
        }
    }
    total
}

/// Generic quadrature of a per-point integrand over the flat mesh.
pub fn integrate_qp<F: Fn(usize, &crate::quadrature::QpGeom) -> f64>(
    tables: &GeomTables,
    f: F,
) -> f64 {
    quad_sum(tables, |idx, g| g.weight * f(idx, g))
}

// ------------------------------------------------------------------
// frozen-coefficient finite differences along the mesh motion
// ------------------------------------------------------------------

/// Discrete d/dt of 𝐚(u, v) with coefficients frozen under the normal flow:
/// `[𝐚_{t+dt}(u, v) − 𝐚_{t−dt}(u, v)] / (2 dt)`; the transport theorem
/// identifies the limit with 𝐛(u, v) for fields with vanishing normal
/// material derivative.
pub fn vec_b_finite_difference(
    u: &FeFunction,
    v: &FeFunction,
    mesh: &crate::mesh::SurfaceMesh,
    surface: &crate::geometry::EvolvingSurface,
    dt_fd: f64,
) -> Result<f64, crate::mesh::MeshError> {
    let family = u.space.family;
    let eval = |t: f64| -> Result<f64, crate::mesh::MeshError> {
        let moved = crate::mesh::advect(mesh, surface, t, 4)?;
        let tables = GeomTables::build(&moved, surface, t);
        let space = std::sync::Arc::new(FeSpace::new(std::sync::Arc::new(moved), surface, family));
        let a = assemble_strain_weighted(&space, &tables, None).expect("same mesh");
        Ok(crate::sparse::dot(&u.coeffs, &a.matrix.matvec(&v.coeffs)))
    };
    Ok((eval(mesh.t + dt_fd)? - eval(mesh.t - dt_fd)?) / (2.0 * dt_fd))
}

/// Forward finite difference of m(φ, ψ) with frozen coefficients along the
/// mesh motion; tends to m(φ, ψ H V_N) at first order in `dt_fd`.
pub fn scalar_mass_transport_fd(
    phi: &FeFunction,
    psi: &FeFunction,
    mesh: &crate::mesh::SurfaceMesh,
    surface: &crate::geometry::EvolvingSurface,
    dt_fd: f64,
) -> Result<f64, crate::mesh::MeshError> {
    let family = phi.space.family;
    let eval = |t: f64| -> Result<f64, crate::mesh::MeshError> {
        let moved = crate::mesh::advect(mesh, surface, t, 4)?;
        let tables = GeomTables::build(&moved, surface, t);
        let space = std::sync::Arc::new(FeSpace::new(std::sync::Arc::new(moved), surface, family));
        let m = assemble_m(&space, &tables).expect("same mesh");
        Ok(crate::sparse::dot(&phi.coeffs, &m.matrix.matvec(&psi.coeffs)))
    };
    Ok((eval(mesh.t + dt_fd)? - eval(mesh.t)?) / dt_fd)
}

// ------------------------------------------------------------------
// nodal tangential constraint machinery
// ------------------------------------------------------------------

/// Transforms a vector-space operator K into Π K Π + Σ_i s ν_iν_iᵀ, where Π is
/// the block-diagonal nodal tangential projector and the added normal blocks
/// make the normal components decouple with exact zero solутion under a
/// projected right-hand side.
pub fn constrain_tangential(space: &FeSpace, k: &Csr, normal_scale: f64) -> Csr {
    assert!(space.family.is_vector());
    let nn = space.n_nodes();
    let mut coo = Coo::new(k.nrows, k.ncols);
    for r in 0..k.nrows {
        let (node_i, a) = (r / 3, r % 3);
        let nu_i = space.node_normals[node_i];
        let (cols, vals) = k.row(r);
        for (c, v) in cols.iter().zip(vals) {
            let (node_j, b) = (*c / 3, *c % 3);
            let nu_j = space.node_normals[node_j];
            // (Π K Π)[(i,a'),(j,b')] = P_i[a',a] K P_j[b,b']
            for ap in 0..3 {
                let pia = proj_entry(nu_i, ap, a);
                if pia == 0.0 {
                    continue;
                }
                for bp in 0..3 {
                    let pjb = proj_entry(nu_j, b, bp);
                    if pjb != 0.0 {
                        coo.add(3 * node_i + ap, 3 * node_j + bp, pia * v * pjb);
                    }
                }
            }
        }
    }
    for i in 0..nn {
        let nu = space.node_normals[i];
        for a in 0..3 {
            for b in 0..3 {
                coo.add(3 * i + a, 3 * i + b, normal_scale * nu[a] * nu[b]);
            }
        }
    }
    coo.to_csr()
}

#[inline]
fn proj_entry(nu: Vector3<f64>, a: usize, b: usize) -> f64 {
    (if a == b { 1.0 } else { 0.0 }) - nu[a] * nu[b]
}

/// Right-multiplies a coupling block by the nodal projector: B ← B Π.
pub fn project_columns_tangential(space: &FeSpace, b: &Csr) -> Csr {
    let mut coo = Coo::new(b.nrows, b.ncols);
    for r in 0..b.nrows {
        let (cols, vals) = b.row(r);
        for (c, v) in cols.iter().zip(vals) {
            let (node, a) = (*c / 3, *c % 3);
            let nu = space.node_normals[node];
            for ap in 0..3 {
                let p = proj_entry(nu, a, ap);
                if p != 0.0 {
                    coo.add(r, 3 * node + ap, v * p);
                }
            }
        }
    }
    coo.to_csr()
}

/// Applies the nodal projector to a coefficient or right-hand-side vector.
pub fn project_vector_tangential(space: &FeSpace, v: &mut [f64]) {
    for i in 0..space.n_nodes() {
        let nu = space.node_normals[i];
        let val = Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        let t = val - nu.dot(&val) * nu;
        v[3 * i] = t.x;
        v[3 * i + 1] = t.y;
        v[3 * i + 2] = t.z;
    }
}

/// Lumped mass vector (row sums of the mass matrix).
pub fn lumped_mass(space: &FeSpace, tables: &GeomTables) -> Result<Vec<f64>, FormsError> {
    let m = assemble_m(space, tables)?;
    Ok((0..m.matrix.nrows)
        .map(|i| {
            let (_, vals) = m.matrix.row(i);
            vals.iter().sum()
        })
        .collect())
}
