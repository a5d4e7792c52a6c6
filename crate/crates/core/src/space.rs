//! Local bases and the global DOF map.
//!
//! Interior elements carry the eight trilinear vertex functions. Boundary
//! elements carry the hybrid basis: `n_cp` patch functions `R̂_i(α, β)(1 − ζ)`
//! followed by the four interface-vertex functions `bilinear_k(α, β) ζ`.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::mesh::{q1_shape, ElementKind, HybridMesh, CORNERS};
use crate::patch::BezierCell;
use crate::Vec3;

/// Values and reference gradients `∂/∂(α, β, ζ)` of an element's local basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
}

impl BasisEval {
    /// Physical gradients `J⁻ᵀ ∇̂N` for an element Jacobian.
    pub fn physical_grads(&self, jacobian: &Matrix3<f64>) -> Option<Vec<Vec3>> {
        let jit = jacobian.try_inverse()?.transpose();
        Some(self.grads.iter().map(|g| jit * Vec3::new(g[0], g[1], g[2])).collect())
    }
}

/// The `n_cp + 4` functions of a boundary element.
#[derive(Debug, Clone, Copy)]
pub struct HybridLocalBasis<'a> {
    mesh: &'a HybridMesh,
    cell: BezierCell,
}

impl<'a> HybridLocalBasis<'a> {
    pub fn new(mesh: &'a HybridMesh, element: usize) -> Result<Self> {
        let cell = *mesh.cell(element)?;
        Ok(Self { mesh, cell })
    }

    pub fn len(&self) -> usize {
        self.mesh.basis().n_cp() + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell(&self) -> BezierCell {
        self.cell
    }

    /// Evaluation at a reference point of the element.
    pub fn eval(&self, xhat: [f64; 3]) -> Result<BasisEval> {
        let (u, v) = self.cell.to_param(xhat[0], xhat[1]);
        self.eval_param(u, v, xhat[2])
    }

    /// Evaluation at patch parameters `(u, v)` and depth `ζ`; the bilinear
    /// part is extended beyond the cell when `(u, v)` lies outside it.
    pub fn eval_param(&self, u: f64, v: f64, zeta: f64) -> Result<BasisEval> {
        let (wu, wv) = (self.cell.width_u(), self.cell.width_v());
        let a = (u - self.cell.u[0]) / wu;
        let b = (v - self.cell.v[0]) / wv;
        let r = self.mesh.basis().eval(u, v)?;
        let n = r.values.len();
        let mut values = Vec::with_capacity(n + 4);
        let mut grads = Vec::with_capacity(n + 4);
        for i in 0..n {
            values.push(r.values[i] * (1.0 - zeta));
            grads.push([r.du[i] * wu * (1.0 - zeta), r.dv[i] * wv * (1.0 - zeta), -r.values[i]]);
        }
        for c in &CORNERS[4..] {
            let fa = if c[0] == 1.0 { a } else { 1.0 - a };
            let fb = if c[1] == 1.0 { b } else { 1.0 - b };
            let sa = if c[0] == 1.0 { 1.0 } else { -1.0 };
            let sb = if c[1] == 1.0 { 1.0 } else { -1.0 };
            values.push(fa * fb * zeta);
            grads.push([sa * fb * zeta, fa * sb * zeta, fa * fb]);
        }
        Ok(BasisEval { values, grads })
    }

    /// Nodal evaluation matrix: entry `(i, j)` is function `i` at DOF node `j`.
    /// DOF nodes are the patch Greville points on the curved face followed by
    /// the four interface vertices.
    pub fn unisolvency_matrix(&self) -> Result<DMatrix<f64>> {
        let basis = self.mesh.basis();
        let n = basis.n_cp();
        let mut m = DMatrix::zeros(n + 4, n + 4);
        for (j, &(u, v)) in basis.greville_params().iter().enumerate() {
            let e = self.eval_param(u, v, 0.0)?;
            for i in 0..n + 4 {
                m[(i, j)] = e.values[i];
            }
        }
        for (k, c) in CORNERS[4..].iter().enumerate() {
            let e = self.eval([c[0], c[1], 1.0])?;
            for i in 0..n + 4 {
                m[(i, n + k)] = e.values[i];
            }
        }
        Ok(m)
    }
}

/// Local basis of any element, ordered like [`DofMap::element_dofs`].
pub fn eval_element_basis(mesh: &HybridMesh, element: usize, xhat: [f64; 3]) -> Result<BasisEval> {
    match mesh.element(element).kind {
        ElementKind::Boundary { .. } => HybridLocalBasis::new(mesh, element)?.eval(xhat),
        ElementKind::Interior => {
            let (n, dn) = q1_shape(xhat);
            Ok(BasisEval { values: n.to_vec(), grads: dn.to_vec() })
        }
    }
}

/// Boundary condition applied when building a [`DofMap`].
#[derive(Clone, Copy)]
pub enum BoundaryCondition<'a> {
    None,
    HomogeneousDirichlet,
    /// Greville DOFs take `g` at the Greville images, vertex DOFs take `g` at the vertex.
    InterpolatedDirichlet(&'a (dyn Fn(&Vec3) -> f64 + Sync)),
}

impl std::fmt::Debug for BoundaryCondition<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryCondition::None => write!(f, "None"),
            BoundaryCondition::HomogeneousDirichlet => write!(f, "HomogeneousDirichlet"),
            BoundaryCondition::InterpolatedDirichlet(_) => write!(f, "InterpolatedDirichlet(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    Vertex { node: usize },
    Greville { index: usize },
}

#[derive(Debug, Clone)]
pub struct DofMap {
    kinds: Vec<DofKind>,
    node_dof: Vec<Option<usize>>,
    element_dofs: Vec<Vec<usize>>,
    greville_offset: usize,
    dirichlet_mask: Vec<bool>,
    dirichlet_values: Vec<f64>,
}

impl DofMap {
    /// Vertex DOFs for every node off the curved face, in node order, then
    /// one DOF per patch Greville point.
    pub fn build(mesh: &HybridMesh, bc: BoundaryCondition<'_>) -> Result<Self> {
        let tags = mesh.tags();
        let mut kinds = Vec::new();
        let mut node_dof = vec![None; tags.len()];
        for (node, tag) in tags.iter().enumerate() {
            if !tag.curved {
                node_dof[node] = Some(kinds.len());
                kinds.push(DofKind::Vertex { node });
            }
        }
        let greville_offset = kinds.len();
        let n_cp = mesh.basis().n_cp();
        kinds.extend((0..n_cp).map(|index| DofKind::Greville { index }));

        let mut element_dofs = Vec::with_capacity(mesh.elements().len());
        for (e, elem) in mesh.elements().iter().enumerate() {
            let vertex = |l: usize| {
                node_dof[elem.vertices[l]].ok_or_else(|| {
                    Error::UnsupportedTopology(format!("element {e} uses curved node {} as a vertex DOF", elem.vertices[l]))
                })
            };
            let dofs = match elem.kind {
                ElementKind::Interior => (0..8).map(vertex).collect::<Result<Vec<_>>>()?,
                ElementKind::Boundary { .. } => {
                    let mut d: Vec<usize> = (greville_offset..greville_offset + n_cp).collect();
                    for l in 4..8 {
                        d.push(vertex(l)?);
                    }
                    d
                }
            };
            element_dofs.push(dofs);
        }

        let n = kinds.len();
        let mut dirichlet_mask = vec![false; n];
        let mut dirichlet_values = vec![0.0; n];
        if !matches!(bc, BoundaryCondition::None) {
            for (d, kind) in kinds.iter().enumerate() {
                let position = match *kind {
                    DofKind::Greville { index } => Some(mesh.basis().greville_images()[index]),
                    DofKind::Vertex { node } => tags[node].planar_boundary.then(|| mesh.nodes()[node]),
                };
                if let Some(x) = position {
                    dirichlet_mask[d] = true;
                    if let BoundaryCondition::InterpolatedDirichlet(g) = bc {
                        dirichlet_values[d] = g(&x);
                    }
                }
            }
        }
        Ok(Self { kinds, node_dof, element_dofs, greville_offset, dirichlet_mask, dirichlet_values })
    }

    pub fn n_global(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[DofKind] {
        &self.kinds
    }

    pub fn element_dofs(&self, element: usize) -> &[usize] {
        &self.element_dofs[element]
    }

    pub fn node_dof(&self, node: usize) -> Option<usize> {
        self.node_dof[node]
    }

    pub fn greville_dof(&self, index: usize) -> usize {
        self.greville_offset + index
    }

    pub fn n_vertex_dofs(&self) -> usize {
        self.greville_offset
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet_mask
    }

    pub fn dirichlet_values(&self) -> &[f64] {
        &self.dirichlet_values
    }

    pub fn n_constrained(&self) -> usize {
        self.dirichlet_mask.iter().filter(|&&m| m).count()
    }

    /// Nodal interpolation of `f` at the DOF nodes: vertices and Greville images.
    pub fn interpolate(&self, mesh: &HybridMesh, f: impl Fn(&Vec3) -> f64) -> Vec<f64> {
        self.kinds
            .iter()
            .map(|k| match *k {
                DofKind::Vertex { node } => f(&mesh.nodes()[node]),
                DofKind::Greville { index } => f(&mesh.basis().greville_images()[index]),
            })
            .collect()
    }
}

/// A discrete function: its value and physical gradient at a reference point.
pub fn eval_discrete(
    mesh: &HybridMesh,
    dofs: &DofMap,
    coefficients: &[f64],
    element: usize,
    xhat: [f64; 3],
) -> Result<(f64, Vec3)> {
    let basis = eval_element_basis(mesh, element, xhat)?;
    let map = mesh.geometric_map(element, xhat)?;
    let grads = basis
        .physical_grads(&map.jacobian)
        .ok_or(Error::InvertedElement { element, det: map.det })?;
    let mut value = 0.0;
    let mut grad = Vec3::zeros();
    for (k, &d) in dofs.element_dofs(element).iter().enumerate() {
        value += coefficients[d] * basis.values[k];
        grad += grads[k] * coefficients[d];
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hybrid_basis_partition_of_unity_and_trace() {
        let mesh = presets::bump_cube(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for e in mesh.boundary_elements() {
            let basis = HybridLocalBasis::new(&mesh, e).unwrap();
            for _ in 0..125 {
                let x = [rng.gen(), rng.gen(), rng.gen()];
                let ev = basis.eval(x).unwrap();
                assert!((ev.values.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                for d in 0..3 {
                    assert!(ev.grads.iter().map(|g| g[d]).sum::<f64>().abs() <= 1e-9);
                }
            }
            let top = basis.eval([0.3, 0.6, 1.0]).unwrap();
            let n = top.values.len() - 4;
            assert!(top.values[..n].iter().all(|&v| v == 0.0));
            let expect = [0.7 * 0.4, 0.3 * 0.4, 0.3 * 0.6, 0.7 * 0.6];
            for k in 0..4 {
                assert!((top.values[n + k] - expect[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hybrid_gradients_match_finite_differences() {
        let mesh = presets::bump_cube(0).unwrap();
        let basis = HybridLocalBasis::new(&mesh, 0).unwrap();
        let x = [0.31, 0.57, 0.42];
        let ev = basis.eval(x).unwrap();
        let h = 1e-6;
        for d in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let (p, m) = (basis.eval(xp).unwrap(), basis.eval(xm).unwrap());
            for i in 0..ev.values.len() {
                let fd = (p.values[i] - m.values[i]) / (2.0 * h);
                assert!((fd - ev.grads[i][d]).abs() <= 1e-6 * (1.0 + fd.abs()), "fn {i} dir {d}");
            }
        }
    }

    #[test]
    fn unisolvency_single_cell_bump() {
        let mesh = presets::bump_single_cell().unwrap();
        let basis = HybridLocalBasis::new(&mesh, 0).unwrap();
        let m = basis.unisolvency_matrix().unwrap();
        assert_eq!(m.nrows(), 13);
        let err = (&m - DMatrix::identity(13, 13)).amax();
        assert!(err <= 1e-10, "{err}");
        assert!((m.determinant() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn unisolvency_flat_is_q1_nodal() {
        let mesh = presets::flat_cube(1).unwrap();
        for e in mesh.boundary_elements() {
            let m = HybridLocalBasis::new(&mesh, e).unwrap().unisolvency_matrix().unwrap();
            assert!((&m - DMatrix::identity(m.nrows(), m.nrows())).amax() <= 1e-12);
        }
    }

    #[test]
    fn dof_map_counts_and_masks() {
        let mesh = presets::bump_cube(0).unwrap();
        let none = DofMap::build(&mesh, BoundaryCondition::None).unwrap();
        assert_eq!(none.n_global(), 18 + 16);
        assert_eq!(none.n_constrained(), 0);
        let hom = DofMap::build(&mesh, BoundaryCondition::HomogeneousDirichlet).unwrap();
        // only the centre node of the interface layer is free
        assert_eq!(hom.n_global() - hom.n_constrained(), 1);
        let free = hom.dirichlet_mask().iter().position(|m| !m).unwrap();
        let DofKind::Vertex { node } = hom.kinds()[free] else { panic!("free dof is not a vertex") };
        let x = mesh.nodes()[node];
        assert!((x.x - 0.5).abs() < 1e-12 && (x.y - 0.5).abs() < 1e-12);
        // all boundary elements share the Greville block
        let mut blocks = mesh.boundary_elements().map(|e| hom.element_dofs(e)[..16].to_vec());
        let first = blocks.next().unwrap();
        assert!(blocks.all(|b| b == first));
    }

    #[test]
    fn interpolated_dirichlet_values() {
        let mesh = presets::bump_cube(0).unwrap();
        let g = |x: &Vec3| x.x + 2.0 * x.y - x.z;
        let map = DofMap::build(&mesh, BoundaryCondition::InterpolatedDirichlet(&g)).unwrap();
        for (d, k) in map.kinds().iter().enumerate() {
            if let DofKind::Greville { index } = k {
                let x = mesh.basis().greville_images()[*index];
                assert_eq!(map.dirichlet_values()[d], g(&x));
            }
        }
    }

    #[test]
    fn interface_vertex_dofs_are_shared() {
        let mesh = presets::bump_cube(0).unwrap();
        let map = DofMap::build(&mesh, BoundaryCondition::None).unwrap();
        for b in mesh.boundary_elements() {
            let top = &map.element_dofs(b)[16..];
            let shared = mesh.interior_elements().any(|i| {
                let d = map.element_dofs(i);
                top.iter().all(|t| d[..4].contains(t))
            });
            assert!(shared);
        }
    }
}
