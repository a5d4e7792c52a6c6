//! Hexahedral meshes of extruded-patch domains, split into a one-element-thick
//! boundary layer under the NURBS face and a trilinear interior.
//!
//! Reference coordinates are `(α, β, ζ) ∈ [0,1]^3`. On boundary elements `α`
//! and `β` run along the patch parameters `u` and `v` of the element's Bezier
//! cell, and the curved face sits at `ζ = 0`. Interior elements use the same
//! orientation so that `ζ` always points away from the curved face.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::patch::{BezierCell, BezierMesh, NurbsPatch, TransformedPatchBasis};
use crate::Vec3;

/// Local vertex order as `(α, β, ζ)` corners.
pub const CORNERS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Local faces, each as four local vertex indices.
pub const FACES: [[usize; 4]; 6] = [
    [0, 1, 2, 3], // ζ = 0
    [4, 5, 6, 7], // ζ = 1
    [0, 1, 5, 4], // β = 0
    [3, 2, 6, 7], // β = 1
    [0, 3, 7, 4], // α = 0
    [1, 2, 6, 5], // α = 1
];

/// Points whose Newton inverse lands outside this box are reported as outside.
const OUTSIDE_MARGIN: f64 = 0.05;
const NEWTON_MAX_ITER: usize = 50;

/// Description of an extruded domain: the NURBS face sits on top along
/// `depth_axis`, the bottom is the plane `x[depth_axis] = base`, and the
/// patch edges sweep four planar side faces along the depth axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrudedGeometry {
    pub depth_axis: usize,
    pub base: f64,
    /// Reference height of the curved face; planar layers are spaced `(top_ref − base) / nz`.
    pub top_ref: f64,
    pub layering: Layering,
}

/// Placement of the node layers below the curved face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layering {
    /// Flat layers at `top_ref − k t`; the interface is one plane, so the
    /// boundary layer only thins out when the curved face is flat.
    Planar,
    /// Layers divide each vertical line between the surface and the base
    /// evenly; interface faces are bilinear and flatten as `O(h)`.
    #[default]
    Graded,
}

/// Boundary classification of a mesh node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeTag {
    /// On the NURBS face.
    pub curved: bool,
    /// On the planar interface between boundary layer and interior.
    pub interface: bool,
    /// On one of the planar faces of the domain (bottom or sides).
    pub planar_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Interior,
    /// Index of the element's cell in the patch Bezier mesh.
    Boundary { cell: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HexElement {
    pub kind: ElementKind,
    /// Global node ids in [`CORNERS`] order.
    pub vertices: [usize; 8],
}

impl HexElement {
    pub fn is_boundary(&self) -> bool {
        matches!(self.kind, ElementKind::Boundary { .. })
    }
}

/// Point, Jacobian `∂x/∂(α, β, ζ)` and its determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricMapEval {
    pub point: Vec3,
    pub jacobian: Matrix3<f64>,
    pub det: f64,
}

/// Outcome of inverting an element map at a physical point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Located {
    Inside { reference: [f64; 3], iterations: usize },
    Outside { reference: [f64; 3] },
}

#[derive(Debug, Clone)]
pub struct HybridMesh {
    nodes: Vec<Vec3>,
    tags: Vec<NodeTag>,
    elements: Vec<HexElement>,
    basis: Arc<TransformedPatchBasis>,
    bezier: BezierMesh,
    geometry: ExtrudedGeometry,
    resolution: [usize; 3],
    level: usize,
    h: f64,
    diameter: f64,
}

impl HybridMesh {
    /// Structured mesh with `resolution = [nx, ny, nz]`: `nx × ny` must equal
    /// the patch's Bezier cells and `nz ≥ 2` counts the boundary layer plus at
    /// least one interior layer.
    pub fn build(patch: &NurbsPatch, geometry: ExtrudedGeometry, resolution: [usize; 3]) -> Result<Self> {
        Self::build_level(patch, geometry, resolution, 0)
    }

    fn build_level(patch: &NurbsPatch, geometry: ExtrudedGeometry, resolution: [usize; 3], level: usize) -> Result<Self> {
        let [nx, ny, nz] = resolution;
        let bezier = patch.bezier_mesh();
        if bezier.cells_u != nx || bezier.cells_v != ny {
            return Err(Error::UnsupportedTopology(format!(
                "resolution {nx}x{ny} does not match the {}x{} Bezier cells of the patch",
                bezier.cells_u, bezier.cells_v
            )));
        }
        if nz < 2 {
            return Err(Error::UnsupportedTopology(
                "depth resolution must be at least 2 (boundary layer plus interior)".into(),
            ));
        }
        let axis = geometry.depth_axis;
        if axis > 2 || !(geometry.top_ref > geometry.base) {
            return Err(Error::Geometry("invalid extrusion axis or heights".into()));
        }
        let t = (geometry.top_ref - geometry.base) / nz as f64;
        let floor = match geometry.layering {
            Layering::Planar => geometry.top_ref - t,
            Layering::Graded => geometry.base,
        };
        let bu = patch.kv_u().breakpoints();
        let bv = patch.kv_v().breakpoints();

        // the curved face must stay strictly above the interface plane (or the base)
        for cell in &bezier.cells {
            for a in 0..=4 {
                for b in 0..=4 {
                    let (u, v) = cell.to_param(a as f64 / 4.0, b as f64 / 4.0);
                    let x = patch.eval_surface(u, v)?;
                    if x[axis] <= floor {
                        return Err(Error::Geometry(format!("curved face dips below {floor} at ({u}, {v})")));
                    }
                }
            }
        }

        let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
        let mut nodes = vec![Vec3::zeros(); (nx + 1) * (ny + 1) * (nz + 1)];
        for j in 0..=ny {
            for i in 0..=nx {
                let s = patch.eval_surface(bu[i], bv[j])?;
                nodes[id(i, j, 0)] = s;
                for k in 1..=nz {
                    let mut x = s;
                    x[axis] = match geometry.layering {
                        Layering::Planar => geometry.top_ref - k as f64 * t,
                        Layering::Graded if k == nz => geometry.base,
                        Layering::Graded => s[axis] + (geometry.base - s[axis]) * k as f64 / nz as f64,
                    };
                    nodes[id(i, j, k)] = x;
                }
            }
        }
        let mut elements = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let vertices = [
                        id(i, j, k),
                        id(i + 1, j, k),
                        id(i + 1, j + 1, k),
                        id(i, j + 1, k),
                        id(i, j, k + 1),
                        id(i + 1, j, k + 1),
                        id(i + 1, j + 1, k + 1),
                        id(i, j + 1, k + 1),
                    ];
                    let kind = if k == 0 { ElementKind::Boundary { cell: i + nx * j } } else { ElementKind::Interior };
                    elements.push(HexElement { kind, vertices });
                }
            }
        }

        let diameter = bounding_diameter(&nodes);
        let planes = side_planes(patch, geometry, diameter)?;
        let tol = 1e-12 * diameter;
        let tags = nodes
            .iter()
            .enumerate()
            .map(|(n, x)| {
                let k = n / ((nx + 1) * (ny + 1));
                let on_plane = (x[axis] - geometry.base).abs() <= tol
                    || planes.iter().any(|(p, nrm)| (x - p).dot(nrm).abs() <= tol);
                NodeTag { curved: k == 0, interface: k == 1, planar_boundary: on_plane }
            })
            .collect();

        let basis = Arc::new(TransformedPatchBasis::build(patch)?);
        Self::from_parts(basis, geometry, nodes, tags, elements, resolution, level)
    }

    /// Assembles a mesh from explicit parts and runs the full validation
    /// (topology, planar interface, conformity, positive Jacobians).
    pub fn from_parts(
        basis: Arc<TransformedPatchBasis>,
        geometry: ExtrudedGeometry,
        nodes: Vec<Vec3>,
        tags: Vec<NodeTag>,
        elements: Vec<HexElement>,
        resolution: [usize; 3],
        level: usize,
    ) -> Result<Self> {
        if tags.len() != nodes.len() {
            return Err(Error::Shape("one tag per node required".into()));
        }
        let bezier = basis.patch().bezier_mesh();
        let diameter = bounding_diameter(&nodes);
        let mut mesh = Self {
            nodes,
            tags,
            elements,
            basis,
            bezier,
            geometry,
            resolution,
            level,
            h: 0.0,
            diameter,
        };
        mesh.validate()?;
        mesh.h = mesh
            .elements
            .iter()
            .map(|e| element_diameter(&mesh.vertex_coords(e)))
            .fold(0.0, f64::max);
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        for (e, elem) in self.elements.iter().enumerate() {
            if elem.vertices.iter().any(|&v| v >= self.nodes.len()) {
                return Err(Error::Shape(format!("element {e} references a missing node")));
            }
            let curved_faces: Vec<usize> = FACES
                .iter()
                .enumerate()
                .filter(|(_, f)| f.iter().all(|&l| self.tags[elem.vertices[l]].curved))
                .map(|(k, _)| k)
                .collect();
            match elem.kind {
                ElementKind::Boundary { cell } => {
                    if cell >= self.bezier.cells.len() {
                        return Err(Error::Shape(format!("element {e} links a missing Bezier cell")));
                    }
                    if curved_faces.len() > 1 {
                        return Err(Error::UnsupportedTopology(format!(
                            "boundary element {e} has {} faces on the curved boundary",
                            curved_faces.len()
                        )));
                    }
                    if curved_faces != [0] {
                        return Err(Error::UnsupportedTopology(format!(
                            "boundary element {e} does not have its curved face at ζ = 0"
                        )));
                    }
                    if self.geometry.layering == Layering::Planar && interface_warp(&self.vertex_coords(elem)) > 1e-10 {
                        return Err(Error::Geometry(format!("interface face of element {e} is not planar")));
                    }
                }
                ElementKind::Interior => {
                    if !curved_faces.is_empty() {
                        return Err(Error::UnsupportedTopology(format!(
                            "interior element {e} has a face on the curved boundary"
                        )));
                    }
                }
            }
        }
        self.check_conformity()?;
        let rule = crate::quadrature::gauss_legendre(3, 3)?.to_domain(crate::quadrature::RefDomain::Unit);
        for e in 0..self.elements.len() {
            for p in &rule.points {
                let g = self.geometric_map(e, *p)?;
                if !(g.det > 0.0) {
                    return Err(Error::InvertedElement { element: e, det: g.det });
                }
            }
        }
        Ok(())
    }

    fn check_conformity(&self) -> Result<()> {
        let mut faces: HashMap<[usize; 4], usize> = HashMap::new();
        for elem in &self.elements {
            for f in FACES {
                let mut key = f.map(|l| elem.vertices[l]);
                key.sort_unstable();
                *faces.entry(key).or_default() += 1;
            }
        }
        for (face, count) in faces {
            if count > 2 {
                return Err(Error::UnsupportedTopology(format!("face {face:?} shared by {count} elements")));
            }
            if count == 1 {
                let on_boundary = face.iter().all(|&n| self.tags[n].curved || self.tags[n].planar_boundary);
                if !on_boundary {
                    return Err(Error::Geometry(format!("hanging face {face:?} inside the domain")));
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    pub fn elements(&self) -> &[HexElement] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> &HexElement {
        &self.elements[e]
    }

    pub fn patch(&self) -> &NurbsPatch {
        self.basis.patch()
    }

    pub fn basis(&self) -> &TransformedPatchBasis {
        &self.basis
    }

    /// Shared handle to the transformed basis, for [`HybridMesh::from_parts`].
    pub fn basis_handle(&self) -> Arc<TransformedPatchBasis> {
        Arc::clone(&self.basis)
    }

    pub fn bezier_mesh(&self) -> &BezierMesh {
        &self.bezier
    }

    pub fn geometry(&self) -> ExtrudedGeometry {
        self.geometry
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Largest element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Diameter of the node cloud.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn boundary_elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.elements.iter().enumerate().filter(|(_, e)| e.is_boundary()).map(|(i, _)| i)
    }

    pub fn interior_elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.elements.iter().enumerate().filter(|(_, e)| !e.is_boundary()).map(|(i, _)| i)
    }

    pub fn vertex_coords(&self, elem: &HexElement) -> [Vec3; 8] {
        elem.vertices.map(|v| self.nodes[v])
    }

    /// Bezier cell of a boundary element.
    pub fn cell(&self, e: usize) -> Result<&BezierCell> {
        match self.elements[e].kind {
            ElementKind::Boundary { cell } => Ok(&self.bezier.cells[cell]),
            ElementKind::Interior => Err(Error::WrongElementKind { element: e, expected: "boundary" }),
        }
    }

    /// The local NURBS map `S_Q = S ∘ T_Q` of a boundary element, with `T_Q`
    /// the affine map of `[0,1]^2` onto the element's Bezier cell.
    pub fn local_nurbs_map(&self, e: usize) -> Result<LocalNurbsMap<'_>> {
        let cell = *self.cell(e)?;
        Ok(LocalNurbsMap { patch: self.patch(), cell })
    }

    /// Element map `F_Q` at reference point `x̂`.
    pub fn geometric_map(&self, e: usize, xhat: [f64; 3]) -> Result<GeometricMapEval> {
        let elem = &self.elements[e];
        let x = self.vertex_coords(elem);
        let [a, b, z] = xhat;
        let (point, jacobian) = match elem.kind {
            ElementKind::Interior => trilinear(&x, xhat),
            ElementKind::Boundary { cell } => {
                let cell = &self.bezier.cells[cell];
                let (u, v) = cell.to_param(a, b);
                let (s, su, sv) = surface_with_tangents(self.patch(), u, v)?;
                let (su, sv) = (su * cell.width_u(), sv * cell.width_v());
                // bilinear interpolation of the interface vertices X1..X4
                let bil = x[4] * ((1.0 - a) * (1.0 - b)) + x[5] * (a * (1.0 - b)) + x[6] * (a * b) + x[7] * ((1.0 - a) * b);
                let bil_a = (x[5] - x[4]) * (1.0 - b) + (x[6] - x[7]) * b;
                let bil_b = (x[7] - x[4]) * (1.0 - a) + (x[6] - x[5]) * a;
                let point = s * (1.0 - z) + bil * z;
                let ja = su * (1.0 - z) + bil_a * z;
                let jb = sv * (1.0 - z) + bil_b * z;
                let jz = bil - s;
                (point, Matrix3::from_columns(&[ja, jb, jz]))
            }
        };
        Ok(GeometricMapEval { point, jacobian, det: jacobian.determinant() })
    }

    /// Damped Newton inversion of the element map starting from the element centre.
    pub fn inverse_geometric_map(&self, e: usize, x: &Vec3) -> Result<Located> {
        let elem = &self.elements[e];
        let tol = 1e-10 * element_diameter(&self.vertex_coords(elem));
        let mut xi = Vector3::new(0.5, 0.5, 0.5);
        let outside = |v: &Vector3<f64>| v.iter().any(|&c| !(-OUTSIDE_MARGIN..=1.0 + OUTSIDE_MARGIN).contains(&c));
        let mut g = self.map_extended(e, xi)?;
        let mut r = g.point - x;
        let mut rn = r.norm();
        for it in 0..NEWTON_MAX_ITER {
            if rn <= tol {
                let reference = [xi.x, xi.y, xi.z];
                return Ok(if outside(&xi) {
                    Located::Outside { reference }
                } else {
                    Located::Inside { reference, iterations: it }
                });
            }
            let step = g
                .jacobian
                .lu()
                .solve(&r)
                .ok_or(Error::PointLocation { iterations: it, residual: rn })?;
            let mut lambda = 1.0;
            loop {
                let trial = xi - step * lambda;
                if outside(&trial) && lambda < 1.0 / 64.0 {
                    return Ok(Located::Outside { reference: [trial.x, trial.y, trial.z] });
                }
                let gt = self.map_extended(e, trial)?;
                let rt = gt.point - x;
                if rt.norm() < rn || lambda < 1.0 / 1024.0 {
                    xi = trial;
                    g = gt;
                    r = rt;
                    rn = r.norm();
                    break;
                }
                lambda *= 0.5;
            }
            if outside(&xi) && it > 3 {
                return Ok(Located::Outside { reference: [xi.x, xi.y, xi.z] });
            }
        }
        if rn <= tol {
            let reference = [xi.x, xi.y, xi.z];
            return Ok(if outside(&xi) {
                Located::Outside { reference }
            } else {
                Located::Inside { reference, iterations: NEWTON_MAX_ITER }
            });
        }
        Err(Error::PointLocation { iterations: NEWTON_MAX_ITER, residual: rn })
    }

    /// Element map that tolerates reference points slightly outside the unit
    /// cube by clamping the patch parameters; used only during Newton steps.
    fn map_extended(&self, e: usize, xi: Vector3<f64>) -> Result<GeometricMapEval> {
        let clamp = |t: f64| t.clamp(-0.5, 1.5);
        let p = [clamp(xi.x), clamp(xi.y), clamp(xi.z)];
        match self.elements[e].kind {
            ElementKind::Interior => self.geometric_map(e, p),
            ElementKind::Boundary { cell } => {
                let cell = &self.bezier.cells[cell];
                let (u, v) = cell.to_param(p[0], p[1]);
                if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
                    return self.geometric_map(e, p);
                }
                // outside the patch: first-order extension from the nearest admissible point
                let a0 = ((u.clamp(0.0, 1.0) - cell.u[0]) / cell.width_u()).clamp(0.0, 1.0);
                let b0 = ((v.clamp(0.0, 1.0) - cell.v[0]) / cell.width_v()).clamp(0.0, 1.0);
                let g = self.geometric_map(e, [a0, b0, p[2]])?;
                let d = Vector3::new(p[0] - a0, p[1] - b0, 0.0);
                Ok(GeometricMapEval { point: g.point + g.jacobian * d, ..g })
            }
        }
    }

    /// Uniform refinement: one knot at the midpoint of every Bezier span in
    /// both directions, interior spacing halved, and the boundary layer kept
    /// one element thick (its inner half becomes interior elements).
    pub fn refine(&self) -> Result<Self> {
        let patch = self.patch().refine_uniform()?;
        let [nx, ny, nz] = self.resolution;
        Self::build_level(&patch, self.geometry, [2 * nx, 2 * ny, 2 * nz], self.level + 1)
    }

    pub fn stats(&self) -> MeshStats {
        let n_boundary = self.boundary_elements().count();
        let aspect = self
            .elements
            .iter()
            .map(|e| {
                let x = self.vertex_coords(e);
                let edges = EDGES.map(|[a, b]| (x[a] - x[b]).norm());
                edges.iter().cloned().fold(0.0, f64::max) / edges.iter().cloned().fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        let max_interface_warp = self
            .boundary_elements()
            .map(|e| interface_warp(&self.vertex_coords(&self.elements[e])))
            .fold(0.0, f64::max);
        MeshStats {
            max_interface_warp,
            level: self.level,
            nodes: self.nodes.len(),
            boundary_elements: n_boundary,
            interior_elements: self.elements.len() - n_boundary,
            h: self.h,
            max_aspect_ratio: aspect,
            n_cp: self.basis.n_cp(),
            transform_condition: self.basis.condition(),
        }
    }
}

const EDGES: [[usize; 2]; 12] = [
    [0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7],
];

#[derive(Debug, Clone, PartialEq)]
pub struct MeshStats {
    pub level: usize,
    pub nodes: usize,
    pub boundary_elements: usize,
    pub interior_elements: usize,
    pub h: f64,
    pub max_aspect_ratio: f64,
    /// Largest relative out-of-plane offset of an interface face.
    pub max_interface_warp: f64,
    pub n_cp: usize,
    pub transform_condition: f64,
}

impl std::fmt::Display for MeshStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "level: {}", self.level)?;
        writeln!(f, "nodes: {}", self.nodes)?;
        writeln!(f, "boundary_elements: {}", self.boundary_elements)?;
        writeln!(f, "interior_elements: {}", self.interior_elements)?;
        writeln!(f, "h: {:.6e}", self.h)?;
        writeln!(f, "max_aspect_ratio: {:.4}", self.max_aspect_ratio)?;
        writeln!(f, "max_interface_warp: {:.4e}", self.max_interface_warp)?;
        writeln!(f, "patch_control_points: {}", self.n_cp)?;
        write!(f, "transform_condition: {:.4e}", self.transform_condition)
    }
}

/// `S_Q(α, β) = S(T_Q(α, β))`.
#[derive(Debug, Clone, Copy)]
pub struct LocalNurbsMap<'a> {
    patch: &'a NurbsPatch,
    cell: BezierCell,
}

impl LocalNurbsMap<'_> {
    pub fn eval(&self, alpha: f64, beta: f64) -> Result<Vec3> {
        let (u, v) = self.cell.to_param(alpha, beta);
        self.patch.eval_surface(u, v)
    }

    pub fn cell(&self) -> BezierCell {
        self.cell
    }
}

fn surface_with_tangents(patch: &NurbsPatch, u: f64, v: f64) -> Result<(Vec3, Vec3, Vec3)> {
    let local = patch.local_basis(u, v)?;
    let c = patch.control_points();
    let mut s = Vec3::zeros();
    let mut su = Vec3::zeros();
    let mut sv = Vec3::zeros();
    for (k, &i) in local.indices.iter().enumerate() {
        s += c[i] * local.values[k];
        su += c[i] * local.du[k];
        sv += c[i] * local.dv[k];
    }
    Ok((s, su, sv))
}

/// Trilinear map through the eight vertices and its Jacobian.
pub fn trilinear(x: &[Vec3; 8], xhat: [f64; 3]) -> (Vec3, Matrix3<f64>) {
    let (n, dn) = q1_shape(xhat);
    let mut point = Vec3::zeros();
    let mut jac = Matrix3::zeros();
    for a in 0..8 {
        point += x[a] * n[a];
        for d in 0..3 {
            for r in 0..3 {
                jac[(r, d)] += x[a][r] * dn[a][d];
            }
        }
    }
    (point, jac)
}

/// Trilinear shape functions on `[0,1]^3` and their reference gradients.
pub fn q1_shape(xhat: [f64; 3]) -> ([f64; 8], [[f64; 3]; 8]) {
    let mut n = [0.0; 8];
    let mut dn = [[0.0; 3]; 8];
    for (a, c) in CORNERS.iter().enumerate() {
        let f: [f64; 3] = std::array::from_fn(|d| if c[d] == 1.0 { xhat[d] } else { 1.0 - xhat[d] });
        let s: [f64; 3] = std::array::from_fn(|d| if c[d] == 1.0 { 1.0 } else { -1.0 });
        n[a] = f[0] * f[1] * f[2];
        dn[a] = [s[0] * f[1] * f[2], f[0] * s[1] * f[2], f[0] * f[1] * s[2]];
    }
    (n, dn)
}

/// Distance of `X3` from the plane through `X1, X2, X4`, relative to the face size.
fn interface_warp(x: &[Vec3; 8]) -> f64 {
    let n = (x[5] - x[4]).cross(&(x[7] - x[4]));
    let size = (x[6] - x[4]).norm().max((x[5] - x[7]).norm());
    if n.norm() == 0.0 {
        return f64::INFINITY;
    }
    (x[6] - x[4]).dot(&n.normalize()).abs() / size
}

fn element_diameter(x: &[Vec3; 8]) -> f64 {
    let mut d: f64 = 0.0;
    for a in 0..8 {
        for b in a + 1..8 {
            d = d.max((x[a] - x[b]).norm());
        }
    }
    d
}

fn bounding_diameter(nodes: &[Vec3]) -> f64 {
    let mut lo = nodes[0];
    let mut hi = nodes[0];
    for x in nodes {
        lo = lo.inf(x);
        hi = hi.sup(x);
    }
    (hi - lo).norm()
}

/// Planes through the four patch edges swept along the depth axis, as
/// `(point, unit normal)`. Each edge curve is checked to lie in its plane.
fn side_planes(patch: &NurbsPatch, geometry: ExtrudedGeometry, diameter: f64) -> Result<Vec<(Vec3, Vec3)>> {
    let mut axis = Vec3::zeros();
    axis[geometry.depth_axis] = 1.0;
    let edges: [fn(f64) -> (f64, f64); 4] = [|t| (0.0, t), |t| (1.0, t), |t| (t, 0.0), |t| (t, 1.0)];
    let mut planes = Vec::with_capacity(4);
    for edge in edges {
        let (u0, v0) = edge(0.0);
        let (u1, v1) = edge(1.0);
        let p0 = patch.eval_surface(u0, v0)?;
        let p1 = patch.eval_surface(u1, v1)?;
        let n = (p1 - p0).cross(&axis);
        if n.norm() <= 1e-12 * diameter {
            return Err(Error::Geometry("patch edge is parallel to the extrusion axis".into()));
        }
        let n = n.normalize();
        for s in 0..=32 {
            let (u, v) = edge(s as f64 / 32.0);
            let x = patch.eval_surface(u, v)?;
            if (x - p0).dot(&n).abs() > 1e-10 * diameter {
                return Err(Error::Geometry("patch edge does not sweep a planar side face".into()));
            }
        }
        planes.push((p0, n));
    }
    Ok(planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ref(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [rng.gen(), rng.gen(), rng.gen()]
    }

    #[test]
    fn bump_counts() {
        let m = presets::bump_cube(0).unwrap();
        assert_eq!(m.boundary_elements().count(), 4);
        assert_eq!(m.interior_elements().count(), 4);
        assert_eq!(m.nodes().len(), 27);
    }

    #[test]
    fn single_layer_rejected() {
        let p = presets::bump_patch().unwrap();
        let err = HybridMesh::build(&p, presets::Preset::BumpCube.geometry(), [2, 2, 1]).unwrap_err();
        assert!(matches!(err, Error::UnsupportedTopology(_)));
        let err = HybridMesh::build(&p, presets::Preset::BumpCube.geometry(), [1, 2, 2]).unwrap_err();
        assert!(matches!(err, Error::UnsupportedTopology(_)));
    }

    #[test]
    fn flat_boundary_map_is_trilinear() {
        let m = presets::flat_cube(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for e in m.boundary_elements() {
            let x = m.vertex_coords(m.element(e));
            for _ in 0..100 {
                let r = random_ref(&mut rng);
                let g = m.geometric_map(e, r).unwrap();
                let (p, j) = trilinear(&x, r);
                assert!((g.point - p).norm() <= 1e-12);
                assert!((g.jacobian - j).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn local_map_matches_vertices_and_faces() {
        let m = presets::bump_cube(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for e in m.boundary_elements() {
            let s = m.local_nurbs_map(e).unwrap();
            let x = m.vertex_coords(m.element(e));
            for (l, c) in CORNERS[..4].iter().enumerate() {
                assert!((s.eval(c[0], c[1]).unwrap() - x[l]).norm() <= 1e-12);
            }
            let cell = s.cell();
            assert!((s.eval(0.0, 0.0).unwrap() - m.patch().eval_surface(cell.u[0], cell.v[0]).unwrap()).norm() == 0.0);
            for _ in 0..20 {
                let (a, b) = (rng.gen::<f64>(), rng.gen::<f64>());
                let bottom = m.geometric_map(e, [a, b, 0.0]).unwrap().point;
                assert!((bottom - s.eval(a, b).unwrap()).norm() <= 1e-10);
                let (u, v) = cell.to_param(a, b);
                assert!((bottom - m.basis().eval_surface(u, v).unwrap()).norm() <= 1e-10);
                let top = m.geometric_map(e, [a, b, 1.0]).unwrap().point;
                let bil = x[4] * ((1.0 - a) * (1.0 - b)) + x[5] * (a * (1.0 - b)) + x[6] * (a * b) + x[7] * ((1.0 - a) * b);
                assert!((top - bil).norm() <= 1e-14);
            }
        }
        assert!(matches!(
            m.local_nurbs_map(m.interior_elements().next().unwrap()),
            Err(Error::WrongElementKind { .. })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = presets::cylinder_sector(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for e in 0..m.elements().len() {
            let r = [0.1 + 0.8 * rng.gen::<f64>(), 0.1 + 0.8 * rng.gen::<f64>(), 0.1 + 0.8 * rng.gen::<f64>()];
            let g = m.geometric_map(e, r).unwrap();
            for d in 0..3 {
                let mut rp = r;
                let mut rm = r;
                rp[d] += h;
                rm[d] -= h;
                let fd = (m.geometric_map(e, rp).unwrap().point - m.geometric_map(e, rm).unwrap().point) / (2.0 * h);
                let col = g.jacobian.column(d);
                assert!((fd - col).norm() <= 1e-6 * col.norm().max(1.0));
            }
        }
    }

    #[test]
    fn interface_continuity() {
        let m = presets::bump_cube(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for b in m.boundary_elements() {
            let top: Vec<usize> = FACES[1].iter().map(|&l| m.element(b).vertices[l]).collect();
            let below = m
                .interior_elements()
                .find(|&i| FACES[0].iter().map(|&l| m.element(i).vertices[l]).collect::<Vec<_>>() == top)
                .expect("neighbour below");
            for _ in 0..5 {
                let (a, c) = (rng.gen::<f64>(), rng.gen::<f64>());
                let p = m.geometric_map(b, [a, c, 1.0]).unwrap().point;
                let q = m.geometric_map(below, [a, c, 0.0]).unwrap().point;
                assert!((p - q).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn inverse_round_trip_and_outside() {
        let m = presets::bump_cube(0).unwrap();
        for e in 0..m.elements().len() {
            let x = m.geometric_map(e, [0.3, 0.7, 0.2]).unwrap().point;
            match m.inverse_geometric_map(e, &x).unwrap() {
                Located::Inside { reference, .. } => {
                    for (a, b) in reference.iter().zip([0.3, 0.7, 0.2]) {
                        assert!((a - b).abs() <= 1e-9);
                    }
                }
                other => panic!("{other:?}"),
            }
            let c = m.geometric_map(e, [0.5, 0.5, 0.5]).unwrap().point;
            let centroid: Vec3 = m.vertex_coords(m.element(e)).iter().sum::<Vec3>() / 8.0;
            for target in [c, centroid] {
                match m.inverse_geometric_map(e, &target).unwrap() {
                    Located::Inside { iterations, .. } => assert!(iterations <= 10),
                    other => panic!("{other:?}"),
                }
            }
        }
        // element 0 covers x, y ∈ [0, ½]; element 1 the next cell in u (y)
        let x = m.geometric_map(1, [0.5, 0.5, 0.5]).unwrap().point;
        assert!(matches!(m.inverse_geometric_map(0, &x).unwrap(), Located::Outside { .. }));
    }

    #[test]
    fn refinement_counts_and_geometry() {
        let m0 = presets::bump_cube(0).unwrap();
        let m1 = m0.refine().unwrap();
        let m2 = m1.refine().unwrap();
        for (a, b) in [(&m0, &m1), (&m1, &m2)] {
            let (nb, ni) = (a.boundary_elements().count(), a.interior_elements().count());
            assert_eq!(b.boundary_elements().count(), 4 * nb);
            assert_eq!(b.interior_elements().count(), 8 * ni + 4 * nb);
            assert_eq!(b.level(), a.level() + 1);
            assert!(b.h() / a.h() < 0.6, "{}", b.h() / a.h());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let (u, v) = (rng.gen::<f64>(), rng.gen::<f64>());
            let d = m0.patch().eval_surface(u, v).unwrap() - m2.patch().eval_surface(u, v).unwrap();
            assert!(d.norm() <= 1e-10);
        }
        // a child cell's map agrees with its parent's on the overlap
        let parent = m0.local_nurbs_map(0).unwrap();
        let child = m1.local_nurbs_map(0).unwrap();
        for _ in 0..20 {
            let (a, b) = (rng.gen::<f64>(), rng.gen::<f64>());
            let d = child.eval(a, b).unwrap() - parent.eval(a / 2.0, b / 2.0).unwrap();
            assert!(d.norm() <= 1e-12);
        }
    }

    #[test]
    fn interior_faces_shared_twice() {
        let m = presets::cylinder_sector(2).unwrap();
        let mut faces: HashMap<[usize; 4], usize> = HashMap::new();
        for e in m.elements() {
            for f in FACES {
                let mut k = f.map(|l| e.vertices[l]);
                k.sort_unstable();
                *faces.entry(k).or_default() += 1;
            }
        }
        for (f, c) in faces {
            let boundary = f.iter().all(|&n| m.tags()[n].curved || m.tags()[n].planar_boundary);
            assert!(c == 2 || (c == 1 && boundary));
        }
    }

    #[test]
    fn two_curved_faces_rejected() {
        let m = presets::bump_cube(0).unwrap();
        let mut tags = m.tags().to_vec();
        let e0 = m.element(0);
        for l in [4, 7] {
            tags[e0.vertices[l]].curved = true;
        }
        let err = HybridMesh::from_parts(
            m.basis_handle(),
            m.geometry(),
            m.nodes().to_vec(),
            tags,
            m.elements().to_vec(),
            m.resolution(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnsupportedTopology(_)), "{err:?}");
    }

    #[test]
    fn flat_h_halves() {
        let m0 = presets::flat_cube(0).unwrap();
        let m1 = m0.refine().unwrap();
        let m2 = m1.refine().unwrap();
        assert!((m1.h() / m0.h() - 0.5).abs() < 1e-14);
        assert!((m2.h() / m1.h() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn graded_interface_warp_shrinks() {
        let w: Vec<f64> = (1..4).map(|l| presets::bump_cube(l).unwrap().stats().max_interface_warp).collect();
        assert!(w[2] < w[1] && w[1] < w[0], "{w:?}");
    }

    #[test]
    fn non_planar_interface_rejected() {
        let m = presets::Preset::FlatCube.mesh_with(Layering::Planar, 0).unwrap();
        let mut nodes = m.nodes().to_vec();
        nodes[m.element(0).vertices[6]].z += 0.1;
        let err = HybridMesh::from_parts(
            m.basis_handle(),
            m.geometry(),
            nodes,
            m.tags().to_vec(),
            m.elements().to_vec(),
            m.resolution(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Geometry(_)), "{err:?}");
    }

    #[test]
    fn stats_report() {
        let s = presets::bump_cube(0).unwrap().stats();
        assert_eq!(s.boundary_elements, 4);
        let text = s.to_string();
        assert!(text.contains("interior_elements: 4"));
    }
}
