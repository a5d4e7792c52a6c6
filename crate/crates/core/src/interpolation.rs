//! Interpolation operators: tensor spline collocation, the NURBS projector
//! on the extruded boundary layer, vertex Lagrange interpolation, the hybrid
//! blend on boundary elements and the global interpolant. Also the error
//! norms used by every convergence study.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{q1_shape, ElementKind, HybridMesh, Layering};
use crate::quadrature::{gauss_legendre, RefDomain};
use crate::space::{eval_discrete, DofKind, DofMap};
use crate::spline::{greville_points, KnotVector};
use crate::Vec3;

/// Default blend parameter `ζ̃`.
pub const DEFAULT_ZETA_TILDE: f64 = 0.5;

/// Collocation matrix `C[i, j] = B_j(γ_i)` at the Greville points.
fn collocation(kv: &KnotVector) -> Result<DMatrix<f64>> {
    let g = greville_points(kv)?;
    let n = kv.len();
    let p = kv.degree();
    let mut c = DMatrix::zeros(n, n);
    for (i, &x) in g.points().iter().enumerate() {
        let (span, b) = kv.span_basis(x);
        for (r, &v) in b.iter().enumerate() {
            c[(i, span - p + r)] = v;
        }
    }
    Ok(c)
}

/// Tensor-product spline interpolation at the Greville grid in one to
/// three directions. Coefficients are ordered with the first direction
/// fastest.
pub fn spline_interpolate(kvs: &[&KnotVector], mut f: impl FnMut(&[f64]) -> f64) -> Result<Vec<f64>> {
    if !(1..=3).contains(&kvs.len()) {
        return Err(Error::Parameter(format!("{} directions, expected 1 to 3", kvs.len())));
    }
    let grids = kvs.iter().map(|kv| greville_points(kv).map(|g| g.points().to_vec())).collect::<Result<Vec<_>>>()?;
    let dims: Vec<usize> = grids.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();
    let mut data = Vec::with_capacity(total);
    let mut x = vec![0.0; dims.len()];
    for flat in 0..total {
        let mut r = flat;
        for (d, n) in dims.iter().enumerate() {
            x[d] = grids[d][r % n];
            r /= n;
        }
        data.push(f(&x));
    }
    for (d, kv) in kvs.iter().enumerate() {
        let lu = collocation(kv)?.lu();
        let n = dims[d];
        let stride: usize = dims[..d].iter().product();
        let outer = total / (n * stride);
        for o in 0..outer {
            for s in 0..stride {
                let idx = |i: usize| s + stride * (i + n * o);
                let rhs = nalgebra::DVector::from_iterator(n, (0..n).map(|i| data[idx(i)]));
                let sol = lu.solve(&rhs).ok_or_else(|| Error::Singular("Greville collocation".into()))?;
                for i in 0..n {
                    data[idx(i)] = sol[i];
                }
            }
        }
    }
    Ok(data)
}

/// Evaluates a tensor spline with coefficients ordered as in [`spline_interpolate`].
pub fn eval_tensor_spline(kvs: &[&KnotVector], coefficients: &[f64], x: &[f64]) -> Result<f64> {
    let bases = kvs
        .iter()
        .zip(x)
        .map(|(kv, &t)| crate::spline::eval_bspline_basis(kv, t))
        .collect::<Result<Vec<_>>>()?;
    let dims: Vec<usize> = kvs.iter().map(|kv| kv.len()).collect();
    let mut sum = 0.0;
    for (flat, c) in coefficients.iter().enumerate() {
        let mut r = flat;
        let mut b = 1.0;
        for (d, n) in dims.iter().enumerate() {
            b *= bases[d][r % n];
            r /= n;
        }
        sum += c * b;
    }
    Ok(sum)
}

/// Blend weights `((1 − ζ̃)/(1 + ζ̃), 2ζ̃/(1 + ζ̃))` of the hybrid interpolant.
pub fn blend_coefficients(zeta_tilde: f64) -> Result<(f64, f64)> {
    if !(zeta_tilde > 0.0 && zeta_tilde < 1.0) {
        return Err(Error::Parameter(format!("ζ̃ = {zeta_tilde} outside (0, 1)")));
    }
    Ok(((1.0 - zeta_tilde) / (1.0 + zeta_tilde), 2.0 * zeta_tilde / (1.0 + zeta_tilde)))
}

/// The patch extruded linearly in `ζ`: the layer `ζ = 0` is the patch net
/// with its weights, the layer `ζ = 1` is the net moved onto the interface
/// with unit weights.
#[derive(Debug, Clone)]
pub struct ExtrudedNurbsSpace {
    kv_u: KnotVector,
    kv_v: KnotVector,
    kv_z: KnotVector,
    /// Index `i + n1 (j + n2 k)`.
    control: Vec<Vec3>,
    weights: Vec<f64>,
}

/// Evaluation of `S★` at a parametric point.
#[derive(Debug, Clone, Copy)]
pub struct ExtrudedEval {
    pub point: Vec3,
    pub jacobian: Matrix3<f64>,
    pub weight: f64,
}

impl ExtrudedNurbsSpace {
    pub fn new(mesh: &HybridMesh) -> Result<Self> {
        let patch = mesh.patch();
        let g = mesh.geometry();
        let nz = mesh.resolution()[2] as f64;
        let axis = g.depth_axis;
        let n = patch.n_cp();
        let mut control = patch.control_points().to_vec();
        let mut weights = patch.weights().to_vec();
        for c in patch.control_points() {
            let mut x = *c;
            x[axis] = match g.layering {
                Layering::Planar => g.top_ref - (g.top_ref - g.base) / nz,
                Layering::Graded => c[axis] + (g.base - c[axis]) / nz,
            };
            control.push(x);
        }
        weights.extend(std::iter::repeat(1.0).take(n));
        Ok(Self {
            kv_u: patch.kv_u().clone(),
            kv_v: patch.kv_v().clone(),
            kv_z: KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1)?,
            control,
            weights,
        })
    }

    pub fn knot_vectors(&self) -> [&KnotVector; 3] {
        [&self.kv_u, &self.kv_v, &self.kv_z]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted tensor B-spline values `w_l B_l(ξ)` and their gradients.
    fn weighted_basis(&self, xi: [f64; 3]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let d: Vec<_> = [&self.kv_u, &self.kv_v]
            .iter()
            .zip(xi)
            .map(|(kv, t)| crate::spline::eval_bspline_derivs(kv, t, 1))
            .collect::<Result<_>>()?;
        let z = [(1.0 - xi[2], -1.0), (xi[2], 1.0)];
        let (n1, n2) = (self.kv_u.len(), self.kv_v.len());
        let mut values = Vec::with_capacity(self.len());
        let mut grads = Vec::with_capacity(self.len());
        for (k, &(lz, dz)) in z.iter().enumerate() {
            for j in 0..n2 {
                for i in 0..n1 {
                    let w = self.weights[i + n1 * (j + n2 * k)];
                    let (bu, du) = (d[0].rows[0][i], d[0].rows[1][i]);
                    let (bv, dv) = (d[1].rows[0][j], d[1].rows[1][j]);
                    values.push(w * bu * bv * lz);
                    grads.push([w * du * bv * lz, w * bu * dv * lz, w * bu * bv * dz]);
                }
            }
        }
        Ok((values, grads))
    }

    /// `W★(ξ)`.
    pub fn weight_function(&self, xi: [f64; 3]) -> Result<f64> {
        Ok(self.weighted_basis(xi)?.0.iter().sum())
    }

    pub fn eval(&self, xi: [f64; 3]) -> Result<ExtrudedEval> {
        let (n, dn) = self.weighted_basis(xi)?;
        let w: f64 = n.iter().sum();
        let dw: [f64; 3] = std::array::from_fn(|d| dn.iter().map(|g| g[d]).sum());
        let mut num = Vec3::zeros();
        let mut dnum = [Vec3::zeros(); 3];
        for (l, c) in self.control.iter().enumerate() {
            num += c * n[l];
            for d in 0..3 {
                dnum[d] += c * dn[l][d];
            }
        }
        let point = num / w;
        let cols: [Vec3; 3] = std::array::from_fn(|d| (dnum[d] - point * dw[d]) / w);
        Ok(ExtrudedEval { point, jacobian: Matrix3::from_columns(&cols), weight: w })
    }

    /// Newton inversion of `S★` from the centre of the parametric cube.
    pub fn invert(&self, x: &Vec3) -> Result<[f64; 3]> {
        let mut xi = [0.5, 0.5, 0.5];
        let tol = 1e-12 * (1.0 + x.norm());
        for it in 0..60 {
            let e = self.eval(xi)?;
            let r = e.point - x;
            if r.norm() <= tol {
                return Ok(xi);
            }
            let step = e
                .jacobian
                .lu()
                .solve(&r)
                .ok_or(Error::PointLocation { iterations: it, residual: r.norm() })?;
            let mut lambda = 1.0;
            loop {
                let trial: [f64; 3] = std::array::from_fn(|d| (xi[d] - lambda * step[d]).clamp(0.0, 1.0));
                let rt = (self.eval(trial)?.point - x).norm();
                if rt < r.norm() || lambda < 1e-3 {
                    xi = trial;
                    break;
                }
                lambda *= 0.5;
            }
        }
        let residual = (self.eval(xi)?.point - x).norm();
        if residual <= 1e-9 * (1.0 + x.norm()) {
            return Ok(xi);
        }
        Err(Error::PointLocation { iterations: 60, residual })
    }

    /// `Π_p(W★ (v ∘ S★)) / W★` pushed forward by `S★`.
    pub fn project(&self, v: impl Fn(&Vec3) -> f64) -> Result<NurbsProjection<'_>> {
        let mut err = None;
        let coefficients = spline_interpolate(&self.knot_vectors(), |xi| {
            let xi = [xi[0], xi[1], xi[2]];
            match self.eval(xi) {
                Ok(e) => e.weight * v(&e.point),
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(NurbsProjection { space: self, coefficients })
    }
}

/// Result of [`ExtrudedNurbsSpace::project`].
#[derive(Debug, Clone)]
pub struct NurbsProjection<'a> {
    space: &'a ExtrudedNurbsSpace,
    pub coefficients: Vec<f64>,
}

impl NurbsProjection<'_> {
    pub fn eval_param(&self, xi: [f64; 3]) -> Result<f64> {
        let num = eval_tensor_spline(&self.space.knot_vectors(), &self.coefficients, &xi)?;
        Ok(num / self.space.weight_function(xi)?)
    }

    pub fn eval_physical(&self, x: &Vec3) -> Result<f64> {
        self.eval_param(self.space.invert(x)?)
    }
}

/// Region a Lagrange interpolant or an error norm is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Interior,
    BoundaryLayer,
    All,
}

impl Region {
    fn contains(self, kind: ElementKind) -> bool {
        match (self, kind) {
            (Region::All, _) => true,
            (Region::Interior, ElementKind::Interior) => true,
            (Region::BoundaryLayer, ElementKind::Boundary { .. }) => true,
            _ => false,
        }
    }
}

/// Piecewise trilinear vertex interpolant in element reference coordinates;
/// on boundary elements the curved-face corners are the patch-cell corner images.
#[derive(Debug, Clone)]
pub struct LagrangeInterpolant {
    pub node_values: Vec<f64>,
    region: Region,
}

pub fn lagrange_interpolate(mesh: &HybridMesh, region: Region, v: impl Fn(&Vec3) -> f64) -> LagrangeInterpolant {
    let mut node_values = vec![f64::NAN; mesh.nodes().len()];
    for elem in mesh.elements().iter().filter(|e| region.contains(e.kind)) {
        for &n in &elem.vertices {
            node_values[n] = v(&mesh.nodes()[n]);
        }
    }
    LagrangeInterpolant { node_values, region }
}

impl LagrangeInterpolant {
    pub fn eval(&self, mesh: &HybridMesh, element: usize, xhat: [f64; 3]) -> Result<f64> {
        let elem = mesh.element(element);
        if !self.region.contains(elem.kind) {
            return Err(Error::WrongElementKind { element, expected: "element inside the interpolation region" });
        }
        let (n, _) = q1_shape(xhat);
        Ok(elem.vertices.iter().zip(n).map(|(&v, s)| self.node_values[v] * s).sum())
    }
}

/// `Π₁^B v` at a point of the curved face given by patch parameters.
fn boundary_lagrange_at(mesh: &HybridMesh, u: f64, v: f64, values: impl Fn(usize) -> f64) -> Result<f64> {
    let bezier = mesh.bezier_mesh();
    let e = mesh
        .boundary_elements()
        .find(|&e| {
            let c = mesh.cell(e).expect("boundary element");
            (c.u[0]..=c.u[1]).contains(&u) && (c.v[0]..=c.v[1]).contains(&v)
        })
        .ok_or_else(|| Error::Domain(format!("({u}, {v}) not in any of the {} cells", bezier.cells.len())))?;
    let c = mesh.cell(e)?;
    let a = (u - c.u[0]) / c.width_u();
    let b = (v - c.v[0]) / c.width_v();
    let x = mesh.element(e).vertices;
    Ok(values(x[0]) * (1.0 - a) * (1.0 - b) + values(x[1]) * a * (1.0 - b) + values(x[2]) * a * b + values(x[3]) * (1.0 - a) * b)
}

/// Hybrid interpolant in DOF form on the global numbering: Greville DOFs get
/// `a v(x_j) + b Π₁^B v(x_j)` and interface vertices get `v(X)`. Vertex DOFs
/// of the interior are left at zero.
pub fn hybrid_interpolate(mesh: &HybridMesh, dofs: &DofMap, zeta_tilde: f64, v: impl Fn(&Vec3) -> f64) -> Result<Vec<f64>> {
    let (a, b) = blend_coefficients(zeta_tilde)?;
    let mut coefficients = vec![0.0; dofs.n_global()];
    let node_value = |n: usize| v(&mesh.nodes()[n]);
    for (d, kind) in dofs.kinds().iter().enumerate() {
        match *kind {
            DofKind::Greville { index } => {
                let x = mesh.basis().greville_images()[index];
                let (u, w) = mesh.basis().greville_params()[index];
                coefficients[d] = a * v(&x) + b * boundary_lagrange_at(mesh, u, w, node_value)?;
            }
            DofKind::Vertex { node } if mesh.tags()[node].interface => coefficients[d] = node_value(node),
            DofKind::Vertex { .. } => {}
        }
    }
    Ok(coefficients)
}

/// `Π_h v`: vertex values everywhere off the curved face and the hybrid blend
/// on the Greville DOFs.
pub fn global_interpolate(mesh: &HybridMesh, dofs: &DofMap, zeta_tilde: f64, v: impl Fn(&Vec3) -> f64) -> Result<Vec<f64>> {
    let mut c = hybrid_interpolate(mesh, dofs, zeta_tilde, &v)?;
    for (d, kind) in dofs.kinds().iter().enumerate() {
        if let DofKind::Vertex { node } = *kind {
            c[d] = v(&mesh.nodes()[node]);
        }
    }
    Ok(c)
}

/// `L²` error and `H¹` seminorm error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1: f64,
}

/// Gauss orders used for error measurement on interior and boundary elements.
pub const ERROR_ORDER_INTERIOR: usize = 6;
pub const ERROR_ORDER_BOUNDARY: usize = 8;

/// Errors of a discrete function against an exact solution, over-integrated
/// element by element and summed in element order.
pub fn error_norms(
    mesh: &HybridMesh,
    dofs: &DofMap,
    coefficients: &[f64],
    region: Region,
    exact: impl Fn(&Vec3) -> f64 + Sync,
    grad: impl Fn(&Vec3) -> Vec3 + Sync,
) -> Result<ErrorNorms> {
    let interior = gauss_legendre(ERROR_ORDER_INTERIOR, 3)?.to_domain(RefDomain::Unit);
    let boundary = gauss_legendre(ERROR_ORDER_BOUNDARY, 3)?.to_domain(RefDomain::Unit);
    let parts = (0..mesh.elements().len())
        .into_par_iter()
        .map(|e| -> Result<(f64, f64)> {
            let kind = mesh.element(e).kind;
            if !region.contains(kind) {
                return Ok((0.0, 0.0));
            }
            let rule = if mesh.element(e).is_boundary() { &boundary } else { &interior };
            let (mut l2, mut h1) = (0.0, 0.0);
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let g = mesh.geometric_map(e, *q)?;
                let (uh, duh) = eval_discrete(mesh, dofs, coefficients, e, *q)?;
                l2 += w * g.det * (exact(&g.point) - uh).powi(2);
                h1 += w * g.det * (grad(&g.point) - duh).norm_squared();
            }
            Ok((l2, h1))
        })
        .collect::<Result<Vec<_>>>()?;
    let (l2, h1) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    Ok(ErrorNorms { l2: l2.sqrt(), h1: h1.sqrt() })
}

/// `L²` norm of a discrete function over a region.
pub fn discrete_l2_norm(mesh: &HybridMesh, dofs: &DofMap, coefficients: &[f64], region: Region) -> Result<f64> {
    Ok(error_norms(mesh, dofs, coefficients, region, |_| 0.0, |_| Vec3::zeros())?.l2)
}

/// Least-squares slope of `log(error)` against `log(h)` over the last `count` levels.
pub fn fitted_rate(h: &[f64], err: &[f64], count: usize) -> Option<f64> {
    let n = h.len().min(err.len());
    if n < 2 || count < 2 {
        return None;
    }
    let start = n.saturating_sub(count);
    let xs: Vec<f64> = h[start..n].iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = err[start..n].iter().map(|x| x.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
