//! Tensor-product NURBS surface patches, the Greville-interpolatory
//! ("transformed") patch basis, and the meshes attached to a patch.

use nalgebra::{DMatrix, Matrix3x2};

use crate::error::{Error, Result};
use crate::spline::{greville_points, insert_knot, KnotVector};
use crate::Vec3;

/// Failure threshold on the 1-norm condition number of the transformation matrix.
pub const MAX_TRANSFORM_CONDITION: f64 = 1e12;

/// Samples per Bezier cell and direction used to check `W > 0`.
const WEIGHT_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct NurbsPatch {
    kv_u: KnotVector,
    kv_v: KnotVector,
    /// Control points, index `i + n1 * j`.
    control: Vec<Vec3>,
    weights: Vec<f64>,
}

/// Nonzero rational basis functions at one parameter point.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Full-length rational basis values, with first derivatives when requested.
#[derive(Debug, Clone)]
pub struct PatchBasisEval {
    pub values: Vec<f64>,
    pub derivatives: Option<(Vec<f64>, Vec<f64>)>,
}

impl NurbsPatch {
    pub fn new(kv_u: KnotVector, kv_v: KnotVector, control: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        let n = kv_u.len() * kv_v.len();
        if control.len() != n || weights.len() != n {
            return Err(Error::Shape(format!(
                "{}x{} basis needs {n} control points and weights, got {} and {}",
                kv_u.len(),
                kv_v.len(),
                control.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidPatch(format!("weight {w} is not positive")));
        }
        if control.iter().any(|c| !c.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidPatch("non-finite control point".into()));
        }
        let patch = Self { kv_u, kv_v, control, weights };
        patch.check_weight_function()?;
        Ok(patch)
    }

    fn check_weight_function(&self) -> Result<()> {
        let bu = self.kv_u.breakpoints();
        let bv = self.kv_v.breakpoints();
        for su in bu.windows(2) {
            for sv in bv.windows(2) {
                for a in 0..=WEIGHT_SAMPLES {
                    for b in 0..=WEIGHT_SAMPLES {
                        let u = su[0] + (su[1] - su[0]) * a as f64 / WEIGHT_SAMPLES as f64;
                        let v = sv[0] + (sv[1] - sv[0]) * b as f64 / WEIGHT_SAMPLES as f64;
                        let w = self.weight_function(u, v);
                        if !(w > 0.0) {
                            return Err(Error::InvalidPatch(format!("W({u}, {v}) = {w} is not positive")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kv_u(&self) -> &KnotVector {
        &self.kv_u
    }

    pub fn kv_v(&self) -> &KnotVector {
        &self.kv_v
    }

    pub fn n_u(&self) -> usize {
        self.kv_u.len()
    }

    pub fn n_v(&self) -> usize {
        self.kv_v.len()
    }

    /// Number of control points.
    pub fn n_cp(&self) -> usize {
        self.control.len()
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n_u() * j
    }

    fn check_param(u: f64, v: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("({u}, {v}) outside [0, 1]^2")));
        }
        Ok(())
    }

    /// `W(u, v) = Σ w_ij B_i(u) B_j(v)`.
    pub fn weight_function(&self, u: f64, v: f64) -> f64 {
        let (p, q) = (self.kv_u.degree(), self.kv_v.degree());
        let (su, bu) = self.kv_u.span_basis(u);
        let (sv, bv) = self.kv_v.span_basis(v);
        let mut w = 0.0;
        for (b, &vb) in bv.iter().enumerate() {
            for (a, &ub) in bu.iter().enumerate() {
                w += ub * vb * self.weights[self.index(su - p + a, sv - q + b)];
            }
        }
        w
    }

    /// Nonzero rational basis functions (and their parametric gradients) at `(u, v)`.
    pub fn local_basis(&self, u: f64, v: f64) -> Result<LocalBasis> {
        Self::check_param(u, v)?;
        let (p, q) = (self.kv_u.degree(), self.kv_v.degree());
        let (su, du) = self.kv_u.span_derivs(u, 1);
        let (sv, dv) = self.kv_v.span_derivs(v, 1);
        let count = (p + 1) * (q + 1);
        let mut indices = Vec::with_capacity(count);
        let mut n = Vec::with_capacity(count);
        let mut nu = Vec::with_capacity(count);
        let mut nv = Vec::with_capacity(count);
        for b in 0..=q {
            for a in 0..=p {
                let idx = self.index(su - p + a, sv - q + b);
                let w = self.weights[idx];
                indices.push(idx);
                n.push(w * du[0][a] * dv[0][b]);
                nu.push(w * du.get(1).map_or(0.0, |r| r[a]) * dv[0][b]);
                nv.push(w * du[0][a] * dv.get(1).map_or(0.0, |r| r[b]));
            }
        }
        let w: f64 = n.iter().sum();
        if !(w > 0.0) {
            return Err(Error::InvalidPatch(format!("W({u}, {v}) = {w} is not positive")));
        }
        let wu: f64 = nu.iter().sum();
        let wv: f64 = nv.iter().sum();
        let values: Vec<f64> = n.iter().map(|x| x / w).collect();
        let du = nu.iter().zip(&n).map(|(a, b)| (a * w - b * wu) / (w * w)).collect();
        let dv = nv.iter().zip(&n).map(|(a, b)| (a * w - b * wv) / (w * w)).collect();
        Ok(LocalBasis { indices, values, du, dv })
    }

    pub fn eval_basis(&self, u: f64, v: f64, with_derivatives: bool) -> Result<PatchBasisEval> {
        let local = self.local_basis(u, v)?;
        let n = self.n_cp();
        let mut values = vec![0.0; n];
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        for (k, &idx) in local.indices.iter().enumerate() {
            values[idx] = local.values[k];
            du[idx] = local.du[k];
            dv[idx] = local.dv[k];
        }
        Ok(PatchBasisEval { values, derivatives: with_derivatives.then_some((du, dv)) })
    }

    pub fn eval_surface(&self, u: f64, v: f64) -> Result<Vec3> {
        let local = self.local_basis(u, v)?;
        Ok(local.indices.iter().zip(&local.values).map(|(&i, &r)| self.control[i] * r).sum())
    }

    /// Columns are `∂S/∂u` and `∂S/∂v`.
    pub fn eval_surface_jacobian(&self, u: f64, v: f64) -> Result<Matrix3x2<f64>> {
        let local = self.local_basis(u, v)?;
        let mut j = Matrix3x2::zeros();
        for (k, &i) in local.indices.iter().enumerate() {
            let c = self.control[i];
            for d in 0..3 {
                j[(d, 0)] += c[d] * local.du[k];
                j[(d, 1)] += c[d] * local.dv[k];
            }
        }
        Ok(j)
    }

    /// Inserts `u` once into the first parametric direction.
    pub fn insert_knot_u(&self, u: f64) -> Result<Self> {
        let (n1, n2) = (self.n_u(), self.n_v());
        let mut new_kv = None;
        let mut control = vec![Vec3::zeros(); (n1 + 1) * n2];
        let mut weights = vec![0.0; (n1 + 1) * n2];
        for j in 0..n2 {
            let pts: Vec<[f64; 3]> = (0..n1).map(|i| self.control[self.index(i, j)].into()).collect();
            let ws: Vec<f64> = (0..n1).map(|i| self.weights[self.index(i, j)]).collect();
            let (kv, np, nw) = insert_knot(&self.kv_u, &pts, &ws, u)?;
            for i in 0..=n1 {
                control[i + (n1 + 1) * j] = Vec3::from(np[i]);
                weights[i + (n1 + 1) * j] = nw[i];
            }
            new_kv = Some(kv);
        }
        Self::new(new_kv.expect("patch has at least one row"), self.kv_v.clone(), control, weights)
    }

    /// Inserts `v` once into the second parametric direction.
    pub fn insert_knot_v(&self, v: f64) -> Result<Self> {
        self.transposed().insert_knot_u(v).map(|p| p.transposed())
    }

    fn transposed(&self) -> Self {
        let (n1, n2) = (self.n_u(), self.n_v());
        let mut control = Vec::with_capacity(n1 * n2);
        let mut weights = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                control.push(self.control[self.index(i, j)]);
                weights.push(self.weights[self.index(i, j)]);
            }
        }
        Self { kv_u: self.kv_v.clone(), kv_v: self.kv_u.clone(), control, weights }
    }

    /// Splits every Bezier cell in half in both directions by inserting the
    /// span midpoints.
    pub fn refine_uniform(&self) -> Result<Self> {
        let mut patch = self.clone();
        for s in self.kv_u.breakpoints().windows(2) {
            patch = patch.insert_knot_u(0.5 * (s[0] + s[1]))?;
        }
        for s in self.kv_v.breakpoints().windows(2) {
            patch = patch.insert_knot_v(0.5 * (s[0] + s[1]))?;
        }
        Ok(patch)
    }

    /// Greville abscissae per direction.
    pub fn greville_params(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            greville_points(&self.kv_u)?.points().to_vec(),
            greville_points(&self.kv_v)?.points().to_vec(),
        ))
    }

    pub fn bezier_mesh(&self) -> BezierMesh {
        let bu = self.kv_u.breakpoints();
        let bv = self.kv_v.breakpoints();
        let mut cells = Vec::new();
        for sv in bv.windows(2) {
            for su in bu.windows(2) {
                cells.push(BezierCell { u: [su[0], su[1]], v: [sv[0], sv[1]] });
            }
        }
        BezierMesh { cells, cells_u: bu.len() - 1, cells_v: bv.len() - 1 }
    }

    pub fn greville_mesh(&self) -> Result<GrevilleMesh2D> {
        let (gu, gv) = self.greville_params()?;
        Ok(GrevilleMesh2D { gu, gv })
    }

    /// Piecewise-bilinear interpolant of the control net over the Greville grid.
    pub fn control_mesh_eval(&self, u: f64, v: f64) -> Result<Vec3> {
        Self::check_param(u, v)?;
        let (gu, gv) = self.greville_params()?;
        let (iu, tu) = hat_interval(&gu, u);
        let (iv, tv) = hat_interval(&gv, v);
        let c = |i, j| self.control[self.index(i, j)];
        Ok(c(iu, iv) * ((1.0 - tu) * (1.0 - tv))
            + c(iu + 1, iv) * (tu * (1.0 - tv))
            + c(iu + 1, iv + 1) * (tu * tv)
            + c(iu, iv + 1) * ((1.0 - tu) * tv))
    }

    /// Largest distance between two control points, a cheap diameter bound.
    pub fn diameter(&self) -> f64 {
        let mut lo = self.control[0];
        let mut hi = self.control[0];
        for c in &self.control {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        (hi - lo).norm()
    }
}

/// Interval `[g_i, g_{i+1}]` containing `x` and the local coordinate in it.
fn hat_interval(g: &[f64], x: f64) -> (usize, f64) {
    let i = (g.partition_point(|&gi| gi <= x).max(1) - 1).min(g.len() - 2);
    (i, (x - g[i]) / (g[i + 1] - g[i]))
}

/// One parameter rectangle of the Bezier mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierCell {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl BezierCell {
    /// Affine pull-back `[0,1]^2 -> cell`.
    pub fn to_param(&self, alpha: f64, beta: f64) -> (f64, f64) {
        (self.u[0] + alpha * self.width_u(), self.v[0] + beta * self.width_v())
    }

    pub fn width_u(&self) -> f64 {
        self.u[1] - self.u[0]
    }

    pub fn width_v(&self) -> f64 {
        self.v[1] - self.v[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BezierMesh {
    /// Cells ordered with the `u` index running fastest.
    pub cells: Vec<BezierCell>,
    pub cells_u: usize,
    pub cells_v: usize,
}

impl BezierMesh {
    pub fn cell(&self, iu: usize, iv: usize) -> &BezierCell {
        &self.cells[iu + self.cells_u * iv]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrevilleMesh2D {
    pub gu: Vec<f64>,
    pub gv: Vec<f64>,
}

impl GrevilleMesh2D {
    /// Greville points in patch order `k = i + n1 * j`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.gv.iter().flat_map(|&v| self.gu.iter().map(move |&u| (u, v))).collect()
    }

    pub fn len(&self) -> usize {
        self.gu.len() * self.gv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The patch basis re-expressed so that it interpolates at the images of
/// the Greville points: `R̂ = T⁻¹ R` with `T_ij = R_i(γ_j)`, and control
/// points `Ĉ = Tᵗ C` (which coincide with the Greville images).
#[derive(Debug, Clone)]
pub struct TransformedPatchBasis {
    patch: NurbsPatch,
    transform: DMatrix<f64>,
    inverse: DMatrix<f64>,
    condition: f64,
    greville_params: Vec<(f64, f64)>,
    greville_images: Vec<Vec3>,
    transformed_points: Vec<Vec3>,
}

/// Transformed basis values at one point, full length `n_cp`.
#[derive(Debug, Clone)]
pub struct TransformedEval {
    pub values: Vec<f64>,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

impl TransformedPatchBasis {
    pub fn build(patch: &NurbsPatch) -> Result<Self> {
        let greville_params = patch.greville_mesh()?.points();
        let n = patch.n_cp();
        let mut transform = DMatrix::zeros(n, n);
        for (j, &(u, v)) in greville_params.iter().enumerate() {
            let local = patch.local_basis(u, v)?;
            for (k, &i) in local.indices.iter().enumerate() {
                transform[(i, j)] = local.values[k];
            }
        }
        let lu = transform.clone().lu();
        let inverse = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("basis transformation matrix".into()))?;
        let condition = one_norm(&transform) * one_norm(&inverse);
        if !(condition <= MAX_TRANSFORM_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let greville_images = greville_params
            .iter()
            .map(|&(u, v)| patch.eval_surface(u, v))
            .collect::<Result<Vec<_>>>()?;
        let transformed_points = (0..n)
            .map(|m| (0..n).map(|i| patch.control[i] * transform[(i, m)]).sum())
            .collect();
        Ok(Self {
            patch: patch.clone(),
            transform,
            inverse,
            condition,
            greville_params,
            greville_images,
            transformed_points,
        })
    }

    pub fn patch(&self) -> &NurbsPatch {
        &self.patch
    }

    pub fn n_cp(&self) -> usize {
        self.patch.n_cp()
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn inverse_transform(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// 1-norm condition number of `T`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn greville_params(&self) -> &[(f64, f64)] {
        &self.greville_params
    }

    pub fn greville_images(&self) -> &[Vec3] {
        &self.greville_images
    }

    pub fn transformed_points(&self) -> &[Vec3] {
        &self.transformed_points
    }

    /// `R̂(u, v)` and its parametric gradient.
    pub fn eval(&self, u: f64, v: f64) -> Result<TransformedEval> {
        let local = self.patch.local_basis(u, v)?;
        let n = self.n_cp();
        let mut values = vec![0.0; n];
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        for (k, &l) in local.indices.iter().enumerate() {
            let col = self.inverse.column(l);
            let (r, ru, rv) = (local.values[k], local.du[k], local.dv[k]);
            for (i, &t) in col.iter().enumerate() {
                values[i] += t * r;
                du[i] += t * ru;
                dv[i] += t * rv;
            }
        }
        Ok(TransformedEval { values, du, dv })
    }

    /// Surface point through the transformed representation `Σ R̂_i Ĉ_i`.
    pub fn eval_surface(&self, u: f64, v: f64) -> Result<Vec3> {
        let e = self.eval(u, v)?;
        Ok(e.values.iter().zip(&self.transformed_points).map(|(&r, c)| c * r).sum())
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}
