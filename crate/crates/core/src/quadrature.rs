//! Quadrature rules: tensor Gauss-Legendre, Greville moment fitting, and the
//! hybrid Greville/Gauss rule used on boundary-layer elements.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::HybridMesh;
use crate::patch::NurbsPatch;
use crate::space::HybridLocalBasis;
use crate::spline::{bspline_moment, greville_points, KnotVector};
use crate::Vec3;

/// Reference domain a rule lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefDomain {
    /// `[-1, 1]^d`
    Symmetric,
    /// `[0, 1]^d`
    Unit,
}

/// How a rule was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Gauss,
    Greville,
    Hybrid,
    /// Hybrid rule seeded with a two-point Gauss datum (`2n` points).
    Hybrid2,
    /// Hybrid points without the final normalization. Diagnostic only.
    HybridUnnormalized,
}

impl RuleKind {
    pub fn tag(self) -> &'static str {
        match self {
            RuleKind::Gauss => "gauss",
            RuleKind::Greville => "greville",
            RuleKind::Hybrid => "hybrid",
            RuleKind::Hybrid2 => "hybrid2",
            RuleKind::HybridUnnormalized => "diagnostic_no_normalize",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub dim: usize,
    /// Coordinates beyond `dim` are zero.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub domain: RefDomain,
    pub kind: RuleKind,
    /// Euclidean least-squares residual `‖Aw − b‖` for fitted rules.
    pub residual: Option<f64>,
    /// Relative residual `‖Aw − b‖ / ‖b‖` for fitted rules.
    pub relative_residual: Option<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn has_negative_weights(&self) -> bool {
        self.weights.iter().any(|&w| w < 0.0)
    }

    /// Applies the rule to `f`.
    pub fn integrate(&self, mut f: impl FnMut(&[f64; 3]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    /// Re-expresses a rule on `[0,1]^d` through `G(v) = 2v − 1`, or the reverse.
    pub fn to_domain(&self, domain: RefDomain) -> QuadRule {
        if domain == self.domain {
            return self.clone();
        }
        let d = self.dim;
        let (map, scale): (fn(f64) -> f64, f64) = match domain {
            RefDomain::Symmetric => (|x| 2.0 * x - 1.0, 2f64.powi(d as i32)),
            RefDomain::Unit => (|x| 0.5 * (x + 1.0), 0.5f64.powi(d as i32)),
        };
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = [0.0; 3];
                for k in 0..d {
                    q[k] = map(p[k]);
                }
                q
            })
            .collect();
        QuadRule {
            points,
            weights: self.weights.iter().map(|w| w * scale).collect(),
            domain,
            ..self.clone()
        }
    }
}

/// One-dimensional Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre_1d(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=20).contains(&n) {
        return Err(Error::Parameter(format!("Gauss-Legendre order {n} outside 1..=20")));
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    Ok((x, w))
}

/// Tensor-product Gauss-Legendre rule with `n` points per direction on `[-1, 1]^d`.
pub fn gauss_legendre(n: usize, d: usize) -> Result<QuadRule> {
    gauss_legendre_aniso(&vec![n; d])
}

/// Tensor Gauss-Legendre rule with a per-direction point count.
pub fn gauss_legendre_aniso(orders: &[usize]) -> Result<QuadRule> {
    let d = orders.len();
    if !(1..=3).contains(&d) {
        return Err(Error::Parameter(format!("dimension {d} outside 1..=3")));
    }
    let rules = orders.iter().map(|&n| gauss_legendre_1d(n)).collect::<Result<Vec<_>>>()?;
    let (points, weights) = tensor(&rules);
    Ok(QuadRule {
        dim: d,
        points,
        weights,
        domain: RefDomain::Symmetric,
        kind: RuleKind::Gauss,
        residual: None,
        relative_residual: None,
    })
}

/// Tensor product of 1D rules, first direction running fastest.
fn tensor(rules: &[(Vec<f64>, Vec<f64>)]) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut points = vec![[0.0; 3]];
    let mut weights = vec![1.0];
    for (dir, (x, w)) in rules.iter().enumerate() {
        let mut np = Vec::with_capacity(points.len() * x.len());
        let mut nw = Vec::with_capacity(points.len() * x.len());
        for (xi, wi) in x.iter().zip(w) {
            for (p, pw) in points.iter().zip(&weights) {
                let mut q = *p;
                q[dir] = *xi;
                np.push(q);
                nw.push(pw * wi);
            }
        }
        points = np;
        weights = nw;
    }
    (points, weights)
}

/// Greville moment-fitted rule for the spline space of `kv`, on `[0, 1]`.
///
/// Points are the Greville abscissae; weights solve the square system
/// `Σ_i w_i N_j(γ_i) = ∫ N_j`, so every spline in the space is integrated exactly.
/// The rule is flagged when any weight comes out negative.
pub fn greville_weights(kv: &KnotVector) -> Result<QuadRule> {
    let system = MomentSystem::greville(kv)?;
    let lu = system.collocation.clone().lu();
    let weights = lu
        .solve(&system.moments)
        .ok_or_else(|| Error::Singular("Greville collocation matrix".into()))?;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Singular("Greville collocation matrix".into()));
    }
    let points = greville_points(kv)?.points().iter().map(|&g| [g, 0.0, 0.0]).collect();
    let residual = (&system.collocation * &weights - &system.moments).norm();
    Ok(QuadRule {
        dim: 1,
        points,
        weights: weights.iter().copied().collect(),
        domain: RefDomain::Unit,
        kind: RuleKind::Greville,
        residual: Some(residual),
        relative_residual: Some(residual / system.moments.norm()),
    })
}

/// Moment-fitting system `A w = b`.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    /// `A[j, i] = N_j(x_i)`: one row per basis function, one column per point.
    pub collocation: DMatrix<f64>,
    pub moments: DVector<f64>,
}

impl MomentSystem {
    /// Square Greville system for the univariate space of `kv`.
    pub fn greville(kv: &KnotVector) -> Result<Self> {
        let g = greville_points(kv)?;
        let n = kv.len();
        let p = kv.degree();
        let mut collocation = DMatrix::zeros(n, n);
        for (i, &x) in g.points().iter().enumerate() {
            let (span, b) = kv.span_basis(x);
            for (r, &v) in b.iter().enumerate() {
                collocation[(span - p + r, i)] = v;
            }
        }
        let moments = DVector::from_iterator(n, (0..n).map(|j| bspline_moment(kv, j).expect("index in range")));
        Ok(Self { collocation, moments })
    }
}

/// Gauss datum the Greville points are blended with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussDatum {
    /// In-plane position on `[-1, 1]^2`; the datum sits on the face `ζ = 1`.
    pub xy: [f64; 2],
    /// Two-dimensional weight `w`; the in-plane blend uses `√w`.
    pub weight: f64,
}

impl GaussDatum {
    /// The one-point rule `(0, 0)` with weight 4.
    pub fn one_point() -> Vec<Self> {
        vec![GaussDatum { xy: [0.0, 0.0], weight: 4.0 }]
    }

    /// Two diagonal Gauss points `±(1/√3, 1/√3)` with weight 2 each.
    pub fn two_point() -> Vec<Self> {
        let g = 1.0 / 3f64.sqrt();
        vec![GaussDatum { xy: [-g, -g], weight: 2.0 }, GaussDatum { xy: [g, g], weight: 2.0 }]
    }
}

/// Blends tensor Greville data (lifted to `ζ = −1`) with each Gauss datum
/// (at `ζ = 1`) and, when `normalize` is set, projects onto the unit sphere.
///
/// Greville rules may be given on either domain; output points live on
/// `[-1, 1]^3`, ordered datum-major then `v`, then `u` fastest.
pub fn hybrid_points(greville_u: &QuadRule, greville_v: &QuadRule, datum: &[GaussDatum], normalize: bool) -> Result<Vec<[f64; 3]>> {
    let gu = greville_u.to_domain(RefDomain::Symmetric);
    let gv = greville_v.to_domain(RefDomain::Symmetric);
    let mut out = Vec::with_capacity(datum.len() * gu.len() * gv.len());
    for d in datum {
        let s = d.weight.sqrt();
        for (pv, &wv) in gv.points.iter().zip(&gv.weights) {
            for (pu, &wu) in gu.points.iter().zip(&gu.weights) {
                let wij = wu * wv;
                let q = [
                    (d.xy[0] * s + pu[0] * wu) / (s + wu),
                    (d.xy[1] * s + pv[0] * wv) / (s + wv),
                    (d.weight - wij) / (d.weight + wij),
                ];
                if normalize {
                    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                    if norm < 1e-12 {
                        return Err(Error::DegeneratePoint { norm });
                    }
                    out.push(q.map(|c| c / norm));
                } else {
                    out.push(q);
                }
            }
        }
    }
    Ok(out)
}

/// Order of the tensor Gauss rule used for the exact moments, per direction
/// `(α, β, ζ)`. The hybrid functions are linear in `ζ`.
pub const MOMENT_ORDER: [usize; 3] = [12, 12, 2];

impl MomentSystem {
    /// Overdetermined system for the hybrid functions of a boundary element:
    /// `A[k, l] = Ñ_k(q_l)` for points on `[-1, 1]^3` and `b_k = ∫_{[-1,1]^3} Ñ_k`.
    pub fn hybrid(basis: &HybridLocalBasis<'_>, points: &[[f64; 3]]) -> Result<Self> {
        Self::hybrid_with_order(basis, points, MOMENT_ORDER)
    }

    pub fn hybrid_with_order(basis: &HybridLocalBasis<'_>, points: &[[f64; 3]], order: [usize; 3]) -> Result<Self> {
        let m = basis.len();
        let mut collocation = DMatrix::zeros(m, points.len());
        for (l, q) in points.iter().enumerate() {
            let e = basis.eval(q.map(|c| 0.5 * (c + 1.0)))?;
            for k in 0..m {
                collocation[(k, l)] = e.values[k];
            }
        }
        let oracle = gauss_legendre_aniso(&order)?.to_domain(RefDomain::Unit);
        let mut moments = DVector::zeros(m);
        for (p, w) in oracle.points.iter().zip(&oracle.weights) {
            let e = basis.eval(*p)?;
            for k in 0..m {
                moments[k] += 8.0 * w * e.values[k];
            }
        }
        Ok(Self { collocation, moments })
    }

    /// Least-squares weights through an SVD, with residual `‖Aw − b‖`.
    ///
    /// Unless `min_norm` is set, `A` must have full column rank so the
    /// weights are unique; with `min_norm` the minimum-norm minimizer is
    /// returned whatever the rank.
    pub fn least_squares(&self, min_norm: bool) -> Result<(DVector<f64>, f64)> {
        let n = self.collocation.ncols();
        let svd = self.collocation.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let eps = 1e-12 * smax.max(f64::MIN_POSITIVE);
        let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
        if rank < n && !min_norm {
            return Err(Error::RankDeficient { rank, cols: n });
        }
        let w = svd.solve(&self.moments, eps).map_err(|e| Error::Singular(e.to_string()))?;
        let residual = (&self.collocation * &w - &self.moments).norm();
        Ok((w, residual))
    }
}

/// Least-squares hybrid weights for given points (on `[-1, 1]^3`).
pub fn hybrid_weights(points: Vec<[f64; 3]>, basis: &HybridLocalBasis<'_>, kind: RuleKind) -> Result<QuadRule> {
    let system = MomentSystem::hybrid(basis, &points)?;
    // the two-point variant has more points than the element space has dimensions
    let (w, residual) = system.least_squares(kind == RuleKind::Hybrid2)?;
    Ok(QuadRule {
        dim: 3,
        points,
        weights: w.iter().copied().collect(),
        domain: RefDomain::Symmetric,
        kind,
        residual: Some(residual),
        relative_residual: Some(residual / system.moments.norm()),
    })
}

/// Greville rule of one Bezier cell of degree `p`, i.e. of `{0^{p+1}, 1^{p+1}}`.
pub fn cell_greville_rule(p: usize) -> Result<QuadRule> {
    let mut knots = vec![0.0; p + 1];
    knots.extend(vec![1.0; p + 1]);
    greville_weights(&KnotVector::new(knots, p)?)
}

/// Complete hybrid rule of a boundary element, on `[-1, 1]^3`.
pub fn hybrid_rule(mesh: &HybridMesh, element: usize, kind: RuleKind) -> Result<QuadRule> {
    let basis = HybridLocalBasis::new(mesh, element)?;
    let patch = mesh.patch();
    let gu = cell_greville_rule(patch.kv_u().degree())?;
    let gv = cell_greville_rule(patch.kv_v().degree())?;
    let (datum, normalize) = match kind {
        RuleKind::Hybrid => (GaussDatum::one_point(), true),
        RuleKind::Hybrid2 => (GaussDatum::two_point(), true),
        RuleKind::HybridUnnormalized => (GaussDatum::one_point(), false),
        RuleKind::Gauss | RuleKind::Greville => {
            return Err(Error::Parameter(format!("{} is not a hybrid rule", kind.tag())))
        }
    };
    let points = hybrid_points(&gu, &gv, &datum, normalize)?;
    hybrid_weights(points, &basis, kind)
}

/// Rule used on boundary elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryQuadrature {
    Hybrid,
    Hybrid2,
    /// Hybrid points without normalization. Diagnostic only.
    HybridUnnormalized,
    /// Tensor Gauss-Legendre with `n` points per direction.
    Gauss(usize),
}

impl BoundaryQuadrature {
    pub fn tag(self) -> String {
        match self {
            BoundaryQuadrature::Hybrid => RuleKind::Hybrid.tag().into(),
            BoundaryQuadrature::Hybrid2 => RuleKind::Hybrid2.tag().into(),
            BoundaryQuadrature::HybridUnnormalized => RuleKind::HybridUnnormalized.tag().into(),
            BoundaryQuadrature::Gauss(n) => format!("gauss{n}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hybrid" => Some(BoundaryQuadrature::Hybrid),
            "hybrid2" => Some(BoundaryQuadrature::Hybrid2),
            "diagnostic_no_normalize" => Some(BoundaryQuadrature::HybridUnnormalized),
            _ => s
                .strip_prefix("gauss")
                .and_then(|n| n.parse().ok())
                .filter(|n| (1..=20).contains(n))
                .map(BoundaryQuadrature::Gauss),
        }
    }
}

/// One rule per element, all on `[0, 1]^3`.
#[derive(Debug, Clone)]
pub struct ElementRules {
    rules: Vec<QuadRule>,
    mode: BoundaryQuadrature,
}

impl ElementRules {
    /// Gauss `2^3` on interior elements and `mode` on boundary elements.
    pub fn build(mesh: &HybridMesh, mode: BoundaryQuadrature) -> Result<Self> {
        Self::build_with_interior(mesh, mode, 2)
    }

    pub fn build_with_interior(mesh: &HybridMesh, mode: BoundaryQuadrature, interior_order: usize) -> Result<Self> {
        let interior = gauss_legendre(interior_order, 3)?.to_domain(RefDomain::Unit);
        let rules = (0..mesh.elements().len())
            .into_par_iter()
            .map(|e| {
                if !mesh.element(e).is_boundary() {
                    return Ok(interior.clone());
                }
                let rule = match mode {
                    BoundaryQuadrature::Gauss(n) => gauss_legendre(n, 3)?,
                    BoundaryQuadrature::Hybrid => hybrid_rule(mesh, e, RuleKind::Hybrid)?,
                    BoundaryQuadrature::Hybrid2 => hybrid_rule(mesh, e, RuleKind::Hybrid2)?,
                    BoundaryQuadrature::HybridUnnormalized => hybrid_rule(mesh, e, RuleKind::HybridUnnormalized)?,
                };
                Ok(rule.to_domain(RefDomain::Unit))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rules, mode })
    }

    pub fn rule(&self, element: usize) -> &QuadRule {
        &self.rules[element]
    }

    pub fn mode(&self) -> BoundaryQuadrature {
        self.mode
    }

    /// Largest relative least-squares residual over the boundary elements.
    pub fn max_relative_residual(&self) -> Option<f64> {
        self.rules.iter().filter_map(|r| r.relative_residual).reduce(f64::max)
    }
}

/// `Σ f(F(q)) w |det J_F(q)|` over the element rule.
pub fn integrate_volume(mesh: &HybridMesh, element: usize, rule: &QuadRule, f: impl Fn(&Vec3) -> f64) -> Result<f64> {
    debug_assert_eq!(rule.domain, RefDomain::Unit);
    let mut sum = 0.0;
    for (q, w) in rule.points.iter().zip(&rule.weights) {
        let g = mesh.geometric_map(element, *q)?;
        if !(g.det > 0.0) {
            return Err(Error::InvertedElement { element, det: g.det });
        }
        sum += w * f(&g.point) * g.det;
    }
    Ok(sum)
}

/// Sum of [`integrate_volume`] over all elements, in element order.
pub fn integrate_domain(mesh: &HybridMesh, rules: &ElementRules, f: impl Fn(&Vec3) -> f64 + Sync) -> Result<f64> {
    let parts = (0..mesh.elements().len())
        .into_par_iter()
        .map(|e| integrate_volume(mesh, e, rules.rule(e), &f))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.iter().sum())
}

/// Surface integral over the patch with the tensor Greville rule of its
/// knot vectors and the surface measure `|S_u × S_v|`.
pub fn integrate_surface(patch: &NurbsPatch, f: impl Fn(&Vec3) -> f64) -> Result<f64> {
    let ru = greville_weights(patch.kv_u())?;
    let rv = greville_weights(patch.kv_v())?;
    let scale = patch.diameter().powi(2);
    let mut sum = 0.0;
    for (pv, wv) in rv.points.iter().zip(&rv.weights) {
        for (pu, wu) in ru.points.iter().zip(&ru.weights) {
            let (u, v) = (pu[0], pv[0]);
            let j = patch.eval_surface_jacobian(u, v)?;
            let area = j.column(0).cross(&j.column(1)).norm();
            if area <= 1e-14 * scale {
                return Err(Error::SurfaceMeasure { u, v });
            }
            sum += wu * wv * f(&patch.eval_surface(u, v)?) * area;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::spline::eval_bspline_basis;

    #[test]
    fn gauss_examples() {
        let r = gauss_legendre(1, 2).unwrap();
        assert_eq!(r.points, vec![[0.0, 0.0, 0.0]]);
        assert!((r.weights[0] - 4.0).abs() < 1e-15);
        let r = gauss_legendre(2, 1).unwrap();
        let g = 1.0 / 3f64.sqrt();
        assert!((r.points[0][0] + g).abs() < 1e-15 && (r.points[1][0] - g).abs() < 1e-15);
        assert!(r.weights.iter().all(|w| (w - 1.0).abs() < 1e-15));
        assert!(r.integrate(|p| p[0].powi(3)).abs() <= 1e-15);
        assert!(gauss_legendre(0, 1).is_err() && gauss_legendre(21, 1).is_err());
    }

    #[test]
    fn gauss_exact_to_degree_five() {
        let r = gauss_legendre(3, 3).unwrap();
        let moment = |k: i32| if k % 2 == 1 { 0.0 } else { 2.0 / (k + 1) as f64 };
        for a in 0..=5 {
            for b in 0..=5 {
                for c in 0..=5 {
                    let q = r.integrate(|p| p[0].powi(a) * p[1].powi(b) * p[2].powi(c));
                    assert!((q - moment(a) * moment(b) * moment(c)).abs() <= 1e-13);
                }
            }
        }
        let r = gauss_legendre(3, 1).unwrap();
        assert!((r.integrate(|p| p[0].powi(6)) - 2.0 / 7.0).abs() > 1e-3);
    }

    #[test]
    fn greville_single_cell_is_simpson() {
        let r = cell_greville_rule(2).unwrap().to_domain(RefDomain::Symmetric);
        for (p, x) in r.points.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((p[0] - x).abs() <= 1e-13);
        }
        for (w, x) in r.weights.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert!((w - x).abs() <= 1e-13);
        }
    }

    #[test]
    fn greville_exact_on_its_span() {
        let kvs = [
            KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap(),
            KnotVector::new(vec![0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0], 2).unwrap(),
            KnotVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.3, 0.6, 1.0, 1.0, 1.0, 1.0], 3).unwrap(),
            KnotVector::uniform(2, 7).unwrap(),
        ];
        for kv in &kvs {
            let r = greville_weights(kv).unwrap();
            for j in 0..kv.len() {
                let q = r.integrate(|p| eval_bspline_basis(kv, p[0]).unwrap()[j]);
                assert!((q - bspline_moment(kv, j).unwrap()).abs() <= 1e-13);
            }
        }
        let uniform = greville_weights(&kvs[1]).unwrap();
        assert!(!uniform.has_negative_weights());
    }

    #[test]
    fn crafted_knots_give_negative_weight() {
        let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 0.1, 1.0, 1.0, 1.0], 2).unwrap();
        let r = greville_weights(&kv).unwrap();
        assert!(r.has_negative_weights());
        // reference values from an independent dense solve
        for (w, x) in r.weights.iter().zip([-1.0 / 30.0, 4.0 / 15.0, 28.0 / 45.0, 13.0 / 90.0]) {
            assert!((w - x).abs() <= 1e-13);
        }
    }

    #[test]
    fn hybrid_point_examples() {
        let simpson = cell_greville_rule(2).unwrap();
        let pts = hybrid_points(&simpson, &simpson, &GaussDatum::one_point(), false).unwrap();
        // centre: γ = (0, 0), w = 4/3
        let c = pts[4];
        assert!(c[0].abs() <= 1e-12 && c[1].abs() <= 1e-12 && (c[2] - 5.0 / 13.0).abs() <= 1e-12);
        // corner: γ = (−1, −1), w = 1/3
        let k = pts[0];
        assert!((k[0] + 1.0 / 7.0).abs() <= 1e-12 && (k[1] + 1.0 / 7.0).abs() <= 1e-12);
        assert!((k[2] - 35.0 / 37.0).abs() <= 1e-12);

        let pts = hybrid_points(&simpson, &simpson, &GaussDatum::one_point(), true).unwrap();
        assert!((pts[4][2] - 1.0).abs() <= 1e-12 && pts[4][0].abs() <= 1e-12);
        let n = (1.0f64 / 49.0 + 1.0 / 49.0 + (35.0f64 / 37.0).powi(2)).sqrt();
        let expect = [-1.0 / 7.0 / n, -1.0 / 7.0 / n, 35.0 / 37.0 / n];
        for d in 0..3 {
            assert!((pts[0][d] - expect[d]).abs() <= 1e-12);
        }
        for q in &pts {
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            assert!((norm - 1.0).abs() <= 1e-14);
            assert!(q.iter().all(|c| c.abs() <= 1.0));
        }
        let two = hybrid_points(&simpson, &simpson, &GaussDatum::two_point(), true).unwrap();
        assert_eq!(two.len(), 18);
    }

    #[test]
    fn degenerate_hybrid_point_flagged() {
        let simpson = cell_greville_rule(2).unwrap();
        let datum = [GaussDatum { xy: [0.0, 0.0], weight: 16.0 / 9.0 }];
        let err = hybrid_points(&simpson, &simpson, &datum, true).unwrap_err();
        assert!(matches!(err, Error::DegeneratePoint { .. }));
    }

    #[test]
    fn hybrid_weights_flat_and_linear() {
        let mesh = presets::flat_cube(0).unwrap();
        let e = mesh.boundary_elements().next().unwrap();
        let rule = hybrid_rule(&mesh, e, RuleKind::Hybrid).unwrap();
        let n_cp = mesh.basis().n_cp();
        assert_eq!(rule.len(), 4);
        let basis = HybridLocalBasis::new(&mesh, e).unwrap();
        let system = MomentSystem::hybrid(&basis, &rule.points).unwrap();
        assert_eq!(system.collocation.shape(), (n_cp + 4, 4));
        // moments of a partition of unity add up to the reference volume
        assert!((system.moments.sum() - 8.0).abs() <= 1e-12);
        let doubled = MomentSystem { moments: &system.moments * 2.0, ..system.clone() };
        let (w1, r1) = system.least_squares(false).unwrap();
        let (w2, r2) = doubled.least_squares(false).unwrap();
        assert!((w2 - &w1 * 2.0).amax() <= 1e-12);
        assert!((r2 - 2.0 * r1).abs() <= 1e-12);
        assert!((rule.residual.unwrap() - r1).abs() <= 1e-14);
        // constants: Σ_k Σ_l w_l Ñ_k(q_l) = Σ w_l, off from 8 by at most √m times the residual
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 8.0).abs() <= ((n_cp + 4) as f64).sqrt() * r1 + 1e-12);
    }

    #[test]
    fn moment_oracle_converged() {
        let mesh = presets::bump_cube(0).unwrap();
        let basis = HybridLocalBasis::new(&mesh, 0).unwrap();
        let a = MomentSystem::hybrid_with_order(&basis, &[], [12, 12, 2]).unwrap();
        let b = MomentSystem::hybrid_with_order(&basis, &[], [16, 16, 2]).unwrap();
        assert!((a.moments - b.moments).amax() <= 1e-12);
    }

    #[test]
    fn hybrid_residual_measurements() {
        for preset in [presets::Preset::FlatCube, presets::Preset::BumpCube] {
            for level in 0..3 {
                let mesh = preset.mesh(level).unwrap();
                for kind in [RuleKind::Hybrid, RuleKind::Hybrid2, RuleKind::HybridUnnormalized] {
                    let rr: Vec<f64> = mesh
                        .boundary_elements()
                        .map(|e| hybrid_rule(&mesh, e, kind).unwrap().relative_residual.unwrap())
                        .collect();
                    let w: f64 = hybrid_rule(&mesh, 0, kind).unwrap().weights.iter().sum();
                    eprintln!(
                        "{} L{level} {}: max rel residual {:.4e}, sum w elem0 {:.6}",
                        preset.name(),
                        kind.tag(),
                        rr.iter().cloned().fold(0.0, f64::max),
                        w
                    );
                }
            }
        }
    }

    #[test]
    fn volumes() {
        let flat = presets::flat_cube(1).unwrap();
        let rules = ElementRules::build(&flat, BoundaryQuadrature::Gauss(2)).unwrap();
        let e = flat.interior_elements().next().unwrap();
        let scale = 0.25f64.powi(3);
        assert!((integrate_volume(&flat, e, rules.rule(e), |_| 1.0).unwrap() - scale).abs() <= 1e-14);
        assert!((integrate_domain(&flat, &rules, |_| 1.0).unwrap() - 1.0).abs() <= 1e-10);

        let bump = presets::bump_cube(0).unwrap();
        let oracle = ElementRules::build_with_interior(&bump, BoundaryQuadrature::Gauss(12), 12).unwrap();
        let v_ref = integrate_domain(&bump, &oracle, |_| 1.0).unwrap();
        for mode in [BoundaryQuadrature::Hybrid, BoundaryQuadrature::Hybrid2, BoundaryQuadrature::Gauss(4)] {
            let r = ElementRules::build(&bump, mode).unwrap();
            let v = integrate_domain(&bump, &r, |_| 1.0).unwrap();
            eprintln!("bump volume {}: {v:.10} vs {v_ref:.10}, max rel residual {:?}", mode.tag(), r.max_relative_residual());
        }
    }

    #[test]
    fn interior_and_boundary_agree_on_flat() {
        let flat = presets::flat_cube(0).unwrap();
        let rules = ElementRules::build(&flat, BoundaryQuadrature::Gauss(2)).unwrap();
        let f = |x: &Vec3| 1.0 + x.x * x.y - 2.0 * x.z * x.x + x.x * x.y * x.z;
        for e in flat.boundary_elements() {
            let vb = integrate_volume(&flat, e, rules.rule(e), f).unwrap();
            let interior = gauss_legendre(2, 3).unwrap().to_domain(RefDomain::Unit);
            let x = flat.vertex_coords(flat.element(e));
            let vi: f64 = interior
                .points
                .iter()
                .zip(&interior.weights)
                .map(|(q, w)| {
                    let (p, j) = crate::mesh::trilinear(&x, *q);
                    w * f(&p) * j.determinant()
                })
                .sum();
            assert!((vb - vi).abs() <= 1e-9);
        }
    }

    #[test]
    fn surface_integrals() {
        let flat = presets::flat_patch(2).unwrap();
        assert!((integrate_surface(&flat, |_| 1.0).unwrap() - 1.0).abs() <= 1e-12);
        let mut patch = presets::quarter_cylinder_patch(1.0, 1.0).unwrap();
        let exact = std::f64::consts::FRAC_PI_2;
        let mut prev = f64::INFINITY;
        for level in 0..4 {
            let a = integrate_surface(&patch, |_| 1.0).unwrap();
            let rel = (a - exact).abs() / exact;
            eprintln!("quarter cylinder area level {level}: rel error {rel:.3e}");
            if level == 0 {
                // three-point Simpson on the arc speed, computed independently
                assert!((rel - 3.29622e-3).abs() <= 1e-7, "{rel}");
            }
            assert!(rel < prev);
            prev = rel;
            patch = patch.refine_uniform().unwrap();
        }
        let p = presets::bump_patch().unwrap();
        let f = |x: &Vec3| x.x * x.x + x.z;
        let g = |x: &Vec3| (x.y * 3.0).sin();
        let lhs = integrate_surface(&p, |x| 2.0 * f(x) - 0.5 * g(x)).unwrap();
        let rhs = 2.0 * integrate_surface(&p, f).unwrap() - 0.5 * integrate_surface(&p, g).unwrap();
        assert!((lhs - rhs).abs() <= 1e-13);
    }

    #[test]
    fn mode_tags_parse() {
        for m in [
            BoundaryQuadrature::Hybrid,
            BoundaryQuadrature::Hybrid2,
            BoundaryQuadrature::HybridUnnormalized,
            BoundaryQuadrature::Gauss(3),
        ] {
            assert_eq!(BoundaryQuadrature::parse(&m.tag()), Some(m));
        }
        assert_eq!(BoundaryQuadrature::parse("simpson"), None);
    }
}
