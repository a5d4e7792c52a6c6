//! Galerkin assembly for the Poisson problem `−Δu = f`, Dirichlet
//! elimination, the CG solve and manufactured-solution convergence studies.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interpolation::{error_norms, fitted_rate, Region};
use crate::mesh::HybridMesh;
use crate::quadrature::{BoundaryQuadrature, ElementRules, QuadRule};
use crate::space::{eval_element_basis, BoundaryCondition, DofMap};
use crate::sparse::{conjugate_gradient, matvec, CgReport, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::Vec3;

/// Elements whose local systems are held in memory at once during assembly.
const ASSEMBLY_CHUNK: usize = 64;

/// Stiffness matrix and load vector. `constrained` marks rows replaced by
/// identity rows after [`apply_dirichlet`].
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix<f64>,
    pub rhs: Vec<f64>,
    pub constrained: Vec<bool>,
}

impl SparseSystem {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }
}

/// Local stiffness `∫ ∇N_i·∇N_j` and load `∫ f N_i` of one element.
pub fn element_system(
    mesh: &HybridMesh,
    element: usize,
    rule: &QuadRule,
    f: &(impl Fn(&Vec3) -> f64 + ?Sized),
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut grads: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut load: Option<DVector<f64>> = None;
    let nq = rule.len();
    for (k, (q, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        let map = mesh.geometric_map(element, *q)?;
        if !(map.det > 0.0) {
            return Err(Error::InvertedElement { element, det: map.det });
        }
        let basis = eval_element_basis(mesh, element, *q)?;
        let m = basis.values.len();
        let g = basis.physical_grads(&map.jacobian).ok_or(Error::InvertedElement { element, det: map.det })?;
        let (bt, bts) = grads.get_or_insert_with(|| (DMatrix::zeros(3 * nq, m), DMatrix::zeros(3 * nq, m)));
        let scale = w * map.det;
        for (i, gi) in g.iter().enumerate() {
            for d in 0..3 {
                bt[(3 * k + d, i)] = gi[d];
                bts[(3 * k + d, i)] = scale * gi[d];
            }
        }
        let fx = f(&map.point) * scale;
        let l = load.get_or_insert_with(|| DVector::zeros(m));
        for (i, v) in basis.values.iter().enumerate() {
            l[i] += fx * v;
        }
    }
    let (bt, bts) = grads.ok_or_else(|| Error::Parameter(format!("empty quadrature rule on element {element}")))?;
    let mut k = DMatrix::zeros(bt.ncols(), bt.ncols());
    k.gemm_tr(1.0, &bts, &bt, 0.0);
    Ok((k, load.expect("set with the gradients")))
}

/// CSR pattern holding every pair of DOFs that share an element.
fn sparsity(dofs: &DofMap, n_elements: usize) -> (Vec<usize>, Vec<usize>) {
    let n = dofs.n_global();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in 0..n_elements {
        let ed = dofs.element_dofs(e);
        for &i in ed {
            rows[i].extend_from_slice(ed);
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    offsets.push(0);
    for mut r in rows {
        r.sort_unstable();
        r.dedup();
        cols.extend(r);
        offsets.push(cols.len());
    }
    (offsets, cols)
}

/// Assembles `a(u, v) = ∫ ∇u·∇v` and `b(v) = ∫ f v` without boundary
/// conditions. Element systems are computed concurrently and added in
/// element order, so the result does not depend on the worker count.
pub fn assemble(mesh: &HybridMesh, dofs: &DofMap, rules: &ElementRules, f: impl Fn(&Vec3) -> f64 + Sync) -> Result<SparseSystem> {
    let n = dofs.n_global();
    let n_el = mesh.elements().len();
    let (offsets, cols) = sparsity(dofs, n_el);
    let mut values = vec![0.0; cols.len()];
    let mut rhs = vec![0.0; n];
    let mut start = 0;
    while start < n_el {
        let end = (start + ASSEMBLY_CHUNK).min(n_el);
        let local = (start..end)
            .into_par_iter()
            .map(|e| element_system(mesh, e, rules.rule(e), &f))
            .collect::<Result<Vec<_>>>()?;
        for (e, (ke, fe)) in (start..end).zip(local) {
            let ed = dofs.element_dofs(e);
            for (a, &i) in ed.iter().enumerate() {
                rhs[i] += fe[a];
                let row = &cols[offsets[i]..offsets[i + 1]];
                for (b, &j) in ed.iter().enumerate() {
                    let pos = row.binary_search(&j).expect("pattern covers element pairs");
                    values[offsets[i] + pos] += ke[(a, b)];
                }
            }
        }
        start = end;
    }
    let matrix = CsrMatrix::try_from_csr_data(n, n, offsets, cols, values)
        .map_err(|e| Error::Shape(format!("stiffness pattern: {e}")))?;
    Ok(SparseSystem { matrix, rhs, constrained: vec![false; n] })
}

/// Eliminates the DOFs in the Dirichlet mask: their columns are moved to
/// the right-hand side and their rows and columns become identity.
pub fn apply_dirichlet(system: &SparseSystem, dofs: &DofMap) -> Result<SparseSystem> {
    let mask = dofs.dirichlet_mask();
    let g = dofs.dirichlet_values();
    if mask.len() != system.len() {
        return Err(Error::Shape(format!("{} DOFs against a system of size {}", mask.len(), system.len())));
    }
    let mut matrix = system.matrix.clone();
    let mut rhs = system.rhs.clone();
    let (offsets, cols, values) = matrix.csr_data_mut();
    for i in 0..mask.len() {
        for k in offsets[i]..offsets[i + 1] {
            let j = cols[k];
            if mask[i] {
                values[k] = if i == j { 1.0 } else { 0.0 };
            } else if mask[j] {
                rhs[i] -= values[k] * g[j];
                values[k] = 0.0;
            }
        }
        if mask[i] {
            rhs[i] = g[i];
        }
    }
    Ok(SparseSystem { matrix, rhs, constrained: mask.to_vec() })
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub coefficients: Vec<f64>,
    pub report: CgReport,
}

pub fn solve(system: &SparseSystem, tol: f64) -> Result<Solution> {
    solve_with(system, tol, DEFAULT_MAX_ITER)
}

pub fn solve_with(system: &SparseSystem, tol: f64, max_iter: usize) -> Result<Solution> {
    let (coefficients, report) = conjugate_gradient(&system.matrix, &system.rhs, tol, max_iter)?;
    Ok(Solution { coefficients, report })
}

/// `v·(A u − b)` on the unconstrained system.
pub fn galerkin_residual(system: &SparseSystem, u: &[f64], v: &[f64]) -> f64 {
    let au = matvec(&system.matrix, u);
    v.iter().zip(au.iter().zip(&system.rhs)).map(|(vi, (a, b))| vi * (a - b)).sum()
}

/// Exact solution of `−Δu = f` with its gradient.
#[derive(Clone, Copy)]
pub struct Manufactured {
    pub name: &'static str,
    pub u: fn(&Vec3) -> f64,
    pub grad: fn(&Vec3) -> Vec3,
    pub source: fn(&Vec3) -> f64,
}

impl std::fmt::Debug for Manufactured {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Manufactured").field("name", &self.name).finish()
    }
}

impl Manufactured {
    /// `sin(πx) sin(πy) sin(πz)` with `f = 3π² u`.
    pub fn sine() -> Self {
        Self {
            name: "sine",
            u: |x| (PI * x.x).sin() * (PI * x.y).sin() * (PI * x.z).sin(),
            grad: |x| {
                let (sx, sy, sz) = ((PI * x.x).sin(), (PI * x.y).sin(), (PI * x.z).sin());
                let (cx, cy, cz) = ((PI * x.x).cos(), (PI * x.y).cos(), (PI * x.z).cos());
                PI * Vec3::new(cx * sy * sz, sx * cy * sz, sx * sy * cz)
            },
            source: |x| 3.0 * PI * PI * (PI * x.x).sin() * (PI * x.y).sin() * (PI * x.z).sin(),
        }
    }

    /// `x² + y² + z²` with `f = −6`.
    pub fn quadratic() -> Self {
        Self { name: "quadratic", u: |x| x.norm_squared(), grad: |x| 2.0 * x, source: |_| -6.0 }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sine" => Some(Self::sine()),
            "quadratic" => Some(Self::quadratic()),
            _ => None,
        }
    }
}

/// Settings of a solve: boundary quadrature, CG tolerance and iteration cap.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub quadrature: BoundaryQuadrature,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { quadrature: BoundaryQuadrature::Hybrid, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

/// One manufactured solve and its errors.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    pub l2: f64,
    pub h1: f64,
    pub iterations: usize,
    /// CG relative residual after each iteration.
    pub history: Vec<f64>,
    pub assemble_s: f64,
    pub solve_s: f64,
    pub coefficients: Vec<f64>,
}

/// Solves the manufactured problem on one mesh with interpolated Dirichlet data on the whole boundary.
pub fn manufactured_level(mesh: &HybridMesh, problem: &Manufactured, opts: &SolveOptions) -> Result<LevelResult> {
    let exact = problem.u;
    let dofs = DofMap::build(mesh, BoundaryCondition::InterpolatedDirichlet(&exact))?;
    let t0 = Instant::now();
    let rules = ElementRules::build(mesh, opts.quadrature)?;
    let system = apply_dirichlet(&assemble(mesh, &dofs, &rules, problem.source)?, &dofs)?;
    let assemble_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let sol = solve_with(&system, opts.tol, opts.max_iter)?;
    let solve_s = t1.elapsed().as_secs_f64();
    let err = error_norms(mesh, &dofs, &sol.coefficients, Region::All, problem.u, problem.grad)?;
    Ok(LevelResult {
        level: mesh.level(),
        h: mesh.h(),
        ndof: dofs.n_global(),
        l2: err.l2,
        h1: err.h1,
        iterations: sol.report.iterations,
        history: sol.report.history,
        assemble_s,
        solve_s,
        coefficients: sol.coefficients,
    })
}

/// Per-level errors and the slopes fitted over the finest three levels.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub problem: &'static str,
    pub levels: Vec<LevelResult>,
    pub rate_l2: Option<f64>,
    pub rate_h1: Option<f64>,
}

pub const FIT_LEVELS: usize = 3;

impl ConvergenceReport {
    pub fn from_levels(problem: &'static str, levels: Vec<LevelResult>) -> Self {
        let h: Vec<f64> = levels.iter().map(|l| l.h).collect();
        let l2: Vec<f64> = levels.iter().map(|l| l.l2).collect();
        let h1: Vec<f64> = levels.iter().map(|l| l.h1).collect();
        Self { problem, rate_l2: fitted_rate(&h, &l2, FIT_LEVELS), rate_h1: fitted_rate(&h, &h1, FIT_LEVELS), levels }
    }

    /// CSV rows; the rate columns hold the slope against the previous level.
    /// Timing columns are left empty when `timings` is false so that output is reproducible.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut out = String::from("level,h,ndof,l2,h1,rate_l2,rate_h1,assemble_s,solve_s\n");
        for (k, l) in self.levels.iter().enumerate() {
            let rate = |f: fn(&LevelResult) -> f64| {
                k.checked_sub(1)
                    .map(|p| {
                        let prev = &self.levels[p];
                        format!("{:.6}", (f(l) / f(prev)).ln() / (l.h / prev.h).ln())
                    })
                    .unwrap_or_default()
            };
            let time = |t: f64| if timings { format!("{t:.4}") } else { String::new() };
            out.push_str(&format!(
                "{},{:.10e},{},{:.10e},{:.10e},{},{},{},{}\n",
                l.level,
                l.h,
                l.ndof,
                l.l2,
                l.h1,
                rate(|l| l.l2),
                rate(|l| l.h1),
                time(l.assemble_s),
                time(l.solve_s)
            ));
        }
        let fmt = |r: Option<f64>| r.map(|r| format!("{r:.6}")).unwrap_or_else(|| "n/a".into());
        out.push_str(&format!("# fitted slopes over the finest {FIT_LEVELS} levels: l2={} h1={}\n", fmt(self.rate_l2), fmt(self.rate_h1)));
        out
    }
}

/// Runs `levels` successive refinements starting from `base`.
pub fn manufactured_solve(base: &HybridMesh, problem: &Manufactured, levels: usize, opts: &SolveOptions) -> Result<ConvergenceReport> {
    let mut results = Vec::with_capacity(levels);
    let mut mesh = base.clone();
    for k in 0..levels {
        if k > 0 {
            mesh = mesh.refine()?;
        }
        results.push(manufactured_level(&mesh, problem, opts)?);
    }
    Ok(ConvergenceReport::from_levels(problem.name, results))
}
