//! Plain trilinear finite elements on a uniform grid of the unit cube,
//! written without any of the library's mesh or basis code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nefem::mesh::HybridMesh;
use nefem::quadrature::BoundaryQuadrature;
use nefem::solver::{apply_dirichlet, assemble, solve, Manufactured};
use nefem::space::{BoundaryCondition, DofKind, DofMap};
use nefem::Vec3;

pub struct Q1Grid {
    pub n: usize,
}

impl Q1Grid {
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.n + 1) * (j + (self.n + 1) * k)
    }

    pub fn len(&self) -> usize {
        (self.n + 1).pow(3)
    }

    pub fn coords(&self, id: usize) -> [f64; 3] {
        let m = self.n + 1;
        let h = 1.0 / self.n as f64;
        [(id % m) as f64 * h, ((id / m) % m) as f64 * h, (id / (m * m)) as f64 * h]
    }

    /// Node id of a point lying on the grid.
    pub fn locate(&self, x: &Vec3) -> usize {
        let n = self.n as f64;
        let r = |t: f64| {
            let s = t * n;
            assert!((s - s.round()).abs() < 1e-9, "{t} is off the grid");
            s.round() as usize
        };
        self.node(r(x.x), r(x.y), r(x.z))
    }

    pub fn on_boundary(&self, id: usize) -> bool {
        self.coords(id).iter().any(|&c| c.abs() < 1e-12 || (c - 1.0).abs() < 1e-12)
    }

    /// Stiffness and load with 2-point Gauss per direction.
    pub fn assemble(&self, f: impl Fn([f64; 3]) -> f64) -> (DMatrix<f64>, DVector<f64>) {
        let h = 1.0 / self.n as f64;
        let g = 0.5 / 3f64.sqrt();
        let gp = [0.5 - g, 0.5 + g];
        let mut a = DMatrix::<f64>::zeros(self.len(), self.len());
        let mut b = DVector::<f64>::zeros(self.len());
        for k in 0..self.n {
            for j in 0..self.n {
                for i in 0..self.n {
                    let mut ids = Vec::new();
                    let mut loc = Vec::new();
                    for c in 0..2 {
                        for bb in 0..2 {
                            for aa in 0..2 {
                                ids.push(self.node(i + aa, j + bb, k + c));
                                loc.push([aa as f64, bb as f64, c as f64]);
                            }
                        }
                    }
                    for &s in &gp {
                        for &t in &gp {
                            for &r in &gp {
                                let w = h * h * h / 8.0;
                                let xi = [s, t, r];
                                let x = [(i as f64 + s) * h, (j as f64 + t) * h, (k as f64 + r) * h];
                                let phi = |l: &[f64; 3]| -> (f64, [f64; 3]) {
                                    let lin = |d: usize| if l[d] == 1.0 { xi[d] } else { 1.0 - xi[d] };
                                    let sl = |d: usize| if l[d] == 1.0 { 1.0 / h } else { -1.0 / h };
                                    (lin(0) * lin(1) * lin(2), [sl(0) * lin(1) * lin(2), lin(0) * sl(1) * lin(2), lin(0) * lin(1) * sl(2)])
                                };
                                let fx = f(x);
                                for (p, lp) in loc.iter().enumerate() {
                                    let (vp, gp_) = phi(lp);
                                    b[ids[p]] += w * fx * vp;
                                    for (q, lq) in loc.iter().enumerate() {
                                        let (_, gq) = phi(lq);
                                        a[(ids[p], ids[q])] += w * (gp_[0] * gq[0] + gp_[1] * gq[1] + gp_[2] * gq[2]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (a, b)
    }
}

/// Position of every library DOF in the oracle grid.
pub fn permutation(mesh: &HybridMesh, dofs: &DofMap, grid: &Q1Grid) -> Vec<usize> {
    dofs.kinds()
        .iter()
        .map(|k| match *k {
            DofKind::Vertex { node } => grid.locate(&mesh.nodes()[node]),
            DofKind::Greville { index } => grid.locate(&mesh.basis().greville_images()[index]),
        })
        .collect()
}

/// Largest entry difference of the stiffness matrices and of the Dirichlet
/// solutions for the sine problem, library against oracle.
pub struct OracleComparison {
    pub matrix_diff: f64,
    pub solution_diff: f64,
    pub ndof: usize,
}

pub fn compare_with_q1(mesh: &HybridMesh, quadrature: BoundaryQuadrature) -> OracleComparison {
    let grid = Q1Grid { n: mesh.resolution()[0] };
    assert_eq!(mesh.resolution(), [grid.n; 3]);
    let p = Manufactured::sine();
    let dofs = DofMap::build(mesh, BoundaryCondition::InterpolatedDirichlet(&p.u)).unwrap();
    let perm = permutation(mesh, &dofs, &grid);
    let mut seen = perm.clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), grid.len(), "DOFs do not cover the grid one to one");

    let rules = nefem::quadrature::ElementRules::build(mesh, quadrature).unwrap();
    let raw = assemble(mesh, &dofs, &rules, p.source).unwrap();
    let (a, _) = grid.assemble(|x| (p.source)(&Vec3::from(x)));
    let mut matrix_diff = 0.0f64;
    let mut lib = DMatrix::<f64>::zeros(grid.len(), grid.len());
    for (i, j, v) in raw.matrix.triplet_iter() {
        lib[(perm[i], perm[j])] += v;
    }
    for (x, y) in lib.iter().zip(a.iter()) {
        matrix_diff = matrix_diff.max((x - y).abs());
    }

    let sol = solve(&apply_dirichlet(&raw, &dofs).unwrap(), 1e-12).unwrap();
    let oracle = grid_solution(&grid, &p);
    let solution_diff = sol
        .coefficients
        .iter()
        .zip(&perm)
        .map(|(u, &g)| (u - oracle[g]).abs())
        .fold(0.0, f64::max);
    OracleComparison { matrix_diff, solution_diff, ndof: dofs.n_global() }
}

/// Dense LU solve of the oracle system with nodal Dirichlet data.
pub fn grid_solution(grid: &Q1Grid, p: &Manufactured) -> Vec<f64> {
    let (mut a, mut b) = grid.assemble(|x| (p.source)(&Vec3::from(x)));
    let n = grid.len();
    let g: Vec<f64> = (0..n).map(|i| (p.u)(&Vec3::from(grid.coords(i)))).collect();
    let fixed: Vec<bool> = (0..n).map(|i| grid.on_boundary(i)).collect();
    for i in 0..n {
        if fixed[i] {
            continue;
        }
        for j in 0..n {
            if fixed[j] {
                b[i] -= a[(i, j)] * g[j];
            }
        }
    }
    for i in 0..n {
        if fixed[i] {
            for j in 0..n {
                a[(i, j)] = 0.0;
                a[(j, i)] = 0.0;
            }
            a[(i, i)] = 1.0;
            b[i] = g[i];
        }
    }
    a.lu().solve(&b).unwrap().iter().copied().collect()
}
