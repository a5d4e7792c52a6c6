//! Built-in geometries.
//!
//! Patches are oriented so that `S_u × S_v` points into the domain, which
//! makes every element map positively oriented with `ζ` running inward.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::mesh::{ExtrudedGeometry, HybridMesh, Layering};
use crate::patch::NurbsPatch;
use crate::spline::KnotVector;
use crate::Vec3;

/// Height of the interior control points of the bump.
pub const BUMP_HEIGHT: f64 = 1.3;
/// Weight of the interior control points of the bump.
pub const BUMP_WEIGHT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    FlatCube,
    BumpCube,
    CylinderSector,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::FlatCube, Preset::BumpCube, Preset::CylinderSector];

    pub fn name(self) -> &'static str {
        match self {
            Preset::FlatCube => "flat_cube",
            Preset::BumpCube => "bump_cube",
            Preset::CylinderSector => "cylinder_sector",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn patch(self) -> Result<NurbsPatch> {
        match self {
            Preset::FlatCube => flat_patch(2),
            Preset::BumpCube => bump_patch(),
            Preset::CylinderSector => cylinder_sector_patch(),
        }
    }

    pub fn geometry(self) -> ExtrudedGeometry {
        let layering = Layering::Graded;
        match self {
            Preset::FlatCube | Preset::BumpCube => ExtrudedGeometry { depth_axis: 2, base: 0.0, top_ref: 1.0, layering },
            Preset::CylinderSector => ExtrudedGeometry { depth_axis: 1, base: 0.0, top_ref: FRAC_1_SQRT_2, layering },
        }
    }

    pub fn resolution(self) -> [usize; 3] {
        match self {
            Preset::FlatCube | Preset::BumpCube => [2, 2, 2],
            Preset::CylinderSector => [1, 1, 2],
        }
    }

    /// Mesh refined `level` times from the coarse resolution.
    pub fn mesh(self, level: usize) -> Result<HybridMesh> {
        self.mesh_with(Layering::Graded, level)
    }

    pub fn mesh_with(self, layering: Layering, level: usize) -> Result<HybridMesh> {
        let geometry = ExtrudedGeometry { layering, ..self.geometry() };
        refined(HybridMesh::build(&self.patch()?, geometry, self.resolution())?, level)
    }
}

/// Refines `mesh` the given number of times.
pub fn refined(mut mesh: HybridMesh, levels: usize) -> Result<HybridMesh> {
    for _ in 0..levels {
        mesh = mesh.refine()?;
    }
    Ok(mesh)
}

pub fn flat_cube(level: usize) -> Result<HybridMesh> {
    Preset::FlatCube.mesh(level)
}

pub fn bump_cube(level: usize) -> Result<HybridMesh> {
    Preset::BumpCube.mesh(level)
}

pub fn cylinder_sector(level: usize) -> Result<HybridMesh> {
    Preset::CylinderSector.mesh(level)
}

/// Bump on a single biquadratic cell (`n_cp = 9`) over a `1 × 1 × 2` mesh.
pub fn bump_single_cell() -> Result<HybridMesh> {
    let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2)?;
    let patch = grid_patch(kv.clone(), kv, |_, _, interior| interior)?;
    HybridMesh::build(&patch, Preset::BumpCube.geometry(), [1, 1, 2])
}

/// Bilinear patch on the plane `z = 1` with `cells × cells` Bezier cells.
pub fn flat_patch(cells: usize) -> Result<NurbsPatch> {
    let kv = KnotVector::uniform(1, cells)?;
    grid_patch(kv.clone(), kv, |_, _, _| false)
}

/// Biquadratic bump with two cells per direction; boundary control points
/// stay on `z = 1` so the four side faces are planar.
pub fn bump_patch() -> Result<NurbsPatch> {
    let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0], 2)?;
    grid_patch(kv.clone(), kv, |_, _, interior| interior)
}

/// Control net over the Greville grid of the unit square at `z = 1`, with
/// `u` running along `y` and `v` along `x`. Points selected by `raise` get
/// the bump height and weight.
fn grid_patch(kv_u: KnotVector, kv_v: KnotVector, raise: impl Fn(usize, usize, bool) -> bool) -> Result<NurbsPatch> {
    let gu = crate::spline::greville_points(&kv_u)?;
    let gv = crate::spline::greville_points(&kv_v)?;
    let (n1, n2) = (gu.len(), gv.len());
    let mut control = Vec::with_capacity(n1 * n2);
    let mut weights = Vec::with_capacity(n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            let interior = i > 0 && i + 1 < n1 && j > 0 && j + 1 < n2;
            let up = raise(i, j, interior);
            control.push(Vec3::new(gv.points()[j], gu.points()[i], if up { BUMP_HEIGHT } else { 1.0 }));
            weights.push(if up { BUMP_WEIGHT } else { 1.0 });
        }
    }
    NurbsPatch::new(kv_u, kv_v, control, weights)
}

/// Unit-radius circular arc from 135° to 45° (quadratic, exact) extruded
/// linearly over `z ∈ [0, 1]`.
pub fn cylinder_sector_patch() -> Result<NurbsPatch> {
    let s = FRAC_1_SQRT_2;
    let arc = [(-s, s, 1.0), (0.0, 2.0 * s, s), (s, s, 1.0)];
    let mut control = Vec::new();
    let mut weights = Vec::new();
    for z in [0.0, 1.0] {
        for &(x, y, w) in &arc {
            control.push(Vec3::new(x, y, z));
            weights.push(w);
        }
    }
    NurbsPatch::new(
        KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2)?,
        KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1)?,
        control,
        weights,
    )
}

/// Quarter cylinder of radius `r` and length `l` about the `z` axis, arc in
/// the first quadrant.
pub fn quarter_cylinder_patch(r: f64, l: f64) -> Result<NurbsPatch> {
    if !(r > 0.0 && l > 0.0) {
        return Err(Error::Parameter("radius and length must be positive".into()));
    }
    let arc = [(r, 0.0, 1.0), (r, r, FRAC_1_SQRT_2), (0.0, r, 1.0)];
    let mut control = Vec::new();
    let mut weights = Vec::new();
    for z in [0.0, l] {
        for &(x, y, w) in &arc {
            control.push(Vec3::new(x, y, z));
            weights.push(w);
        }
    }
    NurbsPatch::new(
        KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2)?,
        KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1)?,
        control,
        weights,
    )
}
