//! Geometry sources: a preset name or a TOML geometry file.
//!
//! ```toml
//! # either a preset ...
//! preset = "bump_cube"
//!
//! # ... or an explicit patch with its extrusion
//! [patch]
//! degree = [2, 2]
//! knots_u = [0, 0, 0, 1, 1, 1]
//! knots_v = [0, 0, 0, 1, 1, 1]
//! # one row per v index, u running fastest within a row
//! control_points = [[[0, 0, 1], [0, 0.5, 1], [0, 1, 1]], ...]
//! weights = [[1, 1, 1], ...]
//!
//! [extrusion]
//! depth_axis = "z"
//! base = 0.0
//! top = 1.0
//! layering = "graded"
//! resolution = [1, 1, 2]
//! ```

use std::path::Path;

use nefem::mesh::{ExtrudedGeometry, HybridMesh, Layering};
use nefem::patch::NurbsPatch;
use nefem::presets::{self, Preset};
use nefem::spline::KnotVector;
use nefem::Vec3;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub preset: Option<String>,
    pub patch: Option<PatchSpec>,
    pub extrusion: Option<ExtrusionSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub degree: [usize; 2],
    pub knots_u: Vec<f64>,
    pub knots_v: Vec<f64>,
    pub control_points: Vec<Vec<[f64; 3]>>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrusionSpec {
    pub depth_axis: String,
    pub base: f64,
    pub top: f64,
    pub layering: Option<String>,
    pub resolution: [usize; 3],
}

/// A validated geometry ready to mesh.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub name: String,
    pub patch: NurbsPatch,
    pub extrusion: ExtrudedGeometry,
    pub resolution: [usize; 3],
}

impl Geometry {
    pub fn from_preset(p: Preset) -> Result<Self, CliError> {
        Ok(Self { name: p.name().into(), patch: p.patch().map_err(CliError::numerical)?, extrusion: p.geometry(), resolution: p.resolution() })
    }

    /// Preset name, or path to a geometry file.
    pub fn resolve(source: &str) -> Result<Self, CliError> {
        if let Some(p) = Preset::from_name(source) {
            return Self::from_preset(p);
        }
        let path = Path::new(source);
        if !path.exists() {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            return Err(CliError::Input(format!(
                "geometry '{source}' is neither a preset ({}) nor an existing file",
                names.join(", ")
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{source}: {e}")))?;
        let file: GeometryFile = toml::from_str(&text).map_err(|e| CliError::Input(format!("{source}: {e}")))?;
        file.validate(source)
    }

    pub fn mesh(&self, level: usize) -> Result<HybridMesh, CliError> {
        let base = HybridMesh::build(&self.patch, self.extrusion, self.resolution).map_err(CliError::input)?;
        presets::refined(base, level).map_err(CliError::numerical)
    }
}

fn field(source: &str, name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{source}: field '{name}': {msg}"))
}

fn check_knots(source: &str, name: &str, knots: &[f64], p: usize) -> Result<KnotVector, CliError> {
    if knots.len() < 2 * (p + 1) {
        return Err(field(source, name, format!("{} knots are too few for degree {p}", knots.len())));
    }
    let n = knots.len();
    if knots[..=p].iter().any(|&k| k != knots[0]) || knots[n - p - 1..].iter().any(|&k| k != knots[n - 1]) {
        return Err(field(source, name, format!("not open: the first and last {} knots must repeat", p + 1)));
    }
    if knots[0] != 0.0 || knots[n - 1] != 1.0 {
        return Err(field(source, name, "must run from 0 to 1"));
    }
    KnotVector::new(knots.to_vec(), p).map_err(|e| field(source, name, e))
}

impl GeometryFile {
    pub fn validate(self, source: &str) -> Result<Geometry, CliError> {
        match (self.preset, self.patch, self.extrusion) {
            (Some(name), None, None) => {
                let p = Preset::from_name(&name).ok_or_else(|| field(source, "preset", format!("unknown preset '{name}'")))?;
                Geometry::from_preset(p)
            }
            (Some(_), _, _) => Err(CliError::Input(format!("{source}: 'preset' cannot be combined with [patch] or [extrusion]"))),
            (None, Some(patch), Some(ext)) => build(source, patch, ext),
            (None, None, _) => Err(field(source, "patch", "missing; give either 'preset' or [patch] and [extrusion]")),
            (None, Some(_), None) => Err(field(source, "extrusion", "missing")),
        }
    }
}

fn build(source: &str, patch: PatchSpec, ext: ExtrusionSpec) -> Result<Geometry, CliError> {
    let [p, q] = patch.degree;
    if p == 0 || q == 0 {
        return Err(field(source, "patch.degree", "degrees must be at least 1"));
    }
    let kv_u = check_knots(source, "patch.knots_u", &patch.knots_u, p)?;
    let kv_v = check_knots(source, "patch.knots_v", &patch.knots_v, q)?;
    let (n_u, n_v) = (kv_u.len(), kv_v.len());
    if patch.control_points.len() != n_v {
        return Err(field(source, "patch.control_points", format!("{} rows, expected {n_v} (one per v index)", patch.control_points.len())));
    }
    if patch.weights.len() != n_v {
        return Err(field(source, "patch.weights", format!("{} rows, expected {n_v}", patch.weights.len())));
    }
    let mut control = Vec::with_capacity(n_u * n_v);
    let mut weights = Vec::with_capacity(n_u * n_v);
    for (j, (row, wrow)) in patch.control_points.iter().zip(&patch.weights).enumerate() {
        if row.len() != n_u {
            return Err(field(source, &format!("patch.control_points[{j}]"), format!("{} points, expected {n_u}", row.len())));
        }
        if wrow.len() != n_u {
            return Err(field(source, &format!("patch.weights[{j}]"), format!("{} weights, expected {n_u}", wrow.len())));
        }
        for (i, (c, &w)) in row.iter().zip(wrow).enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(field(source, &format!("patch.weights[{j}][{i}]"), format!("weight {w} must be positive")));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(field(source, &format!("patch.control_points[{j}][{i}]"), "coordinates must be finite"));
            }
            control.push(Vec3::new(c[0], c[1], c[2]));
            weights.push(w);
        }
    }
    let nurbs = NurbsPatch::new(kv_u, kv_v, control, weights).map_err(|e| field(source, "patch", e))?;

    let depth_axis = match ext.depth_axis.as_str() {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => return Err(field(source, "extrusion.depth_axis", format!("'{other}' is not one of x, y, z"))),
    };
    let layering = match ext.layering.as_deref() {
        None | Some("graded") => Layering::Graded,
        Some("planar") => Layering::Planar,
        Some(other) => return Err(field(source, "extrusion.layering", format!("'{other}' is not graded or planar"))),
    };
    if !(ext.base.is_finite() && ext.top.is_finite()) || ext.base == ext.top {
        return Err(field(source, "extrusion", "base and top must be finite and distinct"));
    }
    if ext.resolution.iter().any(|&r| r == 0) {
        return Err(field(source, "extrusion.resolution", "entries must be positive"));
    }
    Ok(Geometry {
        name: source.into(),
        patch: nurbs,
        extrusion: ExtrudedGeometry { depth_axis, base: ext.base, top_ref: ext.top, layering },
        resolution: ext.resolution,
    })
}
