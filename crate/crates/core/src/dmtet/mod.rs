//! Isosurface extraction on the background mesh with joint optimization of
//! node offsets and nodal SDF offsets.
//!
//! The nodal SDF is the linear map `2y - 1` of the (×3) calcification grid,
//! sampled trilinearly at the (displaced) nodes. Boundary nodes are pinned to
//! 0 and the fake node to [`FAKE_SDF`], so any crossing on an edge that touches
//! the boundary lands exactly on the boundary node.

pub mod adam;
pub mod clean;
pub mod loss;
pub mod marching;
pub mod optimize;

use serde::{Deserialize, Serialize};

use crate::bgmesh::BackgroundMesh;
use crate::error::{CmacError, Result};
use crate::mesh::node_flags;
use crate::voxelgrid::{sample_trilinear, LabelGrid};
use crate::Vec3;

pub use clean::{clean_mesh, close_nonmanifold_edges, CLEAN_TOL};
pub use loss::{surface_loss, LossTerms, LossTopology, LossWeights};
pub use marching::{
    crossing_point, crossing_topology, marching_tets, CrossingConvention, CrossingTopology,
};
pub use optimize::{optimize, DmtetProblem, DmtetResult, DmtetStatus, Evaluation, OptState};

/// SDF carried by the fake node.
pub const FAKE_SDF: f64 = -1e12;

/// One value per background node plus the mask of nodes whose value is fixed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodalField {
    pub values: Vec<f64>,
    pub frozen: Vec<bool>,
}

/// `2·y − 1` sampled trilinearly at each point.
pub fn interp_sdf_at(y_ca2: &LabelGrid, points: &[Vec3]) -> NodalField {
    let values = sample_trilinear(y_ca2, points)
        .into_iter()
        .map(|v| 2.0 * v - 1.0)
        .collect();
    NodalField {
        values,
        frozen: vec![false; points.len()],
    }
}

/// Nodal SDF of the background mesh at its rest positions.
pub fn interp_sdf(y_ca2: &LabelGrid, bg: &BackgroundMesh) -> NodalField {
    interp_sdf_at(y_ca2, &bg.mesh.vertices)
}

/// Boundary nodes take 0, the fake node [`FAKE_SDF`]; everything else is untouched.
pub fn modify_edge_cases(field: &mut NodalField, bg: &BackgroundMesh) -> Result<()> {
    let n = bg.n_nodes();
    if field.values.len() != n {
        return Err(CmacError::InvalidInput(format!(
            "field has {} values for {n} nodes",
            field.values.len()
        )));
    }
    field.frozen.resize(n, false);
    for (i, &f) in bg.mesh.node_flags.iter().enumerate() {
        if f & node_flags::FAKE != 0 {
            field.values[i] = FAKE_SDF;
            field.frozen[i] = true;
        } else if f & node_flags::BOUNDARY != 0 {
            field.values[i] = 0.0;
            field.frozen[i] = true;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmtetConfig {
    pub n_opt: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Half-width of the uniform initial perturbation.
    pub init_scale: f64,
    pub clean_tol: f64,
    pub convention: CrossingConvention,
    /// When false the raw isosurface is returned (no perturbation, no steps).
    pub optimize: bool,
}

impl Default for DmtetConfig {
    fn default() -> Self {
        DmtetConfig {
            n_opt: 100,
            lr: 1e-2,
            weights: LossWeights::default(),
            seed: 0,
            init_scale: 1e-3,
            clean_tol: CLEAN_TOL,
            convention: CrossingConvention::Printed,
            optimize: true,
        }
    }
}

impl DmtetConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.lr)
            || !(self.init_scale.is_finite() && self.init_scale >= 0.0)
            || !(self.clean_tol.is_finite() && self.clean_tol >= 0.0)
            || w.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0))
            || !finite_pos(w.eps_len)
            || !(w.alpha_deg > 0.0 && w.alpha_deg < 180.0)
        {
            return Err(CmacError::InvalidInput(format!(
                "bad dmtet config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-step loss trace as CSV: `step,total,laplacian,length,angle,displacement`.
pub fn trace_csv(trace: &[LossTerms]) -> String {
    let mut out = String::from("step,total,laplacian,length,angle,displacement\n");
    for (i, t) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            t.total(),
            t.laplacian,
            t.length,
            t.angle,
            t.displacement
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgmesh::tests::lattice_shell;
    use crate::voxelgrid::VoxelGrid;

    #[test]
    fn interp_maps_labels_to_unit_sdf() {
        let mut g = VoxelGrid::filled([3, 1, 1], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        g.set(0, 0, 0, 1);
        let f = interp_sdf_at(
            &g,
            &[Vec3::zeros(), Vec3::new(2., 0., 0.), Vec3::new(0.5, 0., 0.)],
        );
        assert_eq!(f.values, vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn edge_cases_overwrite_only_boundary_and_fake() {
        let bg = lattice_shell(6, [2, 4], 1.0);
        let mut f = NodalField {
            values: vec![0.7; bg.n_nodes()],
            frozen: vec![],
        };
        modify_edge_cases(&mut f, &bg).unwrap();
        for i in 0..bg.n_nodes() {
            if i == bg.fake_node {
                assert_eq!(f.values[i], FAKE_SDF);
            } else if bg.is_boundary(i) {
                assert_eq!(f.values[i], 0.0);
            } else {
                assert_eq!(f.values[i], 0.7);
                assert!(!f.frozen[i]);
            }
        }
        assert!(modify_edge_cases(&mut NodalField::default(), &bg).is_err());
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let t = vec![
            LossTerms {
                laplacian: 1.0,
                ..Default::default()
            };
            3
        ];
        assert_eq!(trace_csv(&t).lines().count(), 4);
    }
}
