//! Final tetrahedralization, iterate selection and node stitching.

pub mod mesher;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bgmesh::MesherSetup;
use crate::error::{CmacError, Result};
use crate::mesh::{
    boundary_faces, extract_component_surface, is_watertight_manifold, node_flags, Component,
    TetMesh, TriSurface,
};
use crate::metrics::{jacobian_stats, JacobianStats};
use crate::postprocess::mean_symmetric_chamfer;
use crate::spatial::PointIndex;
use crate::Vec3;

pub use mesher::{tetrahedralize, tetrahedralize_plc, MesherJob, QualityOpts, MESHER_ENV};

pub const STITCH_TOL: f64 = 1e-3;

/// Outcome of tetrahedralizing one remesh iterate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterateDiagnostic {
    pub iteration: usize,
    pub manifold: bool,
    pub tetrahedralized: bool,
    pub min_scaled_jacobian: Option<f64>,
    pub n_tets: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct IterateOutcome {
    pub diagnostic: IterateDiagnostic,
    pub mesh: Option<TetMesh>,
    pub jacobian: Option<JacobianStats>,
}

/// Tetrahedralize one iterate. Non-manifold surfaces are not dispatched.
pub fn evaluate_iterate(
    iteration: usize,
    surface: &TriSurface,
    setup: &MesherSetup,
    q: QualityOpts,
) -> IterateOutcome {
    let mut diagnostic = IterateDiagnostic {
        iteration,
        manifold: false,
        tetrahedralized: false,
        min_scaled_jacobian: None,
        n_tets: 0,
        error: None,
    };
    let report = is_watertight_manifold(surface);
    if !report.ok {
        diagnostic.error = Some(CmacError::NotManifold(report).to_string());
        return IterateOutcome {
            diagnostic,
            mesh: None,
            jacobian: None,
        };
    }
    diagnostic.manifold = true;
    let job = setup.job(surface.clone(), &format!("iterate_{iteration:02}"), q);
    match tetrahedralize(&job) {
        Ok(mut mesh) => {
            mesh.components = vec![Component::Calcification; mesh.tets.len()];
            let jac = jacobian_stats(&mesh);
            diagnostic.tetrahedralized = true;
            diagnostic.n_tets = mesh.tets.len();
            diagnostic.min_scaled_jacobian = jac.as_ref().map(|j| j.min);
            IterateOutcome {
                diagnostic,
                mesh: Some(mesh),
                jacobian: jac,
            }
        }
        Err(e) => {
            diagnostic.error = Some(e.to_string());
            IterateOutcome {
                diagnostic,
                mesh: None,
                jacobian: None,
            }
        }
    }
}

/// Index of the successful outcome with the largest min scaled Jacobian; ties
/// go to the later iterate.
pub fn best_outcome(outcomes: &[IterateOutcome]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, o) in outcomes.iter().enumerate() {
        let Some(j) = o.diagnostic.min_scaled_jacobian else {
            continue;
        };
        if best.is_none_or(|(_, b)| j >= b) {
            best = Some((k, j));
        }
    }
    best.map(|(k, _)| k)
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Position of the chosen iterate in the input list.
    pub index: usize,
    pub surface: TriSurface,
    pub mesh: TetMesh,
    pub jacobian: JacobianStats,
    pub diagnostics: Vec<IterateDiagnostic>,
}

/// Pick among already tetrahedralized iterates. Fails with every diagnostic
/// when none succeeded.
pub fn select_from(
    iterates: &[TriSurface],
    mut outcomes: Vec<IterateOutcome>,
) -> Result<Selection> {
    let diagnostics: Vec<IterateDiagnostic> =
        outcomes.iter().map(|o| o.diagnostic.clone()).collect();
    let Some(k) = best_outcome(&outcomes) else {
        let lines: Vec<String> = diagnostics
            .iter()
            .map(|d| {
                format!(
                    "iterate {}: {}",
                    d.iteration,
                    d.error.as_deref().unwrap_or("no tets")
                )
            })
            .collect();
        return Err(CmacError::Mesher(format!(
            "no iterate could be tetrahedralized ({})",
            lines.join("; ")
        )));
    };
    let o = outcomes.swap_remove(k);
    let (Some(mesh), Some(jacobian)) = (o.mesh, o.jacobian) else {
        unreachable!("best outcome has a mesh")
    };
    Ok(Selection {
        index: k,
        surface: iterates[k].clone(),
        mesh,
        jacobian,
        diagnostics,
    })
}

/// Tetrahedralize every iterate and keep the best one.
pub fn select_best_iterate(
    iterates: &[TriSurface],
    setup: &MesherSetup,
    q: QualityOpts,
) -> Result<Selection> {
    let outcomes = iterates
        .iter()
        .enumerate()
        .map(|(k, s)| evaluate_iterate(k, s, setup, q))
        .collect();
    select_from(iterates, outcomes)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentStitch {
    pub leaflet: Option<Component>,
    pub chamfer: f64,
    pub n_tets: usize,
    pub merged: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    /// Calcification nodes now sharing a vertex with the heart.
    pub merged_node_count: usize,
    pub components_kept: usize,
    pub components_dropped: usize,
    /// Assigned leaflet per calcification component, in component order.
    pub per_component_leaflet: BTreeMap<usize, Component>,
    pub components: Vec<ComponentStitch>,
    /// Kept calcification nodes within `tol` of an aortic-root node that were not
    /// merged because the node belongs to a leaflet other than the assigned one.
    pub unmerged_near_heart: usize,
}

/// Node-connected components of a tet set, numbered by first tet.
pub fn tet_components(n_vertices: usize, tets: &[[usize; 4]]) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n_vertices).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for t in tets {
        for k in 1..4 {
            let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut id: BTreeMap<usize, usize> = BTreeMap::new();
    let mut label = Vec::with_capacity(tets.len());
    for t in tets {
        let r = find(&mut parent, t[0]);
        let n = id.len();
        label.push(*id.entry(r).or_insert(n));
    }
    (label, id.len())
}

/// Surface node ids of the heart by component.
fn surface_nodes(heart: &TetMesh, c: Component) -> Result<Vec<usize>> {
    Ok(extract_component_surface(heart, &[c])?.tet_vertex)
}

/// Merge calcification nodes into the heart mesh.
///
/// Each node-connected calcification component is assigned the leaflet with
/// the lowest mean symmetric chamfer to its surface nodes. Its nodes are merged
/// with the nearest surface node of that leaflet or the aorta when closer than
/// `tol` (lowest index on ties). Components with fewer than three merged nodes
/// are dropped. The heart's vertices and tets come first and are unchanged.
pub fn stitch(calc: &TetMesh, heart: &TetMesh, tol: f64) -> Result<(TetMesh, StitchReport)> {
    if !(tol >= 0.0) {
        return Err(CmacError::InvalidInput(format!(
            "stitch tolerance must be non-negative, got {tol}"
        )));
    }
    for c in Component::LEAFLETS.iter().chain([&Component::Aorta]) {
        if !heart.has_component(*c) {
            return Err(CmacError::InvalidInput(format!(
                "heart mesh has no {c:?} component"
            )));
        }
    }
    let aorta = surface_nodes(heart, Component::Aorta)?;
    let leaflets: Vec<Vec<usize>> = Component::LEAFLETS
        .iter()
        .map(|&c| surface_nodes(heart, c))
        .collect::<Result<_>>()?;
    let leaflet_pts: Vec<Vec<Vec3>> = leaflets
        .iter()
        .map(|ids| ids.iter().map(|&i| heart.vertices[i]).collect())
        .collect();
    // nearest-node index per leaflet over leaflet and aorta nodes
    let targets: Vec<Vec<usize>> = leaflets
        .iter()
        .map(|l| {
            let mut t: Vec<usize> = l.iter().chain(&aorta).copied().collect();
            t.sort_unstable();
            t.dedup();
            t
        })
        .collect();
    let indices: Vec<PointIndex> = targets
        .iter()
        .map(|t| PointIndex::new(&t.iter().map(|&i| heart.vertices[i]).collect::<Vec<_>>()))
        .collect();

    let (label, n_comp) = tet_components(calc.vertices.len(), &calc.tets);
    let mut report = StitchReport::default();
    let mut merged_to: Vec<Option<usize>> = vec![None; calc.vertices.len()];
    let mut keep_comp = vec![false; n_comp];
    for c in 0..n_comp {
        let tets: Vec<[usize; 4]> = calc
            .tets
            .iter()
            .zip(&label)
            .filter(|(_, &l)| l == c)
            .map(|(t, _)| *t)
            .collect();
        let mut nodes: Vec<usize> = boundary_faces(&calc.vertices, &tets)
            .into_iter()
            .flatten()
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        let pts: Vec<Vec3> = nodes.iter().map(|&i| calc.vertices[i]).collect();
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for (l, lp) in leaflet_pts.iter().enumerate() {
            let d = mean_symmetric_chamfer(&pts, lp);
            if d < best_d {
                (best, best_d) = (l, d);
            }
        }
        let mut all: Vec<usize> = tets.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        let mut hits = Vec::new();
        for &v in &all {
            if let Some((k, d)) = indices[best].nearest(&calc.vertices[v]) {
                if d < tol || d == 0.0 {
                    hits.push((v, targets[best][k]));
                }
            }
        }
        let kept = hits.len() >= 3;
        if kept {
            for (v, h) in &hits {
                merged_to[*v] = Some(*h);
            }
            keep_comp[c] = true;
            report.components_kept += 1;
            report.merged_node_count += hits.len();
        } else {
            log::info!(
                "stitch: dropping calcification component {c} with {} merged nodes",
                hits.len()
            );
            report.components_dropped += 1;
        }
        let leaflet = Component::LEAFLETS[best];
        report.per_component_leaflet.insert(c, leaflet);
        report.components.push(ComponentStitch {
            leaflet: Some(leaflet),
            chamfer: best_d,
            n_tets: tets.len(),
            merged: hits.len(),
            kept,
        });
    }

    let mut vertices = heart.vertices.clone();
    let mut flags = heart.node_flags.clone();
    let mut tets = heart.tets.clone();
    let mut components = heart.components.clone();
    let mut remap = vec![usize::MAX; calc.vertices.len()];
    for (v, m) in merged_to.iter().enumerate() {
        if let Some(h) = m {
            remap[v] = *h;
            flags[*h] |= node_flags::CONTACT;
        }
    }
    for (t, &l) in calc.tets.iter().zip(&label) {
        if !keep_comp[l] {
            continue;
        }
        let mapped = t.map(|v| {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(calc.vertices[v]);
                flags.push(0);
            }
            remap[v]
        });
        tets.push(mapped);
        components.push(Component::Calcification);
    }
    let root = extract_component_surface(heart, &Component::AORTIC_ROOT)?;
    let root_index = PointIndex::new(&root.surface.vertices);
    let mut seen = vec![false; calc.vertices.len()];
    for (t, &l) in calc.tets.iter().zip(&label) {
        for &v in t {
            if keep_comp[l] && !seen[v] && merged_to[v].is_none() {
                seen[v] = true;
                if root_index
                    .nearest(&calc.vertices[v])
                    .is_some_and(|(_, d)| d < tol || d == 0.0)
                {
                    report.unmerged_near_heart += 1;
                }
            }
        }
    }
    let combined = TetMesh {
        vertices,
        tets,
        components,
        node_flags: flags,
    };
    combined.validate()?;
    Ok((combined, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::lattice_tet_mesh;

    /// Slab heart: aorta below z = 2, three leaflets side by side above it.
    fn heart() -> TetMesh {
        lattice_tet_mesh([6, 2, 3], Vec3::zeros(), Vec3::repeat(1.0), |c| {
            if c.z < 2.0 {
                Some(Component::Aorta)
            } else {
                Some(Component::LEAFLETS[(c.x / 2.0) as usize])
            }
        })
    }

    /// One Kuhn-split unit cube with corner at `o`.
    fn cube(o: Vec3) -> TetMesh {
        let m = lattice_tet_mesh([1, 1, 1], o, Vec3::repeat(1.0), |_| {
            Some(Component::Calcification)
        });
        let mut m = m;
        m.canonicalize_orientation();
        m
    }

    fn join(a: &TetMesh, b: &TetMesh) -> TetMesh {
        let n = a.vertices.len();
        let mut m = a.clone();
        m.vertices.extend(&b.vertices);
        m.node_flags.extend(&b.node_flags);
        m.tets.extend(b.tets.iter().map(|t| t.map(|i| i + n)));
        m.components.extend(&b.components);
        m
    }

    #[test]
    fn attached_cube_merges_its_contact_face() {
        let h = heart();
        let calc = cube(Vec3::new(4.0, 0.0, 3.0));
        let (m, r) = stitch(&calc, &h, STITCH_TOL).unwrap();
        assert_eq!(r.merged_node_count, 4);
        assert_eq!((r.components_kept, r.components_dropped), (1, 0));
        assert_eq!(r.per_component_leaflet[&0], Component::Leaflet3);
        assert_eq!(m.vertices[..h.vertices.len()], h.vertices[..]);
        assert_eq!(m.tets[..h.tets.len()], h.tets[..]);
        assert_eq!(m.vertices.len(), h.vertices.len() + 4);
        assert!(m.tets[h.tets.len()..]
            .iter()
            .all(|t| t.iter().all(|&i| i < m.vertices.len())));
    }

    #[test]
    fn floating_blob_is_dropped() {
        let h = heart();
        let calc = cube(Vec3::new(10.0, 10.0, 10.0));
        let (m, r) = stitch(&calc, &h, STITCH_TOL).unwrap();
        assert_eq!(
            (r.components_kept, r.components_dropped, r.merged_node_count),
            (0, 1, 0)
        );
        assert_eq!(m.tets.len(), h.tets.len());
        assert_eq!(m.vertices, h.vertices);
    }

    #[test]
    fn one_of_two_components_attached() {
        let h = heart();
        let calc = join(
            &cube(Vec3::new(0.0, 0.0, 3.0)),
            &cube(Vec3::new(0.0, 0.0, 8.0)),
        );
        let (_, r) = stitch(&calc, &h, STITCH_TOL).unwrap();
        assert_eq!((r.components_kept, r.components_dropped), (1, 1));
        assert_eq!(r.per_component_leaflet[&0], Component::Leaflet1);
    }

    #[test]
    fn near_miss_beyond_tolerance_is_not_merged() {
        let h = heart();
        let calc = cube(Vec3::new(2.0, 0.0, 3.0 + 2e-3));
        let (_, r) = stitch(&calc, &h, STITCH_TOL).unwrap();
        assert_eq!(r.merged_node_count, 0);
        let (_, r) = stitch(&calc, &h, 1e-2).unwrap();
        assert_eq!(r.merged_node_count, 4);
    }

    #[test]
    fn missing_leaflet_is_an_error() {
        let h = lattice_tet_mesh([2, 2, 2], Vec3::zeros(), Vec3::repeat(1.0), |_| {
            Some(Component::Aorta)
        });
        assert!(stitch(&cube(Vec3::zeros()), &h, STITCH_TOL).is_err());
    }

    #[test]
    fn components_are_node_connected() {
        let tets = vec![[0, 1, 2, 3], [4, 5, 6, 7], [3, 8, 9, 10]];
        let (l, n) = tet_components(11, &tets);
        assert_eq!(n, 2);
        assert_eq!(l, vec![0, 1, 0]);
    }

    fn outcome(k: usize, j: Option<f64>) -> IterateOutcome {
        IterateOutcome {
            diagnostic: IterateDiagnostic {
                iteration: k,
                manifold: j.is_some(),
                tetrahedralized: j.is_some(),
                min_scaled_jacobian: j,
                n_tets: 0,
                error: None,
            },
            mesh: j.map(|_| cube(Vec3::zeros())),
            jacobian: j.map(|min| JacobianStats {
                min,
                mean: min,
                histogram: [0; 10],
                n: 1,
            }),
        }
    }

    #[test]
    fn selection_prefers_quality_then_later_iterates() {
        assert_eq!(
            best_outcome(&[
                outcome(0, Some(0.1)),
                outcome(1, Some(0.3)),
                outcome(2, Some(0.2))
            ]),
            Some(1)
        );
        assert_eq!(
            best_outcome(&[outcome(0, Some(0.3)), outcome(1, Some(0.3))]),
            Some(1)
        );
        assert_eq!(
            best_outcome(&[
                outcome(0, Some(0.1)),
                outcome(1, None),
                outcome(2, Some(0.05))
            ]),
            Some(0)
        );
        assert_eq!(best_outcome(&[outcome(0, None)]), None);
    }

    #[test]
    fn selection_reports_every_failure() {
        let its = vec![TriSurface::default(); 2];
        let mut o = vec![outcome(0, None), outcome(1, None)];
        o[1].diagnostic.error = Some("boom".into());
        let e = select_from(&its, o).unwrap_err().to_string();
        assert!(e.contains("iterate 1: boom"), "{e}");
        let s = select_from(&its, vec![outcome(0, None), outcome(1, Some(0.4))]).unwrap();
        assert_eq!(s.index, 1);
    }

    #[test]
    fn open_iterate_is_not_dispatched() {
        let s = TriSurface::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]);
        let mut setup = MesherSetup::new(std::env::temp_dir());
        setup.executable = "/nonexistent/mesher".into();
        let o = evaluate_iterate(3, &s, &setup, QualityOpts::default());
        assert!(!o.diagnostic.manifold && o.mesh.is_none());
    }
}
