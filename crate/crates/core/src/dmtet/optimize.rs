//! The optimization problem over node displacements `Δv` and SDF offsets `Δsdf`.
//!
//! Only non-frozen endpoints of crossing edges ("active" nodes) influence the
//! output surface, so the state holds just those. Crossing vertices that land
//! on a frozen zero-valued node share one loss vertex per node, which is the
//! connectivity the cleaned output will have.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::clean::{clean_mesh, close_nonmanifold_edges};
use super::loss::{surface_loss, LossTerms, LossTopology, LossWeights};
use super::marching::{crossing_point, crossing_topology, CrossingConvention, CrossingTopology};
use super::{interp_sdf, modify_edge_cases, DmtetConfig};
use crate::bgmesh::BackgroundMesh;
use crate::error::Result;
use crate::mesh::{node_flags, TriSurface, VertexTag};
use crate::voxelgrid::{sample_trilinear_grad, LabelGrid};
use crate::Vec3;

const NONE: u32 = u32::MAX;
/// Magnitude given to a node whose sampled SDF itself changed sign.
const SIGN_MARGIN: f64 = 1e-3;

/// `Δv` and `Δsdf` for each active node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState {
    pub dv: Vec<Vec3>,
    pub dsdf: Vec<f64>,
}

impl OptState {
    pub fn zeros(n: usize) -> Self {
        OptState {
            dv: vec![Vec3::zeros(); n],
            dsdf: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.dsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dsdf.is_empty()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(4 * self.len());
        for (d, s) in self.dv.iter().zip(&self.dsdf) {
            f.extend_from_slice(&[d.x, d.y, d.z, *s]);
        }
        f
    }

    fn from_flat(f: &[f64]) -> Self {
        let n = f.len() / 4;
        OptState {
            dv: (0..n)
                .map(|k| Vec3::new(f[4 * k], f[4 * k + 1], f[4 * k + 2]))
                .collect(),
            dsdf: (0..n).map(|k| f[4 * k + 3]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub terms: LossTerms,
    pub grad: OptState,
    pub skipped: usize,
}

pub struct DmtetProblem<'a> {
    grid: &'a LabelGrid,
    bg: &'a BackgroundMesh,
    conv: CrossingConvention,
    weights: LossWeights,
    /// Eq. 6 values on frozen nodes, rest-position samples elsewhere.
    fixed: Vec<f64>,
    pub topology: CrossingTopology,
    /// Background node of each state slot.
    pub active: Vec<usize>,
    slot: Vec<u32>,
    reference_inside: Vec<bool>,
    loss_topo: LossTopology,
    vertex_edge: Vec<usize>,
    vertex_pin: Vec<Option<usize>>,
}

impl<'a> DmtetProblem<'a> {
    pub fn new(
        grid: &'a LabelGrid,
        bg: &'a BackgroundMesh,
        weights: LossWeights,
        conv: CrossingConvention,
    ) -> Result<Self> {
        let mut field = interp_sdf(grid, bg);
        modify_edge_cases(&mut field, bg)?;
        let topology = crossing_topology(
            &bg.mesh.tets,
            bg.n_real_tets,
            &bg.mesh.vertices,
            &field.values,
            conv,
        )?;
        let n = bg.n_nodes();
        let mut slot = vec![NONE; n];
        let mut active = Vec::new();
        let mut is_active = vec![false; n];
        for &[a, b] in &topology.crossing_edges {
            for v in [a, b] {
                if !field.frozen[v] {
                    is_active[v] = true;
                }
            }
        }
        for v in 0..n {
            if is_active[v] {
                slot[v] = active.len() as u32;
                active.push(v);
            }
        }
        let reference_inside = active
            .iter()
            .map(|&v| conv.inside(field.values[v]))
            .collect();

        // pinned vertices first, one per frozen node, then one per free edge
        let pin_of = |&[a, b]: &[usize; 2]| -> Option<usize> {
            if field.frozen[a] && field.values[a] == 0.0 {
                Some(a)
            } else if field.frozen[b] && field.values[b] == 0.0 {
                Some(b)
            } else {
                None
            }
        };
        let ne = topology.crossing_edges.len();
        let mut edge_vertex = vec![usize::MAX; ne];
        let mut vertex_edge = Vec::new();
        let mut vertex_pin = Vec::new();
        let mut pinned: HashMap<usize, usize> = HashMap::new();
        for (e, edge) in topology.crossing_edges.iter().enumerate() {
            if let Some(p) = pin_of(edge) {
                edge_vertex[e] = *pinned.entry(p).or_insert_with(|| {
                    vertex_edge.push(e);
                    vertex_pin.push(Some(p));
                    vertex_edge.len() - 1
                });
            }
        }
        for e in 0..ne {
            if edge_vertex[e] == usize::MAX {
                edge_vertex[e] = vertex_edge.len();
                vertex_edge.push(e);
                vertex_pin.push(None);
            }
        }
        let tris: Vec<[usize; 3]> = topology
            .triangles
            .iter()
            .map(|t| t.map(|e| edge_vertex[e]))
            .collect();
        let loss_topo = LossTopology::new(vertex_edge.len(), &tris);
        Ok(DmtetProblem {
            grid,
            bg,
            conv,
            weights,
            fixed: field.values,
            topology,
            active,
            slot,
            reference_inside,
            loss_topo,
            vertex_edge,
            vertex_pin,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.topology.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn loss_topology(&self) -> &LossTopology {
        &self.loss_topo
    }

    /// `2·trilinear(y) − 1` and its gradient.
    fn sdf(&self, p: &Vec3) -> (f64, Vec3) {
        let (v, g) = sample_trilinear_grad(self.grid, p);
        (2.0 * v - 1.0, 2.0 * g)
    }

    fn node(&self, v: usize, pos: &[Vec3], val: &[f64]) -> (Vec3, f64) {
        match self.slot[v] {
            NONE => (self.bg.mesh.vertices[v], self.fixed[v]),
            k => (pos[k as usize], val[k as usize]),
        }
    }

    /// Displaced positions, offset values and SDF gradients of the active nodes.
    fn active_nodes(&self, st: &OptState) -> (Vec<Vec3>, Vec<f64>, Vec<Vec3>) {
        let na = self.active.len();
        let mut pos = Vec::with_capacity(na);
        let mut val = Vec::with_capacity(na);
        let mut grad = Vec::with_capacity(na);
        for (k, &v) in self.active.iter().enumerate() {
            let p = self.bg.mesh.vertices[v] + st.dv[k];
            let (s, g) = self.sdf(&p);
            pos.push(p);
            val.push(s + st.dsdf[k]);
            grad.push(g);
        }
        (pos, val, grad)
    }

    fn vertices_from(&self, pos: &[Vec3], val: &[f64]) -> Vec<Vec3> {
        (0..self.vertex_edge.len())
            .map(|j| match self.vertex_pin[j] {
                Some(p) => self.bg.mesh.vertices[p],
                None => {
                    let [a, b] = self.topology.crossing_edges[self.vertex_edge[j]];
                    let (va, sa) = self.node(a, pos, val);
                    let (vb, sb) = self.node(b, pos, val);
                    crossing_point(&va, &vb, sa, sb)
                }
            })
            .collect()
    }

    /// Loss and its gradient with respect to the state.
    pub fn evaluate(&self, st: &OptState) -> Evaluation {
        let (pos, val, sgrad) = self.active_nodes(st);
        let x = self.vertices_from(&pos, &val);
        let sl = surface_loss(&x, &self.loss_topo, &self.weights);
        let na = self.active.len();
        let mut gpos = vec![Vec3::zeros(); na];
        let mut gval = vec![0.0; na];
        for (j, gx) in sl.grad.iter().enumerate() {
            if self.vertex_pin[j].is_some() {
                continue;
            }
            let [a, b] = self.topology.crossing_edges[self.vertex_edge[j]];
            let (va, sa) = self.node(a, &pos, &val);
            let (vb, sb) = self.node(b, &pos, &val);
            let d = sa - sb;
            let t = sa / d;
            let along = gx.dot(&(vb - va)) / (d * d);
            if self.slot[a] != NONE {
                let k = self.slot[a] as usize;
                gpos[k] += gx * (1.0 - t);
                gval[k] -= along * sb;
            }
            if self.slot[b] != NONE {
                let k = self.slot[b] as usize;
                gpos[k] += gx * t;
                gval[k] += along * sa;
            }
        }
        let mut terms = sl.terms;
        let l3 = self.weights.lambda[3];
        let mut grad = OptState::zeros(na);
        for k in 0..na {
            let n = st.dv[k].norm();
            terms.displacement += l3 * n;
            grad.dv[k] = gpos[k] + sgrad[k] * gval[k];
            if n > 0.0 {
                grad.dv[k] += st.dv[k] * (l3 / n);
            }
            grad.dsdf[k] = gval[k];
        }
        Evaluation {
            terms,
            grad,
            skipped: sl.skipped,
        }
    }

    pub fn value(&self, st: &OptState) -> f64 {
        self.evaluate(st).terms.total()
    }

    /// Restores every active node's reference side. Returns how many were touched.
    pub fn project(&self, st: &mut OptState) -> usize {
        let mut touched = 0;
        for (k, &v) in self.active.iter().enumerate() {
            let r = self.reference_inside[k];
            let (s, _) = self.sdf(&(self.bg.mesh.vertices[v] + st.dv[k]));
            if self.conv.inside(s + st.dsdf[k]) == r {
                continue;
            }
            touched += 1;
            st.dsdf[k] = if self.conv.inside(s) == r {
                -0.99 * s
            } else if r {
                -s + SIGN_MARGIN
            } else {
                -s - SIGN_MARGIN
            };
        }
        touched
    }

    /// Uniform `Δv` and `Δsdf` in `[-dv_scale, dv_scale]` and `[-sdf_scale, sdf_scale]`, projected.
    pub fn random_state(&self, seed: u64, dv_scale: f64, sdf_scale: f64) -> OptState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |s: f64| {
            if s > 0.0 {
                rng.random_range(-s..s)
            } else {
                0.0
            }
        };
        let mut st = OptState::zeros(self.active.len());
        for k in 0..st.len() {
            st.dv[k] = Vec3::new(u(dv_scale), u(dv_scale), u(dv_scale));
            st.dsdf[k] = u(sdf_scale);
        }
        self.project(&mut st);
        st
    }

    /// Full node positions and values for a state.
    pub fn nodal_state(&self, st: &OptState) -> (Vec<Vec3>, Vec<f64>) {
        let (pos, val, _) = self.active_nodes(st);
        let mut p = self.bg.mesh.vertices.clone();
        let mut s = self.fixed.clone();
        for (k, &v) in self.active.iter().enumerate() {
            p[v] = pos[k];
            s[v] = val[k];
        }
        (p, s)
    }

    /// True if re-running marching on the state reproduces the reference topology.
    pub fn topology_preserved(&self, st: &OptState) -> bool {
        let (p, s) = self.nodal_state(st);
        crossing_topology(&self.bg.mesh.tets, self.bg.n_real_tets, &p, &s, self.conv)
            .is_ok_and(|t| t == self.topology)
    }

    /// Surface on the loss connectivity; vertices pinned to boundary nodes are tagged contact.
    pub fn surface(&self, st: &OptState) -> TriSurface {
        let (pos, val, _) = self.active_nodes(st);
        let mut s = TriSurface::new(
            self.vertices_from(&pos, &val),
            self.loss_topo.triangles.clone(),
        );
        s.vertex_tags = Some(
            self.vertex_pin
                .iter()
                .map(|p| match p {
                    Some(v) if self.bg.mesh.node_flags[*v] & node_flags::BOUNDARY != 0 => {
                        VertexTag::Contact
                    }
                    _ => VertexTag::Free,
                })
                .collect(),
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DmtetStatus {
    Ok,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmtetResult {
    pub status: DmtetStatus,
    /// Cleaned output surface.
    pub surface: TriSurface,
    /// Loss before every step and after the last one.
    pub trace: Vec<LossTerms>,
    pub n_active: usize,
    /// Nodes pulled back to their reference side, summed over steps.
    pub clamped: usize,
    /// Gradient contributions skipped for zero-length edges, summed over steps.
    pub skipped: usize,
    /// Wedges filled to resolve edges with more than two faces.
    pub wedges_filled: usize,
    pub topology_preserved: bool,
    pub state: OptState,
}

impl DmtetResult {
    pub fn initial_loss(&self) -> Option<f64> {
        self.trace.first().map(|t| t.total())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|t| t.total())
    }
}

/// Runs the optimization and returns the cleaned surface of the final state.
pub fn optimize(y_ca2: &LabelGrid, bg: &BackgroundMesh, cfg: &DmtetConfig) -> Result<DmtetResult> {
    cfg.validate()?;
    let prob = DmtetProblem::new(y_ca2, bg, cfg.weights, cfg.convention)?;
    if prob.is_empty() {
        return Ok(DmtetResult {
            status: DmtetStatus::Empty,
            surface: TriSurface::default(),
            trace: Vec::new(),
            n_active: 0,
            clamped: 0,
            skipped: 0,
            wedges_filled: 0,
            topology_preserved: true,
            state: OptState::default(),
        });
    }
    let na = prob.n_active();
    let mut clamped = 0;
    let mut skipped = 0;
    let mut trace = Vec::new();
    let mut st = if cfg.optimize {
        prob.random_state(cfg.seed, cfg.init_scale, cfg.init_scale)
    } else {
        OptState::zeros(na)
    };
    if cfg.optimize {
        let mut adam = Adam::new(4 * na, cfg.lr);
        let mut flat = st.to_flat();
        for _ in 0..cfg.n_opt {
            let ev = prob.evaluate(&st);
            trace.push(ev.terms);
            skipped += ev.skipped;
            adam.step(&mut flat, &ev.grad.to_flat());
            st = OptState::from_flat(&flat);
            clamped += prob.project(&mut st);
            flat = st.to_flat();
        }
    }
    let ev = prob.evaluate(&st);
    trace.push(ev.terms);
    skipped += ev.skipped;
    let (surface, wedges_filled) =
        close_nonmanifold_edges(&clean_mesh(&prob.surface(&st), cfg.clean_tol));
    let topology_preserved = prob.topology_preserved(&st);
    Ok(DmtetResult {
        status: DmtetStatus::Ok,
        surface,
        trace,
        n_active: na,
        clamped,
        skipped,
        wedges_filled,
        topology_preserved,
        state: st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgmesh::tests::lattice_shell;
    use crate::mesh::is_watertight_manifold;
    use crate::voxelgrid::VoxelGrid;

    /// 8³ lattice shell (h = 1) around a 2³ hole, with a label blob grid of spacing 1/3.
    fn setup(blob: impl Fn(Vec3) -> bool) -> (BackgroundMesh, LabelGrid) {
        let bg = lattice_shell(8, [3, 5], 1.0);
        let h = 1.0 / 3.0;
        let n = 25;
        let mut g = VoxelGrid::filled([n; 3], Vec3::repeat(h), Vec3::zeros(), 0u8).unwrap();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if blob(g.center([i, j, k])) {
                        g.set(i, j, k, 1);
                    }
                }
            }
        }
        (bg, g)
    }

    fn touching_blob(p: Vec3) -> bool {
        // sits on the +x face of the hole [3, 5]^3
        (p - Vec3::new(5.9, 4.1, 3.8)).norm() < 1.6
    }

    #[test]
    fn empty_grid_gives_empty_surface() {
        let (bg, g) = setup(|_| false);
        let r = optimize(&g, &bg, &DmtetConfig::default()).unwrap();
        assert_eq!(r.status, DmtetStatus::Empty);
        assert!(r.surface.is_empty());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (bg, g) = setup(touching_blob);
        let prob = DmtetProblem::new(&g, &bg, LossWeights::default(), CrossingConvention::Printed)
            .unwrap();
        assert!(prob.n_active() > 10);
        for seed in 0..3 {
            let st = prob.random_state(seed, 0.05, 0.2);
            let ev = prob.evaluate(&st);
            let h = 1e-6;
            let (mut err_v, mut ref_v, mut err_s, mut ref_s) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for k in 0..prob.n_active() {
                for a in 0..4 {
                    let mut p = st.clone();
                    let bump = |p: &mut OptState, d: f64| {
                        if a < 3 {
                            p.dv[k][a] += d
                        } else {
                            p.dsdf[k] += d
                        }
                    };
                    bump(&mut p, h);
                    let fp = prob.value(&p);
                    bump(&mut p, -2.0 * h);
                    let fm = prob.value(&p);
                    let fd = (fp - fm) / (2.0 * h);
                    if a < 3 {
                        err_v = err_v.max((fd - ev.grad.dv[k][a]).abs());
                        ref_v = ref_v.max(fd.abs());
                    } else {
                        err_s = err_s.max((fd - ev.grad.dsdf[k]).abs());
                        ref_s = ref_s.max(fd.abs());
                    }
                }
            }
            assert!(err_v / ref_v < 1e-4, "dv {err_v} / {ref_v}");
            assert!(err_s / ref_s < 1e-4, "dsdf {err_s} / {ref_s}");
        }
    }

    #[test]
    fn optimization_reduces_loss_and_keeps_contact() {
        let (bg, g) = setup(touching_blob);
        let cfg = DmtetConfig {
            weights: LossWeights {
                eps_len: 0.5,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = optimize(&g, &bg, &cfg).unwrap();
        assert_eq!(r.status, DmtetStatus::Ok);
        assert!(r.final_loss().unwrap() < r.initial_loss().unwrap());
        assert!(r.topology_preserved);
        let rep = is_watertight_manifold(&r.surface);
        assert!(rep.ok, "{rep:?}");
        let tags = r.surface.vertex_tags.as_ref().unwrap();
        let n_contact = tags.iter().filter(|&&t| t == VertexTag::Contact).count();
        assert!(n_contact > 0);
        for (v, t) in r.surface.vertices.iter().zip(tags) {
            if *t == VertexTag::Contact {
                assert!(bg.boundary_nodes.iter().any(|&b| bg.mesh.vertices[b] == *v));
            }
        }
        let again = optimize(&g, &bg, &cfg).unwrap();
        assert_eq!(again.surface, r.surface);
    }

    #[test]
    fn unoptimized_variant_is_the_raw_isosurface() {
        let (bg, g) = setup(touching_blob);
        let cfg = DmtetConfig {
            optimize: false,
            ..Default::default()
        };
        let r = optimize(&g, &bg, &cfg).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert!(r.state.dv.iter().all(|d| *d == Vec3::zeros()));
        assert!(is_watertight_manifold(&r.surface).ok);
    }

    #[test]
    fn projection_restores_reference_signs() {
        let (bg, g) = setup(touching_blob);
        let prob = DmtetProblem::new(&g, &bg, LossWeights::default(), CrossingConvention::Printed)
            .unwrap();
        let mut st = prob.random_state(1, 0.0, 0.0);
        for d in &mut st.dsdf {
            *d = 5.0;
        }
        for v in &mut st.dv {
            *v = Vec3::new(0.4, -0.3, 0.2);
        }
        prob.project(&mut st);
        assert!(prob.topology_preserved(&st));
    }
}
