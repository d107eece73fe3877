//! Background tet mesh for the marching stage: the shell between the aortic
//! root surface and its offset, hollowed, with one shared fake node closing
//! every boundary face.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::assemble::mesher::{default_executable, tetrahedralize_plc, MesherJob, QualityOpts};
use crate::error::{CmacError, Result, StageExt};
use crate::mesh::{
    boundary_faces, extract_component_surface, is_watertight_manifold, merge_surfaces, node_flags,
    offset_surface, Component, TetMesh, TriSurface, WindingIndex,
};
use crate::spatial::PointIndex;
use crate::Vec3;

/// Heart nodes closer than this to a background boundary node are taken as the same point.
pub const CORRESPONDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMesh {
    /// Real tets first, then one fake tet per boundary face. The fake node is the last vertex.
    pub mesh: TetMesh,
    pub n_real_tets: usize,
    pub boundary_nodes: Vec<usize>,
    pub fake_node: usize,
    pub fake_tets: Vec<usize>,
    /// Background boundary node to the coincident heart-mesh node.
    pub surface_correspondence: BTreeMap<usize, usize>,
}

impl BackgroundMesh {
    pub fn real_tets(&self) -> &[[usize; 4]] {
        &self.mesh.tets[..self.n_real_tets]
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.vertices.len()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.mesh.node_flags[i] & node_flags::BOUNDARY != 0
    }

    /// Boundary nodes and the fake node carry fixed values and never move.
    pub fn frozen_mask(&self) -> Vec<bool> {
        self.mesh
            .node_flags
            .iter()
            .map(|f| f & (node_flags::BOUNDARY | node_flags::FAKE) != 0)
            .collect()
    }

    /// The hollowed mesh without fake elements.
    pub fn real_mesh(&self) -> TetMesh {
        let mut m = self.mesh.clone();
        m.tets.truncate(self.n_real_tets);
        m.components.truncate(self.n_real_tets);
        m.vertices.truncate(self.fake_node);
        m.node_flags.truncate(self.fake_node);
        m
    }

    /// Checks the structural invariants; used by tests and after generation.
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        let n = self.n_nodes();
        if self.fake_node + 1 != n || self.mesh.node_flags[self.fake_node] & node_flags::FAKE == 0 {
            return Err(CmacError::InvalidInput(
                "fake node must be the last vertex".into(),
            ));
        }
        let faces = boundary_faces(&self.mesh.vertices, self.real_tets());
        if faces.len() != self.fake_tets.len() {
            return Err(CmacError::InvalidInput(
                "fake tet count differs from boundary face count".into(),
            ));
        }
        for &t in &self.fake_tets {
            let tet = self.mesh.tets[t];
            if tet.iter().filter(|&&i| i == self.fake_node).count() != 1
                || tet
                    .iter()
                    .filter(|&&i| i != self.fake_node)
                    .any(|&i| !self.is_boundary(i))
            {
                return Err(CmacError::InvalidInput(format!(
                    "fake tet {t} is malformed"
                )));
            }
        }
        let mut used: Vec<usize> = faces.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        if used != self.boundary_nodes {
            return Err(CmacError::InvalidInput(
                "boundary node set differs from boundary faces".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BgmeshConfig {
    /// Image voxel spacing in mm.
    pub voxel_spacing: f64,
    /// Shell thickness in voxels.
    pub offset_voxels: f64,
    /// Target background edge length in voxels.
    pub edge_voxels: f64,
    pub max_radius_edge_ratio: f64,
}

impl Default for BgmeshConfig {
    fn default() -> Self {
        BgmeshConfig {
            voxel_spacing: 1.25,
            offset_voxels: 10.0,
            edge_voxels: 2.0,
            max_radius_edge_ratio: 2.0,
        }
    }
}

impl BgmeshConfig {
    pub fn offset_distance(&self) -> f64 {
        self.offset_voxels * self.voxel_spacing
    }

    /// Volume of the regular tet with the target edge length.
    pub fn max_volume(&self) -> f64 {
        let l = self.edge_voxels * self.voxel_spacing;
        l * l * l / (6.0 * std::f64::consts::SQRT_2)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.voxel_spacing)
            && ok(self.offset_voxels)
            && ok(self.edge_voxels)
            && self.max_radius_edge_ratio > 1.0)
        {
            return Err(CmacError::InvalidInput(format!(
                "bad background mesh config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Where the mesher runs.
#[derive(Debug, Clone)]
pub struct MesherSetup {
    pub workdir: PathBuf,
    pub executable: PathBuf,
    pub timeout_s: u64,
}

impl MesherSetup {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        MesherSetup {
            workdir: workdir.into(),
            executable: default_executable(),
            timeout_s: 300,
        }
    }

    pub fn job(&self, surface: TriSurface, name: &str, quality_opts: QualityOpts) -> MesherJob {
        MesherJob {
            input_surface: surface,
            quality_opts,
            workdir: self.workdir.clone(),
            executable: self.executable.clone(),
            timeout_s: self.timeout_s,
            name: name.into(),
        }
    }
}

/// Removes every tet whose centroid lies inside `aorta`, then drops orphaned vertices.
pub fn hollow(prelim: &TetMesh, aorta: &TriSurface) -> Result<TetMesh> {
    let wi = WindingIndex::new(aorta);
    let keep: Vec<usize> = (0..prelim.tets.len())
        .filter(|&t| {
            let c = prelim.tets[t]
                .iter()
                .map(|&i| prelim.vertices[i])
                .sum::<Vec3>()
                / 4.0;
            !wi.inside(&c)
        })
        .collect();
    if keep.is_empty() {
        return Err(CmacError::Empty(
            "every tet lies inside the aortic surface".into(),
        ));
    }
    let mut remap = vec![usize::MAX; prelim.vertices.len()];
    for &t in &keep {
        for &i in &prelim.tets[t] {
            remap[i] = 0;
        }
    }
    let mut vertices = Vec::new();
    let mut flags = Vec::new();
    for (i, r) in remap.iter_mut().enumerate() {
        if *r == 0 {
            *r = vertices.len();
            vertices.push(prelim.vertices[i]);
            flags.push(prelim.node_flags[i]);
        }
    }
    Ok(TetMesh {
        vertices,
        tets: keep
            .iter()
            .map(|&t| prelim.tets[t].map(|i| remap[i]))
            .collect(),
        components: keep.iter().map(|&t| prelim.components[t]).collect(),
        node_flags: flags,
    })
}

/// Appends the fake node at the boundary centroid and one fake tet per boundary face.
pub fn create_fake_elems(hollowed: &TetMesh) -> Result<BackgroundMesh> {
    if hollowed.tets.is_empty() {
        return Err(CmacError::Empty(
            "no tets to close with fake elements".into(),
        ));
    }
    let faces = boundary_faces(&hollowed.vertices, &hollowed.tets);
    let mut boundary_nodes: Vec<usize> = faces.iter().flatten().copied().collect();
    boundary_nodes.sort_unstable();
    boundary_nodes.dedup();
    let mut mesh = hollowed.clone();
    for f in mesh.node_flags.iter_mut() {
        *f &= !(node_flags::BOUNDARY | node_flags::FAKE);
    }
    for &i in &boundary_nodes {
        mesh.node_flags[i] |= node_flags::BOUNDARY;
    }
    let centroid = boundary_nodes
        .iter()
        .map(|&i| mesh.vertices[i])
        .sum::<Vec3>()
        / boundary_nodes.len() as f64;
    let fake_node = mesh.vertices.len();
    mesh.vertices.push(centroid);
    mesh.node_flags.push(node_flags::FAKE);
    let n_real_tets = mesh.tets.len();
    for f in &faces {
        mesh.tets.push([f[0], f[1], f[2], fake_node]);
        mesh.components.push(Component::Background);
    }
    Ok(BackgroundMesh {
        mesh,
        n_real_tets,
        boundary_nodes,
        fake_node,
        fake_tets: (n_real_tets..n_real_tets + faces.len()).collect(),
        surface_correspondence: BTreeMap::new(),
    })
}

/// Matches background boundary nodes to heart nodes within [`CORRESPONDENCE_TOL`].
pub fn surface_correspondence(
    bg: &BackgroundMesh,
    heart_nodes: &[usize],
    heart: &TetMesh,
) -> BTreeMap<usize, usize> {
    let pts: Vec<Vec3> = heart_nodes.iter().map(|&i| heart.vertices[i]).collect();
    let index = PointIndex::new(&pts);
    let mut map = BTreeMap::new();
    for &b in &bg.boundary_nodes {
        if let Some((k, d)) = index.nearest(&bg.mesh.vertices[b]) {
            if d <= CORRESPONDENCE_TOL {
                map.insert(b, heart_nodes[k]);
            }
        }
    }
    map
}

/// Aortic-root surface, offset shell, constrained tetrahedralization, hollowing
/// and fake elements. Every failure names its stage.
pub fn generate_background_mesh(
    heart: &TetMesh,
    cfg: &BgmeshConfig,
    mesher: &MesherSetup,
) -> Result<BackgroundMesh> {
    cfg.validate()?;
    let root = extract_component_surface(heart, &Component::AORTIC_ROOT).stage("bgmesh.extract")?;
    let report = is_watertight_manifold(&root.surface);
    if !report.ok {
        return Err(CmacError::NotManifold(report).in_stage("bgmesh.extract"));
    }
    let offset = offset_surface(&root.surface, cfg.offset_distance(), cfg.voxel_spacing)
        .stage("bgmesh.offset")?;
    let plc = merge_surfaces(&root.surface, &offset).stage("bgmesh.merge")?;
    let q = QualityOpts {
        max_radius_edge_ratio: cfg.max_radius_edge_ratio,
        max_volume: Some(cfg.max_volume()),
    };
    let prelim = tetrahedralize_plc(&plc, &mesher.job(plc.clone(), "background", q))
        .stage("bgmesh.tetrahedralize")?;
    let hollowed = hollow(&prelim, &root.surface).stage("bgmesh.hollow")?;
    let mut bg = create_fake_elems(&hollowed).stage("bgmesh.fake")?;
    bg.surface_correspondence = surface_correspondence(&bg, &root.tet_vertex, heart);
    Ok(bg)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mesh::lattice_tet_mesh;

    /// Lattice shell: cells of a cube minus an inner box, hollow by construction.
    pub(crate) fn lattice_shell(n: usize, hole: [usize; 2], h: f64) -> BackgroundMesh {
        let lo = hole[0] as f64 * h;
        let hi = hole[1] as f64 * h;
        let m = lattice_tet_mesh([n; 3], Vec3::zeros(), Vec3::repeat(h), |c| {
            let inside = (0..3).all(|a| c[a] > lo && c[a] < hi);
            (!inside).then_some(Component::Background)
        });
        create_fake_elems(&m).unwrap()
    }

    #[test]
    fn fake_elements_close_every_boundary_face() {
        let bg = lattice_shell(4, [1, 3], 1.0);
        bg.validate().unwrap();
        // outer cube 6*16*2 faces, inner 6*4*2
        assert_eq!(bg.fake_tets.len(), 192 + 48);
        let mut covered = vec![false; bg.n_nodes()];
        for &t in &bg.fake_tets {
            for &i in &bg.mesh.tets[t] {
                covered[i] = true;
            }
        }
        assert!(bg.boundary_nodes.iter().all(|&i| covered[i]));
        assert_eq!(bg.real_mesh().tets.len(), bg.n_real_tets);
        let frozen = bg.frozen_mask();
        assert_eq!(
            frozen.iter().filter(|&&f| f).count(),
            bg.boundary_nodes.len() + 1
        );
    }

    #[test]
    fn hollow_removes_inner_ball() {
        let m = lattice_tet_mesh([10; 3], Vec3::repeat(-5.0), Vec3::repeat(1.0), |_| {
            Some(Component::Background)
        });
        let ball = crate::mesh::icosphere(Vec3::new(0.1, 0.05, -0.07), 3.0, 3);
        let h = hollow(&m, &ball).unwrap();
        let removed = m.volume() - h.volume();
        let exact = ball.signed_volume();
        assert!(
            (removed - exact).abs() < 0.25 * exact,
            "{removed} vs {exact}"
        );
        let wi = WindingIndex::new(&ball);
        for t in 0..h.tets.len() {
            let c = h.tets[t].iter().map(|&i| h.vertices[i]).sum::<Vec3>() / 4.0;
            assert!(!wi.inside(&c));
        }
    }

    #[test]
    fn hollow_identity_and_everything_inside() {
        let m = lattice_tet_mesh([2; 3], Vec3::zeros(), Vec3::repeat(1.0), |_| {
            Some(Component::Background)
        });
        let far = crate::mesh::icosphere(Vec3::repeat(50.0), 1.0, 1);
        assert_eq!(hollow(&m, &far).unwrap(), m);
        let big = crate::mesh::icosphere(Vec3::repeat(1.0), 10.0, 2);
        assert!(hollow(&m, &big).is_err());
    }

    #[test]
    fn correspondence_matches_coincident_nodes() {
        let bg = lattice_shell(4, [1, 3], 1.0);
        let heart = lattice_tet_mesh([2; 3], Vec3::repeat(1.0), Vec3::repeat(1.0), |_| {
            Some(Component::Aorta)
        });
        let nodes: Vec<usize> = (0..heart.vertices.len()).collect();
        let map = surface_correspondence(&bg, &nodes, &heart);
        // the 26 surface nodes of the inner box
        assert_eq!(map.len(), 26);
        for (b, h) in map {
            assert_eq!(bg.mesh.vertices[b], heart.vertices[h]);
        }
    }
}
