//! Triangle and tetrahedral meshes.

pub mod io;
mod merge;
mod offset;
mod topology;
mod winding;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use merge::merge_surfaces;
pub use offset::offset_surface;
pub use topology::{
    connected_face_components, is_watertight_manifold, is_watertight_manifold_tol,
    pinched_vertices, ManifoldReport,
};
pub use winding::{point_inside, winding_number, WindingIndex};

use crate::error::{CmacError, Result};
use crate::geom::{tet_signed_volume, tri_area, tri_normal, Aabb};
use crate::Vec3;

/// Tissue label of a tetrahedron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Component {
    Background = 0,
    Aorta = 1,
    Leaflet1 = 2,
    Leaflet2 = 3,
    Leaflet3 = 4,
    Lv = 5,
    Calcification = 6,
}

impl Component {
    pub const LEAFLETS: [Component; 3] = [
        Component::Leaflet1,
        Component::Leaflet2,
        Component::Leaflet3,
    ];
    pub const AORTIC_ROOT: [Component; 4] = [
        Component::Aorta,
        Component::Leaflet1,
        Component::Leaflet2,
        Component::Leaflet3,
    ];
    pub const HEART: [Component; 5] = [
        Component::Aorta,
        Component::Leaflet1,
        Component::Leaflet2,
        Component::Leaflet3,
        Component::Lv,
    ];

    pub fn from_u8(v: u8) -> Option<Component> {
        Some(match v {
            0 => Component::Background,
            1 => Component::Aorta,
            2 => Component::Leaflet1,
            3 => Component::Leaflet2,
            4 => Component::Leaflet3,
            5 => Component::Lv,
            6 => Component::Calcification,
            _ => return None,
        })
    }

    pub fn leaflet_index(self) -> Option<usize> {
        Component::LEAFLETS.iter().position(|&c| c == self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VertexTag {
    Free,
    Contact,
    Border,
}

impl VertexTag {
    pub fn as_str(self) -> &'static str {
        match self {
            VertexTag::Free => "free",
            VertexTag::Contact => "contact",
            VertexTag::Border => "border",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriSurface {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub vertex_tags: Option<Vec<VertexTag>>,
    pub face_tags: Option<Vec<u8>>,
}

impl TriSurface {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        TriSurface {
            vertices,
            faces,
            vertex_tags: None,
            face_tags: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&i| i >= n)) {
            return Err(CmacError::InvalidInput(format!(
                "face {f} references a missing vertex"
            )));
        }
        if self.vertex_tags.as_ref().is_some_and(|t| t.len() != n) {
            return Err(CmacError::InvalidInput("vertex tag count mismatch".into()));
        }
        if self
            .face_tags
            .as_ref()
            .is_some_and(|t| t.len() != self.faces.len())
        {
            return Err(CmacError::InvalidInput("face tag count mismatch".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn tri(&self, f: usize) -> [&Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [&self.vertices[a], &self.vertices[b], &self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.tri(f);
        tri_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Enclosed volume by the divergence theorem (positive for outward faces).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                self.vertices[f[0]].dot(&self.vertices[f[1]].cross(&self.vertices[f[2]])) / 6.0
            })
            .sum()
    }

    /// Area-weighted unit vertex normals (zero for isolated vertices).
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let fnrm = tri_normal(
                &self.vertices[f[0]],
                &self.vertices[f[1]],
                &self.vertices[f[2]],
            );
            for &i in f {
                n[i] += fnrm;
            }
        }
        for v in &mut n {
            let l = v.norm();
            if l > 0.0 {
                *v /= l;
            }
        }
        n
    }

    /// Unique undirected edges `(lo, hi)` in sorted order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut e: Vec<[usize; 2]> = self
            .faces
            .iter()
            .flat_map(|f| {
                (0..3).map(move |k| {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    [a.min(b), a.max(b)]
                })
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn mean_edge_length(&self) -> f64 {
        let e = self.edges();
        if e.is_empty() {
            return 0.0;
        }
        e.iter()
            .map(|&[a, b]| (self.vertices[a] - self.vertices[b]).norm())
            .sum::<f64>()
            / e.len() as f64
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(
            self.faces
                .iter()
                .flat_map(|f| f.iter().map(|&i| &self.vertices[i])),
        )
    }

    /// Drop vertices not used by any face; returns the old index of each kept vertex.
    pub fn compact(&mut self) -> Vec<usize> {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = kept.len();
                kept.push(i);
            }
        }
        self.vertices = kept.iter().map(|&i| self.vertices[i]).collect();
        if let Some(t) = &self.vertex_tags {
            self.vertex_tags = Some(kept.iter().map(|&i| t[i]).collect());
        }
        for f in &mut self.faces {
            *f = f.map(|i| remap[i]);
        }
        kept
    }

    /// Faces around every vertex.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut vf = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                vf[i].push(fi);
            }
        }
        vf
    }

    /// Sorted neighbour lists over the edge graph.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for [a, b] in self.edges() {
            nb[a].push(b);
            nb[b].push(a);
        }
        for n in &mut nb {
            n.sort_unstable();
        }
        nb
    }
}

/// Node flag bits on a [`TetMesh`].
pub mod node_flags {
    pub const BOUNDARY: u8 = 1;
    pub const FAKE: u8 = 2;
    pub const CONTACT: u8 = 4;
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub components: Vec<Component>,
    pub node_flags: Vec<u8>,
}

impl TetMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        tets: Vec<[usize; 4]>,
        components: Vec<Component>,
    ) -> Result<Self> {
        let m = TetMesh {
            node_flags: vec![0; vertices.len()],
            vertices,
            tets,
            components,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.len() != self.tets.len() {
            return Err(CmacError::InvalidInput(
                "every tet needs a component label".into(),
            ));
        }
        if self.node_flags.len() != self.vertices.len() {
            return Err(CmacError::InvalidInput("node flag count mismatch".into()));
        }
        let n = self.vertices.len();
        if let Some(t) = self.tets.iter().position(|t| t.iter().any(|&i| i >= n)) {
            return Err(CmacError::InvalidInput(format!(
                "tet {t} references a missing vertex"
            )));
        }
        Ok(())
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t].map(|i| &self.vertices[i]);
        tet_signed_volume(a, b, c, d)
    }

    pub fn volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    /// Swap two corners of every negatively oriented tet.
    pub fn canonicalize_orientation(&mut self) {
        for t in 0..self.tets.len() {
            if self.tet_volume(t) < 0.0 {
                self.tets[t].swap(2, 3);
            }
        }
    }

    pub fn has_component(&self, c: Component) -> bool {
        self.components.contains(&c)
    }

    /// Sub-mesh of the selected components, vertices compacted in index order.
    /// Returns the sub-mesh and the original index of each kept vertex.
    pub fn submesh(&self, components: &[Component]) -> (TetMesh, Vec<usize>) {
        let sel: Vec<usize> = (0..self.tets.len())
            .filter(|&t| components.contains(&self.components[t]))
            .collect();
        let mut used = vec![false; self.vertices.len()];
        for &t in &sel {
            for &i in &self.tets[t] {
                used[i] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for i in 0..self.vertices.len() {
            if used[i] {
                remap[i] = kept.len();
                kept.push(i);
            }
        }
        let mesh = TetMesh {
            vertices: kept.iter().map(|&i| self.vertices[i]).collect(),
            tets: sel
                .iter()
                .map(|&t| self.tets[t].map(|i| remap[i]))
                .collect(),
            components: sel.iter().map(|&t| self.components[t]).collect(),
            node_flags: kept.iter().map(|&i| self.node_flags[i]).collect(),
        };
        (mesh, kept)
    }

    /// Mesh vertices used by tets of the given components, sorted.
    pub fn component_nodes(&self, components: &[Component]) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .tets
            .iter()
            .zip(&self.components)
            .filter(|(_, c)| components.contains(c))
            .flat_map(|(t, _)| t.iter().copied())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Structured tet mesh: each lattice cell with a component (judged at its
/// center) is split into the six Kuhn tets, which conform across neighbours.
/// Vertices are numbered in lattice scan order, unused ones dropped.
pub fn lattice_tet_mesh(
    cells: [usize; 3],
    origin: Vec3,
    h: Vec3,
    mut label: impl FnMut(Vec3) -> Option<Component>,
) -> TetMesh {
    let nd = [cells[0] + 1, cells[1] + 1, cells[2] + 1];
    let gid = |i: usize, j: usize, k: usize| i + nd[0] * (j + nd[1] * k);
    let mut tets = Vec::new();
    let mut comps = Vec::new();
    for k in 0..cells[2] {
        for j in 0..cells[1] {
            for i in 0..cells[0] {
                let c = origin
                    + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5).component_mul(&h);
                let Some(comp) = label(c) else { continue };
                let corner = |c: usize| gid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                for t in crate::dmtet::marching::KUHN_TETS {
                    tets.push(t.map(corner));
                    comps.push(comp);
                }
            }
        }
    }
    let mut remap = vec![usize::MAX; nd[0] * nd[1] * nd[2]];
    for t in &tets {
        for &g in t {
            remap[g] = 0;
        }
    }
    let mut vertices = Vec::new();
    for (g, r) in remap.iter_mut().enumerate() {
        if *r == 0 {
            *r = vertices.len();
            let (i, j, k) = (g % nd[0], (g / nd[0]) % nd[1], g / (nd[0] * nd[1]));
            vertices.push(origin + Vec3::new(i as f64, j as f64, k as f64).component_mul(&h));
        }
    }
    let tets = tets.into_iter().map(|t| t.map(|g| remap[g])).collect();
    let mut m = TetMesh {
        node_flags: vec![0; vertices.len()],
        vertices,
        tets,
        components: comps,
    };
    m.canonicalize_orientation();
    m
}

/// Subdivided icosahedron projected onto a sphere, outward oriented.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: usize) -> TriSurface {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        [-1., t, 0.],
        [1., t, 0.],
        [-1., -t, 0.],
        [1., -t, 0.],
        [0., -1., t],
        [0., 1., t],
        [0., -1., -t],
        [0., 1., -t],
        [t, 0., -1.],
        [t, 0., 1.],
        [-t, 0., -1.],
        [-t, 0., 1.],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        for tri in &f {
            let m = [0, 1, 2].map(|k| {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(((v[a] + v[b]) * 0.5).normalize());
                    v.len() - 1
                })
            });
            next.push([tri[0], m[0], m[2]]);
            next.push([tri[1], m[1], m[0]]);
            next.push([tri[2], m[2], m[1]]);
            next.push(m);
        }
        f = next;
    }
    TriSurface::new(v.into_iter().map(|p| center + p * radius).collect(), f)
}

/// Boundary surface of a selected tet sub-mesh plus, for each surface vertex,
/// its index in the tet mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedSurface {
    pub surface: TriSurface,
    pub tet_vertex: Vec<usize>,
}

/// Faces of each tet pointing outward for positive orientation.
pub(crate) const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

/// Faces that belong to exactly one tet of `tets`, oriented outward.
pub fn boundary_faces(vertices: &[Vec3], tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let mut count: HashMap<[usize; 3], (u32, [usize; 3], usize)> = HashMap::new();
    let mut order = 0usize;
    for t in tets {
        let neg = {
            let [a, b, c, d] = t.map(|i| &vertices[i]);
            tet_signed_volume(a, b, c, d) < 0.0
        };
        for lf in TET_FACES {
            let mut f = lf.map(|k| t[k]);
            if neg {
                f.swap(1, 2);
            }
            let mut key = f;
            key.sort_unstable();
            let e = count.entry(key).or_insert((0, f, order));
            e.0 += 1;
            order += 1;
        }
    }
    let mut faces: Vec<(usize, [usize; 3])> = count
        .into_values()
        .filter(|(n, _, _)| *n == 1)
        .map(|(_, f, o)| (o, f))
        .collect();
    faces.sort_unstable();
    faces.into_iter().map(|(_, f)| f).collect()
}

pub fn extract_component_surface(
    mesh: &TetMesh,
    components: &[Component],
) -> Result<ExtractedSurface> {
    if components.is_empty() {
        return Err(CmacError::InvalidInput(
            "component selection is empty".into(),
        ));
    }
    let tets: Vec<[usize; 4]> = mesh
        .tets
        .iter()
        .zip(&mesh.components)
        .filter(|(_, c)| components.contains(c))
        .map(|(t, _)| *t)
        .collect();
    if tets.is_empty() {
        return Err(CmacError::Empty(format!(
            "no tets with components {components:?}"
        )));
    }
    let faces = boundary_faces(&mesh.vertices, &tets);
    let mut used: BTreeMap<usize, usize> = BTreeMap::new();
    for f in &faces {
        for &i in f {
            used.insert(i, 0);
        }
    }
    let tet_vertex: Vec<usize> = used.keys().copied().collect();
    for (k, i) in tet_vertex.iter().enumerate() {
        used.insert(*i, k);
    }
    let surface = TriSurface::new(
        tet_vertex.iter().map(|&i| mesh.vertices[i]).collect(),
        faces.iter().map(|f| f.map(|i| used[&i])).collect(),
    );
    Ok(ExtractedSurface {
        surface,
        tet_vertex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_tet_mesh() -> TetMesh {
        TetMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1., 0., 0.),
                Vec3::new(0., 1., 0.),
                Vec3::new(0., 0., 1.),
            ],
            vec![[0, 1, 2, 3]],
            vec![Component::Aorta],
        )
        .unwrap()
    }

    /// Unit cube split into 5 tets.
    pub(crate) fn five_tet_cube() -> TetMesh {
        let v: Vec<Vec3> = (0..8)
            .map(|c| Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64))
            .collect();
        let tets = vec![
            [0, 1, 2, 4],
            [1, 3, 2, 7],
            [1, 4, 5, 7],
            [2, 6, 4, 7],
            [1, 2, 4, 7],
        ];
        let mut m = TetMesh::new(v, tets, vec![Component::Aorta; 5]).unwrap();
        m.canonicalize_orientation();
        m
    }

    #[test]
    fn single_tet_surface_is_outward() {
        let s = extract_component_surface(&unit_tet_mesh(), &[Component::Aorta])
            .unwrap()
            .surface;
        assert_eq!(s.faces.len(), 4);
        assert!((s.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
        assert!(is_watertight_manifold(&s).ok);
    }

    #[test]
    fn glued_tets_hide_shared_face() {
        let m = TetMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1., 0., 0.),
                Vec3::new(0., 1., 0.),
                Vec3::new(0., 0., 1.),
                Vec3::new(1., 1., 1.),
            ],
            vec![[0, 1, 2, 3], [1, 2, 3, 4]],
            vec![Component::Aorta, Component::Leaflet1],
        )
        .unwrap();
        let s = extract_component_surface(&m, &Component::AORTIC_ROOT)
            .unwrap()
            .surface;
        assert_eq!(s.faces.len(), 6);
        assert!(is_watertight_manifold(&s).ok);
        assert!(s.signed_volume() > 0.0);
        let one = extract_component_surface(&m, &[Component::Leaflet1]).unwrap();
        assert_eq!(one.tet_vertex, vec![1, 2, 3, 4]);
    }

    #[test]
    fn lattice_mesh_is_conforming() {
        let m = lattice_tet_mesh([3, 2, 2], Vec3::zeros(), Vec3::repeat(0.5), |_| {
            Some(Component::Aorta)
        });
        assert_eq!(m.tets.len(), 72);
        assert_eq!(m.vertices.len(), 36);
        assert!((m.volume() - 1.5).abs() < 1e-12);
        assert!((0..m.tets.len()).all(|t| m.tet_volume(t) > 0.0));
        let s = extract_component_surface(&m, &[Component::Aorta])
            .unwrap()
            .surface;
        assert!(is_watertight_manifold(&s).ok);
        assert_eq!(s.faces.len(), 2 * 2 * (6 + 6 + 4));
    }

    #[test]
    fn five_tet_cube_has_twelve_faces() {
        let m = five_tet_cube();
        assert!((m.volume() - 1.0).abs() < 1e-15);
        let s = extract_component_surface(&m, &[Component::Aorta])
            .unwrap()
            .surface;
        assert_eq!(s.faces.len(), 12);
        assert!((s.signed_volume() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let s = icosphere(Vec3::new(1., 2., 3.), 2.0, 2);
        assert_eq!(s.faces.len(), 320);
        assert!(is_watertight_manifold(&s).ok);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 8.0;
        assert!(s.signed_volume() > 0.95 * exact && s.signed_volume() < exact);
    }

    #[test]
    fn empty_selection_rejected() {
        assert!(extract_component_surface(&unit_tet_mesh(), &[]).is_err());
        assert!(extract_component_surface(&unit_tet_mesh(), &[Component::Lv]).is_err());
    }
}
