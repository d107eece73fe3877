//! Constrained remeshing by vertex clustering: the free part of the surface is
//! re-sampled with uniform centroidal clusters while contact faces, and every
//! vertex that sits on a heart node, stay exactly where they are.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{CmacError, Result};
use crate::mesh::{
    is_watertight_manifold, pinched_vertices, ManifoldReport, TriSurface, VertexTag,
};
use crate::spatial::PointIndex;
use crate::Vec3;

/// Heart nodes closer than this are taken as coincident.
pub const CONTACT_TOL: f64 = 1e-9;
pub const FACE_FREE: u8 = 0;
pub const FACE_CONTACT: u8 = 1;

/// A surface split into contact and free faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub contact: TriSurface,
    pub free: TriSurface,
    /// Source vertex of each contact / free vertex.
    pub contact_vertex: Vec<usize>,
    pub free_vertex: Vec<usize>,
    /// Free vertices that coincide with a heart node; they never move.
    pub locked: Vec<bool>,
    /// `(free vertex, contact vertex)` for vertices shared by both halves.
    pub border: Vec<(usize, usize)>,
}

fn sub_surface(s: &TriSurface, faces: &[usize]) -> (TriSurface, Vec<usize>) {
    let mut out = TriSurface::new(
        s.vertices.clone(),
        faces.iter().map(|&f| s.faces[f]).collect(),
    );
    out.vertex_tags = s.vertex_tags.clone();
    let kept = out.compact();
    (out, kept)
}

/// Faces whose three vertices all coincide with heart nodes are contact faces.
pub fn separate_contact(s: &TriSurface, heart_nodes: &PointIndex, tol: f64) -> Separation {
    let on_heart: Vec<bool> = s
        .vertices
        .iter()
        .map(|p| heart_nodes.nearest(p).is_some_and(|(_, d)| d <= tol))
        .collect();
    let (mut cf, mut ff) = (Vec::new(), Vec::new());
    for (i, f) in s.faces.iter().enumerate() {
        if f.iter().all(|&v| on_heart[v]) {
            cf.push(i);
        } else {
            ff.push(i);
        }
    }
    let (contact, contact_vertex) = sub_surface(s, &cf);
    let (free, free_vertex) = sub_surface(s, &ff);
    let locked = free_vertex.iter().map(|&v| on_heart[v]).collect();
    let cpos: HashMap<usize, usize> = contact_vertex
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    let border = free_vertex
        .iter()
        .enumerate()
        .filter_map(|(i, v)| cpos.get(v).map(|&c| (i, c)))
        .collect();
    Separation {
        contact,
        free,
        contact_vertex,
        free_vertex,
        locked,
        border,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusteringStatus {
    Ok,
    /// Nothing to simplify (every vertex locked or already its own cluster).
    Identity,
    /// The clustered surface was not triangulable; the input is returned.
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub surface: TriSurface,
    /// Source free vertex of each locked output vertex.
    pub locked_origin: Vec<Option<usize>>,
    pub n_clusters: usize,
    pub swaps: usize,
    pub status: ClusteringStatus,
}

/// Barycentric (one third of incident face area) vertex weights.
fn vertex_areas(s: &TriSurface) -> Vec<f64> {
    let mut w = vec![0.0; s.vertices.len()];
    for f in 0..s.faces.len() {
        let a = s.face_area(f) / 3.0;
        for &i in &s.faces[f] {
            w[i] += a;
        }
    }
    w
}

struct ClusterStats {
    sum: Vec<Vec3>,
    weight: Vec<f64>,
    count: Vec<usize>,
}

/// Uniform-density centroidal clustering of a free surface.
///
/// `locked` vertices are singleton clusters that keep their position. The
/// others start from farthest-point seeds grown over the edge graph, then
/// boundary vertices move between neighbouring clusters while that raises
/// `Σ_k ‖Σ_{i∈k} w_i p_i‖² / Σ_{i∈k} w_i`.
pub fn constrained_clustering(
    free: &TriSurface,
    ratio: f64,
    locked: &[bool],
    max_passes: usize,
    seed: u64,
) -> Result<Clustering> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CmacError::InvalidInput(format!(
            "clustering ratio must be in (0, 1], got {ratio}"
        )));
    }
    let n = free.vertices.len();
    if locked.len() != n {
        return Err(CmacError::InvalidInput(
            "locked mask length differs from vertex count".into(),
        ));
    }
    let unlocked: Vec<usize> = (0..n).filter(|&i| !locked[i]).collect();
    let m = unlocked.len();
    let k_target = (ratio * m as f64).ceil() as usize;
    let identity = |status| Clustering {
        surface: free.clone(),
        locked_origin: (0..n).map(|i| locked[i].then_some(i)).collect(),
        n_clusters: n,
        swaps: 0,
        status,
    };
    if m == 0 || k_target >= m {
        return Ok(identity(ClusteringStatus::Identity));
    }
    let nbrs = free.vertex_neighbors();
    let w = vertex_areas(free);
    // centered coordinates keep the running sums small
    let shift = free.vertices.iter().sum::<Vec3>() / n as f64;
    let p: Vec<Vec3> = free.vertices.iter().map(|v| v - shift).collect();

    // farthest-point seeds over the unlocked vertices
    let mut seeds = Vec::with_capacity(k_target);
    let mut dist = vec![f64::INFINITY; n];
    let mut next = unlocked[(seed % m as u64) as usize];
    while seeds.len() < k_target {
        seeds.push(next);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &i in &unlocked {
            dist[i] = dist[i].min((p[i] - p[next]).norm_squared());
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        if best.0 <= 0.0 {
            break;
        }
        next = best.1;
    }

    // grow clusters over unlocked vertices; anything unreached seeds a new one
    const NONE: usize = usize::MAX;
    let mut cl = vec![NONE; n];
    let mut n_free_clusters = 0;
    let grow = |starts: &[usize], cl: &mut Vec<usize>, n_free_clusters: &mut usize| {
        let mut queue = VecDeque::new();
        for &s in starts {
            if cl[s] == NONE {
                cl[s] = *n_free_clusters;
                *n_free_clusters += 1;
                queue.push_back(s);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &j in &nbrs[i] {
                if !locked[j] && cl[j] == NONE {
                    cl[j] = cl[i];
                    queue.push_back(j);
                }
            }
        }
    };
    grow(&seeds, &mut cl, &mut n_free_clusters);
    for &i in &unlocked {
        if cl[i] == NONE {
            grow(&[i], &mut cl, &mut n_free_clusters);
        }
    }
    let mut st = ClusterStats {
        sum: vec![Vec3::zeros(); n_free_clusters],
        weight: vec![0.0; n_free_clusters],
        count: vec![0; n_free_clusters],
    };
    for &i in &unlocked {
        st.sum[cl[i]] += p[i] * w[i];
        st.weight[cl[i]] += w[i];
        st.count[cl[i]] += 1;
    }

    // boundary swaps
    let edges = free.edges();
    let mut swaps = 0;
    for _ in 0..max_passes {
        let mut changed = 0;
        for &[i, j] in &edges {
            if locked[i] || locked[j] || cl[i] == cl[j] {
                continue;
            }
            for (a, b) in [(i, j), (j, i)] {
                let (ca, cb) = (cl[a], cl[b]);
                if ca == cb || st.count[ca] == 1 {
                    continue;
                }
                let (wa, wb) = (st.weight[ca], st.weight[cb]);
                if !(wa - w[a] > 0.0 && wb > 0.0) {
                    continue;
                }
                // change of the clustering energy, written without large cancelling terms
                let leave = w[a] * wa / (wa - w[a]) * (p[a] - st.sum[ca] / wa).norm_squared();
                let join = w[a] * wb / (wb + w[a]) * (p[a] - st.sum[cb] / wb).norm_squared();
                if !(leave - join > 1e-12 * leave) || !stays_connected(a, ca, &cl, &nbrs) {
                    continue;
                }
                let wp = p[a] * w[a];
                st.sum[ca] -= wp;
                st.weight[ca] -= w[a];
                st.count[ca] -= 1;
                st.sum[cb] += wp;
                st.weight[cb] += w[a];
                st.count[cb] += 1;
                cl[a] = cb;
                changed += 1;
                break;
            }
        }
        swaps += changed;
        if changed == 0 {
            break;
        }
    }

    // one output vertex per cluster, ordered by its lowest source vertex
    let mut out_of_cluster = vec![NONE; n_free_clusters];
    let mut out_of_locked = vec![NONE; n];
    let mut vertices = Vec::new();
    let mut locked_origin = Vec::new();
    for i in 0..n {
        if locked[i] {
            out_of_locked[i] = vertices.len();
            vertices.push(free.vertices[i]);
            locked_origin.push(Some(i));
        } else if out_of_cluster[cl[i]] == NONE {
            let c = cl[i];
            out_of_cluster[c] = vertices.len();
            vertices.push(if st.weight[c] > 0.0 {
                st.sum[c] / st.weight[c] + shift
            } else {
                free.vertices[i]
            });
            locked_origin.push(None);
        }
    }
    let image = |i: usize| {
        if locked[i] {
            out_of_locked[i]
        } else {
            out_of_cluster[cl[i]]
        }
    };
    let mut seen = HashMap::new();
    let mut faces = Vec::new();
    for f in &free.faces {
        let t = f.map(image);
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let mut key = t;
        key.sort_unstable();
        if seen.insert(key, ()).is_none() {
            faces.push(t);
        }
    }
    let mut surface = TriSurface::new(vertices, faces);
    let kept = surface.compact();
    let locked_origin: Vec<Option<usize>> = kept.iter().map(|&i| locked_origin[i]).collect();
    let n_clusters = surface.vertices.len();
    Ok(Clustering {
        surface,
        locked_origin,
        n_clusters,
        swaps,
        status: ClusteringStatus::Ok,
    })
}

/// True if the neighbours of `a` that share its cluster stay edge-connected
/// among themselves once `a` leaves; a local guard against splitting clusters.
fn stays_connected(a: usize, c: usize, cl: &[usize], nbrs: &[Vec<usize>]) -> bool {
    let ring: Vec<usize> = nbrs[a].iter().copied().filter(|&j| cl[j] == c).collect();
    if ring.len() <= 1 {
        return true;
    }
    let mut seen = vec![false; ring.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(k) = stack.pop() {
        for (l, &r) in ring.iter().enumerate() {
            if !seen[l] && nbrs[ring[k]].binary_search(&r).is_ok() {
                seen[l] = true;
                stack.push(l);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Reattaches a clustered free surface to the contact surface through the
/// locked border correspondence. Contact vertices come first, unchanged.
pub fn merge(sep: &Separation, free2: &Clustering) -> TriSurface {
    let border: HashMap<usize, usize> = sep.border.iter().copied().collect();
    let nc = sep.contact.vertices.len();
    let mut vertices = sep.contact.vertices.clone();
    let mut tags = vec![VertexTag::Contact; nc];
    let mut map = Vec::with_capacity(free2.surface.vertices.len());
    for (i, p) in free2.surface.vertices.iter().enumerate() {
        match free2.locked_origin[i].and_then(|o| border.get(&o)) {
            Some(&c) => map.push(c),
            None => {
                map.push(vertices.len());
                vertices.push(*p);
                tags.push(if free2.locked_origin[i].is_some() {
                    VertexTag::Contact
                } else {
                    VertexTag::Free
                });
            }
        }
    }
    let mut faces = sep.contact.faces.clone();
    let mut face_tags = vec![FACE_CONTACT; faces.len()];
    for f in &free2.surface.faces {
        faces.push(f.map(|i| map[i]));
        face_tags.push(FACE_FREE);
    }
    TriSurface {
        vertices,
        faces,
        vertex_tags: Some(tags),
        face_tags: Some(face_tags),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemeshConfig {
    pub n_remesh: usize,
    pub ratio: f64,
    pub contact_tol: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for RemeshConfig {
    fn default() -> Self {
        RemeshConfig {
            n_remesh: 15,
            ratio: 0.8,
            contact_tol: CONTACT_TOL,
            max_passes: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemeshStep {
    pub iteration: usize,
    pub accepted: bool,
    pub status: ClusteringStatus,
    pub free_vertices: usize,
    pub report: ManifoldReport,
    pub pinched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemeshOutput {
    /// The input followed by every accepted iterate.
    pub iterates: Vec<TriSurface>,
    pub steps: Vec<RemeshStep>,
}

/// Repeats separate → cluster → merge. Iterates that are not watertight
/// manifolds, or pinch a free vertex, are dropped and the next attempt
/// restarts from the last good one with a different seed.
pub fn constrained_remesh(
    s: &TriSurface,
    heart_nodes: &PointIndex,
    cfg: &RemeshConfig,
) -> Result<RemeshOutput> {
    let mut iterates = vec![s.clone()];
    let mut steps = Vec::new();
    let mut current = s.clone();
    for it in 1..=cfg.n_remesh {
        let sep = separate_contact(&current, heart_nodes, cfg.contact_tol);
        let cl = constrained_clustering(
            &sep.free,
            cfg.ratio,
            &sep.locked,
            cfg.max_passes,
            cfg.seed.wrapping_add(it as u64),
        )?;
        if cl.status == ClusteringStatus::Identity {
            steps.push(RemeshStep {
                iteration: it,
                accepted: false,
                status: cl.status,
                free_vertices: sep.free.vertices.len(),
                report: is_watertight_manifold(&current),
                pinched: 0,
            });
            break;
        }
        let merged = merge(&sep, &cl);
        let report = is_watertight_manifold(&merged);
        let tags = merged.vertex_tags.as_ref();
        let pinched = pinched_vertices(&merged)
            .into_iter()
            .filter(|&v| tags.is_none_or(|t| t[v] == VertexTag::Free))
            .count();
        let accepted = report.ok && pinched == 0;
        steps.push(RemeshStep {
            iteration: it,
            accepted,
            status: if accepted {
                cl.status
            } else {
                ClusteringStatus::Rejected
            },
            free_vertices: cl.surface.vertices.len(),
            report,
            pinched,
        });
        if accepted {
            iterates.push(merged.clone());
            current = merged;
        }
    }
    Ok(RemeshOutput { iterates, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn nothing_near_the_heart_is_all_free() {
        let s = icosphere(Vec3::zeros(), 1.0, 1);
        let heart = PointIndex::new(&[Vec3::repeat(10.0)]);
        let sep = separate_contact(&s, &heart, CONTACT_TOL);
        assert!(sep.contact.is_empty());
        assert_eq!(sep.free.faces.len(), s.faces.len());
        assert!(sep.border.is_empty());
    }

    #[test]
    fn heart_patch_is_all_contact() {
        let s = icosphere(Vec3::zeros(), 1.0, 1);
        let heart = PointIndex::new(&s.vertices);
        let sep = separate_contact(&s, &heart, CONTACT_TOL);
        assert!(sep.free.is_empty());
        assert_eq!(sep.contact.faces.len(), s.faces.len());
    }

    /// Icosphere whose lower cap (z < -0.5) sits on the heart.
    fn capped() -> (TriSurface, PointIndex) {
        let s = icosphere(Vec3::zeros(), 1.0, 3);
        let nodes: Vec<Vec3> = s.vertices.iter().copied().filter(|p| p.z < -0.5).collect();
        (s, PointIndex::new(&nodes))
    }

    #[test]
    fn separation_round_trips_through_merge() {
        let (s, heart) = capped();
        let sep = separate_contact(&s, &heart, CONTACT_TOL);
        assert!(!sep.contact.is_empty() && !sep.free.is_empty() && !sep.border.is_empty());
        let all_locked = vec![true; sep.free.vertices.len()];
        let id = constrained_clustering(&sep.free, 0.8, &all_locked, 10, 0).unwrap();
        assert_eq!(id.status, ClusteringStatus::Identity);
        assert_eq!(id.surface, sep.free);
        let m = merge(&sep, &id);
        assert!(is_watertight_manifold(&m).ok);
        let locked_only = sep.locked.iter().filter(|&&l| l).count() - sep.border.len();
        assert_eq!(
            m.vertices.len(),
            sep.contact.vertices.len() + sep.free.vertices.len() - sep.border.len()
        );
        assert_eq!(locked_only, 0);
        assert!((m.signed_volume() - s.signed_volume()).abs() < 1e-12);
    }

    #[test]
    fn clustering_reduces_and_stays_closed() {
        let s = icosphere(Vec3::zeros(), 1.0, 3);
        let locked = vec![false; s.vertices.len()];
        let c = constrained_clustering(&s, 0.8, &locked, 50, 0).unwrap();
        assert_eq!(c.status, ClusteringStatus::Ok);
        let n = c.surface.vertices.len() as f64;
        let target = 0.8 * s.vertices.len() as f64;
        assert!((n - target).abs() / target < 0.05, "{n} vs {target}");
        assert!(
            is_watertight_manifold(&c.surface).ok,
            "{:?}",
            is_watertight_manifold(&c.surface)
        );
    }

    #[test]
    fn remesh_keeps_contact_and_shrinks_free_part() {
        let (s, heart) = capped();
        let sep0 = separate_contact(&s, &heart, CONTACT_TOL);
        let out = constrained_remesh(
            &s,
            &heart,
            &RemeshConfig {
                n_remesh: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.iterates.len() > 1, "{:?}", out.steps);
        let mut last = usize::MAX;
        for it in &out.iterates {
            let sep = separate_contact(it, &heart, CONTACT_TOL);
            assert_eq!(sep.contact.vertices, sep0.contact.vertices);
            assert_eq!(sep.contact.faces, sep0.contact.faces);
            assert!(sep.free.vertices.len() <= last);
            last = sep.free.vertices.len();
            assert!(is_watertight_manifold(it).ok);
        }
    }

    #[test]
    fn bad_ratio_rejected() {
        let s = icosphere(Vec3::zeros(), 1.0, 0);
        assert!(constrained_clustering(&s, 0.0, &[false; 12], 1, 0).is_err());
        assert!(constrained_clustering(&s, 1.5, &[false; 12], 1, 0).is_err());
    }
}
