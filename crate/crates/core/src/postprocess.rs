//! Anatomical consistency between a raw calcification segmentation and the
//! heart mesh: leaflet grouping, heart-segment filtering, adaptive closing,
//! then subtraction of the heart on the ×3 grid and island removal.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{CmacError, Result};
use crate::mesh::{extract_component_surface, Component, TetMesh};
use crate::spatial::PointIndex;
use crate::voxelgrid::{
    adaptive_kernel, close, connected_components, dilate, stencil_tets, upsample_nearest,
    Connectivity, Kernel, LabelGrid,
};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    /// Cap on filter/close passes; the loop also stops at a fixed point.
    pub iterations: usize,
    /// Islands below this volume (mm³) are removed after subtraction.
    pub min_volume: f64,
    pub kernel_shape: [usize; 3],
    /// Ellipsoid semi-axes in voxels; the largest one follows the surface normal.
    pub semiaxes: [f64; 3],
    pub upsample: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            iterations: 3,
            min_volume: 5.0,
            kernel_shape: [7, 7, 7],
            semiaxes: [3.0, 1.5, 1.5],
            upsample: 3,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsample == 0
            || !(self.min_volume.is_finite() && self.min_volume >= 0.0)
            || self.kernel_shape.iter().any(|&s| s % 2 == 0)
            || self.semiaxes.iter().any(|a| !(a.is_finite() && *a > 0.0))
        {
            return Err(CmacError::InvalidInput(format!(
                "bad postprocess config {self:?}"
            )));
        }
        Ok(())
    }
}

/// One binary grid per leaflet, pairwise disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSegmentation {
    pub groups: [LabelGrid; 3],
    /// Leaflet index chosen for each 26-connected island, in component order.
    pub island_leaflet: Vec<usize>,
}

impl GroupedSegmentation {
    pub fn union(&self) -> Result<LabelGrid> {
        self.groups[0]
            .union(&self.groups[1])?
            .union(&self.groups[2])
    }
}

/// Heart geometry shared by every step: its ×1 stencil and surface nodes with normals.
pub struct HeartContext {
    pub stencil: LabelGrid,
    nodes: Vec<Vec3>,
    normals: Vec<Vec3>,
    index: PointIndex,
    leaflet_nodes: [Vec<Vec3>; 3],
}

impl HeartContext {
    pub fn new(heart: &TetMesh, template: &LabelGrid) -> Result<Self> {
        let present: Vec<Component> = Component::HEART
            .into_iter()
            .filter(|&c| heart.has_component(c))
            .collect();
        let surf = extract_component_surface(heart, &present)?.surface;
        let normals = surf.vertex_normals();
        let index = PointIndex::new(&surf.vertices);
        let leaflet_nodes = Component::LEAFLETS.map(|c| {
            extract_component_surface(heart, &[c])
                .map(|e| e.surface.vertices)
                .unwrap_or_default()
        });
        Ok(HeartContext {
            stencil: stencil_tets(heart, &present, template),
            nodes: surf.vertices,
            normals,
            index,
            leaflet_nodes,
        })
    }

    /// Adaptive kernels for every voxel a closing of `label` can touch.
    fn kernels_for(&self, label: &LabelGrid, cfg: &PostprocessConfig) -> Result<AdaptiveKernels> {
        let reach = dilate(label, &Kernel::ball(cfg.kernel_shape, f64::INFINITY)?)?;
        let mut by_node: HashMap<usize, usize> = HashMap::new();
        let mut kernels = Vec::new();
        let mut of_voxel = HashMap::new();
        let spacing = label.spacing();
        for idx in reach.nonzero() {
            let p = label.center(label.coords(idx));
            let node = self.index.nearest(&p).map(|(i, _)| i).unwrap_or(usize::MAX);
            let k = match by_node.get(&node) {
                Some(&k) => k,
                None => {
                    // kernels live in index space; the normal is mapped there first
                    let n = self
                        .normals
                        .get(node)
                        .map(|n| n.component_div(&spacing))
                        .unwrap_or_else(Vec3::zeros);
                    let kern = if n.norm() > 0.0 {
                        adaptive_kernel(n, cfg.kernel_shape, stretched_semiaxes(&n, cfg))?
                    } else {
                        Kernel::ball(
                            cfg.kernel_shape,
                            cfg.semiaxes.iter().cloned().fold(0.0, f64::max),
                        )?
                    };
                    kernels.push(kern);
                    by_node.insert(node, kernels.len() - 1);
                    kernels.len() - 1
                }
            };
            of_voxel.insert(idx, k);
        }
        Ok(AdaptiveKernels { kernels, of_voxel })
    }

    pub fn n_surface_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Semi-axes with the major one stretched by `‖n̂‖₁`, so it reaches the
/// footprint's boundary along `n` instead of stopping at the face distance.
/// Off-axis normals would otherwise miss heart voxels a diagonal step away.
fn stretched_semiaxes(n: &Vec3, cfg: &PostprocessConfig) -> [f64; 3] {
    let mut ax = cfg.semiaxes;
    ax.sort_by(|a, b| b.total_cmp(a));
    ax[0] *= n.lp_norm(1) / n.norm();
    ax
}

struct AdaptiveKernels {
    kernels: Vec<Kernel>,
    of_voxel: HashMap<usize, usize>,
}

impl AdaptiveKernels {
    fn at(&self, idx: usize) -> &Kernel {
        &self.kernels[self.of_voxel[&idx]]
    }
}

/// Mean of the two directed mean nearest-neighbour distances.
pub fn mean_symmetric_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let directed = |from: &[Vec3], to: &PointIndex| {
        from.iter()
            .map(|p| to.nearest(p).map(|(_, d)| d).unwrap_or(f64::INFINITY))
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (directed(a, &PointIndex::new(b)) + directed(b, &PointIndex::new(a)))
}

/// Centers of island voxels with a 6-neighbour outside the island (or off the grid).
fn island_surface_points(label: &LabelGrid, members: &[usize], ids: &[u32], id: u32) -> Vec<Vec3> {
    let offs = Connectivity::Six.offsets();
    members
        .iter()
        .filter(|&&idx| {
            let c = label.coords(idx);
            offs.iter().any(|o| {
                label
                    .index_checked([c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]])
                    .is_none_or(|n| ids[n] != id)
            })
        })
        .map(|&idx| label.center(label.coords(idx)))
        .collect()
}

/// Assigns every 26-connected island to the leaflet with the lowest mean
/// symmetric chamfer distance; ties go to the lower leaflet index.
pub fn group_by_leaflets(y0: &LabelGrid, ctx: &HeartContext) -> Result<GroupedSegmentation> {
    if ctx.leaflet_nodes.iter().all(|n| n.is_empty()) {
        return Err(CmacError::InvalidInput(
            "heart mesh has no leaflet components".into(),
        ));
    }
    let cc = connected_components(y0, Connectivity::TwentySix)?;
    let mut groups = [0; 3].map(|_| LabelGrid::zeros_like(y0));
    let mut island_leaflet = Vec::with_capacity(cc.num_components());
    for (k, members) in cc.members().iter().enumerate() {
        let pts = island_surface_points(y0, members, cc.ids(), k as u32 + 1);
        let mut best = (f64::INFINITY, 0);
        for (l, nodes) in ctx.leaflet_nodes.iter().enumerate() {
            let d = mean_symmetric_chamfer(&pts, nodes);
            if d < best.0 {
                best = (d, l);
            }
        }
        island_leaflet.push(best.1);
        let g = groups[best.1].data_mut();
        for &idx in members {
            g[idx] = 1;
        }
    }
    Ok(GroupedSegmentation {
        groups,
        island_leaflet,
    })
}

/// Heart voxels inside the adaptive dilation of `y_i`.
pub fn filter_heart_seg(
    y_i: &LabelGrid,
    ctx: &HeartContext,
    cfg: &PostprocessConfig,
) -> Result<LabelGrid> {
    if y_i.count() == 0 {
        return Ok(LabelGrid::zeros_like(y_i));
    }
    let ak = ctx.kernels_for(y_i, cfg)?;
    let dil = crate::voxelgrid::variant_dilate(y_i, |idx| ak.at(idx))?;
    dil.intersection(&ctx.stencil)
}

/// Adaptive closing of `y_i ∪ heart_seg`, then a 3×3×3 closing, minus `heart_seg`.
pub fn adaptive_close(
    y_i: &LabelGrid,
    heart_seg: &LabelGrid,
    ctx: &HeartContext,
    cfg: &PostprocessConfig,
) -> Result<LabelGrid> {
    let u = y_i.union(heart_seg)?;
    if u.count() == 0 {
        return Ok(u);
    }
    let ak = ctx.kernels_for(&u, cfg)?;
    let c1 = crate::voxelgrid::variant_close(&u, |idx| ak.at(idx))?;
    let c2 = close(&c1, &Kernel::ball3())?;
    c2.difference(heart_seg)
}

/// Union of the groups on the upsampled grid, minus the heart, without small islands.
pub fn subtract_and_filter(
    groups: &GroupedSegmentation,
    heart: &TetMesh,
    cfg: &PostprocessConfig,
) -> Result<LabelGrid> {
    let up = upsample_nearest(&groups.union()?, cfg.upsample)?;
    if up.count() == 0 {
        return Ok(up);
    }
    let heart_up = stencil_tets(heart, &Component::HEART, &up);
    let sub = up.difference(&heart_up)?;
    remove_small_islands(&sub, cfg.min_volume)
}

/// Drops 26-connected islands whose volume is below `min_volume`.
pub fn remove_small_islands(label: &LabelGrid, min_volume: f64) -> Result<LabelGrid> {
    let cc = connected_components(label, Connectivity::TwentySix)?;
    let vv = label.voxel_volume();
    let mut out = LabelGrid::zeros_like(label);
    let data = out.data_mut();
    for (k, members) in cc.members().iter().enumerate() {
        if cc.counts[k] as f64 * vv >= min_volume {
            for &idx in members {
                data[idx] = 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessOutput {
    /// Calcification on the upsampled grid.
    pub y_ca2: LabelGrid,
    /// Groups after the last filter/close pass, on the input grid.
    pub groups: GroupedSegmentation,
    pub passes: usize,
    pub converged: bool,
}

pub fn post_process(
    y0: &LabelGrid,
    heart: &TetMesh,
    cfg: &PostprocessConfig,
) -> Result<PostprocessOutput> {
    cfg.validate()?;
    y0.ensure_binary()?;
    let ctx = HeartContext::new(heart, y0)?;
    post_process_with(y0, heart, &ctx, cfg)
}

/// [`post_process`] with a prebuilt heart context for `y0`'s grid.
pub fn post_process_with(
    y0: &LabelGrid,
    heart: &TetMesh,
    ctx: &HeartContext,
    cfg: &PostprocessConfig,
) -> Result<PostprocessOutput> {
    let mut groups = group_by_leaflets(y0, ctx)?;
    let mut passes = 0;
    let mut converged = false;
    while passes < cfg.iterations {
        passes += 1;
        let mut changed = false;
        for g in groups.groups.iter_mut() {
            let hs = filter_heart_seg(g, ctx, cfg)?;
            let next = adaptive_close(g, &hs, ctx, cfg)?;
            changed |= next != *g;
            *g = next;
        }
        if !changed {
            converged = true;
            break;
        }
    }
    let y_ca2 = subtract_and_filter(&groups, heart, cfg)?;
    log::debug!(
        "postprocess: {passes} passes, converged {converged}, {} voxels",
        y_ca2.count()
    );
    Ok(PostprocessOutput {
        y_ca2,
        groups,
        passes,
        converged,
    })
}

/// Empty voxels separating `calc` from `heart` under 26-connectivity: 0 when
/// they touch. `None` if either is empty.
pub fn stencil_gap(calc: &LabelGrid, heart: &LabelGrid) -> Result<Option<usize>> {
    calc.check_congruent(heart)?;
    if calc.count() == 0 || heart.count() == 0 {
        return Ok(None);
    }
    let offs = Connectivity::TwentySix.offsets();
    let mut dist = vec![u32::MAX; heart.len()];
    let mut queue = VecDeque::new();
    for idx in heart.nonzero() {
        dist[idx] = 0;
        queue.push_back(idx);
    }
    while let Some(idx) = queue.pop_front() {
        if calc.data()[idx] != 0 {
            return Ok(Some((dist[idx] as usize).saturating_sub(1)));
        }
        let c = heart.coords(idx);
        for o in &offs {
            if let Some(n) =
                heart.index_checked([c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]])
            {
                if dist[n] == u32::MAX {
                    dist[n] = dist[idx] + 1;
                    queue.push_back(n);
                }
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::lattice_tet_mesh;
    use crate::voxelgrid::VoxelGrid;

    /// Slab wall x ∈ [0, 4] mm with three leaflet strips along y, voxel grid of spacing 1.
    fn wall() -> (TetMesh, LabelGrid) {
        let heart = lattice_tet_mesh([4, 12, 6], Vec3::zeros(), Vec3::repeat(1.0), |p| {
            Some(match (p.y / 4.0) as usize {
                0 => Component::Leaflet1,
                1 => Component::Leaflet2,
                _ => Component::Leaflet3,
            })
        });
        let g = VoxelGrid::filled(
            [16, 12, 6],
            Vec3::repeat(1.0),
            Vec3::new(-0.5, 0.5, 0.5),
            0u8,
        )
        .unwrap();
        (heart, g)
    }

    fn blob(g: &mut LabelGrid, x0: usize, y: std::ops::Range<usize>) {
        for i in x0..x0 + 2 {
            for j in y.clone() {
                for k in 2..4 {
                    g.set(i, j, k, 1);
                }
            }
        }
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let (heart, g) = wall();
        let out = post_process(&g, &heart, &PostprocessConfig::default()).unwrap();
        assert_eq!(out.y_ca2.count(), 0);
        assert_eq!(out.y_ca2.dims(), [48, 36, 18]);
    }

    #[test]
    fn islands_go_to_the_nearest_leaflet() {
        let (heart, mut g) = wall();
        blob(&mut g, 7, 5..7);
        blob(&mut g, 7, 9..11);
        let ctx = HeartContext::new(&heart, &g).unwrap();
        let gr = group_by_leaflets(&g, &ctx).unwrap();
        assert_eq!(gr.island_leaflet, vec![1, 2]);
        assert_eq!(gr.groups[0].count(), 0);
        assert_eq!(gr.union().unwrap(), g);
    }

    #[test]
    fn gap_to_wall_is_closed() {
        let (heart, mut g) = wall();
        // stencil occupies voxel columns 0..=4; the blob starts at 7 leaving 2 empty columns
        blob(&mut g, 7, 5..7);
        let ctx = HeartContext::new(&heart, &g).unwrap();
        assert_eq!(stencil_gap(&g, &ctx.stencil).unwrap(), Some(2));
        let cfg = PostprocessConfig {
            min_volume: 0.0,
            ..Default::default()
        };
        let out = post_process(&g, &heart, &cfg).unwrap();
        let heart_up = stencil_tets(&heart, &Component::HEART, &out.y_ca2);
        assert_eq!(out.y_ca2.intersection(&heart_up).unwrap().count(), 0);
        assert_eq!(stencil_gap(&out.y_ca2, &heart_up).unwrap(), Some(0));
        assert!(out.passes <= cfg.iterations);
    }

    #[test]
    fn far_island_is_only_self_closed() {
        let (heart, mut g) = wall();
        blob(&mut g, 13, 5..7);
        let cfg = PostprocessConfig {
            min_volume: 0.0,
            ..Default::default()
        };
        let out = post_process(&g, &heart, &cfg).unwrap();
        assert_eq!(out.groups.union().unwrap(), g);
        assert!(out.converged);
    }

    #[test]
    fn small_islands_are_removed() {
        let (_, mut g) = wall();
        g.set(1, 1, 1, 1);
        blob(&mut g, 10, 3..9);
        let out = remove_small_islands(&g, 5.0).unwrap();
        assert_eq!(out.count(), 24);
    }

    #[test]
    fn no_leaflets_is_an_error() {
        let heart = lattice_tet_mesh([2, 2, 2], Vec3::zeros(), Vec3::repeat(1.0), |_| {
            Some(Component::Aorta)
        });
        let g = VoxelGrid::filled([4, 4, 4], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        let ctx = HeartContext::new(&heart, &g).unwrap();
        assert!(group_by_leaflets(&g, &ctx).is_err());
    }
}
