#[cfg(test)]
use super::VoxelGrid;
use super::{GridGeometry, LabelGrid};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut v = Vec::new();
        for z in -1i64..=1 {
            for y in -1i64..=1 {
                for x in -1i64..=1 {
                    let n = x.abs() + y.abs() + z.abs();
                    if n == 0 {
                        continue;
                    }
                    if self == Connectivity::TwentySix || n == 1 {
                        v.push([x, y, z]);
                    }
                }
            }
        }
        v
    }
}

/// Component labels 1..=K in first-encounter scan order; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    pub geometry: GridGeometry,
    ids: Vec<u32>,
    /// Voxel count of component `k` at index `k - 1`.
    pub counts: Vec<usize>,
}

impl ComponentMap {
    pub fn num_components(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn id(&self, idx: usize) -> u32 {
        self.ids[idx]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Mask of a single component.
    pub fn mask(&self, k: u32) -> LabelGrid {
        self.geometry
            .grid(self.ids.iter().map(|&c| (c == k) as u8).collect())
    }

    /// Voxel indices of every component, in scan order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.counts.len()];
        for (idx, &c) in self.ids.iter().enumerate() {
            if c > 0 {
                out[c as usize - 1].push(idx);
            }
        }
        out
    }

    /// Component map as a u8 label grid, available while K ≤ 255.
    pub fn to_label_grid(&self) -> Option<LabelGrid> {
        (self.counts.len() <= 255).then(|| {
            self.geometry
                .grid(self.ids.iter().map(|&c| c as u8).collect())
        })
    }
}

pub fn connected_components(label: &LabelGrid, connectivity: Connectivity) -> Result<ComponentMap> {
    label.ensure_binary()?;
    let offs = connectivity.offsets();
    let mut ids = vec![0u32; label.len()];
    let mut counts = Vec::new();
    let mut stack = Vec::new();
    for start in 0..label.len() {
        if label.data()[start] == 0 || ids[start] != 0 {
            continue;
        }
        let id = counts.len() as u32 + 1;
        ids[start] = id;
        stack.push(start);
        let mut n = 0usize;
        while let Some(idx) = stack.pop() {
            n += 1;
            let c = label.coords(idx);
            for o in &offs {
                let q = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
                if let Some(qi) = label.index_checked(q) {
                    if label.data()[qi] != 0 && ids[qi] == 0 {
                        ids[qi] = id;
                        stack.push(qi);
                    }
                }
            }
        }
        counts.push(n);
    }
    Ok(ComponentMap {
        geometry: label.geometry(),
        ids,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn empty(d: [usize; 3]) -> LabelGrid {
        VoxelGrid::filled(d, Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap()
    }

    #[test]
    fn empty_grid_has_no_components() {
        assert_eq!(
            connected_components(&empty([4, 4, 4]), Connectivity::TwentySix)
                .unwrap()
                .num_components(),
            0
        );
    }

    #[test]
    fn diagonal_voxels_depend_on_connectivity() {
        let mut g = empty([3, 3, 3]);
        g.set(0, 0, 0, 1);
        g.set(1, 1, 1, 1);
        assert_eq!(
            connected_components(&g, Connectivity::Six)
                .unwrap()
                .num_components(),
            2
        );
        assert_eq!(
            connected_components(&g, Connectivity::TwentySix)
                .unwrap()
                .num_components(),
            1
        );
    }

    #[test]
    fn solid_cube_is_one_component() {
        let g = empty([4, 5, 6]).map(|_| 1u8);
        let cc = connected_components(&g, Connectivity::Six).unwrap();
        assert_eq!(cc.counts, vec![120]);
    }

    #[test]
    fn labels_follow_scan_order() {
        let mut g = empty([5, 1, 1]);
        g.set(0, 0, 0, 1);
        g.set(2, 0, 0, 1);
        g.set(4, 0, 0, 1);
        let cc = connected_components(&g, Connectivity::TwentySix).unwrap();
        assert_eq!(cc.ids(), &[1, 0, 2, 0, 3]);
        assert_eq!(cc.to_label_grid().unwrap().data(), &[1, 0, 2, 0, 3]);
    }
}
