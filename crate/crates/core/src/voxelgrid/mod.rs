//! Dense voxel grids with world-space geometry.
//!
//! Voxel `(i, j, k)` has its center at `origin + (i, j, k) * spacing`; data is
//! stored x-fastest.

mod components;
pub mod io;
mod morphology;
mod sampling;
mod sdf;
mod stencil;

pub use components::{connected_components, ComponentMap, Connectivity};
pub use morphology::{
    adaptive_kernel, close, dilate, erode, morphology, variant_close, variant_dilate, Kernel,
    KernelKind, MorphOp,
};
pub use sampling::{sample_trilinear, sample_trilinear_grad};
pub use sdf::{isosurface, sample_surface, sdf_from_label, surface_points};
pub use stencil::{stencil_mesh, stencil_mesh_region, stencil_tets};

use crate::error::{CmacError, Result};
use crate::Vec3;

pub trait Voxel:
    Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + Into<f64> + 'static
{
}
impl Voxel for u8 {}
impl Voxel for f32 {}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T: Voxel> {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data: Vec<T>,
}

pub type LabelGrid = VoxelGrid<u8>;

/// Grid placement without a payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub origin: Vec3,
}

impl GridGeometry {
    pub fn grid<T: Voxel>(&self, data: Vec<T>) -> VoxelGrid<T> {
        assert_eq!(data.len(), self.dims.iter().product::<usize>());
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data,
        }
    }
}
pub type ScalarGrid = VoxelGrid<f32>;

impl<T: Voxel> VoxelGrid<T> {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(CmacError::InvalidInput(format!(
                "grid dims must be positive, got {dims:?}"
            )));
        }
        if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(CmacError::InvalidInput(format!(
                "grid spacing must be positive, got {spacing:?}"
            )));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return Err(CmacError::InvalidInput("grid origin must be finite".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(CmacError::InvalidInput(format!(
                "grid data length {} != {n}",
                data.len()
            )));
        }
        Ok(VoxelGrid {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: Vec3, origin: Vec3, value: T) -> Result<Self> {
        Self::new(dims, spacing, origin, vec![value; dims.iter().product()])
    }

    /// Same geometry, new payload.
    pub fn with_data<U: Voxel>(&self, data: Vec<U>) -> VoxelGrid<U> {
        assert_eq!(data.len(), self.data.len());
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data,
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> VoxelGrid<U> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }
    pub fn origin(&self) -> Vec3 {
        self.origin
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    /// Index of `(i, j, k)` given as signed coordinates, or `None` outside.
    #[inline]
    pub fn index_checked(&self, c: [i64; 3]) -> Option<usize> {
        if (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a]) {
            Some(self.index(c[0] as usize, c[1] as usize, c[2] as usize))
        } else {
            None
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    /// World position of a voxel center.
    #[inline]
    pub fn center(&self, c: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64).component_mul(&self.spacing)
    }

    /// Continuous voxel coordinates of a world point.
    #[inline]
    pub fn to_voxel(&self, p: &Vec3) -> Vec3 {
        (p - self.origin).component_div(&self.spacing)
    }

    pub fn same_geometry<U: Voxel>(&self, other: &VoxelGrid<U>) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    pub fn check_congruent<U: Voxel>(&self, other: &VoxelGrid<U>) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(CmacError::ShapeMismatch(self.dims, other.dims))
        }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.x * self.spacing.y * self.spacing.z
    }
}

impl LabelGrid {
    pub fn zeros_like<U: Voxel>(g: &VoxelGrid<U>) -> LabelGrid {
        g.with_data(vec![0u8; g.len()])
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn ensure_binary(&self) -> Result<()> {
        match self.data.iter().find(|&&v| v > 1) {
            Some(&v) => Err(CmacError::NotBinary(v)),
            None => Ok(()),
        }
    }

    pub fn union(&self, other: &LabelGrid) -> Result<LabelGrid> {
        self.check_congruent(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a != 0 || b != 0) as u8)
                .collect(),
        ))
    }

    pub fn intersection(&self, other: &LabelGrid) -> Result<LabelGrid> {
        self.check_congruent(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a != 0 && b != 0) as u8)
                .collect(),
        ))
    }

    pub fn difference(&self, other: &LabelGrid) -> Result<LabelGrid> {
        self.check_congruent(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a != 0 && b == 0) as u8)
                .collect(),
        ))
    }

    pub fn complement(&self) -> LabelGrid {
        self.map(|v| (v == 0) as u8)
    }

    /// Indices of nonzero voxels in scan order.
    pub fn nonzero(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Inclusive voxel bounding box of the nonzero voxels.
    pub fn bbox(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, &v) in self.data.iter().enumerate() {
            if v != 0 {
                any = true;
                let c = self.coords(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
        }
        any.then_some((lo, hi))
    }
}

/// Binary mask `image >= tau`.
pub fn threshold_segment(image: &ScalarGrid, tau: f64) -> LabelGrid {
    image.map(|v| (v as f64 >= tau) as u8)
}

/// Voxel replication by an integer factor, keeping the world extent of every voxel.
pub fn upsample_nearest(label: &LabelGrid, factor: usize) -> Result<LabelGrid> {
    if factor == 0 {
        return Err(CmacError::InvalidInput(
            "upsampling factor must be positive".into(),
        ));
    }
    let d = label.dims;
    let nd = [d[0] * factor, d[1] * factor, d[2] * factor];
    let f = factor as f64;
    let spacing = label.spacing / f;
    let origin = label.origin - label.spacing * ((f - 1.0) / (2.0 * f));
    let mut data = vec![0u8; nd.iter().product()];
    for k in 0..nd[2] {
        for j in 0..nd[1] {
            let src_row = d[0] * (j / factor + d[1] * (k / factor));
            let dst_row = nd[0] * (j + nd[1] * k);
            for i in 0..nd[0] {
                data[dst_row + i] = label.data[src_row + i / factor];
            }
        }
    }
    VoxelGrid::new(nd, spacing, origin, data)
}

/// Inverse of [`upsample_nearest`] by majority vote over each `factor³` block
/// (ties resolve to 1).
pub fn downsample_majority(label: &LabelGrid, factor: usize) -> Result<LabelGrid> {
    if factor == 0 || label.dims.iter().any(|d| d % factor != 0) {
        return Err(CmacError::InvalidInput(format!(
            "dims {:?} not divisible by {factor}",
            label.dims
        )));
    }
    let f = factor as f64;
    let nd = label.dims.map(|d| d / factor);
    let mut votes = vec![0usize; nd.iter().product()];
    for (idx, &v) in label.data.iter().enumerate() {
        if v != 0 {
            let c = label.coords(idx);
            votes[c[0] / factor + nd[0] * (c[1] / factor + nd[1] * (c[2] / factor))] += 1;
        }
    }
    let half = factor * factor * factor;
    let data = votes.into_iter().map(|n| (2 * n >= half) as u8).collect();
    let spacing = label.spacing * f;
    let origin = label.origin + label.spacing * ((f - 1.0) / 2.0);
    VoxelGrid::new(nd, spacing, origin, data)
}

/// Resample onto an isotropic crop and min-max normalize the clipped intensities.
///
/// Samples falling outside the source voxel extent are 0 before normalization.
pub fn preprocess(
    image: &ScalarGrid,
    spacing_iso: f64,
    crop_center: Vec3,
    crop_dims: [usize; 3],
    clip_lo: f64,
    clip_hi: f64,
) -> Result<ScalarGrid> {
    if !clip_lo.is_finite() || !clip_hi.is_finite() {
        return Err(CmacError::InvalidInput("clip bounds must be finite".into()));
    }
    if clip_lo >= clip_hi {
        return Err(CmacError::InvalidInput(format!(
            "clip_lo {clip_lo} must be below clip_hi {clip_hi}"
        )));
    }
    if crop_dims.contains(&0) {
        return Err(CmacError::InvalidInput("crop dims must be positive".into()));
    }
    if !(spacing_iso.is_finite() && spacing_iso > 0.0) {
        return Err(CmacError::InvalidInput("spacing must be positive".into()));
    }
    let spacing = Vec3::repeat(spacing_iso);
    let half = Vec3::new(
        crop_dims[0] as f64 - 1.0,
        crop_dims[1] as f64 - 1.0,
        crop_dims[2] as f64 - 1.0,
    ) * 0.5;
    let origin = crop_center - half * spacing_iso;
    let out = VoxelGrid::filled(crop_dims, spacing, origin, 0.0f32)?;
    let d = image.dims;
    let mut data = Vec::with_capacity(out.len());
    for idx in 0..out.len() {
        let p = out.center(out.coords(idx));
        let u = image.to_voxel(&p);
        let inside = (0..3).all(|a| u[a] >= -0.5 && u[a] <= d[a] as f64 - 0.5);
        let raw = if inside {
            sampling::trilinear_at(image, &p)
        } else {
            0.0
        };
        let c = raw.clamp(clip_lo, clip_hi);
        data.push(((c - clip_lo) / (clip_hi - clip_lo)) as f32);
    }
    Ok(out.with_data(data))
}

/// Nearest-neighbour resampling of a label grid onto a target geometry.
pub fn resample_label_nearest(
    label: &LabelGrid,
    target_dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
) -> Result<LabelGrid> {
    let out = VoxelGrid::filled(target_dims, spacing, origin, 0u8)?;
    let data = (0..out.len())
        .map(|idx| {
            let u = label.to_voxel(&out.center(out.coords(idx)));
            let c = [0, 1, 2].map(|a| u[a].round() as i64);
            label.index_checked(c).map_or(0, |i| label.data[i])
        })
        .collect();
    Ok(out.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid<T: Voxel>(dims: [usize; 3], data: Vec<T>) -> VoxelGrid<T> {
        VoxelGrid::new(dims, Vec3::repeat(1.0), Vec3::zeros(), data).unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(VoxelGrid::new(
            [0, 1, 1],
            Vec3::repeat(1.0),
            Vec3::zeros(),
            Vec::<u8>::new()
        )
        .is_err());
        assert!(VoxelGrid::new(
            [1, 1, 1],
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::zeros(),
            vec![0u8]
        )
        .is_err());
        assert!(VoxelGrid::new([2, 1, 1], Vec3::repeat(1.0), Vec3::zeros(), vec![0u8]).is_err());
    }

    #[test]
    fn threshold_extremes() {
        let g = grid([2, 2, 1], vec![0.1f32, 0.5, 0.7, 0.9]);
        assert_eq!(threshold_segment(&g, 1.0).count(), 0);
        assert_eq!(threshold_segment(&g, 0.1).count(), 4);
    }

    #[test]
    fn threshold_sphere_matches_analytic_membership() {
        let n = 16;
        let r = 5.3;
        let c = Vec3::repeat(7.5);
        let mut g = VoxelGrid::filled([n; 3], Vec3::repeat(1.0), Vec3::zeros(), 0.0f32).unwrap();
        for idx in 0..g.len() {
            if (g.center(g.coords(idx)) - c).norm() <= r {
                g.data_mut()[idx] = 1.0;
            }
        }
        let s = threshold_segment(&g, 0.5);
        for idx in 0..s.len() {
            assert_eq!(
                s.data()[idx] == 1,
                (s.center(s.coords(idx)) - c).norm() <= r
            );
        }
    }

    #[test]
    fn upsample_preserves_world_extent_and_volume() {
        let mut g = VoxelGrid::filled(
            [3, 2, 2],
            Vec3::new(1.0, 2.0, 1.5),
            Vec3::new(1.0, -1.0, 0.0),
            0u8,
        )
        .unwrap();
        g.set(1, 1, 0, 1);
        g.set(2, 0, 1, 1);
        let u = upsample_nearest(&g, 3).unwrap();
        assert_eq!(u.dims(), [9, 6, 6]);
        assert!(
            (u.count() as f64 * u.voxel_volume() - g.count() as f64 * g.voxel_volume()).abs()
                < 1e-12
        );
        // lower corner of the voxel extent is unchanged
        let lo = g.origin() - g.spacing() * 0.5;
        let ulo = u.origin() - u.spacing() * 0.5;
        assert!((lo - ulo).norm() < 1e-12);
        assert_eq!(downsample_majority(&u, 3).unwrap().data(), g.data());
        assert_eq!(upsample_nearest(&g, 1).unwrap(), g);
    }

    #[test]
    fn single_voxel_upsamples_to_27() {
        let g = grid([1, 1, 1], vec![1u8]);
        let u = upsample_nearest(&g, 3).unwrap();
        assert_eq!(u.count(), 27);
    }

    #[test]
    fn preprocess_constant_low_is_zero() {
        let g = VoxelGrid::filled([4, 4, 4], Vec3::repeat(0.7), Vec3::zeros(), -158.0f32).unwrap();
        let out = preprocess(&g, 1.25, Vec3::repeat(1.0), [3, 3, 3], -158.0, 864.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.spacing(), Vec3::repeat(1.25));
    }

    #[test]
    fn preprocess_ramp_midpoint_is_mean() {
        let g = VoxelGrid::new(
            [2, 1, 1],
            Vec3::repeat(1.0),
            Vec3::zeros(),
            vec![0.0f32, 1.0],
        )
        .unwrap();
        let out = preprocess(&g, 0.5, Vec3::new(0.5, 0.0, 0.0), [3, 1, 1], 0.0, 1.0).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn preprocess_outside_source_is_zero() {
        let g = VoxelGrid::filled([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), 1.0f32).unwrap();
        let out = preprocess(&g, 1.0, Vec3::repeat(0.5), [6, 2, 2], 0.0, 1.0).unwrap();
        let row: Vec<f32> = (0..6).map(|i| out.get(i, 0, 0)).collect();
        assert_eq!(row, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn preprocess_errors() {
        let g = VoxelGrid::filled([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), 1.0f32).unwrap();
        assert!(preprocess(&g, 1.0, Vec3::zeros(), [2, 2, 2], f64::NAN, 1.0).is_err());
        assert!(preprocess(&g, 1.0, Vec3::zeros(), [0, 2, 2], 0.0, 1.0).is_err());
        assert!(preprocess(&g, 1.0, Vec3::zeros(), [2, 2, 2], 1.0, 0.0).is_err());
    }
}
