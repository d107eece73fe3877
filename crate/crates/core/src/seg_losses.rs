//! Segmentation loss evaluators (region, boundary and chamfer terms) and the
//! epoch ramp for their weights. Values only; no gradients.

use serde::{Deserialize, Serialize};

use crate::error::{CmacError, Result};
use crate::spatial::PointIndex;
use crate::voxelgrid::{LabelGrid, ScalarGrid};
use crate::Vec3;

/// Lower bound applied to every logarithm.
pub const LOG_FLOOR: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub start_epoch: u32,
    pub end_epoch: u32,
    pub max_value: f64,
}

impl LambdaSchedule {
    /// Boundary-term ramp: 0 → 1000 over epochs 1000..2000.
    pub const BOUNDARY: LambdaSchedule = LambdaSchedule {
        start_epoch: 1000,
        end_epoch: 2000,
        max_value: 1000.0,
    };
    /// Chamfer-term ramp: 0 → 0.1 over epochs 1000..2000.
    pub const CHAMFER: LambdaSchedule = LambdaSchedule {
        start_epoch: 1000,
        end_epoch: 2000,
        max_value: 0.1,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_ce: f64,
    pub eps_dice: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub sdf_clip: (f64, f64),
    pub lambda_schedule: LambdaSchedule,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ce: 1.0,
            eps_dice: 1e-5,
            eps0: -100.0,
            eps1: 100.0,
            sdf_clip: (-3.0, 3.0),
            lambda_schedule: LambdaSchedule::BOUNDARY,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_schedule.end_epoch <= self.lambda_schedule.start_epoch {
            return Err(CmacError::InvalidInput(
                "lambda ramp must end after it starts".into(),
            ));
        }
        if self.sdf_clip.0 > self.sdf_clip.1 {
            return Err(CmacError::InvalidInput(
                "sdf clip bounds out of order".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
fn floored_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

fn check_pred(y: &LabelGrid, yhat: &ScalarGrid) -> Result<()> {
    y.check_congruent(yhat)?;
    y.ensure_binary()?;
    if let Some(v) = yhat.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CmacError::InvalidInput(format!(
            "prediction value {v} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Dice term plus `lambda_ce` times the mean binary cross-entropy (non-negative
/// convention), logarithms floored at −100.
pub fn dice_ce(y: &LabelGrid, yhat: &ScalarGrid, lambda_ce: f64, eps: f64) -> Result<f64> {
    check_pred(y, yhat)?;
    let (mut inter, mut sy, mut sp, mut ce) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &p) in y.data().iter().zip(yhat.data()) {
        let (t, p) = (t as f64, p as f64);
        inter += t * p;
        sy += t;
        sp += p;
        ce += t * floored_ln(p) + (1.0 - t) * floored_ln(1.0 - p);
    }
    let n = y.len() as f64;
    Ok(1.0 - 2.0 * inter / (sy + sp + eps) - lambda_ce * ce / n)
}

/// Two-class generalized Dice with weights `1 / (Σ y_c + ε_c)²`; class 0 is the
/// background `1 − y`.
pub fn gdl(y: &LabelGrid, yhat: &ScalarGrid, eps0: f64, eps1: f64) -> Result<f64> {
    check_pred(y, yhat)?;
    let (mut i1, mut u1, mut s1, mut i0, mut u0, mut s0) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &p) in y.data().iter().zip(yhat.data()) {
        let (t, p) = (t as f64, p as f64);
        i1 += t * p;
        u1 += t + p;
        s1 += t;
        let (tb, pb) = (1.0 - t, 1.0 - p);
        i0 += tb * pb;
        u0 += tb + pb;
        s0 += tb;
    }
    let d0 = s0 + eps0;
    let d1 = s1 + eps1;
    if d0 == 0.0 || d1 == 0.0 {
        return Err(CmacError::InvalidInput(
            "class weight denominator is zero".into(),
        ));
    }
    let (w0, w1) = (1.0 / (d0 * d0), 1.0 / (d1 * d1));
    let den = w0 * u0 + w1 * u1;
    if den == 0.0 {
        return Err(CmacError::InvalidInput(
            "generalized Dice denominator is zero".into(),
        ));
    }
    Ok(1.0 - 2.0 * (w0 * i0 + w1 * i1) / den)
}

/// `Σ −clip(sdf)·ŷ` with the SDF positive inside.
pub fn boundary_term(sdf_y: &ScalarGrid, yhat: &ScalarGrid, clip: (f64, f64)) -> Result<f64> {
    sdf_y.check_congruent(yhat)?;
    Ok(sdf_y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(&s, &p)| -(s as f64).clamp(clip.0, clip.1) * p as f64)
        .sum())
}

fn directed_mean_sq(from: &[Vec3], to: &PointIndex) -> f64 {
    from.iter()
        .map(|p| to.nearest(p).map_or(0.0, |(_, d)| d * d))
        .sum::<f64>()
        / from.len() as f64
}

/// Sum of the two directed mean squared nearest-neighbour distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CmacError::InvalidInput(
            "chamfer needs two nonempty point clouds".into(),
        ));
    }
    Ok(directed_mean_sq(a, &PointIndex::new(b)) + directed_mean_sq(b, &PointIndex::new(a)))
}

/// Zero before `start_epoch`, linear up to `max_value` at `end_epoch`, flat after.
pub fn lambda_at(epoch: u32, s: &LambdaSchedule) -> f64 {
    if epoch <= s.start_epoch {
        0.0
    } else if epoch >= s.end_epoch {
        s.max_value
    } else {
        s.max_value * (epoch - s.start_epoch) as f64 / (s.end_epoch - s.start_epoch) as f64
    }
}

/// Generalized Dice plus the weighted boundary term.
pub fn gbd(
    y: &LabelGrid,
    yhat: &ScalarGrid,
    sdf_y: &ScalarGrid,
    cfg: &LossConfig,
    epoch: u32,
) -> Result<f64> {
    Ok(gdl(y, yhat, cfg.eps0, cfg.eps1)?
        + lambda_at(epoch, &cfg.lambda_schedule) * boundary_term(sdf_y, yhat, cfg.sdf_clip)?)
}

/// Generalized Dice plus the weighted chamfer term between surface samples.
pub fn gch(
    y: &LabelGrid,
    yhat: &ScalarGrid,
    a: &[Vec3],
    b: &[Vec3],
    eps: (f64, f64),
    lambda: f64,
) -> Result<f64> {
    Ok(gdl(y, yhat, eps.0, eps.1)? + lambda * chamfer(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelgrid::VoxelGrid;

    fn grids(y: Vec<u8>, p: Vec<f32>) -> (LabelGrid, ScalarGrid) {
        let d = [y.len(), 1, 1];
        (
            VoxelGrid::new(d, Vec3::repeat(1.0), Vec3::zeros(), y).unwrap(),
            VoxelGrid::new(d, Vec3::repeat(1.0), Vec3::zeros(), p).unwrap(),
        )
    }

    #[test]
    fn perfect_prediction() {
        let (y, p) = grids(vec![1, 0, 1, 1], vec![1.0, 0.0, 1.0, 1.0]);
        assert!(dice_ce(&y, &p, 1.0, 1e-5).unwrap().abs() < 1e-5);
        assert!(gdl(&y, &p, -100.0, 100.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn empty_target_dice_is_one() {
        let (y, p) = grids(vec![0; 5], vec![0.0; 5]);
        assert_eq!(dice_ce(&y, &p, 1.0, 1e-5).unwrap(), 1.0);
        assert_eq!(gdl(&y, &p, -100.0, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn two_voxel_hand_value() {
        // Dice: 1 - 2*0.5/(1+1+eps); CE: -(ln 0.5 + ln 0.5)/2 = ln 2
        let (y, p) = grids(vec![1, 0], vec![0.5, 0.5]);
        let eps = 1e-5;
        let expect = 1.0 - 1.0 / (2.0 + eps) + std::f64::consts::LN_2;
        assert!((dice_ce(&y, &p, 1.0, eps).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn log_floor_bounds_ce() {
        let (y, p) = grids(vec![1], vec![0.0]);
        assert!((dice_ce(&y, &p, 1.0, 0.0).unwrap() - (1.0 + 100.0)).abs() < 1e-12);
    }

    #[test]
    fn boundary_examples() {
        let (_, zero) = grids(vec![0; 3], vec![0.0; 3]);
        let (_, sdf) = grids(vec![0; 3], vec![5.0, 3.0, -1.0]);
        assert_eq!(boundary_term(&sdf, &zero, (-3.0, 3.0)).unwrap(), 0.0);
        let (_, p) = grids(vec![0; 3], vec![1.0, 1.0, 0.0]);
        assert_eq!(boundary_term(&sdf, &p, (-3.0, 3.0)).unwrap(), -6.0);
    }

    #[test]
    fn chamfer_examples() {
        let a = [Vec3::zeros()];
        let b = [Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn ramp() {
        let s = LambdaSchedule::BOUNDARY;
        assert_eq!(lambda_at(0, &s), 0.0);
        assert_eq!(lambda_at(999, &s), 0.0);
        assert_eq!(lambda_at(1500, &s), 500.0);
        assert_eq!(lambda_at(3000, &LambdaSchedule::CHAMFER), 0.1);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (y, _) = grids(vec![0; 3], vec![0.0; 3]);
        let (_, p) = grids(vec![0; 4], vec![0.0; 4]);
        assert!(gdl(&y, &p, -100.0, 100.0).is_err());
    }
}
