use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ssd,
    Ncc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    pub metric: Metric,
    /// Weight of the bending energy. The energy is a per-node mean in mm
    /// units, so it is small; the default suits intensities of order one.
    pub lambda: f64,
    /// Pyramid depth shared by the affine and deformable stages.
    pub levels: usize,
    /// Control-point spacing per level, coarsest first, in voxels of the
    /// finest fixed grid (per axis). Each entry must halve the previous one.
    pub control_spacing_schedule: Vec<f64>,
    /// Gradient-descent iterations per deformable level.
    pub max_iters: usize,
    /// Gradient-descent iterations per affine level.
    pub affine_max_iters: usize,
    /// First trial step, in voxels of the current level.
    pub step_init: f64,
    pub step_shrink: f64,
    /// Stop a level once the gradient max-norm falls below this fraction of
    /// its value at the start of the level.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// L-BFGS history length; 0 selects plain gradient descent.
    pub lbfgs_memory: usize,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Ssd,
            lambda: 2.0,
            levels: 3,
            control_spacing_schedule: vec![32.0, 16.0, 8.0],
            max_iters: 100,
            affine_max_iters: 100,
            step_init: 1.0,
            step_shrink: 0.5,
            grad_tol: 1e-4,
            armijo: 1e-4,
            lbfgs_memory: 7,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("registration config: {m}")));
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if self.control_spacing_schedule.len() != self.levels {
            return bad("control_spacing_schedule needs one entry per level");
        }
        if self.control_spacing_schedule.iter().any(|s| !(*s > 0.0)) {
            return bad("control spacings must be positive");
        }
        for w in self.control_spacing_schedule.windows(2) {
            if (w[1] * 2.0 - w[0]).abs() > 1e-9 * w[0] {
                return bad("each control spacing must be half the previous one");
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.step_init > 0.0) || !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_init must be positive and step_shrink in (0, 1)");
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.grad_tol >= 0.0) {
            return bad("armijo must lie in (0, 1) and grad_tol be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_schedules_fail() {
        RegConfig::default().validate().unwrap();
        let c = RegConfig { control_spacing_schedule: vec![30.0, 16.0, 8.0], ..Default::default() };
        assert!(c.validate().is_err());
        let c = RegConfig { levels: 2, ..Default::default() };
        assert!(c.validate().is_err());
        let c = RegConfig { lambda: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
