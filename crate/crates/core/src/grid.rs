use crate::error::{Error, Result};

/// Uniform time grid `0 = t_0 < t_1 < ... < t_n = horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    steps: usize,
    horizon: f64,
}

impl UniformGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("grid needs at least one step"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!(
                "grid horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point closest to `t`, if `t` lies within half a step
    /// of the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if !(t.is_finite()) || t < -0.5 * self.step() || t > self.horizon + 0.5 * self.step() {
            return None;
        }
        let k = (t / self.step()).round();
        Some((k.max(0.0) as usize).min(self.steps))
    }

    /// The grid with the same horizon and `steps / factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::domain(format!(
                "cannot coarsen {} steps by factor {factor}",
                self.steps
            )));
        }
        Self::new(self.steps / factor, self.horizon)
    }
}
