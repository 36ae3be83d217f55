use crate::error::{Error, Result};
use crate::grid::UniformGrid;

/// Deterministic trajectory on a uniform grid, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitTrajectory {
    pub grid: UniformGrid,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LimitTrajectory {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.at(self.grid.steps())
    }
}

/// Classical fourth-order Runge–Kutta solution of `x' = drift(x)` on
/// `[0, horizon]` with `round(horizon / h)` steps.
pub fn solve_limit_ode(
    drift: impl Fn(&[f64], &mut [f64]),
    x0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<LimitTrajectory> {
    if !(h > 0.0) || !(horizon > 0.0) {
        return Err(Error::domain(format!(
            "step and horizon must be positive, got {h}, {horizon}"
        )));
    }
    let n = (horizon / h).round().max(1.0) as usize;
    let grid = UniformGrid::new(n, horizon)?;
    rk4_on_grid(drift, x0, grid)
}

pub(crate) fn rk4_on_grid(
    drift: impl Fn(&[f64], &mut [f64]),
    x0: &[f64],
    grid: UniformGrid,
) -> Result<LimitTrajectory> {
    let d = x0.len();
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.len() * d);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for step in 0..grid.steps() {
        drift(&x, &mut k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        drift(&tmp, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        drift(&tmp, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] + h * k3[i];
        }
        drift(&tmp, &mut k4);
        for i in 0..d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter()
            .any(|v| !v.is_finite() || v.abs() > crate::sde::OVERFLOW_LIMIT)
        {
            return Err(Error::Simulation {
                step: step + 1,
                detail: format!("limit ODE state left the finite range: {x:?}"),
            });
        }
        values.extend_from_slice(&x);
    }
    Ok(LimitTrajectory {
        grid,
        dim: d,
        values,
    })
}
