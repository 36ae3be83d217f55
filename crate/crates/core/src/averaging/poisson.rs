use std::io::Write;

use rayon::prelude::*;

use super::measure::InvariantMeasureEstimate;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng;
use crate::sde::run_fast_rescaled;
use crate::stats;

/// Grid-valued solution of a Poisson equation `L u = -rhs` centered under
/// an invariant-measure estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    /// Slow point the right-hand side was frozen at, `None` when it does not
    /// depend on `x`.
    pub x_slice: Option<Vec<f64>>,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub dvalues: Vec<f64>,
    /// `|∫ u dμ̂|` after centering.
    pub centering_residual: f64,
}

fn interp(grid: &[f64], vals: &[f64], y: f64) -> f64 {
    let n = grid.len();
    if y <= grid[0] {
        return vals[0];
    }
    if y >= grid[n - 1] {
        return vals[n - 1];
    }
    let dy = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let i = (((y - grid[0]) / dy).floor() as usize).min(n - 2);
    let s = (y - grid[i]) / (grid[i + 1] - grid[i]);
    vals[i] * (1.0 - s) + vals[i + 1] * s
}

impl PoissonSolution {
    /// The zero solution on `grid`.
    pub fn zero(grid: Vec<f64>) -> Self {
        let n = grid.len();
        Self {
            x_slice: None,
            grid,
            values: vec![0.0; n],
            dvalues: vec![0.0; n],
            centering_residual: 0.0,
        }
    }

    pub fn with_x_slice(mut self, x: &[f64]) -> Self {
        self.x_slice = Some(x.to_vec());
        self
    }

    /// Linear interpolation, constant extrapolation outside the grid.
    pub fn value(&self, y: f64) -> f64 {
        interp(&self.grid, &self.values, y)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        interp(&self.grid, &self.dvalues, y)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Centering tolerance `1e-6 (1 + sup |u|)`.
    pub fn tol_center(&self) -> f64 {
        1e-6 * (1.0 + self.sup_norm())
    }

    pub fn is_centered(&self) -> bool {
        self.centering_residual <= self.tol_center()
    }

    /// Largest interior defect of the discrete equation
    /// `f D_1 u + tau^2 D_2 u / 2 + rhs` on the solution grid.
    pub fn discrete_generator_residual(&self, model: &ModelSpec, rhs: impl Fn(f64) -> f64) -> f64 {
        let n = self.grid.len();
        let dy = self.grid[1] - self.grid[0];
        let mut worst: f64 = 0.0;
        for i in 1..n - 1 {
            let y = self.grid[i];
            let f = model.eval_f(&[y])[0];
            let t = model.eval_tau(&[y])[0];
            let u = &self.values;
            let lu = f * (u[i + 1] - u[i - 1]) / (2.0 * dy)
                + 0.5 * t * t * (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dy * dy);
            worst = worst.max((lu + rhs(y)).abs());
        }
        worst
    }

    /// CSV `y,phi,dphi`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "y,phi,dphi")?;
        for ((y, v), d) in self.grid.iter().zip(&self.values).zip(&self.dvalues) {
            writeln!(out, "{y},{v},{d}")?;
        }
        Ok(())
    }
}

/// `rhs - ∫ rhs dμ̂`.
pub fn center_rhs(mu: &InvariantMeasureEstimate, rhs: impl Fn(f64) -> f64) -> impl Fn(f64) -> f64 {
    let mean = mu.expect(|y| rhs(y[0])).value;
    move |y| rhs(y) - mean
}

/// Default domain for the finite-difference solver: ten standard deviations
/// of `μ̂` around its mean.
pub fn default_domain(mu: &InvariantMeasureEstimate) -> (f64, f64) {
    let (m, sd) = mu.mean_sd(0);
    let r = 10.0 * sd.max(1e-3);
    (m - r, m + r)
}

/// Solves `f u' + tau^2 u'' / 2 = -rhs` for a one-dimensional fast variable
/// by second-order central differences on `n_grid` points of `domain`. The
/// end slopes are those of the solution with polynomial growth, integrated
/// from the equation beyond the domain; a zero slope there would bend the
/// solution near the ends. The free constant is pinned at the grid point nearest the median of `μ̂`, then removed by
/// centering under `μ̂`.
pub fn solve_poisson_fd(
    model: &ModelSpec,
    rhs: impl Fn(f64) -> f64,
    mu: &InvariantMeasureEstimate,
    domain: (f64, f64),
    n_grid: usize,
) -> Result<PoissonSolution> {
    if model.dim_y != 1 {
        return Err(Error::UnsupportedDimension {
            dim: model.dim_y,
            hint: "the finite-difference corrector needs one fast dimension; use solve_poisson_fk",
        });
    }
    let (lo, hi) = domain;
    if !(lo < hi) || n_grid < 5 || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(
            "Poisson domain must be a finite interval with at least 5 points",
        ));
    }
    let dy = (hi - lo) / (n_grid - 1) as f64;
    let grid: Vec<f64> = (0..n_grid).map(|i| lo + i as f64 * dy).collect();
    let r: Vec<f64> = grid.iter().map(|&y| rhs(y)).collect();
    let sup_rhs = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "right-hand side is not finite on the grid",
        ));
    }
    let mean = mu.expect(|y| rhs(y[0]));
    let tol = (1e-6 * (1.0 + sup_rhs)).max(4.0 * mean.stderr);
    if mean.value.abs() > tol {
        return Err(Error::precondition(format!(
            "right-hand side is not centered: ∫ rhs dμ̂ = {} (tolerance {tol})",
            mean.value
        )));
    }

    // tridiagonal system: sub a, diagonal b, super c, right side d
    let mut a = vec![0.0; n_grid];
    let mut b = vec![0.0; n_grid];
    let mut c = vec![0.0; n_grid];
    let mut d: Vec<f64> = r.iter().map(|v| -v).collect();
    let slope_lo = boundary_slope(model, &rhs, lo, -1.0, dy)?;
    let slope_hi = boundary_slope(model, &rhs, hi, 1.0, dy)?;
    for i in 0..n_grid {
        let y = grid[i];
        let f = model.eval_f(&[y])[0];
        let t = model.eval_tau(&[y])[0];
        let diff = 0.5 * t * t / (dy * dy);
        let adv = f / (2.0 * dy);
        b[i] = -2.0 * diff;
        if i == 0 {
            // ghost point u_{-1} = u_1 - 2 dy u'(lo)
            c[i] = 2.0 * diff;
            d[i] += 2.0 * dy * slope_lo * (diff - adv);
        } else if i == n_grid - 1 {
            // ghost point u_{n} = u_{n-2} + 2 dy u'(hi)
            a[i] = 2.0 * diff;
            d[i] -= 2.0 * dy * slope_hi * (diff + adv);
        } else {
            a[i] = diff - adv;
            c[i] = diff + adv;
        }
    }
    let median = mu.median(0).clamp(lo, hi);
    let pin = (((median - lo) / dy).round() as usize).min(n_grid - 1);
    a[pin] = 0.0;
    b[pin] = 1.0;
    c[pin] = 0.0;
    d[pin] = 0.0;
    let mut u = thomas(&a, &b, &c, &mut d)?;

    let shift: f64 = mu
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(y, w)| w * interp(&grid, &u, y[0]))
        .sum();
    u.iter_mut().for_each(|v| *v -= shift);
    let residual = mu
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(y, w)| w * interp(&grid, &u, y[0]))
        .sum::<f64>()
        .abs();

    let du = derivative(&u, dy);
    let sol = PoissonSolution {
        x_slice: None,
        grid,
        values: u,
        dvalues: du,
        centering_residual: residual,
    };
    if !sol.is_centered() {
        return Err(Error::numerical(format!(
            "centering residual {residual} exceeds {}",
            sol.tol_center()
        )));
    }
    Ok(sol)
}

/// Exact slope of the growth-limited solution at the boundary point `edge`,
/// from the flux identity `τ² p u' / 2 = ∓∫ rhs p` over the part of the line
/// beyond `edge` (`dir` is -1 below the domain and +1 above it):
/// `u'(edge) = 2 dir ∫ rhs(z) / τ(z)² exp(∫_edge^z 2 f / τ²) |dz|`.
fn boundary_slope(
    model: &ModelSpec,
    rhs: &impl Fn(f64) -> f64,
    edge: f64,
    dir: f64,
    dy: f64,
) -> Result<f64> {
    const MAX_STEPS: usize = 10_000_000;
    let ds = 0.25 * dy;
    let point = |z: f64| {
        let t = model.eval_tau(&[z])[0];
        let t2 = t * t;
        (2.0 * model.eval_f(&[z])[0] / t2 * dir, rhs(z) / t2)
    };
    let (mut drift, mut g) = point(edge);
    let mut phi = 0.0;
    let mut acc = 0.0;
    for k in 1..=MAX_STEPS {
        let z = edge + dir * k as f64 * ds;
        let (drift_next, g_next) = point(z);
        let phi_next = phi + 0.5 * ds * (drift + drift_next);
        acc += 0.5 * ds * (g * phi.exp() + g_next * phi_next.exp());
        (drift, g, phi) = (drift_next, g_next, phi_next);
        if !acc.is_finite() || !phi.is_finite() {
            break;
        }
        if phi < -745.0 {
            return Ok(2.0 * dir * acc);
        }
    }
    Err(Error::numerical(format!(
        "fast drift does not confine beyond y = {edge}; the boundary slope diverges"
    )))
}

fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut denom = b[0];
    if denom == 0.0 {
        return Err(Error::numerical("singular tridiagonal system"));
    }
    cp[0] = c[0] / denom;
    d[0] /= denom;
    for i in 1..n {
        denom = b[i] - a[i] * cp[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::numerical(format!(
                "singular tridiagonal system at row {i}"
            )));
        }
        cp[i] = c[i] / denom;
        d[i] = (d[i] - a[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

/// Central differences inside, second-order one-sided at the ends.
fn derivative(u: &[f64], dy: f64) -> Vec<f64> {
    let n = u.len();
    let mut du = vec![0.0; n];
    for i in 1..n - 1 {
        du[i] = (u[i + 1] - u[i - 1]) / (2.0 * dy);
    }
    du[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dy);
    du[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * dy);
    du
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkSettings {
    /// Truncation time of the time integral, in units of the rescaled process.
    pub t_max: f64,
    pub step: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for FkSettings {
    fn default() -> Self {
        Self {
            t_max: 20.0,
            step: 0.0025,
            n_paths: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkEstimate {
    pub value: f64,
    pub stderr: f64,
    /// `|E rhs(Y_{T_max})|` times one relaxation time: a size estimate of the
    /// neglected tail of the integral.
    pub tail: f64,
}

/// Monte Carlo solution of the Poisson equation at one point through
/// `u(y) = ∫_0^{T_max} E[rhs(Y~_t^y)] dt`, valid in any fast dimension.
/// `rhs` must be centered under the invariant measure.
pub fn solve_poisson_fk(
    model: &ModelSpec,
    rhs: impl Fn(&[f64]) -> f64 + Sync,
    y: &[f64],
    settings: &FkSettings,
) -> Result<FkEstimate> {
    if y.len() != model.dim_y {
        return Err(Error::domain("starting point has the wrong dimension"));
    }
    if !(settings.t_max > 0.0 && settings.step > 0.0) || settings.n_paths < 2 {
        return Err(Error::domain(
            "Feynman–Kac settings need positive times and two paths",
        ));
    }
    let n = (settings.t_max / settings.step).round().max(1.0) as usize;
    let step = settings.t_max / n as f64;
    let per_path: Vec<(f64, f64)> = (0..settings.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(settings.seed, p, rng::TAG_FEYNMAN_KAC);
            let mut integral = 0.0;
            let mut last = 0.0;
            run_fast_rescaled(model, y, n, step, &mut r, |k, yk| {
                let v = rhs(yk);
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                integral += w * step * v;
                last = v;
            })?;
            Ok((integral, last))
        })
        .collect::<Result<_>>()?;
    let ints: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let lasts: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let e = stats::mean_estimate(&ints);
    Ok(FkEstimate {
        value: e.value,
        stderr: e.stderr,
        tail: stats::mean(&lasts).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::measure::from_stationary_density;

    fn ou() -> (ModelSpec, InvariantMeasureEstimate) {
        let m = ModelSpec::registry("ou-quadratic").unwrap();
        let mu = from_stationary_density(&m, (-7.0, 7.0), 4001).unwrap();
        (m, mu)
    }

    #[test]
    fn quadratic_corrector() {
        let (m, mu) = ou();
        let sol = solve_poisson_fd(&m, |y| y * y - 0.5, &mu, (-7.0, 7.0), 2001).unwrap();
        for (y, v) in sol.grid.iter().zip(&sol.values) {
            if y.abs() <= 5.0 {
                assert!((v - (y * y / 2.0 - 0.25)).abs() < 1e-3, "{y}: {v}");
            }
        }
        assert!((sol.derivative(1.0) - 1.0).abs() < 1e-6);
        assert!(sol.is_centered());
        // the discrete equation holds away from the pinned row
        assert!(sol.discrete_generator_residual(&m, |y| y * y - 0.5) < 1e-6);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (m, mu) = ou();
        let sol = solve_poisson_fd(&m, |_| 0.0, &mu, (-5.0, 5.0), 101).unwrap();
        assert!(sol.sup_norm() == 0.0);
    }

    #[test]
    fn second_order_refinement() {
        // rhs y^4 - 3/4 has the corrector y^4/4 + 3 y^2/4 - 9/16
        let (m, mu) = ou();
        let exact = |y: f64| y.powi(4) / 4.0 + 0.75 * y * y - 9.0 / 16.0;
        let err = |n: usize| {
            let s = solve_poisson_fd(&m, |y| y.powi(4) - 0.75, &mu, (-7.0, 7.0), n).unwrap();
            s.grid
                .iter()
                .zip(&s.values)
                .filter(|(y, _)| y.abs() <= 3.0)
                .map(|(y, v)| (v - exact(*y)).abs())
                .fold(0.0f64, f64::max)
        };
        let (e1, e2) = (err(701), err(1401));
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn preconditions() {
        let (m, mu) = ou();
        assert!(matches!(
            solve_poisson_fd(&m, |y| y * y, &mu, (-7.0, 7.0), 101),
            Err(Error::Precondition(_))
        ));
        let centered = center_rhs(&mu, |y| y * y);
        assert!(solve_poisson_fd(&m, centered, &mu, (-7.0, 7.0), 101).is_ok());
        let mut two = m.clone();
        two.dim_y = 2;
        assert!(matches!(
            solve_poisson_fd(&two, |_| 0.0, &mu, (-7.0, 7.0), 101),
            Err(Error::UnsupportedDimension { dim: 2, .. })
        ));
    }

    #[test]
    fn feynman_kac_at_origin() {
        let (m, _) = ou();
        let s = FkSettings {
            n_paths: 4000,
            seed: 3,
            ..Default::default()
        };
        let est = solve_poisson_fk(&m, |y| y[0] * y[0] - 0.5, &[0.0], &s).unwrap();
        assert!(
            (est.value + 0.25).abs() <= 3.0 * est.stderr + est.tail * s.t_max,
            "{est:?}"
        );
        let zero = solve_poisson_fk(&m, |_| 0.0, &[0.0], &FkSettings { n_paths: 10, ..s }).unwrap();
        assert_eq!(zero.value, 0.0);
    }
}
