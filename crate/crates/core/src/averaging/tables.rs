use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use super::measure::{
    averaged_drift, averaged_function, reference_measure, InvariantMeasureEstimate,
};
use super::ode::{rk4_on_grid, LimitTrajectory};
use crate::error::{Error, Result};
use crate::experiments::fit::{fit_slope, SlopeFit};
use crate::fbm::{NoiseBundle, NoiseSource};
use crate::grid::UniformGrid;
use crate::model::{ModelSpec, ScaleParams};
use crate::sde::{nested_substeps, simulate_observed};
use crate::stats;

/// One scale level of an error table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub eps: f64,
    pub eta: f64,
    pub p: f64,
    /// Monte Carlo estimate of `E sup_t |...|^p`.
    pub error: f64,
    pub stderr: f64,
    /// Scale the `p`-th root of the error is regressed on.
    pub scale: f64,
}

impl ErrorRow {
    /// `error^(1/p)` and its delta-method standard error.
    pub fn root(&self) -> (f64, f64) {
        let r = self.error.powf(1.0 / self.p);
        let se = if self.error > 0.0 {
            self.stderr * r / (self.p * self.error)
        } else {
            0.0
        };
        (r, se)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    /// Log-log fit of `error^(1/p)` against the row scales, when all errors
    /// are positive and there are at least three rows.
    pub fit: Option<SlopeFit>,
}

impl ErrorTable {
    fn from_rows(rows: Vec<ErrorRow>) -> Self {
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.scale, r.root().0)).collect();
        let fit = fit_slope(&pairs).ok();
        Self { rows, fit }
    }

    /// CSV `epsilon,eta,p,error,stderr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,eta,p,error,stderr")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.eps, r.eta, r.p, r.error, r.stderr)?;
        }
        Ok(())
    }

    /// Whether the errors decrease along the ladder up to `k` combined
    /// standard errors.
    pub fn is_monotone(&self, k: f64) -> bool {
        self.rows.windows(2).all(|w| {
            let tol = k * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].error <= w[0].error + tol
        })
    }
}

/// What `X^ε` is compared against.
#[derive(Debug, Clone, Default)]
pub enum Reference {
    /// RK4 solution of the averaged ODE on the slow grid.
    #[default]
    Averaged,
    /// A given trajectory on the slow grid.
    Trajectory(Arc<LimitTrajectory>),
    /// `X^ε` itself; the error is exactly zero.
    SelfComparison,
}

#[derive(Debug, Clone)]
pub struct StrongErrorSettings {
    /// Slow steps on `[0, horizon]`.
    pub n: usize,
    pub horizon: f64,
    pub p: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub reference: Reference,
}

impl Default for StrongErrorSettings {
    fn default() -> Self {
        Self {
            n: 4096,
            horizon: 1.0,
            p: 2.0,
            n_paths: 2000,
            seed: 0,
            reference: Reference::Averaged,
        }
    }
}

/// Rejects `p` outside `(0, 2α / (T β γ sup|tau|^2))` when the model declares
/// `gamma`; a model without `gamma` has bounded `∇_x c` and any finite
/// positive `p` is admissible.
pub fn check_p_admissible(model: &ModelSpec, p: f64, horizon: f64) -> Result<()> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::domain(format!(
            "p must be positive and finite, got {p}"
        )));
    }
    let g = &model.growth;
    if let Some(gamma) = g.gamma.filter(|v| *v > 0.0) {
        let bound = 2.0 * g.alpha / (horizon * g.beta * gamma * g.tau_sup_sq);
        if p >= bound {
            return Err(Error::precondition(format!(
                "p = {p} is outside the admissible range (0, {bound}) for alpha = {}, beta = {}, gamma = {gamma}",
                g.alpha, g.beta
            )));
        }
    }
    Ok(())
}

fn level_noise(fine: &NoiseBundle, h: f64, eta: f64) -> Result<Option<NoiseBundle>> {
    let n_sub = nested_substeps(h, eta);
    if n_sub == fine.substeps() {
        Ok(None)
    } else {
        fine.coarsen(fine.grid().steps(), n_sub).map(Some)
    }
}

fn finest_source(
    model: &ModelSpec,
    grid: UniformGrid,
    etas: impl Iterator<Item = f64>,
    seed: u64,
) -> Result<NoiseSource> {
    let h = grid.step();
    let n_sub = etas.map(|eta| nested_substeps(h, eta)).max().unwrap_or(1);
    NoiseSource::new(grid, model.hurst, model.dim_x, model.dim_y, n_sub, seed)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Monte Carlo estimate of `E sup_{t ≤ T} |X^ε_t - X̄_t|^p` at every scale of
/// `ladder`. All levels of a replica are driven by one noise sample drawn
/// at the finest fast resolution and aggregated to each level (common
/// random numbers). `mu` defaults to [`reference_measure`].
pub fn strong_error_table(
    model: &ModelSpec,
    ladder: &[ScaleParams],
    settings: &StrongErrorSettings,
    mu: Option<&InvariantMeasureEstimate>,
) -> Result<ErrorTable> {
    check_p_admissible(model, settings.p, settings.horizon)?;
    if ladder.is_empty() || settings.n_paths == 0 {
        return Err(Error::domain("strong-error table needs scales and paths"));
    }
    let grid = UniformGrid::new(settings.n, settings.horizon)?;
    let reference: Option<Arc<LimitTrajectory>> = match &settings.reference {
        Reference::SelfComparison => None,
        Reference::Trajectory(t) => {
            if t.grid != grid || t.dim != model.dim_x {
                return Err(Error::domain(
                    "reference trajectory does not live on the slow grid",
                ));
            }
            Some(t.clone())
        }
        Reference::Averaged => {
            let owned;
            let mu = match mu {
                Some(m) => m,
                None => {
                    owned = reference_measure(model, settings.seed)?;
                    &owned
                }
            };
            let drift =
                |x: &[f64], out: &mut [f64]| out.copy_from_slice(&averaged_drift(model, mu, x));
            Some(Arc::new(rk4_on_grid(drift, &model.x0, grid)?))
        }
    };
    let source = finest_source(model, grid, ladder.iter().map(|s| s.eta), settings.seed)?;
    let h = grid.step();
    let p = settings.p;

    let per_path: Vec<Vec<f64>> = (0..settings.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let fine = source.bundle(path);
            ladder
                .iter()
                .map(|scales| {
                    let Some(xbar) = &reference else {
                        return Ok(0.0);
                    };
                    let coarse = level_noise(&fine, h, scales.eta)?;
                    let noise = coarse.as_ref().unwrap_or(&fine);
                    let mut sup: f64 = 0.0;
                    simulate_observed(
                        model,
                        scales,
                        grid.steps(),
                        grid.horizon(),
                        noise,
                        |k, x, _| {
                            sup = sup.max(euclid(x, xbar.at(k)));
                        },
                    )?;
                    Ok(sup.powf(p))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let rows = ladder
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let vals: Vec<f64> = per_path.iter().map(|v| v[i]).collect();
            let e = stats::mean_estimate(&vals);
            ErrorRow {
                eps: s.eps,
                eta: s.eta,
                p,
                error: e.value,
                stderr: if e.stderr.is_finite() { e.stderr } else { 0.0 },
                scale: s.rate_scale(),
            }
        })
        .collect();
    Ok(ErrorTable::from_rows(rows))
}

pub type ScalarObservable = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type AveragedObservable = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Source of the averaged function `h̄(x)`.
#[derive(Clone, Default)]
pub enum HBar {
    Known(AveragedObservable),
    /// `∫ h(x, y) μ̂(dy)` evaluated at every slow step.
    #[default]
    Estimated,
}

impl std::fmt::Debug for HBar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HBar::Known(_) => f.write_str("Known(..)"),
            HBar::Estimated => f.write_str("Estimated"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErgodicSettings {
    /// Fixed `ε` for every level; `None` ties `ε = η`.
    pub eps: Option<f64>,
    pub n: usize,
    pub horizon: f64,
    pub p: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for ErgodicSettings {
    fn default() -> Self {
        Self {
            eps: None,
            n: 4096,
            horizon: 1.0,
            p: 2.0,
            n_paths: 2000,
            seed: 0,
        }
    }
}

/// Monte Carlo estimate of `E sup_{t ≤ T} |∫_0^t (h(X_s, Y_s) - h̄(X_s)) ds|^p`
/// for each `η`, with the time integral as a left-point sum on the slow
/// grid. Rows are regressed on `sqrt(η)`.
pub fn ergodic_error_table(
    model: &ModelSpec,
    h: ScalarObservable,
    hbar: HBar,
    etas: &[f64],
    settings: &ErgodicSettings,
    mu: Option<&InvariantMeasureEstimate>,
) -> Result<ErrorTable> {
    if !(settings.p > 0.0) || !settings.p.is_finite() {
        return Err(Error::domain(format!(
            "p must be positive and finite, got {}",
            settings.p
        )));
    }
    if etas.is_empty() || settings.n_paths == 0 {
        return Err(Error::domain("ergodic table needs scales and paths"));
    }
    let ladder: Vec<ScaleParams> = etas
        .iter()
        .map(|&eta| ScaleParams::new(settings.eps.unwrap_or(eta), eta))
        .collect::<Result<_>>()?;
    let hbar: AveragedObservable = match hbar {
        HBar::Known(f) => f,
        HBar::Estimated => {
            let mu = match mu {
                Some(m) => m.clone(),
                None => reference_measure(model, settings.seed)?,
            };
            let h = h.clone();
            Arc::new(move |x: &[f64]| averaged_function(&mu, x, |x, y| h(x, y)))
        }
    };
    let grid = UniformGrid::new(settings.n, settings.horizon)?;
    let step = grid.step();
    let source = finest_source(model, grid, etas.iter().copied(), settings.seed)?;
    let p = settings.p;

    let per_path: Vec<Vec<f64>> = (0..settings.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let fine = source.bundle(path);
            ladder
                .iter()
                .map(|scales| {
                    let coarse = level_noise(&fine, step, scales.eta)?;
                    let noise = coarse.as_ref().unwrap_or(&fine);
                    let (mut acc, mut sup) = (0.0f64, 0.0f64);
                    let last = grid.steps();
                    simulate_observed(
                        model,
                        scales,
                        grid.steps(),
                        grid.horizon(),
                        noise,
                        |k, x, y| {
                            if k < last {
                                acc += (h(x, y) - hbar(x)) * step;
                                sup = sup.max(acc.abs());
                            }
                        },
                    )?;
                    Ok(sup.powf(p))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let rows = ladder
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let vals: Vec<f64> = per_path.iter().map(|v| v[i]).collect();
            let e = stats::mean_estimate(&vals);
            ErrorRow {
                eps: s.eps,
                eta: s.eta,
                p,
                error: e.value,
                stderr: if e.stderr.is_finite() { e.stderr } else { 0.0 },
                scale: s.eta.sqrt(),
            }
        })
        .collect();
    Ok(ErrorTable::from_rows(rows))
}
