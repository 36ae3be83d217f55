//! Second-order behavior of the slow variable: the rescaled fluctuations
//! `θ^ε = (X^ε - X̄) / sqrt(ε)`, their three-term decomposition, the
//! limiting mixed SDE and two-sample comparison of ensembles.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::averaging::{
    averaged_drift, averaged_sigma, default_domain, solve_poisson_fd, InvariantMeasureEstimate,
    LimitTrajectory, PoissonSolution,
};
use crate::error::{Error, Result};
use crate::fbm::{FgnSampler, HurstParameter, NoiseSource};
use crate::grid::UniformGrid;
use crate::model::{ModelSpec, ScaleParams};
use crate::rng;
use crate::sde::{fluctuation_substeps, integrate, ExtendedTerms};
use crate::stats;

/// Label mixed into the seed of the limit-law drivers, so that a limit
/// ensemble never reuses the fBm of a prelimit ensemble with the same seed.
const LIMIT_SEED_LABEL: u64 = 0x004c_494d_4954;

/// The three terms of `θ^ε`, stored like `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    /// `ε^{-1/2} ∫ (c̄(X^ε) - c̄(X̄))`.
    pub i: Vec<f64>,
    /// `ε^{-1/2} ∫ (c(X^ε, Y^η) - c̄(X^ε))`.
    pub ii: Vec<f64>,
    /// `∫ sigma(Y^η) dW^H`.
    pub iii: Vec<f64>,
}

/// Fluctuation trajectories recorded every `record_every` slow steps,
/// stored path-major: `theta[(path * n_rec + r) * dim + coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationEnsemble {
    /// `None` for an ensemble of the limit SDE.
    pub scales: Option<ScaleParams>,
    pub grid: UniformGrid,
    pub record_every: usize,
    pub dim: usize,
    pub n_paths: usize,
    pub theta: Vec<f64>,
    pub components: Option<Components>,
}

impl FluctuationEnsemble {
    pub fn n_records(&self) -> usize {
        self.grid.steps() / self.record_every + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_records())
            .map(|r| self.grid.time(r * self.record_every))
            .collect()
    }

    /// Record index of time `t`, if `t` is a recorded time.
    pub fn record_of(&self, t: f64) -> Option<usize> {
        let k = self.grid.index_of(t)?;
        let exact = (self.grid.time(k) - t).abs() <= 1e-9 * self.grid.horizon().max(1.0);
        (exact && k % self.record_every == 0).then_some(k / self.record_every)
    }

    pub fn at(&self, path: usize, r: usize) -> &[f64] {
        let o = (path * self.n_records() + r) * self.dim;
        &self.theta[o..o + self.dim]
    }

    /// Values of coordinate `coord` at record `r` across paths.
    pub fn marginal(&self, r: usize, coord: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.at(p, r)[coord]).collect()
    }

    /// `max |θ - (I + II + III)| / (1 + max |θ|)` over paths and records.
    pub fn decomposition_defect(&self) -> Option<f64> {
        let c = self.components.as_ref()?;
        let mut worst: f64 = 0.0;
        let mut top: f64 = 0.0;
        for (k, th) in self.theta.iter().enumerate() {
            worst = worst.max((th - (c.i[k] + c.ii[k] + c.iii[k])).abs());
            top = top.max(th.abs());
        }
        Some(worst / (1.0 + top))
    }
}

#[derive(Debug, Clone)]
pub struct ThetaSettings {
    pub n_paths: usize,
    pub seed: u64,
    pub record_every: usize,
    /// Store the decomposition; needs `mu` for `c̄`.
    pub components: bool,
}

impl Default for ThetaSettings {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            seed: 0,
            record_every: 1,
            components: false,
        }
    }
}

fn check_record(grid: &UniformGrid, record_every: usize) -> Result<()> {
    if record_every == 0 || !grid.steps().is_multiple_of(record_every) {
        return Err(Error::domain(format!(
            "record stride {record_every} does not divide {} steps",
            grid.steps()
        )));
    }
    Ok(())
}

/// Simulates `n_paths` replicas of the coupled system on the grid of `xbar`
/// and records `θ^ε = (X^ε - X̄) / sqrt(ε)`. With components requested, `I`
/// uses the increments of `xbar` itself, so the identity `θ = I + II + III`
/// is exact up to rounding.
pub fn theta_ensemble(
    model: &ModelSpec,
    scales: &ScaleParams,
    xbar: &LimitTrajectory,
    settings: &ThetaSettings,
    mu: Option<&InvariantMeasureEstimate>,
) -> Result<FluctuationEnsemble> {
    theta_ensemble_with(model, scales, xbar, settings, mu, None)
}

pub(crate) fn theta_ensemble_with(
    model: &ModelSpec,
    scales: &ScaleParams,
    xbar: &LimitTrajectory,
    settings: &ThetaSettings,
    mu: Option<&InvariantMeasureEstimate>,
    ext: Option<&ExtendedTerms>,
) -> Result<FluctuationEnsemble> {
    if xbar.dim != model.dim_x || xbar.values.len() != xbar.grid.len() * xbar.dim {
        return Err(Error::domain("limit trajectory does not match the model"));
    }
    if scales.is_formal() {
        return Err(Error::domain("fluctuations are undefined at eps = 0"));
    }
    let grid = xbar.grid;
    check_record(&grid, settings.record_every)?;
    let mu = if settings.components {
        Some(mu.ok_or_else(|| {
            Error::domain("the decomposition needs an invariant-measure estimate")
        })?)
    } else {
        None
    };
    let n_sub = fluctuation_substeps(grid.step(), scales.eta, scales.eps);
    let source = NoiseSource::new(
        grid,
        model.hurst,
        model.dim_x,
        model.dim_y,
        n_sub,
        settings.seed,
    )?;
    let d = model.dim_x;
    let h = grid.step();
    let inv = 1.0 / scales.eps.sqrt();
    let every = settings.record_every;
    let n_rec = grid.steps() / every + 1;

    type PathOut = (Vec<f64>, Option<[Vec<f64>; 3]>);
    let per_path: Vec<PathOut> = (0..settings.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let noise = source.bundle(p);
            let mut theta = Vec::with_capacity(n_rec * d);
            let mut comps = mu.map(|_| [Vec::with_capacity(n_rec * d), Vec::new(), Vec::new()]);
            let (mut si, mut sii, mut siii) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            let mut c = vec![0.0; d];
            let mut sig = vec![0.0; d * d];
            integrate(model, scales, &noise, ext, |k, x, y| {
                let xb = xbar.at(k);
                if k % every == 0 {
                    theta.extend(x.iter().zip(xb).map(|(a, b)| (a - b) * inv));
                    if let Some(cs) = comps.as_mut() {
                        cs[0].extend_from_slice(&si);
                        cs[1].extend_from_slice(&sii);
                        cs[2].extend_from_slice(&siii);
                    }
                }
                if let (Some(mu), true) = (mu, k < grid.steps()) {
                    let cbar = averaged_drift(model, mu, x);
                    (model.c)(x, y, &mut c);
                    (model.sigma)(y, &mut sig);
                    let next = xbar.at(k + 1);
                    let dw = noise.fbm_increment(k);
                    for i in 0..d {
                        si[i] += (cbar[i] * h - (next[i] - xb[i])) * inv;
                        sii[i] += (c[i] - cbar[i]) * h * inv;
                        siii[i] += (0..d).map(|j| sig[i * d + j] * dw[j]).sum::<f64>();
                    }
                }
            })?;
            Ok((theta, comps))
        })
        .collect::<Result<_>>()?;

    let mut theta = Vec::with_capacity(settings.n_paths * n_rec * d);
    let mut parts = mu.map(|_| Components {
        i: Vec::new(),
        ii: Vec::new(),
        iii: Vec::new(),
    });
    for (t, c) in per_path {
        theta.extend(t);
        if let (Some(parts), Some([a, b, e])) = (parts.as_mut(), c) {
            parts.i.extend(a);
            parts.ii.extend(b);
            parts.iii.extend(e);
        }
    }
    Ok(FluctuationEnsemble {
        scales: Some(*scales),
        grid,
        record_every: every,
        dim: d,
        n_paths: settings.n_paths,
        theta,
        components: parts,
    })
}

/// Per-path sums `∑_k (sigma(Y_k) - shift) ΔW^H_k` over the whole grid of
/// `source`, one vector of length `dim_x` per path. With `shift = None` this
/// is the discrete noise integral of the slow equation; with `shift = σ̄` it
/// is the remainder that vanishes as `η → 0`.
pub fn noise_sums(
    model: &ModelSpec,
    scales: &ScaleParams,
    source: &NoiseSource,
    n_paths: usize,
    shift: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>> {
    let d = model.dim_x;
    if shift.is_some_and(|s| s.len() != d * d) {
        return Err(Error::domain("shift must be a dim_x by dim_x matrix"));
    }
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let noise = source.bundle(p);
            let steps = noise.grid().steps();
            let mut acc = vec![0.0; d];
            let mut sig = vec![0.0; d * d];
            crate::sde::simulate_observed(
                model,
                scales,
                steps,
                noise.grid().horizon(),
                &noise,
                |k, _, y| {
                    if k == steps {
                        return;
                    }
                    (model.sigma)(y, &mut sig);
                    if let Some(s) = shift {
                        sig.iter_mut().zip(s).for_each(|(a, b)| *a -= b);
                    }
                    let dw = noise.fbm_increment(k);
                    for i in 0..d {
                        acc[i] += (0..d).map(|j| sig[i * d + j] * dw[j]).sum::<f64>();
                    }
                },
            )?;
            Ok(acc)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// limit coefficient

/// Symmetric PSD square root; eigenvalues below `-1e-10` are an error and
/// smaller negative ones are clipped.
pub fn psd_sqrt(a: &[f64], dim: usize) -> Result<Vec<f64>> {
    if a.len() != dim * dim {
        return Err(Error::domain("matrix has the wrong size"));
    }
    let m = DMatrix::from_row_slice(dim, dim, a);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if let Some(v) = eig.eigenvalues.iter().find(|v| **v < -1e-10) {
        return Err(Error::numerical(format!(
            "matrix is not positive semidefinite: eigenvalue {v}"
        )));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
    Ok((0..dim * dim).map(|k| r[(k / dim, k % dim)]).collect())
}

/// `∫ (∇_yΦ tau)(∇_yΦ tau)^T dμ̂` at one slow point, from the correctors of
/// the slow coordinates (one fast dimension).
pub fn corrector_outer_product(
    model: &ModelSpec,
    correctors: &[PoissonSolution],
    mu: &InvariantMeasureEstimate,
) -> Result<Vec<f64>> {
    let d = correctors.len();
    if model.dim_y != 1 || mu.dim() != 1 {
        return Err(Error::UnsupportedDimension {
            dim: model.dim_y,
            hint: "corrector gradients are tabulated for one fast dimension only",
        });
    }
    let mut out = vec![0.0; d * d];
    let mut v = vec![0.0; d];
    for (y, w) in mu.iter() {
        if w == 0.0 {
            continue;
        }
        let t = model.eval_tau(y)[0];
        for (vi, c) in v.iter_mut().zip(correctors) {
            *vi = c.derivative(y[0]) * t;
        }
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += w * v[i] * v[j];
            }
        }
    }
    Ok(out)
}

/// `Σ_Φ = (∫ (∇_yΦ tau)(∇_yΦ tau)^T dμ̂)^{1/2}` at one slow point.
pub fn sigma_phi_at(
    model: &ModelSpec,
    correctors: &[PoissonSolution],
    mu: &InvariantMeasureEstimate,
) -> Result<Vec<f64>> {
    psd_sqrt(
        &corrector_outer_product(model, correctors, mu)?,
        correctors.len(),
    )
}

/// Grid settings for the finite-difference correctors.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorGrid {
    /// `None` uses ten standard deviations of `μ̂`.
    pub domain: Option<(f64, f64)>,
    pub n_grid: usize,
}

impl Default for CorrectorGrid {
    fn default() -> Self {
        Self {
            domain: None,
            n_grid: 4001,
        }
    }
}

/// Correctors `Φ_i(x, ·)` solving `L Φ_i = -(c_i(x, ·) - c̄_i(x))`, one per
/// slow coordinate.
pub fn drift_correctors(
    model: &ModelSpec,
    mu: &InvariantMeasureEstimate,
    x: &[f64],
    grid: &CorrectorGrid,
) -> Result<Vec<PoissonSolution>> {
    let domain = grid.domain.unwrap_or_else(|| default_domain(mu));
    let cbar = averaged_drift(model, mu, x);
    (0..model.dim_x)
        .map(|i| {
            let rhs = |y: f64| model.eval_c(x, &[y])[i] - cbar[i];
            Ok(solve_poisson_fd(model, rhs, mu, domain, grid.n_grid)?.with_x_slice(x))
        })
        .collect()
}

/// `x ↦ Σ_Φ(x)` from a family of correctors.
pub fn sigma_phi<'a>(
    model: &'a ModelSpec,
    family: impl Fn(&[f64]) -> Result<Vec<PoissonSolution>> + 'a,
    mu: &'a InvariantMeasureEstimate,
) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a {
    move |x| sigma_phi_at(model, &family(x)?, mu)
}

/// Coefficients of the limiting mixed SDE
/// `dθ = J(s) θ ds + e(s) ds + λ Σ(s) dB̃ + σ̄ dW̃^H` on a grid. Matrices are
/// row-major, one per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLawSpec {
    pub grid: UniformGrid,
    pub dim: usize,
    pub drift_jacobian: Vec<f64>,
    pub sigma_phi: Vec<f64>,
    pub sigma_bar: Vec<f64>,
    /// Additional deterministic drift `e(s)`, one vector per grid point.
    pub extra_drift: Option<Vec<f64>>,
    pub lambda: f64,
    pub hurst: HurstParameter,
}

/// Central-difference Jacobian of `drift` at `x`, row-major.
pub(crate) fn numeric_jacobian(drift: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for j in 0..d {
        let step = 1e-5 * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let up = drift(&xp);
        xp[j] = x[j] - step;
        let down = drift(&xp);
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    jac
}

fn is_symmetric_psd(m: &[f64], dim: usize) -> bool {
    for i in 0..dim {
        for j in 0..i {
            let (a, b) = (m[i * dim + j], m[j * dim + i]);
            if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                return false;
            }
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, m));
    eig.eigenvalues.iter().all(|v| *v >= -1e-10)
}

impl LimitLawSpec {
    /// Time-constant coefficients.
    pub fn constant(
        grid: UniformGrid,
        drift_jacobian: &[f64],
        sigma_phi: &[f64],
        sigma_bar: &[f64],
        lambda: f64,
        hurst: HurstParameter,
    ) -> Result<Self> {
        let dim = (sigma_bar.len() as f64).sqrt() as usize;
        if dim * dim != sigma_bar.len()
            || drift_jacobian.len() != dim * dim
            || sigma_phi.len() != dim * dim
        {
            return Err(Error::domain(
                "limit-law coefficients must be square matrices of one size",
            ));
        }
        let n = grid.len();
        let spec = Self {
            grid,
            dim,
            drift_jacobian: drift_jacobian.repeat(n),
            sigma_phi: sigma_phi.repeat(n),
            sigma_bar: sigma_bar.to_vec(),
            extra_drift: None,
            lambda,
            hurst,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Coefficients of the fluctuation limit of `model` along `xbar`: the
    /// Jacobian of `c̄` by central differences, `σ̄ = ∫ sigma dμ̂`, and
    /// `Σ_Φ` from finite-difference correctors at `sigma_points` equally
    /// spaced times, linearly interpolated in between.
    pub fn for_model(
        model: &ModelSpec,
        mu: &InvariantMeasureEstimate,
        xbar: &LimitTrajectory,
        lambda: f64,
        correctors: &CorrectorGrid,
        sigma_points: usize,
    ) -> Result<Self> {
        let d = model.dim_x;
        let grid = xbar.grid;
        let cbar = |x: &[f64]| averaged_drift(model, mu, x);
        let mut jac = Vec::with_capacity(grid.len() * d * d);
        for k in 0..grid.len() {
            jac.extend(numeric_jacobian(cbar, xbar.at(k)));
        }
        let sigma_phi = if lambda == 0.0 {
            vec![0.0; grid.len() * d * d]
        } else {
            let family = |x: &[f64]| drift_correctors(model, mu, x, correctors);
            let at = sigma_phi(model, family, mu);
            interpolate_in_time(&grid, d * d, sigma_points, |k| at(xbar.at(k)))?
        };
        let spec = Self {
            grid,
            dim: d,
            drift_jacobian: jac,
            sigma_phi,
            sigma_bar: averaged_sigma(model, mu),
            extra_drift: None,
            lambda,
            hurst: model.hurst,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let dd = self.dim * self.dim;
        let n = self.grid.len();
        if self.drift_jacobian.len() != n * dd
            || self.sigma_phi.len() != n * dd
            || self.sigma_bar.len() != dd
        {
            return Err(Error::domain(
                "limit-law coefficient arrays do not match the grid",
            ));
        }
        if self
            .extra_drift
            .as_ref()
            .is_some_and(|e| e.len() != n * self.dim)
        {
            return Err(Error::domain("extra drift does not match the grid"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::domain("lambda must be nonnegative"));
        }
        for k in 0..n {
            if !is_symmetric_psd(&self.sigma_phi[k * dd..(k + 1) * dd], self.dim) {
                return Err(Error::numerical(format!(
                    "Σ_Φ is not symmetric PSD at grid point {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates `value(k)` at `points` equally spaced grid indices and
/// interpolates linearly to every grid point.
pub(crate) fn interpolate_in_time(
    grid: &UniformGrid,
    width: usize,
    points: usize,
    value: impl Fn(usize) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let n = grid.steps();
    let points = points.clamp(2, n + 1);
    let knots: Vec<usize> = (0..points)
        .map(|i| ((i as f64) * n as f64 / (points - 1) as f64).round() as usize)
        .collect();
    let vals: Vec<Vec<f64>> = knots.iter().map(|&k| value(k)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity((n + 1) * width);
    let mut seg = 0;
    for k in 0..=n {
        while seg + 2 < knots.len() && k > knots[seg + 1] {
            seg += 1;
        }
        let (a, b) = (knots[seg], knots[seg + 1]);
        let s = if b > a {
            (k as f64 - a as f64) / (b - a) as f64
        } else {
            0.0
        };
        out.extend(
            vals[seg]
                .iter()
                .zip(&vals[seg + 1])
                .map(|(u, v)| u * (1.0 - s) + v * s),
        );
    }
    Ok(out)
}

/// Euler scheme for the limiting mixed SDE on the grid of `law`, with the
/// fBm increments sampled exactly and a Brownian motion independent of them.
pub fn simulate_limit_theta(
    law: &LimitLawSpec,
    n_paths: usize,
    record_every: usize,
    seed: u64,
) -> Result<FluctuationEnsemble> {
    law.validate()?;
    let grid = law.grid;
    check_record(&grid, record_every)?;
    let d = law.dim;
    let dd = d * d;
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let n = grid.steps();
    let n_rec = n / record_every + 1;
    let sampler = FgnSampler::new(n, law.hurst, h)?;
    let seed = rng::derive_seed(seed, LIMIT_SEED_LABEL);

    let paths: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut fgn = vec![0.0; n * d];
            let mut comp = vec![0.0; n];
            for j in 0..d {
                let mut r = rng::stream(seed, p, rng::TAG_FBM_BASE + j as u64);
                sampler.sample_into(&mut r, &mut comp);
                for (k, v) in comp.iter().enumerate() {
                    fgn[k * d + j] = *v;
                }
            }
            let mut rb = rng::stream(seed, p, rng::TAG_LIMIT_BM);
            let mut theta = vec![0.0; d];
            let mut next = vec![0.0; d];
            let mut db = vec![0.0; d];
            let mut out = Vec::with_capacity(n_rec * d);
            for k in 0..n {
                if k % record_every == 0 {
                    out.extend_from_slice(&theta);
                }
                for v in db.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rb);
                    *v = z * sqrt_h;
                }
                let jac = &law.drift_jacobian[k * dd..(k + 1) * dd];
                let sp = &law.sigma_phi[k * dd..(k + 1) * dd];
                let dw = &fgn[k * d..(k + 1) * d];
                for i in 0..d {
                    let mut v = theta[i];
                    for j in 0..d {
                        v += jac[i * d + j] * theta[j] * h
                            + law.lambda * sp[i * d + j] * db[j]
                            + law.sigma_bar[i * d + j] * dw[j];
                    }
                    if let Some(e) = &law.extra_drift {
                        v += e[k * d + i] * h;
                    }
                    next[i] = v;
                }
                std::mem::swap(&mut theta, &mut next);
            }
            out.extend_from_slice(&theta);
            out
        })
        .collect();

    Ok(FluctuationEnsemble {
        scales: None,
        grid,
        record_every,
        dim: d,
        n_paths,
        theta: paths.concat(),
        components: None,
    })
}

// ---------------------------------------------------------------------------
// comparison

/// Pass thresholds of [`compare_distributions`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonThresholds {
    /// Level of the KS critical value.
    pub ks_alpha: f64,
    /// Moment and covariance differences pass within this many pooled
    /// standard errors.
    pub moment_k: f64,
}

impl Default for ComparisonThresholds {
    fn default() -> Self {
        Self {
            ks_alpha: 0.01,
            moment_k: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalComparison {
    pub time: f64,
    pub coord: usize,
    pub ks: f64,
    pub ks_crit: f64,
    /// Differences of raw moments of orders `1..=K` with pooled standard
    /// errors.
    pub moment_diffs: Vec<stats::Estimate>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceComparison {
    pub times: (f64, f64),
    pub coord: usize,
    pub diff: stats::Estimate,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub marginals: Vec<MarginalComparison>,
    pub covariances: Vec<CovarianceComparison>,
    pub passed: bool,
}

impl ComparisonReport {
    pub fn ks_at(&self, time: f64, coord: usize) -> Option<f64> {
        self.marginals
            .iter()
            .find(|m| m.coord == coord && (m.time - time).abs() < 1e-9)
            .map(|m| m.ks)
    }

    /// CSV `time,coord,ks,ks_crit,mom1_diff,...` followed by a
    /// `verdict,pass|fail` line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let k = self.marginals.first().map_or(0, |m| m.moment_diffs.len());
        let mut header = String::from("time,coord,ks,ks_crit");
        for o in 1..=k {
            header.push_str(&format!(",mom{o}_diff"));
        }
        writeln!(out, "{header}")?;
        for m in &self.marginals {
            let mut line = format!("{},{},{},{}", m.time, m.coord, m.ks, m.ks_crit);
            for d in &m.moment_diffs {
                line.push_str(&format!(",{}", d.value));
            }
            writeln!(out, "{line}")?;
        }
        writeln!(out, "verdict,{}", if self.passed { "pass" } else { "fail" })?;
        Ok(())
    }
}

fn mean_with_se(xs: &[f64]) -> stats::Estimate {
    stats::mean_estimate(xs)
}

fn diff(a: stats::Estimate, b: stats::Estimate) -> stats::Estimate {
    stats::Estimate {
        value: a.value - b.value,
        stderr: (a.stderr * a.stderr + b.stderr * b.stderr).sqrt(),
    }
}

/// Per-path products of centered values, whose mean is the covariance.
fn centered_products(u: &[f64], v: &[f64]) -> Vec<f64> {
    let (mu, mv) = (stats::mean(u), stats::mean(v));
    u.iter().zip(v).map(|(a, b)| (a - mu) * (b - mv)).collect()
}

/// Two-sample comparison of two ensembles at `times`: KS per coordinate,
/// raw-moment differences up to `moments_up_to`, and covariance differences
/// for every pair of requested times.
pub fn compare_distributions(
    a: &FluctuationEnsemble,
    b: &FluctuationEnsemble,
    times: &[f64],
    moments_up_to: usize,
    thresholds: &ComparisonThresholds,
) -> Result<ComparisonReport> {
    if a.n_paths < 100 || b.n_paths < 100 {
        return Err(Error::precondition(format!(
            "distribution comparison needs at least 100 paths per ensemble, got {} and {}",
            a.n_paths, b.n_paths
        )));
    }
    if a.dim != b.dim {
        return Err(Error::domain("ensembles have different dimensions"));
    }
    let mut recs = Vec::with_capacity(times.len());
    for &t in times {
        let (ra, rb) = (a.record_of(t), b.record_of(t));
        match (ra, rb) {
            (Some(ra), Some(rb)) => recs.push((t, ra, rb)),
            _ => {
                return Err(Error::precondition(format!(
                    "time {t} is not recorded in both ensembles"
                )))
            }
        }
    }
    let crit = stats::ks_critical(a.n_paths, b.n_paths, thresholds.ks_alpha);
    let mut marginals = Vec::new();
    for &(t, ra, rb) in &recs {
        for coord in 0..a.dim {
            let (xa, xb) = (a.marginal(ra, coord), b.marginal(rb, coord));
            let ks = stats::ks_statistic(&xa, &xb)?;
            let moment_diffs: Vec<stats::Estimate> = (1..=moments_up_to as i32)
                .map(|o| {
                    let pa: Vec<f64> = xa.iter().map(|v| v.powi(o)).collect();
                    let pb: Vec<f64> = xb.iter().map(|v| v.powi(o)).collect();
                    diff(mean_with_se(&pa), mean_with_se(&pb))
                })
                .collect();
            let passed = ks <= crit
                && moment_diffs
                    .iter()
                    .all(|d| d.agrees_with(0.0, thresholds.moment_k, 0.0));
            marginals.push(MarginalComparison {
                time: t,
                coord,
                ks,
                ks_crit: crit,
                moment_diffs,
                passed,
            });
        }
    }
    let mut covariances = Vec::new();
    for (i, &(t1, ra1, rb1)) in recs.iter().enumerate() {
        for &(t2, ra2, rb2) in &recs[i + 1..] {
            for coord in 0..a.dim {
                let ca = centered_products(&a.marginal(ra1, coord), &a.marginal(ra2, coord));
                let cb = centered_products(&b.marginal(rb1, coord), &b.marginal(rb2, coord));
                let d = diff(mean_with_se(&ca), mean_with_se(&cb));
                covariances.push(CovarianceComparison {
                    times: (t1, t2),
                    coord,
                    diff: d,
                    passed: d.agrees_with(0.0, thresholds.moment_k, 0.0),
                });
            }
        }
    }
    let passed = marginals.iter().all(|m| m.passed) && covariances.iter().all(|c| c.passed);
    Ok(ComparisonReport {
        marginals,
        covariances,
        passed,
    })
}

/// Builds an ensemble from given values at given record times, for
/// comparisons of data that did not come from a simulation.
pub fn ensemble_from_marginals(
    grid: UniformGrid,
    record_every: usize,
    dim: usize,
    theta: Vec<f64>,
) -> Result<FluctuationEnsemble> {
    check_record(&grid, record_every)?;
    let per_path = (grid.steps() / record_every + 1) * dim;
    if theta.is_empty() || !theta.len().is_multiple_of(per_path) {
        return Err(Error::domain("values do not split into whole paths"));
    }
    Ok(FluctuationEnsemble {
        scales: None,
        grid,
        record_every,
        dim,
        n_paths: theta.len() / per_path,
        theta,
        components: None,
    })
}

/// Shared handle used by pipelines that reuse a limit law across levels.
pub type SharedLaw = Arc<LimitLawSpec>;
