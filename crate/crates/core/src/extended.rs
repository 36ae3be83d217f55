//! The extended system with a singular term `sqrt(ε/η) b(x, y)` in the slow
//! drift and `g(y) / sqrt(ε η)` in the fast drift, in the homogenization
//! regime (`sqrt(η/ε) → 0`) and the averaging regime (`sqrt(η/ε) → λ > 0`).

use std::fmt;
use std::sync::Arc;

use crate::averaging::{
    averaged_drift, averaged_sigma, default_domain, reference_measure, solve_limit_ode,
    solve_poisson_fd, InvariantMeasureEstimate, LimitTrajectory, PoissonSolution,
};
use crate::error::{Error, Result};
use crate::fbm::NoiseBundle;
use crate::fluctuations::{
    interpolate_in_time, numeric_jacobian, sigma_phi_at, simulate_limit_theta, CorrectorGrid,
    FluctuationEnsemble, LimitLawSpec,
};
use crate::model::{ModelSpec, ScaleParams};
use crate::sde::{
    check_conditions, check_noise, record_path, ConditionVerdict, ExtendedTerms, SampleBox,
    SamplePath,
};
use crate::stats::Estimate;

/// Largest accepted `|sqrt(η/ε) - λ|` for a scale pair to count as a member
/// of a regime.
pub const REGIME_TOLERANCE: f64 = 0.5;
/// Radius of the `λ` neighborhood on which the fast recurrence is probed.
pub const LAMBDA_NEIGHBORHOOD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `λ = 0`.
    Homogenization,
    /// `λ > 0`.
    Averaging,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Homogenization => "homogenization",
            Regime::Averaging => "averaging",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSpec {
    regime: Regime,
    lambda: f64,
    kappa: f64,
}

impl RegimeSpec {
    pub fn homogenization(kappa: f64) -> Result<Self> {
        Self::new(0.0, kappa)
    }

    pub fn averaging(lambda: f64, kappa: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::domain(format!(
                "the averaging regime needs lambda > 0, got {lambda}"
            )));
        }
        Self::new(lambda, kappa)
    }

    /// The regime is determined by `lambda`.
    pub fn new(lambda: f64, kappa: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() || !kappa.is_finite() {
            return Err(Error::domain(format!(
                "invalid regime constants lambda = {lambda}, kappa = {kappa}"
            )));
        }
        let regime = if lambda == 0.0 {
            Regime::Homogenization
        } else {
            Regime::Averaging
        };
        Ok(Self {
            regime,
            lambda,
            kappa,
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `η = (λ + κ sqrt(ε))^2 ε`, so that `sqrt(η/ε) = λ + κ sqrt(ε)` and
    /// `ε^{-1/2}(sqrt(η/ε) - λ) = κ` exactly at each level.
    pub fn scales(&self, eps: f64) -> Result<ScaleParams> {
        let r = self.lambda + self.kappa * eps.sqrt();
        if !(r > 0.0) {
            return Err(Error::domain(format!(
                "lambda = {}, kappa = {} give a nonpositive eta at eps = {eps}",
                self.lambda, self.kappa
            )));
        }
        ScaleParams::with_regime(eps, r * r * eps, self.lambda, self.kappa)
    }

    pub fn ladder(&self, eps: &[f64]) -> Result<Vec<ScaleParams>> {
        eps.iter().map(|&e| self.scales(e)).collect()
    }

    /// Whether `sqrt(η/ε)` is within [`REGIME_TOLERANCE`] of `λ`.
    pub fn check_scales(&self, scales: &ScaleParams) -> Result<()> {
        if scales.is_formal() {
            return Err(Error::precondition("the extended model needs eps > 0"));
        }
        let ratio = (scales.eta / scales.eps).sqrt();
        if (ratio - self.lambda).abs() > REGIME_TOLERANCE {
            return Err(Error::precondition(format!(
                "sqrt(eta/eps) = {ratio} is inconsistent with the {} regime (lambda = {})",
                self.regime, self.lambda
            )));
        }
        Ok(())
    }
}

/// Recurrence verdicts of the limit fast dynamics `f + Λ g` for `Λ` at the
/// ends and center of `[max(0, λ - 0.1), λ + 0.1]`.
pub fn check_extended_recurrence(
    model: &ModelSpec,
    regime: &RegimeSpec,
    sample_box: &SampleBox,
    n_probe: usize,
) -> Vec<(f64, ConditionVerdict)> {
    let l = regime.lambda;
    let mut lambdas = vec![
        (l - LAMBDA_NEIGHBORHOOD).max(0.0),
        l,
        l + LAMBDA_NEIGHBORHOOD,
    ];
    lambdas.dedup();
    lambdas
        .into_iter()
        .map(|lam| {
            let report = check_conditions(&model.limit_fast_model(lam), sample_box, n_probe);
            let v = report
                .get("recurrence")
                .cloned()
                .expect("recurrence verdict is always present");
            (lam, v)
        })
        .collect()
}

/// Invariant-measure estimate of the limit fast dynamics `f + λ g`, after
/// probing recurrence on the `λ` neighborhood.
pub fn limit_measure(
    model: &ModelSpec,
    regime: &RegimeSpec,
    seed: u64,
) -> Result<InvariantMeasureEstimate> {
    let probe = SampleBox::symmetric(model.dim_x, 1.0, model.dim_y, 10.0);
    for (lam, v) in check_extended_recurrence(model, regime, &probe, 64) {
        if !v.passed {
            return Err(Error::precondition(format!(
                "recurrence of f + {lam} g fails: value {} at y = {:?}",
                v.worst, v.witness_y
            )));
        }
    }
    reference_measure(&model.limit_fast_model(regime.lambda), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenteringReport {
    /// `∫ b(x0, y) μ̂(dy)` per slow coordinate.
    pub values: Vec<Estimate>,
    pub passed: bool,
}

/// Checks `∫ b dμ̂ = 0` within four standard errors, with an absolute floor
/// of `1e-8 (1 + max |b|)` for quadrature measures. `b` is evaluated at the
/// model's `x0`; in the homogenization regime it may not depend on `x`.
pub fn check_centering(
    model: &ModelSpec,
    mu: &InvariantMeasureEstimate,
) -> Result<CenteringReport> {
    let b = model
        .b
        .as_ref()
        .ok_or_else(|| Error::domain("model has no b term"))?;
    let d = model.dim_x;
    let mut out = vec![0.0; d];
    let mut values = Vec::with_capacity(d);
    let mut passed = true;
    for i in 0..d {
        let mut top: f64 = 0.0;
        let e = mu.expect(|y| {
            b(&model.x0, y, &mut out);
            top = top.max(out[i].abs());
            out[i]
        });
        passed &= e.agrees_with(0.0, 4.0, 1e-8 * (1.0 + top));
        values.push(e);
    }
    Ok(CenteringReport { values, passed })
}

fn terms(scales: &ScaleParams) -> ExtendedTerms {
    ExtendedTerms {
        b_scale: (scales.eps / scales.eta).sqrt(),
        g_scale: 1.0 / (scales.eps * scales.eta).sqrt(),
    }
}

/// Euler scheme of the extended system. Without `b` and `g` this is
/// [`crate::sde::simulate_pair`] exactly.
pub fn simulate_extended(
    model: &ModelSpec,
    scales: &ScaleParams,
    regime: &RegimeSpec,
    n: usize,
    horizon: f64,
    noise: Arc<NoiseBundle>,
) -> Result<SamplePath> {
    regime.check_scales(scales)?;
    check_noise(model, scales, n, horizon, &noise)?;
    record_path(model, scales, noise, Some(&terms(scales)))
}

fn require_x_independent_b(model: &ModelSpec) -> Result<()> {
    let Some(b) = model.b.as_ref() else {
        return Ok(());
    };
    let d = model.dim_x;
    let (mut u, mut v) = (vec![0.0; d], vec![0.0; d]);
    for ys in [-1.5, -0.3, 0.0, 0.7, 2.0] {
        let y = vec![ys; model.dim_y];
        let x1: Vec<f64> = model.x0.iter().map(|x| x + 1.0).collect();
        b(&model.x0, &y, &mut u);
        b(&x1, &y, &mut v);
        if u.iter()
            .zip(&v)
            .any(|(a, c)| (a - c).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(Error::domain(
                "the homogenization regime needs b to depend on y only",
            ));
        }
    }
    Ok(())
}

/// Corrector `Ψ` with `L Ψ = -b` for the limit generator
/// `L = (f + λ g) ∂_y + tau^2 ∂_y^2 / 2`, one solution per slow coordinate,
/// centered under `mu`. Without `b` the correctors vanish.
pub fn solve_correction_psi(
    model: &ModelSpec,
    regime: &RegimeSpec,
    mu: &InvariantMeasureEstimate,
    grid: &CorrectorGrid,
) -> Result<Vec<PoissonSolution>> {
    if regime.regime() != Regime::Homogenization {
        return Err(Error::domain(
            "Ψ is the corrector of the homogenization regime",
        ));
    }
    let domain = grid.domain.unwrap_or_else(|| default_domain(mu));
    let Some(b) = model.b.as_ref() else {
        let (lo, hi) = domain;
        let ys = (0..grid.n_grid)
            .map(|i| lo + (hi - lo) * i as f64 / (grid.n_grid - 1) as f64)
            .collect();
        return Ok(vec![PoissonSolution::zero(ys); model.dim_x]);
    };
    require_x_independent_b(model)?;
    let report = check_centering(model, mu)?;
    if !report.passed {
        return Err(Error::precondition(format!(
            "b is not centered under the fast invariant measure: {:?}",
            report.values.iter().map(|e| e.value).collect::<Vec<_>>()
        )));
    }
    let fast = model.limit_fast_model(regime.lambda);
    (0..model.dim_x)
        .map(|i| {
            let rhs = |y: f64| {
                let mut o = vec![0.0; model.dim_x];
                b(&model.x0, &[y], &mut o);
                o[i]
            };
            solve_poisson_fd(&fast, rhs, mu, domain, grid.n_grid)
        })
        .collect()
}

/// `φ_1 = (∂_yΨ g) + c` in the homogenization regime (`psi` required) and
/// `φ_2 = b / λ + c` in the averaging regime.
pub fn effective_drift(
    model: &ModelSpec,
    regime: &RegimeSpec,
    psi: Option<&[PoissonSolution]>,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let mut out = model.eval_c(x, y);
    match regime.regime() {
        Regime::Homogenization => {
            let psi =
                psi.ok_or_else(|| Error::domain("the homogenization drift needs the corrector Ψ"))?;
            if let Some(g) = model.g.as_ref() {
                if model.dim_y != 1 || psi.len() != model.dim_x {
                    return Err(Error::UnsupportedDimension {
                        dim: model.dim_y,
                        hint: "Ψ is tabulated for one fast dimension only",
                    });
                }
                let mut gy = [0.0];
                g(y, &mut gy);
                for (o, p) in out.iter_mut().zip(psi) {
                    *o += p.derivative(y[0]) * gy[0];
                }
            }
        }
        Regime::Averaging => {
            if psi.is_some() {
                return Err(Error::domain("Ψ belongs to the homogenization regime"));
            }
            if let Some(b) = model.b.as_ref() {
                let mut bv = vec![0.0; model.dim_x];
                b(x, y, &mut bv);
                for (o, v) in out.iter_mut().zip(&bv) {
                    *o += v / regime.lambda;
                }
            }
        }
    }
    Ok(out)
}

/// `φ̄(x) = ∫ φ(x, y) μ̂(dy)`. Without `b` and `g` this is
/// [`averaged_drift`] exactly.
pub fn averaged_effective_drift(
    model: &ModelSpec,
    regime: &RegimeSpec,
    psi: Option<&[PoissonSolution]>,
    mu: &InvariantMeasureEstimate,
    x: &[f64],
) -> Result<Vec<f64>> {
    let trivial = match regime.regime() {
        Regime::Homogenization => model.g.is_none(),
        Regime::Averaging => model.b.is_none(),
    };
    if trivial {
        if regime.regime() == Regime::Homogenization && psi.is_none() {
            return Err(Error::domain(
                "the homogenization drift needs the corrector Ψ",
            ));
        }
        return Ok(averaged_drift(model, mu, x));
    }
    let mut out = vec![0.0; model.dim_x];
    for (y, w) in mu.iter() {
        if w == 0.0 {
            continue;
        }
        let v = effective_drift(model, regime, psi, x, y)?;
        for (o, t) in out.iter_mut().zip(&v) {
            *o += w * t;
        }
    }
    Ok(out)
}

/// RK4 solution of `X̄' = φ̄(X̄)` with step `h`.
pub fn limit_ode_extended(
    model: &ModelSpec,
    regime: &RegimeSpec,
    psi: Option<&[PoissonSolution]>,
    mu: &InvariantMeasureEstimate,
    x0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<LimitTrajectory> {
    // surface input errors before the solver swallows them
    averaged_effective_drift(model, regime, psi, mu, x0)?;
    let drift = |x: &[f64], out: &mut [f64]| {
        let v = averaged_effective_drift(model, regime, psi, mu, x)
            .unwrap_or_else(|_| vec![f64::NAN; x.len()]);
        out.copy_from_slice(&v);
    };
    solve_limit_ode(drift, x0, horizon, h)
}

/// Coefficients of the extended fluctuation limit along `xbar`.
///
/// Homogenization: `dθ = ∇φ̄_1 θ dt + κ (∂_yΦ_1 g)‾ dt + Σ_Ψ dB̃ + σ̄ dW̃^H`.
/// Averaging: `dθ = ∇φ̄_2 θ dt + κ (∂_yΦ_2 g)‾ dt - (κ/λ²) b̄ dt
/// + λ Σ_{Φ_2} dB̃ + σ̄ dW̃^H`. `Φ_*` solves `L Φ_* = -(φ_* - φ̄_*)`.
pub fn limit_law_extended(
    model: &ModelSpec,
    regime: &RegimeSpec,
    mu: &InvariantMeasureEstimate,
    xbar: &LimitTrajectory,
    correctors: &CorrectorGrid,
    sigma_points: usize,
) -> Result<LimitLawSpec> {
    let d = model.dim_x;
    let grid = xbar.grid;
    let kappa = regime.kappa;
    let psi = match regime.regime() {
        Regime::Homogenization => Some(solve_correction_psi(model, regime, mu, correctors)?),
        Regime::Averaging => None,
    };
    let psi = psi.as_deref();
    let phibar = |x: &[f64]| {
        averaged_effective_drift(model, regime, psi, mu, x).unwrap_or_else(|_| vec![f64::NAN; d])
    };
    let mut jac = Vec::with_capacity(grid.len() * d * d);
    for k in 0..grid.len() {
        jac.extend(numeric_jacobian(phibar, xbar.at(k)));
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "Jacobian of the effective drift is not finite",
        ));
    }

    let fast = model.limit_fast_model(regime.lambda);
    let domain = correctors.domain.unwrap_or_else(|| default_domain(mu));
    // Φ_* at slow point x, one per coordinate
    let phi_star = |x: &[f64]| -> Result<Vec<PoissonSolution>> {
        let bar = averaged_effective_drift(model, regime, psi, mu, x)?;
        (0..d)
            .map(|i| {
                let rhs = |y: f64| {
                    effective_drift(model, regime, psi, x, &[y]).map_or(f64::NAN, |v| v[i]) - bar[i]
                };
                Ok(solve_poisson_fd(&fast, rhs, mu, domain, correctors.n_grid)?.with_x_slice(x))
            })
            .collect()
    };

    let (sigma, lambda) = match regime.regime() {
        Regime::Homogenization => {
            let s = sigma_phi_at(model, psi.expect("Ψ is solved in this regime"), mu)?;
            (s.repeat(grid.len()), 1.0)
        }
        Regime::Averaging => {
            let s = interpolate_in_time(&grid, d * d, sigma_points, |k| {
                sigma_phi_at(model, &phi_star(xbar.at(k))?, mu)
            })?;
            (s, regime.lambda)
        }
    };

    let extra = if kappa == 0.0 {
        None
    } else {
        let g = model.g.clone();
        let bbar = |x: &[f64]| -> Vec<f64> {
            let mut acc = vec![0.0; d];
            if let Some(b) = model.b.as_ref() {
                let mut v = vec![0.0; d];
                for (y, w) in mu.iter() {
                    b(x, y, &mut v);
                    acc.iter_mut().zip(&v).for_each(|(a, t)| *a += w * t);
                }
            }
            acc
        };
        let e = interpolate_in_time(&grid, d, sigma_points, |k| {
            let x = xbar.at(k);
            let mut out = vec![0.0; d];
            if let Some(g) = g.as_ref() {
                let phis = phi_star(x)?;
                let mut gy = [0.0];
                for (y, w) in mu.iter() {
                    g(y, &mut gy);
                    for (o, p) in out.iter_mut().zip(&phis) {
                        *o += w * p.derivative(y[0]) * gy[0];
                    }
                }
            }
            for o in out.iter_mut() {
                *o *= kappa;
            }
            if regime.regime() == Regime::Averaging {
                let bb = bbar(x);
                let l2 = regime.lambda * regime.lambda;
                out.iter_mut()
                    .zip(&bb)
                    .for_each(|(o, b)| *o -= kappa / l2 * b);
            }
            Ok(out)
        })?;
        Some(e)
    };

    let spec = LimitLawSpec {
        grid,
        dim: d,
        drift_jacobian: jac,
        sigma_phi: sigma,
        sigma_bar: averaged_sigma(model, mu),
        extra_drift: extra,
        lambda,
        hurst: model.hurst,
    };
    spec.validate()?;
    Ok(spec)
}

/// Ensemble of the extended fluctuation limit; see [`limit_law_extended`].
#[allow(clippy::too_many_arguments)]
pub fn limit_theta_extended(
    model: &ModelSpec,
    regime: &RegimeSpec,
    mu: &InvariantMeasureEstimate,
    xbar: &LimitTrajectory,
    correctors: &CorrectorGrid,
    n_paths: usize,
    record_every: usize,
    seed: u64,
) -> Result<FluctuationEnsemble> {
    let law = limit_law_extended(model, regime, mu, xbar, correctors, 9)?;
    simulate_limit_theta(&law, n_paths, record_every, seed)
}

/// Per-path `sqrt(ε/η) ∫ b(Y) ds - ∫ (∂_yΨ g)(Y) ds` over the slow grid of
/// `noise`, whose mean vanishes as the scales shrink in the homogenization
/// regime.
pub fn singular_term_gap(
    model: &ModelSpec,
    scales: &ScaleParams,
    psi: &[PoissonSolution],
    noise: &NoiseBundle,
) -> Result<Vec<f64>> {
    let (b, g) = match (model.b.as_ref(), model.g.as_ref()) {
        (Some(b), Some(g)) => (b, g),
        _ => {
            return Err(Error::domain(
                "the singular-term representation needs b and g",
            ))
        }
    };
    if model.dim_y != 1 || psi.len() != model.dim_x {
        return Err(Error::UnsupportedDimension {
            dim: model.dim_y,
            hint: "Ψ is tabulated for one fast dimension only",
        });
    }
    let grid = *noise.grid();
    check_noise(model, scales, grid.steps(), grid.horizon(), noise)?;
    let t = terms(scales);
    let h = grid.step();
    let d = model.dim_x;
    let mut acc = vec![0.0; d];
    let mut bv = vec![0.0; d];
    let mut gy = [0.0];
    crate::sde::integrate(model, scales, noise, Some(&t), |k, x, y| {
        if k == grid.steps() {
            return;
        }
        b(x, y, &mut bv);
        g(y, &mut gy);
        for i in 0..d {
            acc[i] += (t.b_scale * bv[i] - psi[i].derivative(y[0]) * gy[0]) * h;
        }
    })?;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::from_stationary_density;
    use crate::fbm::NoiseSource;
    use crate::grid::UniformGrid;
    use crate::sde::{fast_substeps, simulate_pair};

    fn ext() -> (ModelSpec, InvariantMeasureEstimate) {
        let m = ModelSpec::registry("ou-quadratic-extended").unwrap();
        let mu = from_stationary_density(&m.limit_fast_model(0.0), (-7.0, 7.0), 4001).unwrap();
        (m, mu)
    }

    fn fd() -> CorrectorGrid {
        CorrectorGrid {
            domain: Some((-7.0, 7.0)),
            n_grid: 4001,
        }
    }

    #[test]
    fn centering() {
        let (m, mu) = ext();
        let r = check_centering(&m, &mu).unwrap();
        assert!(r.passed && r.values[0].value.abs() < 1e-12);
        let sq = ModelSpec {
            b: Some(Arc::new(|_, y, o| o[0] = y[0] * y[0])),
            ..m.clone()
        };
        let r = check_centering(&sq, &mu).unwrap();
        assert!(!r.passed && (r.values[0].value - 0.5).abs() < 1e-6);
        let zero = ModelSpec {
            b: Some(Arc::new(|_, _, o| o[0] = 0.0)),
            ..m.clone()
        };
        assert_eq!(check_centering(&zero, &mu).unwrap().values[0].value, 0.0);
        assert!(check_centering(&m.base(), &mu).is_err());
    }

    #[test]
    fn psi_for_linear_b() {
        let (m, mu) = ext();
        let reg = RegimeSpec::homogenization(1.0).unwrap();
        let psi = solve_correction_psi(&m, &reg, &mu, &fd()).unwrap();
        for y in [-4.0, -1.0, 0.0, 0.5, 3.0] {
            assert!((psi[0].value(y) - y).abs() < 1e-6, "{y}");
            assert!((psi[0].derivative(y) - 1.0).abs() < 1e-9);
        }
        let s = sigma_phi_at(&m, &psi, &mu).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-3);
        let none = solve_correction_psi(&m.base(), &reg, &mu, &fd()).unwrap();
        assert_eq!(none[0].sup_norm(), 0.0);
        let avg = RegimeSpec::averaging(1.0, 0.0).unwrap();
        assert!(solve_correction_psi(&m, &avg, &mu, &fd()).is_err());
    }

    #[test]
    fn effective_drifts() {
        let (m, mu) = ext();
        let reg = RegimeSpec::homogenization(0.0).unwrap();
        let psi = solve_correction_psi(&m, &reg, &mu, &fd()).unwrap();
        let v = effective_drift(&m, &reg, Some(&psi), &[0.4], &[1.5]).unwrap();
        assert!((v[0] - (-1.5 - 0.4 + 2.25)).abs() < 1e-9);
        let bar = averaged_effective_drift(&m, &reg, Some(&psi), &mu, &[0.4]).unwrap();
        assert!((bar[0] - (-0.4 + 0.5)).abs() < 1e-6);
        let avg = RegimeSpec::averaging(2.0, 0.0).unwrap();
        let v2 = effective_drift(&m, &avg, None, &[0.4], &[1.5]).unwrap();
        assert!((v2[0] - (1.5 / 2.0 - 0.4 + 2.25)).abs() < 1e-12);
        assert_eq!(
            effective_drift(&m.base(), &avg, None, &[0.4], &[1.5]).unwrap(),
            m.eval_c(&[0.4], &[1.5])
        );
        assert!(RegimeSpec::averaging(0.0, 0.0).is_err());
        assert!(effective_drift(&m, &reg, None, &[0.4], &[1.5]).is_err());
    }

    #[test]
    fn limit_ode_regime_one() {
        let (m, mu) = ext();
        let reg = RegimeSpec::homogenization(0.0).unwrap();
        let psi = solve_correction_psi(&m, &reg, &mu, &fd()).unwrap();
        let tr = limit_ode_extended(&m, &reg, Some(&psi), &mu, &[1.0], 1.0, 1e-3).unwrap();
        for k in (0..=1000).step_by(100) {
            let t = tr.grid.time(k);
            assert!((tr.at(k)[0] - (0.5 + 0.5 * (-t).exp())).abs() < 1e-6);
        }
    }

    #[test]
    fn reduction_is_bitwise() {
        let m = ModelSpec::registry("ou-quadratic").unwrap();
        let reg = RegimeSpec::averaging(1.0, 0.0).unwrap();
        let scales = reg.scales(0.01).unwrap();
        let grid = UniformGrid::new(128, 1.0).unwrap();
        let src = NoiseSource::new(
            grid,
            m.hurst,
            1,
            1,
            fast_substeps(grid.step(), scales.eta),
            3,
        )
        .unwrap();
        let noise = Arc::new(src.bundle(0));
        let a = simulate_pair(&m, &scales, 128, 1.0, noise.clone()).unwrap();
        let b = simulate_extended(&m, &scales, &reg, 128, 1.0, noise).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn ladder_holds_kappa() {
        let reg = RegimeSpec::averaging(1.5, 0.7).unwrap();
        for e in [0.1, 0.01, 0.001] {
            let s = reg.scales(e).unwrap();
            let k = ((s.eta / s.eps).sqrt() - 1.5) / e.sqrt();
            assert!((k - 0.7).abs() < 1e-9);
            assert!(reg.check_scales(&s).is_ok());
        }
        assert!(RegimeSpec::homogenization(0.0)
            .unwrap()
            .scales(0.1)
            .is_err());
        let far = ScaleParams::new(0.01, 0.09).unwrap();
        assert!(RegimeSpec::homogenization(1.0)
            .unwrap()
            .check_scales(&far)
            .is_err());
    }

    #[test]
    fn recurrence_probe_covers_neighborhood() {
        let (m, _) = ext();
        let probe = SampleBox::symmetric(1, 1.0, 1, 10.0);
        let v =
            check_extended_recurrence(&m, &RegimeSpec::averaging(0.5, 0.0).unwrap(), &probe, 16);
        assert_eq!(
            v.iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![0.4, 0.5, 0.6]
        );
        assert!(v.iter().all(|p| p.1.passed));
        let v0 =
            check_extended_recurrence(&m, &RegimeSpec::homogenization(0.0).unwrap(), &probe, 16);
        assert_eq!(v0.len(), 2);
    }
}
