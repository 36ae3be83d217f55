//! Two-scale Euler integrator, condition probes and the Itô-formula and
//! exponential-moment diagnostics.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbm::{unit_fgn_acov, NoiseBundle, NoiseSource, SeedRecord};
use crate::grid::UniformGrid;
use crate::model::{ModelSpec, ScaleParams};
use crate::rng;
use crate::stats::{self, Estimate};

/// Fast substeps per fast relaxation time.
pub const SUBSTEPS_PER_RELAXATION: f64 = 50.0;
pub const MAX_SUBSTEPS: usize = 1_000_000;
/// States beyond this magnitude abort the path.
pub const OVERFLOW_LIMIT: f64 = 1e12;

/// `ceil(50 h / eta)`, at least 1 and at most [`MAX_SUBSTEPS`].
pub fn fast_substeps(h: f64, eta: f64) -> usize {
    let n = (SUBSTEPS_PER_RELAXATION * h / eta).ceil();
    if n.is_nan() || n < 1.0 {
        1
    } else if n > MAX_SUBSTEPS as f64 {
        MAX_SUBSTEPS
    } else {
        n as usize
    }
}

/// Substeps for fluctuation ensembles. The invariant law of the fast Euler
/// chain is off by `O(δ / η)` and the rescaling by `ε^{-1/2}` magnifies that
/// into a drift of the fluctuations, so the fast step also shrinks with `√ε`.
pub fn fluctuation_substeps(h: f64, eta: f64, eps: f64) -> usize {
    fast_substeps(h, eta * eps.sqrt().min(1.0))
}

/// [`fast_substeps`] rounded up to a power of two, so that fast grids of
/// different levels nest and can share Brownian increments.
pub fn nested_substeps(h: f64, eta: f64) -> usize {
    fast_substeps(h, eta)
        .next_power_of_two()
        .min(MAX_SUBSTEPS.next_power_of_two())
}

// ---------------------------------------------------------------------------
// condition probes

/// Axis-aligned box of probe points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
}

impl SampleBox {
    pub fn symmetric(dim_x: usize, x_radius: f64, dim_y: usize, y_radius: f64) -> Self {
        Self {
            x: vec![(-x_radius, x_radius); dim_x],
            y: vec![(-y_radius, y_radius); dim_y],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVerdict {
    pub name: &'static str,
    pub passed: bool,
    /// Worst value of the probed quantity (see `detail`).
    pub worst: f64,
    pub witness_x: Vec<f64>,
    pub witness_y: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub verdicts: Vec<ConditionVerdict>,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionVerdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.verdicts {
            writeln!(
                f,
                "{:<22} {}  worst={:e}  x={:?}  y={:?}  {}",
                v.name,
                if v.passed { "PASS" } else { "FAIL" },
                v.worst,
                v.witness_x,
                v.witness_y,
                v.detail
            )?;
        }
        Ok(())
    }
}

struct Tracker {
    worst: f64,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Tracker {
    fn new(init: f64) -> Self {
        Self {
            worst: init,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    fn max(&mut self, v: f64, x: &[f64], y: &[f64]) {
        if v > self.worst || v.is_nan() {
            self.worst = v;
            self.x = x.to_vec();
            self.y = y.to_vec();
        }
    }

    fn min(&mut self, v: f64, x: &[f64], y: &[f64]) {
        if v < self.worst || v.is_nan() {
            self.worst = v;
            self.x = x.to_vec();
            self.y = y.to_vec();
        }
    }

    fn verdict(self, name: &'static str, passed: bool, detail: String) -> ConditionVerdict {
        ConditionVerdict {
            name,
            passed,
            worst: self.worst,
            witness_x: self.x,
            witness_y: self.y,
            detail,
        }
    }
}

fn min_eigenvalue_gram(a: &[f64], n: usize) -> f64 {
    let m = DMatrix::from_row_slice(n, n, a);
    let gram = &m * m.transpose();
    SymmetricEigen::new(gram).eigenvalues.min()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Eigenvalue floor below which `sigma sigma^T` or `tau tau^T` count as
/// degenerate.
pub const NONDEGENERACY_FLOOR: f64 = 1e-10;

/// Probes the growth, nondegeneracy and recurrence conditions with the
/// constants declared in `model.growth`. Interior checks use `n_probe`
/// uniform points in the box; the recurrence inequality is checked on
/// `n_probe` points of the outer `y` shell.
pub fn check_conditions(
    model: &ModelSpec,
    sample_box: &SampleBox,
    n_probe: usize,
) -> ConditionReport {
    let g = &model.growth;
    let (mx, dy) = (model.dim_x, model.dim_y);
    let mut rng = rng::stream(0x5eed_c0de, 0, rng::TAG_AUX);
    let finite = sample_box
        .x
        .iter()
        .chain(&sample_box.y)
        .all(|(a, b)| a.is_finite() && b.is_finite() && a <= b);
    if !finite || sample_box.x.len() != mx || sample_box.y.len() != dy {
        return ConditionReport {
            verdicts: vec![ConditionVerdict {
                name: "sample-box",
                passed: false,
                worst: f64::NAN,
                witness_x: vec![],
                witness_y: vec![],
                detail: "box must be finite, ordered and match the model dimensions".into(),
            }],
        };
    }
    let draw = |rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]| -> Vec<f64> {
        bounds
            .iter()
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect()
    };

    let mut growth = Tracker::new(f64::NEG_INFINITY);
    let mut sig = Tracker::new(f64::INFINITY);
    let mut tau_lo = Tracker::new(f64::INFINITY);
    let mut tau_hi = Tracker::new(f64::NEG_INFINITY);
    let mut c = vec![0.0; mx];
    let mut s = vec![0.0; mx * mx];
    let mut t = vec![0.0; dy * dy];
    for _ in 0..n_probe {
        let x = draw(&mut rng, &sample_box.x);
        let y = draw(&mut rng, &sample_box.y);
        (model.c)(&x, &y, &mut c);
        let bound = g.k * (1.0 + norm(&x).powf(g.r)) * (1.0 + norm(&y).powf(g.q));
        growth.max(norm(&c) / bound, &x, &y);
        (model.sigma)(&y, &mut s);
        sig.min(min_eigenvalue_gram(&s, mx), &x, &y);
        (model.tau)(&y, &mut t);
        tau_lo.min(min_eigenvalue_gram(&t, dy), &x, &y);
        tau_hi.max(t.iter().map(|v| v * v).sum::<f64>(), &x, &y);
    }

    // outer shell in y: one coordinate pinned to a face
    let tau_sup = g.tau_sup_sq.max(tau_hi.worst);
    let mut rec = Tracker::new(f64::NEG_INFINITY);
    let mut grad = Tracker::new(f64::NEG_INFINITY);
    let mut fy = vec![0.0; dy];
    for i in 0..n_probe {
        let x = draw(&mut rng, &sample_box.x);
        let mut y = draw(&mut rng, &sample_box.y);
        let face = i % dy;
        y[face] = if (i / dy) % 2 == 0 {
            sample_box.y[face].0
        } else {
            sample_box.y[face].1
        };
        (model.f)(&y, &mut fy);
        let ny = norm(&y);
        let dot: f64 = y.iter().zip(&fy).map(|(a, b)| a * b).sum();
        let val = dot + g.alpha * ny.powf(g.beta) + 0.5 * (g.beta - 2.0 + dy as f64) * tau_sup;
        rec.max(val, &x, &y);
        if let Some(gamma) = g.gamma {
            let jac = jacobian_x(model, &x, &y);
            let op = DMatrix::from_row_slice(mx, mx, &jac)
                .singular_values()
                .max();
            grad.max(op - gamma * ny.powf(g.beta), &x, &y);
        }
    }

    let mut verdicts = vec![
        growth.verdict(
            "growth",
            false,
            format!("max |c| / (K(1+|x|^r)(1+|y|^q)) with K={}, r={}, q={}", g.k, g.r, g.q),
        ),
        ConditionVerdict {
            name: "growth-exponent",
            passed: (0.0..1.0).contains(&g.r),
            worst: g.r,
            witness_x: vec![],
            witness_y: vec![],
            detail: "declared r must lie in [0, 1)".into(),
        },
        sig.verdict("sigma-nondegenerate", false, "min eigenvalue of sigma sigma^T".into()),
        tau_lo.verdict("tau-nondegenerate", false, "min eigenvalue of tau tau^T".into()),
        tau_hi.verdict("tau-bounded", false, format!("max |tau|^2, declared sup {}", g.tau_sup_sq)),
        rec.verdict(
            "recurrence",
            false,
            format!(
                "max of y.f(y) + alpha|y|^beta + (beta-2+d-m) sup|tau|^2 / 2 on the outer shell, alpha={}, beta={}",
                g.alpha, g.beta
            ),
        ),
    ];
    verdicts[0].passed = verdicts[0].worst <= 1.0;
    verdicts[2].passed = verdicts[2].worst > NONDEGENERACY_FLOOR;
    verdicts[3].passed = verdicts[3].worst > NONDEGENERACY_FLOOR;
    verdicts[4].passed = verdicts[4].worst <= g.tau_sup_sq * (1.0 + 1e-12);
    verdicts[5].passed = verdicts[5].worst <= 0.0;
    if g.gamma.is_some() {
        let mut v = grad.verdict(
            "gradient-growth",
            false,
            "max of ||grad_x c|| - gamma |y|^beta on the outer shell".into(),
        );
        v.passed = v.worst <= 0.0;
        verdicts.push(v);
    }
    ConditionReport { verdicts }
}

/// Central-difference Jacobian of `c` in `x`, row-major `dim_x x dim_x`.
pub(crate) fn jacobian_x(model: &ModelSpec, x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = model.dim_x;
    let mut jac = vec![0.0; m * m];
    let mut xp = x.to_vec();
    let mut cp = vec![0.0; m];
    let mut cm = vec![0.0; m];
    for j in 0..m {
        let step = 1e-5 * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        (model.c)(&xp, y, &mut cp);
        xp[j] = x[j] - step;
        (model.c)(&xp, y, &mut cm);
        xp[j] = x[j];
        for i in 0..m {
            jac[i * m + j] = (cp[i] - cm[i]) / (2.0 * step);
        }
    }
    jac
}

// ---------------------------------------------------------------------------
// paths

/// One trajectory of `(X, Y)` on the slow grid, row-major in time.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub grid: UniformGrid,
    pub dim_x: usize,
    pub dim_y: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub noise: Arc<NoiseBundle>,
}

impl SamplePath {
    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim_x..(k + 1) * self.dim_x]
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.dim_y..(k + 1) * self.dim_y]
    }

    pub fn terminal_x(&self) -> &[f64] {
        self.x_at(self.grid.steps())
    }

    /// CSV `t,x1..xm,y1..yd`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.dim_x {
            header.push_str(&format!(",x{i}"));
        }
        for i in 1..=self.dim_y {
            header.push_str(&format!(",y{i}"));
        }
        writeln!(out, "{header}")?;
        for k in 0..self.grid.len() {
            let mut line = format!("{}", self.grid.time(k));
            for v in self.x_at(k).iter().chain(self.y_at(k)) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Replicas sharing a model, scales and grid.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub grid: UniformGrid,
    pub paths: Vec<SamplePath>,
    pub seeds: Vec<SeedRecord>,
}

/// Extra drift terms of the extended model.
#[derive(Clone)]
pub(crate) struct ExtendedTerms {
    /// `sqrt(eps / eta)`, multiplies `b`.
    pub b_scale: f64,
    /// `1 / sqrt(eps eta)`, multiplies `g`.
    pub g_scale: f64,
}

fn guard(step: usize, vals: &[f64], what: &str) -> Result<()> {
    if vals
        .iter()
        .any(|v| !v.is_finite() || v.abs() > OVERFLOW_LIMIT)
    {
        return Err(Error::Simulation {
            step,
            detail: format!("{what} left the finite range: {vals:?}"),
        });
    }
    Ok(())
}

pub(crate) fn check_noise(
    model: &ModelSpec,
    scales: &ScaleParams,
    n: usize,
    horizon: f64,
    noise: &NoiseBundle,
) -> Result<()> {
    let grid = noise.grid();
    if grid.steps() != n || (grid.horizon() - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
        return Err(Error::domain(format!(
            "noise grid ({} steps over {}) does not match the slow grid ({n} steps over {horizon})",
            grid.steps(),
            grid.horizon()
        )));
    }
    if noise.dim_fbm() != model.dim_x || noise.dim_bm() != model.dim_y {
        return Err(Error::domain("noise dimensions do not match the model"));
    }
    let need = fast_substeps(grid.step(), scales.eta);
    if noise.substeps() < need {
        return Err(Error::precondition(format!(
            "noise has {} fast substeps per slow step, eta = {} needs at least {need}",
            noise.substeps(),
            scales.eta
        )));
    }
    Ok(())
}

/// Runs the Euler scheme and reports the state at every slow grid point to
/// `observe(k, x_k, y_k)`. The fBm increment of step `k` multiplies
/// `sigma(y_k)`; the fast variable takes `noise.substeps()` Euler–Maruyama
/// steps per slow step.
pub(crate) fn integrate(
    model: &ModelSpec,
    scales: &ScaleParams,
    noise: &NoiseBundle,
    ext: Option<&ExtendedTerms>,
    mut observe: impl FnMut(usize, &[f64], &[f64]),
) -> Result<()> {
    let (mx, dy) = (model.dim_x, model.dim_y);
    let grid = noise.grid();
    let h = grid.step();
    let n_sub = noise.substeps();
    let delta = noise.fast_step();
    let sqrt_eps = scales.eps.sqrt();
    let sqrt_eta = scales.eta.sqrt();
    let eta = scales.eta;

    let mut x = model.x0.clone();
    let mut y = model.y0.clone();
    let mut drift = vec![0.0; mx];
    let mut extra_x = vec![0.0; mx];
    let mut sig = vec![0.0; mx * mx];
    let mut fy = vec![0.0; dy];
    let mut gy = vec![0.0; dy];
    let mut ty = vec![0.0; dy * dy];
    let mut y_next = vec![0.0; dy];
    let b = ext.and(model.b.as_ref());
    let g = ext.and(model.g.as_ref());

    for k in 0..grid.steps() {
        observe(k, &x, &y);
        (model.c)(&x, &y, &mut drift);
        if let (Some(b), Some(e)) = (b, ext) {
            b(&x, &y, &mut extra_x);
            for (d, v) in drift.iter_mut().zip(&extra_x) {
                *d += e.b_scale * v;
            }
        }
        (model.sigma)(&y, &mut sig);
        let dw = noise.fbm_increment(k);
        for i in 0..mx {
            let mut noise_term = 0.0;
            for j in 0..mx {
                noise_term += sig[i * mx + j] * dw[j];
            }
            x[i] = x[i] + drift[i] * h + sqrt_eps * noise_term;
        }

        let db = noise.bm_increments(k);
        for s in 0..n_sub {
            (model.f)(&y, &mut fy);
            if let (Some(g), Some(e)) = (g, ext) {
                g(&y, &mut gy);
                for (a, v) in fy.iter_mut().zip(&gy) {
                    *a = *a / eta + e.g_scale * v;
                }
            } else {
                for a in fy.iter_mut() {
                    *a /= eta;
                }
            }
            (model.tau)(&y, &mut ty);
            let inc = &db[s * dy..(s + 1) * dy];
            for i in 0..dy {
                let mut diff = 0.0;
                for j in 0..dy {
                    diff += ty[i * dy + j] * inc[j];
                }
                y_next[i] = y[i] + fy[i] * delta + diff / sqrt_eta;
            }
            std::mem::swap(&mut y, &mut y_next);
        }
        guard(k + 1, &x, "slow state")?;
        guard(k + 1, &y, "fast state")?;
    }
    observe(grid.steps(), &x, &y);
    Ok(())
}

/// Streams the Euler scheme of the coupled system through `observe`
/// without storing the path.
pub fn simulate_observed(
    model: &ModelSpec,
    scales: &ScaleParams,
    n: usize,
    horizon: f64,
    noise: &NoiseBundle,
    observe: impl FnMut(usize, &[f64], &[f64]),
) -> Result<()> {
    check_noise(model, scales, n, horizon, noise)?;
    integrate(model, scales, noise, None, observe)
}

pub(crate) fn record_path(
    model: &ModelSpec,
    scales: &ScaleParams,
    noise: Arc<NoiseBundle>,
    ext: Option<&ExtendedTerms>,
) -> Result<SamplePath> {
    let grid = *noise.grid();
    let mut xs = Vec::with_capacity(grid.len() * model.dim_x);
    let mut ys = Vec::with_capacity(grid.len() * model.dim_y);
    integrate(model, scales, &noise, ext, |_, x, y| {
        xs.extend_from_slice(x);
        ys.extend_from_slice(y);
    })?;
    Ok(SamplePath {
        grid,
        dim_x: model.dim_x,
        dim_y: model.dim_y,
        x: xs,
        y: ys,
        noise,
    })
}

/// Euler–Maruyama trajectory of the coupled slow-fast system on `n` slow
/// steps over `[0, horizon]`, driven by `noise`.
pub fn simulate_pair(
    model: &ModelSpec,
    scales: &ScaleParams,
    n: usize,
    horizon: f64,
    noise: Arc<NoiseBundle>,
) -> Result<SamplePath> {
    check_noise(model, scales, n, horizon, &noise)?;
    record_path(model, scales, noise, None)
}

/// Simulates replicas `0..n_paths` of `source` in parallel. The result does
/// not depend on the number of worker threads.
pub fn simulate_ensemble(
    model: &ModelSpec,
    scales: &ScaleParams,
    source: &NoiseSource,
    n_paths: usize,
) -> Result<Ensemble> {
    let grid = *source.grid();
    let paths: Vec<SamplePath> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            simulate_pair(
                model,
                scales,
                grid.steps(),
                grid.horizon(),
                Arc::new(source.bundle(p)),
            )
        })
        .collect::<Result<_>>()?;
    let seeds = paths.iter().map(|p| p.noise.seed()).collect();
    Ok(Ensemble { grid, paths, seeds })
}

// ---------------------------------------------------------------------------
// rescaled fast process

/// Trajectory of the rescaled fast process, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct FastTrajectory {
    pub step: f64,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FastTrajectory {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// Streams `n_steps` Euler–Maruyama steps of `dY = f(Y) dt + tau(Y) dB`
/// from `y0`, calling `visit(k, y_k)` for `k = 0..=n_steps`.
pub fn run_fast_rescaled<R: Rng + ?Sized>(
    model: &ModelSpec,
    y0: &[f64],
    n_steps: usize,
    step: f64,
    rng: &mut R,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let dy = model.dim_y;
    let sd = step.sqrt();
    let mut y = y0.to_vec();
    let mut next = vec![0.0; dy];
    let mut fy = vec![0.0; dy];
    let mut ty = vec![0.0; dy * dy];
    let mut z = vec![0.0; dy];
    for k in 0..n_steps {
        visit(k, &y);
        (model.f)(&y, &mut fy);
        (model.tau)(&y, &mut ty);
        for zi in z.iter_mut() {
            *zi = rng.sample::<f64, _>(StandardNormal) * sd;
        }
        for i in 0..dy {
            let mut diff = 0.0;
            for j in 0..dy {
                diff += ty[i * dy + j] * z[j];
            }
            next[i] = y[i] + fy[i] * step + diff;
        }
        std::mem::swap(&mut y, &mut next);
        guard(k + 1, &y, "rescaled fast state")?;
    }
    visit(n_steps, &y);
    Ok(())
}

/// `dY~ = f(Y~) dt + tau(Y~) dB~` on `[0, horizon]` with step `step`, from
/// the model's `y0`.
pub fn simulate_fast_rescaled(
    model: &ModelSpec,
    horizon: f64,
    step: f64,
    seed: u64,
) -> Result<FastTrajectory> {
    if !(horizon > 0.0 && step > 0.0) {
        return Err(Error::domain(format!(
            "horizon and step must be positive, got {horizon}, {step}"
        )));
    }
    let n = (horizon / step).round().max(1.0) as usize;
    let mut values = Vec::with_capacity((n + 1) * model.dim_y);
    let mut r = rng::stream(seed, 0, rng::TAG_FAST_RESCALED);
    run_fast_rescaled(model, &model.y0, n, step, &mut r, |_, y| {
        values.extend_from_slice(y)
    })?;
    Ok(FastTrajectory {
        step,
        dim: model.dim_y,
        values,
    })
}

// ---------------------------------------------------------------------------
// Itô formula residual

type ScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type VecFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A `C^2` test function with its derivatives. Gradients have the length of
/// the variable, Hessians are row-major square matrices.
#[derive(Clone, Default)]
pub struct TestFunction {
    pub value: Option<ScalarFn>,
    pub grad_x: Option<VecFn>,
    pub hess_x: Option<VecFn>,
    pub grad_y: Option<VecFn>,
    pub hess_y: Option<VecFn>,
}

impl TestFunction {
    /// Scalar-variable function from closures of `(x, y)`.
    pub fn scalar(
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dxx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dy: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dyy: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Some(Arc::new(move |x, y| value(x[0], y[0]))),
            grad_x: Some(Arc::new(move |x, y, o| o[0] = dx(x[0], y[0]))),
            hess_x: Some(Arc::new(move |x, y, o| o[0] = dxx(x[0], y[0]))),
            grad_y: Some(Arc::new(move |x, y, o| o[0] = dy(x[0], y[0]))),
            hess_y: Some(Arc::new(move |x, y, o| o[0] = dyy(x[0], y[0]))),
        }
    }
}

fn need<'a, T>(f: &'a Option<T>, what: &str) -> Result<&'a T> {
    f.as_ref()
        .ok_or_else(|| Error::domain(format!("test function is missing its {what} callback")))
}

/// Discrepancy between `F(X_T, Y_T) - F(x0, y0)` and the discretized
/// right-hand side of the Itô formula for the divergence integral.
///
/// The divergence integral is the left-point sum minus its trace
/// correction `sum_{j<k} Gamma_kj D_j u_k`, with `Gamma` the fGn covariance
/// and `D_j x_k = sqrt(eps) sigma(y_j)`. The `alpha_H` double integral is
/// discretized with exact cell integrals of the kernel, which are again the
/// entries of `Gamma` (half the variance on the diagonal cell). The `y`
/// terms run on the fast subgrid, replayed from the path's noise.
pub fn ito_residual(
    test: &TestFunction,
    model: &ModelSpec,
    path: &SamplePath,
    scales: &ScaleParams,
) -> Result<f64> {
    let value = need(&test.value, "value")?;
    let grad_x = need(&test.grad_x, "grad_x")?;
    let hess_x = need(&test.hess_x, "hess_x")?;
    let grad_y = need(&test.grad_y, "grad_y")?;
    let hess_y = need(&test.hess_y, "hess_y")?;
    if model.is_extended() {
        return Err(Error::domain(
            "Itô residual is implemented for the base model only",
        ));
    }
    let (mx, dy) = (model.dim_x, model.dim_y);
    let noise = &path.noise;
    let grid = path.grid;
    let n = grid.steps();
    let h = grid.step();
    let hv = noise.hurst().value();
    let scale = h.powf(2.0 * hv);
    let gamma: Vec<f64> = (0..n)
        .map(|l| unit_fgn_acov(l as f64, hv) * scale)
        .collect();
    let eps = scales.eps;
    let sqrt_eps = eps.sqrt();

    let n_last = n;
    let lhs = value(path.x_at(n_last), path.y_at(n_last)) - value(path.x_at(0), path.y_at(0));

    let sigmas: Vec<Vec<f64>> = (0..n).map(|k| model.eval_sigma(path.y_at(k))).collect();
    let mut gx = vec![0.0; mx];
    let mut hx = vec![0.0; mx * mx];
    let mut c = vec![0.0; mx];
    let mut drift = 0.0;
    let mut pathwise = 0.0;
    let mut trace = 0.0;
    let mut alpha_term = 0.0;
    let mut mk = vec![0.0; mx * mx];
    for k in 0..n {
        let (x, y) = (path.x_at(k), path.y_at(k));
        grad_x(x, y, &mut gx);
        hess_x(x, y, &mut hx);
        (model.c)(x, y, &mut c);
        drift += gx.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() * h;
        let sk = &sigmas[k];
        let dw = noise.fbm_increment(k);
        for j in 0..mx {
            let u: f64 = (0..mx).map(|i| gx[i] * sk[i * mx + j]).sum();
            pathwise += sqrt_eps * u * dw[j];
        }
        // M_k = sum_{r<k} Gamma_kr sigma(y_r)
        mk.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..k {
            let gkr = gamma[k - r];
            for (m, s) in mk.iter_mut().zip(&sigmas[r]) {
                *m += gkr * s;
            }
        }
        // hess : sigma_k A^T for A = M_k and A = M_k + Gamma_0 sigma_k / 2
        let mut frob_m = 0.0;
        let mut frob_diag = 0.0;
        for i in 0..mx {
            for l in 0..mx {
                let mut sm = 0.0;
                let mut ss = 0.0;
                for j in 0..mx {
                    sm += sk[i * mx + j] * mk[l * mx + j];
                    ss += sk[i * mx + j] * sk[l * mx + j];
                }
                frob_m += hx[i * mx + l] * sm;
                frob_diag += hx[i * mx + l] * ss;
            }
        }
        trace += eps * frob_m;
        alpha_term += eps * (frob_m + 0.5 * gamma[0] * frob_diag);
    }
    let divergence = pathwise - trace;

    // y terms on the fast subgrid
    let n_sub = noise.substeps();
    let delta = noise.fast_step();
    let sqrt_eta = scales.eta.sqrt();
    let mut y = path.y_at(0).to_vec();
    let mut y_next = vec![0.0; dy];
    let mut fy = vec![0.0; dy];
    let mut ty = vec![0.0; dy * dy];
    let mut gy = vec![0.0; dy];
    let mut hy = vec![0.0; dy * dy];
    let mut dy_term = 0.0;
    let mut gen_term = 0.0;
    for k in 0..n {
        let x = path.x_at(k);
        let db = noise.bm_increments(k);
        for s in 0..n_sub {
            (model.f)(&y, &mut fy);
            (model.tau)(&y, &mut ty);
            for a in fy.iter_mut() {
                *a /= scales.eta;
            }
            let inc = &db[s * dy..(s + 1) * dy];
            for i in 0..dy {
                let mut diff = 0.0;
                for j in 0..dy {
                    diff += ty[i * dy + j] * inc[j];
                }
                y_next[i] = y[i] + fy[i] * delta + diff / sqrt_eta;
            }
            grad_y(x, &y, &mut gy);
            hess_y(x, &y, &mut hy);
            dy_term += (0..dy).map(|i| gy[i] * (y_next[i] - y[i])).sum::<f64>();
            let mut frob = 0.0;
            for i in 0..dy {
                for l in 0..dy {
                    let ttl: f64 = (0..dy).map(|j| ty[i * dy + j] * ty[l * dy + j]).sum();
                    frob += hy[i * dy + l] * ttl;
                }
            }
            gen_term += frob * delta / (2.0 * scales.eta);
            std::mem::swap(&mut y, &mut y_next);
        }
    }
    let rhs = drift + divergence + alpha_term + dy_term + gen_term;
    Ok((lhs - rhs).abs())
}

// ---------------------------------------------------------------------------
// exponential moments

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentSettings {
    pub horizon: f64,
    pub n_paths: usize,
    /// Euler step as a fraction of `eta`.
    pub step_ratio: f64,
    /// Number of equally spaced observation times in `(0, horizon]`.
    pub n_obs: usize,
    pub seed: u64,
}

impl Default for ExpMomentSettings {
    fn default() -> Self {
        Self {
            horizon: 0.25,
            n_paths: 10_000,
            step_ratio: 0.01,
            n_obs: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentRow {
    pub eta: f64,
    /// Maximum over observation times of the ensemble mean.
    pub estimate: Estimate,
    pub argmax_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentTable {
    pub rows: Vec<ExpMomentRow>,
    /// Pairwise differences within 3 combined standard errors.
    pub bounded: bool,
}

/// Estimates `sup_{t <= T} E exp(nu |Y^eta_t|^beta)` for each `eta`, by the
/// largest ensemble mean over an observation grid.
pub fn exp_moment_diag(
    model: &ModelSpec,
    etas: &[f64],
    nu: f64,
    beta: f64,
    settings: &ExpMomentSettings,
) -> Result<ExpMomentTable> {
    let g = &model.growth;
    if !(nu >= 0.0) || nu * beta * g.tau_sup_sq >= 2.0 * g.alpha {
        return Err(Error::precondition(format!(
            "nu beta sup|tau|^2 < 2 alpha fails: {nu} * {beta} * {} >= 2 * {}",
            g.tau_sup_sq, g.alpha
        )));
    }
    if settings.n_obs == 0 || settings.n_paths < 2 || !(settings.step_ratio > 0.0) {
        return Err(Error::domain(
            "need observation times, two paths and a positive step ratio",
        ));
    }
    let mut rows = Vec::with_capacity(etas.len());
    for (level, &eta) in etas.iter().enumerate() {
        if !(eta > 0.0) {
            return Err(Error::domain(format!("eta must be positive, got {eta}")));
        }
        // Y^eta_t has the law of the rescaled process at t / eta
        let n_steps = (settings.horizon / (eta * settings.step_ratio))
            .round()
            .max(1.0) as usize;
        let step = settings.horizon / eta / n_steps as f64;
        let obs: Vec<usize> = (1..=settings.n_obs)
            .map(|i| (i * n_steps + settings.n_obs / 2) / settings.n_obs)
            .collect();
        let seed = rng::derive_seed(settings.seed, level as u64);
        let per_path: Vec<Vec<f64>> = (0..settings.n_paths as u64)
            .into_par_iter()
            .map(|p| {
                let mut r = rng::stream(seed, p, rng::TAG_FAST_RESCALED);
                let mut out = Vec::with_capacity(obs.len());
                run_fast_rescaled(model, &model.y0, n_steps, step, &mut r, |k, y| {
                    if obs.contains(&k) {
                        out.push((nu * norm(y).powf(beta)).exp());
                    }
                })?;
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut best = Estimate {
            value: f64::NEG_INFINITY,
            stderr: 0.0,
        };
        let mut argmax = 0.0;
        for (i, &k) in obs.iter().enumerate() {
            let col: Vec<f64> = per_path.iter().map(|v| v[i]).collect();
            let e = stats::mean_estimate(&col);
            if e.value > best.value {
                best = e;
                argmax = k as f64 * step * eta;
            }
        }
        rows.push(ExpMomentRow {
            eta,
            estimate: best,
            argmax_time: argmax,
        });
    }
    let bounded = rows.iter().enumerate().all(|(i, a)| {
        rows[i + 1..].iter().all(|b| {
            let se = (a.estimate.stderr.powi(2) + b.estimate.stderr.powi(2)).sqrt();
            (a.estimate.value - b.estimate.value).abs() <= 3.0 * se
        })
    });
    Ok(ExpMomentTable { rows, bounded })
}
