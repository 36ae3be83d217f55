//! System definitions: coefficient fields, scale parameters and the built-in
//! test models.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fbm::HurstParameter;

/// Field depending on both variables, `(x, y, out)`.
pub type SlowField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Field depending on the fast variable only, `(y, out)`. Matrices are
/// written row-major.
pub type FastField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Constants the user declares for the growth and recurrence conditions.
/// They cannot be certified globally; `sde::check_conditions` probes them on
/// a box.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthMeta {
    /// `|c(x,y)| <= k (1 + |x|^r)(1 + |y|^q)`.
    pub k: f64,
    pub q: f64,
    pub r: f64,
    /// Recurrence constants: `y.f(y) + alpha |y|^beta + ... <= 0` for large `|y|`.
    pub alpha: f64,
    pub beta: f64,
    /// `||grad_x c|| <= gamma |y|^beta` for large `|y|`. `None` declares a
    /// bounded `grad_x c`, which leaves the moment order unrestricted.
    pub gamma: Option<f64>,
    /// `sup_y |tau(y)|^2` (Frobenius).
    pub tau_sup_sq: f64,
}

impl Default for GrowthMeta {
    fn default() -> Self {
        Self {
            k: 1.0,
            q: 2.0,
            r: 1.0,
            alpha: 0.9,
            beta: 2.0,
            gamma: None,
            tau_sup_sq: 1.0,
        }
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim_x: usize,
    pub dim_y: usize,
    /// Slow drift `c(x, y)`, length `dim_x`.
    pub c: SlowField,
    /// Slow fBm coefficient `sigma(y)`, `dim_x x dim_x`.
    pub sigma: FastField,
    /// Fast drift `f(y)`, length `dim_y`.
    pub f: FastField,
    /// Fast diffusion `tau(y)`, `dim_y x dim_y`.
    pub tau: FastField,
    /// Singular slow drift of the extended model.
    pub b: Option<SlowField>,
    /// Intermediate fast drift of the extended model.
    pub g: Option<FastField>,
    pub hurst: HurstParameter,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub growth: GrowthMeta,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim_x", &self.dim_x)
            .field("dim_y", &self.dim_y)
            .field("extended", &(self.b.is_some() || self.g.is_some()))
            .field("hurst", &self.hurst.value())
            .field("x0", &self.x0)
            .field("y0", &self.y0)
            .finish()
    }
}

pub const REGISTRY: &[&str] = &[
    "ou-quadratic",
    "ou-quadratic-sigma",
    "ou-quadratic-extended",
    "ou-quadratic-sigma-extended",
];

type Scalar2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Scalar1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar coefficients for a model with one slow and one fast coordinate.
#[derive(Clone)]
pub struct ScalarCoefficients {
    pub c: Scalar2,
    pub sigma: Scalar1,
    pub f: Scalar1,
    pub tau: Scalar1,
    pub b: Option<Scalar2>,
    pub g: Option<Scalar1>,
}

impl ScalarCoefficients {
    pub fn new(
        c: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        tau: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            c: Arc::new(c),
            sigma: Arc::new(sigma),
            f: Arc::new(f),
            tau: Arc::new(tau),
            b: None,
            g: None,
        }
    }

    pub fn with_b(mut self, b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.b = Some(Arc::new(b));
        self
    }

    pub fn with_g(mut self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Some(Arc::new(g));
        self
    }
}

fn lift2(h: Scalar2) -> SlowField {
    Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| out[0] = h(x[0], y[0]))
}

fn lift1(h: Scalar1) -> FastField {
    Arc::new(move |y: &[f64], out: &mut [f64]| out[0] = h(y[0]))
}

impl ModelSpec {
    /// One-dimensional slow and fast variables.
    pub fn scalar(
        name: impl Into<String>,
        coef: ScalarCoefficients,
        hurst: HurstParameter,
        x0: f64,
        y0: f64,
    ) -> Self {
        Self {
            name: name.into(),
            dim_x: 1,
            dim_y: 1,
            c: lift2(coef.c),
            sigma: lift1(coef.sigma),
            f: lift1(coef.f),
            tau: lift1(coef.tau),
            b: coef.b.map(lift2),
            g: coef.g.map(lift1),
            hurst,
            x0: vec![x0],
            y0: vec![y0],
            growth: GrowthMeta::default(),
        }
    }

    /// Built-in test models with `H = 0.75`, `x0 = 1`, `y0 = 0`.
    pub fn registry(name: &str) -> Result<Self> {
        let hurst = HurstParameter::new(0.75)?;
        let base = ScalarCoefficients::new(|x, y| -x + y * y, |_| 1.0, |y| -y, |_| 1.0);
        let with_sigma = ScalarCoefficients {
            sigma: Arc::new(|y: f64| (1.0 + y * y).sqrt()),
            ..base.clone()
        };
        let coef = match name {
            "ou-quadratic" => base,
            "ou-quadratic-sigma" => with_sigma,
            "ou-quadratic-extended" => base.with_b(|_, y| y).with_g(|y| -y),
            "ou-quadratic-sigma-extended" => with_sigma.with_b(|_, y| y).with_g(|y| -y),
            other => {
                return Err(Error::Config(format!(
                    "unknown model '{other}', known models: {}",
                    REGISTRY.join(", ")
                )))
            }
        };
        let mut model = Self::scalar(name, coef, hurst, 1.0, 0.0);
        model.growth = GrowthMeta {
            k: 1.0,
            q: 2.0,
            r: 1.0,
            alpha: 0.9,
            beta: 2.0,
            gamma: None,
            tau_sup_sq: 1.0,
        };
        Ok(model)
    }

    pub fn is_extended(&self) -> bool {
        self.b.is_some() || self.g.is_some()
    }

    /// Drops `b` and `g`.
    pub fn base(&self) -> Self {
        Self {
            b: None,
            g: None,
            ..self.clone()
        }
    }

    pub fn with_hurst(mut self, hurst: HurstParameter) -> Self {
        self.hurst = hurst;
        self
    }

    pub fn with_initial(mut self, x0: Vec<f64>, y0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.dim_x || y0.len() != self.dim_y {
            return Err(Error::domain("initial state has the wrong dimension"));
        }
        self.x0 = x0;
        self.y0 = y0;
        Ok(self)
    }

    /// Fast dynamics `f + lambda g` of the limiting generator, as a model whose
    /// other fields are unchanged.
    pub fn limit_fast_model(&self, lambda: f64) -> Self {
        let mut m = self.clone();
        if let Some(g) = self.g.clone() {
            let f = self.f.clone();
            let dy = self.dim_y;
            m.f = Arc::new(move |y: &[f64], out: &mut [f64]| {
                f(y, out);
                let mut stack = [0.0; 8];
                let mut heap = Vec::new();
                let tmp: &mut [f64] = if dy <= stack.len() {
                    &mut stack[..dy]
                } else {
                    heap.resize(dy, 0.0);
                    &mut heap
                };
                g(y, tmp);
                for (o, t) in out.iter_mut().zip(tmp.iter()) {
                    *o += lambda * t;
                }
            });
        }
        m
    }

    pub fn eval_c(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x];
        (self.c)(x, y, &mut out);
        out
    }

    pub fn eval_sigma(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x * self.dim_x];
        (self.sigma)(y, &mut out);
        out
    }

    pub fn eval_f(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_y];
        (self.f)(y, &mut out);
        out
    }

    pub fn eval_tau(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_y * self.dim_y];
        (self.tau)(y, &mut out);
        out
    }
}

/// Scale parameters `(eps, eta)` with the regime constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    pub eps: f64,
    pub eta: f64,
    /// Limit of `sqrt(eta / eps)` along the family this pair belongs to.
    pub lambda: f64,
    /// `eps^{-1/2} (sqrt(eta / eps) - lambda)`.
    pub kappa: f64,
}

impl ScaleParams {
    /// `lambda` is set to `sqrt(eta / eps)` and `kappa` to zero.
    pub fn new(eps: f64, eta: f64) -> Result<Self> {
        Self::with_regime(eps, eta, (eta / eps).sqrt(), 0.0)
    }

    pub fn with_regime(eps: f64, eta: f64, lambda: f64, kappa: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) || !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::domain(format!(
                "scales must be positive, got eps = {eps}, eta = {eta}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() || !kappa.is_finite() {
            return Err(Error::domain(format!(
                "invalid regime constants lambda = {lambda}, kappa = {kappa}"
            )));
        }
        Ok(Self {
            eps,
            eta,
            lambda,
            kappa,
        })
    }

    /// Formal `eps = 0` run: the fBm term is switched off, the fast variable
    /// still runs at scale `eta`.
    pub fn formal_limit(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::domain(format!("eta must be positive, got {eta}")));
        }
        Ok(Self {
            eps: 0.0,
            eta,
            lambda: 0.0,
            kappa: 0.0,
        })
    }

    pub fn is_formal(&self) -> bool {
        self.eps == 0.0
    }

    /// `sqrt(eps) + sqrt(eta)`, the scale in the averaging rate.
    pub fn rate_scale(&self) -> f64 {
        self.eps.sqrt() + self.eta.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_models_evaluate() {
        let m = ModelSpec::registry("ou-quadratic").unwrap();
        assert_eq!(m.eval_c(&[1.0], &[2.0]), vec![3.0]);
        assert_eq!(m.eval_f(&[2.0]), vec![-2.0]);
        assert!(!m.is_extended());
        let s = ModelSpec::registry("ou-quadratic-sigma").unwrap();
        assert_eq!(s.eval_sigma(&[0.0]), vec![1.0]);
        assert!((s.eval_sigma(&[1.0])[0] - 2f64.sqrt()).abs() < 1e-15);
        let e = ModelSpec::registry("ou-quadratic-extended").unwrap();
        assert!(e.is_extended());
        assert!(!e.base().is_extended());
        assert!(matches!(ModelSpec::registry("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn limit_fast_drift_adds_g() {
        let e = ModelSpec::registry("ou-quadratic-extended").unwrap();
        let l = e.limit_fast_model(2.0);
        assert_eq!(l.eval_f(&[1.5]), vec![-1.5 - 3.0]);
        let m = ModelSpec::registry("ou-quadratic").unwrap();
        assert_eq!(m.limit_fast_model(2.0).eval_f(&[1.5]), vec![-1.5]);
    }

    #[test]
    fn scale_params() {
        let s = ScaleParams::new(0.01, 0.04).unwrap();
        assert!((s.lambda - 2.0).abs() < 1e-15);
        assert!((s.rate_scale() - 0.3).abs() < 1e-15);
        assert!(ScaleParams::new(0.0, 1.0).is_err());
        assert!(ScaleParams::with_regime(1.0, 1.0, -1.0, 0.0).is_err());
        assert!(ScaleParams::formal_limit(0.1).unwrap().is_formal());
    }
}
