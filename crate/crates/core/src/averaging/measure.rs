use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng;
use crate::sde::{check_conditions, run_fast_rescaled, SampleBox};
use crate::stats::{self, Estimate};

/// Highest raw moment kept in the cache.
pub const MAX_CACHED_MOMENT: usize = 4;

/// How the points of an [`InvariantMeasureEstimate`] were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    /// Thinned states of one long trajectory. Standard errors of averages
    /// come from `batches` batch means.
    Sampled { batches: usize },
    /// Quadrature nodes of a density; averages carry no sampling error.
    Quadrature,
}

/// Weighted point representation of the invariant measure of the rescaled
/// fast process.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantMeasureEstimate {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    kind: MeasureKind,
    /// `moments[i][k]` = raw moment of order `k + 1` of coordinate `i`.
    moments: Vec<Vec<f64>>,
}

impl InvariantMeasureEstimate {
    /// Builds an estimate from points (row-major, `dim` per point) and
    /// nonnegative weights, normalized here.
    pub fn from_weighted(
        dim: usize,
        points: Vec<f64>,
        weights: Vec<f64>,
        kind: MeasureKind,
    ) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() != dim * weights.len() {
            return Err(Error::domain(
                "measure needs a nonempty set of points with one weight each",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || points.iter().any(|p| !p.is_finite())
        {
            return Err(Error::domain(
                "measure points and weights must be finite, weights nonnegative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("measure weights sum to zero"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut est = Self {
            dim,
            points,
            weights,
            kind,
            moments: Vec::new(),
        };
        est.moments = (0..dim)
            .map(|i| {
                (1..=MAX_CACHED_MOMENT)
                    .map(|k| est.expect(|y| y[i].powi(k as i32)).value)
                    .collect()
            })
            .collect();
        if est.moments.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::numerical("measure moments are not finite"));
        }
        Ok(est)
    }

    /// Equally weighted samples.
    pub fn from_samples(dim: usize, points: Vec<f64>, batches: usize) -> Result<Self> {
        let n = points.len() / dim.max(1);
        Self::from_weighted(dim, points, vec![1.0; n], MeasureKind::Sampled { batches })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Cached raw moment `E[y_coord^order]`, `1 <= order <= 4`.
    pub fn moment(&self, coord: usize, order: usize) -> Result<f64> {
        if coord >= self.dim || order == 0 || order > MAX_CACHED_MOMENT {
            return Err(Error::domain(format!(
                "moment ({coord}, {order}) is not cached"
            )));
        }
        Ok(self.moments[coord][order - 1])
    }

    /// `∫ h dμ̂` with its standard error.
    pub fn expect(&self, mut h: impl FnMut(&[f64]) -> f64) -> Estimate {
        match self.kind {
            MeasureKind::Quadrature => Estimate::exact(
                self.iter()
                    .map(|(y, w)| if w > 0.0 { w * h(y) } else { 0.0 })
                    .sum(),
            ),
            MeasureKind::Sampled { batches } => {
                let vals: Vec<f64> = self.iter().map(|(y, _)| h(y)).collect();
                let se = if vals.len() >= 2 * batches.max(2) {
                    stats::batch_means_stderr(&vals, batches)
                } else {
                    (stats::variance(&vals) / vals.len() as f64).sqrt()
                };
                Estimate {
                    value: stats::mean(&vals),
                    stderr: se,
                }
            }
        }
    }

    /// Mean and standard deviation of coordinate `coord`.
    pub fn mean_sd(&self, coord: usize) -> (f64, f64) {
        let m1 = self.moments[coord][0];
        let m2 = self.moments[coord][1];
        (m1, (m2 - m1 * m1).max(0.0).sqrt())
    }

    /// Median of coordinate `coord` under the weights.
    pub fn median(&self, coord: usize) -> f64 {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.point(a)[coord].total_cmp(&self.point(b)[coord]));
        let mut acc = 0.0;
        for i in idx {
            acc += self.weights[i];
            if acc >= 0.5 {
                return self.point(i)[coord];
            }
        }
        self.point(self.len() - 1)[coord]
    }
}

/// Sampling plan for [`estimate_invariant_measure`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSampling {
    /// Discarded initial time of the rescaled process.
    pub burn_in: f64,
    /// Keep every `thin`-th Euler state.
    pub thin: usize,
    /// Euler step of the rescaled process.
    pub step: f64,
    pub n_samples: usize,
    pub batches: usize,
    /// Radius of the `y` shell on which the recurrence inequality is probed
    /// before sampling.
    pub recurrence_radius: f64,
}

impl Default for MeasureSampling {
    fn default() -> Self {
        Self {
            burn_in: 50.0,
            thin: 10,
            step: 0.02,
            n_samples: 20_000,
            batches: 50,
            recurrence_radius: 10.0,
        }
    }
}

/// Long-run sample of the rescaled fast process `dY = f dt + tau dB`, from
/// the model's `y0`, after burn-in and thinning.
pub fn estimate_invariant_measure(
    model: &ModelSpec,
    sampling: &MeasureSampling,
    seed: u64,
) -> Result<InvariantMeasureEstimate> {
    if sampling.thin == 0
        || sampling.n_samples < 2
        || !(sampling.step > 0.0)
        || !(sampling.burn_in >= 0.0)
    {
        return Err(Error::domain("invalid invariant-measure sampling plan"));
    }
    let probe = SampleBox::symmetric(model.dim_x, 1.0, model.dim_y, sampling.recurrence_radius);
    let report = check_conditions(model, &probe, 64);
    let rec = report
        .get("recurrence")
        .expect("recurrence verdict is always present");
    if !rec.passed {
        return Err(Error::precondition(format!(
            "recurrence inequality fails at |y| = {}: value {} at y = {:?}",
            sampling.recurrence_radius, rec.worst, rec.witness_y
        )));
    }
    let burn = (sampling.burn_in / sampling.step).ceil() as usize;
    let total = burn + sampling.thin * sampling.n_samples;
    let mut points = Vec::with_capacity(sampling.n_samples * model.dim_y);
    let mut r = rng::stream(seed, 0, rng::TAG_MEASURE);
    run_fast_rescaled(model, &model.y0, total, sampling.step, &mut r, |k, y| {
        if k > burn && (k - burn).is_multiple_of(sampling.thin) {
            points.extend_from_slice(y);
        }
    })?;
    InvariantMeasureEstimate::from_samples(model.dim_y, points, sampling.batches)
}

/// Quadrature representation of the stationary density of a one-dimensional
/// fast process, `m(y) ∝ tau(y)^{-2} exp(∫_0^y 2 f / tau^2)`, on `n_grid`
/// points of `domain` with trapezoid weights.
pub fn from_stationary_density(
    model: &ModelSpec,
    domain: (f64, f64),
    n_grid: usize,
) -> Result<InvariantMeasureEstimate> {
    if model.dim_y != 1 {
        return Err(Error::UnsupportedDimension {
            dim: model.dim_y,
            hint: "the stationary density is only available in closed form for one fast dimension; use estimate_invariant_measure",
        });
    }
    let (lo, hi) = domain;
    if !(lo < hi) || n_grid < 3 || !(lo <= 0.0 && hi >= 0.0) {
        return Err(Error::domain(
            "density domain must contain 0 and have at least 3 points",
        ));
    }
    let dy = (hi - lo) / (n_grid - 1) as f64;
    let ys: Vec<f64> = (0..n_grid).map(|i| lo + i as f64 * dy).collect();
    let integrand: Vec<f64> = ys
        .iter()
        .map(|&y| {
            let f = model.eval_f(&[y])[0];
            let t = model.eval_tau(&[y])[0];
            2.0 * f / (t * t)
        })
        .collect();
    // cumulative trapezoid from lo, shifted so the potential vanishes at 0
    let mut pot = vec![0.0; n_grid];
    for i in 1..n_grid {
        pot[i] = pot[i - 1] + 0.5 * dy * (integrand[i] + integrand[i - 1]);
    }
    let zero = {
        let pos = (-lo / dy).clamp(0.0, (n_grid - 1) as f64);
        let i = (pos.floor() as usize).min(n_grid - 2);
        let s = pos - i as f64;
        pot[i] * (1.0 - s) + pot[i + 1] * s
    };
    let top = pot.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b - zero));
    let weights: Vec<f64> = ys
        .iter()
        .zip(&pot)
        .enumerate()
        .map(|(i, (&y, &p))| {
            let t = model.eval_tau(&[y])[0];
            let trap = if i == 0 || i == n_grid - 1 { 0.5 } else { 1.0 };
            trap * (p - zero - top).exp() / (t * t)
        })
        .collect();
    InvariantMeasureEstimate::from_weighted(1, ys, weights, MeasureKind::Quadrature)
}

/// Measure used for averaged coefficients by the table builders. One fast
/// dimension: stationary-density quadrature on `REFERENCE_GRID` points over
/// twelve standard deviations of a short pilot sample. Otherwise the sampled
/// estimate with the default plan.
pub fn reference_measure(model: &ModelSpec, seed: u64) -> Result<InvariantMeasureEstimate> {
    if model.dim_y != 1 {
        return estimate_invariant_measure(model, &MeasureSampling::default(), seed);
    }
    let pilot = estimate_invariant_measure(
        model,
        &MeasureSampling {
            n_samples: 2000,
            ..MeasureSampling::default()
        },
        seed,
    )?;
    let (m, sd) = pilot.mean_sd(0);
    let r = 12.0 * sd.max(1e-3);
    let lo = (m - r).min(-r / REFERENCE_GRID as f64);
    let hi = (m + r).max(r / REFERENCE_GRID as f64);
    from_stationary_density(model, (lo, hi), REFERENCE_GRID)
}

/// Trapezoid sums against a smooth, fast-decaying density converge
/// geometrically, so a modest grid suffices.
pub const REFERENCE_GRID: usize = 241;

/// `c̄(x) = ∫ c(x, y) μ̂(dy)`.
pub fn averaged_drift(model: &ModelSpec, mu: &InvariantMeasureEstimate, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.dim_x];
    let mut tmp = vec![0.0; model.dim_x];
    for (y, w) in mu.iter() {
        if w == 0.0 {
            continue;
        }
        (model.c)(x, y, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += w * t;
        }
    }
    out
}

/// `σ̄ = ∫ sigma dμ̂`, row-major.
pub fn averaged_sigma(model: &ModelSpec, mu: &InvariantMeasureEstimate) -> Vec<f64> {
    let m = model.dim_x;
    let mut out = vec![0.0; m * m];
    let mut tmp = vec![0.0; m * m];
    for (y, w) in mu.iter() {
        if w == 0.0 {
            continue;
        }
        (model.sigma)(y, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += w * t;
        }
    }
    out
}

/// Average of any scalar function of `(x, y)` in `y`.
pub fn averaged_function(
    mu: &InvariantMeasureEstimate,
    x: &[f64],
    h: impl Fn(&[f64], &[f64]) -> f64,
) -> f64 {
    mu.iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(y, w)| w * h(x, y))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::HurstParameter;
    use crate::model::ScalarCoefficients;

    #[test]
    fn ou_density_moments_are_gaussian() {
        let m = ModelSpec::registry("ou-quadratic").unwrap();
        let mu = from_stationary_density(&m, (-7.0, 7.0), 2001).unwrap();
        assert!(mu.moment(0, 1).unwrap().abs() < 1e-14);
        assert!((mu.moment(0, 2).unwrap() - 0.5).abs() < 1e-12);
        assert!((mu.moment(0, 4).unwrap() - 0.75).abs() < 1e-12);
        assert!((mu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let cbar = averaged_drift(&m, &mu, &[0.3]);
        assert!((cbar[0] - (-0.3 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn sampled_ou_measure() {
        let m = ModelSpec::registry("ou-quadratic").unwrap();
        let mu = estimate_invariant_measure(&m, &MeasureSampling::default(), 4).unwrap();
        let mean = mu.expect(|y| y[0]);
        let second = mu.expect(|y| y[0] * y[0]);
        assert!(mean.agrees_with(0.0, 3.0, 0.0), "{mean:?}");
        // Euler stationary variance with step a is 1 / (2 - a)
        assert!(
            second.agrees_with(1.0 / (2.0 - 0.02), 3.0, 0.0),
            "{second:?}"
        );
        assert!(matches!(mu.kind(), MeasureKind::Sampled { .. }));
    }

    #[test]
    fn rejects_transient_fast_dynamics() {
        let h = HurstParameter::new(0.7).unwrap();
        let m = ModelSpec::scalar(
            "up",
            ScalarCoefficients::new(|_, _| 0.0, |_| 1.0, |y| y, |_| 1.0),
            h,
            0.0,
            0.0,
        );
        assert!(matches!(
            estimate_invariant_measure(&m, &MeasureSampling::default(), 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn constant_in_y_averages_exactly() {
        let m = ModelSpec::registry("ou-quadratic").unwrap();
        let pts = vec![0.1, -0.4, 2.0];
        let mu = InvariantMeasureEstimate::from_samples(1, pts, 2).unwrap();
        let v = averaged_function(&mu, &[2.0], |x, _| x[0] * 3.0);
        assert!((v - 6.0).abs() < 1e-15);
        assert_eq!(averaged_sigma(&m, &mu), vec![1.0]);
        assert!(InvariantMeasureEstimate::from_samples(1, vec![], 2).is_err());
    }
}
