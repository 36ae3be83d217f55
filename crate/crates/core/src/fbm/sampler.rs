use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{unit_fgn_acov, HurstParameter};
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::rng;

/// Negative circulant eigenvalues above `-CIRCULANT_EIGEN_TOL * max` are
/// clamped to zero; anything below triggers the Cholesky fallback.
pub const CIRCULANT_EIGEN_TOL: f64 = 1e-10;

/// Largest grid handled by the dense Cholesky fallback.
const CHOLESKY_MAX_STEPS: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMethod {
    CirculantEmbedding,
    Cholesky,
}

/// Which random stream produced a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRecord {
    pub seed: u64,
    pub path: u64,
}

/// Exact sampler of `n` consecutive fractional Gaussian noise increments on a
/// grid of step `step`.
///
/// The default construction embeds the Toeplitz covariance into a circulant
/// matrix of size `2n` and samples through one complex FFT per path. If the
/// embedding is not positive semidefinite (beyond [`CIRCULANT_EIGEN_TOL`]),
/// the sampler falls back to a dense Cholesky factor of the exact covariance.
#[derive(Clone)]
pub struct FgnSampler {
    n: usize,
    hurst: HurstParameter,
    scale: f64,
    kind: Kind,
}

#[derive(Clone)]
enum Kind {
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        lower: DMatrix<f64>,
    },
}

impl std::fmt::Debug for FgnSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FgnSampler")
            .field("n", &self.n)
            .field("hurst", &self.hurst)
            .field("method", &self.method())
            .finish()
    }
}

impl FgnSampler {
    pub fn new(n: usize, hurst: HurstParameter, step: f64) -> Result<Self> {
        match Self::with_method(n, hurst, step, SamplingMethod::CirculantEmbedding) {
            Err(Error::Numerical(_)) => Self::with_method(n, hurst, step, SamplingMethod::Cholesky),
            other => other,
        }
    }

    /// Forces a sampling method. Circulant embedding reports a numerical
    /// error instead of falling back when its spectrum is indefinite.
    pub fn with_method(
        n: usize,
        hurst: HurstParameter,
        step: f64,
        method: SamplingMethod,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("fGn sampler needs at least one increment"));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::domain(format!(
                "fGn step must be positive, got {step}"
            )));
        }
        let h = hurst.value();
        let scale = step.powf(h);
        let kind = match method {
            SamplingMethod::CirculantEmbedding => {
                let m = 2 * n;
                let mut row = vec![Complex64::new(0.0, 0.0); m];
                for (j, slot) in row.iter_mut().enumerate() {
                    let lag = if j <= n { j } else { m - j };
                    *slot = Complex64::new(unit_fgn_acov(lag as f64, h), 0.0);
                }
                let fft = FftPlanner::new().plan_fft_forward(m);
                fft.process(&mut row);
                let max = row.iter().map(|c| c.re).fold(f64::MIN, f64::max);
                let min = row.iter().map(|c| c.re).fold(f64::MAX, f64::min);
                if min < -CIRCULANT_EIGEN_TOL * max {
                    return Err(Error::numerical(format!(
                        "circulant embedding has eigenvalue {min:e} (max {max:e})"
                    )));
                }
                let sqrt_eig = row
                    .iter()
                    .map(|c| (c.re.max(0.0) / m as f64).sqrt())
                    .collect();
                Kind::Circulant { sqrt_eig, fft }
            }
            SamplingMethod::Cholesky => {
                if n > CHOLESKY_MAX_STEPS {
                    return Err(Error::numerical(format!(
                        "Cholesky fallback limited to {CHOLESKY_MAX_STEPS} increments, got {n}"
                    )));
                }
                let acov: Vec<f64> = (0..n).map(|k| unit_fgn_acov(k as f64, h)).collect();
                let cov = DMatrix::from_fn(n, n, |i, j| acov[i.abs_diff(j)]);
                let chol = cov.cholesky().ok_or_else(|| {
                    Error::numerical(format!(
                        "fGn covariance with n = {n}, H = {h} is not positive definite"
                    ))
                })?;
                Kind::Cholesky { lower: chol.l() }
            }
        };
        Ok(Self {
            n,
            hurst,
            scale,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn hurst(&self) -> HurstParameter {
        self.hurst
    }

    pub fn method(&self) -> SamplingMethod {
        match self.kind {
            Kind::Circulant { .. } => SamplingMethod::CirculantEmbedding,
            Kind::Cholesky { .. } => SamplingMethod::Cholesky,
        }
    }

    /// Writes `n` increments into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(out.len(), self.n, "output length must match sampler size");
        match &self.kind {
            Kind::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                for (o, c) in out.iter_mut().zip(&buf) {
                    *o = c.re * self.scale;
                }
            }
            Kind::Cholesky { lower } => {
                let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, zj) in z.iter().enumerate().take(i + 1) {
                        acc += lower[(i, j)] * zj;
                    }
                    *o = acc * self.scale;
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.sample_into(rng, &mut out);
        out
    }
}

/// A sampled scalar fBm path, `values[k] = W^H(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
    pub hurst: HurstParameter,
    pub seed: SeedRecord,
}

impl FbmPath {
    pub(crate) fn from_increments(
        grid: UniformGrid,
        increments: &[f64],
        hurst: HurstParameter,
        seed: SeedRecord,
    ) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for dw in increments {
            acc += dw;
            values.push(acc);
        }
        Self {
            grid,
            values,
            hurst,
            seed,
        }
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("path has at least two points")
    }
}

/// Samples `(W^H_{t_0}, ..., W^H_{t_n})` on the uniform grid of `n` steps
/// over `[0, horizon]` from path 0 of `seed`.
pub fn sample_fbm(n: usize, horizon: f64, hurst: HurstParameter, seed: u64) -> Result<FbmPath> {
    let grid = UniformGrid::new(n, horizon)?;
    let sampler = FgnSampler::new(n, hurst, grid.step())?;
    let mut rng = rng::stream(seed, 0, rng::TAG_FBM_BASE);
    let inc = sampler.sample(&mut rng);
    Ok(FbmPath::from_increments(
        grid,
        &inc,
        hurst,
        SeedRecord { seed, path: 0 },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::covariance_rh;

    fn h(v: f64) -> HurstParameter {
        HurstParameter::new(v).unwrap()
    }

    #[test]
    fn single_step_path() {
        let p = sample_fbm(1, 1.0, h(0.7), 3).unwrap();
        assert_eq!(p.values.len(), 2);
        assert_eq!(p.values[0], 0.0);
        assert!(p.values[1].is_finite());
    }

    #[test]
    fn circulant_embedding_is_psd_in_long_memory_range() {
        for &hv in &[0.51, 0.6, 0.75, 0.9, 0.99] {
            for &n in &[1usize, 2, 7, 64, 1000] {
                let s = FgnSampler::new(n, h(hv), 1.0).unwrap();
                assert_eq!(s.method(), SamplingMethod::CirculantEmbedding);
            }
        }
    }

    /// The implied covariance of the circulant sampler is computed exactly by
    /// pushing unit vectors through the same linear map.
    #[test]
    fn circulant_covariance_is_exact() {
        let n = 16;
        let hv = h(0.8);
        let s = FgnSampler::new(n, hv, 0.5).unwrap();
        let Kind::Circulant { sqrt_eig, fft } = &s.kind else {
            panic!("expected circulant")
        };
        let m = 2 * n;
        // Re(w) = A z_re - B z_im, columns of the real linear map
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for k in 0..m {
            for part in 0..2 {
                let mut buf = vec![Complex64::new(0.0, 0.0); m];
                buf[k] = if part == 0 {
                    Complex64::new(sqrt_eig[k], 0.0)
                } else {
                    Complex64::new(0.0, sqrt_eig[k])
                };
                fft.process(&mut buf);
                cols.push(buf[..n].iter().map(|c| c.re * s.scale).collect());
            }
        }
        for i in 0..n {
            for j in 0..n {
                let cov: f64 = cols.iter().map(|c| c[i] * c[j]).sum();
                let lag = i.abs_diff(j);
                let expected = crate::fbm::fgn_autocovariance(lag, hv, 0.5).unwrap();
                assert!(
                    (cov - expected).abs() < 1e-12,
                    "({i},{j}) {cov} vs {expected}"
                );
            }
        }
        // and the cumulated path reproduces R_H
        let t = |k: usize| k as f64 * 0.5;
        let path_cov = |a: usize, b: usize| -> f64 {
            cols.iter()
                .map(|c| c[..a].iter().sum::<f64>() * c[..b].iter().sum::<f64>())
                .sum()
        };
        for (a, b) in [(3, 9), (16, 16), (1, 16)] {
            let want = covariance_rh(t(a), t(b), hv).unwrap();
            assert!((path_cov(a, b) - want).abs() < 1e-11);
        }
    }

    #[test]
    fn cholesky_matches_circulant_in_law_first_two_moments() {
        let n = 8;
        let chol = FgnSampler::with_method(n, h(0.7), 1.0, SamplingMethod::Cholesky).unwrap();
        let Kind::Cholesky { lower } = &chol.kind else {
            panic!()
        };
        let cov = lower * lower.transpose();
        for i in 0..n {
            for j in 0..n {
                let want = crate::fbm::fgn_autocovariance(i.abs_diff(j), h(0.7), 1.0).unwrap();
                assert!((cov[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_fbm(50, 2.0, h(0.65), 11).unwrap();
        let b = sample_fbm(50, 2.0, h(0.65), 11).unwrap();
        let c = sample_fbm(50, 2.0, h(0.65), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(FgnSampler::new(0, h(0.7), 1.0).is_err());
        assert!(FgnSampler::new(4, h(0.7), -1.0).is_err());
        assert!(sample_fbm(4, 0.0, h(0.7), 0).is_err());
    }
}
