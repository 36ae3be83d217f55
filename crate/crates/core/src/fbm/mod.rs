//! Fractional Brownian motion: covariance, exact sampling on uniform grids
//! and the inner product of its reproducing kernel Hilbert space.

mod inner;
mod noise;
mod sampler;

pub use inner::h_inner_product;
pub use noise::{write_fbm_csv, NoiseBundle, NoiseSource};
pub use sampler::{
    sample_fbm, FbmPath, FgnSampler, SamplingMethod, SeedRecord, CIRCULANT_EIGEN_TOL,
};

use crate::error::{Error, Result};

/// Hurst index restricted to the long-memory range `(1/2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HurstParameter(f64);

impl HurstParameter {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.5 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::domain(format!(
                "Hurst index must lie in (1/2, 1), got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `alpha_H = H (2H - 1)`, the constant in front of the kernel
    /// `|r - u|^{2H-2}`.
    pub fn alpha(self) -> f64 {
        self.0 * (2.0 * self.0 - 1.0)
    }
}

/// `R_H(s, t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2`.
pub fn covariance_rh(s: f64, t: f64, hurst: HurstParameter) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::domain(format!(
            "fBm covariance needs nonnegative times, got ({s}, {t})"
        )));
    }
    Ok(rh(s, t, hurst.value()))
}

pub(crate) fn rh(s: f64, t: f64, h: f64) -> f64 {
    let e = 2.0 * h;
    0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e))
}

/// Autocovariance of fractional Gaussian noise at lag `k` for grid step
/// `step`: `(|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) step^{2H} / 2`.
pub fn fgn_autocovariance(k: usize, hurst: HurstParameter, step: f64) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!(
            "fGn step must be positive, got {step}"
        )));
    }
    Ok(unit_fgn_acov(k as f64, hurst.value()) * step.powf(2.0 * hurst.value()))
}

pub(crate) fn unit_fgn_acov(k: f64, h: f64) -> f64 {
    let e = 2.0 * h;
    0.5 * ((k + 1.0).abs().powf(e) - 2.0 * k.abs().powf(e) + (k - 1.0).abs().powf(e))
}
