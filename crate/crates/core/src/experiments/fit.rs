use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Least-squares line through `(log scale, log value)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub half_width: f64,
}

impl SlopeFit {
    pub fn contains(&self, lo: f64, hi: f64) -> bool {
        self.slope >= lo && self.slope <= hi
    }
}

/// Fits `log value = intercept + slope * log scale`.
pub fn fit_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 3 {
        return Err(Error::domain(format!(
            "slope fit needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    if let Some((s, v)) = pairs
        .iter()
        .find(|(s, v)| !(*s > 0.0) || !(*v > 0.0) || !s.is_finite() || !v.is_finite())
    {
        return Err(Error::domain(format!(
            "slope fit needs positive finite data, got ({s}, {v})"
        )));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::domain(
            "slope fit needs at least two distinct scales",
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        half_width: t * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_power() {
        let pairs: Vec<_> = (1..6).map(|k| (2f64.powi(-k), 4f64.powi(-k))).collect();
        let f = fit_slope(&pairs).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(f.half_width < 1e-10);
    }

    #[test]
    fn constant_values() {
        let pairs: Vec<_> = (1..6).map(|k| (2f64.powi(-k), 3.0)).collect();
        assert!(fit_slope(&pairs).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn noisy_slope_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let pairs: Vec<_> = (0..8)
            .map(|k| {
                let s = 2f64.powi(-k);
                (s, s * (1.0 + noise.sample(&mut rng)))
            })
            .collect();
        let f = fit_slope(&pairs).unwrap();
        assert!(f.contains(0.9, 1.1), "{f:?}");
        assert!(f.half_width > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_slope(&[(1.0, 1.0), (1.0, 2.0), (1.0, 1.0)]).is_err());
    }
}
