use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use super::HurstParameter;
use crate::error::{Error, Result};
use crate::grid::UniformGrid;

/// Inner product `alpha_H ∫∫ φ(r) ψ(u) |r - u|^{2H-2} du dr` of two grid
/// functions on `grid`, both interpolated linearly within each cell.
///
/// Each pair of cells contributes a 2x2 bilinear form in the nodal values.
/// Its weights depend only on the cell offset `k`. For `|k| <= 1` the kernel
/// is singular on the cells and the weights are integrated in closed form;
/// further away an 8-point Gauss–Legendre rule is exact to rounding.
pub fn h_inner_product(
    phi: &[f64],
    psi: &[f64],
    grid: &UniformGrid,
    hurst: HurstParameter,
) -> Result<f64> {
    let len = grid.len();
    if phi.len() != len || psi.len() != len {
        return Err(Error::domain(format!(
            "grid functions of length {} and {} on a grid of {} points",
            phi.len(),
            psi.len(),
            len
        )));
    }
    let n = grid.steps();
    let gamma = 2.0 * hurst.value() - 2.0;
    let weights = cell_weights(n, gamma);

    // sum over cell pairs (a, b), k = a - b
    let mut total = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let mut acc = 0.0;
        for b in 0..n - k {
            let a = b + k;
            acc += bilinear(w, phi[a], phi[a + 1], psi[b], psi[b + 1]);
            if k > 0 {
                // pair (b, a) uses W(-k) = W(k)^T
                acc += bilinear(w, psi[a], psi[a + 1], phi[b], phi[b + 1]);
            }
        }
        total += acc;
    }
    Ok(hurst.alpha() * grid.step().powf(2.0 * hurst.value()) * total)
}

fn bilinear(w: &[[f64; 2]; 2], p0: f64, p1: f64, q0: f64, q1: f64) -> f64 {
    p0 * (w[0][0] * q0 + w[0][1] * q1) + p1 * (w[1][0] * q0 + w[1][1] * q1)
}

/// `W_pq(k) = ∫∫ e_p(s) e_q(u) |k + s - u|^γ ds du` over the unit square,
/// with `e_0(s) = 1 - s`, `e_1(s) = s`, for `k = 0..n`.
fn cell_weights(n: usize, gamma: f64) -> Vec<[[f64; 2]; 2]> {
    let gl = GaussLegendre::new(NonZeroUsize::new(8).expect("nonzero"));
    (0..n)
        .map(|k| {
            let mut w = [[0.0; 2]; 2];
            for (p, row) in w.iter_mut().enumerate() {
                for (q, slot) in row.iter_mut().enumerate() {
                    *slot = if k <= 1 {
                        closed_form_weight(k as f64, p, q, gamma)
                    } else {
                        let kf = k as f64;
                        let f = |v: f64| reduced_weight(p, q, v).eval(v) * (kf + v).powf(gamma);
                        gl.integrate(-1.0, 0.0, f) + gl.integrate(0.0, 1.0, f)
                    };
                }
            }
            w
        })
        .collect()
}

/// Cubic polynomial in `v`, coefficients in increasing degree.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Poly([f64; 4]);

impl Poly {
    fn constant(c: f64) -> Self {
        Poly([c, 0.0, 0.0, 0.0])
    }

    fn linear(c0: f64, c1: f64) -> Self {
        Poly([c0, c1, 0.0, 0.0])
    }

    fn add(self, o: Poly) -> Poly {
        let mut r = self.0;
        for (a, b) in r.iter_mut().zip(o.0) {
            *a += b;
        }
        Poly(r)
    }

    fn scale(self, s: f64) -> Poly {
        Poly(self.0.map(|c| c * s))
    }

    fn mul(self, o: Poly) -> Poly {
        let mut r = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 - i {
                r[i + j] += self.0[i] * o.0[j];
            }
        }
        debug_assert!((0..4).all(|i| (4 - i..4).all(|j| self.0[i] * o.0[j] == 0.0)));
        Poly(r)
    }

    fn eval(self, v: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * v + c)
    }

    /// Coefficients of `w ↦ self(w - k)`.
    fn shift(self, k: f64) -> Poly {
        let mut r = [0.0; 4];
        let binom = [
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 2.0, 1.0, 0.0],
            [1.0, 3.0, 3.0, 1.0],
        ];
        for (j, c) in self.0.iter().enumerate() {
            for i in 0..=j {
                r[i] += c * binom[j][i] * (-k).powi((j - i) as i32);
            }
        }
        Poly(r)
    }
}

/// `Q_pq(v) = ∫ e_p(s) e_q(s - v) ds` over `{s ∈ [0,1] : s - v ∈ [0,1]}`,
/// the density of the cell integrand along `v = s - u`. The polynomial for
/// the half `v >= 0` or `v < 0` is selected by the sign of `v`.
fn reduced_weight(p: usize, q: usize, v: f64) -> Poly {
    // e_p(s) = p0 + p1 s, e_q(s - v) = (q0 - q1 v) + q1 s
    let (p0, p1) = if p == 0 { (1.0, -1.0) } else { (0.0, 1.0) };
    let (q0, q1) = if q == 0 { (1.0, -1.0) } else { (0.0, 1.0) };
    let a = Poly::linear(p0 * q0, -p0 * q1);
    let b = Poly::linear(p0 * q1 + p1 * q0, -p1 * q1);
    let c = Poly::constant(p1 * q1);
    let (lo, hi) = if v >= 0.0 {
        (Poly::linear(0.0, 1.0), Poly::constant(1.0))
    } else {
        (Poly::constant(0.0), Poly::linear(1.0, 1.0))
    };
    let d1 = hi.add(lo.scale(-1.0));
    let d2 = hi.mul(hi).add(lo.mul(lo).scale(-1.0));
    let d3 = hi.mul(hi).mul(hi).add(lo.mul(lo).mul(lo).scale(-1.0));
    a.mul(d1)
        .add(b.mul(d2).scale(0.5))
        .add(c.mul(d3).scale(1.0 / 3.0))
}

/// `∫_lo^hi |w|^γ w^i dw`.
fn power_moment(i: usize, lo: f64, hi: f64, gamma: f64) -> f64 {
    let e = gamma + i as f64 + 1.0;
    let pos = |a: f64, b: f64| (b.powf(e) - a.powf(e)) / e;
    if lo >= 0.0 {
        pos(lo, hi)
    } else if hi <= 0.0 {
        let sign = if i.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * pos(-hi, -lo)
    } else {
        power_moment(i, lo, 0.0, gamma) + power_moment(i, 0.0, hi, gamma)
    }
}

fn closed_form_weight(k: f64, p: usize, q: usize, gamma: f64) -> f64 {
    let mut total = 0.0;
    for (lo, hi) in [(-1.0, 0.0), (0.0, 1.0)] {
        let poly = reduced_weight(p, q, 0.5 * (lo + hi)).shift(k);
        for (i, c) in poly.0.iter().enumerate() {
            if *c != 0.0 {
                total += c * power_moment(i, lo + k, hi + k, gamma);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::covariance_rh;

    fn h(v: f64) -> HurstParameter {
        HurstParameter::new(v).unwrap()
    }

    fn indicator(grid: &UniformGrid, t: f64) -> Vec<f64> {
        grid.times()
            .iter()
            .map(|&s| if s <= t + 1e-12 { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn reduced_weights_integrate_to_cell_products() {
        // ∫ Q_pq(v) dv = ∫ e_p ∫ e_q = 1/4
        let gl = GaussLegendre::new(NonZeroUsize::new(6).unwrap());
        for p in 0..2 {
            for q in 0..2 {
                let f = |v: f64| reduced_weight(p, q, v).eval(v);
                let tot = gl.integrate(-1.0, 0.0, f) + gl.integrate(0.0, 1.0, f);
                assert!((tot - 0.25).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_form_matches_quadrature_away_from_singularity() {
        let gamma = -0.5;
        let gl = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
        for k in [2.0, 3.0] {
            for p in 0..2 {
                for q in 0..2 {
                    let f = |v: f64| reduced_weight(p, q, v).eval(v) * (k + v).powf(gamma);
                    let quad = gl.integrate(-1.0, 0.0, f) + gl.integrate(0.0, 1.0, f);
                    let exact = closed_form_weight(k, p, q, gamma);
                    assert!(
                        (quad - exact).abs() < 1e-13,
                        "{k} {p}{q}: {quad} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn diagonal_cell_weights_sum_to_kernel_mass() {
        // Σ_pq W_pq(0) = ∫∫ |s-u|^γ = 2 / ((γ+1)(γ+2))
        let gamma = 2.0 * 0.75 - 2.0;
        let total: f64 = (0..2)
            .flat_map(|p| (0..2).map(move |q| closed_form_weight(0.0, p, q, gamma)))
            .sum();
        assert!((total - 2.0 / ((gamma + 1.0) * (gamma + 2.0))).abs() < 1e-14);
    }

    #[test]
    fn indicators_reproduce_covariance() {
        let grid = UniformGrid::new(1 << 12, 1.0).unwrap();
        for hv in [0.6, 0.75, 0.9] {
            for (s, t) in [(0.5, 0.5), (0.5, 1.0), (0.75, 1.0), (1.0, 1.0)] {
                let a = indicator(&grid, s);
                let b = indicator(&grid, t);
                let got = h_inner_product(&a, &b, &grid, h(hv)).unwrap();
                let want = covariance_rh(s, t, h(hv)).unwrap();
                assert!(
                    ((got - want) / want).abs() < 1e-3,
                    "H={hv} ({s},{t}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn bilinear_and_symmetric() {
        let grid = UniformGrid::new(20, 2.0).unwrap();
        let a: Vec<f64> = grid.times().iter().map(|t| t.sin()).collect();
        let b: Vec<f64> = grid.times().iter().map(|t| 1.0 + t * t).collect();
        let zero = vec![0.0; grid.len()];
        let hv = h(0.7);
        assert_eq!(h_inner_product(&zero, &b, &grid, hv).unwrap(), 0.0);
        let ab = h_inner_product(&a, &b, &grid, hv).unwrap();
        let ba = h_inner_product(&b, &a, &grid, hv).unwrap();
        assert!((ab - ba).abs() < 1e-12 * ab.abs());
        let a2: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
        assert!((h_inner_product(&a2, &b, &grid, hv).unwrap() - 3.0 * ab).abs() < 1e-12 * ab.abs());
        assert!(h_inner_product(&a[..5], &b, &grid, hv).is_err());
    }
}
