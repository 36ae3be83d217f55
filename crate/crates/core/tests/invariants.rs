//! Statistical invariants at moderate cost.

use rand::Rng;
use rand_distr::StandardNormal;
use slowfast::averaging::{
    averaged_drift, averaged_sigma, reference_measure, solve_limit_ode, solve_poisson_fd,
    solve_poisson_fk, strong_error_table, FkSettings, StrongErrorSettings,
};
use slowfast::experiments::ks_decreasing;
use slowfast::extended::{limit_measure, singular_term_gap, solve_correction_psi, RegimeSpec};
use slowfast::fluctuations::{
    corrector_outer_product, drift_correctors, noise_sums, sigma_phi_at, simulate_limit_theta,
    theta_ensemble, CorrectorGrid, LimitLawSpec, ThetaSettings,
};
use slowfast::sde::{fast_substeps, simulate_ensemble};
use slowfast::stats::{
    jarque_bera, ks_critical, ks_statistic, mean_estimate, variance_estimate, JARQUE_BERA_CRIT_1PCT,
};
use slowfast::{rng, ModelSpec, NoiseSource, ScaleParams, UniformGrid};

fn ou() -> ModelSpec {
    ModelSpec::registry("ou-quadratic").unwrap()
}

fn source(m: &ModelSpec, steps: usize, horizon: f64, eta: f64, seed: u64) -> NoiseSource {
    let grid = UniformGrid::new(steps, horizon).unwrap();
    NoiseSource::new(
        grid,
        m.hurst,
        m.dim_x,
        m.dim_y,
        fast_substeps(grid.step(), eta),
        seed,
    )
    .unwrap()
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let m = ModelSpec::registry("ou-quadratic-sigma").unwrap();
    let scales = ScaleParams::new(0.05, 0.01).unwrap();
    let src = source(&m, 128, 1.0, scales.eta, 4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_ensemble(&m, &scales, &src, 64).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (p, q) in a.paths.iter().zip(&b.paths) {
        assert_eq!(p.x, q.x);
        assert_eq!(p.y, q.y);
    }
    assert_eq!(a.seeds, b.seeds);
}

#[test]
fn fast_marginal_relaxes_as_eta_shrinks() {
    // at t = 0.2 the fast variable started at 0 has relaxed to N(0, 1/2)
    // only when t / eta is large
    let m = ou();
    let n = 2000;
    let mut r = rng::stream(5, 0, rng::TAG_AUX);
    let target: Vec<f64> = (0..n)
        .map(|_| r.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt())
        .collect();
    let mut ks = Vec::new();
    for eta in [0.5, 0.1, 0.02] {
        let scales = ScaleParams::new(0.01, eta).unwrap();
        let src = source(&m, 32, 0.2, eta, 6);
        let ens = simulate_ensemble(&m, &scales, &src, n).unwrap();
        let y: Vec<f64> = ens.paths.iter().map(|p| p.y_at(32)[0]).collect();
        ks.push(ks_statistic(&y, &target).unwrap());
    }
    let crit = ks_critical(n, n, 0.01);
    assert!(ks[0] > crit, "{ks:?}");
    assert!(ks_decreasing(&ks, crit) && ks[2] < crit, "{ks:?}");
}

#[test]
fn finite_differences_agree_with_feynman_kac() {
    let m = ou();
    let mu = reference_measure(&m, 1).unwrap();
    let fd = solve_poisson_fd(&m, |y| y * y - 0.5, &mu, (-7.0, 7.0), 2801).unwrap();
    for (i, y) in [-1.0, 0.5, 1.5].into_iter().enumerate() {
        let fk = solve_poisson_fk(
            &m,
            |y: &[f64]| y[0] * y[0] - 0.5,
            &[y],
            &FkSettings {
                n_paths: 4000,
                seed: 10 + i as u64,
                ..Default::default()
            },
        )
        .unwrap();
        let tol = 4.0 * fk.stderr + fk.tail + 1e-3;
        assert!(
            (fk.value - fd.value(y)).abs() <= tol,
            "y = {y}: {fk:?} vs {}",
            fd.value(y)
        );
    }
}

#[test]
fn averaged_coefficients_of_the_ou_model() {
    // the fast law is N(0, 1/2), so c̄(x) = 1/2 - x
    let m = ou();
    let mu = reference_measure(&m, 2).unwrap();
    for x in [-2.0, 0.0, 0.7, 3.0] {
        assert!((averaged_drift(&m, &mu, &[x])[0] - (0.5 - x)).abs() < 1e-9);
    }
    assert!((averaged_sigma(&m, &mu)[0] - 1.0).abs() < 1e-12);
    let xbar = solve_limit_ode(
        |x, out| out.copy_from_slice(&averaged_drift(&m, &mu, x)),
        &m.x0,
        2.0,
        1e-3,
    )
    .unwrap();
    for k in (0..xbar.grid.len()).step_by(250) {
        let t = xbar.grid.time(k);
        assert!((xbar.at(k)[0] - (0.5 + 0.5 * (-t).exp())).abs() < 1e-9);
    }
}

#[test]
fn strong_errors_decrease_along_the_ladder() {
    let ladder: Vec<ScaleParams> = (3..=6)
        .map(|k| {
            let e = 2f64.powi(-k);
            ScaleParams::new(e, e).unwrap()
        })
        .collect();
    let settings = StrongErrorSettings {
        n: 1024,
        n_paths: 400,
        seed: 3,
        ..Default::default()
    };
    let t = strong_error_table(&ou(), &ladder, &settings, None).unwrap();
    assert!(t.is_monotone(2.0), "{:?}", t.rows);
    assert!(t.rows[3].error < t.rows[0].error);
}

#[test]
fn noise_remainder_vanishes_with_eta() {
    // ∑ (σ(Y_k) - σ̄) ΔW^H_k loses variance as the fast variable averages out
    let m = ModelSpec::registry("ou-quadratic-sigma").unwrap();
    let mu = reference_measure(&m, 3).unwrap();
    let sbar = averaged_sigma(&m, &mu);
    let mut vars = Vec::new();
    for k in [2, 4, 6] {
        let eta = 2f64.powi(-k);
        let scales = ScaleParams::new(0.01, eta).unwrap();
        let src = source(&m, 256, 1.0, eta, 7);
        let sums: Vec<f64> = noise_sums(&m, &scales, &src, 2000, Some(&sbar))
            .unwrap()
            .into_iter()
            .map(|v| v[0])
            .collect();
        vars.push(variance_estimate(&sums));
    }
    for w in vars.windows(2) {
        assert!(w[1].value + 2.0 * w[1].stderr < w[0].value, "{vars:?}");
    }
}

#[test]
fn limit_law_marginal_is_gaussian() {
    let m = ou();
    let mu = reference_measure(&m, 4).unwrap();
    let xbar = solve_limit_ode(
        |x, out| out.copy_from_slice(&averaged_drift(&m, &mu, x)),
        &m.x0,
        1.0,
        1.0 / 512.0,
    )
    .unwrap();
    let law = LimitLawSpec::for_model(&m, &mu, &xbar, 1.0, &CorrectorGrid::default(), 9).unwrap();
    let th = simulate_limit_theta(&law, 4000, 64, 8).unwrap();
    assert!(th.at(0, 0).iter().all(|&v| v == 0.0));
    let end = th.marginal(th.n_records() - 1, 0);
    let jb = jarque_bera(&end);
    assert!(jb < JARQUE_BERA_CRIT_1PCT, "JB {jb}");
    assert!(mean_estimate(&end).agrees_with(0.0, 4.0, 0.0));
}

#[test]
fn corrector_covariance_root_squares_to_the_outer_product() {
    let m = ModelSpec::registry("ou-quadratic-sigma").unwrap();
    let mu = reference_measure(&m, 5).unwrap();
    let correctors = drift_correctors(&m, &mu, &[0.3], &CorrectorGrid::default()).unwrap();
    let outer = corrector_outer_product(&m, &correctors, &mu).unwrap();
    let root = sigma_phi_at(&m, &correctors, &mu).unwrap();
    assert!(outer[0] >= 0.0 && root[0] >= 0.0);
    assert!((root[0] * root[0] - outer[0]).abs() < 1e-12 * (1.0 + outer[0]));
}

#[test]
fn fluctuations_start_at_zero() {
    let m = ou();
    let mu = reference_measure(&m, 6).unwrap();
    let xbar = solve_limit_ode(
        |x, out| out.copy_from_slice(&averaged_drift(&m, &mu, x)),
        &m.x0,
        1.0,
        1.0 / 256.0,
    )
    .unwrap();
    let scales = ScaleParams::new(0.01, 0.01).unwrap();
    let settings = ThetaSettings {
        n_paths: 50,
        seed: 9,
        record_every: 16,
        components: false,
    };
    let th = theta_ensemble(&m, &scales, &xbar, &settings, Some(&mu)).unwrap();
    for p in 0..50 {
        assert_eq!(th.at(p, 0), &[0.0]);
    }
}

#[test]
fn extended_fast_measures_have_ou_moments() {
    // f + λ g = -(1 + λ) y with unit noise gives variance 1 / (2 (1 + λ))
    let m = ModelSpec::registry("ou-quadratic-extended").unwrap();
    for (reg, var) in [
        (RegimeSpec::homogenization(1.0).unwrap(), 0.5),
        (RegimeSpec::averaging(1.0, 0.0).unwrap(), 0.25),
        (RegimeSpec::averaging(3.0, 0.0).unwrap(), 0.125),
    ] {
        let mu = limit_measure(&m, &reg, 1).unwrap();
        assert!(mu.moment(0, 1).unwrap().abs() < 1e-9);
        assert!((mu.moment(0, 2).unwrap() - var).abs() < 1e-6, "{reg:?}");
    }
}

#[test]
fn singular_term_gap_is_centered_along_the_ladder() {
    let m = ModelSpec::registry("ou-quadratic-extended").unwrap();
    let reg = RegimeSpec::homogenization(1.0).unwrap();
    let mu = limit_measure(&m, &reg, 2).unwrap();
    let psi = solve_correction_psi(&m, &reg, &mu, &CorrectorGrid::default()).unwrap();
    for k in [2, 3, 4] {
        let scales = reg.scales(2f64.powi(-k)).unwrap();
        let src = source(&m, 256, 1.0, scales.eta, 11);
        let g: Vec<f64> = (0..400)
            .map(|p| singular_term_gap(&m, &scales, &psi, &src.bundle(p)).unwrap()[0])
            .collect();
        let e = mean_estimate(&g);
        assert!(
            e.stderr > 0.0 && e.agrees_with(0.0, 4.0, 0.0),
            "level {k}: {e:?}"
        );
    }
}
