//! The subcommand pipelines. Each one reads an [`ExperimentConfig`], writes
//! CSV tables (and SVG plots when asked) into the output directory, and
//! finishes with a manifest. Data files never contain timestamps, so a rerun
//! with the same config reproduces them byte for byte.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use super::config::{ExperimentConfig, Pipeline};
use super::output::{sha256_hex, Artifacts, Check, Manifest, SeedEntry};
use super::svg::{Plot, SeriesStyle};
use crate::averaging::{
    averaged_drift, averaged_sigma, ergodic_error_table, reference_measure, solve_limit_ode,
    strong_error_table, ErgodicSettings, ErrorTable, HBar, InvariantMeasureEstimate,
    LimitTrajectory, Reference, ScalarObservable, StrongErrorSettings,
};
use crate::error::{Error, Result};
use crate::extended::{
    check_centering, limit_measure, limit_ode_extended, simulate_extended, solve_correction_psi,
    Regime, RegimeSpec,
};
use crate::fbm::NoiseSource;
use crate::fluctuations::{
    compare_distributions, drift_correctors, sigma_phi_at, theta_ensemble, ComparisonThresholds,
    CorrectorGrid, FluctuationEnsemble, LimitLawSpec, ThetaSettings,
};
use crate::grid::UniformGrid;
use crate::model::{ModelSpec, ScaleParams};
use crate::sde::{check_conditions, fast_substeps, simulate_observed, SampleBox};
use crate::stats;

/// Acceptance band for the fitted rate slopes.
pub const SLOPE_BAND: (f64, f64) = (0.8, 1.2);

/// Times at which `Σ_Φ` is evaluated along the limit path before linear
/// interpolation.
pub const SIGMA_POINTS: usize = 9;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub pipeline: Pipeline,
    pub manifest: Manifest,
    pub manifest_path: std::path::PathBuf,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.manifest.checks.iter().all(|c| c.passed)
    }
}

/// Whether `ks` decreases along a ladder: every step may rise by at most
/// `tol`, and the last value is below the first.
pub fn ks_decreasing(ks: &[f64], tol: f64) -> bool {
    ks.len() >= 2 && ks.windows(2).all(|w| w[1] <= w[0] + tol) && ks[ks.len() - 1] < ks[0]
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let model = config.model.build()?;
    let mut out = Artifacts::create(&config.outputs.dir)?;
    let canonical = config.canonical();
    out.write("config.ini", canonical.as_bytes())?;
    let ctx = Ctx {
        config,
        model: &model,
    };
    let checks = match config.pipeline {
        Pipeline::Simulate => ctx.simulate(&mut out)?,
        Pipeline::Average => ctx.average(&mut out)?,
        Pipeline::Poisson => ctx.poisson(&mut out)?,
        Pipeline::Rates => ctx.rates(&mut out)?,
        Pipeline::Ergodic => ctx.ergodic(&mut out)?,
        Pipeline::Fluctuations => ctx.fluctuations(&mut out)?,
        Pipeline::Extended => ctx.extended(&mut out)?,
    };
    let mut checks_csv = String::from("check,passed,detail\n");
    for c in &checks {
        let _ = writeln!(
            checks_csv,
            "{},{},{}",
            csv_field(&c.name),
            c.passed,
            csv_field(&c.detail)
        );
    }
    out.write("checks.csv", checks_csv.as_bytes())?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        pipeline: config.pipeline.name().into(),
        config_sha256: sha256_hex(canonical.as_bytes()),
        seeds: vec![SeedEntry {
            purpose: "master; noise, measure and limit streams derive from it".into(),
            seed: config.run.seed,
        }],
        threads: rayon::current_num_threads(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        files: Vec::new(),
        checks,
    };
    let (manifest_path, manifest) = out.finish(manifest)?;
    Ok(RunReport {
        pipeline: config.pipeline,
        manifest,
        manifest_path,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    model: &'a ModelSpec,
}

impl Ctx<'_> {
    fn svg(&self) -> bool {
        self.config.outputs.format.svg()
    }

    fn grid(&self) -> Result<UniformGrid> {
        UniformGrid::new(self.config.run.steps, self.config.run.horizon)
    }

    fn ladder(&self) -> Result<Vec<ScaleParams>> {
        self.config.scales.ladder(self.config.regime.as_ref())
    }

    fn regime_or_base(&self) -> Result<Option<RegimeSpec>> {
        match (self.config.regime, self.model.is_extended()) {
            (Some(r), _) => Ok(Some(r)),
            (None, false) => Ok(None),
            (None, true) => Err(Error::Config(
                "an extended model needs a [regime] section".into(),
            )),
        }
    }

    fn measure(&self) -> Result<InvariantMeasureEstimate> {
        reference_measure(&self.model.base(), self.config.run.seed)
    }

    fn limit_path(&self, mu: &InvariantMeasureEstimate) -> Result<LimitTrajectory> {
        let model = self.model;
        let grid = self.grid()?;
        solve_limit_ode(
            |x, out| out.copy_from_slice(&averaged_drift(model, mu, x)),
            &model.x0,
            grid.horizon(),
            grid.step(),
        )
    }

    fn write_table(
        &self,
        out: &mut Artifacts,
        stem: &str,
        table: &ErrorTable,
        x_label: &str,
    ) -> Result<Vec<Check>> {
        out.write_with(&format!("{stem}.csv"), |w| table.write_csv(w))?;
        let mut fit_csv = String::from("slope,intercept,r_squared,half_width,levels\n");
        let check = match &table.fit {
            Some(f) => {
                let _ = writeln!(
                    fit_csv,
                    "{},{},{},{},{}",
                    f.slope,
                    f.intercept,
                    f.r_squared,
                    f.half_width,
                    table.rows.len()
                );
                Check::new(
                    &format!("{stem} slope in [{}, {}]", SLOPE_BAND.0, SLOPE_BAND.1),
                    f.slope >= SLOPE_BAND.0 && f.slope <= SLOPE_BAND.1,
                    format!(
                        "slope {:.4} +/- {:.4}, r2 {:.4}",
                        f.slope, f.half_width, f.r_squared
                    ),
                )
            }
            None => {
                let _ = writeln!(fit_csv, ",,,,{}", table.rows.len());
                Check::new(
                    &format!("{stem} slope fitted"),
                    false,
                    "needs at least three levels with positive errors",
                )
            }
        };
        out.write(&format!("{stem}_fit.csv"), fit_csv.as_bytes())?;
        if self.svg() {
            let data: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.scale, r.root().0)).collect();
            let mut plot = Plot::log_log(stem, x_label, "error^(1/p)").with(
                "measured",
                data,
                SeriesStyle::Markers,
            );
            if let Some(f) = &table.fit {
                let line = table
                    .rows
                    .iter()
                    .map(|r| (r.scale, f.intercept.exp() * r.scale.powf(f.slope)))
                    .collect();
                plot = plot.with(
                    &format!("fit, slope {:.3}", f.slope),
                    line,
                    SeriesStyle::Line,
                );
            }
            out.write(&format!("{stem}.svg"), plot.render().as_bytes())?;
        }
        Ok(vec![check])
    }

    fn simulate(&self, out: &mut Artifacts) -> Result<Vec<Check>> {
        let model = self.model;
        let run = &self.config.run;
        let grid = self.grid()?;
        let regime = self.regime_or_base()?;
        let report = check_conditions(
            model,
            &SampleBox::symmetric(model.dim_x, 5.0, model.dim_y, 5.0),
            64,
        );
        let mut cond = String::from("condition,passed,worst,detail\n");
        for v in &report.verdicts {
            let _ = writeln!(
                cond,
                "{},{},{},{}",
                v.name,
                v.passed,
                v.worst,
                csv_field(&v.detail)
            );
        }
        out.write("conditions.csv", cond.as_bytes())?;

        let mut terminal = String::from("level,epsilon,eta,substeps,mean_x,stderr_x,var_x\n");
        let mut plot = Plot::linear("sample paths", "t", "x1");
        for (i, scales) in self.ladder()?.iter().enumerate() {
            let n_sub = fast_substeps(grid.step(), scales.eta);
            let source =
                NoiseSource::new(grid, model.hurst, model.dim_x, model.dim_y, n_sub, run.seed)?;
            let terminal_x = |path: u64| -> Result<(Vec<f64>, Option<crate::sde::SamplePath>)> {
                let noise = Arc::new(source.bundle(path));
                let keep = path == 0;
                if let Some(r) = &regime {
                    let p =
                        simulate_extended(model, scales, r, grid.steps(), grid.horizon(), noise)?;
                    Ok((p.terminal_x().to_vec(), keep.then_some(p)))
                } else if keep {
                    let p = crate::sde::simulate_pair(
                        model,
                        scales,
                        grid.steps(),
                        grid.horizon(),
                        noise,
                    )?;
                    Ok((p.terminal_x().to_vec(), Some(p)))
                } else {
                    let mut last = Vec::new();
                    simulate_observed(
                        model,
                        scales,
                        grid.steps(),
                        grid.horizon(),
                        &noise,
                        |k, x, _| {
                            if k == grid.steps() {
                                last = x.to_vec();
                            }
                        },
                    )?;
                    Ok((last, None))
                }
            };
            let results: Vec<(Vec<f64>, Option<crate::sde::SamplePath>)> = (0..run.paths as u64)
                .into_par_iter()
                .map(terminal_x)
                .collect::<Result<_>>()?;
            let first = results[0].1.as_ref().expect("path 0 is kept");
            out.write_with(&format!("path_level{i}.csv"), |w| first.write_csv(w))?;
            plot = plot.with(
                &format!("eps {:.3e}", scales.eps),
                (0..grid.len())
                    .map(|k| (grid.time(k), first.x_at(k)[0]))
                    .collect(),
                SeriesStyle::Line,
            );
            let xs: Vec<f64> = results.iter().map(|r| r.0[0]).collect();
            let m = stats::mean_estimate(&xs);
            let _ = writeln!(
                terminal,
                "{i},{},{},{n_sub},{},{},{}",
                scales.eps,
                scales.eta,
                m.value,
                m.stderr,
                stats::variance(&xs)
            );
        }
        out.write("terminal.csv", terminal.as_bytes())?;
        if self.svg() {
            out.write("paths.svg", plot.render().as_bytes())?;
        }
        Ok(vec![Check::new(
            "growth and recurrence conditions on the probe box",
            report.all_passed(),
            report
                .verdicts
                .iter()
                .filter(|v| !v.passed)
                .map(|v| v.name)
                .collect::<Vec<_>>()
                .join(" "),
        )])
    }

    fn average(&self, out: &mut Artifacts) -> Result<Vec<Check>> {
        let mu = self.measure()?;
        let mut m = String::from("coord,order,moment\n");
        for c in 0..mu.dim() {
            for o in 1..=4 {
                let _ = writeln!(m, "{c},{o},{}", mu.moment(c, o)?);
            }
        }
        out.write("measure.csv", m.as_bytes())?;
        let mut avg = String::from("quantity,index,value\n");
        for (i, v) in averaged_drift(self.model, &mu, &self.model.x0)
            .iter()
            .enumerate()
        {
            let _ = writeln!(avg, "c_bar_at_x0,{i},{v}");
        }
        for (i, v) in averaged_sigma(self.model, &mu).iter().enumerate() {
            let _ = writeln!(avg, "sigma_bar,{i},{v}");
        }
        out.write("averaged.csv", avg.as_bytes())?;
        let xbar = self.limit_path(&mu)?;
        out.write_with("limit_ode.csv", |w| write_trajectory(&xbar, w))?;
        if self.svg() {
            let pts = (0..xbar.grid.len())
                .map(|k| (xbar.grid.time(k), xbar.at(k)[0]))
                .collect();
            let plot =
                Plot::linear("averaged limit", "t", "x1").with("limit ODE", pts, SeriesStyle::Line);
            out.write("limit_ode.svg", plot.render().as_bytes())?;
        }
        let finite = xbar.values.iter().all(|v| v.is_finite());
        Ok(vec![Check::new("limit ODE finite", finite, "")])
    }

    fn poisson(&self, out: &mut Artifacts) -> Result<Vec<Check>> {
        let model = self.model.base();
        let mu = self.measure()?;
        let correctors = drift_correctors(&model, &mu, &model.x0, &CorrectorGrid::default())?;
        let mut checks = Vec::new();
        for (i, phi) in correctors.iter().enumerate() {
            out.write_with(&format!("corrector_x{}.csv", i + 1), |w| phi.write_csv(w))?;
            checks.push(Check::new(
                &format!("corrector {} centered", i + 1),
                phi.is_centered(),
                format!(
                    "residual {:.3e}, tolerance {:.3e}",
                    phi.centering_residual,
                    phi.tol_center()
                ),
            ));
        }
        let sp = sigma_phi_at(&model, &correctors, &mu)?;
        let d = model.dim_x;
        let mut s = String::from("row,col,sigma_phi\n");
        for r in 0..d {
            for c in 0..d {
                let _ = writeln!(s, "{r},{c},{}", sp[r * d + c]);
            }
        }
        out.write("sigma_phi.csv", s.as_bytes())?;
        if self.svg() {
            let mut plot = Plot::linear("drift corrector", "y", "phi");
            for (i, phi) in correctors.iter().enumerate() {
                let step = (phi.grid.len() / 400).max(1);
                let pts = phi
                    .grid
                    .iter()
                    .zip(&phi.values)
                    .step_by(step)
                    .map(|(a, b)| (*a, *b))
                    .collect();
                plot = plot.with(&format!("phi_{}", i + 1), pts, SeriesStyle::Line);
            }
            out.write("corrector.svg", plot.render().as_bytes())?;
        }
        Ok(checks)
    }

    fn rates(&self, out: &mut Artifacts) -> Result<Vec<Check>> {
        if self.model.is_extended() {
            return Err(Error::Config(
                "the rates pipeline takes a base model; use extended".into(),
            ));
        }
        let run = &self.config.run;
        let settings = StrongErrorSettings {
            n: run.steps,
            horizon: run.horizon,
            p: run.p,
            n_paths: run.paths,
            seed: run.seed,
            reference: Reference::Averaged,
        };
        let table = strong_error_table(self.model, &self.ladder()?, &settings, None)?;
        self.write_table(out, "strong_error", &table, "sqrt(eps) + sqrt(eta)")
    }

    fn ergodic(&self, out: &mut Artifacts) -> Result<Vec<Check>> {
        if self.model.is_extended() {
            return Err(Error::Config(
                "the ergodic pipeline takes a base model".into(),
            ));
        }
        let run = &self.config.run;
        let observable = match &run.observable {
            Some(e) => e.clone(),
            None => super::expr::parse_expression("y^2").expect("constant expression"),
        };
        if self.model.dim_x != 1 || self.model.dim_y != 1 {
            return Err(Error::UnsupportedDimension {
                dim: self.model.dim_y,
                hint: "expression observables take scalar x and y",
            });
        }
        let h: ScalarObservable =
            Arc::new(move |x: &[f64], y: &[f64]| observable.eval(x[0], y[0]).unwrap_or(f64::NAN));
        let settings = ErgodicSettings {
            eps: None,
            n: run.steps,
            horizon: run.horizon,
            p: run.p,
            n_paths: run.paths,
            seed: run.seed,
        };
        let etas = &self.config.scales.eps;
        let table = ergodic_error_table(self.model, h, HBar::Estimated, etas, &settings, None)?;
        self.write_table(out, "ergodic_error", &table, "sqrt(eta)")
    }

    fn fluctuations(&self, out: &mut Artifacts) -> Result<Vec<Check>> {
        if self.model.is_extended() {
            return Err(Error::Config(
                "the fluctuations pipeline takes a base model".into(),
            ));
        }
        let run = &self.config.run;
        let mu = self.measure()?;
        let xbar = self.limit_path(&mu)?;
        let grid = xbar.grid;
        let times: Vec<f64> = [0.5, 1.0]
            .iter()
            .filter(|&&f| {
                let k = (f * grid.steps() as f64).round() as usize;
                k.is_multiple_of(run.record_every)
            })
            .map(|f| f * grid.horizon())
            .collect();
        if times.is_empty() {
            return Err(Error::Config("record_every must divide steps / 2".into()));
        }
        let thresholds = ComparisonThresholds::default();
        let mut ks_csv = String::from("level,epsilon,eta,time,ks,ks_crit\n");
        let mut var_csv =
            String::from("level,epsilon,eta,time,var_theta,stderr_theta,var_limit,stderr_limit\n");
        let mut ks_by_time: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
        let mut worst_defect: f64 = 0.0;
        let mut crit = 0.0;
        let mut last: Option<(FluctuationEnsemble, FluctuationEnsemble)> = None;
        let ladder = self.ladder()?;
        for (i, scales) in ladder.iter().enumerate() {
            let settings = ThetaSettings {
                n_paths: run.paths,
                seed: run.seed,
                record_every: run.record_every,
                components: true,
            };
            let theta = theta_ensemble(self.model, scales, &xbar, &settings, Some(&mu))?;
            worst_defect = worst_defect.max(theta.decomposition_defect().unwrap_or(f64::INFINITY));
            let law = LimitLawSpec::for_model(
                self.model,
                &mu,
                &xbar,
                scales.lambda,
                &CorrectorGrid::default(),
                SIGMA_POINTS,
            )?;
            let limit = crate::fluctuations::simulate_limit_theta(
                &law,
                run.paths,
                run.record_every,
                run.seed,
            )?;
            let report = compare_distributions(&theta, &limit, &times, 4, &thresholds)?;
            out.write_with(&format!("comparison_level{i}.csv"), |w| report.write_csv(w))?;
            for (j, &t) in times.iter().enumerate() {
                let m = report
                    .marginals
                    .iter()
                    .find(|m| m.time == t && m.coord == 0)
                    .expect("compared");
                crit = m.ks_crit;
                ks_by_time[j].push(m.ks);
                let _ = writeln!(
                    ks_csv,
                    "{i},{},{},{t},{},{}",
                    scales.eps, scales.eta, m.ks, m.ks_crit
                );
                let a = stats::variance_estimate(
                    &theta.marginal(theta.record_of(t).expect("recorded"), 0),
                );
                let b = stats::variance_estimate(
                    &limit.marginal(limit.record_of(t).expect("recorded"), 0),
                );
                let _ = writeln!(
                    var_csv,
                    "{i},{},{},{t},{},{},{},{}",
                    scales.eps, scales.eta, a.value, a.stderr, b.value, b.stderr
                );
            }
            last = Some((theta, limit));
        }
        out.write("ks.csv", ks_csv.as_bytes())?;
        out.write("variance.csv", var_csv.as_bytes())?;
        if let (true, Some((theta, limit))) = (self.svg(), &last) {
            let t = *times.last().expect("nonempty");
            let plot = Plot::linear(&format!("CDF of theta at t = {t}"), "theta", "F")
                .with_cdf(
                    "finest level",
                    &theta.marginal(theta.record_of(t).expect("recorded"), 0),
                )
                .with_cdf(
                    "limit",
                    &limit.marginal(limit.record_of(t).expect("recorded"), 0),
                );
            out.write("theta_cdf.svg", plot.render().as_bytes())?;
        }
        let mut checks = vec![Check::new(
            "decomposition identity",
            worst_defect <= 1e-10,
            format!("relative defect {worst_defect:.3e}"),
        )];
        if ladder.len() >= 2 {
            for (j, t) in times.iter().enumerate() {
                checks.push(Check::new(
                    &format!("KS at t = {t} decreasing along the ladder"),
                    ks_decreasing(&ks_by_time[j], crit),
                    format!("{:?}", ks_by_time[j]),
                ));
            }
        }
        Ok(checks)
    }

    fn extended(&self, out: &mut Artifacts) -> Result<Vec<Check>> {
        let model = self.model;
        let run = &self.config.run;
        let regime = self
            .config
            .regime
            .unwrap_or(RegimeSpec::homogenization(0.0)?);
        let grid = self.grid()?;
        let mu = limit_measure(model, &regime, run.seed)?;
        let mut checks = Vec::new();
        if model.b.is_some() {
            let c = check_centering(model, &mu)?;
            let mut s = String::from("coord,mean_b,stderr\n");
            for (i, e) in c.values.iter().enumerate() {
                let _ = writeln!(s, "{i},{},{}", e.value, e.stderr);
            }
            out.write("centering.csv", s.as_bytes())?;
            checks.push(Check::new(
                "b centered under the fast measure",
                c.passed,
                "",
            ));
        }
        let psi = match regime.regime() {
            Regime::Homogenization => Some(solve_correction_psi(
                model,
                &regime,
                &mu,
                &CorrectorGrid::default(),
            )?),
            Regime::Averaging => None,
        };
        if let Some(psi) = &psi {
            for (i, p) in psi.iter().enumerate() {
                out.write_with(&format!("psi_x{}.csv", i + 1), |w| p.write_csv(w))?;
            }
        }
        let xbar = limit_ode_extended(
            model,
            &regime,
            psi.as_deref(),
            &mu,
            &model.x0,
            grid.horizon(),
            grid.step(),
        )?;
        out.write_with("limit_ode.csv", |w| write_trajectory(&xbar, w))?;

        let ladder = regime.ladder(&self.config.scales.eps)?;
        let p = run.p;
        let mut rows = Vec::new();
        for scales in &ladder {
            let n_sub = fast_substeps(grid.step(), scales.eta);
            let source =
                NoiseSource::new(grid, model.hurst, model.dim_x, model.dim_y, n_sub, run.seed)?;
            let sups: Vec<f64> = (0..run.paths as u64)
                .into_par_iter()
                .map(|path| {
                    let x = simulate_extended(
                        model,
                        scales,
                        &regime,
                        grid.steps(),
                        grid.horizon(),
                        Arc::new(source.bundle(path)),
                    )?;
                    let sup = (0..grid.len())
                        .map(|k| {
                            x.x_at(k)
                                .iter()
                                .zip(xbar.at(k))
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                                .sqrt()
                        })
                        .fold(0.0, f64::max);
                    Ok(sup.powf(p))
                })
                .collect::<Result<_>>()?;
            let e = stats::mean_estimate(&sups);
            rows.push(crate::averaging::ErrorRow {
                eps: scales.eps,
                eta: scales.eta,
                p,
                error: e.value,
                stderr: if e.stderr.is_finite() { e.stderr } else { 0.0 },
                scale: scales.eps.sqrt(),
            });
        }
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.scale, r.root().0)).collect();
        let table = ErrorTable {
            fit: super::fit::fit_slope(&pairs).ok(),
            rows,
        };
        out.write_with("extended_error.csv", |w| table.write_csv(w))?;
        if self.svg() {
            let data = table.rows.iter().map(|r| (r.scale, r.root().0)).collect();
            let plot = Plot::log_log("extended model error", "sqrt(eps)", "error^(1/p)").with(
                "measured",
                data,
                SeriesStyle::Markers,
            );
            out.write("extended_error.svg", plot.render().as_bytes())?;
        }
        let finite = table.rows.iter().all(|r| r.error.is_finite());
        checks.push(Check::new("extended errors finite", finite, ""));
        Ok(checks)
    }
}

fn write_trajectory<W: Write>(t: &LimitTrajectory, mut w: W) -> Result<()> {
    let mut header = String::from("t");
    for i in 1..=t.dim {
        let _ = write!(header, ",x{i}");
    }
    writeln!(w, "{header}")?;
    for k in 0..t.grid.len() {
        let mut line = format!("{}", t.grid.time(k));
        for v in t.at(k) {
            let _ = write!(line, ",{v}");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_trend() {
        assert!(ks_decreasing(&[0.3, 0.2, 0.21, 0.05], 0.02));
        assert!(!ks_decreasing(&[0.3, 0.2, 0.25, 0.05], 0.02));
        assert!(!ks_decreasing(&[0.1, 0.1], 0.02));
        assert!(!ks_decreasing(&[0.1], 0.02));
    }
}
