use std::fs;
use std::path::Path;

use slowfast::error::Error;
use slowfast::experiments::output::MANIFEST_NAME;
use slowfast::experiments::{
    parse_expression, parse_ini, run_experiment, ExperimentConfig, Manifest, Pipeline,
};

fn small(pipeline: &str, model: &str, dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "[experiment]\npipeline = {pipeline}\n\n[model]\n{model}\n\n\
         [scales]\neps_start = 2^-3\neps_ratio = 0.5\nlevels = 3\n\n\
         [run]\nsteps = 256\npaths = 120\nseed = 9\nrecord_every = 32\n\n\
         {extra}[outputs]\ndir = {}\nformats = csv+svg\n",
        dir.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn rates_run_is_reproducible_and_manifested() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small("rates", "name = ou-quadratic", tmp.path(), "");
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.pipeline, Pipeline::Rates);
    assert_eq!(report.manifest_path, tmp.path().join(MANIFEST_NAME));

    let fit = fs::read_to_string(tmp.path().join("strong_error_fit.csv")).unwrap();
    let mut lines = fit.lines();
    assert_eq!(
        lines.next(),
        Some("slope,intercept,r_squared,half_width,levels")
    );
    let slope: f64 = lines
        .next()
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(slope.is_finite());

    let manifest = Manifest::read(tmp.path()).unwrap();
    assert_eq!(manifest, report.manifest);
    assert!(manifest.verify(tmp.path()).unwrap().is_empty());
    assert!(manifest.files.iter().any(|f| f.path == "strong_error.svg"));

    let first: Vec<_> = read_all(tmp.path())
        .into_iter()
        .filter(|(n, _)| n != MANIFEST_NAME)
        .collect();
    run_experiment(&config).unwrap();
    let second: Vec<_> = read_all(tmp.path())
        .into_iter()
        .filter(|(n, _)| n != MANIFEST_NAME)
        .collect();
    assert_eq!(first, second);
    let again = Manifest::read(tmp.path()).unwrap();
    assert_eq!(again.files, manifest.files);
    assert_eq!(again.config_sha256, manifest.config_sha256);

    fs::write(tmp.path().join("stray.txt"), "x").unwrap();
    fs::write(tmp.path().join("strong_error.csv"), "altered").unwrap();
    let problems = again.verify(tmp.path()).unwrap();
    assert_eq!(
        problems,
        vec![
            "stray.txt: not in the manifest".to_string(),
            "strong_error.csv: checksum mismatch".to_string(),
        ]
    );
}

#[test]
fn default_rates_run_fills_the_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default_for(Pipeline::Rates, "ou-quadratic");
    config.outputs.dir = tmp.path().to_path_buf();
    let report = run_experiment(&config).unwrap();
    let fit = fs::read_to_string(tmp.path().join("strong_error_fit.csv")).unwrap();
    let row: Vec<&str> = fit.lines().nth(1).unwrap().split(',').collect();
    let slope: f64 = row[0].parse().unwrap();
    assert!(slope > 0.0, "{fit}");
    assert_eq!(row[4], "6");
    assert!(report.passed(), "{:?}", report.manifest.checks);
}

#[test]
fn every_pipeline_runs_at_small_scale() {
    let cases = [
        ("simulate", "c = -x + y^2\nsigma = 1\nf = -y\ntau = 1", ""),
        ("average", "name = ou-quadratic-sigma", ""),
        ("poisson", "name = ou-quadratic", ""),
        ("ergodic", "name = ou-quadratic", ""),
        ("fluctuations", "name = ou-quadratic", ""),
        (
            "extended",
            "name = ou-quadratic-extended",
            "[regime]\nkind = homogenization\nkappa = 1\n\n",
        ),
    ];
    for (pipeline, model, extra) in cases {
        let tmp = tempfile::tempdir().unwrap();
        let config = small(pipeline, model, tmp.path(), extra);
        let report = run_experiment(&config).unwrap_or_else(|e| panic!("{pipeline}: {e}"));
        assert!(!report.manifest.files.is_empty(), "{pipeline}");
        assert!(
            report.manifest.verify(tmp.path()).unwrap().is_empty(),
            "{pipeline}"
        );
        let saved = fs::read_to_string(tmp.path().join("config.ini")).unwrap();
        assert_eq!(
            ExperimentConfig::parse(&saved).unwrap(),
            config,
            "{pipeline}"
        );
    }
}

#[test]
fn invalid_expression_is_reported_at_its_file_offset() {
    let text = "[experiment]\npipeline = simulate\n[model]\nc = -x + * y\n";
    let offset = text.find('*').unwrap();
    match ExperimentConfig::parse(text) {
        Err(Error::Parse(e)) => assert_eq!(e.offset, offset, "{e}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn blow_up_surfaces_as_a_simulation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small(
        "simulate",
        "c = x^2\nsigma = 1\nf = -y\ntau = 1\nx0 = 10",
        tmp.path(),
        "",
    );
    assert!(matches!(
        run_experiment(&config),
        Err(Error::Simulation { .. } | Error::Numerical(_))
    ));
}

// The assertions of the fuzz targets, replayed over their seed corpora.

fn corpus(name: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(name);
    let files = read_all(&dir);
    assert!(!files.is_empty(), "{}", dir.display());
    files
}

#[test]
fn expression_fuzz_corpus() {
    for (name, data) in corpus("parse_expression") {
        let Ok(text) = std::str::from_utf8(&data) else {
            continue;
        };
        match parse_expression(text) {
            Ok(e) => {
                let again = parse_expression(&e.to_string()).expect("printed form parses");
                assert_eq!(again.tree, e.tree, "{name}");
                let _ = e.eval(0.5, -1.25);
            }
            Err(err) => assert!(err.offset <= text.len(), "{name}"),
        }
    }
}

#[test]
fn config_fuzz_corpus() {
    let mut parsed = 0;
    for (name, data) in corpus("parse_config") {
        let Ok(text) = std::str::from_utf8(&data) else {
            continue;
        };
        if let Err(e) = parse_ini(text) {
            assert!(e.offset <= text.len(), "{name}");
        }
        if let Ok(config) = ExperimentConfig::parse(text) {
            let again =
                ExperimentConfig::parse(&config.canonical()).expect("canonical form parses");
            assert_eq!(again, config, "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 5);
}
