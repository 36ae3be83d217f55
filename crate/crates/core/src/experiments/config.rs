//! Experiment configuration files.
//!
//! The format is line oriented:
//!
//! ```text
//! file    := line*
//! line    := ws* (comment | section | entry)? ws* '\n'
//! comment := ('#' | ';') any*
//! section := '[' name ']'
//! entry   := key ws* '=' ws* value
//! name    := [A-Za-z0-9_-]+
//! key     := [A-Za-z0-9_-]+
//! ```
//!
//! Entries must follow a section header. Sections and keys are case
//! sensitive, and a key may appear at most once per section. Values run to
//! the end of the line with surrounding whitespace trimmed; a `#` inside a
//! value is part of the value. Numeric values are constant expressions, so
//! `eps = 2^-4, 2^-5` is accepted.
//!
//! Recognised sections and keys:
//!
//! | section      | keys |
//! |--------------|------|
//! | `experiment` | `pipeline` (simulate, average, poisson, rates, ergodic, fluctuations, extended) |
//! | `model`      | `name` (registry model) or `c`, `sigma`, `f`, `tau` and optionally `b`, `g`; `hurst`, `x0`, `y0` |
//! | `scales`     | `eps` (comma list) or `eps_start`, `eps_ratio`, `levels`; `eta` (`eps` or a comma list) |
//! | `run`        | `horizon`, `steps`, `paths`, `p`, `seed`, `record_every`, `observable` |
//! | `regime`     | `kind` (homogenization, averaging), `lambda`, `kappa` |
//! | `outputs`    | `dir`, `formats` (csv, csv+svg) |

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, ParseError, Result};
use crate::experiments::expr::{parse_expression, CoefficientExpr, ModelExpressions};
use crate::extended::RegimeSpec;
use crate::fbm::HurstParameter;
use crate::model::{ModelSpec, ScaleParams};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IniEntry {
    pub key: String,
    pub value: String,
    /// Byte offset of the first character of the value.
    pub value_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IniSection {
    pub name: String,
    pub offset: usize,
    pub entries: Vec<IniEntry>,
}

impl IniSection {
    pub fn get(&self, key: &str) -> Option<&IniEntry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IniDocument {
    pub sections: Vec<IniSection>,
}

impl IniDocument {
    pub fn section(&self, name: &str) -> Option<&IniSection> {
        self.sections.iter().find(|s| s.name == name)
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'-')
}

pub fn parse_ini(text: &str) -> std::result::Result<IniDocument, ParseError> {
    let mut doc = IniDocument::default();
    let mut line_start = 0;
    for raw in text.split_inclusive('\n') {
        let start = line_start;
        line_start += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        let lead = line.len() - line.trim_start().len();
        let body = line.trim();
        let at = start + lead;
        if body.is_empty() || body.starts_with('#') || body.starts_with(';') {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ParseError::new(at + body.len(), "missing ']' after section name"))?
                .trim();
            if !is_name(name) {
                return Err(ParseError::new(
                    at + 1,
                    format!("invalid section name '{name}'"),
                ));
            }
            if doc.section(name).is_some() {
                return Err(ParseError::new(at, format!("duplicate section [{name}]")));
            }
            doc.sections.push(IniSection {
                name: name.to_owned(),
                offset: at,
                entries: Vec::new(),
            });
            continue;
        }
        let eq = body.find('=').ok_or_else(|| {
            ParseError::new(at, "expected 'key = value', a section header or a comment")
        })?;
        let key = body[..eq].trim_end();
        if !is_name(key) {
            return Err(ParseError::new(at, format!("invalid key '{key}'")));
        }
        let after = &body[eq + 1..];
        let value = after.trim();
        let value_offset = at + eq + 1 + (after.len() - after.trim_start().len());
        let section = doc
            .sections
            .last_mut()
            .ok_or_else(|| ParseError::new(at, "entry before any section header"))?;
        if section.get(key).is_some() {
            return Err(ParseError::new(
                at,
                format!("duplicate key '{key}' in [{}]", section.name),
            ));
        }
        section.entries.push(IniEntry {
            key: key.to_owned(),
            value: value.to_owned(),
            value_offset,
        });
    }
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Simulate,
    Average,
    Poisson,
    Rates,
    Ergodic,
    Fluctuations,
    Extended,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::Simulate,
        Pipeline::Average,
        Pipeline::Poisson,
        Pipeline::Rates,
        Pipeline::Ergodic,
        Pipeline::Fluctuations,
        Pipeline::Extended,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Simulate => "simulate",
            Pipeline::Average => "average",
            Pipeline::Poisson => "poisson",
            Pipeline::Rates => "rates",
            Pipeline::Ergodic => "ergodic",
            Pipeline::Fluctuations => "fluctuations",
            Pipeline::Extended => "extended",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    CsvSvg,
}

impl OutputFormat {
    pub fn svg(self) -> bool {
        self == OutputFormat::CsvSvg
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::CsvSvg => "csv+svg",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "csv+svg" => Ok(OutputFormat::CsvSvg),
            other => Err(Error::Config(format!(
                "unknown output format '{other}', expected csv or csv+svg"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ModelSource {
    Registry(String),
    Inline(ModelExpressions),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub source: ModelSource,
    pub hurst: Option<f64>,
    pub x0: Option<f64>,
    pub y0: Option<f64>,
}

impl ModelConfig {
    pub fn registry(name: &str) -> Self {
        Self {
            source: ModelSource::Registry(name.to_owned()),
            hurst: None,
            x0: None,
            y0: None,
        }
    }

    /// Inline models default to `H = 0.75`, `x0 = 1`, `y0 = 0`, like the
    /// registry.
    pub fn build(&self) -> Result<ModelSpec> {
        let mut model = match &self.source {
            ModelSource::Registry(name) => ModelSpec::registry(name)?,
            ModelSource::Inline(e) => e.to_model(
                "inline",
                HurstParameter::new(self.hurst.unwrap_or(0.75))
                    .map_err(|e| Error::Config(e.to_string()))?,
                self.x0.unwrap_or(1.0),
                self.y0.unwrap_or(0.0),
            )?,
        };
        if let Some(h) = self.hurst {
            model =
                model.with_hurst(HurstParameter::new(h).map_err(|e| Error::Config(e.to_string()))?);
        }
        if self.x0.is_some() || self.y0.is_some() {
            let x0 = self.x0.map_or_else(|| model.x0.clone(), |v| vec![v]);
            let y0 = self.y0.map_or_else(|| model.y0.clone(), |v| vec![v]);
            model = model
                .with_initial(x0, y0)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EtaRule {
    EqualEps,
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalesConfig {
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    pub eta: EtaRule,
}

impl ScalesConfig {
    pub fn geometric(start: f64, ratio: f64, levels: usize) -> Result<Self> {
        if !(start > 0.0 && start.is_finite()) || !(ratio > 0.0 && ratio < 1.0) || levels == 0 {
            return Err(Error::Config(
                "geometric ladder needs eps_start > 0, 0 < eps_ratio < 1 and levels >= 1".into(),
            ));
        }
        let eps = (0..levels).map(|k| start * ratio.powi(k as i32)).collect();
        Self::new(eps, EtaRule::EqualEps)
    }

    pub fn new(eps: Vec<f64>, eta: EtaRule) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::Config("the scale ladder is empty".into()));
        }
        if eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config("ladder values must be positive".into()));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "the eps ladder must be strictly decreasing".into(),
            ));
        }
        if let EtaRule::List(eta) = &eta {
            if eta.len() != eps.len() {
                return Err(Error::Config(format!(
                    "eta has {} entries but eps has {}",
                    eta.len(),
                    eps.len()
                )));
            }
            if eta.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                return Err(Error::Config("ladder values must be positive".into()));
            }
        }
        Ok(Self { eps, eta })
    }

    /// Scale parameters per level. A regime overrides the eta rule.
    pub fn ladder(&self, regime: Option<&RegimeSpec>) -> Result<Vec<ScaleParams>> {
        if let Some(r) = regime {
            return r.ladder(&self.eps);
        }
        self.eps
            .iter()
            .enumerate()
            .map(|(i, &eps)| match &self.eta {
                EtaRule::EqualEps => ScaleParams::new(eps, eps),
                EtaRule::List(eta) => ScaleParams::new(eps, eta[i]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub p: f64,
    pub seed: u64,
    pub record_every: usize,
    /// Observable `h(x, y)` for the ergodic pipeline, `y^2` when absent.
    pub observable: Option<CoefficientExpr>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 4096,
            paths: 2000,
            p: 2.0,
            seed: 1,
            record_every: 64,
            observable: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub model: ModelConfig,
    pub scales: ScalesConfig,
    pub run: RunConfig,
    pub regime: Option<RegimeSpec>,
    pub outputs: OutputConfig,
}

impl ExperimentConfig {
    /// Defaults for a pipeline on a registry model: ladder
    /// `eps = eta = 2^-4 .. 2^-9`. The extended pipeline instead runs the
    /// homogenization regime with `kappa = 1` (`eta = eps^2`) on
    /// `eps = 2^-2 .. 2^-6`, which keeps the fast substeps affordable.
    pub fn default_for(pipeline: Pipeline, model: &str) -> Self {
        let (scales, regime) = if pipeline == Pipeline::Extended {
            (
                ScalesConfig::geometric(0.25, 0.5, 5),
                Some(RegimeSpec::homogenization(1.0).expect("valid default regime")),
            )
        } else {
            (ScalesConfig::geometric(0.0625, 0.5, 6), None)
        };
        Self {
            pipeline,
            model: ModelConfig::registry(model),
            scales: scales.expect("valid default ladder"),
            run: RunConfig::default(),
            regime,
            outputs: OutputConfig::default(),
        }
    }

    /// Registry model a pipeline runs on when none is named.
    pub fn default_model(pipeline: Pipeline) -> &'static str {
        if pipeline == Pipeline::Extended {
            "ou-quadratic-extended"
        } else {
            "ou-quadratic"
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_for(text, None)
    }

    /// Like [`ExperimentConfig::parse`], with `pipeline` standing in for a
    /// missing `[experiment]` section. A file naming a different pipeline is
    /// an error.
    pub fn parse_for(text: &str, pipeline: Option<Pipeline>) -> Result<Self> {
        let doc = parse_ini(text)?;
        let known: &[(&str, &[&str])] = &[
            ("experiment", &["pipeline"]),
            (
                "model",
                &[
                    "name", "c", "sigma", "f", "tau", "b", "g", "hurst", "x0", "y0",
                ],
            ),
            (
                "scales",
                &["eps", "eps_start", "eps_ratio", "levels", "eta"],
            ),
            (
                "run",
                &[
                    "horizon",
                    "steps",
                    "paths",
                    "p",
                    "seed",
                    "record_every",
                    "observable",
                ],
            ),
            ("regime", &["kind", "lambda", "kappa"]),
            ("outputs", &["dir", "formats"]),
        ];
        for s in &doc.sections {
            let keys = known
                .iter()
                .find(|(n, _)| *n == s.name)
                .map(|(_, k)| *k)
                .ok_or_else(|| Error::Config(format!("unknown section [{}]", s.name)))?;
            if let Some(e) = s.entries.iter().find(|e| !keys.contains(&e.key.as_str())) {
                return Err(Error::Config(format!(
                    "unknown key '{}' in [{}]",
                    e.key, s.name
                )));
            }
        }

        let named = doc
            .section("experiment")
            .and_then(|s| s.get("pipeline"))
            .map(|e| e.value.parse::<Pipeline>())
            .transpose()?;
        let pipeline = match (named, pipeline) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "the config is for the {a} pipeline, not {b}"
                )))
            }
            (Some(p), _) | (None, Some(p)) => p,
            (None, None) => return Err(Error::Config("missing [experiment] pipeline".into())),
        };

        let model_sec = doc
            .section("model")
            .ok_or_else(|| Error::Config("missing [model] section".into()))?;
        let source = match model_sec.get("name") {
            Some(name) => {
                if let Some(e) = ["c", "sigma", "f", "tau", "b", "g"]
                    .iter()
                    .find_map(|k| model_sec.get(k))
                {
                    return Err(Error::Config(format!(
                        "[model] sets both a registry name and the expression '{}'",
                        e.key
                    )));
                }
                ModelSpec::registry(&name.value)?;
                ModelSource::Registry(name.value.clone())
            }
            None => {
                let req = |k: &str| {
                    model_sec
                        .get(k)
                        .ok_or_else(|| {
                            Error::Config(format!("[model] needs 'name' or the expression '{k}'"))
                        })
                        .and_then(expression)
                };
                let opt = |k: &str| model_sec.get(k).map(expression).transpose();
                ModelSource::Inline(ModelExpressions {
                    c: req("c")?,
                    sigma: req("sigma")?,
                    f: req("f")?,
                    tau: req("tau")?,
                    b: opt("b")?,
                    g: opt("g")?,
                })
            }
        };
        let model = ModelConfig {
            source,
            hurst: model_sec.get("hurst").map(number).transpose()?,
            x0: model_sec.get("x0").map(number).transpose()?,
            y0: model_sec.get("y0").map(number).transpose()?,
        };

        let scales_sec = doc
            .section("scales")
            .ok_or_else(|| Error::Config("missing [scales] section".into()))?;
        let eta = match scales_sec.get("eta") {
            None => EtaRule::EqualEps,
            Some(e) if e.value == "eps" => EtaRule::EqualEps,
            Some(e) => EtaRule::List(number_list(e)?),
        };
        let scales = match (scales_sec.get("eps"), scales_sec.get("eps_start")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("[scales] sets both eps and eps_start".into()))
            }
            (Some(list), None) => ScalesConfig::new(number_list(list)?, eta)?,
            (None, Some(start)) => {
                let ratio = scales_sec
                    .get("eps_ratio")
                    .map(number)
                    .transpose()?
                    .unwrap_or(0.5);
                let levels = scales_sec
                    .get("levels")
                    .map(count)
                    .transpose()?
                    .ok_or_else(|| Error::Config("[scales] eps_start needs levels".into()))?;
                let g = ScalesConfig::geometric(number(start)?, ratio, levels)?;
                ScalesConfig::new(g.eps, eta)?
            }
            (None, None) => return Err(Error::Config("[scales] needs eps or eps_start".into())),
        };

        let mut run = RunConfig::default();
        if let Some(s) = doc.section("run") {
            for e in &s.entries {
                match e.key.as_str() {
                    "horizon" => run.horizon = number(e)?,
                    "steps" => run.steps = count(e)?,
                    "paths" => run.paths = count(e)?,
                    "p" => run.p = number(e)?,
                    "seed" => {
                        run.seed = e.value.parse().map_err(|_| bad(e, "an unsigned integer"))?
                    }
                    "record_every" => run.record_every = count(e)?,
                    "observable" => run.observable = Some(expression(e)?),
                    _ => unreachable!("keys checked above"),
                }
            }
        }
        if !(run.horizon > 0.0)
            || run.steps == 0
            || run.paths == 0
            || run.record_every == 0
            || !(run.p >= 1.0)
        {
            return Err(Error::Config(
                "[run] needs horizon > 0, p >= 1 and positive steps, paths and record_every".into(),
            ));
        }

        let regime = match doc.section("regime") {
            None => None,
            Some(s) => {
                let kappa = s.get("kappa").map(number).transpose()?.unwrap_or(0.0);
                let lambda = s.get("lambda").map(number).transpose()?;
                let spec = match s.get("kind").map(|e| e.value.as_str()) {
                    Some("homogenization") => {
                        if lambda.is_some_and(|l| l != 0.0) {
                            return Err(Error::Config(
                                "the homogenization regime has lambda = 0".into(),
                            ));
                        }
                        RegimeSpec::homogenization(kappa)
                    }
                    Some("averaging") => RegimeSpec::averaging(
                        lambda.ok_or_else(|| {
                            Error::Config("[regime] averaging needs lambda".into())
                        })?,
                        kappa,
                    ),
                    Some(other) => {
                        return Err(Error::Config(format!("unknown regime kind '{other}'")))
                    }
                    None => RegimeSpec::new(lambda.unwrap_or(0.0), kappa),
                };
                Some(spec.map_err(|e| Error::Config(e.to_string()))?)
            }
        };

        let mut outputs = OutputConfig::default();
        if let Some(s) = doc.section("outputs") {
            if let Some(d) = s.get("dir") {
                if d.value.is_empty() {
                    return Err(bad(d, "a directory"));
                }
                outputs.dir = PathBuf::from(&d.value);
            }
            if let Some(f) = s.get("formats") {
                outputs.format = f.value.parse()?;
            }
        }

        Ok(Self {
            pipeline,
            model,
            scales,
            run,
            regime,
            outputs,
        })
    }

    /// The effective configuration in the same format, with every field
    /// written out. Parsing it gives back an equal config.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(s, "[experiment]\npipeline = {}\n", self.pipeline);
        s.push_str("[model]\n");
        match &self.model.source {
            ModelSource::Registry(name) => {
                let _ = writeln!(s, "name = {name}");
            }
            ModelSource::Inline(e) => {
                let _ = writeln!(
                    s,
                    "c = {}\nsigma = {}\nf = {}\ntau = {}",
                    e.c.source, e.sigma.source, e.f.source, e.tau.source
                );
                if let Some(b) = &e.b {
                    let _ = writeln!(s, "b = {}", b.source);
                }
                if let Some(g) = &e.g {
                    let _ = writeln!(s, "g = {}", g.source);
                }
            }
        }
        for (k, v) in [
            ("hurst", self.model.hurst),
            ("x0", self.model.x0),
            ("y0", self.model.y0),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v:?}");
            }
        }
        let _ = writeln!(s, "\n[scales]\neps = {}", list(&self.scales.eps));
        match &self.scales.eta {
            EtaRule::EqualEps => s.push_str("eta = eps\n"),
            EtaRule::List(v) => {
                let _ = writeln!(s, "eta = {}", list(v));
            }
        }
        let r = &self.run;
        let _ = writeln!(
            s,
            "\n[run]\nhorizon = {:?}\nsteps = {}\npaths = {}\np = {:?}\nseed = {}\nrecord_every = {}",
            r.horizon, r.steps, r.paths, r.p, r.seed, r.record_every
        );
        if let Some(o) = &r.observable {
            let _ = writeln!(s, "observable = {}", o.source);
        }
        if let Some(reg) = &self.regime {
            let _ = writeln!(
                s,
                "\n[regime]\nlambda = {:?}\nkappa = {:?}",
                reg.lambda(),
                reg.kappa()
            );
        }
        let _ = writeln!(
            s,
            "\n[outputs]\ndir = {}\nformats = {}",
            self.outputs.dir.display(),
            self.outputs.format
        );
        s
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

fn bad(e: &IniEntry, what: &str) -> Error {
    Error::Config(format!(
        "'{}' at byte {}: expected {what}, got '{}'",
        e.key, e.value_offset, e.value
    ))
}

/// Parse errors are reported at their offset in the whole file.
fn expression(e: &IniEntry) -> Result<CoefficientExpr> {
    parse_expression(&e.value)
        .map_err(|p| Error::Parse(ParseError::new(e.value_offset + p.offset, p.message)))
}

fn constant(e: &IniEntry, text: &str, offset: usize) -> Result<f64> {
    let expr = parse_expression(text)
        .map_err(|p| Error::Parse(ParseError::new(offset + p.offset, p.message)))?;
    if expr.uses(crate::experiments::expr::Var::X) || expr.uses(crate::experiments::expr::Var::Y) {
        return Err(bad(e, "a constant"));
    }
    expr.eval(0.0, 0.0)
        .map_err(|err| Error::Config(format!("'{}': {err}", e.key)))
}

fn number(e: &IniEntry) -> Result<f64> {
    constant(e, &e.value, e.value_offset)
}

fn number_list(e: &IniEntry) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut offset = e.value_offset;
    for item in e.value.split(',') {
        let lead = item.len() - item.trim_start().len();
        out.push(constant(e, item.trim(), offset + lead)?);
        offset += item.len() + 1;
    }
    Ok(out)
}

fn count(e: &IniEntry) -> Result<usize> {
    e.value.parse().map_err(|_| bad(e, "a nonnegative integer"))
}
