pub mod config;
pub mod expr;
pub mod fit;
pub mod output;
pub mod pipeline;
pub mod svg;

pub use config::{
    parse_ini, EtaRule, ExperimentConfig, IniDocument, ModelConfig, ModelSource, OutputConfig,
    OutputFormat, Pipeline, RunConfig, ScalesConfig,
};
pub use expr::{parse_expression, CoefficientExpr, ModelExpressions};
pub use fit::{fit_slope, SlopeFit};
pub use output::{Artifacts, Check, Manifest};
pub use pipeline::{ks_decreasing, run_experiment, RunReport};
