//! Declarative simulation runs on a four-detector bench and the built-in
//! scenario set.

mod builtin;
mod config;
mod report;
mod run;

pub use builtin::{
    builtin_names, builtin_scenario, builtin_scenarios, fig2_coherent, fig3_sigma2_grid,
    fig3_singlemode, fig4, fig5_independent, modulated_lamp, pulsetrain_35,
};
pub use config::{
    AnalysisOp, AnalysisRequest, Bench, BenchConfig, BenchPreset, Check, CorrelogramRequest,
    Detector, ScenarioConfig, DEFAULT_DETECTOR,
};
pub use report::{
    Artifacts, CheckOutcome, CorrelogramSummary, FailureReport, ScenarioReport, TagCounts, Timing,
    TraceSummary,
};
pub use run::{
    analytic_match, run_scenario, run_scenario_with, AnalyticMatch, RunOptions, ScenarioRun, Stage,
    StageError,
};
