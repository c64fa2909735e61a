//! Synthesis, file formats, bootstrap and experiment orchestration.

pub mod bootstrap;
pub mod experiment;
pub mod io;
pub mod synth;

pub use bootstrap::{bootstrap_second_step, BootstrapMethod, BootstrapResult, Resample};
pub use experiment::{
    run_experiment, ExperimentSpec, Method, ProfitTable, ReportBundle, RoundingRow,
};
pub use io::{
    load_arms, load_policy, load_population, read_arms, read_population, save_arms, save_policy,
    save_population, write_arms, write_population, PolicyFile, TreatmentRecord,
};
pub use synth::{
    generate_population, synthesize_arms, CostSpec, CovariateSpec, LogNormalSpec, SynthConfig,
};
