//! Experiment driver for sparse-view reconstruction: data loading, noise
//! simulation, method dispatch, weight tuning and result tables.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod noise;

pub use config::{
    parse_grid, AngleSpec, ExperimentConfig, KsvdOverrides, Lambdas, Method, PatchOverrides, SolverKnobs, TableFile,
    TunedParameter, TuningSweep,
};
pub use dataset::{write_synthetic_dataset, DatasetPaths};
pub use error::{HarnessError, Result};
pub use experiment::{
    prepare_prior, reconstruct, run_experiment, run_table, simulate, train_dictionary, tune_lambda,
    ExperimentOutcome, OutputPaths, PriorModel, Reconstruction, Table, TableRow, TuningOutcome, TuningRow,
    CSV_HEADER,
};
pub use noise::{add_measurement_noise, derived_seed};
