//! Instance generators, the ratings loader and the sweep runner.

pub mod generators;
pub mod ratings;
pub mod runner;

pub use generators::{basis_linear, example_means, example_roster, gen_basis_linear, gen_example, Tier};
pub use ratings::{load_ratings, load_ratings_csv};
pub use runner::{
    aggregate, compatible, execute, report, run_experiment, run_single, write_results, AggregateRow,
    AggregateSummary, Algorithm, ExperimentResult, ExperimentSpec, GridPoint, InstanceSource,
    ParamGrid, RunRecord,
};
