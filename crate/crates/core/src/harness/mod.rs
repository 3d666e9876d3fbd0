//! Datasets, the Minimum Observable baseline and batch experiments.

pub mod baseline;
pub mod batch;
pub mod dataset;

pub use baseline::{minimum_observable, MoResult};
pub use batch::{
    factual_samples, improvement, predict_all, restriction_study, run_batch, validate, write_csv,
    write_jsonl, BatchConfig, BatchError, BatchReport, MetricsRow, RestrictionReport, SampleRecord,
    Status,
};
pub use dataset::{load_dataset, parse_dataset, write_dataset, Dataset, DatasetError, MISSING};
