//! File formats: pairwise datasets (CSV), results tables (CSV), study
//! configurations and criterion specifications.

mod config;
mod dataset;
mod results;

pub use config::{load_matrix, parse_criterion};
pub use dataset::{parse_pairwise_dataset, read_pairwise_dataset, PairRecord, PairwiseDataset};
pub use results::{read_results, results_to_csv, write_results, MetricRow, MetricsTable};
