//! Experiment harness: datasets, metrics and the experiment protocols.

pub mod ad;
pub mod consistency;
pub mod dataset;
pub mod metrics;
pub mod negfrac;
pub mod synthetic;

pub use ad::{duplicates_experiment, run_ad, AdConfig, AdMethod, ExperimentReport, SeedOutcome};
pub use consistency::{consistency_experiment, ConsistencyConfig, ConsistencyReport, ConsistencyRow};
pub use dataset::{duplicate_anomalies, load_csv, read_csv, split, standardize, Dataset, Standardization};
pub use metrics::{auc_roc, rank_aggregate, AucTable, RankTable};
pub use negfrac::{negative_fraction_experiment, NegFracConfig, NegFracReport};
