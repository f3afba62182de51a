pub mod capability;
pub mod commute;
pub mod cas;
pub mod ownership;
pub mod graph;
pub mod snapshot;
pub mod stats;
pub mod readpath;
pub mod workload;
pub mod bench;
pub mod preserve;
pub mod ablation;
pub mod config;
