pub mod model;
pub mod metrics;
pub mod lm;
pub mod agents;
pub mod optimizer;
pub mod cost;
pub mod config;
pub mod ingest;
pub mod run;
