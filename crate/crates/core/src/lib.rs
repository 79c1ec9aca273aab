//! Day-ahead emissions nowcasting.
//!
//! The pipeline runs `ingest` → `series` → `features` → `nn` / `train_eval`.
//! `synth` produces merit-order dispatch scenarios whose marginal emissions
//! are known exactly, and `cli` wires everything into the `mefcast` binary.

pub mod cli;
pub mod features;
pub mod ingest;
pub mod nn;
pub mod series;
pub mod synth;
pub mod train_eval;

pub use features::{ChannelGroup, Dataset, FeatureWindow, NormStats};
pub use ingest::{FuelKind, HourlyObservation, ValidatedSeries};
pub use nn::{ModelParams, ModelSpec};
pub use series::{DerivedSeries, IntensityProfile};
