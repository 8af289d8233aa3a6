//! Data side of the shot-captioning toolkit: match annotations, tactical
//! pattern analysis, model-ready sample construction and caption metrics.

pub mod annotation;
pub mod metrics;
pub mod pipeline;
pub mod tactics;
