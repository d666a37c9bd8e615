//! Automatic bounding-box generation for 360° street-level panoramas from
//! geospatial object data, plus refinement, noise analysis, dataset
//! preparation and evaluation utilities.

pub mod assignment;
pub mod coco;
pub mod config;
pub mod dataset;
pub mod fsio;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod planar;
pub mod projection;
pub mod refine;
pub mod units;
